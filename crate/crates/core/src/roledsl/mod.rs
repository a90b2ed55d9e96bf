//! Role programs: parsing, role assignment and the per-module engine.
//!
//! A program is a set of roles. Each concrete role carries `require`
//! predicates over the module's physical state; a module adopts the role
//! whose predicates hold and runs that role's startup, default behavior,
//! commands and event handlers. The concrete syntax is documented in
//! `docs/dynarole-grammar.md`.

use std::fmt;

pub mod ast;
pub mod engine;
pub mod eval;
mod lexer;
mod parser;
pub mod program;
pub mod size;

pub use ast::{Action, CmpOp, ConstValue, EventId, Expr, Handler, Method, Predicate, RoleDefinition};
pub use engine::{ActivityKind, ActivityLabel, EngineEffect, InvokeError, RoleEngine, REEVALUATION_PERIOD};
pub use eval::{assign_role, eval_requires, Assignment, EvalError};
pub use program::{RoleProgram, BUILTIN_ROOT};
pub use size::{gzip_bytes, measure_program_size, ProgramSize};

/// A problem found while parsing or validating a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for Diagnostic {}
