//! Predicate evaluation and role assignment. Both are pure functions of
//! the program and a [`ModulePhysState`] snapshot.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{CmpOp, ConstValue, Expr, Predicate};
use super::program::RoleProgram;
use crate::service::phys::{Axis, Direction, ModulePhysState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value<'s> {
    Int(i64),
    Axis(Axis),
    Direction(Direction),
    /// Neighbour names; sorted.
    Set(Vec<&'s str>),
}

impl Value<'_> {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Axis(_) => "axis",
            Value::Direction(_) => "direction",
            Value::Set(_) => "set",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("undefined constant `{0}`")]
    UndefinedConstant(String),
    #[error("abstract constant `{0}` has no value")]
    UnvaluedConstant(String),
    #[error("expected {expected}, got {got} in `{expr}`")]
    Type {
        expected: &'static str,
        got: &'static str,
        expr: String,
    },
    #[error("cannot compare {lhs} {op} {rhs}")]
    Compare {
        lhs: &'static str,
        op: &'static str,
        rhs: &'static str,
    },
    #[error("unknown role `{0}`")]
    UnknownRole(String),
}

pub type Constants = BTreeMap<String, Option<ConstValue>>;

pub fn eval_expr<'s>(
    expr: &Expr,
    constants: &Constants,
    state: &'s ModulePhysState,
) -> Result<Value<'s>, EvalError> {
    Ok(match expr {
        Expr::Int(n) => Value::Int(*n),
        Expr::Axis(a) => Value::Axis(*a),
        Expr::Direction(d) => Value::Direction(*d),
        Expr::Const(name) => match constants.get(name) {
            None => return Err(EvalError::UndefinedConstant(name.clone())),
            Some(None) => return Err(EvalError::UnvaluedConstant(name.clone())),
            Some(Some(ConstValue::Int(n))) => Value::Int(*n),
            Some(Some(ConstValue::Axis(a))) => Value::Axis(*a),
            Some(Some(ConstValue::Direction(d))) => Value::Direction(*d),
        },
        Expr::Center => Value::Axis(state.center),
        Expr::Connected(inner) => match eval_expr(inner, constants, state)? {
            Value::Direction(d) => {
                let mut set = state.connected(d);
                set.sort_unstable();
                set.dedup();
                Value::Set(set)
            }
            other => {
                return Err(EvalError::Type {
                    expected: "direction",
                    got: other.type_name(),
                    expr: expr.to_string(),
                })
            }
        },
        Expr::SizeOf(inner) => match eval_expr(inner, constants, state)? {
            Value::Set(s) => Value::Int(s.len() as i64),
            other => {
                return Err(EvalError::Type {
                    expected: "set",
                    got: other.type_name(),
                    expr: expr.to_string(),
                })
            }
        },
    })
}

/// Evaluates an expression that must produce an integer.
pub fn eval_int(expr: &Expr, constants: &Constants, state: &ModulePhysState) -> Result<i64, EvalError> {
    match eval_expr(expr, constants, state)? {
        Value::Int(n) => Ok(n),
        other => Err(EvalError::Type {
            expected: "integer",
            got: other.type_name(),
            expr: expr.to_string(),
        }),
    }
}

pub fn eval_predicate(
    pred: &Predicate,
    constants: &Constants,
    state: &ModulePhysState,
) -> Result<bool, EvalError> {
    let lhs = eval_expr(&pred.lhs, constants, state)?;
    let rhs = eval_expr(&pred.rhs, constants, state)?;
    let ord = match (&lhs, &rhs) {
        (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
        _ => None,
    };
    let equal = match (&lhs, &rhs) {
        (Value::Int(a), Value::Int(b)) => a == b,
        (Value::Axis(a), Value::Axis(b)) => a == b,
        (Value::Direction(a), Value::Direction(b)) => a == b,
        (Value::Set(a), Value::Set(b)) => a == b,
        _ => {
            return Err(EvalError::Compare {
                lhs: lhs.type_name(),
                op: pred.op.symbol(),
                rhs: rhs.type_name(),
            })
        }
    };
    match (pred.op, ord) {
        (CmpOp::Eq, _) => Ok(equal),
        (CmpOp::Ne, _) => Ok(!equal),
        (CmpOp::Lt, Some(o)) => Ok(o.is_lt()),
        (CmpOp::Le, Some(o)) => Ok(o.is_le()),
        (CmpOp::Gt, Some(o)) => Ok(o.is_gt()),
        (CmpOp::Ge, Some(o)) => Ok(o.is_ge()),
        (op, None) => Err(EvalError::Compare {
            lhs: lhs.type_name(),
            op: op.symbol(),
            rhs: rhs.type_name(),
        }),
    }
}

/// True iff every require of `role` and its ancestors holds in `state`.
pub fn eval_requires(
    program: &RoleProgram,
    role: &str,
    state: &ModulePhysState,
) -> Result<bool, EvalError> {
    if program.role(role).is_none() {
        return Err(EvalError::UnknownRole(role.to_string()));
    }
    let constants = program.effective_constants(role);
    for pred in program.effective_requires(role) {
        if !eval_predicate(pred, &constants, state)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub role: Option<String>,
    /// Concrete roles whose requires held, sorted by name.
    pub candidates: Vec<String>,
    /// Roles excluded because evaluation failed, with the reason.
    pub errors: Vec<(String, EvalError)>,
}

impl Assignment {
    pub fn is_ambiguous(&self) -> bool {
        self.candidates.len() > 1
    }
}

/// Picks the concrete role whose requires hold. Ties go to the
/// lexicographically smallest name; callers report the ambiguity.
pub fn assign_role(program: &RoleProgram, state: &ModulePhysState) -> Assignment {
    let mut out = Assignment::default();
    for r in program.roles().iter().filter(|r| !r.is_abstract) {
        match eval_requires(program, &r.name, state) {
            Ok(true) => out.candidates.push(r.name.clone()),
            Ok(false) => {}
            Err(e) => out.errors.push((r.name.clone(), e)),
        }
    }
    out.candidates.sort();
    out.errors.sort_by(|a, b| a.0.cmp(&b.0));
    out.role = out.candidates.first().cloned();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = include_str!("../../programs/car.role");

    fn head() -> ModulePhysState {
        let mut s = ModulePhysState::new(Axis::NorthSouth)
            .with_port(0, Direction::East)
            .with_port(1, Direction::West);
        s.connect(0, "right");
        s.connect(1, "left");
        s
    }

    fn wheel(dir: Direction) -> ModulePhysState {
        let mut s = ModulePhysState::new(Axis::EastWest)
            .with_port(0, Direction::East)
            .with_port(1, Direction::West);
        s.connect(if dir == Direction::East { 0 } else { 1 }, "head");
        s
    }

    #[test]
    fn car_requires() {
        let p = RoleProgram::parse(CAR).unwrap();
        assert_eq!(eval_requires(&p, "Head", &head()), Ok(true));
        assert_eq!(eval_requires(&p, "RightWheel", &wheel(Direction::East)), Ok(true));
        assert_eq!(eval_requires(&p, "RightWheel", &wheel(Direction::West)), Ok(false));
        let mut two = wheel(Direction::East).with_port(2, Direction::East);
        two.connect(0, "head");
        two.connect(2, "other");
        assert_eq!(eval_requires(&p, "RightWheel", &two), Ok(false));
    }

    #[test]
    fn car_assignment() {
        let p = RoleProgram::parse(CAR).unwrap();
        assert_eq!(assign_role(&p, &head()).role.as_deref(), Some("Head"));
        assert_eq!(assign_role(&p, &wheel(Direction::East)).role.as_deref(), Some("RightWheel"));
        assert_eq!(assign_role(&p, &wheel(Direction::West)).role.as_deref(), Some("LeftWheel"));
        let lonely = ModulePhysState::new(Axis::UpDown);
        let a = assign_role(&p, &lonely);
        assert_eq!(a.role, None);
        assert!(a.candidates.is_empty());
    }

    #[test]
    fn ambiguity_picks_smallest() {
        let p = RoleProgram::parse("role Zed { }\nrole Alpha { }").unwrap();
        let a = assign_role(&p, &head());
        assert_eq!(a.role.as_deref(), Some("Alpha"));
        assert!(a.is_ambiguous());
    }

    #[test]
    fn undefined_constant_excludes_role() {
        let p = RoleProgram::parse("role A { require (nope == 1); }\nrole B { }").unwrap();
        let a = assign_role(&p, &head());
        assert_eq!(a.role.as_deref(), Some("B"));
        assert_eq!(a.errors, vec![("A".into(), EvalError::UndefinedConstant("nope".into()))]);
    }

    #[test]
    fn comparison_types() {
        let s = head();
        let c = Constants::new();
        let p = |src: &str| {
            let prog = RoleProgram::parse(&format!("role A {{ require ({src}); }}")).unwrap();
            let pred = prog.role("A").unwrap().requires[0].clone();
            eval_predicate(&pred, &c, &s)
        };
        assert_eq!(p("sizeof(self.connected($EAST)) < 2"), Ok(true));
        assert_eq!(p("sizeof(self.connected($UP)) >= 1"), Ok(false));
        assert_eq!(p("self.center != $EAST_WEST"), Ok(true));
        assert_eq!(p("self.connected($EAST) == self.connected($EAST)"), Ok(true));
        assert!(matches!(p("self.center < $EAST_WEST"), Err(EvalError::Compare { .. })));
        assert!(matches!(p("self.center == 1"), Err(EvalError::Compare { .. })));
        assert!(matches!(p("sizeof(self.center) == 1"), Err(EvalError::Type { .. })));
        assert!(matches!(p("sizeof(self.connected(3)) == 1"), Err(EvalError::Type { .. })));
    }
}
