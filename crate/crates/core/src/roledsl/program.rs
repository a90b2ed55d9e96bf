use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::parser::parse_roles;
use super::Diagnostic;

/// Name of the implicit root every role ultimately extends.
pub const BUILTIN_ROOT: &str = "Module";

/// A validated role program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleProgram {
    roles: Vec<RoleDefinition>,
    index: BTreeMap<String, usize>,
    source_text: String,
}

impl RoleProgram {
    /// Parses and validates `text`. Syntax errors stop at the first one;
    /// validation reports every problem it finds.
    pub fn parse(text: &str) -> Result<RoleProgram, Vec<Diagnostic>> {
        let roles = parse_roles(text).map_err(|d| vec![d])?;
        Self::from_roles(roles, text.to_string())
    }

    pub fn from_roles(
        mut roles: Vec<RoleDefinition>,
        source_text: String,
    ) -> Result<RoleProgram, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut index = BTreeMap::new();
        for (i, r) in roles.iter().enumerate() {
            if index.insert(r.name.clone(), i).is_some() {
                diags.push(Diagnostic::new(r.line, format!("duplicate role `{}`", r.name)));
            }
        }
        let user_root = index.contains_key(BUILTIN_ROOT);
        for r in roles.iter_mut() {
            if !user_root && r.parent.as_deref() == Some(BUILTIN_ROOT) {
                r.parent = None;
            }
        }
        for r in &roles {
            if let Some(p) = &r.parent {
                if !index.contains_key(p) {
                    diags.push(Diagnostic::new(
                        r.line,
                        format!("role `{}` extends unknown parent `{p}`", r.name),
                    ));
                }
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
        let program = RoleProgram {
            roles,
            index,
            source_text,
        };
        for r in &program.roles {
            if program.has_cycle(&r.name) {
                diags.push(Diagnostic::new(
                    r.line,
                    format!("inheritance cycle through role `{}`", r.name),
                ));
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
        for r in &program.roles {
            let constants = program.effective_constants(&r.name);
            if !r.is_abstract {
                for (name, value) in &constants {
                    if value.is_none() {
                        diags.push(Diagnostic::new(
                            r.line,
                            format!(
                                "concrete role `{}` leaves abstract constant `{name}` unvalued",
                                r.name
                            ),
                        ));
                    }
                }
            }
        }
        if diags.is_empty() {
            Ok(program)
        } else {
            Err(diags)
        }
    }

    pub fn roles(&self) -> &[RoleDefinition] {
        &self.roles
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, name: &str) -> Option<&RoleDefinition> {
        self.index.get(name).map(|&i| &self.roles[i])
    }

    fn has_cycle(&self, name: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut cur = Some(name);
        while let Some(n) = cur {
            if !seen.insert(n) {
                return true;
            }
            cur = self.role(n).and_then(|r| r.parent.as_deref());
        }
        false
    }

    /// `name` followed by its ancestors, nearest first.
    pub fn chain(&self, name: &str) -> Vec<&RoleDefinition> {
        let mut out = Vec::new();
        let mut cur = self.role(name);
        while let Some(r) = cur {
            out.push(r);
            cur = r.parent.as_deref().and_then(|p| self.role(p));
        }
        out
    }

    /// Whether `name` is `ancestor` or descends from it.
    pub fn descends_from(&self, name: &str, ancestor: &str) -> bool {
        ancestor == BUILTIN_ROOT && self.role(name).is_some()
            || self.chain(name).iter().any(|r| r.name == ancestor)
    }

    /// Constants visible in `name`; nearer definitions override.
    pub fn effective_constants(&self, name: &str) -> BTreeMap<String, Option<ConstValue>> {
        let mut out = BTreeMap::new();
        for r in self.chain(name).into_iter().rev() {
            for (k, v) in &r.constants {
                // An abstract redeclaration does not erase an inherited value.
                if v.is_some() || !out.contains_key(k) {
                    out.insert(k.clone(), *v);
                }
            }
        }
        out
    }

    /// Requires of `name` and every ancestor, root first.
    pub fn effective_requires(&self, name: &str) -> Vec<&Predicate> {
        self.chain(name)
            .into_iter()
            .rev()
            .flat_map(|r| r.requires.iter())
            .collect()
    }

    /// Behaviors in inheritance order: ancestors' first, overridden in place.
    pub fn effective_behaviors(&self, name: &str) -> Vec<&Method> {
        merge_methods(self.chain(name).into_iter().rev().map(|r| &r.behaviors))
    }

    pub fn effective_commands(&self, name: &str) -> Vec<&Method> {
        merge_methods(self.chain(name).into_iter().rev().map(|r| &r.commands))
    }

    pub fn command(&self, role: &str, command: &str) -> Option<&Method> {
        self.chain(role)
            .into_iter()
            .find_map(|r| r.commands.iter().find(|m| m.name == command))
    }

    pub fn effective_handlers(&self, name: &str) -> Vec<&Handler> {
        self.chain(name)
            .into_iter()
            .rev()
            .flat_map(|r| r.handlers.iter())
            .collect()
    }

    pub fn effective_startup(&self, name: &str) -> Option<&Method> {
        self.chain(name).into_iter().find_map(|r| r.startup.as_ref())
    }

    /// The behavior that runs by default: the first one in
    /// [`Self::effective_behaviors`].
    pub fn default_behavior(&self, name: &str) -> Option<&Method> {
        self.effective_behaviors(name).into_iter().next()
    }
}

fn merge_methods<'a>(levels: impl Iterator<Item = &'a Vec<Method>>) -> Vec<&'a Method> {
    let mut out: Vec<&Method> = Vec::new();
    for level in levels {
        for m in level {
            match out.iter_mut().find(|e| e.name == m.name) {
                Some(slot) => *slot = m,
                None => out.push(m),
            }
        }
    }
    out
}
