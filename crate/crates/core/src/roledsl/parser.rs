//! Recursive-descent parser for role programs. The grammar is written up
//! in `docs/dynarole-grammar.md`.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::Diagnostic;
use crate::service::phys::{Axis, Direction};

/// Parses `src` into role definitions in declaration order. Only syntax is
/// checked here; cross-role validation happens in [`super::RoleProgram`].
pub fn parse_roles(src: &str) -> Result<Vec<RoleDefinition>, Diagnostic> {
    let tokens = tokenize(src)?;
    let last_line = src.lines().count().max(1);
    let mut p = Parser {
        tokens,
        pos: 0,
        last_line,
    };
    let mut roles = Vec::new();
    while !p.at_end() {
        roles.push(p.role()?);
    }
    Ok(roles)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    last_line: usize,
}

enum Symbol {
    Axis(Axis),
    Direction(Direction),
    Event(EventId),
    Turn,
}

fn resolve_symbol(name: &str) -> Option<Symbol> {
    if name == "TURN_CONTINUOUSLY" {
        return Some(Symbol::Turn);
    }
    if let Some(n) = name.strip_prefix("EVENT_HANDLER_") {
        return n.parse::<u8>().ok().map(|n| Symbol::Event(EventId(n)));
    }
    if let Ok(a) = name.parse::<Axis>() {
        return Some(Symbol::Axis(a));
    }
    name.parse::<Direction>().ok().map(Symbol::Direction)
}

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + k).map(|t| &t.tok)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.line)
            .unwrap_or(self.last_line)
    }

    fn error(&self, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::new(self.line(), msg)
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        match self.peek() {
            Some(t) => self.error(format!("expected {wanted}, found {}", t.describe())),
            None => self.error(format!("expected {wanted}, found end of input")),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), Diagnostic> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), Diagnostic> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, Diagnostic> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn role(&mut self) -> Result<RoleDefinition, Diagnostic> {
        let line = self.line();
        let is_abstract = self.eat_keyword("abstract");
        self.expect_keyword("role")?;
        let name = self.ident("a role name")?;
        let mut role = RoleDefinition::new(name, line);
        role.is_abstract = is_abstract;
        if self.eat_keyword("extends") {
            let parent = self.ident("a parent role name")?;
            role.parent = Some(parent);
        }
        self.expect(Tok::LBrace)?;
        while !self.eat(&Tok::RBrace) {
            if self.at_end() {
                return Err(self.unexpected("`}`"));
            }
            self.member(&mut role)?;
        }
        Ok(role)
    }

    fn member(&mut self, role: &mut RoleDefinition) -> Result<(), Diagnostic> {
        let line = self.line();
        match self.peek() {
            Some(Tok::Ident(kw)) => match kw.as_str() {
                "require" => {
                    self.pos += 1;
                    self.expect(Tok::LParen)?;
                    let pred = self.predicate(line)?;
                    self.expect(Tok::RParen)?;
                    self.expect(Tok::Semi)?;
                    role.requires.push(pred);
                }
                "abstract" => {
                    self.pos += 1;
                    self.expect_keyword("constant")?;
                    let name = self.ident("a constant name")?;
                    self.expect(Tok::Semi)?;
                    self.define_constant(role, name, None, line)?;
                }
                "startup" => {
                    self.pos += 1;
                    if role.startup.is_some() {
                        return Err(Diagnostic::new(line, "role has more than one startup block"));
                    }
                    let name = self.ident("a startup name")?;
                    self.params()?;
                    let actions = self.block(&mut role.handlers, true)?;
                    role.startup = Some(Method { name, actions, line });
                }
                "behavior" | "command" => {
                    let is_behavior = kw == "behavior";
                    self.pos += 1;
                    let name = self.ident("a method name")?;
                    self.params()?;
                    let actions = self.block(&mut role.handlers, false)?;
                    let list = if is_behavior {
                        &mut role.behaviors
                    } else {
                        &mut role.commands
                    };
                    if list.iter().any(|m| m.name == name) {
                        return Err(Diagnostic::new(line, format!("duplicate method `{name}`")));
                    }
                    list.push(Method { name, actions, line });
                }
                "handle" => {
                    let h = self.handler()?;
                    role.handlers.push(h);
                }
                _ => {
                    // [constant] NAME = value ;
                    self.eat_keyword("constant");
                    let name = self.ident("a constant name")?;
                    self.expect(Tok::Assign)?;
                    let value = self.const_value()?;
                    self.expect(Tok::Semi)?;
                    self.define_constant(role, name, Some(value), line)?;
                }
            },
            _ => return Err(self.unexpected("a role member")),
        }
        Ok(())
    }

    fn define_constant(
        &self,
        role: &mut RoleDefinition,
        name: String,
        value: Option<ConstValue>,
        line: usize,
    ) -> Result<(), Diagnostic> {
        if role.constants.contains_key(&name) {
            return Err(Diagnostic::new(line, format!("duplicate constant `{name}`")));
        }
        role.constants.insert(name, value);
        Ok(())
    }

    fn const_value(&mut self) -> Result<ConstValue, Diagnostic> {
        match self.expr()? {
            Expr::Int(n) => Ok(ConstValue::Int(n)),
            Expr::Axis(a) => Ok(ConstValue::Axis(a)),
            Expr::Direction(d) => Ok(ConstValue::Direction(d)),
            _ => Err(self.error("constant value must be an integer or a `$` label")),
        }
    }

    /// `( [IDENT {, IDENT}] )`; parameter names are ignored.
    fn params(&mut self) -> Result<(), Diagnostic> {
        self.expect(Tok::LParen)?;
        if self.eat(&Tok::RParen) {
            return Ok(());
        }
        loop {
            self.ident("a parameter name")?;
            if self.eat(&Tok::RParen) {
                return Ok(());
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn handler(&mut self) -> Result<Handler, Diagnostic> {
        let line = self.line();
        self.expect_keyword("handle")?;
        let mut events = Vec::new();
        while let Some(Tok::Symbol(_)) = self.peek() {
            events.push(self.event()?);
        }
        if events.is_empty() {
            return Err(self.unexpected("an `$EVENT_HANDLER_<n>` symbol"));
        }
        let mut nested = Vec::new();
        let actions = self.block(&mut nested, false)?;
        self.eat(&Tok::Semi);
        Ok(Handler {
            events,
            actions,
            line,
        })
    }

    fn event(&mut self) -> Result<EventId, Diagnostic> {
        match self.peek() {
            Some(Tok::Symbol(name)) => match resolve_symbol(name) {
                Some(Symbol::Event(e)) => {
                    self.pos += 1;
                    Ok(e)
                }
                _ => Err(self.error(format!("`${name}` is not an event handler symbol"))),
            },
            _ => Err(self.unexpected("an `$EVENT_HANDLER_<n>` symbol")),
        }
    }

    /// `{ statement* }`. Handlers are collected into `handlers` when
    /// `allow_handlers` is set and rejected otherwise.
    fn block(
        &mut self,
        handlers: &mut Vec<Handler>,
        allow_handlers: bool,
    ) -> Result<Vec<Action>, Diagnostic> {
        self.expect(Tok::LBrace)?;
        let mut actions = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.at_end() {
                return Err(self.unexpected("`}`"));
            }
            if self.is_keyword("handle") {
                if !allow_handlers {
                    return Err(self.error("handlers may only appear at role level or in startup"));
                }
                let h = self.handler()?;
                handlers.push(h);
                continue;
            }
            actions.push(self.action()?);
            self.expect(Tok::Semi)?;
        }
        Ok(actions)
    }

    fn action(&mut self) -> Result<Action, Diagnostic> {
        if self.eat(&Tok::LParen) {
            let a = self.action()?;
            self.expect(Tok::RParen)?;
            return Ok(a);
        }
        if self.eat_keyword("self") {
            self.expect(Tok::Dot)?;
            return match self.bump() {
                Some(Tok::Symbol(name)) => match resolve_symbol(&name) {
                    Some(Symbol::Turn) => {
                        let e = self.paren_expr()?;
                        Ok(Action::TurnContinuously(e))
                    }
                    _ => {
                        self.pos -= 1;
                        Err(self.error(format!("unknown actuator `${name}`")))
                    }
                },
                Some(Tok::Ident(name)) => match name.as_str() {
                    "sleepcs" => Ok(Action::SleepCs(self.paren_expr()?)),
                    "enable" => {
                        self.expect(Tok::LParen)?;
                        let e = self.event()?;
                        self.expect(Tok::RParen)?;
                        Ok(Action::Enable(e))
                    }
                    _ => {
                        self.pos -= 1;
                        Err(self.error(format!("unknown action `self.{name}`")))
                    }
                },
                _ => {
                    self.pos -= 1;
                    Err(self.unexpected("an action after `self.`"))
                }
            };
        }
        if let (Some(Tok::Ident(_)), Some(Tok::Dot)) = (self.peek(), self.peek_at(1)) {
            let role = self.ident("a role name")?;
            self.expect(Tok::Dot)?;
            let command = self.ident("a command name")?;
            self.expect(Tok::LParen)?;
            if !self.eat(&Tok::RParen) {
                loop {
                    self.expr()?;
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                }
            }
            return Ok(Action::Invoke { role, command });
        }
        Err(self.unexpected("an action"))
    }

    fn paren_expr(&mut self) -> Result<Expr, Diagnostic> {
        self.expect(Tok::LParen)?;
        let e = self.expr()?;
        self.expect(Tok::RParen)?;
        Ok(e)
    }

    fn predicate(&mut self, line: usize) -> Result<Predicate, Diagnostic> {
        // Extra parentheses around a whole comparison are allowed.
        if self.peek() == Some(&Tok::LParen) && self.paren_wraps_predicate() {
            self.pos += 1;
            let p = self.predicate(line)?;
            self.expect(Tok::RParen)?;
            return Ok(p);
        }
        let lhs = self.expr()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return Err(self.unexpected("a comparison operator")),
        };
        self.pos += 1;
        let rhs = self.expr()?;
        Ok(Predicate { lhs, op, rhs, line })
    }

    /// True if the `(` at the cursor encloses a comparison operator at
    /// depth one.
    fn paren_wraps_predicate(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.tokens[self.pos..] {
            match t.tok {
                Tok::LParen => depth += 1,
                Tok::RParen => {
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge if depth == 1 => {
                    return true
                }
                Tok::Semi | Tok::LBrace | Tok::RBrace => return false,
                _ => {}
            }
        }
        false
    }

    fn expr(&mut self) -> Result<Expr, Diagnostic> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Expr::Int(n))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                match self.bump() {
                    Some(Tok::Int(n)) => Ok(Expr::Int(-n)),
                    _ => {
                        self.pos -= 1;
                        Err(self.unexpected("an integer after `-`"))
                    }
                }
            }
            Some(Tok::Symbol(name)) => match resolve_symbol(&name) {
                Some(Symbol::Axis(a)) => {
                    self.pos += 1;
                    Ok(Expr::Axis(a))
                }
                Some(Symbol::Direction(d)) => {
                    self.pos += 1;
                    Ok(Expr::Direction(d))
                }
                _ => Err(self.error(format!("`${name}` is not a value"))),
            },
            Some(Tok::LParen) => self.paren_expr(),
            Some(Tok::Ident(name)) => match name.as_str() {
                "self" => {
                    self.pos += 1;
                    self.expect(Tok::Dot)?;
                    let acc = self.ident("an accessor")?;
                    match acc.as_str() {
                        "center" => {
                            // `self.center()` is accepted too.
                            if self.peek() == Some(&Tok::LParen) && self.peek_at(1) == Some(&Tok::RParen) {
                                self.pos += 2;
                            }
                            Ok(Expr::Center)
                        }
                        "connected" => Ok(Expr::Connected(Box::new(self.paren_expr()?))),
                        _ => {
                            self.pos -= 1;
                            Err(self.error(format!("unknown accessor `self.{acc}`")))
                        }
                    }
                }
                "sizeof" => {
                    self.pos += 1;
                    Ok(Expr::SizeOf(Box::new(self.paren_expr()?)))
                }
                _ => {
                    self.pos += 1;
                    Ok(Expr::Const(name))
                }
            },
            _ => Err(self.unexpected("an expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = include_str!("../../programs/car.role");

    #[test]
    fn car_program_shape() {
        let roles = parse_roles(CAR).unwrap();
        let names: Vec<_> = roles.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["Head", "Wheel", "RightWheel", "LeftWheel"]);
        let head = &roles[0];
        assert_eq!(head.parent.as_deref(), Some("Module"));
        assert_eq!(head.requires.len(), 1);
        let startup = head.startup.as_ref().unwrap();
        assert_eq!(startup.name, "initialize");
        assert_eq!(
            startup.actions,
            vec![Action::Enable(EventId(1)), Action::Enable(EventId(3))]
        );
        assert_eq!(head.handlers.len(), 1);
        assert_eq!(head.handlers[0].events, vec![EventId(1), EventId(3)]);
        assert_eq!(
            head.handlers[0].actions,
            vec![
                Action::Invoke {
                    role: "Wheel".into(),
                    command: "evade".into()
                },
                Action::SleepCs(Expr::Int(25)),
            ]
        );

        let wheel = &roles[1];
        assert!(wheel.is_abstract);
        assert_eq!(wheel.constants.len(), 3);
        assert!(wheel.constants.values().all(Option::is_none));
        assert_eq!(wheel.requires.len(), 2);
        assert_eq!(wheel.requires[1].to_string(), "sizeof(self.connected(connected_dir)) == 1");
        assert_eq!(wheel.requires[1].line, 18);
        assert_eq!(wheel.behaviors[0].name, "move");
        assert_eq!(wheel.commands[0].name, "evade");

        let right = &roles[2];
        assert_eq!(right.parent.as_deref(), Some("Wheel"));
        assert_eq!(right.constants["turn_dir"], Some(ConstValue::Int(150)));
        assert_eq!(right.constants["evasion_dir"], Some(ConstValue::Int(-100)));
        assert_eq!(
            right.constants["connected_dir"],
            Some(ConstValue::Direction(Direction::East))
        );
        assert_eq!(roles[3].constants["turn_dir"], Some(ConstValue::Int(-150)));
    }

    #[test]
    fn empty_input() {
        assert!(parse_roles("").unwrap().is_empty());
        assert!(parse_roles("  // nothing\n").unwrap().is_empty());
    }

    #[test]
    fn top_level_handler_and_constant_keyword() {
        let src = "role A {\n constant k = 3;\n handle $EVENT_HANDLER_2 { self.$TURN_CONTINUOUSLY(k); }\n}";
        let roles = parse_roles(src).unwrap();
        assert_eq!(roles[0].handlers[0].events, vec![EventId(2)]);
        assert_eq!(roles[0].constants["k"], Some(ConstValue::Int(3)));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let cases = [
            ("role {", 1, "role name"),
            ("role A {\n require self.center == $EAST;\n}", 2, "`(`"),
            ("role A {\n behavior b(_) { self.fly(1); }\n}", 2, "unknown action"),
            ("role A {\n behavior b(_) { handle $EVENT_HANDLER_1 { }; }\n}", 2, "handlers may only"),
            ("role A {\n x = $FOO;\n}", 2, "not a value"),
            ("role A {\n require (self.center == );\n}", 2, "expression"),
            ("role A {\n", 1, "`}`"),
            ("role A { x = 1; x = 2; }", 1, "duplicate constant"),
            ("role A { behavior b(_) { } behavior b(_) { } }", 1, "duplicate method"),
            ("role A { handle $EAST { } }", 1, "not an event"),
        ];
        for (src, line, needle) in cases {
            let d = parse_roles(src).unwrap_err();
            assert_eq!(d.line, line, "{src}: {d}");
            assert!(d.message.contains(needle), "{src}: {d}");
        }
    }

    #[test]
    fn wrapped_predicates_and_accessor_forms() {
        let src = "role A { require ((self.center() != $UP_DOWN)); require (sizeof(self.connected($UP)) >= -1); }";
        let roles = parse_roles(src).unwrap();
        assert_eq!(roles[0].requires[0].op, CmpOp::Ne);
        assert_eq!(roles[0].requires[1].rhs, Expr::Int(-1));
    }
}
