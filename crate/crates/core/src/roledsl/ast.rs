use std::collections::BTreeMap;
use std::fmt;

use crate::service::phys::{Axis, Direction};

/// A constant's value. Direction and axis labels are written `$EAST`,
/// `$NORTH_SOUTH` and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstValue {
    Int(i64),
    Axis(Axis),
    Direction(Direction),
}

impl fmt::Display for ConstValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstValue::Int(n) => write!(f, "{n}"),
            ConstValue::Axis(a) => write!(f, "${}", a.name()),
            ConstValue::Direction(d) => write!(f, "${}", d.name()),
        }
    }
}

/// `$EVENT_HANDLER_<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u8);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "$EVENT_HANDLER_{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Axis(Axis),
    Direction(Direction),
    /// A constant looked up through the role's ancestor chain.
    Const(String),
    Center,
    Connected(Box<Expr>),
    SizeOf(Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Axis(a) => write!(f, "${}", a.name()),
            Expr::Direction(d) => write!(f, "${}", d.name()),
            Expr::Const(c) => f.write_str(c),
            Expr::Center => f.write_str("self.center"),
            Expr::Connected(e) => write!(f, "self.connected({e})"),
            Expr::SizeOf(e) => write!(f, "sizeof({e})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
    pub line: usize,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    TurnContinuously(Expr),
    SleepCs(Expr),
    /// `Role.command(..)`; arguments are parsed and dropped.
    Invoke { role: String, command: String },
    Enable(EventId),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::TurnContinuously(e) => write!(f, "TURN_CONTINUOUSLY({e})"),
            Action::SleepCs(e) => write!(f, "SLEEPCS({e})"),
            Action::Invoke { role, command } => write!(f, "INVOKE({role}, {command})"),
            Action::Enable(ev) => write!(f, "ENABLE({ev})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Method {
    pub name: String,
    pub actions: Vec<Action>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handler {
    pub events: Vec<EventId>,
    pub actions: Vec<Action>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleDefinition {
    pub name: String,
    /// `None` for roles extending the builtin `Module`.
    pub parent: Option<String>,
    pub is_abstract: bool,
    /// `None` marks an abstract (declared, unvalued) constant.
    pub constants: BTreeMap<String, Option<ConstValue>>,
    pub requires: Vec<Predicate>,
    pub behaviors: Vec<Method>,
    pub commands: Vec<Method>,
    /// Handlers declared at role level and inside `startup`.
    pub handlers: Vec<Handler>,
    pub startup: Option<Method>,
    pub line: usize,
}

impl RoleDefinition {
    pub fn new(name: impl Into<String>, line: usize) -> Self {
        RoleDefinition {
            name: name.into(),
            parent: None,
            is_abstract: false,
            constants: BTreeMap::new(),
            requires: Vec::new(),
            behaviors: Vec::new(),
            commands: Vec::new(),
            handlers: Vec::new(),
            startup: None,
            line,
        }
    }
}
