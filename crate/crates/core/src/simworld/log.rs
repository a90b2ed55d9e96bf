//! The event log: one line per observable event, in causal order.
//!
//! `<time-cs> <module> <kind> <payload>`; the separator before an empty
//! payload is omitted. World-level records use `-` as the module.

use std::fmt;

use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogLine {
    pub at: SimTime,
    pub module: String,
    pub kind: String,
    pub payload: String,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.at.as_centis(), self.module, self.kind)?;
        if !self.payload.is_empty() {
            write!(f, " {}", self.payload)?;
        }
        Ok(())
    }
}

impl LogLine {
    /// Value of `key=` in the payload, if present.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.payload.split(' ').find_map(|w| {
            w.strip_prefix(key).and_then(|r| r.strip_prefix('='))
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub lines: Vec<LogLine>,
}

impl EventLog {
    pub fn push(&mut self, at: SimTime, module: &str, kind: &str, payload: impl Into<String>) {
        self.lines.push(LogLine {
            at,
            module: module.to_string(),
            kind: kind.to_string(),
            payload: payload.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a LogLine> + 'a {
        self.lines.iter().filter(move |l| l.kind == kind)
    }

    /// The whole log, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting() {
        let mut log = EventLog::default();
        log.push(SimTime::from_centis(12), "head", "boot", "id=0 version=1");
        log.push(SimTime::from_micros(15_500), "head", "upgrade_ignored", "");
        assert_eq!(log.to_text(), "12 head boot id=0 version=1\n1 head upgrade_ignored\n");
        assert_eq!(log.lines[0].field("version"), Some("1"));
        assert_eq!(log.lines[0].field("ver"), None);
        assert_eq!(log.of_kind("boot").count(), 1);
    }
}
