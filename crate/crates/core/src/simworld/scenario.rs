//! Scenario files: timed stimuli applied to a running world.
//!
//! ```text
//! at 0 start head car.role
//! at 1000 sensor head 1 5
//! at 1500 sever head right
//! ```
//!
//! Times are in centiseconds and must not decrease. `start` names a host
//! file that is read when the scenario is loaded, so a run never touches
//! the filesystem.

use crate::roledsl::Diagnostic;
use crate::service::command::valid_file_name;
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Sensor { module: String, sensor: u8, value: i32 },
    Sever { a: String, b: String },
    Restore { a: String, b: String },
    Upgrade { module: String, version: u32 },
    /// `name` is the file's base name; `content` was read at load time.
    Start { module: String, name: String, content: Vec<u8> },
    App { module: String, app: String, line: String },
}

impl Action {
    /// Every module name this action refers to.
    pub fn modules(&self) -> Vec<&str> {
        match self {
            Action::Sensor { module, .. }
            | Action::Upgrade { module, .. }
            | Action::Start { module, .. }
            | Action::App { module, .. } => vec![module],
            Action::Sever { a, b } | Action::Restore { a, b } => vec![a, b],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub at: SimTime,
    pub action: Action,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

/// Loads the content of a `start` file from its path as written.
pub type Resolver<'a> = dyn FnMut(&str) -> Result<Vec<u8>, String> + 'a;

impl Scenario {
    /// Parses a scenario that may not use `start`.
    pub fn parse(text: &str) -> Result<Scenario, Vec<Diagnostic>> {
        Self::parse_with(text, &mut |path: &str| {
            Err(format!("cannot read `{path}`: no file resolver"))
        })
    }

    pub fn parse_with(text: &str, resolve: &mut Resolver<'_>) -> Result<Scenario, Vec<Diagnostic>> {
        let mut steps: Vec<Step> = Vec::new();
        let mut diags = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            // `app` carries a free-form command line, so only whole-line
            // comments are recognised.
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            match parse_step(content, line, resolve) {
                Ok(step) => {
                    if let Some(prev) = steps.last() {
                        if step.at < prev.at {
                            diags.push(Diagnostic::new(
                                line,
                                format!(
                                    "time {} is earlier than the previous step at {}",
                                    step.at.as_centis(),
                                    prev.at.as_centis()
                                ),
                            ));
                            continue;
                        }
                    }
                    steps.push(step);
                }
                Err(e) => diags.push(Diagnostic::new(line, e)),
            }
        }
        if diags.is_empty() {
            Ok(Scenario { steps })
        } else {
            Err(diags)
        }
    }
}

fn parse_step(content: &str, line: usize, resolve: &mut Resolver<'_>) -> Result<Step, String> {
    let mut it = content.splitn(4, char::is_whitespace).filter(|s| !s.is_empty());
    if it.next() != Some("at") {
        return Err("expected `at <centiseconds> <action>`".into());
    }
    let t = it.next().ok_or("missing time")?;
    let at: u64 = t.parse().map_err(|_| format!("bad time `{t}`"))?;
    let rest = content
        .splitn(3, char::is_whitespace)
        .nth(2)
        .map(str::trim)
        .unwrap_or("");
    let (verb, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    let args = args.trim();
    let words: Vec<&str> = args.split_ascii_whitespace().collect();
    let action = match (verb, words.as_slice()) {
        ("sensor", [m, id, v]) => Action::Sensor {
            module: m.to_string(),
            sensor: id.parse().map_err(|_| format!("bad sensor id `{id}`"))?,
            value: v.parse().map_err(|_| format!("bad sensor value `{v}`"))?,
        },
        ("sensor", _) => return Err("usage: sensor <module> <id> <value>".into()),
        ("sever", [a, b]) => Action::Sever { a: a.to_string(), b: b.to_string() },
        ("sever", _) => return Err("usage: sever <module> <module>".into()),
        ("restore", [a, b]) => Action::Restore { a: a.to_string(), b: b.to_string() },
        ("restore", _) => return Err("usage: restore <module> <module>".into()),
        ("upgrade", [m, v]) => Action::Upgrade {
            module: m.to_string(),
            version: v.parse().map_err(|_| format!("bad version `{v}`"))?,
        },
        ("upgrade", _) => return Err("usage: upgrade <module> <version>".into()),
        ("start", [m, path]) => {
            let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
            if !valid_file_name(name) {
                return Err(format!("bad file name `{name}`"));
            }
            Action::Start {
                module: m.to_string(),
                name: name.to_string(),
                content: resolve(path)?,
            }
        }
        ("start", _) => return Err("usage: start <module> <file>".into()),
        ("app", [m, app, _, ..]) => {
            let line = args
                .splitn(3, char::is_whitespace)
                .nth(2)
                .unwrap_or("")
                .trim()
                .to_string();
            Action::App { module: m.to_string(), app: app.to_string(), line }
        }
        ("app", _) => return Err("usage: app <module> <app> <command line>".into()),
        ("", _) => return Err("missing action".into()),
        (other, _) => return Err(format!("unknown action `{other}`")),
    };
    Ok(Step { at: SimTime::from_centis(at), action, line })
}
