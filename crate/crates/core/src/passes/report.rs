use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Change {
    pub field: String,
    pub old: String,
    pub new: String,
}

/// Everything one pass changed on one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassRecord {
    pub pass: String,
    pub layer: String,
    pub changes: Vec<Change>,
}

impl PassRecord {
    pub fn new(pass: &str, layer: &str) -> Self {
        Self { pass: pass.to_string(), layer: layer.to_string(), changes: Vec::new() }
    }

    pub fn change(&mut self, field: impl Into<String>, old: impl ToString, new: impl ToString) {
        self.changes.push(Change { field: field.into(), old: old.to_string(), new: new.to_string() });
    }

    pub fn field(&self, name: &str) -> Option<&Change> {
        self.changes.iter().find(|c| c.field == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PassReport {
    pub records: Vec<PassRecord>,
    /// Validator findings accepted for this configuration (stale forward weights).
    pub tolerated: Vec<String>,
}

impl PassReport {
    pub fn extend(&mut self, records: impl IntoIterator<Item = PassRecord>) {
        self.records.extend(records);
    }

    pub fn for_pass<'a>(&'a self, pass: &'a str) -> impl Iterator<Item = &'a PassRecord> + 'a {
        self.records.iter().filter(move |r| r.pass == pass)
    }

    /// One line per change: `pass layer field old new`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# pass layer field old new\n");
        for r in &self.records {
            for c in &r.changes {
                let _ = writeln!(out, "{} {} {} {} {}", r.pass, r.layer, c.field, c.old, c.new);
            }
        }
        for t in &self.tolerated {
            let _ = writeln!(out, "# tolerated: {t}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
