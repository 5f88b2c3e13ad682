//! CSV tables, run manifests and digest checks.

use fundsep::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// An in-memory CSV table with a mandatory header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: ToString>(header: &[S]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Shortest round-trip decimal form; NaN prints as an empty field.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Two-column `key,value` table.
pub fn key_values(pairs: &[(String, String)]) -> Table {
    let mut t = Table::new(&["key", "value"]);
    for (k, v) in pairs {
        t.push(vec![k.clone(), v.clone()]);
    }
    t
}

/// Everything a command produces.
#[derive(Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    /// A check failed its tolerance (exit code 3).
    pub failed: bool,
}

impl Outcome {
    pub fn file(&mut self, name: &str, table: &Table) {
        self.files.push((name.to_string(), table.to_bytes()));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub command: String,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_hash: String,
        seed: u64,
        files: &[(String, Vec<u8>)],
    ) -> RunManifest {
        RunManifest {
            config_hash,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            outputs: files
                .iter()
                .map(|(f, b)| OutputEntry {
                    file: f.clone(),
                    sha256: sha256(b),
                })
                .collect(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            row: e.line(),
            col: e.column(),
            msg: format!("{}: {e}", path.display()),
        })
    }

    /// Differences against a recorded manifest, one message per mismatch.
    pub fn compare(&self, recorded: &RunManifest) -> Vec<String> {
        let mut out = Vec::new();
        if self.config_hash != recorded.config_hash {
            out.push("configuration hash differs".to_string());
        }
        if self.command != recorded.command {
            out.push(format!(
                "command `{}` differs from recorded `{}`",
                self.command, recorded.command
            ));
        }
        for e in &self.outputs {
            match recorded.outputs.iter().find(|r| r.file == e.file) {
                None => out.push(format!("{}: not in the recorded manifest", e.file)),
                Some(r) if r.sha256 != e.sha256 => out.push(format!("{}: digest differs", e.file)),
                Some(_) => {}
            }
        }
        for r in &recorded.outputs {
            if !self.outputs.iter().any(|e| e.file == r.file) {
                out.push(format!("{}: recorded but not produced", r.file));
            }
        }
        out
    }
}

pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
