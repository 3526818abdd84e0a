use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use dehaze_core::{Error, Result};

pub const MANIFEST_NAME: &str = "run_manifest.txt";

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so that reruns
/// produce byte-identical output directories.
fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Record of one invocation: subcommand, every resolved setting, timing.
pub struct RunManifest {
    subcommand: &'static str,
    started: u64,
    values: Vec<(String, String)>,
}

impl RunManifest {
    pub fn start(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: now(),
            values: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.push((key.to_string(), value.to_string()));
    }

    pub fn set_path(&mut self, key: &str, value: &Path) {
        self.set(key, value.display());
    }

    pub fn render(&self, finished: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {}", self.subcommand);
        let _ = writeln!(s, "tool_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "started_unix = {}", self.started);
        let _ = writeln!(s, "finished_unix = {finished}");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render(now())).map_err(|e| Error::io(path, e))
    }
}
