//! Human progress lines on stderr and machine-readable JSONL events.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use parking_lot::Mutex;
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Default)]
pub struct Observer {
    log: Option<Mutex<File>>,
    quiet: bool,
}

impl Observer {
    /// No progress output, no event log.
    pub fn silent() -> Self {
        Self { log: None, quiet: true }
    }

    pub fn stderr() -> Self {
        Self::default()
    }

    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn progress(&self, message: &str) {
        if !self.quiet {
            eprintln!("{message}");
        }
    }

    pub fn warn(&self, message: &str) {
        log::warn!("{message}");
        if !self.quiet {
            eprintln!("warning: {message}");
        }
        self.event("warning", json!({ "message": message }));
    }

    pub fn event(&self, kind: &str, fields: Value) {
        let Some(log) = &self.log else { return };
        let mut record = json!({ "event": kind });
        if let (Value::Object(dst), Value::Object(src)) = (&mut record, fields) {
            dst.extend(src);
        }
        let mut file = log.lock();
        if let Err(e) = writeln!(file, "{record}") {
            log::warn!("event log write failed: {e}");
        }
    }
}
