use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Level {
    Error,
    Warn,
    Info,
    Debug,
}

impl Level {
    fn as_str(self) -> &'static str {
        match self {
            Level::Error => "error",
            Level::Warn => "warn",
            Level::Info => "info",
            Level::Debug => "debug",
        }
    }
}

/// JSON-lines event log: every event goes to `<out>/log.jsonl`; events at
/// or above the threshold are echoed to stderr.
pub struct Logger {
    threshold: Level,
    file: Mutex<Option<File>>,
}

impl Logger {
    pub fn new(threshold: Level) -> Self {
        Self {
            threshold,
            file: Mutex::new(None),
        }
    }

    pub fn open(&self, dir: &Path) -> std::io::Result<()> {
        let f = File::options().create(true).append(true).open(dir.join("log.jsonl"))?;
        *self.file.lock().expect("log lock") = Some(f);
        Ok(())
    }

    pub fn log(&self, level: Level, event: &str, fields: Value) {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut line = json!({ "ts": ts, "level": level.as_str(), "event": event });
        if let (Value::Object(dst), Value::Object(src)) = (&mut line, fields) {
            dst.extend(src);
        }
        let text = line.to_string();
        if let Some(f) = self.file.lock().expect("log lock").as_mut() {
            let _ = writeln!(f, "{text}");
        }
        if level <= self.threshold {
            eprintln!("{text}");
        }
    }

    pub fn info(&self, event: &str, fields: Value) {
        self.log(Level::Info, event, fields);
    }
}
