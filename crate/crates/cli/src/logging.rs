//! One JSON object per log line on stderr.

use std::io::Write;

use log::{Level, LevelFilter, Log, Metadata, Record};
use serde::Serialize;

struct JsonLogger {
    level: LevelFilter,
}

#[derive(Serialize)]
struct Line<'a> {
    level: &'a str,
    target: &'a str,
    message: String,
}

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = Line {
            level: match record.level() {
                Level::Error => "error",
                Level::Warn => "warn",
                Level::Info => "info",
                Level::Debug => "debug",
                Level::Trace => "trace",
            },
            target: record.target(),
            message: record.args().to_string(),
        };
        if let Ok(text) = serde_json::to_string(&line) {
            let _ = writeln!(std::io::stderr().lock(), "{text}");
        }
    }

    fn flush(&self) {}
}

pub fn init(level: LevelFilter) {
    if log::set_boxed_logger(Box::new(JsonLogger { level })).is_ok() {
        log::set_max_level(level);
    }
}
