//! NDJSON logger on stderr: one `{"ts","level","target","msg"}` object per line.

use std::io::Write;

use log::{Level, LevelFilter, Log, Metadata, Record};

struct NdjsonLogger {
    level: LevelFilter,
}

impl Log for NdjsonLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= self.level
    }

    fn log(&self, r: &Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "ts": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "level": r.level().as_str(),
            "target": r.target(),
            "msg": r.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

/// Installs the logger; later calls are no-ops.
pub fn init(level: Level) {
    let logger = Box::new(NdjsonLogger {
        level: level.to_level_filter(),
    });
    if log::set_boxed_logger(logger).is_ok() {
        log::set_max_level(level.to_level_filter());
    }
}
