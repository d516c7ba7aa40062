//! Warning collection. Every warning logged during a command ends up in the
//! command's `diagnostics.json`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};

static COLLECTED: Mutex<Vec<String>> = Mutex::new(Vec::new());
static VERBOSE: AtomicBool = AtomicBool::new(false);
static LOGGER: Collector = Collector;

struct Collector;

impl Log for Collector {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= Level::Info
    }

    fn log(&self, r: &Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let msg = r.args().to_string();
        let echo = if VERBOSE.load(Ordering::Relaxed) { Level::Info } else { Level::Warn };
        if r.level() <= echo {
            let tag = if r.level() <= Level::Warn { "warning" } else { "info" };
            eprintln!("{tag}: {msg}");
        }
        if r.level() <= Level::Warn {
            COLLECTED.lock().unwrap_or_else(|e| e.into_inner()).push(msg);
        }
    }

    fn flush(&self) {}
}

/// Installs the process-wide logger. Info messages are echoed to stderr
/// only when `verbose`.
pub fn install(verbose: bool) {
    VERBOSE.store(verbose, Ordering::Relaxed);
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
}

/// Drains the collected warnings, sorted and deduplicated so the file does
/// not depend on thread scheduling.
pub fn take() -> Vec<String> {
    let mut v = std::mem::take(&mut *COLLECTED.lock().unwrap_or_else(|e| e.into_inner()));
    v.sort();
    v.dedup();
    v
}
