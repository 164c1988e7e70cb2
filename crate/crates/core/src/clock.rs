//! Strictly increasing wall-clock timestamps.
//!
//! Ordering checks compare timestamps recorded by consecutive pipeline
//! events, so two calls in one process never return the same instant.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

static LAST_NANOS: AtomicI64 = AtomicI64::new(i64::MIN);

pub type Timestamp = DateTime<Utc>;

pub fn now() -> Timestamp {
    let wall = Utc::now().timestamp_nanos_opt().unwrap_or(0);
    let mut prev = LAST_NANOS.load(Ordering::Relaxed);
    loop {
        let next = wall.max(prev.saturating_add(1));
        match LAST_NANOS.compare_exchange_weak(prev, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return Utc.timestamp_nanos(next),
            Err(actual) => prev = actual,
        }
    }
}

/// RFC 3339 with nanoseconds, the form used in every persisted document.
pub fn format(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Nanos, true)
}

pub fn parse(text: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(text).ok().map(|t| t.with_timezone(&Utc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_increasing_across_threads() {
        let handles: Vec<_> = (0..4)
            .map(|_| std::thread::spawn(|| (0..1000).map(|_| now()).collect::<Vec<_>>()))
            .collect();
        let mut all: Vec<Timestamp> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn format_round_trips() {
        let t = now();
        assert_eq!(parse(&format(&t)), Some(t));
    }
}
