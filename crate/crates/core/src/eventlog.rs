//! Structured event records, one JSON object per line.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    RecordAccepted,
    RecordFlagged,
    RecordDropped,
    StateTransition,
    FaultInjected,
    AttackInjected,
    CommandStaged,
    CommandAcked,
    CommandExecuted,
    CommandRefused,
    TrackConfirmed,
    TrackDropped,
    DisplayStaleDetected,
    HandshakeOk,
    HandshakeFail,
}

/// Flat string-keyed map of scalars. `BTreeMap` keeps serialization order
/// stable, which the byte-identical log guarantee relies on.
pub type Attrs = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub t_ms: u64,
    pub component: String,
    pub event: EventKind,
    #[serde(default)]
    pub attrs: Attrs,
}

impl EventLogEntry {
    pub fn new(t_ms: u64, component: impl Into<String>, event: EventKind) -> Self {
        Self {
            t_ms,
            component: component.into(),
            event,
            attrs: Attrs::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    pub fn attr_u64(&self, key: &str) -> Option<u64> {
        self.attrs.get(key).and_then(Value::as_u64)
    }

    pub fn attr_bool(&self, key: &str) -> Option<bool> {
        self.attrs.get(key).and_then(Value::as_bool)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event entries always serialize")
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("malformed log at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[EventLogEntry]) -> io::Result<()> {
    for e in entries {
        w.write_all(e.to_line().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(entries: &[EventLogEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

/// Parses JSONL, reporting the 1-based line of the first bad record.
/// Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<EventLogEntry>, LogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: EventLogEntry = serde_json::from_str(&line).map_err(|e| LogError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if entry.attrs.values().any(|v| v.is_array() || v.is_object()) {
            return Err(LogError::Malformed {
                line: i + 1,
                reason: "attrs must be scalars".into(),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

/// Destination for events emitted by hosts.
pub trait EventSink {
    fn emit(&mut self, entry: EventLogEntry);
}

impl EventSink for Vec<EventLogEntry> {
    fn emit(&mut self, entry: EventLogEntry) {
        self.push(entry);
    }
}

/// Line-buffered file sink used by the live-mode processes.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }
}

impl<W: Write> EventSink for JsonlWriter<W> {
    fn emit(&mut self, entry: EventLogEntry) {
        let mut line = entry.to_line();
        line.push('\n');
        // A failed log write must not take the host down mid-trial.
        let _ = self.inner.write_all(line.as_bytes());
        let _ = self.inner.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_has_fixed_key_order() {
        let e = EventLogEntry::new(5, "gateway", EventKind::RecordDropped)
            .with("reason", "SEQUENCE")
            .with("seq", 4u64);
        assert_eq!(
            e.to_line(),
            r#"{"t_ms":5,"component":"gateway","event":"RECORD_DROPPED","attrs":{"reason":"SEQUENCE","seq":4}}"#
        );
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"t_ms\":1,\"component\":\"a\",\"event\":\"HANDSHAKE_OK\",\"attrs\":{}}\nnot json\n";
        match read_jsonl(text.as_bytes()) {
            Err(LogError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_attrs_rejected() {
        let text = "{\"t_ms\":1,\"component\":\"a\",\"event\":\"HANDSHAKE_OK\",\"attrs\":{\"x\":[1]}}\n";
        assert!(read_jsonl(text.as_bytes()).is_err());
    }

    #[test]
    fn round_trip() {
        let entries = vec![
            EventLogEntry::new(1, "unit-1", EventKind::StateTransition).with("to", "READY"),
            EventLogEntry::new(2, "gateway", EventKind::HandshakeOk),
        ];
        let text = to_jsonl(&entries);
        assert_eq!(read_jsonl(text.as_bytes()).unwrap(), entries);
    }
}
