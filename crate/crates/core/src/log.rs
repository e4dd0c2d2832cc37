//! Append-only run log serialized as JSON lines.
//!
//! Every observable event of a run (publishes, deliveries, lifecycle
//! transitions, injections, adaptation commands, diagnostics samples) is
//! recorded in order as one JSON object per line. Field order is fixed and
//! every floating-point value is rendered with a fixed precision, so two runs
//! of the same scenario with the same seed produce byte-identical logs.

use crate::time::VirtualTime;
use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;
use serde_json::{Map, Value};
use std::io::{self, BufRead, Write};

/// One logged event. `topic` and `seq` are present only where meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: VirtualTime,
    pub kind: String,
    pub node: String,
    pub topic: Option<String>,
    pub seq: Option<u64>,
    pub detail: Value,
}

impl Serialize for EventRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("EventRecord", 6)?;
        s.serialize_field("t", &self.t.to_string())?;
        s.serialize_field("kind", &self.kind)?;
        s.serialize_field("node", &self.node)?;
        match &self.topic {
            Some(topic) => s.serialize_field("topic", topic)?,
            None => s.skip_field("topic")?,
        }
        match &self.seq {
            Some(seq) => s.serialize_field("seq", seq)?,
            None => s.skip_field("seq")?,
        }
        s.serialize_field("detail", &self.detail)?;
        s.end()
    }
}

impl EventRecord {
    /// Reads a float that was logged via [`fixed`] back out of `detail`.
    pub fn detail_f64(&self, key: &str) -> Option<f64> {
        match self.detail.get(key)? {
            Value::String(s) => s.parse().ok(),
            Value::Number(n) => n.as_f64(),
            _ => None,
        }
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key)?.as_str()
    }
}

/// Formats a float with fixed precision for byte-stable serialization.
pub fn fixed(value: f64) -> Value {
    Value::String(format!("{value:.6}"))
}

/// Convenience constructor for detail objects. serde_json maps are ordered
/// by key, which keeps the rendered bytes independent of insertion order.
pub fn detail(fields: &[(&str, Value)]) -> Value {
    let mut map = Map::new();
    for (k, v) in fields {
        map.insert((*k).to_string(), v.clone());
    }
    Value::Object(map)
}

/// In-memory event log for one run.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EventRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serializes the whole log as JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("log record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> io::Result<()> {
        writer.write_all(self.to_jsonl().as_bytes())
    }

    /// Parses a log previously written by [`EventLog::to_jsonl`].
    pub fn from_jsonl<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            let obj = value
                .as_object()
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "expected object"))?;
            let t_str = obj
                .get("t")
                .and_then(Value::as_str)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing t"))?;
            let t: f64 = t_str
                .parse()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad t: {e}")))?;
            records.push(EventRecord {
                t: VirtualTime::from_secs_f64(t),
                kind: str_field(obj, "kind")?,
                node: str_field(obj, "node")?,
                topic: obj.get("topic").and_then(Value::as_str).map(String::from),
                seq: obj.get("seq").and_then(Value::as_u64),
                detail: obj.get("detail").cloned().unwrap_or(Value::Null),
            });
        }
        Ok(EventLog { records })
    }
}

fn str_field(obj: &Map<String, Value>, key: &str) -> io::Result<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(String::from)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("missing {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> EventRecord {
        EventRecord {
            t: VirtualTime::from_millis(5000),
            kind: "publish".into(),
            node: "camera".into(),
            topic: Some("/camera/image".into()),
            seq: Some(3),
            detail: detail(&[("stamp", Value::String("5.000".into())), ("sharpness", fixed(0.125))]),
        }
    }

    #[test]
    fn serialization_has_fixed_field_order() {
        let line = serde_json::to_string(&sample_record()).unwrap();
        assert_eq!(
            line,
            r#"{"t":"5.000","kind":"publish","node":"camera","topic":"/camera/image","seq":3,"detail":{"sharpness":"0.125000","stamp":"5.000"}}"#
        );
    }

    #[test]
    fn roundtrip_preserves_records_and_bytes() {
        let mut log = EventLog::new();
        log.push(sample_record());
        log.push(EventRecord {
            t: VirtualTime::from_millis(5500),
            kind: "lifecycle".into(),
            node: "fusion".into(),
            topic: None,
            seq: None,
            detail: detail(&[("from", "active".into()), ("to", "inactive".into())]),
        });
        let bytes = log.to_jsonl();
        let reparsed = EventLog::from_jsonl(bytes.as_bytes()).unwrap();
        assert_eq!(reparsed.records(), log.records());
        assert_eq!(reparsed.to_jsonl(), bytes);
    }

    #[test]
    fn detail_f64_reads_fixed_values() {
        let record = sample_record();
        assert_eq!(record.detail_f64("sharpness"), Some(0.125));
        assert_eq!(record.detail_str("stamp"), Some("5.000"));
        assert_eq!(record.detail_f64("missing"), None);
    }
}
