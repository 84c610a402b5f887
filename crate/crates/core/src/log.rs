//! Line-delimited episode log. The same records feed the on-disk log, the
//! control service event stream and the replay checker.

use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::llm::ChatRequest;
use crate::model::{CallType, DecidedBy, EpisodeResult, StepRecord, StepTarget, TopologyGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    EpisodeStart {
        episode_id: String,
        run_label: String,
        task: String,
        policy: String,
        seed: Option<u64>,
        max_iterations: usize,
        graph: TopologyGraph,
    },
    /// The context a decision was made from and what was chosen.
    Decision {
        step: usize,
        decided_by: DecidedBy,
        previous_step: String,
        call_type: CallType,
        target: StepTarget,
        reason: String,
        planner_input: String,
    },
    Chat {
        tag: String,
        request: ChatRequest,
        response: Option<String>,
        error: Option<String>,
    },
    Warning {
        message: String,
    },
    Step(StepRecord),
    EpisodeEnd(EpisodeResult),
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::EpisodeEnd(_))
    }
}

/// Parses a whole log, one record per non-blank line.
pub fn read_log(reader: impl BufRead) -> io::Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub trait EventSink: Send {
    fn emit(&mut self, record: &LogRecord);
}

#[derive(Debug, Default)]
pub struct VecSink {
    pub records: Vec<LogRecord>,
}

impl EventSink for VecSink {
    fn emit(&mut self, record: &LogRecord) {
        self.records.push(record.clone());
    }
}

/// Writes one JSON line per record. Write failures are reported once via
/// tracing and otherwise ignored so logging never aborts an episode.
pub struct JsonlSink<W: Write + Send> {
    out: W,
    failed: bool,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out, failed: false }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> EventSink for JsonlSink<W> {
    fn emit(&mut self, record: &LogRecord) {
        let res = writeln!(self.out, "{}", record.to_line()).and_then(|_| self.out.flush());
        if let Err(e) = res {
            if !self.failed {
                tracing::warn!("episode log write failed: {e}");
                self.failed = true;
            }
        }
    }
}

/// Fans a record out to several sinks.
pub struct TeeSink<'a> {
    sinks: Vec<&'a mut dyn EventSink>,
}

impl<'a> TeeSink<'a> {
    pub fn new(sinks: Vec<&'a mut dyn EventSink>) -> Self {
        Self { sinks }
    }
}

impl EventSink for TeeSink<'_> {
    fn emit(&mut self, record: &LogRecord) {
        for sink in &mut self.sinks {
            sink.emit(record);
        }
    }
}

impl<F: FnMut(&LogRecord) + Send> EventSink for F {
    fn emit(&mut self, record: &LogRecord) {
        self(record)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

/// Microseconds elapsed since construction.
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> u64 {
        self.0.elapsed().as_micros() as u64
    }
}

/// Counter clock: each reading returns the next tick. Makes logs
/// byte-reproducible.
#[derive(Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            LogRecord::Warning { message: "hi".into() },
            LogRecord::Decision {
                step: 0,
                decided_by: DecidedBy::Random,
                previous_step: "None".into(),
                call_type: CallType::Actor,
                target: StepTarget::Actor("config_generator".into()),
                reason: String::new(),
                planner_input: String::new(),
            },
        ];
        let mut sink = JsonlSink::new(Vec::new());
        for r in &records {
            sink.emit(r);
        }
        let bytes = sink.into_inner();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with(r#"{"type":"warning""#));
        assert_eq!(read_log(&bytes[..]).unwrap(), records);
    }

    #[test]
    fn logical_clock_ticks() {
        let c = LogicalClock::default();
        assert_eq!((c.now(), c.now()), (0, 1));
    }
}
