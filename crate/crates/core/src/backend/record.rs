//! Line-delimited record/replay store for generation streams.
//!
//! One JSON object per line, preceded by a `{"schema_version":1}` header.
//! Logprobs are quantized to 9 significant digits before writing so a
//! record file is byte-stable however it was produced; appends are atomic
//! per line, so a crash leaves every earlier record readable.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{Backend, BackendError, GenerationRequest, TokenStream, TraceRecord};
use crate::stability::TokenStep;
use crate::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 9 significant decimal digits, the store's wire precision.
pub fn quantize_logprob(x: Scalar) -> Scalar {
    format!("{x:.8e}").parse().expect("formatted float reparses")
}

fn quantize_record(mut record: TraceRecord) -> TraceRecord {
    for step in &mut record.steps {
        for lp in &mut step.topk_logprobs {
            *lp = quantize_logprob(*lp);
        }
    }
    record
}

#[derive(serde::Serialize, Deserialize)]
struct Header {
    schema_version: u32,
}

/// Append-only writer. Safe to share behind the engine's record sink mutex.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    /// Creates (or truncates) a store and writes the schema header.
    pub fn create(path: &Path) -> Result<Self, BackendError> {
        let file = OpenOptions::new().write(true).create(true).truncate(true).open(path)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &Header { schema_version: SCHEMA_VERSION })
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, record: &TraceRecord) -> Result<(), BackendError> {
        let record = quantize_record(record.clone());
        serde_json::to_writer(&mut self.out, &record)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Thread-safe sink the pipeline hands to every attempt driver.
pub struct RecordSink {
    writer: Mutex<RecordWriter>,
}

impl RecordSink {
    pub fn create(path: &Path) -> Result<Self, BackendError> {
        Ok(Self { writer: Mutex::new(RecordWriter::create(path)?) })
    }

    pub fn append(&self, record: &TraceRecord) -> Result<(), BackendError> {
        self.writer.lock().expect("record sink poisoned").append(record)
    }
}

/// Streaming reader; yields one record per line with 1-based line numbers in
/// every error, so a truncated tail still leaves earlier records usable.
pub struct RecordReader {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl RecordReader {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header_line = lines.next().ok_or(BackendError::Record {
            line: 1,
            message: "missing schema header".into(),
        })??;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| {
            BackendError::Record { line: 1, message: format!("bad schema header: {e}") }
        })?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(BackendError::Record {
                line: 1,
                message: format!("unsupported schema_version {}", header.schema_version),
            });
        }
        Ok(Self { lines, line_no: 1 })
    }
}

impl Iterator for RecordReader {
    type Item = Result<TraceRecord, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            match self.lines.next()? {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => {
                    let parsed = serde_json::from_str::<TraceRecord>(&line).map_err(|e| {
                        BackendError::Record { line: self.line_no, message: e.to_string() }
                    });
                    return Some(parsed.and_then(|r| r.validate().map(|()| r)));
                }
                Err(e) => {
                    return Some(Err(BackendError::Record {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            }
        }
    }
}

/// Reads a whole store, failing on the first malformed line.
pub fn read_records(path: &Path) -> Result<Vec<TraceRecord>, BackendError> {
    RecordReader::open(path)?.collect()
}

/// Replays a recorded session as a [`Backend`].
///
/// Requests are matched by their slot tag when the store has it (the engine
/// always records one), falling back to file order for untagged requests.
/// Steps replay byte-identically in their original order.
pub struct ReplayBackend {
    records: Mutex<Vec<Option<TraceRecord>>>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_records(read_records(path)?))
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Self { records: Mutex::new(records.into_iter().map(Some).collect()) }
    }

    fn take(&self, request: &GenerationRequest) -> Result<TraceRecord, BackendError> {
        let mut records = self.records.lock().expect("replay records poisoned");
        let slot = if request.tag.is_empty() {
            records.iter().position(Option::is_some)
        } else {
            records
                .iter()
                .position(|r| r.as_ref().is_some_and(|r| r.request.tag == request.tag))
        };
        slot.and_then(|i| records[i].take()).ok_or_else(|| {
            BackendError::Protocol(format!("replay store has no record for tag {:?}", request.tag))
        })
    }
}

impl Backend for ReplayBackend {
    fn generate_stream(
        &self,
        request: &GenerationRequest,
    ) -> Result<Box<dyn TokenStream + '_>, BackendError> {
        let record = self.take(request)?;
        Ok(Box::new(ReplayStream {
            steps: record.steps.into_iter(),
            yielded: 0,
            max_tokens: request.max_tokens,
            cancelled: false,
        }))
    }
}

struct ReplayStream {
    steps: std::vec::IntoIter<TokenStep<Scalar>>,
    yielded: u64,
    max_tokens: u64,
    cancelled: bool,
}

impl TokenStream for ReplayStream {
    fn next_step(&mut self) -> Result<Option<TokenStep<Scalar>>, BackendError> {
        if self.cancelled || self.yielded >= self.max_tokens {
            return Ok(None);
        }
        match self.steps.next() {
            Some(step) => {
                self.yielded += 1;
                Ok(Some(step))
            }
            None => Ok(None),
        }
    }

    fn cancel(&mut self) {
        self.cancelled = true;
    }
}
