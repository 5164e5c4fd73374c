//! Request/response transcripts for offline replay.
//!
//! Every backend call (chat, logprobs, world) can be appended to a JSONL
//! transcript as `{"kind", "request", "response", "wall_ms"}`. A replayer
//! loads the file and serves responses keyed by the canonicalized request
//! JSON, so a recorded run can be reproduced with networking disabled.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::util::{canonical_json, canonicalize};

pub const KIND_CHAT: &str = "chat";
pub const KIND_LOGPROBS: &str = "logprobs";
pub const KIND_WORLD: &str = "world";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub kind: String,
    pub request: Value,
    pub response: Value,
    /// Wall-clock duration of the original call, for inspection only; replay
    /// ignores it.
    pub wall_ms: u64,
}

/// Append-only JSONL writer, safe to share across worker threads.
pub struct TranscriptWriter {
    file: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::create(path)?;
        Ok(TranscriptWriter {
            file: Mutex::new(BufWriter::new(file)),
        })
    }

    /// Appends one record; request/response are canonicalized so the stored
    /// line does not depend on in-memory key order.
    pub fn append(&self, kind: &str, request: &Value, response: &Value, wall_ms: u64) -> Result<()> {
        let record = TranscriptRecord {
            kind: kind.to_string(),
            request: canonicalize(request),
            response: canonicalize(response),
            wall_ms,
        };
        let line = serde_json::to_string(&record)?;
        let mut file = self.file.lock().unwrap();
        writeln!(file, "{line}")?;
        file.flush()?;
        Ok(())
    }
}

/// Replays recorded responses by (kind, canonical request).
///
/// Repeats of the same request are served in recorded order; once a key's
/// queue is exhausted its last response is served again (backends are
/// deterministic, so an extra identical request would have gotten the same
/// answer). A request that never appears in the transcript is an error.
pub struct TranscriptReplayer {
    queues: Mutex<HashMap<(String, String), VecDeque<Value>>>,
    last: HashMap<(String, String), Value>,
    len: usize,
}

impl TranscriptReplayer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| Error::Replay(format!("cannot open transcript {}: {e}", path.display())))?;
        let mut queues: HashMap<(String, String), VecDeque<Value>> = HashMap::new();
        let mut last = HashMap::new();
        let mut len = 0usize;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TranscriptRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Replay(format!(
                    "bad transcript line {} in {}: {e}",
                    lineno + 1,
                    path.display()
                ))
            })?;
            let key = (record.kind.clone(), canonical_json(&record.request));
            queues.entry(key.clone()).or_default().push_back(record.response.clone());
            last.insert(key, record.response);
            len += 1;
        }
        Ok(TranscriptReplayer {
            queues: Mutex::new(queues),
            last,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lookup(&self, kind: &str, request: &Value) -> Result<Value> {
        let key = (kind.to_string(), canonical_json(request));
        if let Some(queue) = self.queues.lock().unwrap().get_mut(&key) {
            if let Some(response) = queue.pop_front() {
                return Ok(response);
            }
        }
        if let Some(response) = self.last.get(&key) {
            return Ok(response.clone());
        }
        Err(Error::Replay(format!(
            "no recorded {kind} response for request {}",
            truncate_for_log(&key.1)
        )))
    }
}

fn truncate_for_log(s: &str) -> String {
    if s.len() <= 200 {
        s.to_string()
    } else {
        format!("{}… ({} bytes)", &s[..200], s.len())
    }
}
