// SPDX-License-Identifier: Apache-2.0

//! Append-only JSONL run log and the JSON checkpoint document.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub event: String,
    pub generation: u32,
    #[serde(default)]
    pub candidate: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

impl LogEvent {
    pub fn new(event: &str, generation: u32, candidate: Option<&str>, payload: Value) -> Self {
        Self {
            event: event.to_string(),
            generation,
            candidate: candidate.map(str::to_string),
            payload,
        }
    }
}

/// Event sink. Each event is one line, flushed as written.
pub struct RunLog {
    sink: Box<dyn Write + Send>,
    position: u64,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            sink: Box::new(File::create(path)?),
            position: 0,
        })
    }

    /// Reopens `path` for appending after discarding everything past
    /// `position` (events written after the last checkpoint).
    pub fn resume(path: &Path, position: u64) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        if len < position {
            return Err(Error::Config(format!(
                "run log {} is shorter ({len} bytes) than its checkpoint position {position}",
                path.display()
            )));
        }
        file.set_len(position)?;
        file.seek(SeekFrom::Start(position))?;
        Ok(Self {
            sink: Box::new(file),
            position,
        })
    }

    /// Log that keeps events in memory only.
    pub fn memory() -> (Self, std::sync::Arc<std::sync::Mutex<Vec<u8>>>) {
        let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = SharedBuffer(buf.clone());
        (
            Self {
                sink: Box::new(sink),
                position: 0,
            },
            buf,
        )
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.sink.write_all(line.as_bytes())?;
        self.sink.flush()?;
        self.position += line.len() as u64;
        Ok(())
    }

    pub fn position(&self) -> u64 {
        self.position
    }
}

struct SharedBuffer(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedBuffer {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("buffer poisoned").extend_from_slice(data);
        Ok(data.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Reads every well-formed event; stops at the first malformed line and
/// reports whether the file ended cleanly.
pub fn read_events(path: &Path) -> Result<(Vec<LogEvent>, bool)> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEvent>(&line) {
            Ok(e) => events.push(e),
            Err(_) => return Ok((events, false)),
        }
    }
    Ok((events, true))
}

/// Writes `value` as pretty JSON through a temporary file and rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp: PathBuf = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
