//! Append-only log of run state changes, so runs survive a restart as
//! history. A run that had not finished when the log ends is reported as
//! failed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use flowsmith_core::agent::RunState;

use crate::{io_error, ServiceError};

pub const JOURNAL_FILE: &str = "runs.jsonl";
pub const LOST_RUN: &str = "run was in flight when the service stopped";

pub struct RunJournal {
    path: PathBuf,
    file: Mutex<File>,
}

impl RunJournal {
    /// Opens (creating if needed) and replays the journal. Returns the last
    /// recorded state of every run, in first-seen order.
    pub fn open(path: &Path) -> Result<(Self, Vec<RunState>), ServiceError> {
        let mut order = Vec::new();
        let mut latest: HashMap<String, RunState> = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_error(path))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_error(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let state: RunState = serde_json::from_str(&line).map_err(|e| ServiceError::Journal {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                if !latest.contains_key(&state.run_id) {
                    order.push(state.run_id.clone());
                }
                latest.insert(state.run_id.clone(), state);
            }
        }
        let runs = order
            .into_iter()
            .map(|id| {
                let mut run = latest.remove(&id).expect("id came from the map");
                if !run.status.is_terminal() {
                    run.fail(LOST_RUN);
                }
                run
            })
            .collect();
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_error(path))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            runs,
        ))
    }

    pub fn record(&self, state: &RunState) {
        let line = serde_json::to_string(state).expect("run states serialize") + "\n";
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.flush()) {
            tracing::error!(path = %self.path.display(), error = %e, "cannot append to run journal");
        }
    }
}
