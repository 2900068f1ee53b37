use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetHash;
use crate::error::{Error, Result};
use crate::separator::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryState {
    Queued,
    Training,
    Paused,
    Complete,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub job_id: String,
    pub arrival_seq: u64,
    pub priority: i64,
    pub dataset: DatasetHash,
    pub epochs: u32,
    pub state: EntryState,
    pub completed_epochs: u32,
    /// Pause once this many epochs are complete.
    pub pause_after: Option<u32>,
    /// Checkpoint to restore at the start of the next run.
    pub resume_from: Option<String>,
    pub abort_reason: Option<String>,
}

impl fmt::Display for QueueEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = match self.state {
            EntryState::Queued => "queued".to_string(),
            EntryState::Training => format!("training(epoch {}/{})", self.completed_epochs, self.epochs),
            EntryState::Paused => "paused".to_string(),
            EntryState::Complete => "complete".to_string(),
            EntryState::Aborted => "aborted".to_string(),
        };
        write!(
            f,
            "{:<16} {:<24} {:>4}/{:<4} priority {}",
            self.job_id, state, self.completed_epochs, self.epochs, self.priority
        )?;
        if let Some(reason) = &self.abort_reason {
            write!(f, "  ({reason})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Queue {
    pub next_seq: u64,
    pub jobs: Vec<QueueEntry>,
}

impl Queue {
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::from(e).in_file(path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::from(e).in_file(path.display())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn get(&self, job_id: &str) -> Result<&QueueEntry> {
        self.jobs
            .iter()
            .find(|j| j.job_id == job_id)
            .ok_or_else(|| Error::UnknownJob(job_id.to_string()))
    }

    pub fn get_mut(&mut self, job_id: &str) -> Result<&mut QueueEntry> {
        self.jobs
            .iter_mut()
            .find(|j| j.job_id == job_id)
            .ok_or_else(|| Error::UnknownJob(job_id.to_string()))
    }
}
