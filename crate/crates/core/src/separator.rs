//! Recovering a user's model from a hybrid snapshot.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::model::{ModelFile, ModelGraph};
use crate::trainer::{CompletionEvent, CompletionSink};
use crate::unifier::HybridModel;

/// The submitted graph and the trained parameters of one job, with the
/// namespace removed. Only that job's sub-model is read.
pub fn separate(snapshot: &HybridModel, job_id: &str) -> Result<(ModelGraph, ParamStore)> {
    let sub = snapshot.sub_model(job_id)?;
    let graph = sub.local_graph()?;
    let params = sub.local_params()?;
    graph.check_params(&params).map_err(|e| Error::NamespaceCorruption(e.to_string()))?;
    Ok((graph, params))
}

pub fn package(graph: &ModelGraph, params: &ParamStore) -> Result<Vec<u8>> {
    ModelFile::new(graph.clone(), params.clone()).encode()
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivered {
    pub job_id: String,
    pub slice_index: usize,
    pub path: Option<PathBuf>,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
struct Progress {
    done: usize,
    failed: bool,
}

/// Background thread turning completion events into packaged models.
///
/// Events are handled in arrival order. As a [`CompletionSink`] the worker
/// holds back event `k` until event `k - 1` has been written, so a job's
/// output never lags behind the completion of a job scheduled after it.
pub struct SeparatorWorker {
    tx: Option<Sender<CompletionEvent>>,
    sent: usize,
    progress: Arc<(Mutex<Progress>, Condvar)>,
    handle: Option<JoinHandle<Result<Vec<Delivered>>>>,
}

impl SeparatorWorker {
    /// `out_dir` receives `<job>.unnd`; with `None` results are only returned.
    pub fn spawn(out_dir: Option<PathBuf>) -> Self {
        let (tx, rx) = mpsc::channel();
        let progress = Arc::new((Mutex::new(Progress::default()), Condvar::new()));
        let shared = Arc::clone(&progress);
        let handle = thread::spawn(move || work(rx, out_dir, shared));
        Self {
            tx: Some(tx),
            sent: 0,
            progress,
            handle: Some(handle),
        }
    }

    fn wait_for(&self, n: usize) {
        let (lock, cv) = &*self.progress;
        let mut p = lock.lock().expect("separator lock");
        while p.done < n && !p.failed {
            p = cv.wait(p).expect("separator lock");
        }
    }

    /// Waits for all events and returns what was delivered.
    pub fn join(mut self) -> Result<Vec<Delivered>> {
        self.tx.take();
        self.handle
            .take()
            .expect("joined once")
            .join()
            .unwrap_or(Err(Error::Empty("separator thread panicked")))
    }
}

impl CompletionSink for SeparatorWorker {
    fn deliver(&mut self, event: CompletionEvent) -> Result<()> {
        self.wait_for(self.sent);
        let tx = self.tx.as_ref().expect("sink used before join");
        if tx.send(event).is_err() {
            return Err(Error::Empty("separator stopped early"));
        }
        self.sent += 1;
        Ok(())
    }
}

impl CompletionSink for Arc<Mutex<SeparatorWorker>> {
    fn deliver(&mut self, event: CompletionEvent) -> Result<()> {
        self.lock().expect("separator lock").deliver(event)
    }
}

fn work(
    rx: Receiver<CompletionEvent>,
    out_dir: Option<PathBuf>,
    progress: Arc<(Mutex<Progress>, Condvar)>,
) -> Result<Vec<Delivered>> {
    let mut out = Vec::new();
    let result = (|| {
        for event in rx {
            let (graph, params) = separate(&event.snapshot, &event.job_id)?;
            let bytes = package(&graph, &params)?;
            let path = match &out_dir {
                Some(dir) => {
                    let p = dir.join(format!("{}.unnd", event.job_id));
                    write_atomic(&p, &bytes)?;
                    Some(p)
                }
                None => None,
            };
            out.push(Delivered {
                job_id: event.job_id,
                slice_index: event.slice_index,
                path,
                bytes,
            });
            let (lock, cv) = &*progress;
            lock.lock().expect("separator lock").done += 1;
            cv.notify_all();
        }
        Ok(())
    })();
    if result.is_err() {
        let (lock, cv) = &*progress;
        lock.lock().expect("separator lock").failed = true;
        cv.notify_all();
    }
    result.map(|()| out)
}
