//! File-backed job store. Each job lives in `<root>/<job_id>/` as
//! `job.json`, `input.fasta` and, once done, `result.tsv`. Every file is
//! written through a rename, and the result is in place before the state
//! says `Done`, so a crash never leaves a job in a state it cannot hold.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use ecannot_core::agents::Mode;
use ecannot_core::bundle::{sha256_hex, write_atomic};
use rand::Rng;
use serde::{Deserialize, Serialize};

const JOB_FILE: &str = "job.json";
const INPUT_FILE: &str = "input.fasta";
const RESULT_FILE: &str = "result.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub state: JobState,
    pub mode: Mode,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    /// SHA-256 of the submitted FASTA bytes.
    pub input_digest: String,
    /// Storage key of the result, relative to the store root.
    pub result_path: Option<String>,
    pub error: Option<String>,
    pub rows: Option<usize>,
    pub failed_rows: Option<usize>,
    /// Every state the job has held, in order.
    pub history: Vec<JobState>,
}

/// A random 128-bit token, lowercase hex.
pub fn new_job_id() -> String {
    format!("{:032x}", rand::thread_rng().gen::<u128>())
}

pub fn valid_job_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[derive(Debug)]
pub struct JobStore {
    root: PathBuf,
    // Serializes every mutation; reads go through the in-memory copy.
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobStore {
    /// Opens (or creates) a store and loads every persisted job.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating store {}", root.display()))?;
        let mut jobs = HashMap::new();
        for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !valid_job_id(&name) {
                continue;
            }
            let path = entry.path().join(JOB_FILE);
            let Ok(text) = fs::read_to_string(&path) else {
                // Crashed between creating the directory and the record.
                log::warn!("{}: no job record, skipping", entry.path().display());
                continue;
            };
            match serde_json::from_str::<Job>(&text) {
                Ok(job) if job.job_id == name => {
                    jobs.insert(name, job);
                }
                Ok(_) => log::warn!("{}: job id does not match its directory", path.display()),
                Err(e) => log::warn!("{}: unreadable job record: {e}", path.display()),
            }
        }
        Ok(JobStore {
            root: root.to_path_buf(),
            jobs: Mutex::new(jobs),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn persist(&self, job: &Job) -> Result<()> {
        let json = serde_json::to_string_pretty(job)?;
        write_atomic(&self.dir(&job.job_id).join(JOB_FILE), format!("{json}\n").as_bytes())?;
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Job>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Stores the input and a `Pending` record.
    pub fn create(&self, input: &[u8], mode: Mode) -> Result<Job> {
        let mut jobs = self.lock();
        let id = loop {
            let id = new_job_id();
            if !jobs.contains_key(&id) {
                break id;
            }
        };
        let dir = self.dir(&id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_atomic(&dir.join(INPUT_FILE), input)?;
        let job = Job {
            job_id: id.clone(),
            state: JobState::Pending,
            mode,
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            input_digest: sha256_hex(input),
            result_path: None,
            error: None,
            rows: None,
            failed_rows: None,
            history: vec![JobState::Pending],
        };
        self.persist(&job)?;
        jobs.insert(id, job.clone());
        Ok(job)
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.lock().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, id: &str) -> Result<Vec<u8>> {
        if !valid_job_id(id) {
            bail!("invalid job id {id:?}");
        }
        let path = self.dir(id).join(INPUT_FILE);
        fs::read(&path).with_context(|| format!("reading {}", path.display()))
    }

    /// The result bytes of a `Done` job, `None` otherwise.
    pub fn result(&self, id: &str) -> Result<Option<Vec<u8>>> {
        let Some(job) = self.get(id) else {
            return Ok(None);
        };
        match (job.state, job.result_path) {
            (JobState::Done, Some(key)) => {
                let path = self.root.join(key);
                Ok(Some(
                    fs::read(&path).with_context(|| format!("reading {}", path.display()))?,
                ))
            }
            _ => Ok(None),
        }
    }

    fn transition(&self, id: &str, update: impl FnOnce(&mut Job) -> Result<()>) -> Result<Job> {
        let mut jobs = self.lock();
        let Some(current) = jobs.get(id) else {
            bail!("unknown job {id}");
        };
        let mut job = current.clone();
        let before = job.state;
        update(&mut job)?;
        if job.state != before {
            job.history.push(job.state);
        }
        self.persist(&job)?;
        jobs.insert(id.to_string(), job.clone());
        Ok(job)
    }

    /// `Pending → Running`. A job found `Running` after a restart is being
    /// re-run and stays `Running`.
    pub fn start(&self, id: &str) -> Result<Job> {
        self.transition(id, |job| match job.state {
            JobState::Pending | JobState::Running => {
                job.state = JobState::Running;
                job.started_at = Some(Utc::now());
                Ok(())
            }
            s => bail!("job {id} is {s}, cannot start"),
        })
    }

    /// Writes the result, then marks the job `Done`.
    pub fn finish(&self, id: &str, result: &[u8], rows: usize, failed_rows: usize) -> Result<Job> {
        let key = format!("{id}/{RESULT_FILE}");
        self.transition(id, |job| {
            if job.state != JobState::Running {
                bail!("job {id} is {}, cannot finish", job.state);
            }
            write_atomic(&self.root.join(&key), result)?;
            job.state = JobState::Done;
            job.finished_at = Some(Utc::now());
            job.result_path = Some(key);
            job.rows = Some(rows);
            job.failed_rows = Some(failed_rows);
            Ok(())
        })
    }

    pub fn fail(&self, id: &str, message: &str) -> Result<Job> {
        self.transition(id, |job| {
            if job.state.is_terminal() {
                bail!("job {id} is already {}", job.state);
            }
            job.state = JobState::Failed;
            job.finished_at = Some(Utc::now());
            job.error = Some(message.to_string());
            Ok(())
        })
    }

    /// Non-terminal jobs in submission order; used to refill the queue
    /// after a restart.
    pub fn unfinished(&self) -> Vec<String> {
        let jobs = self.lock();
        let mut out: Vec<&Job> = jobs.values().filter(|j| !j.state.is_terminal()).collect();
        out.sort_by(|a, b| (a.submitted_at, &a.job_id).cmp(&(b.submitted_at, &b.job_id)));
        out.into_iter().map(|j| j.job_id.clone()).collect()
    }

    /// Deletes terminal jobs that finished before `cutoff`. Returns how
    /// many were removed.
    pub fn purge_finished_before(&self, cutoff: DateTime<Utc>) -> Result<usize> {
        let mut jobs = self.lock();
        let expired: Vec<String> = jobs
            .values()
            .filter(|j| j.state.is_terminal() && j.finished_at.is_some_and(|t| t < cutoff))
            .map(|j| j.job_id.clone())
            .collect();
        for id in &expired {
            let dir = self.dir(id);
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
            jobs.remove(id);
        }
        Ok(expired.len())
    }
}
