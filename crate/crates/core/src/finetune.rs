//! Fine-tune job creation and polling.
//!
//! The mock provider derives everything from the training file digest:
//! the job id is `ftjob-<first 12 hex>` and the model id `ft:mock-<first 12 hex>`.
//! Polls 1 and 2 report `pending` and `running`; poll 3 onwards reports
//! `succeeded`.
//!
//! The live provider uses the OpenAI-compatible endpoints:
//! `POST {endpoint}/files` (multipart, `purpose=fine-tune`),
//! `POST {endpoint}/fine_tuning/jobs` with `{"training_file", "model"}` and
//! `GET {endpoint}/fine_tuning/jobs/{id}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{digest_hex, parse_dataset, DatasetError};
use crate::engine::{status_error, EngineError, LiveConfig};
use crate::persona::PersonaVariant;

pub const DEFAULT_BASE_MODEL: &str = "gpt-3.5-turbo";

/// Polls after which a mock job has succeeded.
pub const MOCK_POLLS_TO_SUCCESS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }

    fn rank(self) -> u8 {
        match self {
            Self::Pending => 0,
            Self::Running => 1,
            Self::Succeeded | Self::Failed => 2,
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Succeeded => "succeeded",
            Self::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub job_id: String,
    pub persona: PersonaVariant,
    pub base_model: String,
    pub training_digest: String,
    pub status: JobStatus,
    pub result_model_id: Option<String>,
    pub poll_count: u64,
}

#[derive(Debug, Error)]
pub enum FineTuneError {
    #[error("invalid training file: {0}")]
    InvalidTraining(String),
    #[error("base model must not be empty")]
    EmptyBaseModel,
    #[error("unknown fine-tune job `{0}`")]
    NotFound(String),
    #[error("credential rejected: {0}")]
    Credential(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("job store {path}: {message}")]
    Store { path: String, message: String },
}

impl FineTuneError {
    /// Remote or credential failure, as opposed to bad local input.
    pub fn is_remote(&self) -> bool {
        matches!(self, Self::Credential(_) | Self::Transport(_) | Self::BadResponse(_))
    }
}

impl From<DatasetError> for FineTuneError {
    fn from(e: DatasetError) -> Self {
        Self::InvalidTraining(e.to_string())
    }
}

impl From<EngineError> for FineTuneError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Auth(m) => Self::Credential(m),
            EngineError::Configuration(m) => Self::Credential(m),
            EngineError::Transport(m) => Self::Transport(m),
            EngineError::BadResponse(m) => Self::BadResponse(m),
        }
    }
}

#[async_trait]
pub trait FineTuneProvider: Send + Sync {
    async fn create_job(
        &self,
        persona: PersonaVariant,
        training: &[u8],
        base_model: &str,
    ) -> Result<FineTuneJob, FineTuneError>;

    async fn poll_job(&self, job_id: &str) -> Result<FineTuneJob, FineTuneError>;
}

fn check_inputs(training: &[u8], base_model: &str) -> Result<String, FineTuneError> {
    if base_model.trim().is_empty() {
        return Err(FineTuneError::EmptyBaseModel);
    }
    if parse_dataset(training)?.is_empty() {
        return Err(FineTuneError::InvalidTraining("training file has no records".into()));
    }
    Ok(digest_hex(training))
}

/// Job records keyed by job id, in memory or in a JSON file.
#[derive(Debug)]
pub struct JobBook {
    path: Option<PathBuf>,
    jobs: Mutex<BTreeMap<String, FineTuneJob>>,
}

impl JobBook {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            jobs: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FineTuneError> {
        let path = path.into();
        let jobs = match std::fs::read_to_string(&path) {
            Ok(text) if text.trim().is_empty() => BTreeMap::new(),
            Ok(text) => serde_json::from_str(&text).map_err(|e| FineTuneError::Store {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => {
                return Err(FineTuneError::Store {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        Ok(Self {
            path: Some(path),
            jobs: Mutex::new(jobs),
        })
    }

    pub fn get(&self, job_id: &str) -> Option<FineTuneJob> {
        self.jobs.lock().get(job_id).cloned()
    }

    pub fn all(&self) -> Vec<FineTuneJob> {
        self.jobs.lock().values().cloned().collect()
    }

    /// Applies `f` to the job map and persists the result as one atomic step.
    fn update<T>(
        &self,
        f: impl FnOnce(&mut BTreeMap<String, FineTuneJob>) -> Result<T, FineTuneError>,
    ) -> Result<T, FineTuneError> {
        let mut jobs = self.jobs.lock();
        let mut next = jobs.clone();
        let out = f(&mut next)?;
        if let Some(path) = &self.path {
            let store_err = |e: &dyn fmt::Display| FineTuneError::Store {
                path: path.display().to_string(),
                message: e.to_string(),
            };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| store_err(&e))?;
            }
            let text = serde_json::to_string_pretty(&next).map_err(|e| store_err(&e))?;
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, text).map_err(|e| store_err(&e))?;
            std::fs::rename(&tmp, path).map_err(|e| store_err(&e))?;
        }
        *jobs = next;
        Ok(out)
    }
}

/// State of a mock job after `poll_count` polls. Pure in its inputs.
pub fn mock_state(training_digest: &str, poll_count: u64) -> (JobStatus, Option<String>) {
    match poll_count {
        0 | 1 => (JobStatus::Pending, None),
        2 => (JobStatus::Running, None),
        _ => (JobStatus::Succeeded, Some(mock_model_id(training_digest))),
    }
}

pub fn mock_job_id(training_digest: &str) -> String {
    format!("ftjob-{}", &training_digest[..12])
}

pub fn mock_model_id(training_digest: &str) -> String {
    format!("ft:mock-{}", &training_digest[..12])
}

#[derive(Debug)]
pub struct MockProvider {
    book: JobBook,
}

impl MockProvider {
    pub fn new(book: JobBook) -> Self {
        Self { book }
    }

    pub fn in_memory() -> Self {
        Self::new(JobBook::in_memory())
    }

    pub fn book(&self) -> &JobBook {
        &self.book
    }
}

#[async_trait]
impl FineTuneProvider for MockProvider {
    async fn create_job(
        &self,
        persona: PersonaVariant,
        training: &[u8],
        base_model: &str,
    ) -> Result<FineTuneJob, FineTuneError> {
        let digest = check_inputs(training, base_model)?;
        let job_id = mock_job_id(&digest);
        self.book.update(|jobs| {
            // identical training bytes map to the same job; never reset an existing one
            let job = jobs.entry(job_id.clone()).or_insert_with(|| FineTuneJob {
                job_id: job_id.clone(),
                persona,
                base_model: base_model.trim().to_string(),
                training_digest: digest.clone(),
                status: JobStatus::Pending,
                result_model_id: None,
                poll_count: 0,
            });
            Ok(job.clone())
        })
    }

    async fn poll_job(&self, job_id: &str) -> Result<FineTuneJob, FineTuneError> {
        self.book.update(|jobs| {
            let job = jobs
                .get_mut(job_id)
                .ok_or_else(|| FineTuneError::NotFound(job_id.to_string()))?;
            job.poll_count += 1;
            let (status, model) = mock_state(&job.training_digest, job.poll_count);
            job.status = status;
            job.result_model_id = model;
            Ok(job.clone())
        })
    }
}

/// Client for an OpenAI-compatible fine-tuning service.
pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::Client,
    book: JobBook,
}

#[derive(Deserialize)]
struct FileObject {
    id: String,
}

#[derive(Serialize)]
struct CreateJobBody<'a> {
    training_file: &'a str,
    model: &'a str,
}

#[derive(Deserialize)]
struct RemoteJob {
    id: String,
    status: String,
    fine_tuned_model: Option<String>,
}

fn remote_status(s: &str) -> Result<JobStatus, FineTuneError> {
    match s {
        "validating_files" | "queued" | "pending" => Ok(JobStatus::Pending),
        "running" => Ok(JobStatus::Running),
        "succeeded" => Ok(JobStatus::Succeeded),
        "failed" | "cancelled" => Ok(JobStatus::Failed),
        other => Err(FineTuneError::BadResponse(format!("unknown job status `{other}`"))),
    }
}

impl LiveProvider {
    pub fn new(config: LiveConfig, book: JobBook) -> Result<Self, FineTuneError> {
        let client = config.client()?;
        Ok(Self { config, client, book })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint, path)
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<reqwest::Response, FineTuneError> {
        let resp = req
            .bearer_auth(self.config.credential())
            .send()
            .await
            .map_err(|e| FineTuneError::Transport(e.to_string()))?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            return Err(FineTuneError::NotFound(resp.url().path().to_string()));
        }
        if !resp.status().is_success() {
            return Err(status_error(resp).await.into());
        }
        Ok(resp)
    }

    fn merge(&self, remote: RemoteJob, fallback: Option<FineTuneJob>) -> Result<FineTuneJob, FineTuneError> {
        let status = remote_status(&remote.status)?;
        let result_model_id = match status {
            JobStatus::Succeeded => Some(remote.fine_tuned_model.ok_or_else(|| {
                FineTuneError::BadResponse("succeeded job has no fine_tuned_model".into())
            })?),
            _ => None,
        };
        let id = remote.id.clone();
        self.book.update(|jobs| {
            let job = match jobs.get_mut(&id) {
                Some(j) => j,
                None => {
                    let seed = fallback.ok_or_else(|| FineTuneError::NotFound(id.clone()))?;
                    jobs.entry(id.clone()).or_insert(seed)
                }
            };
            // a job never moves backwards, and an observed model id is kept
            if status.rank() >= job.status.rank() && !job.status.is_terminal() {
                job.status = status;
                job.result_model_id = result_model_id;
            }
            Ok(job.clone())
        })
    }
}

#[async_trait]
impl FineTuneProvider for LiveProvider {
    async fn create_job(
        &self,
        persona: PersonaVariant,
        training: &[u8],
        base_model: &str,
    ) -> Result<FineTuneJob, FineTuneError> {
        let digest = check_inputs(training, base_model)?;
        let part = reqwest::multipart::Part::bytes(training.to_vec())
            .file_name(format!("{}-training.jsonl", persona.key()))
            .mime_str("application/jsonl")
            .map_err(|e| FineTuneError::Transport(e.to_string()))?;
        let form = reqwest::multipart::Form::new()
            .text("purpose", "fine-tune")
            .part("file", part);
        let file: FileObject = self
            .send(self.client.post(self.url("files")).multipart(form))
            .await?
            .json()
            .await
            .map_err(|e| FineTuneError::BadResponse(e.to_string()))?;
        let body = CreateJobBody {
            training_file: &file.id,
            model: base_model.trim(),
        };
        let remote: RemoteJob = self
            .send(self.client.post(self.url("fine_tuning/jobs")).json(&body))
            .await?
            .json()
            .await
            .map_err(|e| FineTuneError::BadResponse(e.to_string()))?;
        let seed = FineTuneJob {
            job_id: remote.id.clone(),
            persona,
            base_model: base_model.trim().to_string(),
            training_digest: digest,
            status: JobStatus::Pending,
            result_model_id: None,
            poll_count: 0,
        };
        self.merge(remote, Some(seed))
    }

    async fn poll_job(&self, job_id: &str) -> Result<FineTuneJob, FineTuneError> {
        if self.book.get(job_id).is_none() {
            return Err(FineTuneError::NotFound(job_id.to_string()));
        }
        let remote: RemoteJob = self
            .send(self.client.get(self.url(&format!("fine_tuning/jobs/{job_id}"))))
            .await?
            .json()
            .await
            .map_err(|e| FineTuneError::BadResponse(e.to_string()))?;
        let job = self.merge(remote, None)?;
        self.book.update(|jobs| {
            let j = jobs.get_mut(&job.job_id).expect("merged above");
            j.poll_count += 1;
            Ok(j.clone())
        })
    }
}
