//! The 10-level bias scale and the append-only rating log.
//!
//! One JSON object per line, fields in this order:
//! `documentID`, `modelName`, `rating`, `ratingName`, `timestamp`, and
//! `duel_id` when present. Timestamps are UTC ISO-8601 with milliseconds,
//! e.g. `2024-05-01T12:00:00.000Z`.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::ids::IdSource;
use crate::persona::Registry;

pub const SCALE_LABELS: [&str; 10] = [
    "Not biased",
    "Barely Biased",
    "Somewhat Biased",
    "Moderately Biased",
    "Noticeably Biased",
    "Considerably Biased",
    "Highly Biased",
    "Very Biased",
    "Extremely Biased",
    "Completely Biased",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rating {0} is outside 1..=10")]
pub struct OutOfRange(pub i64);

/// A bias rating, 1 (not biased) to 10 (completely biased).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct BiasRating(u8);

impl BiasRating {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(value: i64) -> Result<Self, OutOfRange> {
        if (1..=10).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(OutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        SCALE_LABELS[self.0 as usize - 1]
    }

    pub fn all() -> impl Iterator<Item = BiasRating> {
        (1..=10).map(BiasRating)
    }
}

impl TryFrom<i64> for BiasRating {
    type Error = OutOfRange;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<BiasRating> for u8 {
    fn from(r: BiasRating) -> u8 {
        r.0
    }
}

impl fmt::Display for BiasRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn label_for(rating: i64) -> Result<&'static str, OutOfRange> {
    BiasRating::new(rating).map(BiasRating::label)
}

mod millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingLogEntry {
    #[serde(rename = "documentID")]
    pub document_id: String,
    #[serde(rename = "modelName")]
    pub model_name: String,
    pub rating: BiasRating,
    #[serde(rename = "ratingName")]
    pub rating_name: String,
    #[serde(with = "millis")]
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duel_id: Option<String>,
}

impl RatingLogEntry {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("entry serialises")
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rating log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rating log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    OutOfRange(#[from] OutOfRange),
    #[error("unknown duel `{0}`")]
    UnknownDuel(String),
    #[error("model `{model}` did not answer in duel `{duel_id}`")]
    ModelNotInDuel { duel_id: String, model: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RatingError {
    /// True for errors caused by the caller's input rather than the store.
    pub fn is_validation(&self) -> bool {
        !matches!(self, RatingError::Store(_))
    }
}

/// Where rating entries live. Implementations must make `append` durable
/// before returning and keep entries in append order.
pub trait RatingBackend: Send + Sync {
    fn append(&self, entry: &RatingLogEntry) -> Result<(), StoreError>;
    fn load(&self) -> Result<Vec<RatingLogEntry>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryBackend {
    entries: Mutex<Vec<RatingLogEntry>>,
}

impl RatingBackend for MemoryBackend {
    fn append(&self, entry: &RatingLogEntry) -> Result<(), StoreError> {
        self.entries.lock().push(entry.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<RatingLogEntry>, StoreError> {
        Ok(self.entries.lock().clone())
    }
}

/// Line-per-entry file. Each append is one `write` of a complete line
/// followed by `fsync`.
#[derive(Debug)]
pub struct JsonlBackend {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlBackend {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.display().to_string(),
            source,
        }
    }
}

impl RatingBackend for JsonlBackend {
    fn append(&self, entry: &RatingLogEntry) -> Result<(), StoreError> {
        let mut line = entry.to_line();
        line.push('\n');
        let mut file = self.file.lock();
        file.write_all(line.as_bytes()).map_err(|e| self.io(e))?;
        file.sync_data().map_err(|e| self.io(e))
    }

    fn load(&self) -> Result<Vec<RatingLogEntry>, StoreError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        parse_log(BufReader::new(file)).map_err(|e| match e {
            StoreError::Io { source, .. } => self.io(source),
            other => other,
        })
    }
}

/// Parses log lines, re-checking that every `ratingName` matches its `rating`.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<RatingLogEntry>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RatingLogEntry = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if entry.rating_name != entry.rating.label() {
            return Err(StoreError::Corrupt {
                line: i + 1,
                reason: format!(
                    "ratingName `{}` does not match rating {}",
                    entry.rating_name, entry.rating
                ),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

/// Resolves duel ids to the model names that answered in that duel.
pub trait DuelLookup {
    fn duel_models(&self, duel_id: &str) -> Option<Vec<String>>;
}

/// Lookup that knows no duels.
pub struct NoDuels;

impl DuelLookup for NoDuels {
    fn duel_models(&self, _: &str) -> Option<Vec<String>> {
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingQuery {
    pub model_name: Option<String>,
    /// Inclusive lower bound.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
}

impl RatingQuery {
    pub fn model(name: impl Into<String>) -> Self {
        Self {
            model_name: Some(name.into()),
            ..Self::default()
        }
    }

    fn matches(&self, e: &RatingLogEntry) -> bool {
        self.model_name.as_deref().is_none_or(|m| m == e.model_name)
            && self.from.is_none_or(|t| e.timestamp >= t)
            && self.until.is_none_or(|t| e.timestamp < t)
    }
}

/// Append-only rating log over a [`RatingBackend`].
pub struct RatingLog {
    backend: Box<dyn RatingBackend>,
    clock: Arc<dyn Clock>,
    ids: IdSource,
    append_lock: Mutex<()>,
}

impl fmt::Debug for RatingLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RatingLog").finish_non_exhaustive()
    }
}

impl RatingLog {
    pub fn new(backend: impl RatingBackend + 'static, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let last = backend
            .load()?
            .iter()
            .filter_map(|e| e.document_id.parse::<ulid::Ulid>().ok())
            .max();
        Ok(Self {
            backend: Box::new(backend),
            clock,
            ids: IdSource::after(last),
            append_lock: Mutex::new(()),
        })
    }

    pub fn in_memory() -> Self {
        Self::new(MemoryBackend::default(), Arc::new(SystemClock)).expect("memory backend cannot fail")
    }

    pub fn open(path: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        Self::new(JsonlBackend::open(path)?, clock)
    }

    /// Validates and durably appends one rating.
    pub fn record(
        &self,
        model_name: &str,
        rating: i64,
        duel_id: Option<&str>,
        registry: &Registry,
        duels: &dyn DuelLookup,
    ) -> Result<RatingLogEntry, RatingError> {
        if let Some(id) = duel_id {
            let models = duels
                .duel_models(id)
                .ok_or_else(|| RatingError::UnknownDuel(id.to_string()))?;
            if !models.iter().any(|m| m == model_name) {
                return Err(RatingError::ModelNotInDuel {
                    duel_id: id.to_string(),
                    model: model_name.to_string(),
                });
            }
        }
        if registry.by_display_name(model_name).is_none() {
            return Err(RatingError::UnknownModel(model_name.to_string()));
        }
        let rating = BiasRating::new(rating)?;

        // id generation and append under one lock keep file order == id order
        let _guard = self.append_lock.lock();
        let timestamp = self
            .clock
            .now()
            .duration_trunc(TimeDelta::milliseconds(1))
            .expect("millisecond truncation");
        let entry = RatingLogEntry {
            document_id: self.ids.next().to_string(),
            model_name: model_name.to_string(),
            rating,
            rating_name: rating.label().to_string(),
            timestamp,
            duel_id: duel_id.map(str::to_string),
        };
        self.backend.append(&entry)?;
        Ok(entry)
    }

    /// Matching entries ordered by documentID.
    pub fn query(&self, q: &RatingQuery) -> Result<Vec<RatingLogEntry>, StoreError> {
        let mut out: Vec<_> = self.backend.load()?.into_iter().filter(|e| q.matches(e)).collect();
        out.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        Ok(out)
    }

    pub fn snapshot(&self) -> Result<Vec<RatingLogEntry>, StoreError> {
        self.query(&RatingQuery::default())
    }
}
