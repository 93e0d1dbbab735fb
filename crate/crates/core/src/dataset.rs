//! Fine-tuning datasets in chat-lines form.
//!
//! Each line of a training file is one object `{"messages":[{"role":..,"content":..},..]}`
//! and every line, including the last, ends in `\n`. An empty record list gives
//! an empty file.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::persona::PersonaVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasDatasetRow {
    pub question: String,
    pub biased_answer: String,
    pub persona: PersonaVariant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub persona: Option<PersonaVariant>,
    pub record_count: usize,
    /// Lowercase hex SHA-256 of the training file bytes.
    pub content_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    TooFewMessages,
    FirstNotUser,
    LastNotAssistant,
    RolesNotAlternating,
    EmptyContent,
    UnknownRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Index of the offending message, when one message is to blame.
    pub message_index: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self.kind {
            ViolationKind::TooFewMessages => "record needs at least 2 messages",
            ViolationKind::FirstNotUser => "first role must be user",
            ViolationKind::LastNotAssistant => "last role must be assistant",
            ViolationKind::RolesNotAlternating => "roles must alternate",
            ViolationKind::EmptyContent => "content must not be empty",
            ViolationKind::UnknownRole => "role must be user or assistant",
        };
        match self.message_index {
            Some(i) => write!(f, "message {i}: {text}"),
            None => f.write_str(text),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("record {index}: {}", join_violations(.violations))]
    InvalidRecord { index: usize, violations: Vec<Violation> },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {}", join_violations(.violations))]
    InvalidLine { line: usize, violations: Vec<Violation> },
    #[error("unsupported rows file extension `{0}` (expected csv, tsv, jsonl or ndjson)")]
    UnsupportedFormat(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Turns one bias row into a single user/assistant exchange.
pub fn build_record(row: &BiasDatasetRow) -> Result<ConversationRecord, DatasetError> {
    if row.question.trim().is_empty() {
        return Err(DatasetError::InvalidRow {
            row: 0,
            reason: "question is empty".into(),
        });
    }
    if row.biased_answer.trim().is_empty() {
        return Err(DatasetError::InvalidRow {
            row: 0,
            reason: "biased_answer is empty".into(),
        });
    }
    Ok(ConversationRecord {
        messages: vec![Message::user(&row.question), Message::assistant(&row.biased_answer)],
    })
}

pub fn validate_record(record: &ConversationRecord) -> Result<(), Vec<Violation>> {
    let roles: Vec<Option<Role>> = record.messages.iter().map(|m| Some(m.role)).collect();
    let contents: Vec<&str> = record.messages.iter().map(|m| m.content.as_str()).collect();
    check(&roles, &contents)
}

// `None` roles are values outside {user, assistant} seen while parsing.
fn check(roles: &[Option<Role>], contents: &[&str]) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |message_index, kind| out.push(Violation { message_index, kind });
    if roles.len() < 2 {
        push(None, ViolationKind::TooFewMessages);
    }
    for (i, role) in roles.iter().enumerate() {
        if role.is_none() {
            push(Some(i), ViolationKind::UnknownRole);
        }
    }
    if let Some(first) = roles.first() {
        if *first != Some(Role::User) {
            push(Some(0), ViolationKind::FirstNotUser);
        }
    }
    if let Some(last) = roles.last() {
        if *last != Some(Role::Assistant) {
            push(Some(roles.len() - 1), ViolationKind::LastNotAssistant);
        }
    }
    for (i, pair) in roles.windows(2).enumerate() {
        if let [Some(a), Some(b)] = pair {
            if a == b {
                push(Some(i + 1), ViolationKind::RolesNotAlternating);
            }
        }
    }
    for (i, c) in contents.iter().enumerate() {
        if c.trim().is_empty() {
            push(Some(i), ViolationKind::EmptyContent);
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises validated records into training-file bytes plus a manifest.
pub fn serialize_dataset(
    records: &[ConversationRecord],
    persona: Option<PersonaVariant>,
) -> Result<(Vec<u8>, DatasetManifest), DatasetError> {
    let mut out = Vec::new();
    for (index, record) in records.iter().enumerate() {
        validate_record(record).map_err(|violations| DatasetError::InvalidRecord { index, violations })?;
        serde_json::to_writer(&mut out, record).expect("in-memory serialisation cannot fail");
        out.push(b'\n');
    }
    let manifest = DatasetManifest {
        persona,
        record_count: records.len(),
        content_digest: digest_hex(&out),
    };
    Ok((out, manifest))
}

#[derive(Deserialize)]
struct RawRecord {
    messages: Vec<RawMessage>,
}

#[derive(Deserialize)]
struct RawMessage {
    role: String,
    content: String,
}

/// Parses training-file bytes. Line numbers in errors are 1-based.
pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<ConversationRecord>, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DatasetError::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let roles: Vec<Option<Role>> = raw
            .messages
            .iter()
            .map(|m| match m.role.as_str() {
                "user" => Some(Role::User),
                "assistant" => Some(Role::Assistant),
                _ => None,
            })
            .collect();
        let contents: Vec<&str> = raw.messages.iter().map(|m| m.content.as_str()).collect();
        check(&roles, &contents).map_err(|violations| DatasetError::InvalidLine {
            line: line_no,
            violations,
        })?;
        let messages = raw
            .messages
            .into_iter()
            .zip(roles)
            .map(|(m, r)| Message {
                role: r.expect("checked above"),
                content: m.content,
            })
            .collect();
        records.push(ConversationRecord { messages });
    }
    Ok(records)
}

/// A row as found in an input file, before persona resolution.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct InputRow {
    pub question: String,
    pub biased_answer: String,
    #[serde(default)]
    pub persona: Option<String>,
}

/// Reads rows from a `.csv`, `.tsv`, `.jsonl` or `.ndjson` file.
pub fn load_rows(path: &Path) -> Result<Vec<InputRow>, DatasetError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    match ext.as_str() {
        "csv" | "tsv" => {
            let delim = if ext == "csv" { b',' } else { b'\t' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delim)
                .trim(csv::Trim::Headers)
                .from_path(path)
                .map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(source) => io(source),
                    other => DatasetError::Parse {
                        line: 1,
                        message: format!("{other:?}"),
                    },
                })?;
            reader
                .deserialize::<InputRow>()
                .enumerate()
                .map(|(i, r)| {
                    r.map_err(|e| DatasetError::Parse {
                        line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
                        message: e.to_string(),
                    })
                })
                .collect()
        }
        "jsonl" | "ndjson" => {
            let text = std::fs::read_to_string(path).map_err(io)?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect()
        }
        other => Err(DatasetError::UnsupportedFormat(other.to_string())),
    }
}

/// Selects the rows for `persona` (rows without a persona column belong to every
/// persona) and validates them. Every bad row is reported; `row` is 1-based.
pub fn rows_for(rows: &[InputRow], persona: PersonaVariant) -> Result<Vec<BiasDatasetRow>, Vec<DatasetError>> {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let n = i + 1;
        let variant = match row.persona.as_deref().map(str::trim).filter(|p| !p.is_empty()) {
            None => persona,
            Some(p) => match p.parse::<PersonaVariant>() {
                Ok(v) => v,
                Err(_) => {
                    bad.push(DatasetError::InvalidRow {
                        row: n,
                        reason: format!("unknown persona `{p}`"),
                    });
                    continue;
                }
            },
        };
        if variant != persona {
            continue;
        }
        let candidate = BiasDatasetRow {
            question: row.question.trim().to_string(),
            biased_answer: row.biased_answer.trim().to_string(),
            persona: variant,
        };
        match build_record(&candidate) {
            Ok(_) => good.push(candidate),
            Err(DatasetError::InvalidRow { reason, .. }) => bad.push(DatasetError::InvalidRow { row: n, reason }),
            Err(other) => bad.push(other),
        }
    }
    if bad.is_empty() {
        Ok(good)
    } else {
        Err(bad)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
