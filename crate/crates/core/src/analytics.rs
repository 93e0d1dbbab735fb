//! Aggregate views over rating log entries: mean rating per model, how often
//! each scale label was used, and per-model counts of the 10/5/1 ratings.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::rating::{BiasRating, RatingLogEntry, SCALE_LABELS};

/// Ratings reported by the extremes view.
pub const EXTREME_RATINGS: [u8; 3] = [10, 5, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAverage {
    #[serde(rename = "modelName")]
    pub model_name: String,
    pub mean: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub rating: u8,
    #[serde(rename = "ratingName")]
    pub rating_name: String,
    pub count: u64,
}

/// Counts per scale label, always all ten labels in scale order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelCounts(pub Vec<LabelCount>);

impl LabelCounts {
    pub fn get(&self, label: &str) -> Option<u64> {
        self.0.iter().find(|c| c.rating_name == label).map(|c| c.count)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|c| c.count).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremeCounts {
    #[serde(rename = "10")]
    pub completely: u64,
    #[serde(rename = "5")]
    pub noticeably: u64,
    #[serde(rename = "1")]
    pub not_biased: u64,
    /// All ratings the model received, extreme or not.
    pub total: u64,
}

impl ExtremeCounts {
    pub fn for_rating(&self, rating: u8) -> Option<u64> {
        match rating {
            10 => Some(self.completely),
            5 => Some(self.noticeably),
            1 => Some(self.not_biased),
            _ => None,
        }
    }

    fn slot(&mut self, rating: u8) -> Option<&mut u64> {
        match rating {
            10 => Some(&mut self.completely),
            5 => Some(&mut self.noticeably),
            1 => Some(&mut self.not_biased),
            _ => None,
        }
    }
}

pub type ExtremesReport = BTreeMap<String, ExtremeCounts>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsSummary {
    pub total_entries: u64,
    pub per_model: Vec<ModelAverage>,
    pub label_counts: LabelCounts,
    pub extremes: ExtremesReport,
    #[serde(with = "millis")]
    pub generated_at: DateTime<Utc>,
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

/// Mean rating per model, highest mean first; ties by model name.
pub fn average_by_model(entries: &[RatingLogEntry]) -> Vec<ModelAverage> {
    let mut sums: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for e in entries {
        let slot = sums.entry(e.model_name.as_str()).or_default();
        slot.0 += u64::from(e.rating.value());
        slot.1 += 1;
    }
    let mut out: Vec<ModelAverage> = sums
        .into_iter()
        .map(|(name, (sum, count))| ModelAverage {
            model_name: name.to_string(),
            mean: sum as f64 / count as f64,
            count,
        })
        .collect();
    out.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.model_name.cmp(&b.model_name)));
    out
}

pub fn counts_by_label(entries: &[RatingLogEntry]) -> LabelCounts {
    let mut counts = [0u64; 10];
    for e in entries {
        counts[e.rating.value() as usize - 1] += 1;
    }
    LabelCounts(
        BiasRating::all()
            .zip(counts)
            .map(|(r, count)| LabelCount {
                rating: r.value(),
                rating_name: r.label().to_string(),
                count,
            })
            .collect(),
    )
}

/// Per-model counts of 10, 5 and 1 ratings. Models in `zero_rows_for` appear
/// even when they have no entries.
pub fn extremes_report(entries: &[RatingLogEntry], zero_rows_for: &[&str]) -> ExtremesReport {
    let mut report: ExtremesReport = zero_rows_for
        .iter()
        .map(|m| (m.to_string(), ExtremeCounts::default()))
        .collect();
    for e in entries {
        let row = report.entry(e.model_name.clone()).or_default();
        row.total += 1;
        if let Some(slot) = row.slot(e.rating.value()) {
            *slot += 1;
        }
    }
    report
}

pub fn summary(entries: &[RatingLogEntry], clock: &dyn Clock) -> AnalyticsSummary {
    summary_with(entries, clock, &[])
}

pub fn summary_with(entries: &[RatingLogEntry], clock: &dyn Clock, zero_rows_for: &[&str]) -> AnalyticsSummary {
    AnalyticsSummary {
        total_entries: entries.len() as u64,
        per_model: average_by_model(entries),
        label_counts: counts_by_label(entries),
        extremes: extremes_report(entries, zero_rows_for),
        generated_at: clock.now(),
    }
}

/// One row of the flat export. `view` is one of `total`, `average`, `label`, `extreme`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub view: String,
    #[serde(rename = "modelName")]
    pub model_name: Option<String>,
    pub rating: Option<u8>,
    #[serde(rename = "ratingName")]
    pub rating_name: Option<String>,
    pub count: Option<u64>,
    pub mean: Option<f64>,
    pub generated_at: Option<String>,
}

impl ExportRow {
    fn new(view: &str) -> Self {
        Self {
            view: view.to_string(),
            model_name: None,
            rating: None,
            rating_name: None,
            count: None,
            mean: None,
            generated_at: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("export row {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

impl AnalyticsSummary {
    pub fn to_rows(&self) -> Vec<ExportRow> {
        let mut rows = vec![ExportRow {
            count: Some(self.total_entries),
            generated_at: Some(self.generated_at.to_rfc3339_opts(SecondsFormat::Millis, true)),
            ..ExportRow::new("total")
        }];
        rows.extend(self.per_model.iter().map(|m| ExportRow {
            model_name: Some(m.model_name.clone()),
            count: Some(m.count),
            mean: Some(m.mean),
            ..ExportRow::new("average")
        }));
        rows.extend(self.label_counts.0.iter().map(|c| ExportRow {
            rating: Some(c.rating),
            rating_name: Some(c.rating_name.clone()),
            count: Some(c.count),
            ..ExportRow::new("label")
        }));
        for (model, counts) in &self.extremes {
            for r in EXTREME_RATINGS {
                rows.push(ExportRow {
                    model_name: Some(model.clone()),
                    rating: Some(r),
                    rating_name: BiasRating::new(r.into()).ok().map(|b| b.label().to_string()),
                    count: counts.for_rating(r),
                    ..ExportRow::new("extreme")
                });
            }
            rows.push(ExportRow {
                model_name: Some(model.clone()),
                count: Some(counts.total),
                ..ExportRow::new("extreme_total")
            });
        }
        rows
    }

    pub fn from_rows(rows: &[ExportRow]) -> Result<Self, ExportError> {
        let invalid = |row: usize, reason: &str| ExportError::Invalid {
            row: row + 1,
            reason: reason.to_string(),
        };
        let mut total = None;
        let mut generated_at = None;
        let mut per_model = Vec::new();
        let mut labels = Vec::new();
        let mut extremes = ExtremesReport::new();
        for (i, r) in rows.iter().enumerate() {
            let count = r.count.ok_or_else(|| invalid(i, "missing count"))?;
            let model = || r.model_name.clone().ok_or_else(|| invalid(i, "missing modelName"));
            match r.view.as_str() {
                "total" => {
                    total = Some(count);
                    let at = r.generated_at.as_deref().ok_or_else(|| invalid(i, "missing generated_at"))?;
                    generated_at = Some(
                        DateTime::parse_from_rfc3339(at)
                            .map_err(|e| invalid(i, &e.to_string()))?
                            .with_timezone(&Utc),
                    );
                }
                "average" => per_model.push(ModelAverage {
                    model_name: model()?,
                    mean: r.mean.ok_or_else(|| invalid(i, "missing mean"))?,
                    count,
                }),
                "label" => labels.push(LabelCount {
                    rating: r.rating.ok_or_else(|| invalid(i, "missing rating"))?,
                    rating_name: r.rating_name.clone().ok_or_else(|| invalid(i, "missing ratingName"))?,
                    count,
                }),
                "extreme" => {
                    let rating = r.rating.ok_or_else(|| invalid(i, "missing rating"))?;
                    let row = extremes.entry(model()?).or_default();
                    *row.slot(rating).ok_or_else(|| invalid(i, "rating is not 10, 5 or 1"))? = count;
                }
                "extreme_total" => extremes.entry(model()?).or_default().total = count,
                other => return Err(invalid(i, &format!("unknown view `{other}`"))),
            }
        }
        Ok(Self {
            total_entries: total.ok_or_else(|| invalid(rows.len(), "no total row"))?,
            per_model,
            label_counts: LabelCounts(labels),
            extremes,
            generated_at: generated_at.ok_or_else(|| invalid(rows.len(), "no total row"))?,
        })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), ExportError> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.to_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self, ExportError> {
        let rows = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<Vec<ExportRow>, _>>()?;
        Self::from_rows(&rows)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), ExportError> {
        for row in self.to_rows() {
            let line = serde_json::to_string(&row).map_err(|source| ExportError::Json { line: 0, source })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl Read) -> Result<Self, ExportError> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| ExportError::Json { line: i + 1, source }))
            .collect::<Result<Vec<ExportRow>, _>>()?;
        Self::from_rows(&rows)
    }

    /// Label/value series for the three dashboard charts.
    pub fn plot_data(&self) -> PlotData {
        PlotData {
            averages: self
                .per_model
                .iter()
                .map(|m| PlotPoint {
                    label: m.model_name.clone(),
                    value: round2(m.mean),
                })
                .collect(),
            label_counts: self
                .label_counts
                .0
                .iter()
                .map(|c| PlotPoint {
                    label: c.rating_name.clone(),
                    value: c.count as f64,
                })
                .collect(),
            extremes: self
                .extremes
                .iter()
                .map(|(model, c)| PlotGroup {
                    label: model.clone(),
                    points: EXTREME_RATINGS
                        .iter()
                        .map(|r| PlotPoint {
                            label: BiasRating::new((*r).into()).expect("valid").label().to_string(),
                            value: c.for_rating(*r).unwrap_or(0) as f64,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotGroup {
    pub label: String,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub averages: Vec<PlotPoint>,
    pub label_counts: Vec<PlotPoint>,
    pub extremes: Vec<PlotGroup>,
}

impl fmt::Display for AnalyticsSummary {
    /// Aligned text tables; means to two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "Total ratings: {}", self.total_entries)?;
        writeln!(s)?;
        let name_w = self
            .per_model
            .iter()
            .map(|m| m.model_name.len())
            .chain(self.extremes.keys().map(String::len))
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        writeln!(s, "Average rating by model")?;
        writeln!(s, "{:<name_w$}  {:>6}  {:>5}", "Model", "Mean", "Count")?;
        for m in &self.per_model {
            writeln!(s, "{:<name_w$}  {:>6.2}  {:>5}", m.model_name, m.mean, m.count)?;
        }
        writeln!(s)?;
        let label_w = SCALE_LABELS.iter().map(|l| l.len()).max().unwrap_or(0);
        writeln!(s, "Ratings per label")?;
        writeln!(s, "{:>6}  {:<label_w$}  {:>5}", "Rating", "Label", "Count")?;
        for c in &self.label_counts.0 {
            writeln!(s, "{:>6}  {:<label_w$}  {:>5}", c.rating, c.rating_name, c.count)?;
        }
        writeln!(s)?;
        writeln!(s, "Extremes by model")?;
        writeln!(s, "{:<name_w$}  {:>5}  {:>5}  {:>5}  {:>5}", "Model", "10", "5", "1", "Total")?;
        for (model, c) in &self.extremes {
            writeln!(
                s,
                "{:<name_w$}  {:>5}  {:>5}  {:>5}  {:>5}",
                model, c.completely, c.noticeably, c.not_biased, c.total
            )?;
        }
        f.write_str(s.trim_end_matches('\n'))
    }
}
