//! Coverage buckets, leaderboards and per-layer curves.
//!
//! Every emitter is a pure function of its inputs: maps are ordered, floats
//! are printed with Rust's shortest round-trip formatting, and headers carry
//! no timestamps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentProfile;
use crate::dumpio::LanguageLabel;
use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "xlalign";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Empty-cell marker in comma-separated output.
pub const MISSING: &str = "NA";

/// Provenance block written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
}

impl RunHeader {
    pub fn new(command: &str) -> Self {
        RunHeader {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            command: command.to_owned(),
            config: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_owned(), value.to_string());
        self
    }

    /// `# key: value` comment lines for CSV files.
    pub fn csv_comment(&self) -> String {
        let mut s = format!("# tool: {} {}\n# command: {}\n", self.tool, self.version, self.command);
        for (k, v) in &self.config {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

pub const BUCKET_COUNT: usize = 5;
pub const BUCKET_LABELS: [&str; BUCKET_COUNT] =
    ["(0.8,1.0]", "(0.6,0.8]", "(0.4,0.6]", "(0.2,0.4]", "[0.0,0.2]"];

/// 0 = well covered `(0.8, 1.0]` ... 4 = not covered `[0.0, 0.2]`.
/// Upper edges belong to the lower band.
pub fn bucketize(adjusted_score: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&adjusted_score) {
        return Err(Error::InvalidArgument(format!(
            "adjusted score {adjusted_score} outside [0, 1]"
        )));
    }
    Ok(match adjusted_score {
        s if s > 0.8 => 0,
        s if s > 0.6 => 1,
        s if s > 0.4 => 2,
        s if s > 0.2 => 3,
        _ => 4,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub language: LanguageLabel,
    pub adjusted_score: f64,
    pub bucket: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub model_id: String,
    pub entries: Vec<CoverageEntry>,
}

impl CoverageReport {
    pub fn new(model_id: &str, adjusted: &BTreeMap<LanguageLabel, f64>) -> Result<Self> {
        let entries = adjusted
            .iter()
            .map(|(l, &s)| {
                Ok(CoverageEntry {
                    language: l.clone(),
                    adjusted_score: s,
                    bucket: bucketize(s)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CoverageReport {
            model_id: model_id.to_owned(),
            entries,
        })
    }

    pub fn bucket_counts(&self) -> [usize; BUCKET_COUNT] {
        let mut c = [0; BUCKET_COUNT];
        for e in &self.entries {
            c[e.bucket] += 1;
        }
        c
    }

    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.csv_comment();
        s.push_str("model,language,adjusted_score,bucket,band\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.model_id, e.language, e.adjusted_score, e.bucket, BUCKET_LABELS[e.bucket]
            );
        }
        s
    }
}

/// Languages x models table of scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// Column order.
    pub models: Vec<String>,
    pub rows: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub language: LanguageLabel,
    /// One cell per entry of `models`; `None` when the model lacks the language.
    pub cells: Vec<Option<f64>>,
}

/// Rows are the union of languages sorted by label, columns the models
/// sorted by id.
pub fn leaderboard(scores: &BTreeMap<String, BTreeMap<LanguageLabel, f64>>) -> Leaderboard {
    let models: Vec<String> = scores.keys().cloned().collect();
    let languages: BTreeSet<&LanguageLabel> = scores.values().flat_map(|m| m.keys()).collect();
    let rows = languages
        .into_iter()
        .map(|l| LeaderboardRow {
            language: l.clone(),
            cells: models.iter().map(|m| scores[m].get(l).copied()).collect(),
        })
        .collect();
    Leaderboard { models, rows }
}

impl Leaderboard {
    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.csv_comment();
        s.push_str("language");
        for m in &self.models {
            s.push(',');
            s.push_str(m);
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(row.language.as_str());
            for c in &row.cells {
                s.push(',');
                match c {
                    Some(v) => {
                        let _ = write!(s, "{v}");
                    }
                    None => s.push_str(MISSING),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self, header: &RunHeader) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            header: &'a RunHeader,
            leaderboard: &'a Leaderboard,
        }
        let mut out = serde_json::to_string_pretty(&Doc {
            header,
            leaderboard: self,
        })
        .expect("leaderboard serializes");
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub language: LanguageLabel,
    pub layer: usize,
    pub score: f64,
}

/// Long-format `(model, language, layer, score)` rows sorted by model,
/// language, then layer.
pub fn layer_curves(profiles: &BTreeMap<String, BTreeMap<LanguageLabel, AlignmentProfile>>) -> Vec<CurveRow> {
    profiles
        .iter()
        .flat_map(|(model, langs)| {
            langs.iter().flat_map(move |(lang, p)| {
                p.per_layer_scores
                    .iter()
                    .enumerate()
                    .map(move |(layer, &score)| CurveRow {
                        model: model.clone(),
                        language: lang.clone(),
                        layer,
                        score,
                    })
            })
        })
        .collect()
}

pub fn curves_to_csv(rows: &[CurveRow], header: &RunHeader) -> String {
    let mut s = header.csv_comment();
    s.push_str("model,language,layer,score\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.model, r.language, r.layer, r.score);
    }
    s
}
