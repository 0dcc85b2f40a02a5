//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 validation or data
//! error, 4 partial failure (some languages scored, others rejected).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::alignment::{language_alignment, AlignmentOptions, AlignmentProfile, LayerPooling};
use crate::dumpio::{self, write_embedding_dump, LanguageLabel, Pooling};
use crate::error::{Error, Result};
use crate::report::{self, CoverageReport, RunHeader};
use crate::stats::{self, CorrelationReport, LinearFit};
use crate::synth::{Pairing, SynthCorpus};

pub const DUMP_DIR_ENV: &str = "XLALIGN_DUMP_DIR";
pub const DEFAULT_PIVOT: &str = "eng_Latn";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "xlalign", version, about = "Cross-lingual alignment scores from per-layer embedding dumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every language dump in a directory against the pivot language.
    Score(ScoreArgs),
    /// Correlate alignment scores with task accuracies and fit a line.
    Correlate(CorrelateArgs),
    /// Predict task accuracy per language from a fitted or ideal line.
    Estimate(EstimateArgs),
    /// Probability that a random n x n matrix scores at least k/n.
    Robustness(RobustnessArgs),
    /// Write synthetic dumps with controlled alignment.
    Synth(SynthArgs),
    /// Emit leaderboard, per-layer curve and coverage tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory holding `<stem>.json` manifests and `<stem>.bin` payloads.
    #[arg(long, env = DUMP_DIR_ENV)]
    pub dump_dir: PathBuf,
    #[arg(long, default_value = DEFAULT_PIVOT)]
    pub pivot: LanguageLabel,
    /// Token pooling; sentence dumps must have been pooled the same way.
    #[arg(long, value_enum, default_value = "weighted-average")]
    pub pooling: PoolingArg,
    #[arg(long, value_enum, default_value = "mean")]
    pub layer_pool: LayerPooling,
    /// Comma-separated layer indices to pool over (0 = embedding layer).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, default_value = "scores.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PoolingArg {
    LastToken,
    WeightedAverage,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::LastToken => Pooling::LastToken,
            PoolingArg::WeightedAverage => Pooling::WeightedAverage,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelSelect {
    /// Score file written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Model to use when the score file holds several.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct EnglishArgs {
    /// Task file: one `language_label<TAB>accuracy` record per line.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// English task accuracy; defaults to the pivot row of the task file.
    #[arg(long)]
    pub english_score: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub select: ModelSelect,
    #[command(flatten)]
    pub english: EnglishArgs,
    /// Keep the pivot language as a data point (self-alignment score 1.0).
    #[arg(long)]
    pub include_pivot: bool,
    /// Answer choices per task item, for the reference line.
    #[arg(long, default_value_t = 4)]
    pub choices: u32,
    #[arg(long, default_value = "correlation.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub select: ModelSelect,
    #[command(flatten)]
    pub english: EnglishArgs,
    /// Use the fitted line from a `correlate` output file.
    #[arg(long, conflicts_with_all = ["slope", "intercept"])]
    pub fit: Option<PathBuf>,
    #[arg(long, requires = "intercept")]
    pub slope: Option<f64>,
    #[arg(long, requires = "slope")]
    pub intercept: Option<f64>,
    /// Answer choices for the ideal line used when no fit is given.
    #[arg(long, default_value_t = 4)]
    pub choices: u32,
    #[arg(long, default_value = "estimates.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    pub n: u64,
    pub k: u64,
    /// Print the tail for every k = 0..=n instead.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic-model")]
    pub model_id: String,
    #[arg(long, default_value = "synthetic")]
    pub corpus_id: String,
    #[arg(long, default_value = DEFAULT_PIVOT)]
    pub pivot: LanguageLabel,
    #[arg(long, value_enum, default_value = "weighted-average")]
    pub pooling: PoolingArg,
    /// `LABEL=SIGMA`: a language aligned to the pivot with noise SIGMA.
    #[arg(long = "aligned", value_parser = parse_aligned)]
    pub aligned: Vec<(LanguageLabel, f64)>,
    /// A language independent of the pivot.
    #[arg(long = "unaligned")]
    pub unaligned: Vec<LanguageLabel>,
}

fn parse_aligned(s: &str) -> std::result::Result<(LanguageLabel, f64), String> {
    let (l, sigma) = s.split_once('=').ok_or("expected LABEL=SIGMA")?;
    let label = LanguageLabel::new(l).map_err(|e| e.to_string())?;
    let sigma: f64 = sigma.parse().map_err(|e| format!("bad sigma: {e}"))?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(format!("sigma {sigma} must be finite and >= 0"));
    }
    Ok((label, sigma))
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub english: EnglishArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also export pooled sentence embeddings of this layer for external projection.
    #[arg(long, requires = "dump_dir")]
    pub export_layer: Option<usize>,
    #[arg(long, env = DUMP_DIR_ENV)]
    pub dump_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "weighted-average")]
    pub pooling: PoolingArg,
}

/// A failure tied to one input file or language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub pivot: LanguageLabel,
    pub corpus_id: String,
    pub languages: BTreeMap<LanguageLabel, AlignmentProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub header: RunHeader,
    pub models: BTreeMap<String, ModelScores>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ScoreFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    fn model(&self, name: Option<&str>) -> Result<(&str, &ModelScores)> {
        match name {
            Some(m) => self
                .models
                .get_key_value(m)
                .map(|(k, v)| (k.as_str(), v))
                .ok_or_else(|| Error::InvalidArgument(format!("model {m:?} not in score file"))),
            None => {
                let mut it = self.models.iter();
                match (it.next(), it.next()) {
                    (Some((k, v)), None) => Ok((k.as_str(), v)),
                    (None, _) => Err(Error::InsufficientData("no languages".into())),
                    _ => Err(Error::InvalidArgument(
                        "score file holds several models; pass --model".into(),
                    )),
                }
            }
        }
    }
}

/// Outcome of `score`: the file plus whether any input was rejected.
pub struct ScoreOutcome {
    pub file: ScoreFile,
    pub partial: bool,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreOutcome> {
    let opts = AlignmentOptions {
        pooling: args.pooling.into(),
        layer_pool: args.layer_pool,
        subset: args.layers.clone(),
    };
    let mut header = RunHeader::new("score")
        .with("dump_dir", args.dump_dir.display())
        .with("pivot", &args.pivot)
        .with("pooling", opts.pooling)
        .with("layer_pool", format!("{:?}", opts.layer_pool).to_lowercase());
    if let Some(l) = &args.layers {
        let s: Vec<String> = l.iter().map(ToString::to_string).collect();
        header = header.with("layers", s.join(","));
    }

    let mut diagnostics = Vec::new();
    let mut by_model: BTreeMap<String, Vec<(PathBuf, dumpio::DumpManifest)>> = BTreeMap::new();
    for path in dumpio::list_manifests(&args.dump_dir)? {
        match dumpio::read_manifest(&path) {
            Ok(m) => by_model.entry(m.model_id.clone()).or_default().push((path, m)),
            Err(e) => diagnostics.push(Diagnostic {
                subject: path.display().to_string(),
                message: e.to_string(),
            }),
        }
    }

    let mut models = BTreeMap::new();
    let mut attempted = 0usize;
    let mut pivot_found = false;
    for (model_id, entries) in by_model {
        let Some((pivot_path, pivot_manifest)) = entries.iter().find(|(_, m)| m.language == args.pivot) else {
            diagnostics.push(Diagnostic {
                subject: model_id.clone(),
                message: format!("no {} dump for this model", args.pivot),
            });
            continue;
        };
        pivot_found = true;
        let pivot = match dumpio::read_dump(pivot_path) {
            Ok(d) => d,
            Err(e) => {
                diagnostics.push(Diagnostic {
                    subject: pivot_path.display().to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut languages = BTreeMap::new();
        for (path, manifest) in &entries {
            if manifest.language == args.pivot {
                if path != pivot_path {
                    diagnostics.push(Diagnostic {
                        subject: path.display().to_string(),
                        message: format!("duplicate {} dump for model {model_id}", manifest.language),
                    });
                }
                continue;
            }
            attempted += 1;
            if languages.contains_key(&manifest.language) {
                diagnostics.push(Diagnostic {
                    subject: path.display().to_string(),
                    message: format!("duplicate {} dump for model {model_id}", manifest.language),
                });
                continue;
            }
            let result = dumpio::read_dump(path).and_then(|d| language_alignment(&pivot, &d, &opts));
            match result {
                Ok(p) => {
                    languages.insert(manifest.language.clone(), p);
                }
                Err(e) => diagnostics.push(Diagnostic {
                    subject: path.display().to_string(),
                    message: e.to_string(),
                }),
            }
        }
        if !languages.is_empty() {
            models.insert(
                model_id,
                ModelScores {
                    pivot: args.pivot.clone(),
                    corpus_id: pivot_manifest.corpus_id.clone(),
                    languages,
                },
            );
        }
    }

    if !pivot_found {
        return Err(Error::Validation(format!(
            "missing pivot: no {} dump in {}",
            args.pivot,
            args.dump_dir.display()
        )));
    }
    if attempted == 0 {
        return Err(Error::Validation("no comparison languages".into()));
    }
    if models.is_empty() {
        let detail: Vec<String> = diagnostics.iter().map(|d| format!("{}: {}", d.subject, d.message)).collect();
        return Err(Error::Validation(format!("no language could be scored: {}", detail.join("; "))));
    }
    let partial = !diagnostics.is_empty();
    Ok(ScoreOutcome {
        file: ScoreFile {
            header,
            models,
            diagnostics,
        },
        partial,
    })
}

/// Parses `language_label<TAB>accuracy` records. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_task_file(text: &str) -> Result<BTreeMap<LanguageLabel, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Validation(format!("task file line {}: {msg}", i + 1));
        let (label, acc) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected language_label<TAB>accuracy".into()))?;
        let label = LanguageLabel::new(label.trim()).map_err(|e| bad(e.to_string()))?;
        let acc: f64 = acc.trim().parse().map_err(|e| bad(format!("accuracy: {e}")))?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(bad(format!("accuracy {acc} outside [0, 1]")));
        }
        if out.insert(label.clone(), acc).is_some() {
            return Err(bad(format!("duplicate language {label}")));
        }
    }
    Ok(out)
}

pub fn read_task_file(path: &Path) -> Result<BTreeMap<LanguageLabel, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_task_file(&text)
}

fn english_score(
    args: &EnglishArgs,
    tasks: Option<&BTreeMap<LanguageLabel, f64>>,
    pivot: &LanguageLabel,
) -> Result<Option<f64>> {
    if let Some(s) = args.english_score {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("english score {s} outside [0, 1]")));
        }
        return Ok(Some(s));
    }
    Ok(tasks.and_then(|t| t.get(pivot).copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFile {
    pub header: RunHeader,
    pub model: String,
    pub english_score: f64,
    /// `x` is the adjusted alignment score, `y` the task accuracy.
    pub correlation: CorrelationReport,
    pub fit: LinearFit,
    pub ideal: LinearFit,
}

pub fn cmd_correlate(args: &CorrelateArgs) -> Result<CorrelationFile> {
    let file = ScoreFile::read(&args.select.scores)?;
    let (model, scores) = file.model(args.select.model.as_deref())?;
    let tasks_path = args
        .english
        .tasks
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--tasks is required".into()))?;
    let mut tasks = read_task_file(tasks_path)?;
    let english = english_score(&args.english, Some(&tasks), &scores.pivot)?.ok_or_else(|| {
        Error::InsufficientData(format!(
            "no English accuracy: pass --english-score or add a {} row",
            scores.pivot
        ))
    })?;

    let mut raw: BTreeMap<LanguageLabel, f64> =
        scores.languages.iter().map(|(l, p)| (l.clone(), p.score)).collect();
    if args.include_pivot {
        raw.insert(scores.pivot.clone(), 1.0);
    } else {
        tasks.remove(&scores.pivot);
    }
    let adjusted = stats::adjust_scores(&raw, english)?;
    let correlation = stats::correlate(&adjusted, &tasks)?;
    let points: Vec<(f64, f64)> = correlation.pairs.iter().map(|p| (p.x, p.y)).collect();
    let fit = stats::fit_line(&points)?;
    let header = RunHeader::new("correlate")
        .with("scores", args.select.scores.display())
        .with("tasks", tasks_path.display())
        .with("model", model)
        .with("english_score", english)
        .with("include_pivot", args.include_pivot)
        .with("choices", args.choices);
    Ok(CorrelationFile {
        header,
        model: model.to_owned(),
        english_score: english,
        correlation,
        fit,
        ideal: stats::ideal_line(args.choices)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub language: LanguageLabel,
    pub score: f64,
    pub adjusted: f64,
    pub predicted: f64,
    pub clamped: bool,
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<(RunHeader, Vec<Estimate>)> {
    let file = ScoreFile::read(&args.select.scores)?;
    let (model, scores) = file.model(args.select.model.as_deref())?;
    let tasks = args.english.tasks.as_deref().map(read_task_file).transpose()?;
    let english = english_score(&args.english, tasks.as_ref(), &scores.pivot)?
        .ok_or_else(|| Error::InvalidArgument("pass --english-score or --tasks with an English row".into()))?;
    let (fit, source) = match (&args.fit, args.slope, args.intercept) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let c: CorrelationFile = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            (c.fit, format!("fit:{}", path.display()))
        }
        (None, Some(slope), Some(intercept)) => (
            LinearFit {
                slope,
                intercept,
                residual_sum_squares: f64::NAN,
            },
            "manual".to_owned(),
        ),
        _ => (stats::ideal_line(args.choices)?, format!("ideal:{}", args.choices)),
    };
    let header = RunHeader::new("estimate")
        .with("scores", args.select.scores.display())
        .with("model", model)
        .with("english_score", english)
        .with("line", &source)
        .with("slope", fit.slope)
        .with("intercept", fit.intercept);
    let rows = scores
        .languages
        .iter()
        .map(|(l, p)| {
            let adjusted = stats::adjust_score(p.score, english)?;
            let pred = stats::predict_performance(&fit, adjusted);
            Ok(Estimate {
                language: l.clone(),
                score: p.score,
                adjusted,
                predicted: pred.value,
                clamped: pred.clamped,
            })
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn estimates_to_csv(header: &RunHeader, rows: &[Estimate]) -> String {
    let mut s = header.csv_comment();
    s.push_str("language,score,adjusted,predicted,clamped\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.language, r.score, r.adjusted, r.predicted, r.clamped
        ));
    }
    s
}

pub fn cmd_robustness(args: &RobustnessArgs) -> Result<Vec<(u64, f64)>> {
    if args.table {
        (0..=args.n)
            .map(|k| Ok((k, stats::random_baseline(args.n, k)?)))
            .collect()
    } else {
        Ok(vec![(args.k, stats::random_baseline(args.n, args.k)?)])
    }
}

/// Writes the pivot and every requested language; returns manifest paths.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    if args.n == 0 || args.dim == 0 || args.layers == 0 {
        return Err(Error::InvalidArgument("--n, --dim and --layers must be positive".into()));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let corpus = SynthCorpus {
        model_id: args.model_id.clone(),
        corpus_id: args.corpus_id.clone(),
        n: args.n,
        dim: args.dim,
        layer_count: args.layers,
        seed: args.seed,
    };
    let pooling: Pooling = args.pooling.into();
    let pivot_layers = corpus.pivot_layers()?;
    let mut jobs: Vec<(LanguageLabel, Option<Pairing>)> = vec![(args.pivot.clone(), None)];
    jobs.extend(args.aligned.iter().map(|(l, s)| (l.clone(), Some(Pairing::Aligned { sigma: *s }))));
    jobs.extend(args.unaligned.iter().map(|l| (l.clone(), Some(Pairing::Unaligned))));
    let mut seen = std::collections::BTreeSet::new();
    let mut written = Vec::new();
    for (label, pairing) in jobs {
        if !seen.insert(label.clone()) {
            return Err(Error::InvalidArgument(format!("language {label} requested twice")));
        }
        let dump = corpus.dump(label.clone(), &pivot_layers, pairing, pooling)?;
        let path = args.out_dir.join(format!("{label}.{}", dumpio::MANIFEST_EXTENSION));
        written.push(write_embedding_dump(&dump, &path)?);
    }
    Ok(written)
}

/// Writes report tables into `out_dir`; returns the files written.
pub fn cmd_report(args: &ReportArgs) -> Result<Vec<PathBuf>> {
    let file = ScoreFile::read(&args.scores)?;
    if file.models.values().all(|m| m.languages.is_empty()) {
        return Err(Error::InsufficientData("no languages".into()));
    }
    let tasks = args.english.tasks.as_deref().map(read_task_file).transpose()?;
    let pivot = file.models.values().next().map(|m| m.pivot.clone()).expect("non-empty");
    let english = english_score(&args.english, tasks.as_ref(), &pivot)?;

    let mut header = RunHeader::new("report").with("scores", args.scores.display());
    if let Some(e) = english {
        header = header.with("english_score", e).with("cells", "adjusted_score");
    } else {
        header = header.with("cells", "score");
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let p = args.out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };

    let mut cells: BTreeMap<String, BTreeMap<LanguageLabel, f64>> = BTreeMap::new();
    for (model, m) in &file.models {
        let raw: BTreeMap<LanguageLabel, f64> = m.languages.iter().map(|(l, p)| (l.clone(), p.score)).collect();
        let v = match english {
            Some(e) => stats::adjust_scores(&raw, e)?,
            None => raw,
        };
        cells.insert(model.clone(), v);
    }
    let lb = report::leaderboard(&cells);
    write("leaderboard.csv", lb.to_csv(&header))?;
    write("leaderboard.json", lb.to_json(&header))?;

    let profiles: BTreeMap<String, BTreeMap<LanguageLabel, AlignmentProfile>> = file
        .models
        .iter()
        .map(|(k, v)| (k.clone(), v.languages.clone()))
        .collect();
    let curves = report::layer_curves(&profiles);
    write("curves.csv", report::curves_to_csv(&curves, &header))?;

    if english.is_some() {
        let mut text = String::new();
        for (i, (model, adjusted)) in cells.iter().enumerate() {
            let cov = CoverageReport::new(model, adjusted)?;
            let csv = cov.to_csv(&header);
            if i == 0 {
                text.push_str(&csv);
            } else {
                text.extend(csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| format!("{l}\n")));
            }
        }
        write("coverage.csv", text)?;
    }

    if let (Some(layer), Some(dir)) = (args.export_layer, &args.dump_dir) {
        write("embeddings.csv", export_embeddings(dir, layer, args.pooling.into(), &header)?)?;
    }
    Ok(written)
}

/// Pooled sentence embeddings of one layer for every dump in `dir`.
fn export_embeddings(dir: &Path, layer: usize, pooling: Pooling, header: &RunHeader) -> Result<String> {
    let header = header.clone().with("export_layer", layer).with("pooling", pooling);
    let mut s = header.csv_comment();
    s.push_str("model,language,sentence,values\n");
    for path in dumpio::list_manifests(dir)? {
        let dump = dumpio::read_dump(&path)?;
        let m = dump.manifest();
        if layer >= m.layer_count {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for {} ({} layers)",
                path.display(),
                m.layer_count
            )));
        }
        let emb = crate::alignment::sentence_embeddings(&dump, layer, pooling)?;
        for (i, row) in emb.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{},{},{},{}\n", m.model_id, m.language, i, vals.join(" ")));
        }
    }
    Ok(s)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_VALIDATION,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cmd {
        Command::Score(a) => {
            let outcome = cmd_score(a)?;
            write_json(&a.out, &outcome.file)?;
            for d in &outcome.file.diagnostics {
                writeln!(err, "warning: {}: {}", d.subject, d.message).map_err(io)?;
            }
            let scored: usize = outcome.file.models.values().map(|m| m.languages.len()).sum();
            writeln!(out, "scored {scored} language(s); wrote {}", a.out.display()).map_err(io)?;
            Ok(if outcome.partial { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Correlate(a) => {
            let c = cmd_correlate(a)?;
            write_json(&a.out, &c)?;
            writeln!(
                out,
                "r = {} (p = {:e}, N = {}); fit slope {} intercept {}",
                c.correlation.r, c.correlation.p_value, c.correlation.sample_size, c.fit.slope, c.fit.intercept
            )
            .map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Estimate(a) => {
            let (header, rows) = cmd_estimate(a)?;
            let p = &a.out;
            fs::write(p, estimates_to_csv(&header, &rows)).map_err(|e| Error::io(p, e))?;
            let clamped = rows.iter().filter(|r| r.clamped).count();
            writeln!(out, "{} estimate(s), {clamped} clamped; wrote {}", rows.len(), p.display()).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Robustness(a) => {
            let rows = cmd_robustness(a)?;
            if a.table {
                writeln!(out, "k\tP(X>=k/n)").map_err(io)?;
                for (k, v) in rows {
                    writeln!(out, "{k}\t{v:e}").map_err(io)?;
                }
            } else {
                writeln!(out, "{}", rows[0].1).map_err(io)?;
            }
            Ok(EXIT_OK)
        }
        Command::Synth(a) => {
            let paths = cmd_synth(a)?;
            for p in paths {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
            Ok(EXIT_OK)
        }
        Command::Report(a) => {
            for p in cmd_report(a)? {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
            Ok(EXIT_OK)
        }
    }
}
