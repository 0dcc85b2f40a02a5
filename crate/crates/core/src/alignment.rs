//! Cross-lingual similarity matrices and the bidirectional retrieval score.
//!
//! For one layer, `C[i][j]` is the cosine between sentence `i` of the scored
//! language and sentence `j` of the pivot. Sentence `i` counts as aligned when
//! `C[i][i]` is strictly greater than every other entry of row `i` and of
//! column `i`; the layer score is the aligned fraction `k / n`. Only order
//! comparisons enter the score, so it is immune to the global offset that
//! anisotropic embedding spaces put on raw cosine values.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dumpio::{validate_pair, EmbeddingDump, Granularity, LanguageLabel, Pooling};
use crate::error::{Error, Result};
use crate::pooling;

/// Norms below this make a vector degenerate; its cosines are reported as 0.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LayerPooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input has norm below [`DEGENERATE_NORM`].
    pub degenerate: bool,
}

pub fn cosine(u: &[f32], v: &[f32]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: dot / (nu * nv),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub layer: usize,
    /// `(scored language, pivot)` when known.
    pub lang_pair: Option<(LanguageLabel, LanguageLabel)>,
    /// Rows of the first input with a degenerate norm.
    pub degenerate_rows: Vec<usize>,
    /// Rows of the second input with a degenerate norm.
    pub degenerate_cols: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "similarity matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(SimilarityMatrix {
            values,
            layer: 0,
            lang_pair: None,
            degenerate_rows: Vec::new(),
            degenerate_cols: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Unit-normalizes rows in f64; degenerate rows become zero.
fn normalized_rows(m: ArrayView2<'_, f32>) -> (Array2<f64>, Vec<usize>) {
    let mut out = m.mapv(f64::from);
    let mut degenerate = Vec::new();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < DEGENERATE_NORM {
            row.fill(0.0);
            degenerate.push(i);
        } else {
            row /= norm;
        }
    }
    (out, degenerate)
}

/// `values[i][j] = cosine(a[i], b[j])` for two `n x d` embedding matrices.
pub fn similarity_matrix(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding matrices {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::DimensionMismatch("no sentences".into()));
    }
    let (an, degenerate_rows) = normalized_rows(a);
    let (bn, degenerate_cols) = normalized_rows(b);
    Ok(SimilarityMatrix {
        values: an.dot(&bn.t()),
        layer: 0,
        lang_pair: None,
        degenerate_rows,
        degenerate_cols,
    })
}

/// Count of aligned diagonal entries out of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerScore {
    pub hits: usize,
    pub n: usize,
}

impl LayerScore {
    pub fn value(&self) -> f64 {
        self.hits as f64 / self.n as f64
    }
}

fn check_square(values: &ArrayView2<'_, f64>) -> Result<usize> {
    if !values.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            values.nrows(),
            values.ncols()
        )));
    }
    if values.nrows() == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    Ok(values.nrows())
}

fn diagonal_dominates(values: &ArrayView2<'_, f64>, i: usize) -> bool {
    let d = values[[i, i]];
    let beats = |row: ArrayView1<'_, f64>| {
        row.iter()
            .enumerate()
            .all(|(j, &c)| j == i || d > c)
    };
    beats(values.row(i)) && beats(values.column(i))
}

/// Counts diagonal entries strictly greater than everything else in their
/// row and column. Ties fail.
pub fn layer_hits(values: ArrayView2<'_, f64>) -> Result<LayerScore> {
    let n = check_square(&values)?;
    let hits = (0..n).filter(|&i| diagonal_dominates(&values, i)).count();
    Ok(LayerScore { hits, n })
}

/// Layer score `k / n` of a similarity matrix.
pub fn layer_score(c: &SimilarityMatrix) -> Result<f64> {
    layer_hits(c.values.view()).map(|s| s.value())
}

/// Pools per-layer scores by mean or max, optionally over a subset of layer
/// indices.
pub fn pool_layers(scores: &[f64], method: LayerPooling, subset: Option<&[usize]>) -> Result<f64> {
    let selected: Vec<f64> = match subset {
        None => scores.to_vec(),
        Some(idx) => idx
            .iter()
            .map(|&l| {
                scores.get(l).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "layer {l} out of range (have {} layers)",
                        scores.len()
                    ))
                })
            })
            .collect::<Result<_>>()?,
    };
    if selected.is_empty() {
        return Err(Error::EmptyLayerSet);
    }
    Ok(match method {
        LayerPooling::Mean => selected.iter().sum::<f64>() / selected.len() as f64,
        LayerPooling::Max => selected.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Mean cosine over parallel pairs (the diagonal).
pub fn ac_parallel(values: ArrayView2<'_, f64>) -> Result<f64> {
    let n = check_square(&values)?;
    Ok(values.diag().sum() / n as f64)
}

/// Mean cosine over non-parallel pairs (all off-diagonal entries).
pub fn ac_nonparallel(values: ArrayView2<'_, f64>) -> Result<f64> {
    let n = check_square(&values)?;
    if n < 2 {
        return Err(Error::InsufficientData(
            "non-parallel mean needs n >= 2".into(),
        ));
    }
    let off = values.sum() - values.diag().sum();
    Ok(off / (n * n - n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOptions {
    pub pooling: Pooling,
    pub layer_pool: LayerPooling,
    pub subset: Option<Vec<usize>>,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        AlignmentOptions {
            pooling: Pooling::WeightedAverage,
            layer_pool: LayerPooling::Mean,
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentProfile {
    pub language: LanguageLabel,
    pub pivot: LanguageLabel,
    pub sentence_count: usize,
    /// One score per stored hidden-state level, layer 0 first.
    pub per_layer_scores: Vec<f64>,
    pub pooled_mean: f64,
    pub pooled_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_subset: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_pooled: Option<f64>,
    pub layer_pool: LayerPooling,
    /// Headline value: `layer_pool` over the subset if given, else all layers.
    pub score: f64,
    pub ac_parallel: Vec<f64>,
    /// Empty when `sentence_count == 1`.
    pub ac_nonparallel: Vec<f64>,
    /// Sentences of either language with a degenerate embedding at any layer.
    pub degenerate_sentences: Vec<usize>,
}

/// Sentence embeddings of one layer, pooling token dumps with `method`.
pub fn sentence_embeddings(dump: &EmbeddingDump, layer: usize, method: Pooling) -> Result<Array2<f32>> {
    let m = dump.manifest();
    match m.granularity {
        Granularity::Sentence => {
            if m.pooling != Some(method) {
                return Err(Error::Validation(format!(
                    "{} was pooled with {} but {} was requested",
                    m.language,
                    m.pooling.map(|p| p.to_string()).unwrap_or_default(),
                    method
                )));
            }
            Ok(dump.layer(layer).to_owned())
        }
        Granularity::Token => {
            let mut out = Array2::zeros((m.sentence_count, m.dim));
            for i in 0..m.sentence_count {
                let pooled = pooling::pool(dump.sentence_rows(layer, i), method)?;
                out.row_mut(i).assign(&pooled);
            }
            Ok(out)
        }
    }
}

struct LayerResult {
    score: f64,
    ac_p: f64,
    ac_np: Option<f64>,
    degenerate: Vec<usize>,
}

/// Scores `lang` against `pivot` at every stored layer and pools the result.
pub fn language_alignment(
    pivot: &EmbeddingDump,
    lang: &EmbeddingDump,
    opts: &AlignmentOptions,
) -> Result<AlignmentProfile> {
    let check = validate_pair(pivot.manifest(), lang.manifest());
    if !check.passed() {
        return Err(Error::Validation(format!(
            "{} vs {}: {check}",
            lang.manifest().language,
            pivot.manifest().language
        )));
    }
    let layer_count = pivot.manifest().layer_count;
    let n = pivot.manifest().sentence_count;

    let per_layer: Vec<LayerResult> = (0..layer_count)
        .into_par_iter()
        .map(|l| {
            let a = sentence_embeddings(lang, l, opts.pooling)?;
            let b = sentence_embeddings(pivot, l, opts.pooling)?;
            let c = similarity_matrix(a.view(), b.view())?;
            let v = c.values.view();
            let mut degenerate = c.degenerate_rows.clone();
            degenerate.extend(&c.degenerate_cols);
            Ok(LayerResult {
                score: layer_hits(v)?.value(),
                ac_p: ac_parallel(v)?,
                ac_np: if n >= 2 { Some(ac_nonparallel(v)?) } else { None },
                degenerate,
            })
        })
        .collect::<Result<_>>()?;

    let scores: Vec<f64> = per_layer.iter().map(|r| r.score).collect();
    let pooled_mean = pool_layers(&scores, LayerPooling::Mean, None)?;
    let pooled_max = pool_layers(&scores, LayerPooling::Max, None)?;
    let subset_pooled = opts
        .subset
        .as_deref()
        .map(|s| pool_layers(&scores, opts.layer_pool, Some(s)))
        .transpose()?;
    let score = match subset_pooled {
        Some(v) => v,
        None => pool_layers(&scores, opts.layer_pool, None)?,
    };
    let mut degenerate: Vec<usize> = per_layer.iter().flat_map(|r| r.degenerate.iter().copied()).collect();
    degenerate.sort_unstable();
    degenerate.dedup();

    Ok(AlignmentProfile {
        language: lang.manifest().language.clone(),
        pivot: pivot.manifest().language.clone(),
        sentence_count: n,
        pooled_mean,
        pooled_max,
        layer_subset: opts.subset.clone(),
        subset_pooled,
        layer_pool: opts.layer_pool,
        score,
        ac_parallel: per_layer.iter().map(|r| r.ac_p).collect(),
        ac_nonparallel: per_layer.iter().filter_map(|r| r.ac_np).collect(),
        degenerate_sentences: degenerate,
        per_layer_scores: scores,
    })
}
