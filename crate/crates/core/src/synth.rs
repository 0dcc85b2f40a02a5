//! Synthetic embeddings with controlled alignment, and Monte Carlo oracles.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64`). Uniforms take the top
//! 53 bits of each output; normals come from the Box-Muller transform, both
//! outputs of a pair used in order. Sub-streams (per layer, per trial, per
//! language) get seeds from [`derive_seed`], so results do not depend on
//! thread count or evaluation order.
//!
//! Aligned languages are the pivot plus isotropic Gaussian noise in the same
//! space, then renormalized. A rotation would not work here: rotating one
//! side of the pair changes every cosine and destroys diagonal dominance
//! outright, while additive noise sweeps the score smoothly from 1 down to
//! chance as `sigma` grows.

use ndarray::Array2;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{layer_hits, similarity_matrix};
use crate::dumpio::{DumpManifest, EmbeddingDump, LanguageLabel, Pooling};
use crate::error::{Error, Result};

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const UNALIGNED_STREAM: u64 = 0x756e_616c_6900_0002;

/// SplitMix64 finalizer over `base` and `index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal stream: xoshiro256++ and Box-Muller.
pub struct Gaussian {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(seed: u64) -> Self {
        Gaussian {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Pivot,
    Aligned,
    Unaligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    pub kind: SynthKind,
}

impl SynthSpec {
    fn check(&self, kind: SynthKind) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("n and d must be positive".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "spec kind {:?} used to generate {:?}",
                self.kind, kind
            )));
        }
        Ok(())
    }
}

fn unit_rows(n: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut g = Gaussian::new(seed);
    let mut out = Array2::zeros((n, d));
    let mut buf = vec![0.0f64; d];
    for mut row in out.rows_mut() {
        buf.iter_mut().for_each(|v| *v = g.sample());
        let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (o, v) in row.iter_mut().zip(&buf) {
            *o = (v / norm) as f32;
        }
    }
    out
}

/// `n` i.i.d. standard Gaussian rows, normalized to unit length.
pub fn gen_pivot(spec: &SynthSpec) -> Result<Array2<f32>> {
    spec.check(SynthKind::Pivot)?;
    Ok(unit_rows(spec.n, spec.d, spec.seed))
}

/// Fresh unit rows independent of any pivot generated from the same seed.
pub fn gen_unaligned(spec: &SynthSpec) -> Result<Array2<f32>> {
    spec.check(SynthKind::Unaligned)?;
    Ok(unit_rows(spec.n, spec.d, derive_seed(spec.seed, UNALIGNED_STREAM)))
}

/// Row `i` is `normalize(pivot_i + sigma * g_i)`; `sigma == 0` returns the
/// pivot unchanged.
pub fn gen_aligned(pivot: &Array2<f32>, sigma: f64, seed: u64) -> Result<Array2<f32>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(pivot.clone());
    }
    let mut g = Gaussian::new(derive_seed(seed, NOISE_STREAM));
    let mut out = Array2::zeros(pivot.dim());
    let mut buf = vec![0.0f64; pivot.ncols()];
    for (src, mut dst) in pivot.rows().into_iter().zip(out.rows_mut()) {
        for (b, &p) in buf.iter_mut().zip(src) {
            *b = f64::from(p) + sigma * g.sample();
        }
        let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (o, v) in dst.iter_mut().zip(&buf) {
            *o = (v / norm) as f32;
        }
    }
    Ok(out)
}

/// What the second side of a simulated pair looks like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pairing {
    Unaligned,
    Aligned { sigma: f64 },
}

/// Per-trial hit counts from simulated `n x n` similarity matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSamples {
    pub n: usize,
    /// Aligned diagonal count for each trial, in trial order.
    pub hits: Vec<usize>,
}

impl ScoreSamples {
    pub fn trials(&self) -> usize {
        self.hits.len()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.hits.iter().map(move |&k| k as f64 / self.n as f64)
    }

    pub fn mean(&self) -> f64 {
        self.scores().sum::<f64>() / self.trials() as f64
    }

    /// Sample standard deviation of the per-trial score (0 for one trial).
    pub fn std_dev(&self) -> f64 {
        let t = self.trials();
        if t < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.scores().map(|s| (s - m).powi(2)).sum::<f64>() / (t - 1) as f64).sqrt()
    }

    pub fn std_error(&self) -> f64 {
        self.std_dev() / (self.trials() as f64).sqrt()
    }

    /// Empirical `P(score >= k / n)`.
    pub fn tail(&self, k: usize) -> f64 {
        self.hits.iter().filter(|&&h| h >= k).count() as f64 / self.trials() as f64
    }

    /// Empirical tail for every `k = 0..=n`.
    pub fn tails(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.tail(k)).collect()
    }

    /// Trial counts per hit value `0..=n`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n + 1];
        for &k in &self.hits {
            h[k] += 1;
        }
        h
    }
}

/// Scores `trials` independent simulated pairs. Trial `t` draws its pivot
/// from `derive_seed(seed, 2t)` and its partner from `derive_seed(seed, 2t+1)`.
pub fn simulate_scores(n: usize, d: usize, pairing: Pairing, trials: usize, seed: u64) -> Result<ScoreSamples> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    let hits = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let pivot = unit_rows(n, d, derive_seed(seed, 2 * t));
            let other_seed = derive_seed(seed, 2 * t + 1);
            let other = match pairing {
                Pairing::Unaligned => unit_rows(n, d, other_seed),
                Pairing::Aligned { sigma } => gen_aligned(&pivot, sigma, other_seed)?,
            };
            let c = similarity_matrix(other.view(), pivot.view())?;
            Ok(layer_hits(c.values.view())?.hits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSamples { n, hits })
}

/// Default embedding width for [`monte_carlo_baseline`].
pub const BASELINE_DIM: usize = 32;

/// Empirical score distribution of unaligned pairs.
pub fn monte_carlo_baseline(n: usize, trials: usize, seed: u64) -> Result<ScoreSamples> {
    simulate_scores(n, BASELINE_DIM, Pairing::Unaligned, trials, seed)
}

/// Parameters shared by every dump of one synthetic "model".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub model_id: String,
    pub corpus_id: String,
    pub n: usize,
    pub dim: usize,
    pub layer_count: usize,
    pub seed: u64,
}

fn label_seed(base: u64, label: &LanguageLabel) -> u64 {
    label
        .as_str()
        .bytes()
        .fold(derive_seed(base, 0x6c61_6e67), |acc, b| derive_seed(acc, u64::from(b)))
}

impl SynthCorpus {
    /// One independent pivot matrix per layer.
    pub fn pivot_layers(&self) -> Result<Vec<Array2<f32>>> {
        (0..self.layer_count)
            .map(|l| {
                gen_pivot(&SynthSpec {
                    n: self.n,
                    d: self.dim,
                    sigma: 0.0,
                    seed: derive_seed(self.seed, l as u64),
                    kind: SynthKind::Pivot,
                })
            })
            .collect()
    }

    /// Sentence-level dump for `language`, pooled-method tag `pooling`.
    pub fn dump(
        &self,
        language: LanguageLabel,
        pivot_layers: &[Array2<f32>],
        pairing: Option<Pairing>,
        pooling: Pooling,
    ) -> Result<EmbeddingDump> {
        let lang_seed = label_seed(self.seed, &language);
        let layers = pivot_layers
            .iter()
            .enumerate()
            .map(|(l, pivot)| {
                let s = derive_seed(lang_seed, l as u64);
                match pairing {
                    None => Ok(pivot.clone()),
                    Some(Pairing::Aligned { sigma }) => gen_aligned(pivot, sigma, s),
                    Some(Pairing::Unaligned) => gen_unaligned(&SynthSpec {
                        n: self.n,
                        d: self.dim,
                        sigma: 0.0,
                        seed: s,
                        kind: SynthKind::Unaligned,
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = DumpManifest::sentence(
            &self.model_id,
            language,
            &self.corpus_id,
            pooling,
            self.layer_count,
            self.n,
            self.dim,
        );
        manifest
            .attributes
            .insert("generator".into(), "xoshiro256++/box-muller".into());
        manifest.attributes.insert("seed".into(), self.seed.to_string());
        if let Some(p) = pairing {
            let desc = match p {
                Pairing::Unaligned => "unaligned".to_owned(),
                Pairing::Aligned { sigma } => format!("aligned sigma={sigma}"),
            };
            manifest.attributes.insert("synthetic".into(), desc);
        } else {
            manifest.attributes.insert("synthetic".into(), "pivot".into());
        }
        EmbeddingDump::new(manifest, layers)
    }
}
