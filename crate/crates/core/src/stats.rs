//! Chance-level bounds, correlation and the score-to-accuracy line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::dumpio::LanguageLabel;
use crate::error::{Error, Result};

/// Binomial(n, p) probability mass for `i = 0..=n`, via log-space terms.
pub fn binomial_pmf(n: u64, p: f64) -> Result<Vec<f64>> {
    let logs = binomial_log_pmf(n, p)?;
    Ok(logs.into_iter().map(f64::exp).collect())
}

fn binomial_log_pmf(n: u64, p: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut ln_choose = 0.0f64;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        // 0 * ln(0) is taken as 0 at the degenerate ends p = 0 and p = 1.
        let a = if i == 0 { 0.0 } else { i as f64 * ln_p };
        let b = if i == n { 0.0 } else { (n - i) as f64 * ln_q };
        out.push(ln_choose + a + b);
    }
    Ok(out)
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`, summing the upper tail directly.
pub fn binomial_upper_tail(n: u64, k: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let logs = binomial_log_pmf(n, p)?;
    let tail = &logs[k as usize..];
    let m = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let s: f64 = tail.iter().map(|&l| (l - m).exp()).sum();
    Ok((m.exp() * s).min(1.0))
}

/// Probability that an `n x n` random similarity matrix scores at least
/// `k / n`: each diagonal entry is the strict maximum of its `2n - 1`
/// row/column entries with probability `1 / (2n - 1)`, and the `n` diagonal
/// events are treated as independent.
pub fn random_baseline(n: u64, k: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    binomial_upper_tail(n, k, 1.0 / (2 * n - 1) as f64)
}

/// Expected score of an unaligned pair, `1 / (2n - 1)`.
pub fn chance_score(n: u64) -> f64 {
    1.0 / (2 * n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided, from a Student t with `sample_size - 2` degrees of freedom.
    pub p_value: f64,
    pub sample_size: usize,
}

pub fn pearson(pairs: &[(f64, f64)]) -> Result<Pearson> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientData("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Pearson {
        r,
        p_value: correlation_p_value(r, n),
        sample_size: n,
    })
}

fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    // P(|T| > t) = I_{df / (df + t^2)}(df / 2, 1 / 2), with t^2 = r^2 df / (1 - r^2)
    let t2 = r * r * df / one_minus;
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub language: LanguageLabel,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub p_value: f64,
    pub sample_size: usize,
    /// Languages present in both inputs, sorted by label.
    pub pairs: Vec<LabeledPair>,
}

/// Pearson correlation over the languages present in both maps.
pub fn correlate(
    xs: &BTreeMap<LanguageLabel, f64>,
    ys: &BTreeMap<LanguageLabel, f64>,
) -> Result<CorrelationReport> {
    let pairs: Vec<LabeledPair> = xs
        .iter()
        .filter_map(|(lang, &x)| {
            ys.get(lang).map(|&y| LabeledPair {
                language: lang.clone(),
                x,
                y,
            })
        })
        .collect();
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} languages in common, need at least 3",
            pairs.len()
        )));
    }
    let raw: Vec<(f64, f64)> = pairs.iter().map(|p| (p.x, p.y)).collect();
    let p = pearson(&raw)?;
    Ok(CorrelationReport {
        r: p.r,
        p_value: p.p_value,
        sample_size: p.sample_size,
        pairs,
    })
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
    }
    Ok(())
}

/// Alignment score scaled by the English task accuracy.
pub fn adjust_score(score: f64, english_task_score: f64) -> Result<f64> {
    check_unit("english task score", english_task_score)?;
    check_unit("alignment score", score)?;
    Ok(score * english_task_score)
}

pub fn adjust_scores(
    scores: &BTreeMap<LanguageLabel, f64>,
    english_task_score: f64,
) -> Result<BTreeMap<LanguageLabel, f64>> {
    scores
        .iter()
        .map(|(l, &s)| Ok((l.clone(), adjust_score(s, english_task_score)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_sum_squares: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares line through `(x, y)` points.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "line fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("x values have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_sum_squares = points
        .iter()
        .map(|&(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        residual_sum_squares,
    })
}

/// Line from zero alignment at chance accuracy to full alignment at 1.0.
pub fn ideal_line(num_choices: u32) -> Result<LinearFit> {
    if num_choices < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 answer choices, got {num_choices}"
        )));
    }
    let chance = 1.0 / f64::from(num_choices);
    Ok(LinearFit {
        slope: 1.0 - chance,
        intercept: chance,
        residual_sum_squares: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    /// The raw line value fell outside `[0, 1]`.
    pub clamped: bool,
}

pub fn predict_performance(fit: &LinearFit, adjusted_score: f64) -> Prediction {
    let raw = fit.eval(adjusted_score);
    let value = raw.clamp(0.0, 1.0);
    Prediction {
        value,
        clamped: value != raw,
    }
}
