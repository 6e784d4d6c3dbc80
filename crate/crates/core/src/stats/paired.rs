//! Paired significance tests on per-pair score differences.

use serde::{Deserialize, Serialize};

use super::special::{ln_normal_two_sided, ln_student_t_two_sided};
use super::summary::{mean, median, sample_sd};
use super::StatsError;

/// Differences whose magnitude falls below this are treated as zero, and
/// absolute differences within it of each other as ties. Scores live on a
/// 0.1 grid, so real differences are never this small.
pub const DIFF_TOLERANCE: f64 = 1e-9;

/// Two aligned score lists, `x[i]` and `y[i]` from the same reader and case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() {
            return Err(StatsError::LengthMismatch(x.len(), y.len()));
        }
        if x.is_empty() {
            return Err(StatsError::Empty);
        }
        Ok(Self { x, y })
    }

    /// Sample against a zero baseline, for feeding a difference vector directly.
    pub fn from_differences(d: Vec<f64>) -> Result<Self, StatsError> {
        let zeros = vec![0.0; d.len()];
        Self::new(d, zeros)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn differences(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }

    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_x: f64,
    pub sd_x: f64,
    pub mean_y: f64,
    pub sd_y: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub log10_p: f64,
}

/// `T = mean(d) / (sd(d) / sqrt(n))` with `n - 1` degrees of freedom.
pub fn t_statistic(mean_diff: f64, sd_diff: f64, n: usize) -> f64 {
    mean_diff / (sd_diff / (n as f64).sqrt())
}

/// Two-sided Student-t p-value as `(p, log10 p)`.
pub fn t_two_sided_p(t: f64, df: usize) -> (f64, f64) {
    let ln_p = ln_student_t_two_sided(t, df as f64);
    (ln_p.exp(), ln_p / std::f64::consts::LN_10)
}

pub fn paired_t_test(sample: &PairedSample) -> Result<TTestResult, StatsError> {
    let n = sample.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, found: n });
    }
    let d = sample.differences();
    let mean_diff = mean(&d);
    let sd_diff = sample_sd(&d);
    if !(sd_diff > 0.0) {
        return Err(StatsError::DegenerateSample);
    }
    let t = t_statistic(mean_diff, sd_diff, n);
    let df = n - 1;
    let (p, log10_p) = t_two_sided_p(t, df);
    Ok(TTestResult {
        n,
        mean_x: mean(sample.x()),
        sd_x: sample_sd(sample.x()),
        mean_y: mean(sample.y()),
        sd_y: sample_sd(sample.y()),
        mean_diff,
        sd_diff,
        t,
        df,
        p,
        log10_p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n: usize,
    /// Nonzero differences kept after dropping zeros.
    pub j: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub w: f64,
    pub z: f64,
    pub p: f64,
    pub log10_p: f64,
    pub median_x: f64,
    pub median_y: f64,
}

/// Normal deviate of `W` for `j` nonzero differences, without tie correction.
pub fn wilcoxon_z(w: f64, j: usize) -> f64 {
    let j = j as f64;
    (w - j * (j + 1.0) / 4.0) / (j * (j + 1.0) * (2.0 * j + 1.0) / 24.0).sqrt()
}

/// `2 Phi(-|z|)` as `(p, log10 p)`.
pub fn normal_two_sided_p(z: f64) -> (f64, f64) {
    let ln_p = ln_normal_two_sided(z);
    (ln_p.exp().min(1.0), ln_p.min(0.0) / std::f64::consts::LN_10)
}

/// Ascending midranks (1-based) of `values`, ties within [`DIFF_TOLERANCE`].
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && (values[order[end]] - values[order[start]]).abs() <= DIFF_TOLERANCE {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Signed nonzero differences and their midranks by absolute value.
pub fn signed_ranks(sample: &PairedSample) -> (Vec<f64>, Vec<f64>) {
    let nonzero: Vec<f64> = sample
        .differences()
        .into_iter()
        .filter(|d| d.abs() > DIFF_TOLERANCE)
        .collect();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    (nonzero, ranks)
}

pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<WilcoxonResult, StatsError> {
    let (d, ranks) = signed_ranks(sample);
    if d.is_empty() {
        return Err(StatsError::NoNonzeroDifferences);
    }
    let (mut w_plus, mut w_minus) = (0.0, 0.0);
    for (di, r) in d.iter().zip(&ranks) {
        if *di > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    let j = d.len();
    let w = w_plus.min(w_minus);
    let z = wilcoxon_z(w, j);
    let (p, log10_p) = normal_two_sided_p(z);
    Ok(WilcoxonResult {
        n: sample.len(),
        j,
        w_plus,
        w_minus,
        w,
        z,
        p,
        log10_p,
        median_x: median(sample.x()),
        median_y: median(sample.y()),
    })
}
