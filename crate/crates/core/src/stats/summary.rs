//! Distribution summaries for box plots and Likert band percentages.

use serde::{Deserialize, Serialize};

use super::StatsError;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for a single value.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    quantile_sorted(&sorted(v), 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values inside the 1.5 IQR fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

pub fn box_summary(scores: &[f64]) -> Result<BoxSummary, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    let s = sorted(scores);
    let (q1, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || s.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    Ok(BoxSummary {
        n: s.len(),
        min: s[0],
        q1,
        median: quantile_sorted(&s, 0.5),
        q3,
        max: s[s.len() - 1],
        whisker_low: inside().next().unwrap_or(s[0]),
        whisker_high: inside().next_back().unwrap_or(s[s.len() - 1]),
        outliers: s
            .iter()
            .copied()
            .filter(|v| !(lo_fence..=hi_fence).contains(v))
            .collect(),
        mean: mean(&s),
        sd: sample_sd(&s),
    })
}

/// Five-point Likert bands over the 0-5 slider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LikertBand {
    Poor,
    Low,
    Medium,
    Good,
    Excellent,
}

impl LikertBand {
    pub const ALL: [LikertBand; 5] = [
        LikertBand::Poor,
        LikertBand::Low,
        LikertBand::Medium,
        LikertBand::Good,
        LikertBand::Excellent,
    ];

    /// Half-open `[k, k+1)` bands, except `[4, 5]` which is closed.
    pub fn classify(score: f64) -> Result<LikertBand, StatsError> {
        if !(0.0..=5.0).contains(&score) {
            return Err(StatsError::ScoreOutOfRange(score));
        }
        // Scores sit on a 0.1 grid; snap before flooring so 3.9999999 stays Good
        // only if it really is below 4.
        let tenths = (score * 10.0).round() as usize;
        Ok(Self::ALL[(tenths / 10).min(4)])
    }

    pub fn name(self) -> &'static str {
        match self {
            LikertBand::Poor => "Poor",
            LikertBand::Low => "Low",
            LikertBand::Medium => "Medium",
            LikertBand::Good => "Good",
            LikertBand::Excellent => "Excellent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFractions {
    pub n: usize,
    /// Poor, Low, Medium, Good, Excellent.
    pub counts: [usize; 5],
    pub fractions: [f64; 5],
}

impl BandFractions {
    pub fn fraction(&self, band: LikertBand) -> f64 {
        self.fractions[band as usize]
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn band_fractions(scores: &[f64]) -> Result<BandFractions, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut counts = [0usize; 5];
    for &s in scores {
        counts[LikertBand::classify(s)? as usize] += 1;
    }
    let n = scores.len();
    let mut fractions = counts.map(|c| c as f64 / n as f64);
    // Put the rounding residue on the largest band so the fractions sum to 1.
    let residue = 1.0 - compensated_sum(fractions);
    if residue != 0.0 {
        let largest = (0..5).max_by_key(|&i| counts[i]).unwrap_or(0);
        fractions[largest] += residue;
    }
    Ok(BandFractions { n, counts, fractions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn box_with_outlier() {
        let b = box_summary(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 4.0));
        assert_eq!((b.min, b.max), (1.0, 100.0));
    }

    #[test]
    fn constant_box() {
        let b = box_summary(&[4.0, 4.0, 4.0]).unwrap();
        for v in [b.min, b.q1, b.median, b.q3, b.max, b.whisker_low, b.whisker_high] {
            assert_eq!(v, 4.0);
        }
        assert!(b.outliers.is_empty());
        assert_eq!(box_summary(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn bands() {
        let f = band_fractions(&[4.2, 4.6]).unwrap();
        assert_eq!(f.fraction(LikertBand::Excellent), 1.0);
        let f = band_fractions(&[0.5, 1.5, 2.5, 3.5, 4.5]).unwrap();
        assert_eq!(f.fractions, [0.2; 5]);
        assert_eq!(LikertBand::classify(4.0), Ok(LikertBand::Excellent));
        assert_eq!(LikertBand::classify(5.0), Ok(LikertBand::Excellent));
        assert_eq!(LikertBand::classify(3.9), Ok(LikertBand::Good));
        assert_eq!(LikertBand::classify(1.0), Ok(LikertBand::Low));
        assert_eq!(LikertBand::classify(0.0), Ok(LikertBand::Poor));
        assert_eq!(band_fractions(&[5.1]), Err(StatsError::ScoreOutOfRange(5.1)));
        assert_eq!(band_fractions(&[-0.1]), Err(StatsError::ScoreOutOfRange(-0.1)));
    }

    #[test]
    fn every_grid_score_has_one_band() {
        for tenths in 0..=50u32 {
            let s = tenths as f64 / 10.0;
            let band = LikertBand::classify(s).unwrap();
            let expected = (tenths / 10).min(4) as usize;
            assert_eq!(band as usize, expected, "score {s}");
        }
    }

    /// Sort-based oracle: the interpolated quantile by explicit ranks.
    fn oracle_quantile(v: &[f64], q: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q * (s.len() as f64 - 1.0);
        let (i, frac) = (pos as usize, pos - (pos as usize) as f64);
        if i + 1 < s.len() {
            s[i] * (1.0 - frac) + s[i + 1] * frac
        } else {
            s[i]
        }
    }

    proptest! {
        #[test]
        fn box_matches_sort_oracle(v in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let b = box_summary(&v).unwrap();
            for (got, q) in [(b.q1, 0.25), (b.median, 0.5), (b.q3, 0.75)] {
                prop_assert!((got - oracle_quantile(&v, q)).abs() < 1e-9);
            }
            let iqr = b.q3 - b.q1;
            let outliers = v.iter().filter(|x| **x < b.q1 - 1.5 * iqr || **x > b.q3 + 1.5 * iqr).count();
            prop_assert_eq!(b.outliers.len(), outliers);
            prop_assert!(b.whisker_low >= b.min && b.whisker_high <= b.max);
        }

        #[test]
        fn band_fractions_sum_to_one(v in prop::collection::vec(0u8..=50, 1..500)) {
            let scores: Vec<f64> = v.iter().map(|t| *t as f64 / 10.0).collect();
            let f = band_fractions(&scores).unwrap();
            prop_assert_eq!(f.counts.iter().sum::<usize>(), scores.len());
            prop_assert_eq!(compensated_sum(f.fractions), 1.0);
        }
    }
}
