use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReconError;

/// Which `(phase, readout)` locations of k-space were acquired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    phase: usize,
    readout: usize,
    /// Row-major, `phase` rows of `readout` entries.
    kept: Vec<bool>,
    rate: f64,
}

impl SamplingMask {
    pub fn from_bits(phase: usize, readout: usize, kept: Vec<bool>) -> Result<Self, ReconError> {
        if kept.len() != phase * readout || phase == 0 || readout == 0 {
            return Err(ReconError::DimMismatch(format!(
                "mask of {} bits for {phase}x{readout}",
                kept.len()
            )));
        }
        let rate = kept.iter().filter(|k| **k).count() as f64 / kept.len() as f64;
        Ok(Self {
            phase,
            readout,
            kept,
            rate,
        })
    }

    pub fn full(phase: usize, readout: usize) -> Self {
        Self {
            phase,
            readout,
            kept: vec![true; phase * readout],
            rate: 1.0,
        }
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn readout(&self) -> usize {
        self.readout
    }

    /// Requested sampling rate.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn bits(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, phase: usize, readout: usize) -> bool {
        self.kept[phase * self.readout + readout]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }

    /// Phase lines with at least one kept sample.
    pub fn kept_lines(&self) -> Vec<usize> {
        (0..self.phase)
            .filter(|&p| {
                self.kept[p * self.readout..(p + 1) * self.readout]
                    .iter()
                    .any(|k| *k)
            })
            .collect()
    }
}

fn check_rates(rate: f64, center_fraction: f64) -> Result<(), ReconError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ReconError::InvalidRate(rate));
    }
    if !(0.0..=rate).contains(&center_fraction) {
        return Err(ReconError::InvalidCenterFraction {
            center_fraction,
            rate,
        });
    }
    Ok(())
}

/// Start of a centered band of `len` items within `n`.
fn centered(n: usize, len: usize) -> usize {
    (n / 2).saturating_sub(len / 2).min(n - len)
}

/// Variable-density 1D Cartesian mask: a fully sampled central band of
/// `round(center_fraction * phase)` lines, the rest of the
/// `round(rate * phase)` lines drawn uniformly. Kept lines span the readout.
pub fn make_cartesian_mask_1d(
    phase: usize,
    readout: usize,
    rate: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask, ReconError> {
    check_rates(rate, center_fraction)?;
    if phase == 0 || readout == 0 {
        return Err(ReconError::DimMismatch("empty mask".into()));
    }
    let total = ((rate * phase as f64).round() as usize).min(phase);
    let center = ((center_fraction * phase as f64).round() as usize).min(total);
    let start = centered(phase, center);

    let mut lines = vec![false; phase];
    lines[start..start + center].fill(true);
    let outside: Vec<usize> = (0..phase).filter(|&p| !lines[p]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, outside.len(), total - center) {
        lines[outside[i]] = true;
    }

    let kept = lines
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, readout))
        .collect();
    Ok(SamplingMask {
        phase,
        readout,
        kept,
        rate,
    })
}

/// Pointwise random mask with a fully kept central square of side
/// `round(sqrt(center_fraction) * min(phase, readout))`.
pub fn make_random_mask_2d(
    phase: usize,
    readout: usize,
    rate: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask, ReconError> {
    check_rates(rate, center_fraction)?;
    if phase == 0 || readout == 0 {
        return Err(ReconError::DimMismatch("empty mask".into()));
    }
    let n = phase * readout;
    let total = ((rate * n as f64).round() as usize).min(n);
    let side =
        ((center_fraction.sqrt() * phase.min(readout) as f64).round() as usize).min(phase.min(readout));
    let (p0, r0) = (centered(phase, side), centered(readout, side));

    let mut kept = vec![false; n];
    for p in p0..p0 + side {
        kept[p * readout + r0..p * readout + r0 + side].fill(true);
    }
    let center = side * side;
    let outside: Vec<usize> = (0..n).filter(|&i| !kept[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, outside.len(), total.saturating_sub(center)) {
        kept[outside[i]] = true;
    }
    Ok(SamplingMask {
        phase,
        readout,
        kept,
        rate,
    })
}

/// `(1 - 1/phi) * 180` degrees.
pub fn golden_angle_increment() -> f64 {
    180.0 * (5f64.sqrt() - 1.0) / 2.0
}

/// Radial spoke angles in degrees, `k * increment mod 180`.
pub fn golden_angle_spokes(n: usize) -> Vec<f64> {
    let inc = golden_angle_increment();
    (0..n).map(|k| (k as f64 * inc).rem_euclid(180.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rate_keeps_everything() {
        let m = make_cartesian_mask_1d(64, 8, 1.0, 0.08, 1).unwrap();
        assert_eq!(m.kept_count(), 64 * 8);
        let m = make_random_mask_2d(16, 12, 1.0, 0.5, 1).unwrap();
        assert!(m.bits().iter().all(|k| *k));
    }

    #[test]
    fn cartesian_counts() {
        // round(0.33 * 320) = 106, round(0.08 * 320) = 26
        let m = make_cartesian_mask_1d(320, 4, 0.33, 0.08, 42).unwrap();
        let lines = m.kept_lines();
        assert_eq!(lines.len(), 106);
        assert_eq!(m.kept_count(), 106 * 4);
        let center: Vec<usize> = (147..173).collect();
        assert!(center.iter().all(|p| lines.contains(p)));
        for &p in &lines {
            assert!((0..4).all(|r| m.is_kept(p, r)), "line {p} partially kept");
        }
    }

    #[test]
    fn cartesian_seed_determinism() {
        let a = make_cartesian_mask_1d(320, 1, 0.25, 0.08, 7).unwrap();
        let b = make_cartesian_mask_1d(320, 1, 0.25, 0.08, 7).unwrap();
        let c = make_cartesian_mask_1d(320, 1, 0.25, 0.08, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.kept_count(), c.kept_count());
        assert_eq!(a.kept_count(), 80);
    }

    #[test]
    fn random_2d_counts() {
        let m = make_random_mask_2d(320, 320, 0.25, 0.08, 3).unwrap();
        assert!(m.kept_count().abs_diff(25_600) <= 1);
        let side = (0.08f64.sqrt() * 320.0).round() as usize;
        let s0 = 160 - side / 2;
        for p in s0..s0 + side {
            for r in s0..s0 + side {
                assert!(m.is_kept(p, r));
            }
        }
        let again = make_random_mask_2d(320, 320, 0.25, 0.08, 3).unwrap();
        let other = make_random_mask_2d(320, 320, 0.25, 0.08, 4).unwrap();
        assert_eq!(m, again);
        assert_ne!(m, other);
        assert_eq!(m.kept_count(), other.kept_count());
    }

    #[test]
    fn rate_errors() {
        assert!(matches!(
            make_cartesian_mask_1d(10, 1, 0.0, 0.0, 0),
            Err(ReconError::InvalidRate(_))
        ));
        assert!(matches!(
            make_cartesian_mask_1d(10, 1, 1.5, 0.0, 0),
            Err(ReconError::InvalidRate(_))
        ));
        assert!(matches!(
            make_random_mask_2d(10, 10, 0.2, 0.3, 0),
            Err(ReconError::InvalidCenterFraction { .. })
        ));
    }

    #[test]
    fn golden_angles() {
        assert_eq!(golden_angle_spokes(1), vec![0.0]);
        assert!((golden_angle_increment() - 111.246_117_974_981_07).abs() < 1e-9);
        let angles = golden_angle_spokes(135);
        assert!(angles.iter().all(|a| (0.0..180.0).contains(a)));
        for i in 0..angles.len() {
            for j in i + 1..angles.len() {
                assert!((angles[i] - angles[j]).abs() > 1e-6, "spokes {i} and {j} collide");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn cartesian_count_is_exact(phase in 1usize..400, rate in 0.01f64..=1.0, cf in 0f64..=1.0, seed: u64) {
            let cf = cf * rate;
            let m = make_cartesian_mask_1d(phase, 2, rate, cf, seed).unwrap();
            proptest::prop_assert_eq!(m.kept_lines().len(), (rate * phase as f64).round() as usize);
        }
    }
}
