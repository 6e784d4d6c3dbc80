//! Tail probabilities evaluated in log space so that p-values far below
//! `f64::MIN_POSITIVE` still carry a usable exponent.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

const CF_EPS: f64 = 1e-16;
const CF_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `ln I_x(a, b)`. `one_minus_x` is passed separately to avoid cancellation
/// when `x` is close to 1.
pub fn ln_beta_reg(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if one_minus_x <= 0.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() + b * one_minus_x.ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front + beta_cf(a, b, x).ln() - a.ln()
    } else {
        let complement = (ln_front + beta_cf(b, a, one_minus_x).ln() - b.ln()).exp();
        (-complement).ln_1p()
    }
}

/// Natural log of the two-sided Student-t tail `P(|T_v| >= |t|)`.
pub fn ln_student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let one_minus_x = t2 / (df + t2);
    ln_beta_reg(df / 2.0, 0.5, x, one_minus_x)
}

/// Natural log of the standard normal lower tail `Phi(-z)` for `z >= 0`.
pub fn ln_normal_upper_tail(z: f64) -> f64 {
    let z = z.abs();
    if z < 25.0 {
        return (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln();
    }
    // Asymptotic expansion of the Mills ratio.
    let z2 = z * z;
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) / z2;
        series += term;
    }
    -0.5 * z2 - z.ln() - 0.5 * std::f64::consts::TAU.ln() + series.ln()
}

/// Natural log of the two-sided normal p-value `2 Phi(-|z|)`.
pub fn ln_normal_two_sided(z: f64) -> f64 {
    std::f64::consts::LN_2 + ln_normal_upper_tail(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_reg_known_values() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_0.5(a, a) = 0.5
        for x in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((ln_beta_reg(1.0, 1.0, x, 1.0 - x).exp() - x).abs() < 1e-14);
            assert!((ln_beta_reg(3.5, 1.0, x, 1.0 - x).exp() - x.powf(3.5)).abs() < 1e-13);
        }
        for a in [0.5, 2.0, 10.0, 98.5] {
            assert!((ln_beta_reg(a, a, 0.5, 0.5).exp() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn student_t_matches_closed_forms() {
        // df = 1 is Cauchy: two-sided tail = 1 - 2 atan(t) / pi
        for t in [0.1, 1.0, 3.0, 50.0] {
            let want = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            let got = ln_student_t_two_sided(t, 1.0).exp();
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "t={t}");
        }
        // df = 2: two-sided tail = 1 - t / sqrt(2 + t^2)
        for t in [0.5f64, 2.0, 10.0] {
            let want = 1.0 - t / (2.0 + t * t).sqrt();
            let got = ln_student_t_two_sided(t, 2.0).exp();
            assert!((got - want).abs() <= 1e-12 * want, "t={t}");
        }
        assert_eq!(ln_student_t_two_sided(0.0, 5.0), 0.0);
        assert_eq!(
            ln_student_t_two_sided(-2.0, 9.0),
            ln_student_t_two_sided(2.0, 9.0)
        );
    }

    #[test]
    fn extreme_tail_does_not_underflow() {
        // reference values from 50-digit mpmath
        let ln_p = ln_student_t_two_sided(200.0, 197.0);
        assert!((ln_p - -526.723_106_285_942_4).abs() < 1e-9 * 526.0, "{ln_p}");
        let ln_q = ln_normal_two_sided(60.0);
        assert!(ln_q.is_finite() && ln_q < -1700.0);
    }

    #[test]
    fn normal_tail_is_continuous_at_switch() {
        let below = ln_normal_upper_tail(25.0 - 1e-9);
        let above = ln_normal_upper_tail(25.0);
        assert!((below - -316.639_407_982_980_4).abs() < 1e-10, "{below}");
        assert!((above - -316.639_408_008_020_3).abs() < 1e-10, "{above}");
        // Phi(-1.959963984540054) = 0.025
        let p = ln_normal_two_sided(1.959_963_984_540_054).exp();
        assert!((p - 0.05).abs() < 5e-12, "{p}");
    }
}
