//! Single-level orthonormal 2-D Haar transform.
//!
//! Along each axis the first `n/2` outputs are pair averages, the next `n/2`
//! pair differences (both scaled by 1/sqrt 2); an odd trailing sample passes
//! through unchanged. The transform is its own adjoint's inverse.

use rustfft::num_complex::Complex64;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn forward_1d(input: &[Complex64], out: &mut [Complex64]) {
    let n = input.len();
    let h = n / 2;
    for i in 0..h {
        let (a, b) = (input[2 * i], input[2 * i + 1]);
        out[i] = (a + b) * INV_SQRT2;
        out[h + i] = (a - b) * INV_SQRT2;
    }
    if n % 2 == 1 {
        out[n - 1] = input[n - 1];
    }
}

fn inverse_1d(input: &[Complex64], out: &mut [Complex64]) {
    let n = input.len();
    let h = n / 2;
    for i in 0..h {
        let (s, d) = (input[i], input[h + i]);
        out[2 * i] = (s + d) * INV_SQRT2;
        out[2 * i + 1] = (s - d) * INV_SQRT2;
    }
    if n % 2 == 1 {
        out[n - 1] = input[n - 1];
    }
}

fn separable(data: &mut [Complex64], rows: usize, cols: usize, step: fn(&[Complex64], &mut [Complex64])) {
    assert_eq!(data.len(), rows * cols, "grid size mismatch");
    let mut buf = vec![Complex64::default(); rows.max(cols)];
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        step(row, &mut buf[..cols]);
        row.copy_from_slice(&buf[..cols]);
    }
    let mut column = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        step(&column, &mut buf[..rows]);
        for r in 0..rows {
            data[r * cols + c] = buf[r];
        }
    }
}

/// Image to coefficients, in place.
pub fn haar_forward(data: &mut [Complex64], rows: usize, cols: usize) {
    separable(data, rows, cols, forward_1d);
}

/// Coefficients to image, in place.
pub fn haar_inverse(data: &mut [Complex64], rows: usize, cols: usize) {
    // Axis steps commute, so undoing rows before columns is fine.
    separable(data, rows, cols, inverse_1d);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn energy_preserved_and_invertible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for (rows, cols) in [(8, 8), (5, 7), (1, 1), (2, 9), (33, 16)] {
            for _ in 0..20 {
                let x: Vec<Complex64> = (0..rows * cols)
                    .map(|_| Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                    .collect();
                let mut y = x.clone();
                haar_forward(&mut y, rows, cols);
                assert!((norm(&y) - norm(&x)).abs() <= 1e-9 * norm(&x));
                haar_inverse(&mut y, rows, cols);
                let err: f64 = y
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(err <= 1e-9 * norm(&x));
            }
        }
    }

    #[test]
    fn inverse_is_adjoint() {
        // <W x, y> == <x, W^H y> for random x, y
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let (rows, cols) = (6, 7);
        let rand_vec = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Complex64> {
            (0..rows * cols)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        };
        let (x, y) = (rand_vec(&mut rng), rand_vec(&mut rng));
        let mut wx = x.clone();
        haar_forward(&mut wx, rows, cols);
        let mut why = y.clone();
        haar_inverse(&mut why, rows, cols);
        let lhs: Complex64 = wx.iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = x.iter().zip(&why).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let (rows, cols) = (4, 4);
        let mut x = vec![Complex64::new(2.0, 0.0); rows * cols];
        haar_forward(&mut x, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = x[r * cols + c];
                if r < 2 && c < 2 {
                    assert!((v.re - 4.0).abs() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12);
                }
            }
        }
    }
}
