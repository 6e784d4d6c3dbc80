//! Reconstruction: sampling masks, the reference backends and the backend
//! registry jobs dispatch through.
//!
//! Images are laid out with `height = phase` rows and `width = readout`
//! columns. Both reference backends work per slice and per coil on the
//! unitary 2-D DFT and combine coils by root-sum-of-squares.

mod fourier;
mod haar;
mod mask;
mod registry;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rawdata::{Identity, ImageSeries, KSpaceVolume, PixelMeta, View};

pub use fourier::Fft2;
pub use haar::{haar_forward, haar_inverse};
pub use mask::{
    golden_angle_increment, golden_angle_spokes, make_cartesian_mask_1d, make_random_mask_2d, SamplingMask,
};
pub use registry::{
    ista_descriptor, mask_from_params, zero_fill_descriptor, BackendDescriptor, BackendRegistry, Executor,
    ParamKind, ParamSpec, ParamValues,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("sampling rate {0} outside (0, 1]")]
    InvalidRate(f64),
    #[error("center fraction {center_fraction} outside [0, rate={rate}]")]
    InvalidCenterFraction { center_fraction: f64, rate: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("parameter `{name}`: {reason}")]
    Param { name: String, reason: String },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("backend failed: {0}")]
    Backend(String),
}

impl ReconError {
    pub fn code(&self) -> &'static str {
        match self {
            ReconError::DimMismatch(_) => "dim_mismatch",
            ReconError::InvalidRate(_) => "invalid_rate",
            ReconError::InvalidCenterFraction { .. } => "invalid_center_fraction",
            ReconError::InvalidParams(_) | ReconError::Param { .. } => "invalid_params",
            ReconError::UnknownBackend(_) => "unknown_backend",
            ReconError::DuplicateBackend(_) => "duplicate_backend",
            ReconError::InvalidDescriptor(_) => "invalid_descriptor",
            ReconError::Backend(_) => "backend_failed",
        }
    }
}

/// Iterative soft-thresholding settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    pub iterations: usize,
    /// Soft-threshold applied to every Haar coefficient.
    pub threshold: f64,
    /// Gradient step; 1 is the Lipschitz step for the unitary operators used.
    pub step: f64,
    pub mask_seed: u64,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            iterations: 100,
            threshold: 0.01,
            step: 1.0,
            mask_seed: 0,
        }
    }
}

impl ReconParams {
    pub fn validate(&self) -> Result<(), ReconError> {
        if self.iterations < 1 {
            return Err(ReconError::InvalidParams("iterations must be >= 1".into()));
        }
        if !(self.threshold >= 0.0) {
            return Err(ReconError::InvalidParams("threshold must be >= 0".into()));
        }
        if !(self.step > 0.0) {
            return Err(ReconError::InvalidParams("step must be > 0".into()));
        }
        Ok(())
    }
}

/// Unquantized reconstruction output.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub width: usize,
    pub height: usize,
    /// Per slice, row-major magnitudes.
    pub magnitudes: Vec<Vec<f64>>,
    /// Data-consistency residual `||M(F W^H x) - y||` after each iteration,
    /// summed in quadrature over slices and coils. Empty for zero-filling.
    pub residuals: Vec<f64>,
}

impl Reconstruction {
    /// Scales into 16-bit rasters, recording the unquantized range.
    pub fn to_series(&self, view: View, method_tag: &str, identity: Option<Identity>) -> ImageSeries {
        let all = self.magnitudes.iter().flatten();
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let span = hi - lo;
        let slices = self
            .magnitudes
            .iter()
            .map(|plane| {
                plane
                    .iter()
                    .map(|&v| {
                        if span > 0.0 {
                            ((v - lo) / span * u16::MAX as f64).round() as u16
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        ImageSeries {
            width: self.width,
            height: self.height,
            slices,
            view,
            method_tag: method_tag.to_string(),
            identity,
            pixel_meta: PixelMeta {
                intensity_min: lo,
                intensity_max: hi,
            },
        }
    }
}

fn check_dims(vol: &KSpaceVolume, mask: &SamplingMask) -> Result<(), ReconError> {
    let d = vol.dims();
    if d.phase != mask.phase() || d.readout != mask.readout() {
        return Err(ReconError::DimMismatch(format!(
            "volume is {}x{} (phase x readout), mask is {}x{}",
            d.phase,
            d.readout,
            mask.phase(),
            mask.readout()
        )));
    }
    Ok(())
}

fn masked_plane(vol: &KSpaceVolume, mask: &SamplingMask, slice: usize, coil: usize) -> Vec<Complex64> {
    vol.plane(slice, coil)
        .iter()
        .zip(mask.bits())
        .map(|(s, &keep)| {
            if keep {
                Complex64::new(s.re as f64, s.im as f64)
            } else {
                Complex64::default()
            }
        })
        .collect()
}

fn add_rss(acc: &mut [f64], coil_image: &[Complex64]) {
    for (a, v) in acc.iter_mut().zip(coil_image) {
        *a += v.norm_sqr();
    }
}

/// Masked inverse DFT per coil, root-sum-of-squares across coils.
pub fn zero_fill(vol: &KSpaceVolume, mask: &SamplingMask) -> Result<Reconstruction, ReconError> {
    check_dims(vol, mask)?;
    let d = vol.dims();
    let fft = Fft2::new(d.phase, d.readout);
    let mut magnitudes = Vec::with_capacity(d.slices);
    for s in 0..d.slices {
        let mut sumsq = vec![0.0; d.plane_len()];
        for c in 0..d.coils {
            let mut plane = masked_plane(vol, mask, s, c);
            fft.inverse(&mut plane);
            add_rss(&mut sumsq, &plane);
        }
        magnitudes.push(sumsq.into_iter().map(f64::sqrt).collect());
    }
    Ok(Reconstruction {
        width: d.readout,
        height: d.phase,
        magnitudes,
        residuals: Vec::new(),
    })
}

fn soft_threshold(coeffs: &mut [Complex64], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for c in coeffs {
        let mag = c.norm();
        *c = if mag > lambda {
            *c * ((mag - lambda) / mag)
        } else {
            Complex64::default()
        };
    }
}

/// Iterative soft-thresholding in the Haar domain with masked Fourier data
/// consistency, started from the zero-filled image.
pub fn ista(
    vol: &KSpaceVolume,
    mask: &SamplingMask,
    params: &ReconParams,
) -> Result<Reconstruction, ReconError> {
    check_dims(vol, mask)?;
    params.validate()?;
    let d = vol.dims();
    let (rows, cols) = (d.phase, d.readout);
    let fft = Fft2::new(rows, cols);
    let keep = mask.bits();

    let mut residual_sq = vec![0.0; params.iterations];
    let mut magnitudes = Vec::with_capacity(d.slices);
    for s in 0..d.slices {
        let mut sumsq = vec![0.0; d.plane_len()];
        for c in 0..d.coils {
            let measured = masked_plane(vol, mask, s, c);
            let mut coeffs = measured.clone();
            fft.inverse(&mut coeffs);
            haar_forward(&mut coeffs, rows, cols);

            let mut image = vec![Complex64::default(); rows * cols];
            let mut kspace = vec![Complex64::default(); rows * cols];
            for residual in residual_sq.iter_mut() {
                image.copy_from_slice(&coeffs);
                haar_inverse(&mut image, rows, cols);
                kspace.copy_from_slice(&image);
                fft.forward(&mut kspace);
                for ((k, &m), y) in kspace.iter_mut().zip(keep).zip(&measured) {
                    *k = if m { *k - y } else { Complex64::default() };
                }
                fft.inverse(&mut kspace);
                for (x, g) in image.iter_mut().zip(&kspace) {
                    *x -= g * params.step;
                }
                haar_forward(&mut image, rows, cols);
                soft_threshold(&mut image, params.threshold);
                coeffs.copy_from_slice(&image);

                *residual += data_residual_sq(&coeffs, &measured, keep, &fft, rows, cols);
            }

            haar_inverse(&mut coeffs, rows, cols);
            add_rss(&mut sumsq, &coeffs);
        }
        magnitudes.push(sumsq.into_iter().map(f64::sqrt).collect());
    }
    Ok(Reconstruction {
        width: cols,
        height: rows,
        magnitudes,
        residuals: residual_sq.into_iter().map(f64::sqrt).collect(),
    })
}

fn data_residual_sq(
    coeffs: &[Complex64],
    measured: &[Complex64],
    keep: &[bool],
    fft: &Fft2,
    rows: usize,
    cols: usize,
) -> f64 {
    let mut k = coeffs.to_vec();
    haar_inverse(&mut k, rows, cols);
    fft.forward(&mut k);
    k.iter()
        .zip(measured)
        .zip(keep)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).norm_sqr())
        .sum()
}

fn series_view(vol: &KSpaceVolume) -> View {
    vol.meta()
        .get("view")
        .and_then(|v| v.parse().ok())
        .unwrap_or(View::None)
}

/// Identity fields carried in k-space metadata, if any were supplied.
pub fn identity_from_meta(vol: &KSpaceVolume) -> Option<Identity> {
    let meta = vol.meta();
    let field = |k: &str| meta.get(k).cloned().unwrap_or_default();
    let present = ["patient_name", "patient_id", "birth_date", "institution"]
        .iter()
        .any(|k| meta.contains_key(*k));
    present.then(|| Identity {
        patient_name: field("patient_name"),
        patient_id: field("patient_id"),
        birth_date: field("birth_date"),
        institution: field("institution"),
    })
}

pub fn zero_fill_recon(vol: &KSpaceVolume, mask: &SamplingMask) -> Result<ImageSeries, ReconError> {
    Ok(zero_fill(vol, mask)?.to_series(series_view(vol), "zero_fill", identity_from_meta(vol)))
}

pub fn ista_recon(
    vol: &KSpaceVolume,
    mask: &SamplingMask,
    params: &ReconParams,
) -> Result<ImageSeries, ReconError> {
    Ok(ista(vol, mask, params)?.to_series(series_view(vol), "ista", identity_from_meta(vol)))
}

/// Peak signal-to-noise ratio in dB with the reference maximum as peak.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(recon: &[f64], reference: &[f64]) -> Result<f64, ReconError> {
    if recon.len() != reference.len() || recon.is_empty() {
        return Err(ReconError::DimMismatch(format!(
            "{} vs {} pixels",
            recon.len(),
            reference.len()
        )));
    }
    let mse = recon
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / recon.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Per-slice PSNR on intensities mapped back through each series' range.
pub fn compute_psnr(recon: &ImageSeries, reference: &ImageSeries) -> Result<Vec<f64>, ReconError> {
    if (recon.width, recon.height, recon.slices.len())
        != (reference.width, reference.height, reference.slices.len())
    {
        return Err(ReconError::DimMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            recon.width,
            recon.height,
            recon.slices.len(),
            reference.width,
            reference.height,
            reference.slices.len()
        )));
    }
    recon
        .slices
        .iter()
        .zip(&reference.slices)
        .map(|(a, b)| {
            let a: Vec<f64> = a.iter().map(|&p| recon.intensity(p)).collect();
            let b: Vec<f64> = b.iter().map(|&p| reference.intensity(p)).collect();
            psnr(&a, &b)
        })
        .collect()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Synthetic k-space: each coil sees `image` weighted by a smooth sensitivity,
/// transformed with the unitary DFT.
pub fn simulate_kspace(
    images: &[Vec<f64>],
    rows: usize,
    cols: usize,
    coils: usize,
) -> Result<KSpaceVolume, ReconError> {
    use crate::rawdata::KSpaceDims;
    use rustfft::num_complex::Complex32;

    let fft = Fft2::new(rows, cols);
    let mut samples = Vec::with_capacity(images.len() * coils * rows * cols);
    for image in images {
        if image.len() != rows * cols {
            return Err(ReconError::DimMismatch("phantom size".into()));
        }
        for c in 0..coils {
            let mut plane: Vec<Complex64> = image
                .iter()
                .enumerate()
                .map(|(i, &v)| v * coil_sensitivity(c, coils, i / cols, i % cols, rows, cols))
                .collect();
            fft.forward(&mut plane);
            samples.extend(plane.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)));
        }
    }
    let dims = KSpaceDims {
        readout: cols,
        phase: rows,
        coils,
        slices: images.len(),
    };
    KSpaceVolume::new(dims, samples).map_err(|e| ReconError::DimMismatch(e.to_string()))
}

/// Smooth complex coil weight; a single coil is uniform.
pub fn coil_sensitivity(
    coil: usize,
    coils: usize,
    r: usize,
    c: usize,
    rows: usize,
    cols: usize,
) -> Complex64 {
    if coils == 1 {
        return Complex64::new(1.0, 0.0);
    }
    let angle = std::f64::consts::TAU * coil as f64 / coils as f64;
    let (cy, cx) = (0.5 + 0.6 * angle.sin(), 0.5 + 0.6 * angle.cos());
    let (y, x) = (r as f64 / rows as f64, c as f64 / cols as f64);
    let dist2 = (y - cy).powi(2) + (x - cx).powi(2);
    Complex64::from_polar((-dist2 / 0.5).exp(), angle + 0.5 * x)
}

/// Piecewise-constant test object: an ellipse with nested blocks and disks.
pub fn piecewise_phantom(rows: usize, cols: usize, variant: u64) -> Vec<f64> {
    let shift = (variant % 5) as f64 * 0.02;
    let mut img = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let y = (r as f64 + 0.5) / rows as f64 - 0.5;
            let x = (c as f64 + 0.5) / cols as f64 - 0.5;
            let mut v = 0.0;
            if (x / 0.42).powi(2) + (y / 0.46).powi(2) <= 1.0 {
                v = 0.6;
            }
            if (x / 0.36).powi(2) + (y / 0.40).powi(2) <= 1.0 {
                v = 0.3;
            }
            if (-0.2 + shift..0.05 + shift).contains(&x) && (-0.25..-0.05).contains(&y) {
                v = 0.9;
            }
            if (x - 0.15).powi(2) + (y - 0.15 - shift).powi(2) <= 0.01 {
                v = 1.0;
            }
            if (x + 0.15).powi(2) + (y - 0.2).powi(2) <= 0.0036 {
                v = 0.1;
            }
            img[r * cols + c] = v;
        }
    }
    img
}
