use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    ista_recon, make_cartesian_mask_1d, make_random_mask_2d, zero_fill_recon, ReconError, ReconParams,
    SamplingMask,
};
use crate::rawdata::{ImageSeries, KSpaceVolume};

pub type ParamValues = BTreeMap<String, Value>;

/// Runs one reconstruction with already-resolved parameters.
pub type Executor = Arc<dyn Fn(&KSpaceVolume, &ParamValues) -> Result<ImageSeries, ReconError> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Float,
    Enum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamKind,
    pub default: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    pub help_text: String,
}

impl ParamSpec {
    pub fn int(name: &str, default: i64, min: i64, max: i64, help: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Int,
            default: Value::from(default),
            min: Some(min as f64),
            max: Some(max as f64),
            choices: Vec::new(),
            help_text: help.into(),
        }
    }

    pub fn float(name: &str, default: f64, min: f64, max: f64, help: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Float,
            default: Value::from(default),
            min: Some(min),
            max: Some(max),
            choices: Vec::new(),
            help_text: help.into(),
        }
    }

    pub fn choice(name: &str, default: &str, choices: &[&str], help: &str) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Enum,
            default: Value::from(default),
            min: None,
            max: None,
            choices: choices.iter().map(|c| c.to_string()).collect(),
            help_text: help.into(),
        }
    }

    /// Checks `value` against this spec and returns its canonical form.
    pub fn check(&self, value: &Value) -> Result<Value, ReconError> {
        let err = |reason: String| ReconError::Param {
            name: self.name.clone(),
            reason,
        };
        let in_bounds = |x: f64| -> Result<(), ReconError> {
            if let Some(min) = self.min {
                if x < min {
                    return Err(err(format!("{x} is below the minimum {min}")));
                }
            }
            if let Some(max) = self.max {
                if x > max {
                    return Err(err(format!("{x} is above the maximum {max}")));
                }
            }
            Ok(())
        };
        match self.kind {
            ParamKind::Int => {
                let x = value
                    .as_i64()
                    .or_else(|| value.as_str().and_then(|s| s.trim().parse().ok()))
                    .ok_or_else(|| err(format!("expected an integer, got {value}")))?;
                in_bounds(x as f64)?;
                Ok(Value::from(x))
            }
            ParamKind::Float => {
                let x = value
                    .as_f64()
                    .or_else(|| value.as_str().and_then(|s| s.trim().parse().ok()))
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| err(format!("expected a number, got {value}")))?;
                in_bounds(x)?;
                Ok(Value::from(x))
            }
            ParamKind::Enum => {
                let s = value
                    .as_str()
                    .ok_or_else(|| err(format!("expected one of {:?}", self.choices)))?;
                if !self.choices.iter().any(|c| c == s) {
                    return Err(err(format!("`{s}` is not one of {:?}", self.choices)));
                }
                Ok(Value::from(s))
            }
        }
    }
}

/// What the parameter page of a backend shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub display_name: String,
    pub param_schema: Vec<ParamSpec>,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), ReconError> {
        if self.backend_id.is_empty() {
            return Err(ReconError::InvalidDescriptor("empty backend id".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for spec in &self.param_schema {
            if !seen.insert(&spec.name) {
                return Err(ReconError::InvalidDescriptor(format!(
                    "duplicate parameter `{}`",
                    spec.name
                )));
            }
            if let (Some(min), Some(max)) = (spec.min, spec.max) {
                if min > max {
                    return Err(ReconError::InvalidDescriptor(format!(
                        "`{}` has min > max",
                        spec.name
                    )));
                }
            }
            spec.check(&spec.default)
                .map_err(|e| ReconError::InvalidDescriptor(format!("default out of bounds: {e}")))?;
        }
        Ok(())
    }

    /// Validates supplied values and fills defaults. Unknown names are errors.
    pub fn resolve(&self, supplied: &ParamValues) -> Result<ParamValues, ReconError> {
        if let Some(unknown) = supplied
            .keys()
            .find(|k| !self.param_schema.iter().any(|s| &s.name == *k))
        {
            return Err(ReconError::Param {
                name: unknown.clone(),
                reason: format!("not a parameter of `{}`", self.backend_id),
            });
        }
        self.param_schema
            .iter()
            .map(|spec| {
                let v = supplied.get(&spec.name).unwrap_or(&spec.default);
                Ok((spec.name.clone(), spec.check(v)?))
            })
            .collect()
    }
}

struct Entry {
    descriptor: BackendDescriptor,
    executor: Executor,
}

/// Backends selectable by jobs. Read-mostly; registration takes the write lock.
pub struct BackendRegistry {
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_reference_backends()
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Registry holding `zero_fill` and `ista`.
    pub fn with_reference_backends() -> Self {
        let reg = Self::empty();
        reg.register_backend(zero_fill_descriptor(), Arc::new(run_zero_fill))
            .expect("reference backend");
        reg.register_backend(ista_descriptor(), Arc::new(run_ista))
            .expect("reference backend");
        reg
    }

    pub fn register_backend(
        &self,
        descriptor: BackendDescriptor,
        executor: Executor,
    ) -> Result<(), ReconError> {
        descriptor.validate()?;
        let mut entries = self.entries.write();
        if entries.contains_key(&descriptor.backend_id) {
            return Err(ReconError::DuplicateBackend(descriptor.backend_id));
        }
        entries.insert(descriptor.backend_id.clone(), Entry { descriptor, executor });
        Ok(())
    }

    pub fn list_backends(&self) -> Vec<BackendDescriptor> {
        self.entries
            .read()
            .values()
            .map(|e| e.descriptor.clone())
            .collect()
    }

    pub fn descriptor(&self, backend_id: &str) -> Result<BackendDescriptor, ReconError> {
        self.entries
            .read()
            .get(backend_id)
            .map(|e| e.descriptor.clone())
            .ok_or_else(|| ReconError::UnknownBackend(backend_id.to_string()))
    }

    /// Resolves parameters and runs the backend.
    pub fn run(
        &self,
        backend_id: &str,
        vol: &KSpaceVolume,
        params: &ParamValues,
    ) -> Result<ImageSeries, ReconError> {
        let (resolved, exec) = {
            let entries = self.entries.read();
            let entry = entries
                .get(backend_id)
                .ok_or_else(|| ReconError::UnknownBackend(backend_id.to_string()))?;
            (entry.descriptor.resolve(params)?, Arc::clone(&entry.executor))
        };
        exec(vol, &resolved)
    }
}

fn mask_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::choice(
            "mask",
            "cartesian_1d",
            &["cartesian_1d", "random_2d", "full", "acquired"],
            "Sampling pattern applied to the uploaded k-space. `acquired` keeps the locations that hold nonzero data.",
        ),
        ParamSpec::float("rate", 0.33, 0.01, 1.0, "Fraction of k-space kept by the mask."),
        ParamSpec::float(
            "center_fraction",
            0.08,
            0.0,
            1.0,
            "Fraction of k-space fully sampled around the center; must not exceed the rate.",
        ),
        ParamSpec::int("mask_seed", 0, 0, i32::MAX as i64, "Seed of the random part of the mask."),
    ]
}

pub fn zero_fill_descriptor() -> BackendDescriptor {
    BackendDescriptor {
        backend_id: "zero_fill".into(),
        display_name: "Zero-filled inverse Fourier transform".into(),
        param_schema: mask_params(),
    }
}

pub fn ista_descriptor() -> BackendDescriptor {
    let mut params = mask_params();
    params.extend([
        ParamSpec::int(
            "iterations",
            100,
            1,
            10_000,
            "Number of soft-thresholding iterations.",
        ),
        ParamSpec::float(
            "threshold",
            0.01,
            0.0,
            1e6,
            "Soft-threshold applied to the Haar coefficients. Larger values favour sparser images.",
        ),
        ParamSpec::float(
            "step",
            1.0,
            1e-6,
            2.0,
            "Gradient step size. 1 is the largest step with guaranteed convergence.",
        ),
    ]);
    BackendDescriptor {
        backend_id: "ista".into(),
        display_name: "Iterative soft-thresholding (Haar sparsity)".into(),
        param_schema: params,
    }
}

fn f64_param(p: &ParamValues, name: &str) -> Result<f64, ReconError> {
    p.get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| ReconError::Param {
            name: name.into(),
            reason: "missing".into(),
        })
}

fn i64_param(p: &ParamValues, name: &str) -> Result<i64, ReconError> {
    p.get(name)
        .and_then(Value::as_i64)
        .ok_or_else(|| ReconError::Param {
            name: name.into(),
            reason: "missing".into(),
        })
}

/// Builds the mask named by resolved parameters for the volume's grid.
pub fn mask_from_params(vol: &KSpaceVolume, p: &ParamValues) -> Result<SamplingMask, ReconError> {
    let d = vol.dims();
    let kind = p.get("mask").and_then(Value::as_str).unwrap_or("full");
    let seed = i64_param(p, "mask_seed").unwrap_or(0) as u64;
    match kind {
        "full" => Ok(SamplingMask::full(d.phase, d.readout)),
        "acquired" => {
            let n = d.plane_len();
            let mut bits = vec![false; n];
            for s in 0..d.slices {
                for c in 0..d.coils {
                    for (b, z) in bits.iter_mut().zip(vol.plane(s, c)) {
                        *b |= z.re != 0.0 || z.im != 0.0;
                    }
                }
            }
            SamplingMask::from_bits(d.phase, d.readout, bits)
        }
        "cartesian_1d" => make_cartesian_mask_1d(
            d.phase,
            d.readout,
            f64_param(p, "rate")?,
            f64_param(p, "center_fraction")?,
            seed,
        ),
        "random_2d" => make_random_mask_2d(
            d.phase,
            d.readout,
            f64_param(p, "rate")?,
            f64_param(p, "center_fraction")?,
            seed,
        ),
        other => Err(ReconError::Param {
            name: "mask".into(),
            reason: format!("unknown mask `{other}`"),
        }),
    }
}

fn run_zero_fill(vol: &KSpaceVolume, p: &ParamValues) -> Result<ImageSeries, ReconError> {
    zero_fill_recon(vol, &mask_from_params(vol, p)?)
}

fn run_ista(vol: &KSpaceVolume, p: &ParamValues) -> Result<ImageSeries, ReconError> {
    let params = ReconParams {
        iterations: i64_param(p, "iterations")? as usize,
        threshold: f64_param(p, "threshold")?,
        step: f64_param(p, "step")?,
        mask_seed: i64_param(p, "mask_seed").unwrap_or(0) as u64,
    };
    ista_recon(vol, &mask_from_params(vol, p)?, &params)
}
