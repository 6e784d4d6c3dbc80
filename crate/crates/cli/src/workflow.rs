//! Headless five-step workflow: upload, reconstruct, create a study, read
//! it with synthetic readers, and export the statistics report.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use reconlab_core::rawdata::read_image_bundle;
use reconlab_core::recon::ParamValues;
use reconlab_core::stats::{render_tables, StatReport, ViewFilter};
use reconlab_core::study::Score;
use reconlab_core::transfer::md5_hex;
use reconlab_core::View;
use reconlab_gateway::api::{CreateStudyRequest, JobList, WireScore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{Client, ClientError};
use crate::phantom::{phantom_bytes, PhantomSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    #[serde(default = "default_server")]
    pub server: String,
    /// Seeds the study's blinding and the synthetic scores.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_views")]
    pub views: Vec<ViewFilter>,
    #[serde(default)]
    pub format: ReportFormat,
    #[serde(default)]
    pub chunk_size: Option<u64>,
    #[serde(default = "default_job_timeout", with = "secs")]
    pub job_timeout: Duration,
    pub developer: Credentials,
    pub datasets: Vec<DatasetConfig>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub reference: Option<BackendConfig>,
    #[serde(default)]
    pub metrics: Vec<String>,
    pub readers: ReaderConfig,
}

fn default_server() -> String {
    "http://127.0.0.1:8080".into()
}

fn default_views() -> Vec<ViewFilter> {
    vec![ViewFilter::All]
}

fn default_job_timeout() -> Duration {
    Duration::from_secs(300)
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl ReportFormat {
    pub fn wants(self, file: &str) -> bool {
        match self {
            ReportFormat::Both => true,
            ReportFormat::Json => file.ends_with(".json"),
            ReportFormat::Csv => file.ends_with(".csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub view: View,
    /// k-space file on disk; resolved against the config file's directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub backend: String,
    #[serde(default)]
    pub params: ParamValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub id: String,
    pub backend: String,
    #[serde(default)]
    pub params: ParamValues,
    pub scores: ScoreDistribution,
}

/// Normal distribution truncated to [0, 5]; draws are quantized to 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreDistribution {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Score {
        let x = if self.sd > 0.0 {
            let normal = Normal::new(self.mean, self.sd).expect("sd checked positive");
            (0..10_000)
                .map(|_| normal.sample(rng))
                .find(|x| (0.0..=5.0).contains(x))
                .unwrap_or(self.mean)
        } else {
            self.mean
        };
        Score::from_tenths((x.clamp(0.0, 5.0) * 10.0).round() as u8).expect("clamped to [0, 5]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderConfig {
    /// Existing reader accounts.
    #[serde(default)]
    pub accounts: Vec<Credentials>,
    /// Additional synthetic readers, registered on first use.
    #[serde(default)]
    pub count: usize,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default = "default_reader_password")]
    pub password: String,
}

fn default_prefix() -> String {
    "synthetic-reader".into()
}

fn default_reader_password() -> String {
    "synthetic-reader-pw".into()
}

impl ReaderConfig {
    pub fn all(&self) -> Vec<Credentials> {
        let mut out = self.accounts.clone();
        out.extend((1..=self.count).map(|i| Credentials {
            username: format!("{}{i}", self.prefix),
            password: self.password.clone(),
        }));
        out
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl WorkflowConfig {
    /// Load a TOML config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.into(),
                source,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        for d in &mut config.datasets {
            if let Some(p) = &mut d.path {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: PathBuf::new(),
            source: Box::new(source),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        for d in &self.datasets {
            if d.path.is_some() == d.phantom.is_some() {
                return bad(format!(
                    "dataset `{}` needs exactly one of `path` or `phantom`",
                    d.view
                ));
            }
        }
        if self.methods.len() < 2 {
            return bad("a comparison needs at least two methods".into());
        }
        for m in &self.methods {
            let s = m.scores;
            if !(0.0..=5.0).contains(&s.mean) || !(s.sd >= 0.0) || !s.sd.is_finite() {
                return bad(format!("method `{}` has an invalid score distribution", m.id));
            }
        }
        if self.readers.all().is_empty() {
            return bad("at least one reader is required".into());
        }
        Ok(())
    }
}

/// A failed step: its number (0 = login) and the server's error code.
#[derive(Debug, Error)]
pub struct WorkflowError {
    pub step: u8,
    pub code: String,
    pub message: String,
}

impl fmt::Display for WorkflowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed [{}]: {}", self.step, self.code, self.message)
    }
}

trait AtStep<T> {
    fn at(self, step: u8) -> Result<T, WorkflowError>;
}

impl<T> AtStep<T> for Result<T, ClientError> {
    fn at(self, step: u8) -> Result<T, WorkflowError> {
        self.map_err(|e| WorkflowError {
            step,
            code: e.code().to_string(),
            message: e.to_string(),
        })
    }
}

fn local<T, E: fmt::Display>(r: Result<T, E>, step: u8, code: &str) -> Result<T, WorkflowError> {
    r.map_err(|e| WorkflowError {
        step,
        code: code.into(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSummary {
    pub study_id: String,
    pub datasets: Vec<String>,
    pub jobs: BTreeMap<String, Vec<String>>,
    pub cases: usize,
    pub readers: Vec<String>,
    pub scores_submitted: usize,
    pub reports: Vec<ExportedReport>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedReport {
    pub view: ViewFilter,
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub report: StatReport,
}

/// Write the files of one report selected by `format` into `dir`.
pub fn write_report(report: &StatReport, dir: &Path, format: ReportFormat) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in render_tables(report) {
        if format.wants(name) {
            std::fs::write(dir.join(name), body)?;
            written.push(name.to_string());
        }
    }
    Ok(written)
}

/// Derive a per-draw seed so scores do not depend on the order cases arrive in.
fn draw_seed(seed: u64, parts: &[&str]) -> u64 {
    let digest = md5_hex(format!("{seed}/{}", parts.join("/")).as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub fn run_workflow(config: &WorkflowConfig) -> Result<WorkflowSummary, WorkflowError> {
    let started = Instant::now();

    // step 0: authenticate
    let mut dev = Client::new(&config.server).at(0)?;
    dev.login(&config.developer.username, &config.developer.password)
        .at(0)?;

    // step 1: upload raw data
    let mut datasets = Vec::new();
    for d in &config.datasets {
        let bytes = match (&d.path, &d.phantom) {
            (Some(p), _) => local(std::fs::read(p), 1, "io")?,
            (None, Some(spec)) => local(phantom_bytes(spec, d.view), 1, "phantom")?,
            (None, None) => unreachable!("validated"),
        };
        let stored = dev.upload(&bytes, config.chunk_size).at(1)?;
        tracing::info!(view = %d.view, content_id = %stored.content_id, "uploaded");
        datasets.push(stored.content_id);
    }

    // step 2: reconstruct every dataset with every method
    let mut jobs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut submitted = Vec::new();
    let backends = config
        .methods
        .iter()
        .map(|m| {
            (
                m.id.clone(),
                BackendConfig {
                    backend: m.backend.clone(),
                    params: m.params.clone(),
                },
            )
        })
        .chain(config.reference.clone().map(|r| ("\0reference".to_string(), r)));
    for (id, b) in backends {
        for ds in &datasets {
            let job = dev.submit_job(ds, &b.backend, b.params.clone()).at(2)?;
            jobs.entry(id.clone()).or_default().push(job.job_id.clone());
            submitted.push(job.job_id);
        }
    }
    for job in &submitted {
        dev.wait_job(job, config.job_timeout).at(2)?;
    }
    let reference = jobs.remove("\0reference");

    // Pixel hashes let the synthetic readers recognise images by content,
    // the only channel a blinded reader has.
    let mut by_hash: HashMap<String, String> = HashMap::new();
    for (method, list) in &jobs {
        for job in list {
            let series = local(
                read_image_bundle(&dev.job_result(job).at(2)?),
                2,
                "malformed_data",
            )?;
            for slice in &series.slices {
                let bytes: Vec<u8> = slice.iter().flat_map(|v| v.to_le_bytes()).collect();
                by_hash.entry(md5_hex(&bytes)).or_insert_with(|| method.clone());
            }
        }
    }

    // step 3: create the study and make sure reader accounts exist
    let readers = config.readers.all();
    for r in &readers[config.readers.accounts.len()..] {
        match dev.register(&r.username, &r.password, "reader") {
            Ok(_) => {}
            Err(e) if e.code() == "username_taken" => {}
            Err(e) => return Err(e).at(3),
        }
    }
    let study = dev
        .create_study(&CreateStudyRequest {
            title: "headless workflow".into(),
            methods: jobs
                .iter()
                .map(|(m, l)| (m.clone(), JobList::Many(l.clone())))
                .collect(),
            reference: reference.map(JobList::Many),
            metrics: config.metrics.clone(),
            readers: readers.iter().map(|r| r.username.clone()).collect(),
            seed: config.seed,
        })
        .at(3)?;
    let distributions: HashMap<&str, ScoreDistribution> =
        config.methods.iter().map(|m| (m.id.as_str(), m.scores)).collect();

    // step 4: every reader scores every case
    let mut scores_submitted = 0;
    for (ri, r) in readers.iter().enumerate() {
        let mut reader = Client::new(&config.server).at(4)?;
        reader.login(&r.username, &r.password).at(4)?;
        while let Some(view) = reader.next_case(&study.study_id, None).at(4)?.case {
            let case_id = view.case.case_id.clone();
            let mut scores = Vec::new();
            for panel in &view.images {
                let position = panel.position.expect("method panels carry a position");
                let pixels = panel.decode_pixels().unwrap_or_default();
                let bytes: Vec<u8> = pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
                let method = by_hash.get(&md5_hex(&bytes)).ok_or_else(|| WorkflowError {
                    step: 4,
                    code: "unrecognised_image".into(),
                    message: format!(
                        "panel {} of case {case_id} matches no reconstruction",
                        panel.label
                    ),
                })?;
                for metric in &view.case.metrics {
                    let seed = draw_seed(config.seed, &[&ri.to_string(), &case_id, metric, method]);
                    let score = distributions[method.as_str()].sample(&mut ChaCha8Rng::seed_from_u64(seed));
                    scores.push(WireScore {
                        display_position: position,
                        metric: metric.clone(),
                        score: score.value(),
                    });
                }
            }
            scores_submitted += reader
                .submit_scores(&study.study_id, &case_id, scores)
                .at(4)?
                .stored;
        }
    }

    // step 5: close and export
    dev.close_study(&study.study_id).at(5)?;
    let mut reports = Vec::new();
    for &view in &config.views {
        let r = dev.report(&study.study_id, view).at(5)?;
        let dir = config.output_dir.join(view.to_string());
        let files = local(write_report(&r.report, &dir, config.format), 5, "io")?;
        reports.push(ExportedReport {
            view,
            dir,
            files,
            report: r.report,
        });
    }
    let csv = dev.scores_csv(&study.study_id).at(5)?;
    local(std::fs::write(config.output_dir.join("scores.csv"), csv), 5, "io")?;

    Ok(WorkflowSummary {
        study_id: study.study_id,
        datasets,
        jobs,
        cases: study.cases.len(),
        readers: readers.into_iter().map(|r| r.username).collect(),
        scores_submitted,
        reports,
        elapsed_ms: started.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        output_dir = "out"
        developer = { username = "researcher1", password = "reconlab-dev" }
        [[datasets]]
        view = "axial"
        phantom = { slices = 2, size = 16 }
        [[methods]]
        id = "zf"
        backend = "zero_fill"
        scores = { mean = 2.5, sd = 0.5 }
        [[methods]]
        id = "cs"
        backend = "ista"
        params = { iterations = 20 }
        scores = { mean = 3.5, sd = 0.5 }
        [readers]
        count = 2
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = WorkflowConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.views, vec![ViewFilter::All]);
        assert_eq!(c.format, ReportFormat::Both);
        assert_eq!(c.readers.all()[1].username, "synthetic-reader2");
        assert_eq!(c.methods[1].params["iterations"], 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let one_method = MINIMAL.replace("id = \"cs\"", "id = \"cs\"\nunknown = 1");
        assert!(matches!(
            WorkflowConfig::parse(&one_method),
            Err(ConfigError::Parse { .. })
        ));
        let no_readers = MINIMAL.replace("count = 2", "count = 0");
        assert!(matches!(
            WorkflowConfig::parse(&no_readers),
            Err(ConfigError::Invalid(_))
        ));
        let bad_mean = MINIMAL.replace("mean = 3.5", "mean = 7.0");
        assert!(matches!(
            WorkflowConfig::parse(&bad_mean),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn synthetic_scores_are_quantized_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [
            ScoreDistribution { mean: 4.9, sd: 1.0 },
            ScoreDistribution { mean: 0.1, sd: 2.0 },
            ScoreDistribution { mean: 3.0, sd: 0.0 },
        ] {
            for _ in 0..500 {
                let s = d.sample(&mut rng);
                assert!((0.0..=5.0).contains(&s.value()));
                assert_eq!(Score::new(s.value()).unwrap(), s);
            }
        }
    }

    #[test]
    fn truncated_mean_tracks_the_distribution() {
        let d = ScoreDistribution { mean: 2.5, sd: 0.4 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let mean = (0..n).map(|_| d.sample(&mut rng).value()).sum::<f64>() / n as f64;
        assert!((mean - 2.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn draw_seeds_separate_their_inputs() {
        let a = draw_seed(1, &["0", "axial-0-000", "overall quality", "zf"]);
        assert_eq!(a, draw_seed(1, &["0", "axial-0-000", "overall quality", "zf"]));
        assert_ne!(a, draw_seed(2, &["0", "axial-0-000", "overall quality", "zf"]));
        assert_ne!(a, draw_seed(1, &["1", "axial-0-000", "overall quality", "zf"]));
    }
}
