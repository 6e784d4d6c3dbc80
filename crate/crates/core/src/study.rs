//! Blinded multi-reader scoring studies.
//!
//! A [`Study`] holds, per case, one image reference per competing method. On
//! creation every case receives a seeded random display order; readers only
//! ever see neutral labels ("Image A", "Image B", ...) and score by display
//! position. [`Study::unblind`] maps positions back to methods for analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::rawdata::View;
use crate::stats::ScoreRow;
use crate::vault::RecordStore;

pub const DEFAULT_METRICS: [&str; 3] = ["overall quality", "artifact suppression", "signal-to-noise ratio"];

/// Generator used for display-order permutations, recorded on every study.
pub const PERMUTATION_RNG: &str = "ChaCha8Rng/seed_from_u64";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("a study needs at least one {0}")]
    Missing(&'static str),
    #[error("duplicate method `{0}`")]
    DuplicateMethod(String),
    #[error("duplicate metric `{0}`")]
    DuplicateMetric(String),
    #[error("metric names must be non-empty")]
    EmptyMetric,
    #[error("duplicate case `{0}`")]
    DuplicateCase(String),
    #[error("case `{case}` has no image for method `{method}`")]
    RaggedImages { case: String, method: String },
    #[error("case `{case}` has an image for undeclared method `{method}`")]
    UndeclaredMethod { case: String, method: String },
    #[error("method id `{0}` collides with a neutral display label")]
    LabelCollision(String),
    #[error("case `{0}` has zero-sized images")]
    EmptyImage(String),
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("reader `{0}` is not assigned to this study")]
    NotAssigned(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("display position {position} out of range for {count} images")]
    BadPosition { position: usize, count: usize },
    #[error("score {0} outside [0, 5]")]
    ScoreOutOfRange(f64),
    #[error("score {0} is not a multiple of 0.1")]
    NotQuantized(f64),
    #[error("more than one score for position {position}, metric `{metric}`")]
    DuplicateScore { position: usize, metric: String },
    #[error("annotation geometry outside the {width}x{height} image")]
    OutOfBounds { width: usize, height: usize },
    #[error("window width must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("study is closed")]
    Closed,
    #[error("study is still open")]
    StillOpen,
}

impl StudyError {
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::Missing(_) => "study_incomplete",
            StudyError::DuplicateMethod(_) => "duplicate_method",
            StudyError::DuplicateMetric(_) => "duplicate_metric",
            StudyError::EmptyMetric => "empty_metric",
            StudyError::DuplicateCase(_) => "duplicate_case",
            StudyError::RaggedImages { .. } => "ragged_images",
            StudyError::UndeclaredMethod { .. } => "undeclared_method",
            StudyError::LabelCollision(_) => "label_collision",
            StudyError::EmptyImage(_) => "empty_image",
            StudyError::UnknownStudy(_) => "unknown_study",
            StudyError::UnknownCase(_) => "unknown_case",
            StudyError::NotAssigned(_) => "not_assigned",
            StudyError::UnknownMetric(_) => "unknown_metric",
            StudyError::BadPosition { .. } => "bad_position",
            StudyError::ScoreOutOfRange(_) => "score_out_of_range",
            StudyError::NotQuantized(_) => "score_not_quantized",
            StudyError::DuplicateScore { .. } => "duplicate_score",
            StudyError::OutOfBounds { .. } => "out_of_bounds",
            StudyError::InvalidWindow(_) => "invalid_window",
            StudyError::Closed => "study_closed",
            StudyError::StillOpen => "study_open",
        }
    }
}

/// A Likert score in `[0, 5]` on a 0.1 grid, stored as tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(u8);

impl Score {
    pub fn new(value: f64) -> Result<Self, StudyError> {
        if !(0.0..=5.0).contains(&value) {
            return Err(StudyError::ScoreOutOfRange(value));
        }
        let scaled = value * 10.0;
        let tenths = scaled.round();
        if (scaled - tenths).abs() > 1e-6 {
            return Err(StudyError::NotQuantized(value));
        }
        Ok(Score(tenths as u8))
    }

    pub fn from_tenths(tenths: u8) -> Result<Self, StudyError> {
        if tenths > 50 {
            return Err(StudyError::ScoreOutOfRange(tenths as f64 / 10.0));
        }
        Ok(Score(tenths))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl TryFrom<f64> for Score {
    type Error = StudyError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.value()
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

/// Neutral label for a display position: "Image A" ... "Image Z", "Image AA", ...
pub fn display_label(position: usize) -> String {
    let mut n = position + 1;
    let mut letters = Vec::new();
    while n > 0 {
        n -= 1;
        letters.push(b'A' + (n % 26) as u8);
        n /= 26;
    }
    letters.reverse();
    format!("Image {}", String::from_utf8(letters).expect("ascii letters"))
}

/// Case as supplied by the study creator: one image reference per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInput {
    pub case_id: String,
    #[serde(default)]
    pub slice_index: usize,
    pub view: View,
    pub width: usize,
    pub height: usize,
    /// method id -> image reference (typically a vault content id).
    pub images: BTreeMap<String, String>,
    /// Display-only ground truth shown beside the blinded panels.
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCase {
    pub case_id: String,
    pub slice_index: usize,
    pub view: View,
    pub width: usize,
    pub height: usize,
    pub images: BTreeMap<String, String>,
    pub reference: Option<String>,
    pub seed: u64,
    /// Display position -> method id. Never shown to readers.
    pub blind_permutation: Vec<String>,
    pub display_labels: Vec<String>,
}

impl StudyCase {
    pub fn method_at(&self, position: usize) -> Option<&str> {
        self.blind_permutation.get(position).map(String::as_str)
    }

    pub fn image_at(&self, position: usize) -> Option<&str> {
        self.method_at(position)
            .and_then(|m| self.images.get(m))
            .map(String::as_str)
    }

    pub fn position_of(&self, method: &str) -> Option<usize> {
        self.blind_permutation.iter().position(|m| m == method)
    }
}

/// Assign a seeded uniformly random display order and neutral labels.
pub fn blind_case(case: CaseInput, methods: &[String], seed: u64) -> StudyCase {
    let mut order = methods.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    StudyCase {
        display_labels: (0..order.len()).map(display_label).collect(),
        blind_permutation: order,
        case_id: case.case_id,
        slice_index: case.slice_index,
        view: case.view,
        width: case.width,
        height: case.height,
        images: case.images,
        reference: case.reference,
        seed,
    }
}

/// Per-case seed derived from the study seed (splitmix64 finalizer).
pub fn case_seed(study_seed: u64, index: usize) -> u64 {
    let mut z = study_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    #[serde(default)]
    pub title: String,
    pub methods: Vec<String>,
    pub cases: Vec<CaseInput>,
    /// Empty means the three default metrics.
    #[serde(default)]
    pub metrics: Vec<String>,
    pub readers: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub display_position: usize,
    pub metric: String,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub reader_id: String,
    pub case_id: String,
    pub display_position: usize,
    pub metric: String,
    pub score: Score,
    pub submitted_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Arrow,
    Box,
}

/// Two points in pixel coordinates: arrow tail/head or opposite box corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Geometry {
    pub fn within(&self, width: usize, height: usize) -> bool {
        let (w, h) = (width as f64, height as f64);
        [self.x0, self.x1].iter().all(|x| (0.0..=w).contains(x))
            && [self.y0, self.y1].iter().all(|y| (0.0..=h).contains(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub reader_id: String,
    pub case_id: String,
    pub display_position: usize,
    pub kind: AnnotationKind,
    pub geometry: Geometry,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLevel {
    pub width: f64,
    pub level: f64,
}

impl WindowLevel {
    pub fn new(width: f64, level: f64) -> Result<Self, StudyError> {
        if !(width > 0.0) || !level.is_finite() || !width.is_finite() {
            return Err(StudyError::InvalidWindow(width));
        }
        Ok(Self { width, level })
    }

    pub fn map(&self, v: f64) -> f64 {
        ((v - (self.level - self.width / 2.0)) / self.width).clamp(0.0, 1.0)
    }
}

/// Display fraction for intensity `v` under window width `w` and level `l`.
pub fn window_level_map(v: f64, w: f64, l: f64) -> Result<f64, StudyError> {
    Ok(WindowLevel::new(w, l)?.map(v))
}

/// What a reader is shown for one case. Carries no method identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderCase {
    pub study_id: String,
    pub case_id: String,
    pub slice_index: usize,
    pub view: View,
    pub width: usize,
    pub height: usize,
    pub panels: Vec<Panel>,
    pub has_reference: bool,
    pub metrics: Vec<String>,
    pub scores: Vec<ScoreEntry>,
    pub evaluated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub position: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub study_id: String,
    pub title: String,
    pub methods: Vec<String>,
    pub cases: Vec<StudyCase>,
    pub metrics: Vec<String>,
    pub readers: Vec<String>,
    pub seed: u64,
    pub permutation_rng: String,
    pub state: StudyState,
    scores: BTreeMap<(String, String), Vec<ScoreRecord>>,
    annotations: BTreeMap<(String, String), Vec<Annotation>>,
    windows: BTreeMap<(String, String), WindowLevel>,
}

fn unique(items: &[String], dup: impl Fn(String) -> StudyError) -> Result<(), StudyError> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(dup(item.clone()));
        }
    }
    Ok(())
}

pub fn create_study(study_id: impl Into<String>, spec: StudySpec) -> Result<Study, StudyError> {
    let metrics = if spec.metrics.is_empty() {
        DEFAULT_METRICS.iter().map(|m| m.to_string()).collect()
    } else {
        spec.metrics
    };
    if spec.methods.is_empty() {
        return Err(StudyError::Missing("method"));
    }
    if spec.cases.is_empty() {
        return Err(StudyError::Missing("case"));
    }
    if spec.readers.is_empty() {
        return Err(StudyError::Missing("reader"));
    }
    if metrics.iter().any(|m| m.trim().is_empty()) {
        return Err(StudyError::EmptyMetric);
    }
    unique(&metrics, StudyError::DuplicateMetric)?;
    unique(&spec.methods, StudyError::DuplicateMethod)?;
    let labels: Vec<String> = (0..spec.methods.len()).map(display_label).collect();
    for m in &spec.methods {
        if m.is_empty() || labels.iter().any(|l| l.contains(m.as_str())) {
            return Err(StudyError::LabelCollision(m.clone()));
        }
    }
    let case_ids: Vec<String> = spec.cases.iter().map(|c| c.case_id.clone()).collect();
    unique(&case_ids, StudyError::DuplicateCase)?;
    for case in &spec.cases {
        if case.width == 0 || case.height == 0 {
            return Err(StudyError::EmptyImage(case.case_id.clone()));
        }
        if let Some(method) = spec.methods.iter().find(|m| !case.images.contains_key(*m)) {
            return Err(StudyError::RaggedImages {
                case: case.case_id.clone(),
                method: method.clone(),
            });
        }
        if let Some(method) = case.images.keys().find(|m| !spec.methods.contains(m)) {
            return Err(StudyError::UndeclaredMethod {
                case: case.case_id.clone(),
                method: method.clone(),
            });
        }
    }
    let mut readers = Vec::new();
    for r in spec.readers {
        if !readers.contains(&r) {
            readers.push(r);
        }
    }
    let cases = spec
        .cases
        .into_iter()
        .enumerate()
        .map(|(i, c)| blind_case(c, &spec.methods, case_seed(spec.seed, i)))
        .collect();
    Ok(Study {
        study_id: study_id.into(),
        title: spec.title,
        methods: spec.methods,
        cases,
        metrics,
        readers,
        seed: spec.seed,
        permutation_rng: PERMUTATION_RNG.to_string(),
        state: StudyState::Open,
        scores: BTreeMap::new(),
        annotations: BTreeMap::new(),
        windows: BTreeMap::new(),
    })
}

impl Study {
    pub fn case(&self, case_id: &str) -> Result<&StudyCase, StudyError> {
        self.cases
            .iter()
            .find(|c| c.case_id == case_id)
            .ok_or_else(|| StudyError::UnknownCase(case_id.to_string()))
    }

    pub fn is_reader(&self, reader: &str) -> bool {
        self.readers.iter().any(|r| r == reader)
    }

    fn check_reader(&self, reader: &str) -> Result<(), StudyError> {
        if self.is_reader(reader) {
            Ok(())
        } else {
            Err(StudyError::NotAssigned(reader.to_string()))
        }
    }

    fn check_open(&self) -> Result<(), StudyError> {
        match self.state {
            StudyState::Open => Ok(()),
            StudyState::Closed => Err(StudyError::Closed),
        }
    }

    fn key(reader: &str, case_id: &str) -> (String, String) {
        (reader.to_string(), case_id.to_string())
    }

    /// Store a reader's scores for one case, replacing any earlier submission.
    pub fn submit_scores(
        &mut self,
        reader: &str,
        case_id: &str,
        entries: Vec<ScoreEntry>,
        now: Timestamp,
    ) -> Result<usize, StudyError> {
        self.check_open()?;
        self.check_reader(reader)?;
        let count = self.case(case_id)?.blind_permutation.len();
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.display_position >= count {
                return Err(StudyError::BadPosition {
                    position: e.display_position,
                    count,
                });
            }
            if !self.metrics.contains(&e.metric) {
                return Err(StudyError::UnknownMetric(e.metric.clone()));
            }
            if !seen.insert((e.display_position, e.metric.as_str())) {
                return Err(StudyError::DuplicateScore {
                    position: e.display_position,
                    metric: e.metric.clone(),
                });
            }
        }
        let records: Vec<ScoreRecord> = entries
            .into_iter()
            .map(|e| ScoreRecord {
                reader_id: reader.to_string(),
                case_id: case_id.to_string(),
                display_position: e.display_position,
                metric: e.metric,
                score: e.score,
                submitted_at: now,
            })
            .collect();
        let n = records.len();
        self.scores.insert(Self::key(reader, case_id), records);
        Ok(n)
    }

    pub fn scores_for(&self, reader: &str, case_id: &str) -> &[ScoreRecord] {
        self.scores
            .get(&Self::key(reader, case_id))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// True when every (position, metric) pair has a score from `reader`.
    pub fn is_evaluated(&self, reader: &str, case_id: &str) -> bool {
        let Ok(case) = self.case(case_id) else {
            return false;
        };
        self.scores_for(reader, case_id).len() == case.blind_permutation.len() * self.metrics.len()
    }

    pub fn reader_case(&self, reader: &str, case_id: &str) -> Result<ReaderCase, StudyError> {
        self.check_reader(reader)?;
        let case = self.case(case_id)?;
        Ok(ReaderCase {
            study_id: self.study_id.clone(),
            case_id: case.case_id.clone(),
            slice_index: case.slice_index,
            view: case.view,
            width: case.width,
            height: case.height,
            panels: case
                .display_labels
                .iter()
                .enumerate()
                .map(|(position, label)| Panel {
                    position,
                    label: label.clone(),
                })
                .collect(),
            has_reference: case.reference.is_some(),
            metrics: self.metrics.clone(),
            scores: self
                .scores_for(reader, case_id)
                .iter()
                .map(|r| ScoreEntry {
                    display_position: r.display_position,
                    metric: r.metric.clone(),
                    score: r.score,
                })
                .collect(),
            evaluated: self.is_evaluated(reader, case_id),
        })
    }

    /// The first case, in study order, the reader has not fully scored.
    pub fn next_case(&self, reader: &str) -> Result<Option<ReaderCase>, StudyError> {
        self.check_reader(reader)?;
        self.cases
            .iter()
            .find(|c| !self.is_evaluated(reader, &c.case_id))
            .map(|c| self.reader_case(reader, &c.case_id))
            .transpose()
    }

    pub fn progress(&self, reader: &str) -> (usize, usize) {
        let done = self
            .cases
            .iter()
            .filter(|c| self.is_evaluated(reader, &c.case_id))
            .count();
        (done, self.cases.len())
    }

    pub fn save_annotation(
        &mut self,
        reader: &str,
        case_id: &str,
        display_position: usize,
        kind: AnnotationKind,
        geometry: Geometry,
        now: Timestamp,
    ) -> Result<Annotation, StudyError> {
        self.check_open()?;
        self.check_reader(reader)?;
        let case = self.case(case_id)?;
        let count = case.blind_permutation.len();
        if display_position >= count {
            return Err(StudyError::BadPosition {
                position: display_position,
                count,
            });
        }
        if !geometry.within(case.width, case.height) {
            return Err(StudyError::OutOfBounds {
                width: case.width,
                height: case.height,
            });
        }
        let a = Annotation {
            reader_id: reader.to_string(),
            case_id: case_id.to_string(),
            display_position,
            kind,
            geometry,
            created_at: now,
        };
        self.annotations
            .entry(Self::key(reader, case_id))
            .or_default()
            .push(a.clone());
        Ok(a)
    }

    pub fn restore_annotations(&self, reader: &str, case_id: &str) -> Result<Vec<Annotation>, StudyError> {
        self.check_reader(reader)?;
        self.case(case_id)?;
        Ok(self
            .annotations
            .get(&Self::key(reader, case_id))
            .cloned()
            .unwrap_or_default())
    }

    pub fn save_window(
        &mut self,
        reader: &str,
        case_id: &str,
        window: WindowLevel,
    ) -> Result<(), StudyError> {
        self.check_reader(reader)?;
        self.case(case_id)?;
        self.windows.insert(Self::key(reader, case_id), window);
        Ok(())
    }

    pub fn window(&self, reader: &str, case_id: &str) -> Option<WindowLevel> {
        self.windows.get(&Self::key(reader, case_id)).copied()
    }

    pub fn close(&mut self) {
        self.state = StudyState::Closed;
    }

    /// Every stored score attributed to the method whose image it rated.
    pub fn unblind(&self) -> Vec<ScoreRow> {
        let mut rows = Vec::new();
        for case in &self.cases {
            for reader in &self.readers {
                for r in self.scores_for(reader, &case.case_id) {
                    let method = case
                        .method_at(r.display_position)
                        .expect("positions validated on submit");
                    rows.push(ScoreRow {
                        reader: reader.clone(),
                        case: case.case_id.clone(),
                        method: method.to_string(),
                        metric: r.metric.clone(),
                        score: r.score.value(),
                        view: case.view,
                    });
                }
            }
        }
        rows
    }
}

/// Shared registry of studies, each behind its own lock.
#[derive(Default)]
pub struct StudyRegistry {
    studies: RecordStore<Arc<Mutex<Study>>>,
}

impl StudyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, spec: StudySpec) -> Result<String, StudyError> {
        let id = uuid::Uuid::new_v4().to_string();
        let study = create_study(id.clone(), spec)?;
        self.studies.insert_new(&id, Arc::new(Mutex::new(study)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Study>>, StudyError> {
        self.studies
            .get(id)
            .ok_or_else(|| StudyError::UnknownStudy(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.studies
            .values()
            .iter()
            .map(|s| s.lock().study_id.clone())
            .collect()
    }
}
