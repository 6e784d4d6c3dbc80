//! Score tables, per-view grouping and report export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::paired::{paired_t_test, wilcoxon_signed_rank, PairedSample, TTestResult, WilcoxonResult};
use super::summary::{band_fractions, box_summary, BandFractions, BoxSummary, LikertBand};
use super::StatsError;
use crate::rawdata::View;

/// One unblinded score, the unit of the score export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub reader: String,
    pub case: String,
    pub method: String,
    pub metric: String,
    pub score: f64,
    pub view: View,
}

pub fn write_scores_csv<W: Write>(rows: &[ScoreRow], out: W) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(table_err)?;
    }
    w.flush().map_err(|e| StatsError::Io(e.to_string()))
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRow>, StatsError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(table_err))
        .collect()
}

fn table_err(e: csv::Error) -> StatsError {
    StatsError::Table(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewFilter {
    Axial,
    Sagittal,
    Coronal,
    All,
}

impl ViewFilter {
    pub const ALL: [ViewFilter; 4] = [
        ViewFilter::Axial,
        ViewFilter::Sagittal,
        ViewFilter::Coronal,
        ViewFilter::All,
    ];

    pub fn matches(self, view: View) -> bool {
        match self {
            ViewFilter::Axial => view == View::Axial,
            ViewFilter::Sagittal => view == View::Sagittal,
            ViewFilter::Coronal => view == View::Coronal,
            ViewFilter::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewFilter::Axial => "axial",
            ViewFilter::Sagittal => "sagittal",
            ViewFilter::Coronal => "coronal",
            ViewFilter::All => "all",
        }
    }
}

impl fmt::Display for ViewFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewFilter {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewFilter::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| StatsError::UnknownView(s.to_string()))
    }
}

/// A test result, or the reason it could not be computed on this subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Unavailable { reason: String },
}

impl<T> Outcome<T> {
    fn from_result(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Unavailable {
                reason: e.to_string(),
            },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Unavailable { .. } => None,
        }
    }
}

/// Both paired tests for one metric and one method pair (`d = x - y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub method_x: String,
    pub method_y: String,
    pub pairs: usize,
    /// (reader, case) keys scored for only one of the two methods.
    pub dropped_pairs: usize,
    pub ttest: Outcome<TTestResult>,
    pub wilcoxon: Outcome<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub method: String,
    pub metric: String,
    #[serde(rename = "box")]
    pub box_summary: BoxSummary,
    pub bands: BandFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub view: ViewFilter,
    pub methods: Vec<String>,
    pub metrics: Vec<String>,
    pub cases: usize,
    pub comparisons: Vec<Comparison>,
    pub distributions: Vec<Distribution>,
}

impl StatReport {
    pub fn comparison(&self, metric: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.metric == metric)
    }

    pub fn distribution(&self, method: &str, metric: &str) -> Option<&Distribution> {
        self.distributions
            .iter()
            .find(|d| d.method == method && d.metric == metric)
    }
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|s| s == item) {
        list.push(item.to_string());
    }
}

/// Filter by view, align scores by (reader, case) and run both tests for every
/// metric and method pair. Method and metric order follow first appearance.
type ByMethod<'a> = BTreeMap<&'a str, f64>;

pub fn group_and_report(rows: &[ScoreRow], view: ViewFilter) -> Result<StatReport, StatsError> {
    let rows: Vec<&ScoreRow> = rows.iter().filter(|r| view.matches(r.view)).collect();
    if rows.is_empty() {
        return Err(StatsError::NoMatchingCases(view.to_string()));
    }
    let (mut methods, mut metrics) = (Vec::new(), Vec::new());
    let mut cases = std::collections::BTreeSet::new();
    // metric -> (reader, case) -> method -> score
    let mut table: BTreeMap<&str, BTreeMap<(&str, &str), ByMethod>> = BTreeMap::new();
    for r in &rows {
        if !(0.0..=5.0).contains(&r.score) {
            return Err(StatsError::ScoreOutOfRange(r.score));
        }
        push_unique(&mut methods, &r.method);
        push_unique(&mut metrics, &r.metric);
        cases.insert(r.case.as_str());
        let slot = table
            .entry(&r.metric)
            .or_default()
            .entry((&r.reader, &r.case))
            .or_default();
        if slot.insert(&r.method, r.score).is_some() {
            return Err(StatsError::DuplicateScore {
                reader: r.reader.clone(),
                case: r.case.clone(),
                method: r.method.clone(),
                metric: r.metric.clone(),
            });
        }
    }

    let mut comparisons = Vec::new();
    for metric in &metrics {
        let by_key = &table[metric.as_str()];
        for (i, mx) in methods.iter().enumerate() {
            for my in &methods[i + 1..] {
                let (mut x, mut y, mut dropped) = (Vec::new(), Vec::new(), 0);
                for scores in by_key.values() {
                    match (scores.get(mx.as_str()), scores.get(my.as_str())) {
                        (Some(a), Some(b)) => {
                            x.push(*a);
                            y.push(*b);
                        }
                        (None, None) => {}
                        _ => dropped += 1,
                    }
                }
                let pairs = x.len();
                let sample = PairedSample::new(x, y);
                comparisons.push(Comparison {
                    metric: metric.clone(),
                    method_x: mx.clone(),
                    method_y: my.clone(),
                    pairs,
                    dropped_pairs: dropped,
                    ttest: Outcome::from_result(sample.clone().and_then(|s| paired_t_test(&s))),
                    wilcoxon: Outcome::from_result(sample.and_then(|s| wilcoxon_signed_rank(&s))),
                });
            }
        }
    }

    let mut distributions = Vec::new();
    for method in &methods {
        for metric in &metrics {
            let scores: Vec<f64> = rows
                .iter()
                .filter(|r| &r.method == method && &r.metric == metric)
                .map(|r| r.score)
                .collect();
            if scores.is_empty() {
                continue;
            }
            distributions.push(Distribution {
                method: method.clone(),
                metric: metric.clone(),
                box_summary: box_summary(&scores)?,
                bands: band_fractions(&scores)?,
            });
        }
    }

    Ok(StatReport {
        view,
        methods,
        metrics,
        cases: cases.len(),
        comparisons,
        distributions,
    })
}

/// File names written by [`export_report`], in order.
pub const REPORT_FILES: [&str; 5] = ["report.json", "ttest.csv", "wilcoxon.csv", "box.csv", "bands.csv"];

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

fn opt<T, F: Fn(&T) -> Vec<String>>(o: &Outcome<T>, width: usize, f: F) -> Vec<String> {
    match o {
        Outcome::Ok(v) => f(v),
        Outcome::Unavailable { .. } => vec![String::new(); width],
    }
}

/// The JSON report followed by one delimiter-separated table per chart.
pub fn render_tables(report: &StatReport) -> Vec<(&'static str, String)> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let view = report.view.to_string();

    let ttest = csv_table(
        &[
            "view",
            "metric",
            "method_x",
            "method_y",
            "n",
            "mean_x",
            "sd_x",
            "mean_y",
            "sd_y",
            "mean_diff",
            "sd_diff",
            "t",
            "df",
            "p",
            "log10_p",
        ],
        report
            .comparisons
            .iter()
            .map(|c| {
                let mut row = vec![
                    view.clone(),
                    c.metric.clone(),
                    c.method_x.clone(),
                    c.method_y.clone(),
                ];
                row.extend(opt(&c.ttest, 11, |t| {
                    [
                        t.n as f64,
                        t.mean_x,
                        t.sd_x,
                        t.mean_y,
                        t.sd_y,
                        t.mean_diff,
                        t.sd_diff,
                        t.t,
                    ]
                    .iter()
                    .map(|v| v.to_string())
                    .chain([t.df.to_string(), t.p.to_string(), t.log10_p.to_string()])
                    .collect()
                }));
                row
            })
            .collect(),
    );

    let wilcoxon = csv_table(
        &[
            "view", "metric", "method_x", "method_y", "n", "j", "median_x", "median_y", "w_plus", "w_minus",
            "w", "z", "p", "log10_p",
        ],
        report
            .comparisons
            .iter()
            .map(|c| {
                let mut row = vec![
                    view.clone(),
                    c.metric.clone(),
                    c.method_x.clone(),
                    c.method_y.clone(),
                ];
                row.extend(opt(&c.wilcoxon, 10, |w| {
                    vec![w.n.to_string(), w.j.to_string()]
                        .into_iter()
                        .chain(
                            [
                                w.median_x, w.median_y, w.w_plus, w.w_minus, w.w, w.z, w.p, w.log10_p,
                            ]
                            .iter()
                            .map(|v| v.to_string()),
                        )
                        .collect()
                }));
                row
            })
            .collect(),
    );

    let boxes = csv_table(
        &[
            "view",
            "method",
            "metric",
            "n",
            "min",
            "whisker_low",
            "q1",
            "median",
            "q3",
            "whisker_high",
            "max",
            "mean",
            "sd",
            "outliers",
        ],
        report
            .distributions
            .iter()
            .map(|d| {
                let b = &d.box_summary;
                let outliers: Vec<String> = b.outliers.iter().map(|v| v.to_string()).collect();
                vec![view.clone(), d.method.clone(), d.metric.clone(), b.n.to_string()]
                    .into_iter()
                    .chain(
                        [
                            b.min,
                            b.whisker_low,
                            b.q1,
                            b.median,
                            b.q3,
                            b.whisker_high,
                            b.max,
                            b.mean,
                            b.sd,
                        ]
                        .iter()
                        .map(|v| v.to_string()),
                    )
                    .chain([outliers.join(";")])
                    .collect()
            })
            .collect(),
    );

    let bands = csv_table(
        &["view", "method", "metric", "band", "count", "fraction"],
        report
            .distributions
            .iter()
            .flat_map(|d| {
                LikertBand::ALL.iter().map(|&band| {
                    vec![
                        view.clone(),
                        d.method.clone(),
                        d.metric.clone(),
                        band.name().to_string(),
                        d.bands.counts[band as usize].to_string(),
                        d.bands.fraction(band).to_string(),
                    ]
                })
            })
            .collect(),
    );

    vec![
        (REPORT_FILES[0], json),
        (REPORT_FILES[1], ttest),
        (REPORT_FILES[2], wilcoxon),
        (REPORT_FILES[3], boxes),
        (REPORT_FILES[4], bands),
    ]
}

/// Write the report into `dir` and return the paths written.
pub fn export_report(report: &StatReport, dir: &Path) -> Result<Vec<PathBuf>, StatsError> {
    let io = |e: std::io::Error| StatsError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    render_tables(report)
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(io)?;
            Ok(path)
        })
        .collect()
}

pub fn import_report(dir: &Path) -> Result<StatReport, StatsError> {
    let text =
        std::fs::read_to_string(dir.join(REPORT_FILES[0])).map_err(|e| StatsError::Io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| StatsError::Io(e.to_string()))
}
