//! Comparison tables, plot data and unseen-attribute discovery over a
//! finished run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::write_atomic;
use crate::attrspace::{AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::metrics::{radar_from_values, write_radar_csv, MetricReport};
use crate::model::GeneratedSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Observation,
    Holdout,
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reference::Observation => "observation",
            Reference::Holdout => "holdout",
        })
    }
}

/// Mean and sample standard deviation over the repeats where a metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl SummaryStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: None,
                std: None,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            n,
        }
    }
}

/// All repeats of one method against one reference at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub method: Method,
    pub reference: Reference,
    pub tau_index: usize,
    pub tau: f64,
    pub reports: Vec<MetricReport>,
    pub summary: BTreeMap<String, SummaryStat>,
}

impl Evaluation {
    pub fn new(
        method: Method,
        reference: Reference,
        tau_index: usize,
        tau: f64,
        reports: Vec<MetricReport>,
    ) -> Self {
        let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &reports {
            for (name, v) in summary_metrics(r) {
                let entry = per_metric.entry(name.to_string()).or_default();
                if let Some(v) = v {
                    entry.push(v);
                }
            }
        }
        let summary = per_metric
            .into_iter()
            .map(|(k, v)| (k, SummaryStat::of(&v)))
            .collect();
        Self {
            method,
            reference,
            tau_index,
            tau,
            reports,
            summary,
        }
    }
}

/// The six ranking metrics plus the distinct high-bias count.
fn summary_metrics(r: &MetricReport) -> Vec<(&'static str, Option<f64>)> {
    let mut out = r.scalar_metrics();
    out.push(("distinct_bias_number", Some(r.distinct_bias_number as f64)));
    out
}

/// Contents of `reports/metrics.json`. Holds no timings, so identical runs
/// produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config_hash: String,
    pub taus: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
}

impl MetricsDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.evaluations.iter().map(|e| e.method).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn find(
        &self,
        method: Method,
        reference: Reference,
        tau_index: usize,
    ) -> Option<&Evaluation> {
        self.evaluations
            .iter()
            .find(|e| e.method == method && e.reference == reference && e.tau_index == tau_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub reference: Reference,
    pub tau: f64,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub repeats: usize,
}

/// One row per method × reference × metric at the given threshold index (all
/// thresholds when `None`).
pub fn compare_report(
    doc: &MetricsDocument,
    methods: &[Method],
    tau_index: Option<usize>,
) -> Result<Vec<ComparisonRow>> {
    let present = doc.methods();
    if let Some(missing) = methods.iter().find(|m| !present.contains(m)) {
        return Err(Error::invalid(format!(
            "method {missing} is not in the run"
        )));
    }
    if let Some(i) = tau_index {
        if i >= doc.taus.len() {
            return Err(Error::invalid(format!(
                "threshold index {i} out of range ({} thresholds)",
                doc.taus.len()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, &tau) in doc
        .taus
        .iter()
        .enumerate()
        .filter(|(i, _)| tau_index.is_none_or(|t| t == *i))
    {
        for reference in [Reference::Observation, Reference::Holdout] {
            for &method in methods {
                let Some(e) = doc.find(method, reference, i) else {
                    continue;
                };
                for (metric, stat) in &e.summary {
                    rows.push(ComparisonRow {
                        method,
                        reference,
                        tau,
                        metric: metric.clone(),
                        mean: stat.mean,
                        std: stat.std,
                        repeats: e.reports.len(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "method",
        "reference",
        "tau",
        "metric",
        "mean",
        "std",
        "repeats",
    ])?;
    for r in rows {
        wtr.write_record([
            r.method.to_string(),
            r.reference.to_string(),
            r.tau.to_string(),
            r.metric.clone(),
            opt(r.mean),
            opt(r.std),
            r.repeats.to_string(),
        ])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Writes `comparison.csv`, one radar file per reference and threshold, and
/// one density file per method and reference (first repeat, first threshold).
/// Returns the paths written, relative to `dir`.
pub fn write_report_files(
    dir: &Path,
    doc: &MetricsDocument,
    methods: &[Method],
) -> Result<Vec<(String, String)>> {
    let mut written = Vec::new();
    let rows = compare_report(doc, methods, None)?;
    write_comparison_csv(&dir.join("comparison.csv"), &rows)?;
    written.push(("comparison".to_string(), "comparison.csv".to_string()));
    for i in 0..doc.taus.len() {
        for reference in [Reference::Observation, Reference::Holdout] {
            let values: Vec<(String, Vec<(String, Option<f64>)>)> = methods
                .iter()
                .filter_map(|&m| doc.find(m, reference, i))
                .map(|e| {
                    let metrics = summary_metrics(&e.reports[0])
                        .into_iter()
                        .take(6)
                        .map(|(name, _)| (name.to_string(), e.summary[name].mean))
                        .collect();
                    (e.method.to_string(), metrics)
                })
                .collect();
            let name = format!("radar_{reference}_tau{i}.csv");
            write_radar_csv(&dir.join(&name), &radar_from_values(&values))?;
            written.push((format!("radar:{reference}:{i}"), name));
        }
    }
    for &method in methods {
        for reference in [Reference::Observation, Reference::Holdout] {
            let hist = doc
                .find(method, reference, 0)
                .and_then(|e| e.reports.first())
                .and_then(|r| r.histogram.as_ref());
            if let Some(h) = hist {
                let name = format!("density_{}_{reference}.csv", method.slug());
                h.write_csv(&dir.join(&name))?;
                written.push((format!("density:{method}:{reference}"), name));
            }
        }
    }
    Ok(written)
}

/// Distinct generated attributes absent from `reference_union`, by descending
/// predicted bias (ties by ascending encoding).
pub fn discover_unseen(
    sets: &[GeneratedSet],
    reference_union: &GroupBiasTable,
) -> Vec<(AttributeVector, f64)> {
    let mut found: BTreeMap<AttributeVector, f64> = BTreeMap::new();
    for item in sets.iter().flat_map(|s| &s.items) {
        if !reference_union.contains(&item.attribute) {
            found
                .entry(item.attribute.clone())
                .or_insert(item.predicted_bias);
        }
    }
    let mut out: Vec<(AttributeVector, f64)> = found.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Comma-joined names of the active attributes; with `negated`, inactive
/// attributes follow as `not <name>`.
pub fn render_attributes(a: &AttributeVector, names: &[String], negated: bool) -> String {
    let mut parts: Vec<String> = (0..a.dimension())
        .filter(|&i| a.bit(i) == 1)
        .map(|i| names[i].clone())
        .collect();
    if negated {
        parts.extend(
            (0..a.dimension())
                .filter(|&i| a.bit(i) == 0)
                .map(|i| format!("not {}", names[i])),
        );
    }
    if parts.is_empty() {
        "(no active attributes)".to_string()
    } else {
        parts.join(", ")
    }
}

/// `a0..,predicted_bias,attributes` rows.
pub fn write_unseen_csv(
    path: &Path,
    unseen: &[(AttributeVector, f64)],
    names: &[String],
    negated: bool,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..names.len()).map(|i| format!("a{i}")).collect();
    header.push("predicted_bias".into());
    header.push("attributes".into());
    wtr.write_record(&header)?;
    for (a, b) in unseen {
        let mut row: Vec<String> = a.bits().iter().map(|b| b.to_string()).collect();
        row.push(b.to_string());
        row.push(render_attributes(a, names, negated));
        wtr.write_record(&row)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// One prompt-style text line per unseen attribute.
pub fn unseen_prompt_lines(
    unseen: &[(AttributeVector, f64)],
    names: &[String],
    negated: bool,
) -> String {
    unseen
        .iter()
        .enumerate()
        .map(|(i, (a, b))| {
            format!(
                "{}. [predicted bias {b:.4}] {}\n",
                i + 1,
                render_attributes(a, names, negated)
            )
        })
        .collect()
}
