//! Retrieval-style metrics for a generated multiset of attribute vectors
//! against a reference bias table.
//!
//! Membership in the high-bias set is always judged against the reference:
//! an item is high-bias iff its attribute occurs in the reference with bias
//! at least τ. Ranking uses the reference bias when known and the predicted
//! bias otherwise; ties go to the smaller binary encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attrspace::{AttributeVector, GroupBiasTable};
use crate::error::{Error, Result};
use crate::model::{GeneratedItem, GeneratedSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    Natural,
    Two,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub dcg_k: usize,
    pub dcg_log_base: LogBase,
    /// Replaces `round(N_gen · r_gt)` as the precision cutoff.
    pub precision_k: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            dcg_k: 20,
            dcg_log_base: LogBase::Natural,
            precision_k: None,
            histogram_bins: 10,
        }
    }
}

/// Items sorted by descending score, ties by ascending binary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<(AttributeVector, f64)>,
}

impl RankedList {
    pub fn new(mut items: Vec<(AttributeVector, f64)>) -> Self {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, k: usize) -> &[(AttributeVector, f64)] {
        &self.items[..k.min(self.items.len())]
    }

    /// 1-based rank of the first occurrence of `a`.
    pub fn rank_of(&self, a: &AttributeVector) -> Option<usize> {
        self.items.iter().position(|(x, _)| x == a).map(|p| p + 1)
    }
}

fn score(item: &GeneratedItem, reference: &GroupBiasTable) -> f64 {
    reference
        .bias(&item.attribute)
        .unwrap_or(item.predicted_bias)
}

fn is_high(a: &AttributeVector, reference: &GroupBiasTable, tau: f64) -> bool {
    reference.bias(a).is_some_and(|b| b >= tau)
}

/// All generated items (with multiplicity) ranked by score.
pub fn rank_items(gen: &GeneratedSet, reference: &GroupBiasTable) -> RankedList {
    RankedList::new(
        gen.items
            .iter()
            .map(|i| (i.attribute.clone(), score(i, reference)))
            .collect(),
    )
}

/// Distinct generated attributes ranked by score.
pub fn rank_distinct(gen: &GeneratedSet, reference: &GroupBiasTable) -> RankedList {
    let mut seen = BTreeMap::new();
    for item in &gen.items {
        seen.entry(item.attribute.clone())
            .or_insert_with(|| score(item, reference));
    }
    RankedList::new(seen.into_iter().collect())
}

/// Reference high-bias attributes ranked by bias.
pub fn rank_reference(reference: &GroupBiasTable, tau: f64) -> RankedList {
    RankedList::new(
        reference
            .high_bias(tau)
            .map(|(a, s)| (a.clone(), s.bias))
            .collect(),
    )
}

fn check_dimension(gen: &GeneratedSet, reference: &GroupBiasTable) -> Result<()> {
    for item in &gen.items {
        item.attribute.check_dimension(reference.dimension())?;
    }
    Ok(())
}

/// `(N_gen^B, N_gen^B / N_gen)`, counting duplicates.
pub fn bias_number_and_ratio(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
) -> Result<(usize, f64)> {
    if gen.is_empty() {
        return Err(Error::Empty("generated set"));
    }
    check_dimension(gen, reference)?;
    let n = gen
        .items
        .iter()
        .filter(|i| is_high(&i.attribute, reference, tau))
        .count();
    Ok((n, n as f64 / gen.len() as f64))
}

fn reference_high_count(reference: &GroupBiasTable, tau: f64) -> Result<usize> {
    let n = reference.count_at_least(tau);
    if n == 0 {
        return Err(Error::invalid(format!(
            "reference has no group with bias ≥ {tau}"
        )));
    }
    Ok(n)
}

/// Precision over the top `round(N_gen · r_gt)` ranked items; returns `(value, K)`.
pub fn precision_at_k(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
    k_override: Option<usize>,
) -> Result<(f64, usize)> {
    if gen.is_empty() {
        return Err(Error::Empty("generated set"));
    }
    check_dimension(gen, reference)?;
    let r_gt = reference_high_count(reference, tau)? as f64 / reference.len() as f64;
    let k = k_override
        .unwrap_or_else(|| (gen.len() as f64 * r_gt).round() as usize)
        .max(1);
    let ranked = rank_items(gen, reference);
    let hits = ranked
        .top(k)
        .iter()
        .filter(|(a, _)| is_high(a, reference, tau))
        .count();
    Ok((hits as f64 / k as f64, k))
}

/// Distinct reference high-bias attributes among the top `N_gt^B` ranked
/// items, over `N_gt^B`; returns `(value, K)`.
pub fn recall_at_k(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
) -> Result<(f64, usize)> {
    check_dimension(gen, reference)?;
    let k = reference_high_count(reference, tau)?;
    let ranked = rank_items(gen, reference);
    let hits: BTreeSet<&AttributeVector> = ranked
        .top(k)
        .iter()
        .map(|(a, _)| a)
        .filter(|a| is_high(a, reference, tau))
        .collect();
    Ok((hits.len() as f64 / k as f64, k))
}

/// Average discounted gain of the top `K` distinct attributes; returns `(value, K_used)`.
pub fn avg_dcg_at_k(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    k: usize,
    base: LogBase,
) -> Result<(f64, usize)> {
    check_dimension(gen, reference)?;
    let ranked = rank_distinct(gen, reference);
    let used = k.min(ranked.len());
    if used == 0 {
        return Err(Error::Empty("generated set"));
    }
    let total: f64 = ranked
        .top(used)
        .iter()
        .enumerate()
        .map(|(i, (_, gain))| gain / base.log((i + 1) as f64 + 2.0))
        .fold(0.0, |acc, x| acc + x);
    Ok((total / used as f64, used))
}

/// Rank-alignment score over the top `max(1, round(0.05 · N_gt^B))`
/// reference attributes; returns `(value, K)`.
pub fn rr_at_k_score(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
) -> Result<(f64, usize)> {
    check_dimension(gen, reference)?;
    let n_gt = reference_high_count(reference, tau)?;
    let k = ((0.05 * n_gt as f64).round() as usize).max(1);
    let truth = rank_reference(reference, tau);
    let generated = rank_distinct(gen, reference);
    let total: f64 = truth
        .top(k)
        .iter()
        .enumerate()
        .filter_map(|(i, (a, _))| {
            generated
                .rank_of(a)
                .map(|r| (-((i + 1) as f64 - r as f64).abs()).exp())
        })
        .fold(0.0, |acc, x| acc + x);
    Ok((total / k as f64, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniform edges over `[0, max score]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by the number of items.
    pub fractions: Vec<f64>,
}

/// Distribution of item scores (reference bias, else predicted) over uniform bins.
pub fn bias_histogram(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    bins: usize,
) -> Result<Histogram> {
    if gen.is_empty() {
        return Err(Error::Empty("generated set"));
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    check_dimension(gen, reference)?;
    let scores: Vec<f64> = gen.items.iter().map(|i| score(i, reference)).collect();
    let max = scores.iter().copied().fold(0.0, f64::max);
    let upper = if max > 0.0 { max } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| upper * i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for s in &scores {
        let b = ((s / upper) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let fractions = counts
        .iter()
        .map(|&c| c as f64 / scores.len() as f64)
        .collect();
    Ok(Histogram {
        edges,
        counts,
        fractions,
    })
}

impl Histogram {
    /// Rows `bin_left,bin_right,density`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["bin_left", "bin_right", "density"])?;
        for (i, f) in self.fractions.iter().enumerate() {
            wtr.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                f.to_string(),
            ])?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        crate::pipeline::write_atomic(path, &bytes)
    }
}

/// All metrics for one generated set at one threshold. Metrics that are
/// undefined for the inputs (no reference high-bias group, empty set) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tau: f64,
    pub n_gen: usize,
    pub n_distinct: usize,
    /// Distinct generated attributes whose reference bias is at least τ.
    pub distinct_bias_number: usize,
    pub bias_number: Option<usize>,
    pub bias_ratio: Option<f64>,
    pub precision_at_k: Option<f64>,
    pub precision_k: Option<usize>,
    pub recall_at_k: Option<f64>,
    pub recall_k: Option<usize>,
    pub avg_dcg_at_k: Option<f64>,
    pub dcg_k: usize,
    pub dcg_k_used: Option<usize>,
    pub rr_at_k_score: Option<f64>,
    pub rr_k: Option<usize>,
    pub histogram: Option<Histogram>,
    pub reference_groups: usize,
    pub reference_high_bias: usize,
    pub metadata: BTreeMap<String, String>,
}

fn report(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
    config: &MetricConfig,
    strict: bool,
) -> Result<MetricReport> {
    check_dimension(gen, reference)?;
    let lift = |r: Result<(f64, usize)>| -> Result<(Option<f64>, Option<usize>)> {
        match r {
            Ok((v, k)) => Ok((Some(v), Some(k))),
            Err(e) if strict => Err(e),
            Err(_) => Ok((None, None)),
        }
    };
    let (bias_number, bias_ratio) = match bias_number_and_ratio(gen, reference, tau) {
        Ok((n, r)) => (Some(n), Some(r)),
        Err(e) if strict => return Err(e),
        Err(_) => (None, None),
    };
    let (precision_at_k, precision_k) =
        lift(precision_at_k(gen, reference, tau, config.precision_k))?;
    let (recall_at_k, recall_k) = lift(recall_at_k(gen, reference, tau))?;
    let (avg_dcg_at_k, dcg_k_used) = lift(avg_dcg_at_k(
        gen,
        reference,
        config.dcg_k,
        config.dcg_log_base,
    ))?;
    let (rr_at_k_score, rr_k) = lift(rr_at_k_score(gen, reference, tau))?;
    let histogram = match bias_histogram(gen, reference, config.histogram_bins) {
        Ok(h) => Some(h),
        Err(e) if strict => return Err(e),
        Err(_) => None,
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("model_hash".into(), gen.metadata.model_hash.clone());
    metadata.insert("seed".into(), gen.metadata.seed.to_string());
    metadata.insert(
        "dcg_log_base".into(),
        format!("{:?}", config.dcg_log_base).to_lowercase(),
    );
    Ok(MetricReport {
        tau,
        n_gen: gen.len(),
        n_distinct: gen.attributes().collect::<BTreeSet<_>>().len(),
        distinct_bias_number: distinct_bias_number(gen, reference, tau),
        bias_number,
        bias_ratio,
        precision_at_k,
        precision_k,
        recall_at_k,
        recall_k,
        avg_dcg_at_k,
        dcg_k: config.dcg_k,
        dcg_k_used,
        rr_at_k_score,
        rr_k,
        histogram,
        reference_groups: reference.len(),
        reference_high_bias: reference.count_at_least(tau),
        metadata,
    })
}

pub fn distinct_bias_number(gen: &GeneratedSet, reference: &GroupBiasTable, tau: f64) -> usize {
    gen.attributes()
        .filter(|a| reference.bias(a).is_some_and(|b| b >= tau))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Every metric; fails if any of them is undefined for these inputs.
pub fn evaluate(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
    config: &MetricConfig,
) -> Result<MetricReport> {
    report(gen, reference, tau, config, true)
}

/// Like [`evaluate`], but undefined metrics become `None` instead of errors.
pub fn evaluate_lenient(
    gen: &GeneratedSet,
    reference: &GroupBiasTable,
    tau: f64,
    config: &MetricConfig,
) -> Result<MetricReport> {
    report(gen, reference, tau, config, false)
}

impl MetricReport {
    /// `(name, value)` for the six scalar metrics, in a fixed order.
    pub fn scalar_metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("bias_number", self.bias_number.map(|n| n as f64)),
            ("bias_ratio", self.bias_ratio),
            ("precision_at_k", self.precision_at_k),
            ("recall_at_k", self.recall_at_k),
            ("avg_dcg_at_k", self.avg_dcg_at_k),
            ("rr_at_k_score", self.rr_at_k_score),
        ]
    }
}

/// One radar-chart row: a metric value divided by the best value among the
/// compared methods (so the best method scores 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub normalized: f64,
}

pub fn radar_rows(reports: &[(String, MetricReport)]) -> Vec<RadarRow> {
    let values: Vec<(String, Vec<(String, Option<f64>)>)> = reports
        .iter()
        .map(|(m, r)| {
            (
                m.clone(),
                r.scalar_metrics()
                    .into_iter()
                    .map(|(n, v)| (n.to_string(), v))
                    .collect(),
            )
        })
        .collect();
    radar_from_values(&values)
}

/// Radar rows from `(method, [(metric, value)])`; undefined values count as 0.
pub fn radar_from_values(values: &[(String, Vec<(String, Option<f64>)>)]) -> Vec<RadarRow> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, metrics) in values {
        for (name, v) in metrics {
            let entry = best.entry(name).or_insert(0.0);
            *entry = entry.max(v.unwrap_or(0.0));
        }
    }
    let mut rows = Vec::new();
    for (method, metrics) in values {
        for (name, v) in metrics {
            let value = v.unwrap_or(0.0);
            let top = best[name.as_str()];
            rows.push(RadarRow {
                method: method.clone(),
                metric: name.clone(),
                value,
                normalized: if top > 0.0 { value / top } else { 0.0 },
            });
        }
    }
    rows
}

pub fn write_radar_csv(path: &Path, rows: &[RadarRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["method", "metric", "value", "normalized"])?;
    for r in rows {
        wtr.write_record([
            r.method.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.normalized.to_string(),
        ])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    crate::pipeline::write_atomic(path, &bytes)
}
