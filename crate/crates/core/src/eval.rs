//! Forecast evaluation: minADE/minFDE over the k most likely modes, miss
//! rate, RMSE of the most likely mode, and worst-case top-p% strata.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::batch;
use crate::error::{Error, Result};
use crate::geom::{self, Vec2};

/// Default miss-rate threshold in metres.
pub const DEFAULT_MISS_THRESHOLD: f64 = 2.0;

/// Floor applied before taking the log of a mode probability.
pub const EPS_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub sample_id: String,
    pub modes: Vec<Vec<Vec2>>,
    pub probs: Vec<f64>,
    pub gt: Vec<Vec2>,
}

impl ForecastSample {
    pub fn validate(&self) -> Result<()> {
        let id = &self.sample_id;
        if self.modes.is_empty() {
            return Err(Error::validation(format!("sample {id}: no modes")));
        }
        if self.gt.is_empty() {
            return Err(Error::validation(format!(
                "sample {id}: empty ground truth"
            )));
        }
        if self.probs.len() != self.modes.len() {
            return Err(Error::validation(format!(
                "sample {id}: {} probabilities for {} modes",
                self.probs.len(),
                self.modes.len()
            )));
        }
        if let Some(k) = self.modes.iter().position(|m| m.len() != self.gt.len()) {
            return Err(Error::validation(format!(
                "sample {id}: mode {k} length differs from ground truth"
            )));
        }
        let finite = |pts: &[Vec2]| pts.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.gt) || !self.modes.iter().all(|m| finite(m)) {
            return Err(Error::validation(format!(
                "sample {id}: non-finite coordinate"
            )));
        }
        if self.probs.iter().any(|&p| p.is_nan() || p < 0.0)
            || (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::validation(format!(
                "sample {id}: probabilities must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn horizon(&self) -> usize {
        self.gt.len()
    }

    /// Indices of the `k` most probable modes; equal probabilities keep mode
    /// order.
    pub fn top_k_modes(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.num_modes() {
            return Err(Error::usage(format!(
                "sample {}: k = {k} but {} modes available",
                self.sample_id,
                self.num_modes()
            )));
        }
        let mut idx: Vec<usize> = (0..self.num_modes()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]));
        idx.truncate(k);
        Ok(idx)
    }

    pub fn most_likely_mode(&self) -> usize {
        self.top_k_modes(1).map_or(0, |v| v[0])
    }

    /// Pointwise L2 errors of one mode.
    pub fn mode_errors(&self, mode: usize) -> Vec<f64> {
        self.modes[mode]
            .iter()
            .zip(&self.gt)
            .map(|(&p, &g)| geom::norm(geom::sub(p, g)))
            .collect()
    }

    pub fn mode_ade(&self, mode: usize) -> f64 {
        self.mode_errors(mode).iter().sum::<f64>() / self.horizon() as f64
    }

    pub fn mode_fde(&self, mode: usize) -> f64 {
        let last = self.horizon() - 1;
        geom::norm(geom::sub(self.modes[mode][last], self.gt[last]))
    }
}

pub fn min_ade(sample: &ForecastSample, k: usize) -> Result<f64> {
    Ok(sample
        .top_k_modes(k)?
        .into_iter()
        .map(|m| sample.mode_ade(m))
        .fold(f64::INFINITY, f64::min))
}

pub fn min_fde(sample: &ForecastSample, k: usize) -> Result<f64> {
    Ok(sample
        .top_k_modes(k)?
        .into_iter()
        .map(|m| sample.mode_fde(m))
        .fold(f64::INFINITY, f64::min))
}

/// Fraction of samples whose best final error over `k` modes strictly
/// exceeds `threshold`.
pub fn miss_rate(samples: &[ForecastSample], k: usize, threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::usage("miss rate of an empty sample set"));
    }
    let mut misses = 0usize;
    for s in samples {
        if min_fde(s, k)? > threshold {
            misses += 1;
        }
    }
    Ok(misses as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_horizon: Vec<f64>,
    pub overall: f64,
}

/// RMSE of the most likely mode per horizon step and pooled over all steps.
pub fn rmse(samples: &[ForecastSample]) -> Result<RmseReport> {
    let errors: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.mode_errors(s.most_likely_mode()))
        .collect();
    rmse_from_errors(&errors)
}

fn rmse_from_errors(errors: &[Vec<f64>]) -> Result<RmseReport> {
    let Some(first) = errors.first() else {
        return Err(Error::usage("RMSE of an empty sample set"));
    };
    let horizon = first.len();
    if errors.iter().any(|e| e.len() != horizon) {
        return Err(Error::usage("RMSE needs a uniform forecast horizon"));
    }
    let n = errors.len() as f64;
    let per_horizon: Vec<f64> = (0..horizon)
        .map(|t| (errors.iter().map(|e| e[t] * e[t]).sum::<f64>() / n).sqrt())
        .collect();
    let pooled = errors.iter().flatten().map(|e| e * e).sum::<f64>() / (n * horizon as f64);
    Ok(RmseReport {
        per_horizon,
        overall: pooled.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    MinAde,
    MinFde,
}

impl std::str::FromStr for RankMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_ade" => Ok(RankMetric::MinAde),
            "min_fde" => Ok(RankMetric::MinFde),
            other => Err(Error::usage(format!(
                "unknown ranking metric {other:?} (expected min_ade or min_fde)"
            ))),
        }
    }
}

/// Per-sample errors fed into the worst-case protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleErrors {
    pub sample_id: String,
    pub min_ade: f64,
    pub min_fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseStratum {
    pub percent: f64,
    pub count: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub sample_ids: Vec<String>,
}

/// Number of samples in a top-`percent` stratum of `n`.
pub fn stratum_size(percent: f64, n: usize) -> usize {
    // Guard against products such as 7 * 100 / 100 landing just above an integer.
    let exact = percent * n as f64 / 100.0;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// For each percentage p, the ceil(p * n / 100) samples with the largest
/// ranking error and their mean errors. Ties rank the larger sample id first.
pub fn worst_case_subsets(
    rows: &[SampleErrors],
    percents: &[f64],
    metric: RankMetric,
) -> Result<Vec<WorstCaseStratum>> {
    if rows.is_empty() {
        return Err(Error::usage("worst-case strata of an empty sample set"));
    }
    if let Some(p) = percents.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
        return Err(Error::usage(format!("percentage {p} outside (0, 100]")));
    }
    let key = |r: &SampleErrors| match metric {
        RankMetric::MinAde => r.min_ade,
        RankMetric::MinFde => r.min_fde,
    };
    let mut order: Vec<&SampleErrors> = rows.iter().collect();
    order.sort_by(|a, b| {
        key(b)
            .total_cmp(&key(a))
            .then_with(|| b.sample_id.cmp(&a.sample_id))
    });
    Ok(percents
        .iter()
        .map(|&p| {
            let count = stratum_size(p, rows.len());
            let top = &order[..count];
            WorstCaseStratum {
                percent: p,
                count,
                min_ade: top.iter().map(|r| r.min_ade).sum::<f64>() / count as f64,
                min_fde: top.iter().map(|r| r.min_fde).sum::<f64>() / count as f64,
                sample_ids: top.iter().map(|r| r.sample_id.clone()).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_1: 1.0,
            lambda_2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_cls, self.lambda_1, self.lambda_2]
            .iter()
            .any(|&w| !(w >= 0.0 && w.is_finite()))
        {
            return Err(Error::config(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub l_task: f64,
    pub k_star: usize,
}

/// Regression error of the lowest-ADE mode (mean squared L2 distance per
/// step) plus the weighted negative log-probability of that mode.
pub fn task_loss(sample: &ForecastSample, weights: &LossWeights) -> Result<TaskLoss> {
    sample.validate()?;
    let k_star = (0..sample.num_modes())
        .min_by(|&a, &b| sample.mode_ade(a).total_cmp(&sample.mode_ade(b)))
        .expect("validated samples have modes");
    let mse = sample
        .mode_errors(k_star)
        .iter()
        .map(|e| e * e)
        .sum::<f64>()
        / sample.horizon() as f64;
    let nll = -sample.probs[k_star].max(EPS_PROB).ln();
    Ok(TaskLoss {
        l_task: mse + weights.lambda_cls * nll,
        k_star,
    })
}

pub fn total_loss(l_task: f64, l_ti: f64, l_meta: f64, weights: &LossWeights) -> f64 {
    l_task + weights.lambda_1 * l_ti + weights.lambda_2 * l_meta
}

/// Reads forecast samples from JSON Lines; blank lines are skipped.
pub fn parse_forecasts_jsonl<R: BufRead>(reader: R) -> Result<Vec<ForecastSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ForecastSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        sample.validate().map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub threshold: f64,
    pub percents: Vec<f64>,
    pub rank_metric: RankMetric,
    /// Mode budget used for the worst-case ranking; the largest of `ks` when
    /// absent.
    #[serde(default)]
    pub rank_k: Option<usize>,
}

impl EvalConfig {
    pub fn new(rank_metric: RankMetric) -> Self {
        Self {
            ks: vec![1, 5],
            threshold: DEFAULT_MISS_THRESHOLD,
            percents: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            rank_metric,
            rank_k: None,
        }
    }

    pub fn effective_rank_k(&self) -> usize {
        self.rank_k
            .unwrap_or_else(|| self.ks.iter().copied().max().unwrap_or(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::usage("k list must be nonempty and positive"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::usage(
                "miss threshold must be finite and non-negative",
            ));
        }
        if let Some(p) = self.percents.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return Err(Error::usage(format!("percentage {p} outside (0, 100]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleRow {
    pub sample_id: String,
    pub min_ade: BTreeMap<usize, f64>,
    pub min_fde: BTreeMap<usize, f64>,
    /// Pointwise errors of the most likely mode.
    pub top1_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub min_ade: BTreeMap<usize, f64>,
    pub min_fde: BTreeMap<usize, f64>,
    pub miss_rate: BTreeMap<usize, f64>,
    pub rmse: RmseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseEntry {
    pub count: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<PerSampleRow>,
    pub aggregate: Aggregate,
    pub worst_case: BTreeMap<String, WorstCaseEntry>,
    pub config_echo: EvalConfig,
}

/// Key of a worst-case stratum, e.g. `top1` or `top0.5`.
pub fn stratum_key(percent: f64) -> String {
    format!("top{percent}")
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn aggregate_from_rows(rows: &[PerSampleRow], config: &EvalConfig) -> Result<Aggregate> {
    let mut min_ade = BTreeMap::new();
    let mut min_fde = BTreeMap::new();
    let mut miss = BTreeMap::new();
    for &k in &config.ks {
        min_ade.insert(k, mean(rows.iter().map(|r| r.min_ade[&k])));
        min_fde.insert(k, mean(rows.iter().map(|r| r.min_fde[&k])));
        let misses = rows
            .iter()
            .filter(|r| r.min_fde[&k] > config.threshold)
            .count();
        miss.insert(k, misses as f64 / rows.len() as f64);
    }
    let errors: Vec<Vec<f64>> = rows.iter().map(|r| r.top1_errors.clone()).collect();
    Ok(Aggregate {
        n: rows.len(),
        min_ade,
        min_fde,
        miss_rate: miss,
        rmse: rmse_from_errors(&errors)?,
    })
}

fn worst_case_from_rows(
    rows: &[PerSampleRow],
    config: &EvalConfig,
) -> Result<BTreeMap<String, WorstCaseEntry>> {
    let k = config.effective_rank_k();
    let errors: Vec<SampleErrors> = rows
        .iter()
        .map(|r| SampleErrors {
            sample_id: r.sample_id.clone(),
            min_ade: r.min_ade[&k],
            min_fde: r.min_fde[&k],
        })
        .collect();
    Ok(
        worst_case_subsets(&errors, &config.percents, config.rank_metric)?
            .into_iter()
            .map(|s| {
                (
                    stratum_key(s.percent),
                    WorstCaseEntry {
                        count: s.count,
                        min_ade: s.min_ade,
                        min_fde: s.min_fde,
                        sample_ids: s.sample_ids,
                    },
                )
            })
            .collect(),
    )
}

/// Evaluates every sample (in parallel when enabled) and assembles the
/// report.
pub fn evaluate(samples: &[ForecastSample], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::usage("no forecast samples to evaluate"));
    }
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::usage(format!("duplicate sample_id {}", s.sample_id)));
        }
    }
    let mut ks: Vec<usize> = config.ks.clone();
    ks.push(config.effective_rank_k());
    ks.sort_unstable();
    ks.dedup();

    let rows = batch::try_map(samples, |s| {
        s.validate()?;
        let mut min_ade_k = BTreeMap::new();
        let mut min_fde_k = BTreeMap::new();
        for &k in &ks {
            min_ade_k.insert(k, min_ade(s, k)?);
            min_fde_k.insert(k, min_fde(s, k)?);
        }
        Ok(PerSampleRow {
            sample_id: s.sample_id.clone(),
            min_ade: min_ade_k,
            min_fde: min_fde_k,
            top1_errors: s.mode_errors(s.most_likely_mode()),
        })
    })?;

    let aggregate = aggregate_from_rows(&rows, config)?;
    let worst_case = worst_case_from_rows(&rows, config)?;
    Ok(EvalReport {
        per_sample: rows,
        aggregate,
        worst_case,
        config_echo: config.clone(),
    })
}

impl EvalReport {
    /// Recomputes every aggregate from the per-sample table and checks that
    /// it matches what the report carries.
    pub fn verify_consistency(&self) -> Result<()> {
        let agg = aggregate_from_rows(&self.per_sample, &self.config_echo)?;
        let wc = worst_case_from_rows(&self.per_sample, &self.config_echo)?;
        if agg != self.aggregate {
            return Err(Error::validation(
                "aggregate does not match the per-sample table",
            ));
        }
        if wc != self.worst_case {
            return Err(Error::validation(
                "worst-case table does not match the per-sample table",
            ));
        }
        Ok(())
    }
}
