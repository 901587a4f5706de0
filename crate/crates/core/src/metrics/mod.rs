//! ROC AUC, F1, repeated-run reports and the N-way one-shot protocol.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrupt::Corruption;
use crate::data::{sample_episode, sample_pairs, EpisodeSpec, LabeledDataset, PairOptions};
use crate::error::{Error, Result};
use crate::nn::{PairExample, PairLabel, PairScorer};
use crate::rng::{self, tag};

pub const CSV_HEADER: &str = "experiment,corruption,metric,mean,std,runs";

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::contract(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::contract("AUC needs both classes present"));
    }
    Ok((pos, neg))
}

/// Indices sorted by score, ascending.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Probability that a random positive (label 1) outscores a random
/// negative, ties counted one half. Computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let idx = order(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the empirical ROC curve by the trapezoid rule, sweeping the
/// threshold over distinct scores from high to low.
pub fn roc_auc_trapezoid(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut idx = order(scores);
    idx.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Harmonic mean of precision and recall for label 1; 0 when both are 0.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "f1 needs equal non-empty inputs, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            (0, 0) => {}
            _ => return Err(Error::contract("f1 inputs must be 0 or 1")),
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Hex sha256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
}

/// One metric over repeated runs. `std` uses the population denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub corruption: String,
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub std_denominator: String,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_values(metric: &str, corruption: &str, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("a report needs at least one run"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        // keep the mean inside [min, max] despite rounding
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Ok(Self {
            experiment: String::new(),
            corruption: corruption.to_string(),
            metric: metric.to_string(),
            runs: values.len(),
            values,
            mean: mean.clamp(lo, hi),
            std: var.sqrt(),
            std_denominator: "population".to_string(),
            fingerprint: String::new(),
        })
    }

    pub fn labeled(mut self, experiment: &str, fingerprint: &str) -> Self {
        self.experiment = experiment.to_string();
        self.fingerprint = fingerprint.to_string();
        self
    }

    /// `experiment,corruption,metric,mean,std,runs` with three decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{}",
            self.experiment, self.corruption, self.metric, self.mean, self.std, self.runs
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairEvalConfig {
    pub n_pairs: usize,
    pub runs: usize,
    pub pairs: PairOptions,
}

impl Default for PairEvalConfig {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            runs: 10,
            pairs: PairOptions::default(),
        }
    }
}

/// AUC and F1 reports of one scorer on one corrupted probe condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub auc: EvalReport,
    pub f1: EvalReport,
}

/// For each run: corrupt the probe set with stream `(seed, run)`, draw
/// balanced pairs, score them and compute AUC and F1 at `threshold`.
pub fn evaluate_pairs(
    scorer: &dyn PairScorer,
    probe: &LabeledDataset,
    corruption: &Corruption,
    cfg: &PairEvalConfig,
    threshold: f64,
    seed: u64,
) -> Result<PairEvaluation> {
    if probe.counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::contract("probe set needs at least two populated patterns"));
    }
    if cfg.runs == 0 {
        return Err(Error::contract("evaluation needs at least one run"));
    }
    let mut aucs = Vec::with_capacity(cfg.runs);
    let mut f1s = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs as u64 {
        let corrupted = corruption.apply_dataset(probe, seed, run)?;
        let mut r = rng::stream(seed, &[tag::EVAL_PAIRS, run]);
        let pairs = sample_pairs(&corrupted, cfg.n_pairs, &cfg.pairs, &mut r)?;
        let scores = scorer.score_pairs(&pairs)?;
        let labels: Vec<u8> = pairs.iter().map(|p| p.label as u8).collect();
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
        aucs.push(roc_auc(&scores, &labels)?);
        f1s.push(f1(&preds, &labels)?);
    }
    let name = corruption.to_string();
    Ok(PairEvaluation {
        auc: EvalReport::from_values("auc", &name, aucs)?,
        f1: EvalReport::from_values("f1", &name, f1s)?,
    })
}

/// Index of the smallest score; the first wins ties.
pub fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Per trial: sample an episode, score every `(template, query)` pair and
/// predict the way with the lowest score. Values are per-trial accuracies.
pub fn evaluate_oneshot(
    scorer: &dyn PairScorer,
    probe: &LabeledDataset,
    spec: &EpisodeSpec,
    trials: usize,
    seed: u64,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::contract("one-shot evaluation needs at least one trial"));
    }
    let mut accuracies = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        let mut r = rng::stream(seed, &[tag::EPISODE, t]);
        let ep = sample_episode(probe, spec, &mut r)?;
        let mut pairs = Vec::with_capacity(ep.queries.len() * ep.support.len());
        for &(q, truth) in &ep.queries {
            for (way, &s) in ep.support.iter().enumerate() {
                pairs.push(PairExample::new(
                    probe.sample(s).clone(),
                    probe.sample(q).clone(),
                    PairLabel::from_different(way != truth),
                )?);
            }
        }
        let scores = scorer.score_pairs(&pairs)?;
        let correct = scores
            .chunks(ep.support.len())
            .zip(&ep.queries)
            .filter(|(row, (_, truth))| argmin_first(row) == Some(*truth))
            .count();
        accuracies.push(correct as f64 / ep.queries.len() as f64);
    }
    EvalReport::from_values("accuracy", &format!("{}-way", spec.n_way), accuracies)
}

/// Scores each pair by its true label (or `1 - label` when inverted).
/// Used to sanity-check evaluation plumbing.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOracle {
    pub invert: bool,
}

impl PairScorer for LabelOracle {
    fn score_pairs(&self, pairs: &[PairExample]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|p| if self.invert { 1.0 - p.label.value() } else { p.label.value() })
            .collect())
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

/// Gives every pair the same score.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn score_pairs(&self, pairs: &[PairExample]) -> Result<Vec<f64>> {
        Ok(vec![self.0; pairs.len()])
    }

    fn threshold(&self) -> f64 {
        self.0
    }
}
