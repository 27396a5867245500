//! Safety-monitor data preparation, training and evaluation.
//!
//! Every image inherits the safety level of the degraded dataset it came
//! from. Splits and cross-validation folds are stratified by level.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::SafetyLabel;
use crate::degrade::DegradedDataset;
use crate::error::{Error, Result};
use crate::imageio::{Image, LabeledDataset};
use crate::nn::{self, argmax, Architecture, Model, TrainConfig};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorDataset {
    pub images: Vec<Image>,
    pub levels: Vec<SafetyLabel>,
    /// `(dataset_id, index in the source dataset)` for every image.
    pub provenance: Vec<(String, usize)>,
    /// Number of safety levels, `m`.
    pub level_count: usize,
}

impl MonitorDataset {
    pub fn new(images: Vec<Image>, levels: Vec<SafetyLabel>, provenance: Vec<(String, usize)>, level_count: usize) -> Result<Self> {
        if images.len() != levels.len() || images.len() != provenance.len() {
            return Err(Error::Dimension {
                expected: format!("{} levels and provenance entries", images.len()),
                found: format!("{} and {}", levels.len(), provenance.len()),
            });
        }
        if let Some(l) = levels.iter().find(|l| l.0 == 0 || l.0 > level_count) {
            return Err(Error::LabelRange { label: l.0, classes: level_count });
        }
        Ok(Self { images, levels, provenance, level_count })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.level_count];
        for l in &self.levels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Zero-based class indices for the classifier.
    pub fn class_indices(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.index()).collect()
    }

    /// Share of the most common level.
    pub fn majority_fraction(&self) -> f64 {
        let counts = self.level_counts();
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }

    /// Packed-file view: labels are zero-based level indices.
    pub fn to_labeled(&self) -> Result<LabeledDataset> {
        LabeledDataset::new(self.images.clone(), self.class_indices(), self.level_count)
    }

    pub fn from_labeled(dataset: LabeledDataset, provenance: Vec<(String, usize)>) -> Result<Self> {
        let level_count = dataset.classes();
        let (images, labels) = dataset.into_parts();
        let levels = labels.into_iter().map(SafetyLabel::from_index).collect();
        Self::new(images, levels, provenance, level_count)
    }

    pub fn provenance_csv(&self) -> String {
        let mut out = String::from("dataset_id,source_index,level\n");
        for ((id, idx), l) in self.provenance.iter().zip(&self.levels) {
            let _ = writeln!(out, "{id},{idx},{}", l.0);
        }
        out
    }

    pub fn parse_provenance_csv(text: &str) -> Result<Vec<(String, usize)>> {
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|line| {
                let mut parts = line.split(',');
                let id = parts.next().unwrap_or_default().to_string();
                let idx = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad provenance line {line:?}")))?;
                Ok((id, idx))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

/// Stratified train/test split over sample indices.
///
/// Indices are grouped by level, shuffled within each level, and the first
/// `round(fraction * n_level)` of each group go to training. Groups are
/// concatenated in level order and the training indices shuffled once more.
pub fn split_indices(levels: &[SafetyLabel], level_count: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for level in 1..=level_count {
        let mut group: Vec<usize> = (0..levels.len()).filter(|&i| levels[i].0 == level).collect();
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(Error::Split(format!("level {level} has only {} sample", group.len())));
        }
        group.shuffle(&mut rng);
        let n_train = (spec.train_fraction * group.len() as f64).round() as usize;
        train.extend_from_slice(&group[..n_train]);
        test.extend_from_slice(&group[n_train..]);
    }
    train.shuffle(&mut rng);
    Ok((train, test))
}

/// Builds the monitor train and test sets from labeled degraded datasets.
pub fn prepare(labeled: Vec<(DegradedDataset, SafetyLabel)>, level_count: usize, spec: &SplitSpec) -> Result<(MonitorDataset, MonitorDataset)> {
    let mut images = Vec::new();
    let mut levels = Vec::new();
    let mut provenance = Vec::new();
    for (degraded, label) in labeled {
        let id = degraded.id().to_string();
        let (imgs, _) = degraded.dataset.into_parts();
        for (i, img) in imgs.into_iter().enumerate() {
            images.push(img);
            levels.push(label);
            provenance.push((id.clone(), i));
        }
    }
    if let Some(l) = levels.iter().find(|l| l.0 == 0 || l.0 > level_count) {
        return Err(Error::LabelRange { label: l.0, classes: level_count });
    }
    let (train_idx, test_idx) = split_indices(&levels, level_count, spec)?;
    let mut slots: Vec<Option<Image>> = images.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| MonitorDataset {
        images: idx.iter().map(|&i| slots[i].take().expect("index used once")).collect(),
        levels: idx.iter().map(|&i| levels[i]).collect(),
        provenance: idx.iter().map(|&i| provenance[i].clone()).collect(),
        level_count,
    };
    let train = take(&train_idx);
    let test = take(&test_idx);
    Ok((train, test))
}

/// Trains a classifier whose outputs are the safety levels.
pub fn train_monitor(train: &MonitorDataset, arch: &Architecture, config: &TrainConfig) -> Result<nn::Trained> {
    let present = train.level_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Config(format!("monitor training needs at least 2 distinct levels, found {present}")));
    }
    let arch = arch.with_classes(train.level_count);
    let refs: Vec<&Image> = train.images.iter().collect();
    nn::train(&refs, &train.class_indices(), &arch, config)
}

// ---------------------------------------------------------------------------
// Metrics

/// Square confusion matrix; rows are true levels, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn to_csv(&self, level_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in level_names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (name, row) in level_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(truth: &[SafetyLabel], predicted: &[SafetyLabel], level_count: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension { expected: format!("{} predictions", truth.len()), found: predicted.len().to_string() });
    }
    let mut counts = vec![vec![0; level_count]; level_count];
    for (t, p) in truth.iter().zip(predicted) {
        for l in [t, p] {
            if l.0 == 0 || l.0 > level_count {
                return Err(Error::LabelRange { label: l.0, classes: level_count });
            }
        }
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this value are classified positive; the first
    /// point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(positives: &[bool]) -> Result<(usize, usize)> {
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedRoc(format!("{p} positives and {n} negatives")));
    }
    Ok((p, n))
}

/// Threshold sweep over distinct scores, highest first. Tied scores enter
/// the curve together.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != positives.len() {
        return Err(Error::Dimension { expected: format!("{} labels", scores.len()), found: positives.len().to_string() });
    }
    let (p, n) = class_counts(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold, fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 });
    }
    Ok(points)
}

/// Trapezoidal area under a curve.
pub fn auc_from_curve(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from average ranks.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Dimension { expected: format!("{} labels", scores.len()), found: positives.len().to_string() });
    }
    let (p, n) = class_counts(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mean_rank * order[i..j].iter().filter(|&&k| positives[k]).count() as f64;
        i = j;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocSummary {
    fn compute(scores: &[f64], positives: &[bool]) -> Option<Self> {
        let points = roc_curve(scores, positives).ok()?;
        let auc = auc(scores, positives).ok()?;
        Some(Self { points, auc })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{:.6},{:.6}", p.threshold, p.fpr, p.tpr);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// One-vs-rest curve per level (index 0 = level 1); `None` when a
    /// level has no positives or no negatives in the evaluated data.
    pub roc: Vec<Option<RocSummary>>,
    /// Micro-average over all (sample, level) pairs.
    pub aggregate_roc: Option<RocSummary>,
    pub fold_accuracies: Vec<f64>,
}

/// Scores evaluated probability rows against true levels.
pub fn report_from_probs(probs: &[Vec<f64>], truth: &[SafetyLabel], level_count: usize) -> Result<EvalReport> {
    let predicted: Vec<SafetyLabel> = probs.iter().map(|p| SafetyLabel::from_index(argmax(p))).collect();
    let confusion = confusion_matrix(truth, &predicted, level_count)?;
    let roc = (0..level_count)
        .map(|l| {
            let scores: Vec<f64> = probs.iter().map(|p| p[l]).collect();
            let positives: Vec<bool> = truth.iter().map(|t| t.index() == l).collect();
            RocSummary::compute(&scores, &positives)
        })
        .collect();
    let mut pooled_scores = Vec::with_capacity(probs.len() * level_count);
    let mut pooled_pos = Vec::with_capacity(probs.len() * level_count);
    for (p, t) in probs.iter().zip(truth) {
        for (l, &s) in p.iter().enumerate() {
            pooled_scores.push(s);
            pooled_pos.push(t.index() == l);
        }
    }
    let aggregate_roc = RocSummary::compute(&pooled_scores, &pooled_pos);
    let count = truth.len();
    let accuracy = if count == 0 { 0.0 } else { confusion.accuracy() };
    Ok(EvalReport { count, accuracy, confusion, roc, aggregate_roc, fold_accuracies: Vec::new() })
}

pub fn evaluate(model: &Model, data: &MonitorDataset) -> Result<EvalReport> {
    let probs: Vec<Vec<f64>> = data.images.par_iter().map(|img| model.predict(img)).collect::<Result<_>>()?;
    report_from_probs(&probs, &data.levels, data.level_count)
}

/// Stratified fold index for every sample: each level's samples are
/// shuffled, then dealt round-robin across the folds.
pub fn stratified_folds(levels: &[SafetyLabel], level_count: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Split(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![0; levels.len()];
    for level in 1..=level_count {
        let mut group: Vec<usize> = (0..levels.len()).filter(|&i| levels[i].0 == level).collect();
        if group.is_empty() {
            continue;
        }
        if group.len() < folds {
            return Err(Error::Split(format!("level {level} has {} samples, fewer than {folds} folds", group.len())));
        }
        group.shuffle(&mut rng);
        for (pos, &i) in group.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub fold_of: Vec<usize>,
    pub fold_accuracies: Vec<f64>,
    /// Out-of-fold predictions pooled over every fold.
    pub pooled: EvalReport,
    pub fold_model_checksums: Vec<u32>,
}

/// k-fold cross-validation; folds train independently (possibly in
/// parallel) and the pooled report does not depend on scheduling.
pub fn kfold_cv(data: &MonitorDataset, folds: usize, arch: &Architecture, config: &TrainConfig) -> Result<CvResult> {
    let fold_of = stratified_folds(&data.levels, data.level_count, folds, derive_seed(config.seed, "folds"))?;
    let arch = arch.with_classes(data.level_count);
    let classes = data.class_indices();

    let per_fold: Vec<(Vec<usize>, Vec<Vec<f64>>, u32)> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| fold_of[i] == fold);
            let images: Vec<&Image> = train.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<usize> = train.iter().map(|&i| classes[i]).collect();
            let cfg = TrainConfig { seed: derive_seed(config.seed, &format!("fold-{fold}")), ..config.clone() };
            let trained = nn::train(&images, &labels, &arch, &cfg)?;
            let probs = test.iter().map(|&i| trained.model.predict(&data.images[i])).collect::<Result<Vec<_>>>()?;
            Ok((test, probs, trained.model.checksum()))
        })
        .collect::<Result<_>>()?;

    let mut pooled_probs = vec![Vec::new(); data.len()];
    let mut fold_accuracies = Vec::with_capacity(folds);
    let mut fold_model_checksums = Vec::with_capacity(folds);
    for (test, probs, checksum) in per_fold {
        let correct = test.iter().zip(&probs).filter(|(&i, p)| argmax(p) == classes[i]).count();
        fold_accuracies.push(correct as f64 / test.len().max(1) as f64);
        fold_model_checksums.push(checksum);
        for (i, p) in test.into_iter().zip(probs) {
            pooled_probs[i] = p;
        }
    }
    let mut pooled = report_from_probs(&pooled_probs, &data.levels, data.level_count)?;
    pooled.fold_accuracies = fold_accuracies.clone();
    Ok(CvResult { fold_of, fold_accuracies, pooled, fold_model_checksums })
}
