//! How well do the criteria track localization quality?
//!
//! Pearson and Spearman correlations of each criterion with the ground
//! truth IoU, and wrapper feature selection around a decision tree.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{feature_group, CriteriaVector, FeatureGroup, FEATURE_COUNT, FEATURE_NAMES};
use crate::decision::{evaluate, train_tree, LabeledSet, TreeConfig};
use crate::error::{Error, Result};
use crate::matching::Category;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least 2 points"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // relative test: a constant column leaves only rounding noise
    let scale_x = x.iter().map(|v| v * v).sum::<f64>();
    let scale_y = y.iter().map(|v| v * v).sum::<f64>();
    if sxx <= 1e-24 * scale_x || syy <= 1e-24 * scale_y || sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub group: FeatureGroup,
    /// `None` where the correlation is undefined (zero variance or fewer
    /// than two usable rows).
    pub box_pearson: Option<f64>,
    pub box_spearman: Option<f64>,
    pub mask_pearson: Option<f64>,
    pub mask_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub box_rows: usize,
    pub mask_rows: usize,
    pub rows: Vec<CorrelationRow>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance | Error::EmptyInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Correlates every criterion with the box IoU and with the mask IoU to
/// ground truth. Each column uses the rows where that IoU is present.
pub fn correlation_report(
    features: &[CriteriaVector],
    box_iou: &[Option<f64>],
    mask_iou: &[Option<f64>],
) -> Result<CorrelationTable> {
    if features.len() != box_iou.len() {
        return Err(Error::LengthMismatch(features.len(), box_iou.len()));
    }
    if features.len() != mask_iou.len() {
        return Err(Error::LengthMismatch(features.len(), mask_iou.len()));
    }
    let column = |iou: &[Option<f64>]| -> (Vec<usize>, Vec<f64>) {
        iou.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).unzip()
    };
    let (box_idx, box_y) = column(box_iou);
    let (mask_idx, mask_y) = column(mask_iou);
    let mut rows = Vec::with_capacity(FEATURE_COUNT);
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        let bx: Vec<f64> = box_idx.iter().map(|&i| features[i].0[f]).collect();
        let mx: Vec<f64> = mask_idx.iter().map(|&i| features[i].0[f]).collect();
        rows.push(CorrelationRow {
            feature: name.to_string(),
            group: feature_group(f),
            box_pearson: defined(pearson(&bx, &box_y))?,
            box_spearman: defined(spearman(&bx, &box_y))?,
            mask_pearson: defined(pearson(&mx, &mask_y))?,
            mask_spearman: defined(spearman(&mx, &mask_y))?,
        });
    }
    Ok(CorrelationTable {
        box_rows: box_idx.len(),
        mask_rows: mask_idx.len(),
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:?}"))
}

impl CorrelationTable {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "feature",
            "group",
            "box_pearson",
            "box_spearman",
            "mask_pearson",
            "mask_spearman",
        ])?;
        for r in &self.rows {
            let group = serde_json::to_value(r.group)?;
            w.write_record([
                r.feature.clone(),
                group.as_str().unwrap_or_default().to_string(),
                cell(r.box_pearson),
                cell(r.box_spearman),
                cell(r.mask_pearson),
                cell(r.mask_spearman),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<correlations>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfsConfig {
    pub n_select: usize,
    pub folds: usize,
    pub tree: TreeConfig,
}

impl Default for SfsConfig {
    fn default() -> Self {
        SfsConfig {
            n_select: 10,
            folds: 5,
            tree: TreeConfig::default(),
        }
    }
}

impl SfsConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_select == 0 || self.n_select > n_features {
            return Err(Error::InvalidConfig(format!(
                "n_select must be in 1..={n_features}, got {}",
                self.n_select
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("sfs folds must be >= 2".into()));
        }
        self.tree.validate()
    }
}

/// One greedy step: the feature added (forward) or removed (backward) and
/// the cross-validated score of the resulting subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsStep {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub direction: Direction,
    /// Forward: in order of addition. Backward: survivors in column order.
    pub selected: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub steps: Vec<SfsStep>,
}

/// Stratified fold index per row: each class is shuffled and dealt
/// round-robin.
pub fn stratified_folds(labels: &[Category], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for c in Category::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

/// Mean weighted F1 of a decision tree over the folds. Folds whose
/// training part holds a single class score 0.
pub fn cross_val_score(set: &LabeledSet, fold_of: &[usize], folds: usize, tree: &TreeConfig) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..folds {
        let train: Vec<usize> = (0..set.len()).filter(|&i| fold_of[i] != k).collect();
        let test: Vec<usize> = (0..set.len()).filter(|&i| fold_of[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        let model = match train_tree(&set.subset(&train), tree) {
            Ok(m) => m,
            Err(Error::InsufficientClasses(_)) => continue,
            Err(e) => return Err(e),
        };
        total += evaluate(&model, &set.subset(&test))?.weighted_f1;
    }
    Ok(total / folds as f64)
}

/// Greedy wrapper selection with a decision tree as the estimator. Ties go
/// to the lower column index.
pub fn sequential_feature_selection(
    set: &LabeledSet,
    direction: Direction,
    config: &SfsConfig,
    seed: u64,
) -> Result<SelectionResult> {
    config.validate(set.n_features())?;
    let fold_of = stratified_folds(&set.y, config.folds, seed);
    let score = |features: &[usize]| -> Result<f64> {
        let mut sorted = features.to_vec();
        sorted.sort_unstable();
        cross_val_score(&set.select_features(&sorted), &fold_of, config.folds, &config.tree)
    };
    // evaluates every candidate in parallel and keeps the first best
    let best_of = |candidates: Vec<(usize, Vec<usize>)>| -> Result<(usize, f64)> {
        let scores: Vec<Result<f64>> = candidates.par_iter().map(|(_, fs)| score(fs)).collect();
        let mut best: Option<(usize, f64)> = None;
        for ((f, _), s) in candidates.iter().zip(scores) {
            let s = s?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((*f, s));
            }
        }
        Ok(best.expect("at least one candidate"))
    };

    let n = set.n_features();
    let mut steps = Vec::new();
    let selected_indices = match direction {
        Direction::Forward => {
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < config.n_select {
                let candidates = (0..n)
                    .filter(|f| !chosen.contains(f))
                    .map(|f| {
                        let mut fs = chosen.clone();
                        fs.push(f);
                        (f, fs)
                    })
                    .collect();
                let (f, s) = best_of(candidates)?;
                chosen.push(f);
                steps.push(SfsStep {
                    feature: set.feature_names[f].clone(),
                    score: s,
                });
            }
            chosen
        }
        Direction::Backward => {
            let mut remaining: Vec<usize> = (0..n).collect();
            while remaining.len() > config.n_select {
                let candidates = remaining
                    .iter()
                    .map(|&f| (f, remaining.iter().copied().filter(|&g| g != f).collect()))
                    .collect();
                let (f, s) = best_of(candidates)?;
                remaining.retain(|&g| g != f);
                steps.push(SfsStep {
                    feature: set.feature_names[f].clone(),
                    score: s,
                });
            }
            remaining
        }
    };
    Ok(SelectionResult {
        direction,
        selected: selected_indices.iter().map(|&f| set.feature_names[f].clone()).collect(),
        selected_indices,
        steps,
    })
}
