//! Decision functions from criteria vectors to corner-case categories.
//!
//! A CART tree with Gini impurity and a bagged random forest built from the
//! same tree grower. Both are trained from a [`LabeledSet`] and persisted as
//! plain JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::FEATURE_NAMES;
use crate::error::{Error, Result};
use crate::ingest::FeatureRow;
use crate::matching::{Category, CategoryCounts};

const N_CLASSES: usize = Category::ALL.len();
const GAIN_EPS: f64 = 1e-12;

/// Feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Category>,
}

impl LabeledSet {
    pub fn new(feature_names: Vec<String>, x: Vec<Vec<f64>>, y: Vec<Category>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        let width = feature_names.len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Validation(format!(
                    "row {i} has {} features, expected {width}",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i,
                    column: feature_names[j].clone(),
                });
            }
        }
        Ok(LabeledSet { feature_names, x, y })
    }

    /// Every row must carry a label.
    pub fn from_rows(rows: &[FeatureRow]) -> Result<Self> {
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for r in rows {
            let label = r
                .label
                .ok_or_else(|| Error::Validation(format!("row {}/{} has no label", r.image_id, r.cluster_id)))?;
            x.push(r.values.as_slice().to_vec());
            y.push(label);
        }
        LabeledSet::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> CategoryCounts {
        CategoryCounts::from_categories(self.y.iter().copied())
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledSet {
        LabeledSet {
            feature_names: self.feature_names.clone(),
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Keeps only the given feature columns, in the given order.
    pub fn select_features(&self, features: &[usize]) -> LabeledSet {
        LabeledSet {
            feature_names: features.iter().map(|&f| self.feature_names[f].clone()).collect(),
            x: self
                .x
                .iter()
                .map(|row| features.iter().map(|&f| row[f]).collect())
                .collect(),
            y: self.y.clone(),
        }
    }
}

/// Row indices after shrinking every class in `classes` to the size of the
/// smallest one; rows of other classes are dropped. Sorted ascending.
pub fn random_undersample_indices(labels: &[Category], classes: &[Category], seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, c) in labels.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    let mut wanted: Vec<Category> = classes.to_vec();
    wanted.sort();
    wanted.dedup();
    let empty: Vec<Category> = wanted
        .iter()
        .copied()
        .filter(|c| by_class[c.index()].is_empty())
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let Some(target) = wanted.iter().map(|c| by_class[c.index()].len()).min() else {
        return Ok(Vec::new());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(target * wanted.len());
    for c in wanted {
        let idx = &mut by_class[c.index()];
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..target]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Balances `set` over the given classes.
pub fn random_undersample(set: &LabeledSet, classes: &[Category], seed: u64) -> Result<LabeledSet> {
    let keep = random_undersample_indices(&set.y, classes, seed)?;
    Ok(set.subset(&keep))
}

/// Categories with at least one row, in enum order.
pub fn present_classes(labels: &[Category]) -> Vec<Category> {
    let counts = CategoryCounts::from_categories(labels.iter().copied());
    Category::ALL.into_iter().filter(|&c| counts.get(c) > 0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 12,
            min_leaf: 5,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("tree min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `round(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let tree = TreeConfig::default();
        ForestConfig {
            n_trees: 100,
            bootstrap: true,
            max_features: None,
            max_depth: tree.max_depth,
            min_leaf: tree.min_leaf,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("forest n_trees must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("forest min_leaf must be >= 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::InvalidConfig("forest max_features must be >= 1".into()));
        }
        Ok(())
    }

    fn features_per_split(&self, n_features: usize) -> usize {
        let k = self
            .max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().round() as usize);
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Tree,
    Forest,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tree" => Ok(ClassifierKind::Tree),
            "forest" => Ok(ClassifierKind::Forest),
            other => Err(format!("unknown classifier {other:?}; expected tree or forest")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        /// Class shares in [`Category::ALL`] order.
        distribution: [f64; N_CLASSES],
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat tree; node 0 is the root. Rows with `x[feature] <= threshold` go
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_distribution(&self, x: &[f64]) -> &[f64; N_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { distribution, .. } => return distribution,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Category {
        argmax_class(self.leaf_distribution(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Highest share, lowest category index on ties.
fn argmax_class(dist: &[f64; N_CLASSES]) -> Category {
    let mut best = 0;
    for i in 1..N_CLASSES {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    Category::ALL[best]
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>()
}

struct GrowParams {
    max_depth: usize,
    min_leaf: usize,
    max_features: usize,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Category],
    n_features: usize,
    params: GrowParams,
    rng: Option<ChaCha8Rng>,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &r in rows {
            c[self.y[r].index()] += 1;
        }
        c
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let all: Vec<usize> = (0..self.n_features).collect();
        if self.params.max_features >= self.n_features {
            return all;
        }
        let rng = self.rng.as_mut().expect("feature subsampling needs an rng");
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, all.len(), self.params.max_features).into_vec();
        picked.sort_unstable();
        picked
    }

    fn best_split(&mut self, rows: &[usize], counts: &[usize; N_CLASSES]) -> Option<SplitChoice> {
        let n = rows.len();
        let parent = gini(counts, n);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in self.candidate_features() {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r].index())));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; N_CLASSES];
            let mut right = *counts;
            for i in 0..n - 1 {
                let cls = sorted[i].1;
                left[cls] += 1;
                right[cls] -= 1;
                let nl = i + 1;
                let nr = n - nl;
                if sorted[i].0 == sorted[i + 1].0 || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let gain = parent - child;
                if best.is_none_or(|(_, _, g)| gain > g + GAIN_EPS) {
                    let threshold = 0.5 * (sorted[i].0 + sorted[i + 1].0);
                    // midpoint can round onto the upper value for adjacent floats
                    let threshold = if threshold < sorted[i + 1].0 {
                        threshold
                    } else {
                        sorted[i].0
                    };
                    best = Some((f, threshold, gain));
                }
            }
        }
        let (feature, threshold, gain) = best?;
        if gain < -GAIN_EPS {
            return None;
        }
        let (left, right) = rows.iter().partition(|&&r| self.x[r][feature] <= threshold);
        Some(SplitChoice {
            feature,
            threshold,
            gain,
            left,
            right,
        })
    }

    fn leaf(&mut self, counts: &[usize; N_CLASSES], n: usize) -> usize {
        let mut distribution = [0.0; N_CLASSES];
        for (d, &c) in distribution.iter_mut().zip(counts) {
            *d = c as f64 / n as f64;
        }
        self.nodes.push(Node::Leaf {
            distribution,
            samples: n,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n = rows.len();
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return self.leaf(&counts, n);
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return self.leaf(&counts, n);
        };
        debug_assert!(split.gain >= -GAIN_EPS);
        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(split.left, depth + 1);
        let right = self.grow(split.right, depth + 1);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }
}

fn check_trainable(set: &LabeledSet) -> Result<()> {
    let classes = present_classes(&set.y).len();
    if classes < 2 {
        return Err(Error::InsufficientClasses(classes));
    }
    Ok(())
}

fn grow_tree(set: &LabeledSet, rows: Vec<usize>, params: GrowParams, rng: Option<ChaCha8Rng>) -> Tree {
    let mut g = Grower {
        x: &set.x,
        y: &set.y,
        n_features: set.n_features(),
        params,
        rng,
        nodes: Vec::new(),
    };
    g.grow(rows, 0);
    Tree { nodes: g.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Tree(TreeConfig),
    Forest(ForestConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionModel {
    pub feature_names: Vec<String>,
    pub config: ModelConfig,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

pub fn train_tree(set: &LabeledSet, config: &TreeConfig) -> Result<DecisionModel> {
    config.validate()?;
    check_trainable(set)?;
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        max_features: set.n_features(),
    };
    let tree = grow_tree(set, (0..set.len()).collect(), params, None);
    Ok(DecisionModel {
        feature_names: set.feature_names.clone(),
        config: ModelConfig::Tree(config.clone()),
        seed: 0,
        trees: vec![tree],
    })
}

/// Trees are grown in parallel; tree `t` draws from stream `t` of the
/// seeded generator, so the result does not depend on scheduling.
pub fn train_forest(set: &LabeledSet, config: &ForestConfig, seed: u64) -> Result<DecisionModel> {
    config.validate()?;
    check_trainable(set)?;
    let n = set.len();
    let max_features = config.features_per_split(set.n_features());
    let trees: Vec<Tree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let params = GrowParams {
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                max_features,
            };
            grow_tree(set, rows, params, Some(rng))
        })
        .collect();
    Ok(DecisionModel {
        feature_names: set.feature_names.clone(),
        config: ModelConfig::Forest(config.clone()),
        seed,
        trees,
    })
}

impl DecisionModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Label and class distribution: the leaf shares for a tree, the vote
    /// shares for a forest. Vote ties go to the lower category.
    pub fn predict_with_distribution(&self, x: &[f64]) -> (Category, [f64; N_CLASSES]) {
        match self.config {
            ModelConfig::Tree(_) => {
                let d = *self.trees[0].leaf_distribution(x);
                (argmax_class(&d), d)
            }
            ModelConfig::Forest(_) => {
                let mut votes = [0.0; N_CLASSES];
                for t in &self.trees {
                    votes[t.predict(x).index()] += 1.0;
                }
                let total = self.trees.len() as f64;
                for v in &mut votes {
                    *v /= total;
                }
                (argmax_class(&votes), votes)
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Category {
        self.predict_with_distribution(x).0
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if width != self.n_features() {
            return Err(Error::Validation(format!(
                "model expects {} features, got {width}",
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Validation("model has no trees".into()));
        }
        for (ti, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return Err(Error::Validation(format!("tree {ti} has no nodes")));
            }
            for (ni, node) in t.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature, left, right, ..
                    } => {
                        if *feature >= self.n_features()
                            || *left <= ni
                            || *right <= ni
                            || *left >= t.nodes.len()
                            || *right >= t.nodes.len()
                        {
                            return Err(Error::Validation(format!("tree {ti} node {ni} is malformed")));
                        }
                    }
                    Node::Leaf { distribution, .. } => {
                        let s: f64 = distribution.iter().sum();
                        if (s - 1.0).abs() > 1e-9 {
                            return Err(Error::Validation(format!(
                                "tree {ti} leaf {ni} distribution sums to {s}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: DecisionModel = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub category: Category,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are true categories, columns predicted ones.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub n: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn evaluate_predictions(truth: &[Category], predicted: &[Category]) -> Result<EvalReport> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let n = truth.len();
    let mut per_class = Vec::with_capacity(N_CLASSES);
    let mut weighted = 0.0;
    for c in Category::ALL {
        let k = c.index();
        let tp = confusion[k][k] as f64;
        let support: usize = confusion[k].iter().sum();
        let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
        let precision = ratio(tp, predicted_k as f64);
        let recall = ratio(tp, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        weighted += support as f64 * f1;
        per_class.push(ClassMetrics {
            category: c,
            precision,
            recall,
            f1,
            support,
        });
    }
    let correct: usize = (0..N_CLASSES).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        confusion,
        per_class,
        weighted_f1: ratio(weighted, n as f64),
        accuracy: ratio(correct as f64, n as f64),
        n,
    })
}

pub fn evaluate(model: &DecisionModel, set: &LabeledSet) -> Result<EvalReport> {
    model.check_width(set.n_features())?;
    let predicted: Vec<Category> = set.x.iter().map(|x| model.predict(x)).collect();
    evaluate_predictions(&set.y, &predicted)
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("confusion matrix (rows: true, columns: predicted)\n");
        out.push_str(&format!("{:<8}", ""));
        for c in Category::ALL {
            out.push_str(&format!("{:>8}", c.as_str()));
        }
        out.push('\n');
        for c in Category::ALL {
            out.push_str(&format!("{:<8}", c.as_str()));
            for v in self.confusion[c.index()] {
                out.push_str(&format!("{v:>8}"));
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<8}{:>10}{:>10}{:>10}{:>10}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for m in &self.per_class {
            out.push_str(&format!(
                "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>10}\n",
                m.category.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            ));
        }
        out.push_str(&format!(
            "\nweighted F1 {:.4}\naccuracy    {:.4}\nrows        {}\n",
            self.weighted_f1, self.accuracy, self.n
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(x: Vec<Vec<f64>>, y: Vec<Category>) -> LabeledSet {
        let names = (0..x.first().map_or(0, Vec::len)).map(|i| format!("f{i}")).collect();
        LabeledSet::new(names, x, y).unwrap()
    }

    fn accuracy(model: &DecisionModel, s: &LabeledSet) -> f64 {
        evaluate(model, s).unwrap().accuracy
    }

    use Category::{CCc, Fp, LCc, LcCc, Tp};

    #[test]
    fn undersample_to_minority() {
        let mut y = vec![Tp; 100];
        y.extend(vec![Fp; 10]);
        y.extend(vec![LCc; 30]);
        let keep = random_undersample_indices(&y, &[Tp, Fp, LCc], 7).unwrap();
        let counts = CategoryCounts::from_categories(keep.iter().map(|&i| y[i]));
        assert_eq!((counts.tp, counts.fp, counts.l_cc), (10, 10, 10));
        assert_eq!(keep, random_undersample_indices(&y, &[Tp, Fp, LCc], 7).unwrap());
        assert_ne!(keep, random_undersample_indices(&y, &[Tp, Fp, LCc], 8).unwrap());
        assert!(keep.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn undersample_balanced_is_identity() {
        let y = vec![Tp, Fp, Tp, Fp];
        assert_eq!(random_undersample_indices(&y, &[Tp, Fp], 0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn undersample_reports_empty_classes() {
        let y = vec![Tp, Fp];
        match random_undersample_indices(&y, &Category::ALL, 0) {
            Err(Error::EmptyClasses(c)) => assert_eq!(c, vec![LCc, CCc, LcCc]),
            other => panic!("{other:?}"),
        }
    }

    fn small_cfg() -> TreeConfig {
        TreeConfig {
            max_depth: 12,
            min_leaf: 1,
        }
    }

    #[test]
    fn separable_one_feature() {
        let x: Vec<Vec<f64>> = (-5..5).map(|i| vec![i as f64]).collect();
        let y: Vec<Category> = (-5..5).map(|i| if i < 0 { Tp } else { Fp }).collect();
        let s = set(x, y);
        let m = train_tree(&s, &small_cfg()).unwrap();
        assert_eq!(m.trees[0].depth(), 1);
        assert_eq!(accuracy(&m, &s), 1.0);
        assert_eq!(m.predict(&[-1e9]), Tp);
        assert_eq!(m.predict(&[1e9]), Fp);
    }

    #[test]
    fn pure_set_is_rejected_and_single_class_leaf() {
        let s = set(vec![vec![0.0], vec![1.0]], vec![Tp, Tp]);
        assert!(matches!(
            train_tree(&s, &small_cfg()),
            Err(Error::InsufficientClasses(1))
        ));
    }

    fn xor_set() -> LabeledSet {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..5 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                x.push(vec![a, b]);
                y.push(if (a == 1.0) ^ (b == 1.0) { Fp } else { Tp });
            }
        }
        set(x, y)
    }

    #[test]
    fn xor_needs_depth_two() {
        let s = xor_set();
        let d2 = train_tree(
            &s,
            &TreeConfig {
                max_depth: 2,
                min_leaf: 1,
            },
        )
        .unwrap();
        assert_eq!(accuracy(&d2, &s), 1.0);
        let d1 = train_tree(
            &s,
            &TreeConfig {
                max_depth: 1,
                min_leaf: 1,
            },
        )
        .unwrap();
        assert!(accuracy(&d1, &s) <= 0.5);
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        // both columns separate perfectly
        let s = set(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![Tp, Tp, Fp, Fp],
        );
        let m = train_tree(&s, &small_cfg()).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            n => panic!("{n:?}"),
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<Category> = (0..20).map(|i| if i == 0 { Fp } else { Tp }).collect();
        let s = set(x, y);
        let m = train_tree(
            &s,
            &TreeConfig {
                max_depth: 12,
                min_leaf: 5,
            },
        )
        .unwrap();
        for n in &m.trees[0].nodes {
            if let Node::Leaf { samples, .. } = n {
                assert!(*samples >= 5);
            }
        }
    }

    #[test]
    fn forest_reduces_to_tree() {
        let s = xor_set();
        let tree = train_tree(&s, &small_cfg()).unwrap();
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(2),
            max_depth: 12,
            min_leaf: 1,
        };
        let forest = train_forest(&s, &cfg, 3).unwrap();
        assert_eq!(forest.trees, tree.trees);
    }

    #[test]
    fn forest_reproducible_and_separable() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![i as f64, (i % 7) as f64, (i % 3) as f64])
            .collect();
        let y: Vec<Category> = (0..60).map(|i| if i < 30 { LcCc } else { CCc }).collect();
        let s = set(x, y);
        let cfg = ForestConfig {
            n_trees: 15,
            max_features: Some(3),
            min_leaf: 1,
            ..Default::default()
        };
        let a = train_forest(&s, &cfg, 11).unwrap();
        let b = train_forest(&s, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(accuracy(&a, &s), 1.0);
        let (_, dist) = a.predict_with_distribution(&[0.0, 0.0, 0.0]);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let s = xor_set();
        let m = train_forest(
            &s,
            &ForestConfig {
                n_trees: 3,
                min_leaf: 1,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        assert_eq!(DecisionModel::load(&p).unwrap(), m);
    }

    #[test]
    fn evaluate_examples() {
        let r = evaluate_predictions(&[Tp, Tp, Fp], &[Tp, Fp, Fp]).unwrap();
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[4].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);

        let perfect = evaluate_predictions(&Category::ALL, &Category::ALL).unwrap();
        assert_eq!(perfect.weighted_f1, 1.0);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(perfect.confusion[i][j], usize::from(i == j));
            }
        }
        // constant predictor on a balanced 5-class set: only TP gets F1 = 2/6
        let truth: Vec<Category> = Category::ALL.iter().flat_map(|&c| [c; 4]).collect();
        let r = evaluate_predictions(&truth, &[Tp; 20]).unwrap();
        assert!((r.weighted_f1 - (1.0 / 3.0) / 5.0).abs() < 1e-12);
        assert!(r.render_text().contains("weighted F1"));
    }

    fn arb_labeled() -> impl Strategy<Value = LabeledSet> {
        proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 3), 0usize..5), 4..60).prop_map(|rows| {
            let (x, y): (Vec<_>, Vec<_>) = rows.into_iter().map(|(x, c)| (x, Category::ALL[c])).unzip();
            set(x, y)
        })
    }

    proptest! {
        #[test]
        fn splits_never_increase_impurity(s in arb_labeled()) {
            prop_assume!(present_classes(&s.y).len() >= 2);
            let m = train_tree(&s, &TreeConfig { max_depth: 6, min_leaf: 1 }).unwrap();
            m.validate().unwrap();
            // every split's children carry no more weighted impurity than the parent
            fn check(t: &Tree, s: &LabeledSet, node: usize, rows: Vec<usize>) {
                let counts = |rs: &[usize]| {
                    let mut c = [0usize; N_CLASSES];
                    for &r in rs { c[s.y[r].index()] += 1; }
                    c
                };
                if let Node::Split { feature, threshold, left, right } = &t.nodes[node] {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| s.x[i][*feature] <= *threshold);
                    let n = rows.len() as f64;
                    let parent = gini(&counts(&rows), rows.len());
                    let child = (l.len() as f64 * gini(&counts(&l), l.len()) + r.len() as f64 * gini(&counts(&r), r.len())) / n;
                    assert!(child <= parent + 1e-12);
                    assert!(!l.is_empty() && !r.is_empty());
                    check(t, s, *left, l);
                    check(t, s, *right, r);
                }
            }
            check(&m.trees[0], &s, 0, (0..s.len()).collect());
        }

        #[test]
        fn undersample_invariants(labels in proptest::collection::vec(0usize..5, 1..200), seed in any::<u64>()) {
            let y: Vec<Category> = labels.iter().map(|&l| Category::ALL[l]).collect();
            let classes = present_classes(&y);
            let keep = random_undersample_indices(&y, &classes, seed).unwrap();
            let counts = CategoryCounts::from_categories(keep.iter().map(|&i| y[i]));
            let min = classes.iter().map(|&c| CategoryCounts::from_categories(y.iter().copied()).get(c)).min().unwrap();
            for c in classes {
                prop_assert_eq!(counts.get(c), min);
            }
        }
    }
}
