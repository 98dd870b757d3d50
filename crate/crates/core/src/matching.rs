//! Ground-truth matching, corner-case categories, dataset summaries and mAP.
//!
//! Matching is class-agnostic: clusters and ground truth objects are paired
//! by a minimum-cost assignment on `1 - IoU`, and the class is compared only
//! afterwards. Otherwise wrong-class matches could never be observed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::criteria::Representative;
use crate::error::{Error, Result};
use crate::geometry::{iou_box, iou_mask, BinaryMask};
use crate::ingest::GroundTruthObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "L-CC")]
    LCc,
    #[serde(rename = "C-CC")]
    CCc,
    #[serde(rename = "LC-CC")]
    LcCc,
    #[serde(rename = "FP")]
    Fp,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Tp, Category::LCc, Category::CCc, Category::LcCc, Category::Fp];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Tp => "TP",
            Category::LCc => "L-CC",
            Category::CCc => "C-CC",
            Category::LcCc => "LC-CC",
            Category::Fp => "FP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    /// L-CC, C-CC and LC-CC.
    pub fn is_corner_case(self) -> bool {
        matches!(self, Category::LCc | Category::CCc | Category::LcCc)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Per-category counts, serialized with the category names as keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    #[serde(rename = "TP", default)]
    pub tp: usize,
    #[serde(rename = "L-CC", default)]
    pub l_cc: usize,
    #[serde(rename = "C-CC", default)]
    pub c_cc: usize,
    #[serde(rename = "LC-CC", default)]
    pub lc_cc: usize,
    #[serde(rename = "FP", default)]
    pub fp: usize,
}

impl CategoryCounts {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Tp => self.tp,
            Category::LCc => self.l_cc,
            Category::CCc => self.c_cc,
            Category::LcCc => self.lc_cc,
            Category::Fp => self.fp,
        }
    }

    fn slot(&mut self, c: Category) -> &mut usize {
        match c {
            Category::Tp => &mut self.tp,
            Category::LCc => &mut self.l_cc,
            Category::CCc => &mut self.c_cc,
            Category::LcCc => &mut self.lc_cc,
            Category::Fp => &mut self.fp,
        }
    }

    pub fn add(&mut self, c: Category) {
        *self.slot(c) += 1;
    }

    pub fn merge(&mut self, other: &CategoryCounts) {
        for c in Category::ALL {
            *self.slot(c) += other.get(c);
        }
    }

    pub fn total(&self) -> usize {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn corner_cases(&self) -> usize {
        self.l_cc + self.c_cc + self.lc_cc
    }

    pub fn from_categories(cats: impl IntoIterator<Item = Category>) -> Self {
        let mut out = CategoryCounts::default();
        for c in cats {
            out.add(c);
        }
        out
    }
}

/// A minimum-cost assignment; `row_to_col[i]` is the column of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Minimum-cost one-to-one assignment of `min(n, m)` pairs.
///
/// Shortest augmenting paths with row/column potentials, `O(n^2 m)`. Rows
/// are inserted in index order and columns scanned in index order, so equal
/// inputs always give the same assignment.
///
/// # Panics
/// If the rows have different lengths or a cost is not finite.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == m), "cost matrix rows differ in length");
    assert!(
        cost.iter().flatten().all(|c| c.is_finite()),
        "cost matrix has non-finite entries"
    );
    if n == 0 || m == 0 {
        return Assignment {
            row_to_col: vec![None; n],
            total_cost: 0.0,
        };
    }
    let row_to_col = if n <= m {
        solve(n, m, |i, j| cost[i][j])
    } else {
        let col_to_row = solve(m, n, |i, j| cost[j][i]);
        let mut out = vec![None; n];
        for (c, r) in col_to_row.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    };
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Assignment { row_to_col, total_cost }
}

/// Core solver for `n <= m`. Indices are 1-based internally; 0 is the
/// virtual column used to start each augmentation.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = Some(j - 1);
        }
    }
    row_to_col
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouSource {
    #[default]
    Box,
    Mask,
}

impl FromStr for IouSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "box" => Ok(IouSource::Box),
            "mask" => Ok(IouSource::Mask),
            other => Err(format!("unknown IoU source {other:?}; expected box or mask")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub iou_source: IouSource,
    pub tp_iou: f64,
    pub fp_iou: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            iou_source: IouSource::Box,
            tp_iou: 0.5,
            fp_iou: 0.1,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.fp_iou && self.fp_iou < self.tp_iou && self.tp_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fp_iou < tp_iou <= 1, got fp_iou = {} and tp_iou = {}",
                self.fp_iou, self.tp_iou
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub cluster_id: usize,
    /// Index of the matched object within the image's ground truth.
    pub matched_gt: Option<usize>,
    pub iou_box_gt: f64,
    pub iou_mask_gt: Option<f64>,
    pub class_correct: bool,
    /// IoU under the configured source; drives the category.
    pub iou: f64,
    pub category: Category,
}

fn decode_gt_masks(gt: &[GroundTruthObject]) -> Result<Vec<Option<BinaryMask>>> {
    gt.iter()
        .map(|g| g.mask.as_ref().map(|r| r.decode()).transpose())
        .collect()
}

fn mask_pair_iou(a: Option<&BinaryMask>, b: Option<&BinaryMask>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a.dims() == b.dims() => iou_mask(a, b).ok(),
        _ => None,
    }
}

/// Matches one image's clusters to its ground truth.
///
/// Pairs whose IoU under the configured source is at most `fp_iou` are
/// severed, so a surviving match always has IoU above `fp_iou`.
pub fn match_image(
    clusters: &[(usize, Representative)],
    gt: &[GroundTruthObject],
    config: &MatchingConfig,
) -> Result<Vec<MatchResult>> {
    let gt_masks = decode_gt_masks(gt)?;
    let mut box_iou = vec![vec![0.0; gt.len()]; clusters.len()];
    let mut mask_iou = vec![vec![None; gt.len()]; clusters.len()];
    for (i, (_, rep)) in clusters.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            box_iou[i][j] = iou_box(&rep.mean_box, &g.bbox);
            mask_iou[i][j] = mask_pair_iou(rep.mean_mask.as_ref(), gt_masks[j].as_ref());
        }
    }
    let source_iou = |i: usize, j: usize| -> Result<f64> {
        match config.iou_source {
            IouSource::Box => Ok(box_iou[i][j]),
            IouSource::Mask => mask_iou[i][j].ok_or_else(|| {
                Error::Validation(format!(
                    "mask IoU requested but cluster {} or ground truth {j} has no usable mask",
                    clusters[i].0
                ))
            }),
        }
    };
    let mut cost = vec![vec![0.0; gt.len()]; clusters.len()];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = 1.0 - source_iou(i, j)?;
        }
    }
    let assignment = hungarian(&cost);

    let mut out = Vec::with_capacity(clusters.len());
    for (i, (cluster_id, rep)) in clusters.iter().enumerate() {
        let matched = assignment.row_to_col[i].filter(|&j| source_iou(i, j).unwrap_or(0.0) > config.fp_iou);
        let result = match matched {
            Some(j) => {
                let iou = source_iou(i, j)?;
                let class_correct = rep.k_max == gt[j].class_id;
                MatchResult {
                    cluster_id: *cluster_id,
                    matched_gt: Some(j),
                    iou_box_gt: box_iou[i][j],
                    iou_mask_gt: mask_iou[i][j],
                    class_correct,
                    iou,
                    category: categorize_iou(Some(iou), class_correct, config),
                }
            }
            None => MatchResult {
                cluster_id: *cluster_id,
                matched_gt: None,
                iou_box_gt: 0.0,
                iou_mask_gt: None,
                class_correct: false,
                iou: 0.0,
                category: Category::Fp,
            },
        };
        out.push(result);
    }
    Ok(out)
}

/// Category of a match given its IoU (`None` when unmatched).
///
/// IoU exactly at `tp_iou` falls into the lower band; exactly at `fp_iou`
/// is FP.
pub fn categorize_iou(iou: Option<f64>, class_correct: bool, config: &MatchingConfig) -> Category {
    match iou {
        Some(iou) if iou > config.tp_iou => {
            if class_correct {
                Category::Tp
            } else {
                Category::CCc
            }
        }
        Some(iou) if iou > config.fp_iou => {
            if class_correct {
                Category::LCc
            } else {
                Category::LcCc
            }
        }
        _ => Category::Fp,
    }
}

pub fn categorize(m: &MatchResult, config: &MatchingConfig) -> Category {
    let iou = m.matched_gt.map(|_| m.iou);
    categorize_iou(iou, m.class_correct, config)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub images: usize,
    pub detections: usize,
    pub counts: CategoryCounts,
    pub percentages: BTreeMap<String, f64>,
    pub gt_objects: usize,
    #[serde(rename = "FN")]
    pub false_negatives: usize,
    pub map_box: Option<f64>,
    pub map_mask: Option<f64>,
}

/// Counts per category; FN is every ground-truth object without a
/// surviving match. `images` yields each image's results and GT count.
pub fn summarize<'a>(images: impl IntoIterator<Item = (&'a [MatchResult], usize)>) -> DatasetSummary {
    let mut s = DatasetSummary::default();
    for (results, gt_count) in images {
        s.images += 1;
        s.gt_objects += gt_count;
        let matched = results.iter().filter(|r| r.matched_gt.is_some()).count();
        s.false_negatives += gt_count - matched.min(gt_count);
        for r in results {
            s.counts.add(r.category);
        }
    }
    s.detections = s.counts.total();
    for c in Category::ALL {
        let pct = if s.detections == 0 {
            0.0
        } else {
            100.0 * s.counts.get(c) as f64 / s.detections as f64
        };
        s.percentages.insert(c.as_str().to_string(), pct);
    }
    s
}

fn fmt_map(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v))
}

impl DatasetSummary {
    /// Plain-text table: one row per category, then FN and mAP.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24}{:>10}{:>10}\n", "", "count", "percent"));
        out.push_str(&format!("{:<24}{:>10}\n", "images", self.images));
        out.push_str(&format!("{:<24}{:>10}\n", "ground truth objects", self.gt_objects));
        out.push_str(&format!("{:<24}{:>10}{:>9.2}%\n", "detections", self.detections, 100.0));
        for c in Category::ALL {
            let pct = self.percentages.get(c.as_str()).copied().unwrap_or(0.0);
            out.push_str(&format!("{:<24}{:>10}{:>9.2}%\n", c.as_str(), self.counts.get(c), pct));
        }
        out.push_str(&format!("{:<24}{:>10}\n", "FN", self.false_negatives));
        out.push_str(&format!("{:<24}{:>10}\n", "box mAP@IoU>0.5", fmt_map(self.map_box)));
        out.push_str(&format!("{:<24}{:>10}\n", "mask mAP@IoU>0.5", fmt_map(self.map_mask)));
        out
    }
}

/// One line of `categorized.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorizedRecord {
    pub image_id: String,
    pub cluster_id: usize,
    pub category: Category,
    pub iou_box_gt: f64,
    pub iou_mask_gt: Option<f64>,
    pub class_correct: bool,
    pub gt_index: Option<usize>,
}

impl CategorizedRecord {
    pub fn new(image_id: &str, m: &MatchResult) -> Self {
        CategorizedRecord {
            image_id: image_id.to_string(),
            cluster_id: m.cluster_id,
            category: m.category,
            iou_box_gt: m.iou_box_gt,
            iou_mask_gt: m.iou_mask_gt,
            class_correct: m.class_correct,
            gt_index: m.matched_gt,
        }
    }
}

pub fn write_categorized(records: &[CategorizedRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<categorized>", e))?;
    }
    out.flush().map_err(|e| Error::io("<categorized>", e))
}

pub fn read_categorized_from(reader: impl BufRead, path: &Path) -> Result<Vec<CategorizedRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CategorizedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_categorized(path: impl AsRef<Path>) -> Result<Vec<CategorizedRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_categorized_from(BufReader::new(file), path)
}

/// A scored detection for mAP: the class is the top mean class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub class_id: usize,
    pub score: f64,
    pub rep: Representative,
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval<'a> {
    pub detections: Vec<ScoredDetection>,
    pub gt: &'a [GroundTruthObject],
}

/// All-point interpolated AP from hit flags in score order.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Mean AP over the classes present in the ground truth, matching
/// greedily in descending score order at IoU strictly above `threshold`.
/// `None` without any ground truth, or for masks when no ground-truth
/// object carries a mask.
pub fn map_at_iou(images: &[ImageEval<'_>], threshold: f64, source: IouSource) -> Result<Option<f64>> {
    let mut gt_classes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut any_mask = false;
    for img in images {
        for g in img.gt {
            *gt_classes.entry(g.class_id).or_default() += 1;
            any_mask |= g.mask.is_some();
        }
    }
    if gt_classes.is_empty() || (source == IouSource::Mask && !any_mask) {
        return Ok(None);
    }
    let gt_masks: Vec<Vec<Option<BinaryMask>>> = match source {
        IouSource::Box => images.iter().map(|i| vec![None; i.gt.len()]).collect(),
        IouSource::Mask => images.iter().map(|i| decode_gt_masks(i.gt)).collect::<Result<_>>()?,
    };
    let mut total = 0.0;
    for (&class, &n_gt) in &gt_classes {
        // (score, image, detection), stable by input order on ties
        let mut dets: Vec<(f64, usize, usize)> = Vec::new();
        for (ii, img) in images.iter().enumerate() {
            for (di, d) in img.detections.iter().enumerate() {
                if d.class_id == class {
                    dets.push((d.score, ii, di));
                }
            }
        }
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut taken: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.gt.len()]).collect();
        let mut hits = Vec::with_capacity(dets.len());
        for &(_, ii, di) in &dets {
            let img = &images[ii];
            let rep = &img.detections[di].rep;
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in img.gt.iter().enumerate() {
                if g.class_id != class || taken[ii][gi] {
                    continue;
                }
                let iou = match source {
                    IouSource::Box => iou_box(&rep.mean_box, &g.bbox),
                    IouSource::Mask => mask_pair_iou(rep.mean_mask.as_ref(), gt_masks[ii][gi].as_ref()).unwrap_or(0.0),
                };
                if iou > threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, _)) = best {
                taken[ii][gi] = true;
            }
            hits.push(best.is_some());
        }
        total += average_precision(&hits, n_gt);
    }
    Ok(Some(total / gt_classes.len() as f64))
}
