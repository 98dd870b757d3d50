//! Uncertainty criteria of a single cluster of sampled detections.
//!
//! Every criterion is computed from one cluster alone, without ground
//! truth. Standard deviations use the `N - 1` denominator, so clusters need
//! at least two members. The 26 values are assembled into a
//! [`CriteriaVector`] in the order of [`FEATURE_NAMES`]:
//!
//! | index  | group    | values |
//! |--------|----------|--------|
//! | 0..4   | class    | mean/std of the top class, mean/std of the runner-up |
//! | 4..12  | box      | normalized std of x1, y1, x2, y2, cx, cy, w, h |
//! | 12..14 | box      | mean and std of IoU against the mean box |
//! | 14..18 | mask     | normalized std of the mask box cx, cy, w, h |
//! | 18..21 | mask     | mean and std of IoU against the mean mask, normalized area std |
//! | 21..26 | combined | box/mask mismatch IoU, KL both ways, JS distance, EMD |

use serde::{Deserialize, Serialize};

use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::geometry::{iou_box, iou_mask, mask_area, mask_bbox, BBox, BBoxCwh, BinaryMask};

pub const FEATURE_COUNT: usize = 26;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "class_mean_max",
    "class_std_max",
    "class_mean_2nd",
    "class_std_2nd",
    "box_std_x1",
    "box_std_y1",
    "box_std_x2",
    "box_std_y2",
    "box_std_cx",
    "box_std_cy",
    "box_std_w",
    "box_std_h",
    "box_iou_mean",
    "box_iou_std",
    "mask_std_cx",
    "mask_std_cy",
    "mask_std_w",
    "mask_std_h",
    "mask_iou_mean",
    "mask_iou_std",
    "mask_area_std",
    "iou_mis",
    "kl_b_m",
    "kl_m_b",
    "js",
    "emd",
];

/// Feature group, used to pair criteria with the IoU flavour they describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Class,
    Box,
    Mask,
    Combined,
}

pub fn feature_group(index: usize) -> FeatureGroup {
    match index {
        0..=3 => FeatureGroup::Class,
        4..=13 => FeatureGroup::Box,
        14..=20 => FeatureGroup::Mask,
        _ => FeatureGroup::Combined,
    }
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

/// The 26 criteria of one cluster, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaVector(pub [f64; FEATURE_COUNT]);

impl CriteriaVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Mean accumulated as offsets from the first value, so identical inputs
/// give that value back exactly.
pub(crate) fn stable_mean(mut values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    let Some(first) = values.next() else {
        return f64::NAN;
    };
    first + values.map(|v| v - first).sum::<f64>() / n as f64
}

/// Sample mean and standard deviation (`N - 1` denominator).
pub(crate) fn mean_std(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len();
    let mean = stable_mean(values.clone());
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Root of the summed squared deviations from `center`, over `N - 1`.
fn std_about(values: impl ExactSizeIterator<Item = f64>, center: f64) -> f64 {
    let n = values.len();
    let ss: f64 = values.map(|v| (v - center) * (v - center)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn require_pair(cluster: &Cluster) -> Result<()> {
    if cluster.size() < 2 {
        return Err(Error::SingletonCluster(cluster.size()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScoreCriteria {
    pub mean_max: f64,
    pub std_max: f64,
    pub mean_2nd: f64,
    pub std_2nd: f64,
    pub k_max: usize,
    pub k_2nd: usize,
}

/// Per-class mean scores over the members.
pub fn class_means(cluster: &Cluster) -> Result<Vec<f64>> {
    let first = cluster
        .members
        .first()
        .ok_or(Error::EmptyInput("cluster without members"))?;
    let k = first.class_scores.len();
    if cluster.members.iter().any(|m| m.class_scores.len() != k) {
        return Err(Error::DegenerateCluster("members disagree on class count".into()));
    }
    Ok((0..k)
        .map(|j| stable_mean(cluster.members.iter().map(|m| m.class_scores[j])))
        .collect())
}

/// Index of the largest value, lowest index on ties.
fn argmax_excluding(values: &[f64], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn class_score_criteria(cluster: &Cluster) -> Result<ClassScoreCriteria> {
    require_pair(cluster)?;
    let means = class_means(cluster)?;
    if means.len() < 2 {
        return Err(Error::DegenerateCluster(format!(
            "need at least 2 classes, got {}",
            means.len()
        )));
    }
    let k_max = argmax_excluding(&means, None).expect("k >= 2");
    let k_2nd = argmax_excluding(&means, Some(k_max)).expect("k >= 2");
    let column_std = |k: usize| std_about(cluster.members.iter().map(|m| m.class_scores[k]), means[k]);
    Ok(ClassScoreCriteria {
        mean_max: means[k_max],
        std_max: column_std(k_max),
        mean_2nd: means[k_2nd],
        std_2nd: column_std(k_2nd),
        k_max,
        k_2nd,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxCriteria {
    pub mean_box: BBox,
    /// Normalized std of x1, y1, x2, y2, cx, cy, w, h.
    pub sigma: [f64; 8],
    /// The same stds before normalization, in pixels.
    pub raw_sigma: [f64; 8],
    pub iou_mean: f64,
    pub iou_std: f64,
    /// IoU of every member box with the mean box.
    pub ious: Vec<f64>,
}

pub fn mean_box(cluster: &Cluster) -> Result<BBox> {
    if cluster.size() == 0 {
        return Err(Error::EmptyInput("cluster without members"));
    }
    let coord = |d: usize| stable_mean(cluster.members.iter().map(|m| m.bbox.to_array()[d]));
    Ok(BBox {
        x1: coord(0),
        y1: coord(1),
        x2: coord(2),
        y2: coord(3),
    })
}

pub fn box_criteria(cluster: &Cluster) -> Result<BoxCriteria> {
    require_pair(cluster)?;
    let mean = mean_box(cluster)?;
    let (mw, mh) = (mean.width(), mean.height());
    if mw <= 0.0 || mh <= 0.0 {
        return Err(Error::DegenerateCluster(format!(
            "mean box has width {mw} and height {mh}"
        )));
    }
    let corners: Vec<[f64; 4]> = cluster.members.iter().map(|m| m.bbox.to_array()).collect();
    let cwh: Vec<[f64; 4]> = cluster.members.iter().map(|m| m.bbox.to_cwh().to_array()).collect();

    let mut raw = [0.0; 8];
    for d in 0..4 {
        raw[d] = mean_std(corners.iter().map(|c| c[d])).1;
        raw[4 + d] = mean_std(cwh.iter().map(|c| c[d])).1;
    }
    // x-type components by mean width, y-type by mean height
    let scale = [mw, mh, mw, mh, mw, mh, mw, mh];
    let mut sigma = [0.0; 8];
    for i in 0..8 {
        sigma[i] = raw[i] / scale[i];
    }

    let ious: Vec<f64> = cluster.members.iter().map(|m| iou_box(&m.bbox, &mean)).collect();
    let (iou_mean, iou_std) = mean_std(ious.iter().copied());
    Ok(BoxCriteria {
        mean_box: mean,
        sigma,
        raw_sigma: raw,
        iou_mean,
        iou_std,
        ious,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskCriteria {
    pub mean_mask: BinaryMask,
    pub mean_mask_box: BBoxCwh,
    /// Normalized std of the member mask boxes (cx, cy, w, h) about the
    /// box of the mean mask.
    pub sigma_box: [f64; 4],
    pub raw_sigma_box: [f64; 4],
    pub iou_mean: f64,
    pub iou_std: f64,
    pub area_mean: f64,
    pub area_std: f64,
    pub area_std_norm: f64,
    /// IoU of every member mask with the mean mask.
    pub ious: Vec<f64>,
}

/// Decodes all member masks; they must exist and share dimensions.
pub fn member_masks(cluster: &Cluster) -> Result<Vec<BinaryMask>> {
    let mut out = Vec::with_capacity(cluster.size());
    for (i, m) in cluster.members.iter().enumerate() {
        let rle = m
            .mask
            .as_ref()
            .ok_or_else(|| Error::MaskDegenerate(format!("member {i} has no mask")))?;
        let decoded = rle.decode()?;
        if let Some(first) = out.first() {
            let first: &BinaryMask = first;
            if first.dims() != decoded.dims() {
                return Err(Error::DimensionMismatch {
                    left: first.dims(),
                    right: decoded.dims(),
                });
            }
        }
        out.push(decoded);
    }
    Ok(out)
}

/// Pixels set in strictly more than half of the masks.
pub fn majority_mask(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let first = masks.first().ok_or(Error::EmptyInput("no masks"))?;
    let (w, h) = first.dims();
    let n = masks.len();
    // only the linear range touched by any mask can be set
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    for m in masks {
        if m.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                left: (w, h),
                right: m.dims(),
            });
        }
        if let Some(first_one) = m.ones().next() {
            lo = lo.min(first_one);
            hi = hi.max(m.ones().last().unwrap_or(first_one) + 1);
        }
    }
    let mut out = BinaryMask::new(w, h);
    if lo >= hi {
        return Ok(out);
    }
    let mut counts = vec![0u32; hi - lo];
    for m in masks {
        for i in m.ones() {
            counts[i - lo] += 1;
        }
    }
    for (off, &c) in counts.iter().enumerate() {
        if 2 * c as usize > n {
            out.set_linear(lo + off, true);
        }
    }
    Ok(out)
}

pub fn mask_criteria(cluster: &Cluster) -> Result<MaskCriteria> {
    require_pair(cluster)?;
    let masks = member_masks(cluster)?;
    if let Some(i) = masks.iter().position(BinaryMask::is_empty) {
        return Err(Error::MaskDegenerate(format!("member {i} has an empty mask")));
    }
    let mean_mask = majority_mask(&masks)?;
    if mean_mask.is_empty() {
        return Err(Error::MaskDegenerate("mean mask is empty".into()));
    }
    let mean_mask_box = mask_bbox(&mean_mask)?;
    let boxes: Vec<[f64; 4]> = masks
        .iter()
        .map(|m| mask_bbox(m).map(|b| b.to_array()))
        .collect::<Result<_>>()?;
    let center = mean_mask_box.to_array();
    let mut raw = [0.0; 4];
    for d in 0..4 {
        raw[d] = std_about(boxes.iter().map(|b| b[d]), center[d]);
    }
    let scale = [mean_mask_box.w, mean_mask_box.h, mean_mask_box.w, mean_mask_box.h];
    let mut sigma_box = [0.0; 4];
    for d in 0..4 {
        sigma_box[d] = raw[d] / scale[d];
    }

    let ious: Vec<f64> = masks.iter().map(|m| iou_mask(m, &mean_mask)).collect::<Result<_>>()?;
    let (iou_mean, iou_std) = mean_std(ious.iter().copied());

    let areas: Vec<f64> = masks.iter().map(|m| mask_area(m) as f64).collect();
    let (area_mean, area_std) = mean_std(areas.iter().copied());

    Ok(MaskCriteria {
        mean_mask,
        mean_mask_box,
        sigma_box,
        raw_sigma_box: raw,
        iou_mean,
        iou_std,
        area_mean,
        area_std,
        area_std_norm: area_std / area_mean,
        ious,
    })
}

/// Kernel bandwidth: a fixed value or the rule-of-thumb estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Rule(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    /// `0.9 * min(std, IQR / 1.34) * n^(-1/5)`, floored at [`MIN_BANDWIDTH`].
    Auto,
}

impl Bandwidth {
    pub const AUTO: Bandwidth = Bandwidth::Rule(BandwidthRule::Auto);
}

pub const MIN_BANDWIDTH: f64 = 0.01;
pub const DEFAULT_GRID_SIZE: usize = 101;
pub const KL_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeConfig {
    pub grid_size: usize,
    pub bandwidth: Bandwidth,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            grid_size: DEFAULT_GRID_SIZE,
            bandwidth: Bandwidth::AUTO,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("kde grid_size must be >= 2".into()));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig(format!("kde bandwidth must be > 0, got {h}")));
            }
        }
        Ok(())
    }
}

/// Weights on an evenly spaced grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub grid: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn unit_grid(size: usize) -> Vec<f64> {
    let last = (size - 1) as f64;
    (0..size).map(|i| i as f64 / last).collect()
}

impl DiscreteDistribution {
    /// Normalizes `weights` onto the unit grid of matching size.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::EmptyInput("distribution needs at least 2 grid points"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || total <= 0.0 {
            return Err(Error::Validation(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(DiscreteDistribution {
            grid: unit_grid(weights.len()),
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(self.len(), other.len()));
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    let (_, sd) = mean_std(values.iter().copied());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let h = 0.9 * sd.min(iqr / 1.34) * (n as f64).powf(-0.2);
    h.max(MIN_BANDWIDTH)
}

/// Gaussian KDE of `values` evaluated on a `grid_size`-point grid over
/// `[0, 1]` and renormalized to a discrete distribution.
pub fn kde_pdf(values: &[f64], grid_size: usize, bandwidth: Bandwidth) -> Result<DiscreteDistribution> {
    if values.is_empty() {
        return Err(Error::EmptyInput("kde needs at least one value"));
    }
    if grid_size < 2 {
        return Err(Error::InvalidConfig("kde grid_size must be >= 2".into()));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::InvalidConfig(format!("kde bandwidth must be > 0, got {h}"))),
        Bandwidth::Rule(BandwidthRule::Auto) => silverman_bandwidth(values),
    };
    let grid = unit_grid(grid_size);
    // log-space evaluation so tiny bandwidths cannot underflow every point
    let log_density: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let terms: Vec<f64> = values
                .iter()
                .map(|&x| {
                    let z = (x - t) / h;
                    -0.5 * z * z
                })
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .collect();
    let peak = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_density.iter().map(|v| (v - peak).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(DiscreteDistribution {
        grid,
        probs: weights.iter().map(|w| w / total).collect(),
    })
}

fn smoothed(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().map(|v| v + KL_EPSILON).sum();
    p.iter().map(|v| (v + KL_EPSILON) / total).collect()
}

/// `KL(p | q)` in nats, with [`KL_EPSILON`] added to every bin of both
/// distributions before renormalizing.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    p.check_grid(q)?;
    let ps = smoothed(&p.probs);
    let qs = smoothed(&q.probs);
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

/// Unsmoothed KL for JS: `m` is positive wherever `p` is.
fn kl_against_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Jensen-Shannon distance (square root of the JS divergence), in
/// `[0, sqrt(ln 2)]`.
pub fn js_distance(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    p.check_grid(q)?;
    let m: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect();
    let div = 0.5 * (kl_against_mixture(&p.probs, &m) + kl_against_mixture(&q.probs, &m));
    Ok(div.clamp(0.0, std::f64::consts::LN_2).sqrt())
}

/// Earth mover's distance with ground distance `|t_i - t_j|`, via the 1-D
/// identity `sum |CDF_p - CDF_q| * spacing`.
pub fn emd(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    p.check_grid(q)?;
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for i in 0..p.len() - 1 {
        cp += p.probs[i];
        cq += q.probs[i];
        total += (cp - cq).abs() * (p.grid[i + 1] - p.grid[i]);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedCriteria {
    pub iou_mis: f64,
    pub kl_b_m: f64,
    pub kl_m_b: f64,
    pub js: f64,
    pub emd: f64,
    pub p_box: DiscreteDistribution,
    pub p_mask: DiscreteDistribution,
}

pub fn combined_criteria(
    box_crit: &BoxCriteria,
    mask_crit: &MaskCriteria,
    kde: &KdeConfig,
) -> Result<CombinedCriteria> {
    let iou_mis = iou_box(&box_crit.mean_box, &mask_crit.mean_mask_box.to_pixel_bbox());
    let p_box = kde_pdf(&box_crit.ious, kde.grid_size, kde.bandwidth)?;
    let p_mask = kde_pdf(&mask_crit.ious, kde.grid_size, kde.bandwidth)?;
    Ok(CombinedCriteria {
        iou_mis,
        kl_b_m: kl_divergence(&p_box, &p_mask)?,
        kl_m_b: kl_divergence(&p_mask, &p_box)?,
        js: js_distance(&p_box, &p_mask)?,
        emd: emd(&p_box, &p_mask)?,
        p_box,
        p_mask,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    pub kde: KdeConfig,
}

/// Every criterion of a cluster plus the assembled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCriteria {
    pub class: ClassScoreCriteria,
    pub boxes: BoxCriteria,
    pub mask: MaskCriteria,
    pub combined: CombinedCriteria,
    pub vector: CriteriaVector,
}

pub fn compute_criteria(cluster: &Cluster, config: &CriteriaConfig) -> Result<ClusterCriteria> {
    let class = class_score_criteria(cluster)?;
    let boxes = box_criteria(cluster)?;
    let mask = mask_criteria(cluster)?;
    let combined = combined_criteria(&boxes, &mask, &config.kde)?;

    let mut v = [0.0; FEATURE_COUNT];
    v[0] = class.mean_max;
    v[1] = class.std_max;
    v[2] = class.mean_2nd;
    v[3] = class.std_2nd;
    v[4..12].copy_from_slice(&boxes.sigma);
    v[12] = boxes.iou_mean;
    v[13] = boxes.iou_std;
    v[14..18].copy_from_slice(&mask.sigma_box);
    v[18] = mask.iou_mean;
    v[19] = mask.iou_std;
    v[20] = mask.area_std_norm;
    v[21] = combined.iou_mis;
    v[22] = combined.kl_b_m;
    v[23] = combined.kl_m_b;
    v[24] = combined.js;
    v[25] = combined.emd;
    let vector = CriteriaVector(v);
    if !vector.is_finite() {
        return Err(Error::DegenerateCluster("non-finite criterion".into()));
    }
    Ok(ClusterCriteria {
        class,
        boxes,
        mask,
        combined,
        vector,
    })
}

pub fn feature_vector(cluster: &Cluster, config: &CriteriaConfig) -> Result<CriteriaVector> {
    compute_criteria(cluster, config).map(|c| c.vector)
}

/// What matching needs from a cluster; defined for any size >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    pub k_max: usize,
    pub score: f64,
    pub mean_box: BBox,
    pub mean_mask: Option<BinaryMask>,
}

pub fn representative(cluster: &Cluster) -> Result<Representative> {
    let means = class_means(cluster)?;
    let k_max = argmax_excluding(&means, None).ok_or(Error::EmptyInput("no class scores"))?;
    let mean_mask = match member_masks(cluster) {
        Ok(masks) => Some(majority_mask(&masks)?),
        Err(Error::MaskDegenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Representative {
        k_max,
        score: means[k_max],
        mean_box: mean_box(cluster)?,
        mean_mask,
    })
}
