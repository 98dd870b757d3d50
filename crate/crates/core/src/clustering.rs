//! Grouping the sampled detections of one image into per-object clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou_box;
use crate::ingest::DetectionSample;

/// Floor on per-dimension GMM variances, in px².
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: usize,
    pub image_id: String,
    pub members: Vec<DetectionSample>,
    /// Positions of the members in the clustered input slice, ascending.
    pub indices: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMethod {
    GreedyIou,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub method: ClusterMethod,
    pub link_iou: f64,
    pub min_cluster_size: usize,
    pub gmm_max_components: usize,
    pub gmm_seed: u64,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            method: ClusterMethod::GreedyIou,
            link_iou: 0.5,
            min_cluster_size: 2,
            gmm_max_components: 10,
            gmm_seed: 0,
            gmm_max_iter: 200,
            gmm_tol: 1e-8,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.link_iou > 0.0 && self.link_iou < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "link_iou must lie in (0, 1), got {}",
                self.link_iou
            )));
        }
        if self.min_cluster_size < 1 {
            return Err(Error::InvalidConfig("min_cluster_size must be >= 1".into()));
        }
        if self.gmm_max_components < 1 || self.gmm_max_iter < 1 {
            return Err(Error::InvalidConfig(
                "gmm_max_components and gmm_max_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Clusters an image's samples with the configured method.
pub fn cluster_samples(samples: &[DetectionSample], config: &ClusteringConfig) -> Vec<Cluster> {
    match config.method {
        ClusterMethod::GreedyIou => cluster_greedy_iou(samples, config),
        ClusterMethod::Gmm => cluster_gmm(samples, config).clusters,
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so roots stay deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Builds clusters from a per-sample group label, ordered by descending
/// size then smallest member index.
fn assemble(samples: &[DetectionSample], labels: &[usize]) -> Vec<Cluster> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    groups
        .into_iter()
        .enumerate()
        .map(|(cid, idx)| Cluster {
            cluster_id: cid,
            image_id: samples[idx[0]].image_id.clone(),
            members: idx.iter().map(|&i| samples[i].clone()).collect(),
            indices: idx,
        })
        .collect()
}

/// Single-linkage components of the graph linking samples whose boxes
/// overlap with IoU >= `link_iou`.
pub fn cluster_greedy_iou(samples: &[DetectionSample], config: &ClusteringConfig) -> Vec<Cluster> {
    let n = samples.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if iou_box(&samples[i].bbox, &samples[j].bbox) >= config.link_iou {
                uf.union(i, j);
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    assemble(samples, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmClustering {
    pub clusters: Vec<Cluster>,
    /// Number of mixture components selected by BIC.
    pub components: usize,
    pub converged: bool,
    /// Log-likelihood after every EM iteration of the selected fit.
    pub log_likelihood: Vec<f64>,
    /// `(K, BIC)` for every candidate component count.
    pub bic: Vec<(usize, f64)>,
}

const DIM: usize = 4;

struct GmmFit {
    weights: Vec<f64>,
    means: Vec<[f64; DIM]>,
    vars: Vec<[f64; DIM]>,
    trace: Vec<f64>,
    converged: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn component_log_density(x: &[f64; DIM], mean: &[f64; DIM], var: &[f64; DIM]) -> f64 {
    let mut acc = 0.0;
    for d in 0..DIM {
        let diff = x[d] - mean[d];
        acc += -0.5 * ((2.0 * std::f64::consts::PI * var[d]).ln() + diff * diff / var[d]);
    }
    acc
}

/// Per-sample component log joint `ln w_k + ln N(x | k)`.
fn log_joint(data: &[[f64; DIM]], fit: &GmmFit) -> Vec<Vec<f64>> {
    data.iter()
        .map(|x| {
            (0..fit.weights.len())
                .map(|k| {
                    if fit.weights[k] > 0.0 {
                        fit.weights[k].ln() + component_log_density(x, &fit.means[k], &fit.vars[k])
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[[f64; DIM]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; DIM]> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(data[pick]);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[pick]));
        }
    }
    centers
}

fn fit_gmm(data: &[[f64; DIM]], k: usize, config: &ClusteringConfig) -> GmmFit {
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.gmm_seed);
    rng.set_stream(k as u64);

    let mut global_mean = [0.0; DIM];
    for x in data {
        for d in 0..DIM {
            global_mean[d] += x[d] / n as f64;
        }
    }
    let mut global_var = [0.0; DIM];
    for x in data {
        for d in 0..DIM {
            global_var[d] += (x[d] - global_mean[d]).powi(2) / n as f64;
        }
    }
    for v in &mut global_var {
        *v = v.max(VARIANCE_FLOOR);
    }

    let mut fit = GmmFit {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(data, k, &mut rng),
        vars: vec![global_var; k],
        trace: Vec::new(),
        converged: false,
    };

    for _ in 0..config.gmm_max_iter {
        let joint = log_joint(data, &fit);
        let mut ll = 0.0;
        let resp: Vec<Vec<f64>> = joint
            .iter()
            .map(|row| {
                let z = log_sum_exp(row);
                ll += z;
                row.iter().map(|v| (v - z).exp()).collect()
            })
            .collect();
        if let Some(&prev) = fit.trace.last() {
            if (ll - prev).abs() <= config.gmm_tol * (1.0 + ll.abs()) {
                fit.trace.push(ll);
                fit.converged = true;
                break;
            }
        }
        fit.trace.push(ll);

        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= 1e-12 {
                fit.weights[c] = 0.0;
                continue;
            }
            fit.weights[c] = nk / n as f64;
            let mut mean = [0.0; DIM];
            for (x, r) in data.iter().zip(&resp) {
                for d in 0..DIM {
                    mean[d] += r[c] * x[d];
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = [0.0; DIM];
            for (x, r) in data.iter().zip(&resp) {
                for d in 0..DIM {
                    var[d] += r[c] * (x[d] - mean[d]).powi(2);
                }
            }
            for v in &mut var {
                *v = (*v / nk).max(VARIANCE_FLOOR);
            }
            fit.means[c] = mean;
            fit.vars[c] = var;
        }
    }
    if !fit.converged {
        // score the final parameters so the trace ends on them
        let ll: f64 = log_joint(data, &fit).iter().map(|r| log_sum_exp(r)).sum();
        fit.trace.push(ll);
    }
    fit
}

/// EM fit of a diagonal-covariance Gaussian mixture over box corners for
/// every K in `1..=min(gmm_max_components, L)`; K is chosen by minimum BIC
/// and samples are hard-assigned to their most responsible component.
pub fn cluster_gmm(samples: &[DetectionSample], config: &ClusteringConfig) -> GmmClustering {
    if samples.is_empty() {
        return GmmClustering {
            clusters: Vec::new(),
            components: 0,
            converged: true,
            log_likelihood: Vec::new(),
            bic: Vec::new(),
        };
    }
    let data: Vec<[f64; DIM]> = samples.iter().map(|s| s.bbox.to_array()).collect();
    let n = data.len();
    let max_k = config.gmm_max_components.min(n);

    let mut best: Option<(f64, usize, GmmFit)> = None;
    let mut bic = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        let fit = fit_gmm(&data, k, config);
        let ll = *fit.trace.last().expect("at least one EM iteration");
        let params = (k * 2 * DIM + k - 1) as f64;
        let score = -2.0 * ll + params * (n as f64).ln();
        bic.push((k, score));
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, k, fit));
        }
    }
    let (_, k, fit) = best.expect("max_k >= 1");

    let labels: Vec<usize> = log_joint(&data, &fit)
        .iter()
        .map(|row| {
            let mut arg = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = c;
                }
            }
            arg
        })
        .collect();

    GmmClustering {
        clusters: assemble(samples, &labels),
        components: k,
        converged: fit.converged,
        log_likelihood: fit.trace,
        bic,
    }
}

/// Splits clusters into those with at least `min_cluster_size` members and
/// the rest.
pub fn filter_clusters(clusters: Vec<Cluster>, min_cluster_size: usize) -> (Vec<Cluster>, Vec<Cluster>) {
    clusters.into_iter().partition(|c| c.size() >= min_cluster_size)
}
