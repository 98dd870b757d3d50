//! Independent reference implementations and fixture generators shared by
//! the integration tests. Nothing here calls the library's algorithms; it
//! only borrows its data types.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cornercase_core::clustering::Cluster;
use cornercase_core::geometry::{rle_encode, BBox, BinaryMask, RleMask};
use cornercase_core::ingest::DetectionSample;
use cornercase_core::matching::Category;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Row-major boolean grid, `px[y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMask {
    pub w: usize,
    pub h: usize,
    pub px: Vec<Vec<bool>>,
}

pub fn naive_decode(rle: &RleMask) -> NaiveMask {
    let (h, w) = (rle.size[0], rle.size[1]);
    let mut px = vec![vec![false; w]; h];
    let mut idx = 0usize;
    let mut value = false;
    for &run in &rle.counts {
        for _ in 0..run {
            // column-major: consecutive indices walk down a column
            let (x, y) = (idx / h, idx % h);
            px[y][x] = value;
            idx += 1;
        }
        value = !value;
    }
    NaiveMask { w, h, px }
}

pub fn naive_area(m: &NaiveMask) -> usize {
    m.px.iter().map(|row| row.iter().filter(|&&b| b).count()).sum()
}

pub fn naive_mask_iou(a: &NaiveMask, b: &NaiveMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for y in 0..a.h {
        for x in 0..a.w {
            let (p, q) = (a.px[y][x], b.px[y][x]);
            if p && q {
                inter += 1;
            }
            if p || q {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// (cx, cy, w, h) with inclusive pixel extents.
pub fn naive_mask_box(m: &NaiveMask) -> [f64; 4] {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for y in 0..m.h {
        for x in 0..m.w {
            if m.px[y][x] {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
    let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
    [
        (x0 + x1) as f64 / 2.0,
        (y0 + y1) as f64 / 2.0,
        (x1 - x0 + 1) as f64,
        (y1 - y0 + 1) as f64,
    ]
}

pub fn naive_box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn naive_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn naive_std_about(v: &[f64], center: f64) -> f64 {
    (v.iter().map(|x| (x - center).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn naive_std(v: &[f64]) -> f64 {
    naive_std_about(v, naive_mean(v))
}

/// The class, box and mask criteria recomputed from first principles.
#[derive(Debug, Clone)]
pub struct NaiveCriteria {
    pub class: [f64; 4],
    pub box_sigma: [f64; 8],
    pub box_iou: [f64; 2],
    pub mask_sigma: [f64; 4],
    pub mask_iou: [f64; 2],
    pub area_std_norm: f64,
    pub box_ious: Vec<f64>,
    pub mask_ious: Vec<f64>,
}

pub fn naive_criteria(members: &[DetectionSample]) -> NaiveCriteria {
    let n = members.len();
    let k = members[0].class_scores.len();

    let col = |j: usize| -> Vec<f64> { members.iter().map(|m| m.class_scores[j]).collect() };
    let means: Vec<f64> = (0..k).map(|j| naive_mean(&col(j))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // stable sort keeps the lower index first among equal means
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap());
    let (k1, k2) = (order[0], order[1]);
    let class = [means[k1], naive_std(&col(k1)), means[k2], naive_std(&col(k2))];

    let corners: Vec<[f64; 4]> = members.iter().map(|m| m.bbox.to_array()).collect();
    let comp = |f: &dyn Fn(&[f64; 4]) -> f64| -> Vec<f64> { corners.iter().map(f).collect() };
    let series: [Vec<f64>; 8] = [
        comp(&|b| b[0]),
        comp(&|b| b[1]),
        comp(&|b| b[2]),
        comp(&|b| b[3]),
        comp(&|b| (b[0] + b[2]) / 2.0),
        comp(&|b| (b[1] + b[3]) / 2.0),
        comp(&|b| b[2] - b[0]),
        comp(&|b| b[3] - b[1]),
    ];
    let mean_box = [
        naive_mean(&series[0]),
        naive_mean(&series[1]),
        naive_mean(&series[2]),
        naive_mean(&series[3]),
    ];
    let mean_w = mean_box[2] - mean_box[0];
    let mean_h = mean_box[3] - mean_box[1];
    let mut box_sigma = [0.0; 8];
    for i in 0..8 {
        let scale = if i % 2 == 0 { mean_w } else { mean_h };
        box_sigma[i] = naive_std(&series[i]) / scale;
    }
    let box_ious: Vec<f64> = corners.iter().map(|b| naive_box_iou(*b, mean_box)).collect();

    let masks: Vec<NaiveMask> = members.iter().map(|m| naive_decode(m.mask.as_ref().unwrap())).collect();
    let (w, h) = (masks[0].w, masks[0].h);
    let mut mean_mask = NaiveMask {
        w,
        h,
        px: vec![vec![false; w]; h],
    };
    for y in 0..h {
        for x in 0..w {
            let votes = masks.iter().filter(|m| m.px[y][x]).count();
            mean_mask.px[y][x] = votes as f64 / n as f64 > 0.5;
        }
    }
    let center = naive_mask_box(&mean_mask);
    let boxes: Vec<[f64; 4]> = masks.iter().map(naive_mask_box).collect();
    let mut mask_sigma = [0.0; 4];
    for d in 0..4 {
        let v: Vec<f64> = boxes.iter().map(|b| b[d]).collect();
        let scale = if d % 2 == 0 { center[2] } else { center[3] };
        mask_sigma[d] = naive_std_about(&v, center[d]) / scale;
    }
    let mask_ious: Vec<f64> = masks.iter().map(|m| naive_mask_iou(m, &mean_mask)).collect();
    let areas: Vec<f64> = masks.iter().map(|m| naive_area(m) as f64).collect();

    NaiveCriteria {
        class,
        box_sigma,
        box_iou: [naive_mean(&box_ious), naive_std(&box_ious)],
        mask_sigma,
        mask_iou: [naive_mean(&mask_ious), naive_std(&mask_ious)],
        area_std_norm: naive_std(&areas) / naive_mean(&areas),
        box_ious,
        mask_ious,
    }
}

pub fn rect_mask(w: usize, h: usize, b: [usize; 4]) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| x >= b[0] && x < b[2] && y >= b[1] && y < b[3])
}

pub fn random_scores(rng: &mut impl Rng, k: usize, favored: usize, strength: f64) -> Vec<f64> {
    let mut s: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    s[favored] += strength;
    let total: f64 = s.iter().sum();
    s.iter().map(|v| v / total).collect()
}

/// A random cluster of `n` jittered detections of one object inside a
/// `w x h` image. Masks are the member boxes with random holes.
pub fn random_cluster(rng: &mut ChaCha8Rng, n: usize, k: usize, w: usize, h: usize) -> Cluster {
    let bw = rng.random_range(8..=w / 2);
    let bh = rng.random_range(8..=h / 2);
    let x0 = rng.random_range(3..w - bw - 3);
    let y0 = rng.random_range(3..h - bh - 3);
    let favored = rng.random_range(0..k);
    let members = (0..n)
        .map(|r| {
            let jx1 = x0 as i64 + rng.random_range(-3..=3);
            let jy1 = y0 as i64 + rng.random_range(-3..=3);
            let jx2 = (x0 + bw) as i64 + rng.random_range(-3..=3);
            let jy2 = (y0 + bh) as i64 + rng.random_range(-3..=3);
            let b = [jx1 as usize, jy1 as usize, jx2 as usize, jy2 as usize];
            let hole = rng.random_range(0.0..0.15);
            let mut seed_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mask = BinaryMask::from_fn(w, h, |x, y| {
                let inside = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
                let keep = seed_rng.random::<f64>() >= hole;
                inside && (keep || (x == b[0] && y == b[1]))
            });
            // sub-pixel box noise on top of the mask box
            let fb = [
                b[0] as f64 + rng.random_range(-0.5..0.5),
                b[1] as f64 + rng.random_range(-0.5..0.5),
                b[2] as f64 + rng.random_range(-0.5..0.5),
                b[3] as f64 + rng.random_range(-0.5..0.5),
            ];
            DetectionSample {
                image_id: "img".into(),
                repetition: r as u32,
                class_scores: {
                    let strength = rng.random_range(0.0..3.0);
                    random_scores(rng, k, favored, strength)
                },
                bbox: BBox::try_from(fb).unwrap(),
                mask: Some(rle_encode(&mask)),
            }
        })
        .collect::<Vec<_>>();
    Cluster {
        cluster_id: 0,
        image_id: "img".into(),
        indices: (0..members.len()).collect(),
        members,
    }
}

/// Exact minimum of an `n x m` assignment by enumerating every injection
/// of the smaller side into the larger.
pub fn exhaustive_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        return exhaustive_assignment(&t);
    }
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

/// Minimum-cost transport between `p` and `q` on the grid `t` with ground
/// distance `|t_i - t_j|`, by successive shortest paths (Bellman-Ford) on
/// the residual network.
pub fn transport_lp(p: &[f64], q: &[f64], t: &[f64]) -> f64 {
    let g = p.len();
    // nodes: 0 source, 1..=g supply, g+1..=2g demand, 2g+1 sink
    let n = 2 * g + 2;
    let (src, sink) = (0, 2 * g + 1);
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
        rev: usize,
    }
    let mut adj: Vec<Vec<Edge>> = (0..n).map(|_| Vec::new()).collect();
    let add = |adj: &mut Vec<Vec<Edge>>, a: usize, b: usize, cap: f64, cost: f64| {
        let ra = adj[b].len();
        let rb = adj[a].len();
        adj[a].push(Edge {
            to: b,
            cap,
            cost,
            rev: ra,
        });
        adj[b].push(Edge {
            to: a,
            cap: 0.0,
            cost: -cost,
            rev: rb,
        });
    };
    for i in 0..g {
        add(&mut adj, src, 1 + i, p[i], 0.0);
        add(&mut adj, 1 + g + i, sink, q[i], 0.0);
        for j in 0..g {
            add(&mut adj, 1 + i, 1 + g + j, f64::INFINITY, (t[i] - t[j]).abs());
        }
    }
    let eps = 1e-15;
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for (ei, e) in adj[u].iter().enumerate() {
                    if e.cap > eps && dist[u] + e.cost < dist[e.to] - 1e-15 {
                        dist[e.to] = dist[u] + e.cost;
                        prev[e.to] = Some((u, ei));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut flow = f64::INFINITY;
        let mut v = sink;
        while let Some((u, ei)) = prev[v] {
            flow = flow.min(adj[u][ei].cap);
            v = u;
        }
        let mut v = sink;
        while let Some((u, ei)) = prev[v] {
            adj[u][ei].cap -= flow;
            let (to, rev) = (adj[u][ei].to, adj[u][ei].rev);
            adj[to][rev].cap += flow;
            v = u;
        }
        total += flow * dist[sink];
    }
    total
}

/// Support-weighted F1 computed straight from the label lists.
pub fn naive_weighted_f1(truth: &[Category], pred: &[Category]) -> f64 {
    let mut weighted = 0.0;
    for c in Category::ALL {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fn_ = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let support = tp + fn_;
        let f1 = if 2.0 * tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        weighted += support * f1;
    }
    weighted / truth.len() as f64
}

pub struct RunFiles {
    pub manifest: PathBuf,
    pub detections: PathBuf,
    pub gt: PathBuf,
}

/// Writes a small synthetic run: a few objects per image, `reps` noisy
/// repetitions of each, occasional class confusions, loose boxes and
/// spurious detections.
pub fn write_synthetic_run(dir: &Path, seed: u64, n_images: usize, reps: u32) -> RunFiles {
    use std::fmt::Write as _;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, k) = (96usize, 64usize, 3usize);
    let mut images = Vec::new();
    let mut det = String::new();
    let mut gt = String::new();
    for i in 0..n_images {
        let id = format!("img{i:03}");
        images.push(serde_json::json!({"image_id": id, "width": w, "height": h}));
        let n_obj = rng.random_range(1..=4);
        let mut objects = Vec::new();
        for o in 0..n_obj {
            let x0 = 4 + o * 22 + rng.random_range(0..4);
            let y0 = rng.random_range(4..24);
            let bw = rng.random_range(10..18);
            let bh = rng.random_range(10..30);
            let class = rng.random_range(0..k);
            let b = [x0, y0, x0 + bw, y0 + bh];
            let mask = rect_mask(w, h, b);
            writeln!(
                gt,
                "{}",
                serde_json::json!({"image_id": id, "class_id": class,
                    "bbox": [b[0], b[1], b[2], b[3]], "mask": rle_encode(&mask)})
            )
            .unwrap();
            // behaviour of the model on this object
            let shift: i64 = match rng.random_range(0..4) {
                0 => 5,
                _ => 0,
            };
            let predicted = if rng.random_range(0..4) == 0 {
                (class + 1) % k
            } else {
                class
            };
            objects.push((b, predicted, shift));
        }
        for r in 0..reps {
            for (b, predicted, shift) in &objects {
                if rng.random::<f64>() < 0.1 {
                    continue;
                }
                let j = |v: usize, s: i64, rng: &mut ChaCha8Rng| {
                    (v as i64 + s + rng.random_range(-1..=1)).clamp(0, 95) as usize
                };
                let pb = [
                    j(b[0], *shift, &mut rng),
                    j(b[1], 0, &mut rng),
                    j(b[2], *shift, &mut rng).max(j(b[0], *shift, &mut rng) + 2),
                    j(b[3], 0, &mut rng).min(h),
                ];
                let pb = [pb[0], pb[1], pb[2].min(w), pb[3].max(pb[1] + 2).min(h)];
                let mask = rect_mask(w, h, pb);
                let scores = random_scores(&mut rng, k, *predicted, 2.0);
                writeln!(
                    det,
                    "{}",
                    serde_json::json!({"image_id": id, "repetition": r, "class_scores": scores,
                        "bbox": [pb[0], pb[1], pb[2], pb[3]], "mask": rle_encode(&mask)})
                )
                .unwrap();
            }
            if rng.random::<f64>() < 0.3 {
                let b = [80usize, 50, 90, 60];
                let scores = random_scores(&mut rng, k, 0, 0.5);
                writeln!(
                    det,
                    "{}",
                    serde_json::json!({"image_id": id, "repetition": r, "class_scores": scores,
                        "bbox": b, "mask": rle_encode(&rect_mask(w, h, b))})
                )
                .unwrap();
            }
        }
    }
    let manifest = serde_json::json!({
        "dataset": "synthetic",
        "k": k,
        "class_names": ["car", "pedestrian", "bicycle"],
        "repetitions": reps,
        "images": images,
    });
    let files = RunFiles {
        manifest: dir.join("manifest.json"),
        detections: dir.join("detections.ndjson"),
        gt: dir.join("gt.ndjson"),
    };
    std::fs::write(&files.manifest, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    std::fs::write(&files.detections, det).unwrap();
    std::fs::write(&files.gt, gt).unwrap();
    files
}
