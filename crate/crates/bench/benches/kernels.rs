use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cornercase_core::clustering::Cluster;
use cornercase_core::criteria::{feature_vector, CriteriaConfig};
use cornercase_core::decision::{train_forest, train_tree, ForestConfig, LabeledSet, TreeConfig};
use cornercase_core::geometry::{iou_mask, rle_encode, BBox, BinaryMask};
use cornercase_core::ingest::DetectionSample;
use cornercase_core::matching::{hungarian, Category};
use cornercase_core::{FEATURE_COUNT, FEATURE_NAMES};

fn rect(w: usize, h: usize, b: [usize; 4]) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| x >= b[0] && x < b[2] && y >= b[1] && y < b[3])
}

fn cluster(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Cluster {
    let members: Vec<DetectionSample> = (0..n)
        .map(|r| {
            let j = |rng: &mut ChaCha8Rng| rng.random_range(0..4);
            let b = [
                side / 4 + j(rng),
                side / 4 + j(rng),
                3 * side / 4 + j(rng),
                3 * side / 4 + j(rng),
            ];
            let mut scores: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            scores[3] += 3.0;
            let total: f64 = scores.iter().sum();
            DetectionSample {
                image_id: "bench".into(),
                repetition: r as u32,
                class_scores: scores.iter().map(|s| s / total).collect(),
                bbox: BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap(),
                mask: Some(rle_encode(&rect(side, side, b))),
            }
        })
        .collect();
    Cluster {
        cluster_id: 0,
        image_id: "bench".into(),
        indices: (0..n).collect(),
        members,
    }
}

fn bench_hungarian(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("hungarian");
    for n in [10usize, 50, 200] {
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| hungarian(black_box(cost)))
        });
    }
    group.finish();
}

fn bench_iou_mask(c: &mut Criterion) {
    let mut group = c.benchmark_group("iou_mask");
    for side in [64usize, 512, 1024] {
        let a = rect(side, side, [side / 8, side / 8, side / 2, side / 2]);
        let m = rect(side, side, [side / 4, side / 4, 3 * side / 4, 3 * side / 4]);
        group.bench_with_input(BenchmarkId::from_parameter(side), &(a, m), |b, (a, m)| {
            b.iter(|| iou_mask(black_box(a), black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_feature_vector(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = CriteriaConfig::default();
    let mut group = c.benchmark_group("feature_vector");
    for (n, side) in [(10usize, 128usize), (40, 256)] {
        let cl = cluster(&mut rng, n, side);
        group.bench_with_input(BenchmarkId::new(format!("{side}px"), n), &cl, |b, cl| {
            b.iter(|| feature_vector(black_box(cl), &cfg).unwrap())
        });
    }
    group.finish();
}

fn training_set(rng: &mut ChaCha8Rng, n: usize) -> LabeledSet {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..5);
        let mut row: Vec<f64> = (0..FEATURE_COUNT).map(|_| rng.random::<f64>()).collect();
        row[class] += 0.5;
        x.push(row);
        y.push(Category::from_index(class).unwrap());
    }
    LabeledSet::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), x, y).unwrap()
}

fn bench_training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let set = training_set(&mut rng, 2000);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("tree_2000", |b| {
        b.iter(|| train_tree(black_box(&set), &TreeConfig::default()).unwrap())
    });
    let forest = ForestConfig {
        n_trees: 20,
        ..ForestConfig::default()
    };
    group.bench_function("forest20_2000", |b| {
        b.iter(|| train_forest(black_box(&set), &forest, 7).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_hungarian,
    bench_iou_mask,
    bench_feature_vector,
    bench_training
);
criterion_main!(benches);
