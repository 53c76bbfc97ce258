use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dynaug_core::classifier::{ClassifierModel, Mode};
use dynaug_core::numerics::Rng;
use dynaug_core::par;
use dynaug_core::rankpool::{compute_dynamic_image, DynamicImage, RankPoolConfig};
use dynaug_core::videodata::{default_class_specs, synth_video, Video};

fn videos(n: usize, t: usize, side: usize) -> Vec<Video> {
    let specs = default_class_specs(t, side, side, 0.05);
    (0..n)
        .map(|k| synth_video(&specs[k % specs.len()], k as u64, t, side, side).unwrap())
        .collect()
}

fn rank_pooling(c: &mut Criterion) {
    let vids = videos(32, 12, 16);
    let config = RankPoolConfig::default();
    let mut g = c.benchmark_group("rank-pooling");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sequential", vids.len()), |b| {
        b.iter(|| par::map_seq(black_box(&vids), |v| compute_dynamic_image(v, &config).unwrap()))
    });
    g.bench_function(BenchmarkId::new("rayon", vids.len()), |b| {
        b.iter(|| par::map(black_box(&vids), |v| compute_dynamic_image(v, &config).unwrap()))
    });
    g.finish();
}

fn score_matrix(c: &mut Criterion) {
    let config = RankPoolConfig::default();
    let pool: Vec<DynamicImage> = videos(64, 8, 16)
        .iter()
        .map(|v| compute_dynamic_image(v, &config).unwrap())
        .cycle()
        .take(2000)
        .collect();
    let model = ClassifierModel::new(16, 16, 256, 4, 0.4, &mut Rng::new(1)).unwrap();
    let row = |d: &DynamicImage| model.forward(d.features(), Mode::Eval, None).unwrap();
    let mut g = c.benchmark_group("score-matrix");
    g.sample_size(20);
    g.bench_function(BenchmarkId::new("sequential", pool.len()), |b| {
        b.iter(|| par::map_seq(black_box(&pool), row))
    });
    g.bench_function(BenchmarkId::new("rayon", pool.len()), |b| b.iter(|| par::map(black_box(&pool), row)));
    g.finish();
}

criterion_group!(benches, rank_pooling, score_matrix);
criterion_main!(benches);
