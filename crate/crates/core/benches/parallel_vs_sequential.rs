use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Vector3;

use lesplat::bench::{build_world, BenchConfig};
use lesplat::relevancy::{feature_map_with, relevancy_score_with, FeatureMap};
use lesplat::render::{render_color_with, render_semantic_distribution_with};
use lesplat::scene::Camera;
use lesplat::{DecoderMLP, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn camera() -> Camera {
    Camera::look_at(
        Vector3::new(0.2, 0.1, 0.8),
        Vector3::new(0.0, 0.0, 6.0),
        Vector3::new(0.0, -1.0, 0.0),
        240.0,
        160,
        120,
    )
    .unwrap()
}

fn rendering(c: &mut Criterion) {
    let cfg = BenchConfig {
        embedding_dim: 64,
        ..BenchConfig::default()
    };
    let world = build_world(&cfg).unwrap();
    let cam = camera();
    let decoder = DecoderMLP::random(cfg.train.feature_dim, cfg.codebook_size, 0);

    let mut group = c.benchmark_group("render_color");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| render_color_with(&world.scene, &cam, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("render_semantic_distribution");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| render_semantic_distribution_with(&world.scene, &cam, &decoder, exec).unwrap())
        });
    }
    group.finish();

    let m = render_semantic_distribution_with(&world.scene, &cam, &decoder, Execution::Parallel).unwrap();
    let features: FeatureMap = feature_map_with(&m, &world.codebook, Execution::Parallel).unwrap();
    let q = &world.queries[0];
    let pos: Vec<&[f64]> = std::iter::once(q.main_positive.as_str())
        .chain(q.helping_positives.iter().map(String::as_str))
        .map(|p| world.table.get(p).unwrap())
        .collect();
    let canon: Vec<&[f64]> = q.canonicals.iter().map(|p| world.table.get(p).unwrap()).collect();
    let mut group = c.benchmark_group("relevancy_score");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| relevancy_score_with(&features, &pos, &canon, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rendering);
criterion_main!(benches);
