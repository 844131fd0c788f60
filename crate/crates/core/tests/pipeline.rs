use std::path::Path;

use lesplat::bench::{self, BenchConfig};
use lesplat::query::{build_prompt, FixtureSet, PromptContext};
use lesplat::train::{
    finite_diff_check, objective, objective_with_grad, smoothing_with_grad, train_semantics, SemanticModel, TrainConfig,
    TrainingData,
};
use lesplat::Execution;

#[derive(serde::Deserialize)]
struct PromptFixture {
    context: PromptContext,
    reply: String,
}

#[test]
fn reply_fixtures_match_their_prompts() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let entries: Vec<PromptFixture> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("prompts.json")).unwrap()).unwrap();
    let mut expected = FixtureSet::default();
    for e in entries {
        let (system, user) = build_prompt(&e.context).unwrap();
        expected.insert(&system, &user, e.reply);
    }
    assert_eq!(FixtureSet::load(&dir.join("replies.json")).unwrap(), expected);
}

#[test]
fn benchmark_loss_trace_mostly_decreases() {
    let cfg = BenchConfig::with_seed(1);
    let world = bench::build_world(&cfg).unwrap();
    let views = bench::training_views(&world, Execution::default());
    let out = train_semantics(&world.scene, &views, cfg.codebook_size, &cfg.train).unwrap();
    assert_eq!(out.trace.len(), cfg.train.epochs + 1);
    for w in out.trace.windows(2) {
        assert!(w[1].total <= w[0].total * 1.05, "epoch {}: {} -> {}", w[1].epoch, w[0].total, w[1].total);
    }
    assert!(out.trace.last().unwrap().total < 0.1 * out.trace[0].total);
}

#[test]
fn benchmark_is_reproducible_and_parallelism_free() {
    let cfg = BenchConfig {
        train: TrainConfig {
            epochs: 60,
            ..BenchConfig::with_seed(2).train
        },
        ..BenchConfig::with_seed(2)
    };
    let a = bench::run_benchmark_with(&cfg, Execution::Parallel).unwrap();
    let b = bench::run_benchmark_with(&cfg, Execution::Sequential).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn detached_copies_change_values_but_not_gradients() {
    let s_mlp = vec![vec![0.3, -0.1], vec![0.0, 0.7]];
    let s_g = vec![vec![-0.2, 0.4], vec![0.5, 0.5]];
    let far = vec![vec![9.0, 9.0]; 2];
    let u = [0.2, 0.6];
    let base = smoothing_with_grad(&s_mlp, &s_mlp, &s_g, &s_g, &u, 0.1).unwrap();

    // term 1 reads s_G only through its detached copy
    let moved = smoothing_with_grad(&s_mlp, &s_mlp, &s_g, &far, &u, 0.1).unwrap();
    assert_ne!(moved.value, base.value);
    assert_eq!(moved.grad_s_g, base.grad_s_g);

    // term 2 reads s_MLP only through its detached copy
    let moved = smoothing_with_grad(&s_mlp, &far, &s_g, &s_g, &u, 0.1).unwrap();
    assert_ne!(moved.value, base.value);
    assert_eq!(moved.grad_s_mlp, base.grad_s_mlp);

    // each live argument's gradient matches finite differences of the value
    let rows = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(2).map(<[f64]>::to_vec).collect() };
    let flat = |v: &[Vec<f64>]| -> Vec<f64> { v.iter().flatten().copied().collect() };
    let e1 = finite_diff_check(
        |x| smoothing_with_grad(&rows(x), &s_mlp, &s_g, &s_g, &u, 0.1).unwrap().value,
        &flat(&s_mlp),
        &flat(&base.grad_s_mlp),
        1e-6,
    );
    let e2 = finite_diff_check(
        |x| smoothing_with_grad(&s_mlp, &s_mlp, &rows(x), &s_g, &u, 0.1).unwrap().value,
        &flat(&s_g),
        &flat(&base.grad_s_g),
        1e-6,
    );
    assert!(e1 < 1e-6 && e2 < 1e-6, "{e1} {e2}");
}

#[test]
fn objective_gradient_matches_finite_differences_on_benchmark_subset() {
    let cfg = BenchConfig {
        gaussians_per_class: 4,
        width: 10,
        height: 8,
        views: 1,
        embedding_dim: 32,
        ..BenchConfig::with_seed(0)
    };
    let world = bench::build_world(&cfg).unwrap();
    let views = bench::training_views(&world, Execution::Sequential);
    let data = TrainingData::new(&world.scene, &views, cfg.codebook_size, Execution::Sequential).unwrap();
    let tc = TrainConfig {
        init_std: 0.5,
        initial_uncertainty: 0.4,
        ..TrainConfig::default()
    };
    let model = SemanticModel::init(world.scene.len(), cfg.codebook_size, &tc);
    let (_, total, grad) = objective_with_grad(&model, &data, &tc);
    assert!((objective(&model, &model, &data, &tc).1 - total).abs() < 1e-12);
    let err = finite_diff_check(
        |x| {
            let mut m = model.clone();
            m.load(x);
            objective(&m, &model, &data, &tc).1
        },
        &model.flatten(),
        &grad.flatten(),
        1e-5,
    );
    assert!(err < 1e-3, "{err}");
}
