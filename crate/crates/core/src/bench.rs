//! Synthetic open-vocabulary segmentation benchmark.
//!
//! Three object classes fill the view side by side. Each class is made of
//! two parts: a *core* part whose language feature sits close to the class's
//! text embedding, and a *variant* part whose feature has drifted toward a
//! visually similar object (think "car" seen from an angle that looks like a
//! "truck"). The embedding table is built so that:
//!
//! * class text embeddings are unit vectors with pairwise cosine 0.2;
//! * a core feature has cosine ≈ 0.89 to its class embedding;
//! * a variant feature has cosine ≈ 0.55 to its class embedding and ≈ 0.68
//!   to the similar-object phrase, which is one of the generated negatives;
//! * the helping positive has cosine 0.8 to the variant feature;
//! * the four predefined canonical phrases map to random unit vectors.
//!
//! The pipeline builds the scene, quantizes noisy per-Gaussian features,
//! renders ground-truth index maps, trains the semantic features, renders
//! index distributions, lifts them through the codebook and scores every
//! class under the three inference modes.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{evaluate, ClassEval, ClassView, MetricsReport};
use crate::quant::{build_codebook, dot, normalized, Codebook};
use crate::relevancy::{
    feature_map_with, score_query, segment, EmbeddingTable, InferenceMode, Provenance, QuerySpec, SegMask,
    PREDEFINED_CANONICALS,
};
use crate::render::{render_semantic_distribution_with, Rasterizer};
use crate::scene::{make_synthetic_scene, Camera, ClassDef, Scene, SyntheticSceneSpec};
use crate::train::{train_semantics, Optimizer, TrainConfig, TrainOutput, TrainView};

pub const CLASS_NAMES: [&str; 3] = ["car", "pedestrian", "traffic light"];
const SIMILAR_NAMES: [&str; 3] = ["truck", "cyclist", "street lamp"];
const HELPING_NAMES: [&str; 3] = ["vehicle", "person walking", "signal"];
const BACKGROUND_NAMES: [&str; 2] = ["road surface", "building"];

/// Pairwise cosine between class text embeddings.
pub const CLASS_COSINE: f64 = 0.2;
/// Cosine between a similar-object phrase and its class embedding.
pub const SIMILAR_COSINE: f64 = 0.6;
/// Cosine between the helping positive and the variant feature.
pub const HELPING_COSINE: f64 = 0.8;
/// Minimum accumulated opacity for a pixel to carry a label.
pub const COVERAGE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub gaussians_per_class: usize,
    pub embedding_dim: usize,
    pub codebook_size: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Norm of the per-Gaussian feature perturbation before normalization.
    pub feature_noise: f64,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians_per_class: 50,
            embedding_dim: 512,
            codebook_size: 8,
            views: 4,
            width: 48,
            height: 36,
            feature_noise: 0.3,
            threshold: 0.5,
            train: TrainConfig {
                learning_rate: BENCH_LEARNING_RATE,
                optimizer: Optimizer::Adam,
                ..TrainConfig::default()
            },
        }
    }
}

/// Step size used by the benchmark's training run.
pub const BENCH_LEARNING_RATE: f64 = 0.01;

impl BenchConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            ..Self::default()
        };
        cfg.train.seed = seed;
        cfg
    }
}

/// Everything the benchmark builds before inference.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub scene: Scene,
    /// Part label per Gaussian: `2 * class + {0: core, 1: variant}`.
    pub part_labels: Vec<usize>,
    pub cameras: Vec<Camera>,
    pub table: EmbeddingTable,
    pub codebook: Codebook,
    /// Per-Gaussian language features before quantization.
    pub raw_features: Vec<Vec<f64>>,
    /// Codebook index of each part's feature.
    pub part_index: Vec<usize>,
    pub queries: Vec<QuerySpec>,
}

impl SyntheticWorld {
    pub fn class_of(&self, gaussian: usize) -> usize {
        self.part_labels[gaussian] / 2
    }

    /// Target index for every Gaussian.
    pub fn gaussian_targets(&self) -> Vec<usize> {
        self.part_labels.iter().map(|&p| self.part_index[p]).collect()
    }
}

/// Orthonormal vectors in `dim` dimensions from seeded Gaussian draws.
fn orthonormal_basis(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::invalid(format!("need {count} orthogonal directions in dimension {dim}")));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        if let Some(u) = normalized(&v) {
            basis.push(u);
        }
    }
    Ok(basis)
}

fn combine(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let dim = terms[0].1.len();
    let mut out = vec![0.0; dim];
    for (c, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += c * x;
        }
    }
    normalized(&out).expect("non-degenerate combination")
}

/// Phrase embeddings plus the core and variant feature of each class.
struct ConstructedSpace {
    table: EmbeddingTable,
    core: Vec<Vec<f64>>,
    variant: Vec<Vec<f64>>,
}

fn construct_space(dim: usize, rng: &mut ChaCha8Rng) -> Result<ConstructedSpace> {
    let n = CLASS_NAMES.len();
    // common + per class (class, similar, core noise, variant noise, help) + background
    let basis = orthonormal_basis(1 + 5 * n + BACKGROUND_NAMES.len(), dim, rng)?;
    let common = &basis[0];
    let fresh = |class: usize, slot: usize| &basis[1 + 5 * class + slot];
    let mut table = EmbeddingTable::new(dim, Provenance::Synthetic);
    let mut core = Vec::new();
    let mut variant = Vec::new();
    for j in 0..n {
        let class = combine(&[(CLASS_COSINE.sqrt(), common), ((1.0 - CLASS_COSINE).sqrt(), fresh(j, 0))]);
        let similar = combine(&[(SIMILAR_COSINE, &class), ((1.0 - SIMILAR_COSINE * SIMILAR_COSINE).sqrt(), fresh(j, 1))]);
        let core_feat = combine(&[(1.0, &class), (0.5, fresh(j, 2))]);
        let variant_feat = combine(&[(0.3, &class), (0.74, &similar), (0.962, fresh(j, 3))]);
        let helping = combine(&[
            (HELPING_COSINE, &variant_feat),
            ((1.0 - HELPING_COSINE * HELPING_COSINE).sqrt(), fresh(j, 4)),
        ]);
        table.insert(CLASS_NAMES[j], class)?;
        table.insert(SIMILAR_NAMES[j], similar)?;
        table.insert(HELPING_NAMES[j], helping)?;
        core.push(core_feat);
        variant.push(variant_feat);
    }
    for (i, name) in BACKGROUND_NAMES.iter().enumerate() {
        table.insert(*name, basis[1 + 5 * n + i].clone())?;
    }
    for name in PREDEFINED_CANONICALS {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        table.insert(name, normalized(&v).expect("random vector is nonzero"))?;
    }
    Ok(ConstructedSpace { table, core, variant })
}

/// Query for class `j`: its name, the helping phrase, and as negatives the
/// other classes, the similar object and the background phrases.
fn class_query(j: usize) -> Result<QuerySpec> {
    let mut negatives: Vec<String> = (0..CLASS_NAMES.len())
        .filter(|&k| k != j)
        .map(|k| CLASS_NAMES[k].to_string())
        .collect();
    negatives.push(SIMILAR_NAMES[j].to_string());
    negatives.extend(BACKGROUND_NAMES.iter().map(|s| s.to_string()));
    QuerySpec::new(CLASS_NAMES[j], vec![HELPING_NAMES[j].to_string()], negatives)
}

fn scene_spec(cfg: &BenchConfig) -> SyntheticSceneSpec {
    let colors = [[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.9, 0.8, 0.1]];
    let per_part = cfg.gaussians_per_class / 2;
    let mut classes = Vec::new();
    for (j, name) in CLASS_NAMES.iter().enumerate() {
        let x = (j as f64 - 1.0) * 1.4;
        for (part, y) in [("core", -0.7), ("variant", 0.7)] {
            let count = if part == "core" {
                per_part
            } else {
                cfg.gaussians_per_class - per_part
            };
            classes.push(ClassDef {
                name: format!("{name}/{part}"),
                center: [x, y, 6.0],
                half_extent: [0.7, 0.7, 0.3],
                count,
                color: colors[j],
                gaussian_scale: 0.22,
                opacity: 0.8,
            });
        }
    }
    SyntheticSceneSpec {
        classes,
        noise: 0.3,
        seed: cfg.seed,
        feature_dim: cfg.train.feature_dim,
        background_color: [0.0; 3],
    }
}

fn cameras(cfg: &BenchConfig) -> Result<Vec<Camera>> {
    let target = Vector3::new(0.0, 0.0, 6.0);
    (0..cfg.views)
        .map(|v| {
            let angle = v as f64 / cfg.views.max(1) as f64 * std::f64::consts::TAU;
            let eye = Vector3::new(0.35 * angle.cos(), 0.25 * angle.sin(), 0.8);
            let focal = 1.5 * cfg.width as f64;
            Camera::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0), focal, cfg.width, cfg.height)
        })
        .collect()
}

pub fn build_world(cfg: &BenchConfig) -> Result<SyntheticWorld> {
    if cfg.gaussians_per_class < 2 {
        return Err(Error::invalid("each class needs at least two Gaussians"));
    }
    let (scene, part_labels) = make_synthetic_scene(&scene_spec(cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let space = construct_space(cfg.embedding_dim, &mut rng)?;
    let part_feature = |p: usize| if p.is_multiple_of(2) { &space.core[p / 2] } else { &space.variant[p / 2] };

    let raw_features: Vec<Vec<f64>> = part_labels
        .iter()
        .map(|&p| {
            let noise: Vec<f64> = (0..cfg.embedding_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let scale = cfg.feature_noise / (cfg.embedding_dim as f64).sqrt();
            let v: Vec<f64> = part_feature(p).iter().zip(&noise).map(|(f, n)| f + scale * n).collect();
            normalized(&v).expect("perturbed feature is nonzero")
        })
        .collect();
    let codebook = build_codebook(&raw_features, cfg.codebook_size, cfg.seed)?;
    let part_index = (0..2 * CLASS_NAMES.len())
        .map(|p| codebook.assign(part_feature(p)))
        .collect::<Result<Vec<_>>>()?;
    let queries = (0..CLASS_NAMES.len()).map(class_query).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticWorld {
        scene,
        part_labels,
        cameras: cameras(cfg)?,
        table: space.table,
        codebook,
        raw_features,
        part_index,
        queries,
    })
}

/// Per pixel, the label with the largest accumulated weight, provided total
/// coverage reaches [`COVERAGE_THRESHOLD`].
pub fn dominant_labels(scene: &Scene, labels: &[usize], n_labels: usize, cam: &Camera, exec: Execution) -> Vec<Option<usize>> {
    let payloads: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut v = vec![0.0; n_labels];
            v[l] = 1.0;
            v
        })
        .collect();
    let (acc, _) = Rasterizer::new(scene, cam).render_payloads(&payloads, n_labels, exec);
    acc.chunks_exact(n_labels)
        .map(|w| {
            let total: f64 = w.iter().sum();
            (total >= COVERAGE_THRESHOLD).then(|| crate::mlp::argmax(w))
        })
        .collect()
}

pub fn training_views(world: &SyntheticWorld, exec: Execution) -> Vec<TrainView> {
    world
        .cameras
        .iter()
        .map(|cam| {
            let parts = dominant_labels(&world.scene, &world.part_labels, 2 * CLASS_NAMES.len(), cam, exec);
            TrainView {
                camera: cam.clone(),
                targets: parts.into_iter().map(|p| p.map(|p| world.part_index[p])).collect(),
            }
        })
        .collect()
}

pub fn class_masks(world: &SyntheticWorld, cam: &Camera, exec: Execution) -> Vec<SegMask> {
    let classes: Vec<usize> = world.part_labels.iter().map(|p| p / 2).collect();
    let dominant = dominant_labels(&world.scene, &classes, CLASS_NAMES.len(), cam, exec);
    (0..CLASS_NAMES.len())
        .map(|c| SegMask {
            width: cam.width,
            height: cam.height,
            pixels: dominant.iter().map(|d| *d == Some(c)).collect(),
        })
        .collect()
}

/// Fraction of Gaussians whose decoded arg-max equals their target index.
pub fn label_accuracy(world: &SyntheticWorld, trained: &TrainOutput) -> f64 {
    let targets = world.gaussian_targets();
    let predicted = trained.predicted_indices();
    let hits = predicted.iter().zip(&targets).filter(|(p, t)| p == t).count();
    hits as f64 / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: InferenceMode,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub label_accuracy: f64,
    pub quantization_error: f64,
    pub final_loss: f64,
    pub modes: Vec<ModeReport>,
}

impl BenchReport {
    pub fn mode(&self, mode: InferenceMode) -> &MetricsReport {
        &self
            .modes
            .iter()
            .find(|m| m.mode == mode)
            .expect("all modes evaluated")
            .metrics
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table of aggregates, one row per inference mode.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>8} {:>9} {:>6} {:>6}\n",
            "method", "accuracy", "precision", "mIoU", "mAP"
        );
        for m in &self.modes {
            let label = match m.mode {
                InferenceMode::Full => "generated (full)",
                InferenceMode::WithoutHelping => "generated w/o helping",
                InferenceMode::Predefined => "predefined canonicals",
            };
            let r = &m.metrics;
            out.push_str(&format!(
                "{label:<22} {:>8.4} {:>9.4} {:>6.4} {:>6.4}\n",
                r.accuracy, r.precision, r.miou, r.map
            ));
        }
        out
    }
}

/// Scores every class of `world` with a trained model under each mode.
pub fn evaluate_modes(world: &SyntheticWorld, trained: &TrainOutput, threshold: f64, exec: Execution) -> Result<Vec<ModeReport>> {
    let mut features = Vec::with_capacity(world.cameras.len());
    let mut gts = Vec::with_capacity(world.cameras.len());
    for cam in &world.cameras {
        let m = render_semantic_distribution_with(&trained.scene, cam, trained.decoder(), exec)?;
        features.push(feature_map_with(&m, &world.codebook, exec)?);
        gts.push(class_masks(world, cam, exec));
    }
    InferenceMode::ALL
        .iter()
        .map(|&mode| {
            let classes = world
                .queries
                .iter()
                .enumerate()
                .map(|(c, q)| {
                    let views = features
                        .iter()
                        .zip(&gts)
                        .map(|(f, gt)| {
                            let scores = score_query(f, q, mode, &world.table, exec)?;
                            Ok(ClassView {
                                pred: segment(&scores, threshold)?,
                                scores,
                                gt: gt[c].clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ClassEval {
                        name: q.main_positive.clone(),
                        views,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModeReport {
                mode,
                metrics: evaluate(&classes)?,
            })
        })
        .collect()
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    run_benchmark_with(cfg, Execution::default())
}

pub fn run_benchmark_with(cfg: &BenchConfig, exec: Execution) -> Result<BenchReport> {
    let world = build_world(cfg)?;
    let views = training_views(&world, exec);
    let trained = train_semantics(&world.scene, &views, cfg.codebook_size, &cfg.train)?;
    let modes = evaluate_modes(&world, &trained, cfg.threshold, exec)?;
    Ok(BenchReport {
        seed: cfg.seed,
        label_accuracy: label_accuracy(&world, &trained),
        quantization_error: world.codebook.quantization_error(&world.raw_features)?,
        final_loss: trained.trace.last().map_or(f64::NAN, |e| e.total),
        modes,
    })
}
