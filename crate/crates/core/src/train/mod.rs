//! Fitting per-Gaussian semantic features on fixed geometry.
//!
//! The rendered index distribution at a pixel is `Σ_i w_i softmax(dec(s_i))`
//! with compositing weights `w_i` that depend only on geometry, so the
//! weights are computed once per camera and reused every epoch.

mod gradcheck;
mod loss;

pub use gradcheck::{finite_diff_check, numeric_gradient};
pub use loss::{
    loss_ce, loss_ce_with_grad, loss_smoothing, loss_uncertainty, loss_uncertainty_grad, smoothing_with_grad,
    total_loss, CeGrad, LossParts, SmoothingGrad, PROB_FLOOR,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mlp::{argmax, encode_position, softmax, softmax_backward, DecoderMLP, SmoothingMLP};
use crate::render::Rasterizer;
use crate::scene::{Camera, Scene, DEFAULT_FEATURE_DIM};

/// Compositing weights below this are dropped from the training cache.
pub const MIN_CACHED_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_s: f64,
    pub lambda_ce: f64,
    pub lambda_u: f64,
    pub lambda_smo: f64,
    /// Floor on the smoothing weight of the second term.
    pub w_s: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub initial_uncertainty: f64,
    /// Standard deviation of the initial compact features.
    pub init_std: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

/// Update rule applied to the flattened parameter vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    GradientDescent,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_s: 0.5,
            lambda_ce: 0.1,
            lambda_u: 0.1,
            lambda_smo: 0.1,
            w_s: 0.1,
            learning_rate: 0.05,
            epochs: 500,
            seed: 0,
            feature_dim: DEFAULT_FEATURE_DIM,
            initial_uncertainty: 0.1,
            init_std: 0.01,
            optimizer: Optimizer::GradientDescent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_s, self.lambda_ce, self.lambda_u, self.lambda_smo];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if !(self.w_s > 0.0 && self.w_s <= 1.0) {
            return Err(Error::invalid("w_s must lie in (0,1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.initial_uncertainty) {
            return Err(Error::invalid("initial uncertainty must lie in [0,1]"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(())
    }
}

/// Trainable state: compact features, uncertainties and both MLPs.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticModel {
    pub features: Vec<Vec<f64>>,
    pub uncertainty: Vec<f64>,
    pub decoder: DecoderMLP,
    pub smoother: SmoothingMLP,
}

impl SemanticModel {
    pub fn init(n: usize, codebook_size: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("finite std");
        let features = (0..n)
            .map(|_| (0..cfg.feature_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Self {
            features,
            uncertainty: vec![cfg.initial_uncertainty; n],
            decoder: DecoderMLP::random(cfg.feature_dim, codebook_size, cfg.seed.wrapping_add(1)),
            smoother: SmoothingMLP::random(cfg.feature_dim, cfg.seed.wrapping_add(2)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            features: self.features.iter().map(|f| vec![0.0; f.len()]).collect(),
            uncertainty: vec![0.0; self.uncertainty.len()],
            decoder: self.decoder.zeros_like(),
            smoother: self.smoother.zeros_like(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for f in &self.features {
            out.extend_from_slice(f);
        }
        out.extend_from_slice(&self.uncertainty);
        self.decoder.flatten_into(&mut out);
        self.smoother.flatten_into(&mut out);
        out
    }

    pub fn load(&mut self, flat: &[f64]) {
        let mut src = flat;
        for f in &mut self.features {
            let (head, rest) = src.split_at(f.len());
            f.copy_from_slice(head);
            src = rest;
        }
        let (u, rest) = src.split_at(self.uncertainty.len());
        self.uncertainty.copy_from_slice(u);
        src = rest;
        self.decoder.load_from(&mut src);
        self.smoother.load_from(&mut src);
        debug_assert!(src.is_empty());
    }

    fn step(&mut self, grad: &SemanticModel, lr: f64) {
        for (f, g) in self.features.iter_mut().zip(&grad.features) {
            for (a, b) in f.iter_mut().zip(g) {
                *a -= lr * b;
            }
        }
        for (u, g) in self.uncertainty.iter_mut().zip(&grad.uncertainty) {
            *u = (*u - lr * g).clamp(0.0, 1.0);
        }
        self.decoder.axpy(-lr, &grad.decoder);
        self.smoother.axpy(-lr, &grad.smoother);
    }

    fn clamp_uncertainty(&mut self) {
        for u in &mut self.uncertainty {
            *u = u.clamp(0.0, 1.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.features.iter().flatten().chain(&self.uncertainty).all(|v| v.is_finite())
            && self.decoder.is_finite()
            && self.smoother.is_finite()
    }
}

/// One camera's supervision: per-pixel target index (`None` = unsupervised).
#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub targets: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
struct CachedPixel {
    target: usize,
    weights: Vec<(usize, f64)>,
}

/// Geometry-dependent data reused by every epoch.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pixels: Vec<CachedPixel>,
    positions: Vec<[f64; 3]>,
    codebook_size: usize,
}

impl TrainingData {
    pub fn new(scene: &Scene, views: &[TrainView], codebook_size: usize, exec: Execution) -> Result<Self> {
        if codebook_size == 0 {
            return Err(Error::invalid("codebook size must be positive"));
        }
        let mut pixels = Vec::new();
        for (vi, view) in views.iter().enumerate() {
            view.camera.validate()?;
            if view.targets.len() != view.camera.pixel_count() {
                return Err(Error::invalid(format!(
                    "view {vi}: {} targets for a {}x{} camera",
                    view.targets.len(),
                    view.camera.width,
                    view.camera.height
                )));
            }
            let weights = Rasterizer::new(scene, &view.camera).pixel_weights(exec);
            for (t, w) in view.targets.iter().zip(weights) {
                let Some(t) = *t else { continue };
                if t >= codebook_size {
                    return Err(Error::invalid(format!("target index {t} >= codebook size {codebook_size}")));
                }
                let w: Vec<(usize, f64)> = w.into_iter().filter(|&(_, w)| w >= MIN_CACHED_WEIGHT).collect();
                pixels.push(CachedPixel { target: t, weights: w });
            }
        }
        if !pixels.iter().any(|p| !p.weights.is_empty()) {
            return Err(Error::invalid("no Gaussian is visible in any supervised pixel"));
        }
        Ok(Self {
            pixels,
            positions: scene.gaussians.iter().map(|g| g.position.into()).collect(),
            codebook_size,
        })
    }

    pub fn supervised_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn gaussian_count(&self) -> usize {
        self.positions.len()
    }

    /// Total compositing weight each Gaussian receives over supervised pixels.
    pub fn visibility(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.positions.len()];
        for p in &self.pixels {
            for &(i, w) in &p.weights {
                v[i] += w;
            }
        }
        v
    }
}

/// Loss parts and total. Detached quantities are read from `frozen`; pass the
/// same model twice for the ordinary objective.
pub fn objective(live: &SemanticModel, frozen: &SemanticModel, data: &TrainingData, cfg: &TrainConfig) -> (LossParts, f64) {
    let probs: Vec<Vec<f64>> = live.features.iter().map(|s| softmax(&live.decoder.logits(s))).collect();
    let mut ce = 0.0;
    for px in &data.pixels {
        let p: f64 = px.weights.iter().map(|&(i, w)| w * probs[i][px.target]).sum();
        let u: f64 = px.weights.iter().map(|&(i, w)| w * live.uncertainty[i]).sum();
        ce += (1.0 - u) * loss::floored_nll(p).0;
    }
    ce /= data.pixels.len().max(1) as f64;
    let unc = live.uncertainty.iter().sum::<f64>() / live.uncertainty.len().max(1) as f64;
    let smoothed = |m: &SemanticModel| -> Vec<Vec<f64>> { data.positions.iter().map(|p| m.smoother.smooth(p)).collect() };
    let smo = smoothing_with_grad(
        &smoothed(live),
        &smoothed(frozen),
        &live.features,
        &frozen.features,
        &frozen.uncertainty,
        cfg.w_s,
    )
    .expect("consistent model shapes")
    .value;
    let parts = LossParts {
        ce,
        uncertainty: unc,
        smoothing: smo,
    };
    (parts, total_loss(&parts, cfg))
}

/// Objective and its analytic gradient (stop-gradients honored).
pub fn objective_with_grad(model: &SemanticModel, data: &TrainingData, cfg: &TrainConfig) -> (LossParts, f64, SemanticModel) {
    let n = model.features.len();
    let k = data.codebook_size;
    let mut grad = model.zeros_like();
    let traces: Vec<_> = model.features.iter().map(|s| model.decoder.net.forward(s)).collect();
    let probs: Vec<Vec<f64>> = traces.iter().map(|t| softmax(&t.output)).collect();

    // cross entropy, accumulated per Gaussian
    let ce_scale = cfg.lambda_s * cfg.lambda_ce;
    let npx = data.pixels.len().max(1) as f64;
    let mut grad_probs = vec![vec![0.0; k]; n];
    let mut ce = 0.0;
    for px in &data.pixels {
        let p: f64 = px.weights.iter().map(|&(i, w)| w * probs[i][px.target]).sum();
        let u: f64 = px.weights.iter().map(|&(i, w)| w * model.uncertainty[i]).sum();
        let (nll, dnll) = loss::floored_nll(p);
        ce += (1.0 - u) * nll;
        let g_p = ce_scale * (1.0 - u) * dnll / npx;
        let g_u = -ce_scale * nll / npx;
        for &(i, w) in &px.weights {
            grad_probs[i][px.target] += w * g_p;
            grad.uncertainty[i] += w * g_u;
        }
    }
    ce /= npx;
    for i in 0..n {
        if grad_probs[i].iter().all(|&g| g == 0.0) {
            continue;
        }
        let g_logits = softmax_backward(&probs[i], &grad_probs[i]);
        let mut g_s = vec![0.0; model.features[i].len()];
        model
            .decoder
            .net
            .backward(&model.features[i], &traces[i], &g_logits, &mut grad.decoder.net, Some(&mut g_s));
        for (a, b) in grad.features[i].iter_mut().zip(&g_s) {
            *a += b;
        }
    }

    let unc = model.uncertainty.iter().sum::<f64>() / n.max(1) as f64;
    let u_scale = cfg.lambda_s * cfg.lambda_u;
    for (g, v) in grad.uncertainty.iter_mut().zip(loss_uncertainty_grad(&model.uncertainty)) {
        *g += u_scale * v;
    }

    let encodings: Vec<Vec<f64>> = data.positions.iter().map(encode_position).collect();
    let smooth_traces: Vec<_> = encodings.iter().map(|e| model.smoother.net.forward(e)).collect();
    let smoothed: Vec<Vec<f64>> = smooth_traces.iter().map(|t| t.output.clone()).collect();
    let sg = smoothing_with_grad(&smoothed, &smoothed, &model.features, &model.features, &model.uncertainty, cfg.w_s)
        .expect("consistent model shapes");
    for i in 0..n {
        let g_m: Vec<f64> = sg.grad_s_mlp[i].iter().map(|v| cfg.lambda_smo * v).collect();
        model
            .smoother
            .net
            .backward(&encodings[i], &smooth_traces[i], &g_m, &mut grad.smoother.net, None);
        for (a, b) in grad.features[i].iter_mut().zip(&sg.grad_s_g[i]) {
            *a += cfg.lambda_smo * b;
        }
    }

    let parts = LossParts {
        ce,
        uncertainty: unc,
        smoothing: sg.value,
    };
    (parts, total_loss(&parts, cfg), grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ce: f64,
    pub uncertainty: f64,
    pub smoothing: f64,
    pub total: f64,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,L_CE,L_u,L_smo,total\n");
    for e in trace {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            e.epoch, e.ce, e.uncertainty, e.smoothing, e.total
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Input scene with learned semantic features and uncertainties.
    pub scene: Scene,
    pub model: SemanticModel,
    pub trace: Vec<EpochLoss>,
}

impl TrainOutput {
    pub fn decoder(&self) -> &DecoderMLP {
        &self.model.decoder
    }

    pub fn smoother(&self) -> &SmoothingMLP {
        &self.model.smoother
    }

    /// Arg-max decoded index of every Gaussian.
    pub fn predicted_indices(&self) -> Vec<usize> {
        self.model
            .features
            .iter()
            .map(|s| argmax(&self.model.decoder.logits(s)))
            .collect()
    }
}

/// Gradient descent on features, uncertainties, decoder and smoother with
/// geometry held fixed. Deterministic for a given config.
pub fn train_semantics(scene: &Scene, views: &[TrainView], codebook_size: usize, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let data = TrainingData::new(scene, views, codebook_size, Execution::default())?;
    let model = SemanticModel::init(scene.len(), codebook_size, cfg);
    train_model(scene, model, &data, cfg)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SemanticModel, grad: &SemanticModel, lr: f64) {
        let mut params = model.flatten();
        let g = grad.flatten();
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
        model.load(&params);
        model.clamp_uncertainty();
    }
}

/// Continues training from an explicit model.
pub fn train_model(scene: &Scene, mut model: SemanticModel, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if model.features.len() != scene.len() || data.gaussian_count() != scene.len() {
        return Err(Error::invalid("model, training data and scene disagree on Gaussian count"));
    }
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(model.flatten().len()));
    for epoch in 0..cfg.epochs {
        let (parts, total, grad) = objective_with_grad(&model, data, cfg);
        trace.push(EpochLoss {
            epoch,
            ce: parts.ce,
            uncertainty: parts.uncertainty,
            smoothing: parts.smoothing,
            total,
        });
        match &mut adam {
            Some(adam) => adam.step(&mut model, &grad, cfg.learning_rate),
            None => model.step(&grad, cfg.learning_rate),
        }
        if !model.is_finite() {
            return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
        }
    }
    let (parts, total) = objective(&model, &model, data, cfg);
    trace.push(EpochLoss {
        epoch: cfg.epochs,
        ce: parts.ce,
        uncertainty: parts.uncertainty,
        smoothing: parts.smoothing,
        total,
    });

    let mut scene = scene.clone();
    for ((g, f), u) in scene.gaussians.iter_mut().zip(&model.features).zip(&model.uncertainty) {
        g.semantic_feature = f.clone();
        g.uncertainty = *u;
    }
    Ok(TrainOutput { scene, model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;
    use nalgebra::Vector3;

    fn one_gaussian_view() -> (Scene, Vec<TrainView>) {
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.5, 0.9, [0.5; 3]).unwrap();
        let scene = Scene::new(vec![g], [0.0; 3]).unwrap();
        let cam = Camera::identity(10.0, 1, 1).unwrap();
        (
            scene,
            vec![TrainView {
                camera: cam,
                targets: vec![Some(0)],
            }],
        )
    }

    #[test]
    fn single_gaussian_learns_its_target() {
        let (scene, views) = one_gaussian_view();
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let out = train_semantics(&scene, &views, 4, &cfg).unwrap();
        assert_eq!(out.predicted_indices(), vec![0]);
    }

    #[test]
    fn uncertainty_decreases_on_consistent_labels() {
        let (scene, views) = one_gaussian_view();
        let cfg = TrainConfig {
            epochs: 200,
            initial_uncertainty: 0.5,
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let out = train_semantics(&scene, &views, 4, &cfg).unwrap();
        assert!(out.model.uncertainty[0] < 0.5, "{}", out.model.uncertainty[0]);
    }

    #[test]
    fn deterministic_per_seed() {
        let (scene, views) = one_gaussian_view();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = train_semantics(&scene, &views, 4, &cfg).unwrap();
        let b = train_semantics(&scene, &views, 4, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn invisible_scene_rejected() {
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -3.0), 0.5, 0.9, [0.5; 3]).unwrap();
        let scene = Scene::new(vec![g], [0.0; 3]).unwrap();
        let views = vec![TrainView {
            camera: Camera::identity(10.0, 2, 2).unwrap(),
            targets: vec![Some(0); 4],
        }];
        assert!(train_semantics(&scene, &views, 4, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            w_s: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda_u: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_header() {
        let csv = loss_trace_csv(&[EpochLoss {
            epoch: 0,
            ce: 1.0,
            uncertainty: 0.1,
            smoothing: 0.0,
            total: 0.05,
        }]);
        assert!(csv.starts_with("epoch,L_CE,L_u,L_smo,total\n0,"));
    }
}
