//! Gaussian primitives, scenes, pinhole cameras and synthetic labeled scenes.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default length of the compact per-Gaussian semantic feature.
pub const DEFAULT_FEATURE_DIM: usize = 8;
/// Uncertainty assigned to freshly created Gaussians.
pub const INITIAL_UNCERTAINTY: f64 = 0.1;

const SCENE_JSON_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    /// Per-axis standard deviation in scene units.
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    pub semantic_feature: Vec<f64>,
    pub uncertainty: f64,
}

impl Gaussian3D {
    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: [f64; 3],
        semantic_feature: Vec<f64>,
        uncertainty: f64,
    ) -> Result<Self> {
        let g = Self {
            position,
            scale,
            rotation,
            opacity,
            color,
            semantic_feature,
            uncertainty,
        };
        g.validate()?;
        Ok(g)
    }

    /// Axis-aligned isotropic Gaussian with a zero semantic feature.
    pub fn isotropic(position: Vector3<f64>, sigma: f64, opacity: f64, color: [f64; 3]) -> Result<Self> {
        Self::new(
            position,
            Vector3::repeat(sigma),
            UnitQuaternion::identity(),
            opacity,
            color,
            vec![0.0; DEFAULT_FEATURE_DIM],
            INITIAL_UNCERTAINTY,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("gaussian position must be finite"));
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("gaussian scale components must be strictly positive"));
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("gaussian rotation must be a unit quaternion"));
        }
        if !unit(self.opacity) {
            return Err(Error::invalid(format!("opacity {} outside [0,1]", self.opacity)));
        }
        if !self.color.iter().all(|&c| unit(c)) {
            return Err(Error::invalid("color channels must lie in [0,1]"));
        }
        if !unit(self.uncertainty) {
            return Err(Error::invalid(format!("uncertainty {} outside [0,1]", self.uncertainty)));
        }
        if !self.semantic_feature.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("semantic feature must be finite"));
        }
        Ok(())
    }

    /// World-space covariance `R diag(scale²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        let cov = r * s2 * r.transpose();
        // symmetrize away rounding
        (cov + cov.transpose()) * 0.5
    }
}

/// Free-function form of [`Gaussian3D::covariance`].
pub fn covariance(g: &Gaussian3D) -> Matrix3<f64> {
    g.covariance()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub background_color: [f64; 3],
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>, background_color: [f64; 3]) -> Result<Self> {
        for (i, g) in gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::invalid(format!("gaussian {i}: {e}")))?;
        }
        if !background_color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background color outside [0,1]"));
        }
        Ok(Self {
            gaussians,
            background_color,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Length of the compact semantic feature; `None` for an empty scene or
    /// mixed lengths.
    pub fn feature_dim(&self) -> Option<usize> {
        let first = self.gaussians.first()?.semantic_feature.len();
        self.gaussians
            .iter()
            .all(|g| g.semantic_feature.len() == first)
            .then_some(first)
    }

    pub fn to_json(&self) -> String {
        let doc = SceneDoc {
            version: SCENE_JSON_VERSION,
            background_color: self.background_color,
            gaussians: self.gaussians.iter().map(GaussianDoc::from).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDoc = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("scene json: {e}")))?;
        if doc.version != SCENE_JSON_VERSION {
            return Err(Error::invalid(format!("unsupported scene version {}", doc.version)));
        }
        let gaussians = doc
            .gaussians
            .into_iter()
            .map(GaussianDoc::into_gaussian)
            .collect::<Result<Vec<_>>>()?;
        Scene::new(gaussians, doc.background_color)
    }
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    version: u32,
    background_color: [f64; 3],
    gaussians: Vec<GaussianDoc>,
}

#[derive(Serialize, Deserialize)]
struct GaussianDoc {
    position: [f64; 3],
    scale: [f64; 3],
    /// (w, x, y, z)
    rotation: [f64; 4],
    opacity: f64,
    color: [f64; 3],
    semantic_feature: Vec<f64>,
    uncertainty: f64,
}

impl From<&Gaussian3D> for GaussianDoc {
    fn from(g: &Gaussian3D) -> Self {
        let q = g.rotation.quaternion();
        Self {
            position: g.position.into(),
            scale: g.scale.into(),
            rotation: [q.w, q.i, q.j, q.k],
            opacity: g.opacity,
            color: g.color,
            semantic_feature: g.semantic_feature.clone(),
            uncertainty: g.uncertainty,
        }
    }
}

impl GaussianDoc {
    fn into_gaussian(self) -> Result<Gaussian3D> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("rotation quaternion is not unit length"));
        }
        Gaussian3D::new(
            self.position.into(),
            self.scale.into(),
            UnitQuaternion::new_normalize(q),
            self.opacity,
            self.color,
            self.semantic_feature,
            self.uncertainty,
        )
    }
}

/// Pinhole camera. Camera space is x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down +z, principal point at the
    /// image center.
    pub fn identity(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            Matrix3::identity(),
            Vector3::zeros(),
            width,
            height,
        )
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at up vector parallel to view direction"))?;
        // y points down in camera space
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1"));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).abs().max() > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::invalid("camera rotation must be a proper rotation"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CameraDoc::from(self)).expect("camera serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CameraDoc = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("camera json: {e}")))?;
        doc.try_into()
    }
}

/// Camera JSON: `{fx, fy, cx, cy, width, height, rotation: [[row]; 3], translation}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraDoc {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: c.translation.into(),
        }
    }
}

impl TryFrom<CameraDoc> for Camera {
    type Error = Error;

    fn try_from(d: CameraDoc) -> Result<Self> {
        let r = d.rotation;
        Camera::new(
            d.fx,
            d.fy,
            d.cx,
            d.cy,
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            d.translation.into(),
            d.width,
            d.height,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    /// Center of the axis-aligned box the class occupies.
    pub center: [f64; 3],
    /// Half-extent of the box.
    pub half_extent: [f64; 3],
    pub count: usize,
    pub color: [f64; 3],
    /// Isotropic Gaussian size before noise.
    pub gaussian_scale: f64,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub classes: Vec<ClassDef>,
    /// Relative jitter applied to positions, scales and colors. Zero gives a
    /// purely deterministic lattice layout with identity rotations.
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub background_color: [f64; 3],
}

fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synthetic scene needs at least one class"));
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {:?}", c.name)));
            }
            if c.count == 0 {
                return Err(Error::invalid(format!("class {:?} has zero count", c.name)));
            }
            if !(c.gaussian_scale > 0.0) || c.half_extent.iter().any(|&h| h < 0.0) {
                return Err(Error::invalid(format!("class {:?} has invalid geometry", c.name)));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a nonnegative number"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// Radical inverse in `base`; the Halton sequence coordinate of `index`.
fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Builds a scene from class boxes. Returns the scene and, aligned with
/// `scene.gaussians`, the index of each Gaussian's class in `spec.classes`.
pub fn make_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<(Scene, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gaussians = Vec::new();
    let mut labels = Vec::new();

    for (label, class) in spec.classes.iter().enumerate() {
        let center = Vector3::from(class.center);
        let half = Vector3::from(class.half_extent);
        for i in 0..class.count {
            let lattice = if class.count == 1 {
                Vector3::zeros()
            } else {
                // Halton points in [-1, 1]^3
                Vector3::new(halton(i + 1, 2), halton(i + 1, 3), halton(i + 1, 5)) * 2.0
                    - Vector3::repeat(1.0)
            };
            let mut position = center + half.component_mul(&lattice);
            let mut scale = Vector3::repeat(class.gaussian_scale);
            let mut color = class.color;
            let mut rotation = UnitQuaternion::identity();
            if spec.noise > 0.0 {
                for k in 0..3 {
                    position[k] += spec.noise * class.gaussian_scale * jitter.sample(&mut rng);
                    scale[k] *= (spec.noise * 0.5 * jitter.sample(&mut rng)).exp();
                    color[k] = (color[k] + 0.1 * spec.noise * jitter.sample(&mut rng)).clamp(0.0, 1.0);
                }
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_axis_angle(
                    &nalgebra::Unit::new_normalize(Vector3::from(axis)),
                    angle,
                ));
            }
            gaussians.push(Gaussian3D::new(
                position,
                scale,
                rotation,
                class.opacity,
                color,
                vec![0.0; spec.feature_dim],
                INITIAL_UNCERTAINTY,
            )?);
            labels.push(label);
        }
    }
    let scene = Scene::new(gaussians, spec.background_color)?;
    Ok((scene, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn class(name: &str, count: usize) -> ClassDef {
        ClassDef {
            name: name.into(),
            center: [0.0, 0.0, 5.0],
            half_extent: [1.0, 1.0, 1.0],
            count,
            color: [0.5, 0.5, 0.5],
            gaussian_scale: 0.2,
            opacity: 0.8,
        }
    }

    fn gaussian(scale: [f64; 3], rotation: UnitQuaternion<f64>) -> Gaussian3D {
        Gaussian3D::new(
            Vector3::zeros(),
            scale.into(),
            rotation,
            0.5,
            [0.1, 0.2, 0.3],
            vec![0.0; 8],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn covariance_identity_and_axis_aligned() {
        let g = gaussian([1.0, 1.0, 1.0], UnitQuaternion::identity());
        assert_relative_eq!(g.covariance(), Matrix3::identity(), epsilon = 1e-12);
        let g = gaussian([2.0, 1.0, 1.0], UnitQuaternion::identity());
        assert_relative_eq!(g.covariance(), Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rotated_quarter_turn() {
        // R = [[0,-1,0],[1,0,0],[0,0,1]]; R diag(4,1,1) R^T = diag(1,4,1)
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let g = gaussian([2.0, 1.0, 1.0], q);
        assert_relative_eq!(g.covariance(), Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid_gaussians() {
        let bad_scale = Gaussian3D::new(
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 1.0),
            UnitQuaternion::identity(),
            0.5,
            [0.0; 3],
            vec![],
            0.1,
        );
        assert!(bad_scale.is_err());
        let bad_opacity = Gaussian3D::isotropic(Vector3::zeros(), 1.0, 1.5, [0.0; 3]);
        assert!(bad_opacity.is_err());
    }

    #[test]
    fn single_class_zero_noise_sits_at_center() {
        let spec = SyntheticSceneSpec {
            classes: vec![class("car", 1)],
            noise: 0.0,
            seed: 1,
            feature_dim: 8,
            background_color: [0.0; 3],
        };
        let (scene, labels) = make_synthetic_scene(&spec).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(labels, vec![0]);
        assert_eq!(scene.gaussians[0].position, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSceneSpec {
            classes: vec![class("a", 50), class("b", 50), class("c", 50)],
            noise: 0.3,
            seed: 42,
            feature_dim: 8,
            background_color: [0.0; 3],
        };
        let (s1, l1) = make_synthetic_scene(&spec).unwrap();
        let (s2, l2) = make_synthetic_scene(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(l1, l2);
        assert_eq!(s1.len(), 150);
        let mut hist = [0usize; 3];
        for l in l1 {
            hist[l] += 1;
        }
        assert_eq!(hist, [50, 50, 50]);
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let mut spec = SyntheticSceneSpec {
            classes: vec![],
            noise: 0.0,
            seed: 0,
            feature_dim: 8,
            background_color: [0.0; 3],
        };
        assert!(make_synthetic_scene(&spec).is_err());
        spec.classes = vec![class("a", 1), class("a", 2)];
        assert!(make_synthetic_scene(&spec).is_err());
        spec.classes = vec![class("a", 0)];
        assert!(make_synthetic_scene(&spec).is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let spec = SyntheticSceneSpec {
            classes: vec![class("a", 4)],
            noise: 0.2,
            seed: 3,
            feature_dim: 8,
            background_color: [0.1, 0.2, 0.3],
        };
        let (scene, _) = make_synthetic_scene(&spec).unwrap();
        let back = Scene::from_json(&scene.to_json()).unwrap();
        assert_eq!(back.len(), scene.len());
        for (a, b) in back.gaussians.iter().zip(&scene.gaussians) {
            assert_relative_eq!(a.position, b.position, epsilon = 1e-12);
            assert_relative_eq!(a.covariance(), b.covariance(), epsilon = 1e-12);
        }
    }

    #[test]
    fn camera_look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            Vector3::new(3.0, -2.0, 1.0),
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::new(0.0, -1.0, 0.0),
            50.0,
            32,
            24,
        )
        .unwrap();
        let p = cam.world_to_camera(&Vector3::new(0.0, 0.0, 5.0));
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        assert!(p.z > 0.0);
        let back = Camera::from_json(&cam.to_json()).unwrap();
        assert_relative_eq!(back.rotation, cam.rotation, epsilon = 1e-15);
    }
}
