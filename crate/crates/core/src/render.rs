//! Forward splatting: projection to screen space and front-to-back alpha
//! compositing of colors or semantic-index distributions.
//!
//! Every pixel sees the same depth-sorted list of splats (stable by scene
//! index on ties). Pixel `(x, y)` is sampled at coordinates `(x, y)`, so a
//! camera with `cx = (width - 1) / 2` centers its principal point on a pixel
//! for odd widths.

use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::mlp::DecoderMLP;
use crate::scene::{Camera, Gaussian3D, Scene};

/// Splats at or closer than this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the projected covariance diagonal (pixels²).
pub const COV2D_REGULARIZER: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
/// Compositing stops once transmittance drops below this. Remaining splats
/// could contribute at most this much to any channel.
pub const EARLY_EXIT_TRANSMITTANCE: f64 = 1e-7;
/// Projected covariances with a smaller determinant are skipped.
pub const DEGENERATE_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub source_index: usize,
}

/// Projects `g` through `cam` using the local affine approximation of the
/// perspective map. `source_index` is left at 0; callers that project a whole
/// scene set it.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Splat2D> {
    let p = cam.world_to_camera(&g.position);
    if p.z <= NEAR_PLANE {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let mean2d = Vector2::new(cam.fx * p.x * inv_z + cam.cx, cam.fy * p.y * inv_z + cam.cy);
    let jacobian = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * p.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * p.y * inv_z * inv_z,
    );
    let t = jacobian * cam.rotation;
    let mut cov2d = t * g.covariance() * t.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += COV2D_REGULARIZER;
    cov2d[(1, 1)] += COV2D_REGULARIZER;
    Some(Splat2D {
        mean2d,
        cov2d,
        depth: p.z,
        source_index: 0,
    })
}

/// Front-to-back compositing of `(alpha, payload)` pairs.
///
/// Returns `Σ T_i α_i payload_i` and the transmittance left for the
/// background.
pub fn composite(entries: &[(f64, &[f64])], dim: usize) -> Result<(Vec<f64>, f64)> {
    let mut out = vec![0.0; dim];
    let mut transmittance = 1.0;
    for &(alpha, payload) in entries {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0,1)")));
        }
        if payload.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: payload.len(),
            });
        }
        let w = transmittance * alpha;
        for (o, p) in out.iter_mut().zip(payload) {
            *o += w * p;
        }
        transmittance *= 1.0 - alpha;
        if transmittance < EARLY_EXIT_TRANSMITTANCE {
            break;
        }
    }
    Ok((out, transmittance))
}

#[derive(Debug, Clone)]
struct PreparedSplat {
    mean: [f64; 2],
    /// Inverse covariance (a, b, c) for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    source: usize,
}

/// Depth-sorted screen-space splats for one camera.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    splats: Vec<PreparedSplat>,
    width: usize,
    height: usize,
}

impl Rasterizer {
    pub fn new(scene: &Scene, cam: &Camera) -> Self {
        let mut projected: Vec<(f64, PreparedSplat)> = scene
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let s = project(g, cam)?;
                let det = s.cov2d.determinant();
                if !(det > DEGENERATE_DET) {
                    return None;
                }
                let inv = 1.0 / det;
                let conic = [
                    s.cov2d[(1, 1)] * inv,
                    -s.cov2d[(0, 1)] * inv,
                    s.cov2d[(0, 0)] * inv,
                ];
                Some((
                    s.depth,
                    PreparedSplat {
                        mean: [s.mean2d.x, s.mean2d.y],
                        conic,
                        opacity: g.opacity,
                        source: i,
                    },
                ))
            })
            .collect();
        // stable: equal depths keep scene order
        projected.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            splats: projected.into_iter().map(|(_, s)| s).collect(),
            width: cam.width,
            height: cam.height,
        }
    }

    pub fn splat_count(&self) -> usize {
        self.splats.len()
    }

    /// Calls `visit(source_index, T_i α_i)` for each contributing splat in
    /// front-to-back order and returns the final transmittance.
    pub fn composite_pixel(&self, x: usize, y: usize, mut visit: impl FnMut(usize, f64)) -> f64 {
        let (px, py) = (x as f64, y as f64);
        let mut transmittance = 1.0;
        for s in &self.splats {
            let dx = px - s.mean[0];
            let dy = py - s.mean[1];
            let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
            if power > 0.0 {
                continue;
            }
            let alpha = (s.opacity * power.exp()).min(MAX_ALPHA);
            if alpha <= 0.0 {
                continue;
            }
            visit(s.source, transmittance * alpha);
            transmittance *= 1.0 - alpha;
            if transmittance < EARLY_EXIT_TRANSMITTANCE {
                break;
            }
        }
        transmittance
    }

    /// Composites per-Gaussian payloads of length `dim` into a row-major
    /// `height × width × dim` buffer. Returns the buffer and the per-pixel
    /// final transmittance.
    pub fn render_payloads(&self, payloads: &[Vec<f64>], dim: usize, exec: Execution) -> (Vec<f64>, Vec<f64>) {
        let row_len = self.width * (dim + 1);
        let mut buf = vec![0.0; self.height * row_len];
        exec::for_each_chunk(exec, &mut buf, row_len, |y, row| {
            for x in 0..self.width {
                let cell = &mut row[x * (dim + 1)..(x + 1) * (dim + 1)];
                let (acc, t_slot) = cell.split_at_mut(dim);
                let t = self.composite_pixel(x, y, |src, w| {
                    for (a, p) in acc.iter_mut().zip(&payloads[src]) {
                        *a += w * p;
                    }
                });
                t_slot[0] = t;
            }
        });
        let mut values = Vec::with_capacity(self.height * self.width * dim);
        let mut transmittance = Vec::with_capacity(self.height * self.width);
        for cell in buf.chunks_exact(dim + 1) {
            values.extend_from_slice(&cell[..dim]);
            transmittance.push(cell[dim]);
        }
        (values, transmittance)
    }

    /// Per-pixel compositing weights `(source_index, T_i α_i)`, row-major.
    pub fn pixel_weights(&self, exec: Execution) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.width * self.height];
        exec::for_each_chunk(exec, &mut out, self.width, |y, row| {
            for (x, cell) in row.iter_mut().enumerate() {
                self.composite_pixel(x, y, |src, w| cell.push((src, w)));
            }
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<f64>,
}

impl RenderedImage {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Per-pixel distribution over `k` semantic indices. Pixel sums are at most
/// one; the remaining mass is background.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDistributionMap {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

impl SemanticDistributionMap {
    pub fn new(width: usize, height: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * k {
            return Err(Error::DimensionMismatch {
                expected: width * height * k,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            k,
            values,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.k;
        &self.values[i..i + self.k]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.k.max(1))
    }
}

pub fn render_color(scene: &Scene, cam: &Camera) -> Result<RenderedImage> {
    render_color_with(scene, cam, Execution::default())
}

pub fn render_color_with(scene: &Scene, cam: &Camera, exec: Execution) -> Result<RenderedImage> {
    cam.validate()?;
    let raster = Rasterizer::new(scene, cam);
    let payloads: Vec<Vec<f64>> = scene.gaussians.iter().map(|g| g.color.to_vec()).collect();
    let (mut pixels, transmittance) = raster.render_payloads(&payloads, 3, exec);
    let bg = scene.background_color;
    for (px, t) in pixels.chunks_exact_mut(3).zip(transmittance) {
        for c in 0..3 {
            px[c] += t * bg[c];
        }
    }
    Ok(RenderedImage {
        width: cam.width,
        height: cam.height,
        pixels,
    })
}

/// Decoded index distribution for every Gaussian.
pub fn decode_payloads(scene: &Scene, decoder: &DecoderMLP, exec: Execution) -> Result<Vec<Vec<f64>>> {
    for g in &scene.gaussians {
        crate::error::check_dim(decoder.feature_dim(), g.semantic_feature.len())?;
    }
    Ok(exec::map_slice(exec, &scene.gaussians, |g| {
        crate::mlp::softmax(&decoder.logits(&g.semantic_feature))
    }))
}

pub fn render_semantic_distribution(scene: &Scene, cam: &Camera, decoder: &DecoderMLP) -> Result<SemanticDistributionMap> {
    render_semantic_distribution_with(scene, cam, decoder, Execution::default())
}

pub fn render_semantic_distribution_with(
    scene: &Scene,
    cam: &Camera,
    decoder: &DecoderMLP,
    exec: Execution,
) -> Result<SemanticDistributionMap> {
    cam.validate()?;
    let payloads = decode_payloads(scene, decoder, exec)?;
    let k = decoder.codebook_size();
    let (values, _) = Rasterizer::new(scene, cam).render_payloads(&payloads, k, exec);
    SemanticDistributionMap::new(cam.width, cam.height, k, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn culls_behind_near_plane() {
        let cam = Camera::identity(100.0, 9, 9).unwrap();
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 0.005), 0.1, 0.5, [0.0; 3]).unwrap();
        assert!(project(&g, &cam).is_none());
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -3.0), 0.1, 0.5, [0.0; 3]).unwrap();
        assert!(project(&g, &cam).is_none());
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let cam = Camera::new(80.0, 60.0, 12.5, 7.5, nalgebra::Matrix3::identity(), Vector3::zeros(), 25, 15).unwrap();
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.1, 0.5, [0.0; 3]).unwrap();
        let s = project(&g, &cam).unwrap();
        assert_relative_eq!(s.mean2d, Vector2::new(12.5, 7.5), epsilon = 1e-12);
        assert_relative_eq!(s.depth, 4.0);
    }

    #[test]
    fn isotropic_cov2d_matches_jacobian_by_hand() {
        // on axis: J = diag(fx/z, fy/z) padded; cov2d = diag((fx σ/z)², (fy σ/z)²) + 0.3 I
        let (fx, fy, z, sigma) = (80.0, 60.0, 4.0, 0.25);
        let cam = Camera::new(fx, fy, 10.0, 10.0, nalgebra::Matrix3::identity(), Vector3::zeros(), 21, 21).unwrap();
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, z), sigma, 0.5, [0.0; 3]).unwrap();
        let s = project(&g, &cam).unwrap();
        let expected = Matrix2::new((fx * sigma / z).powi(2) + 0.3, 0.0, 0.0, (fy * sigma / z).powi(2) + 0.3);
        assert_relative_eq!(s.cov2d, expected, epsilon = 1e-12);
    }

    #[test]
    fn composite_cases() {
        let (out, t) = composite(&[], 3).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert_eq!(t, 1.0);

        let c = [0.2, 0.4, 0.6];
        let (out, t) = composite(&[(1.0 - 1e-9, &c)], 3).unwrap();
        assert_relative_eq!(out.as_slice(), c.as_slice(), epsilon = 1e-8);
        assert_relative_eq!(t, 1e-9, epsilon = 1e-15);

        let c1 = [1.0, 0.0, 0.0];
        let c2 = [0.0, 0.0, 1.0];
        let (out, t) = composite(&[(0.5, &c1), (0.5, &c2)], 3).unwrap();
        assert_relative_eq!(out.as_slice(), [0.5, 0.0, 0.25].as_slice(), epsilon = 1e-15);
        assert_relative_eq!(t, 0.25);
    }

    #[test]
    fn composite_rejects_bad_alpha() {
        let c = [0.0];
        assert!(composite(&[(1.0, &c)], 1).is_err());
        assert!(composite(&[(-0.1, &c)], 1).is_err());
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = Scene::new(vec![], [0.2, 0.3, 0.4]).unwrap();
        let cam = Camera::identity(50.0, 6, 4).unwrap();
        let img = render_color(&scene, &cam).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(img.pixel(x, y), [0.2, 0.3, 0.4]);
            }
        }
        let dec = DecoderMLP::zeros(8, 5);
        let m = render_semantic_distribution(&scene, &cam, &dec).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacked_opaque_gaussians_give_their_color() {
        // three layers clamped at 0.99 leave T = 1e-6 for the background
        let color = [0.9, 0.1, 0.4];
        let gs = (0..3)
            .map(|i| Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0 + i as f64), 1.0, 1.0, color).unwrap())
            .collect();
        let scene = Scene::new(gs, [0.0, 1.0, 0.0]).unwrap();
        let cam = Camera::identity(20.0, 9, 9).unwrap();
        let img = render_color(&scene, &cam).unwrap();
        let px = img.pixel(4, 4);
        for c in 0..3 {
            assert!((px[c] - color[c]).abs() < 1e-5);
        }
    }

    fn big_splat(z: f64, opacity: f64, color: [f64; 3]) -> Gaussian3D {
        Gaussian3D::isotropic(Vector3::new(0.0, 0.0, z), 1.0, opacity, color).unwrap()
    }

    #[test]
    fn two_half_transparent_layers() {
        let red = [1.0, 0.0, 0.0];
        let blue = [0.0, 0.0, 1.0];
        let bg = [0.0, 1.0, 0.0];
        // listed back-to-front to exercise the depth sort
        let scene = Scene::new(vec![big_splat(3.0, 0.5, blue), big_splat(2.0, 0.5, red)], bg).unwrap();
        let cam = Camera::identity(10.0, 5, 5).unwrap();
        let img = render_color(&scene, &cam).unwrap();
        assert_relative_eq!(img.pixel(2, 2).as_slice(), [0.5, 0.25, 0.25].as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn semantic_two_layers_with_one_hot_payloads() {
        // decoder with huge logits on the feature sign makes payloads one-hot
        let k = 4;
        let mut dec = DecoderMLP::zeros(1, k);
        dec.net.hidden.weights[0] = 1.0; // h0 = relu(s)
        dec.net.hidden.weights[1] = -1.0; // h1 = relu(-s)
        dec.net.output.weights[0] = 1e4; // logit0 from h0
        dec.net.output.weights[64 + 1] = 1e4; // logit1 from h1
        let mut front = big_splat(2.0, 0.5, [0.0; 3]);
        front.semantic_feature = vec![1.0];
        let mut back = big_splat(3.0, 0.5, [0.0; 3]);
        back.semantic_feature = vec![-1.0];
        let scene = Scene::new(vec![front, back], [0.0; 3]).unwrap();
        let cam = Camera::identity(10.0, 5, 5).unwrap();
        let m = render_semantic_distribution(&scene, &cam, &dec).unwrap();
        assert_relative_eq!(m.pixel(2, 2), [0.5, 0.25, 0.0, 0.0].as_slice(), epsilon = 1e-9);
    }

    #[test]
    fn single_opaque_one_hot() {
        let k = 5;
        let mut dec = DecoderMLP::zeros(1, k);
        dec.net.output.bias[2] = 50.0;
        let gs = (0..3)
            .map(|i| {
                let mut g = big_splat(2.0 + i as f64, 1.0, [0.0; 3]);
                g.semantic_feature = vec![0.0];
                g
            })
            .collect();
        let scene = Scene::new(gs, [0.0; 3]).unwrap();
        let cam = Camera::identity(10.0, 5, 5).unwrap();
        let m = render_semantic_distribution(&scene, &cam, &dec).unwrap();
        let p = m.pixel(2, 2);
        assert!((p[2] - 1.0).abs() < 1e-5);
        assert!(p.iter().sum::<f64>() <= 1.0);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let gs = (0..20)
            .map(|i| {
                let f = i as f64;
                Gaussian3D::isotropic(
                    Vector3::new((f * 0.7).sin(), (f * 1.3).cos(), 3.0 + f * 0.1),
                    0.3,
                    0.6,
                    [(f * 0.05) % 1.0, 0.5, 0.2],
                )
                .unwrap()
            })
            .collect();
        let scene = Scene::new(gs, [0.1; 3]).unwrap();
        let cam = Camera::identity(30.0, 17, 11).unwrap();
        let a = render_color_with(&scene, &cam, Execution::Sequential).unwrap();
        let b = render_color_with(&scene, &cam, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
