//! Discrete language-feature codebook built by spherical k-means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_CODEBOOK_SIZE: usize = 64;
const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_SHIFT: f64 = 1e-6;
const UNIT_TOLERANCE: f64 = 1e-6;

/// `K × D` matrix of unit-norm codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<Vec<f64>>,
    dim: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| a.iter().map(|v| v / n).collect())
}

impl Codebook {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let dim = entries
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("codebook needs at least one entry"))?;
        if dim == 0 {
            return Err(Error::invalid("codebook entries must be non-empty"));
        }
        for (i, e) in entries.iter().enumerate() {
            check_dim(dim, e.len())?;
            let n = norm(e);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!("codeword {i} has norm {n}, expected 1")));
            }
        }
        Ok(Self { entries, dim })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    /// Index of the codeword with the highest cosine similarity to `feature`;
    /// ties go to the lowest index.
    pub fn assign(&self, feature: &[f64]) -> Result<usize> {
        check_dim(self.dim, feature.len())?;
        let n = norm(feature);
        if !(n > 0.0) {
            return Err(Error::invalid("cannot assign a zero vector"));
        }
        Ok(self.nearest_unit(feature).0)
    }

    /// Nearest codeword by raw dot product. Equivalent to cosine ranking
    /// because codewords are unit length.
    fn nearest_unit(&self, feature: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in self.entries.iter().enumerate() {
            let s = dot(e, feature);
            if s > best.1 {
                best = (i, s);
            }
        }
        best
    }

    /// Mean of `1 − cos(feature, assigned codeword)`.
    pub fn quantization_error(&self, features: &[Vec<f64>]) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::invalid("quantization error of an empty feature set"));
        }
        let mut total = 0.0;
        for f in features {
            check_dim(self.dim, f.len())?;
            let unit = normalized(f).ok_or_else(|| Error::invalid("cannot assign a zero vector"))?;
            total += 1.0 - self.nearest_unit(&unit).1;
        }
        Ok(total / features.len() as f64)
    }
}

pub fn assign(feature: &[f64], cb: &Codebook) -> Result<usize> {
    cb.assign(feature)
}

pub fn quantization_error(features: &[Vec<f64>], cb: &Codebook) -> Result<f64> {
    cb.quantization_error(features)
}

/// Spherical k-means with k-means++ seeding.
///
/// Features are normalized first; seeding samples proportionally to the
/// cosine distance `1 − cos`, which for unit vectors is half the squared
/// chord length. Empty clusters keep their previous centroid.
pub fn build_codebook(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::invalid("codebook size must be at least 1"));
    }
    if features.len() < k {
        return Err(Error::invalid(format!(
            "need at least {k} features to build {k} codewords, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    let data: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            check_dim(dim, f.len())?;
            normalized(f).ok_or_else(|| Error::invalid("zero feature vector"))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&data, k, &mut rng);
    let mut assignment = vec![0usize; data.len()];

    for _ in 0..MAX_ITERATIONS {
        let cb = Codebook {
            entries: centroids.clone(),
            dim,
        };
        for (a, x) in assignment.iter_mut().zip(&data) {
            *a = cb.nearest_unit(x).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (x, &a) in data.iter().zip(&assignment) {
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if let Some(next) = normalized(s) {
                let d = c.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                shift = shift.max(d);
                *c = next;
            }
        }
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }
    Codebook::new(centroids)
}

fn seed_plus_plus(data: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..data.len())];
    let mut dist: Vec<f64> = data
        .iter()
        .map(|x| (1.0 - dot(x, &data[chosen[0]])).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total has a positive entry")
        } else {
            // all remaining points coincide with a centroid
            (0..data.len())
                .find(|i| !chosen.contains(i))
                .expect("features.len() >= k")
        };
        chosen.push(next);
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min((1.0 - dot(x, &data[next])).max(0.0));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        normalized(&v).unwrap()
    }

    #[test]
    fn single_codeword_is_normalized_mean() {
        let feats = vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![1.0, 1.0]];
        let cb = build_codebook(&feats, 1, 0).unwrap();
        let s = 1.0 + 0.5f64.sqrt();
        let mean = normalized(&[s, s]).unwrap();
        for (a, b) in cb.entry(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_points_quantize_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 4)).collect();
        let cb = build_codebook(&feats, 6, 11).unwrap();
        assert!(cb.quantization_error(&feats).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rejects_too_few_features() {
        let feats = vec![vec![1.0, 0.0]];
        assert!(build_codebook(&feats, 2, 0).is_err());
    }

    #[test]
    fn assign_exact_and_ties() {
        let cb = Codebook::new(vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, -1.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        for j in 0..cb.k() {
            assert_eq!(cb.assign(cb.entry(j)).unwrap(), j);
        }
        // equidistant from rows 2 and 5
        assert_eq!(cb.assign(&[0.0, 1.0, 1.0]).unwrap(), 2);
        assert!(cb.assign(&[0.0, 0.0, 0.0]).is_err());
        assert!(cb.assign(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn quantization_error_cases() {
        let cb = Codebook::new(vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(cb.quantization_error(&[vec![0.0, 2.0]]).unwrap(), 1.0);
        assert_eq!(cb.quantization_error(&[vec![3.0, 0.0]]).unwrap(), 0.0);
        assert!(cb.quantization_error(&[]).is_err());
        // fixture: cos values 1, 0.6, -0.8 → errors 0, 0.4, 1.8 → mean 2.2/3
        let feats = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![-0.8, 0.6]];
        let two = Codebook::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        // with two antipodal codewords the third feature picks -x: cos 0.8 → error 0.2
        assert!((two.quantization_error(&feats).unwrap() - 0.6 / 3.0).abs() < 1e-12);
        assert!((cb.quantization_error(&feats).unwrap() - 2.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn codebook_validates_unit_rows() {
        assert!(Codebook::new(vec![vec![0.5, 0.0]]).is_err());
        assert!(Codebook::new(vec![]).is_err());
        assert!(Codebook::new(vec![vec![1.0, 0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats: Vec<Vec<f64>> = (0..200).map(|_| random_unit(&mut rng, 8)).collect();
        assert_eq!(build_codebook(&feats, 8, 3).unwrap(), build_codebook(&feats, 8, 3).unwrap());
    }
}
