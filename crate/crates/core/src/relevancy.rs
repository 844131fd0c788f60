//! Language feature maps and query relevancy.
//!
//! A rendered index distribution times the codebook gives a per-pixel
//! language feature. Each pixel is scored by pitting its best positive
//! similarity against every canonical phrase in a two-way softmax and keeping
//! the weakest win:
//!
//! ```text
//! score = min_i exp(σ_pos) / (exp(σ_canon_i) + exp(σ_pos)),   σ_pos = max_p cos(f, φ_p)
//! ```

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::{self, Execution};
use crate::quant::{dot, norm, Codebook};
use crate::render::SemanticDistributionMap;

/// Canonical phrases used when no phrase generator is available.
pub const PREDEFINED_CANONICALS: [&str; 4] = ["object", "things", "stuff", "texture"];
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Pixels with a feature norm below this carry no evidence and score 0.5.
pub const MIN_FEATURE_NORM: f64 = 1e-12;
const UNIT_TOLERANCE: f64 = 1e-6;

pub const MIN_HELPING: usize = 1;
pub const MAX_HELPING: usize = 4;
pub const MIN_CANONICALS: usize = 4;
pub const MAX_CANONICALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Exported,
}

/// Phrase → unit-norm embedding, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<String, Vec<f64>>,
    provenance: Provenance,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provenance: Provenance) -> Self {
        Self {
            dim,
            entries: IndexMap::new(),
            provenance,
        }
    }

    pub(crate) fn from_parts(dim: usize, entries: IndexMap<String, Vec<f64>>, provenance: Provenance) -> Self {
        Self {
            dim,
            entries,
            provenance,
        }
    }

    pub fn insert(&mut self, phrase: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let phrase = phrase.into();
        check_dim(self.dim, vector.len())?;
        let n = norm(&vector);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("embedding for {phrase:?} has norm {n}")));
        }
        if self.entries.contains_key(&phrase) {
            return Err(Error::invalid(format!("duplicate phrase {phrase:?}")));
        }
        self.entries.insert(phrase, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn get(&self, phrase: &str) -> Option<&[f64]> {
        self.entries.get(phrase).map(Vec::as_slice)
    }

    pub fn lookup(&self, phrase: &str) -> Result<&[f64]> {
        self.get(phrase)
            .ok_or_else(|| Error::invalid(format!("phrase {phrase:?} missing from embedding table")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Main positive, helping positives and canonical (negative) phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub main_positive: String,
    pub helping_positives: Vec<String>,
    pub canonicals: Vec<String>,
}

fn phrase_key(p: &str) -> String {
    p.trim().to_lowercase()
}

impl QuerySpec {
    pub fn new(main_positive: impl Into<String>, helping_positives: Vec<String>, canonicals: Vec<String>) -> Result<Self> {
        let q = Self {
            main_positive: main_positive.into(),
            helping_positives,
            canonicals,
        };
        q.validate().map_err(Error::from)?;
        Ok(q)
    }

    pub fn validate(&self) -> std::result::Result<(), crate::query::QueryError> {
        use crate::query::QueryError;
        if self.main_positive.trim().is_empty() {
            return Err(QueryError::MissingSection("Main Positive"));
        }
        let (h, c) = (self.helping_positives.len(), self.canonicals.len());
        if !(MIN_HELPING..=MAX_HELPING).contains(&h) || !(MIN_CANONICALS..=MAX_CANONICALS).contains(&c) {
            return Err(QueryError::CountOutOfRange {
                helping: h,
                canonicals: c,
            });
        }
        let positives: std::collections::HashSet<String> = std::iter::once(&self.main_positive)
            .chain(&self.helping_positives)
            .map(|p| phrase_key(p))
            .collect();
        if let Some(dup) = self.canonicals.iter().find(|c| positives.contains(&phrase_key(c))) {
            return Err(QueryError::Overlap(dup.clone()));
        }
        Ok(())
    }

    /// Positive and canonical phrases for an inference mode.
    pub fn phrases(&self, mode: InferenceMode) -> (Vec<&str>, Vec<&str>) {
        let main = std::iter::once(self.main_positive.as_str());
        match mode {
            InferenceMode::Full => (
                main.chain(self.helping_positives.iter().map(String::as_str)).collect(),
                self.canonicals.iter().map(String::as_str).collect(),
            ),
            InferenceMode::WithoutHelping => (main.collect(), self.canonicals.iter().map(String::as_str).collect()),
            InferenceMode::Predefined => (main.collect(), PREDEFINED_CANONICALS.to_vec()),
        }
    }
}

/// Which phrase sets feed the relevancy score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Main + helping positives against generated canonicals.
    Full,
    /// Main positive only against generated canonicals.
    WithoutHelping,
    /// Main positive against the fixed object/things/stuff/texture set.
    Predefined,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [InferenceMode::Full, InferenceMode::WithoutHelping, InferenceMode::Predefined];

    pub fn label(self) -> &'static str {
        match self {
            InferenceMode::Full => "full",
            InferenceMode::WithoutHelping => "without_helping",
            InferenceMode::Predefined => "predefined",
        }
    }
}

/// Per-pixel `D`-dimensional language feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::invalid("feature map dimensions must be positive"));
        }
        check_dim(width * height * dim, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map values must be finite"));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevancyMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
    /// True where the feature norm was too small to score.
    pub no_evidence: Vec<bool>,
}

impl RelevancyMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl SegMask {
    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }
}

/// `F = M S`: each pixel's index distribution times the codebook rows.
pub fn feature_map(m: &SemanticDistributionMap, cb: &Codebook) -> Result<FeatureMap> {
    feature_map_with(m, cb, Execution::default())
}

pub fn feature_map_with(m: &SemanticDistributionMap, cb: &Codebook, exec: Execution) -> Result<FeatureMap> {
    check_dim(cb.k(), m.k)?;
    let d = cb.dim();
    let mut values = vec![0.0; m.width * m.height * d];
    exec::for_each_chunk(exec, &mut values, m.width * d, |y, row| {
        for x in 0..m.width {
            let out = &mut row[x * d..(x + 1) * d];
            for (w, entry) in m.pixel(x, y).iter().zip(cb.entries()) {
                if *w == 0.0 {
                    continue;
                }
                for (o, e) in out.iter_mut().zip(entry) {
                    *o += w * e;
                }
            }
        }
    });
    FeatureMap::new(m.width, m.height, d, values)
}

/// Per-pixel score against pre-normalized phrase embeddings.
fn score_pixel(f: &[f64], positives: &[&[f64]], canonicals: &[&[f64]]) -> Option<f64> {
    let n = norm(f);
    if !(n >= MIN_FEATURE_NORM) {
        return None;
    }
    let inv = 1.0 / n;
    let pos = positives
        .iter()
        .map(|p| dot(f, p) * inv)
        .fold(f64::NEG_INFINITY, f64::max);
    let score = canonicals
        .iter()
        .map(|c| {
            // exp(a) / (exp(c) + exp(a)) = 1 / (1 + exp(c - a))
            let canon = dot(f, c) * inv;
            1.0 / (1.0 + (canon - pos).exp())
        })
        .fold(f64::INFINITY, f64::min);
    Some(score)
}

pub fn relevancy_score(f: &FeatureMap, positives: &[&[f64]], canonicals: &[&[f64]]) -> Result<RelevancyMap> {
    relevancy_score_with(f, positives, canonicals, Execution::default())
}

pub fn relevancy_score_with(
    f: &FeatureMap,
    positives: &[&[f64]],
    canonicals: &[&[f64]],
    exec: Execution,
) -> Result<RelevancyMap> {
    if positives.is_empty() || canonicals.is_empty() {
        return Err(Error::invalid("relevancy needs at least one positive and one canonical"));
    }
    for v in positives.iter().chain(canonicals) {
        check_dim(f.dim, v.len())?;
        if (norm(v) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid("phrase embeddings must be unit length"));
        }
    }
    let mut cells: Vec<(f64, bool)> = vec![(0.5, false); f.width * f.height];
    exec::for_each_chunk(exec, &mut cells, f.width, |y, row| {
        for (x, cell) in row.iter_mut().enumerate() {
            *cell = match score_pixel(f.pixel(x, y), positives, canonicals) {
                Some(s) => (s, false),
                None => (0.5, true),
            };
        }
    });
    let (scores, no_evidence) = cells.into_iter().unzip();
    Ok(RelevancyMap {
        width: f.width,
        height: f.height,
        scores,
        no_evidence,
    })
}

/// Scores a feature map against a query's phrases looked up in `table`.
pub fn score_query(
    f: &FeatureMap,
    query: &QuerySpec,
    mode: InferenceMode,
    table: &EmbeddingTable,
    exec: Execution,
) -> Result<RelevancyMap> {
    let (pos, canon) = query.phrases(mode);
    let pos: Vec<&[f64]> = pos.iter().map(|p| table.lookup(p)).collect::<Result<_>>()?;
    let canon: Vec<&[f64]> = canon.iter().map(|p| table.lookup(p)).collect::<Result<_>>()?;
    relevancy_score_with(f, &pos, &canon, exec)
}

/// Strictly-greater-than threshold mask.
pub fn segment(r: &RelevancyMap, threshold: f64) -> Result<SegMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0,1)")));
    }
    Ok(SegMask {
        width: r.width,
        height: r.height,
        pixels: r.scores.iter().map(|&s| s > threshold).collect(),
    })
}
