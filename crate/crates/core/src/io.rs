//! On-disk formats.
//!
//! LEGF grid layout (all little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `b"LEGF"`                |
//! | 4      | 4    | version `u32` = 1              |
//! | 8      | 4    | height `u32`                   |
//! | 12     | 4    | width `u32`                    |
//! | 16     | 4    | depth `u32`                    |
//! | 20     | 4·H·W·D | `f32` payload, row-major, depth fastest |
//!
//! Embedding tables are JSON:
//! `{"version": 1, "dim": D, "entries": [{"phrase", "vector"}], "codebook": [[..]]?}`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quant::Codebook;
use crate::relevancy::{EmbeddingTable, Provenance, RelevancyMap, SegMask};
use crate::render::{RenderedImage, SemanticDistributionMap};

pub const LEGF_MAGIC: &[u8; 4] = b"LEGF";
pub const LEGF_VERSION: u32 = 1;
pub const LEGF_HEADER_LEN: usize = 20;
pub const EMBEDDING_TABLE_VERSION: u32 = 1;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected LEGF")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("grid dimensions overflow")]
    DimensionOverflow,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("malformed json: {0}")]
    Json(String),
    #[error("entry {phrase:?} has dimension {actual}, table dim is {expected}")]
    DimMismatch {
        phrase: String,
        expected: usize,
        actual: usize,
    },
    #[error("entry {phrase:?} has norm {norm}, expected unit length")]
    NotUnit { phrase: String, norm: f64 },
    #[error("duplicate phrase {0:?}")]
    DuplicatePhrase(String),
    #[error("malformed image: {0}")]
    Image(String),
}

impl FormatError {
    /// Stable short code for each error kind.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic => "E_MAGIC",
            FormatError::UnsupportedVersion(_) => "E_VERSION",
            FormatError::Truncated { .. } => "E_TRUNCATED",
            FormatError::TrailingBytes(_) => "E_TRAILING",
            FormatError::DimensionOverflow => "E_OVERFLOW",
            FormatError::NonFinite(_) => "E_NONFINITE",
            FormatError::Json(_) => "E_JSON",
            FormatError::DimMismatch { .. } => "E_DIM",
            FormatError::NotUnit { .. } => "E_NOT_UNIT",
            FormatError::DuplicatePhrase(_) => "E_DUPLICATE",
            FormatError::Image(_) => "E_IMAGE",
        }
    }
}

type Result<T> = std::result::Result<T, FormatError>;

/// Dense `height × width × depth` f32 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(depth))
            .ok_or(FormatError::DimensionOverflow)?;
        if data.len() != n {
            return Err(FormatError::Truncated {
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.depth;
        &self.data[i..i + self.depth]
    }
}

pub fn write_legf(grid: &Grid) -> Result<Vec<u8>> {
    if let Some(i) = grid.data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    let dims: [u32; 3] = [grid.height, grid.width, grid.depth]
        .map(|d| u32::try_from(d).map_err(|_| FormatError::DimensionOverflow))
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .try_into()
        .expect("three dims");
    let mut out = Vec::with_capacity(LEGF_HEADER_LEN + 4 * grid.data.len());
    out.extend_from_slice(LEGF_MAGIC);
    out.extend_from_slice(&LEGF_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &grid.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_legf(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: LEGF_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != LEGF_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < LEGF_HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: LEGF_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != LEGF_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let (h, w, d) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .ok_or(FormatError::DimensionOverflow)?;
    let payload_len = count.checked_mul(4).ok_or(FormatError::DimensionOverflow)?;
    let expected = LEGF_HEADER_LEN
        .checked_add(payload_len)
        .ok_or(FormatError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }
    let data = bytes[LEGF_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Grid::new(h, w, d, data)
}

impl From<&SemanticDistributionMap> for Grid {
    fn from(m: &SemanticDistributionMap) -> Self {
        Grid {
            height: m.height,
            width: m.width,
            depth: m.k,
            data: m.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

impl From<&RelevancyMap> for Grid {
    fn from(r: &RelevancyMap) -> Self {
        Grid {
            height: r.height,
            width: r.width,
            depth: 1,
            data: r.scores.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Ground-truth index map: `-1` marks pixels without a target.
pub fn index_map_to_grid(width: usize, height: usize, targets: &[Option<usize>]) -> Grid {
    Grid {
        height,
        width,
        depth: 1,
        data: targets
            .iter()
            .map(|t| t.map_or(-1.0, |v| v as f32))
            .collect(),
    }
}

pub fn grid_to_index_map(grid: &Grid) -> Result<Vec<Option<usize>>> {
    if grid.depth != 1 {
        return Err(FormatError::Image(format!("index map needs depth 1, got {}", grid.depth)));
    }
    grid.data
        .iter()
        .map(|&v| {
            if v < 0.0 {
                Ok(None)
            } else if v.fract() == 0.0 && v.is_finite() {
                Ok(Some(v as usize))
            } else {
                Err(FormatError::Image(format!("index map value {v} is not an integer")))
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    version: u32,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    entries: Vec<EntryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codebook: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    phrase: String,
    vector: Vec<f64>,
}

fn check_unit(phrase: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(FormatError::DimMismatch {
            phrase: phrase.to_string(),
            expected: dim,
            actual: v.len(),
        });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(FormatError::NotUnit {
            phrase: phrase.to_string(),
            norm,
        });
    }
    Ok(())
}

/// Parses an embedding table and its optional codebook.
pub fn read_embedding_table(text: &str) -> Result<(EmbeddingTable, Option<Codebook>)> {
    let doc: TableDoc = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
    if doc.version != EMBEDDING_TABLE_VERSION {
        return Err(FormatError::UnsupportedVersion(doc.version));
    }
    let mut entries = IndexMap::with_capacity(doc.entries.len());
    for e in doc.entries {
        check_unit(&e.phrase, &e.vector, doc.dim)?;
        if entries.contains_key(&e.phrase) {
            return Err(FormatError::DuplicatePhrase(e.phrase));
        }
        entries.insert(e.phrase, e.vector);
    }
    let codebook = match doc.codebook {
        Some(rows) => {
            for (i, r) in rows.iter().enumerate() {
                check_unit(&format!("codebook[{i}]"), r, doc.dim)?;
            }
            Some(Codebook::new(rows).map_err(|e| FormatError::Json(e.to_string()))?)
        }
        None => None,
    };
    let table = EmbeddingTable::from_parts(doc.dim, entries, doc.provenance.unwrap_or(Provenance::Exported));
    Ok((table, codebook))
}

pub fn write_embedding_table(table: &EmbeddingTable, codebook: Option<&Codebook>) -> String {
    let doc = TableDoc {
        version: EMBEDDING_TABLE_VERSION,
        dim: table.dim(),
        provenance: Some(table.provenance()),
        entries: table
            .iter()
            .map(|(p, v)| EntryDoc {
                phrase: p.to_string(),
                vector: v.to_vec(),
            })
            .collect(),
        codebook: codebook.map(|cb| cb.entries().to_vec()),
    };
    serde_json::to_string_pretty(&doc).expect("table serializes")
}

fn to_byte(v: f64) -> u8 {
    // round half up
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(img: &RenderedImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| to_byte(v)));
    out
}

/// Binary PGM (P5, maxval 255) from values in [0, 1].
pub fn write_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_byte(v)));
    out
}

/// Score preview: `round_half_up(score × 255)`.
pub fn relevancy_preview(r: &RelevancyMap) -> Vec<u8> {
    write_pgm(r.width, r.height, &r.scores)
}

/// Mask as PGM with 0 / 255.
pub fn write_mask_pgm(mask: &SegMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.pixels.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Reads a P5 PGM with maxval ≤ 255, returning `(width, height, bytes)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| FormatError::Image(m.to_string());
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated pgm header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("expected P5 magic"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // single whitespace byte after maxval
    pos += 1;
    let n = w.checked_mul(h).ok_or(FormatError::DimensionOverflow)?;
    let end = pos.checked_add(n).ok_or(FormatError::DimensionOverflow)?;
    if bytes.len() < end {
        return Err(FormatError::Truncated {
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok((w, h, bytes[pos..end].to_vec()))
}

pub fn read_mask_pgm(bytes: &[u8]) -> Result<SegMask> {
    let (w, h, data) = read_pgm(bytes)?;
    Ok(SegMask {
        width: w,
        height: h,
        pixels: data.into_iter().map(|b| b >= 128).collect(),
    })
}
