//! Warmth/competence basis and oblique projection.
//!
//! The basis vectors are the normalized mean embeddings of two word sets.
//! A description embedding `x` is decomposed as
//! `x = alpha_w * u_w + alpha_c * u_c + r` with `r` orthogonal to both basis
//! vectors, so with `d = u_w . u_c`, `d_w = x . u_w` and `d_c = x . u_c`:
//!
//! ```text
//! alpha_w = (d_w - d * d_c) / (1 - d^2)
//! alpha_c = (d_c - d * d_w) / (1 - d^2)
//! ```
//!
//! Description embeddings are used as returned by the embedder; only the
//! basis vectors are normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{EmbedError, Embedder};

/// `|d|` at or above this makes the basis collinear.
pub const COLLINEARITY_LIMIT: f64 = 1.0 - 1e-9;
/// `1 - d^2` below this makes the projection degenerate.
pub const DEGENERACY_LIMIT: f64 = 1e-9;
const UNIT_TOLERANCE: f64 = 1e-9;

/// Six high-warmth words. The source word list is introduced as seven words
/// but only six are given; no seventh is guessed.
pub const DEFAULT_WARMTH_WORDS: [&str; 6] = [
    "friendly",
    "well-intentioned",
    "trustworthy",
    "warm",
    "good-natured",
    "sincere",
];

pub const DEFAULT_COMPETENCE_WORDS: [&str; 6] = [
    "competent",
    "confident",
    "capable",
    "efficient",
    "intelligent",
    "skillful",
];

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("{0} word set is empty")]
    EmptyWordSet(&'static str),
    #[error("basis is collinear: |u_w . u_c| = {0}")]
    CollinearBasis(f64),
    #[error("basis is degenerate: 1 - d^2 = {0}")]
    DegenerateBasis(f64),
    #[error("{0} mean embedding has zero norm")]
    ZeroMean(&'static str),
    #[error("basis vector {0} is not unit length")]
    NotUnit(&'static str),
    #[error("dimension mismatch: basis {expected}, vector {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding {word:?}: {source}")]
    Embed {
        word: String,
        #[source]
        source: EmbedError,
    },
    #[error("basis file: {0}")]
    File(String),
}

/// Warmth and competence directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisFile", into = "BasisFile")]
pub struct ScmBasis {
    u_w: Vec<f64>,
    u_c: Vec<f64>,
    d: f64,
    words_w: Vec<String>,
    words_c: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmCoordinates {
    pub alpha_w: f64,
    pub alpha_c: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl ScmBasis {
    /// Builds a basis from two direction vectors, normalizing each.
    pub fn from_directions(
        warmth: &[f64],
        competence: &[f64],
        words_w: Vec<String>,
        words_c: Vec<String>,
    ) -> Result<Self, ScmError> {
        if warmth.len() != competence.len() {
            return Err(ScmError::DimensionMismatch {
                expected: warmth.len(),
                actual: competence.len(),
            });
        }
        let unit = |v: &[f64], name: &'static str| {
            let n = norm(v);
            if n == 0.0 || !n.is_finite() {
                return Err(ScmError::ZeroMean(name));
            }
            Ok(v.iter().map(|x| x / n).collect::<Vec<f64>>())
        };
        let u_w = unit(warmth, "warmth")?;
        let u_c = unit(competence, "competence")?;
        let d = dot(&u_w, &u_c);
        if d.abs() >= COLLINEARITY_LIMIT {
            return Err(ScmError::CollinearBasis(d.abs()));
        }
        Ok(Self {
            u_w,
            u_c,
            d,
            words_w,
            words_c,
        })
    }

    pub fn warmth(&self) -> &[f64] {
        &self.u_w
    }

    pub fn competence(&self) -> &[f64] {
        &self.u_c
    }

    /// `u_w . u_c`
    pub fn cross_dot(&self) -> f64 {
        self.d
    }

    pub fn dimension(&self) -> usize {
        self.u_w.len()
    }

    pub fn warmth_words(&self) -> &[String] {
        &self.words_w
    }

    pub fn competence_words(&self) -> &[String] {
        &self.words_c
    }

    /// The same basis with the two axes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            u_w: self.u_c.clone(),
            u_c: self.u_w.clone(),
            d: dot(&self.u_c, &self.u_w),
            words_w: self.words_c.clone(),
            words_c: self.words_w.clone(),
        }
    }

    /// Oblique projection coordinates of `x` on the warmth/competence plane.
    pub fn project(&self, x: &[f64]) -> Result<ScmCoordinates, ScmError> {
        if x.len() != self.dimension() {
            return Err(ScmError::DimensionMismatch {
                expected: self.dimension(),
                actual: x.len(),
            });
        }
        let denom = 1.0 - self.d * self.d;
        if denom < DEGENERACY_LIMIT {
            return Err(ScmError::DegenerateBasis(denom));
        }
        let d_w = dot(x, &self.u_w);
        let d_c = dot(x, &self.u_c);
        Ok(ScmCoordinates {
            alpha_w: (d_w - self.d * d_c) / denom,
            alpha_c: (d_c - self.d * d_w) / denom,
        })
    }

    /// `x - alpha_w * u_w - alpha_c * u_c`, the component of `x` outside the
    /// plane.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>, ScmError> {
        let c = self.project(x)?;
        Ok(x.iter()
            .zip(self.u_w.iter().zip(&self.u_c))
            .map(|(xi, (w, k))| xi - c.alpha_w * w - c.alpha_c * k)
            .collect())
    }

    /// Cosine of `v` with each basis direction, `(cos_w, cos_c)`.
    pub fn cosines(&self, v: &[f64]) -> Result<(f64, f64), ScmError> {
        if v.len() != self.dimension() {
            return Err(ScmError::DimensionMismatch {
                expected: self.dimension(),
                actual: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 {
            return Ok((0.0, 0.0));
        }
        // basis vectors are unit length
        Ok((dot(v, &self.u_w) / n, dot(v, &self.u_c) / n))
    }

    pub fn save(&self, path: &Path) -> Result<(), ScmError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ScmError::File(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| ScmError::File(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScmError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScmError::File(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ScmError::File(e.to_string()))
    }
}

/// Normalized mean embedding of each word set. Multiword terms are embedded
/// as one string.
pub fn build_basis<S: AsRef<str>>(
    words_w: &[S],
    words_c: &[S],
    embedder: &Embedder,
) -> Result<ScmBasis, ScmError> {
    if words_w.is_empty() {
        return Err(ScmError::EmptyWordSet("warmth"));
    }
    if words_c.is_empty() {
        return Err(ScmError::EmptyWordSet("competence"));
    }
    let mean = |words: &[S]| -> Result<Vec<f64>, ScmError> {
        let mut acc = vec![0.0; embedder.dimension()];
        for (word, e) in words.iter().zip(embedder.embed_batch(words)) {
            let e = e.map_err(|source| ScmError::Embed {
                word: word.as_ref().to_string(),
                source,
            })?;
            for (a, v) in acc.iter_mut().zip(e.as_slice()) {
                *a += v;
            }
        }
        let n = words.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    };
    let w_bar = mean(words_w)?;
    let c_bar = mean(words_c)?;
    let owned = |ws: &[S]| ws.iter().map(|w| w.as_ref().to_string()).collect();
    ScmBasis::from_directions(&w_bar, &c_bar, owned(words_w), owned(words_c))
}

/// Embeds `text` and projects it.
pub fn score_description(text: &str, basis: &ScmBasis, embedder: &Embedder) -> Result<ScmCoordinates, ScmError> {
    let e = embedder.embed(text).map_err(|source| ScmError::Embed {
        word: text.to_string(),
        source,
    })?;
    basis.project(e.as_slice())
}

/// On-disk form: full-precision vectors plus the word sets and dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisFile {
    words_w: Vec<String>,
    words_c: Vec<String>,
    dimension: usize,
    u_w: Vec<f64>,
    u_c: Vec<f64>,
    d: f64,
}

impl From<ScmBasis> for BasisFile {
    fn from(b: ScmBasis) -> Self {
        BasisFile {
            dimension: b.dimension(),
            words_w: b.words_w,
            words_c: b.words_c,
            u_w: b.u_w,
            u_c: b.u_c,
            d: b.d,
        }
    }
}

impl TryFrom<BasisFile> for ScmBasis {
    type Error = ScmError;

    fn try_from(f: BasisFile) -> Result<Self, ScmError> {
        if f.u_w.len() != f.dimension || f.u_c.len() != f.dimension {
            return Err(ScmError::DimensionMismatch {
                expected: f.dimension,
                actual: if f.u_w.len() != f.dimension { f.u_w.len() } else { f.u_c.len() },
            });
        }
        if (norm(&f.u_w) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(ScmError::NotUnit("u_w"));
        }
        if (norm(&f.u_c) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(ScmError::NotUnit("u_c"));
        }
        let d = dot(&f.u_w, &f.u_c);
        if (d - f.d).abs() > 1e-12 {
            return Err(ScmError::File(format!("stored d {} disagrees with u_w . u_c = {d}", f.d)));
        }
        if d.abs() >= COLLINEARITY_LIMIT {
            return Err(ScmError::CollinearBasis(d.abs()));
        }
        Ok(ScmBasis {
            u_w: f.u_w,
            u_c: f.u_c,
            d: f.d,
            words_w: f.words_w,
            words_c: f.words_c,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{ToyBackend, ToyGranularity};

    fn toy() -> Embedder {
        Embedder::new(ToyBackend::new(8, 42, ToyGranularity::Words))
    }

    #[test]
    fn single_word_basis_is_that_words_direction() {
        let e = toy();
        let b = build_basis(&["warm"], &["competent"], &e).unwrap();
        let v = e.embed("warm").unwrap();
        let n = norm(v.as_slice());
        for (u, x) in b.warmth().iter().zip(v.as_slice()) {
            assert!((u - x / n).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_sets_are_collinear() {
        let e = toy();
        let err = build_basis(&DEFAULT_WARMTH_WORDS, &DEFAULT_WARMTH_WORDS, &e).unwrap_err();
        assert!(matches!(err, ScmError::CollinearBasis(_)));
    }

    #[test]
    fn empty_word_set() {
        let e = toy();
        let none: [&str; 0] = [];
        assert!(matches!(build_basis(&none, &["a"], &e), Err(ScmError::EmptyWordSet("warmth"))));
        assert!(matches!(build_basis(&["a"], &none, &e), Err(ScmError::EmptyWordSet("competence"))));
    }

    #[test]
    fn basis_self_projection() {
        let e = toy();
        let b = build_basis(&DEFAULT_WARMTH_WORDS, &DEFAULT_COMPETENCE_WORDS, &e).unwrap();
        let w = b.project(b.warmth()).unwrap();
        let c = b.project(b.competence()).unwrap();
        assert!((w.alpha_w - 1.0).abs() < 1e-12 && w.alpha_c.abs() < 1e-12);
        assert!(c.alpha_w.abs() < 1e-12 && (c.alpha_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_residual_projects_to_origin() {
        let b = ScmBasis::from_directions(&[1.0, 1.0, 0.0], &[0.0, 1.0, 0.0], vec![], vec![]).unwrap();
        let c = b.project(&[0.0, 0.0, 3.0]).unwrap();
        assert_eq!((c.alpha_w, c.alpha_c), (0.0, 0.0));
    }

    #[test]
    fn orthogonal_basis_gives_plain_dot_products() {
        let b = ScmBasis::from_directions(&[2.0, 0.0, 0.0], &[0.0, 5.0, 0.0], vec![], vec![]).unwrap();
        assert_eq!(b.cross_dot(), 0.0);
        let c = b.project(&[0.3, -0.7, 9.0]).unwrap();
        assert_eq!((c.alpha_w, c.alpha_c), (0.3, -0.7));
    }

    #[test]
    fn dimension_mismatch() {
        let b = ScmBasis::from_directions(&[1.0, 0.0], &[0.0, 1.0], vec![], vec![]).unwrap();
        assert!(matches!(b.project(&[1.0]), Err(ScmError::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_file_is_rejected() {
        let s = 0.5f64.sqrt();
        let f = BasisFile {
            words_w: vec![],
            words_c: vec![],
            dimension: 2,
            u_w: vec![s, s],
            u_c: vec![s, s],
            d: dot(&[s, s], &[s, s]),
        };
        assert!(matches!(ScmBasis::try_from(f), Err(ScmError::CollinearBasis(_))));
    }

    #[test]
    fn basis_file_round_trip() {
        let e = toy();
        let b = build_basis(&DEFAULT_WARMTH_WORDS, &DEFAULT_COMPETENCE_WORDS, &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("basis.json");
        b.save(&p).unwrap();
        assert_eq!(ScmBasis::load(&p).unwrap(), b);
    }

    #[test]
    fn contrived_text_scores_pure_warmth() {
        let e = toy();
        let b = build_basis(&["warm"], &["capable"], &e).unwrap();
        let c = score_description("Warm.", &b, &e).unwrap();
        assert!((c.alpha_w - 1.0).abs() < 1e-12);
        assert!(c.alpha_c.abs() < 1e-12);
        assert_eq!(score_description("Warm.", &b, &e).unwrap(), c);
    }
}
