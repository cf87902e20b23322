//! Word/aspect association: cosine filtering against the SCM basis followed
//! by pointwise mutual information over token frequencies.
//!
//! `PMI(w; a) = log2(P(w|a) / P(w))` where `P(w|a)` is the share of `w` among
//! all tokens of descriptions of images with aspect `a`, and `P(w)` its share
//! among all tokens of the same model's descriptions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{Axis, Level};
use crate::corpus::ImageRecord;
use crate::embedder::Embedder;
use crate::scm::{ScmBasis, ScmError};

pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Error)]
pub enum PmiError {
    #[error("{word:?} does not occur in descriptions of {aspect}")]
    ZeroCount { word: String, aspect: Level },
    #[error("{0:?} does not occur in the corpus")]
    AbsentWord(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// Lowercased alphabetic runs of two or more characters. A hyphen between
/// two letters stays inside the token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase());
        } else if c == '-'
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            current.push('-');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens.retain(|t| t.chars().count() >= 2);
    tokens
}

/// Which basis direction a word list is filtered against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScmDimension {
    Warmth,
    Competence,
    /// Either direction passes.
    Either,
}

impl ScmDimension {
    pub fn label(self) -> &'static str {
        match self {
            ScmDimension::Warmth => "warmth",
            ScmDimension::Competence => "competence",
            ScmDimension::Either => "warmth or competence",
        }
    }
}

/// A vocabulary word with its cosine to each basis direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCosines {
    pub word: String,
    pub cos_w: f64,
    pub cos_c: f64,
}

impl WordCosines {
    pub fn passes(&self, dimension: ScmDimension, threshold: f64) -> bool {
        let w = self.cos_w.abs() >= threshold;
        let c = self.cos_c.abs() >= threshold;
        match dimension {
            ScmDimension::Warmth => w,
            ScmDimension::Competence => c,
            ScmDimension::Either => w || c,
        }
    }
}

/// Keeps words whose cosine with either basis vector is at least
/// `threshold` in magnitude. The boundary is inclusive. Output is sorted by
/// word.
pub fn filter_words<S: AsRef<str>>(
    vocab: &[S],
    basis: &ScmBasis,
    embedder: &Embedder,
    threshold: f64,
) -> Result<Vec<WordCosines>, PmiError> {
    let mut out = Vec::new();
    for (word, e) in vocab.iter().zip(embedder.embed_batch(vocab)) {
        let word = word.as_ref();
        let e = e.map_err(|source| ScmError::Embed {
            word: word.to_string(),
            source,
        })?;
        let (cos_w, cos_c) = basis.cosines(e.as_slice())?;
        let wc = WordCosines {
            word: word.to_string(),
            cos_w,
            cos_c,
        };
        if wc.passes(ScmDimension::Either, threshold) {
            out.push(wc);
        }
    }
    out.sort_by(|a, b| a.word.cmp(&b.word));
    out.dedup_by(|a, b| a.word == b.word);
    Ok(out)
}

/// Token counts of one model's descriptions, overall and per aspect.
#[derive(Debug, Clone, Default)]
pub struct PmiCorpus {
    total_tokens: usize,
    word_totals: HashMap<String, usize>,
    aspect_tokens: HashMap<Level, usize>,
    aspect_words: HashMap<Level, HashMap<String, usize>>,
}

impl PmiCorpus {
    /// Adds one description's tokens under every aspect its image carries.
    pub fn add(&mut self, aspects: &[Level], tokens: &[String]) {
        self.total_tokens += tokens.len();
        for t in tokens {
            *self.word_totals.entry(t.clone()).or_default() += 1;
        }
        for &a in aspects {
            *self.aspect_tokens.entry(a).or_default() += tokens.len();
            let words = self.aspect_words.entry(a).or_default();
            for t in tokens {
                *words.entry(t.clone()).or_default() += 1;
            }
        }
    }

    pub fn from_descriptions<'a>(items: impl IntoIterator<Item = (&'a ImageRecord, &'a str)>) -> Self {
        let mut corpus = PmiCorpus::default();
        for (record, text) in items {
            let aspects: Vec<Level> = Axis::ALL.iter().map(|&a| record.level(a)).collect();
            corpus.add(&aspects, &tokenize(text));
        }
        corpus
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn aspect_tokens(&self, aspect: Level) -> usize {
        self.aspect_tokens.get(&aspect).copied().unwrap_or(0)
    }

    pub fn count(&self, word: &str) -> usize {
        self.word_totals.get(word).copied().unwrap_or(0)
    }

    pub fn count_in(&self, word: &str, aspect: Level) -> usize {
        self.aspect_words
            .get(&aspect)
            .and_then(|m| m.get(word))
            .copied()
            .unwrap_or(0)
    }

    /// Sorted vocabulary.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.word_totals.keys().collect();
        set.into_iter().cloned().collect()
    }

    pub fn compute_pmi(&self, word: &str, aspect: Level) -> Result<f64, PmiError> {
        let total = self.count(word);
        if total == 0 {
            return Err(PmiError::AbsentWord(word.to_string()));
        }
        let in_aspect = self.count_in(word, aspect);
        if in_aspect == 0 {
            return Err(PmiError::ZeroCount {
                word: word.to_string(),
                aspect,
            });
        }
        let p_given = in_aspect as f64 / self.aspect_tokens(aspect) as f64;
        let p = total as f64 / self.total_tokens as f64;
        Ok((p_given / p).log2())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiEntry {
    pub word: String,
    pub aspect: Level,
    pub pmi: f64,
    pub count_in_aspect: usize,
    pub count_total: usize,
    pub cos_w: f64,
    pub cos_c: f64,
}

/// PMI of every retained word against `aspect`. Words absent from the
/// aspect are skipped.
pub fn score_aspect(corpus: &PmiCorpus, retained: &[WordCosines], aspect: Level) -> Vec<PmiEntry> {
    retained
        .iter()
        .filter_map(|wc| {
            let pmi = corpus.compute_pmi(&wc.word, aspect).ok()?;
            Some(PmiEntry {
                word: wc.word.clone(),
                aspect,
                pmi,
                count_in_aspect: corpus.count_in(&wc.word, aspect),
                count_total: corpus.count(&wc.word),
                cos_w: wc.cos_w,
                cos_c: wc.cos_c,
            })
        })
        .collect()
}

/// Highest-PMI entries for `aspect`: ties go to the larger in-aspect count,
/// then to the lexicographically smaller word.
pub fn top_k(entries: &[PmiEntry], aspect: Level, k: usize) -> Vec<PmiEntry> {
    let mut picked: Vec<PmiEntry> = entries.iter().filter(|e| e.aspect == aspect).cloned().collect();
    picked.sort_by(|a, b| {
        b.pmi
            .total_cmp(&a.pmi)
            .then(b.count_in_aspect.cmp(&a.count_in_aspect))
            .then_with(|| a.word.cmp(&b.word))
    });
    picked.truncate(k);
    picked
}

/// Words present in every model's list.
pub fn common_words<S: AsRef<str>>(lists: &[Vec<S>]) -> BTreeSet<String> {
    let mut iter = lists.iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    let mut acc: BTreeSet<String> = first.iter().map(|w| w.as_ref().to_string()).collect();
    for list in iter {
        let set: BTreeSet<&str> = list.iter().map(|w| w.as_ref()).collect();
        acc.retain(|w| set.contains(w.as_str()));
    }
    acc
}

/// Ranked words of one (model, aspect, dimension) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiTable {
    pub model_id: String,
    pub aspect: Level,
    pub dimension: ScmDimension,
    pub entries: Vec<PmiEntry>,
}

/// Words shared by all models' top lists for one aspect and dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonWords {
    pub aspect: Level,
    pub dimension: ScmDimension,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiReport {
    pub threshold: f64,
    pub k: usize,
    pub tables: Vec<PmiTable>,
    pub common: Vec<CommonWords>,
}

/// Builds per-model top-k tables for every aspect and each requested
/// dimension, then intersects them across models.
pub fn build_report(
    per_model: &BTreeMap<String, PmiCorpus>,
    retained: &[WordCosines],
    dimensions: &[ScmDimension],
    threshold: f64,
    k: usize,
) -> PmiReport {
    let mut tables = Vec::new();
    for (model_id, corpus) in per_model {
        for aspect in Level::all() {
            let entries = score_aspect(corpus, retained, aspect);
            for &dimension in dimensions {
                let filtered: Vec<PmiEntry> = entries
                    .iter()
                    .filter(|e| {
                        WordCosines {
                            word: String::new(),
                            cos_w: e.cos_w,
                            cos_c: e.cos_c,
                        }
                        .passes(dimension, threshold)
                    })
                    .cloned()
                    .collect();
                tables.push(PmiTable {
                    model_id: model_id.clone(),
                    aspect,
                    dimension,
                    entries: top_k(&filtered, aspect, k),
                });
            }
        }
    }
    let mut common = Vec::new();
    for aspect in Level::all() {
        for &dimension in dimensions {
            let lists: Vec<Vec<&str>> = tables
                .iter()
                .filter(|t| t.aspect == aspect && t.dimension == dimension)
                .map(|t| t.entries.iter().map(|e| e.word.as_str()).collect())
                .collect();
            common.push(CommonWords {
                aspect,
                dimension,
                words: common_words(&lists).into_iter().collect(),
            });
        }
    }
    PmiReport {
        threshold,
        k,
        tables,
        common,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{Color, Gender};
    use crate::embedder::{text_digest, FrozenBackend};

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("A confident, skilled DJ."), ["confident", "skilled", "dj"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("well-intentioned person"), ["well-intentioned", "person"]);
        assert_eq!(tokenize("-dash- x-ray 3d"), ["dash", "x-ray"]);
    }

    fn red() -> Level {
        Level::Color(Color::Red)
    }

    #[test]
    fn independent_word_has_zero_pmi() {
        let mut c = PmiCorpus::default();
        c.add(&[red()], &tokenize("warm kind calm kind"));
        c.add(&[Level::Color(Color::Blue)], &tokenize("warm kind calm kind"));
        assert_eq!(c.compute_pmi("warm", red()).unwrap(), 0.0);
    }

    #[test]
    fn absent_word_in_aspect_is_zero_count() {
        let mut c = PmiCorpus::default();
        c.add(&[red()], &tokenize("calm"));
        c.add(&[Level::Color(Color::Blue)], &tokenize("warm"));
        assert!(matches!(c.compute_pmi("warm", red()), Err(PmiError::ZeroCount { .. })));
        assert!(matches!(c.compute_pmi("zzz", red()), Err(PmiError::AbsentWord(_))));
    }

    fn entry(word: &str, pmi: f64, count: usize) -> PmiEntry {
        PmiEntry {
            word: word.into(),
            aspect: red(),
            pmi,
            count_in_aspect: count,
            count_total: count,
            cos_w: 1.0,
            cos_c: 0.0,
        }
    }

    #[test]
    fn top_k_ties_and_truncation() {
        let es = vec![entry("b", 1.0, 2), entry("a", 1.0, 2), entry("c", 1.0, 5), entry("d", 2.0, 1), entry("e", -1.0, 1)];
        let words: Vec<String> = top_k(&es, red(), 20).into_iter().map(|e| e.word).collect();
        assert_eq!(words, ["d", "c", "a", "b", "e"]);
        assert_eq!(top_k(&es, red(), 2).len(), 2);
        assert!(top_k(&es, Level::Gender(Gender::Male), 20).is_empty());
    }

    #[test]
    fn common_word_intersection() {
        assert_eq!(common_words(&[vec!["a", "b"]]), ["a", "b"].iter().map(|s| s.to_string()).collect());
        assert!(common_words(&[vec!["a"], vec!["b"]]).is_empty());
        let c = common_words(&[vec!["a", "b", "c"], vec!["b", "c", "d"]]);
        assert_eq!(c.into_iter().collect::<Vec<_>>(), ["b", "c"]);
        assert!(common_words::<&str>(&[]).is_empty());
    }

    #[test]
    fn cosine_boundary_is_inclusive() {
        let backend = FrozenBackend::from_entries(
            "fixture",
            5,
            [
                (text_digest("w"), vec![1.0, 0.0, 0.0, 0.0, 0.0]),
                (text_digest("c"), vec![0.0, 1.0, 0.0, 0.0, 0.0]),
                (text_digest("warmish"), vec![1.0, 0.0, 1.0, 1.0, 1.0]),
                (text_digest("almost"), vec![1.0, 0.0, 1.0, 1.0, 1.001]),
                (text_digest("orthogonal"), vec![0.0, 0.0, 1.0, 0.0, 0.0]),
                (text_digest("same"), vec![2.0, 0.0, 0.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let e = Embedder::new(backend);
        let basis = crate::scm::build_basis(&["w"], &["c"], &e).unwrap();
        let kept = filter_words(&["warmish", "almost", "orthogonal", "same"], &basis, &e, 0.5).unwrap();
        let words: Vec<&str> = kept.iter().map(|w| w.word.as_str()).collect();
        assert_eq!(words, ["same", "warmish"]);
        assert_eq!(kept[1].cos_w, 0.5);
        assert_eq!(kept[0].cos_w, 1.0);
    }
}
