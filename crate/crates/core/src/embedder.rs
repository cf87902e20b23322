//! Sentence-embedding contract with pluggable backends and a digest-keyed
//! cache.
//!
//! Three backends ship with the crate:
//!
//! * [`ToyBackend`]: hash-seeded pseudorandom unit vectors, no model weights.
//! * [`FrozenBackend`]: a file of precomputed vectors keyed by text digest.
//! * [`RemoteBackend`]: an HTTP service answering `{texts}` with `{vectors}`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pmi::tokenize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend returned dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("backend returned a non-finite value")]
    NonFinite,
    #[error("no frozen embedding for digest {0}")]
    NotFrozen(String),
    #[error("embedding file {path}: {message}")]
    BadFile { path: String, message: String },
}

/// SHA-256 of the UTF-8 text, lowercase hex.
pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A finite vector of the backend's fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Arc<Vec<f64>>,
    pub source_text_hash: String,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

pub trait EmbeddingBackend: Send + Sync {
    /// Stable identifier; cache entries are only shared under the same id.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// One vector per input, in order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// How the toy backend turns a text into a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyGranularity {
    /// One hash-seeded vector per distinct text.
    Text,
    /// Normalized mean of one hash-seeded vector per token, so texts sharing
    /// words land near each other.
    #[default]
    Words,
}

impl fmt::Display for ToyGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyGranularity::Text => "text",
            ToyGranularity::Words => "words",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    id: String,
    dimension: usize,
    seed: u64,
    granularity: ToyGranularity,
}

impl ToyBackend {
    pub fn new(dimension: usize, seed: u64, granularity: ToyGranularity) -> Self {
        assert!(dimension > 0, "toy dimension must be positive");
        Self {
            id: format!("toy-{granularity}-d{dimension}-s{seed}"),
            dimension,
            seed,
            granularity,
        }
    }

    /// Unit vector drawn from a generator seeded by `(seed, key)`.
    pub fn unit_vector(&self, key: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(key.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let mut v: Vec<f64> = (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize_in_place(&mut v);
        v
    }

    fn vector_for(&self, text: &str) -> Vec<f64> {
        let tokens = match self.granularity {
            ToyGranularity::Text => Vec::new(),
            ToyGranularity::Words => tokenize(text),
        };
        if tokens.is_empty() {
            return self.unit_vector(text);
        }
        let mut acc = vec![0.0; self.dimension];
        for token in &tokens {
            for (a, v) in acc.iter_mut().zip(self.unit_vector(token)) {
                *a += v;
            }
        }
        normalize_in_place(&mut acc);
        acc
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl EmbeddingBackend for ToyBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Precomputed vectors keyed by [`text_digest`].
#[derive(Debug, Clone)]
pub struct FrozenBackend {
    id: String,
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FrozenBackend {
    pub fn from_entries(
        id: impl Into<String>,
        dimension: usize,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbedError> {
        let mut table = HashMap::new();
        for (digest, v) in entries {
            if v.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: dimension,
                    actual: v.len(),
                });
            }
            table.insert(digest, v);
        }
        Ok(Self {
            id: id.into(),
            dimension,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let (header_id, entries) = read_vector_file(path)?;
        let dimension = entries.first().map(|(_, v)| v.len()).ok_or_else(|| EmbedError::BadFile {
            path: path.display().to_string(),
            message: "no vectors".into(),
        })?;
        let id = header_id.unwrap_or_else(|| format!("frozen:{}", path.display()));
        Self::from_entries(id, dimension, entries)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingBackend for FrozenBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let digest = text_digest(t);
                self.table.get(&digest).cloned().ok_or(EmbedError::NotFrozen(digest))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding service speaking `POST {"texts": [...]}` ->
/// `{"vectors": [[...], ...]}`. The dimension is declared in configuration.
pub struct RemoteBackend {
    id: String,
    url: String,
    dimension: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, dimension: usize, api_key: Option<String>) -> Result<Self, EmbedError> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            id: format!("remote:{url}"),
            url,
            dimension,
            api_key,
            client,
        })
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.client.post(&self.url).json(&RemoteRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        let body: RemoteResponse = resp.json().map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::BackendUnavailable(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

/// Front end over a backend: validates input and output, caches by digest.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    cache: RwLock<HashMap<String, Arc<Vec<f64>>>>,
    backend_calls: AtomicUsize,
}

impl Embedder {
    pub fn new(backend: impl EmbeddingBackend + 'static) -> Self {
        Self::from_boxed(Box::new(backend))
    }

    pub fn from_boxed(backend: Box<dyn EmbeddingBackend>) -> Self {
        Self {
            backend,
            cache: RwLock::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn dimension(&self) -> usize {
        self.backend.dimension()
    }

    /// Number of times the backend has been asked for vectors.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.embed_batch(&[text]).pop().expect("one result per input")
    }

    /// Element-wise [`Embedder::embed`]. Cache misses go to the backend in a
    /// single call; if that call fails every miss carries the error.
    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Result<Embedding, EmbedError>> {
        let digests: Vec<String> = texts.iter().map(|t| text_digest(t.as_ref())).collect();
        let mut out: Vec<Option<Result<Embedding, EmbedError>>> = vec![None; texts.len()];
        let mut misses: Vec<usize> = Vec::new();
        {
            let cache = self.cache.read().unwrap();
            for (i, t) in texts.iter().enumerate() {
                if t.as_ref().trim().is_empty() {
                    out[i] = Some(Err(EmbedError::EmptyText));
                } else if let Some(v) = cache.get(&digests[i]) {
                    out[i] = Some(Ok(Embedding {
                        values: Arc::clone(v),
                        source_text_hash: digests[i].clone(),
                    }));
                } else {
                    misses.push(i);
                }
            }
        }

        // the same text may appear more than once in a batch
        let mut unique: Vec<usize> = Vec::new();
        let mut first_of: HashMap<&str, usize> = HashMap::new();
        for &i in &misses {
            first_of.entry(digests[i].as_str()).or_insert_with(|| {
                unique.push(i);
                i
            });
        }

        if !unique.is_empty() {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            let query: Vec<&str> = unique.iter().map(|&i| texts[i].as_ref()).collect();
            let fetched = self.backend.embed_texts(&query).and_then(|vs| {
                if vs.len() != query.len() {
                    return Err(EmbedError::BackendUnavailable(format!(
                        "asked for {} vectors, got {}",
                        query.len(),
                        vs.len()
                    )));
                }
                Ok(vs)
            });
            match fetched {
                Ok(vectors) => {
                    let mut cache = self.cache.write().unwrap();
                    for (&i, v) in unique.iter().zip(vectors) {
                        let result = self.check(v).map(|v| {
                            let v = Arc::clone(cache.entry(digests[i].clone()).or_insert_with(|| Arc::new(v)));
                            Embedding {
                                values: v,
                                source_text_hash: digests[i].clone(),
                            }
                        });
                        out[i] = Some(result);
                    }
                }
                Err(e) => {
                    for &i in &unique {
                        out[i] = Some(Err(e.clone()));
                    }
                }
            }
            for &i in &misses {
                if out[i].is_none() {
                    let first = first_of[digests[i].as_str()];
                    out[i] = out[first].clone();
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    fn check(&self, v: Vec<f64>) -> Result<Vec<f64>, EmbedError> {
        let expected = self.dimension();
        if v.len() != expected {
            return Err(EmbedError::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(v)
    }

    /// Loads cached vectors written by [`Embedder::save_cache`]. Files written
    /// under a different backend id are ignored. Returns entries loaded.
    pub fn load_cache(&self, path: &Path) -> Result<usize, EmbedError> {
        if !path.exists() {
            return Ok(0);
        }
        let (header_id, entries) = read_vector_file(path)?;
        if header_id.as_deref() != Some(self.backend_id()) {
            log::warn!(
                "ignoring embedding cache {} written for backend {:?}",
                path.display(),
                header_id
            );
            return Ok(0);
        }
        let mut cache = self.cache.write().unwrap();
        let mut n = 0;
        for (digest, v) in entries {
            let v = self.check(v)?;
            cache.insert(digest, Arc::new(v));
            n += 1;
        }
        Ok(n)
    }

    /// Writes every cached vector, sorted by digest.
    pub fn save_cache(&self, path: &Path) -> Result<(), EmbedError> {
        let cache = self.cache.read().unwrap();
        let mut entries: Vec<(&String, &Arc<Vec<f64>>)> = cache.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        write_vector_file(
            path,
            self.backend_id(),
            entries.into_iter().map(|(d, v)| (d.as_str(), v.as_slice())),
        )
    }
}

/// Record-per-line vector file: an optional `# backend=<id>` header, then
/// `<digest>\t<v1>\t...\t<vD>` lines.
pub fn write_vector_file<'a>(
    path: &Path,
    backend_id: &str,
    entries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<(), EmbedError> {
    let bad = |e: std::io::Error| EmbedError::BadFile {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp).map_err(bad)?);
    writeln!(w, "# backend={backend_id}").map_err(bad)?;
    for (digest, v) in entries {
        write!(w, "{digest}").map_err(bad)?;
        for x in v {
            write!(w, "\t{x}").map_err(bad)?;
        }
        writeln!(w).map_err(bad)?;
    }
    w.into_inner().map_err(|e| bad(e.into_error()))?.sync_all().map_err(bad)?;
    std::fs::rename(&tmp, path).map_err(bad)
}

type VectorFile = (Option<String>, Vec<(String, Vec<f64>)>);

fn read_vector_file(path: &Path) -> Result<VectorFile, EmbedError> {
    let bad = |message: String| EmbedError::BadFile {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut header_id = None;
    let mut entries = Vec::new();
    let mut dimension = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("backend=") {
                header_id = Some(id.to_string());
            }
            continue;
        }
        let mut fields = line.split('\t');
        let digest = fields.next().unwrap_or_default().to_string();
        let v: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        match dimension {
            None => dimension = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(EmbedError::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                })
            }
            _ => {}
        }
        entries.push((digest, v));
    }
    Ok((header_id, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Wrong;

    impl EmbeddingBackend for Wrong {
        fn id(&self) -> &str {
            "wrong"
        }
        fn dimension(&self) -> usize {
            4
        }
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
            Ok(texts.iter().map(|_| vec![0.0; 3]).collect())
        }
    }

    #[test]
    fn repeated_embed_is_bitwise_identical() {
        let e = Embedder::new(ToyBackend::new(8, 1, ToyGranularity::Text));
        let a = e.embed("a warm person").unwrap();
        let b = e.embed("a warm person").unwrap();
        assert_eq!(a.values.as_slice(), b.values.as_slice());
        let fresh = Embedder::new(ToyBackend::new(8, 1, ToyGranularity::Text));
        assert_eq!(fresh.embed("a warm person").unwrap().values.as_slice(), a.values.as_slice());
    }

    #[test]
    fn cache_hit_skips_backend() {
        let e = Embedder::new(ToyBackend::new(8, 1, ToyGranularity::Words));
        let a = e.embed("confident").unwrap();
        assert_eq!(e.backend_calls(), 1);
        let b = e.embed("confident").unwrap();
        assert_eq!(e.backend_calls(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let e = Embedder::new(Wrong);
        assert_eq!(
            e.embed("x").unwrap_err(),
            EmbedError::DimensionMismatch { expected: 4, actual: 3 }
        );
    }

    #[test]
    fn empty_text_is_rejected() {
        let e = Embedder::new(ToyBackend::new(8, 1, ToyGranularity::Words));
        assert_eq!(e.embed("   ").unwrap_err(), EmbedError::EmptyText);
        assert!(e.embed_batch::<&str>(&[]).is_empty());
    }

    #[test]
    fn batch_duplicates_share_one_vector() {
        let e = Embedder::new(ToyBackend::new(8, 3, ToyGranularity::Words));
        let out = e.embed_batch(&["kind", "kind"]);
        assert_eq!(out[0].as_ref().unwrap(), out[1].as_ref().unwrap());
        assert_eq!(e.backend_calls(), 1);
    }

    #[test]
    fn toy_vectors_are_unit_length() {
        let b = ToyBackend::new(16, 9, ToyGranularity::Words);
        for t in ["warm", "a skilled DJ", "123"] {
            let v = b.embed_texts(&[t]).unwrap().remove(0);
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // word granularity ignores case and punctuation
        assert_eq!(b.embed_texts(&["Warm!"]).unwrap(), b.embed_texts(&["warm"]).unwrap());
    }

    #[test]
    fn frozen_backend_misses_are_reported() {
        let f = FrozenBackend::from_entries("f", 2, [(text_digest("a"), vec![1.0, 0.0])]).unwrap();
        let e = Embedder::new(f);
        assert_eq!(e.embed("a").unwrap().as_slice(), &[1.0, 0.0]);
        assert!(matches!(e.embed("b"), Err(EmbedError::NotFrozen(_))));
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let e = Embedder::new(ToyBackend::new(8, 5, ToyGranularity::Words));
        let texts = ["friendly", "sincere person", "competent engineer"];
        let before: Vec<Embedding> = texts.iter().map(|t| e.embed(t).unwrap()).collect();
        e.save_cache(&path).unwrap();

        let reloaded = Embedder::new(ToyBackend::new(8, 5, ToyGranularity::Words));
        assert_eq!(reloaded.load_cache(&path).unwrap(), 3);
        for (t, v) in texts.iter().zip(&before) {
            assert_eq!(reloaded.embed(t).unwrap().as_slice(), v.as_slice());
        }
        assert_eq!(reloaded.backend_calls(), 0);

        let other = Embedder::new(ToyBackend::new(8, 6, ToyGranularity::Words));
        assert_eq!(other.load_cache(&path).unwrap(), 0);

        let frozen = FrozenBackend::load(&path).unwrap();
        assert_eq!(frozen.dimension(), 8);
        assert_eq!(frozen.len(), 3);
    }
}
