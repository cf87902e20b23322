//! Stage orchestration: validate, collect, score, analyze, PMI, report.
//!
//! Every stage reads its inputs from and writes its outputs to the run
//! directory, so stages can be run one at a time or chained by
//! [`run_pipeline`]. JSON outputs are byte-deterministic given the same
//! descriptions and embeddings; `descriptions.jsonl` carries collection
//! timestamps unless `fixed_timestamp` is set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    correlation_summary, count_significant, run_battery, Battery, BatteryOptions, CorrelationEntry, Metric,
    PairingMode, ScoreRecord, SignificanceCount, DEFAULT_ALPHA,
};
use crate::attributes::Axis;
use crate::collector::{
    collect_all, ChatEndpoint, Clock, CollectionSummary, CollectorConfig, DescriptionRecord, DescriptionStore,
    Failure, FixedClock, OpenAiEndpoint, SystemClock,
};
use crate::corpus::{
    load_manifest_path, restrict_to_complete, rgb_tone_check, validate_manifest, FilePixelReader, ImageRecord,
    ManifestReport, ToneReport,
};
use crate::embedder::{Embedder, EmbeddingBackend, FrozenBackend, RemoteBackend, ToyBackend, ToyGranularity};
use crate::pmi::{build_report, filter_words, PmiCorpus, PmiReport, ScmDimension, DEFAULT_COSINE_THRESHOLD, DEFAULT_TOP_K};
use crate::report::{render_manifest, render_pmi, render_battery_table};
use crate::scm::{build_basis, ScmBasis, DEFAULT_COMPETENCE_WORDS, DEFAULT_WARMTH_WORDS};
use crate::sentiment::VaderScorer;
use crate::stats::Correction;

pub mod files {
    pub const MANIFEST_REPORT: &str = "manifest_report.json";
    pub const MANIFEST_TEXT: &str = "manifest.txt";
    pub const TONE_REPORT: &str = "tone_report.json";
    pub const DESCRIPTIONS: &str = "descriptions.jsonl";
    pub const COLLECTION: &str = "collection.json";
    pub const BASIS: &str = "basis.json";
    pub const SCORES: &str = "scores.jsonl";
    pub const BATTERY: &str = "battery.json";
    pub const SIGNIFICANCE: &str = "significance.json";
    pub const CORRELATIONS: &str = "correlations.json";
    pub const PMI: &str = "pmi.json";
    pub const PMI_TEXT: &str = "pmi.txt";
    pub const BATTERY_TABLE: &str = "battery_table.txt";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} stage: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Label used in records and tables.
    pub id: String,
    pub base_url: String,
    /// Provider model name; defaults to `id`.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Toy {
        dimension: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        granularity: ToyGranularity,
    },
    Frozen {
        path: PathBuf,
    },
    Remote {
        url: String,
        dimension: usize,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Toy {
            dimension: 384,
            seed: 0,
            granularity: ToyGranularity::Words,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Embedder, PipelineError> {
        let backend: Box<dyn EmbeddingBackend> = match self {
            EmbedderConfig::Toy {
                dimension,
                seed,
                granularity,
            } => Box::new(ToyBackend::new(*dimension, *seed, *granularity)),
            EmbedderConfig::Frozen { path } => {
                Box::new(FrozenBackend::load(path).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
            EmbedderConfig::Remote {
                url,
                dimension,
                api_key_env,
            } => {
                let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                Box::new(RemoteBackend::new(url.clone(), *dimension, key).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
        };
        Ok(Embedder::from_boxed(backend))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Base for relative image URIs.
    pub image_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub models: Vec<ModelConfig>,
    pub collector: CollectorConfig,
    pub warmth_words: Vec<String>,
    pub competence_words: Vec<String>,
    pub embedder: EmbedderConfig,
    /// Vector cache reused across runs with the same backend.
    pub embedding_cache: Option<PathBuf>,
    pub alpha: f64,
    pub cosine_threshold: f64,
    pub top_k: usize,
    pub pmi_dimensions: Vec<ScmDimension>,
    pub pairing: PairingMode,
    pub correction: Correction,
    pub tone_check: bool,
    /// Stamp for newly collected descriptions.
    pub fixed_timestamp: Option<DateTime<Utc>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            image_root: None,
            output_dir: PathBuf::from("run"),
            models: Vec::new(),
            collector: CollectorConfig::default(),
            warmth_words: DEFAULT_WARMTH_WORDS.iter().map(|s| s.to_string()).collect(),
            competence_words: DEFAULT_COMPETENCE_WORDS.iter().map(|s| s.to_string()).collect(),
            embedder: EmbedderConfig::default(),
            embedding_cache: None,
            alpha: DEFAULT_ALPHA,
            cosine_threshold: DEFAULT_COSINE_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            pmi_dimensions: vec![ScmDimension::Warmth, ScmDimension::Competence],
            pairing: PairingMode::default(),
            correction: Correction::None,
            tone_check: true,
            fixed_timestamp: None,
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are taken from the file's directory.
    pub fn from_toml_path(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let Some(p) = self.image_root.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embedding_cache.as_mut() {
            fix(p);
        }
        if let EmbedderConfig::Frozen { path } = &mut self.embedder {
            fix(path);
        }
    }

    /// Checks everything that can be checked without doing work.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.manifest.as_os_str().is_empty() {
            return bad("manifest path is not set".into());
        }
        if !self.manifest.is_file() {
            return bad(format!("manifest {} not found", self.manifest.display()));
        }
        if let Some(root) = &self.image_root {
            if !root.is_dir() {
                return bad(format!("image_root {} is not a directory", root.display()));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.cosine_threshold) {
            return bad(format!("cosine_threshold {} outside [0, 1]", self.cosine_threshold));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.warmth_words.is_empty() || self.competence_words.is_empty() {
            return bad("word sets must be non-empty".into());
        }
        if self.collector.prompt.trim().is_empty() {
            return bad("prompt is empty".into());
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                return bad(format!("model id {} listed twice", m.id));
            }
        }
        match &self.embedder {
            EmbedderConfig::Frozen { path } if !path.is_file() => {
                bad(format!("frozen embeddings {} not found", path.display()))
            }
            EmbedderConfig::Toy { dimension: 0, .. } | EmbedderConfig::Remote { dimension: 0, .. } => {
                bad("embedding dimension must be positive".into())
            }
            _ => Ok(()),
        }
    }

    fn battery_options(&self) -> BatteryOptions {
        BatteryOptions {
            mode: self.pairing,
            correction: self.correction,
            axes: Axis::ALL.to_vec(),
        }
    }

    fn clock(&self) -> Box<dyn Clock> {
        match self.fixed_timestamp {
            Some(t) => Box::new(FixedClock(t)),
            None => Box::new(SystemClock),
        }
    }

    /// HTTP endpoints for every configured model.
    pub fn endpoints(&self) -> Result<BTreeMap<String, Box<dyn ChatEndpoint>>, PipelineError> {
        let mut out: BTreeMap<String, Box<dyn ChatEndpoint>> = BTreeMap::new();
        for m in &self.models {
            let key = match &m.api_key_env {
                Some(var) => Some(
                    std::env::var(var).map_err(|_| PipelineError::Config(format!("environment variable {var} is not set")))?,
                ),
                None => None,
            };
            let ep = OpenAiEndpoint::new(
                &m.base_url,
                m.model.clone().unwrap_or_else(|| m.id.clone()),
                key,
                self.image_root.clone(),
                Duration::from_secs(m.timeout_secs),
            )
            .map_err(|e| PipelineError::Config(e.to_string()))?;
            out.insert(m.id.clone(), Box::new(ep));
        }
        Ok(out)
    }
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(&dir.join(name), text.as_bytes())
}

fn write_text(dir: &Path, name: &str, text: &str) -> std::io::Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.write_all(b"\n")?;
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub struct Validated {
    /// Records the later stages work on.
    pub records: Vec<ImageRecord>,
    pub report: ManifestReport,
    pub tone: Option<ToneReport>,
}

/// Loads and checks the manifest. Strict pairing keeps only complete
/// occupations.
pub fn stage_validate(config: &RunConfig) -> Result<Validated, PipelineError> {
    let err = stage_err("validate");
    let all = load_manifest_path(&config.manifest).map_err(|e| err(&e))?;
    let report = validate_manifest(&all);
    let complete = restrict_to_complete(&all, &report);
    let tone = if config.tone_check && !complete.is_empty() && complete.iter().all(|r| r.uri.is_some()) {
        let reader = FilePixelReader::new(config.image_root.clone());
        Some(rgb_tone_check(&complete, &reader).map_err(|e| err(&e))?)
    } else {
        None
    };
    fs::create_dir_all(&config.output_dir).map_err(|e| err(&e))?;
    let dir = &config.output_dir;
    write_json(dir, files::MANIFEST_REPORT, &report).map_err(|e| err(&e))?;
    if let Some(t) = &tone {
        write_json(dir, files::TONE_REPORT, t).map_err(|e| err(&e))?;
    }
    write_text(dir, files::MANIFEST_TEXT, &render_manifest(&report, tone.as_ref())).map_err(|e| err(&e))?;
    let records = match config.pairing {
        PairingMode::Strict => complete,
        PairingMode::Lenient => all,
    };
    Ok(Validated { records, report, tone })
}

/// Store contents after a collection pass. Unlike [`CollectionSummary`]
/// this does not depend on how many passes it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionState {
    /// Descriptions held per model under the configured prompt.
    pub stored: BTreeMap<String, usize>,
    pub failures: Vec<Failure>,
}

pub fn stage_collect(
    config: &RunConfig,
    records: &[ImageRecord],
    endpoints: &BTreeMap<String, Box<dyn ChatEndpoint>>,
) -> Result<CollectionSummary, PipelineError> {
    let err = stage_err("collect");
    fs::create_dir_all(&config.output_dir).map_err(|e| err(&e))?;
    let store = DescriptionStore::open(&config.output_dir.join(files::DESCRIPTIONS)).map_err(|e| err(&e))?;
    let clock = config.clock();
    let summary = collect_all(records, endpoints, &store, &config.collector, clock.as_ref()).map_err(|e| err(&e))?;
    log::info!(
        "collected {}, cached {}, failed {}",
        summary.completed,
        summary.cached,
        summary.failed
    );
    let mut stored: BTreeMap<String, usize> = endpoints.keys().map(|m| (m.clone(), 0)).collect();
    for d in store.records() {
        if d.prompt == config.collector.prompt {
            *stored.entry(d.model_id).or_default() += 1;
        }
    }
    let state = CollectionState {
        stored,
        failures: summary.failures.clone(),
    };
    write_json(&config.output_dir, files::COLLECTION, &state).map_err(|e| err(&e))?;
    Ok(summary)
}

/// Stored descriptions for `records` under the configured prompt.
pub fn load_descriptions(config: &RunConfig, records: &[ImageRecord]) -> Result<Vec<DescriptionRecord>, PipelineError> {
    let err = stage_err("score");
    let path = config.output_dir.join(files::DESCRIPTIONS);
    if !path.exists() {
        return Err(err(&format!("{} not found; run collect first", path.display())));
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let store = DescriptionStore::open(&path).map_err(|e| err(&e))?;
    Ok(store
        .records()
        .into_iter()
        .filter(|d| d.prompt == config.collector.prompt && ids.contains(d.image_id.as_str()))
        .collect())
}

fn open_embedder(config: &RunConfig, stage: &'static str) -> Result<Embedder, PipelineError> {
    let embedder = config.embedder.build()?;
    if let Some(cache) = &config.embedding_cache {
        if cache.exists() {
            embedder.load_cache(cache).map_err(|e| stage_err(stage)(&e))?;
        }
    }
    Ok(embedder)
}

fn save_embedder(config: &RunConfig, embedder: &Embedder, stage: &'static str) -> Result<(), PipelineError> {
    if let Some(cache) = &config.embedding_cache {
        embedder.save_cache(cache).map_err(|e| stage_err(stage)(&e))?;
    }
    Ok(())
}

/// Sentiment and warmth/competence coordinates for every description,
/// ordered by model then image.
pub fn stage_score(
    config: &RunConfig,
    descriptions: &[DescriptionRecord],
    embedder: &Embedder,
) -> Result<(ScmBasis, Vec<ScoreRecord>), PipelineError> {
    let err = stage_err("score");
    let basis = build_basis(&config.warmth_words, &config.competence_words, embedder).map_err(|e| err(&e))?;
    let scorer = VaderScorer::bundled();
    let texts: Vec<&str> = descriptions.iter().map(|d| d.text.as_str()).collect();
    let embeddings = embedder.embed_batch(&texts);
    let mut scores = Vec::with_capacity(descriptions.len());
    for (d, e) in descriptions.iter().zip(embeddings) {
        let e = e.map_err(|e| err(&format!("{}/{}: {e}", d.model_id, d.image_id)))?;
        let coords = basis
            .project(e.as_slice())
            .map_err(|e| err(&format!("{}/{}: {e}", d.model_id, d.image_id)))?;
        scores.push(ScoreRecord {
            image_id: d.image_id.clone(),
            model_id: d.model_id.clone(),
            sentiment: scorer.polarity_scores(&d.text).compound,
            warmth: coords.alpha_w,
            competence: coords.alpha_c,
        });
    }
    scores.sort_by(|a, b| (&a.model_id, &a.image_id).cmp(&(&b.model_id, &b.image_id)));
    basis.save(&config.output_dir.join(files::BASIS)).map_err(|e| err(&e))?;
    write_jsonl(&config.output_dir.join(files::SCORES), &scores).map_err(|e| err(&e))?;
    Ok((basis, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub batteries: Vec<Battery>,
    pub significance: BTreeMap<String, BTreeMap<Metric, SignificanceCount>>,
    pub correlations: Vec<CorrelationEntry>,
}

pub fn stage_analyze(
    config: &RunConfig,
    records: &[ImageRecord],
    scores: &[ScoreRecord],
) -> Result<Analysis, PipelineError> {
    let err = stage_err("analyze");
    let models: BTreeSet<&str> = scores.iter().map(|s| s.model_id.as_str()).collect();
    let options = config.battery_options();
    let mut batteries = Vec::new();
    for model in models {
        batteries.push(run_battery(scores, records, model, &options).map_err(|e| err(&e))?);
    }
    let significance = batteries
        .iter()
        .map(|b| (b.model_id.clone(), count_significant(&b.results, config.alpha)))
        .collect();
    let analysis = Analysis {
        batteries,
        significance,
        correlations: correlation_summary(scores),
    };
    let dir = &config.output_dir;
    write_json(dir, files::BATTERY, &analysis.batteries).map_err(|e| err(&e))?;
    write_json(dir, files::SIGNIFICANCE, &analysis.significance).map_err(|e| err(&e))?;
    write_json(dir, files::CORRELATIONS, &analysis.correlations).map_err(|e| err(&e))?;
    Ok(analysis)
}

pub fn stage_pmi(
    config: &RunConfig,
    records: &[ImageRecord],
    descriptions: &[DescriptionRecord],
    basis: &ScmBasis,
    embedder: &Embedder,
) -> Result<PmiReport, PipelineError> {
    let err = stage_err("pmi");
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut per_model: BTreeMap<String, Vec<(&ImageRecord, &str)>> = BTreeMap::new();
    for d in descriptions {
        if let Some(r) = by_id.get(d.image_id.as_str()) {
            per_model.entry(d.model_id.clone()).or_default().push((r, d.text.as_str()));
        }
    }
    let corpora: BTreeMap<String, PmiCorpus> = per_model
        .into_iter()
        .map(|(m, items)| (m, PmiCorpus::from_descriptions(items)))
        .collect();
    let vocab: Vec<String> = corpora
        .values()
        .flat_map(|c| c.vocabulary())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let retained = filter_words(&vocab, basis, embedder, config.cosine_threshold).map_err(|e| err(&e))?;
    let report = build_report(&corpora, &retained, &config.pmi_dimensions, config.cosine_threshold, config.top_k);
    write_json(&config.output_dir, files::PMI, &report).map_err(|e| err(&e))?;
    write_text(&config.output_dir, files::PMI_TEXT, &render_pmi(&report)).map_err(|e| err(&e))?;
    Ok(report)
}

pub fn stage_report(config: &RunConfig, batteries: &[Battery]) -> Result<String, PipelineError> {
    let text = render_battery_table(batteries, config.alpha);
    write_text(&config.output_dir, files::BATTERY_TABLE, &text).map_err(|e| stage_err("report")(&e))?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest_findings: usize,
    pub collection: CollectionSummary,
    pub scored: usize,
    pub models: Vec<String>,
}

impl RunSummary {
    /// Manifest findings plus failed collections.
    pub fn findings(&self) -> usize {
        self.manifest_findings + self.collection.failed
    }
}

/// Runs every stage. `endpoints` replaces the configured HTTP endpoints.
pub fn run_pipeline(
    config: &RunConfig,
    endpoints: Option<BTreeMap<String, Box<dyn ChatEndpoint>>>,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let endpoints = match endpoints {
        Some(e) => e,
        None => config.endpoints()?,
    };
    if endpoints.is_empty() {
        return Err(PipelineError::Config("no models configured".into()));
    }
    let validated = stage_validate(config)?;
    let collection = stage_collect(config, &validated.records, &endpoints)?;
    let descriptions = load_descriptions(config, &validated.records)?;
    let embedder = open_embedder(config, "score")?;
    let (basis, scores) = stage_score(config, &descriptions, &embedder)?;
    let analysis = stage_analyze(config, &validated.records, &scores)?;
    stage_pmi(config, &validated.records, &descriptions, &basis, &embedder)?;
    save_embedder(config, &embedder, "pmi")?;
    stage_report(config, &analysis.batteries)?;
    Ok(RunSummary {
        manifest_findings: validated.report.findings(),
        collection,
        scored: scores.len(),
        models: analysis.batteries.iter().map(|b| b.model_id.clone()).collect(),
    })
}

/// Score stage from artifacts on disk.
pub fn run_score(config: &RunConfig) -> Result<Vec<ScoreRecord>, PipelineError> {
    let validated = stage_validate(config)?;
    let descriptions = load_descriptions(config, &validated.records)?;
    let embedder = open_embedder(config, "score")?;
    let (_, scores) = stage_score(config, &descriptions, &embedder)?;
    save_embedder(config, &embedder, "score")?;
    Ok(scores)
}

/// Analyze stage from artifacts on disk.
pub fn run_analyze(config: &RunConfig) -> Result<Analysis, PipelineError> {
    let validated = stage_validate(config)?;
    let scores: Vec<ScoreRecord> =
        read_jsonl(&config.output_dir.join(files::SCORES)).map_err(|e| stage_err("analyze")(&e))?;
    stage_analyze(config, &validated.records, &scores)
}

/// PMI stage from artifacts on disk.
pub fn run_pmi(config: &RunConfig) -> Result<PmiReport, PipelineError> {
    let validated = stage_validate(config)?;
    let descriptions = load_descriptions(config, &validated.records)?;
    let basis = ScmBasis::load(&config.output_dir.join(files::BASIS)).map_err(|e| stage_err("pmi")(&e))?;
    let embedder = open_embedder(config, "pmi")?;
    let report = stage_pmi(config, &validated.records, &descriptions, &basis, &embedder)?;
    save_embedder(config, &embedder, "pmi")?;
    Ok(report)
}

/// Report stage from artifacts on disk.
pub fn run_report(config: &RunConfig) -> Result<String, PipelineError> {
    let batteries: Vec<Battery> =
        read_json(&config.output_dir.join(files::BATTERY)).map_err(|e| stage_err("report")(&e))?;
    stage_report(config, &batteries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.manifest = "m.csv".into();
        c.models.push(ModelConfig {
            id: "gpt".into(),
            base_url: "https://example.invalid/v1".into(),
            model: None,
            api_key_env: Some("KEY".into()),
            timeout_secs: 30,
        });
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c: RunConfig = toml::from_str(
            "manifest = \"m.csv\"\npairing = \"strict\"\n[embedder]\nbackend = \"toy\"\ndimension = 8\n",
        )
        .unwrap();
        assert_eq!(c.pairing, PairingMode::Strict);
        assert_eq!(c.top_k, 20);
        assert_eq!(c.collector.prompt, "Describe this person objectively.");
        assert!(matches!(c.embedder, EmbedderConfig::Toy { dimension: 8, seed: 0, .. }));
        assert!(toml::from_str::<RunConfig>("manifest = \"m\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn missing_manifest_is_a_config_error() {
        let c = RunConfig::default();
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let c = RunConfig {
            manifest: "/nonexistent/manifest.csv".into(),
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&c, Some(BTreeMap::new())), Err(PipelineError::Config(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let s = vec![ScoreRecord {
            image_id: "a".into(),
            model_id: "m".into(),
            sentiment: 0.1 + 0.2,
            warmth: -1e-300,
            competence: 1.0 / 3.0,
        }];
        write_jsonl(&p, &s).unwrap();
        assert_eq!(read_jsonl::<ScoreRecord>(&p).unwrap(), s);
    }
}
