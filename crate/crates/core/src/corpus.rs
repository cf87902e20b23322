//! Benchmark manifest ingest, grid validation and color-tone verification.
//!
//! A manifest lists one row per image with its five controlled attributes.
//! A complete occupation holds every combination of 5 scenarios, 2 genders,
//! 6 races and 3 clothing colors: 180 images.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{Axis, Color, Gender, Level, Race};
use crate::error::AttributeError;

pub const SCENARIOS_PER_OCCUPATION: u8 = 5;
pub const IMAGES_PER_OCCUPATION: usize =
    SCENARIOS_PER_OCCUPATION as usize * Gender::ALL.len() * Race::ALL.len() * Color::ALL.len();

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest row {row}: {source}")]
    UnknownAttributeValue {
        row: usize,
        #[source]
        source: AttributeError,
    },
    #[error("manifest row {row}: scenario_index {value:?} is not an integer in 0..={max}", max = SCENARIOS_PER_OCCUPATION - 1)]
    ScenarioOutOfRange { row: usize, value: String },
    #[error("manifest row {row}: empty {field}")]
    EmptyField { row: usize, field: &'static str },
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("manifest row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("no white counterpart for {color} image {image_id:?}")]
    MissingCounterpart { image_id: String, color: &'static str },
    #[error("image {0:?} has no pixel uri")]
    MissingUri(String),
    #[error("cannot read image {uri:?}: {message}")]
    UnreadableImage { uri: String, message: String },
    #[error("white reference {uri:?} has zero mean in channel {channel}")]
    ZeroReference { uri: String, channel: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One benchmark image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub occupation: String,
    pub scenario_index: u8,
    pub gender: Gender,
    pub race: Race,
    pub color: Color,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
}

/// The attribute 5-tuple that identifies a grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageKey {
    pub occupation: String,
    pub scenario_index: u8,
    pub gender: Gender,
    pub race: Race,
    pub color: Color,
}

impl ImageRecord {
    pub fn key(&self) -> ImageKey {
        ImageKey {
            occupation: self.occupation.clone(),
            scenario_index: self.scenario_index,
            gender: self.gender,
            race: self.race,
            color: self.color,
        }
    }

    /// The value this image holds on `axis`.
    pub fn level(&self, axis: Axis) -> Level {
        match axis {
            Axis::Color => Level::Color(self.color),
            Axis::Gender => Level::Gender(self.gender),
            Axis::Race => Level::Race(self.race),
        }
    }

    /// Whether the image carries `level` on the level's axis.
    pub fn has_level(&self, level: Level) -> bool {
        self.level(level.axis()) == level
    }
}

impl ImageKey {
    /// Every grid cell of a complete occupation.
    pub fn full_grid(occupation: &str) -> impl Iterator<Item = ImageKey> + '_ {
        (0..SCENARIOS_PER_OCCUPATION).flat_map(move |scenario_index| {
            Gender::ALL.into_iter().flat_map(move |gender| {
                Race::ALL.into_iter().flat_map(move |race| {
                    Color::ALL.into_iter().map(move |color| ImageKey {
                        occupation: occupation.to_string(),
                        scenario_index,
                        gender,
                        race,
                        color,
                    })
                })
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    /// Delimited text with a header row.
    Delimited(u8),
    /// One JSON object per line.
    JsonLines,
}

impl ManifestFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("jsonl") | Some("ndjson") => ManifestFormat::JsonLines,
            Some("tsv") => ManifestFormat::Delimited(b'\t'),
            _ => ManifestFormat::Delimited(b','),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    image_id: String,
    occupation: String,
    scenario_index: serde_json::Value,
    gender: String,
    race: String,
    color: String,
    #[serde(default)]
    uri: Option<String>,
}

impl RawRow {
    fn normalize(self, row: usize) -> Result<ImageRecord, CorpusError> {
        fn attr<T>(row: usize, r: Result<T, AttributeError>) -> Result<T, CorpusError> {
            r.map_err(|source| CorpusError::UnknownAttributeValue { row, source })
        }
        let image_id = self.image_id.trim().to_string();
        if image_id.is_empty() {
            return Err(CorpusError::EmptyField { row, field: "image_id" });
        }
        let occupation = self.occupation.trim().to_string();
        if occupation.is_empty() {
            return Err(CorpusError::EmptyField { row, field: "occupation" });
        }
        let scenario_text = match &self.scenario_index {
            serde_json::Value::String(s) => s.trim().to_string(),
            other => other.to_string(),
        };
        let scenario_index = scenario_text
            .parse::<u8>()
            .ok()
            .filter(|s| *s < SCENARIOS_PER_OCCUPATION)
            .ok_or(CorpusError::ScenarioOutOfRange {
                row,
                value: scenario_text.clone(),
            })?;
        Ok(ImageRecord {
            image_id,
            occupation,
            scenario_index,
            gender: attr(row, self.gender.parse())?,
            race: attr(row, self.race.parse())?,
            color: attr(row, self.color.parse())?,
            uri: self.uri.map(|u| u.trim().to_string()).filter(|u| !u.is_empty()),
        })
    }
}

/// Reads and normalizes manifest rows. Race aliases such as
/// `African-American` and `Caucasian` map to their canonical levels.
pub fn load_manifest<R: Read>(source: R, format: ManifestFormat) -> Result<Vec<ImageRecord>, CorpusError> {
    let mut rows = Vec::new();
    match format {
        ManifestFormat::Delimited(delimiter) => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .trim(csv::Trim::Headers)
                .from_reader(source);
            for (i, row) in reader.deserialize::<RawRow>().enumerate() {
                let row_no = i + 1;
                let raw = row.map_err(|e| CorpusError::Malformed {
                    row: row_no,
                    message: e.to_string(),
                })?;
                rows.push(raw.normalize(row_no)?);
            }
        }
        ManifestFormat::JsonLines => {
            for (i, line) in BufReader::new(source).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row_no = i + 1;
                let raw: RawRow = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    row: row_no,
                    message: e.to_string(),
                })?;
                rows.push(raw.normalize(row_no)?);
            }
        }
    }
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.image_id.as_str()) {
            return Err(CorpusError::DuplicateImageId(r.image_id.clone()));
        }
    }
    Ok(rows)
}

pub fn load_manifest_path(path: &Path) -> Result<Vec<ImageRecord>, CorpusError> {
    let file = File::open(path)?;
    load_manifest(file, ManifestFormat::from_path(path))
}

/// Writes records as a comma-delimited manifest with the standard header.
pub fn write_manifest<W: std::io::Write>(records: &[ImageRecord], out: W) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_writer(out);
    let map = |e: csv::Error| CorpusError::Io(std::io::Error::other(e));
    writer
        .write_record(["image_id", "occupation", "scenario_index", "gender", "race", "color", "uri"])
        .map_err(map)?;
    for r in records {
        writer
            .write_record([
                r.image_id.as_str(),
                r.occupation.as_str(),
                &r.scenario_index.to_string(),
                r.gender.token(),
                r.race.token(),
                r.color.token(),
                r.uri.as_deref().unwrap_or(""),
            ])
            .map_err(map)?;
    }
    writer.flush()?;
    Ok(())
}

/// Grid-completeness findings for a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub total_images: usize,
    pub occupations_complete: usize,
    pub complete_occupations: Vec<String>,
    pub incomplete_occupations: Vec<String>,
    pub missing_keys: Vec<ImageKey>,
    pub duplicate_keys: Vec<ImageKey>,
}

impl ManifestReport {
    /// Missing plus duplicated cells.
    pub fn findings(&self) -> usize {
        self.missing_keys.len() + self.duplicate_keys.len()
    }

    pub fn is_clean(&self) -> bool {
        self.findings() == 0
    }
}

/// Checks every occupation present in `records` against the full attribute
/// grid. Findings are data; this never fails.
pub fn validate_manifest(records: &[ImageRecord]) -> ManifestReport {
    let mut by_occupation: BTreeMap<&str, BTreeMap<ImageKey, usize>> = BTreeMap::new();
    for r in records {
        *by_occupation
            .entry(r.occupation.as_str())
            .or_default()
            .entry(r.key())
            .or_default() += 1;
    }

    let mut report = ManifestReport {
        total_images: records.len(),
        occupations_complete: 0,
        complete_occupations: Vec::new(),
        incomplete_occupations: Vec::new(),
        missing_keys: Vec::new(),
        duplicate_keys: Vec::new(),
    };
    for (occupation, cells) in by_occupation {
        let missing: Vec<ImageKey> = ImageKey::full_grid(occupation)
            .filter(|k| !cells.contains_key(k))
            .collect();
        let duplicates: Vec<ImageKey> = cells
            .iter()
            .filter(|(_, n)| **n > 1)
            .map(|(k, _)| k.clone())
            .collect();
        if missing.is_empty() && duplicates.is_empty() {
            report.complete_occupations.push(occupation.to_string());
        } else {
            report.incomplete_occupations.push(occupation.to_string());
        }
        report.missing_keys.extend(missing);
        report.duplicate_keys.extend(duplicates);
    }
    report.occupations_complete = report.complete_occupations.len();
    report
}

/// Keeps only records whose occupation has a complete, duplicate-free grid.
pub fn restrict_to_complete(records: &[ImageRecord], report: &ManifestReport) -> Vec<ImageRecord> {
    let keep: HashSet<&str> = report.complete_occupations.iter().map(String::as_str).collect();
    records
        .iter()
        .filter(|r| keep.contains(r.occupation.as_str()))
        .cloned()
        .collect()
}

/// Source of per-image mean channel intensities.
pub trait PixelReader: Sync {
    /// Mean (R, G, B) over all pixels of the image at `uri`.
    fn mean_rgb(&self, uri: &str) -> Result<[f64; 3], CorpusError>;
}

/// Reads image files from disk; relative URIs resolve against `root`.
#[derive(Debug, Clone, Default)]
pub struct FilePixelReader {
    root: Option<PathBuf>,
}

impl FilePixelReader {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self { root }
    }

    pub fn resolve(&self, uri: &str) -> PathBuf {
        resolve_uri(self.root.as_deref(), uri)
    }
}

pub(crate) fn resolve_uri(root: Option<&Path>, uri: &str) -> PathBuf {
    let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

impl PixelReader for FilePixelReader {
    fn mean_rgb(&self, uri: &str) -> Result<[f64; 3], CorpusError> {
        let path = self.resolve(uri);
        let img = image::open(&path).map_err(|e| CorpusError::UnreadableImage {
            uri: uri.to_string(),
            message: e.to_string(),
        })?;
        Ok(mean_rgb_of(&img.to_rgb8()))
    }
}

pub fn mean_rgb_of(img: &image::RgbImage) -> [f64; 3] {
    let mut sums = [0u64; 3];
    for px in img.pixels() {
        for (s, v) in sums.iter_mut().zip(px.0) {
            *s += u64::from(v);
        }
    }
    let n = (img.width() as u64 * img.height() as u64).max(1) as f64;
    sums.map(|s| s as f64 / n)
}

/// Mean per-channel relative change of colored images against their
/// white-clothing counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneContrast {
    pub color: Color,
    pub n_pairs: usize,
    /// Percent change for (R, G, B); `None` when no pairs exist.
    pub change_percent: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneReport {
    pub contrasts: Vec<ToneContrast>,
}

/// Relative channel change of `colored` against `reference`, in percent.
pub fn channel_change(colored: [f64; 3], reference: [f64; 3]) -> Option<[f64; 3]> {
    if reference.iter().any(|&r| r == 0.0) {
        return None;
    }
    Some([0, 1, 2].map(|c| (colored[c] - reference[c]) / reference[c] * 100.0))
}

/// For red-vs-white and blue-vs-white, averages the per-pair percent change
/// of each channel mean over all matched pairs.
pub fn rgb_tone_check(records: &[ImageRecord], reader: &dyn PixelReader) -> Result<ToneReport, CorpusError> {
    let mut whites: HashMap<ImageKey, &ImageRecord> = HashMap::new();
    for r in records.iter().filter(|r| r.color == Color::White) {
        whites.insert(r.key(), r);
    }
    let cache: Mutex<HashMap<String, [f64; 3]>> = Mutex::new(HashMap::new());
    let read = |record: &ImageRecord| -> Result<(String, [f64; 3]), CorpusError> {
        let uri = record
            .uri
            .clone()
            .ok_or_else(|| CorpusError::MissingUri(record.image_id.clone()))?;
        if let Some(v) = cache.lock().unwrap().get(&uri) {
            return Ok((uri, *v));
        }
        let v = reader.mean_rgb(&uri)?;
        cache.lock().unwrap().insert(uri.clone(), v);
        Ok((uri, v))
    };

    let mut contrasts = Vec::new();
    for color in [Color::Red, Color::Blue] {
        let mut colored: Vec<&ImageRecord> = records.iter().filter(|r| r.color == color).collect();
        colored.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.image_id.cmp(&b.image_id)));
        let mut sums = [0.0f64; 3];
        for record in &colored {
            let white_key = ImageKey {
                color: Color::White,
                ..record.key()
            };
            let white = whites.get(&white_key).ok_or_else(|| CorpusError::MissingCounterpart {
                image_id: record.image_id.clone(),
                color: color.token(),
            })?;
            let (_, c_mean) = read(record)?;
            let (w_uri, w_mean) = read(white)?;
            let delta = match channel_change(c_mean, w_mean) {
                Some(d) => d,
                None => {
                    let channel = w_mean.iter().position(|&v| v == 0.0).unwrap_or(0);
                    return Err(CorpusError::ZeroReference { uri: w_uri, channel });
                }
            };
            for (s, d) in sums.iter_mut().zip(delta) {
                *s += d;
            }
        }
        let n = colored.len();
        contrasts.push(ToneContrast {
            color,
            n_pairs: n,
            change_percent: (n > 0).then(|| sums.map(|s| s / n as f64)),
        });
    }
    Ok(ToneReport { contrasts })
}

/// Distinct occupations in first-seen order.
pub fn occupations(records: &[ImageRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.occupation.clone()))
        .map(|r| r.occupation.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(occupation: &str) -> Vec<ImageRecord> {
        ImageKey::full_grid(occupation)
            .enumerate()
            .map(|(i, k)| ImageRecord {
                image_id: format!("{occupation}-{i:03}"),
                occupation: k.occupation,
                scenario_index: k.scenario_index,
                gender: k.gender,
                race: k.race,
                color: k.color,
                uri: None,
            })
            .collect()
    }

    #[test]
    fn alias_race_is_normalized_at_ingest() {
        let csv = "image_id,occupation,scenario_index,gender,race,color,uri\n\
                   a,dj,0,male,African-American,red,\n";
        let recs = load_manifest(csv.as_bytes(), ManifestFormat::Delimited(b',')).unwrap();
        assert_eq!(recs[0].race, Race::Black);
        assert_eq!(recs[0].uri, None);
    }

    #[test]
    fn duplicate_image_id_is_rejected() {
        let csv = "image_id,occupation,scenario_index,gender,race,color,uri\n\
                   a,dj,0,male,asian,red,\n\
                   a,dj,1,male,asian,red,\n";
        let err = load_manifest(csv.as_bytes(), ManifestFormat::Delimited(b',')).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateImageId(id) if id == "a"));
    }

    #[test]
    fn unknown_token_and_bad_scenario() {
        let csv = "image_id,occupation,scenario_index,gender,race,color,uri\n\
                   a,dj,0,male,asian,green,\n";
        let err = load_manifest(csv.as_bytes(), ManifestFormat::Delimited(b',')).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownAttributeValue { row: 1, .. }));

        let csv = "image_id,occupation,scenario_index,gender,race,color,uri\n\
                   a,dj,5,male,asian,red,\n";
        let err = load_manifest(csv.as_bytes(), ManifestFormat::Delimited(b',')).unwrap_err();
        assert!(matches!(err, CorpusError::ScenarioOutOfRange { .. }));
    }

    #[test]
    fn empty_source_gives_empty_list() {
        assert!(load_manifest("".as_bytes(), ManifestFormat::Delimited(b',')).unwrap().is_empty());
        assert!(load_manifest("".as_bytes(), ManifestFormat::JsonLines).unwrap().is_empty());
    }

    #[test]
    fn json_lines_manifest() {
        let src = r#"{"image_id":"x","occupation":"chef","scenario_index":3,"gender":"woman","race":"Caucasian","color":"blue","uri":"x.png"}"#;
        let recs = load_manifest(src.as_bytes(), ManifestFormat::JsonLines).unwrap();
        assert_eq!(recs[0].gender, Gender::Female);
        assert_eq!(recs[0].race, Race::White);
        assert_eq!(recs[0].scenario_index, 3);
        assert_eq!(recs[0].uri.as_deref(), Some("x.png"));
    }

    #[test]
    fn write_then_load_preserves_records() {
        let mut recs = grid("dj");
        recs[0].uri = Some("img/0.png".into());
        let mut buf = Vec::new();
        write_manifest(&recs, &mut buf).unwrap();
        let back = load_manifest(buf.as_slice(), ManifestFormat::Delimited(b',')).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn complete_grid_has_180_images() {
        let recs = grid("dj");
        assert_eq!(recs.len(), IMAGES_PER_OCCUPATION);
        let report = validate_manifest(&recs);
        assert_eq!(report.occupations_complete, 1);
        assert!(report.missing_keys.is_empty());
        assert_eq!(report.total_images, 180);
    }

    #[test]
    fn one_missing_cell_is_reported() {
        let mut recs = grid("dj");
        recs.retain(|r| !(r.color == Color::Blue && r.gender == Gender::Female && r.race == Race::Indian && r.scenario_index == 2));
        let report = validate_manifest(&recs);
        assert_eq!(report.occupations_complete, 0);
        assert_eq!(
            report.missing_keys,
            vec![ImageKey {
                occupation: "dj".into(),
                scenario_index: 2,
                gender: Gender::Female,
                race: Race::Indian,
                color: Color::Blue
            }]
        );
        assert_eq!(report.incomplete_occupations, vec!["dj".to_string()]);
    }

    #[test]
    fn duplicate_cell_makes_occupation_incomplete() {
        let mut recs = grid("dj");
        let mut extra = recs[0].clone();
        extra.image_id = "extra".into();
        recs.push(extra);
        let report = validate_manifest(&recs);
        assert_eq!(report.duplicate_keys.len(), 1);
        assert_eq!(report.occupations_complete, 0);
        assert!(restrict_to_complete(&recs, &report).is_empty());
    }

    #[test]
    fn empty_records() {
        let report = validate_manifest(&[]);
        assert_eq!(report.total_images, 0);
        assert_eq!(report.occupations_complete, 0);
        assert!(report.is_clean());
    }

    struct Fixed(HashMap<String, [f64; 3]>);

    impl PixelReader for Fixed {
        fn mean_rgb(&self, uri: &str) -> Result<[f64; 3], CorpusError> {
            self.0.get(uri).copied().ok_or_else(|| CorpusError::UnreadableImage {
                uri: uri.into(),
                message: "missing".into(),
            })
        }
    }

    #[test]
    fn missing_white_counterpart() {
        let mut recs = grid("dj");
        recs.retain(|r| !(r.color == Color::White && r.scenario_index == 0 && r.gender == Gender::Male && r.race == Race::Asian));
        for r in &mut recs {
            r.uri = Some(r.image_id.clone());
        }
        let reader = Fixed(recs.iter().map(|r| (r.image_id.clone(), [1.0, 1.0, 1.0])).collect());
        let err = rgb_tone_check(&recs, &reader).unwrap_err();
        assert!(matches!(err, CorpusError::MissingCounterpart { .. }));
    }

    #[test]
    fn tone_check_without_uris_is_unavailable() {
        let recs = grid("dj");
        let reader = Fixed(HashMap::new());
        assert!(matches!(rgb_tone_check(&recs, &reader), Err(CorpusError::MissingUri(_))));
    }

    #[test]
    fn zero_reference_channel() {
        assert_eq!(channel_change([1.0, 1.0, 1.0], [0.0, 1.0, 1.0]), None);
    }
}
