//! Counterfactual pairing and the paired t-test battery.
//!
//! A pair is two images that agree on occupation, scenario and the two
//! non-target attributes and differ only on the target axis. Every unordered
//! pair of levels on every axis is one contrast: 3 for color, 1 for gender,
//! 15 for race. Each contrast is tested on every metric.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{Axis, Color, Gender, Level, Race};
use crate::corpus::{ImageKey, ImageRecord};
use crate::stats::{adjust_p_values, paired_t_test, pearson, Correction, Correlation, StatsError};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("level {level} does not belong to axis {axis}")]
    UnknownLevel { axis: Axis, level: Level },
    #[error("contrast compares {0} with itself")]
    SameLevel(Level),
    #[error("no counterpart for {present:?} on {axis}")]
    IncompleteGrid { axis: Axis, present: ImageKey },
    #[error("more than one image for {0:?}")]
    AmbiguousContext(ImageKey),
    #[error("no {model_id} score for image {image_id}")]
    MissingScores { image_id: String, model_id: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sentiment,
    Competence,
    Warmth,
}

impl Metric {
    /// Report order.
    pub const ALL: [Metric; 3] = [Metric::Sentiment, Metric::Competence, Metric::Warmth];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Sentiment => "Sentiment",
            Metric::Competence => "Competence",
            Metric::Warmth => "Warmth",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Sentiment => "sentiment",
            Metric::Competence => "competence",
            Metric::Warmth => "warmth",
        })
    }
}

/// The three metric values of one description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub model_id: String,
    pub sentiment: f64,
    pub warmth: f64,
    pub competence: f64,
}

impl ScoreRecord {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Sentiment => self.sentiment,
            Metric::Warmth => self.warmth,
            Metric::Competence => self.competence,
        }
    }
}

/// `level_a` versus `level_b` on one axis; statistics are signed `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawContrast", into = "RawContrast")]
pub struct Contrast {
    axis: Axis,
    level_a: Level,
    level_b: Level,
}

impl Contrast {
    pub fn new(axis: Axis, level_a: Level, level_b: Level) -> Result<Self, AnalysisError> {
        for level in [level_a, level_b] {
            if level.axis() != axis {
                return Err(AnalysisError::UnknownLevel { axis, level });
            }
        }
        if level_a == level_b {
            return Err(AnalysisError::SameLevel(level_a));
        }
        Ok(Self { axis, level_a, level_b })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn level_a(&self) -> Level {
        self.level_a
    }

    pub fn level_b(&self) -> Level {
        self.level_b
    }

    pub fn reversed(&self) -> Self {
        Self {
            axis: self.axis,
            level_a: self.level_b,
            level_b: self.level_a,
        }
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} vs {}", self.level_a.label(), self.level_b.label())
    }
}

#[derive(Serialize, Deserialize)]
struct RawContrast {
    axis: Axis,
    level_a: String,
    level_b: String,
}

impl From<Contrast> for RawContrast {
    fn from(c: Contrast) -> Self {
        RawContrast {
            axis: c.axis,
            level_a: c.level_a.token().to_string(),
            level_b: c.level_b.token().to_string(),
        }
    }
}

impl TryFrom<RawContrast> for Contrast {
    type Error = String;

    fn try_from(raw: RawContrast) -> Result<Self, String> {
        let a = Level::parse(raw.axis, &raw.level_a).map_err(|e| e.to_string())?;
        let b = Level::parse(raw.axis, &raw.level_b).map_err(|e| e.to_string())?;
        Contrast::new(raw.axis, a, b).map_err(|e| e.to_string())
    }
}

/// Every unordered level pair of each axis, in report order.
pub fn enumerate_tests(axes: &[Axis]) -> Vec<Contrast> {
    let mut out = Vec::new();
    for &axis in axes {
        let levels = axis.levels();
        for i in 0..levels.len() {
            for j in i + 1..levels.len() {
                out.push(Contrast {
                    axis,
                    level_a: levels[i],
                    level_b: levels[j],
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// A context holding only one side of a contrast is an error.
    Strict,
    /// Unmatched contexts and pairs without scores are dropped.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Context {
    occupation: String,
    scenario_index: u8,
    gender: Option<Gender>,
    race: Option<Race>,
    color: Option<Color>,
}

fn context_of(r: &ImageRecord, axis: Axis) -> Context {
    Context {
        occupation: r.occupation.clone(),
        scenario_index: r.scenario_index,
        gender: (axis != Axis::Gender).then_some(r.gender),
        race: (axis != Axis::Race).then_some(r.race),
        color: (axis != Axis::Color).then_some(r.color),
    }
}

/// Matched `(image_id_a, image_id_b)` pairs sorted by context.
pub fn build_pairs(
    records: &[ImageRecord],
    contrast: &Contrast,
    mode: PairingMode,
) -> Result<Vec<(String, String)>, AnalysisError> {
    let axis = contrast.axis;
    let mut slots: BTreeMap<Context, (Vec<&ImageRecord>, Vec<&ImageRecord>)> = BTreeMap::new();
    for r in records {
        let level = r.level(axis);
        if level == contrast.level_a {
            slots.entry(context_of(r, axis)).or_default().0.push(r);
        } else if level == contrast.level_b {
            slots.entry(context_of(r, axis)).or_default().1.push(r);
        }
    }
    let mut pairs = Vec::new();
    for (a, b) in slots.into_values() {
        match (a.as_slice(), b.as_slice()) {
            ([x], [y]) => pairs.push((x.image_id.clone(), y.image_id.clone())),
            _ if mode == PairingMode::Lenient => {}
            ([], [only]) | ([only], []) => {
                return Err(AnalysisError::IncompleteGrid {
                    axis,
                    present: only.key(),
                })
            }
            (many, _) | (_, many) if many.len() > 1 => {
                return Err(AnalysisError::AmbiguousContext(many[0].key()))
            }
            _ => unreachable!("a context holds at least one image"),
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    /// `*` below 0.05, `**` below 0.01, `***` below 0.001.
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Stars::Three
        } else if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

/// One metric on one contrast for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub metric: Metric,
    pub contrast: Contrast,
    pub n_pairs: usize,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    /// Present only when a family-wise correction was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
    pub stars: Stars,
    /// Why no statistic could be computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
}

impl PairedTestResult {
    /// The p-value significance is judged on.
    pub fn effective_p(&self) -> Option<f64> {
        self.p_adjusted.or(self.p_value)
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.is_some()
    }

    pub fn is_significant(&self, alpha: f64) -> bool {
        self.effective_p().is_some_and(|p| p < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryOptions {
    pub mode: PairingMode,
    pub correction: Correction,
    pub axes: Vec<Axis>,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            mode: PairingMode::Lenient,
            correction: Correction::None,
            axes: Axis::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub model_id: String,
    pub correction: Correction,
    pub n_contrasts: usize,
    pub results: Vec<PairedTestResult>,
}

/// Runs every metric on every contrast for `model_id`, metric-major.
/// Contrasts whose test cannot be computed are kept with a `degenerate`
/// reason.
pub fn run_battery(
    scores: &[ScoreRecord],
    records: &[ImageRecord],
    model_id: &str,
    options: &BatteryOptions,
) -> Result<Battery, AnalysisError> {
    let by_image: HashMap<&str, &ScoreRecord> = scores
        .iter()
        .filter(|s| s.model_id == model_id)
        .map(|s| (s.image_id.as_str(), s))
        .collect();
    let contrasts = enumerate_tests(&options.axes);

    let mut paired: Vec<Vec<(&ScoreRecord, &ScoreRecord)>> = Vec::with_capacity(contrasts.len());
    for contrast in &contrasts {
        let mut matched = Vec::new();
        for (a, b) in build_pairs(records, contrast, options.mode)? {
            match (by_image.get(a.as_str()), by_image.get(b.as_str())) {
                (Some(sa), Some(sb)) => matched.push((*sa, *sb)),
                _ if options.mode == PairingMode::Lenient => {}
                (None, _) => return Err(missing(a, model_id)),
                (_, None) => return Err(missing(b, model_id)),
            }
        }
        paired.push(matched);
    }

    let mut results = Vec::with_capacity(Metric::ALL.len() * contrasts.len());
    for metric in Metric::ALL {
        let mut block: Vec<PairedTestResult> = contrasts
            .iter()
            .zip(&paired)
            .map(|(contrast, pairs)| {
                let a: Vec<f64> = pairs.iter().map(|(x, _)| x.value(metric)).collect();
                let b: Vec<f64> = pairs.iter().map(|(_, y)| y.value(metric)).collect();
                match paired_t_test(&a, &b) {
                    Ok(t) => PairedTestResult {
                        metric,
                        contrast: *contrast,
                        n_pairs: pairs.len(),
                        t_stat: Some(t.t),
                        p_value: Some(t.p),
                        p_adjusted: None,
                        stars: Stars::from_p(t.p),
                        degenerate: None,
                    },
                    Err(e) => PairedTestResult {
                        metric,
                        contrast: *contrast,
                        n_pairs: pairs.len(),
                        t_stat: None,
                        p_value: None,
                        p_adjusted: None,
                        stars: Stars::None,
                        degenerate: Some(e.to_string()),
                    },
                }
            })
            .collect();
        if options.correction != Correction::None {
            let idx: Vec<usize> = (0..block.len()).filter(|&i| block[i].p_value.is_some()).collect();
            let raw: Vec<f64> = idx.iter().map(|&i| block[i].p_value.unwrap()).collect();
            for (&i, adj) in idx.iter().zip(adjust_p_values(&raw, options.correction)) {
                block[i].p_adjusted = Some(adj);
                block[i].stars = Stars::from_p(adj);
            }
        }
        results.extend(block);
    }
    Ok(Battery {
        model_id: model_id.to_string(),
        correction: options.correction,
        n_contrasts: contrasts.len(),
        results,
    })
}

fn missing(image_id: String, model_id: &str) -> AnalysisError {
    AnalysisError::MissingScores {
        image_id,
        model_id: model_id.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceCount {
    pub significant: usize,
    pub total: usize,
}

impl fmt::Display for SignificanceCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.significant, self.total)
    }
}

/// Results with p below `alpha`, per metric. Degenerate contrasts count
/// toward the total but never as significant.
pub fn count_significant(results: &[PairedTestResult], alpha: f64) -> BTreeMap<Metric, SignificanceCount> {
    let mut out = BTreeMap::new();
    for r in results {
        let c = out.entry(r.metric).or_insert(SignificanceCount {
            significant: 0,
            total: 0,
        });
        c.total += 1;
        if r.is_significant(alpha) {
            c.significant += 1;
        }
    }
    out
}

/// Pearson correlation between two metrics over all score records.
pub fn metric_correlation(scores: &[ScoreRecord], x: Metric, y: Metric) -> Result<Correlation, AnalysisError> {
    let xs: Vec<f64> = scores.iter().map(|s| s.value(x)).collect();
    let ys: Vec<f64> = scores.iter().map(|s| s.value(y)).collect();
    Ok(pearson(&xs, &ys)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    /// `None` for the pooled correlation over all models.
    pub model_id: Option<String>,
    pub metric_x: Metric,
    pub metric_y: Metric,
    pub correlation: Option<Correlation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Pooled and per-model correlations for every metric pair.
pub fn correlation_summary(scores: &[ScoreRecord]) -> Vec<CorrelationEntry> {
    let pairs = [
        (Metric::Sentiment, Metric::Competence),
        (Metric::Sentiment, Metric::Warmth),
        (Metric::Competence, Metric::Warmth),
    ];
    let mut models: Vec<&str> = scores.iter().map(|s| s.model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();

    let mut groups: Vec<(Option<String>, Vec<ScoreRecord>)> = vec![(None, scores.to_vec())];
    for m in models {
        groups.push((
            Some(m.to_string()),
            scores.iter().filter(|s| s.model_id == m).cloned().collect(),
        ));
    }
    let mut out = Vec::new();
    for (model_id, group) in groups {
        for (x, y) in pairs {
            let (correlation, error) = match metric_correlation(&group, x, y) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(CorrelationEntry {
                model_id: model_id.clone(),
                metric_x: x,
                metric_y: y,
                correlation,
                error,
            });
        }
    }
    out
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

    fn contrast(axis: Axis, a: Level, b: Level) -> Contrast {
        Contrast::new(axis, a, b).unwrap()
    }

    #[test]
    fn nineteen_contrasts_by_default() {
        let all = enumerate_tests(&Axis::ALL);
        assert_eq!(all.len(), 19);
        assert_eq!(enumerate_tests(&[Axis::Color]).len(), 3);
        assert_eq!(enumerate_tests(&[Axis::Gender]).len(), 1);
        assert_eq!(enumerate_tests(&[Axis::Race]).len(), 15);
        assert_eq!(all[0].to_string(), "Blue vs Red");
        assert_eq!(all[1].to_string(), "Blue vs White");
        assert_eq!(all[2].to_string(), "Red vs White");
        assert_eq!(all[3].to_string(), "Male vs Female");
        assert_eq!(all[4].to_string(), "Asian vs Black");
        assert_eq!(all[18].to_string(), "M.E. vs White");
    }

    #[test]
    fn pair_counts_on_a_complete_grid() {
        let recs = grid("dj");
        let g = build_pairs(
            &recs,
            &contrast(Axis::Gender, Level::Gender(Gender::Male), Level::Gender(Gender::Female)),
            PairingMode::Strict,
        )
        .unwrap();
        assert_eq!(g.len(), 5 * 6 * 3);
        let c = build_pairs(
            &recs,
            &contrast(Axis::Color, Level::Color(Color::Blue), Level::Color(Color::Red)),
            PairingMode::Strict,
        )
        .unwrap();
        assert_eq!(c.len(), 5 * 2 * 6);
        let by_id: HashMap<&str, &ImageRecord> = recs.iter().map(|r| (r.image_id.as_str(), r)).collect();
        for (a, b) in &c {
            let (ra, rb) = (by_id[a.as_str()], by_id[b.as_str()]);
            assert_eq!(ra.color, Color::Blue);
            assert_eq!(rb.color, Color::Red);
            assert_eq!((ra.occupation.as_str(), ra.scenario_index, ra.gender, ra.race), (rb.occupation.as_str(), rb.scenario_index, rb.gender, rb.race));
        }
    }

    #[test]
    fn missing_counterpart_strict_vs_lenient() {
        let mut recs = grid("dj");
        recs.retain(|r| !(r.gender == Gender::Female && r.race == Race::Latino && r.color == Color::Red && r.scenario_index == 4));
        let c = contrast(Axis::Gender, Level::Gender(Gender::Male), Level::Gender(Gender::Female));
        assert!(matches!(build_pairs(&recs, &c, PairingMode::Strict), Err(AnalysisError::IncompleteGrid { .. })));
        assert_eq!(build_pairs(&recs, &c, PairingMode::Lenient).unwrap().len(), 89);
    }

    #[test]
    fn level_from_wrong_axis() {
        assert!(matches!(
            Contrast::new(Axis::Color, Level::Race(Race::White), Level::Color(Color::Red)),
            Err(AnalysisError::UnknownLevel { .. })
        ));
        assert!(Contrast::new(Axis::Color, Level::Color(Color::Red), Level::Color(Color::Red)).is_err());
    }

    #[test]
    fn contrast_serde() {
        let c = contrast(Axis::Race, Level::Race(Race::MiddleEastern), Level::Race(Race::White));
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"axis":"race","level_a":"middle_eastern","level_b":"white"}"#);
        assert_eq!(serde_json::from_str::<Contrast>(&s).unwrap(), c);
        assert!(serde_json::from_str::<Contrast>(r#"{"axis":"race","level_a":"red","level_b":"white"}"#).is_err());
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(Stars::from_p(0.0005), Stars::Three);
        assert_eq!(Stars::from_p(0.001), Stars::Two);
        assert_eq!(Stars::from_p(0.009), Stars::Two);
        assert_eq!(Stars::from_p(0.04), Stars::One);
        assert_eq!(Stars::from_p(0.05), Stars::None);
        assert_eq!(Stars::Three.as_str(), "***");
    }

    fn result_with_p(p: Option<f64>) -> PairedTestResult {
        PairedTestResult {
            metric: Metric::Warmth,
            contrast: enumerate_tests(&Axis::ALL)[0],
            n_pairs: 10,
            t_stat: p.map(|_| 1.0),
            p_value: p,
            p_adjusted: None,
            stars: p.map(Stars::from_p).unwrap_or(Stars::None),
            degenerate: p.is_none().then(|| "zero variance".to_string()),
        }
    }

    #[test]
    fn significance_counting() {
        let all_half: Vec<_> = (0..19).map(|_| result_with_p(Some(0.5))).collect();
        let c = count_significant(&all_half, DEFAULT_ALPHA)[&Metric::Warmth];
        assert_eq!(c.to_string(), "0/19");

        let mut mixed: Vec<_> = (0..16).map(|_| result_with_p(Some(0.5))).collect();
        mixed.extend([0.04, 0.2, 0.009].map(|p| result_with_p(Some(p))));
        assert_eq!(count_significant(&mixed, 0.05)[&Metric::Warmth].significant, 2);

        mixed[0] = result_with_p(None);
        let c = count_significant(&mixed, 0.05)[&Metric::Warmth];
        assert_eq!((c.significant, c.total), (2, 19));
    }

    #[test]
    fn missing_scores_strict() {
        let recs = grid("dj");
        let scores: Vec<ScoreRecord> = recs
            .iter()
            .skip(1)
            .map(|r| ScoreRecord {
                image_id: r.image_id.clone(),
                model_id: "m".into(),
                sentiment: 0.0,
                warmth: 0.0,
                competence: 0.0,
            })
            .collect();
        let strict = BatteryOptions {
            mode: PairingMode::Strict,
            ..Default::default()
        };
        assert!(matches!(
            run_battery(&scores, &recs, "m", &strict),
            Err(AnalysisError::MissingScores { .. })
        ));
        let b = run_battery(&scores, &recs, "m", &BatteryOptions::default()).unwrap();
        assert_eq!(b.results.len(), 57);
        // constant scores: everything degenerate, nothing significant
        assert!(b.results.iter().all(|r| r.is_degenerate()));
    }
}
