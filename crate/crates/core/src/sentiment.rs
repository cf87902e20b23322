//! Lexicon-and-rules sentiment scoring compatible with VADER 3.3.2.
//!
//! The rule set mirrors the reference implementation step for step,
//! including its less obvious behaviors (the contrastive `but` rescaling
//! matches the first equal score rather than the current position, and the
//! compound score is rounded to four decimals). Parity is checked against
//! frozen reference outputs in the test suite.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_LEXICON: &str = include_str!("../data/vader_lexicon.txt");
const BUNDLED_EMOJI: &str = include_str!("../data/emoji_utf8_lexicon.txt");

const B_INCR: f64 = 0.293;
const B_DECR: f64 = -0.293;
const C_INCR: f64 = 0.733;
const N_SCALAR: f64 = -0.74;
const NORMALIZE_ALPHA: f64 = 15.0;

const NEGATE: &[&str] = &[
    "aint", "arent", "cannot", "cant", "couldnt", "darent", "didnt", "doesnt", "ain't", "aren't", "can't",
    "couldn't", "daren't", "didn't", "doesn't", "dont", "hadnt", "hasnt", "havent", "isnt", "mightnt",
    "mustnt", "neither", "don't", "hadn't", "hasn't", "haven't", "isn't", "mightn't", "mustn't", "neednt",
    "needn't", "never", "none", "nope", "nor", "not", "nothing", "nowhere", "oughtnt", "shant",
    "shouldnt", "uhuh", "wasnt", "werent", "oughtn't", "shan't", "shouldn't", "uh-uh", "wasn't",
    "weren't", "without", "wont", "wouldnt", "won't", "wouldn't", "rarely", "seldom", "despite",
];

const BOOSTERS: &[(&str, f64)] = &[
    ("absolutely", B_INCR), ("amazingly", B_INCR), ("awfully", B_INCR), ("completely", B_INCR),
    ("considerable", B_INCR), ("considerably", B_INCR), ("decidedly", B_INCR), ("deeply", B_INCR),
    ("effing", B_INCR), ("enormous", B_INCR), ("enormously", B_INCR), ("entirely", B_INCR),
    ("especially", B_INCR), ("exceptional", B_INCR), ("exceptionally", B_INCR), ("extreme", B_INCR),
    ("extremely", B_INCR), ("fabulously", B_INCR), ("flipping", B_INCR), ("flippin", B_INCR),
    ("frackin", B_INCR), ("fracking", B_INCR), ("fricking", B_INCR), ("frickin", B_INCR),
    ("frigging", B_INCR), ("friggin", B_INCR), ("fully", B_INCR), ("fuckin", B_INCR),
    ("fucking", B_INCR), ("fuggin", B_INCR), ("fugging", B_INCR), ("greatly", B_INCR),
    ("hella", B_INCR), ("highly", B_INCR), ("hugely", B_INCR), ("incredible", B_INCR),
    ("incredibly", B_INCR), ("intensely", B_INCR), ("major", B_INCR), ("majorly", B_INCR),
    ("more", B_INCR), ("most", B_INCR), ("particularly", B_INCR), ("purely", B_INCR),
    ("quite", B_INCR), ("really", B_INCR), ("remarkably", B_INCR), ("so", B_INCR),
    ("substantially", B_INCR), ("thoroughly", B_INCR), ("total", B_INCR), ("totally", B_INCR),
    ("tremendous", B_INCR), ("tremendously", B_INCR), ("uber", B_INCR), ("unbelievably", B_INCR),
    ("unusually", B_INCR), ("utter", B_INCR), ("utterly", B_INCR), ("very", B_INCR),
    ("almost", B_DECR), ("barely", B_DECR), ("hardly", B_DECR), ("just enough", B_DECR),
    ("kind of", B_DECR), ("kinda", B_DECR), ("kindof", B_DECR), ("kind-of", B_DECR),
    ("less", B_DECR), ("little", B_DECR), ("marginal", B_DECR), ("marginally", B_DECR),
    ("occasional", B_DECR), ("occasionally", B_DECR), ("partly", B_DECR), ("scarce", B_DECR),
    ("scarcely", B_DECR), ("slight", B_DECR), ("slightly", B_DECR), ("somewhat", B_DECR),
    ("sort of", B_DECR), ("sorta", B_DECR), ("sortof", B_DECR), ("sort-of", B_DECR),
];

const SPECIAL_CASES: &[(&str, f64)] = &[
    ("the shit", 3.0), ("the bomb", 3.0), ("bad ass", 1.5), ("badass", 1.5), ("bus stop", 0.0),
    ("yeah right", -2.0), ("kiss of death", -1.5), ("to die for", 3.0), ("beating heart", 3.5),
];

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("sentiment scorer unavailable: {0}")]
    ScorerUnavailable(String),
}

/// Polarity of one text. `compound` lies in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub compound: f64,
    pub pos: f64,
    pub neu: f64,
    pub neg: f64,
}

pub trait SentimentScorer: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError>;
}

pub struct VaderScorer {
    id: String,
    lexicon: HashMap<String, f64>,
    emojis: HashMap<char, String>,
    boosters: HashMap<&'static str, f64>,
}

impl VaderScorer {
    /// Scorer over the bundled lexicon. Parsed once per process.
    pub fn bundled() -> &'static VaderScorer {
        static SCORER: OnceLock<VaderScorer> = OnceLock::new();
        SCORER.get_or_init(|| {
            VaderScorer::from_lexicon_text("vader-3.3.2", BUNDLED_LEXICON)
                .expect("bundled lexicon parses")
        })
    }

    /// Uses a lexicon in the `token<TAB>mean<TAB>...` format.
    pub fn from_lexicon_file(path: &Path) -> Result<Self, SentimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SentimentError::ScorerUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_lexicon_text(format!("vader:{}", path.display()), &text)
    }

    pub fn from_lexicon_text(id: impl Into<String>, text: &str) -> Result<Self, SentimentError> {
        let mut lexicon = HashMap::new();
        for (n, line) in text.trim_end_matches('\n').split('\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.trim().split('\t');
            let (word, measure) = match (fields.next(), fields.next()) {
                (Some(w), Some(m)) => (w, m),
                _ => {
                    return Err(SentimentError::ScorerUnavailable(format!(
                        "lexicon line {} has fewer than two fields",
                        n + 1
                    )))
                }
            };
            let value = measure.trim().parse::<f64>().map_err(|e| {
                SentimentError::ScorerUnavailable(format!("lexicon line {}: {e}", n + 1))
            })?;
            lexicon.insert(word.to_string(), value);
        }
        let mut emojis = HashMap::new();
        for line in BUNDLED_EMOJI.trim_end_matches('\n').split('\n') {
            let mut fields = line.trim().split('\t');
            if let (Some(key), Some(desc)) = (fields.next(), fields.next()) {
                // only single characters can ever match
                let mut chars = key.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    emojis.insert(c, desc.to_string());
                }
            }
        }
        Ok(Self {
            id: id.into(),
            lexicon,
            emojis,
            boosters: BOOSTERS.iter().copied().collect(),
        })
    }

    pub fn lexicon_len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn polarity_scores(&self, text: &str) -> SentimentScore {
        let mut expanded = String::with_capacity(text.len());
        let mut prev_space = true;
        for ch in text.chars() {
            if let Some(desc) = self.emojis.get(&ch) {
                if !prev_space {
                    expanded.push(' ');
                }
                expanded.push_str(desc);
                prev_space = false;
            } else {
                expanded.push(ch);
                prev_space = ch == ' ';
            }
        }
        let text = expanded.trim_matches(is_py_space);

        let words: Vec<&str> = text.split(is_py_space).filter(|w| !w.is_empty()).map(strip_punc_if_word).collect();
        let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let is_cap_diff = allcap_differential(&words);

        let mut sentiments: Vec<f64> = Vec::with_capacity(words.len());
        for i in 0..words.len() {
            if self.boosters.contains_key(lower[i].as_str()) {
                sentiments.push(0.0);
                continue;
            }
            if i + 1 < words.len() && lower[i] == "kind" && lower[i + 1] == "of" {
                sentiments.push(0.0);
                continue;
            }
            sentiments.push(self.sentiment_valence(&words, &lower, i, is_cap_diff));
        }

        but_check(&lower, &mut sentiments);
        score_valence(&sentiments, text)
    }

    fn in_lexicon(&self, w: &str) -> bool {
        self.lexicon.contains_key(w)
    }

    fn sentiment_valence(&self, words: &[&str], lower: &[String], i: usize, is_cap_diff: bool) -> f64 {
        let item = words[i];
        let item_lower = lower[i].as_str();
        let Some(&base) = self.lexicon.get(item_lower) else {
            return 0.0;
        };
        let mut valence = base;

        if item_lower == "no" && i != words.len() - 1 && self.in_lexicon(&lower[i + 1]) {
            valence = 0.0;
        }
        if (i > 0 && lower[i - 1] == "no")
            || (i > 1 && lower[i - 2] == "no")
            || (i > 2 && lower[i - 3] == "no" && (lower[i - 1] == "or" || lower[i - 1] == "nor"))
        {
            valence = base * N_SCALAR;
        }

        if is_py_upper(item) && is_cap_diff {
            if valence > 0.0 {
                valence += C_INCR;
            } else {
                valence -= C_INCR;
            }
        }

        for start_i in 0..3 {
            if i > start_i && !self.in_lexicon(&lower[i - (start_i + 1)]) {
                let mut s = self.scalar_inc_dec(words[i - (start_i + 1)], valence, is_cap_diff);
                if start_i == 1 && s != 0.0 {
                    s *= 0.95;
                }
                if start_i == 2 && s != 0.0 {
                    s *= 0.9;
                }
                valence += s;
                valence = negation_check(valence, lower, start_i, i);
                if start_i == 2 {
                    valence = self.special_idioms_check(valence, lower, i);
                }
            }
        }

        least_check(valence, lower, i, |w| self.in_lexicon(w))
    }

    fn scalar_inc_dec(&self, word: &str, valence: f64, is_cap_diff: bool) -> f64 {
        let Some(&b) = self.boosters.get(word.to_lowercase().as_str()) else {
            return 0.0;
        };
        let mut scalar = b;
        if valence < 0.0 {
            scalar *= -1.0;
        }
        if is_py_upper(word) && is_cap_diff {
            if valence > 0.0 {
                scalar += C_INCR;
            } else {
                scalar -= C_INCR;
            }
        }
        scalar
    }

    fn special_idioms_check(&self, mut valence: f64, lower: &[String], i: usize) -> f64 {
        let onezero = format!("{} {}", lower[i - 1], lower[i]);
        let twoonezero = format!("{} {} {}", lower[i - 2], lower[i - 1], lower[i]);
        let twoone = format!("{} {}", lower[i - 2], lower[i - 1]);
        let threetwoone = format!("{} {} {}", lower[i - 3], lower[i - 2], lower[i - 1]);
        let threetwo = format!("{} {}", lower[i - 3], lower[i - 2]);

        for seq in [&onezero, &twoonezero, &twoone, &threetwoone, &threetwo] {
            if let Some(v) = special_case(seq) {
                valence = v;
                break;
            }
        }
        if lower.len() - 1 > i {
            let zeroone = format!("{} {}", lower[i], lower[i + 1]);
            if let Some(v) = special_case(&zeroone) {
                valence = v;
            }
        }
        if lower.len() - 1 > i + 1 {
            let zeroonetwo = format!("{} {} {}", lower[i], lower[i + 1], lower[i + 2]);
            if let Some(v) = special_case(&zeroonetwo) {
                valence = v;
            }
        }
        for ngram in [&threetwoone, &threetwo, &twoone] {
            if let Some(b) = self.boosters.get(ngram.as_str()) {
                valence += b;
            }
        }
        valence
    }
}

impl SentimentScorer for VaderScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError> {
        Ok(self.polarity_scores(text))
    }
}

impl SentimentScorer for &'static VaderScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError> {
        Ok(self.polarity_scores(text))
    }
}

fn special_case(seq: &str) -> Option<f64> {
    SPECIAL_CASES.iter().find(|(k, _)| *k == seq).map(|(_, v)| *v)
}

/// Whitespace as Python's `str.split()` sees it.
fn is_py_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

/// Python `str.isupper`: at least one cased character and none lowercase.
fn is_py_upper(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_lowercase() {
            return false;
        }
        if c.is_uppercase() {
            cased = true;
        }
    }
    cased
}

/// Strips surrounding ASCII punctuation unless that leaves two characters or
/// fewer, which keeps emoticons like `:)` intact.
fn strip_punc_if_word(token: &str) -> &str {
    let stripped = token.trim_matches(|c: char| c.is_ascii_punctuation());
    if stripped.chars().count() <= 2 {
        token
    } else {
        stripped
    }
}

fn allcap_differential(words: &[&str]) -> bool {
    let allcap = words.iter().filter(|w| is_py_upper(w)).count();
    let diff = words.len() - allcap;
    0 < diff && diff < words.len()
}

fn negated(word: &str) -> bool {
    NEGATE.contains(&word) || word.contains("n't")
}

fn negation_check(mut valence: f64, lower: &[String], start_i: usize, i: usize) -> f64 {
    let w = |k: usize| lower[i - k].as_str();
    match start_i {
        0 => {
            if negated(w(1)) {
                valence *= N_SCALAR;
            }
        }
        1 => {
            if w(2) == "never" && (w(1) == "so" || w(1) == "this") {
                valence *= 1.25;
            } else if w(2) == "without" && w(1) == "doubt" {
            } else if negated(w(2)) {
                valence *= N_SCALAR;
            }
        }
        2 => {
            if (w(3) == "never" && (w(2) == "so" || w(2) == "this")) || (w(1) == "so" || w(1) == "this") {
                valence *= 1.25;
            } else if w(3) == "without" && (w(2) == "doubt" || w(1) == "doubt") {
            } else if negated(w(3)) {
                valence *= N_SCALAR;
            }
        }
        _ => {}
    }
    valence
}

fn least_check(mut valence: f64, lower: &[String], i: usize, in_lexicon: impl Fn(&str) -> bool) -> f64 {
    if i > 1 && !in_lexicon(&lower[i - 1]) && lower[i - 1] == "least" {
        if lower[i - 2] != "at" && lower[i - 2] != "very" {
            valence *= N_SCALAR;
        }
    } else if i > 0 && !in_lexicon(&lower[i - 1]) && lower[i - 1] == "least" {
        valence *= N_SCALAR;
    }
    valence
}

/// Scores before the first `but` are halved and those after it grow by half.
/// Each visited value rescales the first equal entry of the list, as the
/// reference does.
fn but_check(lower: &[String], sentiments: &mut [f64]) {
    let Some(bi) = lower.iter().position(|w| w == "but") else {
        return;
    };
    for k in 0..sentiments.len() {
        let sentiment = sentiments[k];
        let si = sentiments.iter().position(|&s| s == sentiment).unwrap_or(k);
        if si < bi {
            sentiments[si] = sentiment * 0.5;
        } else if si > bi {
            sentiments[si] = sentiment * 1.5;
        }
    }
}

fn punctuation_emphasis(text: &str) -> f64 {
    let ep = text.matches('!').count().min(4) as f64 * 0.292;
    let qm_count = text.matches('?').count();
    let qm = if qm_count > 1 {
        if qm_count <= 3 {
            qm_count as f64 * 0.18
        } else {
            0.96
        }
    } else {
        0.0
    };
    ep + qm
}

fn normalize(score: f64) -> f64 {
    (score / (score * score + NORMALIZE_ALPHA).sqrt()).clamp(-1.0, 1.0)
}

/// Decimal rounding on the exact binary value, like Python's `round`.
fn round_to(x: f64, digits: usize) -> f64 {
    format!("{x:.digits$}").parse().unwrap_or(x)
}

fn score_valence(sentiments: &[f64], text: &str) -> SentimentScore {
    if sentiments.is_empty() {
        return SentimentScore {
            compound: 0.0,
            pos: 0.0,
            neu: 0.0,
            neg: 0.0,
        };
    }
    let mut sum_s: f64 = sentiments.iter().fold(0.0, |a, s| a + s);
    let amp = punctuation_emphasis(text);
    if sum_s > 0.0 {
        sum_s += amp;
    } else if sum_s < 0.0 {
        sum_s -= amp;
    }
    let compound = normalize(sum_s);

    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    let mut neu_count = 0usize;
    for &s in sentiments {
        if s > 0.0 {
            pos_sum += s + 1.0;
        }
        if s < 0.0 {
            neg_sum += s - 1.0;
        }
        if s == 0.0 {
            neu_count += 1;
        }
    }
    if pos_sum > neg_sum.abs() {
        pos_sum += amp;
    } else if pos_sum < neg_sum.abs() {
        neg_sum -= amp;
    }
    let total = pos_sum + neg_sum.abs() + neu_count as f64;
    SentimentScore {
        compound: round_to(compound, 4),
        pos: round_to((pos_sum / total).abs(), 3),
        neu: round_to((neu_count as f64 / total).abs(), 3),
        neg: round_to((neg_sum / total).abs(), 3),
    }
}

/// Convenience wrapper over the bundled scorer.
pub fn score_sentiment(text: &str) -> SentimentScore {
    VaderScorer::bundled().polarity_scores(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_neutral() {
        assert_eq!(score_sentiment("").compound, 0.0);
        assert_eq!(score_sentiment("   ").compound, 0.0);
    }

    #[test]
    fn positive_word() {
        assert!(score_sentiment("good").compound > 0.0);
        assert!(score_sentiment("terrible").compound < 0.0);
    }

    #[test]
    fn negation_flips_sign() {
        assert!(score_sentiment("The man is not happy").compound < 0.0);
    }

    #[test]
    fn emoticons_survive_punctuation_stripping() {
        assert_eq!(strip_punc_if_word(":)"), ":)");
        assert_eq!(strip_punc_if_word("good!!"), "good");
        assert_eq!(strip_punc_if_word("ok."), "ok.");
    }

    #[test]
    fn python_isupper_semantics() {
        assert!(is_py_upper("GOOD"));
        assert!(is_py_upper("A1!"));
        assert!(!is_py_upper("123"));
        assert!(!is_py_upper("Good"));
    }

    #[test]
    fn rounding_matches_decimal_semantics() {
        assert_eq!(round_to(0.44043, 4), 0.4404);
        assert_eq!(round_to(-0.85551, 4), -0.8555);
    }

    #[test]
    fn custom_lexicon() {
        let s = VaderScorer::from_lexicon_text("tiny", "zorp\t2.0\t0.5\t[]\n").unwrap();
        assert!(s.polarity_scores("zorp").compound > 0.0);
        assert_eq!(s.polarity_scores("good").compound, 0.0);
        assert!(VaderScorer::from_lexicon_text("bad", "novalue\n").is_err());
    }

    #[test]
    fn missing_lexicon_file() {
        let err = VaderScorer::from_lexicon_file(Path::new("/nonexistent/lexicon.txt"));
        assert!(matches!(err, Err(SentimentError::ScorerUnavailable(_))));
    }
}
