//! Controlled image attributes and the levels each axis can take.
//!
//! Level lists are ordered the way contrasts are reported (`Blue vs Red`,
//! `Male vs Female`, `Asian vs Black`, ...). That order fixes both the
//! enumeration order of tests and the sign convention of every t statistic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::AttributeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    Asian,
    Black,
    Indian,
    Latino,
    MiddleEastern,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Blue,
    Red,
    White,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }
}

impl Race {
    pub const ALL: [Race; 6] = [
        Race::Asian,
        Race::Black,
        Race::Indian,
        Race::Latino,
        Race::MiddleEastern,
        Race::White,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Race::Asian => "asian",
            Race::Black => "black",
            Race::Indian => "indian",
            Race::Latino => "latino",
            Race::MiddleEastern => "middle_eastern",
            Race::White => "white",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Race::Asian => "Asian",
            Race::Black => "Black",
            Race::Indian => "Indian",
            Race::Latino => "Latino",
            Race::MiddleEastern => "M.E.",
            Race::White => "White",
        }
    }
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Blue, Color::Red, Color::White];

    pub fn token(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
            Color::White => "white",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Color::Blue => "Blue",
            Color::Red => "Red",
            Color::White => "White",
        }
    }
}

/// Lowercases and collapses separators so `Middle Eastern`, `middle-eastern`
/// and `MIDDLE_EASTERN` compare equal.
fn fold(token: &str) -> String {
    token
        .trim()
        .chars()
        .filter_map(|c| match c {
            ' ' | '-' | '_' | '.' => None,
            c => Some(c.to_ascii_lowercase()),
        })
        .collect()
}

impl FromStr for Gender {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold(s).as_str() {
            "male" | "man" | "m" => Ok(Gender::Male),
            "female" | "woman" | "f" => Ok(Gender::Female),
            _ => Err(AttributeError::unknown("gender", s)),
        }
    }
}

impl FromStr for Race {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold(s).as_str() {
            "asian" => Ok(Race::Asian),
            "black" | "africanamerican" => Ok(Race::Black),
            "indian" => Ok(Race::Indian),
            "latino" | "hispanic" => Ok(Race::Latino),
            "middleeastern" | "me" => Ok(Race::MiddleEastern),
            "white" | "caucasian" => Ok(Race::White),
            _ => Err(AttributeError::unknown("race", s)),
        }
    }
}

impl FromStr for Color {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold(s).as_str() {
            "blue" => Ok(Color::Blue),
            "red" => Ok(Color::Red),
            "white" => Ok(Color::White),
            _ => Err(AttributeError::unknown("color", s)),
        }
    }
}

/// One of the three controlled attributes that contrasts are run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Color,
    Gender,
    Race,
}

impl Axis {
    /// Report order: color, gender, race.
    pub const ALL: [Axis; 3] = [Axis::Color, Axis::Gender, Axis::Race];

    pub fn token(self) -> &'static str {
        match self {
            Axis::Color => "color",
            Axis::Gender => "gender",
            Axis::Race => "race",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::Color => "Color",
            Axis::Gender => "Gender",
            Axis::Race => "Race",
        }
    }

    /// All levels of this axis in report order.
    pub fn levels(self) -> Vec<Level> {
        match self {
            Axis::Color => Color::ALL.iter().map(|&c| Level::Color(c)).collect(),
            Axis::Gender => Gender::ALL.iter().map(|&g| Level::Gender(g)).collect(),
            Axis::Race => Race::ALL.iter().map(|&r| Level::Race(r)).collect(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Axis {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold(s).as_str() {
            "color" | "colour" => Ok(Axis::Color),
            "gender" => Ok(Axis::Gender),
            "race" => Ok(Axis::Race),
            _ => Err(AttributeError::unknown("axis", s)),
        }
    }
}

/// A single attribute value together with the axis it belongs to. Also used
/// as the "aspect" that word associations are computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Color(Color),
    Gender(Gender),
    Race(Race),
}

impl Level {
    pub fn axis(self) -> Axis {
        match self {
            Level::Color(_) => Axis::Color,
            Level::Gender(_) => Axis::Gender,
            Level::Race(_) => Axis::Race,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Level::Color(c) => c.token(),
            Level::Gender(g) => g.token(),
            Level::Race(r) => r.token(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::Color(c) => c.label(),
            Level::Gender(g) => g.label(),
            Level::Race(r) => r.label(),
        }
    }

    /// Parses `token` as a level of `axis`. `white` is both a color and a
    /// race, so the axis is always required.
    pub fn parse(axis: Axis, token: &str) -> Result<Level, AttributeError> {
        Ok(match axis {
            Axis::Color => Level::Color(token.parse()?),
            Axis::Gender => Level::Gender(token.parse()?),
            Axis::Race => Level::Race(token.parse()?),
        })
    }

    /// Every level of every axis, in report order.
    pub fn all() -> Vec<Level> {
        Axis::ALL.iter().flat_map(|a| a.levels()).collect()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.axis().token(), self.token())
    }
}

#[derive(Serialize, Deserialize)]
struct RawLevel {
    axis: Axis,
    level: String,
}

impl Serialize for Level {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawLevel {
            axis: self.axis(),
            level: self.token().to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawLevel::deserialize(deserializer)?;
        Level::parse(raw.axis, &raw.level).map_err(serde::de::Error::custom)
    }
}
