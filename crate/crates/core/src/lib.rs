//! Stereotype measurement for vision-language model image descriptions.
//!
//! The crate covers the whole audit: manifest validation over the
//! occupation × scenario × gender × race × color grid, description
//! collection from chat-completion endpoints, three per-description metrics
//! (sentiment polarity plus warmth and competence coordinates from an
//! embedding projection), matched-pair t-test batteries over attribute
//! contrasts, and PMI word association tables.

pub mod analysis;
pub mod attributes;
pub mod collector;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod pipeline;
pub mod pmi;
pub mod report;
pub mod scm;
pub mod sentiment;
pub mod stats;

pub use attributes::{Axis, Color, Gender, Level, Race};
pub use corpus::{ImageKey, ImageRecord, ManifestReport};
pub use embedder::{Embedder, Embedding};
pub use scm::{ScmBasis, ScmCoordinates};
pub use sentiment::{SentimentScore, VaderScorer};
