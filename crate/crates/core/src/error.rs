use thiserror::Error;

/// An attribute token that does not map to any declared level.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {field} value {value:?}")]
pub struct AttributeError {
    pub field: &'static str,
    pub value: String,
}

impl AttributeError {
    pub(crate) fn unknown(field: &'static str, value: &str) -> Self {
        Self {
            field,
            value: value.to_string(),
        }
    }
}
