use crate::annotation::Violation;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// `Format`, `InvalidAnnotation`, `Infeasible`, `Warp` and `Ungriddable` are
/// input/validation failures; `Internal` marks a broken invariant that should
/// never be reachable from well-formed inputs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid annotation: {}", format_violations(.0))]
    InvalidAnnotation(Vec<Violation>),

    #[error("infeasible synthesis config: {0}")]
    Infeasible(String),

    #[error("warp error: {0}")]
    Warp(String),

    #[error("ungriddable annotation: {0}")]
    Ungriddable(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than broken internals.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
