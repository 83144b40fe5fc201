use thiserror::Error;

use dshape_core::Violation;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] dshape_core::Error),

    #[error("scenario is invalid:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Violation>),

    #[error("case {0} replays recorded arrivals; pass --arrivals <file>")]
    MissingArrivalRecord(u8),

    #[error("scenario has no arrival model")]
    NoArrivalModel,

    #[error("offline reference run is missing")]
    MissingReference,

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for scheduling failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::MissingArrivalRecord(_) | HarnessError::NoArrivalModel => 2,
            HarnessError::Core(
                dshape_core::Error::Parse { .. }
                | dshape_core::Error::Json(_)
                | dshape_core::Error::Csv(_)
                | dshape_core::Error::Io { .. }
                | dshape_core::Error::LengthMismatch { .. },
            ) => 2,
            HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::Json(_) => 2,
            _ => 3,
        }
    }
}
