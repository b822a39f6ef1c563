use thiserror::Error;

use volrank::itosim::{IngestError, ScenarioError, SimError};
use volrank::limitlaw::LimitError;
use volrank::ranktest::RankTestError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rank(#[from] RankTestError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }

    /// 1 when the data are too short or the statistics degenerate, 2 for
    /// everything else (configuration, usage and input errors).
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Rank(RankTestError::TooShort { .. } | RankTestError::Degenerate(_))
            | HarnessError::Sim(SimError::TooShort { .. }) => 1,
            _ => 2,
        }
    }
}
