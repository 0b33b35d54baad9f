// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate {0} has not been evaluated")]
    Unevaluated(String),

    #[error("invalid PPA metrics: {0}")]
    InvalidMetrics(String),

    #[error("invalid correctness score: {passed} of {total}")]
    InvalidScore { passed: u32, total: u32 },

    #[error("generation index {t} outside 1..={total}")]
    GenerationOutOfRange { t: u32, total: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no extractable design source in reply")]
    ParseFailure,

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend protocol error: {0}")]
    BackendProtocol(String),

    #[error("task aborted: {0}")]
    TaskAborted(String),

    #[error("run log truncated after generation {last_generation:?}")]
    TruncatedLog { last_generation: Option<u32> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
