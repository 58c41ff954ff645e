use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible action for player {player} at slice {t}: {reason}")]
    InfeasibleAction {
        player: usize,
        t: usize,
        reason: String,
    },

    #[error("episode already finished (t = {0})")]
    EpisodeFinished(usize),

    #[error("infeasible schedule for player {player}: {reason}")]
    InfeasibleSchedule { player: usize, reason: String },

    #[error("incomplete episode record: {steps} of {expected} steps")]
    IncompleteRecord { steps: usize, expected: usize },

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("rank-deficient regression: {0}")]
    RankDeficient(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("data corruption: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
