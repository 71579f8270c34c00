use thiserror::Error;

/// Where in the solve a divergence was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rollout,
    Backward,
    Variation,
    Riccati,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Rollout => "forward rollout",
            Stage::Backward => "backward pass",
            Stage::Variation => "variation rollout",
            Stage::Riccati => "Riccati integration",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum StddpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{stage} diverged at step {step}{}{}",
        .iteration.map(|i| format!(" (iteration {i})")).unwrap_or_default(),
        .round.map(|r| format!(" (annealing round {r})")).unwrap_or_default())]
    Divergence {
        stage: Stage,
        step: usize,
        iteration: Option<usize>,
        round: Option<usize>,
    },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("line search exhausted {tries} step sizes without decreasing the cost (iteration {iteration})")]
    LineSearchExhausted { iteration: usize, tries: usize },

    #[error("line search ladder is empty")]
    EmptyLadder,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl StddpError {
    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        StddpError::DimensionMismatch {
            what,
            expected,
            found,
        }
    }

    pub(crate) fn diverged(stage: Stage, step: usize) -> Self {
        StddpError::Divergence {
            stage,
            step,
            iteration: None,
            round: None,
        }
    }

    /// Attach the solver iteration to a divergence error.
    pub fn at_iteration(self, it: usize) -> Self {
        match self {
            StddpError::Divergence {
                stage, step, round, ..
            } => StddpError::Divergence {
                stage,
                step,
                iteration: Some(it),
                round,
            },
            StddpError::LineSearchExhausted { tries, .. } => StddpError::LineSearchExhausted {
                iteration: it,
                tries,
            },
            other => other,
        }
    }

    /// Attach the annealing round to a divergence error.
    pub fn at_round(self, r: usize) -> Self {
        match self {
            StddpError::Divergence {
                stage,
                step,
                iteration,
                ..
            } => StddpError::Divergence {
                stage,
                step,
                iteration,
                round: Some(r),
            },
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, StddpError::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, StddpError>;
