//! Neural-probabilistic answer set programming.
//!
//! A program is parsed ([`frontend`]), grounded ([`grounder`]) and its stable
//! models enumerated ([`solver`]). Neural-probabilistic predicates
//! ([`npp`]) supply outcome distributions, [`engine`] turns them into query
//! probabilities and gradients, and [`trainer`] learns from queries known to
//! hold. [`harness`] holds datasets and metrics.

pub mod engine;
pub mod experiment;
pub mod frontend;
pub mod grounder;
pub mod harness;
pub mod npp;
pub mod par;
pub mod solver;
pub mod trainer;

use thiserror::Error;

/// Any pipeline failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] frontend::ParseError),
    #[error(transparent)]
    Ground(#[from] grounder::GroundError),
    #[error(transparent)]
    Solve(#[from] solver::SolveError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Npp(#[from] npp::NppError),
    #[error(transparent)]
    Checkpoint(#[from] npp::checkpoint::CheckpointError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

impl Error {
    /// Numeric failures (zero query probability, non-finite losses) as
    /// opposed to malformed or unsupported input.
    pub fn is_numeric(&self) -> bool {
        use engine::EngineError::ZeroProbability;
        matches!(
            self,
            Error::Engine(ZeroProbability)
                | Error::Train(trainer::TrainError::NonFinite { .. })
                | Error::Train(trainer::TrainError::Engine(ZeroProbability))
        )
    }
}
