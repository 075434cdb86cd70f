use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("budget exceeded: need {needed}, budget {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("arithmetic overflow: {0}")]
    Overflow(String),
    #[error("unsatisfiable slice constraint")]
    Unsatisfiable,
    #[error("rejection budget exhausted after {attempts} attempts (acceptance estimate {acceptance:.3e})")]
    RejectionExhausted { attempts: u64, acceptance: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no witness found: {0}")]
    NoWitness(String),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("grid coverage insufficient: {0}")]
    GridCoverage(String),
    #[error("storage budget exceeded: {0}")]
    Storage(String),
}

impl Error {
    /// Budget and resource failures, as opposed to bad input.
    pub fn is_resource(&self) -> bool {
        matches!(
            self,
            Error::BudgetExceeded { .. }
                | Error::Overflow(_)
                | Error::RejectionExhausted { .. }
                | Error::GridCoverage(_)
                | Error::Storage(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
