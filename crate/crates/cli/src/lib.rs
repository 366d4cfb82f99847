//! Experiment driver for the plane L∞ variational laboratory: declarative
//! configs, the full solve → identities → diagnostics → cones pipeline
//! with a checksummed manifest, and plot-ready CSV emission.

pub mod config;
pub mod output;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<aronsson_core::grid::GridError> for CliError {
    fn from(e: aronsson_core::grid::GridError) -> Self {
        match e {
            aronsson_core::grid::GridError::Io(io) => CliError::Io(io.to_string()),
            aronsson_core::grid::GridError::Csv { .. }
            | aronsson_core::grid::GridError::NotUniform(_)
            | aronsson_core::grid::GridError::TooFewNodes { .. }
            | aronsson_core::grid::GridError::BadExtent { .. }
            | aronsson_core::grid::GridError::RegionOutside(_)
            | aronsson_core::grid::GridError::RegionEmpty => CliError::Validation(e.to_string()),
            aronsson_core::grid::GridError::GridMismatch(_)
            | aronsson_core::grid::GridError::NonFinite { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<aronsson_core::hamiltonian::HamiltonianError> for CliError {
    fn from(e: aronsson_core::hamiltonian::HamiltonianError) -> Self {
        use aronsson_core::hamiltonian::HamiltonianError as H;
        match e {
            H::InvalidParameter(_) | H::SmoothnessRequired { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<aronsson_core::solver::SolveError> for CliError {
    fn from(e: aronsson_core::solver::SolveError) -> Self {
        use aronsson_core::solver::SolveError as S;
        match e {
            S::Grid(g) => g.into(),
            S::Hamiltonian(h) => h.into(),
            S::EmptyLadder | S::BoundaryNotFinite => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<aronsson_core::cones::ConeError> for CliError {
    fn from(e: aronsson_core::cones::ConeError) -> Self {
        use aronsson_core::cones::ConeError as C;
        match e {
            C::NegativeLevel(_) | C::NotLipschitz { .. } => CliError::Validation(e.to_string()),
            C::Hamiltonian(h) => h.into(),
            C::Solve(s) => s.into(),
        }
    }
}

impl From<aronsson_core::diagnostics::DiagError> for CliError {
    fn from(e: aronsson_core::diagnostics::DiagError) -> Self {
        use aronsson_core::diagnostics::DiagError as D;
        match e {
            D::Grid(g) => g.into(),
            D::Hamiltonian(h) => h.into(),
            D::NonPositiveAlpha(_)
            | D::SigmaRequired { .. }
            | D::AlphaOutOfRange { .. }
            | D::LadderTooShort { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<aronsson_core::identities::IdentityError> for CliError {
    fn from(e: aronsson_core::identities::IdentityError) -> Self {
        use aronsson_core::identities::IdentityError as I;
        match e {
            I::Hamiltonian(h) => h.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
