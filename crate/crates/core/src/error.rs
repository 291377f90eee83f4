use thiserror::Error;

use crate::network::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("matrix is not skew-symmetric (‖M + Mᵀ‖_F = {asymmetry:e})")]
    NotSkewSymmetric { asymmetry: f64 },
    #[error("vector too short to define a direction (norm {norm:e})")]
    DegenerateVector { norm: f64 },
    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("matrix is singular or orientation-reversing (det {det:e})")]
    SingularMatrix { det: f64 },
    #[error("matrix is not a rotation (orthogonality drift {drift:e}, det {det})")]
    NotARotation { drift: f64, det: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("agent {agent}: directions are coplanar (min eigenvalue of K {min_eigenvalue:e})")]
    CoplanarDirections { agent: usize, min_eigenvalue: f64 },
    #[error("agent {agent}: no gain set with separated eigenvalues after {attempts} attempts")]
    GainDesignFailed { agent: usize, attempts: usize },
    #[error("agent {agent} is not a follower")]
    NotAFollower { agent: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("eigenvalues of K are not distinct (gap {gap:e})")]
    RepeatedEigenvalues { gap: f64 },
    #[error("neighbors are collinear with the agent (min eigenvalue {min_eigenvalue:e})")]
    CollinearNeighbors { min_eigenvalue: f64 },
    #[error("direction and neighbor lists differ in length ({directions} vs {neighbors})")]
    LengthMismatch { directions: usize, neighbors: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("state became non-finite at t = {t} s (step {step})")]
    NonFiniteState { t: f64, step: u64 },
    #[error("state left SO(3) beyond repair at t = {t} s (step {step}): {source}")]
    Reprojection {
        t: f64,
        step: u64,
        source: GeomError,
    },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario is invalid:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}
