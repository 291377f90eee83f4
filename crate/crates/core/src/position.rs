//! Position localization from directions and an orientation estimate.

use crate::error::EstimatorError;
use crate::geom3::{projection_matrix, Mat3, Rotation, UnitVec3, Vec3};

/// Default position gain `k_p`.
pub const DEFAULT_K_P: f64 = 1.0;
const MIN_EIGENVALUE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionEstimatorState {
    pub p_hat: Vec3,
}

/// Body-frame measurement toward one neighbor and that neighbor's published
/// position estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionPair {
    pub gain: f64,
    pub b_own: UnitVec3,
    pub p_hat_neighbor: Vec3,
}

/// `dp̂/dt = −R̂ Σ_j k_p P(b_ij^i) R̂ᵀ (p̂ − p̂_j)`.
pub fn position_derivative(
    state: &PositionEstimatorState,
    r_hat: &Rotation,
    pairs: &[PositionPair],
) -> Vec3 {
    let rht = r_hat.transpose();
    let body = pairs.iter().fold(Vec3::ZERO, |acc, p| {
        let proj = local_projection(p.b_own);
        acc + (proj * (rht * (state.p_hat - p.p_hat_neighbor))).scale(p.gain)
    });
    -(*r_hat * body)
}

fn local_projection(b: UnitVec3) -> Mat3 {
    let b = b.get();
    Mat3::IDENTITY - Mat3::outer(b, b)
}

/// `p = (Σ P(b_ij))⁻¹ Σ P(b_ij) p_j` for global-frame directions.
pub fn solve_position_closed_form(
    directions: &[UnitVec3],
    neighbor_positions: &[Vec3],
) -> Result<Vec3, EstimatorError> {
    if directions.len() != neighbor_positions.len() {
        return Err(EstimatorError::LengthMismatch {
            directions: directions.len(),
            neighbors: neighbor_positions.len(),
        });
    }
    let mut lhs = Mat3::ZERO;
    let mut rhs = Vec3::ZERO;
    for (&b, &p) in directions.iter().zip(neighbor_positions) {
        let proj = projection(b);
        lhs += proj;
        rhs += proj * p;
    }
    let min_eigenvalue = lhs.symmetric_eigen().values[0];
    if !(min_eigenvalue > MIN_EIGENVALUE) {
        return Err(EstimatorError::CollinearNeighbors { min_eigenvalue });
    }
    let inv = lhs
        .inverse(0.0)
        .ok_or(EstimatorError::CollinearNeighbors { min_eigenvalue })?;
    Ok(inv * rhs)
}

/// `max_j ‖P(b_ij)(p̂ − p_j)‖`; zero iff every direction constraint holds.
pub fn constraint_residual(
    p_hat: Vec3,
    directions: &[UnitVec3],
    neighbor_positions: &[Vec3],
) -> f64 {
    directions
        .iter()
        .zip(neighbor_positions)
        .map(|(&b, &p)| (projection(b) * (p_hat - p)).norm())
        .fold(0.0, f64::max)
}

/// `Σ_j k_p P(b_ij)` with global directions; its smallest eigenvalue is the
/// exponential decay rate of a single follower with fixed neighbors.
pub fn weighted_projection_sum(gains: &[f64], directions: &[UnitVec3]) -> Mat3 {
    gains
        .iter()
        .zip(directions)
        .fold(Mat3::ZERO, |acc, (&k, &b)| acc + projection(b).scale(k))
}

fn projection(b: UnitVec3) -> Mat3 {
    projection_matrix(b.get()).expect("unit vectors are never degenerate")
}
