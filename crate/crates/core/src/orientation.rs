//! Orientation localization on SO(3).
//!
//! Each follower integrates
//!
//! ```text
//! d/dt R̂ = R̂ (ω − Ω̃)^
//! d/dt Ω̃ = −k_ω Ω̃ + Σ_j k_ij (R̂ᵀ R̂_j b_ij^j) × b_ij^i
//! ```
//!
//! using only its body-frame measurements `b_ij^i` and the quantities
//! `R̂_j b_ji^j` published by its neighbors. The ground-truth based functions
//! in this module (`error_vector`, `error_function`, `lyapunov_v`) are
//! diagnostics and never feed back into the estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{EstimatorError, NetworkError};
use crate::geom3::{exp_so3, random_rotation, random_unit_vector, Mat3, Rotation, UnitVec3, Vec3};
use crate::network::{
    virtual_direction, weighted_directions, weighted_outer_sum, AgentId, GroundTruth,
    NetworkTopology,
};

/// Default damping gain on Ω̃.
pub const DEFAULT_K_OMEGA: f64 = 2.0;
/// Minimum eigenvalue gap for [`critical_points`].
pub const MIN_CRITICAL_GAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationEstimatorState {
    pub r_hat: Rotation,
    pub omega_tilde: Vec3,
    pub k_omega: f64,
}

impl OrientationEstimatorState {
    /// Estimator started at `r_hat` with zero Ω̃.
    pub fn new(r_hat: Rotation, k_omega: f64) -> Self {
        OrientationEstimatorState {
            r_hat,
            omega_tilde: Vec3::ZERO,
            k_omega,
        }
    }
}

/// One weighted measurement pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionPair {
    pub gain: f64,
    /// Body-frame measurement `b_ij^i`.
    pub b_own: UnitVec3,
    /// Quantity published by the neighbor, `R̂_j b_ji^j`.
    pub b_comm: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirectionBundle {
    pub pairs: Vec<DirectionPair>,
    pub virtual_pair: Option<DirectionPair>,
}

impl DirectionBundle {
    /// Bundle from measured pairs, adding the virtual third direction when
    /// there are exactly two.
    ///
    /// The virtual body-frame direction is `b₁ⁱ × b₂ⁱ` normalized; its
    /// published counterpart is built from the neighbors' global direction
    /// estimates `g_j = −b_comm_j` and stored with the same sign convention
    /// as a real neighbor, i.e. `−normalize(g₁ × g₂)`.
    pub fn with_virtual(
        pairs: Vec<DirectionPair>,
        virtual_gain: f64,
    ) -> Result<Self, NetworkError> {
        let virtual_pair = if pairs.len() == 2 {
            let b_own = virtual_direction(pairs[0].b_own.get(), pairs[1].b_own.get())?;
            let g = virtual_direction(-pairs[0].b_comm, -pairs[1].b_comm)?;
            Some(DirectionPair {
                gain: virtual_gain,
                b_own,
                b_comm: -g.get(),
            })
        } else {
            None
        };
        Ok(DirectionBundle {
            pairs,
            virtual_pair,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &DirectionPair> {
        self.pairs.iter().chain(self.virtual_pair.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Ground truth seen by one follower: its true attitude and the weighted true
/// global directions (virtual one included) that define `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthContext {
    pub rotation: Rotation,
    pub directions: Vec<(f64, UnitVec3)>,
}

impl TruthContext {
    pub fn new(
        i: AgentId,
        topo: &NetworkTopology,
        truth: &GroundTruth,
        rotation: Rotation,
    ) -> Result<Self, NetworkError> {
        Ok(TruthContext {
            rotation,
            directions: weighted_directions(i, topo, truth)?,
        })
    }

    pub fn k_matrix(&self) -> Mat3 {
        weighted_outer_sum(self.directions.iter().map(|&(k, b)| (k, b.get())))
    }

    pub fn gain_sum(&self) -> f64 {
        self.directions.iter().map(|d| d.0).sum()
    }
}

/// `e_i = Σ k_ij (R̂ᵀ b_ij) × b_ij^i` from true directions.
///
/// This is the left-trivialized gradient of [`error_function`]:
/// `d/dε Φ(R̂ exp(ε η^))|₀ = ηᵀ e_i`.
pub fn error_vector(r_hat: &Rotation, ctx: &TruthContext) -> Vec3 {
    let rt = ctx.rotation.transpose();
    let rht = r_hat.transpose();
    ctx.directions.iter().fold(Vec3::ZERO, |acc, &(k, b)| {
        acc + (rht * b).cross(rt * b).scale(k)
    })
}

/// `Σ k_ij (R̂ᵀ R̂_j b_ij^j) × b_ij^i` from measurements and published values.
/// Neighbors publish `R̂_j b_ji^j = −R̂_j b_ij^j`, hence the negation.
pub fn feedback_term(state: &OrientationEstimatorState, bundle: &DirectionBundle) -> Vec3 {
    let rht = state.r_hat.transpose();
    bundle.iter().fold(Vec3::ZERO, |acc, p| {
        acc + (rht * (-p.b_comm)).cross(p.b_own.get()).scale(p.gain)
    })
}

/// Returns `(Ω, dΩ̃/dt)` where `dR̂/dt = R̂ Ω^`.
pub fn state_derivative(
    state: &OrientationEstimatorState,
    bundle: &DirectionBundle,
    omega_body: Vec3,
) -> (Vec3, Vec3) {
    let tangent = omega_body - state.omega_tilde;
    let omega_tilde_dot = state.omega_tilde.scale(-state.k_omega) + feedback_term(state, bundle);
    (tangent, omega_tilde_dot)
}

/// `Φ_i = Σ k_ij (1 − (R̂ b_ij^i) · b_ij)`.
pub fn error_function(r_hat: &Rotation, ctx: &TruthContext) -> f64 {
    let rt = ctx.rotation.transpose();
    ctx.directions
        .iter()
        .map(|&(k, b)| k * (1.0 - (*r_hat * (rt * b)).dot(b.get())))
        .sum()
}

/// `Φ_i = Σ k_ij − tr(Q̃ K)` with `Q̃ = R̂ Rᵀ`.
pub fn error_function_trace_form(r_hat: &Rotation, ctx: &TruthContext) -> f64 {
    let q = *r_hat.matrix() * ctx.rotation.matrix().transpose();
    ctx.gain_sum() - (q * ctx.k_matrix()).trace()
}

/// `Φ` as a function of the relative error `Q̃` and `K` alone.
pub fn error_function_relative(q: &Mat3, k: &Mat3) -> f64 {
    k.trace() - (*q * *k).trace()
}

/// `‖e‖` as a function of `Q̃` and `K` alone: `e^ = Rᵀ (K Q̃ − Q̃ᵀ K) R`.
pub fn error_vector_norm_relative(q: &Mat3, k: &Mat3) -> f64 {
    let s = *k * *q - q.transpose() * *k;
    let a = &s.m;
    Vec3::new(
        0.5 * (a[2][1] - a[1][2]),
        0.5 * (a[0][2] - a[2][0]),
        0.5 * (a[1][0] - a[0][1]),
    )
    .norm()
}

/// The four critical relative orientations `{I, U Dₖ Uᵀ}` of `Φ` for a `K`
/// with distinct eigenvalues. The identity comes first.
pub fn critical_points(k: &Mat3) -> Result<[Rotation; 4], EstimatorError> {
    let eig = k.symmetric_eigen();
    let gap = eig.min_gap();
    if !(gap >= MIN_CRITICAL_GAP) {
        return Err(EstimatorError::RepeatedEigenvalues { gap });
    }
    let u = eig.vectors;
    let flip = |axis: usize| {
        let mut d = Mat3::IDENTITY.scale(-1.0);
        d.m[axis][axis] = 1.0;
        Rotation::from_matrix_unchecked(u * d * u.transpose())
    };
    Ok([Rotation::IDENTITY, flip(0), flip(1), flip(2)])
}

/// `φ = 2 min{λ₁+λ₂, λ₁+λ₃, λ₂+λ₃}`: the smallest value `Φ` takes at an
/// undesired critical point.
pub fn phi_threshold(k: &Mat3) -> f64 {
    let l = k.symmetric_eigen().values;
    2.0 * (l[0] + l[1]).min(l[0] + l[2]).min(l[1] + l[2])
}

/// `V = ½‖Ω̃‖² + Φ − k_V Ω̃·e`.
pub fn lyapunov_v(state: &OrientationEstimatorState, ctx: &TruthContext, k_v: f64) -> f64 {
    let w = state.omega_tilde;
    0.5 * w.norm_squared() + error_function(&state.r_hat, ctx)
        - k_v * w.dot(error_vector(&state.r_hat, ctx))
}

/// Half of `min{√(2σ), 4k_ω / ((k_ω + ω̄)² + 4 Σk)}`.
pub fn pick_k_v(k_omega: f64, gain_sum: f64, omega_bound: f64, sigma_lower: f64) -> f64 {
    let positivity = (2.0 * sigma_lower).sqrt();
    let decrease = 4.0 * k_omega / ((k_omega + omega_bound).powi(2) + 4.0 * gain_sum);
    0.5 * positivity.min(decrease)
}

/// Numerical estimate of `σ` in `σ‖e‖² ≤ Φ`: the minimum of `Φ / ‖e‖²` over
/// Haar-random and small-angle relative orientations.
pub fn estimate_sigma_lower(k: &Mat3, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for s in 0..samples {
        let q = if s % 2 == 0 {
            random_rotation(&mut rng)
        } else {
            let angle = 10f64.powf(rng.random_range(-4.0..0.5));
            exp_so3(random_unit_vector(&mut rng).get().scale(angle))
        };
        let e = error_vector_norm_relative(q.matrix(), k);
        if e > 1e-9 {
            best = best.min(error_function_relative(q.matrix(), k) / (e * e));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{AgentId, NetworkTopology, Waveform};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_ctx(r: &mut ChaCha8Rng, n_dirs: usize) -> TruthContext {
        let mut directions: Vec<(f64, UnitVec3)> = (0..n_dirs)
            .map(|_| (r.random_range(0.5..1.5), random_unit_vector(r)))
            .collect();
        if n_dirs == 2 {
            let b3 = virtual_direction(directions[0].1.get(), directions[1].1.get()).unwrap();
            directions.push((r.random_range(0.5..1.5), b3));
        }
        TruthContext {
            rotation: random_rotation(r),
            directions,
        }
    }

    /// Bundle as the neighbors would publish it when their estimates are
    /// `published[j]` (global frame rotations of neighbor j).
    fn bundle_for(
        ctx: &TruthContext,
        neighbor_rot: &[Rotation],
        neighbor_est: &[Rotation],
    ) -> DirectionBundle {
        let rt = ctx.rotation.transpose();
        let pairs = (0..neighbor_rot.len())
            .map(|j| {
                let (k, b) = ctx.directions[j];
                // neighbor j measures b_ji = −b_ij in its own frame
                let b_ji_j = neighbor_rot[j].transpose() * (-b.get());
                DirectionPair {
                    gain: k,
                    b_own: UnitVec3::new(rt * b).unwrap(),
                    b_comm: neighbor_est[j] * b_ji_j,
                }
            })
            .collect();
        let vg = ctx.directions.last().unwrap().0;
        DirectionBundle::with_virtual(pairs, vg).unwrap()
    }

    #[test]
    fn error_vector_vanishes_at_truth() {
        let mut r = rng(1);
        let ctx = random_ctx(&mut r, 3);
        assert!(error_vector(&ctx.rotation, &ctx).norm() < 1e-15);
        assert!(error_function(&ctx.rotation, &ctx).abs() < 1e-14);
    }

    #[test]
    fn error_vector_quarter_turn() {
        let mut r = rng(2);
        let rot = random_rotation(&mut r);
        let r_hat = rot * exp_so3(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let ctx = TruthContext {
            rotation: rot,
            directions: vec![(1.0, UnitVec3::normalize(rot * Vec3::X).unwrap())],
        };
        let e = error_vector(&r_hat, &ctx);
        // direct evaluation of (R̂ᵀ b) × (Rᵀ b)
        let rm = rot.matrix().transpose();
        let rhm = r_hat.matrix().transpose();
        let b = ctx.directions[0].1.get();
        let expected = (rhm * b).cross(rm * b);
        assert!((e - expected).norm() < 1e-15);
        // Rᵀb = x, R̂ᵀb = −y
        assert!((e.norm() - 1.0).abs() < 1e-14);
        // In R's body frame the error is the z axis.
        assert!((e - Vec3::Z).norm() < 1e-14);
    }

    #[test]
    fn error_vector_is_gradient_by_central_differences() {
        let mut r = rng(3);
        for n in [2, 3, 4] {
            for _ in 0..30 {
                let ctx = random_ctx(&mut r, n);
                let r_hat = random_rotation(&mut r);
                let eta = random_unit_vector(&mut r)
                    .get()
                    .scale(r.random_range(0.2..2.0));
                let eps = 1e-5;
                let fd = (error_function(&(r_hat * exp_so3(eta.scale(eps))), &ctx)
                    - error_function(&(r_hat * exp_so3(eta.scale(-eps))), &ctx))
                    / (2.0 * eps);
                let an = eta.dot(error_vector(&r_hat, &ctx));
                assert!((fd - an).abs() < 1e-6, "fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn error_function_dual_forms_agree() {
        let mut r = rng(4);
        for _ in 0..100 {
            let ctx = random_ctx(&mut r, 3);
            let r_hat = random_rotation(&mut r);
            let a = error_function(&r_hat, &ctx);
            let b = error_function_trace_form(&r_hat, &ctx);
            assert!((a - b).abs() < 1e-10);
            assert!(a >= -1e-12);
            let q = *r_hat.matrix() * ctx.rotation.matrix().transpose();
            assert!((error_function_relative(&q, &ctx.k_matrix()) - a).abs() < 1e-10);
            let e = error_vector(&r_hat, &ctx).norm();
            assert!((error_vector_norm_relative(&q, &ctx.k_matrix()) - e).abs() < 1e-10);
        }
    }

    #[test]
    fn error_function_at_undesired_point() {
        let mut r = rng(5);
        let ctx = random_ctx(&mut r, 3);
        let k = ctx.k_matrix();
        let eig = k.symmetric_eigen();
        let l = eig.values;
        let pts = critical_points(&k).unwrap();
        // flipping axis a leaves eigenvalue a alone and doubles the other two
        for (a, q) in pts[1..].iter().enumerate() {
            let r_hat = *q * ctx.rotation;
            let expected = 2.0 * (l[0] + l[1] + l[2] - l[a]);
            assert!((error_function(&r_hat, &ctx) - expected).abs() < 1e-10);
        }
        assert!((phi_threshold(&k) - 2.0 * (l[0] + l[1])).abs() < 1e-12);
    }

    #[test]
    fn feedback_equals_error_vector_with_exact_neighbors() {
        let mut r = rng(6);
        for n in [2, 3] {
            let ctx = random_ctx(&mut r, n);
            let rots: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut r)).collect();
            let state = OrientationEstimatorState::new(random_rotation(&mut r), 2.0);
            let bundle = bundle_for(&ctx, &rots, &rots);
            let fb = feedback_term(&state, &bundle);
            let e = error_vector(&state.r_hat, &ctx);
            assert!((fb - e).norm() < 1e-14, "{fb} vs {e}");

            let at_truth = OrientationEstimatorState::new(ctx.rotation, 2.0);
            assert!(feedback_term(&at_truth, &bundle).norm() < 1e-14);
        }
    }

    #[test]
    fn feedback_minus_error_is_neighbor_disturbance() {
        let mut r = rng(7);
        let ctx = random_ctx(&mut r, 3);
        let rots: Vec<Rotation> = (0..3).map(|_| random_rotation(&mut r)).collect();
        let ests: Vec<Rotation> = (0..3).map(|_| random_rotation(&mut r)).collect();
        let state = OrientationEstimatorState::new(random_rotation(&mut r), 2.0);
        let bundle = bundle_for(&ctx, &rots, &ests);
        let h = feedback_term(&state, &bundle) - error_vector(&state.r_hat, &ctx);
        // h = Σ k R̂ᵀ(R̂_j − R_j) b_ij^j × b_ij^i
        let rht = state.r_hat.matrix().transpose();
        let mut oracle = Vec3::ZERO;
        for j in 0..3 {
            let (k, b) = ctx.directions[j];
            let b_ij_j = rots[j].transpose() * b;
            let diff = *ests[j].matrix() - *rots[j].matrix();
            let b_ij_i = ctx.rotation.transpose() * b;
            oracle += (rht * (diff * b_ij_j)).cross(b_ij_i).scale(k);
        }
        assert!((h - oracle).norm() < 1e-12);
    }

    #[test]
    fn state_derivative_examples() {
        let mut r = rng(8);
        let ctx = random_ctx(&mut r, 3);
        let rots: Vec<Rotation> = (0..3).map(|_| random_rotation(&mut r)).collect();
        let bundle = bundle_for(&ctx, &rots, &rots);

        let eq = OrientationEstimatorState::new(ctx.rotation, 2.0);
        let (t, d) = state_derivative(&eq, &bundle, Vec3::ZERO);
        assert!(t.norm() < 1e-15 && d.norm() < 1e-14);

        let v = Vec3::new(0.3, -1.0, 2.0);
        let decaying = OrientationEstimatorState {
            omega_tilde: v,
            ..eq
        };
        let (_, d) = state_derivative(&decaying, &bundle, Vec3::ZERO);
        assert!((d - v.scale(-2.0)).norm() < 1e-14);

        let w = Vec3::new(0.15, 0.0, 0.0);
        let (t, _) = state_derivative(&eq, &bundle, w);
        assert_eq!(t, w);
    }

    #[test]
    fn critical_points_of_diagonal_k() {
        let pts = critical_points(&Mat3::diag(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(pts[0], Rotation::IDENTITY);
        let expected = [
            Mat3::diag(1.0, -1.0, -1.0),
            Mat3::diag(-1.0, 1.0, -1.0),
            Mat3::diag(-1.0, -1.0, 1.0),
        ];
        for (p, e) in pts[1..].iter().zip(expected) {
            assert!((*p.matrix() - e).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn critical_points_are_stationary() {
        let mut r = rng(9);
        for _ in 0..20 {
            let ctx = random_ctx(&mut r, 3);
            let k = ctx.k_matrix();
            let Ok(pts) = critical_points(&k) else {
                continue;
            };
            for (idx, q) in pts.iter().enumerate() {
                let r_hat = *q * ctx.rotation;
                assert!(error_vector(&r_hat, &ctx).norm() < 1e-8);
                assert!(Rotation::new(*q.matrix()).is_ok());
                if idx > 0 {
                    assert!((q.matrix().trace() + 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn critical_points_reject_repeated_eigenvalues() {
        assert!(matches!(
            critical_points(&Mat3::diag(1.0, 1.0, 2.0)),
            Err(EstimatorError::RepeatedEigenvalues { .. })
        ));
    }

    #[test]
    fn lyapunov_examples() {
        let mut r = rng(10);
        let ctx = random_ctx(&mut r, 3);
        let eq = OrientationEstimatorState::new(ctx.rotation, 2.0);
        assert!(lyapunov_v(&eq, &ctx, 0.3).abs() < 1e-14);
        for _ in 0..50 {
            let s = OrientationEstimatorState {
                r_hat: random_rotation(&mut r),
                omega_tilde: random_unit_vector(&mut r).get().scale(3.0),
                k_omega: 2.0,
            };
            assert!(lyapunov_v(&s, &ctx, 0.0) >= 0.0);
        }
    }

    #[test]
    fn pick_k_v_examples() {
        assert!((pick_k_v(1.0, 1.0, 0.0, 0.5) - 0.4).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for w in [0.0, 0.1, 0.5, 1.0, 5.0] {
            let kv = pick_k_v(2.0, 3.0, w, 10.0);
            assert!(kv < prev);
            prev = kv;
        }
        let second_only = 0.5 * 4.0 * 2.0 / ((2.0f64 + 0.3).powi(2) + 4.0 * 3.0);
        assert!((pick_k_v(2.0, 3.0, 0.3, 1e12) - second_only).abs() < 1e-15);
    }

    #[test]
    fn sigma_estimate_bounds_ratio() {
        let mut r = rng(11);
        let ctx = random_ctx(&mut r, 3);
        let k = ctx.k_matrix();
        let sigma = estimate_sigma_lower(&k, 20_000, 1);
        assert!(sigma > 0.0 && sigma.is_finite());
        // near identity Φ/‖e‖² → ηᵀHη / (2‖Hη‖²) ≥ 1/(2 λmax(H)), H = tr(K) I − K
        let lmax_h = k.trace() - k.symmetric_eigen().values[0];
        assert!(sigma >= 1.0 / (2.0 * lmax_h) - 1e-3);
    }

    #[test]
    fn virtual_pair_matches_truth_when_exact() {
        let mut r = rng(12);
        let ctx = random_ctx(&mut r, 2);
        let rots: Vec<Rotation> = (0..2).map(|_| random_rotation(&mut r)).collect();
        let bundle = bundle_for(&ctx, &rots, &rots);
        let v = bundle.virtual_pair.unwrap();
        let b3 = ctx.directions[2].1.get();
        assert!((v.b_own.get() - ctx.rotation.transpose() * b3).norm() < 1e-14);
        assert!((v.b_comm + b3).norm() < 1e-14);
    }

    #[test]
    fn truth_context_from_topology() {
        let topo = NetworkTopology::new(
            3,
            vec![AgentId(0), AgentId(1)],
            &[(AgentId(2), AgentId(0)), (AgentId(2), AgentId(1))],
        );
        let truth = GroundTruth {
            positions: vec![Vec3::X, Vec3::Y, Vec3::ZERO],
            orientations: vec![Rotation::IDENTITY; 3],
            angular_velocity: vec![Waveform::Zero; 3],
        };
        let ctx = TruthContext::new(AgentId(2), &topo, &truth, Rotation::IDENTITY).unwrap();
        assert_eq!(ctx.directions.len(), 3);
        assert!((ctx.k_matrix() - Mat3::IDENTITY).frobenius_norm() < 1e-15);
    }
}
