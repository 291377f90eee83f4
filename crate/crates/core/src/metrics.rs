//! Error metrics and convergence detection.

use serde::Serialize;

use crate::dynamics::{NetworkModel, WorldState};
use crate::error::NetworkError;
use crate::geom3::{geodesic_error, UnitVec3, Vec3};
use crate::network::AgentId;
use crate::orientation::{error_function, lyapunov_v, OrientationEstimatorState, TruthContext};
use crate::position::constraint_residual;

/// Default thresholds for [`detect_convergence`].
pub const DEFAULT_EPS_ORIENT: f64 = 1e-3;
pub const DEFAULT_EPS_POS: f64 = 1e-3;
pub const DEFAULT_WINDOW: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FollowerRecord {
    pub agent: AgentId,
    /// `‖I − R̂ Rᵀ‖_F`
    pub orientation_error: f64,
    /// `‖p̂ − p‖`
    pub position_error: f64,
    pub phi: f64,
    pub lyapunov_v: Option<f64>,
    /// `max_j ‖P(b_ij)(p̂ − p̂_j)‖` against the neighbors' published estimates.
    pub constraint_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub followers: Vec<FollowerRecord>,
}

/// Per-follower quantities that do not change during a run.
#[derive(Clone, Debug)]
pub struct Recorder {
    contexts: Vec<(AgentId, TruthContext, Vec<UnitVec3>)>,
    k_v: Vec<Option<f64>>,
}

impl Recorder {
    pub fn new(model: &NetworkModel) -> Result<Self, NetworkError> {
        let mut contexts = Vec::new();
        for i in model.topology.followers() {
            let ctx = TruthContext::new(
                i,
                &model.topology,
                &model.truth,
                model.truth.orientations[i.0],
            )?;
            let dirs = model
                .topology
                .neighbors(i)
                .iter()
                .map(|e| model.truth.direction(i, e.to))
                .collect::<Result<Vec<_>, _>>()?;
            contexts.push((i, ctx, dirs));
        }
        let k_v = vec![None; contexts.len()];
        Ok(Recorder { contexts, k_v })
    }

    /// Also record `V` with the given `k_V`, one entry per follower in order.
    pub fn with_lyapunov(mut self, k_v: Vec<Option<f64>>) -> Self {
        assert_eq!(k_v.len(), self.contexts.len());
        self.k_v = k_v;
        self
    }

    pub fn record(&self, model: &NetworkModel, world: &WorldState) -> TraceRecord {
        let followers = self
            .contexts
            .iter()
            .zip(&self.k_v)
            .map(|((i, ctx, dirs), k_v)| {
                let est = &world.estimates[i.0];
                let ctx = TruthContext {
                    rotation: world.rotations[i.0],
                    directions: ctx.directions.clone(),
                };
                let neighbors: Vec<Vec3> = model
                    .topology
                    .neighbors(*i)
                    .iter()
                    .map(|e| model.published_position(world, e.to))
                    .collect();
                let state = OrientationEstimatorState {
                    r_hat: est.r_hat,
                    omega_tilde: est.omega_tilde,
                    k_omega: model.k_omega,
                };
                FollowerRecord {
                    agent: *i,
                    orientation_error: geodesic_error(&est.r_hat, &world.rotations[i.0]),
                    position_error: (est.p_hat - model.truth.positions[i.0]).norm(),
                    phi: error_function(&est.r_hat, &ctx),
                    lyapunov_v: k_v.map(|k| lyapunov_v(&state, &ctx, k)),
                    constraint_residual: constraint_residual(est.p_hat, dirs, &neighbors),
                }
            })
            .collect();
        TraceRecord {
            t: world.t,
            followers,
        }
    }
}

/// Per-follower time after which both errors stay below their thresholds
/// for at least `window` seconds of recorded history. `None` means not
/// converged.
pub fn detect_convergence(
    history: &[TraceRecord],
    eps_orient: f64,
    eps_pos: f64,
    window: f64,
) -> Vec<Option<f64>> {
    let Some(first) = history.first() else {
        return Vec::new();
    };
    let last_t = history.last().map_or(0.0, |r| r.t);
    (0..first.followers.len())
        .map(|k| {
            let mut start: Option<f64> = None;
            for rec in history {
                let f = &rec.followers[k];
                if f.orientation_error < eps_orient && f.position_error < eps_pos {
                    start.get_or_insert(rec.t);
                } else {
                    start = None;
                }
            }
            start.filter(|&t0| last_t - t0 >= window - 1e-9)
        })
        .collect()
}
