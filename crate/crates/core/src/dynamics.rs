//! World simulation: true attitude kinematics, measurement synthesis with
//! optional noise, and assembly of the coupled estimator ODE.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GeomError;
use crate::geom3::{
    exp_so3, hat, project_to_so3, random_unit_vector, Mat3, Rotation, UnitVec3, Vec3,
};
use crate::integrator::IntegrableState;
use crate::network::{AgentId, GroundTruth, NetworkTopology};
use crate::orientation::{
    state_derivative, DirectionBundle, DirectionPair, OrientationEstimatorState,
};
use crate::position::{position_derivative, PositionEstimatorState, PositionPair};

/// Sinusoidal rotation of each measured direction about a fixed per-edge
/// axis: `b̃ = exp(θ(t) X) b` with `θ(t) = θ₀ sin(2π f t + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub enabled: bool,
    pub theta0: f64,
    pub freq: f64,
    pub phase: f64,
    axes: BTreeMap<(usize, usize), UnitVec3>,
}

impl NoiseModel {
    pub fn disabled() -> Self {
        NoiseModel {
            enabled: false,
            theta0: 0.0,
            freq: 1.0,
            phase: 0.0,
            axes: BTreeMap::new(),
        }
    }

    /// Draws one axis per directed edge, both `i → j` and the reverse
    /// `j → i` used for the communicated quantity, in topology order.
    pub fn new(theta0: f64, freq: f64, phase: f64, topo: &NetworkTopology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut axes = BTreeMap::new();
        for i in topo.followers() {
            for e in topo.neighbors(i) {
                axes.insert((i.0, e.to.0), random_unit_vector(&mut rng));
                axes.insert((e.to.0, i.0), random_unit_vector(&mut rng));
            }
        }
        NoiseModel {
            enabled: true,
            theta0,
            freq,
            phase,
            axes,
        }
    }

    pub fn angle(&self, t: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.theta0 * (2.0 * PI * self.freq * t + self.phase).sin()
    }

    pub fn axis(&self, from: AgentId, to: AgentId) -> Option<UnitVec3> {
        self.axes.get(&(from.0, to.0)).copied()
    }

    /// Noisy global direction for edge `from → to` at time `t`.
    pub fn apply(&self, from: AgentId, to: AgentId, b: Vec3, t: f64) -> Vec3 {
        match (self.enabled, self.axis(from, to)) {
            (true, Some(axis)) => exp_so3(axis.get().scale(self.angle(t))) * b,
            _ => b,
        }
    }
}

/// Estimator state of one agent. Leaders hold their true pose here and never
/// change it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentEstimate {
    pub r_hat: Rotation,
    pub omega_tilde: Vec3,
    pub p_hat: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub rotations: Vec<Rotation>,
    pub estimates: Vec<AgentEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldDerivative {
    pub rotations: Vec<Mat3>,
    pub r_hat: Vec<Mat3>,
    pub omega_tilde: Vec<Vec3>,
    pub p_hat: Vec<Vec3>,
}

impl WorldState {
    /// World at `t = 0` with true attitudes from `truth`; followers start at
    /// the given estimates with `Ω̃ = 0`, leaders at their true pose.
    pub fn initial(
        topo: &NetworkTopology,
        truth: &GroundTruth,
        r_hat: &[Rotation],
        p_hat: &[Vec3],
    ) -> Self {
        let estimates = (0..topo.len())
            .map(|i| {
                if topo.is_leader(AgentId(i)) {
                    AgentEstimate {
                        r_hat: truth.orientations[i],
                        omega_tilde: Vec3::ZERO,
                        p_hat: truth.positions[i],
                    }
                } else {
                    AgentEstimate {
                        r_hat: r_hat[i],
                        omega_tilde: Vec3::ZERO,
                        p_hat: p_hat[i],
                    }
                }
            })
            .collect();
        WorldState {
            t: 0.0,
            rotations: truth.orientations.clone(),
            estimates,
        }
    }
}

fn reproject_one(r: &mut Rotation, threshold: f64) -> Result<(), GeomError> {
    if r.orthogonality_drift() > threshold {
        *r = project_to_so3(r.matrix())?;
    }
    Ok(())
}

fn add_scaled(r: &Rotation, d: &Mat3, h: f64) -> Rotation {
    Rotation::from_matrix_unchecked(*r.matrix() + d.scale(h))
}

impl IntegrableState for WorldState {
    type Derivative = WorldDerivative;

    fn time(&self) -> f64 {
        self.t
    }

    fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    fn displaced(&self, d: &WorldDerivative, h: f64) -> Self {
        WorldState {
            t: self.t + h,
            rotations: self
                .rotations
                .iter()
                .zip(&d.rotations)
                .map(|(r, dr)| add_scaled(r, dr, h))
                .collect(),
            estimates: self
                .estimates
                .iter()
                .enumerate()
                .map(|(i, e)| AgentEstimate {
                    r_hat: add_scaled(&e.r_hat, &d.r_hat[i], h),
                    omega_tilde: e.omega_tilde + d.omega_tilde[i].scale(h),
                    p_hat: e.p_hat + d.p_hat[i].scale(h),
                })
                .collect(),
        }
    }

    fn combine(terms: &[(f64, &WorldDerivative)]) -> WorldDerivative {
        let n = terms[0].1.rotations.len();
        let mut out = WorldDerivative {
            rotations: vec![Mat3::ZERO; n],
            r_hat: vec![Mat3::ZERO; n],
            omega_tilde: vec![Vec3::ZERO; n],
            p_hat: vec![Vec3::ZERO; n],
        };
        for &(w, d) in terms {
            for i in 0..n {
                out.rotations[i] += d.rotations[i].scale(w);
                out.r_hat[i] += d.r_hat[i].scale(w);
                out.omega_tilde[i] += d.omega_tilde[i].scale(w);
                out.p_hat[i] += d.p_hat[i].scale(w);
            }
        }
        out
    }

    fn reproject(&mut self, threshold: f64) -> Result<(), GeomError> {
        for r in &mut self.rotations {
            reproject_one(r, threshold)?;
        }
        for e in &mut self.estimates {
            reproject_one(&mut e.r_hat, threshold)?;
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.rotations.iter().all(|r| r.matrix().is_finite())
            && self.estimates.iter().all(|e| {
                e.r_hat.matrix().is_finite() && e.omega_tilde.is_finite() && e.p_hat.is_finite()
            })
    }
}

/// Measurements available to one follower at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub directions: DirectionBundle,
    pub positions: Vec<PositionPair>,
}

/// Everything that stays fixed during a run.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub topology: NetworkTopology,
    pub truth: GroundTruth,
    pub noise: NoiseModel,
    pub k_omega: f64,
}

impl NetworkModel {
    /// Attitude agent `j` publishes: the truth for leaders, `R̂_j` otherwise.
    pub fn published_rotation(&self, world: &WorldState, j: AgentId) -> Rotation {
        if self.topology.is_leader(j) {
            world.rotations[j.0]
        } else {
            world.estimates[j.0].r_hat
        }
    }

    pub fn published_position(&self, world: &WorldState, j: AgentId) -> Vec3 {
        if self.topology.is_leader(j) {
            self.truth.positions[j.0]
        } else {
            world.estimates[j.0].p_hat
        }
    }

    /// Body-frame measurements of follower `i` and what its neighbors
    /// communicate, at `world.t`.
    ///
    /// When the two measured directions of a two-neighbor follower become
    /// parallel (only possible under noise), the virtual direction is
    /// dropped for that instant.
    pub fn synthesize_measurements(&self, world: &WorldState, i: AgentId) -> Measurements {
        let t = world.t;
        let r_i_t = world.rotations[i.0].transpose();
        let mut pairs = Vec::new();
        let mut positions = Vec::new();
        for e in self.topology.neighbors(i) {
            let j = e.to;
            let b_ij = self.truth.positions[j.0] - self.truth.positions[i.0];
            let b_ij = b_ij.scale(1.0 / b_ij.norm());
            let b_own = measured(r_i_t * self.noise.apply(i, j, b_ij, t));
            let b_ji_j = world.rotations[j.0].transpose() * self.noise.apply(j, i, -b_ij, t);
            pairs.push(DirectionPair {
                gain: e.gain,
                b_own,
                b_comm: self.published_rotation(world, j) * b_ji_j,
            });
            positions.push(PositionPair {
                gain: e.position_gain,
                b_own,
                p_hat_neighbor: self.published_position(world, j),
            });
        }
        let directions =
            match DirectionBundle::with_virtual(pairs.clone(), self.topology.virtual_gain(i)) {
                Ok(b) => b,
                Err(_) => DirectionBundle {
                    pairs,
                    virtual_pair: None,
                },
            };
        Measurements {
            directions,
            positions,
        }
    }

    /// Derivative of one follower's estimator: `(dR̂/dt, dΩ̃/dt, dp̂/dt)`.
    pub fn follower_derivative(&self, world: &WorldState, i: AgentId) -> (Mat3, Vec3, Vec3) {
        let est = &world.estimates[i.0];
        let m = self.synthesize_measurements(world, i);
        let omega = self.truth.angular_velocity[i.0].at(world.t);
        let state = OrientationEstimatorState {
            r_hat: est.r_hat,
            omega_tilde: est.omega_tilde,
            k_omega: self.k_omega,
        };
        let (tangent, omega_tilde_dot) = state_derivative(&state, &m.directions, omega);
        let p_dot = position_derivative(
            &PositionEstimatorState { p_hat: est.p_hat },
            &est.r_hat,
            &m.positions,
        );
        (*est.r_hat.matrix() * hat(tangent), omega_tilde_dot, p_dot)
    }

    /// Full derivative of the coupled system. Leaders' estimates are held
    /// fixed; every agent's true attitude follows `Ṙ = R ω^`.
    pub fn coupled_derivative(&self, world: &WorldState) -> WorldDerivative {
        let n = self.topology.len();
        let mut d = WorldDerivative {
            rotations: Vec::with_capacity(n),
            r_hat: vec![Mat3::ZERO; n],
            omega_tilde: vec![Vec3::ZERO; n],
            p_hat: vec![Vec3::ZERO; n],
        };
        for i in 0..n {
            let w = self.truth.angular_velocity[i].at(world.t);
            d.rotations.push(*world.rotations[i].matrix() * hat(w));
        }
        for i in self.topology.followers() {
            let (r, w, p) = self.follower_derivative(world, i);
            d.r_hat[i.0] = r;
            d.omega_tilde[i.0] = w;
            d.p_hat[i.0] = p;
        }
        d
    }
}

fn measured(v: Vec3) -> UnitVec3 {
    UnitVec3::normalize(v).expect("rotated unit vectors are never degenerate")
}
