//! Twin-leader-follower topology, ground truth, validation, and gain design.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::NetworkError;
use crate::geom3::{Mat3, Rotation, UnitVec3, Vec3};

/// Minimum separation between two agents, meters.
pub const EPS_POS: f64 = 1e-6;
/// Two directions whose cross product is shorter than this are collinear.
pub const EPS_COL: f64 = 1e-6;
/// `K` must have its smallest eigenvalue above this.
pub const MIN_K_EIGENVALUE: f64 = 1e-9;
/// Required pairwise eigenvalue separation of a designed `K`.
pub const DELTA_EIG: f64 = 1e-3;
pub const MAX_GAIN_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Directed edge from the owning agent to `to`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub to: AgentId,
    /// Orientation gain `k_ij`.
    pub gain: f64,
    /// Position gain `k_p_ij`.
    pub position_gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    n: usize,
    leaders: Vec<AgentId>,
    neighbors: Vec<Vec<Edge>>,
    virtual_gains: Vec<f64>,
}

impl NetworkTopology {
    /// Builds a topology with unit gains. Nothing is validated here; call
    /// [`validate_topology`] for that.
    pub fn new(n: usize, leaders: Vec<AgentId>, edges: &[(AgentId, AgentId)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(from, to) in edges {
            if let Some(list) = neighbors.get_mut(from.0) {
                list.push(Edge {
                    to,
                    gain: 1.0,
                    position_gain: 1.0,
                });
            }
        }
        NetworkTopology {
            n,
            leaders,
            neighbors,
            virtual_gains: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn leaders(&self) -> &[AgentId] {
        &self.leaders
    }

    pub fn is_leader(&self, id: AgentId) -> bool {
        self.leaders.contains(&id)
    }

    /// Followers in agent order.
    pub fn followers(&self) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.n).map(AgentId).filter(|&i| !self.is_leader(i))
    }

    pub fn neighbors(&self, id: AgentId) -> &[Edge] {
        &self.neighbors[id.0]
    }

    pub fn neighbors_mut(&mut self, id: AgentId) -> &mut [Edge] {
        &mut self.neighbors[id.0]
    }

    /// Gain of the virtual third direction. Only used when the agent has
    /// exactly two neighbors.
    pub fn virtual_gain(&self, id: AgentId) -> f64 {
        self.virtual_gains[id.0]
    }

    pub fn uses_virtual_direction(&self, id: AgentId) -> bool {
        self.neighbors[id.0].len() == 2
    }

    pub fn set_virtual_gain(&mut self, id: AgentId, gain: f64) {
        self.virtual_gains[id.0] = gain;
    }

    pub fn apply_gains(&mut self, id: AgentId, gains: &GainAssignment) {
        for (edge, &k) in self.neighbors[id.0].iter_mut().zip(&gains.edge_gains) {
            edge.gain = k;
        }
        if let Some(k) = gains.virtual_gain {
            self.virtual_gains[id.0] = k;
        }
    }

    /// Sum of orientation gains, including the virtual direction when used.
    pub fn gain_sum(&self, id: AgentId) -> f64 {
        let measured: f64 = self.neighbors[id.0].iter().map(|e| e.gain).sum();
        if self.uses_virtual_direction(id) {
            measured + self.virtual_gains[id.0]
        } else {
            measured
        }
    }
}

/// Body angular velocity profile of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Waveform {
    #[default]
    Zero,
    Constant(Vec3),
}

impl Waveform {
    pub fn at(&self, _t: f64) -> Vec3 {
        match *self {
            Waveform::Zero => Vec3::ZERO,
            Waveform::Constant(w) => w,
        }
    }

    /// Upper bound on `‖ω(t)‖`.
    pub fn bound(&self) -> f64 {
        self.at(0.0).norm()
    }

    /// Upper bound on `‖ω̇(t)‖`.
    pub fn rate_bound(&self) -> f64 {
        0.0
    }
}

/// True (non-translating) agent poses at `t = 0` and their body rates.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub positions: Vec<Vec3>,
    pub orientations: Vec<Rotation>,
    pub angular_velocity: Vec<Waveform>,
}

impl GroundTruth {
    /// Global unit direction from `i` toward `j`.
    pub fn direction(&self, i: AgentId, j: AgentId) -> Result<UnitVec3, NetworkError> {
        Ok(UnitVec3::normalize(
            self.positions[j.0] - self.positions[i.0],
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewLeaders {
        count: usize,
    },
    LeaderAfterFollower {
        leader: usize,
        follower: usize,
    },
    TooFewNeighbors {
        agent: usize,
        count: usize,
    },
    NeighborNotEarlier {
        agent: usize,
        neighbor: usize,
    },
    UnknownNeighbor {
        agent: usize,
        neighbor: usize,
    },
    DuplicateNeighbor {
        agent: usize,
        neighbor: usize,
    },
    NonPositiveGain {
        agent: usize,
        neighbor: usize,
        gain: f64,
    },
    Collocated {
        a: usize,
        b: usize,
        distance: f64,
    },
    Collinear {
        agent: usize,
    },
    CoplanarDirections {
        agent: usize,
        min_eigenvalue: f64,
    },
    GainDesignFailed {
        agent: usize,
    },
    Schema {
        field: String,
        reason: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewLeaders { count } => write!(f, "fewer than 2 leaders ({count})"),
            LeaderAfterFollower { leader, follower } => write!(
                f,
                "leaders precede followers: leader #{leader} comes after follower #{follower}"
            ),
            TooFewNeighbors { agent, count } => {
                write!(f, "agent #{agent}: neighbor count < 2 ({count})")
            }
            NeighborNotEarlier { agent, neighbor } => write!(
                f,
                "agent #{agent}: neighbor #{neighbor} is not ordered before it"
            ),
            UnknownNeighbor { agent, neighbor } => {
                write!(f, "agent #{agent}: neighbor #{neighbor} does not exist")
            }
            DuplicateNeighbor { agent, neighbor } => {
                write!(f, "agent #{agent}: neighbor #{neighbor} listed twice")
            }
            NonPositiveGain {
                agent,
                neighbor,
                gain,
            } => write!(f, "edge #{agent} -> #{neighbor}: gain {gain} is not positive"),
            Collocated { a, b, distance } => {
                write!(f, "agents #{a} and #{b} are collocated (distance {distance:e} m)")
            }
            Collinear { agent } => {
                write!(f, "agent #{agent}: every neighbor pair is collinear with it")
            }
            CoplanarDirections {
                agent,
                min_eigenvalue,
            } => write!(
                f,
                "agent #{agent}: neighbor directions are coplanar (min eigenvalue {min_eigenvalue:e})"
            ),
            GainDesignFailed { agent } => {
                write!(f, "agent #{agent}: could not design gains with distinct eigenvalues")
            }
            Schema { field, reason } => write!(f, "{field}: {reason}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

/// Checks every clause of the twin-leader-follower definition.
pub fn validate_topology(topo: &NetworkTopology) -> ValidationReport {
    let mut v = Vec::new();
    if topo.leaders.len() < 2 {
        v.push(Violation::TooFewLeaders {
            count: topo.leaders.len(),
        });
    }
    if let Some(first_follower) = topo.followers().next() {
        for &l in &topo.leaders {
            if l > first_follower {
                v.push(Violation::LeaderAfterFollower {
                    leader: l.0,
                    follower: first_follower.0,
                });
            }
        }
    }
    for i in 0..topo.n {
        for e in &topo.neighbors[i] {
            if !(e.gain > 0.0) || !(e.position_gain > 0.0) {
                v.push(Violation::NonPositiveGain {
                    agent: i,
                    neighbor: e.to.0,
                    gain: e.gain.min(e.position_gain),
                });
            }
        }
    }
    for i in topo.followers() {
        let list = &topo.neighbors[i.0];
        if list.len() < 2 {
            v.push(Violation::TooFewNeighbors {
                agent: i.0,
                count: list.len(),
            });
        }
        if list.len() == 2 && !(topo.virtual_gains[i.0] > 0.0) {
            v.push(Violation::NonPositiveGain {
                agent: i.0,
                neighbor: i.0,
                gain: topo.virtual_gains[i.0],
            });
        }
        for (k, e) in list.iter().enumerate() {
            if e.to.0 >= topo.n {
                v.push(Violation::UnknownNeighbor {
                    agent: i.0,
                    neighbor: e.to.0,
                });
            } else if e.to >= i {
                v.push(Violation::NeighborNotEarlier {
                    agent: i.0,
                    neighbor: e.to.0,
                });
            }
            if list[..k].iter().any(|prev| prev.to == e.to) {
                v.push(Violation::DuplicateNeighbor {
                    agent: i.0,
                    neighbor: e.to.0,
                });
            }
        }
    }
    ValidationReport { violations: v }
}

/// Checks non-collocation and, for each follower, that at least one pair of
/// neighbors is not collinear with it. Assumes a valid topology.
pub fn validate_geometry(topo: &NetworkTopology, truth: &GroundTruth) -> ValidationReport {
    let mut v = Vec::new();
    let p = &truth.positions;
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            let distance = (p[a] - p[b]).norm();
            if distance <= EPS_POS {
                v.push(Violation::Collocated { a, b, distance });
            }
        }
    }
    for i in topo.followers() {
        let dirs: Vec<UnitVec3> = topo
            .neighbors(i)
            .iter()
            .filter(|e| e.to.0 < p.len())
            .filter_map(|e| truth.direction(i, e.to).ok())
            .collect();
        let any_independent = dirs.iter().enumerate().any(|(k, a)| {
            dirs[k + 1..]
                .iter()
                .any(|b| a.get().cross(b.get()).norm() > EPS_COL)
        });
        if !any_independent {
            v.push(Violation::Collinear { agent: i.0 });
        }
    }
    ValidationReport { violations: v }
}

/// Normalized cross product of two measured directions.
pub fn virtual_direction(a: Vec3, b: Vec3) -> Result<UnitVec3, NetworkError> {
    Ok(UnitVec3::normalize(a.cross(b))?)
}

/// `Σ k b bᵀ` over the given weighted directions.
pub fn weighted_outer_sum<I>(terms: I) -> Mat3
where
    I: IntoIterator<Item = (f64, Vec3)>,
{
    terms
        .into_iter()
        .fold(Mat3::ZERO, |acc, (k, b)| acc + Mat3::outer(b, b).scale(k))
}

/// Directions (global frame) and gains that enter `K_i`, virtual one last.
pub fn weighted_directions(
    i: AgentId,
    topo: &NetworkTopology,
    truth: &GroundTruth,
) -> Result<Vec<(f64, UnitVec3)>, NetworkError> {
    let mut out = topo
        .neighbors(i)
        .iter()
        .map(|e| Ok((e.gain, truth.direction(i, e.to)?)))
        .collect::<Result<Vec<_>, NetworkError>>()?;
    if out.len() == 2 {
        let b3 = virtual_direction(out[0].1.get(), out[1].1.get())?;
        out.push((topo.virtual_gain(i), b3));
    }
    Ok(out)
}

/// `K_i = Σ_j k_ij b_ij b_ijᵀ` with true global directions.
pub fn build_k(
    i: AgentId,
    topo: &NetworkTopology,
    truth: &GroundTruth,
) -> Result<Mat3, NetworkError> {
    let terms = weighted_directions(i, topo, truth)?;
    let k = weighted_outer_sum(terms.iter().map(|&(g, b)| (g, b.get())));
    let min_eigenvalue = k.symmetric_eigen().values[0];
    if !(min_eigenvalue > MIN_K_EIGENVALUE) {
        return Err(NetworkError::CoplanarDirections {
            agent: i.0,
            min_eigenvalue,
        });
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainAssignment {
    pub edge_gains: Vec<f64>,
    pub virtual_gain: Option<f64>,
    /// Eigenvalues of the resulting `K`, ascending.
    pub eigenvalues: [f64; 3],
    pub attempts: usize,
}

/// Samples gains uniformly in `[0.5, 1.5] × base` until the eigenvalues of
/// `K_i` are separated by at least [`DELTA_EIG`].
///
/// The stream is seeded from `seed` and the agent index, so each follower
/// gets independent but reproducible gains. The virtual direction's gain is
/// additionally multiplied by `virtual_multiplier`.
pub fn design_gains(
    i: AgentId,
    topo: &NetworkTopology,
    truth: &GroundTruth,
    seed: u64,
    base: f64,
    virtual_multiplier: f64,
) -> Result<GainAssignment, NetworkError> {
    if topo.is_leader(i) {
        return Err(NetworkError::NotAFollower { agent: i.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i.0 as u64);

    let mut dirs: Vec<Vec3> = topo
        .neighbors(i)
        .iter()
        .map(|e| truth.direction(i, e.to).map(UnitVec3::get))
        .collect::<Result<_, _>>()?;
    let has_virtual = dirs.len() == 2;
    if has_virtual {
        dirs.push(virtual_direction(dirs[0], dirs[1])?.get());
    }

    for attempt in 1..=MAX_GAIN_ATTEMPTS {
        let mut gains: Vec<f64> = dirs
            .iter()
            .map(|_| base * rng.random_range(0.5..=1.5))
            .collect();
        if has_virtual {
            *gains.last_mut().unwrap() *= virtual_multiplier;
        }
        let k = weighted_outer_sum(gains.iter().copied().zip(dirs.iter().copied()));
        let eig = k.symmetric_eigen();
        if !(eig.values[0] > MIN_K_EIGENVALUE) {
            return Err(NetworkError::CoplanarDirections {
                agent: i.0,
                min_eigenvalue: eig.values[0],
            });
        }
        if eig.min_gap() >= DELTA_EIG {
            let virtual_gain = if has_virtual { gains.pop() } else { None };
            return Ok(GainAssignment {
                edge_gains: gains,
                virtual_gain,
                eigenvalues: eig.values,
                attempts: attempt,
            });
        }
    }
    Err(NetworkError::GainDesignFailed {
        agent: i.0,
        attempts: MAX_GAIN_ATTEMPTS,
    })
}

/// Whether a gain set yields pairwise-separated eigenvalues.
pub fn gains_accepted(k: &Mat3) -> bool {
    k.symmetric_eigen().min_gap() >= DELTA_EIG
}
