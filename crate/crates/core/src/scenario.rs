//! Scenario documents, simulation runs and CSV traces.
//!
//! A scenario is one JSON object:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "agents": [{"name": "1", "leader": true, "position": [0, 0, 0],
//!               "orientation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "omega": [0, 0, 0]}],
//!   "edges": [{"from": "3", "to": "1"}],
//!   "noise": {"enabled": false, "theta0": 0.0, "freq": 1.0, "phase": 0.0},
//!   "integrator": {"dt": 0.001, "method": "rk4", "reproject_threshold": 1e-9},
//!   "gains": {"mode": "designed", "base": 1.0, "k_omega": 2.0, "k_p": 1.0, "virtual_multiplier": 1.0},
//!   "seeds": {"init": 1, "noise": 2, "gains": 3},
//!   "run": {"duration": 60.0, "stride": 100}
//! }
//! ```
//!
//! Agents are indexed in array order, so leaders must come first. Every
//! section after `edges` is optional.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{NetworkModel, NoiseModel, WorldState};
use crate::error::ScenarioError;
use crate::geom3::{random_rotation, Mat3, Rotation, Vec3};
use crate::integrator::{step, IntegratorConfig};
use crate::metrics::{
    detect_convergence, FollowerRecord, Recorder, TraceRecord, DEFAULT_EPS_ORIENT, DEFAULT_EPS_POS,
    DEFAULT_WINDOW,
};
use crate::network::{
    build_k, design_gains, validate_geometry, validate_topology, AgentId, GroundTruth,
    NetworkTopology, Violation, Waveform,
};
use crate::orientation::{estimate_sigma_lower, phi_threshold, pick_k_v};

pub const SCHEMA_VERSION: u32 = 1;
/// Samples used for the numerical `σ` estimate behind `k_V`.
const SIGMA_SAMPLES: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema_version: u32,
    pub agents: Vec<AgentSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub gains: GainSpec,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub leader: bool,
    pub position: Vec3,
    #[serde(default = "identity")]
    pub orientation: Mat3,
    /// Constant body angular velocity, rad/s.
    #[serde(default)]
    pub omega: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_orientation: Option<Mat3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_position: Option<Vec3>,
    /// Virtual-direction gain; only with `gains.mode = "explicit"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_k: Option<f64>,
}

fn identity() -> Mat3 {
    Mat3::IDENTITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    /// Orientation gain; only with `gains.mode = "explicit"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_p: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub enabled: bool,
    /// Amplitude, radians.
    pub theta0: f64,
    /// Hz.
    pub freq: f64,
    pub phase: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            enabled: false,
            theta0: 0.0,
            freq: 1.0,
            phase: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    /// Sampled per follower until the eigenvalues of `K` separate.
    #[default]
    Designed,
    /// Taken from the edges' `k` and the agents' `virtual_k`, default 1.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSpec {
    pub mode: GainMode,
    pub base: f64,
    pub k_omega: f64,
    pub k_p: f64,
    pub virtual_multiplier: f64,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec {
            mode: GainMode::Designed,
            base: 1.0,
            k_omega: crate::orientation::DEFAULT_K_OMEGA,
            k_p: crate::position::DEFAULT_K_P,
            virtual_multiplier: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub noise: u64,
    pub gains: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            init: 1,
            noise: 2,
            gains: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Simulated seconds.
    pub duration: f64,
    /// Integration steps per trace record.
    pub stride: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            duration: 60.0,
            stride: 100,
        }
    }
}

/// Per-follower gain and stability diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainReport {
    pub agent: String,
    pub gains: Vec<f64>,
    pub virtual_gain: Option<f64>,
    /// Ascending eigenvalues of `K`.
    pub k_eigenvalues: [f64; 3],
    pub attempts: usize,
    /// Smallest `Φ` at an undesired critical point.
    pub phi_threshold: f64,
    pub omega_bound: f64,
    pub omega_rate_bound: f64,
    pub sigma_lower: f64,
    pub k_v: f64,
}

/// A validated scenario, ready to run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub names: Vec<String>,
    pub model: NetworkModel,
    pub initial: WorldState,
    pub gain_report: Vec<GainReport>,
}

impl Scenario {
    pub fn integrator(&self) -> &IntegratorConfig {
        &self.doc.integrator
    }

    /// Number of integration steps covering `run.duration`; at least one.
    pub fn steps(&self) -> u64 {
        ((self.doc.run.duration / self.doc.integrator.dt).round() as u64).max(1)
    }

    pub fn follower_names(&self) -> Vec<&str> {
        self.model
            .topology
            .followers()
            .map(|i| self.names[i.0].as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        self.doc.to_json()
    }
}

impl ScenarioDoc {
    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(self).expect("scenario documents always serialize");
        s.push('\n');
        s
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    build_scenario(doc)
}

fn schema(field: impl Into<String>, reason: impl Into<String>) -> Violation {
    Violation::Schema {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Validates a document and derives everything a run needs. Every violated
/// clause is reported at once.
pub fn build_scenario(doc: ScenarioDoc) -> Result<Scenario, ScenarioError> {
    let mut v = Vec::new();
    if doc.schema_version != SCHEMA_VERSION {
        v.push(schema(
            "schema_version",
            format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                doc.schema_version
            ),
        ));
    }
    if let Err(reason) = doc.integrator.check() {
        v.push(schema("integrator", reason));
    }
    if !(doc.run.duration > 0.0) || !doc.run.duration.is_finite() {
        v.push(schema("run.duration", "must be positive"));
    }
    if doc.run.stride == 0 {
        v.push(schema("run.stride", "must be at least 1"));
    }
    let n = &doc.noise;
    if !(0.0..std::f64::consts::PI).contains(&n.theta0) {
        v.push(schema("noise.theta0", "must lie in [0, π)"));
    }
    if !(n.freq > 0.0) || !n.freq.is_finite() {
        v.push(schema("noise.freq", "must be positive"));
    }
    if !n.phase.is_finite() {
        v.push(schema("noise.phase", "must be finite"));
    }
    let g = &doc.gains;
    for (field, value) in [
        ("gains.base", g.base),
        ("gains.k_omega", g.k_omega),
        ("gains.k_p", g.k_p),
        ("gains.virtual_multiplier", g.virtual_multiplier),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            v.push(schema(field, "must be positive"));
        }
    }

    let mut index = HashMap::new();
    let mut orientations = Vec::new();
    for (k, a) in doc.agents.iter().enumerate() {
        if index.insert(a.name.as_str(), k).is_some() {
            v.push(schema(
                format!("agents[{k}].name"),
                format!("duplicate name {:?}", a.name),
            ));
        }
        if !a.position.is_finite() || !a.omega.is_finite() {
            v.push(schema(
                format!("agents[{k}]"),
                "position and omega must be finite",
            ));
        }
        match Rotation::new(a.orientation) {
            Ok(r) => orientations.push(r),
            Err(e) => {
                v.push(schema(format!("agents[{k}].orientation"), e.to_string()));
                orientations.push(Rotation::IDENTITY);
            }
        }
        if let Some(m) = a.initial_orientation {
            if let Err(e) = Rotation::new(m) {
                v.push(schema(
                    format!("agents[{k}].initial_orientation"),
                    e.to_string(),
                ));
            }
        }
        if a.virtual_k.is_some() && g.mode == GainMode::Designed {
            v.push(schema(
                format!("agents[{k}].virtual_k"),
                "explicit gains need gains.mode = \"explicit\"",
            ));
        }
    }

    let mut pairs = Vec::new();
    for (k, e) in doc.edges.iter().enumerate() {
        let from = index.get(e.from.as_str());
        let to = index.get(e.to.as_str());
        if from.is_none() {
            v.push(schema(
                format!("edges[{k}].from"),
                format!("unknown agent {:?}", e.from),
            ));
        }
        if to.is_none() {
            v.push(schema(
                format!("edges[{k}].to"),
                format!("unknown agent {:?}", e.to),
            ));
        }
        if e.k.is_some() && g.mode == GainMode::Designed {
            v.push(schema(
                format!("edges[{k}].k"),
                "explicit gains need gains.mode = \"explicit\"",
            ));
        }
        if let (Some(&f), Some(&t)) = (from, to) {
            pairs.push((AgentId(f), AgentId(t), e));
        }
    }

    let n_agents = doc.agents.len();
    let leaders: Vec<AgentId> = (0..n_agents)
        .filter(|&k| doc.agents[k].leader)
        .map(AgentId)
        .collect();
    let edge_list: Vec<(AgentId, AgentId)> = pairs.iter().map(|&(f, t, _)| (f, t)).collect();
    let mut topology = NetworkTopology::new(n_agents, leaders, &edge_list);
    let mut cursor = vec![0usize; n_agents];
    for &(f, _, e) in &pairs {
        let edge = &mut topology.neighbors_mut(f)[cursor[f.0]];
        cursor[f.0] += 1;
        edge.position_gain = e.k_p.unwrap_or(g.k_p);
        if g.mode == GainMode::Explicit {
            edge.gain = e.k.unwrap_or(1.0);
        }
    }
    if g.mode == GainMode::Explicit {
        for (k, a) in doc.agents.iter().enumerate() {
            topology.set_virtual_gain(AgentId(k), a.virtual_k.unwrap_or(1.0));
        }
    }
    for (k, a) in doc.agents.iter().enumerate() {
        if a.leader && !topology.neighbors(AgentId(k)).is_empty() {
            v.push(schema(
                format!("agents[{k}]"),
                "leaders take no measurements",
            ));
        }
    }

    let truth = GroundTruth {
        positions: doc.agents.iter().map(|a| a.position).collect(),
        orientations,
        angular_velocity: doc
            .agents
            .iter()
            .map(|a| {
                if a.omega == Vec3::ZERO {
                    Waveform::Zero
                } else {
                    Waveform::Constant(a.omega)
                }
            })
            .collect(),
    };

    let mut attempts = vec![0; n_agents];
    let topo_report = validate_topology(&topology);
    let topo_ok = topo_report.is_valid();
    v.extend(topo_report.violations);
    if topo_ok {
        let geo = validate_geometry(&topology, &truth);
        let geo_ok = geo.is_valid();
        v.extend(geo.violations);
        if geo_ok {
            let followers: Vec<AgentId> = topology.followers().collect();
            for &i in &followers {
                if g.mode == GainMode::Designed {
                    match design_gains(
                        i,
                        &topology,
                        &truth,
                        doc.seeds.gains,
                        g.base,
                        g.virtual_multiplier,
                    ) {
                        Ok(a) => {
                            topology.apply_gains(i, &a);
                            attempts[i.0] = a.attempts;
                        }
                        Err(crate::error::NetworkError::CoplanarDirections {
                            agent,
                            min_eigenvalue,
                        }) => v.push(Violation::CoplanarDirections {
                            agent,
                            min_eigenvalue,
                        }),
                        Err(_) => v.push(Violation::GainDesignFailed { agent: i.0 }),
                    }
                } else if let Err(crate::error::NetworkError::CoplanarDirections {
                    agent,
                    min_eigenvalue,
                }) = build_k(i, &topology, &truth)
                {
                    v.push(Violation::CoplanarDirections {
                        agent,
                        min_eigenvalue,
                    });
                }
            }
        }
    }
    if !v.is_empty() {
        return Err(ScenarioError::Validation(v));
    }

    let gain_report = topology
        .followers()
        .map(|i| follower_report(i, &doc, &topology, &truth, attempts[i.0]))
        .collect();

    let noise = if doc.noise.enabled {
        NoiseModel::new(
            doc.noise.theta0,
            doc.noise.freq,
            doc.noise.phase,
            &topology,
            doc.seeds.noise,
        )
    } else {
        NoiseModel::disabled()
    };
    let (r_hat, p_hat) = initial_estimates(&doc, &topology, &truth);
    let initial = WorldState::initial(&topology, &truth, &r_hat, &p_hat);
    let names = doc.agents.iter().map(|a| a.name.clone()).collect();
    let model = NetworkModel {
        topology,
        truth,
        noise,
        k_omega: g.k_omega,
    };
    Ok(Scenario {
        doc,
        names,
        model,
        initial,
        gain_report,
    })
}

fn follower_report(
    i: AgentId,
    doc: &ScenarioDoc,
    topo: &NetworkTopology,
    truth: &GroundTruth,
    attempts: usize,
) -> GainReport {
    let k = build_k(i, topo, truth).expect("validated geometry");
    let eig = k.symmetric_eigen();
    let sigma_lower = estimate_sigma_lower(&k, SIGMA_SAMPLES, doc.seeds.gains ^ i.0 as u64);
    let w = &truth.angular_velocity[i.0];
    let gain_sum = topo.gain_sum(i);
    GainReport {
        agent: doc.agents[i.0].name.clone(),
        gains: topo.neighbors(i).iter().map(|e| e.gain).collect(),
        virtual_gain: topo.uses_virtual_direction(i).then(|| topo.virtual_gain(i)),
        k_eigenvalues: eig.values,
        attempts,
        phi_threshold: phi_threshold(&k),
        omega_bound: w.bound(),
        omega_rate_bound: w.rate_bound(),
        sigma_lower,
        k_v: pick_k_v(doc.gains.k_omega, gain_sum, w.bound(), sigma_lower),
    }
}

/// Followers start at a Haar-random attitude and a position drawn uniformly
/// from the bounding box of the true positions, doubled about its center.
/// Both draws happen for every follower so that overriding one agent's
/// start does not shift the others.
fn initial_estimates(
    doc: &ScenarioDoc,
    topo: &NetworkTopology,
    truth: &GroundTruth,
) -> (Vec<Rotation>, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(doc.seeds.init);
    let p = &truth.positions;
    let mut lo = p[0];
    let mut hi = p[0];
    for q in p {
        lo = Vec3::new(lo.x.min(q.x), lo.y.min(q.y), lo.z.min(q.z));
        hi = Vec3::new(hi.x.max(q.x), hi.y.max(q.y), hi.z.max(q.z));
    }
    let center = (lo + hi).scale(0.5);
    let half = hi - lo;
    let half = Vec3::new(half.x.max(1.0), half.y.max(1.0), half.z.max(1.0));

    let n = topo.len();
    let mut r_hat = truth.orientations.clone();
    let mut p_hat = p.clone();
    for i in topo.followers() {
        let r = random_rotation(&mut rng);
        let mut draw = |c: f64, h: f64| c + rng.random_range(-h..=h);
        let q = Vec3::new(
            draw(center.x, half.x),
            draw(center.y, half.y),
            draw(center.z, half.z),
        );
        let a = &doc.agents[i.0];
        r_hat[i.0] = a
            .initial_orientation
            .map(|m| Rotation::new(m).expect("validated"))
            .unwrap_or(r);
        p_hat[i.0] = a.initial_position.unwrap_or(q);
    }
    debug_assert_eq!(r_hat.len(), n);
    (r_hat, p_hat)
}

/// Cube vertices in units of the side length, agents 1..8.
const CUBE: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
];

/// Directed measurement edges of the eight-agent network, 1-based.
const CUBE_EDGES: [(usize, usize); 15] = [
    (3, 1),
    (3, 2),
    (4, 3),
    (4, 1),
    (4, 2),
    (5, 1),
    (5, 3),
    (5, 2),
    (6, 4),
    (6, 5),
    (6, 3),
    (7, 4),
    (7, 6),
    (8, 6),
    (8, 5),
];

/// Noise settings for [`generate_cube_scenario`]: amplitude in radians and
/// frequency in Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeNoise {
    pub theta0: f64,
    pub freq: f64,
}

/// The eight-agent cube network with leaders 1 and 2. Agents 3, 4 and 5
/// rotate at 0.15 rad/s about their body x, y and z axes; true attitudes are
/// random but fixed by `seed`.
pub fn generate_cube_scenario(side: f64, seed: u64, noise: Option<CubeNoise>) -> ScenarioDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6375_6265);
    let agents = CUBE
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let omega = match k + 1 {
                3 => Vec3::new(0.15, 0.0, 0.0),
                4 => Vec3::new(0.0, 0.15, 0.0),
                5 => Vec3::new(0.0, 0.0, 0.15),
                _ => Vec3::ZERO,
            };
            AgentSpec {
                name: (k + 1).to_string(),
                leader: k < 2,
                position: Vec3::from(*c).scale(side),
                orientation: *random_rotation(&mut rng).matrix(),
                omega,
                initial_orientation: None,
                initial_position: None,
                virtual_k: None,
            }
        })
        .collect();
    let edges = CUBE_EDGES
        .iter()
        .map(|&(f, t)| EdgeSpec {
            from: f.to_string(),
            to: t.to_string(),
            k: None,
            k_p: None,
        })
        .collect();
    let noise = match noise {
        Some(n) => NoiseSpec {
            enabled: true,
            theta0: n.theta0,
            freq: n.freq,
            phase: 0.0,
        },
        None => NoiseSpec::default(),
    };
    ScenarioDoc {
        schema_version: SCHEMA_VERSION,
        agents,
        edges,
        noise,
        integrator: IntegratorConfig::default(),
        gains: GainSpec::default(),
        seeds: Seeds {
            init: seed,
            noise: seed.wrapping_add(1),
            gains: seed.wrapping_add(2),
        },
        run: RunSpec::default(),
    }
}

/// Step-by-step driver for a scenario.
pub struct Simulation<'a> {
    pub scenario: &'a Scenario,
    pub world: WorldState,
    pub steps_taken: u64,
    recorder: Recorder,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let recorder = Recorder::new(&scenario.model)
            .expect("validated geometry")
            .with_lyapunov(scenario.gain_report.iter().map(|g| Some(g.k_v)).collect());
        Simulation {
            scenario,
            world: scenario.initial.clone(),
            steps_taken: 0,
            recorder,
        }
    }

    pub fn step(&mut self) -> Result<(), ScenarioError> {
        let model = &self.scenario.model;
        let cfg = self.scenario.integrator();
        let mut next = step(
            &self.world,
            |s: &WorldState| model.coupled_derivative(s),
            cfg,
            self.steps_taken,
        )?;
        self.steps_taken += 1;
        // avoid accumulating round-off in the clock
        next.t = self.steps_taken as f64 * cfg.dt;
        self.world = next;
        Ok(())
    }

    pub fn record(&self) -> TraceRecord {
        self.recorder.record(&self.scenario.model, &self.world)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalErrors {
    pub agent: String,
    pub orientation_error: f64,
    pub position_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Convergence {
    pub agent: String,
    /// `None` when not converged.
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub duration: f64,
    pub steps: u64,
    pub records: usize,
    pub all_converged: bool,
    pub final_errors: Vec<FinalErrors>,
    pub convergence: Vec<Convergence>,
    pub gains: Vec<GainReport>,
}

/// Runs the scenario, writing a CSV record every `run.stride` steps plus the
/// initial and final states.
pub fn run<W: Write>(scenario: &Scenario, out: W) -> Result<RunSummary, ScenarioError> {
    let names = scenario.follower_names();
    let mut writer = TraceWriter::new(out, &names)?;
    let mut sim = Simulation::new(scenario);
    let mut history = Vec::new();
    let first = sim.record();
    writer.write(&first)?;
    history.push(first);
    let steps = scenario.steps();
    let stride = scenario.doc.run.stride;
    for k in 1..=steps {
        sim.step()?;
        if k % stride == 0 || k == steps {
            let rec = sim.record();
            writer.write(&rec)?;
            history.push(rec);
        }
    }
    writer.flush()?;
    Ok(summarize(scenario, &names, &history, steps))
}

fn summarize(
    scenario: &Scenario,
    names: &[&str],
    history: &[TraceRecord],
    steps: u64,
) -> RunSummary {
    let last = history.last().expect("at least one record");
    let times = detect_convergence(history, DEFAULT_EPS_ORIENT, DEFAULT_EPS_POS, DEFAULT_WINDOW);
    RunSummary {
        duration: last.t,
        steps,
        records: history.len(),
        all_converged: times.iter().all(Option::is_some),
        final_errors: names
            .iter()
            .zip(&last.followers)
            .map(|(n, f)| FinalErrors {
                agent: n.to_string(),
                orientation_error: f.orientation_error,
                position_error: f.position_error,
            })
            .collect(),
        convergence: names
            .iter()
            .zip(times)
            .map(|(n, time)| Convergence {
                agent: n.to_string(),
                time,
            })
            .collect(),
        gains: scenario.gain_report.clone(),
    }
}

const FIELDS: [&str; 4] = ["orient_err", "pos_err", "phi", "residual"];

/// Writes trace records as CSV with full double precision and LF endings.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, follower_names: &[&str]) -> Result<Self, ScenarioError> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["t".to_string()];
        for n in follower_names {
            header.extend(FIELDS.iter().map(|f| format!("{f}_{n}")));
        }
        inner.write_record(&header)?;
        Ok(TraceWriter { inner })
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<(), ScenarioError> {
        let mut row = vec![fmt(rec.t)];
        for f in &rec.followers {
            row.push(fmt(f.orientation_error));
            row.push(fmt(f.position_error));
            row.push(fmt(f.phi));
            row.push(fmt(f.constraint_residual));
        }
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ScenarioError> {
        self.inner.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads a trace written by [`TraceWriter`]. Returns the follower names and
/// the records; `agent` ids are positional.
pub fn read_trace<R: Read>(input: R) -> Result<(Vec<String>, Vec<TraceRecord>), ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(input);
    let header = reader.headers()?.clone();
    let bad = |reason: String| ScenarioError::Validation(vec![schema("trace header", reason)]);
    if header.get(0) != Some("t") || (header.len() - 1) % FIELDS.len() != 0 {
        return Err(bad("expected `t` followed by groups of four columns".into()));
    }
    let mut names = Vec::new();
    for (k, col) in header.iter().skip(1).enumerate() {
        let prefix = format!("{}_", FIELDS[k % FIELDS.len()]);
        let Some(name) = col.strip_prefix(&prefix) else {
            return Err(bad(format!("unexpected column {col:?}")));
        };
        if k % FIELDS.len() == 0 {
            names.push(name.to_string());
        }
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let parse = |k: usize| -> Result<f64, ScenarioError> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("row {}: column {k} is not a number", line + 1)))
        };
        let t = parse(0)?;
        let followers = (0..names.len())
            .map(|f| {
                let base = 1 + f * FIELDS.len();
                Ok(FollowerRecord {
                    agent: AgentId(f),
                    orientation_error: parse(base)?,
                    position_error: parse(base + 1)?,
                    phi: parse(base + 2)?,
                    lyapunov_v: None,
                    constraint_residual: parse(base + 3)?,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        records.push(TraceRecord { t, followers });
    }
    Ok((names, records))
}
