//! Instance builders and measurement runners shared by the acceptance suite and the CLI.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    dynamic_degrees, gen_churn_schedule, gen_drift_schedule, validate_schedule, AdversarySchedule, BudgetParams, ScheduleReport,
    TemporalTopology, TopologyEvent, ValidateOptions,
};
use crate::engine::{completion_metrics, run, run_detailed, Problem, ProtocolConfig, SimulationConfig, SimulationTrace};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::metric::{
    bfs_hops, gen_big_instance, gen_euclidean_instance, gen_lower_bound_instance, hop_radii, PathLossMap, QuasiMetricSpace,
    RadiusSet,
};
use crate::models::{neighbors, ModelParams};
use crate::protocols::{dominating_set_validate, log2n, DominatingSetReport, ProtocolKind, Role};

/// Path-loss exponent of the Euclidean builders.
pub const EUCLID_ZETA: f64 = 3.0;
/// Doubling dimension and packing constant declared for planar instances.
pub const PLANE_LAMBDA: f64 = 2.0;
pub const PLANE_INDEP_CONST: f64 = 9.0;
pub const SINR_BETA: f64 = 2.0;

pub fn default_radii() -> RadiusSet {
    RadiusSet::new(1.0, 0.2).expect("valid radii")
}

/// Planar instance with `f = |uv|^3`, unit power, and `r_min` the smallest pairwise distance
/// (capped at `eps R / 8`).
pub fn planar_instance(points: Vec<[f64; 2]>, radii: RadiusSet) -> Result<Instance> {
    planar_instance_at(points, EUCLID_ZETA, radii)
}

/// [`planar_instance`] with path-loss exponent `zeta`.
pub fn planar_instance_at(points: Vec<[f64; 2]>, zeta: f64, radii: RadiusSet) -> Result<Instance> {
    planar_from_map_at(PathLossMap::euclidean(points, zeta, 1.0)?, zeta, radii)
}

fn planar_from_map(map: PathLossMap, radii: RadiusSet) -> Result<Instance> {
    planar_from_map_at(map, EUCLID_ZETA, radii)
}

pub fn planar_from_map_at(map: PathLossMap, zeta: f64, radii: RadiusSet) -> Result<Instance> {
    let space = QuasiMetricSpace::new(map, zeta)?;
    let mut sep = radii.epsilon * radii.r / 8.0;
    for u in 0..space.n() {
        for v in 0..space.n() {
            if u != v {
                sep = sep.min(space.d(u, v));
            }
        }
    }
    let space = space.with_independence(sep, PLANE_LAMBDA, PLANE_INDEP_CONST)?;
    Ok(Instance::new(space, radii))
}

pub fn line_instance(n: usize, spacing: f64, radii: RadiusSet) -> Result<Instance> {
    planar_instance(line_points(n, spacing), radii)
}

/// `w x h` grid, row-major, node 0 at a corner.
pub fn grid_instance(w: usize, h: usize, spacing: f64, radii: RadiusSet) -> Result<Instance> {
    planar_instance(grid_points(w, h, spacing), radii)
}

pub fn line_points(n: usize, spacing: f64) -> Vec<[f64; 2]> {
    (0..n).map(|i| [i as f64 * spacing, 0.0]).collect()
}

pub fn grid_points(w: usize, h: usize, spacing: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pts.push([x as f64 * spacing, y as f64 * spacing]);
        }
    }
    pts
}

/// `n` uniform points in a `side x side` square.
pub fn cluster_instance(n: usize, side: f64, seed: u64, radii: RadiusSet) -> Result<Instance> {
    planar_from_map(gen_euclidean_instance(n, side, EUCLID_ZETA, seed)?, radii)
}

/// Uniform points at `density` nodes per unit area.
pub fn random_instance(n: usize, density: f64, seed: u64, radii: RadiusSet) -> Result<Instance> {
    random_instance_at(n, density, EUCLID_ZETA, seed, radii)
}

/// [`random_instance`] with path-loss exponent `zeta`.
pub fn random_instance_at(n: usize, density: f64, zeta: f64, seed: u64, radii: RadiusSet) -> Result<Instance> {
    if !(density > 0.0) {
        return Err(Error::param("density", "must be positive"));
    }
    planar_from_map_at(gen_euclidean_instance(n, (n as f64 / density).sqrt(), zeta, seed)?, zeta, radii)
}

/// Hop-distance instance of a `w x h` grid graph.
pub fn big_grid_instance(w: usize, h: usize, epsilon: f64) -> Result<Instance> {
    let mut adj = vec![Vec::new(); w * h];
    for y in 0..h {
        for x in 0..w {
            let v = y * w + x;
            if x + 1 < w {
                adj[v].push(v + 1);
                adj[v + 1].push(v);
            }
            if y + 1 < h {
                adj[v].push(v + w);
                adj[v + w].push(v);
            }
        }
    }
    Ok(Instance::new(gen_big_instance(&adj, None)?, hop_radii(epsilon)?))
}

/// Shapes a scenario can ask for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Instance file on disk.
    File { path: std::path::PathBuf },
    /// Uniform points; give `side`, or `density` in nodes per unit area.
    Euclidean {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        side: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<f64>,
        #[serde(default = "default_zeta")]
        zeta: f64,
    },
    Line {
        n: usize,
        spacing: f64,
        #[serde(default = "default_zeta")]
        zeta: f64,
    },
    Grid {
        w: usize,
        h: usize,
        spacing: f64,
        #[serde(default = "default_zeta")]
        zeta: f64,
    },
    /// Uniform points in a square small enough that everyone hears everyone.
    Clique {
        n: usize,
        #[serde(default = "default_clique_side")]
        side: f64,
    },
    #[serde(rename = "lowerbound")]
    LowerBound { n: usize },
    /// Hop metric of a `w x h` grid graph.
    Big { w: usize, h: usize },
}

fn default_zeta() -> f64 {
    EUCLID_ZETA
}

fn default_clique_side() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(rename = "R", default = "default_r")]
    pub r: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Generator seed; the run seed if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_r() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.2
}

impl InstanceSpec {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            r: default_r(),
            epsilon: default_epsilon(),
            seed: None,
        }
    }

    /// Same spec with `n` nodes, for shapes sized by a node count.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        let mut s = self.clone();
        match &mut s.shape {
            Shape::Euclidean { n: m, .. } | Shape::Line { n: m, .. } | Shape::Clique { n: m, .. } | Shape::LowerBound { n: m } => *m = n,
            _ => return Err(Error::config("sweep.n", "instance shape has no node count")),
        }
        Ok(s)
    }

    /// Builds the instance. Lower-bound instances also report the source they were drawn with.
    pub fn build(&self, run_seed: u64) -> Result<(Instance, Option<usize>)> {
        let radii = RadiusSet::new(self.r, self.epsilon)?;
        let seed = self.seed.unwrap_or(run_seed);
        let inst = match &self.shape {
            Shape::File { path } => Instance::load(path)?,
            Shape::Euclidean { n, side, density, zeta } => {
                let side = match (side, density) {
                    (Some(s), None) => *s,
                    (None, Some(d)) if *d > 0.0 => (*n as f64 / d).sqrt(),
                    _ => return Err(Error::config("instance", "euclidean needs exactly one of side, density (> 0)")),
                };
                let map = gen_euclidean_instance(*n, side, *zeta, seed)?;
                planar_from_map_at(map, *zeta, radii)?
            }
            Shape::Line { n, spacing, zeta } => planar_instance_at(line_points(*n, *spacing), *zeta, radii)?,
            Shape::Grid { w, h, spacing, zeta } => planar_instance_at(grid_points(*w, *h, *spacing), *zeta, radii)?,
            Shape::Clique { n, side } => cluster_instance(*n, *side, seed, radii)?,
            Shape::LowerBound { n } => {
                let s = lower_bound_setup(*n, self.epsilon, self.r, seed)?;
                return Ok((s.instance, Some(s.source)));
            }
            Shape::Big { w, h } => big_grid_instance(*w, *h, self.epsilon)?,
        };
        Ok((inst, None))
    }
}

/// `Delta = max_v |N(v, eps)|`.
pub fn max_degree(space: &QuasiMetricSpace, radii: &RadiusSet) -> Result<usize> {
    let mut best = 0;
    for v in space.present_nodes() {
        best = best.max(neighbors(space, radii, v, radii.epsilon)?.len());
    }
    Ok(best)
}

/// Hop distances from `s` in the communication graph (`u -> v` iff `d(u,v) <= R_B`).
pub fn hop_distances(space: &QuasiMetricSpace, radii: &RadiusSet, s: usize) -> Result<Vec<Option<usize>>> {
    let adj = (0..space.n())
        .map(|u| if space.is_present(u) { neighbors(space, radii, u, radii.epsilon) } else { Ok(Vec::new()) })
        .collect::<Result<Vec<_>>>()?;
    Ok(bfs_hops(&adj, s))
}

/// Lower-bound construction with node identities assigned to points at random.
#[derive(Debug, Clone)]
pub struct LowerBoundSetup {
    pub instance: Instance,
    /// Node placed at each point: `node_at[i]` sits at point `p_{i+1}`.
    pub node_at: Vec<usize>,
    pub source: usize,
    pub relay: usize,
    pub far: usize,
}

pub fn lower_bound_setup(n: usize, epsilon: f64, r: f64, seed: u64) -> Result<LowerBoundSetup> {
    let base = gen_lower_bound_instance(n, epsilon, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node_at: Vec<usize> = (0..n).collect();
    node_at.shuffle(&mut rng);
    let mut point_of = vec![0; n];
    for (p, &v) in node_at.iter().enumerate() {
        point_of[v] = p;
    }
    let map = PathLossMap::from_fn(n, base.power(), |a, b| base.loss(point_of[a], point_of[b]))?;
    let space = QuasiMetricSpace::new(map, 2.0)?.with_independence(epsilon * r / 8.0, 1.0, 2.0)?;
    let source = node_at[rng.gen_range(0..n - 2)];
    Ok(LowerBoundSetup {
        instance: Instance::new(space, RadiusSet::new(r, epsilon)?),
        source,
        relay: node_at[n - 2],
        far: node_at[n - 1],
        node_at,
    })
}

pub fn sinr_config(kind: ProtocolKind, horizon: u64, seed: u64) -> SimulationConfig {
    SimulationConfig::new(ModelParams::sinr(SINR_BETA), ProtocolConfig::new(kind), horizon, seed)
}

/// Horizon cap for a run on `n` nodes.
pub fn max_horizon(n: usize) -> u64 {
    (n.max(2) as u64).pow(2)
}

/// Experiment runs last at least this long, even past `n^2`; the trace header flags them.
pub const MIN_RUN_HORIZON: u64 = 4096;

/// SINR config for a completion run on `n` nodes.
pub fn experiment_config(kind: ProtocolKind, n: usize, seed: u64) -> SimulationConfig {
    let horizon = max_horizon(n).max(MIN_RUN_HORIZON);
    let mut cfg = sinr_config(kind, horizon, seed);
    cfg.allow_long_horizon = horizon > max_horizon(n);
    cfg
}

/// Local broadcast completion (every node mass-delivered), `None` if not within the horizon.
pub fn local_completion(instance: &Instance, seed: u64) -> Result<Option<u64>> {
    let cfg = experiment_config(ProtocolKind::LocalBcast, instance.n(), seed);
    let trace = run(instance, &cfg)?;
    Ok(completion_metrics(&trace, instance, Problem::Local)?.completion)
}

/// Per-node first-reception rounds of a global protocol from `source`.
pub fn global_receptions(instance: &Instance, kind: ProtocolKind, source: usize, seed: u64) -> Result<Vec<Option<u64>>> {
    let mut cfg = experiment_config(kind, instance.n(), seed);
    cfg.source = source;
    let trace = run(instance, &cfg)?;
    Ok(completion_metrics(&trace, instance, Problem::Global)?.first_reception)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpontaneousOutcome {
    pub completion: Option<u64>,
    pub domination: DominatingSetReport,
    pub undecided: usize,
}

pub fn spontaneous_outcome(instance: &Instance, source: usize, seed: u64) -> Result<SpontaneousOutcome> {
    let mut cfg = experiment_config(ProtocolKind::Spontaneous, instance.n(), seed);
    cfg.source = source;
    let out = run_detailed(instance, &cfg)?;
    let roles: Vec<Role> = out.states.iter().map(|s| s.role).collect();
    Ok(SpontaneousOutcome {
        completion: completion_metrics(&out.trace, instance, Problem::Global)?.completion,
        domination: dominating_set_validate(&instance.space, &instance.radii, &roles),
        undecided: roles.iter().filter(|r| **r == Role::Undecided).count(),
    })
}

/// Completion round of the far node on the lower-bound construction for `kind`.
pub fn lower_bound_completion(setup: &LowerBoundSetup, kind: ProtocolKind, seed: u64) -> Result<Option<u64>> {
    let rx = global_receptions(&setup.instance, kind, setup.source, seed)?;
    Ok(rx[setup.far])
}

/// Good-round statistics of plain Try&Adjust from the uniform start `init_p`.
pub fn stabilization_trace(instance: &Instance, init_p: f64, phases: u64, seed: u64) -> Result<SimulationTrace> {
    let mut cfg = sinr_config(ProtocolKind::TryAdjust, 1, seed);
    cfg.protocol.init_p = Some(init_p);
    let len = cfg.protocol.phase.phase_len(instance.n());
    cfg.horizon = phases * len;
    run(instance, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicSetup {
    pub schedule: AdversarySchedule,
    pub report: ScheduleReport,
}

/// Drift within budget merged with churn; validated against the budget.
pub fn dynamic_schedule(instance: &Instance, speed: f64, churn: f64, horizon: u64, seed: u64) -> Result<DynamicSetup> {
    let budget = BudgetParams::default();
    let (drift, _) = gen_drift_schedule(&instance.space, &instance.radii, speed, horizon, budget, seed)?;
    let churn = gen_churn_schedule(instance.n(), churn, horizon, seed ^ 0x9e37_79b9_7f4a_7c15, None)?;
    let schedule = drift.merge(churn);
    let report = validate_schedule(&schedule, &instance.space, &instance.radii, &ValidateOptions::default())?;
    Ok(DynamicSetup { schedule, report })
}

/// One node's check: alive over `[start, start + len)`, and the first mass delivery after `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCheck {
    pub node: usize,
    pub start: u64,
    pub len: u64,
    pub dyn_degree: usize,
    pub delivered_at: Option<u64>,
}

impl IntervalCheck {
    pub fn pass(&self) -> bool {
        self.delivered_at.is_some_and(|r| r < self.start + self.len)
    }
}

/// Local broadcast under `schedule`. For each node, its first stay (from round 0 or an
/// arrival) long enough to contain `[t, t + len)` with `len = ceil(scale (Delta_v^rho(t, t+len-1) + log2 n))`
/// is checked for a mass delivery. Nodes with no such stay are skipped.
pub fn dynamic_local_checks(instance: &Instance, schedule: &AdversarySchedule, scale: f64, seed: u64) -> Result<Vec<IntervalCheck>> {
    let n = instance.n();
    let horizon = schedule.horizon;
    let mut cfg = sinr_config(ProtocolKind::LocalBcast, horizon, seed);
    cfg.schedule = Some(schedule.clone());
    cfg.stop_on_completion = false;
    cfg.allow_long_horizon = true;
    let trace = run(instance, &cfg)?;
    let rho = cfg.protocol.phase.rho;
    let log_n = log2n(n);

    // Stays: [arrival, departure) per node.
    let mut stays: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n];
    let mut open: Vec<Option<u64>> = (0..n).map(|v| (!schedule.initially_absent.contains(&v)).then_some(0)).collect();
    for e in &schedule.events {
        match e.event {
            TopologyEvent::Arrive { node, .. } if open[node].is_none() => open[node] = Some(e.round),
            TopologyEvent::Depart { node } => {
                if let Some(a) = open[node].take() {
                    stays[node].push((a, e.round));
                }
            }
            _ => {}
        }
    }
    for v in 0..n {
        if let Some(a) = open[v] {
            stays[v].push((a, horizon));
        }
    }

    let topo = TemporalTopology::new(&instance.space, schedule.clone())?;
    // Fixed point of len = scale (Delta(t, t+len-1) + log n), starting from the stay's first round.
    let mut cand: Vec<(usize, u64, u64, u64)> = Vec::new();
    for v in 0..n {
        if let Some(&(a, d)) = stays[v].iter().find(|(a, d)| d > a) {
            cand.push((v, a, d, 1));
        }
    }
    let mut degrees = vec![0; cand.len()];
    for _ in 0..8 {
        let queries: Vec<(usize, u64, u64)> = cand.iter().map(|&(v, a, _, len)| (v, a, (a + len - 1).min(horizon - 1))).collect();
        degrees = dynamic_degrees(&topo, &instance.radii, rho, &queries)?;
        let mut changed = false;
        for (c, &deg) in cand.iter_mut().zip(&degrees) {
            let len = (scale * (deg as f64 + log_n)).ceil() as u64;
            if len != c.3 {
                c.3 = len;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut first_mass: Vec<Vec<u64>> = vec![Vec::new(); n];
    for rec in &trace.rounds {
        for s in &rec.slots {
            for &u in &s.mass_delivered {
                if first_mass[u].last() != Some(&rec.round) {
                    first_mass[u].push(rec.round);
                }
            }
        }
    }
    Ok(cand
        .iter()
        .zip(degrees)
        .filter(|(&(_, a, d, len), _)| a + len <= d)
        .map(|(&(v, a, _, len), deg)| IntervalCheck {
            node: v,
            start: a,
            len,
            dyn_degree: deg,
            delivered_at: first_mass[v].iter().copied().find(|&r| r >= a),
        })
        .collect())
}
