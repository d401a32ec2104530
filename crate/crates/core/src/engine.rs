//! Deterministic round loop and the replayable trace it produces.
//!
//! Each round applies the schedule's events, lets the protocol draw transmitters from
//! per-node random streams, resolves every slot through the reception model, senses, and
//! updates the protocol state. The trace is one JSON record per line; its hash covers the
//! header and every round record.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{apply_event, dynamic_degrees, initial_space, stable_distances, AdversarySchedule, TemporalTopology, TopologyEvent};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::metric::{QuasiMetricSpace, RadiusSet};
use crate::models::{neighbors, resolve_round, ModelParams, ReceptionModelConfig};
use crate::protocols::{
    bcast_round, local_bcast_round, log2n, spontaneous_round, try_adjust_init, try_adjust_init_uniform, try_adjust_round,
    uniform_ack_round, BcastVariant, Medium, NodeProtocolState, PhaseParams, ProtocolKind, Role, SlotResult,
};
use crate::sensing::{sense_all, SensingConfig, SensingParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Relay probability of informed dominators in spontaneous broadcast.
pub const DEFAULT_P0: f64 = 0.1;
/// Initial probability of the uniform election in spontaneous broadcast.
pub const DEFAULT_ELECTION_P: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    #[serde(alias = "sync")]
    Synchronous,
    #[serde(alias = "async")]
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Passiveness. Defaults to `gamma + 5` for Bcast and 1 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    /// Starts every node at this probability with no lower clamp (uniform variant).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_p: Option<f64>,
    #[serde(default)]
    pub phase: PhaseParams,
    #[serde(default = "yes")]
    pub use_ntd: bool,
}

fn yes() -> bool {
    true
}

impl ProtocolConfig {
    pub fn new(kind: ProtocolKind) -> Self {
        Self {
            kind,
            beta: None,
            p0: None,
            init_p: None,
            phase: PhaseParams::default(),
            use_ntd: true,
        }
    }

    pub fn with_init_p(mut self, p: f64) -> Self {
        self.init_p = Some(p);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    fn effective_beta(&self) -> f64 {
        self.beta.unwrap_or(match self.kind {
            ProtocolKind::Bcast => self.phase.gamma + 5.0,
            _ => 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub sensing: SensingParams,
    pub protocol: ProtocolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<AdversarySchedule>,
    pub horizon: u64,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Nodes' estimate of n; the instance size if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bound: Option<usize>,
    #[serde(default)]
    pub source: usize,
    #[serde(default = "yes")]
    pub stop_on_completion: bool,
    /// Permits horizons beyond `n_bound^2`.
    #[serde(default)]
    pub allow_long_horizon: bool,
}

impl SimulationConfig {
    pub fn new(model: ModelParams, protocol: ProtocolConfig, horizon: u64, seed: u64) -> Self {
        Self {
            model,
            sensing: SensingParams::default(),
            protocol,
            schedule: None,
            horizon,
            seed,
            mode: Mode::Synchronous,
            n_bound: None,
            source: 0,
            stop_on_completion: true,
            allow_long_horizon: false,
        }
    }
}

/// Constants derived from the instance and config, echoed in the trace header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub n: usize,
    pub n_bound: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub epsilon: f64,
    /// Precision of the protocol's primitives.
    pub precision: f64,
    pub comm_radius: f64,
    pub beta: f64,
    pub p0: f64,
    pub phase_len: u64,
    pub i_hat: f64,
    pub model: ReceptionModelConfig,
    pub sensing: SensingConfig,
}

/// A validated config bound to its instance.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Space at round 0, before the first round's events.
    pub space: QuasiMetricSpace,
    pub base_radii: RadiusSet,
    /// Radii at the protocol's precision.
    pub radii: RadiusSet,
    pub derived: DerivedConstants,
    /// `(step length, offset)` per node in asynchronous mode.
    pub ticks: Option<Vec<(u8, u8)>>,
    pub warnings: Vec<String>,
}

pub fn prepare(instance: &Instance, cfg: &SimulationConfig) -> Result<Prepared> {
    let n = instance.n();
    let kind = cfg.protocol.kind;
    let n_bound = cfg.n_bound.unwrap_or(n);
    if n_bound < n {
        return Err(Error::config("n_bound", format!("must be >= n = {n}")));
    }
    if !cfg.allow_long_horizon && (cfg.horizon as u128) > (n_bound.max(2) as u128).pow(2) {
        return Err(Error::config("horizon", format!("exceeds n_bound^2 = {}; set allow_long_horizon", n_bound.max(2).pow(2))));
    }
    if cfg.source >= n {
        return Err(Error::config("source", format!("node {} out of range", cfg.source)));
    }
    if kind.is_global() && cfg.mode != Mode::Synchronous {
        return Err(Error::config("mode", format!("{kind} requires synchronous mode")));
    }
    let dynamic = cfg.schedule.as_ref().is_some_and(|s| !s.is_static());
    if dynamic && matches!(kind, ProtocolKind::BcastStar | ProtocolKind::Spontaneous | ProtocolKind::UniformAck) {
        return Err(Error::StaticOnly(match kind {
            ProtocolKind::BcastStar => "bcast_star",
            ProtocolKind::Spontaneous => "spontaneous",
            _ => "uniform_ack",
        }));
    }
    if kind == ProtocolKind::Spontaneous {
        if let Some((u, v)) = instance.space.asymmetric_pair(1e-9) {
            return Err(Error::NotSymmetric {
                u,
                v,
                forward: instance.space.d(u, v),
                backward: instance.space.d(v, u),
            });
        }
    }
    let space = match &cfg.schedule {
        Some(s) => {
            s.check_sorted()?;
            for (i, e) in s.events.iter().enumerate() {
                let node = match &e.event {
                    TopologyEvent::Arrive { node, .. } | TopologyEvent::Depart { node } | TopologyEvent::Relocate { node, .. } => *node,
                    TopologyEvent::Retune { from, to, .. } => (*from).max(*to),
                };
                if node >= n {
                    return Err(Error::config(format!("schedule.events[{i}]"), format!("node {node} out of range")));
                }
            }
            initial_space(&instance.space, s).map_err(|e| Error::config("schedule.initially_absent", e.to_string()))?
        }
        None => instance.space.clone(),
    };

    let base_radii = instance.radii;
    let radii = base_radii.with_precision(base_radii.epsilon * kind.precision_factor())?;
    let model = ReceptionModelConfig::derive(&cfg.model, &instance.space, &radii)?;
    let sensing = SensingConfig::derive(&instance.space, &model, &radii, &cfg.sensing)?;
    let phase = cfg.protocol.phase;
    phase.validate(sensing.eta)?;
    let beta = cfg.protocol.effective_beta();
    if !(beta >= 1.0) {
        return Err(Error::config("protocol.beta", "must be >= 1"));
    }
    if let Some(p) = cfg.protocol.init_p {
        if !(p > 0.0 && p <= 0.5) {
            return Err(Error::config("protocol.init_p", "must lie in (0, 1/2]"));
        }
    }
    let p0 = cfg.protocol.p0.unwrap_or(DEFAULT_P0);
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::config("protocol.p0", "must lie in (0, 1]"));
    }
    let i_hat = phase.i_hat.unwrap_or_else(|| {
        let zeta = instance.space.zeta();
        let clear = (1.0 - 1.0 / phase.rho).powf(zeta) * model.i_c;
        clear.min(sensing.i_cd).min(sensing.i_ack) / 10.0
    });

    let mut warnings = Vec::new();
    if (cfg.horizon as u128) > (n_bound.max(2) as u128).pow(2) {
        warnings.push(format!("horizon {} exceeds n_bound^2 = {}", cfg.horizon, n_bound.max(2).pow(2)));
    }
    let r_min = instance.space.r_min;
    if kind.is_global() && r_min > base_radii.epsilon * base_radii.r / 4.0 {
        warnings.push(format!("r_min = {r_min} exceeds eps R / 4"));
    } else if r_min > base_radii.r / 4.0 {
        warnings.push(format!("r_min = {r_min} exceeds R / 4"));
    }

    let ticks = (cfg.mode == Mode::Asynchronous).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        (0..n)
            .map(|_| {
                let len: u8 = rng.gen_range(1..=2);
                (len, rng.gen_range(0..len))
            })
            .collect()
    });

    let derived = DerivedConstants {
        n,
        n_bound,
        r: base_radii.r,
        epsilon: base_radii.epsilon,
        precision: radii.epsilon,
        comm_radius: base_radii.comm_radius(),
        beta,
        p0,
        phase_len: phase.phase_len(n_bound),
        i_hat,
        model,
        sensing,
    };
    Ok(Prepared {
        space,
        base_radii,
        radii,
        derived,
        ticks,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub instance_digest: String,
    pub config: SimulationConfig,
    pub derived: DerivedConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticks: Option<Vec<(u8, u8)>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u8,
    pub transmitters: Vec<usize>,
    pub deliveries: Vec<(usize, usize)>,
    pub busy: Vec<usize>,
    pub acks: Vec<usize>,
    /// `(receiver, sender)`.
    pub ntd: Vec<(usize, usize)>,
    /// Transmitters received by every current neighbour at the instance precision.
    pub mass_delivered: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TopologyEvent>,
    /// Slot-0 transmission probability of every node.
    pub probs: Vec<f64>,
    pub slots: Vec<SlotRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub rounds: u64,
    /// First round after which the protocol's stop condition held.
    pub completed_at: Option<u64>,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub header: TraceHeader,
    pub rounds: Vec<RoundRecord>,
    pub footer: TraceFooter,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LineRef<'a> {
    Header(&'a TraceHeader),
    Round(&'a RoundRecord),
    Footer(&'a TraceFooter),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(Box<TraceHeader>),
    Round(RoundRecord),
    Footer(TraceFooter),
}

fn line(l: LineRef<'_>) -> Result<String> {
    Ok(serde_json::to_string(&l)?)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl SimulationTrace {
    /// Hash over the canonical header and round lines.
    pub fn compute_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(line(LineRef::Header(&self.header))?);
        h.update(b"\n");
        for r in &self.rounds {
            h.update(line(LineRef::Round(r))?);
            h.update(b"\n");
        }
        Ok(hex(&h.finalize()))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", line(LineRef::Header(&self.header))?)?;
        for r in &self.rounds {
            writeln!(w, "{}", line(LineRef::Round(r))?)?;
        }
        writeln!(w, "{}", line(LineRef::Footer(&self.footer))?)?;
        Ok(())
    }

    /// Parses a trace and checks its hash; a missing footer means truncation.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut rounds = Vec::new();
        let mut footer = None;
        let mut h = Sha256::new();
        for (i, text) in r.lines().enumerate() {
            let text = text?;
            if text.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(Error::IntegrityFailure(format!("line {}: content after footer", i + 1)));
            }
            let parsed: Line = serde_json::from_str(&text)
                .map_err(|e| Error::IntegrityFailure(format!("line {}: {e}", i + 1)))?;
            match parsed {
                Line::Header(x) if header.is_none() && i == 0 => header = Some(*x),
                Line::Round(x) if header.is_some() => rounds.push(x),
                Line::Footer(x) if header.is_some() => {
                    footer = Some(x);
                    continue;
                }
                _ => return Err(Error::IntegrityFailure(format!("line {}: record out of order", i + 1))),
            }
            h.update(text.as_bytes());
            h.update(b"\n");
        }
        let header = header.ok_or_else(|| Error::IntegrityFailure("empty trace".into()))?;
        let footer = footer.ok_or_else(|| Error::IntegrityFailure("no footer, trace truncated".into()))?;
        if footer.rounds != rounds.len() as u64 {
            return Err(Error::IntegrityFailure(format!(
                "footer counts {} rounds, found {}",
                footer.rounds,
                rounds.len()
            )));
        }
        let hash = hex(&h.finalize());
        if hash != footer.hash {
            return Err(Error::IntegrityFailure(format!("hash mismatch: footer {} computed {hash}", footer.hash)));
        }
        Ok(Self { header, rounds, footer })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct EngineMedium<'a> {
    space: &'a QuasiMetricSpace,
    prep: &'a Prepared,
    rngs: &'a mut [ChaCha8Rng],
    active: &'a [bool],
    round: u64,
}

impl Medium for EngineMedium<'_> {
    fn node_count(&self) -> usize {
        self.space.n()
    }

    fn is_active(&self, v: usize) -> bool {
        self.active[v]
    }

    fn coin(&mut self, v: usize, slot: u8) -> f64 {
        let rng = &mut self.rngs[v];
        rng.set_word_pos(((self.round as u128) * 4 + slot as u128) * 16);
        rng.gen::<f64>()
    }

    fn transmit(&mut self, slot: u8, transmitters: &[usize]) -> Result<SlotResult> {
        let p = self.prep;
        let realization = resolve_round(self.space, &p.derived.model, &p.radii, transmitters, self.round, slot)?;
        let sensed = sense_all(self.space, &p.derived.sensing, &p.radii, &realization);
        Ok(SlotResult { realization, sensed })
    }
}

fn fresh_state(prep: &Prepared, cfg: &SimulationConfig, v: usize) -> Result<NodeProtocolState> {
    let kind = cfg.protocol.kind;
    let mut st = match (kind, cfg.protocol.init_p) {
        (ProtocolKind::Spontaneous, p) => try_adjust_init_uniform(p.unwrap_or(DEFAULT_ELECTION_P))?,
        (_, Some(p)) => try_adjust_init_uniform(p)?,
        (_, None) => try_adjust_init(prep.derived.n_bound, prep.derived.beta)?,
    };
    if kind.is_global() {
        st.has_message = v == cfg.source;
        st.awake = kind == ProtocolKind::Spontaneous || v == cfg.source;
    } else {
        st.has_message = true;
        st.awake = true;
    }
    Ok(st)
}

fn slot0_probs(kind: ProtocolKind, states: &[NodeProtocolState], active: &[bool]) -> Vec<f64> {
    let running: Vec<bool> = states
        .iter()
        .zip(active)
        .map(|(s, &a)| {
            a && !s.stopped
                && match kind {
                    ProtocolKind::TryAdjust | ProtocolKind::LocalBcast => s.awake,
                    ProtocolKind::Bcast | ProtocolKind::BcastStar => s.awake && s.has_message,
                    ProtocolKind::Spontaneous => s.role == Role::Undecided,
                    ProtocolKind::UniformAck => s.has_message,
                }
        })
        .collect();
    let k = running.iter().filter(|&&r| r).count();
    states
        .iter()
        .zip(&running)
        .map(|(s, &r)| match (r, kind) {
            (false, _) => 0.0,
            (true, ProtocolKind::UniformAck) => 1.0 / k as f64,
            (true, _) => s.p,
        })
        .collect()
}

fn is_complete(kind: ProtocolKind, states: &[NodeProtocolState], space: &QuasiMetricSpace) -> bool {
    match kind {
        ProtocolKind::TryAdjust => false,
        ProtocolKind::LocalBcast => space.present_nodes().all(|v| states[v].stopped),
        ProtocolKind::Spontaneous => space
            .present_nodes()
            .all(|v| states[v].has_message && states[v].role != Role::Undecided),
        _ => space.present_nodes().all(|v| states[v].has_message),
    }
}

fn node_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    let base = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|v| {
            let mut r = base.clone();
            r.set_stream(v as u64);
            r
        })
        .collect()
}

fn slot_record(slot: usize, res: SlotResult, space: &QuasiMetricSpace, base: &RadiusSet) -> Result<SlotRecord> {
    let real = res.realization;
    let mut mass = Vec::new();
    for &u in &real.transmitters {
        if neighbors(space, base, u, base.epsilon)?.iter().all(|&v| real.delivered(u, v)) {
            mass.push(u);
        }
    }
    Ok(SlotRecord {
        slot: slot as u8,
        transmitters: real.transmitters,
        deliveries: real.deliveries,
        busy: res.sensed.busy,
        acks: res.sensed.acks,
        ntd: res.sensed.ntd,
        mass_delivered: mass,
    })
}

/// Runs `cfg` on `instance` for at most `cfg.horizon` rounds.
pub fn run(instance: &Instance, cfg: &SimulationConfig) -> Result<SimulationTrace> {
    Ok(run_detailed(instance, cfg)?.trace)
}

/// A trace plus the protocol state every node ended in.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimulationTrace,
    pub states: Vec<NodeProtocolState>,
}

pub fn run_detailed(instance: &Instance, cfg: &SimulationConfig) -> Result<RunOutput> {
    let prep = prepare(instance, cfg)?;
    let kind = cfg.protocol.kind;
    let n = instance.n();
    let header = TraceHeader {
        schema_version: SCHEMA_VERSION,
        instance_digest: instance.digest()?,
        config: cfg.clone(),
        derived: prep.derived.clone(),
        ticks: prep.ticks.clone(),
        warnings: prep.warnings.clone(),
    };
    let mut hasher = Sha256::new();
    hasher.update(line(LineRef::Header(&header))?);
    hasher.update(b"\n");

    let empty = AdversarySchedule::empty(cfg.horizon);
    let schedule = cfg.schedule.as_ref().unwrap_or(&empty);
    let mut space = prep.space.clone();
    let mut states = (0..n).map(|v| fresh_state(&prep, cfg, v)).collect::<Result<Vec<_>>>()?;
    let mut rngs = node_rngs(cfg.seed, n);
    let mut rounds = Vec::new();
    let mut completed_at = None;
    let variant = BcastVariant {
        star: kind == ProtocolKind::BcastStar,
        use_ntd: cfg.protocol.use_ntd,
    };

    for t in 0..cfg.horizon {
        let events: Vec<TopologyEvent> = schedule.events_at(t).iter().map(|e| e.event.clone()).collect();
        for e in &events {
            apply_event(&mut space, e)?;
            if let TopologyEvent::Arrive { node, .. } | TopologyEvent::Depart { node } = e {
                states[*node] = fresh_state(&prep, cfg, *node)?;
            }
        }
        let active: Vec<bool> = (0..n)
            .map(|v| {
                space.is_present(v)
                    && prep.ticks.as_ref().map_or(true, |tk| {
                        let (len, off) = tk[v];
                        (t + off as u64) % len as u64 == 0
                    })
            })
            .collect();
        let probs = slot0_probs(kind, &states, &active);
        let mut medium = EngineMedium {
            space: &space,
            prep: &prep,
            rngs: &mut rngs,
            active: &active,
            round: t,
        };
        let results = match kind {
            ProtocolKind::TryAdjust => try_adjust_round(&mut states, &mut medium)?,
            ProtocolKind::LocalBcast => local_bcast_round(&mut states, &mut medium)?,
            ProtocolKind::Bcast | ProtocolKind::BcastStar => bcast_round(&mut states, &mut medium, variant)?,
            ProtocolKind::Spontaneous => spontaneous_round(&mut states, &mut medium, cfg.source, prep.derived.p0)?,
            ProtocolKind::UniformAck => uniform_ack_round(&mut states, &mut medium)?,
        };
        let slots = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| slot_record(i, r, &space, &prep.base_radii))
            .collect::<Result<Vec<_>>>()?;
        let record = RoundRecord {
            round: t,
            events,
            probs,
            slots,
        };
        hasher.update(line(LineRef::Round(&record))?);
        hasher.update(b"\n");
        rounds.push(record);
        if completed_at.is_none() && is_complete(kind, &states, &space) {
            completed_at = Some(t);
            if cfg.stop_on_completion {
                break;
            }
        }
    }

    let footer = TraceFooter {
        rounds: rounds.len() as u64,
        completed_at,
        hash: hex(&hasher.finalize()),
    };
    Ok(RunOutput {
        trace: SimulationTrace { header, rounds, footer },
        states,
    })
}

/// Re-runs the config and compares hashes; also rejects a trace whose content no longer
/// matches its own hash.
pub fn replay_verify(trace: &SimulationTrace, instance: &Instance, cfg: &SimulationConfig) -> Result<bool> {
    if trace.compute_hash()? != trace.footer.hash {
        return Ok(false);
    }
    Ok(run(instance, cfg)?.footer.hash == trace.footer.hash)
}

/// Space as the trace saw it, round by round: `visit(t, G_t)` after round `t`'s events.
pub fn replay_topology(trace: &SimulationTrace, instance: &Instance, mut visit: impl FnMut(&RoundRecord, &QuasiMetricSpace) -> Result<()>) -> Result<()> {
    let mut space = match &trace.header.config.schedule {
        Some(s) => initial_space(&instance.space, s)?,
        None => instance.space.clone(),
    };
    for rec in &trace.rounds {
        for e in &rec.events {
            apply_event(&mut space, e)?;
        }
        visit(rec, &space)?;
    }
    Ok(())
}

/// The temporal topology a trace ran on, over its configured horizon.
pub fn trace_topology(trace: &SimulationTrace, instance: &Instance) -> Result<TemporalTopology> {
    let cfg = &trace.header.config;
    let schedule = cfg.schedule.clone().unwrap_or_else(|| AdversarySchedule::empty(cfg.horizon));
    TemporalTopology::new(&instance.space, AdversarySchedule { horizon: trace.footer.rounds, ..schedule })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub problem: Problem,
    pub rounds: u64,
    /// First round each node mass-delivered.
    pub first_mass_delivery: Vec<Option<u64>>,
    /// First round each node held the source's message (0 for the source).
    pub first_reception: Vec<Option<u64>>,
    /// Nodes present after the last round.
    pub present_at_end: Vec<usize>,
    /// Round by which every node present at the end had mass-delivered (local) or been
    /// informed (global).
    pub completion: Option<u64>,
}

/// Per-node first mass delivery and first reception, replayed from the recorded deliveries.
pub fn completion_metrics(trace: &SimulationTrace, instance: &Instance, problem: Problem) -> Result<CompletionReport> {
    let cfg = &trace.header.config;
    let n = instance.n();
    let source = cfg.source;
    let mut first_mass = vec![None; n];
    let mut first_rx: Vec<Option<u64>> = vec![None; n];
    let mut informed = vec![false; n];
    let mut present_at_end = Vec::new();
    let global = cfg.protocol.kind.is_global();
    let mut start = true;
    replay_topology(trace, instance, |rec, space| {
        if start {
            start = false;
            if global && space.is_present(source) {
                informed[source] = true;
                first_rx[source] = Some(0);
            }
        }
        for e in &rec.events {
            if let TopologyEvent::Arrive { node, .. } | TopologyEvent::Depart { node } = e {
                informed[*node] = global && *node == source && space.is_present(*node);
                if informed[*node] && first_rx[*node].is_none() {
                    first_rx[*node] = Some(rec.round);
                }
            }
        }
        for s in &rec.slots {
            for &u in &s.mass_delivered {
                first_mass[u].get_or_insert(rec.round);
            }
            for &(u, v) in &s.deliveries {
                if global && informed[u] && !informed[v] {
                    informed[v] = true;
                    first_rx[v].get_or_insert(rec.round);
                }
            }
        }
        present_at_end = space.present_nodes().collect();
        Ok(())
    })?;
    if trace.rounds.is_empty() {
        present_at_end = match &cfg.schedule {
            Some(s) => initial_space(&instance.space, s)?.present_nodes().collect(),
            None => (0..n).collect(),
        };
    }
    let per_node = match problem {
        Problem::Local => &first_mass,
        Problem::Global => &first_rx,
    };
    let completion = present_at_end
        .iter()
        .map(|&v| per_node[v])
        .try_fold(0u64, |acc, x| x.map(|r| acc.max(r)));
    Ok(CompletionReport {
        problem,
        rounds: trace.footer.rounds,
        first_mass_delivery: first_mass,
        first_reception: first_rx,
        present_at_end,
        completion: if trace.rounds.is_empty() { None } else { completion },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: u64,
    /// Rounds of the phase in which the node was present.
    pub rounds: u64,
    pub good: u64,
    /// `P^rho <= eta_hat`.
    pub bounded_contention: u64,
    /// `I^rho <= I_hat`.
    pub low_interference: u64,
    /// `P^rho >= eta`.
    pub high_contention: u64,
    /// At least a tenth of the rounds had high contention.
    pub type_a: bool,
}

impl PhaseStats {
    pub fn good_fraction(&self) -> f64 {
        if self.rounds == 0 {
            1.0
        } else {
            self.good as f64 / self.rounds as f64
        }
    }
}

/// Per-node, per-phase good-round statistics computed from the probability snapshots.
/// Phases are aligned to round 0.
pub fn good_round_stats_all(trace: &SimulationTrace, instance: &Instance) -> Result<Vec<Vec<PhaseStats>>> {
    let d = &trace.header.derived;
    let phase = trace.header.config.protocol.phase;
    let radii = instance.radii.with_precision(d.precision)?;
    let reach = phase.rho * radii.r;
    let eta = d.sensing.eta;
    let len = d.phase_len;
    let n = instance.n();
    let mut out: Vec<Vec<PhaseStats>> = vec![Vec::new(); n];
    // Per receiver: (sender, in vicinity, signal); rebuilt when the topology changes.
    let mut table: Vec<Vec<(usize, bool, f64)>> = Vec::new();
    replay_topology(trace, instance, |rec, space| {
        if table.is_empty() || !rec.events.is_empty() {
            table = (0..n)
                .map(|v| {
                    if !space.is_present(v) {
                        return Vec::new();
                    }
                    space
                        .present_nodes()
                        .map(|w| (w, space.d(w, v) < reach, if w == v { 0.0 } else { space.signal(w, v) }))
                        .collect()
                })
                .collect();
        }
        let k = rec.round / len;
        for v in space.present_nodes() {
            let (mut p_rho, mut i_rho) = (0.0, 0.0);
            for &(w, near, sig) in &table[v] {
                let p = rec.probs[w];
                if near {
                    p_rho += p;
                } else {
                    i_rho += p * sig;
                }
            }
            let list = &mut out[v];
            if list.last().map_or(true, |s| s.phase != k) {
                list.push(PhaseStats {
                    phase: k,
                    rounds: 0,
                    good: 0,
                    bounded_contention: 0,
                    low_interference: 0,
                    high_contention: 0,
                    type_a: false,
                });
            }
            let s = list.last_mut().expect("pushed above");
            let bounded = p_rho <= phase.eta_hat;
            let quiet = i_rho <= d.i_hat;
            s.rounds += 1;
            s.bounded_contention += bounded as u64;
            s.low_interference += quiet as u64;
            s.good += (bounded && quiet) as u64;
            s.high_contention += (p_rho >= eta) as u64;
        }
        Ok(())
    })?;
    for list in &mut out {
        for s in list {
            s.type_a = s.high_contention * 10 >= s.rounds;
        }
    }
    Ok(out)
}

pub fn good_round_stats(trace: &SimulationTrace, instance: &Instance, v: usize) -> Result<Vec<PhaseStats>> {
    instance.space.check_node(v)?;
    Ok(good_round_stats_all(trace, instance)?.swap_remove(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub node: usize,
    pub first_reception: Option<u64>,
    pub first_mass_delivery: Option<u64>,
    pub dyn_degree: usize,
    pub stable_dist: Option<u64>,
    pub bound_ratio: Option<f64>,
}

/// Rows of the summary export. `stable_c` scales the stable-path hop length
/// `ceil(stable_c log2 n)`.
///
/// The bound ratio divides the local first mass delivery (1-based) by `dyn_degree + log2 n`,
/// or the global first reception by the stable distance.
pub fn summary_rows(trace: &SimulationTrace, instance: &Instance, stable_c: f64) -> Result<Vec<SummaryRow>> {
    let cfg = &trace.header.config;
    let d = &trace.header.derived;
    let global = cfg.protocol.kind.is_global();
    let rep = completion_metrics(trace, instance, if global { Problem::Global } else { Problem::Local })?;
    let n = instance.n();
    let rounds = trace.footer.rounds.max(1);
    let topo = trace_topology(trace, instance)?;
    let radii = instance.radii.with_precision(d.precision)?;
    let queries: Vec<(usize, u64, u64)> = (0..n).map(|v| (v, 0, rounds - 1)).collect();
    let degrees = if trace.rounds.is_empty() {
        vec![0; n]
    } else {
        dynamic_degrees(&topo, &radii, cfg.protocol.phase.rho, &queries)?
    };
    let stable = if global && !trace.rounds.is_empty() {
        stable_distances(&topo, &instance.radii, stable_c, cfg.source, d.n_bound)?
    } else {
        vec![None; n]
    };
    let log_n = log2n(d.n_bound);
    Ok((0..n)
        .map(|v| {
            let ratio = if global {
                match (rep.first_reception[v], stable[v]) {
                    (Some(r), Some(s)) if s > 0 => Some(r as f64 / s as f64),
                    _ => None,
                }
            } else {
                rep.first_mass_delivery[v].map(|r| (r + 1) as f64 / (degrees[v] as f64 + log_n))
            };
            SummaryRow {
                node: v,
                first_reception: rep.first_reception[v],
                first_mass_delivery: rep.first_mass_delivery[v],
                dyn_degree: degrees[v],
                stable_dist: stable[v],
                bound_ratio: ratio,
            }
        })
        .collect())
}

pub const SUMMARY_COLUMNS: &str = "node,first_reception,first_mass_delivery,dyn_degree,stable_dist,bound_ratio";

/// CSV with [`SUMMARY_COLUMNS`]; missing values are left empty.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    fn opt<T: ToString>(x: Option<T>) -> String {
        x.map(|v| v.to_string()).unwrap_or_default()
    }
    let mut s = String::from(SUMMARY_COLUMNS);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.node,
            opt(r.first_reception),
            opt(r.first_mass_delivery),
            r.dyn_degree,
            opt(r.stable_dist),
            opt(r.bound_ratio.map(|x| format!("{x:.6}")))
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ScheduledEvent;
    use crate::metric::PathLossMap;
    use crate::models::ModelKind;

    fn line_instance(n: usize, spacing: f64) -> Instance {
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * spacing, 0.0]).collect();
        let map = PathLossMap::euclidean(pts, 3.0, 2.0).unwrap();
        let space = QuasiMetricSpace::new(map, 3.0).unwrap().with_independence(0.05, 2.0, 64.0).unwrap();
        Instance::new(space, RadiusSet::new(1.0, 0.2).unwrap())
    }

    fn cfg(kind: ProtocolKind, horizon: u64, seed: u64) -> SimulationConfig {
        SimulationConfig::new(ModelParams::sinr(2.0), ProtocolConfig::new(kind), horizon, seed)
    }

    #[test]
    fn zero_horizon_gives_empty_trace() {
        let inst = line_instance(3, 0.5);
        let t = run(&inst, &cfg(ProtocolKind::LocalBcast, 0, 1)).unwrap();
        assert!(t.rounds.is_empty());
        assert_eq!(t.footer.rounds, 0);
        assert_eq!(t.compute_hash().unwrap(), t.footer.hash);
    }

    #[test]
    fn same_config_same_hash() {
        let inst = line_instance(8, 0.4);
        let c = cfg(ProtocolKind::LocalBcast, 60, 7);
        let a = run(&inst, &c).unwrap();
        let b = run(&inst, &c).unwrap();
        assert_eq!(a.footer.hash, b.footer.hash);
        assert!(replay_verify(&a, &inst, &c).unwrap());
        let mut other = c.clone();
        other.seed += 1;
        assert!(!replay_verify(&a, &inst, &other).unwrap());
    }

    #[test]
    fn single_node_stops_at_first_transmission() {
        let inst = line_instance(1, 1.0);
        let mut c = cfg(ProtocolKind::LocalBcast, 1, 3);
        c.protocol.init_p = Some(0.5);
        c.allow_long_horizon = true;
        c.horizon = 64;
        let t = run(&inst, &c).unwrap();
        let first_tx = t.rounds.iter().position(|r| !r.slots[0].transmitters.is_empty()).unwrap() as u64;
        assert_eq!(t.footer.completed_at, Some(first_tx));
        let rep = completion_metrics(&t, &inst, Problem::Local).unwrap();
        assert_eq!(rep.completion, Some(first_tx));
    }

    #[test]
    fn jsonl_round_trip_and_truncation() {
        let inst = line_instance(6, 0.4);
        let t = run(&inst, &cfg(ProtocolKind::LocalBcast, 30, 2)).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back = SimulationTrace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(SimulationTrace::read_jsonl(cut.as_bytes()), Err(Error::IntegrityFailure(_))));
        let tampered = text.replacen("\"round\":3,", "\"round\":4,", 1);
        assert!(matches!(SimulationTrace::read_jsonl(tampered.as_bytes()), Err(Error::IntegrityFailure(_))));
    }

    #[test]
    fn deliveries_rederive_from_transmitters() {
        let inst = line_instance(10, 0.3);
        let c = cfg(ProtocolKind::LocalBcast, 80, 11);
        let t = run(&inst, &c).unwrap();
        let prep = prepare(&inst, &c).unwrap();
        for rec in &t.rounds {
            for s in &rec.slots {
                let again = resolve_round(&inst.space, &prep.derived.model, &prep.radii, &s.transmitters, rec.round, s.slot).unwrap();
                assert_eq!(again.deliveries, s.deliveries);
            }
        }
    }

    #[test]
    fn bcast_rejects_async_and_star_rejects_dynamics() {
        let inst = line_instance(4, 0.5);
        let mut c = cfg(ProtocolKind::Bcast, 10, 1);
        c.mode = Mode::Asynchronous;
        assert!(matches!(run(&inst, &c), Err(Error::ConfigInvalid { .. })));
        let mut c = cfg(ProtocolKind::BcastStar, 10, 1);
        let mut s = AdversarySchedule::empty(10);
        s.events.push(ScheduledEvent {
            round: 3,
            event: TopologyEvent::Depart { node: 2 },
        });
        c.schedule = Some(s);
        assert!(matches!(run(&inst, &c), Err(Error::StaticOnly(_))));
    }

    #[test]
    fn horizon_cap() {
        let inst = line_instance(4, 0.5);
        let c = cfg(ProtocolKind::LocalBcast, 17, 1);
        assert!(matches!(run(&inst, &c), Err(Error::ConfigInvalid { .. })));
        let mut c = c;
        c.allow_long_horizon = true;
        assert!(run(&inst, &c).is_ok());
    }

    #[test]
    fn async_ticks_are_one_or_two() {
        let inst = line_instance(12, 0.3);
        let mut c = cfg(ProtocolKind::LocalBcast, 40, 5);
        c.mode = Mode::Asynchronous;
        let t = run(&inst, &c).unwrap();
        let ticks = t.header.ticks.as_ref().unwrap();
        assert!(ticks.iter().all(|&(len, off)| (len == 1 || len == 2) && off < len));
        for rec in &t.rounds {
            for &u in &rec.slots[0].transmitters {
                let (len, off) = ticks[u];
                assert_eq!((rec.round + off as u64) % len as u64, 0);
            }
        }
    }

    #[test]
    fn bcast_star_informs_a_line() {
        let inst = line_instance(10, 0.5);
        let mut c = cfg(ProtocolKind::BcastStar, 100, 9);
        c.protocol.phase.gamma = 4.0;
        let t = run(&inst, &c).unwrap();
        let rep = completion_metrics(&t, &inst, Problem::Global).unwrap();
        assert!(rep.completion.is_some(), "{:?}", rep.first_reception);
        assert_eq!(rep.completion, t.footer.completed_at);
        for w in rep.first_reception.windows(2) {
            assert!(w[0].unwrap() <= w[1].unwrap());
        }
    }

    #[test]
    fn churn_resets_departed_nodes() {
        let inst = line_instance(6, 0.4);
        let mut c = cfg(ProtocolKind::LocalBcast, 30, 4);
        c.stop_on_completion = false;
        let mut s = AdversarySchedule::empty(30);
        s.initially_absent = vec![5];
        s.events.push(ScheduledEvent {
            round: 10,
            event: TopologyEvent::Arrive {
                node: 5,
                losses: vec![],
                position: None,
            },
        });
        c.schedule = Some(s);
        let t = run(&inst, &c).unwrap();
        for rec in &t.rounds[..10] {
            assert_eq!(rec.probs[5], 0.0);
        }
        assert!(t.rounds[10].probs[5] > 0.0);
    }

    #[test]
    fn good_rounds_of_silent_and_single_node_traces() {
        let inst = line_instance(1, 1.0);
        let mut c = cfg(ProtocolKind::TryAdjust, 40, 1);
        c.allow_long_horizon = true;
        c.protocol.init_p = Some(0.5);
        let t = run(&inst, &c).unwrap();
        let stats = good_round_stats(&t, &inst, 0).unwrap();
        assert!(stats.iter().all(|s| s.good == s.rounds));
    }

    #[test]
    fn summary_csv_columns() {
        let inst = line_instance(5, 0.5);
        let mut c = cfg(ProtocolKind::BcastStar, 25, 2);
        c.protocol.phase.gamma = 2.0;
        let t = run(&inst, &c).unwrap();
        let rows = summary_rows(&t, &inst, 1.0).unwrap();
        let csv = summary_csv(&rows);
        assert!(csv.starts_with(SUMMARY_COLUMNS));
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(rows[0].stable_dist, Some(0));
    }

    #[test]
    fn graph_model_runs() {
        let inst = line_instance(6, 0.5);
        let c = SimulationConfig::new(ModelParams::new(ModelKind::Udg), ProtocolConfig::new(ProtocolKind::LocalBcast), 36, 3);
        let t = run(&inst, &c).unwrap();
        assert!(t.rounds.len() <= 36);
    }
}
