//! Try&Adjust and the broadcast protocols built on it, as per-node state machines.
//!
//! A protocol round asks a [`Medium`] for coins and slot resolutions; the engine supplies
//! the real one, tests a static one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{bfs_hops, QuasiMetricSpace, RadiusSet, VALIDATOR_SLACK};
use crate::models::RoundRealization;
use crate::sensing::{Channel, SensedOutcomes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Plain Try&Adjust, never stops.
    TryAdjust,
    LocalBcast,
    Bcast,
    BcastStar,
    Spontaneous,
    /// NTD-free reference: informed nodes transmit with probability `1/k` (`k` informed
    /// nodes still running) until ACK.
    UniformAck,
}

impl ProtocolKind {
    /// Whether the protocol solves global broadcast (message from one source).
    pub fn is_global(self) -> bool {
        matches!(
            self,
            ProtocolKind::Bcast | ProtocolKind::BcastStar | ProtocolKind::Spontaneous | ProtocolKind::UniformAck
        )
    }

    /// Precision the protocol's primitives run at, as a fraction of the instance epsilon.
    pub fn precision_factor(self) -> f64 {
        if matches!(self, ProtocolKind::Bcast | ProtocolKind::BcastStar | ProtocolKind::Spontaneous) {
            0.5
        } else {
            1.0
        }
    }

    pub fn slots(self) -> u8 {
        match self {
            ProtocolKind::TryAdjust | ProtocolKind::LocalBcast | ProtocolKind::UniformAck => 1,
            ProtocolKind::Bcast | ProtocolKind::BcastStar => 2,
            ProtocolKind::Spontaneous => 3,
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "try_adjust" => Ok(ProtocolKind::TryAdjust),
            "local_bcast" => Ok(ProtocolKind::LocalBcast),
            "bcast" => Ok(ProtocolKind::Bcast),
            "bcast_star" => Ok(ProtocolKind::BcastStar),
            "spontaneous" => Ok(ProtocolKind::Spontaneous),
            "uniform_ack" => Ok(ProtocolKind::UniformAck),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProtocolKind::TryAdjust => "try_adjust",
            ProtocolKind::LocalBcast => "local_bcast",
            ProtocolKind::Bcast => "bcast",
            ProtocolKind::BcastStar => "bcast_star",
            ProtocolKind::Spontaneous => "spontaneous",
            ProtocolKind::UniformAck => "uniform_ack",
        };
        f.write_str(s)
    }
}

/// Analysis constants of Try&Adjust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_eta_hat")]
    pub eta_hat: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Interference threshold of good rounds; derived from the sensing thresholds if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_hat: Option<f64>,
}

fn default_gamma() -> f64 {
    32.0
}
fn default_rho() -> f64 {
    4.0
}
fn default_eta_hat() -> f64 {
    16.0
}
fn default_sigma() -> f64 {
    0.1
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            rho: default_rho(),
            eta_hat: default_eta_hat(),
            sigma: default_sigma(),
            i_hat: None,
        }
    }
}

impl PhaseParams {
    pub fn validate(&self, eta: f64) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config("protocol.phase.gamma", "must be positive"));
        }
        if !(self.rho > 1.0) {
            return Err(Error::config("protocol.phase.rho", "must be > 1"));
        }
        if !(self.eta_hat > eta) {
            return Err(Error::config("protocol.phase.eta_hat", format!("must exceed eta = {eta}")));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config("protocol.phase.sigma", "must lie in (0,1)"));
        }
        Ok(())
    }

    /// `ceil(gamma * log2 n)` rounds, at least 1.
    pub fn phase_len(&self, n: usize) -> u64 {
        ((self.gamma * log2n(n)).ceil() as u64).max(1)
    }
}

/// `log2 n`, taken as 1 for `n <= 2` so that logarithmic budgets never vanish.
pub fn log2n(n: usize) -> f64 {
    (n.max(2) as f64).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Undecided,
    Dominator,
    Dominated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProtocolState {
    pub p: f64,
    pub beta: f64,
    /// Lower clamp `n^-beta`; 0 for the uniform variant.
    pub min_p: f64,
    /// Value a restart resets `p` to.
    pub init_p: f64,
    pub has_message: bool,
    pub stopped: bool,
    pub awake: bool,
    pub role: Role,
    pub relay_done: bool,
}

/// `p = n^-beta / 2`, clamped below at `n^-beta`.
pub fn try_adjust_init(n: usize, beta: f64) -> Result<NodeProtocolState> {
    if n < 1 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::param("beta", format!("must be >= 1, got {beta}")));
    }
    let min_p = (n as f64).powf(-beta);
    Ok(NodeProtocolState {
        p: min_p / 2.0,
        beta,
        min_p,
        init_p: min_p / 2.0,
        has_message: false,
        stopped: false,
        awake: false,
        role: Role::Undecided,
        relay_done: false,
    })
}

/// Uniform variant: arbitrary initial `p` and no lower clamp.
pub fn try_adjust_init_uniform(p: f64) -> Result<NodeProtocolState> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::param("init_p", format!("must lie in (0, 1/2], got {p}")));
    }
    Ok(NodeProtocolState {
        p,
        beta: 1.0,
        min_p: 0.0,
        init_p: p,
        has_message: false,
        stopped: false,
        awake: false,
        role: Role::Undecided,
        relay_done: false,
    })
}

/// Busy halves `p` (not below `n^-beta`), Idle doubles it (not above 1/2).
pub fn try_adjust_step(state: &mut NodeProtocolState, cd: Channel) {
    if state.stopped {
        return;
    }
    state.p = match cd {
        Channel::Busy => (state.p / 2.0).max(state.min_p).max(f64::MIN_POSITIVE),
        Channel::Idle => (state.p * 2.0).min(0.5),
    };
}

impl NodeProtocolState {
    pub fn restart(&mut self) {
        if !self.stopped {
            self.p = self.init_p;
        }
    }

    pub fn stop(&mut self) {
        self.stopped = true;
        self.p = 0.0;
    }

    /// Probability that the node's Try&Adjust transmits this round.
    pub fn tx_probability(&self) -> f64 {
        if self.stopped || !self.awake {
            0.0
        } else {
            self.p
        }
    }
}

/// One resolved slot.
#[derive(Debug, Clone)]
pub struct SlotResult {
    pub realization: RoundRealization,
    pub sensed: SensedOutcomes,
}

/// What a protocol round needs from the simulation.
pub trait Medium {
    fn node_count(&self) -> usize;
    /// Present and taking a step this round.
    fn is_active(&self, v: usize) -> bool;
    /// Uniform draw in `[0,1)` for node `v` in `slot` of the current round.
    fn coin(&mut self, v: usize, slot: u8) -> f64;
    fn transmit(&mut self, slot: u8, transmitters: &[usize]) -> Result<SlotResult>;
}

fn draw(states: &[NodeProtocolState], medium: &mut impl Medium, slot: u8, eligible: impl Fn(&NodeProtocolState) -> bool) -> Vec<usize> {
    let mut tx = Vec::new();
    for v in 0..medium.node_count() {
        if medium.is_active(v) && eligible(&states[v]) && medium.coin(v, slot) < states[v].p {
            tx.push(v);
        }
    }
    tx
}

fn adjust_all(states: &mut [NodeProtocolState], medium: &impl Medium, sensed: &SensedOutcomes, eligible: impl Fn(&NodeProtocolState) -> bool) {
    for (v, st) in states.iter_mut().enumerate() {
        if medium.is_active(v) && eligible(st) {
            let cd = if sensed.is_busy(v) { Channel::Busy } else { Channel::Idle };
            try_adjust_step(st, cd);
        }
    }
}

fn spread(states: &mut [NodeProtocolState], realization: &RoundRealization) {
    for &(u, v) in &realization.deliveries {
        if states[u].has_message {
            states[v].has_message = true;
        }
    }
}

/// Try&Adjust without stopping.
pub fn try_adjust_round(states: &mut [NodeProtocolState], medium: &mut impl Medium) -> Result<Vec<SlotResult>> {
    let running = |s: &NodeProtocolState| s.awake && !s.stopped;
    let tx = draw(states, medium, 0, running);
    let res = medium.transmit(0, &tx)?;
    adjust_all(states, medium, &res.sensed, running);
    Ok(vec![res])
}

/// Try&Adjust where a transmitter stops once it senses ACK.
pub fn local_bcast_round(states: &mut [NodeProtocolState], medium: &mut impl Medium) -> Result<Vec<SlotResult>> {
    let running = |s: &NodeProtocolState| s.awake && !s.stopped;
    let tx = draw(states, medium, 0, running);
    let res = medium.transmit(0, &tx)?;
    for &u in &res.sensed.acks {
        states[u].stop();
    }
    adjust_all(states, medium, &res.sensed, running);
    Ok(vec![res])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcastVariant {
    /// ACK and NTD stop the node instead of restarting it.
    pub star: bool,
    pub use_ntd: bool,
}

/// Two-slot broadcast round. Slot 0: message holders run Try&Adjust, sleeping receivers wake.
/// Slot 1: slot-0 transmitters with ACK retransmit; they and every slot-0 receiver whose
/// NTD fires in slot 1 restart (stop, for the star variant).
pub fn bcast_round(states: &mut [NodeProtocolState], medium: &mut impl Medium, variant: BcastVariant) -> Result<Vec<SlotResult>> {
    let holders = |s: &NodeProtocolState| s.awake && s.has_message && !s.stopped;
    let was_running: Vec<bool> = states.iter().map(holders).collect();
    let tx0 = draw(states, medium, 0, holders);
    let r0 = medium.transmit(0, &tx0)?;
    wake_receivers(states, &r0.realization);
    for (v, st) in states.iter_mut().enumerate() {
        if was_running[v] && medium.is_active(v) {
            let cd = if r0.sensed.is_busy(v) { Channel::Busy } else { Channel::Idle };
            try_adjust_step(st, cd);
        }
    }
    let tx1 = r0.sensed.acks.clone();
    let r1 = medium.transmit(1, &tx1)?;
    wake_receivers(states, &r1.realization);
    let settle = |st: &mut NodeProtocolState| {
        if variant.star {
            st.stop();
        } else {
            st.restart();
        }
    };
    for &u in &tx1 {
        settle(&mut states[u]);
    }
    if variant.use_ntd {
        for &(v, _) in &r1.sensed.ntd {
            if r0.realization.received_from(v).is_some() && medium.is_active(v) {
                settle(&mut states[v]);
            }
        }
    }
    Ok(vec![r0, r1])
}

fn wake_receivers(states: &mut [NodeProtocolState], realization: &RoundRealization) {
    for &(u, v) in &realization.deliveries {
        if states[u].has_message && !states[v].has_message {
            let st = &mut states[v];
            st.has_message = true;
            st.awake = true;
            st.p = st.init_p;
        }
    }
}

/// Three-slot spontaneous round: slots 0 and 1 run the Bcast*-style dominator election,
/// slot 2 lets informed dominators (and the source) relay with probability `p0` until ACK.
/// Every delivery from an informed sender informs its receiver.
pub fn spontaneous_round(
    states: &mut [NodeProtocolState],
    medium: &mut impl Medium,
    source: usize,
    p0: f64,
) -> Result<Vec<SlotResult>> {
    let electing = |s: &NodeProtocolState| s.role == Role::Undecided && !s.stopped;
    let tx0 = draw(states, medium, 0, electing);
    let r0 = medium.transmit(0, &tx0)?;
    spread(states, &r0.realization);
    adjust_all(states, medium, &r0.sensed, electing);

    let tx1 = r0.sensed.acks.clone();
    let r1 = medium.transmit(1, &tx1)?;
    spread(states, &r1.realization);
    for &u in &tx1 {
        states[u].role = Role::Dominator;
        states[u].stop();
    }
    for &(v, u) in &r1.sensed.ntd {
        if states[v].role == Role::Undecided && r0.realization.received_from(v).is_some() && medium.is_active(v) {
            states[v].role = Role::Dominated(u);
            states[v].stop();
        }
    }

    let mut tx2 = Vec::new();
    for v in 0..medium.node_count() {
        let st = &states[v];
        let relay = st.has_message && !st.relay_done && (st.role == Role::Dominator || v == source);
        if medium.is_active(v) && relay && medium.coin(v, 2) < p0 {
            tx2.push(v);
        }
    }
    let r2 = medium.transmit(2, &tx2)?;
    spread(states, &r2.realization);
    for &u in &r2.sensed.acks {
        states[u].relay_done = true;
    }
    Ok(vec![r0, r1, r2])
}

/// NTD-free reference round: the `k` informed, running nodes each transmit with
/// probability `1/k`; ACK stops a node.
pub fn uniform_ack_round(states: &mut [NodeProtocolState], medium: &mut impl Medium) -> Result<Vec<SlotResult>> {
    let running = |s: &NodeProtocolState| s.has_message && !s.stopped;
    let k = (0..medium.node_count())
        .filter(|&v| medium.is_active(v) && running(&states[v]))
        .count();
    let mut tx = Vec::new();
    if k > 0 {
        let q = 1.0 / k as f64;
        for v in 0..medium.node_count() {
            if medium.is_active(v) && running(&states[v]) && medium.coin(v, 0) < q {
                tx.push(v);
            }
        }
    }
    let res = medium.transmit(0, &tx)?;
    spread(states, &res.realization);
    for &u in &res.sensed.acks {
        states[u].stop();
    }
    Ok(vec![res])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominatingSetReport {
    pub dominators: usize,
    /// Nodes farther than `eps R / 4` from every dominator.
    pub undominated: Vec<usize>,
    /// Dominator pairs closer than `eps R / 4` (their `eps R / 8` balls meet).
    pub packing_violations: Vec<(usize, usize)>,
    /// Most dominators within `eps R / 4` of a single node.
    pub kappa_observed: usize,
    /// `C * 2^lambda` from the independence parameters.
    pub kappa_bound: f64,
    /// Diameter of the dominator graph at radius `(1 - eps/2) R`; `None` if disconnected.
    pub h_diameter: Option<u32>,
    /// Diameter of the communication graph at radius `(1 - eps) R`; `None` if disconnected.
    pub g_diameter: Option<u32>,
    pub pass: bool,
}

fn diameter(adjacency: &[Vec<usize>]) -> Option<u32> {
    let mut diam = 0u32;
    for s in 0..adjacency.len() {
        for h in bfs_hops(adjacency, s) {
            diam = diam.max(h? as u32);
        }
    }
    Some(diam)
}

/// Checks the elected dominating set on a static space; `radii` at the instance precision.
pub fn dominating_set_validate(space: &QuasiMetricSpace, radii: &RadiusSet, roles: &[Role]) -> DominatingSetReport {
    let eps = radii.epsilon;
    let dom_radius = eps * radii.r / 4.0;
    let present: Vec<usize> = space.present_nodes().collect();
    let ds: Vec<usize> = present.iter().copied().filter(|&v| roles[v] == Role::Dominator).collect();

    let mut undominated = Vec::new();
    let mut kappa_observed = 0;
    for &v in &present {
        let count = ds
            .iter()
            .filter(|&&w| w == v || space.d(w, v) <= dom_radius + VALIDATOR_SLACK)
            .count();
        if count == 0 {
            undominated.push(v);
        }
        kappa_observed = kappa_observed.max(count);
    }
    let mut packing_violations = Vec::new();
    for (i, &a) in ds.iter().enumerate() {
        for &b in &ds[i + 1..] {
            if space.d(a, b).min(space.d(b, a)) < dom_radius - VALIDATOR_SLACK {
                packing_violations.push((a, b));
            }
        }
    }
    let h_reach = (1.0 - eps / 2.0) * radii.r;
    let h_adj: Vec<Vec<usize>> = ds
        .iter()
        .map(|&a| {
            (0..ds.len())
                .filter(|&j| ds[j] != a && space.d(a, ds[j]) <= h_reach)
                .collect()
        })
        .collect();
    let g_reach = radii.comm_radius();
    let g_adj: Vec<Vec<usize>> = present
        .iter()
        .map(|&a| {
            (0..present.len())
                .filter(|&j| present[j] != a && space.d(a, present[j]) <= g_reach)
                .collect()
        })
        .collect();
    let h_diameter = diameter(&h_adj);
    let g_diameter = diameter(&g_adj);
    let kappa_bound = space.indep_const * 2f64.powf(space.lambda);
    let diam_ok = match (h_diameter, g_diameter) {
        (Some(h), Some(g)) => h <= g,
        (_, None) => true,
        (None, Some(_)) => false,
    };
    let pass = !ds.is_empty()
        && undominated.is_empty()
        && packing_violations.is_empty()
        && kappa_observed as f64 <= kappa_bound
        && diam_ok;
    DominatingSetReport {
        dominators: ds.len(),
        undominated,
        packing_violations,
        kappa_observed,
        kappa_bound,
        h_diameter,
        g_diameter,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::PathLossMap;
    use crate::models::{resolve_round, ModelParams, ReceptionModelConfig};
    use crate::sensing::{sense_all, SensingConfig, SensingParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct StaticMedium {
        space: QuasiMetricSpace,
        model: ReceptionModelConfig,
        sensing: SensingConfig,
        radii: RadiusSet,
        rng: ChaCha8Rng,
        round: u64,
    }

    impl StaticMedium {
        fn new(xs: &[f64], precision_factor: f64) -> Self {
            let pts = xs.iter().map(|&x| [x, 0.0]).collect();
            let space = QuasiMetricSpace::new(PathLossMap::euclidean(pts, 3.0, 2.0).unwrap(), 3.0).unwrap();
            let radii = RadiusSet::new(1.0, 0.5 * precision_factor).unwrap();
            let model = ReceptionModelConfig::derive(&ModelParams::sinr(2.0), &space, &radii).unwrap();
            let sensing = SensingConfig::derive(&space, &model, &radii, &SensingParams::default()).unwrap();
            Self {
                space,
                model,
                sensing,
                radii,
                rng: ChaCha8Rng::seed_from_u64(7),
                round: 0,
            }
        }
    }

    impl Medium for StaticMedium {
        fn node_count(&self) -> usize {
            self.space.n()
        }
        fn is_active(&self, v: usize) -> bool {
            self.space.is_present(v)
        }
        fn coin(&mut self, _v: usize, _slot: u8) -> f64 {
            self.rng.gen()
        }
        fn transmit(&mut self, slot: u8, tx: &[usize]) -> Result<SlotResult> {
            let realization = resolve_round(&self.space, &self.model, &self.radii, tx, self.round, slot)?;
            let sensed = sense_all(&self.space, &self.sensing, &self.radii, &realization);
            Ok(SlotResult { realization, sensed })
        }
    }

    #[test]
    fn step_examples() {
        let mut s = try_adjust_init(10, 3.0).unwrap();
        s.p = 0.25;
        try_adjust_step(&mut s, Channel::Busy);
        assert_eq!(s.p, 0.125);
        s.p = 0.5;
        try_adjust_step(&mut s, Channel::Idle);
        assert_eq!(s.p, 0.5);
        s.p = s.min_p;
        try_adjust_step(&mut s, Channel::Busy);
        assert_eq!(s.p, s.min_p);
    }

    #[test]
    fn init_examples() {
        assert!((try_adjust_init(100, 1.0).unwrap().p - 0.005).abs() < 1e-15);
        assert!((try_adjust_init(10, 2.0).unwrap().p - 0.005).abs() < 1e-15);
        let u = try_adjust_init_uniform(0.5).unwrap();
        assert_eq!((u.p, u.min_p), (0.5, 0.0));
        assert!(try_adjust_init(10, 0.5).is_err());
        assert!(try_adjust_init_uniform(0.75).is_err());
    }

    #[test]
    fn restart_is_idempotent() {
        let mut s = try_adjust_init(64, 2.0).unwrap();
        s.restart();
        assert_eq!(s.p, 64f64.powf(-2.0) / 2.0);
        s.p = 0.5;
        s.restart();
        s.restart();
        assert_eq!(s.p, s.init_p);
    }

    #[test]
    fn phase_length() {
        let p = PhaseParams::default();
        assert_eq!(p.phase_len(256), 256);
        assert_eq!(p.phase_len(1), 32);
        assert!(p.validate(0.152).is_ok());
    }

    #[test]
    fn single_node_local_broadcast_stops() {
        let mut m = StaticMedium::new(&[0.0], 1.0);
        let mut st = vec![try_adjust_init(1, 1.0).unwrap()];
        st[0].awake = true;
        st[0].has_message = true;
        let mut rounds = 0;
        while !st[0].stopped {
            local_bcast_round(&mut st, &mut m).unwrap();
            rounds += 1;
            assert!(rounds < 200);
        }
        assert_eq!(st[0].p, 0.0);
    }

    #[test]
    fn distant_nodes_stop_independently() {
        let mut m = StaticMedium::new(&[0.0, 100.0], 1.0);
        let mut st = vec![try_adjust_init(2, 1.0).unwrap(); 2];
        for s in &mut st {
            s.awake = true;
            s.has_message = true;
        }
        for _ in 0..200 {
            local_bcast_round(&mut st, &mut m).unwrap();
        }
        assert!(st.iter().all(|s| s.stopped));
    }

    #[test]
    fn bcast_star_on_a_line_informs_everyone() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64 * 0.7).collect();
        let mut m = StaticMedium::new(&xs, 0.5);
        let n = xs.len();
        let mut st = vec![try_adjust_init(n, 1.0).unwrap(); n];
        st[0].awake = true;
        st[0].has_message = true;
        let v = BcastVariant { star: true, use_ntd: true };
        for _ in 0..2000 {
            for (i, s) in st.iter().enumerate() {
                assert!(i == 0 || s.has_message || !s.awake);
            }
            bcast_round(&mut st, &mut m, v).unwrap();
            if st.iter().all(|s| s.has_message) {
                break;
            }
        }
        assert!(st.iter().all(|s| s.has_message));
    }

    #[test]
    fn ntd_restarts_close_receivers() {
        // eps = 1/2 at precision 1/4: NTD radius 1/8.
        let mut m = StaticMedium::new(&[0.0, 0.05], 0.5);
        let mut st = vec![try_adjust_init(2, 1.0).unwrap(); 2];
        st[0].awake = true;
        st[0].has_message = true;
        st[0].p = 0.5;
        let v = BcastVariant { star: false, use_ntd: true };
        loop {
            let slots = bcast_round(&mut st, &mut m, v).unwrap();
            if slots[0].realization.delivered(0, 1) {
                assert!(slots[1].realization.delivered(0, 1));
                assert_eq!(slots[1].sensed.ntd_sender(1), Some(0));
                assert_eq!(st[1].p, st[1].init_p);
                assert_eq!(st[0].p, st[0].init_p);
                break;
            }
        }
    }

    #[test]
    fn sleeping_node_never_transmits() {
        let mut m = StaticMedium::new(&[0.0, 50.0], 0.5);
        let mut st = vec![try_adjust_init(2, 1.0).unwrap(); 2];
        st[0].awake = true;
        st[0].has_message = true;
        let v = BcastVariant { star: false, use_ntd: true };
        for _ in 0..100 {
            let slots = bcast_round(&mut st, &mut m, v).unwrap();
            assert!(!slots[0].realization.is_transmitter(1));
        }
        assert!(!st[1].awake);
    }

    #[test]
    fn spontaneous_single_node_is_dominator() {
        let mut m = StaticMedium::new(&[0.0], 0.5);
        let mut st = vec![try_adjust_init_uniform(0.5).unwrap()];
        st[0].awake = true;
        st[0].has_message = true;
        for _ in 0..50 {
            spontaneous_round(&mut st, &mut m, 0, 0.5).unwrap();
        }
        assert_eq!(st[0].role, Role::Dominator);
        assert!(st[0].relay_done);
    }

    fn space_on_line(xs: &[f64]) -> QuasiMetricSpace {
        let pts = xs.iter().map(|&x| [x, 0.0]).collect();
        QuasiMetricSpace::new(PathLossMap::euclidean(pts, 2.0, 1.0).unwrap(), 2.0)
            .unwrap()
            .with_independence(0.0625, 1.0, 2.0)
            .unwrap()
    }

    #[test]
    fn dominating_set_checks() {
        let radii = RadiusSet::new(1.0, 0.5).unwrap();
        // Scatter with pairwise d = 0.3 > eps R / 4: all dominators, packing passes.
        let s = space_on_line(&[0.0, 0.3, 0.6]);
        let rep = dominating_set_validate(&s, &radii, &[Role::Dominator; 3]);
        assert!(rep.packing_violations.is_empty() && rep.undominated.is_empty());
        assert!(rep.pass, "{rep:?}");
        // Node 2 is 0.6 from the only dominator.
        let rep = dominating_set_validate(&s, &radii, &[Role::Dominator, Role::Dominated(0), Role::Dominated(0)]);
        assert_eq!(rep.undominated, vec![1, 2]);
        assert!(!rep.pass);
    }

    #[test]
    fn dominator_graph_diameter_on_path() {
        let radii = RadiusSet::new(1.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.35).collect();
        let s = space_on_line(&xs);
        let roles: Vec<Role> = (0..10)
            .map(|i| if i % 2 == 0 { Role::Dominator } else { Role::Dominated(i - 1) })
            .collect();
        let rep = dominating_set_validate(&s, &radii, &roles);
        assert_eq!(rep.g_diameter, Some(9));
        assert_eq!(rep.h_diameter, Some(4));
        assert!(rep.h_diameter <= rep.g_diameter);
    }
}
