//! Per-round reception: which transmissions reach which receivers.
//!
//! Every model shares one guarantee (clear-channel success): a transmitter `u` with no
//! other transmitter in `D(u, rho_c R)` and aggregate interference at most `I_c` reaches
//! all of `N(u, eps)`. Everything else is the adversary's call; the adversary either
//! suppresses it (pessimistic), follows the model's own full rule (optimistic), or
//! follows a script.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{power_of, QuasiMetricSpace, RadiusSet};
use crate::serde_ext::{extended_f64, extended_f64_opt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(alias = "SINR")]
    Sinr,
    #[serde(alias = "UDG", alias = "ubg", alias = "UBG")]
    Udg,
    #[serde(alias = "QUDG")]
    Qudg,
    #[serde(alias = "PROTOCOL")]
    Protocol,
    #[serde(alias = "BIG")]
    Big,
    #[serde(alias = "KHOP")]
    Khop,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Sinr,
        ModelKind::Udg,
        ModelKind::Qudg,
        ModelKind::Protocol,
        ModelKind::Big,
        ModelKind::Khop,
    ];

    pub fn is_graph(self) -> bool {
        self != ModelKind::Sinr
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sinr" => Ok(ModelKind::Sinr),
            "udg" | "ubg" => Ok(ModelKind::Udg),
            "qudg" => Ok(ModelKind::Qudg),
            "protocol" => Ok(ModelKind::Protocol),
            "big" => Ok(ModelKind::Big),
            "khop" | "k-hop" => Ok(ModelKind::Khop),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Sinr => "sinr",
            ModelKind::Udg => "udg",
            ModelKind::Qudg => "qudg",
            ModelKind::Protocol => "protocol",
            ModelKind::Big => "big",
            ModelKind::Khop => "khop",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryPolicy {
    #[default]
    Pessimistic,
    Optimistic,
    Scripted,
}

/// One scripted adversarial decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub round: u64,
    #[serde(default)]
    pub slot: u8,
    /// `[sender, receiver]`.
    pub pair: [usize; 2],
    pub deliver: bool,
}

/// Model block of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    #[serde(default = "default_sinr_threshold")]
    pub sinr_threshold: f64,
    /// Ambient noise `N`; derived from `R = (P / (beta N))^(1/zeta)` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, rename = "R_prime", skip_serializing_if = "Option::is_none")]
    pub r_prime: Option<f64>,
    #[serde(default = "default_khop")]
    pub khop: u32,
    #[serde(default)]
    pub adversary_policy: AdversaryPolicy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qudg_edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adversary_script: Vec<ScriptEntry>,
}

fn default_sinr_threshold() -> f64 {
    2.0
}

fn default_khop() -> u32 {
    1
}

impl ModelParams {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            sinr_threshold: default_sinr_threshold(),
            noise: None,
            r_prime: None,
            khop: default_khop(),
            adversary_policy: AdversaryPolicy::Pessimistic,
            qudg_edges: Vec::new(),
            adversary_script: Vec::new(),
        }
    }

    pub fn sinr(sinr_threshold: f64) -> Self {
        Self {
            sinr_threshold,
            ..Self::new(ModelKind::Sinr)
        }
    }

    pub fn with_policy(mut self, policy: AdversaryPolicy) -> Self {
        self.adversary_policy = policy;
        self
    }

    pub fn with_r_prime(mut self, r_prime: f64) -> Self {
        self.r_prime = Some(r_prime);
        self
    }

    pub fn with_khop(mut self, k: u32) -> Self {
        self.khop = k;
        self
    }
}

/// Exclusion radius factor and interference cap of the clear-channel guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccClearParams {
    pub rho_c: f64,
    #[serde(with = "extended_f64")]
    pub i_c: f64,
}

/// Inputs needed to instantiate the clear-channel guarantee for a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccClearInputs {
    pub sinr_threshold: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub noise: f64,
    pub r: f64,
    pub r_prime: f64,
    pub khop: u32,
}

/// Per-model `(rho_c, I_c)`:
/// SINR `(0, min{beta, (1-eps)^-zeta - 1} N / 2^zeta)`, UDG/BIG `(2, inf)`,
/// QUDG/Protocol `((R + R') / R, inf)`, k-hop `(1 + k, inf)`.
pub fn derive_succclear_params(kind: ModelKind, p: &SuccClearInputs) -> Result<SuccClearParams> {
    Ok(match kind {
        ModelKind::Sinr => {
            let slack = (1.0 - p.epsilon).powf(-p.zeta) - 1.0;
            SuccClearParams {
                rho_c: 0.0,
                i_c: p.sinr_threshold.min(slack) * p.noise / 2f64.powf(p.zeta),
            }
        }
        ModelKind::Udg | ModelKind::Big => SuccClearParams {
            rho_c: 2.0,
            i_c: f64::INFINITY,
        },
        ModelKind::Qudg | ModelKind::Protocol => SuccClearParams {
            rho_c: (p.r + p.r_prime) / p.r,
            i_c: f64::INFINITY,
        },
        ModelKind::Khop => SuccClearParams {
            rho_c: 1.0 + p.khop as f64,
            i_c: f64::INFINITY,
        },
    })
}

/// Fully resolved reception model for one precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptionModelConfig {
    pub kind: ModelKind,
    pub rho_c: f64,
    #[serde(with = "extended_f64")]
    pub i_c: f64,
    pub sinr_threshold: f64,
    pub noise: f64,
    #[serde(rename = "R_prime", with = "extended_f64_opt", default)]
    pub r_prime: Option<f64>,
    pub khop: u32,
    pub adversary_policy: AdversaryPolicy,
    #[serde(skip)]
    qudg_edges: BTreeSet<(usize, usize)>,
    #[serde(skip)]
    script: BTreeMap<(u64, u8), Vec<((usize, usize), bool)>>,
}

impl ReceptionModelConfig {
    /// Validates the model block against the instance and instantiates the guarantee at
    /// the precision of `radii`.
    pub fn derive(params: &ModelParams, space: &QuasiMetricSpace, radii: &RadiusSet) -> Result<Self> {
        let r = radii.r;
        let beta = params.sinr_threshold;
        let mut noise = params.noise.unwrap_or(0.0);
        match params.kind {
            ModelKind::Sinr => {
                if !(beta >= 1.0 && beta.is_finite()) {
                    return Err(Error::config("model.sinr_threshold", format!("must be >= 1, got {beta}")));
                }
                let from_r = space.power() / (beta * power_of(r, space.zeta()));
                match params.noise {
                    None => noise = from_r,
                    Some(given) => {
                        if !(given > 0.0) {
                            return Err(Error::config("model.noise", format!("must be positive, got {given}")));
                        }
                        let implied = (space.power() / (beta * given)).powf(1.0 / space.zeta());
                        if (implied - r).abs() > 1e-9 {
                            return Err(Error::config(
                                "model.noise",
                                format!("implies R = {implied}, instance has R = {r}"),
                            ));
                        }
                    }
                }
            }
            ModelKind::Qudg | ModelKind::Protocol => match params.r_prime {
                Some(rp) if rp >= r && rp.is_finite() => {}
                Some(rp) => {
                    return Err(Error::config("model.R_prime", format!("must be >= R = {r}, got {rp}")))
                }
                None => return Err(Error::config("model.R_prime", "required for qudg and protocol")),
            },
            ModelKind::Khop => {
                if params.khop < 1 {
                    return Err(Error::config("model.khop", "must be >= 1"));
                }
            }
            ModelKind::Udg | ModelKind::Big => {}
        }
        let inputs = SuccClearInputs {
            sinr_threshold: beta,
            epsilon: radii.epsilon,
            zeta: space.zeta(),
            noise,
            r,
            r_prime: params.r_prime.unwrap_or(r),
            khop: params.khop,
        };
        let sc = derive_succclear_params(params.kind, &inputs)?;
        let n = space.n();
        let mut qudg_edges = BTreeSet::new();
        for (i, &[a, b]) in params.qudg_edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(Error::config(format!("model.qudg_edges[{i}]"), "invalid node pair"));
            }
            qudg_edges.insert((a.min(b), a.max(b)));
        }
        let mut script: BTreeMap<(u64, u8), Vec<((usize, usize), bool)>> = BTreeMap::new();
        for (i, e) in params.adversary_script.iter().enumerate() {
            let [u, v] = e.pair;
            if u >= n || v >= n {
                return Err(Error::config(format!("model.adversary_script[{i}]"), "unknown node"));
            }
            script.entry((e.round, e.slot)).or_default().push(((u, v), e.deliver));
        }
        Ok(Self {
            kind: params.kind,
            rho_c: sc.rho_c,
            i_c: sc.i_c,
            sinr_threshold: beta,
            noise,
            r_prime: params.r_prime,
            khop: params.khop,
            adversary_policy: params.adversary_policy,
            qudg_edges,
            script,
        })
    }

    pub fn succ_clear(&self) -> SuccClearParams {
        SuccClearParams {
            rho_c: self.rho_c,
            i_c: self.i_c,
        }
    }

    /// Radius within which another transmitter blocks reception in a graph model.
    fn interference_radius(&self, r: f64) -> f64 {
        match self.kind {
            ModelKind::Udg | ModelKind::Big | ModelKind::Sinr => r,
            ModelKind::Khop => self.khop as f64 * r,
            ModelKind::Qudg | ModelKind::Protocol => self.r_prime.unwrap_or(r),
        }
    }

    /// Communication edge of a graph model.
    fn is_edge(&self, space: &QuasiMetricSpace, r: f64, u: usize, v: usize) -> bool {
        let d = space.d(u, v);
        match self.kind {
            ModelKind::Qudg => {
                d <= r
                    || (d <= self.r_prime.unwrap_or(r) && self.qudg_edges.contains(&(u.min(v), u.max(v))))
            }
            _ => d <= r,
        }
    }
}

/// Transmissions of one slot and who received what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRealization {
    pub transmitters: Vec<usize>,
    /// `(sender, receiver)`, sorted by receiver; at most one sender per receiver.
    pub deliveries: Vec<(usize, usize)>,
    /// Aggregate interference at each node from the transmitters other than itself.
    pub interference: Vec<f64>,
    #[serde(skip)]
    received_from: Vec<Option<usize>>,
}

impl RoundRealization {
    pub fn new(n: usize, mut transmitters: Vec<usize>, mut deliveries: Vec<(usize, usize)>, interference: Vec<f64>) -> Self {
        transmitters.sort_unstable();
        transmitters.dedup();
        deliveries.sort_unstable_by_key(|&(u, v)| (v, u));
        let mut received_from = vec![None; n];
        for &(u, v) in &deliveries {
            received_from[v] = Some(u);
        }
        Self {
            transmitters,
            deliveries,
            interference,
            received_from,
        }
    }

    pub fn received_from(&self, v: usize) -> Option<usize> {
        self.received_from.get(v).copied().flatten()
    }

    pub fn delivered(&self, u: usize, v: usize) -> bool {
        self.received_from(v) == Some(u)
    }

    pub fn is_transmitter(&self, u: usize) -> bool {
        self.transmitters.binary_search(&u).is_ok()
    }
}

/// `N(u, precision) = {v != u : d(u,v) <= (1 - precision) R}` over present nodes.
pub fn neighbors(space: &QuasiMetricSpace, radii: &RadiusSet, u: usize, precision: f64) -> Result<Vec<usize>> {
    space.check_node(u)?;
    if !(precision > 0.0 && precision < 1.0) {
        return Err(Error::param("precision", format!("must lie in (0,1), got {precision}")));
    }
    let reach = (1.0 - precision) * radii.r;
    Ok(space
        .present_nodes()
        .filter(|&v| v != u && space.d(u, v) <= reach)
        .collect())
}

/// `sum_{w in S, w != v} P / f(w,v)`.
pub fn interference_at(space: &QuasiMetricSpace, transmitters: &[usize], v: usize) -> f64 {
    transmitters
        .iter()
        .filter(|&&w| w != v)
        .map(|&w| space.signal(w, v))
        .sum()
}

fn interference_vector(space: &QuasiMetricSpace, transmitters: &[usize]) -> Vec<f64> {
    (0..space.n())
        .map(|v| {
            if space.is_present(v) {
                interference_at(space, transmitters, v)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentionKind {
    /// Sum over `B(v, R/2)`.
    Close,
    /// Sum over `D(v, rho R)`.
    Vicinity,
}

/// Local contention: sum of transmission probabilities over `B(v, R/2)` (`Close`, `radius`
/// ignored) or over `D(v, radius * R)` (`Vicinity`).
pub fn contention(
    space: &QuasiMetricSpace,
    radii: &RadiusSet,
    probs: &[f64],
    v: usize,
    radius: f64,
    kind: ContentionKind,
) -> f64 {
    let half = radii.r / 2.0;
    let reach = radius * radii.r;
    space
        .present_nodes()
        .filter(|&w| match kind {
            ContentionKind::Close => space.d(w, v).max(space.d(v, w)) < half,
            ContentionKind::Vicinity => space.d(w, v) < reach,
        })
        .map(|w| probs[w])
        .sum()
}

/// Expected interference at `v` from outside its vicinity:
/// `sum_{w not in D(v, rho R)} p(w) P / f(w,v)`.
pub fn expected_interference(space: &QuasiMetricSpace, radii: &RadiusSet, probs: &[f64], v: usize, rho: f64) -> f64 {
    let reach = rho * radii.r;
    space
        .present_nodes()
        .filter(|&w| w != v && space.d(w, v) >= reach)
        .map(|w| probs[w] * space.signal(w, v))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guarantee {
    Guaranteed,
    Adversarial,
}

/// Clear-channel check for transmitter `u`: no other transmitter in `D(u, rho_c R)` and
/// interference at `u` at most `I_c`.
pub fn succ_clear_guarantee(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
    u: usize,
) -> Guarantee {
    let exclusion = cfg.rho_c * radii.r;
    let crowded = transmitters
        .iter()
        .any(|&w| w != u && space.d(w, u) < exclusion);
    if !crowded && interference_at(space, transmitters, u) <= cfg.i_c {
        Guarantee::Guaranteed
    } else {
        Guarantee::Adversarial
    }
}

/// Full SINR rule for one receiver: `v` decodes the strongest transmitter `u` iff
/// `P/f(u,v) > beta (sum_{w in S \ {u,v}} P/f(w,v) + N)`. Returns that `u`.
pub fn sinr_reception(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    transmitters: &[usize],
    v: usize,
) -> Option<usize> {
    let strongest = transmitters
        .iter()
        .copied()
        .filter(|&w| w != v)
        .max_by(|&a, &b| space.signal(a, v).total_cmp(&space.signal(b, v)).then(b.cmp(&a)))?;
    let others: f64 = transmitters
        .iter()
        .filter(|&&w| w != v && w != strongest)
        .map(|&w| space.signal(w, v))
        .sum();
    (space.signal(strongest, v) > cfg.sinr_threshold * (others + cfg.noise)).then_some(strongest)
}

/// Resolves a slot by the SINR formula alone; deliveries restricted to `N(u, eps)`,
/// transmitters never receive.
pub fn resolve_round_sinr(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
) -> Result<RoundRealization> {
    if cfg.kind != ModelKind::Sinr {
        return Err(Error::ModelMismatch(format!("SINR resolver called with {}", cfg.kind)));
    }
    let reach = radii.comm_radius();
    let mut tx = transmitters.to_vec();
    tx.sort_unstable();
    let mut deliveries = Vec::new();
    for v in space.present_nodes() {
        if tx.binary_search(&v).is_ok() {
            continue;
        }
        if let Some(u) = sinr_reception(space, cfg, &tx, v) {
            if space.d(u, v) <= reach {
                deliveries.push((u, v));
            }
        }
    }
    Ok(RoundRealization::new(space.n(), tx, deliveries, interference_vector(space, transmitters)))
}

/// Full graph-model rule for one receiver: `v` hears `u` iff `(u,v)` is a communication
/// edge and `u` is the only transmitter within the model's interference radius of `v`.
pub fn graph_reception(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
    v: usize,
) -> Option<usize> {
    let blocking = cfg.interference_radius(radii.r);
    let mut heard = transmitters
        .iter()
        .copied()
        .filter(|&w| w != v && space.d(w, v) <= blocking);
    let u = heard.next()?;
    if heard.next().is_some() {
        return None;
    }
    cfg.is_edge(space, radii.r, u, v).then_some(u)
}

/// Resolves a slot under UDG/UBG, QUDG, Protocol, BIG or k-hop reception.
pub fn resolve_round_graph(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
) -> Result<RoundRealization> {
    if !cfg.kind.is_graph() {
        return Err(Error::ModelMismatch("graph resolver called with sinr".into()));
    }
    let reach = radii.comm_radius();
    let mut tx = transmitters.to_vec();
    tx.sort_unstable();
    let mut deliveries = Vec::new();
    for v in space.present_nodes() {
        if tx.binary_search(&v).is_ok() {
            continue;
        }
        if let Some(u) = graph_reception(space, cfg, radii, &tx, v) {
            if space.d(u, v) <= reach {
                deliveries.push((u, v));
            }
        }
    }
    Ok(RoundRealization::new(space.n(), tx, deliveries, interference_vector(space, transmitters)))
}

/// The model's own full rule, whichever kind it is.
pub fn resolve_round_full(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
) -> Result<RoundRealization> {
    if cfg.kind == ModelKind::Sinr {
        resolve_round_sinr(space, cfg, radii, transmitters)
    } else {
        resolve_round_graph(space, cfg, radii, transmitters)
    }
}

/// Decides the non-guaranteed candidate receptions `pending`.
///
/// `full_rule` holds the deliveries the model's own rule would make this slot.
pub fn resolve_adversarial(
    cfg: &ReceptionModelConfig,
    pending: &[(usize, usize)],
    full_rule: &[(usize, usize)],
    round: u64,
    slot: u8,
) -> Result<Vec<(usize, usize)>> {
    match cfg.adversary_policy {
        AdversaryPolicy::Pessimistic => Ok(Vec::new()),
        AdversaryPolicy::Optimistic => {
            let full: BTreeSet<_> = full_rule.iter().copied().collect();
            Ok(pending.iter().copied().filter(|p| full.contains(p)).collect())
        }
        AdversaryPolicy::Scripted => {
            if pending.is_empty() {
                return Ok(Vec::new());
            }
            let entries = cfg
                .script
                .get(&(round, slot))
                .ok_or(Error::MissingScript { round, slot })?;
            let pending: BTreeSet<_> = pending.iter().copied().collect();
            Ok(entries
                .iter()
                .filter(|(pair, deliver)| *deliver && pending.contains(pair))
                .map(|(pair, _)| *pair)
                .collect())
        }
    }
}

/// Resolves one slot: guaranteed clear-channel deliveries plus whatever the adversary
/// grants among the remaining candidates. Each receiver keeps at most one sender,
/// guaranteed deliveries first, then the lowest sender index.
pub fn resolve_round(
    space: &QuasiMetricSpace,
    cfg: &ReceptionModelConfig,
    radii: &RadiusSet,
    transmitters: &[usize],
    round: u64,
    slot: u8,
) -> Result<RoundRealization> {
    let full = resolve_round_full(space, cfg, radii, transmitters)?;
    let tx = &full.transmitters;
    let mut guaranteed = Vec::new();
    let mut pending = Vec::new();
    for &u in tx {
        let clear = succ_clear_guarantee(space, cfg, radii, tx, u) == Guarantee::Guaranteed;
        for v in neighbors(space, radii, u, radii.epsilon)? {
            if tx.binary_search(&v).is_ok() {
                continue;
            }
            if clear {
                guaranteed.push((u, v));
            } else {
                pending.push((u, v));
            }
        }
    }
    let granted = resolve_adversarial(cfg, &pending, &full.deliveries, round, slot)?;
    let mut taken = vec![false; space.n()];
    let mut deliveries = Vec::with_capacity(guaranteed.len() + granted.len());
    let mut ordered_granted = granted;
    ordered_granted.sort_unstable();
    for (u, v) in guaranteed.into_iter().chain(ordered_granted) {
        if !taken[v] {
            taken[v] = true;
            deliveries.push((u, v));
        }
    }
    let RoundRealization {
        transmitters,
        interference,
        ..
    } = full;
    Ok(RoundRealization::new(space.n(), transmitters, deliveries, interference))
}
