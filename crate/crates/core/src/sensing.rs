//! Carrier-sensing implementations of the CD, ACK and NTD primitives.
//!
//! All three read the aggregate interference a node senses from the other transmitters of
//! the slot (its own signal excluded, noise excluded), or the signal of the sender it
//! decoded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{ball, power_of, BallKind, QuasiMetricSpace, RadiusSet};
use crate::models::{contention, interference_at, neighbors, ContentionKind, ReceptionModelConfig, RoundRealization};
use crate::serde_ext::extended_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Busy,
    Idle,
}

/// Sensing block of a scenario file. Thresholds default to half the primitive's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    #[serde(default = "two")]
    pub h1: f64,
    #[serde(default = "two")]
    pub h2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_cd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_ack: Option<f64>,
}

fn two() -> f64 {
    2.0
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            h1: 2.0,
            h2: 2.0,
            i_cd: None,
            i_ack: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingConfig {
    pub precision: f64,
    pub t_cd: f64,
    pub i_cd: f64,
    #[serde(with = "extended_f64")]
    pub t_ack: f64,
    #[serde(with = "extended_f64")]
    pub i_ack: f64,
    pub t_ntd: f64,
    /// Decoded senders closer than this trigger NTD: `precision * R / 2`.
    pub ntd_radius: f64,
    pub h1: f64,
    pub h2: f64,
    pub eta: f64,
}

impl SensingConfig {
    /// Thresholds at the precision of `radii`; `model` must be derived at the same precision.
    pub fn derive(
        space: &QuasiMetricSpace,
        model: &ReceptionModelConfig,
        radii: &RadiusSet,
        params: &SensingParams,
    ) -> Result<Self> {
        if !(params.h1 > 1.0) {
            return Err(Error::config("sensing.h1", "must be > 1"));
        }
        if !(params.h2 > 1.0) {
            return Err(Error::config("sensing.h2", "must be > 1"));
        }
        let zeta = space.zeta();
        let p = space.power();
        let eps = radii.epsilon;
        let t_cd = p / power_of(radii.comm_radius(), zeta);
        let exclusion = if model.rho_c > 0.0 {
            p / power_of(model.rho_c * radii.r, zeta)
        } else {
            f64::INFINITY
        };
        let t_ack = model.i_c.min(exclusion);
        let ntd_radius = eps * radii.r / 2.0;
        let t_ntd = p / power_of(ntd_radius, zeta);
        let i_cd = params.i_cd.unwrap_or(t_cd / 2.0);
        if !(i_cd >= 0.0 && i_cd < t_cd) {
            return Err(Error::config("sensing.i_cd", format!("must lie in [0, {t_cd}), got {i_cd}")));
        }
        let i_ack = match params.i_ack {
            Some(x) => x,
            None if t_ack.is_finite() => t_ack / 2.0,
            None => f64::INFINITY,
        };
        if !(i_ack >= 0.0 && i_ack <= t_ack) {
            return Err(Error::config("sensing.i_ack", format!("must lie in [0, {t_ack}], got {i_ack}")));
        }
        Ok(Self {
            precision: eps,
            t_cd,
            i_cd,
            t_ack,
            i_ack,
            t_ntd,
            ntd_radius,
            h1: params.h1,
            h2: params.h2,
            eta: (10.0f64 / 9.0).ln() / params.h2.ln(),
        })
    }
}

/// Busy iff the interference sensed at `v` reaches `t_cd`.
pub fn cd_outcome(space: &QuasiMetricSpace, cfg: &SensingConfig, transmitters: &[usize], v: usize) -> Channel {
    channel_for(cfg, interference_at(space, transmitters, v))
}

fn channel_for(cfg: &SensingConfig, interference: f64) -> Channel {
    if interference >= cfg.t_cd {
        Channel::Busy
    } else {
        Channel::Idle
    }
}

/// ACK of transmitter `u`: 1 iff the interference it senses is at most `t_ack`.
///
/// Debug builds assert the outcome is sound, i.e. every node of `N(u, precision)`
/// decoded `u` in `realization`.
pub fn ack_outcome(
    space: &QuasiMetricSpace,
    cfg: &SensingConfig,
    radii: &RadiusSet,
    u: usize,
    realization: &RoundRealization,
) -> Result<bool> {
    if !realization.is_transmitter(u) {
        return Err(Error::NotATransmitter(u));
    }
    let ack = interference_at(space, &realization.transmitters, u) <= cfg.t_ack;
    debug_assert!(!ack || ack_is_sound(space, radii, u, realization), "ACK fired for {u} without mass delivery");
    Ok(ack)
}

/// Whether every node of `N(u, precision)` decoded `u`.
pub fn ack_is_sound(space: &QuasiMetricSpace, radii: &RadiusSet, u: usize, realization: &RoundRealization) -> bool {
    neighbors(space, radii, u, radii.epsilon)
        .map(|nb| nb.into_iter().all(|v| realization.delivered(u, v)))
        .unwrap_or(false)
}

/// NTD at `v`: the sender it decoded this slot, if that sender is closer than `ntd_radius`.
pub fn ntd_outcome(space: &QuasiMetricSpace, cfg: &SensingConfig, realization: &RoundRealization, v: usize) -> Option<usize> {
    realization
        .received_from(v)
        .filter(|&u| space.d(u, v) < cfg.ntd_radius)
}

/// Primitive outcomes of one slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensedOutcomes {
    /// Present nodes sensing Busy, ascending.
    pub busy: Vec<usize>,
    /// Transmitters whose ACK fired, ascending.
    pub acks: Vec<usize>,
    /// `(receiver, triggering sender)`, ascending by receiver.
    pub ntd: Vec<(usize, usize)>,
}

impl SensedOutcomes {
    pub fn is_busy(&self, v: usize) -> bool {
        self.busy.binary_search(&v).is_ok()
    }

    pub fn acked(&self, u: usize) -> bool {
        self.acks.binary_search(&u).is_ok()
    }

    pub fn ntd_sender(&self, v: usize) -> Option<usize> {
        self.ntd
            .binary_search_by_key(&v, |&(r, _)| r)
            .ok()
            .map(|i| self.ntd[i].1)
    }
}

/// Evaluates all three primitives for every present node. Uses the realization's recorded
/// interference, so it must come from the same space.
pub fn sense_all(
    space: &QuasiMetricSpace,
    cfg: &SensingConfig,
    radii: &RadiusSet,
    realization: &RoundRealization,
) -> SensedOutcomes {
    let mut out = SensedOutcomes::default();
    for v in space.present_nodes() {
        let interference = realization.interference[v];
        if channel_for(cfg, interference) == Channel::Busy {
            out.busy.push(v);
        }
        if realization.is_transmitter(v) {
            if interference <= cfg.t_ack {
                debug_assert!(ack_is_sound(space, radii, v, realization), "ACK fired for {v} without mass delivery");
                out.acks.push(v);
            }
        } else if let Some(u) = ntd_outcome(space, cfg, realization, v) {
            out.ntd.push((v, u));
        }
    }
    out
}

/// `(4^-s, prod (1 - x_i), e^-s)` with `s = sum x_i`; for `x` in `[0, 1/2]^n` the three
/// are non-decreasing left to right.
pub fn product_bounds(x: &[f64]) -> (f64, f64, f64) {
    let s: f64 = x.iter().sum();
    let prod: f64 = x.iter().map(|xi| 1.0 - xi).product();
    (4f64.powf(-s), prod, (-s).exp())
}

/// Lower bound on the probability that all of `B(v, R/2)` senses Busy when `P_t(v) = phi`.
pub fn busy_probability_bound(phi: f64) -> f64 {
    1.0 - (1.0 + 2.0 * phi) * (-phi).exp()
}

/// Lower bound on the probability that nobody in `D(v, rho R)` transmits when
/// `P^rho_t(v) <= eta`.
pub fn idle_probability_bound(eta: f64) -> f64 {
    4f64.powf(-eta)
}

/// One recorded slot, as `cd_statistics` needs it.
#[derive(Debug, Clone, Copy)]
pub struct CdRound<'a> {
    pub probs: &'a [f64],
    pub transmitters: &'a [usize],
    pub busy: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdReport {
    pub busy_rounds: usize,
    pub all_busy: usize,
    pub busy_bound: f64,
    pub idle_rounds: usize,
    pub idle: usize,
    pub idle_bound: f64,
}

impl CdReport {
    pub fn busy_frequency(&self) -> f64 {
        ratio(self.all_busy, self.busy_rounds)
    }

    pub fn idle_frequency(&self) -> f64 {
        ratio(self.idle, self.idle_rounds)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Empirical CD frequencies at `v` on a static space: among rounds with `P_t(v) > phi`,
/// how often all of `B(v, R/2)` sensed Busy; among rounds with `P^rho_t(v) <= eta` and
/// interference from outside `D(v, rho R)` below `i_cd`, how often `v` sensed Idle.
/// Bounds are the contract's `1 - h1^-phi` and `h2^-eta`.
pub fn cd_statistics<'a>(
    space: &QuasiMetricSpace,
    radii: &RadiusSet,
    cfg: &SensingConfig,
    rounds: impl IntoIterator<Item = CdRound<'a>>,
    v: usize,
    phi: f64,
    rho: f64,
    eta: f64,
) -> Result<CdReport> {
    space.check_node(v)?;
    let close = ball(space, v, radii.r / 2.0, BallKind::Symmetric)?;
    let vicinity = ball(space, v, rho * radii.r, BallKind::In)?;
    let mut report = CdReport {
        busy_rounds: 0,
        all_busy: 0,
        busy_bound: 1.0 - cfg.h1.powf(-phi),
        idle_rounds: 0,
        idle: 0,
        idle_bound: cfg.h2.powf(-eta),
    };
    for round in rounds {
        let busy = |w: usize| round.busy.binary_search(&w).is_ok();
        if contention(space, radii, round.probs, v, 0.0, ContentionKind::Close) > phi {
            report.busy_rounds += 1;
            if close.iter().all(|&w| busy(w)) {
                report.all_busy += 1;
            }
        }
        if contention(space, radii, round.probs, v, rho, ContentionKind::Vicinity) <= eta {
            let external: f64 = round
                .transmitters
                .iter()
                .filter(|&&w| w != v && vicinity.binary_search(&w).is_err())
                .map(|&w| space.signal(w, v))
                .sum();
            if external < cfg.i_cd {
                report.idle_rounds += 1;
                if !busy(v) {
                    report.idle += 1;
                }
            }
        }
    }
    Ok(report)
}
