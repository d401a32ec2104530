//! Adversarial topology schedules: churn, path-loss retunes and positional drift, their
//! budget validation, and the dynamic metrics (dynamic degree, stable distance).

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{
    ball, metricity_violation, validate_bounded_independence, BallKind, QuasiMetricSpace, RadiusSet, VALIDATOR_SLACK,
};
use crate::protocols::{log2n, PhaseParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TopologyEvent {
    /// Node (re)joins. `losses` holds `(other, f(node, other), f(other, node))` overrides;
    /// without them the node reappears with its previous path losses.
    Arrive {
        node: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        losses: Vec<(usize, f64, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        position: Option<[f64; 2]>,
    },
    Depart {
        node: usize,
    },
    Retune {
        from: usize,
        to: usize,
        loss: f64,
    },
    /// Moves a node of a Euclidean-backed instance, rewriting its whole row and column.
    Relocate {
        node: usize,
        position: [f64; 2],
    },
}

impl TopologyEvent {
    fn is_edge_change(&self) -> bool {
        matches!(self, TopologyEvent::Retune { .. } | TopologyEvent::Relocate { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub round: u64,
    #[serde(flatten)]
    pub event: TopologyEvent,
}

/// Edge-change budget: at most `tau |T|` new neighbours per window `T`, and for every
/// `phi >= 1` at most an `a phi^-k` fraction of rounds with more than `phi` of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub tau: f64,
    pub k: f64,
    #[serde(default = "one")]
    pub a: f64,
    /// Window length in rounds; one Try&Adjust phase if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
}

fn one() -> f64 {
    1.0
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            k: 8.0,
            a: 1.0,
            window: None,
        }
    }
}

impl BudgetParams {
    pub fn window_for(&self, n: usize) -> u64 {
        self.window.unwrap_or_else(|| PhaseParams::default().phase_len(n)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdversarySchedule {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initially_absent: Vec<usize>,
    /// Sorted by round; events of one round apply in order, before the round's first slot.
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    #[serde(default)]
    pub budget: BudgetParams,
    pub horizon: u64,
}

impl AdversarySchedule {
    pub fn empty(horizon: u64) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn is_static(&self) -> bool {
        self.events.is_empty() && self.initially_absent.is_empty()
    }

    /// Events stamped with `round`.
    pub fn events_at(&self, round: u64) -> &[ScheduledEvent] {
        let lo = self.events.partition_point(|e| e.round < round);
        let hi = self.events.partition_point(|e| e.round <= round);
        &self.events[lo..hi]
    }

    pub fn check_sorted(&self) -> Result<()> {
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].round < w[0].round {
                return Err(Error::config(format!("schedule.events[{}]", i + 1), "rounds must be non-decreasing"));
            }
        }
        Ok(())
    }

    /// Union of two schedules; `other`'s events follow `self`'s within a round.
    pub fn merge(mut self, other: AdversarySchedule) -> Self {
        self.events.extend(other.events);
        self.events.sort_by_key(|e| e.round);
        self.initially_absent.extend(other.initially_absent);
        self.initially_absent.sort_unstable();
        self.initially_absent.dedup();
        self.horizon = self.horizon.max(other.horizon);
        self
    }
}

/// Applies one event to the space.
pub fn apply_event(space: &mut QuasiMetricSpace, event: &TopologyEvent) -> Result<()> {
    match event {
        TopologyEvent::Arrive { node, losses, position } => {
            space.check_node(*node)?;
            if let Some(p) = position {
                space.relocate(*node, *p)?;
            }
            for &(other, out, inc) in losses {
                space.set_loss(*node, other, out)?;
                space.set_loss(other, *node, inc)?;
            }
            space.set_present(*node, true)
        }
        TopologyEvent::Depart { node } => space.set_present(*node, false),
        TopologyEvent::Retune { from, to, loss } => space.set_loss(*from, *to, *loss),
        TopologyEvent::Relocate { node, position } => space.relocate(*node, *position),
    }
}

/// Initial space of a schedule (its initially absent nodes removed).
pub fn initial_space(space: &QuasiMetricSpace, schedule: &AdversarySchedule) -> Result<QuasiMetricSpace> {
    let mut s = space.clone();
    for &v in &schedule.initially_absent {
        s.set_present(v, false)?;
    }
    Ok(s)
}

/// A space plus the schedule driving it: `G_t` is the space after round `t`'s events.
#[derive(Debug, Clone)]
pub struct TemporalTopology {
    pub initial: QuasiMetricSpace,
    pub schedule: AdversarySchedule,
}

impl TemporalTopology {
    pub fn new(space: &QuasiMetricSpace, schedule: AdversarySchedule) -> Result<Self> {
        schedule.check_sorted()?;
        Ok(Self {
            initial: initial_space(space, &schedule)?,
            schedule,
        })
    }

    pub fn fixed(space: &QuasiMetricSpace, horizon: u64) -> Self {
        Self {
            initial: space.clone(),
            schedule: AdversarySchedule::empty(horizon),
        }
    }

    pub fn horizon(&self) -> u64 {
        self.schedule.horizon
    }

    /// Calls `visit(t, G_t)` for `t` in `0..until`.
    pub fn replay(&self, until: u64, mut visit: impl FnMut(u64, &QuasiMetricSpace)) -> Result<()> {
        let mut s = self.initial.clone();
        for t in 0..until {
            for e in self.schedule.events_at(t) {
                apply_event(&mut s, &e.event)?;
            }
            visit(t, &s);
        }
        Ok(())
    }

    pub fn snapshot(&self, round: u64) -> Result<QuasiMetricSpace> {
        let mut s = self.initial.clone();
        for e in self.schedule.events.iter().take_while(|e| e.round <= round) {
            apply_event(&mut s, &e.event)?;
        }
        Ok(s)
    }
}

fn neighbor_matrix(space: &QuasiMetricSpace, reach: f64) -> Vec<bool> {
    let n = space.n();
    let mut m = vec![false; n * n];
    for u in space.present_nodes() {
        for v in space.present_nodes() {
            if u != v && space.d(u, v) <= reach {
                m[u * n + v] = true;
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetViolation {
    pub node: usize,
    pub window_start: u64,
    pub window_len: u64,
    /// New-neighbour total (tau budget) or number of rounds above `phi` (tail budget).
    pub count: u64,
    pub limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub pass: bool,
    pub window: u64,
    pub max_new_neighbors: u64,
    pub tau_violations: Vec<BudgetViolation>,
    pub tail_violations: Vec<BudgetViolation>,
    /// `(round, u, v, w)` of failed metricity revalidations.
    pub metricity_failures: Vec<(u64, usize, usize, usize)>,
    pub independence_failures: Vec<u64>,
    pub param_issues: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    /// Revalidate metricity and independence every this many rounds with edge changes; 0 never.
    pub revalidate_every: u64,
    pub q_samples: &'static [f64],
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            revalidate_every: 50,
            q_samples: &[1.0, 2.0, 4.0],
        }
    }
}

/// Per-node count of directed neighbour entries caused by edge changes, per round.
/// Pairs count only when both ends are present before and after the round's events.
pub fn new_neighbor_counts(topology: &TemporalTopology, radii: &RadiusSet) -> Result<Vec<Vec<u64>>> {
    let n = topology.initial.n();
    let h = topology.horizon();
    let reach = radii.comm_radius();
    let mut counts = vec![vec![0u64; h as usize]; n];
    let mut space = topology.initial.clone();
    let mut prev = neighbor_matrix(&space, reach);
    for t in 0..h {
        let events = topology.schedule.events_at(t);
        if events.is_empty() {
            continue;
        }
        let before: Vec<bool> = (0..n).map(|v| space.is_present(v)).collect();
        for e in events {
            apply_event(&mut space, &e.event)?;
        }
        let now = neighbor_matrix(&space, reach);
        if events.iter().any(|e| e.event.is_edge_change()) {
            for v in 0..n {
                if !(before[v] && space.is_present(v)) {
                    continue;
                }
                for w in 0..n {
                    if before[w] && space.is_present(w) && now[v * n + w] && !prev[v * n + w] {
                        counts[v][t as usize] += 1;
                    }
                }
            }
        }
        prev = now;
    }
    Ok(counts)
}

fn windows(horizon: u64, w: u64) -> Vec<(u64, u64)> {
    if horizon == 0 {
        Vec::new()
    } else if horizon <= w {
        vec![(0, horizon)]
    } else {
        (0..=horizon - w).map(|s| (s, w)).collect()
    }
}

/// Checks the tau and tail budgets over every window of the configured length, and
/// periodically revalidates metricity (at the space's zeta) and bounded independence.
pub fn validate_schedule(
    schedule: &AdversarySchedule,
    space: &QuasiMetricSpace,
    radii: &RadiusSet,
    opts: &ValidateOptions,
) -> Result<ScheduleReport> {
    let topology = TemporalTopology::new(space, schedule.clone())?;
    let n = space.n();
    let b = schedule.budget;
    let w = b.window_for(n);
    let mut param_issues = Vec::new();
    if !(b.tau > 0.0) {
        param_issues.push(format!("tau must be positive, got {}", b.tau));
    }
    if space.zeta() > space.lambda {
        let k_min = 2.0 * space.lambda / (space.zeta() - space.lambda);
        if !(b.k > k_min) {
            param_issues.push(format!("k = {} must exceed 2 lambda / (zeta - lambda) = {k_min}", b.k));
        }
    } else {
        param_issues.push(format!("lambda = {} must be below zeta = {}", space.lambda, space.zeta()));
    }
    for e in &schedule.events {
        if e.round >= schedule.horizon {
            param_issues.push(format!("event at round {} beyond horizon {}", e.round, schedule.horizon));
            break;
        }
    }

    let counts = new_neighbor_counts(&topology, radii)?;
    let max_new_neighbors = counts.iter().flatten().copied().max().unwrap_or(0);
    let wins = windows(schedule.horizon, w);
    let mut tau_violations = Vec::new();
    let mut tail_violations = Vec::new();
    for (v, c) in counts.iter().enumerate() {
        if c.iter().all(|&x| x == 0) {
            continue;
        }
        let mut prefix = vec![0u64; c.len() + 1];
        for (i, &x) in c.iter().enumerate() {
            prefix[i + 1] = prefix[i] + x;
        }
        for &(s, len) in &wins {
            let total = prefix[(s + len) as usize] - prefix[s as usize];
            let limit = b.tau * len as f64;
            if total as f64 > limit {
                tau_violations.push(BudgetViolation {
                    node: v,
                    window_start: s,
                    window_len: len,
                    count: total,
                    limit,
                    phi: None,
                });
            }
        }
        let peak = c.iter().copied().max().unwrap_or(0);
        let mut phi = 1u64;
        while phi < peak {
            let mut above = vec![0u64; c.len() + 1];
            for (i, &x) in c.iter().enumerate() {
                above[i + 1] = above[i] + u64::from(x > phi);
            }
            for &(s, len) in &wins {
                let hits = above[(s + len) as usize] - above[s as usize];
                let limit = b.a * (phi as f64).powf(-b.k) * len as f64;
                if hits as f64 > limit {
                    tail_violations.push(BudgetViolation {
                        node: v,
                        window_start: s,
                        window_len: len,
                        count: hits,
                        limit,
                        phi: Some(phi),
                    });
                }
            }
            phi *= 2;
        }
    }

    let mut metricity_failures = Vec::new();
    let mut independence_failures = Vec::new();
    if opts.revalidate_every > 0 {
        let mut s = topology.initial.clone();
        let mut dirty = false;
        for t in 0..schedule.horizon {
            for e in schedule.events_at(t) {
                apply_event(&mut s, &e.event)?;
                dirty |= e.event.is_edge_change() || matches!(e.event, TopologyEvent::Arrive { .. });
            }
            let last = t + 1 == schedule.horizon;
            if dirty && (t % opts.revalidate_every == 0 || last) {
                dirty = false;
                if let Some((u, v, x)) = metricity_violation(s.map(), s.zeta(), VALIDATOR_SLACK) {
                    metricity_failures.push((t, u, v, x));
                }
                if s.r_min > 0.0 && !validate_bounded_independence(&s, opts.q_samples).pass {
                    independence_failures.push(t);
                }
            }
        }
    }
    let pass = param_issues.is_empty()
        && tau_violations.is_empty()
        && tail_violations.is_empty()
        && metricity_failures.is_empty()
        && independence_failures.is_empty();
    Ok(ScheduleReport {
        pass,
        window: w,
        max_new_neighbors,
        tau_violations,
        tail_violations,
        metricity_failures,
        independence_failures,
        param_issues,
    })
}

/// Each round from 1 on, every absent node arrives and every present node other than
/// `protected` departs, each with probability `rate`.
pub fn gen_churn_schedule(n: usize, rate: f64, horizon: u64, seed: u64, protected: Option<usize>) -> Result<AdversarySchedule> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param("rate", format!("must lie in [0,1], got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut present = vec![true; n];
    let mut events = Vec::new();
    for t in 1..horizon {
        for v in 0..n {
            if Some(v) == protected {
                continue;
            }
            let x: f64 = rng.gen();
            if x < rate {
                let event = if present[v] {
                    TopologyEvent::Depart { node: v }
                } else {
                    TopologyEvent::Arrive {
                        node: v,
                        losses: Vec::new(),
                        position: None,
                    }
                };
                present[v] = !present[v];
                events.push(ScheduledEvent { round: t, event });
            }
        }
    }
    Ok(AdversarySchedule {
        initially_absent: Vec::new(),
        events,
        budget: BudgetParams::default(),
        horizon,
    })
}

/// Redraws allowed per node and round before it stays put.
pub const DRIFT_REDRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DriftStats {
    pub proposed: usize,
    pub rejected: usize,
    pub moves: usize,
}

/// Seeded random walk of every node (step length uniform in `[0, speed]`, kept inside the
/// initial bounding box). Steps that would break a budget are redrawn; the output always
/// satisfies the tau and tail budgets.
pub fn gen_drift_schedule(
    space: &QuasiMetricSpace,
    radii: &RadiusSet,
    speed: f64,
    horizon: u64,
    budget: BudgetParams,
    seed: u64,
) -> Result<(AdversarySchedule, DriftStats)> {
    let emb = space
        .map()
        .embedding()
        .ok_or_else(|| Error::param("space", "drift needs a Euclidean-backed instance"))?
        .clone();
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::param("speed", format!("must be >= 0, got {speed}")));
    }
    let n = space.n();
    let w = budget.window_for(n);
    let h = horizon as usize;
    let reach = radii.comm_radius();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &emb.points {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let mut s = space.clone();
    for v in 0..n {
        s.set_present(v, true)?;
    }
    let mut pos = emb.points.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = vec![vec![0u64; h]; n];
    let mut stats = DriftStats::default();
    let mut events = Vec::new();
    let mut prev = neighbor_matrix(&s, reach);
    let mut entered = vec![false; n * n];

    let within_budget = |c: &[u64], t: usize| -> bool {
        let (start, len) = if h <= w as usize { (0, h) } else { ((t + 1).saturating_sub(w as usize), w as usize) };
        let slice = &c[start..=t];
        let total: u64 = slice.iter().sum();
        if total as f64 > budget.tau * len as f64 {
            return false;
        }
        let peak = slice.iter().copied().max().unwrap_or(0);
        let mut phi = 1u64;
        while phi < peak {
            let hits = slice.iter().filter(|&&x| x > phi).count();
            if hits as f64 > budget.a * (phi as f64).powf(-budget.k) * len as f64 {
                return false;
            }
            phi *= 2;
        }
        true
    };

    if speed > 0.0 {
        for t in 1..h {
            entered.iter_mut().for_each(|e| *e = false);
            let start_pos = pos.clone();
            for x in 0..n {
                for _ in 0..=DRIFT_REDRAWS {
                    stats.proposed += 1;
                    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                    let len = rng.gen::<f64>() * speed;
                    let cand = [
                        (pos[x][0] + len * theta.cos()).clamp(lo[0], hi[0]),
                        (pos[x][1] + len * theta.sin()).clamp(lo[1], hi[1]),
                    ];
                    let old = pos[x];
                    if s.relocate(x, cand).is_err() {
                        stats.rejected += 1;
                        continue;
                    }
                    let mut delta: Vec<(usize, usize, bool)> = Vec::new();
                    for y in 0..n {
                        if y == x {
                            continue;
                        }
                        for (a, b) in [(x, y), (y, x)] {
                            let now = s.d(a, b) <= reach && !prev[a * n + b];
                            if now != entered[a * n + b] {
                                delta.push((a, b, now));
                            }
                        }
                    }
                    let mut touched = Vec::new();
                    for &(a, _, now) in &delta {
                        if now {
                            hist[a][t] += 1;
                            touched.push(a);
                        } else {
                            hist[a][t] -= 1;
                        }
                    }
                    touched.sort_unstable();
                    touched.dedup();
                    if touched.iter().all(|&a| within_budget(&hist[a], t)) {
                        for &(a, b, now) in &delta {
                            entered[a * n + b] = now;
                        }
                        pos[x] = cand;
                        break;
                    }
                    for &(a, _, now) in &delta {
                        if now {
                            hist[a][t] -= 1;
                        } else {
                            hist[a][t] += 1;
                        }
                    }
                    s.relocate(x, old)?;
                    stats.rejected += 1;
                }
            }
            for x in 0..n {
                if pos[x] != start_pos[x] {
                    stats.moves += 1;
                    events.push(ScheduledEvent {
                        round: t as u64,
                        event: TopologyEvent::Relocate { node: x, position: pos[x] },
                    });
                }
            }
            prev = neighbor_matrix(&s, reach);
        }
    }
    if stats.rejected * 2 > stats.proposed {
        return Err(Error::BudgetInfeasible {
            rejected: stats.rejected,
            proposed: stats.proposed,
        });
    }
    let schedule = AdversarySchedule {
        initially_absent: Vec::new(),
        events,
        budget: BudgetParams {
            window: Some(w),
            ..budget
        },
        horizon,
    };
    Ok((schedule, stats))
}

/// `|union_{r=t0}^{t1} D(v, rho R)(r)|`.
pub fn dynamic_degree(topology: &TemporalTopology, radii: &RadiusSet, v: usize, rho: f64, t0: u64, t1: u64) -> Result<usize> {
    Ok(dynamic_degrees(topology, radii, rho, &[(v, t0, t1)])?[0])
}

/// Batched [`dynamic_degree`]: one replay for all `(v, t0, t1)` queries.
pub fn dynamic_degrees(topology: &TemporalTopology, radii: &RadiusSet, rho: f64, queries: &[(usize, u64, u64)]) -> Result<Vec<usize>> {
    let n = topology.initial.n();
    for &(v, t0, t1) in queries {
        topology.initial.check_node(v)?;
        if t0 > t1 {
            return Err(Error::param("t0", format!("{t0} exceeds t1 = {t1}")));
        }
    }
    let until = queries.iter().map(|q| q.2 + 1).max().unwrap_or(0);
    let mut seen = vec![vec![false; n]; queries.len()];
    let mut sizes = vec![0usize; queries.len()];
    let mut err = None;
    topology.replay(until, |t, s| {
        for (i, &(v, t0, t1)) in queries.iter().enumerate() {
            if t < t0 || t > t1 {
                continue;
            }
            match ball(s, v, rho * radii.r, BallKind::In) {
                Ok(members) => {
                    for w in members {
                        if !seen[i][w] {
                            seen[i][w] = true;
                            sizes[i] += 1;
                        }
                    }
                }
                Err(e) => err = Some(e),
            }
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(sizes),
    }
}

/// Maximal runs `[b, e]` (inclusive) of rounds where `y` is in `N(x, eps)` with both present.
pub fn edge_intervals(topology: &TemporalTopology, radii: &RadiusSet) -> Result<Vec<Vec<Vec<(u64, u64)>>>> {
    let n = topology.initial.n();
    let h = topology.horizon();
    let reach = radii.comm_radius();
    let mut open: Vec<Option<u64>> = vec![None; n * n];
    let mut out = vec![vec![Vec::new(); n]; n];
    topology.replay(h, |t, s| {
        for x in 0..n {
            for y in 0..n {
                let alive = x != y && s.is_present(x) && s.is_present(y) && s.d(x, y) <= reach;
                let k = x * n + y;
                match (alive, open[k]) {
                    (true, None) => open[k] = Some(t),
                    (false, Some(b)) => {
                        out[x][y].push((b, t - 1));
                        open[k] = None;
                    }
                    _ => {}
                }
            }
        }
    })?;
    for x in 0..n {
        for y in 0..n {
            if let Some(b) = open[x * n + y] {
                out[x][y].push((b, h - 1));
            }
        }
    }
    Ok(out)
}

/// Minimum time-length of a stable `s`-`v` path for every `v` (`None` if there is none).
///
/// Each hop uses an interval `[b_i, e_i]` inside an alive run of its edge with
/// `e_i - b_i >= L` and `e_i - e_{i-1} >= L`, `L = ceil(c log2 n)`; the time-length is
/// `e_last - b_1`. Earliest-arrival search for every feasible start `b_1`.
pub fn stable_distances(topology: &TemporalTopology, radii: &RadiusSet, c: f64, s: usize, n_bound: usize) -> Result<Vec<Option<u64>>> {
    topology.initial.check_node(s)?;
    if !(c > 0.0) {
        return Err(Error::param("c", format!("must be positive, got {c}")));
    }
    let n = topology.initial.n();
    let l = (c * log2n(n_bound)).ceil() as u64;
    let iv = edge_intervals(topology, radii)?;
    let mut best: Vec<Option<u64>> = vec![None; n];
    best[s] = Some(0);
    let mut starts: Vec<u64> = Vec::new();
    for y in 0..n {
        for &(b, e) in &iv[s][y] {
            if e >= b + l {
                starts.extend(b..=e - l);
            }
        }
    }
    starts.sort_unstable();
    starts.dedup();
    let mut arr: Vec<Option<u64>> = vec![None; n];
    for &b1 in &starts {
        arr.iter_mut().for_each(|a| *a = None);
        let mut heap = BinaryHeap::new();
        for y in 0..n {
            if iv[s][y].iter().any(|&(b, e)| b <= b1 && b1 + l <= e) {
                arr[y] = Some(b1 + l);
                heap.push(Reverse((b1 + l, y)));
            }
        }
        while let Some(Reverse((e, x))) = heap.pop() {
            if arr[x] != Some(e) {
                continue;
            }
            for y in 0..n {
                for &(b, end) in &iv[x][y] {
                    let cand = (e + l).max(b + l);
                    if cand <= end {
                        if arr[y].map_or(true, |a| cand < a) {
                            arr[y] = Some(cand);
                            heap.push(Reverse((cand, y)));
                        }
                        break;
                    }
                }
            }
        }
        for v in 0..n {
            if v == s {
                continue;
            }
            if let Some(a) = arr[v] {
                let len = a - b1;
                if best[v].map_or(true, |x| len < x) {
                    best[v] = Some(len);
                }
            }
        }
    }
    Ok(best)
}

pub fn stable_distance(topology: &TemporalTopology, radii: &RadiusSet, c: f64, s: usize, v: usize, n_bound: usize) -> Result<Option<u64>> {
    topology.initial.check_node(v)?;
    Ok(stable_distances(topology, radii, c, s, n_bound)?[v])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopMetrics {
    /// `dist[u][v]` hops along directed edges `v in N(u, eps)`; `None` if unreachable.
    pub dist: Vec<Vec<Option<u32>>>,
    pub diameter: u32,
    pub strongly_connected: bool,
}

/// All-pairs directed BFS over the present nodes of one snapshot.
pub fn hop_metrics(space: &QuasiMetricSpace, radii: &RadiusSet) -> HopMetrics {
    let n = space.n();
    let reach = radii.comm_radius();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            if !space.is_present(u) {
                return Vec::new();
            }
            space.present_nodes().filter(|&v| v != u && space.d(u, v) <= reach).collect()
        })
        .collect();
    let mut dist = vec![vec![None; n]; n];
    let mut diameter = 0;
    let mut strongly_connected = true;
    for u in space.present_nodes() {
        let hops = crate::metric::bfs_hops(&adj, u);
        for v in space.present_nodes() {
            match hops[v] {
                Some(h) => {
                    dist[u][v] = Some(h as u32);
                    diameter = diameter.max(h as u32);
                }
                None => strongly_connected = false,
            }
        }
    }
    HopMetrics {
        dist,
        diameter,
        strongly_connected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{gen_euclidean_instance, PathLossMap};

    fn line_space(xs: &[f64]) -> QuasiMetricSpace {
        let pts = xs.iter().map(|&x| [x, 0.0]).collect();
        QuasiMetricSpace::new(PathLossMap::euclidean(pts, 3.0, 1.0).unwrap(), 3.0)
            .unwrap()
            .with_independence(0.1, 2.0, 20.0)
            .unwrap()
    }

    fn radii() -> RadiusSet {
        RadiusSet::new(1.0, 0.2).unwrap()
    }

    #[test]
    fn empty_schedule_passes() {
        let s = line_space(&[0.0, 0.5, 1.0]);
        let rep = validate_schedule(&AdversarySchedule::empty(100), &s, &radii(), &ValidateOptions::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn tau_budget_boundary() {
        // Node 0 gains node 1 as a neighbour twice in a window of 4 with tau = 1/4.
        let s = line_space(&[0.0, 0.5, 5.0]);
        let far = 8.0;
        let near = 0.125;
        let mut sched = AdversarySchedule {
            horizon: 8,
            budget: BudgetParams {
                tau: 0.25,
                k: 20.0,
                a: 1.0,
                window: Some(4),
            },
            ..AdversarySchedule::default()
        };
        let retune = |round, loss| ScheduledEvent {
            round,
            event: TopologyEvent::Retune { from: 0, to: 1, loss },
        };
        sched.events = vec![retune(1, far), retune(2, near)];
        let opts = ValidateOptions {
            revalidate_every: 0,
            ..ValidateOptions::default()
        };
        assert!(validate_schedule(&sched, &s, &radii(), &opts).unwrap().pass);
        sched.events.extend([retune(3, far), retune(4, near)]);
        let rep = validate_schedule(&sched, &s, &radii(), &opts).unwrap();
        assert!(!rep.pass);
        assert!(rep.tau_violations.iter().all(|v| v.node == 0 && v.count == 2));
        assert_eq!(rep.tau_violations[0].window_start, 1);
    }

    #[test]
    fn pure_churn_passes_edge_budget() {
        let map = gen_euclidean_instance(100, 10.0, 3.0, 5).unwrap();
        let s = QuasiMetricSpace::new(map, 3.0).unwrap().with_independence(0.0, 2.0, 10.0).unwrap();
        let sched = gen_churn_schedule(100, 0.01, 1000, 3, Some(0)).unwrap();
        assert!(!sched.events.is_empty());
        let opts = ValidateOptions {
            revalidate_every: 0,
            ..ValidateOptions::default()
        };
        let rep = validate_schedule(&sched, &s, &radii(), &opts).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.max_new_neighbors, 0);
        assert_eq!(sched, gen_churn_schedule(100, 0.01, 1000, 3, Some(0)).unwrap());
        assert!(gen_churn_schedule(10, 0.0, 100, 1, None).unwrap().events.is_empty());
    }

    #[test]
    fn drift_output_validates() {
        let mut map = gen_euclidean_instance(30, 4.0, 3.0, 9).unwrap();
        map.set_power(1.0).unwrap();
        let s = QuasiMetricSpace::new(map, 3.0).unwrap().with_independence(0.0, 2.0, 10.0).unwrap();
        let budget = BudgetParams {
            tau: 0.05,
            k: 5.0,
            a: 1.0,
            window: Some(40),
        };
        let (sched, stats) = gen_drift_schedule(&s, &radii(), 0.02, 200, budget, 4).unwrap();
        assert!(stats.moves > 0);
        let rep = validate_schedule(&sched, &s, &radii(), &ValidateOptions::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        let (still, st) = gen_drift_schedule(&s, &radii(), 0.0, 200, budget, 4).unwrap();
        assert!(still.events.is_empty() && st.proposed == 0);
    }

    #[test]
    fn moving_inside_neighbourhood_is_free() {
        let s = line_space(&[0.0, 0.3]);
        let mut sched = AdversarySchedule::empty(10);
        sched.events.push(ScheduledEvent {
            round: 2,
            event: TopologyEvent::Relocate { node: 1, position: [0.5, 0.0] },
        });
        let topo = TemporalTopology::new(&s, sched).unwrap();
        let counts = new_neighbor_counts(&topo, &radii()).unwrap();
        assert!(counts.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn dynamic_degree_examples() {
        let s = line_space(&[0.0, 0.5, 20.0]);
        let r = radii();
        let fixed = TemporalTopology::fixed(&s, 10);
        assert_eq!(dynamic_degree(&fixed, &r, 0, 2.0, 0, 9).unwrap(), 2);
        assert_eq!(dynamic_degree(&fixed, &r, 0, 2.0, 4, 4).unwrap(), 2);
        let mut sched = AdversarySchedule::empty(10);
        sched.events.push(ScheduledEvent {
            round: 3,
            event: TopologyEvent::Relocate { node: 2, position: [1.0, 0.0] },
        });
        sched.events.push(ScheduledEvent {
            round: 4,
            event: TopologyEvent::Relocate { node: 2, position: [20.0, 0.0] },
        });
        let moving = TemporalTopology::new(&s, sched).unwrap();
        assert_eq!(dynamic_degree(&moving, &r, 0, 2.0, 0, 9).unwrap(), 3);
        assert_eq!(dynamic_degree(&moving, &r, 0, 2.0, 0, 2).unwrap(), 2);
        let a = dynamic_degree(&moving, &r, 0, 1.0, 0, 9).unwrap();
        assert!(a <= 3);
    }

    #[test]
    fn stable_distance_static_line() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 0.7).collect();
        let s = line_space(&xs);
        let topo = TemporalTopology::fixed(&s, 200);
        let l = (1.0 * log2n(16)).ceil() as u64;
        let d = stable_distances(&topo, &radii(), 1.0, 0, 16).unwrap();
        assert_eq!(d[0], Some(0));
        for v in 1..5 {
            assert_eq!(d[v], Some(v as u64 * l));
        }
    }

    #[test]
    fn short_lived_edge_is_unusable() {
        // Edge 0-1 alive for L - 1 rounds only, then 1 jumps away.
        let s = line_space(&[0.0, 0.5]);
        let l = 4;
        let mut sched = AdversarySchedule::empty(30);
        sched.events.push(ScheduledEvent {
            round: l,
            event: TopologyEvent::Relocate { node: 1, position: [50.0, 0.0] },
        });
        let topo = TemporalTopology::new(&s, sched).unwrap();
        let d = stable_distances(&topo, &radii(), 1.0, 0, 16).unwrap();
        assert_eq!(d[1], None);
    }

    #[test]
    fn hop_metrics_examples() {
        let r = radii();
        let k = line_space(&[0.0, 0.1, 0.2]);
        assert_eq!(hop_metrics(&k, &r).diameter, 1);
        // Ring of 10 with chord length just below the communication radius.
        let rad = 0.79 / (2.0 * (std::f64::consts::PI / 10.0).sin());
        let pts = (0..10)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 10.0;
                [rad * a.cos(), rad * a.sin()]
            })
            .collect();
        let ring = QuasiMetricSpace::new(PathLossMap::euclidean(pts, 2.0, 1.0).unwrap(), 2.0).unwrap();
        let hm = hop_metrics(&ring, &r);
        assert_eq!(hm.diameter, 5);
        assert!(hm.strongly_connected);
        // Asymmetric pair: 0 -> 1 only.
        let m = PathLossMap::from_fn(2, 1.0, |u, _| if u == 0 { 0.5 } else { 2.0 }).unwrap();
        let a = QuasiMetricSpace::new(m, 1.0).unwrap();
        let hm = hop_metrics(&a, &r);
        assert_eq!(hm.dist[0][1], Some(1));
        assert_eq!(hm.dist[1][0], None);
        assert!(!hm.strongly_connected);
    }
}
