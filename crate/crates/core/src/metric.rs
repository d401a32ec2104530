//! Path-loss instances, the derived quasi-metric, packings and instance generators.
//!
//! A [`PathLossMap`] is the physical ground truth: a strictly positive, possibly
//! asymmetric loss `f(u,v)` for every ordered pair plus a uniform transmit power.
//! [`QuasiMetricSpace`] fixes a metricity exponent `zeta` and works with
//! `d(u,v) = f(u,v)^(1/zeta)`. Nodes are addressed by dense index `0..n`; the
//! opaque identifiers used in files are kept alongside for I/O.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the metricity search.
pub const DEFAULT_ZETA_MAX: f64 = 16.0;
/// Absolute precision of the metricity binary search.
pub const METRICITY_PRECISION: f64 = 1e-6;
/// Slack accepted by validators on top of exact comparisons.
pub const VALIDATOR_SLACK: f64 = 1e-9;
/// In-balls up to this size get an exact maximum packing in the validator.
pub const EXACT_PACKING_LIMIT: usize = 40;

/// Planar coordinates backing a Euclidean instance; `f = dist^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    pub exponent: f64,
}

impl Embedding {
    fn loss(&self, u: usize, v: usize) -> f64 {
        euclid(self.points[u], self.points[v]).powf(self.exponent)
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Asymmetric positive path loss between every ordered pair of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLossMap {
    ids: Vec<u32>,
    loss: Vec<f64>,
    power: f64,
    embedding: Option<Embedding>,
}

impl PathLossMap {
    /// Builds a map over nodes `0..n` from a loss function evaluated on ordered pairs `u != v`.
    pub fn from_fn(n: usize, power: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::param("power", format!("must be positive, got {power}")));
        }
        let mut loss = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    let value = f(u, v);
                    check_loss(u, v, value)?;
                    loss[u * n + v] = value;
                }
            }
        }
        Ok(Self {
            ids: (0..n as u32).collect(),
            loss,
            power,
            embedding: None,
        })
    }

    /// Builds a map from explicit `(u, v, f)` triples; every ordered pair must be present.
    pub fn from_triples(ids: Vec<u32>, power: f64, triples: &[(u32, u32, f64)]) -> Result<Self> {
        let n = ids.len();
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("nodes", "ids must be strictly increasing"));
        }
        let mut loss = vec![f64::NAN; n * n];
        let index = |id: u32| ids.binary_search(&id).map_err(|_| Error::UnknownNode(id as usize));
        for &(a, b, f) in triples {
            let (u, v) = (index(a)?, index(b)?);
            if u == v {
                continue;
            }
            check_loss(u, v, f)?;
            loss[u * n + v] = f;
        }
        for u in 0..n {
            loss[u * n + u] = 0.0;
            for v in 0..n {
                if u != v && loss[u * n + v].is_nan() {
                    return Err(Error::param(
                        "losses",
                        format!("missing entry for ordered pair ({}, {})", ids[u], ids[v]),
                    ));
                }
            }
        }
        let mut map = Self::from_fn(0, power, |_, _| 1.0)?;
        map.ids = ids;
        map.loss = loss;
        Ok(map)
    }

    /// Euclidean instance with `f(u,v) = |p_u - p_v|^exponent`. Coincident points are rejected.
    pub fn euclidean(points: Vec<[f64; 2]>, exponent: f64, power: f64) -> Result<Self> {
        let embedding = Embedding { points, exponent };
        let n = embedding.points.len();
        let mut map = Self::from_fn(n, power, |u, v| embedding.loss(u, v))?;
        map.embedding = Some(embedding);
        Ok(map)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn set_power(&mut self, power: f64) -> Result<()> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::param("power", format!("must be positive, got {power}")));
        }
        self.power = power;
        Ok(())
    }

    pub fn embedding(&self) -> Option<&Embedding> {
        self.embedding.as_ref()
    }

    pub(crate) fn set_embedding(&mut self, embedding: Option<Embedding>) {
        self.embedding = embedding;
    }

    #[inline]
    pub fn loss(&self, u: usize, v: usize) -> f64 {
        self.loss[u * self.ids.len() + v]
    }

    pub fn set_loss(&mut self, u: usize, v: usize, f: f64) -> Result<()> {
        let n = self.n();
        if u >= n {
            return Err(Error::UnknownNode(u));
        }
        if v >= n {
            return Err(Error::UnknownNode(v));
        }
        if u == v {
            return Ok(());
        }
        check_loss(u, v, f)?;
        self.loss[u * n + v] = f;
        Ok(())
    }

    /// Moves an embedded node and recomputes its row and column of losses.
    pub fn relocate(&mut self, node: usize, point: [f64; 2]) -> Result<()> {
        let n = self.n();
        if node >= n {
            return Err(Error::UnknownNode(node));
        }
        let emb = self
            .embedding
            .as_mut()
            .ok_or_else(|| Error::param("relocate", "instance has no planar embedding"))?;
        if let Some(w) = (0..n).find(|&w| w != node && emb.points[w] == point) {
            return Err(Error::param(
                "relocate",
                format!("node {node} would coincide with node {w}"),
            ));
        }
        emb.points[node] = point;
        for w in 0..n {
            if w != node {
                self.loss[node * n + w] = emb.loss(node, w);
                self.loss[w * n + node] = emb.loss(w, node);
            }
        }
        Ok(())
    }

    /// All off-diagonal `(id_u, id_v, f)` triples in row-major order.
    pub fn triples(&self) -> Vec<(u32, u32, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1));
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    out.push((self.ids[u], self.ids[v], self.loss(u, v)));
                }
            }
        }
        out
    }
}

fn check_loss(u: usize, v: usize, f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "losses",
            format!("path loss f({u},{v}) = {f} must be positive and finite"),
        ))
    }
}

/// `f^(1/zeta)`, exact for the common exponents 1 and 2.
#[inline]
pub fn root(f: f64, zeta: f64) -> f64 {
    if zeta == 1.0 {
        f
    } else if zeta == 2.0 {
        f.sqrt()
    } else {
        f.powf(1.0 / zeta)
    }
}

/// `d^zeta`, exact for the common exponents 1 and 2.
#[inline]
pub fn power_of(d: f64, zeta: f64) -> f64 {
    if zeta == 1.0 {
        d
    } else if zeta == 2.0 {
        d * d
    } else {
        d.powf(zeta)
    }
}

/// Maximum clear-channel distance `R` and precision `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSet {
    #[serde(rename = "R")]
    pub r: f64,
    pub epsilon: f64,
}

impl RadiusSet {
    pub fn new(r: f64, epsilon: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::param("R", format!("must be positive, got {r}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::param("epsilon", format!("must lie in (0,1), got {epsilon}")));
        }
        Ok(Self { r, epsilon })
    }

    /// Communication radius `R_B = (1 - epsilon) R`.
    pub fn comm_radius(&self) -> f64 {
        (1.0 - self.epsilon) * self.r
    }

    pub fn with_precision(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.r, epsilon)
    }
}

/// Strict symmetric ball or strict in-ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallKind {
    Symmetric,
    In,
}

/// A path-loss map viewed through a metricity exponent, with bounded-independence parameters.
///
/// Nodes can be marked absent (churn); every set query skips absent nodes.
#[derive(Debug, Clone)]
pub struct QuasiMetricSpace {
    map: PathLossMap,
    zeta: f64,
    dist: Vec<f64>,
    present: Vec<bool>,
    pub r_min: f64,
    pub lambda: f64,
    pub indep_const: f64,
}

impl QuasiMetricSpace {
    pub fn new(map: PathLossMap, zeta: f64) -> Result<Self> {
        if !(zeta >= 1.0 && zeta.is_finite()) {
            return Err(Error::param("zeta", format!("must be >= 1, got {zeta}")));
        }
        let n = map.n();
        let mut dist = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    dist[u * n + v] = root(map.loss(u, v), zeta);
                }
            }
        }
        Ok(Self {
            map,
            zeta,
            dist,
            present: vec![true; n],
            r_min: 0.0,
            lambda: 1.0,
            indep_const: 1.0,
        })
    }

    pub fn with_independence(mut self, r_min: f64, lambda: f64, indep_const: f64) -> Result<Self> {
        if !(r_min >= 0.0 && r_min.is_finite()) {
            return Err(Error::param("r_min", format!("must be >= 0, got {r_min}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
        }
        if !(indep_const > 0.0 && indep_const.is_finite()) {
            return Err(Error::param("indep_const", format!("must be positive, got {indep_const}")));
        }
        self.r_min = r_min;
        self.lambda = lambda;
        self.indep_const = indep_const;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.map.n()
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn power(&self) -> f64 {
        self.map.power()
    }

    pub fn map(&self) -> &PathLossMap {
        &self.map
    }

    #[inline]
    pub fn d(&self, u: usize, v: usize) -> f64 {
        self.dist[u * self.map.n() + v]
    }

    #[inline]
    pub fn loss(&self, u: usize, v: usize) -> f64 {
        self.map.loss(u, v)
    }

    /// Received power `P / f(u,v)` of a transmission from `u` at `v`.
    #[inline]
    pub fn signal(&self, u: usize, v: usize) -> f64 {
        self.map.power() / self.map.loss(u, v)
    }

    pub fn check_node(&self, u: usize) -> Result<()> {
        if u < self.n() {
            Ok(())
        } else {
            Err(Error::UnknownNode(u))
        }
    }

    #[inline]
    pub fn is_present(&self, u: usize) -> bool {
        self.present[u]
    }

    pub fn set_present(&mut self, u: usize, present: bool) -> Result<()> {
        self.check_node(u)?;
        self.present[u] = present;
        Ok(())
    }

    pub fn present_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&u| self.present[u])
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn set_loss(&mut self, u: usize, v: usize, f: f64) -> Result<()> {
        self.map.set_loss(u, v, f)?;
        if u != v {
            let n = self.n();
            self.dist[u * n + v] = root(f, self.zeta);
        }
        Ok(())
    }

    pub fn relocate(&mut self, node: usize, point: [f64; 2]) -> Result<()> {
        self.map.relocate(node, point)?;
        let n = self.n();
        for w in 0..n {
            if w != node {
                self.dist[node * n + w] = root(self.map.loss(node, w), self.zeta);
                self.dist[w * n + node] = root(self.map.loss(w, node), self.zeta);
            }
        }
        Ok(())
    }

    /// Largest ratio `d(x,y) / d(y,x)` over present pairs (1 for a symmetric metric).
    pub fn symmetry_factor(&self) -> f64 {
        let mut worst: f64 = 1.0;
        for u in self.present_nodes() {
            for v in self.present_nodes() {
                if u < v {
                    let (a, b) = (self.d(u, v), self.d(v, u));
                    worst = worst.max(a / b).max(b / a);
                }
            }
        }
        worst
    }

    /// First present pair whose two directions differ by more than `rel_tol` (relative).
    pub fn asymmetric_pair(&self, rel_tol: f64) -> Option<(usize, usize)> {
        for u in self.present_nodes() {
            for v in self.present_nodes() {
                if u < v {
                    let (a, b) = (self.d(u, v), self.d(v, u));
                    if (a - b).abs() > rel_tol * a.max(b) {
                        return Some((u, v));
                    }
                }
            }
        }
        None
    }
}

/// `B(u,r) = {v : max(d(v,u), d(u,v)) < r}` or `D(u,r) = {v : d(v,u) < r}`, present nodes only.
pub fn ball(space: &QuasiMetricSpace, u: usize, r: f64, kind: BallKind) -> Result<Vec<usize>> {
    space.check_node(u)?;
    Ok(space
        .present_nodes()
        .filter(|&v| match kind {
            BallKind::Symmetric => space.d(v, u).max(space.d(u, v)) < r,
            BallKind::In => space.d(v, u) < r,
        })
        .collect())
}

/// Two packing centres conflict when they are closer than `2r` in either direction.
#[inline]
fn conflicts(space: &QuasiMetricSpace, a: usize, b: usize, r: f64) -> bool {
    space.d(a, b) < 2.0 * r || space.d(b, a) < 2.0 * r
}

fn sorted_region(space: &QuasiMetricSpace, region: &[usize]) -> Vec<usize> {
    let mut nodes: Vec<usize> = region.iter().copied().filter(|&v| v < space.n()).collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

/// Maximal `r`-packing of `region`, scanning nodes in ascending index order.
///
/// The result is maximal, hence (for symmetric metrics) a `2r`-cover of the region.
pub fn greedy_packing(space: &QuasiMetricSpace, region: &[usize], r: f64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for v in sorted_region(space, region) {
        if chosen.iter().all(|&c| !conflicts(space, c, v, r)) {
            chosen.push(v);
        }
    }
    chosen
}

/// Whether `set` is pairwise non-conflicting at radius `r`.
pub fn is_packing(space: &QuasiMetricSpace, set: &[usize], r: f64) -> bool {
    set.iter().enumerate().all(|(i, &a)| {
        set[i + 1..].iter().all(|&b| a != b && !conflicts(space, a, b, r))
    })
}

/// Maximum-cardinality `r`-packing of `region` (at most 64 nodes).
///
/// Branches on a minimum-degree vertex `v`: some maximum independent set contains
/// `v` or one of its conflict neighbours.
pub fn maximum_packing(space: &QuasiMetricSpace, region: &[usize], r: f64) -> Result<Vec<usize>> {
    let nodes = sorted_region(space, region);
    if nodes.len() > 64 {
        return Err(Error::param(
            "region",
            format!("exact packing supports at most 64 nodes, got {}", nodes.len()),
        ));
    }
    let k = nodes.len();
    let adj: Vec<u64> = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i && conflicts(space, nodes[i], nodes[j], r))
                .fold(0u64, |m, j| m | (1 << j))
        })
        .collect();
    let full = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let mut best = 0u64;
    let mut current = 0u64;
    mis_search(&adj, full, &mut current, &mut best);
    Ok((0..k).filter(|&i| best & (1 << i) != 0).map(|i| nodes[i]).collect())
}

fn mis_search(adj: &[u64], cand: u64, current: &mut u64, best: &mut u64) {
    if cand == 0 {
        if current.count_ones() > best.count_ones() {
            *best = *current;
        }
        return;
    }
    if current.count_ones() + cand.count_ones() <= best.count_ones() {
        return;
    }
    let mut pivot = cand.trailing_zeros() as usize;
    let mut pivot_deg = u32::MAX;
    let mut rest = cand;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let deg = (adj[v] & cand).count_ones();
        if deg < pivot_deg {
            pivot = v;
            pivot_deg = deg;
        }
    }
    let mut branches = (adj[pivot] & cand) | (1 << pivot);
    while branches != 0 {
        let w = branches.trailing_zeros() as usize;
        branches &= branches - 1;
        *current |= 1 << w;
        mis_search(adj, cand & !adj[w] & !(1 << w), current, best);
        *current &= !(1 << w);
    }
}

/// One `(node, q)` probe of the bounded-independence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceProbe {
    pub node: usize,
    pub q: f64,
    pub packing_size: usize,
    pub bound: f64,
    /// `true` when the packing size is the exact maximum, `false` for a greedy lower bound.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub pass: bool,
    /// Probe with the largest `packing_size / bound`.
    pub worst: Option<IndependenceProbe>,
    pub violations: Vec<IndependenceProbe>,
    pub probes: usize,
}

/// Checks that every in-ball `D(u, q r_min)` has an `r_min`-packing of size at most `C q^lambda`.
///
/// Small in-balls are packed exactly; larger ones use the greedy packing, whose size is a
/// lower bound on the maximum, so a greedy violation is always a real violation.
pub fn validate_bounded_independence(space: &QuasiMetricSpace, q_samples: &[f64]) -> IndependenceReport {
    let mut report = IndependenceReport {
        pass: true,
        worst: None,
        violations: Vec::new(),
        probes: 0,
    };
    let mut worst_ratio = f64::NEG_INFINITY;
    for &q in q_samples {
        let bound = space.indep_const * q.powf(space.lambda);
        for u in space.present_nodes() {
            let region = ball(space, u, q * space.r_min, BallKind::In).expect("present node");
            let exact = region.len() <= EXACT_PACKING_LIMIT;
            let packing_size = if exact {
                maximum_packing(space, &region, space.r_min).expect("small region").len()
            } else {
                greedy_packing(space, &region, space.r_min).len()
            };
            let probe = IndependenceProbe {
                node: u,
                q,
                packing_size,
                bound,
                exact,
            };
            report.probes += 1;
            let ratio = packing_size as f64 / bound;
            if ratio > worst_ratio {
                worst_ratio = ratio;
                report.worst = Some(probe.clone());
            }
            if packing_size as f64 > bound + VALIDATOR_SLACK {
                report.pass = false;
                report.violations.push(probe);
            }
        }
    }
    report
}

fn log_losses(map: &PathLossMap) -> Vec<f64> {
    let n = map.n();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            if u != v {
                out[u * n + v] = map.loss(u, v).ln();
            }
        }
    }
    out
}

fn violation_at(logs: &[f64], n: usize, zeta: f64, tol: f64) -> Option<(usize, usize, usize)> {
    let d: Vec<f64> = logs
        .iter()
        .enumerate()
        .map(|(i, &l)| if i / n == i % n { 0.0 } else { (l / zeta).exp() })
        .collect();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let duv = d[u * n + v];
            for w in 0..n {
                if w != u && w != v && duv > d[u * n + w] + d[w * n + v] + tol {
                    return Some((u, v, w));
                }
            }
        }
    }
    None
}

/// First triplet `(u, v, w)` violating `f(u,v)^(1/zeta) <= f(u,w)^(1/zeta) + f(w,v)^(1/zeta) + tol`.
pub fn metricity_violation(map: &PathLossMap, zeta: f64, tol: f64) -> Option<(usize, usize, usize)> {
    violation_at(&log_losses(map), map.n(), zeta, tol)
}

/// Smallest `zeta` in `[1, 16]` (to 1e-6) for which the quasi-metric inequality holds within `tol`.
pub fn compute_metricity(map: &PathLossMap, tol: f64) -> Result<f64> {
    compute_metricity_capped(map, tol, DEFAULT_ZETA_MAX)
}

pub fn compute_metricity_capped(map: &PathLossMap, tol: f64, zeta_max: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    if !(zeta_max >= 1.0) {
        return Err(Error::param("zeta_max", format!("must be >= 1, got {zeta_max}")));
    }
    let n = map.n();
    let logs = log_losses(map);
    if violation_at(&logs, n, 1.0, tol).is_none() {
        return Ok(1.0);
    }
    if let Some((u, v, w)) = violation_at(&logs, n, zeta_max, tol) {
        return Err(Error::NoFeasibleZeta { zeta_max, u, v, w });
    }
    let (mut lo, mut hi) = (1.0, zeta_max);
    while hi - lo > METRICITY_PRECISION {
        let mid = 0.5 * (lo + hi);
        if violation_at(&logs, n, mid, tol).is_none() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `n` points uniform in a `side x side` square, `f = dist^zeta`, power 1.
pub fn gen_euclidean_instance(n: usize, side: f64, zeta: f64, seed: u64) -> Result<PathLossMap> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if !(side > 0.0) {
        return Err(Error::param("side", format!("must be positive, got {side}")));
    }
    if !(zeta > 0.0) {
        return Err(Error::param("zeta", format!("must be positive, got {zeta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(n);
    while points.len() < n {
        let p = [rng.gen::<f64>() * side, rng.gen::<f64>() * side];
        if points.iter().all(|&q| q != p) {
            points.push(p);
        }
    }
    PathLossMap::euclidean(points, zeta, 1.0)
}

/// Closed-form distances of the NTD lower-bound construction (`zeta = 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundGeometry {
    /// `R_B = (1 - eps) R`.
    pub comm_radius: f64,
    /// `eps / (8 (1 - eps))`.
    pub delta: f64,
    /// `eps (1 + eps) / (1 - eps)`.
    pub mu: f64,
}

impl LowerBoundGeometry {
    pub fn new(epsilon: f64, r: f64) -> Result<Self> {
        let radii = RadiusSet::new(r, epsilon)?;
        let mu = epsilon * (1.0 + epsilon) / (1.0 - epsilon);
        if mu >= 1.0 {
            return Err(Error::InvalidEpsilon { epsilon, mu });
        }
        Ok(Self {
            comm_radius: radii.comm_radius(),
            delta: epsilon / (8.0 * (1.0 - epsilon)),
            mu,
        })
    }

    /// Distance between two cluster points `p_i, p_j` (`i, j <= n-2`).
    pub fn cluster(&self) -> f64 {
        self.delta * self.comm_radius
    }

    /// Distance from a cluster point to the relay `p_{n-1}`.
    pub fn to_relay(&self) -> f64 {
        self.mu * self.comm_radius
    }

    /// Distance from a cluster point to the far node `p_n`.
    pub fn to_far(&self) -> f64 {
        (self.mu + 1.0) * self.comm_radius
    }

    /// Distance between relay and far node.
    pub fn relay_to_far(&self) -> f64 {
        self.comm_radius
    }
}

/// The `n`-point instance: `n-2` cluster nodes, the relay at index `n-2`, the far node at `n-1`.
/// `f = d^2`, power 1. Identity-to-point assignment is left to the caller.
pub fn gen_lower_bound_instance(n: usize, epsilon: f64, r: f64) -> Result<PathLossMap> {
    if n < 4 {
        return Err(Error::param("n", format!("lower-bound instance needs n >= 4, got {n}")));
    }
    let g = LowerBoundGeometry::new(epsilon, r)?;
    let (relay, far) = (n - 2, n - 1);
    PathLossMap::from_fn(n, 1.0, |u, v| {
        let (a, b) = (u.min(v), u.max(v));
        let d = if b < relay {
            g.cluster()
        } else if b == relay {
            g.to_relay()
        } else if a == relay {
            g.relay_to_far()
        } else {
            debug_assert_eq!(b, far);
            g.to_far()
        };
        d * d
    })
}

/// Breadth-first hop distances from `source`; `None` for unreachable nodes.
pub fn bfs_hops(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].unwrap() + 1;
        for &w in &adjacency[u] {
            if dist[w].is_none() {
                dist[w] = Some(next);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Radii for hop-metric instances: `N(u, eps)` is exactly the hop-1 neighbourhood.
pub fn hop_radii(epsilon: f64) -> Result<RadiusSet> {
    RadiusSet::new(1.5 / (1.0 - epsilon), epsilon)
}

/// Bounded-independence graph as a quasi-metric: `d` = hop distance, `r_min = 1`,
/// `lambda` estimated from exact packings of hop balls, `f = d^zeta` with `zeta`
/// defaulting to `lambda + 1`.
pub fn gen_big_instance(adjacency: &[Vec<usize>], zeta: Option<f64>) -> Result<QuasiMetricSpace> {
    let n = adjacency.len();
    if n == 0 {
        return Err(Error::param("adjacency", "graph has no nodes"));
    }
    for (u, nbrs) in adjacency.iter().enumerate() {
        for &w in nbrs {
            if w >= n {
                return Err(Error::UnknownNode(w));
            }
            if !adjacency[w].contains(&u) {
                return Err(Error::param("adjacency", format!("edge {u}-{w} is not symmetric")));
            }
        }
    }
    let mut hops = vec![0usize; n * n];
    for s in 0..n {
        for (t, h) in bfs_hops(adjacency, s).into_iter().enumerate() {
            hops[s * n + t] = h.ok_or(Error::DisconnectedGraph(t))?;
        }
    }
    let diameter = hops.iter().copied().max().unwrap_or(0);
    let hop_map = PathLossMap::from_fn(n, 1.0, |u, v| hops[u * n + v] as f64)?;
    let probe = QuasiMetricSpace::new(hop_map, 1.0)?;
    let mut q = 1.0f64;
    let mut sizes = Vec::new();
    while q <= (2 * diameter.max(1)) as f64 {
        let m = (0..n)
            .map(|u| {
                let region = ball(&probe, u, q, BallKind::In).expect("valid node");
                if region.len() <= EXACT_PACKING_LIMIT {
                    maximum_packing(&probe, &region, 1.0).expect("small region").len()
                } else {
                    greedy_packing(&probe, &region, 1.0).len()
                }
            })
            .max()
            .unwrap_or(1);
        sizes.push((q, m as f64));
        q *= 2.0;
    }
    let base = sizes.first().map(|s| s.1).unwrap_or(1.0);
    let lambda = sizes
        .iter()
        .filter(|(q, _)| *q > 1.0)
        .map(|(q, m)| (m / base).ln() / q.ln())
        .fold(1.0f64, f64::max);
    let indep_const = sizes
        .iter()
        .map(|(q, m)| m / q.powf(lambda))
        .fold(1.0f64, f64::max);
    let zeta = zeta.unwrap_or(lambda + 1.0);
    let map = PathLossMap::from_fn(n, 1.0, |u, v| power_of(hops[u * n + v] as f64, zeta))?;
    QuasiMetricSpace::new(map, zeta)?.with_independence(1.0, lambda, indep_const)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_map(xs: &[f64], zeta: f64) -> PathLossMap {
        let pts = xs.iter().map(|&x| [x, 0.0]).collect();
        PathLossMap::euclidean(pts, zeta, 1.0).unwrap()
    }

    fn sym_space(n: usize, d: impl Fn(usize, usize) -> f64) -> QuasiMetricSpace {
        QuasiMetricSpace::new(PathLossMap::from_fn(n, 1.0, d).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn metricity_of_collinear_squares_is_two() {
        let z = compute_metricity(&line_map(&[0.0, 1.0, 2.0], 2.0), 1e-9).unwrap();
        assert!((z - 2.0).abs() <= 1e-6, "{z}");
    }

    #[test]
    fn metricity_trivial_cases() {
        let single = PathLossMap::from_fn(1, 1.0, |_, _| 1.0).unwrap();
        assert_eq!(compute_metricity(&single, 1e-9).unwrap(), 1.0);
        let uniform = PathLossMap::from_fn(3, 1.0, |_, _| 1.0).unwrap();
        assert_eq!(compute_metricity(&uniform, 1e-9).unwrap(), 1.0);
    }

    #[test]
    fn metricity_reports_infeasible_cap() {
        // f = dist^40 on a line needs zeta = 40 > 16.
        let err = compute_metricity(&line_map(&[0.0, 1.0, 2.0], 40.0), 1e-9).unwrap_err();
        assert!(matches!(err, Error::NoFeasibleZeta { .. }));
    }

    #[test]
    fn ball_definitions() {
        let s = sym_space(3, |_, _| 1.0);
        assert!(ball(&s, 0, 0.0, BallKind::Symmetric).unwrap().is_empty());
        assert_eq!(ball(&s, 0, 1.5, BallKind::Symmetric).unwrap(), vec![0, 1, 2]);

        // d(v,u) = 0.5, d(u,v) = 2 with u = 0, v = 1.
        let asym = sym_space(2, |a, _| if a == 1 { 0.5 } else { 2.0 });
        assert!(ball(&asym, 0, 1.0, BallKind::In).unwrap().contains(&1));
        assert!(!ball(&asym, 0, 1.0, BallKind::Symmetric).unwrap().contains(&1));
        assert!(matches!(ball(&asym, 9, 1.0, BallKind::In), Err(Error::UnknownNode(9))));
    }

    #[test]
    fn greedy_packing_examples() {
        let close = sym_space(4, |_, _| 0.5);
        assert_eq!(greedy_packing(&close, &[0, 1, 2, 3], 1.0).len(), 1);

        let spaced = QuasiMetricSpace::new(line_map(&[0.0, 2.0, 4.0, 6.0], 1.0), 1.0).unwrap();
        assert_eq!(greedy_packing(&spaced, &[3, 2, 1, 0], 1.0), vec![0, 1, 2, 3]);

        assert!(greedy_packing(&spaced, &[], 1.0).is_empty());
        assert!(greedy_packing(&spaced, &[17], 1.0).is_empty());
    }

    #[test]
    fn star_metric_independence_fails_only_with_many_leaves() {
        // Centre 0 at r_min from every leaf, leaves 2 r_min apart.
        let star = |leaves: usize| {
            sym_space(leaves + 1, |a, b| if a == 0 || b == 0 { 1.0 } else { 2.0 })
                .with_independence(1.0, 1.0, 1.0)
                .unwrap()
        };
        assert!(validate_bounded_independence(&star(2), &[2.0]).pass);
        let report = validate_bounded_independence(&star(5), &[2.0]);
        assert!(!report.pass);
        assert_eq!(report.worst.unwrap().packing_size, 5);
    }

    #[test]
    fn co_located_points_pack_to_one() {
        let s = sym_space(6, |_, _| 0.1).with_independence(1.0, 2.0, 1.0).unwrap();
        let r = validate_bounded_independence(&s, &[1.0]);
        assert!(r.pass);
        assert_eq!(r.worst.unwrap().packing_size, 1);
    }

    #[test]
    fn euclidean_generator_is_deterministic() {
        let a = gen_euclidean_instance(30, 5.0, 2.5, 7).unwrap();
        let b = gen_euclidean_instance(30, 5.0, 2.5, 7).unwrap();
        let c = gen_euclidean_instance(30, 5.0, 2.5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(gen_euclidean_instance(1, 5.0, 2.5, 7).unwrap().triples().is_empty());
    }

    #[test]
    fn lower_bound_distances_match_closed_forms() {
        let map = gen_lower_bound_instance(8, 0.2, 1.0).unwrap();
        let s = QuasiMetricSpace::new(map, 2.0).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(s.d(0, 1), 0.025));
        assert!(close(s.d(0, 6), 0.24));
        assert!(close(s.d(0, 7), 1.04));
        assert!(close(s.d(6, 7), 0.8));
        let g = LowerBoundGeometry::new(0.2, 1.0).unwrap();
        assert_eq!(s.d(0, 1), g.cluster());
        assert_eq!(s.d(3, 6), g.to_relay());
        assert_eq!(s.d(7, 2), g.to_far());
        assert_eq!(s.d(6, 7), g.relay_to_far());
    }

    #[test]
    fn lower_bound_rejects_large_epsilon() {
        assert!(matches!(
            gen_lower_bound_instance(8, 0.5, 1.0),
            Err(Error::InvalidEpsilon { .. })
        ));
        assert!(gen_lower_bound_instance(3, 0.2, 1.0).is_err());
    }

    #[test]
    fn big_instance_hop_distances() {
        let path: Vec<Vec<usize>> = (0..5)
            .map(|i: usize| [i.checked_sub(1), (i + 1 < 5).then_some(i + 1)].into_iter().flatten().collect())
            .collect();
        let s = gen_big_instance(&path, Some(3.0)).unwrap();
        assert!((s.d(0, 4) - 4.0).abs() < 1e-12);

        let k4: Vec<Vec<usize>> = (0..4).map(|i| (0..4).filter(|&j| j != i).collect()).collect();
        let s = gen_big_instance(&k4, None).unwrap();
        assert_eq!(s.d(1, 2), 1.0);
        assert_eq!(compute_metricity(s.map(), 1e-9).unwrap(), 1.0);

        let broken = vec![vec![1], vec![0], vec![]];
        assert!(matches!(gen_big_instance(&broken, None), Err(Error::DisconnectedGraph(2))));
    }

    #[test]
    fn relocation_updates_both_directions() {
        let mut s = QuasiMetricSpace::new(line_map(&[0.0, 1.0, 3.0], 2.0), 2.0).unwrap();
        s.relocate(2, [2.0, 0.0]).unwrap();
        assert!((s.d(2, 0) - 2.0).abs() < 1e-12);
        assert!((s.d(1, 2) - 1.0).abs() < 1e-12);
        assert!(s.relocate(2, [0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_loss_is_rejected() {
        let err = PathLossMap::from_triples(vec![1, 2], 1.0, &[(1, 2, 0.0), (2, 1, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidParam { name: "losses", .. }));
    }
}
