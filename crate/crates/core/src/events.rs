//! Target-set families, simulated worlds and the event times read off them.
//!
//! A [`World`] is one realization of the node process, materialized lazily:
//! truncated worlds generate Poisson nodes shell by shell outward from the
//! origin, first-entrance worlds generate only the nodes that ever touch a
//! centered ball. Either way each node's motion is a chain of keyed
//! [`EpochTrack`]s, so different target families can be evaluated on exactly
//! the same randomness.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{ensure, Error, Result};
use crate::geom::{ball_volume, Point, Shape};
use crate::paths::{EpochTrack, Epochs, Envelope, GridTime, NodePath, Query, QueryStats, ResidualPolicy, Target};
use crate::pointprocess::{poisson_count, uniform_direction, Region};
use crate::rng::{combine, SlotRng, Stream, StreamKey};

const SHELL_TAG: u64 = 0x5348_454c_4c00;
const INIT_TAG: u64 = 0x494e_4954_0000;
const ENTRANT_TAG: u64 = 0x454e_5452_0000;

/// Piecewise-linear target motion, constant before the first and after the
/// last waypoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTrajectory {
    pub waypoints: Vec<(f64, Point)>,
    #[serde(skip)]
    speed: f64,
}

impl TargetTrajectory {
    pub fn new(waypoints: Vec<(f64, Point)>) -> Result<TargetTrajectory> {
        ensure!(!waypoints.is_empty(), Domain, "trajectory needs at least one waypoint");
        ensure!(waypoints.iter().all(|(t, p)| t.is_finite() && p.is_finite()), Domain, "trajectory must be finite (bounded)");
        ensure!(waypoints.windows(2).all(|w| w[1].0 > w[0].0), Domain, "waypoint times must be strictly increasing");
        let speed = waypoints.windows(2).map(|w| w[1].1.dist(&w[0].1) / (w[1].0 - w[0].0)).fold(0.0, f64::max);
        Ok(TargetTrajectory { waypoints, speed })
    }

    pub fn stay_put() -> TargetTrajectory {
        TargetTrajectory { waypoints: vec![(0.0, Point::ZERO)], speed: 0.0 }
    }

    /// `g(s) = s v` for `s <= horizon`.
    pub fn linear(velocity: Point, horizon: f64) -> TargetTrajectory {
        TargetTrajectory::new(vec![(0.0, Point::ZERO), (horizon, velocity * horizon)]).expect("valid linear trajectory")
    }

    /// Circle of the given radius through the origin's neighbourhood: starts at
    /// `(radius, 0)` and turns at angular speed `omega`, sampled every `dt`.
    pub fn circle(radius: f64, omega: f64, horizon: f64, dt: f64) -> TargetTrajectory {
        let n = (horizon / dt).ceil() as usize;
        let pts = (0..=n)
            .map(|i| {
                let t = horizon * i as f64 / n as f64;
                (t, Point::from_slice(&[radius * (omega * t).cos(), radius * (omega * t).sin()]))
            })
            .collect();
        TargetTrajectory::new(pts).expect("valid circle")
    }

    pub fn at(&self, t: f64) -> Point {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return w[0].1;
        }
        let last = w.len() - 1;
        if t >= w[last].0 {
            return w[last].1;
        }
        let i = w.partition_point(|(s, _)| *s <= t);
        let (t0, p0) = w[i - 1];
        let (t1, p1) = w[i];
        p0.lerp(&p1, (t - t0) / (t1 - t0))
    }

    pub fn sup_norm(&self) -> f64 {
        self.waypoints.iter().map(|(_, p)| p.norm()).fold(0.0, f64::max)
    }

    /// Largest distance between `g` and its chord over `[ta, tb]`.
    pub fn chord_slack(&self, ta: f64, tb: f64) -> f64 {
        let w = &self.waypoints;
        let i0 = w.partition_point(|(s, _)| *s <= ta);
        let i1 = w.partition_point(|(s, _)| *s < tb);
        if i1 <= i0 {
            return 0.0;
        }
        if i1 - i0 > 8 {
            return self.speed * (tb - ta);
        }
        let (ga, gb) = (self.at(ta), self.at(tb));
        w[i0..i1].iter().map(|(s, p)| p.dist(&ga.lerp(&gb, (s - ta) / (tb - ta)))).fold(0.0, f64::max)
    }
}

/// Time-indexed family of closed target sets `D_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SetFamily {
    StaticBall { center: Point, radius: f64 },
    /// `D_s = B(g(s), radius)`.
    MovingBall { trajectory: TargetTrajectory, radius: f64 },
    /// Piecewise-constant: `pieces[k].1` is active on `[pieces[k].0, pieces[k+1].0)`.
    General { pieces: Vec<(f64, Shape)> },
}

impl SetFamily {
    pub fn centered_ball(radius: f64) -> SetFamily {
        SetFamily::StaticBall { center: Point::ZERO, radius }
    }

    pub fn moving(trajectory: TargetTrajectory, radius: f64) -> SetFamily {
        SetFamily::MovingBall { trajectory, radius }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            SetFamily::StaticBall { center, radius } => ensure!(Shape::ball(*center, *radius).is_valid(d), Domain, "invalid static ball"),
            SetFamily::MovingBall { trajectory, radius } => {
                ensure!(*radius > 0.0 && radius.is_finite(), Domain, "radius must be positive");
                ensure!(trajectory.sup_norm().is_finite(), Domain, "trajectory must be bounded");
            }
            SetFamily::General { pieces } => {
                ensure!(!pieces.is_empty() && pieces[0].0 <= 0.0, Domain, "general family must start at or before time 0");
                ensure!(pieces.windows(2).all(|w| w[1].0 > w[0].0), Domain, "piece times must be increasing");
                ensure!(pieces.iter().all(|(_, s)| s.is_valid(d)), Domain, "invalid shape in family");
            }
        }
        Ok(())
    }

    /// Radius `L` with every set inside `B(0, L)`.
    pub fn extent(&self, d: usize) -> f64 {
        match self {
            SetFamily::StaticBall { center, radius } => center.norm() + radius,
            SetFamily::MovingBall { trajectory, radius } => trajectory.sup_norm() + radius,
            SetFamily::General { pieces } => pieces.iter().map(|(_, s)| s.extent(d)).fold(0.0, f64::max),
        }
    }

    pub fn volume_at(&self, t: f64, d: usize) -> f64 {
        match self {
            SetFamily::StaticBall { radius, .. } | SetFamily::MovingBall { radius, .. } => ball_volume(d, *radius),
            SetFamily::General { pieces } => pieces[self.piece_index(t)].1.volume(d),
        }
    }

    /// Times at which a general family switches shape.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            SetFamily::General { pieces } => pieces.iter().map(|p| p.0).filter(|t| *t > 0.0).collect(),
            _ => Vec::new(),
        }
    }

    /// Radius if the family is a ball fixed at the origin.
    pub fn centered_radius(&self) -> Option<f64> {
        match self {
            SetFamily::StaticBall { center, radius } if center.norm() == 0.0 => Some(*radius),
            SetFamily::MovingBall { trajectory, radius } if trajectory.sup_norm() == 0.0 => Some(*radius),
            _ => None,
        }
    }

    fn piece_index(&self, t: f64) -> usize {
        match self {
            SetFamily::General { pieces } => pieces.partition_point(|(s, _)| *s <= t).saturating_sub(1),
            _ => 0,
        }
    }
}

impl Target for SetFamily {
    fn sdf(&self, t: f64, x: &Point) -> f64 {
        match self {
            SetFamily::StaticBall { center, radius } => x.dist(center) - radius,
            SetFamily::MovingBall { trajectory, radius } => x.dist(&trajectory.at(t)) - radius,
            SetFamily::General { pieces } => pieces[self.piece_index(t)].1.sdf(x),
        }
    }

    fn chord_bounds(&self, ta: f64, tb: f64, xa: &Point, xb: &Point) -> (f64, f64) {
        match self {
            SetFamily::StaticBall { center, radius } => Shape::ball(*center, *radius).chord_sdf_bounds(xa, xb),
            SetFamily::MovingBall { trajectory, radius } => {
                let ya = *xa - trajectory.at(ta);
                let yb = *xb - trajectory.at(tb);
                let slack = trajectory.chord_slack(ta, tb);
                let (lo, hi) = Shape::centered_ball(*radius).chord_sdf_bounds(&ya, &yb);
                (lo - slack, hi + slack)
            }
            SetFamily::General { pieces } => {
                let (i0, i1) = (self.piece_index(ta), self.piece_index(tb));
                let mut out = (f64::INFINITY, f64::NEG_INFINITY);
                for (_, s) in &pieces[i0..=i1] {
                    let (lo, hi) = s.chord_sdf_bounds(xa, xb);
                    out = (out.0.min(lo), out.1.max(hi));
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeVerdict {
    Definite,
    /// The event happened somewhere in `(lo, hi]`.
    Uncertain { lo: f64, hi: f64 },
}

/// An event time, or a marker that the event did not occur before the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoredTime {
    pub value: Option<f64>,
    pub verdict: TimeVerdict,
}

impl CensoredTime {
    pub fn censored() -> CensoredTime {
        CensoredTime { value: None, verdict: TimeVerdict::Definite }
    }

    pub fn at(t: f64) -> CensoredTime {
        CensoredTime { value: Some(t), verdict: TimeVerdict::Definite }
    }

    pub fn within(lo: f64, hi: f64) -> CensoredTime {
        if lo == hi {
            CensoredTime::at(hi)
        } else {
            CensoredTime { value: Some(hi), verdict: TimeVerdict::Uncertain { lo, hi } }
        }
    }

    pub fn is_censored(&self) -> bool {
        self.value.is_none()
    }

    /// Whether the event time exceeds `t`.
    pub fn exceeds(&self, t: f64) -> bool {
        self.value.is_none_or(|v| v > t)
    }
}

/// Settings shared by the queries of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub beta: f64,
    pub policy: ResidualPolicy,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { beta: Envelope::DEFAULT_BETA, policy: ResidualPolicy::Bridge }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorldKind {
    /// Stationary Poisson nodes in `B(0, radius)`, generated in shells.
    Truncated { radius: f64, shell_width: f64 },
    /// Nodes inside `B(0, ball)` at time 0 plus nodes entering it later.
    FirstEntrance { ball: f64 },
}

/// Static description of a family of worlds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub d: usize,
    pub lambda: f64,
    pub epochs: Epochs,
    pub kind: WorldKind,
    /// Per-node probability budget for discarding a node as out of reach.
    pub reach_beta: f64,
    reach_z: f64,
    shells: Vec<(f64, f64)>,
}

impl WorldSpec {
    pub fn truncated(d: usize, lambda: f64, epochs: Epochs, radius: f64, shell_width: f64) -> WorldSpec {
        let mut shells = Vec::new();
        let mut a = 0.0;
        while a < radius {
            let b = (a + shell_width).min(radius);
            shells.push((a, b));
            a = b;
        }
        Self::build(d, lambda, epochs, WorldKind::Truncated { radius, shell_width }, shells)
    }

    pub fn first_entrance(d: usize, lambda: f64, epochs: Epochs, ball: f64) -> Result<WorldSpec> {
        ensure!(d == 1 || d == 3, Domain, "first-entrance worlds are available for d = 1 and d = 3, got d = {d}");
        Ok(Self::build(d, lambda, epochs, WorldKind::FirstEntrance { ball }, Vec::new()))
    }

    fn build(d: usize, lambda: f64, epochs: Epochs, kind: WorldKind, shells: Vec<(f64, f64)>) -> WorldSpec {
        let reach_beta = 1e-12;
        let reach_z = std::f64::consts::SQRT_2 * erfc_inv(reach_beta / (2.0 * d as f64));
        WorldSpec { d, lambda, epochs, kind, reach_beta, reach_z, shells }
    }

    /// Distance a node travels within time `m` except with probability `reach_beta`.
    pub fn reach(&self, m: f64) -> f64 {
        (self.d as f64 * m.max(0.0)).sqrt() * self.reach_z
    }

    pub fn is_first_entrance(&self) -> bool {
        matches!(self.kind, WorldKind::FirstEntrance { .. })
    }

    /// Expected number of first entrances into `B(0, r)` during `[0, s]` by
    /// nodes that start outside it.
    pub fn entrance_measure(d: usize, r: f64, s: f64) -> f64 {
        match d {
            1 => (8.0 * s / std::f64::consts::PI).sqrt(),
            3 => 2.0 * std::f64::consts::PI * r * s + 4.0 * r * r * (2.0 * std::f64::consts::PI * s).sqrt(),
            _ => unreachable!("first-entrance measure only for d = 1, 3"),
        }
    }
}

/// One node of a world.
#[derive(Clone, Debug)]
pub struct Node {
    pub id: u64,
    pub birth: GridTime,
    pub birth_pos: Point,
    pub rho: f64,
    tracks: Vec<EpochTrack>,
    dead_from: Option<usize>,
}

/// Identity and position of a node at an epoch boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: u64,
    pub pos: Point,
}

/// One realization, materialized on demand.
pub struct World<'a> {
    pub spec: &'a WorldSpec,
    key: u64,
    epoch_keys: Vec<u64>,
    pub nodes: Vec<Node>,
    next_shell: usize,
    entrants_done: usize,
}

impl<'a> World<'a> {
    /// Fresh world with key `key` (usually the per-sample stream word).
    pub fn new(spec: &'a WorldSpec, key: u64) -> World<'a> {
        let epoch_keys = (0..spec.epochs.len()).map(|e| combine(key, e as u64)).collect();
        let mut w = World { spec, key, epoch_keys, nodes: Vec::new(), next_shell: 0, entrants_done: 0 };
        if let WorldKind::FirstEntrance { ball } = spec.kind {
            let mut s = Stream::from_key(StreamKey { master: key, experiment: INIT_TAG, index: 0, tag: 0 });
            let n = poisson_count(spec.lambda * ball_volume(spec.d, ball), &mut s);
            let region = Region::centered_ball(ball);
            for i in 0..n {
                let p = region.sample_uniform(spec.d, &mut s);
                w.push_node(i, GridTime { epoch: 0, k: 0 }, p);
            }
        }
        w
    }

    /// World continuing from `states` at the start of epoch `start_epoch`, with
    /// fresh randomness `keys[e]` for epochs `e >= start_epoch`.
    pub fn restart(spec: &'a WorldSpec, start_epoch: usize, key: u64, states: &[NodeState]) -> World<'a> {
        let epoch_keys = (0..spec.epochs.len()).map(|e| combine(key, e as u64)).collect();
        let mut w = World { spec, key, epoch_keys, nodes: Vec::with_capacity(states.len()), next_shell: usize::MAX, entrants_done: start_epoch };
        for s in states {
            w.push_node(s.id, GridTime { epoch: start_epoch, k: 0 }, s.pos);
        }
        w
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    fn push_node(&mut self, id: u64, birth: GridTime, pos: Point) {
        self.nodes.push(Node { id, birth, birth_pos: pos, rho: pos.norm(), tracks: Vec::new(), dead_from: None });
    }

    /// Materialize truncated-world shells until every node within `radius`
    /// of the origin exists. Returns the number of nodes.
    pub fn ensure_radius(&mut self, radius: f64) -> usize {
        while self.next_shell < self.spec.shells.len() && self.spec.shells[self.next_shell].0 <= radius {
            let k = self.next_shell;
            let (a, b) = self.spec.shells[k];
            let mut s = Stream::from_key(StreamKey { master: self.key, experiment: SHELL_TAG, index: k as u64, tag: 0 });
            let region = Region::Shell { inner: a, outer: b };
            let n = poisson_count(self.spec.lambda * region.volume(self.spec.d), &mut s);
            for i in 0..n {
                let p = region.sample_uniform(self.spec.d, &mut s);
                self.push_node(((k as u64 + 1) << 32) | i, GridTime { epoch: 0, k: 0 }, p);
            }
            self.next_shell += 1;
        }
        self.nodes.len()
    }

    /// Materialize the next shell if it starts within `radius`.
    fn next_shell_within(&mut self, radius: f64) -> bool {
        match self.spec.shells.get(self.next_shell) {
            Some(&(a, _)) if a <= radius => {
                self.ensure_radius(a);
                true
            }
            _ => false,
        }
    }

    /// Materialize all shells.
    pub fn materialize_all(&mut self) -> usize {
        self.ensure_radius(f64::INFINITY)
    }

    /// Materialize first-entrance nodes born up to the end of `epoch`.
    pub fn ensure_entrants(&mut self, epoch: usize) {
        let WorldKind::FirstEntrance { ball } = self.spec.kind else { return };
        let d = self.spec.d;
        while self.entrants_done <= epoch && self.entrants_done < self.spec.epochs.len() {
            let e = self.entrants_done;
            let ep = self.spec.epochs.list[e];
            let (a, b) = (ep.start, ep.end());
            let mut s = Stream::from_key(StreamKey { master: self.epoch_keys[e], experiment: ENTRANT_TAG, index: e as u64, tag: 0 });
            let lambda = self.spec.lambda;
            let mut times = Vec::new();
            // the sqrt(s) part of the entrance measure
            let c_sqrt = match d {
                1 => (8.0 / std::f64::consts::PI).sqrt(),
                _ => 4.0 * ball * ball * (2.0 * std::f64::consts::PI).sqrt(),
            };
            let n = poisson_count(lambda * c_sqrt * (b.sqrt() - a.sqrt()), &mut s);
            for _ in 0..n {
                let u = a.sqrt() + s.uniform() * (b.sqrt() - a.sqrt());
                times.push(u * u);
            }
            if d == 3 {
                let n = poisson_count(lambda * 2.0 * std::f64::consts::PI * ball * (b - a), &mut s);
                for _ in 0..n {
                    times.push(a + s.uniform() * (b - a));
                }
            }
            for (i, t) in times.into_iter().enumerate() {
                let k = ep.nearest_index(t);
                let p = uniform_direction(d, &mut s) * ball;
                self.push_node(((e as u64 + 1) << 32) | i as u64, GridTime { epoch: e, k }, p);
            }
            self.entrants_done += 1;
        }
    }

    /// Track of node `i` over `epoch`, or `None` if the node is not alive then
    /// (not yet born, or provably unable to return before the horizon).
    pub fn track(&mut self, i: usize, epoch: usize) -> Option<EpochTrack> {
        let spec = self.spec;
        let node = &mut self.nodes[i];
        if epoch < node.birth.epoch || node.dead_from.is_some_and(|e| epoch >= e) {
            return None;
        }
        let idx = epoch - node.birth.epoch;
        while node.tracks.len() <= idx {
            let e = node.birth.epoch + node.tracks.len();
            let ep = spec.epochs.list[e];
            let (base, anchor) = match node.tracks.last() {
                None => (node.birth_pos, node.birth.k),
                Some(prev) => (prev.end_pos(), 0),
            };
            if let WorldKind::FirstEntrance { ball } = spec.kind {
                if node.tracks.last().is_some() && base.norm() - ball > spec.reach(spec.epochs.horizon() - ep.start) {
                    node.dead_from = Some(e);
                    return None;
                }
            }
            let key = EpochTrack::key_for(self.epoch_keys[e], node.id);
            node.tracks.push(EpochTrack::new(key, ep, spec.d, base, anchor));
        }
        Some(node.tracks[idx])
    }

    /// Indices of nodes that may lie within `extent` of the origin at some
    /// time up to `t`.
    fn candidates(&mut self, t: f64, epoch: usize, extent: f64) -> usize {
        match self.spec.kind {
            WorldKind::Truncated { .. } => self.ensure_radius(extent + self.spec.reach(t)),
            WorldKind::FirstEntrance { .. } => {
                self.ensure_entrants(epoch);
                self.nodes.len()
            }
        }
    }

    fn may_reach(&self, i: usize, t: f64, extent: f64) -> bool {
        match self.spec.kind {
            WorldKind::Truncated { .. } => self.nodes[i].rho - extent <= self.spec.reach(t),
            WorldKind::FirstEntrance { .. } => true,
        }
    }

    /// State of every live node at the start of epoch `epoch`.
    pub fn states_at(&mut self, epoch: usize) -> Vec<NodeState> {
        assert!(epoch >= 1);
        self.ensure_entrants(epoch - 1);
        let mut out = Vec::new();
        for i in 0..self.nodes.len() {
            if let Some(tr) = self.track(i, epoch - 1) {
                let pos = tr.end_pos();
                let far = match self.spec.kind {
                    WorldKind::FirstEntrance { ball } => pos.norm() - ball > self.spec.reach(self.spec.epochs.horizon() - self.spec.epochs.list[epoch - 1].end()),
                    _ => false,
                };
                if !far {
                    out.push(NodeState { id: self.nodes[i].id, pos });
                }
            }
        }
        out
    }

    /// First exit of node `i` after `c`, or `None` if it stays inside through `cap`.
    fn exit_from<T: Target + ?Sized>(&mut self, q: &Query<T>, i: usize, c: GridTime, cap: GridTime) -> Option<GridTime> {
        let ep = &self.spec.epochs;
        let (mut e, mut k) = (c.epoch, c.k);
        loop {
            let Some(tr) = self.track(i, e) else { return Some(c) };
            let kb = if e == cap.epoch { cap.k } else { ep.list[e].steps() };
            if let Some(x) = tr.first_exit(q, k, kb) {
                return Some(ep.canon(GridTime { epoch: e, k: x }));
            }
            if e >= cap.epoch {
                return None;
            }
            e += 1;
            k = 0;
        }
    }

    /// First fine-grid point at or after `c` (within its epoch) where node `i`
    /// may be inside; every earlier knot of the epoch is outside.
    fn next_possible_entry<T: Target + ?Sized>(&mut self, q: &Query<T>, i: usize, c: GridTime) -> GridTime {
        let ep = &self.spec.epochs;
        let Some(tr) = self.track(i, c.epoch) else { return GridTime { epoch: usize::MAX, k: 0 } };
        let steps = ep.list[c.epoch].steps();
        match tr.first_entry(q, c.k, steps) {
            Some(h) => ep.canon(GridTime { epoch: c.epoch, k: h.hi }),
            None => ep.canon(GridTime { epoch: c.epoch, k: steps }),
        }
    }

    /// Earliest entry of node `i` strictly before `best`, searched epoch by epoch.
    fn entry_before<T: Target + ?Sized>(&mut self, q: &Query<T>, i: usize, best: GridTime) -> Option<(GridTime, GridTime)> {
        let ep = &self.spec.epochs;
        let start = self.nodes[i].birth;
        for e in start.epoch..=best.epoch.min(ep.len() - 1) {
            let Some(tr) = self.track(i, e) else { return None };
            let kb = if e == best.epoch { best.k } else { ep.list[e].steps() };
            if let Some(h) = tr.first_entry(q, 0, kb) {
                let hi = ep.canon(GridTime { epoch: e, k: h.hi });
                if hi < best || (h.lo == h.hi && hi <= best) {
                    return Some((GridTime { epoch: e, k: h.lo }, hi));
                }
                return None;
            }
        }
        None
    }
}

impl World<'_> {
    /// Whether node `i` enters the family at or before `cap`.
    pub fn node_enters(&mut self, i: usize, family: &SetFamily, cap: GridTime, res: &Resolution, stats: &QueryStats) -> bool {
        let q = Query::new(family, Envelope::new(self.spec.d, res.beta), res.policy, stats);
        self.entry_before(&q, i, cap).is_some()
    }
}

/// First time some node enters the family, searched up to `cap`.
///
/// Nodes are visited from the origin outward; once an entry at time `m` is
/// known, nodes born farther than the reach within `m` are skipped.
pub fn detection_time(world: &mut World, family: &SetFamily, cap: GridTime, res: &Resolution, stats: &QueryStats) -> CensoredTime {
    assert!(!world.spec.is_first_entrance(), "detection is evaluated on truncated worlds");
    let q = Query::new(family, Envelope::new(world.spec.d, res.beta), res.policy, stats);
    let extent = family.extent(world.spec.d);
    let ep = world.spec.epochs.clone();
    let mut best = cap;
    let mut found: Option<(GridTime, GridTime)> = None;
    let mut i = 0;
    loop {
        if i >= world.nodes.len() && !world.next_shell_within(extent + world.spec.reach(ep.time(best))) {
            break;
        }
        if i >= world.nodes.len() {
            continue;
        }
        if world.may_reach(i, ep.time(best), extent) {
            if let Some((lo, hi)) = world.entry_before(&q, i, best) {
                best = hi;
                found = Some((lo, hi));
                if hi == (GridTime { epoch: 0, k: 0 }) {
                    return CensoredTime::at(0.0);
                }
            }
        }
        i += 1;
    }
    match found {
        None => CensoredTime::censored(),
        Some((lo, hi)) => CensoredTime::within(ep.time(lo), ep.time(hi)),
    }
}

/// First time at or after `start` at which no node is in the family, searched
/// up to `cap`; censored if the target stays covered throughout.
pub fn isolation_time(world: &mut World, family: &SetFamily, start: GridTime, cap: GridTime, res: &Resolution, stats: &QueryStats) -> CensoredTime {
    if let WorldKind::FirstEntrance { ball } = world.spec.kind {
        assert_eq!(family.centered_radius(), Some(ball), "first-entrance worlds only carry the centered ball");
    }
    let q = Query::new(family, Envelope::new(world.spec.d, res.beta), res.policy, stats);
    let extent = family.extent(world.spec.d);
    let ep = world.spec.epochs.clone();
    let never = GridTime { epoch: usize::MAX, k: 0 };
    let mut c = ep.canon(start);
    let mut exiter: Option<usize> = None;
    let mut next_entry: Vec<GridTime> = Vec::new();
    let mut inside = Vec::new();
    loop {
        let tc = ep.time(c);
        let n = world.candidates(tc, c.epoch, extent);
        next_entry.resize(n, GridTime { epoch: 0, k: 0 });
        inside.clear();
        for i in 0..n {
            if next_entry[i] > c {
                continue;
            }
            if !world.may_reach(i, tc, extent) {
                // truncated nodes are ordered by shell, but not within one
                continue;
            }
            match world.track(i, c.epoch) {
                None => {
                    if world.nodes[i].birth > c {
                        next_entry[i] = world.nodes[i].birth;
                    } else {
                        next_entry[i] = never;
                    }
                }
                Some(tr) => {
                    if tr.inside_at(&q, c.k) {
                        inside.push(i);
                    } else {
                        next_entry[i] = world.next_possible_entry(&q, i, c);
                    }
                }
            }
        }
        let mut isolated = inside.iter().all(|&i| Some(i) == exiter);
        if let (false, Some(a)) = (isolated, exiter) {
            // every other inside node was outside at the previous knot, so the
            // exit and the entries share one fine step; order them at random
            let p = ep.prev_knot(c);
            let mut fresh = 0usize;
            let mut all_fresh = true;
            for &i in inside.iter().filter(|&&i| i != a) {
                fresh += 1;
                if world.track(i, p.epoch).is_some_and(|tr| tr.inside_at(&q, p.k)) {
                    all_fresh = false;
                    break;
                }
            }
            if all_fresh {
                let u = SlotRng::aux(world.key(), combine(c.epoch as u64, c.k)).uniform();
                isolated = u * (fresh as f64 + 1.0) < 1.0;
            }
        }
        if isolated {
            return match exiter {
                None => CensoredTime::at(tc),
                Some(_) => CensoredTime::within(ep.time(ep.prev_knot(c)), tc),
            };
        }
        if c >= cap {
            return CensoredTime::censored();
        }
        let mut best = c;
        let mut who = None;
        for &i in &inside {
            match world.exit_from(&q, i, c, cap) {
                None => return CensoredTime::censored(),
                Some(x) if x > best => {
                    best = x;
                    who = Some(i);
                }
                Some(_) => {}
            }
        }
        c = best;
        exiter = who;
    }
}

/// Time node `i` spends in the family during `[a, b]` (grid times), with the
/// interpolation error bound.
pub fn occupation_time(world: &mut World, i: usize, family: &SetFamily, a: GridTime, b: GridTime, res: &Resolution, stats: &QueryStats) -> (f64, f64) {
    let q = Query::new(family, Envelope::new(world.spec.d, res.beta), res.policy, stats);
    let mut acc = (0.0, 0.0);
    for e in a.epoch..=b.epoch.min(world.spec.epochs.len() - 1) {
        let Some(tr) = world.track(i, e) else { continue };
        let ka = if e == a.epoch { a.k } else { 0 };
        let kb = if e == b.epoch { b.k } else { world.spec.epochs.list[e].steps() };
        let (v, err) = tr.occupation(&q, ka, kb);
        acc.0 += v;
        acc.1 += err;
    }
    acc
}

/// Summed occupation of all nodes that can reach the family during `[a, b]`.
pub fn total_occupation(world: &mut World, family: &SetFamily, a: GridTime, b: GridTime, res: &Resolution, stats: &QueryStats) -> (f64, f64) {
    let extent = family.extent(world.spec.d);
    let tb = world.spec.epochs.time(b);
    let n = world.candidates(tb, b.epoch, extent);
    let mut acc = (0.0, 0.0);
    for i in 0..n {
        if world.may_reach(i, tb, extent) {
            let (v, e) = occupation_time(world, i, family, a, b, res, stats);
            acc.0 += v;
            acc.1 += e;
        }
    }
    acc
}

/// Whether at every listed time some node lies in its own set for that time.
/// `sets[i][m]` is the set of node `i` at `times[m]`; paths must have knots at
/// every listed time.
pub fn discrete_coverage(paths: &[NodePath], sets: &[Vec<Shape>], times: &[f64]) -> Result<bool> {
    ensure!(paths.len() == sets.len(), Domain, "{} paths but {} set lists", paths.len(), sets.len());
    ensure!(times.windows(2).all(|w| w[1] >= w[0]), Domain, "times must be sorted");
    for (m, t) in times.iter().enumerate() {
        let mut covered = false;
        for (p, s) in paths.iter().zip(sets) {
            let x = p.position_at(*t).ok_or_else(|| Error::Domain(format!("path {} has no knot at {t}", p.node_id)))?;
            if s[m].contains(&x) {
                covered = true;
                break;
            }
        }
        if !covered {
            return Ok(false);
        }
    }
    Ok(true)
}
