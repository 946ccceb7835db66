//! Survival curves, sausage volumes and multilevel splitting.
//!
//! Sample `i` of an experiment always draws from `seed_schedule(master,
//! experiment, i)`, and every estimator keeps per-sample outcomes in index
//! order before reducing them. Thread counts and shard boundaries therefore
//! never change a count.

use std::io::{Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;

use crate::error::{ensure, Error, Result};
use crate::events::{detection_time, isolation_time, CensoredTime, Resolution, SetFamily, World, WorldSpec};
use crate::geom::{ball_volume, unit_ball_volume, Point, MAX_DIM};
use crate::model::{validate_config, SimConfig};
use crate::paths::{EpochTrack, Epochs, Envelope, GridTime, Query, QueryStats};
use crate::pointprocess::{sup_tail_bound, uniform_direction};
use crate::rng::{combine, seed_schedule, Stream, StreamKey};
use crate::stats::Welford;

/// Version of the CSV layout written by [`SurvivalCurve::write_csv`].
pub const CSV_SCHEMA: &str = "survival-v1";
pub const CSV_HEADER: [&str; 6] = ["t", "estimate", "ci_lo", "ci_hi", "n", "method"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Direct,
    Splitting,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Splitting => "splitting",
        }
    }
}

/// A probability or mean estimate with its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub ci: (f64, f64),
    pub method: Method,
    /// Success count for binomial estimates; enables exact pooling.
    pub successes: Option<u64>,
}

impl Estimate {
    /// Binomial frequency with a Clopper-Pearson interval.
    pub fn from_counts(successes: u64, n: u64, level: f64) -> Result<Estimate> {
        let ci = binomial_ci(successes, n, level)?;
        let p = successes as f64 / n as f64;
        Ok(Estimate { value: p, stderr: (p * (1.0 - p) / n as f64).sqrt(), n, ci, method: Method::Direct, successes: Some(successes) })
    }

    /// Mean of `n` samples with a normal-approximation interval.
    pub fn from_mean(mean: f64, stderr: f64, n: u64, method: Method) -> Estimate {
        let z = 1.959_963_984_540_054;
        Estimate { value: mean, stderr, n, ci: (mean - z * stderr, mean + z * stderr), method, successes: None }
    }
}

/// Clopper-Pearson interval for `successes` out of `n` at confidence `level`.
pub fn binomial_ci(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    ensure!(n >= 1, Domain, "n must be at least 1");
    ensure!(successes <= n, Domain, "successes {successes} exceed n = {n}");
    ensure!(level > 0.0 && level < 1.0, Domain, "level must lie in (0, 1), got {level}");
    let alpha = 1.0 - level;
    let (k, n) = (successes as f64, n as f64);
    let lo = if successes == 0 {
        0.0
    } else if k == n {
        (alpha / 2.0).powf(1.0 / n)
    } else {
        inv_beta_reg(k, n - k + 1.0, alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else if successes == 0 {
        1.0 - (alpha / 2.0).powf(1.0 / n)
    } else {
        inv_beta_reg(k + 1.0, n - k, 1.0 - alpha / 2.0)
    };
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Isolation,
    Detection,
    Custom(String),
}

/// Which event time to record, for which target family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub family: SetFamily,
    #[serde(default)]
    pub resolution: Resolution,
}

impl EventSpec {
    pub fn isolation(family: SetFamily) -> EventSpec {
        EventSpec { kind: EventKind::Isolation, family, resolution: Resolution::default() }
    }

    pub fn detection(family: SetFamily) -> EventSpec {
        EventSpec { kind: EventKind::Detection, family, resolution: Resolution::default() }
    }
}

/// Where the samples of a run come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub master_seed: u64,
    pub experiment: u64,
    pub samples: Range<u64>,
    /// Worker threads; 0 means the global pool.
    pub threads: usize,
}

impl RunPlan {
    pub fn new(master_seed: u64, experiment: u64, n: u64) -> RunPlan {
        RunPlan { master_seed, experiment, samples: 0..n, threads: 0 }
    }

    pub fn with_threads(self, threads: usize) -> RunPlan {
        RunPlan { threads, ..self }
    }

    pub fn len(&self) -> u64 {
        self.samples.end - self.samples.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Contiguous sub-plans covering the same indices.
    pub fn shards(&self, k: u64) -> Vec<RunPlan> {
        let n = self.len();
        (0..k)
            .map(|j| RunPlan { samples: self.samples.start + n * j / k..self.samples.start + n * (j + 1) / k, ..self.clone() })
            .collect()
    }

    /// World key of sample `i`.
    pub fn key(&self, i: u64) -> u64 {
        seed_schedule(self.master_seed, self.experiment, i).key().word()
    }

    pub fn stream(&self, i: u64) -> Stream {
        seed_schedule(self.master_seed, self.experiment, i)
    }
}

/// Evaluate `f` on every index of `range`, in order, on `threads` workers.
pub fn run_indexed<T, F>(threads: usize, range: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if threads == 1 {
        return range.map(f).collect();
    }
    let go = || range.clone().into_par_iter().map(&f).collect();
    if threads == 0 {
        go()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(go),
            Err(_) => range.map(&f).collect(),
        }
    }
}

/// Everything that must agree for two curves to be pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveDescriptor {
    pub event: EventKind,
    pub family: Option<SetFamily>,
    pub config: Option<SimConfig>,
    pub master_seed: u64,
    pub experiment: u64,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub descriptor: CurveDescriptor,
    pub t_grid: Vec<f64>,
    /// Raw per-time estimates of `P(T > t)`.
    pub points: Vec<Estimate>,
    /// Per-time survivor counts and the sample count, for direct curves.
    pub counts: Option<(Vec<u64>, u64)>,
    /// Pool-adjacent-violators projection of the raw values, once requested.
    pub isotonic: Option<Vec<f64>>,
    /// Maximal-depth segments resolved by the residual policy.
    pub residuals: u64,
}

impl SurvivalCurve {
    pub fn from_counts(descriptor: CurveDescriptor, t_grid: Vec<f64>, survivors: Vec<u64>, n: u64, residuals: u64) -> Result<SurvivalCurve> {
        ensure!(survivors.len() == t_grid.len(), Domain, "{} counts for {} times", survivors.len(), t_grid.len());
        let points = survivors.iter().map(|s| Estimate::from_counts(*s, n, 0.95)).collect::<Result<_>>()?;
        Ok(SurvivalCurve { descriptor, t_grid, points, counts: Some((survivors, n)), isotonic: None, residuals })
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Store the nonincreasing least-squares projection of the raw values.
    pub fn project_isotonic(&mut self) {
        let w: Vec<f64> = self.points.iter().map(|p| p.n as f64).collect();
        self.isotonic = Some(isotonic_nonincreasing(&self.values(), &w));
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        for (t, p) in self.t_grid.iter().zip(&self.points) {
            out.write_record([t.to_string(), p.value.to_string(), p.ci.0.to_string(), p.ci.1.to_string(), p.n.to_string(), p.method.as_str().to_string()])
                .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// One parsed row of a survival CSV.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SurvivalRow {
    pub t: f64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
    pub method: Method,
}

pub fn read_survival_csv(r: impl Read) -> Result<Vec<SurvivalRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(csv_err)?.clone();
    ensure!(headers.iter().eq(CSV_HEADER), Config, "unexpected survival CSV header {:?}", headers);
    rd.deserialize().map(|row| row.map_err(|e| Error::Config(format!("bad survival row: {e}")))).collect()
}

/// Weighted pool-adjacent-violators for a nonincreasing fit.
pub fn isotonic_nonincreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (v, wt) in y.iter().zip(w) {
        let wt = wt.max(1e-300);
        blocks.push((*v, wt, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 < blocks[blocks.len() - 1].0 {
            let (v2, w2, n2) = blocks.pop().unwrap();
            let (v1, w1, n1) = blocks.pop().unwrap();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, n)| std::iter::repeat_n(v, n)).collect()
}

/// Exact pooling of independent partial results.
pub trait Merge: Sized {
    fn merge_all(parts: &[Self]) -> Result<Self>;
}

pub fn merge<T: Merge>(parts: &[T]) -> Result<T> {
    T::merge_all(parts)
}

impl Merge for Estimate {
    fn merge_all(parts: &[Estimate]) -> Result<Estimate> {
        ensure!(!parts.is_empty(), Mismatch, "nothing to merge");
        ensure!(parts.iter().all(|p| p.method == Method::Direct && p.successes.is_some()), Mismatch, "only binomial estimates can be pooled exactly");
        let k = parts.iter().map(|p| p.successes.unwrap()).sum();
        let n = parts.iter().map(|p| p.n).sum();
        Estimate::from_counts(k, n, 0.95)
    }
}

impl Merge for SurvivalCurve {
    fn merge_all(parts: &[SurvivalCurve]) -> Result<SurvivalCurve> {
        ensure!(!parts.is_empty(), Mismatch, "nothing to merge");
        let first = &parts[0];
        let mut survivors = vec![0u64; first.t_grid.len()];
        let mut n = 0;
        let mut residuals = 0;
        for p in parts {
            ensure!(p.descriptor == first.descriptor, Mismatch, "experiment descriptors differ");
            ensure!(p.t_grid == first.t_grid, Mismatch, "time grids differ");
            let (s, m) = p.counts.as_ref().ok_or_else(|| Error::Mismatch("curve carries no counts".into()))?;
            for (a, b) in survivors.iter_mut().zip(s) {
                *a += b;
            }
            n += m;
            residuals += p.residuals;
        }
        let mut out = SurvivalCurve::from_counts(first.descriptor.clone(), first.t_grid.clone(), survivors, n, residuals)?;
        if parts.iter().all(|p| p.isotonic.is_some()) {
            out.project_isotonic();
        }
        Ok(out)
    }
}

/// Validated configuration plus the world layout for one event.
pub struct Prepared {
    pub config: SimConfig,
    pub spec: WorldSpec,
    pub cap: GridTime,
}

/// Width of the shells in which truncated worlds are generated.
pub const SHELL_WIDTH: f64 = 1.0;

/// Validate `config` against `event` and lay out epochs with boundaries at
/// every time in `cuts`.
pub fn prepare(config: &SimConfig, event: &EventSpec, t_max: f64, cuts: &[f64]) -> Result<Prepared> {
    let config = validate_config(config.clone())?;
    let d = config.d;
    event.family.validate(d).map_err(|e| Error::Config(e.to_string()))?;
    ensure!(t_max >= 0.0 && t_max <= config.horizon * (1.0 + 1e-12), Config, "time {t_max} is outside [0, horizon = {}]", config.horizon);
    let extent = event.family.extent(d);
    ensure!(
        extent <= config.set_bound + config.r + 1e-9,
        Config,
        "target family reaches radius {extent} but set_bound + r = {}; raise set_bound",
        config.set_bound + config.r
    );
    ensure!(!matches!(event.kind, EventKind::Custom(_)), Config, "custom events cannot be simulated directly");
    let run_h = if t_max > 0.0 { t_max } else { config.step };
    let mut all: Vec<f64> = cuts.to_vec();
    all.extend(event.family.breakpoints());
    let epochs = Epochs::with_cuts(run_h, &all, config.step, config.refine_depth)?;
    let cap = epochs.locate(t_max);
    let spec = match (event.kind.clone(), event.family.centered_radius()) {
        (EventKind::Isolation, Some(r)) if d == 1 || d == 3 => WorldSpec::first_entrance(d, config.lambda, epochs, r)?,
        _ => WorldSpec::truncated(d, config.lambda, epochs, config.radius(), SHELL_WIDTH),
    };
    Ok(Prepared { config, spec, cap })
}

/// Event time of one world.
pub fn event_time(world: &mut World, event: &EventSpec, cap: GridTime, stats: &QueryStats) -> CensoredTime {
    match event.kind {
        EventKind::Detection => detection_time(world, &event.family, cap, &event.resolution, stats),
        _ => isolation_time(world, &event.family, GridTime { epoch: 0, k: 0 }, cap, &event.resolution, stats),
    }
}

/// Per-sample event times (censored beyond `t_max`) with residual counts.
pub fn sample_event_times(config: &SimConfig, event: &EventSpec, t_max: f64, cuts: &[f64], plan: &RunPlan) -> Result<Vec<(CensoredTime, u64)>> {
    let prep = prepare(config, event, t_max, cuts)?;
    Ok(run_indexed(plan.threads, plan.samples.clone(), |i| {
        let stats = QueryStats::default();
        let mut world = World::new(&prep.spec, plan.key(i));
        let t = event_time(&mut world, event, prep.cap, &stats);
        (t, stats.residuals.get())
    }))
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    ensure!(!t_grid.is_empty(), Config, "time grid is empty");
    ensure!(t_grid.iter().all(|t| t.is_finite() && *t >= 0.0), Config, "time grid must be finite and nonnegative");
    ensure!(t_grid.windows(2).all(|w| w[1] > w[0]), Config, "time grid must be strictly increasing");
    Ok(())
}

/// Frequency of `{T > t}` over independent worlds, each world evaluated at the
/// whole grid.
pub fn estimate_survival(config: &SimConfig, event: &EventSpec, t_grid: &[f64], plan: &RunPlan) -> Result<SurvivalCurve> {
    check_grid(t_grid)?;
    ensure!(!plan.is_empty(), Config, "no samples requested");
    let t_max = *t_grid.last().unwrap();
    let times = sample_event_times(config, event, t_max, t_grid, plan)?;
    let survivors = t_grid.iter().map(|t| times.iter().filter(|(x, _)| x.exceeds(*t)).count() as u64).collect();
    let residuals = times.iter().map(|x| x.1).sum();
    let descriptor = CurveDescriptor {
        event: event.kind.clone(),
        family: Some(event.family.clone()),
        config: Some(validate_config(config.clone())?),
        master_seed: plan.master_seed,
        experiment: plan.experiment,
        method: Method::Direct,
    };
    SurvivalCurve::from_counts(descriptor, t_grid.to_vec(), survivors, plan.len(), residuals)
}

/// Knobs of the sausage estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SausageOptions {
    /// Base step as a fraction of `t`.
    pub step_fraction: f64,
    pub refine_depth: u32,
    /// Test points per path.
    pub points_per_path: usize,
    pub resolution: Resolution,
}

impl Default for SausageOptions {
    fn default() -> Self {
        SausageOptions { step_fraction: 0.125, refine_depth: 10, points_per_path: 4, resolution: Resolution::default() }
    }
}

/// Radial proposal for the sausage estimator: a piecewise-constant density on
/// `[r, rho_max]` shaped like an upper bound of the hitting probability.
struct RadialTable {
    edges: Vec<f64>,
    cdf: Vec<f64>,
    dens: Vec<f64>,
}

impl RadialTable {
    fn new(d: usize, r: f64, t: f64) -> RadialTable {
        let g = |rho: f64| rho.powi(d as i32 - 1) * sup_tail_bound(d, t, rho - r).max(1e-300);
        // beyond this radius the bound integrates to far below 1e-12 of the
        // total; scale with the diffusive length
        let scale = (d as f64 * t).sqrt();
        let rho_max = r + 10.0 * scale;
        let bins = 512;
        let edges: Vec<f64> = (0..=bins).map(|i| r + (rho_max - r) * i as f64 / bins as f64).collect();
        let w: Vec<f64> = edges.windows(2).map(|e| g(e[0]).max(g(e[1])).max(1e-12 * g(r + 1e-9).max(1e-12)) * (e[1] - e[0])).collect();
        let total: f64 = w.iter().sum();
        let mut cdf = vec![0.0];
        for x in &w {
            cdf.push(cdf.last().unwrap() + x / total);
        }
        let dens = w.iter().zip(edges.windows(2)).map(|(x, e)| x / total / (e[1] - e[0])).collect();
        RadialTable { edges, cdf, dens }
    }

    /// Draw a radius and its proposal density.
    fn sample(&self, u: f64, v: f64) -> (f64, f64) {
        let i = self.cdf.partition_point(|c| *c <= u).clamp(1, self.dens.len()) - 1;
        let rho = self.edges[i] + v * (self.edges[i + 1] - self.edges[i]);
        (rho, self.dens[i])
    }
}

/// Expected volume of the Wiener sausage `W_0(t)` of radius `r`.
///
/// The ball `B(0, r)` contributes its volume exactly. Outside it, test points
/// `x` are drawn from a radial proposal and weighted by whether the path comes
/// within `r` of `x`.
pub fn sausage_volume(d: usize, r: f64, t: f64, plan: &RunPlan, opts: &SausageOptions) -> Result<Estimate> {
    ensure!((1..=MAX_DIM).contains(&d), Domain, "d must lie in 1..={MAX_DIM}");
    ensure!(r > 0.0 && r.is_finite(), Domain, "r must be positive");
    ensure!(t > 0.0 && t.is_finite(), Domain, "t must be positive, got {t}");
    ensure!(!plan.is_empty(), Domain, "no samples requested");
    let table = RadialTable::new(d, r, t);
    let epochs = Epochs::with_cuts(t, &[], t * opts.step_fraction, opts.refine_depth)?;
    let ep = epochs.list[0];
    let surface = d as f64 * unit_ball_volume(d);
    let env = Envelope::new(d, opts.resolution.beta);
    let k = opts.points_per_path.max(1);
    let per_path = run_indexed(plan.threads, plan.samples.clone(), |i| {
        let mut s = plan.stream(i);
        let stats = QueryStats::default();
        let track = EpochTrack::new(s.key().derive(1).word(), ep, d, Point::ZERO, 0);
        let mut acc = 0.0;
        for _ in 0..k {
            let (rho, q) = table.sample(s.uniform(), s.uniform());
            let x = uniform_direction(d, &mut s) * rho;
            let fam = SetFamily::StaticBall { center: x, radius: r };
            let query = Query::new(&fam, env, opts.resolution.policy, &stats);
            if track.first_entry(&query, 0, ep.steps()).is_some() {
                acc += surface * rho.powi(d as i32 - 1) / q;
            }
        }
        acc / k as f64
    });
    let w: Welford = per_path.into_iter().collect();
    let base = ball_volume(d, r);
    Ok(Estimate::from_mean(base + w.mean(), w.stderr(), plan.len(), Method::Direct))
}

/// Effort of a splitting run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplittingEffort {
    /// Particles per stage.
    pub particles: usize,
    /// Independent replicates, used for the standard error.
    pub replicates: usize,
}

/// Fixed-effort multilevel splitting estimate of `P(T_isol > t)`.
///
/// The importance function is the covered time so far, so each level `l`
/// asks for survival up to time `l`. Stage `k` restarts `particles` copies of
/// the worlds that survived to `levels[k]`, assigned round-robin, with fresh
/// randomness afterwards. With no positive levels this is direct Monte Carlo
/// on the same worlds as [`estimate_survival`].
pub fn splitting_estimate(config: &SimConfig, event: &EventSpec, t: f64, levels: &[f64], effort: SplittingEffort, plan: &RunPlan) -> Result<Estimate> {
    Ok(splitting_curve(config, event, t, levels, effort, plan)?.pop().expect("at least one stage").1)
}

/// Splitting estimates of `P(T_isol > l)` at every positive level and at `t`.
pub fn splitting_curve(config: &SimConfig, event: &EventSpec, t: f64, levels: &[f64], effort: SplittingEffort, plan: &RunPlan) -> Result<Vec<(f64, Estimate)>> {
    ensure!(levels.windows(2).all(|w| w[1] > w[0]), Domain, "splitting levels must be strictly increasing");
    ensure!(levels.iter().all(|l| *l >= 0.0 && *l < t), Domain, "splitting levels must lie in [0, t)");
    ensure!(matches!(event.kind, EventKind::Isolation), Domain, "splitting supports isolation survival");
    ensure!(effort.particles >= 1 && effort.replicates >= 1, Domain, "effort must be positive");
    let inner: Vec<f64> = levels.iter().copied().filter(|l| *l > 0.0).collect();
    let prep = prepare(config, event, t, &inner)?;
    ensure!(prep.spec.is_first_entrance(), Domain, "splitting requires a centered static ball in d = 1 or d = 3");
    let ep = &prep.spec.epochs;
    let mut thresholds: Vec<GridTime> = inner.iter().map(|l| ep.locate(*l)).collect();
    thresholds.push(prep.cap);
    let stages = thresholds.len();
    let n = effort.particles as u64;
    // products[rep][k] estimates P(T > threshold k)
    let mut products = vec![vec![0.0; stages]; effort.replicates];
    let mut counts = vec![0u64; stages];
    for (rep, prod) in products.iter_mut().enumerate() {
        let base = plan.samples.start + rep as u64 * n;
        let stage0 = run_indexed(plan.threads, base..base + n, |i| {
            let stats = QueryStats::default();
            let mut w = World::new(&prep.spec, plan.key(i));
            let out = isolation_time(&mut w, &event.family, GridTime { epoch: 0, k: 0 }, thresholds[0], &event.resolution, &stats);
            out.is_censored().then(|| if stages > 1 { w.states_at(thresholds[0].epoch) } else { Vec::new() })
        });
        let mut alive: Vec<Vec<_>> = stage0.into_iter().flatten().collect();
        counts[0] += alive.len() as u64;
        let mut p = alive.len() as f64 / n as f64;
        prod[0] = p;
        for k in 1..stages {
            if alive.is_empty() {
                break;
            }
            let (start, th) = (thresholds[k - 1], thresholds[k]);
            let states = &alive;
            let next = run_indexed(plan.threads, 0..n, |j| {
                let stats = QueryStats::default();
                let key = combine(StreamKey { master: plan.master_seed, experiment: plan.experiment, index: base + j, tag: k as u64 }.word(), 0x5350_4c49_54);
                let mut w = World::restart(&prep.spec, start.epoch, key, &states[j as usize % states.len()]);
                let out = isolation_time(&mut w, &event.family, start, th, &event.resolution, &stats);
                out.is_censored().then(|| if k + 1 < stages { w.states_at(th.epoch) } else { Vec::new() })
            });
            alive = next.into_iter().flatten().collect();
            counts[k] += alive.len() as u64;
            p *= alive.len() as f64 / n as f64;
            prod[k] = p;
        }
    }
    let r = effort.replicates as u64;
    let mut out = Vec::with_capacity(stages);
    for k in 0..stages {
        let time = if k + 1 < stages { inner[k] } else { t };
        let est = if stages == 1 || k == 0 {
            // the first stage is plain Monte Carlo over all replicates
            Estimate::from_counts(counts[0], n * r, 0.95)?
        } else {
            let w: Welford = products.iter().map(|p| p[k]).collect();
            let se = if r > 1 { w.stderr() } else { f64::NAN };
            let mut e = Estimate::from_mean(w.mean(), se, n * r * (k as u64 + 1), Method::Splitting);
            e.ci = (e.ci.0.max(0.0), e.ci.1.min(1.0));
            e
        };
        out.push((time, est));
    }
    Ok(out)
}

/// Empirical check of the truncation radius: mean number of nodes born in
/// `[R, R + reach]` whose path enters the family before the horizon.
pub fn truncation_check(config: &SimConfig, event: &EventSpec, plan: &RunPlan) -> Result<Estimate> {
    let t = config.horizon;
    let prep = prepare(config, &EventSpec { kind: EventKind::Detection, ..event.clone() }, t, &[])?;
    let big_r = prep.config.radius();
    let extent = event.family.extent(prep.config.d);
    let outer = big_r.max(extent + prep.spec.reach(t));
    let spec = WorldSpec::truncated(prep.config.d, prep.config.lambda, prep.spec.epochs.clone(), outer, SHELL_WIDTH);
    let counts = run_indexed(plan.threads, plan.samples.clone(), |i| {
        let stats = QueryStats::default();
        let mut w = World::new(&spec, plan.key(i));
        let n = w.materialize_all();
        let mut hits = 0u64;
        for j in 0..n {
            if w.nodes[j].rho > big_r && w.node_enters(j, &event.family, prep.cap, &event.resolution, &stats) {
                hits += 1;
            }
        }
        hits as f64
    });
    let w: Welford = counts.into_iter().collect();
    Ok(Estimate::from_mean(w.mean(), w.stderr(), plan.len(), Method::Direct))
}
