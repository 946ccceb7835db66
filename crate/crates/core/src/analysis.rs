//! Experiment-level reports built on the estimators: exponent fits, the
//! strategy comparison, the rearrangement check, the one-dimensional coverage
//! probe and the occupation tail.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{run_indexed, CurveDescriptor, Estimate, EventKind, Method, RunPlan, SurvivalCurve, SHELL_WIDTH};
use crate::events::{discrete_coverage, isolation_time, total_occupation, Resolution, SetFamily, TargetTrajectory, World, WorldSpec};
use crate::geom::{radius_for_volume, Point, Shape};
use crate::model::{psi, validate_config, SimConfig};
use crate::paths::{sample_increments, Epoch, EpochTrack, Epochs, Envelope, GridTime, Query, QueryStats};
use crate::pointprocess::{poisson_count, uniform_direction, Region};
use crate::rng::Stream;
use crate::stats::{gauss_legendre, normal_cdf, weighted_line, Welford};

/// Regressor against which `-log P` is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regressor {
    /// `t / psi_d(t)`.
    Scaling,
    Linear,
    Sqrt,
    /// `sqrt(t) ln t ln ln t`.
    SqrtLogLogLog,
}

impl Regressor {
    pub fn eval(&self, d: usize, t: f64) -> Result<f64> {
        match self {
            Regressor::Scaling => Ok(t / psi(d, t)?),
            Regressor::Linear => Ok(t),
            Regressor::Sqrt => Ok(t.sqrt()),
            Regressor::SqrtLogLogLog => {
                ensure!(t > std::f64::consts::E, Domain, "sqrt(t) ln t ln ln t needs t > e, got {t}");
                Ok(t.sqrt() * t.ln() * t.ln().ln())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub regressor: Regressor,
    /// The fitted `c` in `-log P ~ c x(t)`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    pub residuals: Vec<f64>,
    /// Inverse delta-method variances of `-log P`.
    pub weights: Vec<f64>,
    /// Second fit against `sqrt(t) ln t ln ln t` for d = 1.
    pub alternative: Option<Box<ExponentFit>>,
}

/// Minimum number of points of an exponent fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Weighted fit of `-log p` against `regressor`, with weights `p^2 / se^2`.
pub fn fit_points(t: &[f64], p: &[f64], se: &[f64], d: usize, regressor: Regressor, min_points: usize) -> Result<ExponentFit> {
    ensure!(t.len() == p.len() && p.len() == se.len(), Domain, "length mismatch");
    ensure!(t.len() >= min_points.max(2), Domain, "need at least {} points, got {}", min_points.max(2), t.len());
    ensure!(p.iter().all(|x| *x > 0.0 && *x <= 1.0), Domain, "estimates must lie in (0, 1]; extend sampling or use splitting for zero estimates");
    let x = t.iter().map(|t| regressor.eval(d, *t)).collect::<Result<Vec<_>>>()?;
    let y: Vec<f64> = p.iter().map(|p| -p.ln()).collect();
    let raw: Vec<f64> = p.iter().zip(se).map(|(p, s)| if *s > 0.0 && s.is_finite() { p * p / (s * s) } else { f64::NAN }).collect();
    let fill = raw.iter().copied().filter(|w| w.is_finite()).fold(f64::NAN, f64::max);
    let weights: Vec<f64> = raw.iter().map(|w| if w.is_finite() { *w } else if fill.is_finite() { fill } else { 1.0 }).collect();
    let fit = weighted_line(&x, &y, &weights).ok_or_else(|| Error::Domain("degenerate regression".into()))?;
    Ok(ExponentFit {
        regressor,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared.clamp(0.0, 1.0),
        slope_stderr: fit.slope_stderr,
        residuals: fit.residuals,
        weights,
        alternative: None,
    })
}

/// Fit `-log P(T > t)` against `t / psi_d(t)`; for d = 1 also against
/// `sqrt(t) ln t ln ln t` where every time exceeds `e`.
pub fn fit_exponent(curve: &SurvivalCurve, d: usize) -> Result<ExponentFit> {
    fit_exponent_with(curve, d, MIN_FIT_POINTS)
}

pub fn fit_exponent_with(curve: &SurvivalCurve, d: usize, min_points: usize) -> Result<ExponentFit> {
    let p: Vec<f64> = curve.points.iter().map(|e| e.value).collect();
    let se: Vec<f64> = curve.points.iter().map(|e| e.stderr).collect();
    let mut fit = fit_points(&curve.t_grid, &p, &se, d, Regressor::Scaling, min_points)?;
    if d == 1 && curve.t_grid.iter().all(|t| *t > std::f64::consts::E) {
        fit.alternative = Some(Box::new(fit_points(&curve.t_grid, &p, &se, d, Regressor::SqrtLogLogLog, min_points)?));
    }
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Violation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub trajectory: TargetTrajectory,
    pub baseline: SurvivalCurve,
    pub challenger: SurvivalCurve,
    /// Challenger minus baseline survival per time.
    pub margins: Vec<f64>,
    /// Paired z-scores `(b - c) / sqrt(b + c)` from discordant samples.
    pub z: Vec<f64>,
    pub verdict: Verdict,
}

/// z-score above which a challenger is declared to beat the stay-put target.
pub const VIOLATION_Z: f64 = 3.0;

/// Isolation survival of the stay-put target against each moving target, all
/// evaluated on the same worlds.
pub fn compare_strategies(config: &SimConfig, trajectories: &[TargetTrajectory], t_grid: &[f64], plan: &RunPlan) -> Result<Vec<ComparisonReport>> {
    ensure!(!t_grid.is_empty() && t_grid.windows(2).all(|w| w[1] > w[0]), Config, "time grid must be nonempty and increasing");
    let t_max = *t_grid.last().unwrap();
    let mut cfg = config.clone();
    cfg.horizon = cfg.horizon.max(t_max);
    let reach = trajectories.iter().map(|g| g.sup_norm()).fold(0.0, f64::max);
    ensure!(reach.is_finite(), Config, "trajectories must be bounded");
    cfg.set_bound = cfg.set_bound.max(reach);
    let cfg = validate_config(cfg)?;
    let d = cfg.d;
    let families: Vec<SetFamily> = std::iter::once(SetFamily::centered_ball(cfg.r)).chain(trajectories.iter().map(|g| SetFamily::moving(g.clone(), cfg.r))).collect();
    let epochs = Epochs::with_cuts(t_max, t_grid, cfg.step, cfg.refine_depth)?;
    let cap = epochs.locate(t_max);
    let spec = WorldSpec::truncated(d, cfg.lambda, epochs, cfg.radius(), SHELL_WIDTH);
    let res = Resolution::default();
    let outcomes = run_indexed(plan.threads, plan.samples.clone(), |i| {
        let stats = QueryStats::default();
        let mut w = World::new(&spec, plan.key(i));
        families
            .iter()
            .map(|f| {
                let t = isolation_time(&mut w, f, GridTime { epoch: 0, k: 0 }, cap, &res, &stats);
                t_grid.iter().map(|s| t.exceeds(*s)).collect::<Vec<bool>>()
            })
            .collect::<Vec<_>>()
    });
    let n = plan.len();
    let curve = |j: usize| -> Result<SurvivalCurve> {
        let survivors = (0..t_grid.len()).map(|m| outcomes.iter().filter(|o| o[j][m]).count() as u64).collect();
        let descriptor = CurveDescriptor {
            event: EventKind::Isolation,
            family: Some(families[j].clone()),
            config: Some(cfg.clone()),
            master_seed: plan.master_seed,
            experiment: plan.experiment,
            method: Method::Direct,
        };
        SurvivalCurve::from_counts(descriptor, t_grid.to_vec(), survivors, n, 0)
    };
    let baseline = curve(0)?;
    let mut reports = Vec::new();
    for (j, g) in trajectories.iter().enumerate() {
        let challenger = curve(j + 1)?;
        let mut margins = Vec::new();
        let mut z = Vec::new();
        for m in 0..t_grid.len() {
            let b = outcomes.iter().filter(|o| o[j + 1][m] && !o[0][m]).count() as f64;
            let c = outcomes.iter().filter(|o| o[0][m] && !o[j + 1][m]).count() as f64;
            margins.push((b - c) / n as f64);
            z.push(if b + c > 0.0 { (b - c) / (b + c).sqrt() } else { 0.0 });
        }
        let verdict = if z.iter().any(|z| *z > VIOLATION_Z) { Verdict::Violation } else { Verdict::Consistent };
        reports.push(ComparisonReport { trajectory: g.clone(), baseline: baseline.clone(), challenger, margins, z, verdict });
    }
    Ok(reports)
}

/// The three moving challengers used by default: escape at unit speed along
/// the first axis, a circular orbit of radius 2 and a random piecewise-linear
/// path.
pub fn default_challengers(d: usize, horizon: f64, stream: &mut Stream) -> Vec<TargetTrajectory> {
    let escape = TargetTrajectory::linear(Point::on_axis(1.0), horizon);
    let orbit = if d >= 2 { TargetTrajectory::circle(2.0, 1.0, horizon, horizon / 256.0) } else { TargetTrajectory::new(vec![(0.0, Point::on_axis(2.0))]).unwrap() };
    let mut pts = vec![(0.0, Point::ZERO)];
    let legs = 8;
    for k in 1..=legs {
        let p = uniform_direction(d, stream) * (2.0 * stream.uniform());
        pts.push((horizon * k as f64 / legs as f64, p));
    }
    vec![escape, orbit, TargetTrajectory::new(pts).expect("valid random path")]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub p_general: Estimate,
    pub p_balls: Estimate,
    pub margin: f64,
    /// `margin / sigma` with sigma from the paired differences.
    pub z: f64,
    /// Set volumes, `volumes[i][m]` for node `i` at time `m`; shared by both sides.
    pub volumes: Vec<Vec<f64>>,
}

/// One instance of the multi-time coverage comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangementInstance {
    pub d: usize,
    pub birth_radius: f64,
    pub times: Vec<f64>,
    /// `families[i][m]` is node `i`'s set at `times[m]`.
    pub families: Vec<Vec<Shape>>,
}

/// Centered ball with the volume of `shape`.
pub fn matched_ball(d: usize, shape: &Shape) -> Result<Shape> {
    let v = shape.volume(d);
    let ball = Shape::centered_ball(radius_for_volume(d, v));
    ensure!((ball.volume(d) - v).abs() <= 1e-9 * v.max(1e-300), Mismatch, "matched ball volume {} differs from {v}", ball.volume(d));
    Ok(ball)
}

/// Probability that at every time some node lies in its set, for the given
/// sets and for centered balls of equal volumes, estimated on common paths.
pub fn rearrangement_case(inst: &RearrangementInstance, plan: &RunPlan) -> Result<InequalityReport> {
    let d = inst.d;
    let k = inst.families.len();
    ensure!(inst.birth_radius > 0.0, Domain, "birth radius must be positive");
    ensure!(!inst.times.is_empty() && inst.times[0] == 0.0, Domain, "times must start at 0");
    ensure!(inst.families.iter().all(|f| f.len() == inst.times.len()), Mismatch, "every node needs one set per time");
    ensure!(inst.families.iter().flatten().all(|s| s.is_valid(d)), Domain, "invalid set");
    let balls = inst.families.iter().map(|f| f.iter().map(|s| matched_ball(d, s)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
    let volumes: Vec<Vec<f64>> = inst.families.iter().map(|f| f.iter().map(|s| s.volume(d)).collect()).collect();
    let birth = Region::centered_ball(inst.birth_radius);
    let outcomes = run_indexed(plan.threads, plan.samples.clone(), |i| -> Result<(bool, bool)> {
        let mut s = plan.stream(i);
        let paths = (0..k)
            .map(|j| {
                let x = birth.sample_uniform(d, &mut s);
                sample_increments(j as u64, x, d, &inst.times, &mut s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((discrete_coverage(&paths, &inst.families, &inst.times)?, discrete_coverage(&paths, &balls, &inst.times)?))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let n = plan.len();
    let g = outcomes.iter().filter(|o| o.0).count() as u64;
    let b = outcomes.iter().filter(|o| o.1).count() as u64;
    let diff: Welford = outcomes.iter().map(|o| o.0 as u8 as f64 - o.1 as u8 as f64).collect();
    let margin = diff.mean();
    let sigma = diff.stderr();
    let z = if sigma > 0.0 { margin / sigma } else if margin == 0.0 { 0.0 } else { margin.signum() * f64::INFINITY };
    Ok(InequalityReport { p_general: Estimate::from_counts(g, n, 0.95)?, p_balls: Estimate::from_counts(b, n, 0.95)?, margin, z, volumes })
}

/// Random instance with `1..=5` nodes, `1..=8` times in `d` dimensions and
/// sets drawn from boxes, annuli and translated balls inside the birth ball.
pub fn random_instance(d: usize, stream: &mut Stream) -> RearrangementInstance {
    let k = 1 + (stream.uniform() * 5.0) as usize;
    let m = 1 + (stream.uniform() * 8.0) as usize;
    let birth_radius = 1.5 + 2.5 * stream.uniform();
    let mut times = vec![0.0];
    for _ in 1..m {
        let last = *times.last().unwrap();
        times.push(last + 0.1 + 0.9 * stream.uniform());
    }
    let families = (0..k).map(|_| (0..m).map(|_| random_shape(d, birth_radius, stream)).collect()).collect();
    RearrangementInstance { d, birth_radius, times, families }
}

fn random_shape(d: usize, big_r: f64, s: &mut Stream) -> Shape {
    let size = big_r * (0.15 + 0.35 * s.uniform());
    let room = (big_r - size).max(0.0);
    let center = uniform_direction(d, s) * (room * s.uniform());
    match (s.uniform() * 3.0) as u32 {
        0 => Shape::ball(center, size),
        1 => {
            let half: Vec<f64> = (0..d).map(|_| size / (d as f64).sqrt() * (0.3 + 0.7 * s.uniform())).collect();
            Shape::boxed(d, center, &half)
        }
        _ => Shape::annulus(center, size * (0.2 + 0.6 * s.uniform()), size),
    }
}

/// Quadrature values of both sides for one node in `d = 1` with sets
/// `u` (general side) at times `0` and `1`, born uniformly in `[-big_r, big_r]`.
pub fn two_time_quadrature(big_r: f64, u: (f64, f64), order: usize) -> (f64, f64) {
    let one = |lo: f64, hi: f64| {
        // (1 / 2R) * integral over x in [lo, hi] of P(x + N(0,1) in [lo, hi])
        let (nodes, weights) = gauss_legendre(order);
        let (c, h) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let mut acc = 0.0;
        for (xi, wi) in nodes.iter().zip(&weights) {
            let x = c + h * xi;
            // inner integral of the Gaussian density over [lo - x, hi - x]
            let (a, b) = (lo - x, hi - x);
            let (zc, zh) = ((a + b) / 2.0, (b - a) / 2.0);
            let mut inner = 0.0;
            for (zj, wj) in nodes.iter().zip(&weights) {
                let z = zc + zh * zj;
                inner += wj * zh * (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            }
            acc += wi * h * inner;
        }
        acc / (2.0 * big_r)
    };
    let half = (u.1 - u.0) / 2.0;
    (one(u.0, u.1), one(-half, half))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub t: f64,
    /// Mean and variance of the node count in `[-sqrt(t)/2, sqrt(t)/2]`.
    pub count_mean: f64,
    pub count_var: f64,
    /// z-score of the mean against `lambda sqrt(t)`.
    pub count_z: f64,
    pub p: Estimate,
    pub p_sqrt_t: f64,
}

/// For each `t`: the node count of the central interval of length `sqrt(t)`
/// and the probability that a node placed uniformly in it covers the origin
/// throughout `[1.5 t, 1.5 t + 1]`.
pub fn d1_coverage_probe(t_list: &[f64], lambda: f64, r: f64, refine_depth: u32, plan: &RunPlan) -> Result<Vec<ProbeRow>> {
    ensure!(lambda > 0.0 && r > 0.0, Domain, "lambda and r must be positive");
    let mut rows = Vec::new();
    for (ti, &t) in t_list.iter().enumerate() {
        ensure!(t.is_finite() && t.sqrt() > 2.0 * r, Domain, "t = {t} too small: need sqrt(t) > 2r");
        let half = t.sqrt() / 2.0;
        let s0 = 1.5 * t;
        let ep = Epoch { start: s0, len: 1.0, depth: refine_depth };
        let fam = SetFamily::centered_ball(r);
        let env = Envelope::new(1, Envelope::DEFAULT_BETA);
        let out = run_indexed(plan.threads, plan.samples.clone(), |i| {
            let mut s = plan.stream(i).derive(ti as u64);
            let m = poisson_count(lambda * t.sqrt(), &mut s);
            let x = -half + 2.0 * half * s.uniform();
            let y = x + s0.sqrt() * s.normal();
            let stats = QueryStats::default();
            let q = Query::new(&fam, env, Default::default(), &stats);
            let tr = EpochTrack::new(s.key().derive(7).word(), ep, 1, Point::on_axis(y), 0);
            let covers = tr.inside_at(&q, 0) && tr.first_exit(&q, 0, ep.steps()).is_none();
            (m, covers)
        });
        let mom: Welford = out.iter().map(|o| o.0 as f64).collect();
        let hits = out.iter().filter(|o| o.1).count() as u64;
        let p = Estimate::from_counts(hits, plan.len(), 0.95)?;
        let mu = lambda * t.sqrt();
        rows.push(ProbeRow { t, count_mean: mom.mean(), count_var: mom.variance(), count_z: (mom.mean() - mu) / (mu / plan.len() as f64).sqrt(), p, p_sqrt_t: p.value * t.sqrt() });
    }
    Ok(rows)
}

/// Series for the probability that a one-dimensional Brownian motion from `y`
/// stays in `(-r, r)` for time `s`.
pub fn stay_probability(y: f64, r: f64, s: f64) -> f64 {
    let mut acc = 0.0;
    for k in (1..4000).step_by(2) {
        let kf = k as f64;
        let term = 4.0 / (kf * std::f64::consts::PI)
            * (kf * std::f64::consts::PI * (y + r) / (2.0 * r)).sin()
            * (-kf * kf * std::f64::consts::PI.powi(2) * s / (8.0 * r * r)).exp();
        acc += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    acc
}

/// Quadrature value of the probe probability `p(t)`.
pub fn probe_probability(t: f64, r: f64) -> f64 {
    let half = t.sqrt() / 2.0;
    let sd = (1.5 * t).sqrt();
    let (nodes, weights) = gauss_legendre(64);
    let mut acc = 0.0;
    for (yi, wi) in nodes.iter().zip(&weights) {
        let y = r * yi;
        // P(x + N(0, 1.5t) in dy) averaged over x uniform in [-half, half]
        let dens = (normal_cdf((y + half) / sd) - normal_cdf((y - half) / sd)) / (2.0 * half);
        acc += wi * r * dens * stay_probability(y, r, 1.0);
    }
    acc
}

/// Where conditioned nodes start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StartRule {
    /// Uniform on the sphere `|x| = r`.
    Boundary,
    /// Uniform in `r < |x| <= radius`, kept only if the ball is hit before `t`.
    Conditioned { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub d: usize,
    pub r: f64,
    pub t: f64,
    pub psi: f64,
    pub multiples: Vec<u32>,
    /// Tail frequencies `P(S > m psi)`.
    pub tail: Vec<Estimate>,
    pub mean: Estimate,
    pub max: f64,
    /// Fit of `log P(S > m psi)` against `m`, when every frequency is positive.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub acceptance: f64,
}

/// Occupation time of `B(0, r)` during `[0, t]` for Brownian paths started by
/// `rule`, and the decay of its tail at scale `psi_d(t)`.
pub fn occupation_tail_report(d: usize, r: f64, t: f64, rule: StartRule, step: f64, refine_depth: u32, plan: &RunPlan) -> Result<OccupationReport> {
    let scale = psi(d, t)?;
    ensure!(scale >= 1.0, Domain, "need psi_d(t) >= 1, got {scale}");
    let epochs = Epochs::with_cuts(t, &[], step, refine_depth)?;
    let ep = epochs.list[0];
    let fam = SetFamily::centered_ball(r);
    let env = Envelope::new(d, Envelope::DEFAULT_BETA);
    let max_tries = 1000u64;
    let samples = run_indexed(plan.threads, plan.samples.clone(), |i| {
        let mut s = plan.stream(i);
        let stats = QueryStats::default();
        let q = Query::new(&fam, env, Default::default(), &stats);
        for attempt in 0..max_tries {
            let x = match rule {
                StartRule::Boundary => uniform_direction(d, &mut s) * r,
                StartRule::Conditioned { radius } => Region::Shell { inner: r, outer: radius }.sample_uniform(d, &mut s),
            };
            let tr = EpochTrack::new(s.key().derive(attempt + 1).word(), ep, d, x, 0);
            if matches!(rule, StartRule::Conditioned { .. }) && tr.first_entry(&q, 0, ep.steps()).is_none() {
                continue;
            }
            return Some((tr.occupation(&q, 0, ep.steps()).0.clamp(0.0, t), attempt + 1));
        }
        None
    });
    let tries: u64 = samples.iter().map(|o| o.map_or(max_tries, |x| x.1)).sum();
    let acceptance = plan.len() as f64 / tries as f64;
    ensure!(
        samples.iter().all(|o| o.is_some()) && acceptance >= 1e-3,
        Rejection,
        "conditioning rejected more than 99.9% of starts; shrink the start radius or use boundary starts"
    );
    let s: Vec<f64> = samples.into_iter().map(|o| o.unwrap().0).collect();
    let n = plan.len();
    let multiples: Vec<u32> = (1..=6).collect();
    let tail = multiples.iter().map(|m| Estimate::from_counts(s.iter().filter(|x| **x > *m as f64 * scale).count() as u64, n, 0.95)).collect::<Result<Vec<_>>>()?;
    let w: Welford = s.iter().copied().collect();
    let (slope, r_squared) = if tail.iter().all(|e| e.value > 0.0) {
        let x: Vec<f64> = multiples.iter().map(|m| *m as f64).collect();
        let y: Vec<f64> = tail.iter().map(|e| e.value.ln()).collect();
        let wts: Vec<f64> = tail.iter().map(|e| e.value * e.value / (e.stderr * e.stderr).max(1e-300)).collect();
        match weighted_line(&x, &y, &wts) {
            Some(f) => (Some(f.slope), Some(f.r_squared)),
            None => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(OccupationReport {
        d,
        r,
        t,
        psi: scale,
        multiples,
        tail,
        mean: Estimate::from_mean(w.mean(), w.stderr(), n, Method::Direct),
        max: s.iter().copied().fold(0.0, f64::max),
        slope,
        r_squared,
        acceptance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryOccupation {
    pub mean: Estimate,
    /// `lambda vol(B(0, r)) t`.
    pub expected: f64,
    pub z: f64,
    /// Mean interpolation error bound per world.
    pub interpolation: f64,
}

/// Total time all nodes spend in `B(0, r)` during `[0, horizon]`, averaged over
/// worlds and compared with `lambda vol(B(0, r)) horizon`.
pub fn stationary_occupation(config: &SimConfig, plan: &RunPlan) -> Result<StationaryOccupation> {
    let cfg = validate_config(config.clone())?;
    let t = cfg.horizon;
    let fam = SetFamily::centered_ball(cfg.r);
    let epochs = Epochs::with_cuts(t, &[], cfg.step, cfg.refine_depth)?;
    let end = epochs.end();
    let spec = WorldSpec::truncated(cfg.d, cfg.lambda, epochs, cfg.radius(), SHELL_WIDTH);
    let res = Resolution::default();
    let out = run_indexed(plan.threads, plan.samples.clone(), |i| {
        let stats = QueryStats::default();
        let mut w = World::new(&spec, plan.key(i));
        total_occupation(&mut w, &fam, GridTime { epoch: 0, k: 0 }, end, &res, &stats)
    });
    let w: Welford = out.iter().map(|o| o.0).collect();
    let interp = out.iter().map(|o| o.1).sum::<f64>() / plan.len().max(1) as f64;
    let expected = cfg.lambda * crate::geom::ball_volume(cfg.d, cfg.r) * t;
    let mean = Estimate::from_mean(w.mean(), w.stderr(), plan.len(), Method::Direct);
    Ok(StationaryOccupation { mean, expected, z: (w.mean() - expected) / w.stderr(), interpolation: interp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_schedule;

    #[test]
    fn noiseless_d3_fit_recovers_slope() {
        let t = [5.0, 10.0, 20.0, 40.0];
        let p: Vec<f64> = t.iter().map(|t: &f64| (-3.0 * t).exp()).collect();
        let f = fit_points(&t, &p, &[0.0; 4], 3, Regressor::Scaling, 4).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-9 && f.intercept.abs() < 1e-8);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_d2_fit_uses_log() {
        let t = [3.0, 5.0, 10.0, 20.0, 40.0];
        let p: Vec<f64> = t.iter().map(|t: &f64| (-2.0 * t / t.ln()).exp()).collect();
        let f = fit_points(&t, &p, &[0.0; 5], 2, Regressor::Scaling, 4).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!(f.r_squared >= 0.999);
    }

    #[test]
    fn noisy_fit_within_three_sigma() {
        let t: Vec<f64> = (1..=8).map(|k| 5.0 * k as f64).collect();
        let mut s = seed_schedule(3, 3, 3);
        let p: Vec<f64> = t.iter().map(|t| (-0.5 * t + 0.01 * s.normal()).exp()).collect();
        let se: Vec<f64> = p.iter().map(|p| 0.01 * p).collect();
        let f = fit_points(&t, &p, &se, 3, Regressor::Scaling, 4).unwrap();
        assert!((f.slope - 0.5).abs() < 3.0 * f.slope_stderr.max(1e-6), "{} +- {}", f.slope, f.slope_stderr);
    }

    #[test]
    fn fit_rejects_zero_and_short_curves() {
        assert!(fit_points(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.2, 0.0, 0.01], &[0.1; 4], 3, Regressor::Scaling, 4).is_err());
        assert!(fit_points(&[1.0, 2.0, 3.0], &[0.5, 0.2, 0.1], &[0.1; 3], 3, Regressor::Scaling, 4).is_err());
    }

    #[test]
    fn d1_series_sums_to_one_near_zero_time() {
        assert!((stay_probability(0.0, 1.0, 1e-3) - 1.0).abs() < 1e-9);
        assert!(stay_probability(0.999_999, 1.0, 1.0) < 1e-4);
        // mean exit time of (-1, 1) from 0 is 1: integrate survival
        let mut acc = 0.0;
        let dt = 1e-3;
        for k in 0..20_000 {
            acc += dt * stay_probability(0.0, 1.0, (k as f64 + 0.5) * dt);
        }
        assert!((acc - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadrature_orders_the_two_sides() {
        let (g, b) = two_time_quadrature(4.0, (1.0, 3.0), 48);
        assert!(g <= b);
        // equal sets give equal probabilities
        let (g2, b2) = two_time_quadrature(4.0, (-1.0, 1.0), 48);
        assert!((g2 - b2).abs() < 1e-14);
        // direct check: (1/8) * int_{-1}^{1} [Phi(1 - x) - Phi(-1 - x)] dx
        let mut direct = 0.0;
        let n = 20_000;
        for k in 0..n {
            let x = -1.0 + 2.0 * (k as f64 + 0.5) / n as f64;
            direct += (normal_cdf(1.0 - x) - normal_cdf(-1.0 - x)) * 2.0 / n as f64;
        }
        assert!((b - direct / 8.0).abs() < 1e-7, "{b} vs {}", direct / 8.0);
    }

    #[test]
    fn matched_balls_keep_volume() {
        let s = Shape::annulus(Point::from_slice(&[0.5, 0.0]), 0.3, 1.0);
        let b = matched_ball(2, &s).unwrap();
        assert!((b.volume(2) - s.volume(2)).abs() < 1e-12);
    }

    #[test]
    fn random_instances_respect_limits() {
        let mut s = seed_schedule(4, 4, 4);
        for _ in 0..200 {
            let d = 1 + (s.uniform() * 2.0) as usize;
            let inst = random_instance(d, &mut s);
            assert!((1..=5).contains(&inst.families.len()));
            assert!((1..=8).contains(&inst.times.len()));
            for f in inst.families.iter().flatten() {
                assert!(f.is_valid(d));
                assert!(f.extent(d) <= inst.birth_radius + 1e-9);
            }
        }
    }
}
