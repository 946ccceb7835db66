use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use isolation_core::analysis::{
    compare_strategies, d1_coverage_probe, default_challengers, fit_points, occupation_tail_report, probe_probability, random_instance, rearrangement_case, ExponentFit, Regressor, StartRule,
    Verdict,
};
use isolation_core::error::Error;
use isolation_core::estimators::{
    estimate_survival, read_survival_csv, sausage_volume, splitting_curve, CurveDescriptor, EventKind, EventSpec, Method, RunPlan, SausageOptions, SplittingEffort, SurvivalCurve, CSV_HEADER,
};
use isolation_core::rng::{combine, seed_schedule};
use serde_json::{json, Value};

use crate::config::{trajectory, RunConfig};

/// Why a command did not succeed; each maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Suite(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Suite(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Suite(m) => write!(f, "suite failure: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Mismatch(_) | Error::Toml(_) => Failure::Config(e.to_string()),
            Error::Rejection(_) | Error::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Everything a command needs, plus the list of files it wrote.
pub struct Ctx {
    pub cfg: RunConfig,
    pub plan: RunPlan,
    pub out: PathBuf,
    pub plot: bool,
    pub config_dir: PathBuf,
    pub outputs: Vec<String>,
    pub residuals: u64,
}

impl Ctx {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Runtime(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_curve(&mut self, name: &str, curve: &SurvivalCurve) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        curve.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    fn sub_plan(&self, k: u64) -> RunPlan {
        RunPlan { experiment: combine(self.plan.experiment, k), ..self.plan.clone() }
    }
}

/// Returns the JSON summary merged into the manifest.
pub fn run(command: &str, ctx: &mut Ctx) -> Result<Value, Failure> {
    match command {
        "isolation" => survival(ctx, EventKind::Isolation),
        "detection" => survival(ctx, EventKind::Detection),
        "sausage" => sausage(ctx),
        "strategy" => strategy(ctx),
        "rearrangement" => rearrangement(ctx),
        "probe-d1" => probe(ctx),
        "occupation" => occupation(ctx),
        "fit" => fit(ctx),
        other => unreachable!("command {other} is filtered by the argument parser"),
    }
}

fn fit_json(fit: &Result<ExponentFit, Error>) -> Value {
    match fit {
        Ok(f) => json!({ "fit": f }),
        Err(e) => json!({ "fit": null, "reason": e.to_string() }),
    }
}

fn survival(ctx: &mut Ctx, kind: EventKind) -> Result<Value, Failure> {
    let family = ctx.cfg.family().map_err(|e| Failure::Config(e.to_string()))?;
    let event = match kind {
        EventKind::Detection => EventSpec::detection(family),
        _ => EventSpec::isolation(family),
    };
    let grid = ctx.cfg.t_grid();
    let method = ctx.cfg.experiment.method.clone().unwrap_or_else(|| "direct".into());
    let curve = match method.as_str() {
        "direct" => estimate_survival(&ctx.cfg.sim, &event, &grid, &ctx.plan)?,
        "splitting" => split_curve(ctx, &event, &grid)?,
        m => return Err(Failure::Config(format!("unknown method {m:?}; expected \"direct\" or \"splitting\""))),
    };
    ctx.residuals = curve.residuals;
    ctx.write_curve("survival.csv", &curve)?;
    let d = ctx.cfg.sim.d;
    let min_points = ctx.cfg.experiment.min_points.unwrap_or(2);
    let (fit, excluded) = fit_usable(&curve.t_grid, &curve.values(), &curve.points.iter().map(|e| e.stderr).collect::<Vec<_>>(), d, min_points);
    let mut fj = fit_json(&fit);
    fj["excluded_t"] = json!(excluded);
    ctx.write_json("fit.json", &fj)?;
    if ctx.plot {
        let svg = plot_curve(&curve.t_grid, &curve.values(), d, fit.as_ref().ok());
        let mut w = ctx.create("plot.svg")?;
        w.write_all(svg.as_bytes())?;
        w.flush()?;
    }
    Ok(json!({ "survival": curve.values(), "counts": curve.counts, "method": method }))
}

fn split_curve(ctx: &Ctx, event: &EventSpec, grid: &[f64]) -> Result<SurvivalCurve, Failure> {
    if event.kind != EventKind::Isolation {
        return Err(Failure::Config("splitting is available for isolation only".into()));
    }
    let t = *grid.last().ok_or_else(|| Failure::Config("empty time grid".into()))?;
    let levels = ctx.cfg.experiment.levels.clone().unwrap_or_else(|| grid[..grid.len() - 1].to_vec());
    let effort = SplittingEffort { particles: ctx.cfg.experiment.particles.unwrap_or(1000), replicates: ctx.cfg.experiment.replicates.unwrap_or(4) };
    let all = splitting_curve(&ctx.cfg.sim, event, t, &levels, effort, &ctx.plan)?;
    let mut points = Vec::new();
    for s in grid {
        let e = all.iter().find(|(l, _)| (l - s).abs() <= 1e-9 * s.max(1.0)).ok_or_else(|| Failure::Config(format!("time {s} is not a splitting level")))?;
        points.push(e.1);
    }
    Ok(SurvivalCurve {
        descriptor: CurveDescriptor {
            event: event.kind.clone(),
            family: Some(event.family.clone()),
            config: Some(ctx.cfg.sim.clone()),
            master_seed: ctx.plan.master_seed,
            experiment: ctx.plan.experiment,
            method: Method::Splitting,
        },
        t_grid: grid.to_vec(),
        points,
        counts: None,
        isotonic: None,
        residuals: 0,
    })
}

/// Fit on the points with a positive estimate and a defined regressor.
fn fit_usable(t: &[f64], p: &[f64], se: &[f64], d: usize, min_points: usize) -> (Result<ExponentFit, Error>, Vec<f64>) {
    let mut keep = (Vec::new(), Vec::new(), Vec::new());
    let mut excluded = Vec::new();
    for i in 0..t.len() {
        if p[i] > 0.0 && Regressor::Scaling.eval(d, t[i]).is_ok() {
            keep.0.push(t[i]);
            keep.1.push(p[i]);
            keep.2.push(se[i]);
        } else {
            excluded.push(t[i]);
        }
    }
    let mut fit = fit_points(&keep.0, &keep.1, &keep.2, d, Regressor::Scaling, min_points);
    if let Ok(f) = fit.as_mut() {
        if d == 1 && keep.0.iter().all(|t| *t > std::f64::consts::E) {
            f.alternative = fit_points(&keep.0, &keep.1, &keep.2, d, Regressor::SqrtLogLogLog, min_points).ok().map(Box::new);
        }
    }
    (fit, excluded)
}

fn sausage(ctx: &mut Ctx) -> Result<Value, Failure> {
    let (d, r) = (ctx.cfg.sim.d, ctx.cfg.experiment.target_radius.unwrap_or(ctx.cfg.sim.r));
    let mut opts = SausageOptions { refine_depth: ctx.cfg.sim.refine_depth, ..SausageOptions::default() };
    if let Some(k) = ctx.cfg.experiment.points_per_path {
        opts.points_per_path = k;
    }
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (k, t) in ctx.cfg.t_grid().into_iter().enumerate() {
        let e = sausage_volume(d, r, t, &ctx.sub_plan(k as u64), &opts)?;
        rows.push(vec![t.to_string(), e.value.to_string(), e.ci.0.to_string(), e.ci.1.to_string(), e.n.to_string(), e.method.as_str().to_string()]);
        values.push(json!({ "t": t, "volume": e.value, "stderr": e.stderr, "lambda_volume": ctx.cfg.sim.lambda * e.value }));
    }
    ctx.write_table("sausage.csv", &CSV_HEADER, &rows)?;
    Ok(json!({ "sausage": values }))
}

fn strategy(ctx: &mut Ctx) -> Result<Value, Failure> {
    let grid = ctx.cfg.t_grid();
    let d = ctx.cfg.sim.d;
    let challengers = match &ctx.cfg.experiment.challengers {
        Some(list) => list.iter().map(|w| trajectory(w, d)).collect::<Result<Vec<_>, _>>().map_err(|e| Failure::Config(e.to_string()))?,
        None => {
            let mut s = seed_schedule(ctx.plan.master_seed, ctx.plan.experiment, u64::MAX);
            default_challengers(d, *grid.last().unwrap_or(&ctx.cfg.sim.horizon), &mut s)
        }
    };
    let reports = compare_strategies(&ctx.cfg.sim, &challengers, &grid, &ctx.plan)?;
    if let Some(first) = reports.first() {
        ctx.write_curve("survival.csv", &first.baseline)?;
    }
    for (k, r) in reports.iter().enumerate() {
        ctx.write_curve(&format!("challenger_{k}.csv"), &r.challenger)?;
    }
    let summary: Vec<Value> = reports.iter().map(|r| json!({ "waypoints": r.trajectory.waypoints.len(), "margins": r.margins, "z": r.z, "verdict": r.verdict })).collect();
    ctx.write_json("strategy.json", &json!({ "t_grid": grid, "challengers": summary }))?;
    let bad = reports.iter().filter(|r| r.verdict == Verdict::Violation).count();
    if bad > 0 {
        return Err(Failure::Suite(format!("{bad} challenger(s) beat the stay-put target by more than 3 sigma")));
    }
    Ok(json!({ "challengers": summary }))
}

fn rearrangement(ctx: &mut Ctx) -> Result<Value, Failure> {
    let d = ctx.cfg.sim.d;
    let count = ctx.cfg.experiment.instances.unwrap_or(50);
    let mut s = seed_schedule(ctx.plan.master_seed, ctx.plan.experiment, u64::MAX);
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut hard = 0;
    for k in 0..count {
        let inst = random_instance(d, &mut s);
        let rep = rearrangement_case(&inst, &ctx.sub_plan(k as u64))?;
        worst = worst.max(rep.z);
        hard += (rep.z > 5.0) as usize;
        rows.push(vec![
            k.to_string(),
            d.to_string(),
            inst.families.len().to_string(),
            inst.times.len().to_string(),
            rep.p_general.value.to_string(),
            rep.p_balls.value.to_string(),
            rep.margin.to_string(),
            rep.z.to_string(),
        ]);
    }
    ctx.write_table("rearrangement.csv", &["instance", "d", "nodes", "times", "p_general", "p_balls", "margin", "z"], &rows)?;
    let summary = json!({ "instances": count, "max_z": worst, "hard_violations": hard });
    ctx.write_json("rearrangement.json", &summary)?;
    if hard > 0 {
        return Err(Failure::Suite(format!("{hard} instance(s) favour the general sets by more than 5 sigma")));
    }
    Ok(summary)
}

fn probe(ctx: &mut Ctx) -> Result<Value, Failure> {
    if ctx.cfg.sim.d != 1 {
        return Err(Failure::Config(format!("probe-d1 needs d = 1, got {}", ctx.cfg.sim.d)));
    }
    let (lambda, r) = (ctx.cfg.sim.lambda, ctx.cfg.sim.r);
    let rows = d1_coverage_probe(&ctx.cfg.t_grid(), lambda, r, ctx.cfg.sim.refine_depth, &ctx.plan)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|p| {
            vec![
                p.t.to_string(),
                p.count_mean.to_string(),
                p.count_var.to_string(),
                p.count_z.to_string(),
                p.p.value.to_string(),
                p.p.ci.0.to_string(),
                p.p.ci.1.to_string(),
                p.p_sqrt_t.to_string(),
                probe_probability(p.t, r).to_string(),
            ]
        })
        .collect();
    ctx.write_table("probe.csv", &["t", "count_mean", "count_var", "count_z", "p", "ci_lo", "ci_hi", "p_sqrt_t", "quadrature"], &table)?;
    Ok(json!({ "rows": rows }))
}

fn occupation(ctx: &mut Ctx) -> Result<Value, Failure> {
    let c = &ctx.cfg.sim;
    let rule = ctx.cfg.experiment.start.unwrap_or(StartRule::Boundary);
    let rep = occupation_tail_report(c.d, c.r, c.horizon, rule, c.step, c.refine_depth, &ctx.plan)?;
    let rows: Vec<Vec<String>> = rep
        .multiples
        .iter()
        .zip(&rep.tail)
        .map(|(m, e)| vec![m.to_string(), (*m as f64 * rep.psi).to_string(), e.value.to_string(), e.ci.0.to_string(), e.ci.1.to_string(), e.n.to_string()])
        .collect();
    ctx.write_table("occupation.csv", &["m", "threshold", "estimate", "ci_lo", "ci_hi", "n"], &rows)?;
    let v = serde_json::to_value(&rep).map_err(|e| Failure::Runtime(e.to_string()))?;
    ctx.write_json("occupation.json", &v)?;
    Ok(json!({ "slope": rep.slope, "r_squared": rep.r_squared }))
}

fn fit(ctx: &mut Ctx) -> Result<Value, Failure> {
    let input = ctx.cfg.experiment.input.clone().ok_or_else(|| Failure::Config("fit needs experiment.input naming a survival CSV".into()))?;
    let path = if input.is_absolute() { input } else { ctx.config_dir.join(input) };
    let rows = read_survival_csv(File::open(&path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?)?;
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    // the CSV carries 95% intervals; recover a standard error from their width
    let se: Vec<f64> = rows.iter().map(|r| (r.ci_hi - r.ci_lo) / (2.0 * 1.959_963_984_540_054)).collect();
    let d = ctx.cfg.sim.d;
    let (fit, excluded) = fit_usable(&t, &p, &se, d, ctx.cfg.experiment.min_points.unwrap_or(2));
    let mut fj = fit_json(&fit);
    fj["excluded_t"] = json!(excluded);
    fj["input"] = json!(path.display().to_string());
    ctx.write_json("fit.json", &fj)?;
    if ctx.plot {
        let svg = plot_curve(&t, &p, d, fit.as_ref().ok());
        let mut w = ctx.create("plot.svg")?;
        w.write_all(svg.as_bytes())?;
        w.flush()?;
    }
    match fit {
        Ok(f) => Ok(json!({ "slope": f.slope, "r_squared": f.r_squared })),
        Err(e) => Err(Failure::Config(e.to_string())),
    }
}

/// Scatter of `-log p` against `t / psi_d(t)` with the fitted line.
pub fn plot_curve(t: &[f64], p: &[f64], d: usize, fit: Option<&ExponentFit>) -> String {
    let pts: Vec<(f64, f64)> = t.iter().zip(p).filter(|(_, p)| **p > 0.0).filter_map(|(t, p)| Regressor::Scaling.eval(d, *t).ok().map(|x| (x, -p.ln()))).collect();
    let (w, h, m) = (480.0, 320.0, 40.0);
    let xmax = pts.iter().map(|p| p.0).fold(1e-9, f64::max) * 1.05;
    let ymax = pts.iter().map(|p| p.1).fold(1e-9, f64::max) * 1.1;
    let sx = |x: f64| m + (w - 2.0 * m) * x / xmax;
    let sy = |y: f64| h - m - (h - 2.0 * m) * y / ymax;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">t / psi(t)</text>"#, w / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">-log P</text>"#, h / 2.0, h / 2.0);
    for (x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, sx(*x), sy(*y));
    }
    if let Some(f) = fit {
        let y0 = f.intercept;
        let y1 = f.intercept + f.slope * xmax;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick"/>"#, sx(0.0), sy(y0), sx(xmax), sy(y1));
    }
    s.push_str("</svg>\n");
    s
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}
