//! Experiment dispatch.

use std::path::{Path, PathBuf};

use popctl_core::equilibria::BlowupOptions;
use popctl_core::forward::support_mask;
use popctl_core::hum::cost_blowup_probe;
use popctl_core::io::{self, Dump};
use popctl_core::staircase::{leg_physical_control, RunOptions, StaircaseOptions};
use popctl_core::{
    build_grid, coverage_report, detect_blowup, linf_monitor, plan_staircase, run_staircase,
    solve_renewal_volterra, solve_steady, synthesize_control, threshold_sweep, ControlField,
    ControlSupport, Error, FertilityKernel, Grid, HumConfig, MortalityRate, PopulationParams,
    Profile, Result, Scheme, SteadyOptions, SteadyState, StateField, TraceOptions,
    ValidationOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ControlSpec, ExperimentConfig, InitialData, Kind};
use crate::manifest::{self, Constants, ErrorRecord, Manifest};

/// What an experiment produced.
#[derive(Default)]
struct Outcome {
    outputs: Vec<String>,
    summary: Value,
    warnings: Vec<String>,
    /// Set when the run completed but a pass/fail check failed.
    failed_check: Option<String>,
}

struct Context {
    cfg: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
    params: PopulationParams,
    grid: Grid,
    support: ControlSupport,
}

impl Context {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        r.set_stream(stream);
        r
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn initial(&self) -> Result<StateField> {
        let g = &self.grid;
        match &self.cfg.initial {
            InitialData::Constant { value } => Ok(StateField::from_fn(g, |_, _, _| *value)),
            InitialData::Cosine { base, amplitude } => Ok(StateField::from_fn(g, |x, _, _| {
                base + amplitude * (std::f64::consts::PI * x[0]).cos()
            })),
            InitialData::Random { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::config("initial", "random bounds need lo < hi"));
                }
                let mut rng = self.rng(1);
                let mut y = StateField::zeros(g);
                y.data.iter_mut().for_each(|v| *v = rng.gen_range(*lo..*hi));
                Ok(y)
            }
            InitialData::File { path } => {
                let full = self.base.join(path);
                let dump = Dump::load(&full)
                    .map_err(|e| Error::config("initial.path", format!("{}: {e}", full.display())))?;
                dump.into_state(g)
            }
        }
    }
}

/// Runs the configuration at `config_path` and returns the exit status.
pub fn execute(config_path: &Path, output_dir: Option<&Path>, seed: Option<u64>) -> u8 {
    let out_fallback = output_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"));
    let cfg = match std::fs::read_to_string(config_path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", config_path.display())))
        .and_then(|t| ExperimentConfig::parse(&t))
    {
        Ok(mut c) => {
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
        Err(e) => return fail_early(&out_fallback, &e),
    };
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = output_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or(out_fallback);
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("popctl: cannot create {}: {e}", out.display());
        return manifest::CONFIG;
    }

    let canonical = serde_json::to_value(&cfg).expect("configuration serializes");
    let mut record = Manifest {
        kind: cfg.kind.as_str().to_string(),
        seed: cfg.seed,
        config_hash: manifest::config_hash(&canonical),
        config: canonical,
        constants: Constants::default(),
        outputs: Vec::new(),
        status: "ok",
        exit_code: manifest::SUCCESS,
        warnings: Vec::new(),
        summary: Value::Null,
    };

    let result = setup(cfg, base, out.clone()).and_then(|ctx| {
        record.constants = constants(&ctx);
        dispatch(&ctx)
    });
    let error = match result {
        Ok(o) => {
            record.outputs = o.outputs;
            record.summary = o.summary;
            record.warnings = o.warnings;
            o.failed_check.map(ErrorRecord::check_failed)
        }
        Err(e) => Some(ErrorRecord::from_error(&e)),
    };
    if let Some(err) = &error {
        record.status = err.category;
        record.exit_code = err.exit_code;
        eprintln!("popctl: {}", err.message);
        record.outputs.push("error.json".into());
        if let Err(e) = manifest::write_json(&out.join("error.json"), err) {
            eprintln!("popctl: cannot write error record: {e}");
        }
    }
    if let Err(e) = manifest::write_json(&out.join("manifest.json"), &record) {
        eprintln!("popctl: cannot write manifest: {e}");
        return manifest::CONFIG;
    }
    record.exit_code
}

/// Failure before the configuration is known: the error record is all we
/// can write.
fn fail_early(out: &Path, e: &Error) -> u8 {
    let rec = ErrorRecord::from_error(e);
    eprintln!("popctl: {}", rec.message);
    if std::fs::create_dir_all(out).is_ok() {
        let _ = manifest::write_json(&out.join("error.json"), &rec);
    }
    rec.exit_code
}

fn setup(cfg: ExperimentConfig, base: PathBuf, out: PathBuf) -> Result<Context> {
    let params = cfg.model.build(&base)?;
    let grid = build_grid(&cfg.grid.to_config(&params))?;
    let support = cfg.support.build();
    Ok(Context {
        cfg,
        base,
        out,
        params,
        grid,
        support,
    })
}

fn constants(ctx: &Context) -> Constants {
    let th = ctx.support.control_time_threshold(&ctx.params);
    Constants {
        t0: th.t0,
        t1: th.t1,
        t_min: th.t_min.is_finite().then_some(th.t_min),
        r_sup: ctx.params.reproductive_sup(ctx.grid.ns).ok(),
    }
}

fn dispatch(ctx: &Context) -> Result<Outcome> {
    match ctx.cfg.kind {
        Kind::Validate => validate(ctx),
        Kind::Geometry => geometry(ctx),
        Kind::Simulate => simulate(ctx),
        Kind::AdjointCheck => adjoint_check(ctx),
        Kind::Hum => hum(ctx),
        Kind::Sweep => sweep(ctx),
        Kind::BlowupProbe => blowup(ctx),
        Kind::Steady => steady(ctx),
        Kind::Staircase => staircase(ctx),
    }
}

fn validate(ctx: &Context) -> Result<Outcome> {
    let declared = ctx.cfg.model.declared()?;
    let mut opts = ValidationOptions {
        grid_cells: Some(ctx.grid.na),
        ..ValidationOptions::default()
    };
    if let Some(f) = ctx.cfg.validate.survival_floor {
        opts.survival_floor = f;
    }
    let report = ctx.params.validate_hypotheses(&declared, &opts);
    let r_sup = ctx.params.reproductive_sup(ctx.grid.ns)?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| c.status == popctl_core::model::CheckStatus::Fail)
        .map(|c| c.hypothesis.tag())
        .collect();
    let mut warnings = report.warnings.clone();
    if r_sup >= 1.0 {
        warnings.push(format!("sup_s R(s) = {r_sup} >= 1: steady-state uniqueness is not guaranteed"));
    }
    Ok(Outcome {
        summary: json!({
            "hypotheses": report
                .checks
                .iter()
                .map(|c| (c.hypothesis.tag().to_string(), json!(c.status)))
                .collect::<serde_json::Map<_, _>>(),
            "checks": report.checks,
            "r_sup": r_sup,
        }),
        warnings,
        failed_check: (!failed.is_empty()).then(|| format!("declared hypotheses fail: {}", failed.join(", "))),
        ..Outcome::default()
    })
}

fn geometry(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.geometry;
    ctx.support.validate(&ctx.params)?;
    let trace = TraceOptions {
        fan: o.fan,
        ..TraceOptions::default()
    };
    let na = o.na.unwrap_or(ctx.grid.na);
    let ns = o.ns.unwrap_or(ctx.grid.ns);
    let report = coverage_report(o.horizon, &ctx.support, &ctx.params, na, ns, &trace)?;
    let file = std::fs::File::create(ctx.path("fates.csv"))?;
    io::write_fate_map(std::io::BufWriter::new(file), &report)?;
    let th = ctx.support.control_time_threshold(&ctx.params);
    Ok(Outcome {
        outputs: vec!["fates.csv".into()],
        summary: json!({
            "horizon": report.horizon,
            "covered_fraction": report.fraction,
            "t_min": th.t_min,
        }),
        warnings: th.warnings,
        ..Outcome::default()
    })
}

fn control_for(ctx: &Context, spec: &ControlSpec, nt: usize) -> Result<Option<ControlField>> {
    let mask = support_mask(&ctx.grid, &ctx.support);
    Ok(match spec {
        ControlSpec::None => None,
        ControlSpec::Constant { value } => {
            Some(ControlField::from_fn(&ctx.grid, nt, &mask, |_, _, _, _| *value))
        }
        ControlSpec::Random { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::config("simulate.control", "random bounds need lo < hi"));
            }
            let mut rng = ctx.rng(2);
            let mut u = ControlField::zeros(&ctx.grid, nt);
            let len = ctx.grid.len();
            for (k, v) in u.data.iter_mut().enumerate() {
                let r = rng.gen_range(*lo..*hi);
                *v = mask[k % len] * r;
            }
            Some(u)
        }
    })
}

#[derive(Serialize)]
struct NewbornRow {
    t: f64,
    stepper_norm: f64,
    volterra_norm: f64,
    difference: f64,
}

fn simulate(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.simulate;
    if o.stride == 0 {
        return Err(Error::config("simulate.stride", "stride must be positive"));
    }
    let nt = ctx.grid.steps_for(o.horizon)?;
    if nt % o.stride != 0 {
        return Err(Error::config(
            "simulate.stride",
            format!("stride {} does not divide the {nt} steps of the horizon", o.stride),
        ));
    }
    let y0 = ctx.initial()?;
    let u = control_for(ctx, &o.control, nt)?;
    let needs_full = o.volterra;
    let scheme = Scheme::new(&ctx.params, &ctx.grid, o.diffusion)?;
    let traj = scheme.run(&y0, u.as_ref(), nt, if needs_full { 1 } else { o.stride })?;
    let mut outputs = vec!["diagnostics.csv".to_string(), "trajectory.bin".to_string()];
    io::save_rows(&ctx.path("diagnostics.csv"), &traj.diagnostics)?;
    let kept: Vec<StateField> = traj
        .snapshots
        .iter()
        .zip(&traj.snapshot_steps)
        .filter(|(_, &n)| n % o.stride == 0)
        .map(|(s, _)| s.clone())
        .collect();
    Dump::states(&kept, &ctx.grid, o.stride as f64 * ctx.grid.h).save(&ctx.path("trajectory.bin"))?;
    if o.write_trajectory_csv {
        let file = std::fs::File::create(ctx.path("trajectory.csv"))?;
        io::write_trajectory(std::io::BufWriter::new(file), &traj, &ctx.grid)?;
        outputs.push("trajectory.csv".into());
    }
    let mut summary = json!({
        "steps": nt,
        "min": traj.min(),
        "linf": traj.linf(),
        "linf_monitor": linf_monitor(&traj, u.as_ref())?,
        "terminal_mass": traj.terminal().mass(&ctx.grid),
    });
    if o.volterra {
        let hist = solve_renewal_volterra(&y0, o.horizon, &ctx.params, &ctx.grid, o.diffusion)?;
        let w = ctx.grid.cell_weight() / ctx.grid.h;
        let (mut num, mut den) = (0.0, 0.0);
        let mut rows = Vec::with_capacity(nt);
        for (n, (a, b)) in hist.layers.iter().zip(traj.newborn_layers()).enumerate() {
            let norm = |v: &[f64]| (w * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            num += diff.iter().map(|d| d * d).sum::<f64>();
            den += b.iter().map(|d| d * d).sum::<f64>();
            rows.push(NewbornRow {
                t: (n + 1) as f64 * ctx.grid.h,
                stepper_norm: norm(&b),
                volterra_norm: norm(a),
                difference: norm(&diff),
            });
        }
        io::save_rows(&ctx.path("newborn.csv"), &rows)?;
        outputs.push("newborn.csv".into());
        let rel = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        summary["volterra_relative_difference"] = json!(rel);
    }
    Ok(Outcome {
        outputs,
        summary,
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct DualityRow {
    trial: usize,
    steps: usize,
    lhs: f64,
    rhs: f64,
    relative_defect: f64,
}

fn adjoint_check(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.adjoint_check;
    let g = &ctx.grid;
    let nt = g.steps_for(o.horizon)?;
    let scheme = Scheme::new(&ctx.params, g, true)?;
    let mask = support_mask(g, &ctx.support);
    let mut rng = ctx.rng(3);
    let mut rows = Vec::with_capacity(o.trials);
    let random_field = |rng: &mut ChaCha8Rng| {
        let mut f = StateField::zeros(g);
        f.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    };
    for trial in 0..o.trials {
        let y0 = random_field(&mut rng);
        let qt = random_field(&mut rng);
        let mut u = ControlField::zeros(g, nt);
        for (k, v) in u.data.iter_mut().enumerate() {
            let r: f64 = rng.gen_range(-1.0..1.0);
            *v = mask[k % g.len()] * r;
        }
        let yt = scheme.run(&y0, Some(&u), nt, nt.max(1))?;
        let adj = scheme.run_adjoint(&qt, nt)?;
        let lhs = yt.terminal().inner(&qt, g);
        let mut rhs = y0.inner(adj.initial(), g);
        for k in 0..nt {
            let uk = StateField::from_vec(g, u.slice(k).to_vec())?;
            rhs += g.h * uk.inner(&adj.states[k + 1], g);
        }
        let scale = yt.terminal().norm(g) * qt.norm(g) + y0.norm(g) * adj.initial().norm(g);
        rows.push(DualityRow {
            trial,
            steps: nt,
            lhs,
            rhs,
            relative_defect: if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 },
        });
    }
    io::save_rows(&ctx.path("duality.csv"), &rows)?;
    let worst = rows.iter().map(|r| r.relative_defect).fold(0.0, f64::max);
    Ok(Outcome {
        outputs: vec!["duality.csv".into()],
        summary: json!({ "max_relative_defect": worst, "tolerance": o.tolerance }),
        failed_check: (worst > o.tolerance)
            .then(|| format!("duality defect {worst:e} exceeds {:e}", o.tolerance)),
        ..Outcome::default()
    })
}

fn hum_config(ctx: &Context, horizon: f64, epsilon: f64) -> HumConfig {
    let o = &ctx.cfg.hum;
    HumConfig {
        tol: o.tol,
        max_iter: o.max_iter,
        diffusion: o.diffusion,
        ..HumConfig::new(ctx.support.clone(), horizon, epsilon)
    }
}

#[derive(Serialize)]
struct ResidualRow {
    iteration: usize,
    residual: f64,
}

fn hum(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.hum;
    let y0 = ctx.initial()?;
    let (_, t) = ctx.grid.snap_horizon(o.horizon);
    let mut warnings = Vec::new();
    if (t - o.horizon).abs() > 1e-12 {
        warnings.push(format!("horizon {} snapped to {t}", o.horizon));
    }
    let cfg = hum_config(ctx, t, o.epsilon);
    let res = synthesize_control(&y0, &cfg, &ctx.params, &ctx.grid)?;
    let rows: Vec<ResidualRow> = res
        .residual_trace
        .iter()
        .enumerate()
        .map(|(iteration, &residual)| ResidualRow { iteration, residual })
        .collect();
    io::save_rows(&ctx.path("cg_residuals.csv"), &rows)?;
    Dump::state(&res.terminal, &ctx.grid).save(&ctx.path("terminal.bin"))?;
    Dump::states(
        &(0..res.control.nt)
            .map(|n| StateField::from_vec(&ctx.grid, res.control.slice(n).to_vec()))
            .collect::<Result<Vec<_>>>()?,
        &ctx.grid,
        ctx.grid.h,
    )
    .save(&ctx.path("control.bin"))?;
    if !res.converged {
        warnings.push(format!("CG stopped after {} iterations without reaching tol", res.iterations));
    }
    Ok(Outcome {
        outputs: vec!["cg_residuals.csv".into(), "terminal.bin".into(), "control.bin".into()],
        summary: json!({
            "requested_horizon": o.horizon,
            "horizon": t,
            "residual": res.residual,
            "free_norm": res.free_norm,
            "residual_ratio": res.residual_ratio(),
            "cost": res.cost,
            "iterations": res.iterations,
            "converged": res.converged,
            "penalty_bound": res.penalty_bound,
            "energy_bound": res.energy_bound,
            "observability": res.observability,
        }),
        warnings,
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct ProbeCsvRow {
    t: f64,
    epsilon: f64,
    cost: f64,
    residual: f64,
    residual_ratio: f64,
    iterations: usize,
}

fn sweep(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.sweep;
    let y0 = ctx.initial()?;
    let base = hum_config(ctx, 0.0, ctx.cfg.hum.epsilon);
    let rows = threshold_sweep(&y0, &base, &o.horizons, &ctx.params, &ctx.grid)?;
    io::save_rows(&ctx.path("sweep.csv"), &rows)?;
    let mut outputs = vec!["sweep.csv".to_string()];
    let mut slopes = Vec::new();
    if !o.epsilons.is_empty() && !o.probe_horizons.is_empty() {
        let mut probe_rows = Vec::new();
        for &t in &o.probe_horizons {
            let probe = cost_blowup_probe(&y0, &hum_config(ctx, t, 0.0), &o.epsilons, &ctx.params, &ctx.grid)?;
            slopes.push(json!({ "t": probe.t, "cost_slope": probe.cost_slope, "residual_slope": probe.residual_slope }));
            probe_rows.extend(probe.rows.iter().map(|r| ProbeCsvRow {
                t: probe.t,
                epsilon: r.epsilon,
                cost: r.cost,
                residual: r.residual,
                residual_ratio: r.residual_ratio,
                iterations: r.iterations,
            }));
        }
        io::save_rows(&ctx.path("cost_probe.csv"), &probe_rows)?;
        outputs.push("cost_probe.csv".into());
    }
    let warnings = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("T = {}: {e}", r.t)))
        .collect();
    Ok(Outcome {
        outputs,
        summary: json!({
            "rows": rows.len(),
            "t_min": rows.first().map(|r| r.t_min),
            "probes": slopes,
        }),
        warnings,
        ..Outcome::default()
    })
}

/// Multiplies the fertility kernel by `c`, optionally replacing the newborn
/// profile of a separable kernel.
fn scale_kernel(beta: &FertilityKernel, c: f64, newborn: Option<&Profile>) -> Result<FertilityKernel> {
    let scale_profile = |p: &Profile| match p {
        Profile::Constant { value } => Profile::Constant { value: value * c },
        Profile::Indicator { lo, hi, value } => Profile::Indicator {
            lo: *lo,
            hi: *hi,
            value: value * c,
        },
        Profile::Table { values } => Profile::Table {
            values: values.iter().map(|v| v * c).collect(),
        },
    };
    match beta {
        FertilityKernel::Zero => Err(Error::config(
            "blowup-probe.r_values",
            "a zero kernel cannot be rescaled to a target offspring number",
        )),
        FertilityKernel::Separable {
            age,
            parent_size,
            newborn_size,
        } => Ok(FertilityKernel::Separable {
            age: scale_profile(age),
            parent_size: parent_size.clone(),
            newborn_size: newborn.unwrap_or(newborn_size).clone(),
        }),
        FertilityKernel::Table { na, ns, values } => Ok(FertilityKernel::Table {
            na: *na,
            ns: *ns,
            values: values.iter().map(|v| v * c).collect(),
        }),
    }
}

#[derive(Serialize)]
struct NormRow {
    r: f64,
    t: f64,
    norm: f64,
}

fn blowup(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.blowup;
    let y0 = ctx.initial()?;
    let newborn = if o.keep_newborn_profile {
        None
    } else {
        if !(o.newborn_max > 0.0 && o.newborn_max <= ctx.params.max_size) {
            return Err(Error::config("blowup-probe.newborn_max", "must lie in (0, S]"));
        }
        Some(Profile::Indicator {
            lo: 0.0,
            hi: o.newborn_max,
            value: 1.0 / o.newborn_max,
        })
    };
    let base = ctx.params.clone().with_fertility(scale_kernel(&ctx.params.beta, 1.0, newborn.as_ref())?);
    let unit = base.reproductive_total()?;
    if !(unit > 0.0) {
        return Err(Error::config("model.beta", "offspring number of the kernel is not positive"));
    }
    let opts = BlowupOptions {
        source: o.source,
        tail: o.tail,
        ..BlowupOptions::default()
    };
    let mut reports = Vec::new();
    let mut norms = Vec::new();
    for &r in &o.r_values {
        let params = base.clone().with_fertility(scale_kernel(&base.beta, r / unit, None)?);
        let rep = detect_blowup(&y0, &params, &ctx.grid, o.horizon, &opts)?;
        norms.extend(rep.times.iter().zip(&rep.norms).map(|(&t, &norm)| NormRow { r, t, norm }));
        reports.push(json!({
            "target_r": r,
            "r": rep.r,
            "r_sup": rep.r_sup,
            "rate": rep.rate,
            "verdict": rep.verdict,
            "reduction_applies": rep.reduction_applies,
            "note": rep.note,
        }));
    }
    io::save_rows(&ctx.path("growth.csv"), &norms)?;
    Ok(Outcome {
        outputs: vec!["growth.csv".into()],
        summary: json!({ "runs": reports }),
        ..Outcome::default()
    })
}

/// The configured model, or its `mu2 = 0` variant used for steady states.
fn steady_params(ctx: &Context, full: bool) -> PopulationParams {
    if full {
        ctx.params.clone()
    } else {
        ctx.params.clone().with_size_mortality(MortalityRate::Zero)
    }
}

fn steady_options(ctx: &Context) -> SteadyOptions {
    SteadyOptions {
        tol: ctx.cfg.steady.tol,
        max_iter: ctx.cfg.steady.max_iter,
        ..SteadyOptions::default()
    }
}

#[derive(Serialize)]
struct ChangeRow {
    iteration: usize,
    change: f64,
}

fn steady(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.steady;
    let params = steady_params(ctx, o.full_mortality);
    let u = StateField::from_fn(&ctx.grid, |_, _, _| o.u_steady);
    let st = solve_steady(&u, &params, &ctx.grid, &steady_options(ctx))?;
    let rows: Vec<ChangeRow> = st
        .changes
        .iter()
        .enumerate()
        .map(|(i, &change)| ChangeRow { iteration: i + 1, change })
        .collect();
    io::save_rows(&ctx.path("iterations.csv"), &rows)?;
    Dump::state(&st.p, &ctx.grid).save(&ctx.path("steady.bin"))?;
    Ok(Outcome {
        outputs: vec!["iterations.csv".into(), "steady.bin".into()],
        summary: steady_summary(&st),
        warnings: st.warnings.clone(),
        ..Outcome::default()
    })
}

fn steady_summary(st: &SteadyState) -> Value {
    json!({
        "iterations": st.iterations,
        "residual": st.residual,
        "contraction": st.contraction,
        "r_sup": st.r_sup,
        "rho0": st.rho0,
        "a_star": st.a_star,
        "s1_star": st.s1_star,
        "s2_star": st.s2_star,
        "linf": st.p.linf(),
    })
}

#[derive(Serialize)]
struct PlanRow {
    leg: usize,
    t_start: f64,
    t_end: f64,
    target_linf: f64,
    control_linf: f64,
}

fn staircase(ctx: &Context) -> Result<Outcome> {
    let o = &ctx.cfg.staircase;
    let params = steady_params(ctx, o.full_mortality);
    let so = steady_options(ctx);
    let steady_at = |u: f64| solve_steady(&StateField::from_fn(&ctx.grid, |_, _, _| u), &params, &ctx.grid, &so);
    let g_s = steady_at(o.u_start)?;
    let g_f = steady_at(o.u_final)?;
    let t_star = match o.t_star {
        Some(t) => t,
        None => {
            let t_min = ctx.support.control_time_threshold(&params).t_min;
            ctx.grid.snap_horizon(t_min + 0.2).1
        }
    };
    let opts = StaircaseOptions {
        delta: o.delta,
        delta_fraction: o.delta_fraction,
        epsilon: o.epsilon,
        tol: o.tol,
        max_iter: o.max_iter,
        legs: o.legs,
        max_legs: o.max_legs,
        seed: ctx.cfg.seed,
        ..StaircaseOptions::new(ctx.support.clone(), t_star)
    };
    let plan = plan_staircase(&g_s, &g_f, &opts, &params, &ctx.grid)?;
    let run_opts = RunOptions {
        residual_tol: o.residual_tol,
        ..RunOptions::default()
    };
    let run = run_staircase(&plan, &params, &ctx.grid, &opts.hum_config(), &run_opts)?;

    let plan_rows: Vec<PlanRow> = (1..=plan.legs)
        .map(|j| PlanRow {
            leg: j,
            t_start: (j - 1) as f64 * plan.t_star,
            t_end: j as f64 * plan.t_star,
            target_linf: plan.target(j).linf(),
            control_linf: leg_physical_control(&plan, &run, j).linf(),
        })
        .collect();
    io::save_rows(&ctx.path("plan.csv"), &plan_rows)?;
    io::save_rows(&ctx.path("legs.csv"), &run.legs)?;
    Dump::states(&run.states, &ctx.grid, run.state_stride as f64 * plan.t_star).save(&ctx.path("staircase.bin"))?;
    let summary = json!({
        "legs": plan.legs,
        "t_star": plan.t_star,
        "t_min": plan.t_min,
        "delta": plan.delta,
        "floor": plan.floor,
        "r_hat": plan.r_hat,
        "total_gap": plan.total_gap,
        "probes": plan.probes,
        "hum_residual_ratio": run.hum.residual_ratio(),
        "hum_iterations": run.hum.iterations,
        "final_relative_error": run.final_relative_error,
        "min": run.min,
        "linearity_error": run.linearity_error,
        "steady_drift": run.steady_drift,
    });
    Ok(Outcome {
        outputs: vec!["plan.csv".into(), "legs.csv".into(), "staircase.bin".into()],
        summary,
        failed_check: run.check_positivity(o.positivity_tol).err().map(|e| e.to_string()),
        ..Outcome::default()
    })
}
