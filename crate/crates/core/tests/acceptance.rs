//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --release --test acceptance -- 3 7` runs a subset. With
//! `ACCEPTANCE_STRICT=1` any failure gives a nonzero exit status.

use std::time::Instant;

use popctl_core::equilibria::{detect_blowup, solve_steady, BlowupOptions, SteadyOptions};
use popctl_core::forward::{support_mask, ControlField, Scheme};
use popctl_core::hum::{cost_blowup_probe, CostProbe, HumProblem};
use popctl_core::staircase::{plan_staircase, run_staircase, RunOptions, StaircaseOptions};
use popctl_core::{
    build_grid, solve_renewal_volterra, trace_backward_characteristic, ControlSupport, FateKind,
    FertilityKernel, Grid, GridConfig, HumConfig, MortalityRate, PopulationParams, Profile,
    SpatialPatch, StateField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn grid1(nx: usize, n: usize) -> Grid {
    build_grid(&GridConfig {
        nx: vec![nx],
        extent: vec![1.0],
        na: n,
        ns: n,
        max_age: 1.0,
        max_size: 1.0,
    })
    .unwrap()
}

fn random_field(g: &Grid, rng: &mut ChaCha8Rng, lo: f64) -> StateField {
    StateField::from_vec(g, (0..g.len()).map(|_| rng.gen_range(lo..1.0)).collect()).unwrap()
}

fn reference_box() -> ControlSupport {
    ControlSupport::boxed(0.1, 0.5, 0.1, 0.9, SpatialPatch::interval(0.3, 0.7))
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let p = PopulationParams::reference(5.0);
    let mut worst: f64 = 0.0;
    for (nx, n) in [(4, 8), (8, 16)] {
        let g = grid1(nx, n);
        let mask = support_mask(&g, &reference_box());
        for diffusion in [true, false] {
            let scheme = Scheme::new(&p, &g, diffusion).unwrap();
            for _ in 0..10 {
                let nt = rng.gen_range(1..=2 * n);
                let y0 = random_field(&g, &mut rng, -1.0);
                let qt = random_field(&g, &mut rng, -1.0);
                let mut u = ControlField::zeros(&g, nt);
                for (k, v) in u.data.iter_mut().enumerate() {
                    *v = mask[k % g.len()] * rng.gen_range(-1.0..1.0);
                }
                let yt = scheme.run(&y0, Some(&u), nt, nt).unwrap();
                let adj = scheme.run_adjoint(&qt, nt).unwrap();
                let lhs = yt.terminal().inner(&qt, &g);
                let mut rhs = y0.inner(adj.initial(), &g);
                for k in 0..nt {
                    let uk = StateField::from_vec(&g, u.slice(k).to_vec()).unwrap();
                    rhs += g.h * uk.inner(&adj.states[k + 1], &g);
                }
                let scale = yt.terminal().norm(&g) * qt.norm(&g)
                    + y0.norm(&g) * adj.initial().norm(&g);
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    check(worst <= 1e-10, format!("max relative defect {worst:.2e} (bound 1e-10)"))
}

fn positivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let g = grid1(4, 16);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let p = PopulationParams::reference(rng.gen_range(0.0..10.0));
        let a1 = rng.gen_range(0.0..0.8);
        let s1 = rng.gen_range(0.0..0.8);
        let x1 = rng.gen_range(0.0..0.7);
        let support = ControlSupport::boxed(
            a1,
            rng.gen_range(a1 + 0.05..1.0),
            s1,
            rng.gen_range(s1 + 0.05..1.0),
            SpatialPatch::interval(x1, rng.gen_range(x1 + 0.1..1.0)),
        );
        let mask = support_mask(&g, &support);
        let nt = rng.gen_range(1..=32);
        let y0 = random_field(&g, &mut rng, 0.0);
        let mut u = ControlField::zeros(&g, nt);
        for (k, v) in u.data.iter_mut().enumerate() {
            *v = mask[k % g.len()] * rng.gen_range(0.0..5.0);
        }
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let traj = scheme.run(&y0, Some(&u), nt, 1).unwrap();
        worst = worst.min(traj.min());
    }
    check(worst >= -1e-12, format!("min over 200 runs {worst:.3e} (bound -1e-12)"))
}

/// `pi(r) = 1 - r` for the reference rates, written out independently.
fn linear_survival_ratio(r: f64, t: f64) -> f64 {
    (1.0 - r) / (1.0 - r + t)
}

fn transport_decay() -> Outcome {
    let p = PopulationParams::reference(0.0).with_fertility(FertilityKernel::Zero);
    let g = grid1(4, 32);
    let y0 = StateField::from_fn(&g, |x, a, s| (1.0 + x[0]) * (2.0 + (3.0 * a).sin()) * (1.0 + s * s));
    let scheme = Scheme::new(&p, &g, false).unwrap();
    let mut exact_err: f64 = 0.0;
    let steps = 20;
    let traj = scheme.run(&y0, None, steps, 1).unwrap();
    for (n, y) in traj.snapshots.iter().enumerate() {
        let t = n as f64 * g.h;
        for i in 0..g.na {
            for j in 0..g.ns {
                for q in 0..4 {
                    let expected = if i >= n && j >= n {
                        linear_survival_ratio(g.age(i), t)
                            * linear_survival_ratio(g.size(j), t)
                            * y0.at(i - n, j - n, q)
                    } else {
                        0.0
                    };
                    exact_err = exact_err.max((y.at(i, j, q) - expected).abs() / expected.abs().max(1.0));
                }
            }
        }
    }

    // cos(pi x) on cell centres is an exact eigenvector of the discrete
    // Neumann Laplacian, so the only error left is the time splitting
    let nx = 16;
    let horizon = 0.5;
    let mut errs = Vec::new();
    for n in [32, 64, 128] {
        let g = grid1(nx, n);
        let lam = (2.0 - 2.0 * (std::f64::consts::PI * g.dx[0]).cos()) / (g.dx[0] * g.dx[0]);
        let f = |a: f64, s: f64| (-(8.0 * (a - 0.2)).powi(2) - (8.0 * (s - 0.25)).powi(2)).exp();
        let y0 = StateField::from_fn(&g, |x, a, s| f(a, s) * (std::f64::consts::PI * x[0]).cos());
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let nt = g.steps_for(horizon).unwrap();
        let yt = scheme.run(&y0, None, nt, nt).unwrap();
        let exact = StateField::from_fn(&g, |x, a, s| {
            if a < horizon || s < horizon {
                return 0.0;
            }
            linear_survival_ratio(a, horizon)
                * linear_survival_ratio(s, horizon)
                * f(a - horizon, s - horizon)
                * (-lam * horizon).exp()
                * (std::f64::consts::PI * x[0]).cos()
        });
        let mut d = yt.terminal().clone();
        d.axpy(-1.0, &exact);
        errs.push(d.norm(&g) / exact.norm(&g));
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        exact_err <= 1e-12 && min_order >= 0.9,
        format!(
            "closed-form defect {exact_err:.2e} (bound 1e-12); splitting errors {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3} (bound 0.9)",
            errs[0], errs[1], errs[2], orders[0], orders[1]
        ),
    )
}

fn reference_y0(g: &Grid) -> StateField {
    StateField::from_fn(g, |x, _, _| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).cos())
}

fn volterra() -> Outcome {
    let p = PopulationParams::reference(5.0);
    let g = grid1(16, 64);
    let y0 = reference_y0(&g);
    let horizon = 0.5;
    let hist = solve_renewal_volterra(&y0, horizon, &p, &g, true).unwrap();
    let nt = g.steps_for(horizon).unwrap();
    let traj = Scheme::new(&p, &g, true).unwrap().run(&y0, None, nt, 1).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in hist.layers.iter().zip(traj.newborn_layers()) {
        for (x, y) in a.iter().zip(&b) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    let rel = (num / den).sqrt();
    let bound = 5.0 * g.h;
    check(rel <= bound, format!("relative L2 difference {rel:.3e} (bound 5 dt = {bound:.3e})"))
}

fn hum_base(support: ControlSupport, horizon: f64) -> HumConfig {
    HumConfig {
        tol: 1e-6,
        max_iter: 3000,
        ..HumConfig::new(support, horizon, 1e-6)
    }
}

const EPSILONS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

fn probe_summary(p: &CostProbe) -> String {
    let costs: Vec<String> = p.rows.iter().map(|r| format!("{:.2e}", r.cost)).collect();
    format!("T={:.4} slope {:.3} costs [{}]", p.t, p.cost_slope, costs.join(" "))
}

fn box_threshold() -> Outcome {
    let p = PopulationParams::reference(5.0);
    let g = grid1(16, 64);
    let y0 = reference_y0(&g);
    let support = reference_box();
    let t_min = support.control_time_threshold(&p).t_min;
    let short = cost_blowup_probe(&y0, &hum_base(support.clone(), 0.3), &EPSILONS, &p, &g).unwrap();
    let long = cost_blowup_probe(&y0, &hum_base(support, 1.2), &EPSILONS, &p, &g).unwrap();
    let (rs, rl) = (
        short.rows.last().unwrap().residual_ratio,
        long.rows.last().unwrap().residual_ratio,
    );
    let checks = [
        (rl <= 0.05, format!("ratio(T=1.2) {rl:.3e} <= 0.05")),
        (rs >= 5.0 * rl, format!("ratio(T=0.3)/ratio(T=1.2) = {:.1} >= 5", rs / rl)),
        (short.cost_slope <= -0.3, format!("slope(T=0.3) {:.3} <= -0.3", short.cost_slope)),
        (long.cost_slope.abs() <= 0.15, format!("|slope(T=1.2)| {:.3} <= 0.15", long.cost_slope.abs())),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
    let mut detail = format!(
        "T_min {t_min:.3}; {}; {}; {}",
        checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join(", "),
        probe_summary(&short),
        probe_summary(&long)
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    check(failed.is_empty(), detail)
}

fn oblique_threshold() -> Outcome {
    let p = PopulationParams::reference_oblique(5.0, 0.6);
    let g = grid1(16, 64);
    let y0 = reference_y0(&g);
    let support = ControlSupport::oblique(0.1, 0.9, 0.5, 0.6, SpatialPatch::interval(0.3, 0.7));
    let t_min = support.control_time_threshold(&p).t_min;
    let run = |t: f64| {
        let base = hum_base(support.clone(), t);
        let probe = cost_blowup_probe(&y0, &base, &[1e-6], &p, &g).unwrap();
        probe.rows[0].residual_ratio
    };
    let (long, short) = (run(1.0), run(0.3));
    check(
        (t_min - 0.6).abs() < 1e-12 && short >= 5.0 * long,
        format!(
            "T_min {t_min:.6}; ratio(T=1.0) {long:.3e}, ratio(T=0.3) {short:.3e}, separation {:.1} (bound 5)",
            short / long
        ),
    )
}

fn steady_params() -> PopulationParams {
    PopulationParams::reference(5.0).with_size_mortality(MortalityRate::Zero)
}

fn steady_state() -> Outcome {
    let p = steady_params();
    let g = grid1(16, 64);
    let opts = SteadyOptions::default();
    let zero = solve_steady(&StateField::zeros(&g), &p, &g, &opts).unwrap();
    let zero_exact = zero.p.data.iter().all(|&v| v == 0.0);
    let u = StateField::from_fn(&g, |_, _, _| 1.0);
    let st = solve_steady(&u, &p, &g, &opts).unwrap();
    let scheme = Scheme::new(&p, &g, true).unwrap();
    let nt = g.steps_for(1.0).unwrap();
    let mut y = st.p.data.clone();
    let mut next = vec![0.0; y.len()];
    let mut drift: f64 = 0.0;
    for _ in 0..nt {
        scheme.step_into(&y, Some(&u.data), &mut next);
        std::mem::swap(&mut y, &mut next);
        drift = y.iter().zip(&st.p.data).fold(drift, |m, (a, b)| m.max((a - b).abs()));
    }
    check(
        st.contraction <= 0.56 && drift < 5.0 * opts.tol && zero_exact,
        format!(
            "sup R {:.4}, contraction {:.4} (bound 0.56), drift {drift:.2e} (bound {:.1e}), zero control gives zero: {zero_exact}",
            st.r_sup,
            st.contraction,
            5.0 * opts.tol
        ),
    )
}

/// Age-only fertility with newborns concentrated at small sizes.
fn blowup_params(r: f64) -> PopulationParams {
    let base = PopulationParams::reference(1.0).with_size_mortality(MortalityRate::Zero);
    let unit = base.reproductive_total().unwrap();
    base.with_fertility(FertilityKernel::Separable {
        age: Profile::Indicator {
            lo: 0.55,
            hi: 1.0,
            value: r / unit,
        },
        parent_size: Profile::Constant { value: 1.0 },
        newborn_size: Profile::Indicator {
            lo: 0.0,
            hi: 0.1,
            value: 10.0,
        },
    })
}

fn blowup() -> Outcome {
    let g = grid1(4, 32);
    let y0 = StateField::from_fn(&g, |_, _, _| 1.0);
    let opts = BlowupOptions::default();
    let lo = detect_blowup(&y0, &blowup_params(0.5), &g, 5.0, &opts).unwrap();
    let hi = detect_blowup(&y0, &blowup_params(2.0), &g, 5.0, &opts).unwrap();
    check(
        lo.rate < 0.0 && hi.rate > 0.0,
        format!(
            "R = {:.3}: rate {:.4} ({:?}); R = {:.3}: rate {:.4} ({:?})",
            lo.r, lo.rate, lo.verdict, hi.r, hi.rate, hi.verdict
        ),
    )
}

fn staircase() -> Outcome {
    let p = steady_params();
    let g = grid1(8, 32);
    let so = SteadyOptions::default();
    let steady = |u: f64| solve_steady(&StateField::from_fn(&g, |_, _, _| u), &p, &g, &so).unwrap();
    let (lo, hi) = (steady(0.5), steady(1.0));
    let opts = StaircaseOptions {
        tol: 1e-6,
        max_iter: 2000,
        ..StaircaseOptions::new(reference_box(), 1.0)
    };
    let run_opts = RunOptions::default();
    let plan = plan_staircase(&hi, &lo, &opts, &p, &g).unwrap();
    let run = run_staircase(&plan, &p, &g, &opts.hum_config(), &run_opts).unwrap();
    let single = plan_staircase(
        &hi,
        &lo,
        &StaircaseOptions {
            legs: Some(1),
            ..opts.clone()
        },
        &p,
        &g,
    )
    .unwrap();
    let single_run = run_staircase(&single, &p, &g, &opts.hum_config(), &run_opts).unwrap();
    let checks = [
        (run.final_relative_error <= 0.05, format!("final error {:.2e} <= 0.05", run.final_relative_error)),
        (run.min.value >= -1e-10, format!("min {:.3e} >= -1e-10", run.min.value)),
        (
            single_run.min.value < -1e-10,
            format!("M = 1 min {:.3e} < -1e-10", single_run.min.value),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
    let mut detail = format!(
        "delta {:.4}, R_hat {:.2}, M = {}, linearity {:.1e}; {}",
        plan.delta,
        plan.r_hat,
        plan.legs,
        run.linearity_error,
        checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join(", ")
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    check(failed.is_empty(), detail)
}

/// First event along `(a + e, s + e)` found by uniform sampling of `e`.
fn dense_oracle(a: f64, s: f64, t: f64, support: &ControlSupport, samples: usize) -> (FateKind, f64) {
    let step = t / samples as f64;
    for k in 0..=samples {
        let e = k as f64 * step;
        if support.contains_age_size(a + e, s + e) {
            return (FateKind::EntersSupport, e);
        }
        if s + e >= 1.0 {
            return (FateKind::ExitsSizeBoundary, e);
        }
        if a + e >= 1.0 {
            return (FateKind::RenewsAtMaxAge, e);
        }
    }
    (FateKind::ReachesTimeZero, t)
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let p = PopulationParams::reference(5.0);
    let samples = 10_000;
    let mut mismatches = 0;
    for k in 0..1000 {
        let support = if k % 2 == 0 {
            reference_box()
        } else {
            ControlSupport::oblique(0.1, 0.9, 0.5, 0.6, SpatialPatch::interval(0.3, 0.7))
        };
        let (a, s, t) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..2.0));
        let fate = trace_backward_characteristic(a, s, t, &support, &p, 0, &Default::default()).unwrap();
        let (kind, e) = dense_oracle(a, s, t, &support, samples);
        if fate.kind != kind || (fate.event_time - e).abs() > t / samples as f64 {
            mismatches += 1;
        }
    }
    let mut formula_err: f64 = 0.0;
    for _ in 0..100 {
        let a1 = rng.gen_range(0.0..0.5);
        let a2 = rng.gen_range(a1 + 0.01..1.0);
        let s1 = rng.gen_range(0.0..0.5);
        let s2 = rng.gen_range(s1 + 0.01..1.0);
        let sup = ControlSupport::boxed(a1, a2, s1, s2, SpatialPatch::interval(0.0, 1.0));
        let th = sup.control_time_threshold(&p);
        let t0 = f64::max(s1, 1.0 - s2);
        let t1 = f64::max(a1 + 1.0 - s2, s1);
        let tmin = 1.0 - a2 + t1 + t0;
        formula_err = formula_err
            .max((th.t0.unwrap() - t0).abs())
            .max((th.t1.unwrap() - t1).abs())
            .max((th.t_min - tmin).abs());
    }
    check(
        mismatches == 0 && formula_err <= 1e-14,
        format!("{mismatches} of 1000 traces disagree with the sampler; max formula defect {formula_err:.1e}"),
    )
}

fn hum_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let p = PopulationParams::reference(5.0);
    let g = grid1(4, 8);
    let scheme = Scheme::new(&p, &g, true).unwrap();
    let y0 = random_field(&g, &mut rng, 0.0);
    let mut prob = HumProblem::new(&scheme, &y0, &reference_box(), 8, 1e-3).unwrap();
    let q = random_field(&g, &mut rng, -1.0).data;
    let grad = prob.gradient(&q).unwrap();
    let w = prob.weight();
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for _ in 0..10 {
        let dir: Vec<f64> = (0..q.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |c: f64| q.iter().zip(&dir).map(|(a, d)| a + c * d).collect::<Vec<_>>();
        let fd = (prob.objective(&shifted(h)).unwrap() - prob.objective(&shifted(-h)).unwrap()) / (2.0 * h);
        let an = w * grad.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max((fd - an).abs() / an.abs());
    }
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 10 directions (bound 1e-5)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("discrete duality", duality),
        ("positivity", positivity),
        ("transport-decay exactness", transport_decay),
        ("Volterra cross-check", volterra),
        ("box support threshold", box_threshold),
        ("oblique support threshold", oblique_threshold),
        ("steady state", steady_state),
        ("blow-up dichotomy", blowup),
        ("staircase", staircase),
        ("geometry oracle", geometry),
        ("HUM gradient", hum_gradient),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        if !out.pass {
            failures += 1;
        }
        println!(
            "{} [{id:>2}] {name} ({secs:.1} s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("acceptance: {failures} criteria failed");
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
