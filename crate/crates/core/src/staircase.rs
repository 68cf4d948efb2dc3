//! Steady-to-steady transfer through convexly interpolated steady states.
//!
//! Each leg steers `g_{j-1}` to `g_j = (1 - j/M) g_s + (j/M) g_f` by adding
//! a null control of the difference system to the interpolated steady
//! control. All legs share the difference datum `(g_s - g_f) / M`, so one
//! synthesis serves every leg.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibria::SteadyState;
use crate::error::{Error, Result};
use crate::forward::{ControlField, Scheme};
use crate::geometry::ControlSupport;
use crate::grid::{Grid, StateField};
use crate::hum::{synthesize_with, HumConfig, HumResult};
use crate::model::PopulationParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseOptions {
    /// Lower bound of both endpoints on the common box; measured when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Fraction of the measured floor used as `delta`.
    #[serde(default = "one")]
    pub delta_fraction: f64,
    pub t_star: f64,
    pub support: ControlSupport,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Forces the leg count, bypassing the sizing rule.
    #[serde(default)]
    pub legs: Option<usize>,
    #[serde(default = "default_max_legs")]
    pub max_legs: usize,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    400
}
fn default_max_legs() -> usize {
    100_000
}
fn default_safety() -> f64 {
    2.0
}

impl StaircaseOptions {
    pub fn new(support: ControlSupport, t_star: f64) -> Self {
        Self {
            delta: None,
            delta_fraction: 1.0,
            t_star,
            support,
            epsilon: default_epsilon(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            legs: None,
            max_legs: default_max_legs(),
            safety: default_safety(),
            seed: 0,
        }
    }

    pub fn hum_config(&self) -> HumConfig {
        HumConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            ..HumConfig::new(self.support.clone(), self.t_star, self.epsilon)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub label: String,
    pub ratio: f64,
    pub residual_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct StaircasePlan {
    pub g_s: StateField,
    pub g_f: StateField,
    pub u_s: StateField,
    pub u_f: StateField,
    pub legs: usize,
    pub t_star: f64,
    pub nt: usize,
    pub t_min: f64,
    pub delta: f64,
    /// Smallest endpoint value on the common box.
    pub floor: f64,
    pub a_star: f64,
    pub s1_star: f64,
    pub s2_star: f64,
    /// Safety-scaled response bound used to size the leg count.
    pub r_hat: f64,
    pub probes: Vec<ProbeResponse>,
    /// `||g_s - g_f||_inf`.
    pub total_gap: f64,
    pub support: ControlSupport,
}

impl StaircasePlan {
    /// `(1 - j/M) g_s + (j/M) g_f`.
    pub fn target(&self, j: usize) -> StateField {
        interpolate(&self.g_s, &self.g_f, j, self.legs)
    }

    pub fn steady_control(&self, j: usize) -> StateField {
        interpolate(&self.u_s, &self.u_f, j, self.legs)
    }

    /// Sup-norm gap between consecutive targets.
    pub fn leg_gap(&self) -> f64 {
        self.total_gap / self.legs as f64
    }

    /// Difference datum shared by every leg.
    pub fn leg_datum(&self) -> StateField {
        let mut d = self.g_s.clone();
        d.axpy(-1.0, &self.g_f);
        d.scale(1.0 / self.legs as f64);
        d
    }
}

fn interpolate(a: &StateField, b: &StateField, j: usize, m: usize) -> StateField {
    if j == 0 {
        return a.clone();
    }
    if j == m {
        return b.clone();
    }
    let t = j as f64 / m as f64;
    let mut out = a.clone();
    out.data
        .iter_mut()
        .zip(&b.data)
        .for_each(|(x, y)| *x = (1.0 - t) * *x + t * y);
    out
}

/// Common box of the two steady-state reports and the smallest endpoint
/// value on it.
fn common_floor(g_s: &SteadyState, g_f: &SteadyState, grid: &Grid) -> (f64, f64, f64, f64) {
    let a_star = g_s.a_star.min(g_f.a_star);
    let s1 = g_s.s1_star.max(g_f.s1_star);
    let s2 = g_s.s2_star.min(g_f.s2_star);
    let rows = (a_star / grid.h).round() as usize;
    let (j1, j2) = ((s1 / grid.h).round() as usize, (s2 / grid.h).round() as usize);
    let np = grid.nspace();
    let mut floor = f64::INFINITY;
    for i in 0..rows {
        for j in j1..j2 {
            let at = grid.idx(i, j, 0);
            for k in at..at + np {
                floor = floor.min(g_s.p.data[k]).min(g_f.p.data[k]);
            }
        }
    }
    if !floor.is_finite() {
        floor = 0.0;
    }
    (floor, a_star, s1, s2)
}

/// `(||y||_inf + ||u||_inf) / ||y0||_inf` for the synthesized control.
fn response(scheme: &Scheme, y0: &StateField, hum: &HumConfig, nt: usize) -> Result<(f64, HumResult)> {
    let res = synthesize_with(scheme, y0, hum, nt)?;
    let traj = scheme.run(y0, Some(&res.control), nt, nt)?;
    Ok(((traj.linf() + res.control.linf()) / y0.linf(), res))
}

pub fn plan_staircase(
    g_s: &SteadyState,
    g_f: &SteadyState,
    opts: &StaircaseOptions,
    params: &PopulationParams,
    grid: &Grid,
) -> Result<StaircasePlan> {
    g_s.p.check_grid(grid)?;
    g_f.p.check_grid(grid)?;
    opts.support.validate(params)?;
    let nt = grid.steps_for(opts.t_star)?;
    let threshold = opts.support.control_time_threshold(params);
    if opts.t_star <= threshold.t_min {
        return Err(Error::config(
            "staircase.t_star",
            format!("leg horizon {} does not exceed the control threshold {}", opts.t_star, threshold.t_min),
        ));
    }
    let (floor, a_star, s1_star, s2_star) = common_floor(g_s, g_f, grid);
    let delta = match opts.delta {
        Some(d) => {
            if !(d > 0.0) {
                return Err(Error::config("staircase.delta", "delta must be positive"));
            }
            d
        }
        None => opts.delta_fraction * floor,
    };
    if !(floor >= delta && delta > 0.0) {
        return Err(Error::PlanRejected {
            delta,
            a_star,
            s1_star,
            s2_star,
            found: floor,
        });
    }

    let mut diff = g_s.p.clone();
    diff.axpy(-1.0, &g_f.p);
    let total_gap = diff.linf();
    let base = PlanBase {
        g_s,
        g_f,
        nt,
        t_min: threshold.t_min,
        delta,
        floor,
        a_star,
        s1_star,
        s2_star,
        total_gap,
        opts,
    };
    if total_gap == 0.0 {
        return Ok(base.finish(opts.legs.unwrap_or(1), 0.0, Vec::new()));
    }

    let scheme = Scheme::new(params, grid, true)?;
    let hum = opts.hum_config();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random = StateField::from_vec(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let constant = StateField::from_fn(grid, |_, _, _| 1.0);
    let mut probes = Vec::new();
    let mut worst: f64 = 0.0;
    for (label, y0) in [("difference", &diff), ("random", &random), ("constant", &constant)] {
        let (ratio, res) = response(&scheme, y0, &hum, nt)?;
        worst = worst.max(ratio);
        probes.push(ProbeResponse {
            label: label.into(),
            ratio,
            residual_ratio: res.residual_ratio(),
        });
    }
    let r_hat = opts.safety * worst;
    let legs = match opts.legs {
        Some(m) => m.max(1),
        None => {
            let need = total_gap * r_hat / delta;
            // guard against round-off pushing an exact quotient up by one
            let m = (need * (1.0 - 1e-12)).ceil().max(1.0);
            if m > opts.max_legs as f64 {
                return Err(Error::config(
                    "staircase.max_legs",
                    format!("sizing rule needs {m} legs, above the limit {}", opts.max_legs),
                ));
            }
            m as usize
        }
    };
    Ok(base.finish(legs, r_hat, probes))
}

struct PlanBase<'a> {
    g_s: &'a SteadyState,
    g_f: &'a SteadyState,
    nt: usize,
    t_min: f64,
    delta: f64,
    floor: f64,
    a_star: f64,
    s1_star: f64,
    s2_star: f64,
    total_gap: f64,
    opts: &'a StaircaseOptions,
}

impl PlanBase<'_> {
    fn finish(self, legs: usize, r_hat: f64, probes: Vec<ProbeResponse>) -> StaircasePlan {
        StaircasePlan {
            g_s: self.g_s.p.clone(),
            g_f: self.g_f.p.clone(),
            u_s: self.g_s.u_steady.clone(),
            u_f: self.g_f.u_steady.clone(),
            legs,
            t_star: self.opts.t_star,
            nt: self.nt,
            t_min: self.t_min,
            delta: self.delta,
            floor: self.floor,
            a_star: self.a_star,
            s1_star: self.s1_star,
            s2_star: self.s2_star,
            r_hat,
            probes,
            total_gap: self.total_gap,
            support: self.opts.support.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegReport {
    pub leg: usize,
    /// `||y - g_j||` at the end of the leg.
    pub terminal_error: f64,
    pub min: f64,
    pub linf_state: f64,
    pub linf_control: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub leg: usize,
    pub step: usize,
    pub x: Vec<f64>,
    pub a: f64,
    pub s: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct StaircaseRun {
    pub legs: Vec<LegReport>,
    /// Shared leg control synthesis.
    pub hum: HumResult,
    pub terminal: StateField,
    /// `||y(M T*) - g_f|| / ||g_f||`.
    pub final_relative_error: f64,
    /// Smallest value over every step of every leg, with its location.
    pub min: PositivityReport,
    /// Largest deviation between the physical state and the sum of the
    /// difference state and the steady-control run from the target.
    pub linearity_error: f64,
    /// Largest change of an interpolated target under its own steady control.
    pub steady_drift: f64,
    /// Physical states at leg boundaries, every `state_stride`-th leg.
    pub states: Vec<StateField>,
    pub state_stride: usize,
}

impl StaircaseRun {
    /// Fails with the location of the most negative value below `-tol`.
    pub fn check_positivity(&self, tol: f64) -> Result<()> {
        if self.min.value < -tol {
            let m = &self.min;
            return Err(Error::PositivityViolation {
                leg: m.leg,
                step: m.step,
                a: m.a,
                s: m.s,
                value: m.value,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Largest accepted HUM residual ratio of the leg control.
    pub residual_tol: f64,
    /// Upper bound on stored leg-boundary states.
    pub max_states: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            residual_tol: 0.05,
            max_states: 256,
        }
    }
}

pub fn run_staircase(
    plan: &StaircasePlan,
    params: &PopulationParams,
    grid: &Grid,
    hum: &HumConfig,
    opts: &RunOptions,
) -> Result<StaircaseRun> {
    plan.g_s.check_grid(grid)?;
    let nt = plan.nt;
    let m = plan.legs;
    let scheme = Scheme::new(params, grid, hum.diffusion)?;
    let datum = plan.leg_datum();
    let hum_res = synthesize_with(&scheme, &datum, hum, nt)?;
    if hum_res.residual_ratio() > opts.residual_tol {
        return Err(Error::LegFailure {
            leg: 1,
            residual_ratio: hum_res.residual_ratio(),
            tolerance: opts.residual_tol,
        });
    }
    let leg_control = &hum_res.control;
    let state_stride = m.div_ceil(opts.max_states.max(1));
    let len = grid.len();

    let mut y = plan.g_s.data.clone();
    let mut y_next = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut z_next = vec![0.0; len];
    let mut w = vec![0.0; len];
    let mut w_next = vec![0.0; len];
    let mut slice = vec![0.0; len];
    let mut states = vec![plan.g_s.clone()];
    let mut legs = Vec::with_capacity(m);
    let mut linearity_error: f64 = 0.0;
    let mut steady_drift: f64 = 0.0;
    let mut min = locate_min(&y, grid, 0, 0);

    for j in 1..=m {
        let target = plan.target(j);
        let u_sj = plan.steady_control(j);
        z.iter_mut()
            .zip(&y)
            .zip(&target.data)
            .for_each(|((d, y), g)| *d = y - g);
        w.copy_from_slice(&target.data);
        let mut leg_min = f64::INFINITY;
        let (mut linf_state, mut linf_control): (f64, f64) = (0.0, 0.0);
        for n in 0..nt {
            let c = leg_control.slice(n);
            for k in 0..len {
                slice[k] = u_sj.data[k] + c[k];
            }
            linf_control = slice.iter().fold(linf_control, |a, v| a.max(v.abs()));
            scheme.step_into(&y, Some(&slice), &mut y_next);
            scheme.step_into(&z, Some(c), &mut z_next);
            scheme.step_into(&w, Some(&u_sj.data), &mut w_next);
            std::mem::swap(&mut y, &mut y_next);
            std::mem::swap(&mut z, &mut z_next);
            std::mem::swap(&mut w, &mut w_next);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: (j - 1) * nt + n + 1 });
            }
            for k in 0..len {
                linearity_error = linearity_error.max((y[k] - z[k] - w[k]).abs());
                steady_drift = steady_drift.max((w[k] - target.data[k]).abs());
                linf_state = linf_state.max(y[k].abs());
            }
            let here = locate_min(&y, grid, j, n + 1);
            leg_min = leg_min.min(here.value);
            if here.value < min.value {
                min = here;
            }
        }
        let mut err = StateField::from_vec(grid, y.clone())?;
        err.axpy(-1.0, &target);
        legs.push(LegReport {
            leg: j,
            terminal_error: err.norm(grid),
            min: leg_min,
            linf_state,
            linf_control,
        });
        if j % state_stride == 0 || j == m {
            states.push(StateField::from_vec(grid, y.clone())?);
        }
    }
    let terminal = StateField::from_vec(grid, y)?;
    let mut err = terminal.clone();
    err.axpy(-1.0, &plan.g_f);
    let gf = plan.g_f.norm(grid);
    let final_relative_error = if gf > 0.0 { err.norm(grid) / gf } else { err.norm(grid) };
    Ok(StaircaseRun {
        legs,
        hum: hum_res,
        terminal,
        final_relative_error,
        min,
        linearity_error,
        steady_drift,
        states,
        state_stride,
    })
}

fn locate_min(y: &[f64], grid: &Grid, leg: usize, step: usize) -> PositivityReport {
    let (k, &value) = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("state is never empty");
    let np = grid.nspace();
    let (p, ij) = (k % np, k / np);
    PositivityReport {
        leg,
        step,
        x: grid.x(p),
        a: grid.age(ij / grid.ns),
        s: grid.size(ij % grid.ns),
        value,
    }
}

/// Controls of one leg as a field over the leg horizon.
pub fn leg_physical_control(plan: &StaircasePlan, run: &StaircaseRun, j: usize) -> ControlField {
    let u_sj = plan.steady_control(j);
    let mut u = ControlField::constant_in_time(&u_sj, plan.nt);
    u.add_assign(&run.hum.control);
    u
}
