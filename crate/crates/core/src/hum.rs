//! Penalized HUM: null-control synthesis by conjugate gradient on terminal
//! adjoint data.
//!
//! For terminal datum `q_T`, let `q^n` solve the adjoint recursion and set
//! `u^n = m q^{n+1}`. The Gramian `Lambda q_T` is the terminal state driven
//! from zero by that control, and
//!
//! ```text
//! J(q_T) = 1/2 <Lambda q_T, q_T> + eps/2 ||q_T||^2 + <y_free(T), q_T>
//! ```
//!
//! is minimized by solving `(Lambda + eps) q_T = -y_free(T)`. At the
//! minimizer the controlled terminal state equals `-eps q_T`.

use serde::{Deserialize, Serialize};

use crate::adjoint::observability_ratio;
use crate::error::{Error, Result};
use crate::forward::{support_mask, ControlField, Scheme};
use crate::geometry::ControlSupport;
use crate::grid::{dot, Grid, StateField};
use crate::model::PopulationParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumConfig {
    pub epsilon: f64,
    /// Stop when the CG residual falls below `tol * ||y_free(T)||`.
    pub tol: f64,
    pub max_iter: usize,
    pub support: ControlSupport,
    pub horizon: f64,
    pub diffusion: bool,
}

impl HumConfig {
    pub fn new(support: ControlSupport, horizon: f64, epsilon: f64) -> Self {
        Self {
            epsilon,
            tol: 1e-8,
            max_iter: 400,
            support,
            horizon,
            diffusion: true,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("hum.epsilon", "penalty must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("hum.tol", "tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HumResult {
    pub control: ControlField,
    pub q_terminal: StateField,
    /// Controlled terminal state `y_u(T)`.
    pub terminal: StateField,
    pub residual: f64,
    pub free_norm: f64,
    /// `||u||^2` over the support and the horizon.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// CG residual norm before each iteration and after the last.
    pub residual_trace: Vec<f64>,
    /// `J` at each iterate, starting with `J(0) = 0`.
    pub objective_trace: Vec<f64>,
    /// `eps ||q_T|| + ||r||`, which bounds `residual` by the triangle inequality.
    pub penalty_bound: f64,
    /// `sqrt(2 eps |J|) + ||r||` at the returned iterate.
    pub energy_bound: f64,
    /// Observed energy over `||q^0||^2` for the returned adjoint trajectory.
    pub observability: Option<f64>,
}

impl HumResult {
    pub fn residual_ratio(&self) -> f64 {
        if self.free_norm == 0.0 {
            0.0
        } else {
            self.residual / self.free_norm
        }
    }
}

/// The operator `Lambda + eps` and the free terminal state for one setup.
pub struct HumProblem<'a> {
    pub scheme: &'a Scheme,
    pub mask: Vec<f64>,
    pub nt: usize,
    pub epsilon: f64,
    pub y_free: Vec<f64>,
    control: ControlField,
    work: Vec<f64>,
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

impl<'a> HumProblem<'a> {
    pub fn new(scheme: &'a Scheme, y0: &StateField, support: &ControlSupport, nt: usize, epsilon: f64) -> Result<Self> {
        let grid = &scheme.grid;
        y0.check_grid(grid)?;
        let y_free = scheme.terminal(&y0.data, None, nt)?;
        Ok(Self {
            scheme,
            mask: support_mask(grid, support),
            nt,
            epsilon,
            y_free,
            control: ControlField::zeros(grid, nt),
            work: Vec::new(),
            adj_a: vec![0.0; grid.len()],
            adj_b: vec![0.0; grid.len()],
        })
    }

    pub fn weight(&self) -> f64 {
        self.scheme.grid.cell_weight()
    }

    /// Fills `self.control` with `u^n = m q^{n+1}` for terminal datum `q`.
    fn control_from(&mut self, q: &[f64]) -> Result<()> {
        self.adj_a.copy_from_slice(q);
        for n in (0..self.nt).rev() {
            // adj_a holds q^{n+1}
            let slice = self.control.slice_mut(n);
            for ((u, m), v) in slice.iter_mut().zip(&self.mask).zip(&self.adj_a) {
                *u = m * v;
            }
            if n > 0 {
                self.scheme.adjoint_into(&self.adj_a, &mut self.work, &mut self.adj_b);
                std::mem::swap(&mut self.adj_a, &mut self.adj_b);
            }
        }
        if self.adj_a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: 0 });
        }
        Ok(())
    }

    /// `Lambda q`.
    pub fn gramian(&mut self, q: &[f64]) -> Result<Vec<f64>> {
        self.control_from(q)?;
        let zero = vec![0.0; q.len()];
        self.scheme.terminal(&zero, Some(&self.control), self.nt)
    }

    /// `J(q)`, evaluated directly.
    pub fn objective(&mut self, q: &[f64]) -> Result<f64> {
        let lq = self.gramian(q)?;
        let w = self.weight();
        Ok(w * (0.5 * dot(&lq, q) + 0.5 * self.epsilon * dot(q, q) + dot(&self.y_free, q)))
    }

    /// `grad J(q) = Lambda q + eps q + y_free`.
    pub fn gradient(&mut self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.gramian(q)?;
        for ((gk, qk), yk) in g.iter_mut().zip(q).zip(&self.y_free) {
            *gk += self.epsilon * qk + yk;
        }
        Ok(g)
    }

    pub fn control(&self) -> &ControlField {
        &self.control
    }
}

pub fn synthesize_control(
    y0: &StateField,
    config: &HumConfig,
    params: &PopulationParams,
    grid: &Grid,
) -> Result<HumResult> {
    config.check()?;
    config.support.validate(params)?;
    let nt = grid.steps_for(config.horizon)?;
    let scheme = Scheme::new(params, grid, config.diffusion)?;
    synthesize_with(&scheme, y0, config, nt)
}

/// CG on `(Lambda + eps) q = -y_free` from `q = 0`, in the cell-weighted
/// inner product.
pub fn synthesize_with(scheme: &Scheme, y0: &StateField, config: &HumConfig, nt: usize) -> Result<HumResult> {
    config.check()?;
    let grid = &scheme.grid;
    let mut prob = HumProblem::new(scheme, y0, &config.support, nt, config.epsilon)?;
    let w = prob.weight();
    let eps = config.epsilon;
    let ip = |a: &[f64], b: &[f64]| w * dot(a, b);

    let len = grid.len();
    let mut q = vec![0.0; len];
    let mut r: Vec<f64> = prob.y_free.iter().map(|v| -v).collect();
    let free_norm = ip(&r, &r).sqrt();
    let mut p = r.clone();
    let mut rr = ip(&r, &r);
    let target = config.tol * free_norm;
    let mut residual_trace = vec![rr.sqrt()];
    let mut objective_trace: Vec<f64> = vec![0.0];
    let mut iterations = 0;
    // b = -y_free, J(q) = -(<r, q> + <b, q>) / 2
    let objective = |q: &[f64], r: &[f64], b: &[f64]| -0.5 * (ip(r, q) + ip(b, q));
    let b = r.clone();

    while rr.sqrt() > target && iterations < config.max_iter {
        let mut ap = prob.gramian(&p)?;
        for (a, pk) in ap.iter_mut().zip(&p) {
            *a += eps * pk;
        }
        let pap = ip(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::Stagnation {
                iterations,
                residual_trace,
            });
        }
        let alpha = rr / pap;
        for k in 0..len {
            q[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = ip(&r, &r);
        iterations += 1;
        let j = objective(&q, &r, &b);
        let prev = *objective_trace.last().unwrap();
        // exact CG strictly decreases J; allow round-off only
        if j > prev + 1e-12 * prev.abs().max(free_norm * free_norm * 1e-6) {
            residual_trace.push(rr_new.sqrt());
            return Err(Error::Stagnation {
                iterations,
                residual_trace,
            });
        }
        objective_trace.push(j);
        residual_trace.push(rr_new.sqrt());
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..len {
            p[k] = r[k] + beta * p[k];
        }
    }
    let converged = rr.sqrt() <= target;

    prob.control_from(&q)?;
    let control = prob.control().clone();
    let terminal = StateField::from_vec(grid, scheme.terminal(&y0.data, Some(&control), nt)?)?;
    let residual = terminal.norm(grid);
    let cost = control.norm_sq(grid);
    let q_terminal = StateField::from_vec(grid, q)?;
    let j_final = *objective_trace.last().unwrap();
    let r_norm = rr.sqrt();
    let observability = if iterations > 0 {
        let adj = scheme.run_adjoint(&q_terminal, nt)?;
        observability_ratio(&adj, &prob.mask, grid)
    } else {
        None
    };
    Ok(HumResult {
        penalty_bound: eps * q_terminal.norm(grid) + r_norm,
        energy_bound: (2.0 * eps * j_final.abs()).sqrt() + r_norm,
        control,
        q_terminal,
        terminal,
        residual,
        free_norm,
        cost,
        iterations,
        converged,
        residual_trace,
        objective_trace,
        observability,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub requested_t: f64,
    pub t: f64,
    pub steps: usize,
    pub t_min: f64,
    pub residual_ratio: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// One synthesis per horizon. Horizons are snapped to the nearest step count
/// and each row records both values; failures are recorded per row.
pub fn threshold_sweep(
    y0: &StateField,
    base: &HumConfig,
    horizons: &[f64],
    params: &PopulationParams,
    grid: &Grid,
) -> Result<Vec<SweepRow>> {
    base.check()?;
    base.support.validate(params)?;
    let scheme = Scheme::new(params, grid, base.diffusion)?;
    let t_min = base.support.control_time_threshold(params).t_min;
    let rows = horizons
        .iter()
        .map(|&requested| {
            let (steps, t) = grid.snap_horizon(requested);
            let cfg = HumConfig {
                horizon: t,
                ..base.clone()
            };
            match synthesize_with(&scheme, y0, &cfg, steps) {
                Ok(res) => SweepRow {
                    requested_t: requested,
                    t,
                    steps,
                    t_min,
                    residual_ratio: res.residual_ratio(),
                    cost: res.cost,
                    iterations: res.iterations,
                    converged: res.converged,
                    error: None,
                },
                Err(e) => SweepRow {
                    requested_t: requested,
                    t,
                    steps,
                    t_min,
                    residual_ratio: f64::NAN,
                    cost: f64::NAN,
                    iterations: 0,
                    converged: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub cost: f64,
    pub residual: f64,
    pub residual_ratio: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostProbe {
    pub t: f64,
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of `log cost` against `log eps`.
    pub cost_slope: f64,
    pub residual_slope: f64,
}

pub fn cost_blowup_probe(
    y0: &StateField,
    base: &HumConfig,
    epsilons: &[f64],
    params: &PopulationParams,
    grid: &Grid,
) -> Result<CostProbe> {
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("epsilons", "penalties must be strictly decreasing"));
    }
    base.support.validate(params)?;
    let (steps, t) = grid.snap_horizon(base.horizon);
    let scheme = Scheme::new(params, grid, base.diffusion)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let cfg = HumConfig {
            epsilon,
            horizon: t,
            ..base.clone()
        };
        let res = synthesize_with(&scheme, y0, &cfg, steps)?;
        rows.push(ProbeRow {
            epsilon,
            cost: res.cost,
            residual: res.residual,
            residual_ratio: res.residual_ratio(),
            iterations: res.iterations,
        });
    }
    let log_eps: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let slope_of = |vals: Vec<f64>| {
        if vals.iter().all(|v| *v > 0.0) {
            let logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
            fit_slope(&log_eps, &logs)
        } else {
            0.0
        }
    };
    Ok(CostProbe {
        t,
        cost_slope: slope_of(rows.iter().map(|r| r.cost).collect()),
        residual_slope: slope_of(rows.iter().map(|r| r.residual).collect()),
        rows,
    })
}

/// Ordinary least-squares slope.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
