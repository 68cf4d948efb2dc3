//! Steady states by Banach iteration on the newborn profile, exponential
//! growth probes, and the empirical sup-norm bound of a trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ControlField, Scheme, Trajectory};
use crate::grid::{Grid, StateField};
use crate::hum::fit_slope;
use crate::model::{FertilityKernel, MortalityRate, PopulationParams, Profile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyOptions {
    /// Stop when the sup-norm change of the newborn profile drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub diffusion: bool,
    /// Starting newborn profile (`ns x nspace`); zero when absent.
    #[serde(skip)]
    pub initial: Option<Vec<f64>>,
    /// Cells above `floor * ||p||_inf` count as positive for the box report.
    pub positive_floor: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            diffusion: true,
            initial: None,
            positive_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub p: StateField,
    pub u_steady: StateField,
    pub newborn: Vec<f64>,
    pub iterations: usize,
    /// `||R(p) - eta||_inf` for the returned field.
    pub residual: f64,
    /// Largest ratio of successive changes.
    pub contraction: f64,
    pub changes: Vec<f64>,
    /// `min p` over the box `[0, a_star] x [s1_star, s2_star]`.
    pub rho0: f64,
    pub a_star: f64,
    pub s1_star: f64,
    pub s2_star: f64,
    pub r_sup: f64,
    pub warnings: Vec<String>,
}

/// Solves the discrete steady system `p = F p + h u` with `u` held fixed.
///
/// For a newborn profile `eta`, `p` is obtained by one sweep along the
/// characteristic diagonals; the renewal of `p` gives the next profile.
pub fn solve_steady(
    u_steady: &StateField,
    params: &PopulationParams,
    grid: &Grid,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    u_steady.check_grid(grid)?;
    let scheme = Scheme::new(params, grid, opts.diffusion)?;
    let mut warnings = Vec::new();
    let r_sup = params.reproductive_sup(grid.ns)?;
    if r_sup >= 1.0 {
        warnings.push(format!("sup R = {r_sup} >= 1: the fixed-point map need not contract"));
    }
    if params.mu2 != MortalityRate::Zero {
        warnings.push("size mortality is nonzero; the steady-state theory assumes mu2 = 0".into());
    }
    let (ns, np) = (grid.ns, grid.nspace());
    let mut eta = match &opts.initial {
        Some(v) if v.len() == ns * np => v.clone(),
        Some(v) => {
            return Err(Error::Shape(format!(
                "initial newborn profile has {} values, needs {}",
                v.len(),
                ns * np
            )))
        }
        None => vec![0.0; ns * np],
    };
    let mut p = vec![0.0; grid.len()];
    let mut next = vec![0.0; ns * np];
    let mut changes = Vec::new();
    let mut iterations = 0;
    loop {
        march(&scheme, &eta, &u_steady.data, &mut p);
        scheme.kernel.integrate(&p, grid.na, ns, np, &mut next);
        let change = sup_diff(&next, &eta);
        if !change.is_finite() {
            return Err(Error::Divergence { step: iterations });
        }
        changes.push(change);
        iterations += 1;
        if change < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                last_change: change,
                history: changes,
            });
        }
        std::mem::swap(&mut eta, &mut next);
    }
    // p was built from eta; its own renewal is `next`
    let residual = *changes.last().unwrap();
    let contraction = changes
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    let p = StateField::from_vec(grid, p)?;
    let (rho0, a_star, s1_star, s2_star) = positive_box(&p, grid, opts.positive_floor);
    Ok(SteadyState {
        p,
        u_steady: u_steady.clone(),
        newborn: eta,
        iterations,
        residual,
        contraction,
        changes,
        rho0,
        a_star,
        s1_star,
        s2_star,
        r_sup,
        warnings,
    })
}

/// `p[0, j] = D eta_j + h u`, `p[i, 0] = h u`, `p[i, j] = D(rho p[i-1, j-1]) + h u`.
fn march(scheme: &Scheme, eta: &[f64], u: &[f64], p: &mut [f64]) {
    let g = &scheme.grid;
    let (na, ns, np) = (g.na, g.ns, g.nspace());
    let h = g.h;
    let mut scratch = Vec::new();
    let mut cell = vec![0.0; np];
    for i in 0..na {
        for j in 0..ns {
            let at = (i * ns + j) * np;
            if i == 0 {
                cell.copy_from_slice(&eta[j * np..(j + 1) * np]);
            } else if j == 0 {
                cell.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let r = scheme.ratio(i, j);
                let src = ((i - 1) * ns + j - 1) * np;
                for m in 0..np {
                    cell[m] = r * p[src + m];
                }
            }
            scheme.diffusion.solve(&mut cell, &mut scratch);
            for m in 0..np {
                p[at + m] = cell[m] + h * u[at + m];
            }
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest box `[0, a*] x [s1*, s2*]` (all of `Omega`) on which `p` exceeds
/// `floor * ||p||_inf`, with the minimum of `p` there.
fn positive_box(p: &StateField, grid: &Grid, floor: f64) -> (f64, f64, f64, f64) {
    let thr = floor * p.linf();
    if p.linf() == 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (na, ns, np) = (grid.na, grid.ns, grid.nspace());
    let mut col_min = vec![f64::INFINITY; ns];
    let mut best = (0usize, 0usize, 0usize, 0.0f64); // (rows, j1, j2 exclusive, area)
    for i in 0..na {
        for (j, c) in col_min.iter_mut().enumerate() {
            let at = (i * ns + j) * np;
            let m = p.data[at..at + np].iter().copied().fold(f64::INFINITY, f64::min);
            *c = c.min(m);
        }
        let mut j = 0;
        while j < ns {
            if col_min[j] > thr {
                let start = j;
                while j < ns && col_min[j] > thr {
                    j += 1;
                }
                let area = ((i + 1) * (j - start)) as f64;
                if area > best.3 {
                    best = (i + 1, start, j, area);
                }
            } else {
                j += 1;
            }
        }
    }
    let (rows, j1, j2, area) = best;
    if area == 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mut rho0 = f64::INFINITY;
    for i in 0..rows {
        for j in j1..j2 {
            let at = (i * ns + j) * np;
            rho0 = p.data[at..at + np].iter().copied().fold(rho0, f64::min);
        }
    }
    (rho0, rows as f64 * grid.h, j1 as f64 * grid.h, j2 as f64 * grid.h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVerdict {
    Grow,
    Decay,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupOptions {
    /// Constant source added everywhere; zero keeps subcritical runs decaying.
    pub source: f64,
    /// Fraction of the horizon, counted from the end, used for the fit.
    pub tail: f64,
    /// Rates with smaller magnitude are inconclusive.
    pub rate_floor: f64,
    pub diffusion: bool,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        Self {
            source: 0.0,
            tail: 0.5,
            rate_floor: 1e-3,
            diffusion: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub rate: f64,
    pub verdict: GrowthVerdict,
    /// Offspring integrated over newborn sizes.
    pub r: f64,
    pub r_sup: f64,
    /// False when the kernel depends on the parent's size, so the
    /// age-only reduction behind the growth criterion does not apply.
    pub reduction_applies: bool,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub note: Option<String>,
}

/// Runs the uncontrolled model from `y0` and fits `log ||y(t)||` on the tail.
pub fn detect_blowup(
    y0: &StateField,
    params: &PopulationParams,
    grid: &Grid,
    horizon: f64,
    opts: &BlowupOptions,
) -> Result<BlowupReport> {
    let nt = grid.steps_for(horizon)?;
    let scheme = Scheme::new(params, grid, opts.diffusion)?;
    let source = (opts.source != 0.0).then(|| {
        let mut f = StateField::zeros(grid);
        f.data.iter_mut().for_each(|v| *v = opts.source);
        ControlField::constant_in_time(&f, nt)
    });
    y0.check_grid(grid)?;
    let w = grid.cell_weight();
    let mut norms = Vec::with_capacity(nt + 1);
    let mut cur = y0.data.clone();
    let mut next = vec![0.0; cur.len()];
    norms.push((w * cur.iter().map(|v| v * v).sum::<f64>()).sqrt());
    for n in 0..nt {
        scheme.step_into(&cur, source.as_ref().map(|s| s.slice(n)), &mut next);
        std::mem::swap(&mut cur, &mut next);
        norms.push((w * cur.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    if cur.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: nt });
    }
    let times: Vec<f64> = (0..=nt).map(|n| n as f64 * grid.h).collect();
    let r = params.reproductive_total()?;
    let r_sup = params.reproductive_sup(grid.ns)?;
    let reduction_applies = match &params.beta {
        FertilityKernel::Zero => true,
        FertilityKernel::Separable { parent_size, .. } => matches!(parent_size, Profile::Constant { .. }),
        FertilityKernel::Table { .. } => false,
    };
    let start = ((1.0 - opts.tail.clamp(0.05, 1.0)) * nt as f64).floor() as usize;
    let tail_t = &times[start..];
    let tail_n = &norms[start..];
    let (rate, verdict, note) = if tail_n.iter().all(|&v| v == 0.0) {
        (f64::NEG_INFINITY, GrowthVerdict::Decay, Some("population extinct".to_string()))
    } else if horizon < 2.0 * params.max_age || tail_t.len() < 16 {
        (f64::NAN, GrowthVerdict::Inconclusive, Some("horizon too short for a stable fit".into()))
    } else if tail_n.iter().any(|&v| v == 0.0) {
        (f64::NAN, GrowthVerdict::Inconclusive, Some("norm vanishes inside the fit window".into()))
    } else {
        let logs: Vec<f64> = tail_n.iter().map(|v| v.ln()).collect();
        let rate = fit_slope(tail_t, &logs);
        let verdict = if rate > opts.rate_floor {
            GrowthVerdict::Grow
        } else if rate < -opts.rate_floor {
            GrowthVerdict::Decay
        } else {
            GrowthVerdict::Inconclusive
        };
        (rate, verdict, None)
    };
    let note = match (reduction_applies, note) {
        (false, Some(n)) => Some(format!("{n}; kernel depends on parent size, reduction does not apply")),
        (false, None) => Some("kernel depends on parent size, reduction does not apply".into()),
        (true, n) => n,
    };
    Ok(BlowupReport {
        rate,
        verdict,
        r,
        r_sup,
        reduction_applies,
        times,
        norms,
        note,
    })
}

/// `C = ||y||_inf / (||u||_inf + ||y0||_inf)` over the trajectory.
pub fn linf_monitor(traj: &Trajectory, u: Option<&ControlField>) -> Result<f64> {
    let num = traj.linf();
    let den = u.map_or(0.0, ControlField::linf) + traj.initial().linf();
    if den == 0.0 {
        if num == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Inconsistent(format!(
            "trajectory sup {num} with zero data and control"
        )));
    }
    Ok(num / den)
}
