//! Time stepping by exact characteristic shift, survival decay, renewal
//! inflow, implicit Neumann diffusion and control injection, plus an
//! independent evaluation of the newborn history as a causal convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ControlSupport;
use crate::grid::{Grid, ImplicitDiffusion, RenewalKernel, Spectral, StateField};
use crate::model::{ratio_from_cumulative, PopulationParams};

/// The discrete one-step operator `y -> F y + h u` and its transpose.
#[derive(Clone, Debug)]
pub struct Scheme {
    pub grid: Grid,
    pub kernel: RenewalKernel,
    pub diffusion: ImplicitDiffusion,
    /// `rho[i * ns + j]` multiplies the value shifted into cell `(i, j)`.
    rho: Vec<f64>,
    cum_age: Vec<f64>,
    cum_size: Vec<f64>,
}

impl Scheme {
    pub fn new(params: &PopulationParams, grid: &Grid, diffusion: bool) -> Result<Self> {
        params.check_scalars()?;
        if (params.max_age - grid.max_age).abs() > 1e-12 || (params.max_size - grid.max_size).abs() > 1e-12 {
            return Err(Error::Shape("grid bounds differ from the model's A, S".into()));
        }
        let cum_age: Vec<f64> = (0..grid.na).map(|i| params.cumulative_age_mortality(grid.age(i))).collect();
        let cum_size: Vec<f64> = (0..grid.ns).map(|j| params.cumulative_size_mortality(grid.size(j))).collect();
        if cum_age.iter().chain(&cum_size).any(|m| m.is_nan() || *m < 0.0) {
            return Err(Error::Domain("cumulative mortality is negative or undefined on the grid".into()));
        }
        let mut rho = vec![0.0; grid.na * grid.ns];
        for i in 1..grid.na {
            let ra = ratio_from_cumulative(cum_age[i - 1], cum_age[i]);
            for j in 1..grid.ns {
                rho[i * grid.ns + j] = ra * ratio_from_cumulative(cum_size[j - 1], cum_size[j]);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            kernel: RenewalKernel::new(params, grid),
            diffusion: ImplicitDiffusion::new(grid, grid.h, diffusion),
            rho,
            cum_age,
            cum_size,
        })
    }

    /// One-step survival factor into cell `(i, j)`, for `i, j >= 1`.
    #[inline]
    pub fn ratio(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.grid.ns + j]
    }

    /// Survival factor along the diagonal from `(i - n, j - n)` to `(i, j)`.
    pub fn survival_along(&self, i: usize, j: usize, n: usize) -> f64 {
        ratio_from_cumulative(self.cum_age[i - n], self.cum_age[i])
            * ratio_from_cumulative(self.cum_size[j - n], self.cum_size[j])
    }

    /// One step `z = F y + h u`; `u` must already vanish off the support.
    pub fn step_into(&self, y: &[f64], u: Option<&[f64]>, z: &mut [f64]) {
        let g = &self.grid;
        let (na, ns, np) = (g.na, g.ns, g.nspace());
        // renewal on the pre-shift state lands directly in the a = 0 layer
        self.kernel.integrate(y, na, ns, np, &mut z[..ns * np]);
        for i in 1..na {
            let row = &mut z[i * ns * np..(i + 1) * ns * np];
            row[..np].iter_mut().for_each(|v| *v = 0.0);
            for j in 1..ns {
                let r = self.rho[i * ns + j];
                let src = &y[((i - 1) * ns + j - 1) * np..][..np];
                row[j * np..(j + 1) * np]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d = r * s);
            }
        }
        self.diffusion.solve_field(z, np);
        if let Some(u) = u {
            let h = g.h;
            z.iter_mut().zip(u).for_each(|(d, c)| *d += h * c);
        }
    }

    /// Transpose of the homogeneous step, `out = F^T q`.
    pub fn adjoint_into(&self, q: &[f64], work: &mut Vec<f64>, out: &mut [f64]) {
        let g = &self.grid;
        let (na, ns, np) = (g.na, g.ns, g.nspace());
        work.clear();
        work.extend_from_slice(q);
        self.diffusion.solve_field(work, np);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 1..na {
            for j in 1..ns {
                let r = self.rho[i * ns + j];
                let src = &work[(i * ns + j) * np..][..np];
                out[((i - 1) * ns + j - 1) * np..][..np]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += r * s);
            }
        }
        self.kernel.scatter_add(&work[..ns * np], na, ns, np, out);
    }

    pub fn step(&self, y: &StateField, u: Option<&[f64]>) -> Result<StateField> {
        y.check_grid(&self.grid)?;
        let mut z = StateField::zeros(&self.grid);
        self.step_into(&y.data, u, &mut z.data);
        if !z.is_finite() {
            return Err(Error::Divergence { step: 0 });
        }
        Ok(z)
    }

    /// Runs `nt` steps storing every `stride`-th state and the final one.
    pub fn run(
        &self,
        y0: &StateField,
        u: Option<&ControlField>,
        nt: usize,
        stride: usize,
    ) -> Result<Trajectory> {
        y0.check_grid(&self.grid)?;
        if let Some(u) = u {
            u.check(&self.grid, nt)?;
        }
        let stride = stride.max(1);
        let grid = &self.grid;
        let mut cur = y0.clone();
        let mut next = StateField::zeros(grid);
        let mut snapshots = vec![y0.clone()];
        let mut snapshot_steps = vec![0];
        let mut diagnostics = vec![Diagnostics::of(&cur, grid, 0.0)];
        for n in 0..nt {
            self.step_into(&cur.data, u.map(|c| c.slice(n)), &mut next.data);
            if !next.is_finite() {
                return Err(Error::Divergence { step: n + 1 });
            }
            std::mem::swap(&mut cur, &mut next);
            diagnostics.push(Diagnostics::of(&cur, grid, (n + 1) as f64 * grid.h));
            if (n + 1) % stride == 0 || n + 1 == nt {
                snapshots.push(cur.clone());
                snapshot_steps.push(n + 1);
            }
        }
        Ok(Trajectory {
            horizon: nt as f64 * grid.h,
            h: grid.h,
            stride,
            snapshot_steps,
            snapshots,
            diagnostics,
        })
    }

    /// Terminal state only, without snapshots.
    pub fn terminal(&self, y0: &[f64], u: Option<&ControlField>, nt: usize) -> Result<Vec<f64>> {
        let mut cur = y0.to_vec();
        let mut next = vec![0.0; cur.len()];
        for n in 0..nt {
            self.step_into(&cur, u.map(|c| c.slice(n)), &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: nt });
        }
        Ok(cur)
    }
}

/// Indicator of `support` at the grid's cell centers.
pub fn support_mask(grid: &Grid, support: &ControlSupport) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = (0..grid.nspace()).map(|p| grid.x(p)).collect();
    let mut mask = vec![0.0; grid.len()];
    for i in 0..grid.na {
        for j in 0..grid.ns {
            if !support.contains_age_size(grid.age(i), grid.size(j)) {
                continue;
            }
            for (p, x) in xs.iter().enumerate() {
                if support.omega.contains(x) {
                    mask[grid.idx(i, j, p)] = 1.0;
                }
            }
        }
    }
    mask
}

/// A control over the horizon; slice `n` acts during step `n -> n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    pub nt: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl ControlField {
    pub fn zeros(grid: &Grid, nt: usize) -> Self {
        Self {
            nt,
            len: grid.len(),
            data: vec![0.0; nt * grid.len()],
        }
    }

    /// Samples `f(x, a, s, t_n)` and zeroes it off the mask.
    pub fn from_fn(grid: &Grid, nt: usize, mask: &[f64], f: impl Fn(&[f64], f64, f64, f64) -> f64) -> Self {
        let mut c = Self::zeros(grid, nt);
        let xs: Vec<Vec<f64>> = (0..grid.nspace()).map(|p| grid.x(p)).collect();
        for n in 0..nt {
            let t = n as f64 * grid.h;
            let slice = c.slice_mut(n);
            for i in 0..grid.na {
                for j in 0..grid.ns {
                    for (p, x) in xs.iter().enumerate() {
                        let k = grid.idx(i, j, p);
                        if mask[k] != 0.0 {
                            slice[k] = f(x, grid.age(i), grid.size(j), t);
                        }
                    }
                }
            }
        }
        c
    }

    /// The same field in every slice.
    pub fn constant_in_time(field: &StateField, nt: usize) -> Self {
        let mut data = Vec::with_capacity(nt * field.data.len());
        for _ in 0..nt {
            data.extend_from_slice(&field.data);
        }
        Self {
            nt,
            len: field.data.len(),
            data,
        }
    }

    pub fn check(&self, grid: &Grid, nt: usize) -> Result<()> {
        if self.len != grid.len() || self.nt < nt || self.data.len() != self.nt * self.len {
            return Err(Error::Shape(format!(
                "control has {} slices of {} values; run needs {} of {}",
                self.nt,
                self.len,
                nt,
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        &self.data[n * self.len..(n + 1) * self.len]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.len..(n + 1) * self.len]
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `||u||^2` in `L^2(Q x (0, T))`.
    pub fn norm_sq(&self, grid: &Grid) -> f64 {
        grid.h * grid.cell_weight() * self.data.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn add_assign(&mut self, other: &ControlField) {
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub linf: f64,
}

impl Diagnostics {
    fn of(y: &StateField, grid: &Grid, t: f64) -> Self {
        Self {
            t,
            mass: y.mass(grid),
            min: y.min(),
            linf: y.linf(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub horizon: f64,
    pub h: f64,
    pub stride: usize,
    /// Step index of each snapshot; the first is 0 and the last is `Nt`.
    pub snapshot_steps: Vec<usize>,
    pub snapshots: Vec<StateField>,
    /// One entry per step including the initial state.
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn initial(&self) -> &StateField {
        &self.snapshots[0]
    }

    pub fn terminal(&self) -> &StateField {
        self.snapshots.last().expect("trajectory has at least the initial state")
    }

    pub fn min(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.min).fold(f64::INFINITY, f64::min)
    }

    pub fn linf(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.linf).fold(0.0, f64::max)
    }

    /// The `a = 0` layer of every stored snapshot after the first, as
    /// `ns x nspace` blocks. Needs stride 1 for a complete history.
    pub fn newborn_layers(&self) -> Vec<Vec<f64>> {
        self.snapshots[1..]
            .iter()
            .map(|y| y.data[..y.ns * y.nspace].to_vec())
            .collect()
    }
}

pub fn solve_forward(
    y0: &StateField,
    u: Option<&ControlField>,
    horizon: f64,
    params: &PopulationParams,
    grid: &Grid,
) -> Result<Trajectory> {
    let nt = grid.steps_for(horizon)?;
    Scheme::new(params, grid, true)?.run(y0, u, nt, 1)
}

/// Newborn history `L^n`, the `a = 0` layer at time `t_{n+1}`, for
/// `n = 0..Nt`, as `ns x nspace` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct NewbornHistory {
    pub ns: usize,
    pub nspace: usize,
    pub layers: Vec<Vec<f64>>,
}

/// Solves `B^n = C^n + sum_{i<n} K_i B^{n-1-i}` by forward substitution in
/// the cosine basis of the Laplacian, where every kernel is diagonal.
///
/// `C^n` is the renewal integral of the transported, decayed and diffused
/// initial datum; `K_i` ages a newborn layer by `i` further steps. With
/// diffusion on, the exact heat semigroup `exp(t L)` is used in place of the
/// time stepper's implicit Euler factors.
pub fn solve_renewal_volterra(
    y0: &StateField,
    horizon: f64,
    params: &PopulationParams,
    grid: &Grid,
    diffusion: bool,
) -> Result<NewbornHistory> {
    y0.check_grid(grid)?;
    let nt = grid.steps_for(horizon)?;
    let scheme = Scheme::new(params, grid, false)?;
    let (na, ns, np) = (grid.na, grid.ns, grid.nspace());
    let h = grid.h;
    let spectral = diffusion.then(|| Spectral::new(grid));
    let eig = spectral.as_ref().map_or_else(|| vec![0.0; np], |s| s.eig.clone());
    let decay = |m: usize, steps: usize| (-eig[m] * h * steps as f64).exp();

    let mut scratch = Vec::new();
    let mut y0_hat = y0.data.clone();
    if let Some(sp) = &spectral {
        for cell in y0_hat.chunks_mut(np) {
            sp.forward(cell, &mut scratch);
        }
    }

    // newborn layers in mode space, already aged by one step
    let mut layers_hat: Vec<Vec<f64>> = Vec::with_capacity(nt);
    let mut cohort = vec![0.0; na * ns * np];
    let mut births = vec![0.0; ns * np];
    for n in 0..nt {
        cohort.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..na {
            for k in 0..ns {
                let dst = (i * ns + k) * np;
                if i >= n && k >= n {
                    // initial datum transported n steps
                    let pi = scheme.survival_along(i, k, n);
                    if pi == 0.0 {
                        continue;
                    }
                    let src = ((i - n) * ns + k - n) * np;
                    for m in 0..np {
                        cohort[dst + m] = pi * decay(m, n) * y0_hat[src + m];
                    }
                } else if i < n && k >= i {
                    // born during step n - 1 - i, aged i more steps
                    let pi = scheme.survival_along(i, k, i);
                    if pi == 0.0 {
                        continue;
                    }
                    let layer = &layers_hat[n - 1 - i];
                    for m in 0..np {
                        cohort[dst + m] = pi * decay(m, i) * layer[(k - i) * np + m];
                    }
                }
            }
        }
        scheme.kernel.integrate(&cohort, na, ns, np, &mut births);
        let aged: Vec<f64> = births
            .chunks(np)
            .flat_map(|b| b.iter().enumerate().map(|(m, v)| decay(m, 1) * v).collect::<Vec<_>>())
            .collect();
        layers_hat.push(aged);
    }

    let layers = layers_hat
        .into_iter()
        .map(|mut l| {
            if let Some(sp) = &spectral {
                for block in l.chunks_mut(np) {
                    sp.inverse(block, &mut scratch);
                }
            }
            l
        })
        .collect();
    Ok(NewbornHistory { ns, nspace: np, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialPatch;
    use crate::grid::{build_grid, GridConfig};
    use crate::model::{FertilityKernel, MortalityRate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid(nx: usize, n: usize) -> Grid {
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

    fn inert() -> PopulationParams {
        PopulationParams::reference(0.0)
            .with_fertility(FertilityKernel::Zero)
            .with_size_mortality(MortalityRate::Zero)
    }

    #[test]
    fn constant_field_is_shifted_unchanged() {
        let g = small_grid(4, 8);
        let mut p = inert();
        p.mu1 = MortalityRate::Zero;
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let y = StateField::from_fn(&g, |_, _, _| 2.0);
        let z = scheme.step(&y, None).unwrap();
        for i in 1..8 {
            for j in 1..8 {
                for q in 0..4 {
                    assert!((z.at(i, j, q) - 2.0).abs() < 1e-14);
                }
            }
        }
        // inflow layers: no births, no size inflow
        assert!((0..8 * 4).all(|n| z.data[n] == 0.0));
        assert!((1..8).all(|i| (0..4).all(|q| z.at(i, 0, q) == 0.0)));
    }

    #[test]
    fn linear_survival_ratio_per_step() {
        let g = small_grid(2, 16);
        let p = inert();
        let scheme = Scheme::new(&p, &g, false).unwrap();
        let y = StateField::from_fn(&g, |_, _, _| 1.0);
        let z = scheme.step(&y, None).unwrap();
        for i in 1..16 {
            let a = g.age(i);
            let expected = (1.0 - a) / (1.0 - a + g.h);
            assert!((z.at(i, 5, 1) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = small_grid(4, 8);
        let p = PopulationParams::reference(5.0);
        let y0 = StateField::zeros(&g);
        let traj = solve_forward(&y0, None, 0.5, &p, &g).unwrap();
        assert!(traj.terminal().data.iter().all(|&v| v == 0.0));
        assert_eq!(traj.diagnostics.len(), 5);
    }

    #[test]
    fn misaligned_horizon_is_rejected() {
        let g = small_grid(4, 8);
        let p = PopulationParams::reference(5.0);
        let y0 = StateField::zeros(&g);
        assert!(matches!(
            solve_forward(&y0, None, 0.3, &p, &g),
            Err(Error::HorizonMisaligned { .. })
        ));
    }

    #[test]
    fn divergence_reports_step() {
        let g = small_grid(2, 4);
        let p = inert();
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let y0 = StateField::from_fn(&g, |_, _, _| 1.0);
        let mut u = ControlField::zeros(&g, 3);
        u.slice_mut(1)[5] = f64::NAN;
        match scheme.run(&y0, Some(&u), 3, 1) {
            Err(Error::Divergence { step }) => assert_eq!(step, 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stride_keeps_final_state() {
        let g = small_grid(2, 8);
        let p = PopulationParams::reference(5.0);
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let y0 = StateField::from_fn(&g, |_, _, _| 1.0);
        let traj = scheme.run(&y0, None, 7, 3).unwrap();
        assert_eq!(traj.snapshot_steps, vec![0, 3, 6, 7]);
        assert_eq!(traj.diagnostics.len(), 8);
    }

    #[test]
    fn mass_conserved_without_births_deaths_or_outflow() {
        let g = small_grid(6, 16);
        let mut p = inert();
        p.mu1 = MortalityRate::Zero;
        let scheme = Scheme::new(&p, &g, true).unwrap();
        // support well inside the domain so nothing reaches a = A or s = S
        let y0 = StateField::from_fn(&g, |x, a, s| {
            if a < 0.3 && s > 0.1 && s < 0.4 {
                1.0 + x[0]
            } else {
                0.0
            }
        });
        let traj = scheme.run(&y0, None, 5, 1).unwrap();
        for w in traj.diagnostics.windows(2) {
            assert!((w[1].mass - w[0].mass).abs() <= 1e-12 * w[0].mass);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = small_grid(3, 8);
        let p = PopulationParams::reference(5.0);
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let support = ControlSupport::boxed(0.1, 0.5, 0.1, 0.9, SpatialPatch::interval(0.3, 0.7));
        let mask = support_mask(&g, &support);
        let mut rand_field = || StateField::from_vec(&g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (y0, z0) = (rand_field(), rand_field());
        let mut u = ControlField::from_fn(&g, 6, &mask, |_, _, _, _| 0.0);
        let mut v = u.clone();
        for k in 0..u.data.len() {
            u.data[k] = mask[k % g.len()] * ((k as f64) * 0.37).sin();
            v.data[k] = mask[k % g.len()] * ((k as f64) * 0.11).cos();
        }
        let (al, be) = (0.7, -1.3);
        let mut yz = y0.clone();
        yz.scale(al);
        yz.axpy(be, &z0);
        let mut uv = u.clone();
        uv.data.iter_mut().zip(&v.data).for_each(|(a, b)| *a = al * *a + be * b);
        let lhs = scheme.run(&yz, Some(&uv), 6, 6).unwrap();
        let r1 = scheme.run(&y0, Some(&u), 6, 6).unwrap();
        let r2 = scheme.run(&z0, Some(&v), 6, 6).unwrap();
        let mut rhs = r1.terminal().clone();
        rhs.scale(al);
        rhs.axpy(be, r2.terminal());
        let scale = rhs.linf().max(1.0);
        for (a, b) in lhs.terminal().data.iter().zip(&rhs.data) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn volterra_without_births_is_zero() {
        let g = small_grid(2, 8);
        let y0 = StateField::from_fn(&g, |_, _, _| 1.0);
        let hist = solve_renewal_volterra(&y0, 0.5, &inert(), &g, true).unwrap();
        assert_eq!(hist.layers.len(), 4);
        assert!(hist.layers.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn volterra_before_first_fertile_age_is_initial_term() {
        let g = small_grid(3, 16);
        let p = PopulationParams::reference(5.0);
        let y0 = StateField::from_fn(&g, |x, a, s| (1.0 + x[0]) * (1.0 + a) * (1.5 - s));
        let steps = 8; // t = 0.5 < a_hat
        let hist = solve_renewal_volterra(&y0, 0.5, &p, &g, false).unwrap();
        let scheme = Scheme::new(&p, &g, false).unwrap();
        for n in 0..steps {
            for j in 0..16 {
                for q in 0..3 {
                    let mut direct = 0.0;
                    for i in n..16 {
                        for k in n..16 {
                            let b = p.beta(g.age(i), g.size(k), g.size(j));
                            direct += b * scheme.survival_along(i, k, n) * y0.at(i - n, k - n, q);
                        }
                    }
                    direct *= g.h * g.h;
                    let got = hist.layers[n][j * 3 + q];
                    assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn volterra_matches_stepper_without_diffusion() {
        let g = small_grid(2, 16);
        let p = PopulationParams::reference(8.0);
        let y0 = StateField::from_fn(&g, |x, a, _| (1.0 + x[0]) * (1.0 - a));
        let hist = solve_renewal_volterra(&y0, 1.5, &p, &g, false).unwrap();
        let traj = Scheme::new(&p, &g, false).unwrap().run(&y0, None, 24, 1).unwrap();
        for (a, b) in hist.layers.iter().zip(traj.newborn_layers()) {
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn dense_kernel_step_matches_separable() {
        let g = small_grid(2, 6);
        let p = PopulationParams::reference(4.0);
        let mut values = vec![0.0; 6 * 6 * 6];
        for i in 0..6 {
            for k in 0..6 {
                for j in 0..6 {
                    values[(i * 6 + k) * 6 + j] = p.beta(g.age(i), g.size(k), g.size(j));
                }
            }
        }
        let q = p.clone().with_fertility(FertilityKernel::Table { na: 6, ns: 6, values });
        let y = StateField::from_fn(&g, |x, a, s| 1.0 + x[0] + a * s);
        let z1 = Scheme::new(&p, &g, true).unwrap().step(&y, None).unwrap();
        let z2 = Scheme::new(&q, &g, true).unwrap().step(&y, None).unwrap();
        for (a, b) in z1.data.iter().zip(&z2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
