//! Tensor grids, state fields, the Neumann Laplacian and its implicit and
//! exact solution operators, and the discrete renewal kernel.
//!
//! Fields are stored with the spatial index innermost: entry `(i, j, p)` of a
//! field on `Na x Ns` age-size cells and `P` spatial cells lives at
//! `(i * Ns + j) * P + p`. All nodes are cell centers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FertilityKernel, PopulationParams};

/// Horizons within this many steps of an integer count are accepted.
const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Spatial cells per dimension, one or two entries.
    pub nx: Vec<usize>,
    /// Length of `Omega` per dimension.
    pub extent: Vec<f64>,
    pub na: usize,
    pub ns: usize,
    pub max_age: f64,
    pub max_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: vec![16],
            extent: vec![1.0],
            na: 64,
            ns: 64,
            max_age: 1.0,
            max_size: 1.0,
        }
    }
}

impl GridConfig {
    pub fn for_params(params: &PopulationParams, nx: usize, na: usize, ns: usize) -> Self {
        Self {
            nx: vec![nx],
            extent: vec![1.0],
            na,
            ns,
            max_age: params.max_age,
            max_size: params.max_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: Vec<usize>,
    pub extent: Vec<f64>,
    pub dx: Vec<f64>,
    pub na: usize,
    pub ns: usize,
    /// The common step `da = ds = dt`.
    pub h: f64,
    pub max_age: f64,
    pub max_size: f64,
}

pub fn build_grid(cfg: &GridConfig) -> Result<Grid> {
    if cfg.nx.is_empty() || cfg.nx.len() > 2 || cfg.nx.len() != cfg.extent.len() {
        return Err(Error::config("grid.nx", "one or two spatial dimensions with matching extents"));
    }
    if cfg.nx.iter().any(|&n| n == 0) || cfg.extent.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::config("grid.nx", "spatial cells and extents must be positive"));
    }
    if cfg.na == 0 || cfg.ns == 0 {
        return Err(Error::config("grid.na", "age and size cells must be positive"));
    }
    let da = cfg.max_age / cfg.na as f64;
    let ds = cfg.max_size / cfg.ns as f64;
    if (da - ds).abs() > 1e-12 * da.max(ds) {
        return Err(Error::GridMisaligned {
            age_step: da,
            size_step: ds,
            required_ns: cfg.max_size / da,
        });
    }
    Ok(Grid {
        nx: cfg.nx.clone(),
        extent: cfg.extent.clone(),
        dx: cfg.nx.iter().zip(&cfg.extent).map(|(&n, &l)| l / n as f64).collect(),
        na: cfg.na,
        ns: cfg.ns,
        h: da,
        max_age: cfg.max_age,
        max_size: cfg.max_size,
    })
}

impl Grid {
    pub fn nspace(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn len(&self) -> usize {
        self.na * self.ns * self.nspace()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, p: usize) -> usize {
        (i * self.ns + j) * self.nspace() + p
    }

    pub fn age(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    pub fn size(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    /// Coordinates of spatial cell `p` (row-major over dimensions).
    pub fn x(&self, p: usize) -> Vec<f64> {
        let mut rest = p;
        let mut out = vec![0.0; self.nx.len()];
        for d in (0..self.nx.len()).rev() {
            let k = rest % self.nx[d];
            rest /= self.nx[d];
            out[d] = (k as f64 + 0.5) * self.dx[d];
        }
        out
    }

    /// Quadrature weight of one cell, `prod dx * h^2`.
    pub fn cell_weight(&self) -> f64 {
        self.dx.iter().product::<f64>() * self.h * self.h
    }

    /// Step count for horizon `t`; fails unless `t` is a multiple of `h`.
    pub fn steps_for(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("horizon {t} must be finite and nonnegative")));
        }
        let n = t / self.h;
        if (n - n.round()).abs() > STEP_TOLERANCE {
            return Err(Error::HorizonMisaligned {
                requested: t,
                dt: self.h,
                below: n.floor() * self.h,
                above: n.ceil() * self.h,
            });
        }
        Ok(n.round() as usize)
    }

    /// Nearest step count to horizon `t` and the horizon it represents.
    pub fn snap_horizon(&self, t: f64) -> (usize, f64) {
        let n = (t / self.h).round().max(0.0) as usize;
        (n, n as f64 * self.h)
    }
}

/// A density on the grid at one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub na: usize,
    pub ns: usize,
    pub nspace: usize,
    pub data: Vec<f64>,
}

impl StateField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            na: grid.na,
            ns: grid.ns,
            nspace: grid.nspace(),
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_vec(grid: &Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self {
            na: grid.na,
            ns: grid.ns,
            nspace: grid.nspace(),
            data,
        })
    }

    /// Samples `f(x, a, s)` at cell centers.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64], f64, f64) -> f64) -> Self {
        let xs: Vec<Vec<f64>> = (0..grid.nspace()).map(|p| grid.x(p)).collect();
        let mut field = Self::zeros(grid);
        for i in 0..grid.na {
            for j in 0..grid.ns {
                for (p, x) in xs.iter().enumerate() {
                    field.data[grid.idx(i, j, p)] = f(x, grid.age(i), grid.size(j));
                }
            }
        }
        field
    }

    pub fn same_shape(&self, other: &StateField) -> bool {
        self.na == other.na && self.ns == other.ns && self.nspace == other.nspace
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.na != grid.na || self.ns != grid.ns || self.nspace != grid.nspace() {
            return Err(Error::Shape(format!(
                "field {}x{}x{} does not match grid {}x{}x{}",
                self.na,
                self.ns,
                self.nspace,
                grid.na,
                grid.ns,
                grid.nspace()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, p: usize) -> f64 {
        self.data[(i * self.ns + j) * self.nspace + p]
    }

    /// Weighted inner product `sum w * y * z`.
    pub fn inner(&self, other: &StateField, grid: &Grid) -> f64 {
        grid.cell_weight() * dot(&self.data, &other.data)
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        self.inner(self, grid).sqrt()
    }

    pub fn mass(&self, grid: &Grid) -> f64 {
        grid.cell_weight() * self.data.iter().sum::<f64>()
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &StateField) {
        for (v, w) in self.data.iter_mut().zip(&other.data) {
            *v += c * w;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Second difference with mirrored ghosts, summed over dimensions.
#[derive(Clone, Debug)]
pub struct NeumannLaplacian {
    nx: Vec<usize>,
    inv_dx2: Vec<f64>,
}

pub fn neumann_laplacian(grid: &Grid) -> NeumannLaplacian {
    NeumannLaplacian {
        nx: grid.nx.clone(),
        inv_dx2: grid.dx.iter().map(|d| 1.0 / (d * d)).collect(),
    }
}

impl NeumannLaplacian {
    pub fn from_spacing(nx: Vec<usize>, dx: Vec<f64>) -> Self {
        Self {
            nx,
            inv_dx2: dx.iter().map(|d| 1.0 / (d * d)).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for (d, (&n, &c)) in self.nx.iter().zip(&self.inv_dx2).enumerate() {
            let stride: usize = self.nx[d + 1..].iter().product();
            for (p, o) in out.iter_mut().enumerate() {
                let k = (p / stride) % n;
                let left = if k == 0 { f[p] } else { f[p - stride] };
                let right = if k + 1 == n { f[p] } else { f[p + stride] };
                *o += c * (left - 2.0 * f[p] + right);
            }
        }
        out
    }
}

/// Orthonormal cosine basis diagonalizing the 1D Neumann second difference.
#[derive(Clone, Debug)]
struct CosineBasis {
    n: usize,
    /// Row `k` is mode `k` sampled at the cell centers.
    modes: Vec<f64>,
    /// Eigenvalues of `-L`, nonnegative.
    eig: Vec<f64>,
}

impl CosineBasis {
    fn new(n: usize, dx: f64) -> Self {
        let mut modes = vec![0.0; n * n];
        for k in 0..n {
            let c = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for p in 0..n {
                modes[k * n + p] =
                    c * (std::f64::consts::PI * k as f64 * (p as f64 + 0.5) / n as f64).cos();
            }
        }
        let eig = (0..n)
            .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos()) / (dx * dx))
            .collect();
        Self { n, modes, eig }
    }
}

/// Spectral representation of the Neumann Laplacian on the spatial grid.
#[derive(Clone, Debug)]
pub struct Spectral {
    nx: Vec<usize>,
    bases: Vec<CosineBasis>,
    /// Eigenvalues of `-L` per tensor mode, in the field's spatial order.
    pub eig: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let bases: Vec<CosineBasis> = grid
            .nx
            .iter()
            .zip(&grid.dx)
            .map(|(&n, &d)| CosineBasis::new(n, d))
            .collect();
        let nspace = grid.nspace();
        let eig = (0..nspace)
            .map(|p| {
                let mut rest = p;
                let mut total = 0.0;
                for b in bases.iter().rev() {
                    total += b.eig[rest % b.n];
                    rest /= b.n;
                }
                total
            })
            .collect();
        Self {
            nx: grid.nx.clone(),
            bases,
            eig,
        }
    }

    fn along_axes(&self, f: &mut [f64], scratch: &mut Vec<f64>, inverse: bool) {
        scratch.resize(f.len(), 0.0);
        for (d, b) in self.bases.iter().enumerate() {
            let stride: usize = self.nx[d + 1..].iter().product();
            let n = b.n;
            let block = n * stride;
            for start in (0..f.len()).step_by(block) {
                for off in 0..stride {
                    for k in 0..n {
                        let mut acc = 0.0;
                        for p in 0..n {
                            let m = if inverse { b.modes[p * n + k] } else { b.modes[k * n + p] };
                            acc += m * f[start + off + p * stride];
                        }
                        scratch[start + off + k * stride] = acc;
                    }
                }
            }
            f.copy_from_slice(scratch);
        }
    }

    /// Physical values to mode coefficients.
    pub fn forward(&self, f: &mut [f64], scratch: &mut Vec<f64>) {
        self.along_axes(f, scratch, false);
    }

    /// Mode coefficients to physical values.
    pub fn inverse(&self, f: &mut [f64], scratch: &mut Vec<f64>) {
        self.along_axes(f, scratch, true);
    }
}

/// Solver for `(I - dt L) v = f` on one spatial slice.
#[derive(Clone, Debug)]
pub enum ImplicitDiffusion {
    Off,
    /// Thomas algorithm with a precomputed factorization. Every quantity in
    /// its sweeps is a sum of nonnegative terms, so positivity is exact.
    Tridiagonal {
        /// Off-diagonal magnitude `dt / dx^2`.
        r: f64,
        /// Reciprocal pivots of the forward sweep.
        inv_pivot: Vec<f64>,
    },
    Spectral { spectral: Spectral, factor: Vec<f64> },
}

impl ImplicitDiffusion {
    pub fn new(grid: &Grid, dt: f64, enabled: bool) -> Self {
        if !enabled {
            return ImplicitDiffusion::Off;
        }
        if grid.nx.len() == 1 {
            let n = grid.nx[0];
            let r = dt / (grid.dx[0] * grid.dx[0]);
            let mut inv_pivot = vec![0.0; n];
            let diag = |k: usize| {
                if n == 1 {
                    1.0
                } else if k == 0 || k + 1 == n {
                    1.0 + r
                } else {
                    1.0 + 2.0 * r
                }
            };
            let mut pivot = diag(0);
            inv_pivot[0] = 1.0 / pivot;
            for k in 1..n {
                pivot = diag(k) - r * r / pivot;
                inv_pivot[k] = 1.0 / pivot;
            }
            ImplicitDiffusion::Tridiagonal { r, inv_pivot }
        } else {
            let spectral = Spectral::new(grid);
            let factor = spectral.eig.iter().map(|l| 1.0 / (1.0 + dt * l)).collect();
            ImplicitDiffusion::Spectral { spectral, factor }
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, ImplicitDiffusion::Off)
    }

    pub fn solve(&self, f: &mut [f64], scratch: &mut Vec<f64>) {
        match self {
            ImplicitDiffusion::Off => {}
            ImplicitDiffusion::Tridiagonal { r, inv_pivot } => {
                let n = f.len();
                f[0] *= inv_pivot[0];
                for k in 1..n {
                    f[k] = (f[k] + r * f[k - 1]) * inv_pivot[k];
                }
                for k in (0..n.saturating_sub(1)).rev() {
                    f[k] += r * inv_pivot[k] * f[k + 1];
                }
            }
            ImplicitDiffusion::Spectral { spectral, factor } => {
                spectral.forward(f, scratch);
                f.iter_mut().zip(factor).for_each(|(v, c)| *v *= c);
                spectral.inverse(f, scratch);
            }
        }
    }

    /// Solves every spatial slice of a full field.
    pub fn solve_field(&self, data: &mut [f64], nspace: usize) {
        if self.is_off() {
            return;
        }
        data.par_chunks_mut(nspace)
            .with_min_len(256)
            .for_each_init(Vec::new, |scratch, slice| self.solve(slice, scratch));
    }
}

/// Discretized fertility `h^2 * beta(a_i, s_k, s_j)` on the model grid.
#[derive(Clone, Debug)]
pub enum RenewalKernel {
    Zero,
    /// `w = age[i] * parent[k] * newborn[j]`.
    Separable {
        age: Vec<f64>,
        parent: Vec<f64>,
        newborn: Vec<f64>,
    },
    /// Index `(i * ns + k) * ns + j`.
    Dense { ns: usize, w: Vec<f64> },
}

impl RenewalKernel {
    pub fn new(params: &PopulationParams, grid: &Grid) -> Self {
        let (la, ls) = (params.max_age, params.max_size);
        let w2 = grid.h * grid.h;
        match &params.beta {
            FertilityKernel::Zero => RenewalKernel::Zero,
            FertilityKernel::Separable {
                age,
                parent_size,
                newborn_size,
            } => RenewalKernel::Separable {
                age: (0..grid.na).map(|i| w2 * age.eval(grid.age(i), la)).collect(),
                parent: (0..grid.ns).map(|k| parent_size.eval(grid.size(k), ls)).collect(),
                newborn: (0..grid.ns).map(|j| newborn_size.eval(grid.size(j), ls)).collect(),
            },
            FertilityKernel::Table { .. } => {
                let ns = grid.ns;
                let mut w = vec![0.0; grid.na * ns * ns];
                for i in 0..grid.na {
                    for k in 0..ns {
                        for j in 0..ns {
                            w[(i * ns + k) * ns + j] =
                                w2 * params.beta(grid.age(i), grid.size(k), grid.size(j));
                        }
                    }
                }
                RenewalKernel::Dense { ns, w }
            }
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, k: usize, j: usize) -> f64 {
        match self {
            RenewalKernel::Zero => 0.0,
            RenewalKernel::Separable { age, parent, newborn } => age[i] * parent[k] * newborn[j],
            RenewalKernel::Dense { ns, w } => w[(i * ns + k) * ns + j],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RenewalKernel::Zero)
    }

    /// `out[j, p] = sum_{i,k} w(i,k,j) y[i,k,p]` for a field of shape
    /// `na x ns x nspace`; `out` has shape `ns x nspace`.
    pub fn integrate(&self, y: &[f64], na: usize, ns: usize, nspace: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            RenewalKernel::Zero => {}
            RenewalKernel::Separable { age, parent, newborn } => {
                let mut acc = vec![0.0; nspace];
                for i in 0..na {
                    if age[i] == 0.0 {
                        continue;
                    }
                    for k in 0..ns {
                        let c = age[i] * parent[k];
                        if c == 0.0 {
                            continue;
                        }
                        let row = &y[(i * ns + k) * nspace..][..nspace];
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += c * v);
                    }
                }
                for j in 0..ns {
                    let dst = &mut out[j * nspace..][..nspace];
                    dst.iter_mut().zip(&acc).for_each(|(o, a)| *o = newborn[j] * a);
                }
            }
            RenewalKernel::Dense { w, .. } => {
                for i in 0..na {
                    for k in 0..ns {
                        let row = &y[(i * ns + k) * nspace..][..nspace];
                        for j in 0..ns {
                            let c = w[(i * ns + k) * ns + j];
                            if c == 0.0 {
                                continue;
                            }
                            let dst = &mut out[j * nspace..][..nspace];
                            dst.iter_mut().zip(row).for_each(|(o, v)| *o += c * v);
                        }
                    }
                }
            }
        }
    }

    /// Transpose of [`integrate`](Self::integrate), accumulated into `out`.
    pub fn scatter_add(&self, inflow: &[f64], na: usize, ns: usize, nspace: usize, out: &mut [f64]) {
        match self {
            RenewalKernel::Zero => {}
            RenewalKernel::Separable { age, parent, newborn } => {
                let mut acc = vec![0.0; nspace];
                for j in 0..ns {
                    let src = &inflow[j * nspace..][..nspace];
                    acc.iter_mut().zip(src).for_each(|(a, v)| *a += newborn[j] * v);
                }
                for i in 0..na {
                    for k in 0..ns {
                        let c = age[i] * parent[k];
                        if c == 0.0 {
                            continue;
                        }
                        let dst = &mut out[(i * ns + k) * nspace..][..nspace];
                        dst.iter_mut().zip(&acc).for_each(|(o, a)| *o += c * a);
                    }
                }
            }
            RenewalKernel::Dense { w, .. } => {
                for i in 0..na {
                    for k in 0..ns {
                        for j in 0..ns {
                            let c = w[(i * ns + k) * ns + j];
                            if c == 0.0 {
                                continue;
                            }
                            let src = &inflow[j * nspace..][..nspace];
                            let dst = &mut out[(i * ns + k) * nspace..][..nspace];
                            dst.iter_mut().zip(src).for_each(|(o, v)| *o += c * v);
                        }
                    }
                }
            }
        }
    }
}

/// Newborn density of size `s` produced by one `(a, s_hat)` slice
/// (`slice[i * ns + k]`), by the midpoint rule on the model grid.
pub fn renewal_integral(slice: &[f64], params: &PopulationParams, grid: &Grid, s: f64) -> Result<f64> {
    if slice.len() != grid.na * grid.ns {
        return Err(Error::Shape(format!(
            "renewal slice has {} values, grid needs {}",
            slice.len(),
            grid.na * grid.ns
        )));
    }
    let mut total = 0.0;
    for i in 0..grid.na {
        for k in 0..grid.ns {
            let y = slice[i * grid.ns + k];
            if y != 0.0 {
                total += params.beta(grid.age(i), grid.size(k), s) * y;
            }
        }
    }
    Ok(total * grid.h * grid.h)
}
