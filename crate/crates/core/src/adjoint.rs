//! The adjoint system as the exact transpose of the forward step.
//!
//! With `y^{n+1} = F y^n + h u^n` and `q^n = F^T q^{n+1}`,
//!
//! ```text
//! <y^N, q^N> = <y^0, q^0> + h sum_n <u^n, q^{n+1}>
//! ```
//!
//! holds to round-off for the uniform cell-weighted inner product.

use crate::error::{Error, Result};
use crate::forward::{support_mask, Scheme};
use crate::geometry::ControlSupport;
use crate::grid::{Grid, StateField};
use crate::model::PopulationParams;

/// Adjoint states `q^n` for `n = 0..=Nt`, in forward-time order.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    pub h: f64,
    pub states: Vec<StateField>,
}

impl AdjointTrajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// `q^0`, the datum propagated back over the whole horizon.
    pub fn initial(&self) -> &StateField {
        &self.states[0]
    }

    pub fn terminal(&self) -> &StateField {
        self.states.last().expect("adjoint trajectory is never empty")
    }
}

pub fn adjoint_step(q: &StateField, scheme: &Scheme) -> Result<StateField> {
    q.check_grid(&scheme.grid)?;
    let mut out = StateField::zeros(&scheme.grid);
    scheme.adjoint_into(&q.data, &mut Vec::new(), &mut out.data);
    if !out.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(out)
}

impl Scheme {
    pub fn run_adjoint(&self, q_terminal: &StateField, nt: usize) -> Result<AdjointTrajectory> {
        q_terminal.check_grid(&self.grid)?;
        let mut states = vec![q_terminal.clone()];
        let mut work = Vec::new();
        for k in 0..nt {
            let mut prev = StateField::zeros(&self.grid);
            self.adjoint_into(&states[k].data, &mut work, &mut prev.data);
            if !prev.is_finite() {
                return Err(Error::Divergence { step: nt - k - 1 });
            }
            states.push(prev);
        }
        states.reverse();
        Ok(AdjointTrajectory {
            h: self.grid.h,
            states,
        })
    }
}

pub fn solve_adjoint(
    q_terminal: &StateField,
    horizon: f64,
    params: &PopulationParams,
    grid: &Grid,
) -> Result<AdjointTrajectory> {
    let nt = grid.steps_for(horizon)?;
    Scheme::new(params, grid, true)?.run_adjoint(q_terminal, nt)
}

/// `int_0^T ||m q||^2 dt`, pairing step `n` with `q^{n+1}` as in the
/// duality identity.
pub fn observed_norm(adj: &AdjointTrajectory, support: &ControlSupport, grid: &Grid) -> f64 {
    let mask = support_mask(grid, support);
    observed_norm_masked(adj, &mask, grid)
}

pub fn observed_norm_masked(adj: &AdjointTrajectory, mask: &[f64], grid: &Grid) -> f64 {
    let w = grid.cell_weight();
    adj.states[1..]
        .iter()
        .map(|q| {
            q.data
                .iter()
                .zip(mask)
                .map(|(v, m)| m * v * v)
                .sum::<f64>()
        })
        .sum::<f64>()
        * w
        * adj.h
}

/// `observed_norm / ||q^0||^2`, or `None` when `q^0` vanishes.
pub fn observability_ratio(adj: &AdjointTrajectory, mask: &[f64], grid: &Grid) -> Option<f64> {
    let denom = adj.initial().inner(adj.initial(), grid);
    (denom > 0.0).then(|| observed_norm_masked(adj, mask, grid) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ControlField;
    use crate::geometry::{trace_backward_characteristic, FateKind, SpatialPatch};
    use crate::grid::{build_grid, GridConfig};
    use crate::model::{FertilityKernel, MortalityRate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(nx: usize, n: usize) -> Grid {
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

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> StateField {
        StateField::from_vec(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn one_step_transpose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(4, 8);
        let p = PopulationParams::reference(5.0);
        for diffusion in [true, false] {
            let scheme = Scheme::new(&p, &g, diffusion).unwrap();
            let y = random_field(&g, &mut rng);
            let q = random_field(&g, &mut rng);
            let lhs = scheme.step(&y, None).unwrap().inner(&q, &g);
            let rhs = y.inner(&adjoint_step(&q, &scheme).unwrap(), &g);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
        }
    }

    #[test]
    fn inert_adjoint_keeps_spatial_constant() {
        let g = grid(4, 8);
        let p = PopulationParams::reference(0.0)
            .with_fertility(FertilityKernel::Zero)
            .with_size_mortality(MortalityRate::Zero);
        let mut p = p;
        p.mu1 = MortalityRate::Zero;
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let q = StateField::from_fn(&g, |_, a, s| a + 2.0 * s);
        let back = adjoint_step(&q, &scheme).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let v = back.at(i, j, 0);
                assert!((v - q.at(i + 1, j + 1, 0)).abs() < 1e-14);
                assert!((0..4).all(|k| (back.at(i, j, k) - v).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn zero_terminal_gives_zero_trajectory() {
        let g = grid(2, 8);
        let p = PopulationParams::reference(5.0);
        let adj = solve_adjoint(&StateField::zeros(&g), 0.5, &p, &g).unwrap();
        assert_eq!(adj.steps(), 4);
        assert!(adj.states.iter().all(|q| q.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn datum_exiting_through_size_boundary_vanishes() {
        let g = grid(2, 16);
        let p = PopulationParams::reference(0.0).with_fertility(FertilityKernel::Zero);
        // terminal data near s = S: every backward characteristic leaves via s = S
        let qt = StateField::from_fn(&g, |_, a, s| if s > 0.7 && a < 0.2 { 1.0 } else { 0.0 });
        let horizon = 0.5;
        let adj = solve_adjoint(&qt, horizon, &p, &g).unwrap();
        let empty = ControlSupport::boxed(0.0, 1e-9, 0.0, 1e-9, SpatialPatch::interval(0.0, 1.0));
        for i in 0..16 {
            for j in 0..16 {
                if qt.at(i, j, 0) == 0.0 {
                    continue;
                }
                let fate = trace_backward_characteristic(
                    g.age(i), g.size(j), horizon, &empty, &p, 0, &Default::default(),
                )
                .unwrap();
                assert_eq!(fate.kind, FateKind::ExitsSizeBoundary);
            }
        }
        assert!(adj.initial().linf() == 0.0);
    }

    #[test]
    fn transport_decay_closed_form() {
        let g = grid(2, 16);
        let p = PopulationParams::reference(0.0).with_fertility(FertilityKernel::Zero);
        let scheme = Scheme::new(&p, &g, false).unwrap();
        let qt = StateField::from_fn(&g, |x, a, s| 1.0 + x[0] + a - s * a);
        let n = 5;
        let adj = scheme.run_adjoint(&qt, n).unwrap();
        let q0 = adj.initial();
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i + n < 16 && j + n < 16 {
                    scheme.survival_along(i + n, j + n, n) * qt.at(i + n, j + n, 1)
                } else {
                    0.0
                };
                assert!((q0.at(i, j, 1) - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn duality_over_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = grid(4, 8);
        let p = PopulationParams::reference(5.0);
        let scheme = Scheme::new(&p, &g, true).unwrap();
        let support = ControlSupport::boxed(0.1, 0.5, 0.1, 0.9, SpatialPatch::interval(0.3, 0.7));
        let mask = support_mask(&g, &support);
        let nt = 6;
        let y0 = random_field(&g, &mut rng);
        let qt = random_field(&g, &mut rng);
        let mut u = ControlField::zeros(&g, nt);
        for (k, v) in u.data.iter_mut().enumerate() {
            *v = mask[k % g.len()] * rng.gen_range(-1.0..1.0);
        }
        let yt = scheme.run(&y0, Some(&u), nt, nt).unwrap();
        let adj = scheme.run_adjoint(&qt, nt).unwrap();
        let lhs = yt.terminal().inner(&qt, &g);
        let mut rhs = y0.inner(adj.initial(), &g);
        for n in 0..nt {
            let un = StateField::from_vec(&g, u.slice(n).to_vec()).unwrap();
            rhs += g.h * un.inner(&adj.states[n + 1], &g);
        }
        let scale = yt.terminal().norm(&g) * qt.norm(&g);
        assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn observed_norm_examples() {
        let g = grid(4, 8);
        let p = PopulationParams::reference(5.0);
        let ones = StateField::from_fn(&g, |_, _, _| 1.0);
        let adj = AdjointTrajectory {
            h: g.h,
            states: vec![ones.clone(); 5],
        };
        // cell-aligned box of measure 0.25 * 0.5 * 0.5
        let support = ControlSupport::boxed(0.25, 0.75, 0.0, 0.5, SpatialPatch::interval(0.0, 0.5));
        let v = 0.5 * 0.5 * 0.5;
        assert!((observed_norm(&adj, &support, &g) - v * 0.5).abs() < 1e-14);
        let full = ControlSupport::full(&p, SpatialPatch::interval(0.0, 1.0));
        let total: f64 = adj.states[1..].iter().map(|q| q.inner(q, &g)).sum::<f64>() * g.h;
        assert!((observed_norm(&adj, &full, &g) - total).abs() < 1e-14);
        let zero = AdjointTrajectory {
            h: g.h,
            states: vec![StateField::zeros(&g); 3],
        };
        assert_eq!(observed_norm(&zero, &full, &g), 0.0);
        assert!(observability_ratio(&zero, &support_mask(&g, &full), &g).is_none());
    }
}
