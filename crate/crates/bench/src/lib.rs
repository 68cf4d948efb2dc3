//! Shared fixtures for the solver benchmarks.

use popctl_core::{build_grid, ControlSupport, GridConfig, PopulationParams, Scheme, SpatialPatch, StateField};

/// The reference scenario with `beta0 = 5` on an `nx x n x n` grid.
pub struct Fixture {
    pub params: PopulationParams,
    pub scheme: Scheme,
    pub y0: StateField,
    pub support: ControlSupport,
}

impl Fixture {
    pub fn new(nx: usize, n: usize) -> Self {
        let params = PopulationParams::reference(5.0);
        let grid = build_grid(&GridConfig::for_params(&params, nx, n, n)).expect("aligned grid");
        let scheme = Scheme::new(&params, &grid, true).expect("valid scheme");
        let y0 = StateField::from_fn(&grid, |x, _, _| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).cos());
        let support = ControlSupport::boxed(0.1, 0.5, 0.1, 0.9, SpatialPatch::interval(0.3, 0.7));
        Self {
            params,
            scheme,
            y0,
            support,
        }
    }
}
