//! Age-size-space structured population dynamics with diffusion and a renewal
//! boundary condition: simulation, exact discrete adjoint, penalized HUM
//! null-control synthesis, steady states and the staircase procedure.
//!
//! The state `y(x, a, s, t)` solves
//!
//! ```text
//! y_t + y_a + y_s - Δy + (mu1(a) + mu2(s)) y = m u
//! y(x, 0, s, t) = int int beta(a, s_hat, s) y(x, a, s_hat, t) da ds_hat
//! y(x, a, 0, t) = 0,   Neumann in x
//! ```
//!
//! Age, size and time share one step `h`, so transport is an exact index
//! shift and every solver is a composition of a few linear maps whose
//! transposes are available in closed form.

pub mod adjoint;
pub mod equilibria;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod hum;
pub mod io;
pub mod model;
pub mod staircase;

pub use adjoint::{observed_norm, solve_adjoint, AdjointTrajectory};
pub use equilibria::{detect_blowup, linf_monitor, solve_steady, BlowupReport, SteadyOptions, SteadyState};
pub use error::{Error, Result};
pub use forward::{solve_forward, solve_renewal_volterra, ControlField, Scheme, Trajectory};
pub use geometry::{
    classify_region, coverage_report, trace_backward_characteristic, CharFate, ControlSupport,
    FateKind, Region, SpatialPatch, SupportShape, Threshold, TraceOptions,
};
pub use grid::{build_grid, Grid, GridConfig, StateField};
pub use hum::{synthesize_control, threshold_sweep, HumConfig, HumResult};
pub use model::{
    FertilityKernel, Hypothesis, MortalityRate, PopulationParams, Profile, ValidationOptions,
    ValidationReport,
};
pub use staircase::{plan_staircase, run_staircase, StaircasePlan, StaircaseRun};
