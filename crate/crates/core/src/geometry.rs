//! Control supports, controllability time constants, and a tracer for the
//! backward characteristics of the adjoint system.
//!
//! Characteristics have unit speed in both age and size. Starting from
//! `(a, s)` at adjoint time `t` and letting `lambda` decrease to zero, the
//! point moves to `(a + t - lambda, s + t - lambda)`. It is observed once it
//! enters the `(a, s)` cross-section of the support, it vanishes when the size
//! reaches `S`, and at age `A` it is fed by the renewal term, which restarts
//! the characteristic at age zero for every newborn size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PopulationParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SupportShape {
    /// `(a1, a2) x (s1, s2)`.
    Box { a1: f64, a2: f64, s1: f64, s2: f64 },
    /// `a in (a1, a2)` and `a - a0 < s < a + s_e`.
    Oblique { a1: f64, a2: f64, a0: f64, s_e: f64 },
}

/// Open spatial box `prod (lo_k, hi_k)`. `lo == hi` gives an empty patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialPatch {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SpatialPatch {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&lo, &hi))| v > lo && v < hi)
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| (hi - lo).max(0.0))
            .product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSupport {
    pub shape: SupportShape,
    pub omega: SpatialPatch,
}

impl ControlSupport {
    pub fn boxed(a1: f64, a2: f64, s1: f64, s2: f64, omega: SpatialPatch) -> Self {
        Self {
            shape: SupportShape::Box { a1, a2, s1, s2 },
            omega,
        }
    }

    pub fn oblique(a1: f64, a2: f64, a0: f64, s_e: f64, omega: SpatialPatch) -> Self {
        Self {
            shape: SupportShape::Oblique { a1, a2, a0, s_e },
            omega,
        }
    }

    /// The whole `(0, A) x (0, S)` with the spatial patch `omega`.
    pub fn full(params: &PopulationParams, omega: SpatialPatch) -> Self {
        Self::boxed(0.0, params.max_age, 0.0, params.max_size, omega)
    }

    /// Invariants of the shape against the model bounds.
    pub fn validate(&self, params: &PopulationParams) -> Result<()> {
        if self.omega.lo.len() != self.omega.hi.len() || self.omega.lo.is_empty() {
            return Err(Error::config("support.omega", "lo/hi must have the same nonzero length"));
        }
        if self.omega.lo.iter().zip(&self.omega.hi).any(|(lo, hi)| lo > hi) {
            return Err(Error::config("support.omega", "lo must not exceed hi"));
        }
        match self.shape {
            SupportShape::Box { a1, a2, s1, s2 } => {
                if !(0.0 <= a1 && a1 < a2 && a2 <= params.max_age) {
                    return Err(Error::config("support", "box needs 0 <= a1 < a2 <= A"));
                }
                if !(0.0 <= s1 && s1 < s2 && s2 <= params.max_size) {
                    return Err(Error::config("support", "box needs 0 <= s1 < s2 <= S"));
                }
            }
            SupportShape::Oblique { a1, a2, a0, s_e } => {
                if !(0.0 <= a1 && a1 < a2 && a2 <= params.max_age) {
                    return Err(Error::config("support", "oblique needs 0 <= a1 < a2 <= A"));
                }
                if !(s_e > 0.0 && s_e <= params.max_size) {
                    return Err(Error::config("support", "oblique needs 0 < s_e <= S"));
                }
                if !(a0 >= a1 && a0 <= params.a_hat) {
                    return Err(Error::config("support", "oblique needs a0 in [a1, a_hat]"));
                }
            }
        }
        Ok(())
    }

    /// Exact membership of the `(a, s)` cross-section.
    pub fn contains_age_size(&self, a: f64, s: f64) -> bool {
        match self.shape {
            SupportShape::Box { a1, a2, s1, s2 } => a > a1 && a < a2 && s > s1 && s < s2,
            SupportShape::Oblique { a1, a2, a0, s_e } => {
                a > a1 && a < a2 && s > 0.0 && s > a - a0 && s < a + s_e
            }
        }
    }

    pub fn contains(&self, x: &[f64], a: f64, s: f64) -> bool {
        self.contains_age_size(a, s) && self.omega.contains(x)
    }

    /// `(T0, T1) = (max{s1, S - s2}, max{a1 + S - s2, s1})`.
    pub fn time_constants(&self, max_size: f64) -> Result<(f64, f64)> {
        match self.shape {
            SupportShape::Box { a1, s1, s2, .. } => {
                let t0 = s1.max(max_size - s2);
                let t1 = (a1 + (max_size - s2)).max(s1);
                Ok((t0, t1))
            }
            SupportShape::Oblique { .. } => Err(Error::UnsupportedVariant("oblique")),
        }
    }

    pub fn control_time_threshold(&self, params: &PopulationParams) -> Threshold {
        let mut warnings = Vec::new();
        match self.shape {
            SupportShape::Box { a1, a2, .. } => {
                let (t0, t1) = self
                    .time_constants(params.max_size)
                    .expect("box variant has time constants");
                if a1 >= params.a_hat {
                    warnings.push(format!(
                        "side condition a1 < a_hat violated: a1 = {a1}, a_hat = {}",
                        params.a_hat
                    ));
                }
                let bound = (a2 - a1).min(params.a_hat - a1);
                let remark_bound = a2.min(params.a_hat) - a1;
                if t0 >= bound {
                    warnings.push(format!(
                        "side condition T0 < min(a2 - a1, a_hat - a1) violated: T0 = {t0}, \
                         min(a2 - a1, a_hat - a1) = {bound}, min(a2, a_hat) - a1 = {remark_bound}"
                    ));
                }
                Threshold {
                    t_min: params.max_age - a2 + t1 + t0,
                    t0: Some(t0),
                    t1: Some(t1),
                    warnings,
                }
            }
            SupportShape::Oblique { a1, a0, s_e, .. } => {
                if a0 < a1 || a0 > params.a_hat {
                    warnings.push(format!(
                        "standing condition a0 in [a1, a_hat] violated: a0 = {a0}, a1 = {a1}, a_hat = {}",
                        params.a_hat
                    ));
                }
                Threshold {
                    t_min: (params.max_size - s_e).max(params.max_age - a0 + a1),
                    t0: None,
                    t1: None,
                    warnings,
                }
            }
        }
    }

    /// Entry interval `[lo, hi)` of elapsed times during which the ray
    /// `(a + e, s + e)` lies in the cross-section, if nonempty.
    fn entry_window(&self, a: f64, s: f64, max_size: f64) -> Option<(f64, f64)> {
        let (lo, hi) = match self.shape {
            SupportShape::Box { a1, a2, s1, s2 } => {
                ((a1 - a).max(s1 - s).max(0.0), (a2 - a).min(s2 - s))
            }
            SupportShape::Oblique { a1, a2, a0, s_e } => {
                let d = s - a;
                if !(d > -a0 && d < s_e) {
                    return None;
                }
                ((a1 - a).max(-s).max(0.0), (a2 - a).min(max_size - s))
            }
        };
        (lo < hi).then_some((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub t_min: f64,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Characteristic reaches time zero before either boundary.
    A1,
    A2,
}

pub fn classify_region(a: f64, s: f64, t: f64, params: &PopulationParams) -> Result<Region> {
    if !(0.0..=params.max_age).contains(&a)
        || !(0.0..=params.max_size).contains(&s)
        || !(t >= 0.0 && t.is_finite())
    {
        return Err(Error::Domain(format!("(a, s, t) = ({a}, {s}, {t}) out of domain")));
    }
    if t < params.max_age - a && t < params.max_size - s {
        Ok(Region::A1)
    } else {
        Ok(Region::A2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FateKind {
    EntersSupport,
    ExitsSizeBoundary,
    ReachesTimeZero,
    RenewsAtMaxAge,
}

impl FateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FateKind::EntersSupport => "enters_support",
            FateKind::ExitsSizeBoundary => "exits_size_boundary",
            FateKind::ReachesTimeZero => "reaches_time_zero",
            FateKind::RenewsAtMaxAge => "renews_at_max_age",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharFate {
    pub kind: FateKind,
    /// Elapsed `t - lambda` at the event, measured from the original start.
    pub event_time: f64,
    /// Vertices `(a, s, lambda)` of this generation's segment.
    pub polyline: Vec<[f64; 3]>,
    /// Renewals that preceded this segment.
    pub renewals: usize,
    /// Per-newborn-size fates of the renewal fan. Empty unless renewed with
    /// renewals remaining.
    pub offspring: Vec<CharFate>,
    /// The renewal integrand vanishes along the fertile part of the segment.
    pub null_renewal: bool,
}

impl CharFate {
    pub fn covered(&self) -> bool {
        match self.kind {
            FateKind::EntersSupport | FateKind::ExitsSizeBoundary => true,
            FateKind::ReachesTimeZero => false,
            FateKind::RenewsAtMaxAge => {
                self.null_renewal
                    || (!self.offspring.is_empty() && self.offspring.iter().all(CharFate::covered))
            }
        }
    }

    /// The fate that decides coverage: an uncovered offspring if there is
    /// one (a renewal is covered only if every newborn size is), otherwise
    /// the latest covered one.
    pub fn resolved(&self) -> &CharFate {
        if self.kind != FateKind::RenewsAtMaxAge || self.null_renewal || self.offspring.is_empty() {
            return self;
        }
        if let Some(bad) = self.offspring.iter().find(|c| !c.covered()) {
            return bad.resolved();
        }
        self.offspring
            .iter()
            .map(CharFate::resolved)
            .max_by(|x, y| x.event_time.partial_cmp(&y.event_time).unwrap())
            .unwrap_or(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceOptions {
    /// Restart sizes equispaced in `(0, s_e)`.
    pub fan: usize,
    /// Points sampled on the fertile part of a segment to decide whether
    /// the renewal integrand vanishes.
    pub fertility_samples: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            fan: 8,
            fertility_samples: 16,
        }
    }
}

pub fn trace_backward_characteristic(
    a: f64,
    s: f64,
    t: f64,
    support: &ControlSupport,
    params: &PopulationParams,
    max_renewals: i32,
    opts: &TraceOptions,
) -> Result<CharFate> {
    if max_renewals < 0 {
        return Err(Error::Domain(format!("max_renewals = {max_renewals} < 0")));
    }
    if !(0.0..=params.max_age).contains(&a) || !(0.0..=params.max_size).contains(&s) || !(t >= 0.0)
    {
        return Err(Error::Domain(format!("start (a, s, t) = ({a}, {s}, {t}) out of domain")));
    }
    Ok(trace_segment(a, s, t, 0.0, 0, max_renewals as usize, support, params, opts))
}

#[allow(clippy::too_many_arguments)]
fn trace_segment(
    a: f64,
    s: f64,
    lambda: f64,
    elapsed: f64,
    renewals: usize,
    max_renewals: usize,
    support: &ControlSupport,
    params: &PopulationParams,
    opts: &TraceOptions,
) -> CharFate {
    let to_size = params.max_size - s;
    let to_age = params.max_age - a;
    let entry = support
        .entry_window(a, s, params.max_size)
        .map(|(lo, _)| lo)
        .filter(|&lo| lo < lambda && lo <= to_size && lo <= to_age);

    // tie order: support, size boundary, age boundary, time zero
    let (kind, e) = if let Some(lo) = entry {
        (FateKind::EntersSupport, lo)
    } else if to_size <= to_age && to_size <= lambda {
        (FateKind::ExitsSizeBoundary, to_size)
    } else if to_age < lambda {
        (FateKind::RenewsAtMaxAge, to_age)
    } else {
        (FateKind::ReachesTimeZero, lambda)
    };
    let polyline = vec![[a, s, lambda], [a + e, s + e, lambda - e]];
    let mut fate = CharFate {
        kind,
        event_time: elapsed + e,
        polyline,
        renewals,
        offspring: Vec::new(),
        null_renewal: false,
    };
    if kind == FateKind::RenewsAtMaxAge {
        fate.null_renewal = renewal_vanishes(a, s, to_age, params, opts);
        if !fate.null_renewal && renewals < max_renewals {
            let remaining = lambda - to_age;
            let n = opts.fan.max(1);
            fate.offspring = (0..n)
                .map(|k| {
                    let newborn = params.s_e * (k as f64 + 0.5) / n as f64;
                    trace_segment(
                        0.0,
                        newborn,
                        remaining,
                        elapsed + to_age,
                        renewals + 1,
                        max_renewals,
                        support,
                        params,
                        opts,
                    )
                })
                .collect();
        }
    }
    fate
}

/// Samples `beta(a + e, s + e, newborn)` on the fertile part of the segment.
fn renewal_vanishes(a: f64, s: f64, len: f64, params: &PopulationParams, opts: &TraceOptions) -> bool {
    let start = (params.a_hat - a).max(0.0);
    if start >= len {
        return true;
    }
    let m = opts.fertility_samples.max(1);
    let n = opts.fan.max(1);
    for k in 0..m {
        let e = start + (len - start) * (k as f64 + 0.5) / m as f64;
        for j in 0..n {
            let newborn = params.s_e * (j as f64 + 0.5) / n as f64;
            if params.beta(a + e, (s + e).min(params.max_size), newborn) != 0.0 {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFate {
    pub a: f64,
    pub s: f64,
    pub fate: FateKind,
    pub event_time: f64,
    pub renewals: usize,
    pub covered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub horizon: f64,
    pub fraction: f64,
    pub na: usize,
    pub ns: usize,
    pub cells: Vec<CellFate>,
}

/// Traces every cell center of an `na x ns` grid at time `horizon` with a
/// single allowed renewal.
pub fn coverage_report(
    horizon: f64,
    support: &ControlSupport,
    params: &PopulationParams,
    na: usize,
    ns: usize,
    opts: &TraceOptions,
) -> Result<CoverageReport> {
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon {horizon} must be positive")));
    }
    let mut cells = Vec::with_capacity(na * ns);
    let mut covered = 0usize;
    for i in 0..na {
        let a = (i as f64 + 0.5) * params.max_age / na as f64;
        for j in 0..ns {
            let s = (j as f64 + 0.5) * params.max_size / ns as f64;
            let fate = trace_backward_characteristic(a, s, horizon, support, params, 1, opts)?;
            let ok = fate.covered();
            covered += ok as usize;
            let r = fate.resolved();
            cells.push(CellFate {
                a,
                s,
                fate: r.kind,
                event_time: r.event_time,
                renewals: r.renewals,
                covered: ok,
            });
        }
    }
    Ok(CoverageReport {
        horizon,
        fraction: covered as f64 / (na * ns).max(1) as f64,
        na,
        ns,
        cells,
    })
}
