//! Model data: mortality rates, fertility kernel, survival functions and the
//! reproductive number.
//!
//! Mortality is split as `mu(a, s) = mu1(a) + mu2(s)`. Survival functions are
//! `pi(r) = exp(-M(r))` where `M` is the cumulative mortality; the singular
//! rate `1/(L - r)` has the closed form `M(r) = ln(L / (L - r))`, so survival
//! is `1 - r/L` and reaches exactly zero at the maximal age or size.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// A one-dimensional mortality rate on `[0, L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MortalityRate {
    Zero,
    Constant { value: f64 },
    /// `mu(r) = 1 / (L - r)`, survival `1 - r/L`.
    LinearSurvival,
    /// Piecewise constant on `values.len()` equal cells of `[0, L]`.
    /// The last value may be `+inf` to encode a blow-up of the integral.
    Table { values: Vec<f64> },
}

impl MortalityRate {
    pub fn rate(&self, r: f64, len: f64) -> f64 {
        match self {
            MortalityRate::Zero => 0.0,
            MortalityRate::Constant { value } => *value,
            MortalityRate::LinearSurvival => {
                if r >= len {
                    f64::INFINITY
                } else {
                    1.0 / (len - r)
                }
            }
            MortalityRate::Table { values } => {
                if values.is_empty() {
                    return f64::NAN;
                }
                let n = values.len();
                let idx = ((r / len) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize;
                values[idx]
            }
        }
    }

    /// `M(r) = int_0^r mu`. May be `+inf`.
    pub fn cumulative(&self, r: f64, len: f64) -> f64 {
        match self {
            MortalityRate::Zero => 0.0,
            MortalityRate::Constant { value } => value * r,
            MortalityRate::LinearSurvival => {
                if r >= len {
                    f64::INFINITY
                } else {
                    (len / (len - r)).ln()
                }
            }
            MortalityRate::Table { values } => {
                if values.is_empty() {
                    return f64::NAN;
                }
                let n = values.len();
                let width = len / n as f64;
                let mut total = 0.0;
                for (k, &v) in values.iter().enumerate() {
                    let lo = k as f64 * width;
                    if r <= lo {
                        break;
                    }
                    let piece = (r.min(lo + width) - lo).max(0.0);
                    if piece > 0.0 {
                        total += if v.is_infinite() { v } else { v * piece };
                    }
                }
                total
            }
        }
    }

    fn breakpoints(&self, len: f64) -> Vec<f64> {
        match self {
            MortalityRate::Table { values } if !values.is_empty() => {
                let n = values.len();
                (1..n).map(|k| k as f64 * len / n as f64).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Survival ratio `exp(-(M(hi) - M(lo)))` computed by subtraction of cumulative
/// integrals; zero whenever the endpoint integral is infinite.
pub(crate) fn ratio_from_cumulative(m_lo: f64, m_hi: f64) -> f64 {
    if m_hi.is_infinite() {
        0.0
    } else {
        (-(m_hi - m_lo)).exp()
    }
}

/// A factor of a separable fertility kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `value` on `(lo, hi]`, zero elsewhere.
    Indicator { lo: f64, hi: f64, value: f64 },
    /// Piecewise constant on equal cells of `[0, L]`.
    Table { values: Vec<f64> },
}

impl Profile {
    pub fn eval(&self, r: f64, len: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Indicator { lo, hi, value } => {
                if r > *lo && r <= *hi {
                    *value
                } else {
                    0.0
                }
            }
            Profile::Table { values } => {
                if values.is_empty() {
                    return f64::NAN;
                }
                let n = values.len();
                let idx = ((r / len) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize;
                values[idx]
            }
        }
    }

    fn breakpoints(&self, len: f64) -> Vec<f64> {
        match self {
            Profile::Constant { .. } => Vec::new(),
            Profile::Indicator { lo, hi, .. } => vec![*lo, *hi],
            Profile::Table { values } => {
                let n = values.len().max(1);
                (1..n).map(|k| k as f64 * len / n as f64).collect()
            }
        }
    }

    fn table_len(&self) -> Option<usize> {
        match self {
            Profile::Table { values } => Some(values.len()),
            _ => None,
        }
    }
}

/// Fertility kernel `beta(a, parent_size, newborn_size)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FertilityKernel {
    Zero,
    /// `beta = age(a) * parent_size(s_hat) * newborn_size(s)`.
    Separable {
        age: Profile,
        parent_size: Profile,
        newborn_size: Profile,
    },
    /// Piecewise constant on `na x ns x ns` cells, row-major `[a][s_hat][s]`.
    Table {
        na: usize,
        ns: usize,
        values: Vec<f64>,
    },
}

impl FertilityKernel {
    pub fn eval(&self, a: f64, parent: f64, newborn: f64, max_age: f64, max_size: f64) -> f64 {
        match self {
            FertilityKernel::Zero => 0.0,
            FertilityKernel::Separable {
                age,
                parent_size,
                newborn_size,
            } => {
                age.eval(a, max_age)
                    * parent_size.eval(parent, max_size)
                    * newborn_size.eval(newborn, max_size)
            }
            FertilityKernel::Table { na, ns, values } => {
                if *na == 0 || *ns == 0 || values.len() != na * ns * ns {
                    return f64::NAN;
                }
                let cell = |r: f64, len: f64, n: usize| {
                    ((r / len) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize
                };
                let i = cell(a, max_age, *na);
                let k = cell(parent, max_size, *ns);
                let j = cell(newborn, max_size, *ns);
                values[(i * ns + k) * ns + j]
            }
        }
    }
}

/// Demographic hypotheses checkable on a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Age mortality nonnegative, locally integrable, with divergent integral.
    H1,
    /// The size analogue of H1.
    #[serde(rename = "h1")]
    SizeH1,
    /// Fertility nonnegative (and finite on the tabulation).
    H2,
    /// No fertility below the minimal fertile age.
    H3,
    /// No newborns larger than the maximal newborn size.
    H4,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] = [
        Hypothesis::H1,
        Hypothesis::SizeH1,
        Hypothesis::H2,
        Hypothesis::H3,
        Hypothesis::H4,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Hypothesis::H1 => "H1",
            Hypothesis::SizeH1 => "h1",
            Hypothesis::H2 => "H2",
            Hypothesis::H3 => "H3",
            Hypothesis::H4 => "H4",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Hypothesis::ALL.into_iter().find(|h| h.tag() == tag)
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotAsserted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub hypothesis: Hypothesis,
    pub status: CheckStatus,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn status(&self, h: Hypothesis) -> CheckStatus {
        self.checks
            .iter()
            .find(|c| c.hypothesis == h)
            .map(|c| c.status)
            .unwrap_or(CheckStatus::NotAsserted)
    }

    /// No declared hypothesis failed.
    pub fn all_declared_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationOptions {
    /// Survival at the maximal age/size must fall below this.
    pub survival_floor: f64,
    /// Sampling points per axis for kernel checks.
    pub samples: usize,
    /// If set, warn when survival at the last cell center of a grid with this
    /// many age cells exceeds `resolution_warn`.
    pub grid_cells: Option<usize>,
    pub resolution_warn: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            survival_floor: 1e-8,
            samples: 48,
            grid_cells: None,
            resolution_warn: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub max_age: f64,
    pub max_size: f64,
    pub mu1: MortalityRate,
    pub mu2: MortalityRate,
    pub beta: FertilityKernel,
    /// Minimal fertile age.
    pub a_hat: f64,
    /// Maximal newborn size.
    pub s_e: f64,
}

impl PopulationParams {
    pub fn new(
        max_age: f64,
        max_size: f64,
        mu1: MortalityRate,
        mu2: MortalityRate,
        beta: FertilityKernel,
        a_hat: f64,
        s_e: f64,
    ) -> Result<Self> {
        let p = Self {
            max_age,
            max_size,
            mu1,
            mu2,
            beta,
            a_hat,
            s_e,
        };
        p.check_scalars()?;
        Ok(p)
    }

    pub fn check_scalars(&self) -> Result<()> {
        if !(self.max_age > 0.0 && self.max_age.is_finite()) {
            return Err(Error::config("A", "maximal age must be positive and finite"));
        }
        if !(self.max_size > 0.0 && self.max_size.is_finite()) {
            return Err(Error::config("S", "maximal size must be positive and finite"));
        }
        if !(self.a_hat > 0.0 && self.a_hat < self.max_age) {
            return Err(Error::config("a_hat", "minimal fertile age must lie in (0, A)"));
        }
        if !(self.s_e > 0.0 && self.s_e <= self.max_size) {
            return Err(Error::config("s_e", "maximal newborn size must lie in (0, S]"));
        }
        Ok(())
    }

    /// Reference scenario: `A = S = 1`, `mu = 1/(1-a) + 1/(1-s)`,
    /// `beta = beta0 * 1{a > 0.55}`.
    pub fn reference(beta0: f64) -> Self {
        Self {
            max_age: 1.0,
            max_size: 1.0,
            mu1: MortalityRate::LinearSurvival,
            mu2: MortalityRate::LinearSurvival,
            beta: FertilityKernel::Separable {
                age: Profile::Indicator {
                    lo: 0.55,
                    hi: 1.0,
                    value: beta0,
                },
                parent_size: Profile::Constant { value: 1.0 },
                newborn_size: Profile::Constant { value: 1.0 },
            },
            a_hat: 0.55,
            s_e: 1.0,
        }
    }

    /// Reference scenario with newborn sizes restricted to `(0, s_e]`.
    pub fn reference_oblique(beta0: f64, s_e: f64) -> Self {
        let mut p = Self::reference(beta0);
        if let FertilityKernel::Separable { newborn_size, .. } = &mut p.beta {
            *newborn_size = Profile::Indicator {
                lo: 0.0,
                hi: s_e,
                value: 1.0,
            };
        }
        p.s_e = s_e;
        p
    }

    pub fn with_size_mortality(mut self, mu2: MortalityRate) -> Self {
        self.mu2 = mu2;
        self
    }

    pub fn with_fertility(mut self, beta: FertilityKernel) -> Self {
        self.beta = beta;
        self
    }

    pub fn mortality(&self, a: f64, s: f64) -> f64 {
        self.mu1.rate(a, self.max_age) + self.mu2.rate(s, self.max_size)
    }

    pub fn beta(&self, a: f64, parent: f64, newborn: f64) -> f64 {
        self.beta
            .eval(a, parent, newborn, self.max_age, self.max_size)
    }

    pub fn cumulative_age_mortality(&self, a: f64) -> f64 {
        self.mu1.cumulative(a, self.max_age)
    }

    pub fn cumulative_size_mortality(&self, s: f64) -> f64 {
        self.mu2.cumulative(s, self.max_size)
    }

    fn check_age(&self, a: f64) -> Result<()> {
        if !(0.0..=self.max_age).contains(&a) {
            return Err(Error::Domain(format!("age {a} outside [0, {}]", self.max_age)));
        }
        Ok(())
    }

    fn check_size(&self, s: f64) -> Result<()> {
        if !(0.0..=self.max_size).contains(&s) {
            return Err(Error::Domain(format!("size {s} outside [0, {}]", self.max_size)));
        }
        Ok(())
    }

    /// `pi1(a) = exp(-int_0^a mu1)`.
    pub fn survival_age(&self, a: f64) -> Result<f64> {
        self.check_age(a)?;
        Ok(ratio_from_cumulative(0.0, self.cumulative_age_mortality(a)))
    }

    /// `pi2(s) = exp(-int_0^s mu2)`.
    pub fn survival_size(&self, s: f64) -> Result<f64> {
        self.check_size(s)?;
        Ok(ratio_from_cumulative(0.0, self.cumulative_size_mortality(s)))
    }

    /// `pi1(a) / pi1(a - t)` without forming the quotient.
    pub fn age_survival_ratio(&self, a: f64, t: f64) -> Result<f64> {
        self.check_age(a)?;
        self.check_age(a - t)?;
        Ok(ratio_from_cumulative(
            self.cumulative_age_mortality(a - t),
            self.cumulative_age_mortality(a),
        ))
    }

    pub fn size_survival_ratio(&self, s: f64, t: f64) -> Result<f64> {
        self.check_size(s)?;
        self.check_size(s - t)?;
        Ok(ratio_from_cumulative(
            self.cumulative_size_mortality(s - t),
            self.cumulative_size_mortality(s),
        ))
    }

    /// `R(s) = int_0^A int_0^S beta(a, s_hat, s) pi1(a) ds_hat da`, composite
    /// midpoint with panels split at the kernel's breakpoints.
    pub fn reproductive_number(&self, s: f64) -> Result<f64> {
        self.reproductive_number_with(s, 1024)
    }

    pub fn reproductive_number_with(&self, s: f64, cells: usize) -> Result<f64> {
        self.check_size(s)?;
        let (a_len, s_len) = (self.max_age, self.max_size);
        let pi1 = |a: f64| ratio_from_cumulative(0.0, self.mu1.cumulative(a, a_len));
        let mut age_breaks = self.mu1.breakpoints(a_len);
        let value = match &self.beta {
            FertilityKernel::Zero => 0.0,
            FertilityKernel::Separable {
                age,
                parent_size,
                newborn_size,
            } => {
                let newborn = newborn_size.eval(s, s_len);
                if newborn == 0.0 {
                    0.0
                } else {
                    age_breaks.extend(age.breakpoints(a_len));
                    let age_part =
                        midpoint(|a| age.eval(a, a_len) * pi1(a), 0.0, a_len, &age_breaks, cells);
                    let size_part = midpoint(
                        |r| parent_size.eval(r, s_len),
                        0.0,
                        s_len,
                        &parent_size.breakpoints(s_len),
                        cells,
                    );
                    newborn * age_part * size_part
                }
            }
            FertilityKernel::Table { na, ns, values } => {
                if *na == 0 || *ns == 0 || values.len() != na * ns * ns {
                    return Err(Error::Shape("fertility table size != na*ns*ns".into()));
                }
                let da = a_len / *na as f64;
                let ds = s_len / *ns as f64;
                let j = ((s / s_len) * *ns as f64).floor().clamp(0.0, (*ns - 1) as f64) as usize;
                let per_cell = (cells / na).max(4);
                let mut total = 0.0;
                for i in 0..*na {
                    let w = midpoint(pi1, i as f64 * da, (i + 1) as f64 * da, &age_breaks, per_cell);
                    let row: f64 = (0..*ns).map(|k| values[(i * ns + k) * ns + j]).sum();
                    total += w * row * ds;
                }
                total
            }
        };
        Ok(value)
    }

    /// `int_0^S R(s) ds`, the expected offspring over all newborn sizes.
    pub fn reproductive_total(&self) -> Result<f64> {
        let s_len = self.max_size;
        let breaks = match &self.beta {
            FertilityKernel::Zero => return Ok(0.0),
            FertilityKernel::Separable { newborn_size, .. } => newborn_size.breakpoints(s_len),
            FertilityKernel::Table { ns, .. } => {
                let n = (*ns).max(1);
                (1..n).map(|k| k as f64 * s_len / n as f64).collect()
            }
        };
        // surfaces table shape errors; sizes inside [0, S] cannot fail
        self.reproductive_number_with(0.5 * s_len, 4)?;
        Ok(midpoint(
            |s| self.reproductive_number_with(s, 256).unwrap_or(f64::NAN),
            0.0,
            s_len,
            &breaks,
            64,
        ))
    }

    /// `sup_s R(s)` over `ns` cell-centered nodes.
    pub fn reproductive_sup(&self, ns: usize) -> Result<f64> {
        let ds = self.max_size / ns as f64;
        let mut best = 0.0f64;
        for j in 0..ns {
            best = best.max(self.reproductive_number((j as f64 + 0.5) * ds)?);
        }
        Ok(best)
    }

    pub fn validate_hypotheses(
        &self,
        declared: &BTreeSet<Hypothesis>,
        opts: &ValidationOptions,
    ) -> ValidationReport {
        let mut checks = Vec::new();
        let mut warnings = Vec::new();
        for h in Hypothesis::ALL {
            if !declared.contains(&h) {
                checks.push(HypothesisCheck {
                    hypothesis: h,
                    status: CheckStatus::NotAsserted,
                    violations: Vec::new(),
                });
                continue;
            }
            let violations = match h {
                Hypothesis::H1 => self.mortality_violations(&self.mu1, self.max_age, "mu1", opts),
                Hypothesis::SizeH1 => {
                    self.mortality_violations(&self.mu2, self.max_size, "mu2", opts)
                }
                Hypothesis::H2 => self.kernel_violations(opts, None, "beta"),
                Hypothesis::H3 => {
                    let a_hat = self.a_hat;
                    self.kernel_violations(opts, Some(&|a, _, _| a < a_hat), "beta(a<a_hat)")
                }
                Hypothesis::H4 => {
                    let s_e = self.s_e;
                    self.kernel_violations(opts, Some(&|_, _, s| s > s_e), "beta(s>s_e)")
                }
            };
            checks.push(HypothesisCheck {
                hypothesis: h,
                status: if violations.is_empty() {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
                violations,
            });
        }
        if let Some(n) = opts.grid_cells {
            for (name, rate, len) in [
                ("mu1", &self.mu1, self.max_age),
                ("mu2", &self.mu2, self.max_size),
            ] {
                let last = len * (n as f64 - 0.5) / n as f64;
                let pi_last = ratio_from_cumulative(0.0, rate.cumulative(last, len));
                if pi_last > opts.resolution_warn {
                    warnings.push(format!(
                        "{name}: survival {pi_last:.3e} at the last cell center (n = {n}) exceeds {:.3e}; \
                         the mortality singularity is not resolved on this grid",
                        opts.resolution_warn
                    ));
                }
            }
        }
        ValidationReport { checks, warnings }
    }

    fn mortality_violations(
        &self,
        rate: &MortalityRate,
        len: f64,
        name: &str,
        opts: &ValidationOptions,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        match rate {
            MortalityRate::Table { values } if values.is_empty() => {
                out.push(Violation {
                    location: format!("{name}: empty table"),
                    value: f64::NAN,
                });
                return out;
            }
            MortalityRate::Table { values } => {
                let n = values.len();
                for (k, &v) in values.iter().enumerate() {
                    let interior = k + 1 < n;
                    if v < 0.0 || v.is_nan() || (interior && v.is_infinite()) {
                        out.push(Violation {
                            location: format!("{name}[{k}]"),
                            value: v,
                        });
                    }
                }
            }
            MortalityRate::Constant { value } if *value < 0.0 || !value.is_finite() => {
                out.push(Violation {
                    location: format!("{name}: constant"),
                    value: *value,
                });
            }
            _ => {}
        }
        let pi_end = ratio_from_cumulative(0.0, rate.cumulative(len, len));
        if !(pi_end <= opts.survival_floor) {
            out.push(Violation {
                location: format!("{name}: survival at {len} above floor {:e}", opts.survival_floor),
                value: pi_end,
            });
        }
        out
    }

    fn kernel_violations(
        &self,
        opts: &ValidationOptions,
        zero_region: Option<&dyn Fn(f64, f64, f64) -> bool>,
        tag: &str,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        if let FertilityKernel::Table { na, ns, values } = &self.beta {
            if *na == 0 || *ns == 0 || values.len() != na * ns * ns {
                out.push(Violation {
                    location: format!("{tag}: table shape"),
                    value: values.len() as f64,
                });
                return out;
            }
        }
        if let FertilityKernel::Separable {
            age,
            parent_size,
            newborn_size,
        } = &self.beta
        {
            for (name, p) in [("age", age), ("parent_size", parent_size), ("newborn_size", newborn_size)] {
                if p.table_len() == Some(0) {
                    out.push(Violation {
                        location: format!("{tag}: empty {name} table"),
                        value: f64::NAN,
                    });
                    return out;
                }
            }
        }
        let n = opts.samples.max(2);
        let (la, ls) = (self.max_age, self.max_size);
        for i in 0..n {
            let a = (i as f64 + 0.5) * la / n as f64;
            for k in 0..n {
                let sh = (k as f64 + 0.5) * ls / n as f64;
                for j in 0..n {
                    let s = (j as f64 + 0.5) * ls / n as f64;
                    let v = self.beta(a, sh, s);
                    let bad = match zero_region {
                        None => !(v >= 0.0) || !v.is_finite(),
                        Some(region) => region(a, sh, s) && v != 0.0,
                    };
                    if bad && out.len() < 16 {
                        out.push(Violation {
                            location: format!("{tag} at (a={a:.4}, s_hat={sh:.4}, s={s:.4})"),
                            value: v,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Composite midpoint rule, panels split at `breaks`, about `cells` nodes in total.
pub(crate) fn midpoint(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], cells: usize) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let total = hi - lo;
    let mut sum = 0.0;
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        let m = (((q - p) / total) * cells as f64).ceil().max(1.0) as usize;
        let dx = (q - p) / m as f64;
        for k in 0..m {
            sum += f(p + (k as f64 + 0.5) * dx) * dx;
        }
    }
    sum
}
