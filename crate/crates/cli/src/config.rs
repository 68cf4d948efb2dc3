//! Experiment configuration. Every table rejects unknown keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use popctl_core::{
    ControlSupport, Error, FertilityKernel, GridConfig, Hypothesis, MortalityRate,
    PopulationParams, Result, SpatialPatch,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Validate,
    Geometry,
    Simulate,
    AdjointCheck,
    Hum,
    Sweep,
    BlowupProbe,
    Steady,
    Staircase,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Geometry => "geometry",
            Kind::Simulate => "simulate",
            Kind::AdjointCheck => "adjoint-check",
            Kind::Hum => "hum",
            Kind::Sweep => "sweep",
            Kind::BlowupProbe => "blowup-probe",
            Kind::Steady => "steady",
            Kind::Staircase => "staircase",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub support: SupportConfig,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub validate: ValidateOptions,
    #[serde(default)]
    pub geometry: GeometryOptions,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default, rename = "adjoint-check")]
    pub adjoint_check: AdjointCheckOptions,
    #[serde(default)]
    pub hum: HumOptions,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default, rename = "blowup-probe")]
    pub blowup: BlowupProbeOptions,
    #[serde(default)]
    pub steady: SteadyConfig,
    #[serde(default)]
    pub staircase: StaircaseConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .map_or_else(|| "config".to_string(), |line| format!("line {line}"));
            Error::config(key, e.message().to_string())
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `A = S = 1`, `mu = 1/(1-a) + 1/(1-s)`, `beta = beta0 1{a > 0.55}`.
    #[default]
    Reference,
    /// The reference rates with newborn sizes confined to `(0, s_e]`.
    ReferenceOblique,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub beta0: f64,
    pub max_age: Option<f64>,
    pub max_size: Option<f64>,
    pub mu1: Option<MortalityRate>,
    pub mu2: Option<MortalityRate>,
    /// One rate per line; overrides `mu1`.
    pub mu1_table: Option<PathBuf>,
    pub mu2_table: Option<PathBuf>,
    pub beta: Option<FertilityKernel>,
    pub a_hat: Option<f64>,
    pub s_e: Option<f64>,
    pub declared: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Reference,
            beta0: 5.0,
            max_age: None,
            max_size: None,
            mu1: None,
            mu2: None,
            mu1_table: None,
            mu2_table: None,
            beta: None,
            a_hat: None,
            s_e: None,
            declared: ["H1", "h1", "H2", "H3"].map(String::from).to_vec(),
        }
    }
}

impl ModelConfig {
    /// Builds the parameters; table paths are resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<PopulationParams> {
        let mut p = match self.preset {
            Preset::Reference => PopulationParams::reference(self.beta0),
            Preset::ReferenceOblique => {
                PopulationParams::reference_oblique(self.beta0, self.s_e.unwrap_or(0.6))
            }
        };
        if let Some(v) = self.max_age {
            p.max_age = v;
        }
        if let Some(v) = self.max_size {
            p.max_size = v;
        }
        if let Some(m) = &self.mu1 {
            p.mu1 = m.clone();
        }
        if let Some(m) = &self.mu2 {
            p.mu2 = m.clone();
        }
        if let Some(path) = &self.mu1_table {
            p.mu1 = read_rate_table(&base.join(path), "model.mu1_table")?;
        }
        if let Some(path) = &self.mu2_table {
            p.mu2 = read_rate_table(&base.join(path), "model.mu2_table")?;
        }
        if let Some(b) = &self.beta {
            p.beta = b.clone();
        }
        if let Some(v) = self.a_hat {
            p.a_hat = v;
        }
        if let Some(v) = self.s_e {
            p.s_e = v;
        }
        p.check_scalars()?;
        Ok(p)
    }

    pub fn declared(&self) -> Result<BTreeSet<Hypothesis>> {
        self.declared
            .iter()
            .map(|t| {
                Hypothesis::from_tag(t)
                    .ok_or_else(|| Error::config("model.declared", format!("unknown hypothesis `{t}`")))
            })
            .collect()
    }
}

/// Reads one rate per nonempty line; `inf` is accepted.
fn read_rate_table(path: &Path, key: &str) -> Result<MortalityRate> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(key, format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::config(key, format!("line {}: `{line}` is not a number", n + 1)))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::config(key, format!("{} holds no rates", path.display())));
    }
    Ok(MortalityRate::Table { values })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: Vec<usize>,
    pub extent: Vec<f64>,
    pub na: usize,
    /// Defaults to the aligned value `na * S / A`.
    pub ns: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: vec![16],
            extent: vec![1.0],
            na: 64,
            ns: None,
        }
    }
}

impl GridSection {
    pub fn to_config(&self, p: &PopulationParams) -> GridConfig {
        let ns = self
            .ns
            .unwrap_or_else(|| (self.na as f64 * p.max_size / p.max_age).round() as usize);
        GridConfig {
            nx: self.nx.clone(),
            extent: self.extent.clone(),
            na: self.na,
            ns,
            max_age: p.max_age,
            max_size: p.max_size,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SupportConfig {
    Box {
        a1: f64,
        a2: f64,
        s1: f64,
        s2: f64,
        #[serde(default = "default_omega_lo")]
        omega_lo: Vec<f64>,
        #[serde(default = "default_omega_hi")]
        omega_hi: Vec<f64>,
    },
    Oblique {
        a1: f64,
        a2: f64,
        a0: f64,
        s_e: f64,
        #[serde(default = "default_omega_lo")]
        omega_lo: Vec<f64>,
        #[serde(default = "default_omega_hi")]
        omega_hi: Vec<f64>,
    },
}

fn default_omega_lo() -> Vec<f64> {
    vec![0.3]
}
fn default_omega_hi() -> Vec<f64> {
    vec![0.7]
}

impl Default for SupportConfig {
    fn default() -> Self {
        SupportConfig::Box {
            a1: 0.1,
            a2: 0.5,
            s1: 0.1,
            s2: 0.9,
            omega_lo: default_omega_lo(),
            omega_hi: default_omega_hi(),
        }
    }
}

impl SupportConfig {
    pub fn build(&self) -> ControlSupport {
        match self {
            SupportConfig::Box {
                a1,
                a2,
                s1,
                s2,
                omega_lo,
                omega_hi,
            } => ControlSupport::boxed(*a1, *a2, *s1, *s2, patch(omega_lo, omega_hi)),
            SupportConfig::Oblique {
                a1,
                a2,
                a0,
                s_e,
                omega_lo,
                omega_hi,
            } => ControlSupport::oblique(*a1, *a2, *a0, *s_e, patch(omega_lo, omega_hi)),
        }
    }
}

fn patch(lo: &[f64], hi: &[f64]) -> SpatialPatch {
    SpatialPatch {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
    }
}

/// Initial density.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// `base + amplitude * cos(pi x_1)`, uniform in age and size.
    Cosine { base: f64, amplitude: f64 },
    /// Independent uniform values drawn from the run seed.
    Random { lo: f64, hi: f64 },
    /// A state stored in the binary dump format.
    File { path: PathBuf },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Cosine {
            base: 1.0,
            amplitude: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateOptions {
    pub survival_floor: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryOptions {
    pub horizon: f64,
    /// Coverage grid; defaults to the model grid.
    pub na: Option<usize>,
    pub ns: Option<usize>,
    pub fan: usize,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            na: None,
            ns: None,
            fan: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlSpec {
    None,
    /// Constant on the support.
    Constant { value: f64 },
    /// Uniform on `[lo, hi]` on the support, drawn from the run seed.
    Random { lo: f64, hi: f64 },
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec::None
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub horizon: f64,
    pub stride: usize,
    pub diffusion: bool,
    pub control: ControlSpec,
    /// Long-format CSV of every stored snapshot.
    pub write_trajectory_csv: bool,
    pub volterra: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            horizon: 0.5,
            stride: 8,
            diffusion: true,
            control: ControlSpec::None,
            write_trajectory_csv: false,
            volterra: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjointCheckOptions {
    pub horizon: f64,
    pub trials: usize,
    pub tolerance: f64,
}

impl Default for AdjointCheckOptions {
    fn default() -> Self {
        Self {
            horizon: 0.5,
            trials: 10,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumOptions {
    pub horizon: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub diffusion: bool,
}

impl Default for HumOptions {
    fn default() -> Self {
        Self {
            horizon: 1.2,
            epsilon: 1e-6,
            tol: 1e-6,
            max_iter: 3000,
            diffusion: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub horizons: Vec<f64>,
    /// Penalties for the cost probe, strictly decreasing; empty skips it.
    pub epsilons: Vec<f64>,
    /// Horizons at which the cost probe runs.
    pub probe_horizons: Vec<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            horizons: vec![0.3, 0.5, 0.8, 1.0, 1.2],
            epsilons: Vec::new(),
            probe_horizons: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupProbeOptions {
    pub horizon: f64,
    /// Target offspring numbers; each rescales the age profile of the kernel.
    pub r_values: Vec<f64>,
    pub source: f64,
    pub tail: f64,
    /// Newborns are placed uniformly on `(0, newborn_max]` so that they
    /// reach fertile age before the size boundary.
    pub newborn_max: f64,
    /// Keep the configured newborn-size profile instead.
    pub keep_newborn_profile: bool,
}

impl Default for BlowupProbeOptions {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            r_values: vec![0.5, 2.0],
            source: 0.0,
            tail: 0.5,
            newborn_max: 0.1,
            keep_newborn_profile: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyConfig {
    pub u_steady: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the configured size mortality instead of the `mu2 = 0` preset.
    pub full_mortality: bool,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        Self {
            u_steady: 1.0,
            tol: 1e-10,
            max_iter: 500,
            full_mortality: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaircaseConfig {
    pub u_start: f64,
    pub u_final: f64,
    pub t_star: Option<f64>,
    pub delta: Option<f64>,
    pub delta_fraction: f64,
    pub legs: Option<usize>,
    pub max_legs: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub residual_tol: f64,
    pub positivity_tol: f64,
    pub full_mortality: bool,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            u_start: 1.0,
            u_final: 0.5,
            t_star: None,
            delta: None,
            delta_fraction: 1.0,
            legs: None,
            max_legs: 100_000,
            epsilon: 1e-6,
            tol: 1e-6,
            max_iter: 2000,
            residual_tol: 0.05,
            positivity_tol: 1e-10,
            full_mortality: false,
        }
    }
}
