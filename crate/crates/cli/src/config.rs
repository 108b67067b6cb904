//! Experiment configuration: a TOML document validated against the schema
//! below before any computation runs.

use serde::{Deserialize, Serialize};
use shelab::density::EvalWindow;
use shelab::{GridSpec, KernelSpec, Model, PhiMethod, Probe};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Kernel,
    Phi,
    Simulate,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Phi => "phi",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// `[conditions]`: exponents `η` to test against the kernel threshold.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    #[serde(default)]
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    ClosedForm,
    Quadrature,
}

impl From<MethodName> for PhiMethod {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::ClosedForm => PhiMethod::ClosedForm,
            MethodName::Quadrature => PhiMethod::Quadrature,
        }
    }
}

/// `[phi]`: profile grid and the optional scaling checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    pub t_grid: Vec<f64>,
    #[serde(default = "closed_form")]
    pub method: MethodName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    /// Two-sided bound check with this `η` on `(0, t_final]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
}

fn closed_form() -> MethodName {
    MethodName::ClosedForm
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub probes: Vec<Probe>,
    pub paths: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Density times, each at `x0`.
    pub times: Vec<f64>,
    pub x0: Vec<f64>,
    pub paths: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3_max: Option<f64>,
    #[serde(default = "ellipticity_samples")]
    pub ellipticity_samples: usize,
    #[serde(default = "drift_paths")]
    pub drift_paths: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<HolderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malliavin: Option<MalliavinConfig>,
}

fn ellipticity_samples() -> usize {
    100_000
}

fn drift_paths() -> u64 {
    100
}

/// `[verify.holder]`: increments at the last density time, lags in grid
/// units (steps for time, cells along the first axis for space).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderConfig {
    #[serde(default)]
    pub time_lags: Vec<usize>,
    #[serde(default)]
    pub space_lags: Vec<usize>,
    #[serde(default = "two")]
    pub p: u32,
    #[serde(default = "time_tolerance")]
    pub time_tolerance: f64,
    #[serde(default = "space_tolerance")]
    pub space_tolerance: f64,
}

fn two() -> u32 {
    2
}

fn time_tolerance() -> f64 {
    0.03
}

fn space_tolerance() -> f64 {
    0.05
}

/// `[verify.malliavin]`: windowed derivative norms at the last density time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinConfig {
    pub deltas: Vec<f64>,
    pub paths: u64,
}

impl VerifyConfig {
    pub fn window(&self, m: usize) -> EvalWindow {
        let mut w = EvalWindow::for_dim(m);
        if let Some(p) = self.window_points {
            w.points = p;
        }
        w.radius = self.window_radius;
        w
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError(format!("config syntax: {e}")))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("config schema error at `{path}`: {}", e.into_inner().message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<&GridSpec, ConfigError> {
        self.grid.as_ref().ok_or_else(|| ConfigError("missing `[grid]` section".into()))
    }

    pub fn model(&self) -> Result<&Model, ConfigError> {
        self.model.as_ref().ok_or_else(|| ConfigError("missing `[model]` section".into()))
    }
}
