//! Scenario documents.
//!
//! A scenario is one JSON file naming a system, a task and the task's
//! settings, with units spelled out in key names. Optional `expect` entries
//! turn reported quantities into pass/fail checks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shotnoise::model::config::SystemConfig;
use shotnoise::model::SystemModel;
use shotnoise::qsim::CavityPrep;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Predict,
    Simulate,
    Sweep,
    Fit,
    Calibrate,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Predict => "predict",
            TaskKind::Simulate => "simulate",
            TaskKind::Sweep => "sweep",
            TaskKind::Fit => "fit",
            TaskKind::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Inline system description.
    #[serde(default)]
    pub system: Option<SystemConfig>,
    /// System description in a separate file, relative to the scenario.
    #[serde(default)]
    pub system_file: Option<String>,
    pub task: TaskKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub predict: Option<PredictBlock>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub fit: Option<FitBlock>,
    #[serde(default)]
    pub calibrate: Option<CalibrateBlock>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictBlock {
    pub temperatures_mk: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    #[default]
    Ramsey,
    Echo,
    /// Vacuum probability of the cavity relaxing from a Fock state.
    Ringdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceBlock {
    pub kind: SequenceKind,
    pub mode: u32,
    /// Photon sector the pulses select; `null` for unconditional pulses.
    pub select_n: Option<u32>,
    /// Fringe detuning of the selected sector; chosen from the window when absent.
    pub detuning_mhz: Option<f64>,
    pub final_selective: bool,
    pub echo_selective: bool,
    /// Gaussian envelope for the selective pulses; instantaneous when absent.
    pub gaussian_sigma_ns: Option<f64>,
    pub n_max: Option<usize>,
    pub prep: CavityPrep,
    /// Starting photon number of a ringdown.
    pub fock_n: u32,
}

impl Default for SequenceBlock {
    fn default() -> Self {
        Self {
            kind: SequenceKind::Ramsey,
            mode: 1,
            select_n: Some(0),
            detuning_mhz: None,
            final_selective: true,
            echo_selective: false,
            gaussian_sigma_ns: None,
            n_max: None,
            prep: CavityPrep::default(),
            fock_n: 1,
        }
    }
}

/// Delay grid. Without `stop_us` the window spans four predicted decay times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayBlock {
    pub start_us: f64,
    pub stop_us: Option<f64>,
    pub points: usize,
}

impl Default for DelayBlock {
    fn default() -> Self {
        Self {
            start_us: 0.0,
            stop_us: None,
            points: 201,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Density-matrix propagation.
    #[default]
    Dm,
    /// Monte Carlo photon trajectories.
    Mc,
    Both,
}

impl Method {
    pub fn stochastic(self) -> bool {
        self != Method::Dm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    None,
    DecayingSine,
    Exponential,
    Reequilibration,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::None => "none",
            FitModel::DecayingSine => "decaying_sine",
            FitModel::Exponential => "exponential",
            FitModel::Reequilibration => "reequilibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub sequence: SequenceBlock,
    pub delays: DelayBlock,
    pub method: Method,
    pub trajectories: u64,
    /// Defaults to a decaying sine for fringes and an exponential for ringdowns.
    pub fit: Option<FitModel>,
    /// Let the composite fit float the occupancy instead of fixing it.
    pub n_bar_free: bool,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            sequence: SequenceBlock::default(),
            delays: DelayBlock::default(),
            method: Method::Dm,
            trajectories: 10_000,
            fit: None,
            n_bar_free: false,
        }
    }
}

impl SimulateBlock {
    pub fn fit_model(&self) -> FitModel {
        self.fit.unwrap_or(match self.sequence.kind {
            SequenceKind::Ringdown => FitModel::Exponential,
            _ => FitModel::DecayingSine,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    NBar,
    KappaKhz,
    TauUs,
    Q,
}

impl SweepVariable {
    pub fn column(self) -> &'static str {
        match self {
            SweepVariable::NBar => "n_bar_set",
            SweepVariable::KappaKhz => "kappa_khz",
            SweepVariable::TauUs => "tau_us",
            SweepVariable::Q => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default = "select_zero")]
    pub select_n_values: Vec<u32>,
    #[serde(default)]
    pub simulate: SimulateBlock,
}

fn select_zero() -> Vec<u32> {
    vec![0]
}

/// Fixed parameters of the composite re-equilibration fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReequilibrationBlock {
    pub kappa_khz: f64,
    /// Fixed occupancy; `null` fits it (with a correlation warning).
    #[serde(default)]
    pub n_bar: Option<f64>,
    #[serde(default = "guess")]
    pub n_bar_guess: f64,
    #[serde(default)]
    pub select_n: u32,
    #[serde(default)]
    pub t1_us: Option<f64>,
}

fn guess() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    /// Fringe CSV files, relative to the scenario.
    pub inputs: Vec<String>,
    pub model: FitModel,
    #[serde(default)]
    pub reequilibration: Option<ReequilibrationBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSweep {
    pub scale_voltage: f64,
    pub scale_power: f64,
    pub n_floor: f64,
    pub power_max: f64,
    pub points: usize,
    /// Number of photon peaks recorded per point.
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBlock {
    /// CSV with columns `power,a0,a1,..`.
    #[serde(default)]
    pub input: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSweep>,
    /// Relative amplitude noise (also the injected noise of a synthetic sweep).
    #[serde(default = "five_percent")]
    pub relative_noise: f64,
}

fn five_percent() -> f64 {
    0.05
}

/// Check on a reported quantity: `value` with a tolerance, and/or bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub quantity: String,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Expectation {
    pub fn check(&self, v: f64) -> bool {
        if !v.is_finite() && self.value.is_some() {
            return false;
        }
        let near = match self.value {
            None => true,
            Some(target) => {
                let tol = self.abs_tol.unwrap_or(0.0) + self.rel_tol.unwrap_or(0.0) * target.abs();
                (v - target).abs() <= tol
            }
        };
        near && self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.value {
            match (self.rel_tol, self.abs_tol) {
                (Some(r), None) => parts.push(format!("{v:e} +- {:.3}%", 100.0 * r)),
                (None, Some(a)) => parts.push(format!("{v:e} +- {a:e}")),
                (Some(r), Some(a)) => parts.push(format!("{v:e} +- ({:.3}% + {a:e})", 100.0 * r)),
                (None, None) => parts.push(format!("== {v:e}")),
            }
        }
        if let Some(m) = self.min {
            parts.push(format!(">= {m:e}"));
        }
        if let Some(m) = self.max {
            parts.push(format!("<= {m:e}"));
        }
        parts.join(", ")
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1d", include_str!("../presets/fig1d.json")),
    ("fig2a", include_str!("../presets/fig2a.json")),
    ("fig2b", include_str!("../presets/fig2b.json")),
    ("fig2c", include_str!("../presets/fig2c.json")),
    ("fig2d", include_str!("../presets/fig2d.json")),
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
    ("ideal", include_str!("../presets/ideal.json")),
];

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::UnknownPreset {
            name: name.into(),
            available: PRESETS
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// A parsed, validated scenario with everything it references resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub system: Option<SystemModel>,
    /// Hex SHA-256 of the scenario text and any system file it names.
    pub sha256: String,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &base)
    }

    pub fn from_preset(name: &str) -> Result<Self, CliError> {
        Self::from_text(preset_text(name)?, Path::new("."))
    }

    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Parse {
                line: inner.line(),
                column: inner.column(),
                path: e.path().to_string(),
                message: inner.to_string(),
            }
        })?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());

        let config = match (&scenario.system, &scenario.system_file) {
            (Some(_), Some(_)) => {
                return Err(field(
                    "system_file",
                    "give either `system` or `system_file`, not both",
                ))
            }
            (Some(c), None) => Some(c.clone()),
            (None, Some(f)) => {
                let path = base_dir.join(f);
                if !path.is_file() {
                    return Err(field(
                        "system_file",
                        format!("{} does not exist", path.display()),
                    ));
                }
                let sys_text = read(&path)?;
                hasher.update(sys_text.as_bytes());
                Some(
                    SystemConfig::from_json(&sys_text).map_err(|e| CliError::Config {
                        path: "system_file".into(),
                        source: e,
                    })?,
                )
            }
            (None, None) => None,
        };
        let system = config
            .map(|c| {
                c.to_model().map_err(|e| CliError::Config {
                    path: "system".into(),
                    source: e,
                })
            })
            .transpose()?;
        let loaded = Self {
            scenario,
            system,
            sha256: hex::encode(hasher.finalize()),
            base_dir: base_dir.to_path_buf(),
        };
        loaded.validate_static()?;
        Ok(loaded)
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        self.base_dir.join(file)
    }

    pub fn system(&self) -> Result<&SystemModel, CliError> {
        self.system
            .as_ref()
            .ok_or_else(|| field("system", "this task needs a system description"))
    }

    /// Checks that do not depend on which command runs the scenario.
    fn validate_static(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        if let Some(p) = &s.predict {
            if p.temperatures_mk.is_empty() {
                return Err(field("predict.temperatures_mk", "must not be empty"));
            }
            if p.temperatures_mk
                .iter()
                .any(|t| !(t.is_finite() && *t >= 0.0))
            {
                return Err(field(
                    "predict.temperatures_mk",
                    "temperatures must be finite and >= 0",
                ));
            }
            if p.temperatures_mk.windows(2).any(|w| w[1] < w[0]) {
                return Err(field(
                    "predict.temperatures_mk",
                    "temperatures must be sorted",
                ));
            }
        }
        if let Some(b) = &s.simulate {
            validate_simulate(b, "simulate")?;
        }
        if let Some(w) = &s.sweep {
            if w.values.is_empty() {
                return Err(field("sweep.values", "sweep range is empty"));
            }
            if w.select_n_values.is_empty() {
                return Err(field("sweep.select_n_values", "must not be empty"));
            }
            let ok = |v: &f64| match w.variable {
                SweepVariable::NBar => v.is_finite() && *v >= 0.0,
                _ => v.is_finite() && *v > 0.0,
            };
            if let Some(i) = w.values.iter().position(|v| !ok(v)) {
                return Err(field(
                    format!("sweep.values[{i}]"),
                    "out of range for the sweep variable",
                ));
            }
            if w.simulate.sequence.kind == SequenceKind::Ringdown {
                return Err(field(
                    "sweep.simulate.sequence.kind",
                    "sweeps run ramsey or echo sequences",
                ));
            }
            validate_simulate(&w.simulate, "sweep.simulate")?;
        }
        if let Some(f) = &s.fit {
            if f.inputs.is_empty() {
                return Err(field("fit.inputs", "must list at least one file"));
            }
            for (i, input) in f.inputs.iter().enumerate() {
                if !self.resolve(input).is_file() {
                    return Err(field(
                        format!("fit.inputs[{i}]"),
                        format!("{input} does not exist"),
                    ));
                }
            }
            if f.model == FitModel::Reequilibration && f.reequilibration.is_none() {
                return Err(field(
                    "fit.reequilibration",
                    "required by the reequilibration model",
                ));
            }
        }
        if let Some(c) = &s.calibrate {
            if c.input.is_some() == c.synthetic.is_some() {
                return Err(field(
                    "calibrate",
                    "give exactly one of `input` and `synthetic`",
                ));
            }
            if let Some(input) = &c.input {
                if !self.resolve(input).is_file() {
                    return Err(field("calibrate.input", format!("{input} does not exist")));
                }
            }
            if let Some(syn) = &c.synthetic {
                if syn.points < 2 || syn.levels < 2 {
                    return Err(field(
                        "calibrate.synthetic",
                        "needs at least 2 points and 2 levels",
                    ));
                }
            }
        }
        for (i, e) in s.expect.iter().enumerate() {
            if e.value.is_none() && e.min.is_none() && e.max.is_none() {
                return Err(field(
                    format!("expect[{i}]"),
                    "needs `value`, `min` or `max`",
                ));
            }
        }
        Ok(())
    }

    /// Checks for running `task` with the effective seed.
    pub fn validate_for(&self, task: TaskKind, seed: Option<u64>) -> Result<(), CliError> {
        let s = &self.scenario;
        let missing = || {
            field(
                task.name(),
                format!("scenario has no `{}` block", task.name()),
            )
        };
        let stochastic = match task {
            TaskKind::Predict => {
                s.predict.as_ref().ok_or_else(missing)?;
                self.system()?;
                false
            }
            TaskKind::Simulate => {
                self.system()?;
                s.simulate.as_ref().ok_or_else(missing)?.method.stochastic()
            }
            TaskKind::Sweep => {
                self.system()?;
                s.sweep
                    .as_ref()
                    .ok_or_else(missing)?
                    .simulate
                    .method
                    .stochastic()
            }
            TaskKind::Fit => {
                s.fit.as_ref().ok_or_else(missing)?;
                false
            }
            TaskKind::Calibrate => s
                .calibrate
                .as_ref()
                .ok_or_else(missing)?
                .synthetic
                .is_some(),
        };
        if stochastic && seed.is_none() {
            return Err(field("seed", "a seed is required for stochastic tasks"));
        }
        Ok(())
    }
}

fn validate_simulate(b: &SimulateBlock, at: &str) -> Result<(), CliError> {
    let d = &b.delays;
    if d.points < 2 {
        return Err(field(
            format!("{at}.delays.points"),
            "need at least 2 delays",
        ));
    }
    if b.fit_model() != FitModel::None && d.points < 8 {
        return Err(field(
            format!("{at}.delays.points"),
            "fitting needs at least 8 delays",
        ));
    }
    if !(d.start_us.is_finite() && d.start_us >= 0.0) {
        return Err(field(
            format!("{at}.delays.start_us"),
            "must be finite and >= 0",
        ));
    }
    if let Some(stop) = d.stop_us {
        if !(stop.is_finite() && stop > d.start_us) {
            return Err(field(
                format!("{at}.delays.stop_us"),
                "must exceed start_us",
            ));
        }
    }
    if b.method.stochastic() && b.trajectories == 0 {
        return Err(field(format!("{at}.trajectories"), "must be at least 1"));
    }
    if b.sequence.kind == SequenceKind::Ringdown {
        if b.method != Method::Dm {
            return Err(field(
                format!("{at}.method"),
                "ringdowns are computed from the master equation (dm)",
            ));
        }
        if matches!(
            b.fit_model(),
            FitModel::DecayingSine | FitModel::Reequilibration
        ) {
            return Err(field(
                format!("{at}.fit"),
                "ringdowns take an exponential fit",
            ));
        }
    }
    if let Some(s) = b.sequence.gaussian_sigma_ns {
        if !(s.is_finite() && s > 0.0) {
            return Err(field(
                format!("{at}.sequence.gaussian_sigma_ns"),
                "must be positive",
            ));
        }
    }
    Ok(())
}

fn field(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Field {
        path: path.into(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
