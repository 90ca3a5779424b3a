//! JSON system descriptions in lab units.
//!
//! Every numeric key carries its unit in the name. Frequencies are cyclic
//! (`*_ghz`, `*_mhz`, `*_khz`) and converted to rad/s on load; times are in
//! microseconds and temperatures in millikelvin.
//!
//! ```json
//! {
//!   "qubit": { "omega_q_ghz": 6.65, "alpha_mhz": 340, "gamma_line_khz": 8,
//!              "t1_us": 30, "gamma_res_per_s": 0 },
//!   "modes": [
//!     { "index": 1, "freq_ghz": 8.01, "g_mhz": 127, "chi_mhz": 7.0,
//!       "q_couplers": [1.0e6], "n_bar": 0.02 },
//!     { "index": 3, "freq_ghz": 12.8, "g_from_mode": 1, "tau_us": 4 }
//!   ],
//!   "drives": [ { "attenuation": 0.01, "source_temperature_mk": 2000,
//!                 "target_mode": 1 } ]
//! }
//! ```
//!
//! A mode gives its loss either as `q_couplers` (+ optional `q_int`; `null`
//! means an absent channel) or as a lifetime `tau_us`, which becomes a single
//! coupler with Q = omega tau. `chi_mhz` overrides the formula; otherwise chi
//! follows `chi_convention` from `g_mhz` (or `g_from_mode`, scaled as
//! sqrt(omega)).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    angular, coupling_scaling, cyclic, dispersive_shift, CavityMode, ChiConvention, ModelError,
    NoiseDrive, Parity, QubitParams, SystemModel,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed system description: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("{path}: {source}")]
    Model {
        path: String,
        #[source]
        source: ModelError,
    },
}

fn field(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub omega_q_ghz: f64,
    pub alpha_mhz: f64,
    #[serde(default)]
    pub gamma_line_khz: f64,
    /// `null` or absent means no relaxation.
    #[serde(default)]
    pub t1_us: Option<f64>,
    #[serde(default)]
    pub gamma_res_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub index: u32,
    pub freq_ghz: f64,
    #[serde(default)]
    pub g_mhz: Option<f64>,
    #[serde(default)]
    pub g_from_mode: Option<u32>,
    #[serde(default)]
    pub even_factor: f64,
    #[serde(default)]
    pub chi_mhz: Option<f64>,
    #[serde(default)]
    pub chi_convention: ChiConvention,
    #[serde(default)]
    pub q_couplers: Vec<Option<f64>>,
    #[serde(default)]
    pub q_int: Option<f64>,
    #[serde(default)]
    pub tau_us: Option<f64>,
    #[serde(default)]
    pub n_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub attenuation: f64,
    pub source_temperature_mk: f64,
    pub target_mode: u32,
    #[serde(default)]
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub qubit: QubitConfig,
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub drives: Vec<DriveConfig>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_model(&self) -> Result<SystemModel, ConfigError> {
        let q = &self.qubit;
        let qubit = QubitParams {
            omega_q: angular(q.omega_q_ghz * 1e9),
            alpha: angular(q.alpha_mhz * 1e6),
            gamma_line: angular(q.gamma_line_khz * 1e3),
            t1: q.t1_us.map_or(f64::INFINITY, |t| t * 1e-6),
            gamma_res: q.gamma_res_per_s,
        };
        qubit.validate().map_err(|source| ConfigError::Model {
            path: "qubit".into(),
            source,
        })?;

        let mut modes = Vec::with_capacity(self.modes.len());
        for (i, mc) in self.modes.iter().enumerate() {
            let path = format!("modes[{i}]");
            let omega_n = angular(mc.freq_ghz * 1e9);
            let g_n = match (mc.g_mhz, mc.g_from_mode) {
                (Some(g), None) => angular(g * 1e6),
                (None, Some(reference)) => {
                    let r = self
                        .modes
                        .iter()
                        .find(|m| m.index == reference)
                        .ok_or_else(|| {
                            field(
                                format!("{path}.g_from_mode"),
                                format!("no mode with index {reference}"),
                            )
                        })?;
                    let g_ref = r.g_mhz.ok_or_else(|| {
                        field(
                            format!("{path}.g_from_mode"),
                            "reference mode must give g_mhz directly",
                        )
                    })?;
                    coupling_scaling(
                        angular(g_ref * 1e6),
                        angular(r.freq_ghz * 1e9),
                        omega_n,
                        Parity::of(mc.index),
                        mc.even_factor,
                    )
                    .map_err(|source| ConfigError::Model {
                        path: path.clone(),
                        source,
                    })?
                }
                (Some(_), Some(_)) => {
                    return Err(field(&path, "give either g_mhz or g_from_mode, not both"))
                }
                (None, None) => 0.0,
            };
            let chi_n = match mc.chi_mhz {
                Some(chi) => angular(chi * 1e6),
                None if g_n == 0.0 => 0.0,
                None => {
                    dispersive_shift(g_n, omega_n - qubit.omega_q, qubit.alpha, mc.chi_convention)
                        .map_err(|source| ConfigError::Model {
                        path: format!("{path}.chi"),
                        source,
                    })?
                }
            };
            let (q_couplers, q_int) = match mc.tau_us {
                Some(tau) => {
                    if !mc.q_couplers.is_empty() || mc.q_int.is_some() {
                        return Err(field(
                            &path,
                            "give either tau_us or quality factors, not both",
                        ));
                    }
                    if !(tau > 0.0) {
                        return Err(field(format!("{path}.tau_us"), "must be positive"));
                    }
                    (vec![omega_n * tau * 1e-6], f64::INFINITY)
                }
                None => (
                    mc.q_couplers
                        .iter()
                        .map(|q| q.unwrap_or(f64::INFINITY))
                        .collect(),
                    mc.q_int.unwrap_or(f64::INFINITY),
                ),
            };
            let mode = CavityMode {
                index_n: mc.index,
                omega_n,
                g_n,
                chi_n,
                q_couplers,
                q_int,
                n_bar: mc.n_bar,
            };
            mode.validate().map_err(|source| ConfigError::Model {
                path: path.clone(),
                source,
            })?;
            modes.push(mode);
        }

        let drives = self
            .drives
            .iter()
            .map(|d| NoiseDrive {
                attenuation: d.attenuation,
                source_temperature: d.source_temperature_mk * 1e-3,
                target_mode: d.target_mode,
                port: d.port,
            })
            .collect();

        SystemModel::new(qubit, modes, drives).map_err(|source| ConfigError::Model {
            path: "system".into(),
            source,
        })
    }

    /// Inverse of [`to_model`](Self::to_model), writing every mode's loss as
    /// explicit quality factors and chi as an override.
    pub fn from_model(system: &SystemModel) -> Self {
        let finite = |q: f64| q.is_finite().then_some(q);
        SystemConfig {
            qubit: QubitConfig {
                omega_q_ghz: cyclic(system.qubit.omega_q) * 1e-9,
                alpha_mhz: cyclic(system.qubit.alpha) * 1e-6,
                gamma_line_khz: cyclic(system.qubit.gamma_line) * 1e-3,
                t1_us: finite(system.qubit.t1).map(|t| t * 1e6),
                gamma_res_per_s: system.qubit.gamma_res,
            },
            modes: system
                .modes
                .iter()
                .map(|m| ModeConfig {
                    index: m.index_n,
                    freq_ghz: cyclic(m.omega_n) * 1e-9,
                    g_mhz: Some(cyclic(m.g_n) * 1e-6),
                    g_from_mode: None,
                    even_factor: 0.0,
                    chi_mhz: Some(cyclic(m.chi_n) * 1e-6),
                    chi_convention: ChiConvention::Printed,
                    q_couplers: m.q_couplers.iter().map(|&q| finite(q)).collect(),
                    q_int: finite(m.q_int),
                    tau_us: None,
                    n_bar: m.n_bar,
                })
                .collect(),
            drives: system
                .drives
                .iter()
                .map(|d| DriveConfig {
                    attenuation: d.attenuation,
                    source_temperature_mk: d.source_temperature * 1e3,
                    target_mode: d.target_mode,
                    port: d.port,
                })
                .collect(),
        }
    }
}

/// Parse and validate a system description in one step.
pub fn load_system(text: &str) -> Result<SystemModel, ConfigError> {
    SystemConfig::from_json(text)?.to_model()
}
