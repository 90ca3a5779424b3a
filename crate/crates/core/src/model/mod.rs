//! System parameters and closed-form dephasing predictors.
//!
//! Every quantity stored here is angular (rad/s) or SI (s, K). Conversions
//! from the lab units used in configuration files (GHz, MHz, us, mK) happen
//! in [`config`] and nowhere else.

pub mod config;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant, J s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / std::f64::consts::TAU;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Cyclic frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn angular(hz: f64) -> f64 {
    TWO_PI * hz
}

/// Angular frequency (rad/s) to cyclic frequency (Hz).
#[inline]
pub fn cyclic(rad_per_s: f64) -> f64 {
    rad_per_s / TWO_PI
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dispersive shift has a pole: {factor} = {value:e} rad/s is within tolerance of zero")]
    Pole { factor: &'static str, value: f64 },
    #[error("mode spectrum calibration needs f3 > f1 > 0 (got f1 = {f1:e} Hz, f3 = {f3:e} Hz)")]
    Calibration { f1: f64, f3: f64 },
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("duplicate cavity mode index {0}")]
    DuplicateMode(u32),
    #[error("system has no cavity modes")]
    NoModes,
    #[error("no cavity mode with index {0}")]
    UnknownMode(u32),
    #[error("temperatures must be non-negative and sorted ascending")]
    UnsortedTemperatures,
}

fn check(
    cond: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), ModelError> {
    if cond {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    /// Qubit transition frequency, rad/s.
    pub omega_q: f64,
    /// Anharmonicity, rad/s (positive).
    pub alpha: f64,
    /// Measured qubit linewidth, rad/s. Stored for reference only.
    pub gamma_line: f64,
    /// Energy relaxation time, s. `f64::INFINITY` disables relaxation.
    pub t1: f64,
    /// Residual pure-dephasing rate not explained by cavity photons, 1/s.
    pub gamma_res: f64,
}

impl QubitParams {
    pub fn new(
        omega_q: f64,
        alpha: f64,
        gamma_line: f64,
        t1: f64,
        gamma_res: f64,
    ) -> Result<Self, ModelError> {
        let q = Self {
            omega_q,
            alpha,
            gamma_line,
            t1,
            gamma_res,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            self.omega_q > 0.0 && self.omega_q.is_finite(),
            "omega_q",
            self.omega_q,
            "must be positive",
        )?;
        check(
            self.alpha > 0.0 && self.alpha.is_finite(),
            "alpha",
            self.alpha,
            "must be positive",
        )?;
        check(
            self.gamma_line >= 0.0,
            "gamma_line",
            self.gamma_line,
            "must be non-negative",
        )?;
        check(self.t1 > 0.0, "t1", self.t1, "must be positive")?;
        check(
            self.gamma_res >= 0.0 && self.gamma_res.is_finite(),
            "gamma_res",
            self.gamma_res,
            "must be non-negative",
        )
    }

    /// Relaxation rate 1/T1 (zero when T1 is infinite).
    pub fn gamma1(&self) -> f64 {
        1.0 / self.t1
    }
}

/// How the dispersive shift is derived from the coupling and detuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChiConvention {
    /// chi = g^2 alpha / (Delta (Delta + alpha))
    #[default]
    Printed,
    /// chi = 2 g^2 alpha / (Delta (Delta - alpha)), the full peak separation
    /// of the standard transmon expression.
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(n: u32) -> Self {
        if n.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// One TE10n cavity mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    pub index_n: u32,
    /// Mode frequency, rad/s.
    pub omega_n: f64,
    /// Qubit coupling, rad/s.
    pub g_n: f64,
    /// Dispersive shift per photon, rad/s.
    pub chi_n: f64,
    /// Coupling quality factors of every port; `INFINITY` marks an absent port.
    pub q_couplers: Vec<f64>,
    /// Internal quality factor; `INFINITY` for a lossless mode.
    pub q_int: f64,
    /// Mean photon occupancy.
    pub n_bar: f64,
}

impl CavityMode {
    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            self.index_n >= 1,
            "index_n",
            self.index_n as f64,
            "mode numbers start at 1",
        )?;
        check(
            self.omega_n > 0.0 && self.omega_n.is_finite(),
            "omega_n",
            self.omega_n,
            "must be positive",
        )?;
        check(
            self.chi_n.is_finite(),
            "chi_n",
            self.chi_n,
            "must be finite",
        )?;
        check(
            self.n_bar >= 0.0 && self.n_bar.is_finite(),
            "n_bar",
            self.n_bar,
            "must be non-negative",
        )?;
        for &q in &self.q_couplers {
            check(q > 0.0, "q_coupler", q, "quality factors must be positive")?;
        }
        check(
            self.q_int > 0.0,
            "q_int",
            self.q_int,
            "quality factors must be positive",
        )?;
        let kappa = self.kappa();
        check(
            kappa > 0.0 && kappa.is_finite(),
            "kappa",
            kappa,
            "mode needs at least one finite loss channel",
        )
    }

    pub fn quality(&self) -> QualityBudget {
        total_q(&self.q_couplers, self.q_int, self.omega_n)
    }

    pub fn q_total(&self) -> f64 {
        self.quality().q_total
    }

    /// Energy decay rate omega/Q, 1/s.
    pub fn kappa(&self) -> f64 {
        self.quality().kappa
    }

    pub fn tau(&self) -> f64 {
        self.quality().tau
    }
}

/// A wideband noise source feeding one mode through a cold attenuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDrive {
    /// Linear power transmission of the attenuation chain, 0..=1.
    pub attenuation: f64,
    /// Effective temperature of the 50 ohm source, K.
    pub source_temperature: f64,
    pub target_mode: u32,
    /// Which entry of the target mode's `q_couplers` is the noise port.
    #[serde(default)]
    pub port: usize,
}

impl NoiseDrive {
    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            (0.0..=1.0).contains(&self.attenuation),
            "attenuation",
            self.attenuation,
            "must lie in [0, 1]",
        )?;
        check(
            self.source_temperature >= 0.0,
            "source_temperature",
            self.source_temperature,
            "must be non-negative",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub qubit: QubitParams,
    pub modes: Vec<CavityMode>,
    #[serde(default)]
    pub drives: Vec<NoiseDrive>,
}

impl SystemModel {
    pub fn new(
        qubit: QubitParams,
        modes: Vec<CavityMode>,
        drives: Vec<NoiseDrive>,
    ) -> Result<Self, ModelError> {
        let sys = Self {
            qubit,
            modes,
            drives,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.qubit.validate()?;
        if self.modes.is_empty() {
            return Err(ModelError::NoModes);
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.modes {
            m.validate()?;
            if !seen.insert(m.index_n) {
                return Err(ModelError::DuplicateMode(m.index_n));
            }
        }
        for d in &self.drives {
            d.validate()?;
            let mode = self.mode(d.target_mode)?;
            if d.port >= mode.q_couplers.len() {
                return Err(ModelError::InvalidParameter {
                    name: "port",
                    value: d.port as f64,
                    reason: "drive port index exceeds the mode's coupler list",
                });
            }
        }
        Ok(())
    }

    pub fn mode(&self, index_n: u32) -> Result<&CavityMode, ModelError> {
        self.modes
            .iter()
            .find(|m| m.index_n == index_n)
            .ok_or(ModelError::UnknownMode(index_n))
    }

    pub fn mode_mut(&mut self, index_n: u32) -> Result<&mut CavityMode, ModelError> {
        self.modes
            .iter_mut()
            .find(|m| m.index_n == index_n)
            .ok_or(ModelError::UnknownMode(index_n))
    }

    /// Photons injected into a mode by every drive targeting it.
    pub fn injected_n_bar(&self, index_n: u32) -> Result<f64, ModelError> {
        let mode = self.mode(index_n)?;
        let budget = mode.quality();
        Ok(self
            .drives
            .iter()
            .filter(|d| d.target_mode == index_n)
            .map(|d| injected_photons(d, mode.omega_n, budget.q_total, mode.q_couplers[d.port]))
            .sum())
    }

    /// Residual occupancy plus everything injected by the noise drives.
    pub fn effective_n_bar(&self, index_n: u32) -> Result<f64, ModelError> {
        Ok(self.mode(index_n)?.n_bar + self.injected_n_bar(index_n)?)
    }
}

/// Relative distance from a pole below which the dispersive formula is refused.
const POLE_TOLERANCE: f64 = 1e-9;

/// Dispersive (ac-Stark) shift per photon.
pub fn dispersive_shift(
    g: f64,
    delta: f64,
    alpha: f64,
    convention: ChiConvention,
) -> Result<f64, ModelError> {
    let scale = delta.abs().max(alpha.abs()).max(f64::MIN_POSITIVE);
    let near_zero = |x: f64| x.abs() <= POLE_TOLERANCE * scale;
    if near_zero(delta) {
        return Err(ModelError::Pole {
            factor: "delta",
            value: delta,
        });
    }
    match convention {
        ChiConvention::Printed => {
            let second = delta + alpha;
            if near_zero(second) {
                return Err(ModelError::Pole {
                    factor: "delta + alpha",
                    value: second,
                });
            }
            Ok(g * g * alpha / (delta * second))
        }
        ChiConvention::Alternate => {
            let second = delta - alpha;
            if near_zero(second) {
                return Err(ModelError::Pole {
                    factor: "delta - alpha",
                    value: second,
                });
            }
            Ok(2.0 * g * g * alpha / (delta * second))
        }
    }
}

/// Coupling of a TE10n mode scaled from a reference mode, g ~ sqrt(omega).
/// Even modes sit on a field node at the antenna and keep only `even_factor`
/// of that coupling.
pub fn coupling_scaling(
    g_ref: f64,
    omega_ref: f64,
    omega_n: f64,
    parity: Parity,
    even_factor: f64,
) -> Result<f64, ModelError> {
    check(omega_ref > 0.0, "omega_ref", omega_ref, "must be positive")?;
    check(omega_n > 0.0, "omega_n", omega_n, "must be positive")?;
    check(g_ref >= 0.0, "g_ref", g_ref, "must be non-negative")?;
    check(
        (0.0..=1.0).contains(&even_factor),
        "even_factor",
        even_factor,
        "must lie in [0, 1]",
    )?;
    let g = g_ref * (omega_n / omega_ref).sqrt();
    Ok(match parity {
        Parity::Odd => g,
        Parity::Even => even_factor * g,
    })
}

/// TE10n frequencies f_n = sqrt(X + n^2 Y) calibrated so that f_1 and f_3
/// are reproduced. Input and output in Hz.
pub fn mode_spectrum(f1: f64, f3: f64, n_max: u32) -> Result<Vec<f64>, ModelError> {
    if !(f1 > 0.0 && f3 > f1 && f3.is_finite()) {
        return Err(ModelError::Calibration { f1, f3 });
    }
    check(n_max >= 1, "n_max", n_max as f64, "need at least one mode")?;
    let y = (f3 * f3 - f1 * f1) / 8.0;
    let x = f1 * f1 - y;
    Ok((1..=n_max)
        .map(|n| match n {
            1 => f1,
            3 => f3,
            _ => {
                let n = n as f64;
                (x + n * n * y).sqrt()
            }
        })
        .collect())
}

/// Bose-Einstein occupancy 1/(exp(hbar omega / k T) - 1).
pub fn bose_einstein(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// Mean photon number injected by a noise drive, A P_BE(T) Q / Q_c, where
/// P_BE is evaluated at the driven mode's frequency `omega`.
pub fn injected_photons(drive: &NoiseDrive, omega: f64, q_total: f64, q_c: f64) -> f64 {
    if drive.attenuation == 0.0 {
        return 0.0;
    }
    drive.attenuation * bose_einstein(omega, drive.source_temperature) * q_total / q_c
}

/// Q, kappa and tau of a mode with the given ports and internal loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBudget {
    pub q_total: f64,
    /// Energy decay rate, 1/s.
    pub kappa: f64,
    /// Energy lifetime, s.
    pub tau: f64,
}

/// 1/Q = sum 1/Q_c + 1/Q_int; kappa = omega/Q; tau = 1/kappa.
pub fn total_q(q_couplers: &[f64], q_int: f64, omega: f64) -> QualityBudget {
    let inverse: f64 = q_couplers.iter().map(|q| 1.0 / q).sum::<f64>() + 1.0 / q_int;
    let q_total = 1.0 / inverse;
    let kappa = omega / q_total;
    QualityBudget {
        q_total,
        kappa,
        tau: 1.0 / kappa,
    }
}

/// Rate at which photons enter or leave the N-photon state,
/// kappa [(nbar+1) N + nbar (N+1)].
pub fn dephasing_rate(n: u32, n_bar: f64, kappa: f64) -> f64 {
    let n = n as f64;
    kappa * ((n_bar + 1.0) * n + n_bar * (n + 1.0))
}

/// Total photon shot-noise dephasing of several modes, sum nbar_i kappa_i.
pub fn multimode_dephasing(modes: &[(f64, f64)]) -> f64 {
    modes.iter().map(|&(n_bar, kappa)| n_bar * kappa).sum()
}

/// 1/T2 = 1/(2 T1) + gamma_phi + gamma_res.
pub fn predict_t2(t1: f64, gamma_phi: f64, gamma_res: f64) -> f64 {
    1.0 / (0.5 / t1 + gamma_phi + gamma_res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    /// Thermal occupancy of each mode, in `SystemModel::modes` order.
    pub n_bar: Vec<f64>,
    /// nbar_i kappa_i per mode, 1/s.
    pub mode_rates: Vec<f64>,
    pub gamma_phi: f64,
    pub t2: f64,
}

impl SweepRow {
    /// Pure-dephasing time 1/gamma_phi (infinite at zero temperature).
    pub fn t_phi(&self) -> f64 {
        1.0 / self.gamma_phi
    }
}

/// Thermal photon budget of every mode at each temperature.
pub fn temperature_sweep(
    system: &SystemModel,
    temperatures: &[f64],
) -> Result<Vec<SweepRow>, ModelError> {
    if temperatures.iter().any(|&t| !(t >= 0.0)) || temperatures.windows(2).any(|w| w[1] < w[0]) {
        return Err(ModelError::UnsortedTemperatures);
    }
    let kappas: Vec<f64> = system.modes.iter().map(CavityMode::kappa).collect();
    Ok(temperatures
        .iter()
        .map(|&temperature| {
            let n_bar: Vec<f64> = system
                .modes
                .iter()
                .map(|m| bose_einstein(m.omega_n, temperature))
                .collect();
            let pairs: Vec<(f64, f64)> =
                n_bar.iter().copied().zip(kappas.iter().copied()).collect();
            let mode_rates = pairs.iter().map(|&(n, k)| n * k).collect();
            let gamma_phi = multimode_dephasing(&pairs);
            SweepRow {
                temperature,
                n_bar,
                mode_rates,
                gamma_phi,
                t2: predict_t2(system.qubit.t1, gamma_phi, system.qubit.gamma_res),
            }
        })
        .collect())
}
