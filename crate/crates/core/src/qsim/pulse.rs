use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::state::{DensityState, Qubit};
use super::QsimError;

/// Half-width of the Gaussian window in units of sigma.
pub const GAUSSIAN_HALF_WIDTH: f64 = 5.0;
/// Below this sigma * chi the selective-pulse treatment is unreliable.
pub const MIN_SIGMA_CHI: f64 = 3.0;
/// Upper bound on the phase advanced per integration step.
const MAX_STEP_PHASE: f64 = 0.05;
const MIN_STEPS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    PiHalf,
    Pi,
    /// Rotation angle in rad.
    Custom(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selectivity {
    Unconditional,
    SelectN(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    Instantaneous,
    /// Gaussian with standard deviation `sigma` (s), truncated at +-5 sigma.
    Gaussian {
        sigma: f64,
    },
}

/// Qubit rotation by `kind` about the equatorial axis at angle `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub kind: PulseKind,
    #[serde(default)]
    pub axis: f64,
    pub selectivity: Selectivity,
    #[serde(default = "instantaneous")]
    pub envelope: Envelope,
}

fn instantaneous() -> Envelope {
    Envelope::Instantaneous
}

impl PulseSpec {
    pub fn new(kind: PulseKind, axis: f64, selectivity: Selectivity) -> Self {
        Self {
            kind,
            axis,
            selectivity,
            envelope: Envelope::Instantaneous,
        }
    }

    pub fn with_envelope(mut self, envelope: Envelope) -> Self {
        self.envelope = envelope;
        self
    }

    pub fn angle(&self) -> f64 {
        match self.kind {
            PulseKind::PiHalf => std::f64::consts::FRAC_PI_2,
            PulseKind::Pi => std::f64::consts::PI,
            PulseKind::Custom(a) => a,
        }
    }

    pub fn target(&self) -> Option<u32> {
        match self.selectivity {
            Selectivity::Unconditional => None,
            Selectivity::SelectN(n) => Some(n),
        }
    }

    pub fn validate(&self, n_max: usize) -> Result<(), QsimError> {
        let bad = |m: String| Err(QsimError::InvalidSequence(m));
        if !self.angle().is_finite() || !self.axis.is_finite() {
            return bad("pulse angle and axis must be finite".into());
        }
        if let Some(n) = self.target() {
            if n as usize > n_max {
                return bad(format!("pulse targets N = {n} beyond truncation {n_max}"));
            }
        }
        if let Envelope::Gaussian { sigma } = self.envelope {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("gaussian sigma must be positive, got {sigma}"));
            }
            if self.target().is_none() {
                return bad("a gaussian envelope needs a target photon number".into());
            }
        }
        Ok(())
    }
}

/// Ideal rotation exp(-i angle/2 (cos(axis) sx + sin(axis) sy)) in the (g, e) basis.
pub(crate) fn rotation(angle: f64, axis: f64) -> Matrix2<Complex64> {
    let c = Complex64::new((0.5 * angle).cos(), 0.0);
    let s = (0.5 * angle).sin();
    let minus_i_s = Complex64::new(0.0, -s);
    Matrix2::new(
        c,
        minus_i_s * Complex64::from_polar(1.0, -axis),
        minus_i_s * Complex64::from_polar(1.0, axis),
        c,
    )
}

/// exp(-i H dt) for H = a |e><e| + w |e><g| + conj(w) |g><e|.
fn two_level_step(a: f64, w: Complex64, dt: f64) -> Matrix2<Complex64> {
    // H = (a/2) 1 + v.sigma with v = (Re w, Im w, -a/2)
    let vz = -0.5 * a;
    let norm = (w.norm_sqr() + vz * vz).sqrt();
    let phase = Complex64::from_polar(1.0, -0.5 * a * dt);
    if norm * dt == 0.0 {
        return Matrix2::identity() * phase;
    }
    let (s, c) = (norm * dt).sin_cos();
    let f = Complex64::new(0.0, -s / norm);
    Matrix2::new(
        Complex64::new(c, 0.0) + f * vz,
        f * w.conj(),
        f * w,
        Complex64::new(c, 0.0) - f * vz,
    ) * phase
}

/// Per-sector qubit unitaries of one pulse, treated as acting instantly at
/// the pulse centre.
#[derive(Debug, Clone)]
pub struct SectorUnitaries {
    ideal: Matrix2<Complex64>,
    target: Option<u32>,
    /// Gaussian pulses: explicit table, identity beyond its end.
    table: Option<Vec<Matrix2<Complex64>>>,
}

impl SectorUnitaries {
    /// Unitaries for sectors 0..n_sectors. A gaussian pulse is integrated in
    /// the frame of its carrier (resonant with the target sector, so sector N
    /// is detuned by (target - N) chi) and the free precession over the
    /// window is then removed, leaving the operator that replaces the pulse
    /// at its centre.
    pub fn for_pulse(pulse: &PulseSpec, chi: f64, n_sectors: usize) -> Result<Self, QsimError> {
        pulse.validate(usize::MAX)?;
        let ideal = rotation(pulse.angle(), pulse.axis);
        let table = match (pulse.envelope, pulse.target()) {
            (Envelope::Gaussian { sigma }, Some(target)) => {
                if sigma * chi.abs() < MIN_SIGMA_CHI {
                    log::warn!(
                        "gaussian pulse sigma*chi = {:.3} is below {MIN_SIGMA_CHI}; selectivity is poor",
                        sigma * chi.abs()
                    );
                }
                Some(
                    (0..n_sectors)
                        .map(|n| gaussian_unitary(pulse, sigma, (target as f64 - n as f64) * chi))
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(Self {
            ideal,
            target: pulse.target(),
            table,
        })
    }

    pub fn get(&self, n: usize) -> Matrix2<Complex64> {
        if let Some(table) = &self.table {
            return table.get(n).copied().unwrap_or_else(Matrix2::identity);
        }
        match self.target {
            Some(t) if t as usize != n => Matrix2::identity(),
            _ => self.ideal,
        }
    }

    /// rho -> U rho U^dag with U = sum_N U_N (x) |N><N|.
    pub fn apply(&self, state: &DensityState) -> DensityState {
        let l = state.n_max() + 1;
        let us: Vec<_> = (0..l).map(|n| self.get(n)).collect();
        let mut out = state.clone();
        let rho = state.matrix();
        let m = out.matrix_mut();
        let q = [Qubit::G, Qubit::E];
        for n in 0..l {
            for mm in 0..l {
                let block =
                    Matrix2::from_fn(|a, b| rho[(state.index(q[a], n), state.index(q[b], mm))]);
                if block.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                    continue;
                }
                let rotated = us[n] * block * us[mm].adjoint();
                for a in 0..2 {
                    for b in 0..2 {
                        m[(state.index(q[a], n), state.index(q[b], mm))] = rotated[(a, b)];
                    }
                }
            }
        }
        out
    }
}

fn gaussian_unitary(pulse: &PulseSpec, sigma: f64, detuning: f64) -> Matrix2<Complex64> {
    let window = 2.0 * GAUSSIAN_HALF_WIDTH * sigma;
    let steps = ((window * detuning.abs() / MAX_STEP_PHASE).ceil() as usize).max(MIN_STEPS);
    let dt = window / steps as f64;
    let shape: Vec<f64> = (0..steps)
        .map(|j| {
            let t = -0.5 * window + (j as f64 + 0.5) * dt;
            (-0.5 * (t / sigma).powi(2)).exp()
        })
        .collect();
    // the discrete envelope integrates to exactly the requested angle
    let scale = pulse.angle() / (shape.iter().sum::<f64>() * dt);
    let axis = Complex64::from_polar(1.0, pulse.axis);
    let mut u = Matrix2::identity();
    for s in shape {
        u = two_level_step(detuning, 0.5 * scale * s * axis, dt) * u;
    }
    let half = two_level_step(detuning, Complex64::new(0.0, 0.0), -0.5 * window);
    half * u * half
}

/// Applies `pulse` to `state`; `chi` sets the sector spacing seen by
/// gaussian pulses.
pub fn selective_pulse(
    state: &DensityState,
    pulse: &PulseSpec,
    chi: f64,
) -> Result<DensityState, QsimError> {
    state.validate()?;
    pulse.validate(state.n_max())?;
    Ok(SectorUnitaries::for_pulse(pulse, chi, state.n_max() + 1)?.apply(state))
}
