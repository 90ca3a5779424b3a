//! Curve fitting for fringes and decays, and photon-number calibration.
//!
//! All fitters work on a normalized time axis `u = t / span` so results are
//! invariant under re-timing; rates and frequencies are mapped back to
//! physical units on output.

mod lm;
mod populations;
mod reequilibration;
mod sine;

pub use lm::{LmOptions, LmOutcome, Problem};
pub use populations::{
    estimate_populations, populations_from_amplitudes, PopulationEstimate, SweepPoint,
    THERMAL_CHI2_THRESHOLD,
};
pub use reequilibration::{
    bump_rate, bump_shape, fit_ramsey_reequilibration, NBarSpec, ReequilibrationModel,
};
pub use sine::{fit_decaying_sine, fit_exponential};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photon::PhotonError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("input columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Photon(#[from] PhotonError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

impl FitParam {
    pub fn new(name: &str, value: f64, stderr: f64) -> Self {
        Self {
            name: name.into(),
            value,
            stderr,
        }
    }
}

/// Outcome of a least-squares fit.
///
/// `params` are the fitted quantities in physical units and `covariance` is
/// indexed in the same order. `derived` holds functions of them (time
/// constants, rates of fixed model components) with propagated errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<FitParam>,
    pub derived: Vec<FitParam>,
    pub covariance: Vec<Vec<f64>>,
    /// Euclidean norm of the unweighted residuals.
    pub residual_norm: f64,
    pub converged: bool,
    pub flags: Vec<String>,
    pub iterations: usize,
    pub message: String,
}

impl FitResult {
    fn param(&self, name: &str) -> Option<&FitParam> {
        self.params
            .iter()
            .chain(&self.derived)
            .find(|p| p.name == name)
    }

    /// Value of a fitted or derived parameter.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.value)
    }

    pub fn stderr(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.stderr)
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results always serialize")
    }

    /// CSV header matching [`FitResult::csv_row`].
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "model".to_string(),
            "converged".into(),
            "residual_norm".into(),
        ];
        for p in self.params.iter().chain(&self.derived) {
            cols.push(p.name.clone());
            cols.push(format!("{}_stderr", p.name));
        }
        cols.push("flags".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.model.clone(),
            self.converged.to_string(),
            format!("{:.10e}", self.residual_norm),
        ];
        for p in self.params.iter().chain(&self.derived) {
            cols.push(format!("{:.10e}", p.value));
            cols.push(format!("{:.10e}", p.stderr));
        }
        cols.push(self.flags.join(";"));
        cols.join(",")
    }
}

/// Checks shared by every curve fitter and returns the normalization span.
pub(crate) fn check_series(
    t: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    min_points: usize,
) -> Result<f64, AnalysisError> {
    if t.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(t.len(), y.len()));
    }
    if t.len() < min_points {
        return Err(AnalysisError::TooFewPoints {
            needed: min_points,
            got: t.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != t.len() {
            return Err(AnalysisError::LengthMismatch(t.len(), w.len()));
        }
        if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(AnalysisError::InvalidInput(
                "weights must be positive and finite".into(),
            ));
        }
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite sample".into()));
    }
    let (lo, hi) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if span <= 0.0 {
        return Err(AnalysisError::InvalidInput(
            "sample times span no interval".into(),
        ));
    }
    Ok(span)
}

#[cfg(test)]
mod tests;
