use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{minimize, LmOptions, Problem};
use super::sine::{fit_decaying_sine, multistart, sine_result, sine_seed, Series, SineProblem};
use super::{AnalysisError, FitParam, FitResult};
use crate::photon::{default_n_max, evolve_master, PhotonDistribution};

/// Cavity occupancy entering the re-equilibration component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NBarSpec {
    Fixed(f64),
    /// Fitted jointly with the contrast, starting from `guess`.
    Free {
        guess: f64,
    },
}

/// Known parameters of a photon-number-selective Ramsey experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReequilibrationModel {
    /// Cavity energy decay rate (1/s).
    pub kappa: f64,
    pub n_bar: NBarSpec,
    /// Photon-number sector addressed by the selective pulses.
    pub select_n: u32,
    /// Qubit energy relaxation time (s); infinite disables relaxation.
    pub t1: f64,
}

impl ReequilibrationModel {
    fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |what: &str| Err(AnalysisError::InvalidInput(what.into()));
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive and finite");
        }
        if !(self.t1 > 0.0) {
            return bad("t1 must be positive");
        }
        let n_bar = match self.n_bar {
            NBarSpec::Fixed(n) => n,
            NBarSpec::Free { guess } => guess,
        };
        if !(n_bar >= 0.0 && n_bar.is_finite()) {
            return bad("n_bar must be non-negative and finite");
        }
        Ok(())
    }
}

fn shape_with_cutoff(
    t: &[f64],
    n_bar: f64,
    kappa: f64,
    select_n: u32,
    t1: f64,
    n_max: usize,
) -> Result<Vec<f64>, AnalysisError> {
    if t.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(AnalysisError::InvalidInput(
            "delays must be non-negative".into(),
        ));
    }
    let s = select_n as usize;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&i, &j| t[i].total_cmp(&t[j]));
    let mut p = PhotonDistribution::fock(s, n_max)?;
    let mut now = 0.0;
    let mut out = vec![0.0; t.len()];
    for i in order {
        if t[i] > now {
            p = evolve_master(&p, n_bar, kappa, t[i] - now)?;
            now = t[i];
        }
        let relax = if t1.is_finite() {
            (-t[i] / t1).exp()
        } else {
            1.0
        };
        out[i] = relax * (1.0 - p.get(s));
    }
    Ok(out)
}

fn cutoff(n_bar: f64, select_n: u32) -> usize {
    default_n_max(n_bar).max(select_n as usize + 20)
}

/// Shape of the non-oscillating component of a selective Ramsey signal:
/// `e^{-t/T1} (1 - q(t))`, where q(t) is the probability that a cavity
/// starting with `select_n` photons holds `select_n` photons at time t.
/// Under the two selective pi/2 pulses the raw excited-state probability
/// carries this term with weight P(select_n)/2 on top of a constant
/// P(select_n)/2.
pub fn bump_shape(
    t: &[f64],
    n_bar: f64,
    kappa: f64,
    select_n: u32,
    t1: f64,
) -> Result<Vec<f64>, AnalysisError> {
    shape_with_cutoff(t, n_bar, kappa, select_n, t1, cutoff(n_bar, select_n))
}

/// Rate (1/s) at which the conditioned cavity distribution forgets its
/// initial sector: the inverse of the time at which
/// (q(t) - P_th) / (1 - P_th) falls to 1/e.
pub fn bump_rate(n_bar: f64, kappa: f64, select_n: u32) -> Result<f64, AnalysisError> {
    if !(kappa > 0.0 && kappa.is_finite() && n_bar > 0.0 && n_bar.is_finite()) {
        return Err(AnalysisError::InvalidInput(
            "bump rate needs kappa > 0 and n_bar > 0".into(),
        ));
    }
    let s = select_n as usize;
    let n_max = cutoff(n_bar, select_n);
    let p_th = n_bar.powi(select_n as i32) / (n_bar + 1.0).powi(select_n as i32 + 1);
    let start = PhotonDistribution::fock(s, n_max)?;
    let excess = |t: f64| -> Result<f64, AnalysisError> {
        let q = evolve_master(&start, n_bar, kappa, t)?.get(s);
        Ok((q - p_th) / (1.0 - p_th) - (-1f64).exp())
    };
    let mut hi = 1.0 / kappa;
    while excess(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e6 / kappa {
            return Err(AnalysisError::InvalidInput(
                "conditioned distribution does not relax".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(2.0 / (lo + hi))
}

struct FreeNBar<'a, 'b> {
    series: &'b Series<'a>,
    t: &'b [f64],
    model: &'b ReequilibrationModel,
    n_max: usize,
}

impl FreeNBar<'_, '_> {
    fn shape(&self, n_bar: f64) -> Option<Vec<f64>> {
        if !(n_bar >= 0.0) {
            return None;
        }
        shape_with_cutoff(
            self.t,
            n_bar,
            self.model.kappa,
            self.model.select_n,
            self.model.t1,
            self.n_max,
        )
        .ok()
    }
}

impl Problem for FreeNBar<'_, '_> {
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        let extra = [self.shape(p[6])?];
        SineProblem {
            series: self.series,
            extra: &extra,
        }
        .residuals(p)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n_bar = p[6];
        let extra = [self.shape(n_bar)?];
        let base = SineProblem {
            series: self.series,
            extra: &extra,
        }
        .jacobian(p)?;
        let h = 1e-6 * n_bar.max(1e-2);
        let (lo, hi) = if n_bar > h {
            (n_bar - h, n_bar + h)
        } else {
            (n_bar, n_bar + h)
        };
        let (a, b) = (self.shape(lo)?, self.shape(hi)?);
        let mut j = base.resize_horizontally(7, 0.0);
        for i in 0..self.series.len() {
            j[(i, 6)] = p[5] * (b[i] - a[i]) / (hi - lo) * self.series.weight(i);
        }
        Some(j)
    }
}

/// Fits a selective Ramsey fringe as a decaying sine plus the
/// re-equilibration component `b * bump_shape(t)` with free weight `b`.
///
/// Reported parameters are those of [`fit_decaying_sine`] followed by
/// `bump_amplitude` (and `n_bar` when free). `bump_rate` is derived from the
/// occupancy. With a free occupancy the contrast and n_bar trade off against
/// each other; the fit is flagged `n_bar_contrast_correlated` and a warning
/// is logged. A vanishing component reduces to the plain sine fit.
pub fn fit_ramsey_reequilibration(
    t: &[f64],
    y: &[f64],
    model: &ReequilibrationModel,
    weights: Option<&[f64]>,
) -> Result<FitResult, AnalysisError> {
    model.validate()?;
    let series = Series::new(t, y, weights, 8)?;
    let absolute = weights.is_some();
    let (n_bar0, free) = match model.n_bar {
        NBarSpec::Fixed(n) => (n, false),
        NBarSpec::Free { guess } => (guess, true),
    };
    let n_max = cutoff(4.0 * n_bar0.max(0.25), model.select_n);
    let shape = shape_with_cutoff(t, n_bar0, model.kappa, model.select_n, model.t1, n_max)?;

    if !free && shape.iter().all(|v| v.abs() < 1e-14) {
        let mut fit = fit_decaying_sine(t, y, weights)?;
        fit.model = "ramsey_reequilibration".into();
        fit.params.push(FitParam::new("bump_amplitude", 0.0, 0.0));
        for row in fit.covariance.iter_mut() {
            row.push(0.0);
        }
        fit.covariance.push(vec![0.0; fit.params.len()]);
        fit.flags.push("no_bump".into());
        return Ok(fit);
    }

    let (g0, f0) = sine_seed(&series)?;
    let extra = [shape];
    let fixed = SineProblem {
        series: &series,
        extra: &extra,
    };
    let outcome = multistart(&fixed, g0, f0).ok_or_else(|| {
        AnalysisError::InvalidInput("no finite starting point for the composite fit".into())
    })?;
    if !free {
        let mut fit = sine_result(
            "ramsey_reequilibration",
            &fixed,
            &outcome,
            &["bump_amplitude"],
            absolute,
        );
        let rate = if n_bar0 > 0.0 {
            bump_rate(n_bar0, model.kappa, model.select_n)?
        } else {
            f64::NAN
        };
        fit.derived.push(FitParam::new("bump_rate", rate, 0.0));
        return Ok(fit);
    }

    let free_problem = FreeNBar {
        series: &series,
        t,
        model,
        n_max,
    };
    let mut p0 = outcome.params.clone().resize_vertically(7, 0.0);
    p0[6] = n_bar0;
    let outcome = minimize(&free_problem, p0, &LmOptions::default());
    let n_bar = outcome.params[6];
    let final_shape = [free_problem.shape(n_bar).ok_or_else(|| {
        AnalysisError::InvalidInput(format!("fitted n_bar = {n_bar} is invalid"))
    })?];
    let problem = SineProblem {
        series: &series,
        extra: &final_shape,
    };
    let mut fit = sine_result(
        "ramsey_reequilibration",
        &problem,
        &outcome,
        &["bump_amplitude", "n_bar"],
        absolute,
    );
    let corr = fit.covariance[5][6] / (fit.covariance[5][5] * fit.covariance[6][6]).sqrt();
    log::warn!("n_bar and contrast are jointly free and correlated (r = {corr:.3}); fix n_bar if it is known");
    fit.flags.push("n_bar_contrast_correlated".into());
    let rate = if n_bar > 0.0 {
        bump_rate(n_bar, model.kappa, model.select_n)?
    } else {
        f64::NAN
    };
    fit.derived.push(FitParam::new("bump_rate", rate, f64::NAN));
    Ok(fit)
}
