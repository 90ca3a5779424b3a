use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};

use super::lm::{covariance, minimize, LmOptions, LmOutcome, Problem};
use super::{check_series, AnalysisError, FitParam, FitResult};

/// Rates below this (in units of 1/span) count as no decay at all.
const NO_DECAY: f64 = 1e-10;

/// A e^{-g u} sin(2 pi f u + phi) and its gradient in (A, g, f, phi).
pub(crate) fn damped_sine(u: f64, p: &[f64]) -> (f64, [f64; 4]) {
    let (a, g, f, phi) = (p[0], p[1], p[2], p[3]);
    let env = (-g * u).exp();
    let (s, c) = (TAU * f * u + phi).sin_cos();
    let v = a * env * s;
    (v, [env * s, -u * v, TAU * u * a * env * c, a * env * c])
}

/// Sample times rescaled by the span, with optional residual weights.
pub(crate) struct Series<'a> {
    pub u: Vec<f64>,
    pub y: &'a [f64],
    pub w: Option<&'a [f64]>,
    pub span: f64,
}

impl<'a> Series<'a> {
    pub fn new(
        t: &[f64],
        y: &'a [f64],
        w: Option<&'a [f64]>,
        min_points: usize,
    ) -> Result<Self, AnalysisError> {
        let span = check_series(t, y, w, min_points)?;
        Ok(Self {
            u: t.iter().map(|t| t / span).collect(),
            y,
            w,
            span,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    /// Weighted linear least squares of y on the given columns.
    pub fn linear_fit(&self, columns: &[Vec<f64>]) -> Option<(DVector<f64>, f64)> {
        let n = self.len();
        let m = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i] * self.weight(i));
        let b = DVector::from_fn(n, |i, _| self.y[i] * self.weight(i));
        let coef = m.clone().svd(true, true).solve(&b, 1e-13).ok()?;
        let cost = (m * &coef - b).norm_squared();
        coef.iter().all(|c| c.is_finite()).then_some((coef, cost))
    }

    /// Unweighted residual norm of a model evaluated at every sample.
    pub fn residual_norm(&self, model: impl Fn(usize) -> f64) -> f64 {
        (0..self.len())
            .map(|i| (self.y[i] - model(i)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Half the inverse median sample spacing, in cycles per span.
    pub fn nyquist(&self) -> Option<f64> {
        let mut sorted = self.u.clone();
        sorted.sort_by(f64::total_cmp);
        let mut gaps: Vec<f64> = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0.0)
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps.get(gaps.len() / 2).map(|g| 0.5 / g)
    }

    /// Frequency (cycles per span) of the strongest component of the
    /// detrended data, searched on a 4x oversampled grid and refined.
    pub fn dominant_frequency(&self) -> Option<f64> {
        let (coef, _) = self.linear_fit(&[vec![1.0; self.len()], self.u.clone()])?;
        let r: Vec<f64> = (0..self.len())
            .map(|i| self.y[i] - coef[0] - coef[1] * self.u[i])
            .collect();
        let power = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (u, r) in self.u.iter().zip(&r) {
                let (s, c) = (TAU * f * u).sin_cos();
                re += r * c;
                im -= r * s;
            }
            re * re + im * im
        };
        let nyquist = self.nyquist()?;
        let step = 0.25;
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut f = 3.0 * step;
        while f <= nyquist {
            let p = power(f);
            if p > best.1 {
                best = (f, p);
            }
            f += step;
        }
        if best.1 <= 0.0 {
            return None;
        }
        // golden-section refinement within one grid step
        let (mut a, mut b) = (
            (best.0 - step).max(0.5 * step),
            (best.0 + step).min(nyquist),
        );
        let k = 0.5 * (5f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (b - k * (b - a), a + k * (b - a));
        let (mut p1, mut p2) = (power(x1), power(x2));
        for _ in 0..60 {
            if p1 > p2 {
                b = x2;
                x2 = x1;
                p2 = p1;
                x1 = b - k * (b - a);
                p1 = power(x1);
            } else {
                a = x1;
                x1 = x2;
                p1 = p2;
                x2 = a + k * (b - a);
                p2 = power(x2);
            }
        }
        Some(0.5 * (a + b))
    }

    /// Decay rate of the oscillation envelope at frequency `f`, from a
    /// log-linear fit of per-period demodulated amplitudes.
    pub fn envelope_rate(&self, f: f64) -> f64 {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&i, &j| self.u[i].total_cmp(&self.u[j]));
        let mean = self.y.iter().sum::<f64>() / self.len() as f64;
        let period = 1.0 / f;
        let mut points = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let u0 = self.u[order[start]];
            let mut end = start;
            while end < order.len() && (self.u[order[end]] - u0 < period || end - start < 4) {
                end += 1;
            }
            if end - start >= 4 {
                let (mut re, mut im, mut um) = (0.0, 0.0, 0.0);
                for &i in &order[start..end] {
                    let (s, c) = (TAU * f * self.u[i]).sin_cos();
                    re += (self.y[i] - mean) * c;
                    im += (self.y[i] - mean) * s;
                    um += self.u[i];
                }
                let count = (end - start) as f64;
                let amp = 2.0 * (re * re + im * im).sqrt() / count;
                if amp > 0.0 {
                    points.push((um / count, amp.ln()));
                }
            }
            start = end;
        }
        if points.len() < 2 {
            return 1.0;
        }
        let n = points.len() as f64;
        let (sx, sy) = points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
        let (mx, my) = (sx / n, sy / n);
        let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(a, b), p| {
            (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2))
        });
        if sxx <= 0.0 {
            return 1.0;
        }
        (-sxy / sxx).clamp(0.0, 100.0)
    }
}

/// Damped sine plus offset plus fixed-shape columns with free coefficients.
/// Parameters: (A, g, f, phi, C, c_1, ..).
pub(crate) struct SineProblem<'a, 'b> {
    pub series: &'b Series<'a>,
    pub extra: &'b [Vec<f64>],
}

impl SineProblem<'_, '_> {
    pub fn model(&self, i: usize, p: &[f64]) -> f64 {
        let (v, _) = damped_sine(self.series.u[i], p);
        v + p[4]
            + self
                .extra
                .iter()
                .zip(&p[5..])
                .map(|(col, c)| c * col[i])
                .sum::<f64>()
    }

    pub fn n_params(&self) -> usize {
        5 + self.extra.len()
    }

    /// Offset and extra coefficients by linear least squares at fixed (g, f),
    /// followed by amplitude and phase of the sine.
    pub fn linear_start(&self, g: f64, f: f64) -> Option<DVector<f64>> {
        let u = &self.series.u;
        let mut cols = vec![
            u.iter()
                .map(|u| (-g * u).exp() * (TAU * f * u).sin())
                .collect::<Vec<_>>(),
            u.iter()
                .map(|u| (-g * u).exp() * (TAU * f * u).cos())
                .collect(),
            vec![1.0; u.len()],
        ];
        cols.extend(self.extra.iter().cloned());
        let (c, _) = self.series.linear_fit(&cols)?;
        let mut p = DVector::zeros(self.n_params());
        p[0] = c[0].hypot(c[1]);
        p[1] = g;
        p[2] = f;
        p[3] = c[1].atan2(c[0]);
        for k in 4..self.n_params() {
            p[k] = c[k - 2];
        }
        Some(p)
    }
}

impl Problem for SineProblem<'_, '_> {
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.series;
        let r = DVector::from_fn(s.len(), |i, _| {
            (self.model(i, p.as_slice()) - s.y[i]) * s.weight(i)
        });
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let s = self.series;
        let mut j = DMatrix::zeros(s.len(), self.n_params());
        for i in 0..s.len() {
            let w = s.weight(i);
            let (_, grad) = damped_sine(s.u[i], p.as_slice());
            for k in 0..4 {
                j[(i, k)] = grad[k] * w;
            }
            j[(i, 4)] = w;
            for (k, col) in self.extra.iter().enumerate() {
                j[(i, 5 + k)] = col[i] * w;
            }
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

/// Runs the phase multi-start and keeps the lowest-cost outcome. Aliases
/// above the Nyquist frequency fit uniform samples equally well and are
/// discarded.
pub(crate) fn multistart(problem: &SineProblem<'_, '_>, g0: f64, f0: f64) -> Option<LmOutcome> {
    let start = problem.linear_start(g0, f0)?;
    let opts = LmOptions::default();
    let nyquist = problem.series.nyquist().unwrap_or(f64::INFINITY);
    let outcomes: Vec<LmOutcome> = (0..4)
        .map(|k| {
            let mut p = start.clone();
            p[3] += k as f64 * 0.5 * PI;
            minimize(problem, p, &opts)
        })
        .filter(|o| o.cost.is_finite())
        .collect();
    let below = |o: &LmOutcome| o.params[2].abs() <= nyquist * (1.0 + 1e-9);
    let any_below = outcomes.iter().any(below);
    outcomes
        .into_iter()
        .filter(|o| !any_below || below(o))
        .min_by(|a, b| {
            (!a.converged, a.cost)
                .partial_cmp(&(!b.converged, b.cost))
                .expect("finite costs")
        })
}

/// Seeds for frequency and decay rate in units of the span.
pub(crate) fn sine_seed(series: &Series<'_>) -> Result<(f64, f64), AnalysisError> {
    let f0 = series
        .dominant_frequency()
        .ok_or_else(|| AnalysisError::InvalidInput("no oscillating component found".into()))?;
    Ok((series.envelope_rate(f0), f0))
}

/// Maps an outcome on the normalized axis to physical parameters, fixing
/// the sign conventions A > 0, f > 0 and phi in (-pi, pi].
pub(crate) fn sine_result(
    model: &str,
    problem: &SineProblem<'_, '_>,
    outcome: &LmOutcome,
    extra_names: &[&str],
    absolute_weights: bool,
) -> FitResult {
    let series = problem.series;
    let span = series.span;
    let mut p = outcome.params.clone();
    let n = p.len();
    let mut sign = vec![1.0; n];
    if p[2] < 0.0 {
        p[2] = -p[2];
        p[3] = -p[3];
        p[0] = -p[0];
        sign[2] = -1.0;
        sign[3] = -1.0;
        sign[0] = -1.0;
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[3] += PI;
        sign[0] = -sign[0];
    }
    p[3] = wrap_phase(p[3]);

    let mut scale = vec![1.0; n];
    scale[1] = 1.0 / span;
    scale[2] = 1.0 / span;
    let cov = covariance(outcome, absolute_weights)
        .map(|c| {
            DMatrix::from_fn(n, n, |i, j| {
                c[(i, j)] * sign[i] * sign[j] * scale[i] * scale[j]
            })
        })
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();

    let mut names = vec!["amplitude", "rate", "frequency", "phase", "offset"];
    names.extend_from_slice(extra_names);
    let params: Vec<FitParam> = (0..n)
        .map(|i| FitParam::new(names[i], p[i] * scale[i], err(i)))
        .collect();

    let mut flags = Vec::new();
    let mut converged = outcome.converged;
    let mut message = outcome.message.clone();
    let rate = params[1].value;
    let t2 = if p[1].abs() <= NO_DECAY {
        flags.push("no_decay".to_string());
        f64::INFINITY
    } else if p[1] < 0.0 {
        flags.push("growing_envelope".to_string());
        converged = false;
        message = format!("{message}; envelope grows (rate {rate:e} 1/s)");
        f64::NAN
    } else {
        1.0 / rate
    };
    if p[2] < 1.0 {
        flags.push("frequency_unidentifiable".to_string());
    }
    let derived = vec![FitParam::new("t2", t2, params[1].stderr * t2 * t2)];
    let raw = outcome.params.as_slice();
    let residual_norm = series.residual_norm(|i| problem.model(i, raw));
    FitResult {
        model: model.into(),
        params,
        derived,
        covariance: (0..n)
            .map(|i| (0..n).map(|j| cov[(i, j)]).collect())
            .collect(),
        residual_norm,
        converged,
        flags,
        iterations: outcome.iterations,
        message,
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let mut x = phi.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

/// Fits `A e^{-t/T2} sin(2 pi f t + phi) + C`.
///
/// `weights` are inverse standard deviations; when given, the covariance is
/// taken as absolute instead of being scaled by the residual variance.
/// Reported parameters are amplitude, rate (1/T2, 1/s), frequency (Hz),
/// phase (rad) and offset, with the derived `t2`.
pub fn fit_decaying_sine(
    t: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<FitResult, AnalysisError> {
    let series = Series::new(t, y, weights, 8)?;
    let problem = SineProblem {
        series: &series,
        extra: &[],
    };
    let (g0, f0) = sine_seed(&series)?;
    let outcome = multistart(&problem, g0, f0).ok_or_else(|| {
        AnalysisError::InvalidInput("no finite starting point for the sine fit".into())
    })?;
    Ok(sine_result(
        "decaying_sine",
        &problem,
        &outcome,
        &[],
        weights.is_some(),
    ))
}

struct ExpProblem<'a, 'b> {
    series: &'b Series<'a>,
}

impl Problem for ExpProblem<'_, '_> {
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.series;
        let r = DVector::from_fn(s.len(), |i, _| {
            (p[0] * (-p[1] * s.u[i]).exp() + p[2] - s.y[i]) * s.weight(i)
        });
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let s = self.series;
        let mut j = DMatrix::zeros(s.len(), 3);
        for i in 0..s.len() {
            let w = s.weight(i);
            let e = (-p[1] * s.u[i]).exp();
            j[(i, 0)] = e * w;
            j[(i, 1)] = -s.u[i] * p[0] * e * w;
            j[(i, 2)] = w;
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

/// Fits `A e^{-t/tau} + C`. Reports amplitude, rate (1/tau) and offset with
/// the derived `tau`. Data without any variation cannot fix tau: the result
/// is flagged `time_constant_unidentifiable` with `converged = false`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<FitResult, AnalysisError> {
    let series = Series::new(t, y, None, 4)?;
    let n = series.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        return Ok(FitResult {
            model: "exponential".into(),
            params: vec![
                FitParam::new("amplitude", 0.0, f64::NAN),
                FitParam::new("rate", f64::NAN, f64::NAN),
                FitParam::new("offset", mean, f64::NAN),
            ],
            derived: vec![FitParam::new("tau", f64::NAN, f64::NAN)],
            covariance: vec![vec![f64::NAN; 3]; 3],
            residual_norm: series.residual_norm(|_| mean),
            converged: false,
            flags: vec!["time_constant_unidentifiable".into()],
            iterations: 0,
            message: "data are constant".into(),
        });
    }

    // variable projection over a log grid of rates seeds the search
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..=80 {
        let g = 10f64.powf(-2.0 + 5.0 * k as f64 / 80.0);
        let col: Vec<f64> = series.u.iter().map(|u| (-g * u).exp()).collect();
        if let Some((c, cost)) = series.linear_fit(&[col, vec![1.0; n]]) {
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, DVector::from_vec(vec![c[0], g, c[1]])));
            }
        }
    }
    let (_, p0) =
        best.ok_or_else(|| AnalysisError::InvalidInput("no finite starting point".into()))?;
    let problem = ExpProblem { series: &series };
    let outcome = minimize(&problem, p0, &LmOptions::default());

    let span = series.span;
    let p = &outcome.params;
    let scale = [1.0, 1.0 / span, 1.0];
    let cov = covariance(&outcome, false)
        .map(|c| DMatrix::from_fn(3, 3, |i, j| c[(i, j)] * scale[i] * scale[j]))
        .unwrap_or_else(|| DMatrix::from_element(3, 3, f64::NAN));
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();
    let rate = p[1] / span;
    let mut flags = Vec::new();
    let mut converged = outcome.converged;
    let mut message = outcome.message.clone();
    let tau = if p[1] > NO_DECAY {
        1.0 / rate
    } else {
        flags.push("time_constant_unidentifiable".to_string());
        converged = false;
        message = format!("{message}; no decay resolved (rate {rate:e} 1/s)");
        f64::NAN
    };
    Ok(FitResult {
        model: "exponential".into(),
        params: vec![
            FitParam::new("amplitude", p[0], err(0)),
            FitParam::new("rate", rate, err(1)),
            FitParam::new("offset", p[2], err(2)),
        ],
        derived: vec![FitParam::new("tau", tau, err(1) * tau * tau)],
        covariance: (0..3)
            .map(|i| (0..3).map(|j| cov[(i, j)]).collect())
            .collect(),
        residual_norm: series.residual_norm(|i| p[0] * (-p[1] * series.u[i]).exp() + p[2]),
        converged,
        flags,
        iterations: outcome.iterations,
        message,
    })
}
