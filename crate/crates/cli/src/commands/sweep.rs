//! Parallel sweeps of simulate + fit over occupancy or cavity loss.

use rayon::prelude::*;
use shotnoise::model::{angular, SystemModel};
use shotnoise::rng::derive_seed;

use super::simulate::{fringe_text, simulate_point, PointOutput};
use crate::output::{csv_safe, num, table, write, write_csv, Report};
use crate::scenario::{FitModel, SweepVariable};
use crate::{CliError, Context};

fn apply(
    system: &mut SystemModel,
    mode: u32,
    variable: SweepVariable,
    value: f64,
) -> Result<(), CliError> {
    let m = system.mode_mut(mode)?;
    match variable {
        SweepVariable::NBar => m.n_bar = value,
        SweepVariable::KappaKhz => set_q(m, m.omega_n / angular(value * 1e3)),
        SweepVariable::TauUs => set_q(m, m.omega_n * value * 1e-6),
        SweepVariable::Q => set_q(m, value),
    }
    system.validate()?;
    Ok(())
}

fn set_q(m: &mut shotnoise::model::CavityMode, q: f64) {
    m.q_couplers = vec![q];
    m.q_int = f64::INFINITY;
}

/// Ordinary least squares: (slope, slope stderr, intercept).
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let ss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (ss / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some((slope, stderr, intercept))
}

pub fn run(ctx: &Context) -> Result<Report, CliError> {
    let system = ctx.loaded.system()?;
    let block = ctx.loaded.scenario.sweep.as_ref().expect("validated");
    if block.simulate.fit_model() == FitModel::None {
        return Err(CliError::Field {
            path: "sweep.simulate.fit".into(),
            message: "a sweep needs a fit to extract rates".into(),
        });
    }
    let mode = block.simulate.sequence.mode;
    let points: Vec<(u32, f64)> = block
        .select_n_values
        .iter()
        .flat_map(|&s| block.values.iter().map(move |&v| (s, v)))
        .collect();
    let master = ctx.seed.unwrap_or(0);

    let results: Vec<Result<PointOutput, CliError>> = points
        .par_iter()
        .enumerate()
        .map(|(k, &(s, v))| {
            let mut sys = system.clone();
            apply(&mut sys, mode, block.variable, v)?;
            let mut sim = block.simulate.clone();
            sim.sequence.select_n = Some(s);
            simulate_point(&sys, &sim, Some(derive_seed(master, k as u64)))
        })
        .collect();

    let mut report = Report::new("sweep");
    let columns: Vec<String> = [
        "index",
        "select_n",
        block.variable.column(),
        "n_bar",
        "kappa_per_s",
        "rate_per_s",
        "rate_stderr_per_s",
        "t2_us",
        "predicted_rate_per_s",
        "status",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    let mut console = Vec::new();
    // (select_n, n_bar, lifetime, rate, t2) of usable points
    let mut good: Vec<(u32, f64, f64, f64, f64)> = Vec::new();
    for (k, (&(s, v), res)) in points.iter().zip(&results).enumerate() {
        let mut row = vec![k.to_string(), s.to_string(), num(v)];
        match res {
            Ok(p) => {
                let get = |n: &str| p.get(n).unwrap_or(f64::NAN);
                let (rate, t2) = (get("rate_per_s"), get("t2_us"));
                let converged = get("fit_converged") == 1.0 && rate.is_finite();
                let status = if converged { "ok" } else { "not_converged" };
                if converged {
                    good.push((s, get("n_bar"), get("mode_tau_us"), rate, t2));
                } else {
                    report
                        .notes
                        .push(format!("point {k}: fit did not converge"));
                }
                row.extend([
                    num(get("n_bar")),
                    num(get("kappa_per_s")),
                    num(rate),
                    num(get("rate_stderr_per_s")),
                    num(t2),
                    num(get("predicted_rate_per_s")),
                    status.into(),
                ]);
                console.push(vec![
                    k.to_string(),
                    s.to_string(),
                    format!("{v}"),
                    format!("{rate:.5e}"),
                    format!("{t2:.4}"),
                    status.into(),
                ]);
                write(
                    ctx,
                    &mut report,
                    &format!("fringes/point_{k:03}.csv"),
                    &fringe_text(ctx, p.primary()),
                )?;
            }
            Err(e) => {
                let msg = format!("error: {e}");
                report.notes.push(format!("point {k}: {e}"));
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(csv_safe(&msg));
                console.push(vec![
                    k.to_string(),
                    s.to_string(),
                    format!("{v}"),
                    "-".into(),
                    "-".into(),
                    msg,
                ]);
            }
        }
        rows.push(row);
    }
    write_csv(ctx, &mut report, "sweep.csv", "sweep", &columns, &rows)?;
    report.set("points", points.len() as f64);
    report.set("failed_points", (points.len() - good.len()) as f64);

    let mut slope_rows = Vec::new();
    for &s in &block.select_n_values {
        let pts: Vec<_> = good.iter().filter(|g| g.0 == s).collect();
        if block.variable == SweepVariable::NBar {
            let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.3).collect();
            let kappa = system.mode(mode)?.kappa();
            let expected = kappa * (2 * s + 1) as f64;
            let (slope, stderr, intercept) =
                linear_fit(&x, &y).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            report.set(format!("slope_per_s@N{s}"), slope);
            report.set(format!("slope_stderr_per_s@N{s}"), stderr);
            report.set(format!("intercept_per_s@N{s}"), intercept);
            report.set(format!("expected_slope_per_s@N{s}"), expected);
            report.set(format!("slope_ratio@N{s}"), slope / expected);
            slope_rows.push(vec![
                s.to_string(),
                num(slope),
                num(stderr),
                num(intercept),
                num(expected),
                num(slope / expected),
            ]);
        } else {
            let mut by_lifetime: Vec<(f64, f64)> = pts.iter().map(|p| (p.2, p.4)).collect();
            by_lifetime.sort_by(|a, b| a.0.total_cmp(&b.0));
            let monotonic =
                by_lifetime.len() >= 2 && by_lifetime.windows(2).all(|w| w[1].1 > w[0].1);
            report.set(
                format!("t2_monotonic@N{s}"),
                if monotonic { 1.0 } else { 0.0 },
            );
        }
    }
    if !slope_rows.is_empty() {
        let columns = [
            "select_n",
            "slope_per_s",
            "slope_stderr_per_s",
            "intercept_per_s",
            "expected_slope_per_s",
            "slope_ratio",
        ]
        .map(String::from);
        write_csv(
            ctx,
            &mut report,
            "sweep_slopes.csv",
            "sweep_slopes",
            &columns,
            &slope_rows,
        )?;
    }
    report.table = table(
        &[
            "#",
            "N",
            block.variable.column(),
            "rate_1/s",
            "T2_us",
            "status",
        ],
        &console,
    );
    Ok(report)
}
