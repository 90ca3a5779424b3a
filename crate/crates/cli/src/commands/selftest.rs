//! Fast built-in consistency checks, independent of any scenario.

use shotnoise::analysis::fit_decaying_sine;
use shotnoise::model::{angular, total_q};
use shotnoise::qsim::FringeData;

use super::linspace;
use crate::output::Check;
use crate::scenario::TaskKind;
use crate::{execute, Context, Loaded};

fn check(quantity: &str, value: Option<f64>, expected: &str, ok: impl Fn(f64) -> bool) -> Check {
    Check {
        quantity: quantity.into(),
        value,
        expected: expected.into(),
        passed: value.is_some_and(ok),
    }
}

fn preset_quantity(preset: &str, task: TaskKind, name: &str) -> Option<f64> {
    let ctx = Context::new(Loaded::from_preset(preset).ok()?, None, None);
    execute(&ctx, task).ok()?.report.get(name)
}

pub fn run() -> Vec<Check> {
    let mut checks = Vec::new();

    let g = preset_quantity("fig3", TaskKind::Predict, "gamma_phi_per_s@100mk");
    checks.push(check(
        "low-Q gamma_phi at 100 mK (1/s)",
        g,
        "16318.4622770 +- 1e-6 rel",
        |v| (v / 16_318.462_277_025_985 - 1.0).abs() < 1e-6,
    ));
    let t = preset_quantity("fig3", TaskKind::Predict, "t_phi_us@80mk");
    checks.push(check(
        "low-Q pure-dephasing time at 80 mK (us)",
        t,
        "> 100",
        |v| v > 100.0,
    ));

    let tau = total_q(&[1e6], f64::INFINITY, angular(8.01e9)).tau * 1e6;
    checks.push(check(
        "lifetime of Q = 1e6 at 8.01 GHz (us)",
        Some(tau),
        "20 +- 1%",
        |v| (v / 20.0 - 1.0).abs() < 0.01,
    ));

    let lo = preset_quantity("ideal", TaskKind::Simulate, "signal_min");
    let hi = preset_quantity("ideal", TaskKind::Simulate, "signal_max");
    let spread = lo
        .zip(hi)
        .map(|(a, b)| (1.0 - a).abs().max((1.0 - b).abs()));
    checks.push(check(
        "ideal fringe deviation from 1",
        spread,
        "< 1e-12",
        |v| v < 1e-12,
    ));

    let t: Vec<f64> = linspace(0.0, 60e-6, 301);
    let y: Vec<f64> = t
        .iter()
        .map(|t| 0.5 * (-t / 26e-6).exp() * (angular(0.5e6) * t).sin() + 0.5)
        .collect();
    let t2 = fit_decaying_sine(&t, &y, None)
        .ok()
        .and_then(|f| f.get("t2"));
    checks.push(check(
        "noiseless decaying-sine T2 (s)",
        t2,
        "26e-6 +- 1e-6 rel",
        |v| (v / 26e-6 - 1.0).abs() < 1e-6,
    ));

    let data = FringeData::new(t.clone(), y.clone(), vec![0.0; t.len()], Default::default());
    let round_trip = data.ok().and_then(|d| {
        let mut buf = Vec::new();
        d.write_csv(&mut buf).ok()?;
        let back = FringeData::read_csv(buf.as_slice()).ok()?;
        Some(if back == d { 0.0 } else { 1.0 })
    });
    checks.push(check(
        "fringe CSV round trip mismatches",
        round_trip,
        "== 0",
        |v| v == 0.0,
    ));
    checks
}
