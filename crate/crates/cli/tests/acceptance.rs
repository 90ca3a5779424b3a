//! Acceptance suite: one PASS/FAIL (or REPORT) line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! process fails if any criterion fails, except those listed in
//! `KNOWN_RED`, which must still fail (a stale entry is an error too).

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use shotnoise::analysis::{bump_rate, fit_decaying_sine, fit_exponential};
use shotnoise::model::config::load_system;
use shotnoise::model::{angular, temperature_sweep};
use shotnoise::photon::{evolve_master, occupancy_mean, steady_state, PhotonDistribution};
use shotnoise::qsim::{mc_fringe, run_sequence, SequenceSpec};
use shotnoise::rng::stream_rng;
use shotnoise_cli::scenario::preset_text;
use shotnoise_cli::{execute, Context, Loaded, Report, TaskKind};

/// Criteria that fail for reasons recorded alongside the project notes.
const KNOWN_RED: &[&str] = &["5b"];

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Report,
}

struct Line {
    id: &'static str,
    status: Status,
    text: String,
}

#[derive(Default)]
struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    fn check(&mut self, id: &'static str, passed: bool, text: String) {
        let status = if passed { Status::Pass } else { Status::Fail };
        self.push(id, status, text);
    }

    fn report(&mut self, id: &'static str, text: String) {
        self.push(id, Status::Report, text);
    }

    fn push(&mut self, id: &'static str, status: Status, text: String) {
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Report => "REPORT",
        };
        println!("{tag:6} [{id}] {text}");
        self.lines.push(Line { id, status, text });
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn preset(name: &str) -> Value {
    serde_json::from_str(preset_text(name).unwrap()).unwrap()
}

fn run(scenario: &Value, task: TaskKind) -> Report {
    let loaded = Loaded::from_text(&scenario.to_string(), Path::new(".")).unwrap();
    let outcome = execute(&Context::new(loaded, None, None), task).unwrap();
    assert!(
        outcome.report.errors.is_empty(),
        "{:?}",
        outcome.report.errors
    );
    outcome.report
}

fn q(report: &Report, name: &str) -> f64 {
    report
        .get(name)
        .unwrap_or_else(|| panic!("{} did not report {name}", report.command))
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

/// Ramsey rate versus occupancy at three cavity linewidths.
fn slope_law(suite: &mut Suite) {
    for (kappa_khz, id0, id1) in [
        (6.0, "1/6kHz/N0", "1/6kHz/N1"),
        (32.0, "1/32kHz/N0", "1/32kHz/N1"),
        (120.0, "1/120kHz/N0", "1/120kHz/N1"),
    ] {
        let mut s = preset("fig2a");
        s["system"]["modes"][0]["q_couplers"] = json!([8.01e9 / (kappa_khz * 1e3)]);
        s["expect"] = json!([]);
        let start = Instant::now();
        let r = run(&s, TaskKind::Sweep);
        let took = start.elapsed();
        let fast = took < Duration::from_secs(300);
        for (n, id, tol) in [(0, id0, 0.05), (1, id1, 0.10)] {
            let ratio = q(&r, &format!("slope_ratio@N{n}"));
            suite.check(
                id,
                (ratio - 1.0).abs() <= tol && fast && q(&r, "failed_points") == 0.0,
                format!(
                    "kappa/2pi = {kappa_khz} kHz, N = {n}: slope = {:.5e} 1/s, {} = {:.5e} 1/s, ratio {ratio:.4} (tol {tol}); 1e5 trajectories, {}",
                    q(&r, &format!("slope_per_s@N{n}")),
                    if n == 0 { "kappa" } else { "3kappa" },
                    q(&r, &format!("expected_slope_per_s@N{n}")),
                    secs(took),
                ),
            );
        }
    }
}

/// Trajectory and density-matrix fringes agree within 3 standard errors.
fn oracle_equivalence(suite: &mut Suite) {
    let system = load_system(
        r#"{ "qubit": { "omega_q_ghz": 6.65, "alpha_mhz": 340, "t1_us": 30, "gamma_res_per_s": 20789 },
             "modes": [ { "index": 1, "freq_ghz": 8.01, "chi_mhz": 7.0, "q_couplers": [250312.5], "n_bar": 0.25 } ] }"#,
    )
    .unwrap();
    let chi = system.mode(1).unwrap().chi_n;
    assert!(rel(chi, angular(7e6)) < 1e-12);
    let seq = SequenceSpec::ramsey(1, Some(0), angular(0.5e6), true);
    let delays = linspace(0.0, 12e-6, 61);
    let start = Instant::now();
    let dm = run_sequence(&system, &seq, &delays).unwrap();
    let mc = mc_fringe(&system, &seq, &delays, 100_000, 7).unwrap();
    let took = start.elapsed();
    // at zero delay every shot gives the same value and the stderr is zero;
    // there the two must agree to round-off
    let within = (0..delays.len())
        .all(|i| (mc.signal[i] - dm.signal[i]).abs() <= 3.0 * mc.stderr[i] + 1e-12);
    let worst = (0..delays.len())
        .filter(|&i| mc.stderr[i] > 0.0)
        .map(|i| (mc.signal[i] - dm.signal[i]).abs() / mc.stderr[i])
        .fold(0.0, f64::max);
    suite.check(
        "2",
        within && took < Duration::from_secs(120),
        format!(
            "(nbar, kappa/2pi, chi/2pi) = (0.25, 32 kHz, 7 MHz): max |mc - dm| / stderr = {worst:.2} over {} delays (tol 3), 1e5 trajectories, {}",
            delays.len(),
            secs(took)
        ),
    );
}

/// Photon master-equation closed forms.
fn master_equation(suite: &mut Suite) {
    let kappa = TAU * 32e3;
    let start = Instant::now();

    let mut worst = 0.0f64;
    for kt in [0.1, 0.5, 1.3, 4.0] {
        let t = kt / kappa;
        let p = evolve_master(&PhotonDistribution::fock(5, 20).unwrap(), 0.0, kappa, t).unwrap();
        let s = (-kt).exp();
        let choose = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0];
        let exact: Vec<f64> = (0..=20)
            .map(|k| {
                if k <= 5 {
                    choose[k] * s.powi(k as i32) * (1.0 - s).powi(5 - k as i32)
                } else {
                    0.0
                }
            })
            .collect();
        worst = worst.max(p.l1_distance(&PhotonDistribution::new(exact).unwrap()));
    }
    suite.check(
        "3/fock",
        worst < 1e-8,
        format!("Fock-5 binomial decay: max L1 = {worst:.2e} (tol 1e-8)"),
    );

    let mut worst = 0.0f64;
    for n_bar in [0.02, 0.25, 1.0, 3.1] {
        let n_max = 120;
        let ss = steady_state(n_bar, kappa, n_max).unwrap();
        let r = n_bar / (n_bar + 1.0);
        let norm = 1.0 - r.powi(n_max as i32 + 1);
        let geometric: Vec<f64> = (0..=n_max)
            .map(|n| (1.0 - r) * r.powi(n as i32) / norm)
            .collect();
        worst = worst.max(ss.l1_distance(&PhotonDistribution::new(geometric).unwrap()));
    }
    suite.check(
        "3/steady",
        worst < 1e-10,
        format!("steady state vs geometric law: max L1 = {worst:.2e} (tol 1e-10)"),
    );

    let mut worst = 0.0f64;
    let (n_bar, n0) = (0.7, 4);
    let p0 = PhotonDistribution::fock(n0, 80).unwrap();
    for kt in [0.05, 0.3, 1.0, 2.5, 6.0] {
        let p = evolve_master(&p0, n_bar, kappa, kt / kappa).unwrap();
        let exact = n_bar + (n0 as f64 - n_bar) * (-kt).exp();
        worst = worst.max((occupancy_mean(&p) - exact).abs());
    }
    let took = start.elapsed();
    suite.check(
        "3/mean",
        worst < 1e-8 && took < Duration::from_secs(10),
        format!(
            "mean relaxation from Fock 4 at nbar = 0.7: max error = {worst:.2e} (tol 1e-8), {}",
            secs(took)
        ),
    );
}

/// Thermal dephasing budget versus temperature.
fn temperature_model(suite: &mut Suite) {
    const ORACLE: f64 = 16_318.462_277_025_985;
    const QUOTED: f64 = 1.647e4;
    let start = Instant::now();
    let r = run(&preset("fig3"), TaskKind::Predict);
    let gamma = q(&r, "gamma_phi_per_s@100mk");
    let took = start.elapsed();
    suite.check(
        "4/rate",
        rel(gamma, ORACLE) <= 1e-6 && took < Duration::from_secs(1),
        format!(
            "gamma_phi(100 mK, low Q) = {gamma:.10e} 1/s vs exact {ORACLE:.10e} (tol 1e-6 rel), {}",
            secs(took)
        ),
    );
    suite.report(
        "4/quoted",
        format!(
            "quoted 1.647e4 1/s differs from the exact arithmetic by {:.2}%",
            100.0 * rel(gamma, QUOTED)
        ),
    );

    // caption lifetimes: tau_101 and tau_103
    let temps: Vec<f64> = (0..=80).map(|mk| mk as f64 * 1e-3).collect();
    for (label, tau1, tau3) in [("low Q", 2.0, 0.4), ("high Q", 20.0, 4.0)] {
        let system = load_system(&format!(
            r#"{{ "qubit": {{ "omega_q_ghz": 6.65, "alpha_mhz": 340, "t1_us": 30 }},
                 "modes": [ {{ "index": 1, "freq_ghz": 8.01, "chi_mhz": 7.0, "tau_us": {tau1} }},
                            {{ "index": 3, "freq_ghz": 12.8, "chi_mhz": 0.22, "tau_us": {tau3} }} ] }}"#
        ))
        .unwrap();
        let rows = temperature_sweep(&system, &temps).unwrap();
        let shortest = rows.iter().map(|r| r.t_phi()).fold(f64::INFINITY, f64::min);
        suite.check(
            if label == "low Q" {
                "4/tphi-lowQ"
            } else {
                "4/tphi-highQ"
            },
            shortest > 100e-6,
            format!(
                "{label}: min T_phi over 0..80 mK (1 mK steps) = {:.2} us (needs > 100 us)",
                shortest * 1e6
            ),
        );
    }
}

/// High-occupancy Ramsey: contrast loss and the non-oscillating addition.
fn high_occupancy(suite: &mut Suite) {
    let start = Instant::now();
    let hot = run(&preset("fig2d"), TaskKind::Simulate);
    let mut cold = preset("fig2d");
    cold["system"]["modes"][0]["n_bar"] = json!(0.0);
    cold["expect"] = json!([]);
    let cold = run(&cold, TaskKind::Simulate);
    let (c_hot, c_cold) = (q(&hot, "contrast"), q(&cold, "contrast"));
    suite.check(
        "5a",
        c_hot < c_cold,
        format!("initial contrast at nbar = 3.1 is {c_hot:.4}, at nbar = 0 it is {c_cold:.4}"),
    );

    // cycling the phase of the closing pulse by pi cancels the fringe and
    // leaves the non-oscillating part
    let s = preset("fig2d");
    let loaded = Loaded::from_text(&s.to_string(), Path::new(".")).unwrap();
    let system = loaded.system().unwrap();
    let mode = system.mode(1).unwrap();
    let (kappa, n_bar) = (mode.kappa(), system.effective_n_bar(1).unwrap());
    let delays = linspace(0.0, 20e-6, 401);
    let plus = SequenceSpec::ramsey(1, Some(0), angular(1e6), true);
    let mut minus = plus.clone();
    minus.pulses[1].pulse.axis += PI;
    let a = run_sequence(system, &plus, &delays).unwrap();
    let b = run_sequence(system, &minus, &delays).unwrap();
    let flat: Vec<f64> = a
        .signal
        .iter()
        .zip(&b.signal)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let fit = fit_exponential(&delays, &flat).unwrap();
    let rate = fit.get("rate").unwrap();
    let expected = kappa * (2.0 * n_bar + 1.0);
    let took = start.elapsed();
    suite.check(
        "5b",
        rel(rate, expected) <= 0.10 && took < Duration::from_secs(300),
        format!(
            "non-oscillating component relaxes at {:.3} kappa vs kappa(2nbar+1) = {:.3} kappa (tol 10%); its 1/e rate is {:.3} kappa, {}",
            rate / kappa,
            expected / kappa,
            bump_rate(n_bar, kappa, 0).unwrap() / kappa,
            secs(took),
        ),
    );
}

/// Fitters on synthetic data.
fn fit_round_trips(suite: &mut Suite) {
    let start = Instant::now();
    let t = linspace(0.0, 60e-6, 301);
    let sine = |a: f64, t2: f64, f: f64, phi: f64, c: f64| -> Vec<f64> {
        t.iter()
            .map(|t| a * (-t / t2).exp() * (TAU * f * t + phi).sin() + c)
            .collect()
    };
    let truth = [0.45, 26e-6, 0.5e6, 0.6, 0.5];
    let names = ["amplitude", "t2", "frequency", "phase", "offset"];
    let fit = fit_decaying_sine(&t, &sine(0.45, 26e-6, 0.5e6, 0.6, 0.5), None).unwrap();
    let worst = names
        .iter()
        .zip(truth)
        .map(|(n, v)| rel(fit.get(n).unwrap(), v))
        .fold(0.0, f64::max);
    suite.check(
        "6/sine-exact",
        fit.converged && worst < 1e-6,
        format!("noiseless decaying sine: max rel error {worst:.1e} (tol 1e-6)"),
    );

    let te = linspace(0.0, 100e-6, 201);
    let exp_truth = [0.8, 1.0 / 20e-6, 0.2];
    let exp_names = ["amplitude", "rate", "offset"];
    let clean: Vec<f64> = te.iter().map(|t| 0.8 * (-t / 20e-6).exp() + 0.2).collect();
    let fit = fit_exponential(&te, &clean).unwrap();
    let worst = exp_names
        .iter()
        .zip(exp_truth)
        .map(|(n, v)| rel(fit.get(n).unwrap(), v))
        .fold(0.0, f64::max);
    suite.check(
        "6/exp-exact",
        fit.converged && worst < 1e-6,
        format!("noiseless exponential: max rel error {worst:.1e} (tol 1e-6)"),
    );

    // SNR 20: noise sigma is the amplitude over 20
    let clean = sine(0.45, 26e-6, 0.5e6, 0.6, 0.5);
    let mut sine_est = vec![Vec::new(); 5];
    let mut exp_est = vec![Vec::new(); 3];
    for seed in 0..100 {
        let mut rng = stream_rng(20, seed);
        let y: Vec<f64> = clean
            .iter()
            .map(|v| v + 0.45 / 20.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let fit = fit_decaying_sine(&t, &y, None).unwrap();
        for (k, n) in names.iter().enumerate() {
            sine_est[k].push(fit.get(n).unwrap());
        }
        let y: Vec<f64> = te
            .iter()
            .map(|t| {
                0.8 * (-t / 20e-6).exp()
                    + 0.2
                    + 0.8 / 20.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let fit = fit_exponential(&te, &y).unwrap();
        for (k, n) in exp_names.iter().enumerate() {
            exp_est[k].push(fit.get(n).unwrap());
        }
    }
    let sine_worst = sine_est
        .into_iter()
        .zip(truth)
        .map(|(e, v)| rel(median(e), v))
        .fold(0.0, f64::max);
    let exp_worst = exp_est
        .into_iter()
        .zip(exp_truth)
        .map(|(e, v)| rel(median(e), v))
        .fold(0.0, f64::max);
    let took = start.elapsed();
    let fast = took < Duration::from_secs(60);
    suite.check(
        "6/sine-snr20",
        sine_worst < 0.01 && fast,
        format!("decaying sine at SNR 20, 100 seeds: worst median rel error {sine_worst:.2e} (tol 1e-2)"),
    );
    suite.check(
        "6/exp-snr20",
        exp_worst < 0.01 && fast,
        format!("exponential at SNR 20, 100 seeds: worst median rel error {exp_worst:.2e} (tol 1e-2), {}", secs(took)),
    );
}

/// Photon-number calibration from a synthetic power sweep.
fn calibration(suite: &mut Suite) {
    let start = Instant::now();
    let r = run(&preset("fig1d"), TaskKind::Calibrate);
    let took = start.elapsed();
    let (ev, ep) = (q(&r, "scale_voltage_rel_err"), q(&r, "scale_power_rel_err"));
    suite.check(
        "7/scales",
        ev <= 0.02 && ep <= 0.02 && took < Duration::from_secs(60),
        format!(
            "hidden scale factors recovered: voltage {:.3}%, power {:.3}% (tol 2%), {}",
            ev * 100.0,
            ep * 100.0,
            secs(took)
        ),
    );
    let dev = q(&r, "pn_rms_rel_dev");
    suite.check(
        "7/thermal",
        dev <= 1.25 * 0.05 && q(&r, "p_min") >= 0.0,
        format!("calibrated P(0..2) vs nbar^N/(nbar+1)^(N+1): rms rel deviation {dev:.4} (injected noise 0.05, tol 0.0625)"),
    );
}

/// Mode lifetime from the quality factor.
fn unit_anchor(suite: &mut Suite) {
    let system = load_system(
        r#"{ "qubit": { "omega_q_ghz": 6.65, "alpha_mhz": 340 },
             "modes": [ { "index": 1, "freq_ghz": 8.01, "chi_mhz": 7.0, "q_couplers": [1.0e6] } ] }"#,
    )
    .unwrap();
    let tau = system.mode(1).unwrap().tau();
    suite.check(
        "8",
        (tau * 1e6 - 19.87).abs() < 0.005 && rel(tau, 20e-6) <= 0.01,
        format!(
            "Q = 1e6 at 8.01 GHz gives tau = {:.4} us (19.87 expected, within 1% of 20 us)",
            tau * 1e6
        ),
    );
}

/// Absolute coherence times against the measured ones, without thresholds.
fn measured_comparison(suite: &mut Suite) {
    for (name, measured) in [("fig2c", 7.7), ("fig2d", 5.2)] {
        let r = run(&preset(name), TaskKind::Simulate);
        let t2 = q(&r, "t2_us");
        suite.report(
            "9",
            format!(
                "{name}: model T2* = {t2:.2} us, measured {measured} us ({:+.0}%)",
                100.0 * (t2 / measured - 1.0)
            ),
        );
    }
    let base = preset("fig4");
    let mut best = (0.0, 0.0);
    for tau in base["sweep"]["values"].as_array().unwrap() {
        let mut s = json!({
            "name": "echo",
            "system": base["system"].clone(),
            "task": "simulate",
            "simulate": base["sweep"]["simulate"].clone(),
        });
        s["system"]["modes"][0]["tau_us"] = tau.clone();
        s["simulate"]["sequence"]["kind"] = json!("echo");
        let t2 = q(&run(&s, TaskKind::Simulate), "t2_us");
        if t2 > best.0 {
            best = (t2, tau.as_f64().unwrap());
        }
    }
    suite.report(
        "9",
        format!(
            "fig4: longest model echo T2 = {:.1} us (at tau = {} us), measured maximum 45 us",
            best.0, best.1
        ),
    );
}

fn main() -> ExitCode {
    // libtest flags passed by `cargo test` are ignored; the suite always runs whole
    let mut suite = Suite::default();
    unit_anchor(&mut suite);
    master_equation(&mut suite);
    temperature_model(&mut suite);
    fit_round_trips(&mut suite);
    calibration(&mut suite);
    high_occupancy(&mut suite);
    measured_comparison(&mut suite);
    oracle_equivalence(&mut suite);
    slope_law(&mut suite);

    let failed: Vec<&Line> = suite
        .lines
        .iter()
        .filter(|l| l.status == Status::Fail)
        .collect();
    let passed = suite
        .lines
        .iter()
        .filter(|l| l.status == Status::Pass)
        .count();
    println!("\n{passed} passed, {} failed", failed.len());
    let mut ok = true;
    for l in &failed {
        if KNOWN_RED.contains(&l.id) {
            println!("known failure [{}]: {}", l.id, l.text);
        } else {
            ok = false;
        }
    }
    for id in KNOWN_RED {
        if !failed.iter().any(|l| l.id == *id) {
            println!("[{id}] is listed as a known failure but did not fail");
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
