//! Fringe simulation with an automatic fit.

use shotnoise::analysis::{
    fit_decaying_sine, fit_exponential, fit_ramsey_reequilibration, FitResult, NBarSpec,
    ReequilibrationModel,
};
use shotnoise::model::{angular, cyclic, dephasing_rate, SystemModel};
use shotnoise::photon::{default_n_max, PhotonDistribution};
use shotnoise::qsim::{
    mc_fringe, run_sequence, simulate_cavity_ringdown, Envelope, FringeData, FringeMeta,
    SequenceSpec,
};

use super::linspace;
use crate::output::{header, table, write, Report};
use crate::scenario::{FitModel, Method, SequenceKind, SimulateBlock};
use crate::{CliError, Context};

/// Data, fits and quantities of one simulated configuration.
#[derive(Debug, Clone)]
pub struct PointOutput {
    /// Density-matrix (or ringdown) data.
    pub dm: Option<FringeData>,
    pub mc: Option<FringeData>,
    /// Fit of the Monte Carlo data when that is all there is, else of `dm`.
    pub fit: Option<FitResult>,
    /// Fit of the Monte Carlo data alongside `dm` when both ran.
    pub mc_fit: Option<FitResult>,
    pub quantities: Vec<(String, f64)>,
}

impl PointOutput {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.quantities
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn primary(&self) -> &FringeData {
        self.dm
            .as_ref()
            .or(self.mc.as_ref())
            .expect("at least one data set")
    }
}

/// Ramsey or echo sequence described by `block`, with the detuning it resolves to.
pub fn build_sequence(block: &SimulateBlock, detuning: f64) -> SequenceSpec {
    let b = &block.sequence;
    let mut seq = match b.kind {
        SequenceKind::Echo => SequenceSpec::echo(
            b.mode,
            b.select_n,
            detuning,
            b.final_selective,
            b.echo_selective,
        ),
        _ => SequenceSpec::ramsey(b.mode, b.select_n, detuning, b.final_selective),
    };
    seq.prep = b.prep;
    seq.n_max = b.n_max;
    if let Some(sigma_ns) = b.gaussian_sigma_ns {
        for step in seq.pulses.iter_mut().filter(|p| p.pulse.target().is_some()) {
            step.pulse.envelope = Envelope::Gaussian {
                sigma: sigma_ns * 1e-9,
            };
        }
    }
    seq
}

pub fn simulate_point(
    system: &SystemModel,
    block: &SimulateBlock,
    seed: Option<u64>,
) -> Result<PointOutput, CliError> {
    let b = &block.sequence;
    let mode = system.mode(b.mode)?;
    let kappa = mode.kappa();
    let n_bar = system.effective_n_bar(b.mode)?;
    let mut q: Vec<(String, f64)> = vec![
        ("kappa_per_s".into(), kappa),
        ("mode_tau_us".into(), mode.tau() * 1e6),
        ("n_bar".into(), n_bar),
    ];
    let start = block.delays.start_us * 1e-6;

    if b.kind == SequenceKind::Ringdown {
        let stop = block
            .delays
            .stop_us
            .map_or(start + 5.0 / kappa, |s| s * 1e-6);
        let t = linspace(start, stop, block.delays.points);
        let n_max = b
            .n_max
            .unwrap_or(default_n_max(n_bar).max(b.fock_n as usize + 20));
        let initial = PhotonDistribution::fock(b.fock_n as usize, n_max)
            .map_err(shotnoise::qsim::QsimError::from)?;
        let p0 = simulate_cavity_ringdown(system, b.mode, &initial, &t)?;
        let data = FringeData::new(
            t.clone(),
            p0,
            vec![0.0; t.len()],
            FringeMeta {
                sequence: format!("ringdown mode={} fock={}", b.mode, b.fock_n),
                system: format!("master equation, nbar={n_bar:e}, kappa={kappa:e}"),
                seed: None,
            },
        )?;
        q.push(("predicted_tau_us".into(), 1e6 / kappa));
        let fit = match block.fit_model() {
            FitModel::Exponential => Some(fit_exponential(&data.delays, &data.signal)?),
            _ => None,
        };
        if let Some(f) = &fit {
            fit_quantities(&mut q, "", f);
        }
        signal_range(&mut q, &data);
        return Ok(PointOutput {
            dm: Some(data),
            mc: None,
            fit,
            mc_fit: None,
            quantities: q,
        });
    }

    let s = b.select_n.unwrap_or(0);
    let t1 = system.qubit.t1;
    let photon_rate = dephasing_rate(s, n_bar, kappa);
    let predicted = 0.5 / t1 + system.qubit.gamma_res + photon_rate;
    let stop = match block.delays.stop_us {
        Some(v) => v * 1e-6,
        None if predicted > 0.0 => start + 4.0 / predicted,
        None => {
            return Err(CliError::Field {
                path: "delays.stop_us".into(),
                message: "no decay is expected, so the window must be given".into(),
            })
        }
    };
    let detuning = b
        .detuning_mhz
        .map_or(angular(10.0 / (stop - start)), |d| angular(d * 1e6));
    let seq = build_sequence(block, detuning);
    let t = linspace(start, stop, block.delays.points);
    let chi = mode.chi_n;
    q.extend([
        ("photon_rate_per_s".into(), photon_rate),
        ("predicted_rate_per_s".into(), predicted),
        ("predicted_t2_us".into(), 1e6 / predicted),
        (
            "programmed_detuning_hz".into(),
            cyclic(seq.programmed_detuning(chi)),
        ),
        (
            "expected_fringe_hz".into(),
            cyclic(seq.programmed_detuning(chi) - s as f64 * chi),
        ),
    ]);

    let dm = match block.method {
        Method::Dm | Method::Both => Some(run_sequence(system, &seq, &t)?),
        Method::Mc => None,
    };
    let mc = match block.method {
        Method::Mc | Method::Both => Some(mc_fringe(
            system,
            &seq,
            &t,
            block.trajectories,
            seed.unwrap_or(0),
        )?),
        Method::Dm => None,
    };
    let fit_one = |data: &FringeData| -> Result<Option<FitResult>, CliError> {
        let weights: Option<Vec<f64>> = data
            .stderr
            .iter()
            .all(|e| *e > 0.0)
            .then(|| data.stderr.iter().map(|e| 1.0 / e).collect());
        let w = weights.as_deref();
        Ok(match block.fit_model() {
            FitModel::None => None,
            FitModel::DecayingSine => Some(fit_decaying_sine(&data.delays, &data.signal, w)?),
            FitModel::Exponential => Some(fit_exponential(&data.delays, &data.signal)?),
            FitModel::Reequilibration => {
                let model = ReequilibrationModel {
                    kappa,
                    n_bar: if block.n_bar_free {
                        NBarSpec::Free {
                            guess: n_bar.max(0.05),
                        }
                    } else {
                        NBarSpec::Fixed(n_bar)
                    },
                    select_n: s,
                    t1,
                };
                Some(fit_ramsey_reequilibration(
                    &data.delays,
                    &data.signal,
                    &model,
                    w,
                )?)
            }
        })
    };
    let (fit, mc_fit) = match (&dm, &mc) {
        (Some(d), Some(m)) => (fit_one(d)?, fit_one(m)?),
        (Some(d), None) => (fit_one(d)?, None),
        (None, Some(m)) => (fit_one(m)?, None),
        (None, None) => unreachable!(),
    };
    if let Some(f) = &fit {
        fit_quantities(&mut q, "", f);
    }
    if let Some(f) = &mc_fit {
        fit_quantities(&mut q, "mc_", f);
    }
    if let (Some(d), Some(m)) = (&dm, &mc) {
        let within = d
            .signal
            .iter()
            .zip(&m.signal)
            .zip(&m.stderr)
            .filter(|((a, b), e)| (*a - *b).abs() <= 3.0 * **e + 1e-12)
            .count();
        q.push((
            "mc_fraction_within_3sigma".into(),
            within as f64 / d.len() as f64,
        ));
    }
    signal_range(
        &mut q,
        dm.as_ref().or(mc.as_ref()).expect("at least one data set"),
    );
    Ok(PointOutput {
        dm,
        mc,
        fit,
        mc_fit,
        quantities: q,
    })
}

fn signal_range(q: &mut Vec<(String, f64)>, data: &FringeData) {
    let lo = data.signal.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data
        .signal
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    q.push(("signal_min".into(), lo));
    q.push(("signal_max".into(), hi));
}

pub(crate) fn fit_quantities(q: &mut Vec<(String, f64)>, prefix: &str, fit: &FitResult) {
    let mut put = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            q.push((format!("{prefix}{name}"), v));
        }
    };
    put("fit_converged", Some(if fit.converged { 1.0 } else { 0.0 }));
    put("amplitude", fit.get("amplitude"));
    put("offset", fit.get("offset"));
    put("rate_per_s", fit.get("rate"));
    put("rate_stderr_per_s", fit.stderr("rate"));
    put("frequency_hz", fit.get("frequency"));
    put("phase", fit.get("phase"));
    put("t2_us", fit.get("t2").map(|t| t * 1e6));
    put(
        "contrast",
        fit.get("amplitude")
            .filter(|_| fit.get("frequency").is_some())
            .map(|a| 2.0 * a),
    );
    put("fit_tau_us", fit.get("tau").map(|t| t * 1e6));
    put("bump_amplitude", fit.get("bump_amplitude"));
    put("bump_rate_per_s", fit.get("bump_rate"));
    put("fit_n_bar", fit.get("n_bar"));
}

/// Fringe file: the standard header followed by the fringe table.
pub fn fringe_text(ctx: &Context, data: &FringeData) -> String {
    let mut text = header(ctx, "fringe");
    let mut data = data.clone();
    data.meta.seed = None;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).expect("writing to memory");
    text.push_str(&String::from_utf8(buf).expect("ascii"));
    text
}

/// Fit file: the FitResult CSV row under the standard header.
pub fn fit_text(ctx: &Context, fit: &FitResult) -> String {
    let mut text = header(ctx, "fit");
    text.push_str(&fit.csv_header());
    text.push('\n');
    text.push_str(&fit.csv_row());
    text.push('\n');
    text
}

pub fn fit_json(ctx: &Context, fits: &[(&str, &FitResult)]) -> String {
    let value = serde_json::json!({
        "schema": format!("fits/{}", crate::output::SCHEMA_VERSION),
        "scenario_sha256": ctx.loaded.sha256,
        "seed": ctx.seed,
        "fits": fits.iter().map(|(name, f)| serde_json::json!({ "source": name, "result": f })).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&value).expect("json");
    s.push('\n');
    s
}

pub fn run(ctx: &Context) -> Result<Report, CliError> {
    let system = ctx.loaded.system()?;
    let block = ctx.loaded.scenario.simulate.as_ref().expect("validated");
    let point = simulate_point(system, block, ctx.seed)?;

    let mut report = Report::new("simulate");
    for (n, v) in &point.quantities {
        report.set(n.clone(), *v);
    }
    match (&point.dm, &point.mc) {
        (Some(d), Some(m)) => {
            write(ctx, &mut report, "fringe_dm.csv", &fringe_text(ctx, d))?;
            write(ctx, &mut report, "fringe_mc.csv", &fringe_text(ctx, m))?;
        }
        (Some(d), None) => write(ctx, &mut report, "fringe.csv", &fringe_text(ctx, d))?,
        (None, Some(m)) => write(ctx, &mut report, "fringe.csv", &fringe_text(ctx, m))?,
        (None, None) => {}
    }
    let mut fits = Vec::new();
    if let Some(f) = &point.fit {
        write(ctx, &mut report, "fit.csv", &fit_text(ctx, f))?;
        fits.push((if point.dm.is_some() { "dm" } else { "mc" }, f));
    }
    if let Some(f) = &point.mc_fit {
        write(ctx, &mut report, "fit_mc.csv", &fit_text(ctx, f))?;
        fits.push(("mc", f));
    }
    if !fits.is_empty() {
        write(ctx, &mut report, "fit.json", &fit_json(ctx, &fits))?;
        for (name, f) in &fits {
            if !f.converged {
                report
                    .notes
                    .push(format!("{name} fit did not converge: {}", f.message));
            }
            for flag in &f.flags {
                report.notes.push(format!("{name} fit flag: {flag}"));
            }
        }
    }
    let rows: Vec<Vec<String>> = point
        .quantities
        .iter()
        .map(|(n, v)| vec![n.clone(), format!("{v:.6e}")])
        .collect();
    report.table = table(&["quantity", "value"], &rows);
    Ok(report)
}
