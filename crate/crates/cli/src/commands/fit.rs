//! Batch fitting of fringe CSV files.

use std::fs::File;
use std::io::BufReader;

use rayon::prelude::*;
use shotnoise::analysis::{
    fit_decaying_sine, fit_exponential, fit_ramsey_reequilibration, FitResult, NBarSpec,
    ReequilibrationModel,
};
use shotnoise::model::angular;
use shotnoise::qsim::FringeData;

use super::simulate::{fit_json, fit_quantities};
use crate::output::{csv_safe, num, table, write, write_csv, Report};
use crate::scenario::{FitBlock, FitModel};
use crate::{CliError, Context};

fn fit_file(ctx: &Context, block: &FitBlock, input: &str) -> Result<Option<FitResult>, String> {
    let path = ctx.loaded.resolve(input);
    let file = File::open(&path).map_err(|e| format!("{input}: {e}"))?;
    let data = FringeData::read_csv(BufReader::new(file)).map_err(|e| format!("{input}: {e}"))?;
    let weights: Option<Vec<f64>> = data
        .stderr
        .iter()
        .all(|e| *e > 0.0)
        .then(|| data.stderr.iter().map(|e| 1.0 / e).collect());
    let w = weights.as_deref();
    let (t, y) = (&data.delays, &data.signal);
    let fit = match block.model {
        FitModel::None => return Ok(None),
        FitModel::DecayingSine => fit_decaying_sine(t, y, w),
        FitModel::Exponential => fit_exponential(t, y),
        FitModel::Reequilibration => {
            let r = block.reequilibration.as_ref().expect("validated");
            let model = ReequilibrationModel {
                kappa: angular(r.kappa_khz * 1e3),
                n_bar: r.n_bar.map_or(
                    NBarSpec::Free {
                        guess: r.n_bar_guess,
                    },
                    NBarSpec::Fixed,
                ),
                select_n: r.select_n,
                t1: r.t1_us.map_or(f64::INFINITY, |v| v * 1e-6),
            };
            fit_ramsey_reequilibration(t, y, &model, w)
        }
    };
    fit.map(Some).map_err(|e| format!("{input}: {e}"))
}

pub fn run(ctx: &Context) -> Result<Report, CliError> {
    let block = ctx.loaded.scenario.fit.as_ref().expect("validated");
    let results: Vec<Result<Option<FitResult>, String>> = block
        .inputs
        .par_iter()
        .map(|input| fit_file(ctx, block, input))
        .collect();

    let mut report = Report::new("fit");
    // union of parameter names in first-seen order
    let mut names: Vec<String> = Vec::new();
    for f in results
        .iter()
        .filter_map(|r| r.as_ref().ok().and_then(Option::as_ref))
    {
        for p in f.params.iter().chain(&f.derived) {
            if !names.contains(&p.name) {
                names.push(p.name.clone());
            }
        }
    }
    let mut columns: Vec<String> = ["file", "status", "model", "converged", "residual_norm"]
        .map(String::from)
        .to_vec();
    for n in &names {
        columns.push(n.clone());
        columns.push(format!("{n}_stderr"));
    }
    columns.push("flags".into());

    let mut rows = Vec::new();
    let mut console = Vec::new();
    let mut fits = Vec::new();
    let (mut fitted, mut converged) = (0usize, 0usize);
    for (input, res) in block.inputs.iter().zip(&results) {
        let mut row = vec![csv_safe(input)];
        match res {
            Ok(Some(f)) => {
                fitted += 1;
                converged += f.converged as usize;
                row.extend([
                    "ok".into(),
                    f.model.clone(),
                    f.converged.to_string(),
                    num(f.residual_norm),
                ]);
                for n in &names {
                    row.push(f.get(n).map_or(String::new(), num));
                    row.push(f.stderr(n).map_or(String::new(), num));
                }
                row.push(f.flags.join(";"));
                let t2 = f
                    .get("t2")
                    .or(f.get("tau"))
                    .map_or("-".to_string(), |v| format!("{:.4}", v * 1e6));
                console.push(vec![
                    input.clone(),
                    "ok".into(),
                    f.converged.to_string(),
                    t2,
                ]);
                fits.push((input.as_str(), f));
            }
            Ok(None) => {
                row.push("skipped".into());
                row.extend(std::iter::repeat_n(String::new(), columns.len() - 2));
                console.push(vec![
                    input.clone(),
                    "skipped".into(),
                    "-".into(),
                    "-".into(),
                ]);
            }
            Err(e) => {
                report.errors.push(e.clone());
                row.push(csv_safe(&format!("error: {e}")));
                row.extend(std::iter::repeat_n(String::new(), columns.len() - 2));
                console.push(vec![input.clone(), "error".into(), "-".into(), "-".into()]);
            }
        }
        rows.push(row);
    }
    write_csv(
        ctx,
        &mut report,
        "fit_summary.csv",
        "fit_summary",
        &columns,
        &rows,
    )?;
    write(ctx, &mut report, "fits.json", &fit_json(ctx, &fits))?;

    report.set("files", block.inputs.len() as f64);
    report.set("fitted", fitted as f64);
    report.set("converged", converged as f64);
    report.set("failed", report.errors.len() as f64);
    if let [(_, f)] = fits.as_slice() {
        let mut q = Vec::new();
        fit_quantities(&mut q, "", f);
        for (n, v) in q {
            report.set(n, v);
        }
    }
    report.table = table(&["file", "status", "converged", "T2_or_tau_us"], &console);
    Ok(report)
}
