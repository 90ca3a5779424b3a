//! Photon-number calibration from a noise-power sweep of peak amplitudes.

use rand_distr::{Distribution, StandardNormal};
use shotnoise::analysis::{estimate_populations, SweepPoint};
use shotnoise::rng::stream_rng;

use super::linspace;
use crate::output::{num, table, write_csv, Report};
use crate::scenario::SyntheticSweep;
use crate::{CliError, Context};

fn thermal(n: usize, n_bar: f64) -> f64 {
    n_bar.powi(n as i32) / (n_bar + 1.0).powi(n as i32 + 1)
}

/// Thermal peak amplitudes with multiplicative Gaussian noise; point `j`
/// draws from RNG stream `j` of `seed`.
pub fn synthetic_sweep(syn: &SyntheticSweep, relative_noise: f64, seed: u64) -> Vec<SweepPoint> {
    linspace(0.0, syn.power_max, syn.points)
        .into_iter()
        .enumerate()
        .map(|(j, power)| {
            let mut rng = stream_rng(seed, j as u64);
            let n_bar = syn.scale_power * power + syn.n_floor;
            let amplitudes = (0..syn.levels)
                .map(|n| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    (syn.scale_voltage * thermal(n, n_bar) * (1.0 + relative_noise * eps)).max(0.0)
                })
                .collect();
            SweepPoint { power, amplitudes }
        })
        .collect()
}

fn read_sweep(ctx: &Context, input: &str) -> Result<Vec<SweepPoint>, CliError> {
    let path = ctx.loaded.resolve(input);
    let bad = |row: u64, message: String| CliError::Field {
        path: format!("{input}, row {row}"),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| bad(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.get(0) != Some("power") || headers.len() < 3 {
        return Err(bad(1, "expected header `power,a0,a1,..`".into()));
    }
    let mut sweep = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let row = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| bad(row, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        sweep.push(SweepPoint {
            power: values[0],
            amplitudes: values[1..].to_vec(),
        });
    }
    Ok(sweep)
}

pub fn run(ctx: &Context) -> Result<Report, CliError> {
    let block = ctx.loaded.scenario.calibrate.as_ref().expect("validated");
    let mut report = Report::new("calibrate");
    let sweep = match (&block.synthetic, &block.input) {
        (Some(syn), _) => synthetic_sweep(syn, block.relative_noise, ctx.seed.expect("validated")),
        (None, Some(input)) => read_sweep(ctx, input)?,
        (None, None) => unreachable!("validated"),
    };
    let levels = sweep.iter().map(|p| p.amplitudes.len()).max().unwrap_or(0);
    if block.synthetic.is_some() {
        let mut columns = vec!["power".to_string()];
        columns.extend((0..levels).map(|n| format!("a{n}")));
        let rows: Vec<Vec<String>> = sweep
            .iter()
            .map(|p| {
                std::iter::once(num(p.power))
                    .chain(p.amplitudes.iter().map(|a| num(*a)))
                    .collect()
            })
            .collect();
        write_csv(
            ctx,
            &mut report,
            "calibration_input.csv",
            "calibration_input",
            &columns,
            &rows,
        )?;
    }

    let est = estimate_populations(&sweep, block.relative_noise)?;
    report.set("scale_voltage", est.scale_voltage);
    report.set("scale_power", est.scale_power);
    report.set("n_floor", est.n_floor);
    report.set("chi2_reduced", est.chi2_reduced);
    report.set("thermal", if est.thermal { 1.0 } else { 0.0 });

    let mut columns = vec!["power".to_string(), "n_bar".to_string()];
    columns.extend((0..levels).map(|n| format!("p{n}")));
    columns.extend((0..levels).map(|n| format!("p{n}_thermal")));
    let mut rows = Vec::new();
    let mut console = Vec::new();
    let (mut sq, mut count) = (0.0, 0usize);
    let (mut p_min, mut sum_max) = (f64::INFINITY, 0.0f64);
    for (pt, (probs, &nb)) in sweep.iter().zip(est.probabilities.iter().zip(&est.n_bar)) {
        let mut row = vec![num(pt.power), num(nb)];
        row.extend(probs.iter().map(|p| num(*p)));
        row.extend((0..levels).map(|n| num(thermal(n, nb))));
        rows.push(row);
        console.push(vec![
            format!("{:.4}", pt.power),
            format!("{nb:.4}"),
            format!("{:.4}", probs[0]),
            format!("{:.4}", thermal(0, nb)),
        ]);
        for (n, p) in probs.iter().enumerate().take(3) {
            let th = thermal(n, nb);
            sq += ((p - th) / th).powi(2);
            count += 1;
        }
        p_min = probs.iter().copied().fold(p_min, f64::min);
        sum_max = sum_max.max(probs.iter().sum());
    }
    report.set("pn_rms_rel_dev", (sq / count as f64).sqrt());
    report.set("p_min", p_min);
    report.set("p_sum_max", sum_max);
    if let Some(syn) = &block.synthetic {
        report.set(
            "scale_voltage_rel_err",
            (est.scale_voltage / syn.scale_voltage - 1.0).abs(),
        );
        report.set(
            "scale_power_rel_err",
            (est.scale_power / syn.scale_power - 1.0).abs(),
        );
    }
    if !est.thermal {
        report.notes.push(format!(
            "sweep is not thermal (reduced chi2 {:.3})",
            est.chi2_reduced
        ));
    }
    write_csv(
        ctx,
        &mut report,
        "calibration.csv",
        "calibration",
        &columns,
        &rows,
    )?;
    report.table = table(&["power", "n_bar", "P0", "P0_thermal"], &console);
    Ok(report)
}
