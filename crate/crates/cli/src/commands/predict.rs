//! Thermal coherence budget versus temperature.

use shotnoise::model::temperature_sweep;

use super::at_mk;
use crate::output::{num, table, write_csv, Report};
use crate::{CliError, Context};

pub fn run(ctx: &Context) -> Result<Report, CliError> {
    let system = ctx.loaded.system()?;
    let block = ctx.loaded.scenario.predict.as_ref().expect("validated");
    let kelvin: Vec<f64> = block.temperatures_mk.iter().map(|t| t * 1e-3).collect();
    let rows = temperature_sweep(system, &kelvin)?;

    let mut report = Report::new("predict");
    let mut columns = vec!["temperature_mk".to_string()];
    for m in &system.modes {
        columns.push(format!("n_bar_{}", m.index_n));
        columns.push(format!("gamma_phi_{}_per_s", m.index_n));
    }
    columns.extend(["gamma_phi_per_s", "t_phi_us", "t2_us"].map(String::from));
    for m in &system.modes {
        report.set(format!("tau_us_mode{}", m.index_n), m.tau() * 1e6);
    }

    let mut cells = Vec::with_capacity(rows.len());
    let mut console = Vec::with_capacity(rows.len());
    for (row, &t_mk) in rows.iter().zip(&block.temperatures_mk) {
        let mut line = vec![num(t_mk)];
        let mut shown = vec![format!("{t_mk}")];
        for (k, m) in system.modes.iter().enumerate() {
            line.push(num(row.n_bar[k]));
            line.push(num(row.mode_rates[k]));
            shown.push(format!("{:.4e}", row.n_bar[k]));
            report.set(at_mk(&format!("n_bar_{}", m.index_n), t_mk), row.n_bar[k]);
            report.set(
                at_mk(&format!("gamma_phi_{}_per_s", m.index_n), t_mk),
                row.mode_rates[k],
            );
        }
        let t_phi = row.t_phi() * 1e6;
        let t2 = row.t2 * 1e6;
        line.extend([num(row.gamma_phi), num(t_phi), num(t2)]);
        shown.extend([
            format!("{:.6e}", row.gamma_phi),
            format!("{t_phi:.5e}"),
            format!("{t2:.4}"),
        ]);
        report.set(at_mk("gamma_phi_per_s", t_mk), row.gamma_phi);
        report.set(at_mk("t_phi_us", t_mk), t_phi);
        report.set(at_mk("t2_us", t_mk), t2);
        cells.push(line);
        console.push(shown);
    }
    let mut head = vec!["T_mK".to_string()];
    head.extend(system.modes.iter().map(|m| format!("nbar_{}", m.index_n)));
    head.extend(["gamma_phi_1/s", "T_phi_us", "T2_us"].map(String::from));
    report.table = table(
        &head.iter().map(String::as_str).collect::<Vec<_>>(),
        &console,
    );
    write_csv(ctx, &mut report, "predict.csv", "predict", &columns, &cells)?;
    Ok(report)
}
