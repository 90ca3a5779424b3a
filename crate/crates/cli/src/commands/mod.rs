pub mod calibrate;
pub mod fit;
pub mod predict;
pub mod selftest;
pub mod simulate;
pub mod sweep;

/// Quantity key for a value at a temperature, e.g. `t_phi_us@80mk`.
pub fn at_mk(name: &str, temperature_mk: f64) -> String {
    format!("{name}@{temperature_mk}mk")
}

pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    (0..n)
        .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
        .collect()
}
