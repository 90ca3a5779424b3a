use nalgebra::{DMatrix, DVector};

use super::{require, PhotonDistribution, PhotonError, NORM_TOLERANCE};

/// Each uniformization slice covers at most this many expected jumps of the
/// uniformized chain; keeps exp(-slice) far from underflow.
const SLICE_JUMPS: f64 = 20.0;
/// Poisson weights below this are dropped once past the mean.
const WEIGHT_CUTOFF: f64 = 1e-18;

/// Birth-death rates on the truncated support. Index N holds the up-rate
/// out of N (zero at N_max, reflecting) and the down-rate out of N.
struct Rates {
    up: Vec<f64>,
    down: Vec<f64>,
}

impl Rates {
    fn new(n_bar: f64, kappa: f64, n_max: usize) -> Self {
        let up = (0..=n_max)
            .map(|n| {
                if n < n_max {
                    kappa * n_bar * (n as f64 + 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let down = (0..=n_max)
            .map(|n| kappa * (n_bar + 1.0) * n as f64)
            .collect();
        Self { up, down }
    }

    fn out(&self, n: usize) -> f64 {
        self.up[n] + self.down[n]
    }

    fn max_out(&self) -> f64 {
        (0..self.up.len()).map(|n| self.out(n)).fold(0.0, f64::max)
    }
}

/// Dense generator G with dP/dt = G P on 0..=n_max.
pub fn rate_matrix(n_bar: f64, kappa: f64, n_max: usize) -> DMatrix<f64> {
    let rates = Rates::new(n_bar, kappa, n_max);
    let dim = n_max + 1;
    let mut g = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        g[(n, n)] = -rates.out(n);
        if n + 1 < dim {
            // N+1 -> N by emission, N -> N+1 by absorption
            g[(n, n + 1)] = rates.down[n + 1];
            g[(n + 1, n)] = rates.up[n];
        }
    }
    g
}

/// Propagates P(N) for time `t` under the thermal birth-death master
/// equation.
///
/// Uses uniformization: with Lambda >= every exit rate, the uniformized
/// transition matrix I + G/Lambda is stochastic and exp(G t) is its
/// Poisson(Lambda t) mixture. Every term is non-negative, so probability is
/// conserved and positivity holds regardless of stiffness.
pub fn evolve_master(
    p0: &PhotonDistribution,
    n_bar: f64,
    kappa: f64,
    t: f64,
) -> Result<PhotonDistribution, PhotonError> {
    require(
        n_bar >= 0.0 && n_bar.is_finite(),
        "n_bar",
        n_bar,
        "must be non-negative",
    )?;
    require(
        kappa >= 0.0 && kappa.is_finite(),
        "kappa",
        kappa,
        "must be non-negative",
    )?;
    require(
        t >= 0.0 && t.is_finite(),
        "t",
        t,
        "must be non-negative and finite",
    )?;
    p0.check()?;

    let n_max = p0.n_max();
    let rates = Rates::new(n_bar, kappa, n_max);
    let lambda = rates.max_out();
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.clone());
    }

    let total = lambda * t;
    let slices = (total / SLICE_JUMPS).ceil().max(1.0);
    if slices > 1e8 {
        return Err(PhotonError::Integration {
            t,
            reason: format!("{total:e} uniformized jumps exceeds the work limit"),
        });
    }
    let slices = slices as u64;
    let mean = total / slices as f64;

    let dim = n_max + 1;
    // transition probabilities of the uniformized chain
    let stay: Vec<f64> = (0..dim).map(|n| 1.0 - rates.out(n) / lambda).collect();
    let up: Vec<f64> = rates.up.iter().map(|r| r / lambda).collect();
    let down: Vec<f64> = rates.down.iter().map(|r| r / lambda).collect();

    let mut p = p0.probs().to_vec();
    let mut term = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for _ in 0..slices {
        term.copy_from_slice(&p);
        let mut weight = (-mean).exp();
        for (a, x) in acc.iter_mut().zip(&term) {
            *a = weight * x;
        }
        let mut k = 0u32;
        loop {
            k += 1;
            for n in 0..dim {
                let mut v = stay[n] * term[n];
                if n + 1 < dim {
                    v += down[n + 1] * term[n + 1];
                }
                if n > 0 {
                    v += up[n - 1] * term[n - 1];
                }
                next[n] = v;
            }
            std::mem::swap(&mut term, &mut next);
            weight *= mean / k as f64;
            for (a, x) in acc.iter_mut().zip(&term) {
                *a += weight * x;
            }
            if k as f64 > mean && weight < WEIGHT_CUTOFF {
                break;
            }
        }
        p.copy_from_slice(&acc);
    }

    if p.iter().any(|x| !x.is_finite()) {
        return Err(PhotonError::Integration {
            t,
            reason: "non-finite probability".into(),
        });
    }
    let mut out = PhotonDistribution::from_raw(p);
    out.clamp_negatives()
        .map_err(|e| PhotonError::Integration {
            t,
            reason: e.to_string(),
        })?;
    let sum: f64 = out.probs().iter().sum();
    if (sum - 1.0).abs() > NORM_TOLERANCE {
        return Err(PhotonError::Integration {
            t,
            reason: format!("probability drifted to {sum}"),
        });
    }
    Ok(out)
}

/// Stationary distribution of the truncated rate matrix, found as its null
/// vector (one balance equation swapped for normalization, then solved by LU).
pub fn steady_state(
    n_bar: f64,
    kappa: f64,
    n_max: usize,
) -> Result<PhotonDistribution, PhotonError> {
    require(
        n_bar >= 0.0 && n_bar.is_finite(),
        "n_bar",
        n_bar,
        "must be non-negative",
    )?;
    require(
        kappa > 0.0 && kappa.is_finite(),
        "kappa",
        kappa,
        "must be positive",
    )?;
    require(n_max >= 1, "n_max", n_max as f64, "must be at least 1")?;
    // kappa only scales the generator
    let mut g = rate_matrix(n_bar, 1.0, n_max);
    let dim = n_max + 1;
    for j in 0..dim {
        g[(dim - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(dim);
    rhs[dim - 1] = 1.0;
    let p = g.lu().solve(&rhs).ok_or_else(|| PhotonError::Integration {
        t: f64::INFINITY,
        reason: "singular rate matrix".into(),
    })?;
    let mut out = PhotonDistribution::from_raw(p.iter().copied().collect());
    out.clamp_negatives()?;
    out.check()?;
    Ok(out)
}
