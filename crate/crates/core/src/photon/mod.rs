//! Photon-number dynamics of a single lossy mode coupled to a thermal bath.
//!
//! The cavity is treated classically: P(N) obeys a birth-death master
//! equation with up-rate kappa nbar (N+1) and down-rate kappa (nbar+1) N.

mod master;
mod trajectory;

pub use master::{evolve_master, rate_matrix, steady_state};
pub use trajectory::{
    sample_trajectory, sample_trajectory_seeded, InitialPhotons, JumpEvent, JumpTrajectory,
};

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest geometric tail mass a truncated distribution may discard.
pub const TAIL_TOLERANCE: f64 = 1e-8;
/// Sum-to-one tolerance of a valid distribution.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Negative entries down to this value are rounding noise and get clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PhotonError {
    #[error("truncation at N_max = {n_max} discards tail mass {tail:e} of the thermal law with nbar = {n_bar} (tolerance {tolerance:e})")]
    Truncation {
        n_bar: f64,
        n_max: usize,
        tail: f64,
        tolerance: f64,
    },
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("master-equation propagation to t = {t:e} s failed: {reason}")]
    Integration { t: f64, reason: String },
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn require(
    cond: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), PhotonError> {
    if cond {
        Ok(())
    } else {
        Err(PhotonError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

/// Probability vector over N = 0..=n_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
    /// Entries that came out slightly negative and were clamped to zero.
    #[serde(default)]
    clamped: usize,
}

impl PhotonDistribution {
    /// Validates entries and normalization.
    pub fn new(probs: Vec<f64>) -> Result<Self, PhotonError> {
        if probs.len() < 2 {
            return Err(PhotonError::InvalidDistribution(
                "need at least N = 0 and N = 1".into(),
            ));
        }
        let mut d = Self { probs, clamped: 0 };
        d.clamp_negatives()?;
        d.check()?;
        Ok(d)
    }

    /// All weight on a single photon number.
    pub fn fock(n: usize, n_max: usize) -> Result<Self, PhotonError> {
        if n > n_max || n_max < 1 {
            return Err(PhotonError::InvalidDistribution(format!(
                "Fock state {n} outside support 0..={n_max}"
            )));
        }
        let mut probs = vec![0.0; n_max + 1];
        probs[n] = 1.0;
        Ok(Self { probs, clamped: 0 })
    }

    pub fn vacuum(n_max: usize) -> Result<Self, PhotonError> {
        Self::fock(0, n_max)
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs, clamped: 0 }
    }

    pub(crate) fn clamp_negatives(&mut self) -> Result<(), PhotonError> {
        for p in &mut self.probs {
            if !p.is_finite() {
                return Err(PhotonError::InvalidDistribution(
                    "non-finite probability".into(),
                ));
            }
            if *p < 0.0 {
                if *p < -CLAMP_TOLERANCE {
                    return Err(PhotonError::InvalidDistribution(format!(
                        "negative probability {p:e}"
                    )));
                }
                *p = 0.0;
                self.clamped += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn check(&self) -> Result<(), PhotonError> {
        if self
            .probs
            .iter()
            .any(|p| !(0.0..=1.0 + NORM_TOLERANCE).contains(p))
        {
            return Err(PhotonError::InvalidDistribution(
                "entry outside [0, 1]".into(),
            ));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOLERANCE {
            return Err(PhotonError::InvalidDistribution(format!(
                "total probability {sum}"
            )));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Same distribution on a larger support, padded with zeros.
    pub fn extended(&self, n_max: usize) -> Self {
        let mut probs = self.probs.clone();
        if n_max + 1 > probs.len() {
            probs.resize(n_max + 1, 0.0);
        }
        Self {
            probs,
            clamped: self.clamped,
        }
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        let n = self.probs.len().max(other.probs.len());
        (0..n).map(|i| (self.get(i) - other.get(i)).abs()).sum()
    }

    /// Writes `N,probability` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "N,probability")?;
        for (n, p) in self.probs.iter().enumerate() {
            writeln!(out, "{n},{p:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, PhotonError> {
        let mut probs = Vec::new();
        let mut seen_header = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let row = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != "N,probability" {
                    return Err(PhotonError::Csv {
                        row,
                        message: format!("expected header `N,probability`, found `{line}`"),
                    });
                }
                seen_header = true;
                continue;
            }
            let mut cols = line.split(',');
            let (Some(n), Some(p), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(PhotonError::Csv {
                    row,
                    message: "expected two columns".into(),
                });
            };
            let n: usize = n.trim().parse().map_err(|_| PhotonError::Csv {
                row,
                message: format!("bad photon number `{n}`"),
            })?;
            if n != probs.len() {
                return Err(PhotonError::Csv {
                    row,
                    message: format!("photon numbers must count up from 0, found {n}"),
                });
            }
            let p: f64 = p.trim().parse().map_err(|_| PhotonError::Csv {
                row,
                message: format!("bad probability `{p}`"),
            })?;
            probs.push(p);
        }
        Self::new(probs)
    }
}

/// Default truncation for a mode with occupancy `n_bar`: the larger of
/// max(20, ceil(nbar + 10 sqrt(nbar + 1))) and the smallest N_max whose
/// discarded thermal tail is below [`TAIL_TOLERANCE`].
pub fn default_n_max(n_bar: f64) -> usize {
    let heuristic = (n_bar + 10.0 * (n_bar + 1.0).sqrt()).ceil().max(20.0) as usize;
    heuristic.max(tail_n_max(n_bar, TAIL_TOLERANCE))
}

/// Smallest N_max with (nbar/(nbar+1))^(N_max+1) <= tolerance.
pub fn tail_n_max(n_bar: f64, tolerance: f64) -> usize {
    if n_bar <= 0.0 {
        return 1;
    }
    let ln_r = (n_bar / (n_bar + 1.0)).ln();
    let mut n = ((tolerance.ln() / ln_r).ceil() as usize)
        .saturating_sub(1)
        .max(1);
    while thermal_tail(n_bar, n) > tolerance {
        n += 1;
    }
    n
}

/// Mass of the untruncated thermal law above `n_max`.
pub fn thermal_tail(n_bar: f64, n_max: usize) -> f64 {
    if n_bar <= 0.0 {
        return 0.0;
    }
    (n_bar / (n_bar + 1.0)).powi(n_max as i32 + 1)
}

/// Geometric law nbar^N / (nbar+1)^(N+1), renormalized on 0..=n_max.
/// Fails when the discarded tail exceeds [`TAIL_TOLERANCE`].
pub fn thermal_distribution(n_bar: f64, n_max: usize) -> Result<PhotonDistribution, PhotonError> {
    thermal_distribution_with_tolerance(n_bar, n_max, TAIL_TOLERANCE)
}

pub fn thermal_distribution_with_tolerance(
    n_bar: f64,
    n_max: usize,
    tolerance: f64,
) -> Result<PhotonDistribution, PhotonError> {
    require(
        n_bar >= 0.0 && n_bar.is_finite(),
        "n_bar",
        n_bar,
        "must be non-negative",
    )?;
    require(n_max >= 1, "n_max", n_max as f64, "must be at least 1")?;
    let tail = thermal_tail(n_bar, n_max);
    if tail > tolerance {
        return Err(PhotonError::Truncation {
            n_bar,
            n_max,
            tail,
            tolerance,
        });
    }
    let ratio = n_bar / (n_bar + 1.0);
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 / (n_bar + 1.0);
    for _ in 0..=n_max {
        probs.push(p);
        p *= ratio;
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(PhotonDistribution::from_raw(probs))
}

/// Mean photon number sum N P(N).
pub fn occupancy_mean(p: &PhotonDistribution) -> f64 {
    p.probs.iter().enumerate().map(|(n, &q)| n as f64 * q).sum()
}
