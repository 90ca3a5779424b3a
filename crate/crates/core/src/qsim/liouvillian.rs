use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::state::{DensityState, Qubit};
use super::{require, QsimError};
use crate::model::SystemModel;
use crate::photon::{thermal_tail, PhotonError, TAIL_TOLERANCE};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Generator of the dispersive qubit-cavity dynamics with thermal cavity
/// loss and gain, qubit relaxation and residual pure dephasing:
///
/// H = sum_N (detuning + (reference_n - N) chi) |e,N><e,N|,
/// collapse operators sqrt(kappa (nbar+1)) a, sqrt(kappa nbar) a^dag,
/// sqrt(gamma1) sigma_-, sqrt(gamma_res / 2) sigma_z.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    n_max: usize,
    kappa: f64,
    n_bar: f64,
    chi: f64,
    gamma1: f64,
    gamma_res: f64,
    detuning: f64,
    reference_n: usize,
}

/// Liouvillian for cavity mode `mode_index` of `system`, truncated at `n_max`.
/// The occupancy is the mode's effective nbar (residual plus injected); the
/// truncation must keep the discarded thermal tail below [`TAIL_TOLERANCE`].
pub fn build_liouvillian(
    system: &SystemModel,
    mode_index: u32,
    n_max: usize,
) -> Result<Liouvillian, QsimError> {
    let mode = system.mode(mode_index)?;
    let n_bar = system.effective_n_bar(mode_index)?;
    let tail = thermal_tail(n_bar, n_max);
    if tail > TAIL_TOLERANCE {
        return Err(PhotonError::Truncation {
            n_bar,
            n_max,
            tail,
            tolerance: TAIL_TOLERANCE,
        }
        .into());
    }
    Liouvillian::new(
        n_max,
        mode.kappa(),
        n_bar,
        mode.chi_n,
        system.qubit.gamma1(),
        system.qubit.gamma_res,
    )
}

impl Liouvillian {
    pub fn new(
        n_max: usize,
        kappa: f64,
        n_bar: f64,
        chi: f64,
        gamma1: f64,
        gamma_res: f64,
    ) -> Result<Self, QsimError> {
        require(n_max >= 1, "n_max", n_max as f64, "must be at least 1")?;
        require(
            kappa >= 0.0 && kappa.is_finite(),
            "kappa",
            kappa,
            "must be non-negative",
        )?;
        require(
            n_bar >= 0.0 && n_bar.is_finite(),
            "n_bar",
            n_bar,
            "must be non-negative",
        )?;
        require(chi.is_finite(), "chi", chi, "must be finite")?;
        require(
            gamma1 >= 0.0 && gamma1.is_finite(),
            "gamma1",
            gamma1,
            "must be non-negative",
        )?;
        require(
            gamma_res >= 0.0 && gamma_res.is_finite(),
            "gamma_res",
            gamma_res,
            "must be non-negative",
        )?;
        Ok(Self {
            n_max,
            kappa,
            n_bar,
            chi,
            gamma1,
            gamma_res,
            detuning: 0.0,
            reference_n: 0,
        })
    }

    /// Sets the frame: sector `reference_n` precesses at `detuning` (rad/s).
    pub fn with_frame(mut self, detuning: f64, reference_n: usize) -> Self {
        self.detuning = detuning;
        self.reference_n = reference_n;
        self
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn n_bar(&self) -> f64 {
        self.n_bar
    }
    pub fn chi(&self) -> f64 {
        self.chi
    }
    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }
    pub fn gamma_res(&self) -> f64 {
        self.gamma_res
    }
    pub fn detuning(&self) -> f64 {
        self.detuning
    }
    pub fn reference_n(&self) -> usize {
        self.reference_n
    }

    /// Qubit precession frequency (rad/s) in photon-number sector `n`.
    pub fn sector_detuning(&self, n: usize) -> f64 {
        self.detuning + (self.reference_n as f64 - n as f64) * self.chi
    }

    /// First N and length of band k = N - M.
    fn band_range(&self, k: isize) -> (usize, usize) {
        let lo = k.max(0) as usize;
        (lo, self.n_max + 1 - k.unsigned_abs())
    }

    /// Cavity loss and gain acting on the band-k elements x(N) = rho_{N, N-k}
    /// of any qubit block. Real, so shared by all four blocks.
    fn transport(&self, k: isize) -> DMatrix<f64> {
        let (lo, m) = self.band_range(k);
        let loss = self.kappa * (self.n_bar + 1.0);
        let gain = self.kappa * self.n_bar;
        // a a^dag on the truncated space; zero at the top level
        let c = |n: usize| if n < self.n_max { n as f64 + 1.0 } else { 0.0 };
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            let n = lo + i;
            let mm = (n as isize - k) as usize;
            g[(i, i)] = -0.5 * loss * (n + mm) as f64 - 0.5 * gain * (c(n) + c(mm));
            if i + 1 < m {
                g[(i, i + 1)] = loss * (((n + 1) * (mm + 1)) as f64).sqrt();
            }
            if i >= 1 {
                g[(i, i - 1)] = gain * ((n * mm) as f64).sqrt();
            }
        }
        g
    }

    /// Generator of the band-k coherences rho_{eN, gM}.
    fn coherence_generator(&self, k: isize) -> DMatrix<Complex64> {
        let (lo, m) = self.band_range(k);
        let mut g = self.transport(k).map(|x| Complex64::new(x, 0.0));
        let decay = 0.5 * self.gamma1 + self.gamma_res;
        for i in 0..m {
            g[(i, i)] += -I * self.sector_detuning(lo + i) - decay;
        }
        g
    }

    /// Propagator over time `t` for the bands |N - M| listed in `bands`.
    pub fn propagator(&self, t: f64, bands: &[usize]) -> Result<Propagator, QsimError> {
        require(
            t >= 0.0 && t.is_finite(),
            "t",
            t,
            "must be non-negative and finite",
        )?;
        let mut blocks = Vec::with_capacity(bands.len());
        for &k in bands {
            if k > self.n_max {
                return Err(QsimError::InvalidState(format!(
                    "band {k} exceeds n_max = {}",
                    self.n_max
                )));
            }
            let ki = k as isize;
            let transport = (self.transport(ki) * t).exp();
            // e,e elements pick up exp(i k chi t) and decay at gamma1;
            // what leaves them lands in g,g of the same (N, M)
            let rate = I * (k as f64 * self.chi) - self.gamma1;
            let ee = (rate * t).exp();
            let gg_feed = if (rate * t).norm() < 1e-12 {
                Complex64::new(self.gamma1 * t, 0.0)
            } else {
                self.gamma1 * (ee - 1.0) / rate
            };
            let coh_pos = (self.coherence_generator(ki) * Complex64::new(t, 0.0)).exp();
            let coh_neg =
                (k > 0).then(|| (self.coherence_generator(-ki) * Complex64::new(t, 0.0)).exp());
            blocks.push(BandBlock {
                k,
                transport,
                ee,
                gg_feed,
                coh_pos,
                coh_neg,
            });
        }
        Ok(Propagator {
            t,
            n_max: self.n_max,
            blocks,
        })
    }

    /// Evolves `state` for time `t`, touching only the bands it occupies.
    pub fn evolve(&self, state: &DensityState, t: f64) -> Result<DensityState, QsimError> {
        self.propagator(t, &state.bands())?.apply(state)
    }
}

#[derive(Debug, Clone)]
struct BandBlock {
    k: usize,
    transport: DMatrix<f64>,
    ee: Complex64,
    gg_feed: Complex64,
    coh_pos: DMatrix<Complex64>,
    coh_neg: Option<DMatrix<Complex64>>,
}

/// exp(L t) restricted to a set of bands.
#[derive(Debug, Clone)]
pub struct Propagator {
    t: f64,
    n_max: usize,
    blocks: Vec<BandBlock>,
}

impl Propagator {
    pub fn duration(&self) -> f64 {
        self.t
    }

    pub fn apply(&self, state: &DensityState) -> Result<DensityState, QsimError> {
        if state.n_max() != self.n_max {
            return Err(QsimError::InvalidState(format!(
                "state truncated at {} but propagator at {}",
                state.n_max(),
                self.n_max
            )));
        }
        if let Some(k) = state
            .bands()
            .into_iter()
            .find(|k| !self.blocks.iter().any(|b| b.k == *k))
        {
            return Err(QsimError::InvalidState(format!(
                "propagator does not cover band {k}"
            )));
        }
        let dim = state.dim();
        let mut out = DMatrix::zeros(dim, dim);
        let rho = state.matrix();
        let idx = |q: Qubit, n: usize| state.index(q, n);

        for b in &self.blocks {
            let ki = b.k as isize;
            let lo = b.k;
            let m = self.n_max + 1 - b.k;
            let pos = |i: usize| (lo + i, lo + i - b.k);

            let gather = |q: Qubit| {
                DVector::from_fn(m, |i, _| {
                    let (n, mm) = pos(i);
                    rho[(idx(q, n), idx(q, mm))]
                })
            };
            let ee0 = gather(Qubit::E);
            let gg0 = gather(Qubit::G);
            let transport = b.transport.map(|x| Complex64::new(x, 0.0));
            let ee = &transport * &ee0 * b.ee;
            let gg = &transport * (gg0 + ee0 * b.gg_feed);
            for i in 0..m {
                let (n, mm) = pos(i);
                for (q, v) in [(Qubit::E, ee[i]), (Qubit::G, gg[i])] {
                    out[(idx(q, n), idx(q, mm))] = v;
                    out[(idx(q, mm), idx(q, n))] = v.conj();
                }
            }

            for (kk, prop) in
                std::iter::once((ki, &b.coh_pos)).chain(b.coh_neg.as_ref().map(|p| (-ki, p)))
            {
                let lo = kk.max(0) as usize;
                let at = |i: usize| (lo + i, (lo as isize + i as isize - kk) as usize);
                let x = DVector::from_fn(m, |i, _| {
                    let (n, mm) = at(i);
                    rho[(idx(Qubit::E, n), idx(Qubit::G, mm))]
                });
                let y = prop * x;
                for i in 0..m {
                    let (n, mm) = at(i);
                    out[(idx(Qubit::E, n), idx(Qubit::G, mm))] = y[i];
                    out[(idx(Qubit::G, mm), idx(Qubit::E, n))] = y[i].conj();
                }
            }
        }
        Ok(DensityState::from_matrix_unchecked(out, self.n_max))
    }
}
