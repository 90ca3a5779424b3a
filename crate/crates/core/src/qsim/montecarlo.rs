use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fringe::{FringeData, FringeMeta};
use super::pulse::SectorUnitaries;
use super::sequence::{CavityPrep, SequenceSpec};
use super::{require, QsimError};
use crate::model::SystemModel;
use crate::photon::{
    evolve_master, sample_trajectory, InitialPhotons, JumpTrajectory, PhotonDistribution,
};
use crate::rng::stream_rng;

/// Shots per work unit; fixed so sums do not depend on the thread count.
const CHUNK: u64 = 512;
/// Extra sectors tabulated for gaussian pulses beyond the prep truncation.
const EXTRA_SECTORS: usize = 40;

/// Cumulative integral of N(t) along one photon path.
struct PathIntegral<'a> {
    traj: &'a JumpTrajectory,
    /// integral of N from 0 to each event time
    at_event: Vec<f64>,
}

impl<'a> PathIntegral<'a> {
    fn new(traj: &'a JumpTrajectory) -> Self {
        let mut at_event = Vec::with_capacity(traj.events.len());
        let (mut acc, mut last, mut n) = (0.0, 0.0, traj.initial_n as f64);
        for e in &traj.events {
            acc += n * (e.time - last);
            at_event.push(acc);
            last = e.time;
            n += e.delta as f64;
        }
        Self { traj, at_event }
    }

    /// (N just after t, integral of N over [0, t])
    fn at(&self, t: f64) -> (u32, f64) {
        let k = self.traj.events.partition_point(|e| e.time <= t);
        let n = self.traj.n_at(t);
        let (base, since) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.at_event[k - 1], self.traj.events[k - 1].time)
        };
        (n, base + n as f64 * (t - since))
    }
}

struct ShotModel {
    kappa: f64,
    n_bar: f64,
    chi: f64,
    gamma1: f64,
    gamma_res: f64,
    /// precession of sector 0
    omega0: f64,
    pulses: Vec<SectorUnitaries>,
}

impl ShotModel {
    /// P(e) after the sequence for each delay, along one photon path.
    fn run(&self, traj: &JumpTrajectory, seq: &SequenceSpec, delays: &[f64]) -> Vec<f64> {
        let path = PathIntegral::new(traj);
        delays
            .iter()
            .map(|&tau| {
                let mut rho = Matrix2::new(
                    Complex64::new(1.0, 0.0),
                    Complex64::new(0.0, 0.0),
                    Complex64::new(0.0, 0.0),
                    Complex64::new(0.0, 0.0),
                );
                let (mut t_prev, mut int_prev) = (0.0, 0.0);
                for (j, t) in seq.pulse_times(tau).into_iter().enumerate() {
                    let (n, int_n) = path.at(t);
                    if t > t_prev {
                        let dt = t - t_prev;
                        let phase = self.omega0 * dt - self.chi * (int_n - int_prev);
                        let p_e = rho[(1, 1)].re * (-self.gamma1 * dt).exp();
                        let coh = rho[(1, 0)]
                            * Complex64::from_polar(
                                (-(0.5 * self.gamma1 + self.gamma_res) * dt).exp(),
                                -phase,
                            );
                        rho = Matrix2::new(
                            Complex64::new(1.0 - p_e, 0.0),
                            coh.conj(),
                            coh,
                            Complex64::new(p_e, 0.0),
                        );
                    }
                    let u = self.pulses[j].get(n as usize);
                    rho = u * rho * u.adjoint();
                    t_prev = t;
                    int_prev = int_n;
                }
                rho[(1, 1)].re
            })
            .collect()
    }
}

/// Running mean and sum of squared deviations (Welford, merged with Chan's rule).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Self) {
        if o.count == 0.0 {
            return;
        }
        let n = self.count + o.count;
        let d = o.mean - self.mean;
        self.mean += d * o.count / n;
        self.m2 += o.m2 + d * d * self.count * o.count / n;
        self.count = n;
    }

    fn sample_variance(&self) -> f64 {
        if self.count > 1.0 {
            self.m2 / (self.count - 1.0)
        } else {
            0.0
        }
    }
}

/// One population of shots sharing an initial-photon law.
struct Stratum {
    weight: f64,
    shots: u64,
    first_stream: u64,
    /// initial photon number sampler
    init: Init,
}

#[derive(Clone, Copy)]
enum Init {
    Fixed(u32),
    Thermal { n_bar: f64, exclude: Option<u32> },
}

impl Init {
    fn draw<R: Rng>(&self, rng: &mut R) -> u32 {
        match *self {
            Init::Fixed(n) => n,
            Init::Thermal { n_bar, exclude } => {
                if n_bar == 0.0 {
                    return 0;
                }
                let g = Geometric::new(1.0 / (n_bar + 1.0)).expect("probability in (0, 1]");
                loop {
                    let n = g.sample(rng).min(u32::MAX as u64) as u32;
                    if Some(n) != exclude {
                        return n;
                    }
                }
            }
        }
    }
}

/// Monte-Carlo fringe from sampled photon-number paths.
///
/// Every shot draws an exact birth-death path and evolves the qubit
/// conditioned on it: coherences pick up exp(-i integral of the sector
/// detuning) and decay at gamma1/2 + gamma_res, populations relax at gamma1,
/// and a selective pulse acts through its sector-N unitary at the photon
/// number present when it fires. The average over paths equals the density
/// matrix result of [`super::run_sequence`].
///
/// For a thermal prep and a selective first pulse on sector s, shots are
/// stratified by whether the path starts in s (weight P(s)) or not; half of
/// the shots go to each stratum. Shot i uses RNG stream i of `seed`. The
/// returned stderr is the stratified standard error of the mean.
pub fn mc_fringe(
    system: &SystemModel,
    sequence: &SequenceSpec,
    delays: &[f64],
    n_traj: u64,
    seed: u64,
) -> Result<FringeData, QsimError> {
    require(n_traj >= 1, "n_traj", n_traj as f64, "must be at least 1")?;
    let mode = system.mode(sequence.mode)?;
    let n_bar = system.effective_n_bar(sequence.mode)?;
    let (prep, prep_n_bar) = sequence.prep_distribution(n_bar)?;
    sequence.validate(prep.n_max(), delays)?;

    let chi = mode.chi_n;
    let model = ShotModel {
        kappa: mode.kappa(),
        n_bar,
        chi,
        gamma1: system.qubit.gamma1(),
        gamma_res: system.qubit.gamma_res,
        omega0: sequence.detuning + sequence.reference() as f64 * chi,
        pulses: sequence
            .pulses
            .iter()
            .map(|p| SectorUnitaries::for_pulse(&p.pulse, chi, prep.n_max() + 1 + EXTRA_SECTORS))
            .collect::<Result<_, _>>()?,
    };

    let strata = match (sequence.prep, sequence.pulses[0].pulse.target()) {
        (CavityPrep::Fock { n }, _) => vec![Stratum {
            weight: 1.0,
            shots: n_traj,
            first_stream: 0,
            init: Init::Fixed(n),
        }],
        (CavityPrep::Thermal { .. }, Some(s)) => {
            let p_s = if prep_n_bar == 0.0 {
                if s == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (prep_n_bar / (prep_n_bar + 1.0)).powi(s as i32) / (prep_n_bar + 1.0)
            };
            let rest = 1.0 - p_s;
            if rest <= 0.0 || n_traj < 2 {
                vec![Stratum {
                    weight: 1.0,
                    shots: n_traj,
                    first_stream: 0,
                    init: if rest <= 0.0 {
                        Init::Fixed(s)
                    } else {
                        Init::Thermal {
                            n_bar: prep_n_bar,
                            exclude: None,
                        }
                    },
                }]
            } else {
                let a = n_traj.div_ceil(2);
                vec![
                    Stratum {
                        weight: p_s,
                        shots: a,
                        first_stream: 0,
                        init: Init::Fixed(s),
                    },
                    Stratum {
                        weight: rest,
                        shots: n_traj - a,
                        first_stream: a,
                        init: Init::Thermal {
                            n_bar: prep_n_bar,
                            exclude: Some(s),
                        },
                    },
                ]
            }
        }
        (CavityPrep::Thermal { .. }, None) => vec![Stratum {
            weight: 1.0,
            shots: n_traj,
            first_stream: 0,
            init: Init::Thermal {
                n_bar: prep_n_bar,
                exclude: None,
            },
        }],
    };

    let horizon = delays
        .iter()
        .map(|&d| sequence.pulse_times(d).last().copied().unwrap_or(0.0))
        .fold(0.0, f64::max);
    let nd = delays.len();
    let mut signal = vec![0.0; nd];
    let mut var = vec![0.0; nd];
    for st in &strata {
        let chunks = st.shots.div_ceil(CHUNK);
        let partial: Vec<Result<Vec<Moments>, QsimError>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Moments::default(); nd];
                for i in c * CHUNK..((c + 1) * CHUNK).min(st.shots) {
                    let mut rng = stream_rng(seed, st.first_stream + i);
                    let n0 = st.init.draw(&mut rng);
                    let traj = sample_trajectory(
                        &mut rng,
                        model.n_bar,
                        model.kappa,
                        horizon,
                        InitialPhotons::Fixed(n0),
                    )?;
                    for (m, p) in acc.iter_mut().zip(model.run(&traj, sequence, delays)) {
                        m.push(p);
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![Moments::default(); nd];
        for part in partial {
            for (t, m) in total.iter_mut().zip(part?) {
                t.merge(&m);
            }
        }
        for (d, m) in total.iter().enumerate() {
            signal[d] += st.weight * m.mean;
            var[d] += st.weight * st.weight * m.sample_variance() / m.count;
        }
    }

    FringeData::new(
        delays.to_vec(),
        signal,
        var.into_iter().map(f64::sqrt).collect(),
        FringeMeta {
            sequence: sequence.describe(),
            system: format!(
                "monte carlo, n_traj={n_traj}, nbar={n_bar:e}, kappa={:e}",
                model.kappa
            ),
            seed: Some(seed),
        },
    )
}

/// Probability of an empty cavity versus time, starting from `initial` and
/// relaxing toward the mode's effective occupancy.
pub fn simulate_cavity_ringdown(
    system: &SystemModel,
    mode_index: u32,
    initial: &PhotonDistribution,
    times: &[f64],
) -> Result<Vec<f64>, QsimError> {
    let mode = system.mode(mode_index)?;
    let n_bar = system.effective_n_bar(mode_index)?;
    times
        .iter()
        .map(|&t| Ok(evolve_master(initial, n_bar, mode.kappa(), t)?.get(0)))
        .collect()
}

/// Linear readout: gain P(e) + offset plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutModel {
    pub gain: f64,
    pub offset: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
            noise_sigma: 0.0,
        }
    }
}

pub fn readout_signal<R: Rng + ?Sized>(
    p_excited: f64,
    model: &ReadoutModel,
    rng: &mut R,
) -> Result<f64, QsimError> {
    require(
        (-1e-9..=1.0 + 1e-9).contains(&p_excited),
        "p_excited",
        p_excited,
        "must lie in [0, 1]",
    )?;
    require(
        model.noise_sigma >= 0.0 && model.noise_sigma.is_finite(),
        "noise_sigma",
        model.noise_sigma,
        "must be non-negative",
    )?;
    let clean = model.gain * p_excited.clamp(0.0, 1.0) + model.offset;
    if model.noise_sigma == 0.0 {
        return Ok(clean);
    }
    let noise = Normal::new(0.0, model.noise_sigma).expect("valid sigma");
    Ok(clean + noise.sample(rng))
}
