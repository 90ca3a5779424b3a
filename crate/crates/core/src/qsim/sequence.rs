use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fringe::{FringeData, FringeMeta};
use super::liouvillian::{build_liouvillian, Liouvillian, Propagator};
use super::pulse::{PulseKind, PulseSpec, SectorUnitaries, Selectivity};
use super::state::DensityState;
use super::QsimError;
use crate::model::SystemModel;
use crate::photon::{default_n_max, thermal_distribution, PhotonDistribution};

/// Initial cavity state; the qubit always starts in |g>.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityPrep {
    /// Thermal law; `None` uses the mode's effective occupancy.
    Thermal {
        n_bar: Option<f64>,
    },
    Fock {
        n: u32,
    },
}

impl Default for CavityPrep {
    fn default() -> Self {
        Self::Thermal { n_bar: None }
    }
}

/// Wait before a pulse: `fixed_s + swept_fraction * tau` for sweep value tau.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delay {
    #[serde(default)]
    pub fixed_s: f64,
    #[serde(default)]
    pub swept_fraction: f64,
}

impl Delay {
    pub fn at(&self, tau: f64) -> f64 {
        self.fixed_s + self.swept_fraction * tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseStep {
    pub pulse: PulseSpec,
    #[serde(default)]
    pub delay_before: Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Ramsey,
    Echo,
}

/// Pulse sequence swept over a delay tau, read out as P(e) after the last pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    /// Cavity mode index the qubit talks to.
    pub mode: u32,
    #[serde(default)]
    pub prep: CavityPrep,
    pub pulses: Vec<PulseStep>,
    #[serde(default = "yes")]
    pub readout_at_end: bool,
    /// Precession of sector `reference_n` in the simulation frame, rad/s.
    #[serde(default)]
    pub detuning: f64,
    /// Defaults to the first selective pulse's target, else 0.
    #[serde(default)]
    pub reference_n: Option<u32>,
    /// Defaults to [`default_n_max`] of the larger occupancy involved.
    #[serde(default)]
    pub n_max: Option<usize>,
}

fn yes() -> bool {
    true
}

impl SequenceSpec {
    /// pi/2 - tau - pi/2. With `select_n` set the first pulse is selective;
    /// `final_selective` decides whether the closing pulse is too.
    pub fn ramsey(mode: u32, select_n: Option<u32>, detuning: f64, final_selective: bool) -> Self {
        let first = selectivity(select_n);
        let last = if final_selective {
            first
        } else {
            Selectivity::Unconditional
        };
        Self {
            mode,
            prep: CavityPrep::default(),
            pulses: vec![
                step(PulseKind::PiHalf, first, 0.0),
                step(PulseKind::PiHalf, last, 1.0),
            ],
            readout_at_end: true,
            detuning,
            reference_n: None,
            n_max: None,
        }
    }

    /// pi/2 - tau/2 - pi - tau/2 - pi/2 with the pi pulse unconditional
    /// unless `echo_selective`.
    pub fn echo(
        mode: u32,
        select_n: Option<u32>,
        detuning: f64,
        final_selective: bool,
        echo_selective: bool,
    ) -> Self {
        let first = selectivity(select_n);
        let last = if final_selective {
            first
        } else {
            Selectivity::Unconditional
        };
        let mid = if echo_selective {
            first
        } else {
            Selectivity::Unconditional
        };
        Self {
            mode,
            prep: CavityPrep::default(),
            pulses: vec![
                step(PulseKind::PiHalf, first, 0.0),
                step(PulseKind::Pi, mid, 0.5),
                step(PulseKind::PiHalf, last, 0.5),
            ],
            readout_at_end: true,
            detuning,
            reference_n: None,
            n_max: None,
        }
    }

    /// Standard selective sequence with selective closing pulse.
    pub fn standard(kind: SequenceKind, mode: u32, select_n: u32, detuning: f64) -> Self {
        match kind {
            SequenceKind::Ramsey => Self::ramsey(mode, Some(select_n), detuning, true),
            SequenceKind::Echo => Self::echo(mode, Some(select_n), detuning, true, false),
        }
    }

    pub fn reference(&self) -> u32 {
        self.reference_n
            .or_else(|| self.pulses.iter().find_map(|p| p.pulse.target()))
            .unwrap_or(0)
    }

    /// Detuning from the bare (N = 0) qubit line; the fringe of sector N
    /// oscillates at this minus N chi.
    pub fn programmed_detuning(&self, chi: f64) -> f64 {
        self.detuning + self.reference() as f64 * chi
    }

    pub fn describe(&self) -> String {
        let sel = |s: Selectivity| match s {
            Selectivity::Unconditional => "u".to_string(),
            Selectivity::SelectN(n) => format!("N{n}"),
        };
        let pulses: Vec<String> = self
            .pulses
            .iter()
            .map(|p| format!("{:.4}rad@{}", p.pulse.angle(), sel(p.pulse.selectivity)))
            .collect();
        format!(
            "mode={} pulses=[{}] detuning={:e} reference_n={}",
            self.mode,
            pulses.join(" "),
            self.detuning,
            self.reference()
        )
    }

    /// Start times of each pulse for sweep value `tau`.
    pub fn pulse_times(&self, tau: f64) -> Vec<f64> {
        let mut t = 0.0;
        self.pulses
            .iter()
            .map(|p| {
                t += p.delay_before.at(tau);
                t
            })
            .collect()
    }

    pub(crate) fn validate(&self, n_max: usize, delays: &[f64]) -> Result<(), QsimError> {
        let bad = |m: String| Err(QsimError::InvalidSequence(m));
        if !self.readout_at_end {
            return bad("sequence has no readout".into());
        }
        if self.pulses.is_empty() {
            return bad("sequence has no pulses".into());
        }
        for (i, p) in self.pulses.iter().enumerate() {
            p.pulse.validate(n_max)?;
            let d = p.delay_before;
            if !(d.fixed_s >= 0.0
                && d.swept_fraction >= 0.0
                && d.fixed_s.is_finite()
                && d.swept_fraction.is_finite())
            {
                return bad(format!("pulse {i}: delays must be non-negative"));
            }
        }
        if self.reference() as usize > n_max {
            return bad(format!(
                "reference sector {} beyond truncation {n_max}",
                self.reference()
            ));
        }
        if delays.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return bad("delays must be non-negative and finite".into());
        }
        if delays.windows(2).any(|w| w[1] <= w[0]) {
            return bad("delays must be strictly increasing".into());
        }
        Ok(())
    }

    pub(crate) fn prep_distribution(
        &self,
        mode_n_bar: f64,
    ) -> Result<(PhotonDistribution, f64), QsimError> {
        match self.prep {
            CavityPrep::Thermal { n_bar } => {
                let n_bar = n_bar.unwrap_or(mode_n_bar);
                let n_max = self
                    .n_max
                    .unwrap_or_else(|| default_n_max(n_bar.max(mode_n_bar)));
                Ok((thermal_distribution(n_bar, n_max)?, n_bar))
            }
            CavityPrep::Fock { n } => {
                let n_max = self
                    .n_max
                    .unwrap_or_else(|| default_n_max(mode_n_bar).max(n as usize + 20));
                Ok((PhotonDistribution::fock(n as usize, n_max)?, n as f64))
            }
        }
    }
}

fn selectivity(select_n: Option<u32>) -> Selectivity {
    select_n.map_or(Selectivity::Unconditional, Selectivity::SelectN)
}

fn step(kind: PulseKind, sel: Selectivity, fraction: f64) -> PulseStep {
    PulseStep {
        pulse: PulseSpec::new(kind, 0.0, sel),
        delay_before: Delay {
            fixed_s: 0.0,
            swept_fraction: fraction,
        },
    }
}

/// Durations are cached at attosecond resolution, far below any rate in the model.
fn duration_key(t: f64) -> u64 {
    (t * 1e18).round() as u64
}

struct Runner<'a> {
    liou: Liouvillian,
    bands: Vec<usize>,
    pulses: Vec<SectorUnitaries>,
    cache: HashMap<u64, Propagator>,
    spec: &'a SequenceSpec,
}

impl Runner<'_> {
    fn ensure(&mut self, durations: impl IntoIterator<Item = f64>) -> Result<(), QsimError> {
        let mut missing: Vec<u64> = durations
            .into_iter()
            .map(duration_key)
            .filter(|k| *k > 0 && !self.cache.contains_key(k))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let built: Vec<(u64, Result<Propagator, QsimError>)> = missing
            .par_iter()
            .map(|&k| (k, self.liou.propagator(k as f64 * 1e-18, &self.bands)))
            .collect();
        for (k, p) in built {
            self.cache.insert(k, p?);
        }
        Ok(())
    }

    fn evolve(&self, state: &DensityState, t: f64, delay: f64) -> Result<DensityState, QsimError> {
        let key = duration_key(t);
        if key == 0 {
            return Ok(state.clone());
        }
        let out = self.cache[&key].apply(state)?;
        out.validate().map_err(|e| QsimError::Propagation {
            delay,
            reason: e.to_string(),
        })?;
        Ok(out)
    }

    /// Gaps and pulses from index `from` to the end, all fixed in time.
    fn finish(&self, mut state: DensityState, from: usize, tau: f64) -> Result<f64, QsimError> {
        for i in from..self.spec.pulses.len() {
            if i > from {
                state = self.evolve(&state, self.spec.pulses[i].delay_before.at(tau), tau)?;
            }
            state = self.pulses[i].apply(&state);
        }
        Ok(state.p_excited())
    }
}

/// Propagates the density matrix through the sequence for every delay and
/// records P(e) after the final pulse. Delays must be strictly increasing.
///
/// Each pulse acts instantaneously (gaussian pulses through their effective
/// per-sector unitaries at the pulse centre); dissipation runs in the gaps.
pub fn run_sequence(
    system: &SystemModel,
    sequence: &SequenceSpec,
    delays: &[f64],
) -> Result<FringeData, QsimError> {
    let mode = system.mode(sequence.mode)?;
    let n_bar = system.effective_n_bar(sequence.mode)?;
    let (prep, _) = sequence.prep_distribution(n_bar)?;
    let n_max = prep.n_max();
    sequence.validate(n_max, delays)?;

    let liou = build_liouvillian(system, sequence.mode, n_max)?
        .with_frame(sequence.detuning, sequence.reference() as usize);
    let state0 = DensityState::ground(&prep);
    let pulses = sequence
        .pulses
        .iter()
        .map(|p| SectorUnitaries::for_pulse(&p.pulse, mode.chi_n, n_max + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut run = Runner {
        liou,
        // pulses act within each photon-number sector, so the occupied bands never change
        bands: state0.bands(),
        pulses,
        cache: HashMap::new(),
        spec: sequence,
    };

    let swept: Vec<usize> = (0..sequence.pulses.len())
        .filter(|&i| sequence.pulses[i].delay_before.swept_fraction > 0.0)
        .collect();

    let signal = if let [gap] = swept[..] {
        // only one gap grows with tau: step the state through it incrementally
        let fraction = sequence.pulses[gap].delay_before.swept_fraction;
        let fixed: Vec<f64> = (0..sequence.pulses.len())
            .filter(|&i| i != gap)
            .map(|i| sequence.pulses[i].delay_before.fixed_s)
            .chain([sequence.pulses[gap].delay_before.fixed_s])
            .collect();
        let steps: Vec<f64> = delays
            .iter()
            .scan(0.0, |prev, &d| {
                let s = fraction * (d - *prev);
                *prev = d;
                Some(s)
            })
            .collect();
        run.ensure(fixed.into_iter().chain(steps.iter().copied()))?;

        let mut state = state0;
        for i in 0..gap {
            state = run.evolve(&state, sequence.pulses[i].delay_before.fixed_s, 0.0)?;
            state = run.pulses[i].apply(&state);
        }
        state = run.evolve(&state, sequence.pulses[gap].delay_before.fixed_s, 0.0)?;
        let mut out = Vec::with_capacity(delays.len());
        for (&d, &s) in delays.iter().zip(&steps) {
            state = run.evolve(&state, s, d)?;
            out.push(run.finish(state.clone(), gap, d)?);
        }
        out
    } else {
        run.ensure(
            delays
                .iter()
                .flat_map(|&d| sequence.pulses.iter().map(move |p| p.delay_before.at(d))),
        )?;
        let run = &run;
        delays
            .par_iter()
            .map(|&d| {
                let first = run.evolve(&state0, sequence.pulses[0].delay_before.at(d), d)?;
                run.finish(first, 0, d)
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    let stderr = vec![0.0; delays.len()];
    FringeData::new(
        delays.to_vec(),
        signal,
        stderr,
        FringeMeta {
            sequence: sequence.describe(),
            system: format!(
                "density matrix, n_max={n_max}, nbar={n_bar:e}, kappa={:e}",
                mode.kappa()
            ),
            seed: None,
        },
    )
}
