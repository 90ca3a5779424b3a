//! Qubit coupled dispersively to one truncated cavity mode.
//!
//! The state lives on |q> (x) |N> with q in {g, e} and N in 0..=n_max, index
//! `q * (n_max + 1) + N`. In the rotating frame the Hamiltonian is diagonal:
//! sector N sees the qubit detuned by `detuning + (reference_n - N) chi`.
//! Because every operator involved either preserves N - M or shifts N and M
//! together, the density matrix splits into bands k = N - M that evolve
//! independently; [`Liouvillian`] propagates each band with a small dense
//! matrix exponential.

mod fringe;
mod liouvillian;
mod montecarlo;
mod pulse;
mod sequence;
mod state;

pub use fringe::{FringeData, FringeMeta};
pub use liouvillian::{build_liouvillian, Liouvillian, Propagator};
pub use montecarlo::{mc_fringe, readout_signal, simulate_cavity_ringdown, ReadoutModel};
pub use pulse::{selective_pulse, Envelope, PulseKind, PulseSpec, SectorUnitaries, Selectivity};
pub use sequence::{run_sequence, CavityPrep, Delay, PulseStep, SequenceKind, SequenceSpec};
pub use state::{DensityState, Qubit, HERMITIAN_TOLERANCE, PSD_TOLERANCE, TRACE_TOLERANCE};

use std::io;

use thiserror::Error;

use crate::model::ModelError;
use crate::photon::PhotonError;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Photon(#[from] PhotonError),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("propagation failed at delay {delay:e} s: {reason}")]
    Propagation { delay: f64, reason: String },
    #[error("malformed fringe CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn require(
    cond: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<(), QsimError> {
    if cond {
        Ok(())
    } else {
        Err(QsimError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

#[cfg(test)]
mod tests;
