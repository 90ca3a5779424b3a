use nalgebra::DMatrix;
use num_complex::Complex64;

use super::QsimError;
use crate::photon::PhotonDistribution;

pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-9;
/// Most negative eigenvalue tolerated before a state is rejected.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Qubit {
    G = 0,
    E = 1,
}

/// Density matrix of qubit (x) cavity, dimension 2 (n_max + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    matrix: DMatrix<Complex64>,
    n_max: usize,
}

impl DensityState {
    pub fn new(matrix: DMatrix<Complex64>, n_max: usize) -> Result<Self, QsimError> {
        let dim = 2 * (n_max + 1);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(QsimError::InvalidState(format!(
                "expected {dim}x{dim} matrix for n_max = {n_max}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let state = Self { matrix, n_max };
        state.validate()?;
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<Complex64>, n_max: usize) -> Self {
        Self { matrix, n_max }
    }

    /// Qubit in |g> with the cavity diagonal in the given photon distribution.
    pub fn ground(cavity: &PhotonDistribution) -> Self {
        let n_max = cavity.n_max();
        let mut matrix = DMatrix::zeros(2 * (n_max + 1), 2 * (n_max + 1));
        for (n, &p) in cavity.probs().iter().enumerate() {
            matrix[(n, n)] = Complex64::new(p, 0.0);
        }
        Self { matrix, n_max }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    pub fn index(&self, q: Qubit, n: usize) -> usize {
        q as usize * (self.n_max + 1) + n
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.matrix
    }

    pub fn element(&self, q: Qubit, n: usize, q2: Qubit, m: usize) -> Complex64 {
        self.matrix[(self.index(q, n), self.index(q2, m))]
    }

    pub fn p_excited(&self) -> f64 {
        (0..=self.n_max)
            .map(|n| self.element(Qubit::E, n, Qubit::E, n).re)
            .sum()
    }

    /// Reduced cavity distribution P(N), tracing out the qubit.
    pub fn photon_distribution(&self) -> Vec<f64> {
        (0..=self.n_max)
            .map(|n| {
                self.element(Qubit::G, n, Qubit::G, n).re
                    + self.element(Qubit::E, n, Qubit::E, n).re
            })
            .collect()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Values of |N - M| that carry any weight, in increasing order.
    pub fn bands(&self) -> Vec<usize> {
        let l = self.n_max + 1;
        let mut present = vec![false; l];
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if self.matrix[(i, j)] != Complex64::new(0.0, 0.0) {
                    present[(i % l).abs_diff(j % l)] = true;
                }
            }
        }
        present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(k, _)| k)
            .collect()
    }

    /// Checks Hermiticity, unit trace and positivity at the module tolerances.
    pub fn validate(&self) -> Result<(), QsimError> {
        let dim = self.dim();
        if self
            .matrix
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(QsimError::InvalidState("non-finite entry".into()));
        }
        let mut asym: f64 = 0.0;
        for i in 0..dim {
            for j in i..dim {
                asym = asym.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        if asym > HERMITIAN_TOLERANCE {
            return Err(QsimError::InvalidState(format!(
                "not Hermitian (deviation {asym:e})"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(QsimError::InvalidState(format!("trace {tr}")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOLERANCE {
            return Err(QsimError::InvalidState(format!(
                "negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(())
    }

    fn min_eigenvalue(&self) -> f64 {
        if self.bands().iter().all(|&k| k == 0) {
            // block diagonal in N: one 2x2 block per photon number
            return (0..=self.n_max)
                .map(|n| {
                    let a = self.element(Qubit::G, n, Qubit::G, n).re;
                    let d = self.element(Qubit::E, n, Qubit::E, n).re;
                    let b = self.element(Qubit::E, n, Qubit::G, n).norm();
                    0.5 * (a + d) - (0.25 * (a - d).powi(2) + b * b).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
        }
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}
