//! Pure and mixed register states with a basis tag.

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ONE, ZERO};
use crate::syk::SpectralHamiltonian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Computational,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Pure,
    Mixed,
}

#[derive(Debug, Clone)]
pub enum StateData {
    Pure(Vec<C64>),
    Mixed(Mat<C64>),
}

/// Mask of a 1-based site inside a basis index (site 1 is the most
/// significant bit).
#[inline]
pub fn site_mask(n_qubits: usize, site: usize) -> usize {
    1usize << (n_qubits - site)
}

/// Measurement label of basis bit `bit`: outcome 1 is `σ^z = +1` (bit 0).
#[inline]
pub fn outcome_of_bit(bit: bool) -> u8 {
    if bit {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone)]
pub struct QuantumState {
    n_qubits: usize,
    basis: Basis,
    data: StateData,
}

const STATE_TOL: f64 = 1e-10;

impl QuantumState {
    /// `|1⟩^{⊗n}`, every spin in the `σ^z = +1` state.
    pub fn all_up(n_qubits: usize) -> Self {
        let mut psi = vec![ZERO; 1 << n_qubits];
        psi[0] = ONE;
        Self { n_qubits, basis: Basis::Computational, data: StateData::Pure(psi) }
    }

    /// `𝕀 / 2^n`.
    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let d = 1usize << n_qubits;
        let w = C64::new(1.0 / d as f64, 0.0);
        let rho = Mat::from_fn(d, d, |i, j| if i == j { w } else { ZERO });
        Self { n_qubits, basis: Basis::Computational, data: StateData::Mixed(rho) }
    }

    pub fn from_pure(psi: Vec<C64>, basis: Basis) -> Result<Self> {
        let n_qubits = dim_to_qubits(psi.len())?;
        let s = Self { n_qubits, basis, data: StateData::Pure(psi) };
        s.validate()?;
        Ok(s)
    }

    pub fn from_density(rho: Mat<C64>, basis: Basis) -> Result<Self> {
        if rho.nrows() != rho.ncols() {
            return Err(Error::Dimension { expected: rho.nrows(), found: rho.ncols() });
        }
        let n_qubits = dim_to_qubits(rho.nrows())?;
        let s = Self { n_qubits, basis, data: StateData::Mixed(rho) };
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_parts_unchecked(n_qubits: usize, basis: Basis, data: StateData) -> Self {
        Self { n_qubits, basis, data }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn kind(&self) -> StateKind {
        match self.data {
            StateData::Pure(_) => StateKind::Pure,
            StateData::Mixed(_) => StateKind::Mixed,
        }
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn amplitudes(&self) -> Option<&[C64]> {
        match &self.data {
            StateData::Pure(psi) => Some(psi),
            StateData::Mixed(_) => None,
        }
    }

    pub fn density(&self) -> Option<MatRef<'_, C64>> {
        match &self.data {
            StateData::Pure(_) => None,
            StateData::Mixed(rho) => Some(rho.as_ref()),
        }
    }

    pub fn to_density(&self) -> Mat<C64> {
        match &self.data {
            StateData::Pure(psi) => linalg::outer(psi),
            StateData::Mixed(rho) => rho.clone(),
        }
    }

    /// Diagonal of the density matrix in the current basis.
    pub fn populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Pure(psi) => psi.iter().map(|z| z.norm_sqr()).collect(),
            StateData::Mixed(rho) => (0..rho.nrows()).map(|i| rho[(i, i)].re).collect(),
        }
    }

    /// Checks normalization, Hermiticity, trace and positivity to `1e-10`.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            StateData::Pure(psi) => {
                let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > STATE_TOL {
                    return Err(Error::Consistency(format!("pure state norm {norm}")));
                }
            }
            StateData::Mixed(rho) => {
                let herm = linalg::hermiticity_defect(rho.as_ref());
                if herm > STATE_TOL {
                    return Err(Error::Consistency(format!("density matrix not Hermitian ({herm:e})")));
                }
                let tr = linalg::trace(rho.as_ref());
                if (tr - ONE).norm() > STATE_TOL {
                    return Err(Error::Consistency(format!("density matrix trace {tr}")));
                }
                let evs = linalg::hermitian_eigenvalues(rho.as_ref())?;
                if let Some(&min) = evs.first() {
                    if min < -STATE_TOL {
                        return Err(Error::Consistency(format!("negative eigenvalue {min:e}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-expresses the state in `target` using the eigenbasis of `h`.
    pub fn to_basis(&self, h: &SpectralHamiltonian, target: Basis) -> Result<Self> {
        if h.n_qubits() != self.n_qubits {
            return Err(Error::Dimension { expected: self.n_qubits, found: h.n_qubits() });
        }
        if target == self.basis {
            return Ok(self.clone());
        }
        let data = match (&self.data, target) {
            (StateData::Pure(psi), Basis::Energy) => StateData::Pure(h.to_energy_vec(psi)),
            (StateData::Pure(c), Basis::Computational) => StateData::Pure(h.to_computational_vec(c)),
            (StateData::Mixed(rho), Basis::Energy) => StateData::Mixed(h.to_energy_mat(rho.as_ref())),
            (StateData::Mixed(rho), Basis::Computational) => {
                StateData::Mixed(h.to_computational_mat(rho.as_ref()))
            }
        };
        Ok(Self { n_qubits: self.n_qubits, basis: target, data })
    }

    /// Unitary evolution by `e^{-iHt}`; the basis tag is preserved.
    pub fn evolve(&self, h: &SpectralHamiltonian, t: f64) -> Result<Self> {
        let original = self.basis;
        let mut e = self.to_basis(h, Basis::Energy)?;
        let ph = h.phases(t);
        match &mut e.data {
            StateData::Pure(c) => c.iter_mut().zip(&ph).for_each(|(z, p)| *z *= p),
            StateData::Mixed(rho) => {
                let d = rho.nrows();
                for j in 0..d {
                    for i in 0..d {
                        rho[(i, j)] *= ph[i] * ph[j].conj();
                    }
                }
            }
        }
        e.to_basis(h, original)
    }
}

fn dim_to_qubits(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::Precondition(format!("state dimension {dim} is not a power of two ≥ 2")));
    }
    Ok(dim.trailing_zeros() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_are_valid() {
        QuantumState::all_up(3).validate().unwrap();
        QuantumState::maximally_mixed(3).validate().unwrap();
        assert_eq!(QuantumState::all_up(3).populations()[0], 1.0);
    }

    #[test]
    fn rejects_invalid_states() {
        let bad = vec![ONE, ONE];
        assert!(QuantumState::from_pure(bad, Basis::Computational).is_err());
        let rho = Mat::from_fn(2, 2, |i, j| if i == j { C64::new(0.7, 0.0) } else { ZERO });
        assert!(QuantumState::from_density(rho, Basis::Computational).is_err());
        let neg = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => C64::new(1.2, 0.0),
            (1, 1) => C64::new(-0.2, 0.0),
            _ => ZERO,
        });
        assert!(QuantumState::from_density(neg, Basis::Computational).is_err());
        assert!(QuantumState::from_pure(vec![ONE; 3], Basis::Computational).is_err());
    }

    #[test]
    fn site_masks_follow_leftmost_convention() {
        assert_eq!(site_mask(3, 1), 0b100);
        assert_eq!(site_mask(3, 3), 0b001);
        assert_eq!(outcome_of_bit(false), 1);
        assert_eq!(outcome_of_bit(true), 0);
    }
}
