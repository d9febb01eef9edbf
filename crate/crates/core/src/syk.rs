//! Random SYK couplings, dense Hamiltonian assembly and exact propagation.

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ZERO};
use crate::pauli::{jw_majorana, PauliString};

pub const MIN_MAJORANAS: usize = 8;
pub const MAX_MAJORANAS: usize = 24;

/// Lexicographically ordered `i < j < k < l` over `1..=n`.
pub fn quadruples(n: usize) -> impl Iterator<Item = [usize; 4]> {
    (1..=n).flat_map(move |i| {
        (i + 1..=n).flat_map(move |j| {
            (j + 1..=n).flat_map(move |k| (k + 1..=n).map(move |l| [i, j, k, l]))
        })
    })
}

pub fn n_quadruples(n: usize) -> usize {
    if n < 4 {
        0
    } else {
        n * (n - 1) * (n - 2) * (n - 3) / 24
    }
}

/// Coupling variance `6 J² / N³`.
pub fn coupling_variance(n_majoranas: usize, j_strength: f64) -> f64 {
    6.0 * j_strength * j_strength / (n_majoranas as f64).powi(3)
}

/// One draw of the antisymmetrized couplings, stored for `i<j<k<l` in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    n_majoranas: usize,
    j_strength: f64,
    values: Vec<f64>,
}

impl CouplingTensor {
    pub fn from_values(n_majoranas: usize, j_strength: f64, values: Vec<f64>) -> Result<Self> {
        check_size(n_majoranas)?;
        if values.len() != n_quadruples(n_majoranas) {
            return Err(Error::Dimension {
                expected: n_quadruples(n_majoranas),
                found: values.len(),
            });
        }
        Ok(Self { n_majoranas, j_strength, values })
    }

    /// A tensor with a single nonzero entry, for tests and diagnostics.
    pub fn single(n_majoranas: usize, quad: [usize; 4], value: f64) -> Result<Self> {
        check_size(n_majoranas)?;
        let pos = quadruples(n_majoranas)
            .position(|q| q == quad)
            .ok_or_else(|| Error::Precondition(format!("{quad:?} is not an ordered quadruple")))?;
        let mut values = vec![0.0; n_quadruples(n_majoranas)];
        values[pos] = value;
        Ok(Self { n_majoranas, j_strength: value.abs(), values })
    }

    pub fn n_majoranas(&self) -> usize {
        self.n_majoranas
    }

    pub fn j_strength(&self) -> f64 {
        self.j_strength
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        quadruples(self.n_majoranas).zip(self.values.iter().copied())
    }

    pub fn to_dump(&self, seed: Option<u64>) -> RealizationDump {
        RealizationDump {
            n_majoranas: self.n_majoranas,
            j_strength: self.j_strength,
            seed,
            couplings: self
                .iter()
                .map(|([i, j, k, l], value)| CouplingEntry { i, j, k, l, value })
                .collect(),
        }
    }

    pub fn from_dump(dump: &RealizationDump) -> Result<Self> {
        check_size(dump.n_majoranas)?;
        let expected: Vec<_> = quadruples(dump.n_majoranas).collect();
        if dump.couplings.len() != expected.len() {
            return Err(Error::Dimension { expected: expected.len(), found: dump.couplings.len() });
        }
        let mut values = Vec::with_capacity(expected.len());
        for (entry, quad) in dump.couplings.iter().zip(&expected) {
            if [entry.i, entry.j, entry.k, entry.l] != *quad {
                return Err(Error::Precondition(format!(
                    "coupling ({}, {}, {}, {}) out of order, expected {quad:?}",
                    entry.i, entry.j, entry.k, entry.l
                )));
            }
            values.push(entry.value);
        }
        Ok(Self { n_majoranas: dump.n_majoranas, j_strength: dump.j_strength, values })
    }
}

/// JSON replay document for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationDump {
    pub n_majoranas: usize,
    pub j_strength: f64,
    pub seed: Option<u64>,
    pub couplings: Vec<CouplingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub value: f64,
}

fn check_size(n: usize) -> Result<()> {
    if n % 2 != 0 || !(MIN_MAJORANAS..=MAX_MAJORANAS).contains(&n) {
        return Err(Error::Precondition(format!(
            "number of Majoranas must be even and in {MIN_MAJORANAS}..={MAX_MAJORANAS}, got {n}"
        )));
    }
    Ok(())
}

/// Draws `C(N,4)` i.i.d. Gaussian couplings with variance `6J²/N³`.
pub fn sample_couplings<R: Rng + ?Sized>(
    n_majoranas: usize,
    j_strength: f64,
    rng: &mut R,
) -> Result<CouplingTensor> {
    check_size(n_majoranas)?;
    if !(j_strength >= 0.0) || !j_strength.is_finite() {
        return Err(Error::Precondition(format!("J must be finite and non-negative, got {j_strength}")));
    }
    let count = n_quadruples(n_majoranas);
    let values = if j_strength == 0.0 {
        vec![0.0; count]
    } else {
        let normal = Normal::new(0.0, coupling_variance(n_majoranas, j_strength).sqrt())
            .map_err(|e| Error::Precondition(e.to_string()))?;
        (0..count).map(|_| normal.sample(rng)).collect()
    };
    Ok(CouplingTensor { n_majoranas, j_strength, values })
}

/// Symbolic Hamiltonian terms `-𝒥_{ijkl} χ_i χ_j χ_k χ_l`, each reduced to a
/// single Pauli string.
pub fn hamiltonian_terms(c: &CouplingTensor) -> Result<Vec<PauliString>> {
    let n = c.n_majoranas;
    let chi: Vec<PauliString> = (1..=n).map(|i| jw_majorana(i, n)).collect::<Result<_>>()?;
    let mut terms = Vec::with_capacity(c.values.len());
    for ([i, j, k, l], value) in c.iter() {
        if value == 0.0 {
            continue;
        }
        let s = chi[i - 1].multiply(&chi[j - 1])?.multiply(&chi[k - 1])?.multiply(&chi[l - 1])?;
        terms.push(s.scaled(C64::new(-value, 0.0)));
    }
    Ok(terms)
}

/// Dense Hermitian Hamiltonian together with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpectralHamiltonian {
    n_qubits: usize,
    matrix: Mat<C64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<C64>,
}

/// Assembles and diagonalizes `H = Σ -𝒥_{ijkl} χ_i χ_j χ_k χ_l`.
pub fn build_hamiltonian(c: &CouplingTensor) -> Result<SpectralHamiltonian> {
    let n_qubits = c.n_majoranas / 2;
    let dim = 1usize << n_qubits;
    let mut h = Mat::<C64>::zeros(dim, dim);
    for term in hamiltonian_terms(c)? {
        for b in 0..dim {
            let (row, amp) = term.apply_to_basis(b);
            h[(row, b)] += amp;
        }
    }
    SpectralHamiltonian::from_matrix(h)
}

impl SpectralHamiltonian {
    /// Diagonalizes an arbitrary Hermitian matrix of dimension `2^n`.
    pub fn from_matrix(matrix: Mat<C64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || !dim.is_power_of_two() || dim < 2 {
            return Err(Error::Precondition(format!(
                "Hamiltonian must be square with power-of-two dimension, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = linalg::hermiticity_defect(matrix.as_ref());
        if defect > 1e-10 {
            return Err(Error::Consistency(format!("Hamiltonian not Hermitian: defect {defect:e}")));
        }
        let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(matrix.as_ref())?;
        Ok(Self { n_qubits: dim.trailing_zeros() as usize, matrix, eigenvalues, eigenvectors })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn matrix(&self) -> MatRef<'_, C64> {
        self.matrix.as_ref()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns are eigenstates in the computational basis.
    pub fn eigenvectors(&self) -> MatRef<'_, C64> {
        self.eigenvectors.as_ref()
    }

    /// `e^{-i E_k t}` for every level.
    pub fn phases(&self, t: f64) -> Vec<C64> {
        self.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect()
    }

    /// `U(t) = V diag(e^{-iEt}) V†`.
    pub fn propagator(&self, t: f64) -> Mat<C64> {
        let ph = self.phases(t);
        let v = self.eigenvectors.as_ref();
        let scaled = Mat::from_fn(self.dim(), self.dim(), |i, k| v[(i, k)] * ph[k]);
        linalg::mul(scaled.as_ref(), v.adjoint())
    }

    /// `V† ψ`.
    pub fn to_energy_vec(&self, psi: &[C64]) -> Vec<C64> {
        let v = self.eigenvectors.as_ref();
        let d = self.dim();
        let mut out = vec![ZERO; d];
        for k in 0..d {
            let col = v.col(k);
            let mut acc = ZERO;
            for (x, &amp) in psi.iter().enumerate() {
                acc += col[x].conj() * amp;
            }
            out[k] = acc;
        }
        out
    }

    /// `V c`.
    pub fn to_computational_vec(&self, coeffs: &[C64]) -> Vec<C64> {
        let v = self.eigenvectors.as_ref();
        let d = self.dim();
        let mut out = vec![ZERO; d];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == ZERO {
                continue;
            }
            let col = v.col(k);
            for x in 0..d {
                out[x] += col[x] * c;
            }
        }
        out
    }

    /// `V† ρ V`.
    pub fn to_energy_mat(&self, rho: MatRef<'_, C64>) -> Mat<C64> {
        let v = self.eigenvectors.as_ref();
        let tmp = linalg::mul(v.adjoint(), rho);
        linalg::mul(tmp.as_ref(), v)
    }

    /// `V ρ V†`.
    pub fn to_computational_mat(&self, rho: MatRef<'_, C64>) -> Mat<C64> {
        let v = self.eigenvectors.as_ref();
        let tmp = linalg::mul(v, rho);
        linalg::mul(tmp.as_ref(), v.adjoint())
    }

    /// `⟨ψ|H|ψ⟩` for a computational-basis vector.
    pub fn energy(&self, psi: &[C64]) -> f64 {
        let c = self.to_energy_vec(psi);
        c.iter().zip(&self.eigenvalues).map(|(z, e)| z.norm_sqr() * e).sum()
    }
}
