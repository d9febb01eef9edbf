//! Half-chain entanglement entropy and global purity.

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ZERO};
use crate::state::{Basis, QuantumState, StateData};

/// Eigenvalues above `-EIG_CLAMP` are treated as round-off and clamped to 0.
pub const EIG_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    /// `S_half / (N/4)`, in `[0, 1]`.
    pub s_half: f64,
    /// Von Neumann entropy in bits.
    pub raw_bits: f64,
}

/// Number of sites on the `A` side of the half-chain cut (sites `1..=n/2`).
pub fn half_cut(n_qubits: usize) -> usize {
    n_qubits / 2
}

/// Reduced density matrix on a contiguous run of 1-based sites.
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<Mat<C64>> {
    if state.basis() != Basis::Computational {
        return Err(Error::Precondition("partial trace needs the computational basis".into()));
    }
    let n = state.n_qubits();
    let (lo, hi) = contiguous_range(keep, n)?;
    let n_left = lo - 1;
    let n_keep = hi - lo + 1;
    let n_right = n - hi;
    let dk = 1usize << n_keep;
    let dl = 1usize << n_left;
    let dr = 1usize << n_right;
    let index = |l: usize, k: usize, r: usize| (((l << n_keep) | k) << n_right) | r;

    let mut out = Mat::<C64>::zeros(dk, dk);
    match state.data() {
        StateData::Pure(psi) => {
            for l in 0..dl {
                for r in 0..dr {
                    for a in 0..dk {
                        let x = psi[index(l, a, r)];
                        if x == ZERO {
                            continue;
                        }
                        for b in 0..dk {
                            out[(a, b)] += x * psi[index(l, b, r)].conj();
                        }
                    }
                }
            }
        }
        StateData::Mixed(rho) => {
            for l in 0..dl {
                for r in 0..dr {
                    for b in 0..dk {
                        for a in 0..dk {
                            out[(a, b)] += rho[(index(l, a, r), index(l, b, r))];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn contiguous_range(keep: &[usize], n: usize) -> Result<(usize, usize)> {
    if keep.is_empty() {
        return Err(Error::UnsupportedPartition("empty subsystem".into()));
    }
    let mut sites = keep.to_vec();
    sites.sort_unstable();
    sites.dedup();
    if sites.len() != keep.len() {
        return Err(Error::UnsupportedPartition(format!("repeated sites in {keep:?}")));
    }
    let (lo, hi) = (sites[0], *sites.last().unwrap());
    if lo == 0 || hi > n {
        return Err(Error::UnsupportedPartition(format!("sites {keep:?} outside 1..={n}")));
    }
    if hi - lo + 1 != sites.len() {
        return Err(Error::UnsupportedPartition(format!("sites {keep:?} are not contiguous")));
    }
    Ok((lo, hi))
}

/// `-Σ λ log₂ λ` with clamping of tiny negative eigenvalues.
pub fn entropy_bits(eigenvalues: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &lam in eigenvalues {
        if lam < -EIG_CLAMP {
            return Err(Error::Consistency(format!("reduced state eigenvalue {lam:e} < 0")));
        }
        let lam = lam.clamp(0.0, 1.0);
        if lam > 0.0 {
            s -= lam * lam.log2();
        }
    }
    Ok(s.max(0.0))
}

/// Entanglement entropy of sites `1..=n/2` for a pure state.
pub fn entanglement_entropy(state: &QuantumState) -> Result<EntropyValue> {
    let psi = state
        .amplitudes()
        .ok_or_else(|| Error::Precondition("entanglement entropy needs a pure state".into()))?;
    if state.basis() != Basis::Computational {
        return Err(Error::Precondition("entanglement entropy needs the computational basis".into()));
    }
    half_chain_entropy(psi, state.n_qubits())
}

/// Half-chain entropy directly from computational-basis amplitudes.
pub fn half_chain_entropy(psi: &[C64], n_qubits: usize) -> Result<EntropyValue> {
    let n_a = half_cut(n_qubits);
    let raw_bits = if n_a == 0 {
        0.0
    } else {
        let rho_a = reduced_left(psi, n_a, n_qubits);
        entropy_bits(&linalg::hermitian_eigenvalues(rho_a.as_ref())?)?
    };
    // N/4 with N = 2 n_qubits Majoranas
    let norm = n_qubits as f64 / 2.0;
    Ok(EntropyValue { s_half: raw_bits / norm, raw_bits })
}

/// `Tr_B |ψ⟩⟨ψ|` for `A` = the first `n_a` sites, by reshaping `ψ` into a
/// `d_A × d_B` matrix `M` and forming `M M†`.
fn reduced_left(psi: &[C64], n_a: usize, n_qubits: usize) -> Mat<C64> {
    let da = 1usize << n_a;
    let db = 1usize << (n_qubits - n_a);
    let m = faer::MatRef::from_row_major_slice(psi, da, db);
    linalg::mul(m, m.adjoint())
}

/// `Tr ρ²`.
pub fn purity(state: &QuantumState) -> f64 {
    match state.data() {
        StateData::Pure(psi) => {
            let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            let p = n * n;
            debug_assert!(p >= 1.0 - 1e-9, "pure state with purity {p}");
            p
        }
        StateData::Mixed(rho) => linalg::frobenius_sq(rho.as_ref()),
    }
}
