//! Decoupling of a reference from the measurement record after a Haar
//! scramble.
//!
//! A system `S` of `n_system` qubits holds `round(γ n)` qubits Bell-paired
//! with a reference `R`; the rest start in `|1⟩`. A Haar unitary acts on `S`,
//! then `round(p n)` sites of `S` are measured. The environment `E` keeps the
//! recorded bits, and the quantity of interest is `‖ρ_RE − ρ_R ⊗ ρ_E‖₁`.
//!
//! Joint states are stored as a `d_R × d_S` coefficient matrix `M` with
//! `|Ψ⟩ = Σ M[a, s] |a⟩_R |s⟩_S`; reference qubits form the most significant
//! bits of the full register.

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{linear_fit, sample_std};
use crate::error::{Error, Result};
use crate::linalg::{self, ZERO};
use crate::observables::partial_trace;
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream, tag};
use crate::state::{Basis, QuantumState};

/// Largest `n_ref + n_system`.
pub const MAX_TOTAL_QUBITS: usize = 14;
const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecouplingSetup {
    pub n_system: usize,
    pub gamma: f64,
    pub p_meas: f64,
    pub n_haar_samples: usize,
}

impl DecouplingSetup {
    pub fn n_ref(&self) -> usize {
        (self.gamma * self.n_system as f64).round() as usize
    }

    pub fn n_meas(&self) -> usize {
        (self.p_meas * self.n_system as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_system == 0 {
            return Err(Error::Precondition("empty system".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("p_meas", self.p_meas)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Precondition(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let total = self.n_ref() + self.n_system;
        if total > MAX_TOTAL_QUBITS {
            return Err(Error::Feasibility(format!(
                "{total} qubits exceed the budget of {MAX_TOTAL_QUBITS}"
            )));
        }
        Ok(())
    }

    /// Measured sites of `S` (1-based within `S`).
    pub fn measured_sites(&self) -> Vec<usize> {
        (1..=self.n_meas()).collect()
    }
}

/// Coefficient matrix of the purification: Bell pairs `(R_i, S_i)` followed
/// by `|1⟩` on the remaining system qubits.
pub fn purification_matrix(setup: &DecouplingSetup) -> Result<Mat<C64>> {
    setup.validate()?;
    let nr = setup.n_ref();
    let n = setup.n_system;
    let amp = C64::new((1.0 / (1u64 << nr) as f64).sqrt(), 0.0);
    Ok(Mat::from_fn(1 << nr, 1 << n, |a, s| if s == a << (n - nr) { amp } else { ZERO }))
}

/// The purification as a pure state on `R ⊗ S`.
pub fn prepare_purification(setup: &DecouplingSetup) -> Result<QuantumState> {
    let m = purification_matrix(setup)?;
    let psi = flatten(&m);
    QuantumState::from_pure(psi, Basis::Computational)
}

fn flatten(m: &Mat<C64>) -> Vec<C64> {
    let mut psi = Vec::with_capacity(m.nrows() * m.ncols());
    for a in 0..m.nrows() {
        for s in 0..m.ncols() {
            psi.push(m[(a, s)]);
        }
    }
    psi
}

/// Haar-random unitary from a complex Ginibre matrix and a phase-fixed QR.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Mat<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    let mut z = Mat::<C64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            z[(i, j)] = C64::new(draw() * s, draw() * s);
        }
    }
    let qr = z.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// `(𝕀_R ⊗ U) |Ψ⟩` in coefficient form, `M Uᵀ`.
pub fn apply_system_unitary(m: &Mat<C64>, u: &Mat<C64>) -> Mat<C64> {
    linalg::mul(m.as_ref(), u.transpose())
}

/// Unnormalized conditional reference states `σ_r = p_r ρ_R^{(r)}` for each
/// record `r` of the first `n_meas` system sites.
fn conditional_blocks(m: &Mat<C64>, n_system: usize, n_meas: usize) -> Vec<Mat<C64>> {
    let dr = m.nrows();
    let shift = n_system - n_meas;
    let mut blocks = vec![Mat::<C64>::zeros(dr, dr); 1 << n_meas];
    for s in 0..m.ncols() {
        let b = &mut blocks[s >> shift];
        for j in 0..dr {
            let cj = m[(j, s)].conj();
            if cj == ZERO {
                continue;
            }
            for i in 0..dr {
                b[(i, j)] += m[(i, s)] * cj;
            }
        }
    }
    blocks
}

/// `Σ_r ‖σ_r − p_r ρ_R‖₁` from the block structure of `ρ_RE`.
pub fn decoupling_error(m: &Mat<C64>, n_system: usize, n_meas: usize) -> Result<f64> {
    if m.ncols() != 1 << n_system || n_meas > n_system {
        return Err(Error::Dimension { expected: 1 << n_system, found: m.ncols() });
    }
    if m.nrows() == 1 || n_meas == 0 {
        return Ok(0.0);
    }
    blocks_error(&conditional_blocks(m, n_system, n_meas))
}

fn blocks_error(blocks: &[Mat<C64>]) -> Result<f64> {
    let dr = blocks[0].nrows();
    let weights: Vec<f64> = blocks.iter().map(|b| linalg::trace(b.as_ref()).re).collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Consistency(format!("outcome weights sum to {total}")));
    }
    let mut rho_r = Mat::<C64>::zeros(dr, dr);
    for b in blocks {
        rho_r += b;
    }
    let mut eps = 0.0;
    for (b, &p) in blocks.iter().zip(&weights) {
        let diff = Mat::from_fn(dr, dr, |i, j| b[(i, j)] - rho_r[(i, j)] * p);
        eps += linalg::trace_norm_hermitian(diff.as_ref())?;
    }
    Ok(eps)
}

/// Same quantity from the full `ρ_RE` matrix: the record is copied into
/// explicit `E` qubits, `S` is traced out and the trace norm of
/// `ρ_RE − ρ_R ⊗ ρ_E` is taken directly.
pub fn decoupling_error_dense(m: &Mat<C64>, n_system: usize, n_meas: usize) -> Result<f64> {
    let nr = m.nrows().trailing_zeros() as usize;
    if nr == 0 || n_meas == 0 {
        return Ok(0.0);
    }
    if nr + n_meas + n_system > crate::pauli::MAX_DENSE_QUBITS {
        return Err(Error::Feasibility("dense oracle is limited to 12 qubits".into()));
    }
    // register order R, E, S so that R ⊗ E is a contiguous block
    let shift = n_system - n_meas;
    let mut psi = vec![ZERO; 1 << (nr + n_meas + n_system)];
    for a in 0..m.nrows() {
        for s in 0..m.ncols() {
            let e = s >> shift;
            psi[(((a << n_meas) | e) << n_system) | s] = m[(a, s)];
        }
    }
    let state = QuantumState::from_pure(psi, Basis::Computational)?;
    let keep: Vec<usize> = (1..=nr + n_meas).collect();
    let rho_re = partial_trace(&state, &keep)?;
    let dr = 1usize << nr;
    let de = 1usize << n_meas;
    let rho_r = Mat::from_fn(dr, dr, |i, j| (0..de).map(|e| rho_re[(i * de + e, j * de + e)]).sum::<C64>());
    let rho_e = Mat::from_fn(de, de, |i, j| (0..dr).map(|a| rho_re[(a * de + i, a * de + j)]).sum::<C64>());
    let diff = Mat::from_fn(dr * de, dr * de, |x, y| {
        rho_re[(x, y)] - rho_r[(x / de, y / de)] * rho_e[(x % de, y % de)]
    });
    linalg::trace_norm_hermitian(diff.as_ref())
}

/// Seed of Haar sample `k` for a setup.
fn sample_seed(master: u64, setup: &DecouplingSetup, k: usize) -> u64 {
    derive_seed(
        master,
        &[tag("decoupling"), setup.n_system as u64, setup.gamma.to_bits(), setup.p_meas.to_bits(), k as u64],
    )
}

/// Decoupling error of every Haar sample of a setup, in sample order.
pub fn sample_errors(setup: &DecouplingSetup, master: u64, exec: Execution) -> Result<Vec<f64>> {
    let m0 = purification_matrix(setup)?;
    let n = setup.n_system;
    let nm = setup.n_meas();
    par::try_map(exec, setup.n_haar_samples, |k| {
        let mut rng = stream(sample_seed(master, setup, k));
        let u = haar_unitary(1 << n, &mut rng);
        decoupling_error(&apply_system_unitary(&m0, &u), n, nm)
    })
}

/// Error after `k` rounds of scrambling and measurement, with `E` holding
/// all `k` records, compared with `ρ_R ⊗ ρ_{E_1…E_k}`.
pub fn k_round_error<R: Rng + ?Sized>(setup: &DecouplingSetup, rounds: usize, rng: &mut R) -> Result<f64> {
    let n = setup.n_system;
    let nm = setup.n_meas();
    let shift = n - nm;
    let m0 = purification_matrix(setup)?;
    if m0.nrows() == 1 || nm == 0 || rounds == 0 {
        return Ok(0.0);
    }
    let mut branches = vec![m0];
    for _ in 0..rounds {
        let u = haar_unitary(1 << n, rng);
        let mut next = Vec::with_capacity(branches.len() << nm);
        for b in &branches {
            let mb = apply_system_unitary(b, &u);
            for r in 0..1usize << nm {
                next.push(Mat::from_fn(mb.nrows(), mb.ncols(), |i, s| {
                    if s >> shift == r {
                        mb[(i, s)]
                    } else {
                        ZERO
                    }
                }));
            }
        }
        branches = next;
    }
    let blocks: Vec<Mat<C64>> = branches.iter().map(|b| linalg::mul(b.as_ref(), b.adjoint())).collect();
    blocks_error(&blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n_system: usize,
    pub gamma: f64,
    pub p_meas: f64,
    pub mean_eps: f64,
    pub stderr_eps: f64,
    /// Least-squares slope of `log₂ ε̄` against `n_system`; `None` with
    /// fewer than three sizes or a vanishing mean.
    pub slope: Option<f64>,
}

/// Mean and standard error of the decoupling error over Haar samples.
pub fn cell_stats(setup: &DecouplingSetup, master: u64, exec: Execution) -> Result<(f64, f64)> {
    let eps = sample_errors(setup, master, exec)?;
    let mean = eps.iter().sum::<f64>() / eps.len() as f64;
    Ok((mean, sample_std(&eps) / (eps.len() as f64).sqrt()))
}

/// Mean decoupling error across system sizes for every `(γ, p_meas)` pair.
pub fn scaling_scan(
    n_systems: &[usize],
    gammas: &[f64],
    p_meas: &[f64],
    n_haar_samples: usize,
    master: u64,
    exec: Execution,
) -> Result<Vec<ScanRow>> {
    if n_haar_samples < 2 {
        return Err(Error::Precondition("need at least two Haar samples per cell".into()));
    }
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &p in p_meas {
            let mut cell = Vec::with_capacity(n_systems.len());
            for &n in n_systems {
                let setup = DecouplingSetup { n_system: n, gamma, p_meas: p, n_haar_samples };
                let (mean, stderr) = cell_stats(&setup, master, exec)?;
                cell.push((n, mean, stderr));
            }
            let slope = scaling_slope(&cell);
            rows.extend(cell.into_iter().map(|(n, mean, stderr)| ScanRow {
                n_system: n,
                gamma,
                p_meas: p,
                mean_eps: mean,
                stderr_eps: stderr,
                slope,
            }));
        }
    }
    Ok(rows)
}

/// Slope of `log₂ ε̄` against size over `(n_system, mean, stderr)` rows.
pub fn scaling_slope(cell: &[(usize, f64, f64)]) -> Option<f64> {
    if cell.len() < 3 || cell.iter().any(|c| !(c.1 > 0.0)) {
        return None;
    }
    let x: Vec<f64> = cell.iter().map(|c| c.0 as f64).collect();
    let y: Vec<f64> = cell.iter().map(|c| c.1.log2()).collect();
    linear_fit(&x, &y).ok().map(|f| f.slope)
}
