//! Pauli strings in symplectic form and the Jordan–Wigner image of Majorana
//! operators.
//!
//! Site 1 is the leftmost tensor factor. In the masks, site `s` of an
//! `n`-qubit string lives at bit `n - s`, so a mask printed as an `n`-digit
//! binary number reads site 1 first, and the same bit layout indexes the
//! computational basis (basis bit 0 is the `σ^z = +1` state).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Largest register we are willing to materialize densely.
pub const MAX_DENSE_QUBITS: usize = 12;

/// Largest register a mask can describe.
pub const MAX_QUBITS: usize = 64;

/// Single-site Pauli label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (false, true) => Pauli::Z,
            (true, true) => Pauli::Y,
        }
    }

    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Z => (false, true),
            Pauli::Y => (true, true),
        }
    }

    /// `self · other = i^k · result`; returns `(result, k mod 4)`.
    fn mul_table(self, other: Pauli) -> (Pauli, u8) {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => (p, 0),
            (X, X) | (Y, Y) | (Z, Z) => (I, 0),
            (X, Y) => (Z, 1),
            (Y, Z) => (X, 1),
            (Z, X) => (Y, 1),
            (Y, X) => (Z, 3),
            (Z, Y) => (X, 3),
            (X, Z) => (Y, 3),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

fn i_pow(k: u8) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// A complex multiple of a tensor product of single-site Paulis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliString {
    n_qubits: usize,
    x_mask: u64,
    z_mask: u64,
    coeff: C64,
}

impl PauliString {
    pub fn identity(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, 0, 0, C64::new(1.0, 0.0))
    }

    pub fn new(n_qubits: usize, x_mask: u64, z_mask: u64, coeff: C64) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Precondition(format!(
                "n_qubits must lie in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let allowed = if n_qubits == 64 { u64::MAX } else { (1u64 << n_qubits) - 1 };
        if (x_mask | z_mask) & !allowed != 0 {
            return Err(Error::Precondition(format!(
                "masks {x_mask:#b}/{z_mask:#b} exceed {n_qubits} qubits"
            )));
        }
        Ok(Self { n_qubits, x_mask, z_mask, coeff })
    }

    /// Parses labels like `"XIZY"` (site 1 first) with unit coefficient.
    pub fn from_label(label: &str) -> Result<Self> {
        let n = label.chars().count();
        let mut x = 0u64;
        let mut z = 0u64;
        for (pos, ch) in label.chars().enumerate() {
            let bit = 1u64 << (n - 1 - pos);
            let (bx, bz) = match ch {
                'I' => (false, false),
                'X' => (true, false),
                'Y' => (true, true),
                'Z' => (false, true),
                other => {
                    return Err(Error::Precondition(format!("unknown Pauli label {other:?}")))
                }
            };
            if bx {
                x |= bit;
            }
            if bz {
                z |= bit;
            }
        }
        Self::new(n, x, z, C64::new(1.0, 0.0))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn x_mask(&self) -> u64 {
        self.x_mask
    }

    pub fn z_mask(&self) -> u64 {
        self.z_mask
    }

    pub fn coeff(&self) -> C64 {
        self.coeff
    }

    pub fn with_coeff(mut self, coeff: C64) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.coeff *= factor;
        self
    }

    fn bit(&self, site: usize) -> u64 {
        1u64 << (self.n_qubits - site)
    }

    /// Operator on 1-based `site`.
    pub fn site(&self, site: usize) -> Pauli {
        let b = self.bit(site);
        Pauli::from_bits(self.x_mask & b != 0, self.z_mask & b != 0)
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// Same operator up to the scalar coefficient.
    pub fn same_operator(&self, other: &PauliString) -> bool {
        self.n_qubits == other.n_qubits
            && self.x_mask == other.x_mask
            && self.z_mask == other.z_mask
    }

    /// Operator product `self · rhs`; the phase is accumulated site by site
    /// from site 1 to site n.
    pub fn multiply(&self, rhs: &PauliString) -> Result<PauliString> {
        if self.n_qubits != rhs.n_qubits {
            return Err(Error::Dimension { expected: self.n_qubits, found: rhs.n_qubits });
        }
        let mut phase = 0u8;
        let mut x = 0u64;
        let mut z = 0u64;
        for site in 1..=self.n_qubits {
            let (p, k) = self.site(site).mul_table(rhs.site(site));
            phase = (phase + k) % 4;
            let (bx, bz) = p.bits();
            let bit = self.bit(site);
            if bx {
                x |= bit;
            }
            if bz {
                z |= bit;
            }
        }
        Ok(PauliString {
            n_qubits: self.n_qubits,
            x_mask: x,
            z_mask: z,
            coeff: self.coeff * rhs.coeff * i_pow(phase),
        })
    }

    /// Action on a computational basis state: `P|b⟩ = amp · |row⟩`.
    #[inline]
    pub fn apply_to_basis(&self, b: usize) -> (usize, C64) {
        let y_count = (self.x_mask & self.z_mask).count_ones() as u8;
        let sign = if (self.z_mask & b as u64).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        ((b as u64 ^ self.x_mask) as usize, self.coeff * i_pow(y_count) * sign)
    }

    /// Dense `2^n × 2^n` matrix.
    pub fn to_matrix(&self) -> Result<Mat<C64>> {
        if self.n_qubits > MAX_DENSE_QUBITS {
            return Err(Error::Feasibility(format!(
                "{} qubits exceed the dense limit of {MAX_DENSE_QUBITS}",
                self.n_qubits
            )));
        }
        let dim = 1usize << self.n_qubits;
        let mut m = Mat::<C64>::zeros(dim, dim);
        for b in 0..dim {
            let (row, amp) = self.apply_to_basis(b);
            m[(row, b)] = amp;
        }
        Ok(m)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+.6}{:+.6}i)·", self.coeff.re, self.coeff.im)?;
        for site in 1..=self.n_qubits {
            write!(f, "{}", self.site(site))?;
        }
        Ok(())
    }
}

/// Jordan–Wigner image of Majorana `index` (1-based) among `n_majoranas`:
/// an X prefix on sites before `⌈index/2⌉`, then Z (odd index) or Y (even
/// index), scaled by `1/√2`.
pub fn jw_majorana(index: usize, n_majoranas: usize) -> Result<PauliString> {
    if n_majoranas == 0 || n_majoranas % 2 != 0 {
        return Err(Error::Precondition(format!(
            "number of Majoranas must be even and positive, got {n_majoranas}"
        )));
    }
    if n_majoranas / 2 > MAX_DENSE_QUBITS {
        return Err(Error::Precondition(format!(
            "{n_majoranas} Majoranas exceed the {MAX_DENSE_QUBITS}-qubit limit"
        )));
    }
    if index == 0 || index > n_majoranas {
        return Err(Error::Precondition(format!(
            "Majorana index {index} outside 1..={n_majoranas}"
        )));
    }
    let n = n_majoranas / 2;
    let site = index.div_ceil(2);
    let mut x = 0u64;
    for s in 1..site {
        x |= 1u64 << (n - s);
    }
    let bit = 1u64 << (n - site);
    let z = bit;
    if index % 2 == 0 {
        x |= bit;
    }
    PauliString::new(n, x, z, C64::new(FRAC_1_SQRT_2, 0.0))
}
