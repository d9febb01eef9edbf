//! Monitored evolution: exact spectral propagation interleaved with randomly
//! scheduled projective `σ^z` measurements.
//!
//! The walk runs on a fixed `dt` grid. Within a step the unitary increment
//! comes first, then the measurement coin is flipped; between events the
//! propagation is applied once over the whole gap.
//!
//! Mixed states are carried as a factor `ρ = A A†` with orthogonal columns in
//! the energy basis. Projections can only lower the rank, and after each
//! event the factor is re-orthogonalized from its Gram matrix, dropping
//! directions whose weight is below `RANK_TOL` of the largest. A pure state
//! is the rank-one case of the same representation.

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ZERO};
use crate::observables::{self, EntropyValue};
use crate::state::{outcome_of_bit, site_mask, Basis, QuantumState, StateData};
use crate::syk::SpectralHamiltonian;

/// Largest allowed `Γ_m · dt`.
pub const MAX_RATE_PER_STEP: f64 = 0.1;
/// Smallest branch weight accepted during outcome sampling.
pub const MIN_BRANCH_WEIGHT: f64 = 1e-14;
/// Relative weight below which a factor column is discarded.
pub const RANK_TOL: f64 = 1e-13;
const CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    AllUp,
    MaximallyMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    HalfChainEntropy,
    Purity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub gamma_m: f64,
    pub p_m: f64,
    pub record_interval: f64,
    pub initial: InitialState,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            t_max: 200.0,
            gamma_m: 0.0,
            p_m: 0.0,
            record_interval: 1.0,
            initial: InitialState::AllUp,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    /// Measurement probability per step, `Γ_m · dt`.
    pub fn rate_per_step(&self) -> f64 {
        self.gamma_m * self.dt
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt + 1e-9).floor() as usize
    }

    /// Steps between two recorded samples.
    pub fn record_stride(&self) -> usize {
        (self.record_interval / self.dt).round().max(1.0) as usize
    }

    /// Times at which observables are recorded.
    pub fn record_times(&self) -> Vec<f64> {
        let stride = self.record_stride();
        (0..=self.n_steps()).step_by(stride).map(|k| k as f64 * self.dt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            bad.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            bad.push(format!("t_max must be non-negative, got {}", self.t_max));
        }
        if !(self.gamma_m >= 0.0) || !self.gamma_m.is_finite() {
            bad.push(format!("gamma_m must be non-negative, got {}", self.gamma_m));
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            bad.push(format!("p_m must lie in [0, 1], got {}", self.p_m));
        }
        if bad.is_empty() && self.rate_per_step() > MAX_RATE_PER_STEP * (1.0 + 1e-12) {
            bad.push(format!(
                "gamma_m * dt = {} exceeds {MAX_RATE_PER_STEP}",
                self.rate_per_step()
            ));
        }
        if bad.is_empty() {
            if self.record_interval < self.dt * (1.0 - 1e-9) {
                bad.push(format!(
                    "record_interval {} is shorter than dt {}",
                    self.record_interval, self.dt
                ));
            } else {
                let ratio = self.record_interval / self.dt;
                if (ratio - ratio.round()).abs() > 1e-6 * ratio {
                    bad.push(format!(
                        "record_interval {} is not a multiple of dt {}",
                        self.record_interval, self.dt
                    ));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// One scheduled measurement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEvent {
    pub t: f64,
    /// 1-based measured sites, ascending.
    pub sites: Vec<usize>,
    /// One label per site: 1 for `σ^z = +1`, 0 for `σ^z = -1`.
    #[serde(with = "bitstring")]
    pub outcomes: Vec<u8>,
}

mod bitstring {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let text: String = bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(D::Error::custom(format!("invalid outcome bit {other:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_half: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub purity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub config: TrajectoryConfig,
    pub events: Vec<MeasurementEvent>,
    pub series: Series,
}

impl TrajectoryRecord {
    pub fn series_of(&self, obs: Observable) -> Option<&[f64]> {
        match obs {
            Observable::HalfChainEntropy => self.series.s_half.as_deref(),
            Observable::Purity => self.series.purity.as_deref(),
        }
    }

    /// Events that actually projected something.
    pub fn projective_events(&self) -> impl Iterator<Item = &MeasurementEvent> {
        self.events.iter().filter(|e| !e.sites.is_empty())
    }
}

/// Bernoulli coin with success probability `r_m`.
pub fn schedule_step<R: Rng + ?Sized>(rng: &mut R, r_m: f64) -> bool {
    rng.random::<f64>() < r_m
}

/// Includes each of the sites `1..=n_sites` independently with probability
/// `p_m`.
pub fn sample_measured_sites<R: Rng + ?Sized>(rng: &mut R, n_sites: usize, p_m: f64) -> Vec<usize> {
    (1..=n_sites).filter(|_| rng.random::<f64>() < p_m).collect()
}

/// Outcome of sequential Born sampling over a set of sites.
#[derive(Debug, Clone)]
pub(crate) struct SampledOutcome {
    pub mask: usize,
    pub value: usize,
    pub outcomes: Vec<u8>,
    /// Total weight of the selected branch.
    pub weight: f64,
}

/// Samples the sites one after another from the conditional Born rule
/// given computational-basis populations.
pub(crate) fn sample_outcomes<R: Rng + ?Sized>(
    populations: &[f64],
    n_qubits: usize,
    sites: &[usize],
    rng: &mut R,
) -> Result<SampledOutcome> {
    let mut mask = 0usize;
    let mut value = 0usize;
    let mut weight: f64 = populations.iter().sum();
    let mut outcomes = Vec::with_capacity(sites.len());
    for &site in sites {
        let bit = site_mask(n_qubits, site);
        let mut w_up = 0.0;
        for (x, &p) in populations.iter().enumerate() {
            if x & mask == value && x & bit == 0 {
                w_up += p;
            }
        }
        let w_down = (weight - w_up).max(0.0);
        let up = rng.random::<f64>() * weight < w_up;
        let chosen = if up { w_up } else { w_down };
        if chosen < MIN_BRANCH_WEIGHT {
            return Err(Error::NumericalDegeneracy { site, weight: chosen });
        }
        mask |= bit;
        if !up {
            value |= bit;
        }
        outcomes.push(outcome_of_bit(!up));
        weight = chosen;
    }
    Ok(SampledOutcome { mask, value, outcomes, weight })
}

fn check_sites(n_qubits: usize, sites: &[usize]) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::Precondition("no sites to project".into()));
    }
    let mut seen = 0usize;
    for &s in sites {
        if s == 0 || s > n_qubits {
            return Err(Error::Precondition(format!("site {s} outside 1..={n_qubits}")));
        }
        let m = site_mask(n_qubits, s);
        if seen & m != 0 {
            return Err(Error::Precondition(format!("site {s} repeated")));
        }
        seen |= m;
    }
    Ok(())
}

/// Projective `σ^z` measurement of `sites` with renormalization.
pub fn project<R: Rng + ?Sized>(
    state: &QuantumState,
    sites: &[usize],
    rng: &mut R,
) -> Result<(QuantumState, Vec<u8>)> {
    if state.basis() != Basis::Computational {
        return Err(Error::Precondition("projection needs the computational basis".into()));
    }
    let n = state.n_qubits();
    check_sites(n, sites)?;
    let pops = state.populations();
    let s = sample_outcomes(&pops, n, sites, rng)?;
    let keep = |x: usize| x & s.mask == s.value;
    let data = match state.data() {
        StateData::Pure(psi) => {
            let scale = 1.0 / s.weight.sqrt();
            StateData::Pure(
                psi.iter()
                    .enumerate()
                    .map(|(x, &z)| if keep(x) { z * scale } else { ZERO })
                    .collect(),
            )
        }
        StateData::Mixed(rho) => {
            let scale = 1.0 / s.weight;
            StateData::Mixed(Mat::from_fn(rho.nrows(), rho.ncols(), |i, j| {
                if keep(i) && keep(j) {
                    rho[(i, j)] * scale
                } else {
                    ZERO
                }
            }))
        }
    };
    Ok((QuantumState::from_parts_unchecked(n, Basis::Computational, data), s.outcomes))
}

#[derive(Debug, Clone)]
enum Register {
    /// `𝕀/d`, invariant under the unitary.
    MaximallyMixed,
    /// Energy-basis factor with orthogonal columns, `ρ = A A†`, valid at
    /// `Engine::t_state`.
    Factor(Mat<C64>),
}

/// State of one monitored trajectory under a fixed realization.
#[derive(Debug, Clone)]
pub struct TrajectoryEngine<'h> {
    h: &'h SpectralHamiltonian,
    register: Register,
    t_state: f64,
    purity: f64,
    n_events: usize,
}

impl<'h> TrajectoryEngine<'h> {
    pub fn new(h: &'h SpectralHamiltonian, initial: InitialState) -> Self {
        let d = h.dim();
        match initial {
            InitialState::AllUp => {
                let v = h.eigenvectors();
                let a = Mat::from_fn(d, 1, |k, _| v[(0, k)].conj());
                Self { h, register: Register::Factor(a), t_state: 0.0, purity: 1.0, n_events: 0 }
            }
            InitialState::MaximallyMixed => Self {
                h,
                register: Register::MaximallyMixed,
                t_state: 0.0,
                purity: 1.0 / d as f64,
                n_events: 0,
            },
        }
    }

    /// Starts from an arbitrary state, given at time 0.
    pub fn from_state(h: &'h SpectralHamiltonian, state: &QuantumState) -> Result<Self> {
        if state.n_qubits() != h.n_qubits() {
            return Err(Error::Dimension { expected: h.n_qubits(), found: state.n_qubits() });
        }
        let e = state.to_basis(h, Basis::Energy)?;
        let a = match e.data() {
            StateData::Pure(c) => Mat::from_fn(c.len(), 1, |k, _| c[k]),
            StateData::Mixed(rho) => {
                let (vals, vecs) = linalg::hermitian_eigen(rho.as_ref())?;
                let max = vals.iter().cloned().fold(0.0, f64::max);
                let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > RANK_TOL * max).collect();
                Mat::from_fn(rho.nrows(), keep.len(), |i, c| vecs[(i, keep[c])] * vals[keep[c]].sqrt())
            }
        };
        let mut engine = Self { h, register: Register::Factor(a), t_state: 0.0, purity: 1.0, n_events: 0 };
        engine.renormalize_and_compress()?;
        Ok(engine)
    }

    /// Current purity; constant between events.
    pub fn purity(&self) -> f64 {
        self.purity
    }

    /// Rank of the carried factor (`dim` for the maximally mixed start).
    pub fn rank(&self) -> usize {
        match &self.register {
            Register::MaximallyMixed => self.h.dim(),
            Register::Factor(a) => a.ncols(),
        }
    }

    pub fn is_pure(&self) -> bool {
        self.rank() == 1
    }

    pub fn events_applied(&self) -> usize {
        self.n_events
    }

    /// Factor propagated to `t` and rotated to the computational basis.
    fn computational_factor(&self, a: &Mat<C64>, t: f64) -> Mat<C64> {
        let ph = self.h.phases(t - self.t_state);
        let shifted = Mat::from_fn(a.nrows(), a.ncols(), |k, c| a[(k, c)] * ph[k]);
        linalg::mul(self.h.eigenvectors(), shifted.as_ref())
    }

    /// Full state at time `t ≥` the last event, in the computational basis.
    pub fn state_at(&self, t: f64) -> QuantumState {
        let n = self.h.n_qubits();
        match &self.register {
            Register::MaximallyMixed => QuantumState::maximally_mixed(n),
            Register::Factor(a) => {
                let ac = self.computational_factor(a, t);
                let data = if ac.ncols() == 1 {
                    StateData::Pure((0..ac.nrows()).map(|x| ac[(x, 0)]).collect())
                } else {
                    StateData::Mixed(linalg::mul(ac.as_ref(), ac.adjoint()))
                };
                QuantumState::from_parts_unchecked(n, Basis::Computational, data)
            }
        }
    }

    /// Half-chain entropy at time `t`; requires a pure state.
    pub fn entropy_at(&self, t: f64) -> Result<EntropyValue> {
        match &self.register {
            Register::Factor(a) if a.ncols() == 1 => {
                let ac = self.computational_factor(a, t);
                let psi: Vec<C64> = (0..ac.nrows()).map(|x| ac[(x, 0)]).collect();
                observables::half_chain_entropy(&psi, self.h.n_qubits())
            }
            _ => Err(Error::Precondition("entropy requested for a mixed state".into())),
        }
    }

    /// Measures `sites` at time `t`; an empty set leaves the state untouched.
    pub fn measure<R: Rng + ?Sized>(&mut self, t: f64, sites: &[usize], rng: &mut R) -> Result<Vec<u8>> {
        if sites.is_empty() {
            return Ok(Vec::new());
        }
        if t < self.t_state {
            return Err(Error::Precondition(format!(
                "measurement at t = {t} precedes the state time {}",
                self.t_state
            )));
        }
        let n = self.h.n_qubits();
        check_sites(n, sites)?;
        let d = self.h.dim();
        let v = self.h.eigenvectors();

        let (alive, block, outcomes) = match &self.register {
            Register::MaximallyMixed => {
                let pops = vec![1.0 / d as f64; d];
                let s = sample_outcomes(&pops, n, sites, rng)?;
                let alive: Vec<usize> = (0..d).filter(|&x| x & s.mask == s.value).collect();
                let m = alive.len();
                let w = 1.0 / (m as f64).sqrt();
                let block = Mat::from_fn(m, m, |i, j| if i == j { C64::new(w, 0.0) } else { ZERO });
                (alive, block, s.outcomes)
            }
            Register::Factor(a) => {
                let ac = self.computational_factor(a, t);
                let r = ac.ncols();
                let pops: Vec<f64> =
                    (0..d).map(|x| (0..r).map(|c| ac[(x, c)].norm_sqr()).sum()).collect();
                let s = sample_outcomes(&pops, n, sites, rng)?;
                let alive: Vec<usize> = (0..d).filter(|&x| x & s.mask == s.value).collect();
                let scale = 1.0 / s.weight.sqrt();
                let block = Mat::from_fn(alive.len(), r, |i, c| ac[(alive[i], c)] * scale);
                (alive, block, s.outcomes)
            }
        };

        // back to the energy basis: A = V_K† B with V_K the alive rows of V
        let vk = Mat::from_fn(alive.len(), d, |i, k| v[(alive[i], k)]);
        let a_new = linalg::mul(vk.adjoint(), block.as_ref());
        self.register = Register::Factor(a_new);
        self.t_state = t;
        self.n_events += 1;
        self.renormalize_and_compress()?;
        Ok(outcomes)
    }

    /// Orthogonalizes the factor columns, drops negligible directions and
    /// refreshes the cached purity.
    fn renormalize_and_compress(&mut self) -> Result<()> {
        let Register::Factor(a) = &self.register else {
            return Ok(());
        };
        let d = self.h.dim();
        let r = a.ncols();
        let trace = linalg::frobenius_sq(a.as_ref());
        if (trace - 1.0).abs() > CHECK_TOL {
            return Err(Error::Consistency(format!("trace {trace} after projection")));
        }
        if r == 1 {
            let s = 1.0 / trace.sqrt();
            let a = Mat::from_fn(d, 1, |k, _| a[(k, 0)] * s);
            self.register = Register::Factor(a);
            self.purity = 1.0;
            return Ok(());
        }
        let gram = linalg::mul(a.adjoint(), a.as_ref());
        let (vals, vecs) = linalg::hermitian_eigen(gram.as_ref())?;
        let max = vals.iter().cloned().fold(0.0, f64::max);
        if vals[0] < -CHECK_TOL * max.max(1.0) {
            return Err(Error::Consistency(format!("negative weight {:e} in factor", vals[0])));
        }
        let keep: Vec<usize> = (0..r).rev().filter(|&k| vals[k] > RANK_TOL * max).collect();
        let total: f64 = keep.iter().map(|&k| vals[k]).sum();
        let q = Mat::from_fn(r, keep.len(), |i, c| vecs[(i, keep[c])]);
        let mut a_new = linalg::mul(a.as_ref(), q.as_ref());
        let s = 1.0 / total.sqrt();
        for c in 0..a_new.ncols() {
            for k in 0..d {
                a_new[(k, c)] *= s;
            }
        }
        self.purity = keep.iter().map(|&k| (vals[k] / total).powi(2)).sum::<f64>();
        let floor = 1.0 / d as f64;
        if self.purity < floor - CHECK_TOL || self.purity > 1.0 + CHECK_TOL {
            return Err(Error::Consistency(format!("purity {} outside [1/d, 1]", self.purity)));
        }
        self.register = Register::Factor(a_new);
        Ok(())
    }
}

/// Runs one monitored trajectory and records the requested observables.
pub fn run_trajectory(
    h: &SpectralHamiltonian,
    cfg: &TrajectoryConfig,
    observables: &[Observable],
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let want_entropy = observables.contains(&Observable::HalfChainEntropy);
    let want_purity = observables.contains(&Observable::Purity);
    if want_entropy && cfg.initial != InitialState::AllUp {
        return Err(Error::Precondition("half-chain entropy is only recorded for pure starts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut engine = TrajectoryEngine::new(h, cfg.initial);
    let n_sites = h.n_qubits();
    let r_m = cfg.rate_per_step();
    let stride = cfg.record_stride();
    let n_steps = cfg.n_steps();

    let mut series = Series {
        t: Vec::new(),
        s_half: want_entropy.then(Vec::new),
        purity: want_purity.then(Vec::new),
    };
    let mut events = Vec::new();

    let record = |engine: &TrajectoryEngine<'_>, t: f64, n_ev: usize, series: &mut Series| -> Result<()> {
        series.t.push(t);
        if let Some(s) = series.s_half.as_mut() {
            let v = engine.entropy_at(t).map_err(|e| invalid(t, n_ev, e))?;
            s.push(v.s_half);
        }
        if let Some(p) = series.purity.as_mut() {
            p.push(engine.purity());
        }
        Ok(())
    };

    record(&engine, 0.0, 0, &mut series)?;
    for k in 1..=n_steps {
        let t = k as f64 * cfg.dt;
        if r_m > 0.0 && schedule_step(&mut rng, r_m) {
            let sites = sample_measured_sites(&mut rng, n_sites, cfg.p_m);
            let outcomes = engine
                .measure(t, &sites, &mut rng)
                .map_err(|e| invalid(t, events.len(), e))?;
            events.push(MeasurementEvent { t, sites, outcomes });
        }
        if k % stride == 0 {
            record(&engine, t, events.len(), &mut series)?;
        }
    }

    Ok(TrajectoryRecord { seed: cfg.seed, config: cfg.clone(), events, series })
}

fn invalid(time: f64, event: usize, e: Error) -> Error {
    match e {
        e @ Error::InvalidState { .. } => e,
        other => Error::InvalidState { time, event, reason: other.to_string() },
    }
}
