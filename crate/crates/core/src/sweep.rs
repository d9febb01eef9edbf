//! Experiment configuration, orchestration and data files.
//!
//! Every mode is split into cells. A finished cell is written to
//! `OUT/cells/<key>.json` and listed in `OUT/manifest.json`; rerunning the same
//! configuration reuses those results, so an interrupted sweep resumes where
//! it stopped. Aggregated CSV or JSON outputs are regenerated from the cells
//! on every run.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    batch_stats, ensemble_average_series, gamma_egr, sample_std, steady_state_value, tanh_fit, BatchStats,
    EgrEstimate, EnsembleSeries, FitResult,
};
use crate::decoupling::{self, DecouplingSetup};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream, tag};
use crate::syk::{self, build_hamiltonian, sample_couplings, SpectralHamiltonian};
use crate::trajectory::{
    run_trajectory, InitialState, Observable, TrajectoryConfig, TrajectoryRecord, MAX_RATE_PER_STEP,
};

/// Significant digits of every float written to a data file.
pub const SIG_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Growth,
    Egr,
    Dynamics,
    PhaseEntanglement,
    PhasePurification,
    RateFit,
    Trace,
    Decoupling,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Growth,
        Mode::Egr,
        Mode::Dynamics,
        Mode::PhaseEntanglement,
        Mode::PhasePurification,
        Mode::RateFit,
        Mode::Trace,
        Mode::Decoupling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Growth => "growth",
            Mode::Egr => "egr",
            Mode::Dynamics => "dynamics",
            Mode::PhaseEntanglement => "phase-entanglement",
            Mode::PhasePurification => "phase-purification",
            Mode::RateFit => "rate-fit",
            Mode::Trace => "trace",
            Mode::Decoupling => "decoupling",
        }
    }

    fn uses_grid(self) -> bool {
        matches!(
            self,
            Mode::Dynamics | Mode::PhaseEntanglement | Mode::PhasePurification | Mode::RateFit | Mode::Trace
        )
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(vec![format!("unknown mode {s:?}")]))
    }
}

/// Full run configuration; the JSON config file has exactly these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub mode: Mode,
    pub n_majoranas: Vec<usize>,
    pub j: Vec<f64>,
    /// `Γ_m / Γ_egr` axis.
    pub gamma_ratio: Vec<f64>,
    pub p_m: Vec<f64>,
    pub dt: f64,
    pub t_max: Option<f64>,
    /// Steady-state time for the phase diagrams.
    pub t_inf: Option<f64>,
    pub record_interval: Option<f64>,
    pub runs: usize,
    pub batches: usize,
    /// Trajectories drawn per coupling realization; `runs` must be a
    /// multiple of it.
    pub trajectories_per_realization: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    /// Observable of the dynamics mode.
    pub observable: Observable,
    /// Skips the calibration pass when set.
    pub gamma_egr: Option<f64>,
    pub calibration_runs: usize,
    /// System sizes of the decoupling scan.
    pub n_system: Vec<usize>,
    /// Reference fractions of the decoupling scan.
    pub gamma_frac: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Growth,
            n_majoranas: vec![16],
            j: vec![1.0],
            gamma_ratio: log_space(0.05, 20.0, 10),
            p_m: lin_space(0.1, 1.0, 10),
            dt: 0.05,
            t_max: None,
            t_inf: None,
            record_interval: None,
            runs: 50,
            batches: 10,
            trajectories_per_realization: 1,
            seed: 0,
            workers: 0,
            out: PathBuf::from("out"),
            observable: Observable::HalfChainEntropy,
            gamma_egr: None,
            calibration_runs: 50,
            n_system: vec![4, 6, 8],
            gamma_frac: vec![0.25, 0.5],
        }
    }
}

/// Field names accepted in a config document.
pub const CONFIG_FIELDS: [&str; 20] = [
    "mode",
    "n_majoranas",
    "j",
    "gamma_ratio",
    "p_m",
    "dt",
    "t_max",
    "t_inf",
    "record_interval",
    "runs",
    "batches",
    "trajectories_per_realization",
    "seed",
    "workers",
    "out",
    "observable",
    "gamma_egr",
    "calibration_runs",
    "n_system",
    "gamma_frac",
];

pub fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| round_sig(a + (b - a) * k as f64 / (n - 1) as f64)).collect(),
    }
}

pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let (la, lb) = (a.ln(), b.ln());
            (0..n).map(|k| round_sig((la + (lb - la) * k as f64 / (n - 1) as f64).exp())).collect()
        }
    }
}

/// Rounds to the written precision so that axis values survive a
/// round trip through the data files.
fn round_sig(x: f64) -> f64 {
    fmt_float(x).parse().unwrap_or(x)
}

/// Parses `a,b,c`, `start:stop:count` (linear, inclusive) or
/// `start:stop:count:log`.
pub fn parse_list_f64(text: &str) -> std::result::Result<Vec<f64>, String> {
    let text = text.trim();
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let log = match parts.len() {
            3 => false,
            4 if parts[3] == "log" => true,
            _ => return Err(format!("range {text:?} must be start:stop:count[:log]")),
        };
        let a: f64 = parts[0].parse().map_err(|_| format!("bad range start in {text:?}"))?;
        let b: f64 = parts[1].parse().map_err(|_| format!("bad range stop in {text:?}"))?;
        let n: usize = parts[2].parse().map_err(|_| format!("bad range count in {text:?}"))?;
        if log && (a <= 0.0 || b <= 0.0) {
            return Err(format!("log range {text:?} needs positive ends"));
        }
        Ok(if log { log_space(a, b, n) } else { lin_space(a, b, n) })
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number {s:?}")))
            .collect()
    }
}

pub fn parse_list_usize(text: &str) -> std::result::Result<Vec<usize>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad integer {s:?}")))
        .collect()
}

/// `%.9g`-style formatting.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_else(|| "nan".into())
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SweepConfig {
    /// Parses a config document, reporting every unknown field at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config(vec!["config document must be a JSON object".into()]))?;
        let unknown: Vec<String> = obj
            .keys()
            .filter(|k| !CONFIG_FIELDS.contains(&k.as_str()))
            .map(|k| format!("unknown field {k:?}"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(unknown));
        }
        let mut bad = Vec::new();
        let defaults = serde_json::to_value(SweepConfig::default())?;
        let mut merged = defaults.as_object().cloned().unwrap_or_default();
        for (k, v) in obj {
            let mut probe = merged.clone();
            probe.insert(k.clone(), v.clone());
            if serde_json::from_value::<SweepConfig>(serde_json::Value::Object(probe)).is_err() {
                bad.push(format!("field {k:?} has an invalid value {v}"));
            } else {
                merged.insert(k.clone(), v.clone());
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        Ok(serde_json::from_value(serde_json::Value::Object(merged))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Fills mode-dependent defaults and validates.
    pub fn resolve(mut self) -> Result<Self> {
        let j_min = self.j.iter().cloned().fold(f64::INFINITY, f64::min);
        let growth_t = growth_t_max(j_min);
        let t_default = match self.mode {
            Mode::Growth | Mode::Egr => growth_t,
            Mode::PhasePurification => 1000.0,
            _ => 200.0,
        };
        let t_max = *self.t_max.get_or_insert(t_default);
        if matches!(self.mode, Mode::PhaseEntanglement | Mode::PhasePurification) && self.t_inf.is_none() {
            self.t_inf = Some(t_max);
        }
        let ri_default = match self.mode {
            Mode::Growth | Mode::Egr => self.dt,
            _ => 0.5_f64.max(self.dt),
        };
        self.record_interval.get_or_insert(ri_default);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.runs == 0 {
            bad.push("runs must be positive".to_string());
        }
        if self.mode != Mode::Decoupling && (self.batches == 0 || self.runs % self.batches.max(1) != 0) {
            bad.push(format!("runs ({}) must be a positive multiple of batches ({})", self.runs, self.batches));
        }
        let tpr = self.trajectories_per_realization;
        if tpr == 0 || self.runs % tpr.max(1) != 0 {
            bad.push(format!(
                "runs ({}) must be a multiple of trajectories_per_realization ({tpr})",
                self.runs
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            bad.push(format!("dt must be positive, got {}", self.dt));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0) || !t.is_finite() {
                bad.push(format!("t_max must be positive, got {t}"));
            }
        }
        if let Some(ri) = self.record_interval {
            if !(ri >= self.dt * (1.0 - 1e-9)) {
                bad.push(format!("record_interval ({ri}) must be at least dt ({})", self.dt));
            }
        }
        if let (Some(ti), Some(tm)) = (self.t_inf, self.t_max) {
            if !(ti > 0.0) || ti > tm * (1.0 + 1e-12) {
                bad.push(format!("t_inf ({ti}) must lie in (0, t_max = {tm}]"));
            }
        }
        if let Some(g) = self.gamma_egr {
            if !(g > 0.0) || !g.is_finite() {
                bad.push(format!("gamma_egr must be positive, got {g}"));
            }
        }
        if self.mode != Mode::Decoupling {
            if self.n_majoranas.is_empty() {
                bad.push("n_majoranas is empty".into());
            }
            for &n in &self.n_majoranas {
                if n % 2 != 0 || !(syk::MIN_MAJORANAS..=syk::MAX_MAJORANAS).contains(&n) {
                    bad.push(format!(
                        "n_majoranas {n} must be even and within {}..={}",
                        syk::MIN_MAJORANAS,
                        syk::MAX_MAJORANAS
                    ));
                }
            }
            if self.j.is_empty() {
                bad.push("j is empty".into());
            }
            for &j in &self.j {
                if !(j >= 0.0) || !j.is_finite() {
                    bad.push(format!("j must be non-negative, got {j}"));
                }
            }
        }
        if self.mode.uses_grid() {
            if self.n_majoranas.len() > 1 || self.j.len() > 1 {
                bad.push(format!("mode {} takes a single n_majoranas and j", self.mode.as_str()));
            }
            if self.j.first().is_some_and(|&j| j == 0.0) && self.gamma_egr.is_none() {
                bad.push("j = 0 has no entanglement growth to calibrate against; set gamma_egr".into());
            }
            if self.gamma_ratio.is_empty() || !strictly_increasing(&self.gamma_ratio) {
                bad.push("gamma_ratio must be nonempty and strictly increasing".into());
            }
            if self.gamma_ratio.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
                bad.push("gamma_ratio values must be non-negative".into());
            }
        }
        if self.mode.uses_grid() || self.mode == Mode::Decoupling {
            if self.p_m.is_empty() || !strictly_increasing(&self.p_m) {
                bad.push("p_m must be nonempty and strictly increasing".into());
            }
            if self.p_m.iter().any(|p| !(0.0..=1.0).contains(p)) {
                bad.push("p_m values must lie in [0, 1]".into());
            }
        }
        if self.mode == Mode::Egr && self.j.iter().any(|&j| j == 0.0) {
            bad.push("egr mode needs j > 0".into());
        }
        if self.mode == Mode::Decoupling {
            if self.runs < 2 {
                bad.push("decoupling needs at least two Haar samples (runs)".into());
            }
            if self.n_system.is_empty() {
                bad.push("n_system is empty".into());
            }
            if self.gamma_frac.is_empty() {
                bad.push("gamma_frac is empty".into());
            }
            let p_max = self.p_m.iter().cloned().fold(0.0, f64::max);
            for &n in &self.n_system {
                for &g in &self.gamma_frac {
                    let s = DecouplingSetup { n_system: n, gamma: g, p_meas: p_max, n_haar_samples: self.runs };
                    if let Err(e) = s.validate() {
                        bad.push(format!("n_system {n}, gamma_frac {g}: {e}"));
                    }
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn execution(&self) -> Execution {
        Execution::from_workers(self.workers)
    }

    fn t_max(&self) -> f64 {
        self.t_max.expect("resolved config")
    }

    fn record_interval(&self) -> f64 {
        self.record_interval.expect("resolved config")
    }

    fn n_realizations(&self) -> usize {
        self.runs / self.trajectories_per_realization
    }

    /// The parts of the configuration that determine results.
    fn fingerprint(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.workers = 0;
        c.out = PathBuf::new();
        serde_json::to_value(c).expect("config serializes")
    }
}

/// Seed of coupling realization `k` at `(n, j)`.
pub fn realization_seed(master: u64, n_majoranas: usize, j: f64, k: usize) -> u64 {
    derive_seed(master, &[tag("couplings"), n_majoranas as u64, j.to_bits(), k as u64])
}

/// Seed of trajectory `i` on realization `k` in a named stream.
///
/// Cell coordinates are deliberately absent: every cell of a sweep replays
/// the same realizations and random streams.
pub fn trajectory_seed(master: u64, stream_tag: &str, k: usize, i: usize) -> u64 {
    derive_seed(master, &[tag("trajectory"), tag(stream_tag), k as u64, i as u64])
}

/// Coupling realizations `0..count` at `(n, j)`.
pub fn build_realizations(
    n_majoranas: usize,
    j: f64,
    count: usize,
    master: u64,
    exec: Execution,
) -> Result<Vec<SpectralHamiltonian>> {
    par::try_map(exec, count, |k| {
        let mut rng = stream(realization_seed(master, n_majoranas, j, k));
        build_hamiltonian(&sample_couplings(n_majoranas, j, &mut rng)?)
    })
}

/// Largest step not above `dt` keeping `Γ_m dt ≤ 0.1` and an integer number
/// of steps per record interval.
pub fn cell_dt(dt: f64, record_interval: f64, gamma_m: f64) -> f64 {
    let target = if gamma_m > 0.0 { dt.min(MAX_RATE_PER_STEP / gamma_m) } else { dt };
    let k = (record_interval / target - 1e-9).ceil().max(1.0);
    record_interval / k
}

/// An ensemble of trajectories on shared realizations.
#[derive(Debug, Clone)]
pub struct EnsembleSpec<'a> {
    pub realizations: &'a [SpectralHamiltonian],
    pub trajectories_per_realization: usize,
    /// Template; the per-run seed replaces `seed`.
    pub config: TrajectoryConfig,
    pub observable: Observable,
    pub master_seed: u64,
    pub stream: &'a str,
}

impl EnsembleSpec<'_> {
    pub fn n_runs(&self) -> usize {
        self.realizations.len() * self.trajectories_per_realization
    }

    fn run_config(&self, r: usize) -> (usize, TrajectoryConfig) {
        let tpr = self.trajectories_per_realization;
        let (k, i) = (r / tpr, r % tpr);
        let cfg = TrajectoryConfig { seed: trajectory_seed(self.master_seed, self.stream, k, i), ..self.config.clone() };
        (k, cfg)
    }

    /// Run `r` as a full record.
    pub fn record(&self, r: usize, observables: &[Observable]) -> Result<TrajectoryRecord> {
        let (k, cfg) = self.run_config(r);
        run_trajectory(&self.realizations[k], &cfg, observables)
    }

    /// Time grid and one series per run, in run order. Run `r` uses
    /// realization `r / trajectories_per_realization`.
    pub fn run(&self, exec: Execution) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let obs = [self.observable];
        let series = par::try_map(exec, self.n_runs(), |r| {
            let rec = self.record(r, &obs)?;
            Ok(rec.series_of(self.observable).map(|s| s.to_vec()).unwrap_or_default())
        })?;
        Ok((self.config.record_times(), series))
    }
}

fn initial_for(obs: Observable) -> InitialState {
    match obs {
        Observable::HalfChainEntropy => InitialState::AllUp,
        Observable::Purity => InitialState::MaximallyMixed,
    }
}

/// Unmonitored growth curve and its extracted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthResult {
    pub series: EnsembleSeries,
    pub estimate: Option<EgrEstimate>,
    /// Spread of per-batch rate estimates divided by `√batches`.
    pub stderr: Option<f64>,
}

/// Entropy growth from the all-up state without measurements.
pub fn unmonitored_growth(
    realizations: &[SpectralHamiltonian],
    t_max: f64,
    record_interval: f64,
    batches: usize,
    master: u64,
    exec: Execution,
) -> Result<GrowthResult> {
    let spec = EnsembleSpec {
        realizations,
        trajectories_per_realization: 1,
        config: TrajectoryConfig {
            dt: record_interval,
            t_max,
            gamma_m: 0.0,
            p_m: 0.0,
            record_interval,
            initial: InitialState::AllUp,
            seed: 0,
        },
        observable: Observable::HalfChainEntropy,
        master_seed: master,
        stream: "growth",
    };
    let (t, runs) = spec.run(exec)?;
    let refs: Vec<&[f64]> = runs.iter().map(|r| r.as_slice()).collect();
    let series = ensemble_average_series(&t, &refs, batches)?;
    let estimate = gamma_egr(&series.t, &series.mean).ok();
    let size = runs.len() / batches;
    let per_batch: Option<Vec<f64>> = refs
        .chunks(size)
        .map(|chunk| {
            let b = ensemble_average_series(&t, chunk, 1).ok()?;
            gamma_egr(&b.t, &b.mean).ok().map(|e| e.gamma_egr)
        })
        .collect();
    let stderr = per_batch
        .filter(|v| v.len() >= 2)
        .map(|v| sample_std(&v) / (v.len() as f64).sqrt());
    Ok(GrowthResult { series, estimate, stderr })
}

/// Unmonitored observation window: 40 coupling times, and never shorter
/// than 40 so the plateau tail is long enough to average out noise.
pub fn growth_t_max(j: f64) -> f64 {
    if j > 0.0 && j.is_finite() {
        40.0 * (1.0 / j).max(1.0)
    } else {
        40.0
    }
}

/// `Γ_egr` at `(n, j)` from `runs` unmonitored trajectories.
pub fn calibrate_gamma_egr(
    realizations: &[SpectralHamiltonian],
    j: f64,
    batches: usize,
    master: u64,
    exec: Execution,
) -> Result<EgrEstimate> {
    if !(j > 0.0) {
        return Err(Error::Precondition("calibration needs j > 0".into()));
    }
    let g = unmonitored_growth(realizations, growth_t_max(j), 0.05, batches, master, exec)?;
    g.estimate
        .ok_or_else(|| Error::Extraction("unmonitored growth curve gave no rate estimate".into()))
        .or_else(|_| gamma_egr(&g.series.t, &g.series.mean))
}

/// Per-cell result stored in the cell directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellResult {
    Calibration { estimate: EgrEstimate },
    Growth(GrowthResult),
    Series { series: EnsembleSeries },
    Steady { stats: BatchStats },
    Fit { fit: FitResult },
    Trace { files: Vec<String> },
    Decoupling { mean_eps: f64, stderr_eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    mode: Mode,
    master_seed: u64,
    config: serde_json::Value,
    completed: BTreeMap<String, String>,
}

/// Cell cache backed by the output directory.
struct Store {
    dir: PathBuf,
    manifest: Manifest,
    computed: usize,
    reused: usize,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Store {
    fn open(cfg: &SweepConfig) -> Result<Self> {
        let dir = cfg.out.clone();
        fs::create_dir_all(dir.join("cells"))?;
        let path = dir.join("manifest.json");
        let fresh = Manifest {
            mode: cfg.mode,
            master_seed: cfg.seed,
            config: cfg.fingerprint(),
            completed: BTreeMap::new(),
        };
        let manifest = if path.exists() {
            let old: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
            if old.mode != fresh.mode || old.master_seed != fresh.master_seed || old.config != fresh.config {
                return Err(Error::Config(vec![format!(
                    "{} holds results of a different configuration; choose another output directory",
                    dir.display()
                )]));
            }
            old
        } else {
            fresh
        };
        Ok(Self { dir, manifest, computed: 0, reused: 0 })
    }

    fn cell<F>(&mut self, key: &str, compute: F) -> Result<CellResult>
    where
        F: FnOnce() -> Result<CellResult>,
    {
        if let Some(file) = self.manifest.completed.get(key) {
            let path = self.dir.join("cells").join(file);
            if let Ok(text) = fs::read_to_string(&path) {
                if let Ok(r) = serde_json::from_str(&text) {
                    self.reused += 1;
                    return Ok(r);
                }
            }
        }
        let result = compute()?;
        let file = format!("{key}.json");
        write_atomic(&self.dir.join("cells").join(&file), &serde_json::to_string(&result)?)?;
        self.manifest.completed.insert(key.to_string(), file);
        write_atomic(&self.dir.join("manifest.json"), &serde_json::to_string_pretty(&self.manifest)?)?;
        self.computed += 1;
        Ok(result)
    }
}

/// Files written by a run and cache statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub gamma_egr: Option<f64>,
    pub computed_cells: usize,
    pub reused_cells: usize,
}

fn header(cfg: &SweepConfig, gamma_egr: Option<f64>) -> Result<String> {
    let mut h = String::new();
    writeln!(h, "# mode: {}", cfg.mode.as_str()).ok();
    writeln!(h, "# master_seed: {}", cfg.seed).ok();
    if let Some(g) = gamma_egr {
        writeln!(h, "# gamma_egr: {}", fmt_float(g)).ok();
    }
    writeln!(h, "# config: {}", serde_json::to_string(&cfg.fingerprint())?).ok();
    Ok(h)
}

fn write_csv(
    path: &Path,
    cfg: &SweepConfig,
    gamma_egr: Option<f64>,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut text = header(cfg, gamma_egr)?;
    text.push_str(&columns.join(","));
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    write_atomic(path, &text)
}

fn series_rows(s: &EnsembleSeries) -> Vec<Vec<String>> {
    (0..s.t.len())
        .map(|i| vec![fmt_float(s.t[i]), fmt_float(s.mean[i]), fmt_float(s.std_batch[i])])
        .collect()
}

fn label(x: f64) -> String {
    fmt_float(x)
}

/// Runs the configured experiment and writes its outputs under `cfg.out`.
pub fn run_mode(cfg: &SweepConfig) -> Result<RunSummary> {
    let cfg = cfg.clone().resolve()?;
    let mut store = Store::open(&cfg)?;
    let (outputs, gamma) = match cfg.mode {
        Mode::Growth | Mode::Egr => run_growth(&cfg, &mut store)?,
        Mode::Decoupling => (run_decoupling(&cfg, &mut store)?, None),
        _ => run_grid(&cfg, &mut store)?,
    };
    Ok(RunSummary { outputs, gamma_egr: gamma, computed_cells: store.computed, reused_cells: store.reused })
}

fn run_growth(cfg: &SweepConfig, store: &mut Store) -> Result<(Vec<PathBuf>, Option<f64>)> {
    let exec = cfg.execution();
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.n_majoranas {
        for &j in &cfg.j {
            let key = format!("growth_n{n}_j{}", label(j));
            let cell = store.cell(&key, || {
                let hams = build_realizations(n, j, cfg.runs, cfg.seed, exec)?;
                Ok(CellResult::Growth(unmonitored_growth(
                    &hams,
                    cfg.t_max(),
                    cfg.record_interval(),
                    cfg.batches,
                    cfg.seed,
                    exec,
                )?))
            })?;
            let CellResult::Growth(g) = cell else {
                return Err(Error::Consistency(format!("cell {key} has the wrong kind")));
            };
            if cfg.mode == Mode::Growth {
                let path = cfg.out.join(format!("{key}.csv"));
                write_csv(&path, cfg, None, &["t", "mean", "std_batch"], &series_rows(&g.series))?;
                outputs.push(path);
            } else {
                let e = g.estimate;
                rows.push(vec![
                    n.to_string(),
                    fmt_float(j),
                    fmt_opt(e.map(|e| e.gamma_egr)),
                    fmt_opt(g.stderr),
                    fmt_opt(e.map(|e| e.s_inf)),
                    fmt_opt(e.map(|e| e.t_quarter)),
                    fmt_opt(e.map(|e| e.t_three_quarter)),
                ]);
            }
        }
    }
    if cfg.mode == Mode::Egr {
        let path = cfg.out.join("egr.csv");
        write_csv(
            &path,
            cfg,
            None,
            &["n_majoranas", "j", "gamma_egr", "stderr", "s_inf", "t_quarter", "t_three_quarter"],
            &rows,
        )?;
        outputs.push(path);
    }
    Ok((outputs, None))
}

fn run_grid(cfg: &SweepConfig, store: &mut Store) -> Result<(Vec<PathBuf>, Option<f64>)> {
    let exec = cfg.execution();
    let n = cfg.n_majoranas[0];
    let j = cfg.j[0];
    let n_real = cfg.n_realizations();
    let need_calibration = cfg.gamma_egr.is_none();
    let count = if need_calibration { n_real.max(cfg.calibration_runs) } else { n_real };
    let hams: OnceCell<Vec<SpectralHamiltonian>> = OnceCell::new();
    let realizations = || -> Result<&Vec<SpectralHamiltonian>> {
        if let Some(h) = hams.get() {
            return Ok(h);
        }
        let h = build_realizations(n, j, count, cfg.seed, exec)?;
        Ok(hams.get_or_init(|| h))
    };

    let gamma_egr = match cfg.gamma_egr {
        Some(g) => g,
        None => {
            let key = format!("calibration_n{n}_j{}", label(j));
            let cal_batches = if cfg.calibration_runs % cfg.batches == 0 { cfg.batches } else { 1 };
            let cell = store.cell(&key, || {
                let h = realizations()?;
                let e = calibrate_gamma_egr(&h[..cfg.calibration_runs], j, cal_batches, cfg.seed, exec)?;
                Ok(CellResult::Calibration { estimate: e })
            })?;
            match cell {
                CellResult::Calibration { estimate } => estimate.gamma_egr,
                _ => return Err(Error::Consistency(format!("cell {key} has the wrong kind"))),
            }
        }
    };

    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    let t_max = cfg.t_max();
    let ri = cfg.record_interval();
    let d = 1usize << (n / 2);
    for &ratio in &cfg.gamma_ratio {
        for &p in &cfg.p_m {
            let gamma_m = ratio * gamma_egr;
            let base = TrajectoryConfig {
                dt: cell_dt(cfg.dt, ri, gamma_m),
                t_max,
                gamma_m,
                p_m: p,
                record_interval: ri,
                initial: InitialState::AllUp,
                seed: 0,
            };
            let key = format!("{}_g{}_p{}", cfg.mode.as_str(), label(ratio), label(p));
            match cfg.mode {
                Mode::Dynamics | Mode::PhaseEntanglement | Mode::PhasePurification | Mode::RateFit => {
                    let obs = match cfg.mode {
                        Mode::Dynamics => cfg.observable,
                        Mode::PhaseEntanglement => Observable::HalfChainEntropy,
                        _ => Observable::Purity,
                    };
                    let mode = cfg.mode;
                    let cell = store.cell(&key, || {
                        let h = realizations()?;
                        let spec = EnsembleSpec {
                            realizations: &h[..n_real],
                            trajectories_per_realization: cfg.trajectories_per_realization,
                            config: TrajectoryConfig { initial: initial_for(obs), ..base.clone() },
                            observable: obs,
                            master_seed: cfg.seed,
                            stream: mode.as_str(),
                        };
                        let (t, runs) = spec.run(exec)?;
                        match mode {
                            Mode::PhaseEntanglement | Mode::PhasePurification => {
                                let t_inf = cfg.t_inf.unwrap_or(t_max);
                                let values = runs
                                    .iter()
                                    .map(|r| steady_state_value(&t, r, t_inf))
                                    .collect::<Result<Vec<f64>>>()?;
                                Ok(CellResult::Steady { stats: batch_stats(&values, cfg.batches)? })
                            }
                            _ => {
                                let refs: Vec<&[f64]> = runs.iter().map(|r| r.as_slice()).collect();
                                let series = ensemble_average_series(&t, &refs, cfg.batches)?;
                                if mode == Mode::RateFit {
                                    let fit = tanh_fit(&series.t, &series.mean, d, 10.0 * gamma_m)?;
                                    Ok(CellResult::Fit { fit })
                                } else {
                                    Ok(CellResult::Series { series })
                                }
                            }
                        }
                    })?;
                    match cell {
                        CellResult::Series { series } => {
                            let tag = match obs {
                                Observable::HalfChainEntropy => "s_half",
                                Observable::Purity => "purity",
                            };
                            let path = cfg.out.join(format!("dynamics_{tag}_g{}_p{}.csv", label(ratio), label(p)));
                            write_csv(&path, cfg, Some(gamma_egr), &["t", "mean", "std_batch"], &series_rows(&series))?;
                            outputs.push(path);
                        }
                        CellResult::Steady { stats } => rows.push(vec![
                            fmt_float(ratio),
                            fmt_float(p),
                            fmt_float(stats.mean),
                            fmt_float(stats.stderr),
                        ]),
                        CellResult::Fit { fit } => rows.push(vec![
                            fmt_float(ratio),
                            fmt_float(p),
                            fmt_float(fit.lambda),
                            fmt_opt(fit.r_squared),
                        ]),
                        _ => return Err(Error::Consistency(format!("cell {key} has the wrong kind"))),
                    }
                }
                Mode::Trace => {
                    let out = cfg.out.clone();
                    let cell = store.cell(&key, || {
                        let h = realizations()?;
                        let mut files = Vec::new();
                        for r in 0..cfg.runs {
                            for (initial, obs) in [
                                (InitialState::AllUp, vec![Observable::HalfChainEntropy, Observable::Purity]),
                                (InitialState::MaximallyMixed, vec![Observable::Purity]),
                            ] {
                                let name = match initial {
                                    InitialState::AllUp => "pure",
                                    InitialState::MaximallyMixed => "mixed",
                                };
                                let spec = EnsembleSpec {
                                    realizations: &h[..n_real],
                                    trajectories_per_realization: cfg.trajectories_per_realization,
                                    config: TrajectoryConfig { initial, ..base.clone() },
                                    observable: obs[0],
                                    master_seed: cfg.seed,
                                    stream: if initial == InitialState::AllUp { "trace-pure" } else { "trace-mixed" },
                                };
                                let record = spec.record(r, &obs)?;
                                let doc = TraceDocument {
                                    record,
                                    master_seed: cfg.seed,
                                    gamma_egr,
                                    gamma_ratio: ratio,
                                    run: r,
                                    sweep_config: cfg.fingerprint(),
                                };
                                let file = format!("trace_{name}_g{}_p{}_run{r}.json", label(ratio), label(p));
                                write_atomic(&out.join(&file), &serde_json::to_string_pretty(&doc)?)?;
                                files.push(file);
                            }
                        }
                        Ok(CellResult::Trace { files })
                    })?;
                    if let CellResult::Trace { files } = cell {
                        outputs.extend(files.into_iter().map(|f| cfg.out.join(f)));
                    }
                }
                _ => unreachable!("grid modes only"),
            }
        }
    }
    let table = match cfg.mode {
        Mode::PhaseEntanglement => Some(("phase_entanglement.csv", ["gamma_ratio", "p_m", "steady_value", "stderr"])),
        Mode::PhasePurification => Some(("phase_purification.csv", ["gamma_ratio", "p_m", "steady_value", "stderr"])),
        Mode::RateFit => Some(("rate_fit.csv", ["gamma_ratio", "p_m", "lambda", "r_squared"])),
        _ => None,
    };
    if let Some((name, columns)) = table {
        let path = cfg.out.join(name);
        write_csv(&path, cfg, Some(gamma_egr), &columns, &rows)?;
        outputs.push(path);
    }
    Ok((outputs, Some(gamma_egr)))
}

/// Trace output: a trajectory record plus the sweep context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    #[serde(flatten)]
    pub record: TrajectoryRecord,
    pub master_seed: u64,
    pub gamma_egr: f64,
    pub gamma_ratio: f64,
    pub run: usize,
    pub sweep_config: serde_json::Value,
}

fn run_decoupling(cfg: &SweepConfig, store: &mut Store) -> Result<Vec<PathBuf>> {
    let exec = cfg.execution();
    let mut rows = Vec::new();
    for &gamma in &cfg.gamma_frac {
        for &p in &cfg.p_m {
            let mut cell_rows = Vec::new();
            for &n in &cfg.n_system {
                let setup = DecouplingSetup { n_system: n, gamma, p_meas: p, n_haar_samples: cfg.runs };
                let key = format!("decoupling_n{n}_g{}_p{}", label(gamma), label(p));
                let cell = store.cell(&key, || {
                    let (mean_eps, stderr_eps) = decoupling::cell_stats(&setup, cfg.seed, exec)?;
                    Ok(CellResult::Decoupling { mean_eps, stderr_eps })
                })?;
                let CellResult::Decoupling { mean_eps, stderr_eps } = cell else {
                    return Err(Error::Consistency(format!("cell {key} has the wrong kind")));
                };
                cell_rows.push((n, mean_eps, stderr_eps));
            }
            let slope = decoupling::scaling_slope(&cell_rows);
            for (n, m, s) in cell_rows {
                rows.push(vec![
                    n.to_string(),
                    fmt_float(gamma),
                    fmt_float(p),
                    fmt_float(m),
                    fmt_float(s),
                    fmt_opt(slope),
                ]);
            }
        }
    }
    let path = cfg.out.join("decoupling.csv");
    write_csv(
        &path,
        cfg,
        None,
        &["n_system", "gamma", "p_meas", "mean_eps", "stderr_eps", "slope"],
        &rows,
    )?;
    Ok(vec![path])
}

/// Reads the data rows of a CSV written by this module.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let columns = lines
        .next()
        .ok_or_else(|| Error::Alignment(format!("{} has no header", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((columns, rows))
}

/// Loads a stored cell result; used to inspect sweeps after the fact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
