//! Ensemble statistics, entanglement growth rate, steady states and the
//! purification-rate fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Observable, TrajectoryRecord};

/// Fraction of samples forming the tail window.
pub const TAIL_FRACTION: f64 = 0.1;
/// Tail slope must stay below this fraction of the peak slope.
pub const PLATEAU_SLOPE_RATIO: f64 = 0.01;
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_batch: Vec<f64>,
    pub n_runs: usize,
    pub n_batches: usize,
}

impl EnsembleSeries {
    /// Standard error of the mean at every grid point.
    pub fn stderr(&self) -> Vec<f64> {
        let s = (self.n_batches as f64).sqrt();
        self.std_batch.iter().map(|v| v / s).collect()
    }
}

/// Mean and spread of batch means for scalar per-run values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: f64,
    pub std_batch: f64,
    pub stderr: f64,
}

fn batch_size(n_runs: usize, n_batches: usize) -> Result<usize> {
    if n_batches == 0 || n_runs == 0 {
        return Err(Error::Precondition("need at least one run and one batch".into()));
    }
    if n_runs % n_batches != 0 {
        return Err(Error::Precondition(format!(
            "{n_runs} runs cannot be split into {n_batches} equal batches"
        )));
    }
    Ok(n_runs / n_batches)
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt()
}

/// Batch statistics over per-run scalars; run `k` belongs to batch
/// `k / (n_runs / n_batches)`.
pub fn batch_stats(values: &[f64], n_batches: usize) -> Result<BatchStats> {
    let size = batch_size(values.len(), n_batches)?;
    let means: Vec<f64> = values.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std_batch = sample_std(&means);
    Ok(BatchStats { mean, std_batch, stderr: std_batch / (n_batches as f64).sqrt() })
}

/// Pointwise ensemble mean with batch-mean spread.
pub fn ensemble_average_series(t: &[f64], runs: &[&[f64]], n_batches: usize) -> Result<EnsembleSeries> {
    let size = batch_size(runs.len(), n_batches)?;
    for (k, r) in runs.iter().enumerate() {
        if r.len() != t.len() {
            return Err(Error::Alignment(format!(
                "run {k} has {} samples, grid has {}",
                r.len(),
                t.len()
            )));
        }
    }
    let n = runs.len() as f64;
    let mut mean = vec![0.0; t.len()];
    let mut std_batch = vec![0.0; t.len()];
    let mut bm = vec![0.0; n_batches];
    for i in 0..t.len() {
        for (b, chunk) in runs.chunks(size).enumerate() {
            bm[b] = chunk.iter().map(|r| r[i]).sum::<f64>() / size as f64;
        }
        mean[i] = runs.iter().map(|r| r[i]).sum::<f64>() / n;
        std_batch[i] = sample_std(&bm);
    }
    Ok(EnsembleSeries { t: t.to_vec(), mean, std_batch, n_runs: runs.len(), n_batches })
}

/// Ensemble average of one observable over trajectory records.
pub fn ensemble_average(
    records: &[TrajectoryRecord],
    observable: Observable,
    n_batches: usize,
) -> Result<EnsembleSeries> {
    let Some(first) = records.first() else {
        return Err(Error::Precondition("no records to average".into()));
    };
    let t = &first.series.t;
    let mut runs = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        let aligned = r.series.t.len() == t.len()
            && r.series.t.iter().zip(t).all(|(a, b)| (a - b).abs() <= GRID_TOL * b.abs().max(1.0));
        if !aligned {
            return Err(Error::Alignment(format!("record {k} uses a different time grid")));
        }
        let s = r
            .series_of(observable)
            .ok_or_else(|| Error::Alignment(format!("record {k} lacks {observable:?}")))?;
        runs.push(s);
    }
    ensemble_average_series(t, &runs, n_batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: Option<f64>,
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Alignment(format!("{} abscissae for {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Precondition("linear fit needs two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(LinearFit { slope, intercept, r_squared })
}

/// Diagnostics of an entanglement-growth-rate extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgrEstimate {
    pub gamma_egr: f64,
    pub s_inf: f64,
    pub t_quarter: f64,
    pub t_three_quarter: f64,
    pub tail_slope: f64,
    pub peak_slope: f64,
}

fn tail_len(n: usize) -> usize {
    ((n as f64 * TAIL_FRACTION).ceil() as usize).clamp(2, n)
}

fn first_upward_crossing(t: &[f64], s: &[f64], level: f64) -> Result<f64> {
    if s[0] >= level {
        return Err(Error::Extraction(format!(
            "series starts at {} above the level {level}",
            s[0]
        )));
    }
    for k in 0..s.len() - 1 {
        if s[k] < level && s[k + 1] >= level {
            let f = (level - s[k]) / (s[k + 1] - s[k]);
            return Ok(t[k] + f * (t[k + 1] - t[k]));
        }
    }
    Err(Error::Extraction(format!("series never reaches {level}")))
}

/// Average growth rate between the quarter and three-quarter saturation
/// crossings of an unmonitored mean entropy curve.
pub fn gamma_egr(t: &[f64], s: &[f64]) -> Result<EgrEstimate> {
    if t.len() != s.len() {
        return Err(Error::Alignment(format!("{} times for {} values", t.len(), s.len())));
    }
    let n = s.len();
    if n < 10 {
        return Err(Error::Extraction(format!("{n} samples are too few for a plateau check")));
    }
    let peak_slope = (0..n - 1)
        .map(|k| (s[k + 1] - s[k]) / (t[k + 1] - t[k]))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(peak_slope > 0.0) {
        return Err(Error::Extraction("series never rises".into()));
    }
    let m = tail_len(n);
    let tail = linear_fit(&t[n - m..], &s[n - m..])?;
    if tail.slope.abs() >= PLATEAU_SLOPE_RATIO * peak_slope {
        return Err(Error::Extraction(format!(
            "no plateau: tail slope {:.3e} vs peak slope {:.3e}",
            tail.slope, peak_slope
        )));
    }
    let s_inf = s[n - m..].iter().sum::<f64>() / m as f64;
    let t_quarter = first_upward_crossing(t, s, 0.25 * s_inf)?;
    let t_three_quarter = first_upward_crossing(t, s, 0.75 * s_inf)?;
    if t_three_quarter <= t_quarter {
        return Err(Error::Extraction(format!(
            "crossings out of order: {t_quarter} then {t_three_quarter}"
        )));
    }
    Ok(EgrEstimate {
        gamma_egr: 0.5 * s_inf / (t_three_quarter - t_quarter),
        s_inf,
        t_quarter,
        t_three_quarter,
        tail_slope: tail.slope,
        peak_slope,
    })
}

/// Mean over the final tenth of the samples with `t ≤ t_inf`.
pub fn steady_state_value(t: &[f64], y: &[f64], t_inf: f64) -> Result<f64> {
    if t.len() != y.len() || t.is_empty() {
        return Err(Error::Alignment(format!("{} times for {} values", t.len(), y.len())));
    }
    let last = *t.last().unwrap();
    if t_inf > last + GRID_TOL * last.abs().max(1.0) || t_inf < t[0] {
        return Err(Error::Range(format!("t_inf = {t_inf} outside [{}, {last}]", t[0])));
    }
    let upto = t.iter().take_while(|&&v| v <= t_inf + GRID_TOL * t_inf.abs().max(1.0)).count();
    let m = ((upto as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, upto);
    Ok(y[upto - m..upto].iter().sum::<f64>() / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lambda: f64,
    pub alpha: f64,
    /// `None` for a flat series.
    pub r_squared: Option<f64>,
}

const COARSE_POINTS: usize = 200;
const GOLDEN_RTOL: f64 = 1e-6;

/// Fits `purity(t) ≈ tanh(λ t + α)` with `tanh α = 1/d` held fixed, for
/// `λ ∈ [0, lambda_max]`.
pub fn tanh_fit(t: &[f64], purity: &[f64], d: usize, lambda_max: f64) -> Result<FitResult> {
    if t.len() != purity.len() || t.is_empty() {
        return Err(Error::Alignment(format!("{} times for {} values", t.len(), purity.len())));
    }
    if d < 2 {
        return Err(Error::Precondition(format!("dimension {d} < 2")));
    }
    if !(lambda_max >= 0.0) || !lambda_max.is_finite() {
        return Err(Error::Precondition(format!("invalid lambda_max {lambda_max}")));
    }
    let alpha = (1.0 / d as f64).atanh();
    let mean = purity.iter().sum::<f64>() / purity.len() as f64;
    let ss_tot: f64 = purity.iter().map(|p| (p - mean).powi(2)).sum();
    if ss_tot < 1e-12 {
        return Ok(FitResult { lambda: 0.0, alpha, r_squared: None });
    }
    let sse = |lam: f64| -> f64 {
        t.iter().zip(purity).map(|(&x, &y)| (y - (lam * x + alpha).tanh()).powi(2)).sum()
    };
    if lambda_max == 0.0 {
        return Ok(FitResult { lambda: 0.0, alpha, r_squared: Some(1.0 - sse(0.0) / ss_tot) });
    }

    // bracket the global minimum on a coarse grid, then refine
    let step = lambda_max / COARSE_POINTS as f64;
    let best = (0..=COARSE_POINTS)
        .map(|k| (k, sse(k as f64 * step)))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
        .0;
    let mut a = best.saturating_sub(1) as f64 * step;
    let mut b = ((best + 1).min(COARSE_POINTS)) as f64 * step;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (sse(c), sse(e));
    while (b - a) > GOLDEN_RTOL * 0.5 * (a + b).abs() && (b - a) > 1e-300 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = sse(e);
        }
    }
    let mut lambda = 0.5 * (a + b);
    // the interval ends are admissible too
    for cand in [0.0, lambda_max] {
        if sse(cand) < sse(lambda) {
            lambda = cand;
        }
    }
    Ok(FitResult { lambda, alpha, r_squared: Some(1.0 - sse(lambda) / ss_tot) })
}
