use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use syk_mipt::sweep::{parse_list_f64, parse_list_usize, run_mode, Mode, SweepConfig};
use syk_mipt::trajectory::Observable;

type Sizes = Vec<usize>;
type Values = Vec<f64>;

/// Monitored SYK trajectories, phase diagrams and decoupling scans.
///
/// Lists accept `a,b,c`, `start:stop:count` or `start:stop:count:log`.
/// Values given on the command line override the `--config` file.
#[derive(Debug, Parser)]
#[command(name = "syk-mipt", version)]
struct Args {
    /// JSON file with any subset of the run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_parser = parse_list_usize)]
    n_majoranas: Option<Sizes>,
    #[arg(long, value_parser = parse_list_f64)]
    j: Option<Values>,
    /// Measurement rate in units of the unmonitored growth rate.
    #[arg(long, value_parser = parse_list_f64)]
    gamma_ratio: Option<Values>,
    #[arg(long, value_parser = parse_list_f64)]
    p_m: Option<Values>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Steady-state time of the phase diagrams; defaults to t_max.
    #[arg(long)]
    t_inf: Option<f64>,
    #[arg(long)]
    record_interval: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    trajectories_per_realization: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// 0 uses every core, 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dynamics observable: s-half or purity.
    #[arg(long, value_parser = parse_observable)]
    observable: Option<Observable>,
    /// Use this growth rate instead of calibrating.
    #[arg(long)]
    gamma_egr: Option<f64>,
    #[arg(long)]
    calibration_runs: Option<usize>,
    /// Decoupling system sizes.
    #[arg(long, value_parser = parse_list_usize)]
    n_system: Option<Sizes>,
    /// Decoupling reference fractions.
    #[arg(long, value_parser = parse_list_f64)]
    gamma_frac: Option<Values>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_observable(s: &str) -> std::result::Result<Observable, String> {
    match s {
        "s-half" | "s_half" | "entropy" => Ok(Observable::HalfChainEntropy),
        "purity" => Ok(Observable::Purity),
        _ => Err("expected s-half or purity".into()),
    }
}

fn merge(args: Args) -> Result<SweepConfig> {
    let mut c = match &args.config {
        Some(p) => SweepConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => SweepConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { c.$f = v; } )* };
    }
    macro_rules! set_opt {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { c.$f = Some(v); } )* };
    }
    set!(
        mode,
        n_majoranas,
        j,
        gamma_ratio,
        p_m,
        dt,
        runs,
        batches,
        trajectories_per_realization,
        seed,
        workers,
        out,
        observable,
        calibration_runs,
        n_system,
        gamma_frac
    );
    set_opt!(t_max, t_inf, record_interval, gamma_egr);
    Ok(c)
}

fn run() -> Result<()> {
    let cfg = merge(Args::parse())?;
    let summary = run_mode(&cfg)?;
    if let Some(g) = summary.gamma_egr {
        eprintln!("gamma_egr = {g}");
    }
    eprintln!("cells: {} computed, {} reused", summary.computed_cells, summary.reused_cells);
    for p in &summary.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
