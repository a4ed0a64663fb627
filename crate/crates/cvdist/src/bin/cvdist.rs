//! Command-line harness: parameter sweeps, the Monte Carlo/oracle
//! verification gate, and efficiency calibration.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 verification-gate
//! failure (including oracle non-convergence, reported distinctly), 4 empty
//! ensemble. Progress goes to stderr; data goes to files and stdout only.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cvdist::config;
use cvdist::sweep::{self, SweepSpec};
use cvdist::Error;

#[derive(Parser, Debug)]
#[command(
    name = "cvdist",
    version,
    about = "Simulate, sweep and verify conditional continuous-variable \
             entanglement distillation"
)]
struct Cli {
    /// Flat key = value config file (CLI flags override it).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Phase-noise strengths sigma_pn (comma-separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    sigma: Option<Vec<f64>>,

    /// Trigger thresholds Q, strictly increasing; 'inf' = undistilled.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    q_grid: Option<Vec<f64>>,

    /// Shots per grid point.
    #[arg(long)]
    shots: Option<u64>,

    /// RNG seed (identical seed + spec => byte-identical datasets).
    #[arg(long)]
    seed: Option<u64>,

    /// Per-beam efficiency in (0, 1].
    #[arg(long)]
    eta: Option<f64>,

    /// Input squeezing in dB (positive).
    #[arg(long)]
    squeezing_db: Option<f64>,

    /// Input antisqueezing in dB (>= squeezing).
    #[arg(long)]
    antisqueezing_db: Option<f64>,

    /// Datasets to emit: fig2a|fig2b|fig3|fig4|all.
    #[arg(long)]
    datasets: Option<String>,

    /// Output directory for dataset files and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Gauss-Hermite order for oracle evaluations.
    #[arg(long)]
    gh_order: Option<usize>,

    /// Verification sampling: per-setting|joint.
    #[arg(long)]
    sampling_mode: Option<String>,

    /// Compare Monte Carlo against the oracle over the grid instead of
    /// emitting datasets; prints the report as JSON to stdout.
    #[arg(long)]
    verify: bool,

    /// Solve for the efficiency giving this no-noise undistilled total
    /// variance, print it, and exit.
    #[arg(long)]
    calibrate_eta: Option<f64>,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}

fn report_error(e: &Error) {
    match e {
        Error::OracleConvergence(_) => {
            // distinct from a Monte Carlo disagreement: the reference
            // itself is unreliable, no z-score is meaningful
            eprintln!("cvdist: oracle self-check failed (not a Monte Carlo mismatch)");
            eprintln!("cvdist: {e}");
        }
        _ => eprintln!("cvdist: {e}"),
    }
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::InvalidConfig(_) => ExitCode::from(2),
        Error::OracleConvergence(_) => ExitCode::from(3),
        Error::EmptyEnsemble { .. } => ExitCode::from(4),
        _ => ExitCode::FAILURE,
    }
}

fn run() -> Result<ExitCode, Error> {
    let cli = Cli::parse();
    init_workers()?;

    if let Some(target) = cli.calibrate_eta {
        let squeezing = cli.squeezing_db.unwrap_or_else(|| {
            cli.config
                .as_ref()
                .and_then(|p| config::load_spec(p).ok())
                .map(|s| s.base.squeezing_db)
                .unwrap_or_else(|| SweepSpec::default().base.squeezing_db)
        });
        let eta = sweep::calibrate_eta(target, squeezing)?;
        println!("{eta}");
        return Ok(ExitCode::SUCCESS);
    }

    let spec = build_spec(&cli)?;
    spec.validate()?;

    if cli.verify {
        let points = spec.sigma_list.len() * spec.q_grid.len();
        eprintln!(
            "verifying {points} grid point(s) at {} shots each (gh_order {})",
            spec.base.n_shots, spec.gh_order
        );
        let report = sweep::verify(&spec)?;
        for p in &report.points {
            eprintln!(
                "  sigma_pn = {:<6} Q = {:<8} max |z| = {:.3} (oracle delta {:.2e})",
                p.sigma_pn, p.q, p.max_abs_z, p.convergence_delta
            );
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Numerical(format!("JSON encoding failed: {e}")))?
        );
        if report.pass {
            eprintln!("verify: PASS (max |z| = {:.3} <= {})", report.max_abs_z, report.z_gate);
            Ok(ExitCode::SUCCESS)
        } else {
            eprintln!(
                "verify: FAIL (max |z| = {:.3} > {}): Monte Carlo disagrees with the oracle",
                report.max_abs_z, report.z_gate
            );
            Ok(ExitCode::from(3))
        }
    } else {
        let points = spec.sigma_list.len() * spec.q_grid.len();
        eprintln!(
            "sweeping {points} grid point(s) at {} shots each into {}",
            spec.base.n_shots,
            spec.out_dir.display()
        );
        let out = sweep::run_sweep(&spec)?;
        for f in &out.files {
            eprintln!("  wrote {}", f.display());
        }
        if out.rows.iter().all(|r| r.n_accepted == 0) {
            eprintln!("cvdist: every grid point produced an empty ensemble");
            return Ok(ExitCode::from(4));
        }
        let starved = out.rows.iter().filter(|r| r.low_stats).count();
        if starved > 0 {
            eprintln!("cvdist: {starved} low-stats point(s) flagged in the output");
        }
        Ok(ExitCode::SUCCESS)
    }
}

fn build_spec(cli: &Cli) -> Result<SweepSpec, Error> {
    let mut spec = match &cli.config {
        Some(path) => config::load_spec(path)?,
        None => SweepSpec::default(),
    };
    if let Some(v) = &cli.sigma {
        spec.sigma_list = v.clone();
    }
    if let Some(v) = &cli.q_grid {
        spec.q_grid = v.clone();
    }
    if let Some(v) = cli.shots {
        spec.base.n_shots = v;
    }
    if let Some(v) = cli.seed {
        spec.base.seed = v;
    }
    if let Some(v) = cli.eta {
        spec.base.eta = v;
    }
    if let Some(v) = cli.squeezing_db {
        spec.base.squeezing_db = v;
    }
    if let Some(v) = cli.antisqueezing_db {
        spec.base.antisqueezing_db = v;
    }
    if let Some(v) = &cli.datasets {
        spec.outputs = v.parse()?;
    }
    if let Some(v) = &cli.out {
        spec.out_dir = v.clone();
    }
    if let Some(v) = cli.gh_order {
        spec.gh_order = v;
    }
    if let Some(v) = &cli.sampling_mode {
        spec.base.sampling_mode = config::parse_sampling_mode(v)?;
    }
    Ok(spec)
}

/// CVDIST_WORKERS is the only environment override: it sets the Rayon pool
/// size (results are identical for any worker count, only speed changes).
fn init_workers() -> Result<(), Error> {
    let Ok(raw) = std::env::var("CVDIST_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "CVDIST_WORKERS must be a positive integer, got '{raw}'"
        ))
    })?;
    if n == 0 {
        return Err(Error::InvalidConfig(
            "CVDIST_WORKERS must be a positive integer, got '0'".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}
