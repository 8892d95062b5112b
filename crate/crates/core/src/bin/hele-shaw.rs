use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hele_shaw::config::{load_config, RunConfig};
use hele_shaw::harness::{self, RunStatus};
use hele_shaw::output;
use hele_shaw::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hele-shaw", version, about = "Two-species tissue growth with autophagy under a stiff pressure law")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Advance one configuration to T_final and write its outputs.
    Run(Common),
    /// Run every gamma in sweep.gammas and compare consecutive runs.
    Sweep(Common),
    /// Compare regularized runs for study.eps with the unregularized run.
    EpsStudy(Common),
    /// Barenblatt convergence benchmark over bench.grid_sizes.
    Bench(Common),
    /// Validate a configuration and print its derived constants.
    Check(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, overriding output.directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Pressure exponent, overriding model.gamma.
    #[arg(long, value_name = "N")]
    gamma: Option<f64>,
    /// Report invariant violations without stopping.
    #[arg(long)]
    permissive: bool,
}

fn load(args: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = load_config(&args.config)?;
    if let Some(g) = args.gamma {
        if !(g >= 1.0 && g.is_finite()) {
            return Err(Error::Argument(format!("--gamma must satisfy gamma >= 1, got {}", g)));
        }
        cfg.model.gamma = g;
    }
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    Ok((cfg, dir))
}

fn check(args: &Common) -> Result<()> {
    let (cfg, _) = load(args)?;
    let consts = harness::derived_constants(&cfg)?;
    let h7 = harness::h7_verdict(&cfg, &consts)?;
    println!("config_hash = {}", cfg.hash());
    println!("L = {}", consts.nutrient_ceiling);
    println!("G0 = {}", consts.g0);
    println!("M0 = {}", consts.m0);
    println!("d_crit = {}", consts.d_crit);
    println!(
        "H7 = {} (sigma = {}, measure = {}, threshold = {}, ratio = {})",
        if h7.pass { "pass" } else { "fail" },
        h7.sigma,
        h7.measure,
        h7.threshold,
        h7.ratio
    );
    if cfg.model.is_regularized() {
        let n0 = harness::initial_state(&cfg).n;
        let need = harness::cutoff_requirement(&cfg, &consts, &n0);
        println!("ell_cut = {} (required >= {})", cfg.model.ell_cut, need);
    }
    Ok(())
}

fn run(args: &Common) -> Result<()> {
    let (cfg, dir) = load(args)?;
    let out = harness::run(&cfg, args.permissive)?;
    harness::write_run_outputs(&cfg, &out, &dir)?;
    println!(
        "t = {} after {} steps ({:.3} s), mass {} -> {}",
        out.final_state().t,
        out.steps(),
        out.wall_clock,
        out.ledger.records[0].mass,
        out.ledger.records.last().map(|r| r.mass).unwrap_or(f64::NAN)
    );
    match out.error(args.permissive) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sweep(args: &Common) -> Result<()> {
    let (cfg, dir) = load(args)?;
    let report = harness::gamma_sweep(&cfg, &cfg.sweep.gammas, args.permissive)?;
    output::write_report(&dir.join("sweep.csv"), &harness::sweep_table(&report))?;
    let mut worst: Option<Error> = None;
    for (i, e) in report.entries.iter().enumerate() {
        let dist = report.v_distances.get(i).copied().flatten();
        println!(
            "gamma = {:>6}: {:<9} steps {:>7}  energy {:.6e}  excess {:.3e}  segregation {:.3e}  complementarity {:.3e}  v-distance {}  ({:.2} s)",
            e.gamma,
            match e.status {
                RunStatus::Completed => "ok",
                RunStatus::Violated => "violated",
                RunStatus::Failed(_) => "failed",
            },
            e.steps,
            e.weighted_energy,
            e.excess,
            e.segregation,
            e.complementarity,
            dist.map(|d| format!("{:.6e}", d)).unwrap_or_else(|| "-".into()),
            e.wall_clock
        );
        let err = match &e.status {
            RunStatus::Completed => None,
            RunStatus::Violated => Some(Error::Invariant(Vec::new())),
            RunStatus::Failed(m) => Some(Error::Solver(m.clone())),
        };
        if let Some(err) = err {
            if worst.as_ref().map_or(true, |w| err.exit_code() > w.exit_code()) {
                worst = Some(err);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn eps_study(args: &Common) -> Result<()> {
    let (cfg, dir) = load(args)?;
    let study = harness::eps_study(&cfg, &cfg.study_eps, args.permissive)?;
    output::write_report(&dir.join("eps_study.csv"), &harness::eps_table(&study))?;
    for r in &study.rows {
        println!(
            "eps = {:<8} distance {:.6e}  cutoff activations {}  min n {:.3e} (barrier {:.3e})",
            r.eps, r.distance, r.cutoff_activations, r.min_density, r.lower_barrier
        );
    }
    match study.rows.iter().find(|r| r.status != RunStatus::Completed) {
        Some(r) => Err(match &r.status {
            RunStatus::Failed(m) => Error::Solver(m.clone()),
            _ => Error::Invariant(Vec::new()),
        }),
        None => Ok(()),
    }
}

fn bench(args: &Common) -> Result<()> {
    let (cfg, dir) = load(args)?;
    let report = harness::barenblatt_benchmark(&cfg, &cfg.bench_grid_sizes)?;
    output::write_report(&dir.join("bench.csv"), &harness::bench_table(&report))?;
    for r in &report.rows {
        println!(
            "N = {:>5}: L1 error {:.6e}  order {}  mass drift {:.3e}  AB gap {:.3e} (floor {:.3e})",
            r.cells,
            r.l1_error,
            r.order.map(|o| format!("{:.3}", o)).unwrap_or_else(|| "-".into()),
            r.mass_drift,
            r.ab_gap,
            r.ab_floor
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::EpsStudy(a) => eps_study(a),
        Command::Bench(a) => bench(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
