use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use deepc_attack::assemble_nominal;
use deepc_attack::attack::attack_oracle;
use deepc_harness::closed_loop::{Experiment, RunError, RunResult};
use deepc_harness::config::{load_config, ExperimentConfig};
use deepc_harness::metrics::compute_metrics;
use deepc_harness::{output, sizes};

#[derive(Parser)]
#[command(
    name = "deepc",
    version,
    about = "Poisoning attacks on data-driven predictive control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the offline-data and attack seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the program of the first replanning instant to `<out>/qp/`.
    #[arg(long, global = true)]
    dump_qp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop experiment.
    Run { config: PathBuf },
    /// Print the adjoint least-squares sizes for the standard geometries.
    ReportSizes,
    /// Score sampled perturbations against the implicit attack at one
    /// replanning instant.
    Oracle { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => run(cli, config),
        Command::ReportSizes => report_sizes(),
        Command::Oracle { config } => oracle(cli, config),
    }
}

fn warn_rank(exp: &Experiment) {
    let (rank, rows) = exp.data_rank();
    if rank < rows {
        eprintln!("warning: [U_p; Y_p; U_f] has rank {rank} of {rows} rows; the data do not excite every direction");
    }
}

fn prepare(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.run.out.clone());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    Ok((cfg, out))
}

fn run(cli: &Cli, path: &Path) -> Result<()> {
    let (cfg, out) = prepare(cli, path)?;
    let exp = Experiment::new(cfg)?;
    warn_rank(&exp);
    let mut offline = fs::File::create(out.join("offline.csv"))?;
    exp.offline.write_csv(&mut offline)?;
    if cli.dump_qp {
        let instant = exp.problem_at_replan(0)?;
        output::dump_qp(&out.join("qp"), &assemble_nominal(&instant.problem))?;
    }
    match exp.run() {
        Ok(result) => {
            write_run(&exp, &out, &result)?;
            let summary = compute_metrics(&result, exp.config.metric_start());
            println!(
                "{} steps, {} replans, rms_y_1 = {:.6}; outputs in {}",
                result.steps.len(),
                result.replans.len(),
                summary.rms[0],
                out.display()
            );
            Ok(())
        }
        Err(RunError::Step { step, source, partial }) => {
            write_run(&exp, &out, &partial)?;
            bail!(
                "closed loop failed at step {step}: {source} (partial log written to {})",
                out.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

fn write_run(exp: &Experiment, out: &Path, result: &RunResult) -> Result<()> {
    output::write_trace(&out.join("trace.csv"), result)?;
    output::write_replans(&out.join("replans.csv"), result)?;
    output::write_perturbations(&out.join("perturbations.csv"), result)?;
    let cfg = &exp.config;
    let summary = compute_metrics(result, cfg.metric_start());
    let header = [
        ("mode", cfg.attack.mode.to_string()),
        ("rho", cfg.attack.rho.to_string()),
        ("data_seed", cfg.data.seed.to_string()),
        ("attack_seed", cfg.attack.seed.to_string()),
        ("steps", result.steps.len().to_string()),
    ];
    output::write_summary(&out.join("summary.txt"), &header, &summary)?;
    Ok(())
}

fn report_sizes() -> Result<()> {
    let rows = sizes::report_lsq_sizes(&sizes::standard_geometries())?;
    print!("{}", sizes::format_table(&rows));
    if let Some(r) = rows.iter().find(|r| r.formula != r.measured) {
        bail!(
            "measured size {} disagrees with formula {} for {:?}",
            r.measured,
            r.formula,
            r.geometry
        );
    }
    Ok(())
}

fn oracle(cli: &Cli, path: &Path) -> Result<()> {
    let (cfg, out) = prepare(cli, path)?;
    let exp = Experiment::new(cfg)?;
    warn_rank(&exp);
    let a = &exp.config.attack;
    let instant = exp.problem_at_replan(a.oracle_replan)?;
    if cli.dump_qp {
        output::dump_qp(&out.join("qp"), &assemble_nominal(&instant.problem))?;
    }
    let res = attack_oracle(
        &instant.problem,
        &instant.spec,
        a.oracle_samples,
        a.seed,
        &exp.settings,
        instant.warm.as_ref(),
    )?;
    output::write_oracle(&out.join("oracle.csv"), &res)?;
    let implicit_value = res
        .samples
        .iter()
        .find(|s| s.provenance == deepc_attack::attack::Provenance::Implicit)
        .map(|s| s.value);
    let sphere: Vec<f64> = res.sphere_samples().map(|s| s.value).collect();
    println!("step {}: nominal psi = {}", instant.step, res.implicit.nominal_value);
    if let Some(v) = implicit_value {
        let beaten = sphere.iter().filter(|s| **s < v).count();
        println!(
            "implicit attack psi = {v}; {beaten} of {} sphere samples do better",
            sphere.len()
        );
    }
    println!(
        "best psi = {} ({}), {} failed samples",
        res.best.value, res.best.provenance, res.failures
    );
    Ok(())
}
