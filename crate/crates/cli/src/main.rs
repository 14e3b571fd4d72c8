//! Command-line driver: run and validate configurations, summarize energy
//! audits, and run automated refinement studies.
//!
//! Exit codes: 0 success, 2 configuration/parse error, 3 runtime monitor
//! tripped (stability, positivity, dissipation sign), 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgdiff_core::config::RunConfig;
use sgdiff_core::runner;
use sgdiff_core::SimError;

#[derive(Parser)]
#[command(name = "sgdiff", about = "Self-gravitating viscous fluid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration to completion, writing the ledger CSV and
    /// snapshots into the output directory.
    Run {
        config: PathBuf,
    },
    /// Parse and validate a configuration, then echo its normalized form.
    Validate {
        config: PathBuf,
    },
    /// Print residual statistics for one or more ledger CSV files; with
    /// several files, also print observed convergence orders between
    /// consecutive files.
    EnergyReport {
        csvs: Vec<PathBuf>,
    },
    /// Automated refinement study on a configuration.
    Convergence {
        config: PathBuf,
        /// `dt` halves the step at fixed grid and reports energy-residual
        /// orders; `mass` refines h and dt jointly and reports total-mass
        /// drift orders.
        #[arg(long, default_value = "dt")]
        mode: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Steps at the coarsest level.
        #[arg(long, default_value_t = 50)]
        steps: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let summary = runner::run(&cfg)?;
            let last = summary.ledgers.last();
            println!(
                "completed {} steps to t = {:.6e}",
                summary.steps,
                summary.final_state.t
            );
            if let Some(l) = last {
                println!(
                    "final energies: kinetic {:.6e}, stored {:.6e}, gravitational {:.6e}, penalty {:.6e}",
                    l.kinetic, l.stored, l.grav_energy, l.penalty_energy
                );
            }
            if let Some(r) = summary.reports.last() {
                println!(
                    "conservation: total mass {:.9e}, min J {:.3e}, clamps {}",
                    r.total_mass, r.min_j, r.clamp_count
                );
            }
            println!("ledger written to {}", summary.csv_path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            print!("{}", cfg.dump());
            Ok(())
        }
        Command::EnergyReport { csvs } => {
            if csvs.is_empty() {
                return Err(SimError::config("csvs", "need at least one CSV file"));
            }
            let mut stats = Vec::new();
            for path in &csvs {
                let s = residual_stats(path)?;
                println!(
                    "{}: rows {}, mean dt {:.3e}, residual rms {:.6e} W, max {:.6e} W, max relative {:.6e}",
                    path.display(),
                    s.rows,
                    s.mean_dt,
                    s.rms,
                    s.max,
                    s.max_rel
                );
                stats.push(s);
            }
            for pair in stats.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                if a.mean_dt > 0.0 && b.mean_dt > 0.0 && a.mean_dt != b.mean_dt {
                    let order = (a.rms / b.rms).ln() / (a.mean_dt / b.mean_dt).ln();
                    println!("observed residual order between files: {order:.3}");
                }
            }
            Ok(())
        }
        Command::Convergence {
            config,
            mode,
            levels,
            steps,
        } => {
            let cfg = RunConfig::load(&config)?;
            match mode.as_str() {
                "dt" => {
                    let study = runner::dt_refinement_study(&cfg, levels, steps)?;
                    for (dt, rms) in study.dts.iter().zip(&study.rms_residuals) {
                        println!("dt {dt:.6e}: residual rms {rms:.6e} W");
                    }
                    for order in &study.orders {
                        println!("observed dt order: {order:.3}");
                    }
                    Ok(())
                }
                "mass" => {
                    let study = runner::mass_refinement_study(&cfg, levels, steps)?;
                    for (n, drift) in study.cells.iter().zip(&study.drifts) {
                        println!("n {n}: relative mass drift {drift:.6e}");
                    }
                    for order in &study.orders {
                        println!("observed mass-drift order: {order:.3}");
                    }
                    Ok(())
                }
                other => Err(SimError::config(
                    "mode",
                    format!("unknown study mode `{other}` (dt | mass)"),
                )),
            }
        }
    }
}

struct ResidualStats {
    rows: usize,
    mean_dt: f64,
    rms: f64,
    max: f64,
    max_rel: f64,
}

fn residual_stats(path: &PathBuf) -> Result<ResidualStats, SimError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SimError::Snapshot("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize, SimError> {
        cols.iter().position(|c| *c == name).ok_or_else(|| {
            SimError::Snapshot(format!("CSV is missing the `{name}` column"))
        })
    };
    let (i_dt, i_w, i_rel) = (find("dt")?, find("residual_w")?, find("residual_rel")?);
    let mut rows = 0usize;
    let mut sum_dt = 0.0;
    let mut sum_sq = 0.0;
    let mut max = 0.0f64;
    let mut max_rel = 0.0f64;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let dt: f64 = fields[i_dt].parse().unwrap_or(0.0);
        if dt <= 0.0 {
            continue; // initial row carries no balance
        }
        let w: f64 = fields[i_w].parse().unwrap_or(f64::NAN);
        let rel: f64 = fields[i_rel].parse().unwrap_or(f64::NAN);
        rows += 1;
        sum_dt += dt;
        sum_sq += w * w;
        max = max.max(w.abs());
        max_rel = max_rel.max(rel.abs());
    }
    Ok(ResidualStats {
        rows,
        mean_dt: if rows > 0 { sum_dt / rows as f64 } else { 0.0 },
        rms: if rows > 0 {
            (sum_sq / rows as f64).sqrt()
        } else {
            0.0
        },
        max,
        max_rel,
    })
}
