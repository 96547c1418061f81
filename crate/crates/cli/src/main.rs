use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use soro_spt::config::Config;
use soro_spt::sim::{run_closed_loop, run_passive};
use soro_spt_cli::bench::{parse_n_list, run_benchmark, BenchOptions};
use soro_spt_cli::output::{emit_csv, Manifest};
use soro_spt_cli::report::validation_report;
use soro_spt_cli::{exit_code, threads_from_env, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "soro-spt", version, about = "Underwater soft-arm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the arm and write trajectory.csv and manifest.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Open loop, controller columns zero.
        #[arg(long)]
        passive: bool,
        /// Overrides integration.duration (s).
        #[arg(long)]
        duration: Option<f64>,
        /// Overrides integration.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time assembly and one control step for several section counts.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1,2,4,8,16", value_parser = parse_n_list)]
        n_list: NList,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the configuration and print derived quantities.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

// clap treats a literal `Vec` field as a repeated argument
type NList = Vec<usize>;

struct Failure {
    code: i32,
    message: String,
}

impl From<soro_spt::Error> for Failure {
    fn from(e: soro_spt::Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

fn load(path: &Path) -> Result<Config, Failure> {
    if !path.is_file() {
        return Err(usage(format!("cannot read config {}: no such file", path.display())));
    }
    Config::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = threads_from_env().map_err(usage)?;
    match cli.command {
        Command::Simulate {
            common,
            passive,
            duration,
            seed,
        } => {
            let config = load(&common.config)?;
            let mut doc = config.document().clone();
            if let Some(d) = duration {
                doc.integration.duration = d;
            }
            if let Some(s) = seed {
                doc.integration.seed = s;
            }
            let config = Config::from_document(doc).map_err(|e| usage(e.to_string()))?;
            let mut scenario = config.scenario()?;
            scenario.threads = threads;
            let traj = if passive {
                run_passive(&scenario)?
            } else {
                run_closed_loop(&scenario)?
            };
            for w in &traj.warnings {
                eprintln!("warning: {w}");
            }
            prepare_out(&common.out)?;
            let csv_path = common.out.join("trajectory.csv");
            emit_csv(&traj, &csv_path)?;
            Manifest::new(&config, &traj, passive, threads, "trajectory.csv")
                .write(&common.out.join("manifest.json"))?;
            println!(
                "{} samples, epsilon {:.6e}, |e1(end)| {:.6e} -> {}",
                traj.samples.len(),
                traj.split_epsilon,
                traj.last().map_or(f64::NAN, |s| s.e1.norm()),
                csv_path.display()
            );
        }
        Command::Benchmark {
            common,
            n_list,
            seed,
        } => {
            let config = load(&common.config)?;
            let opts = BenchOptions {
                threads,
                seed: seed.unwrap_or(config.integration().seed),
                ..Default::default()
            };
            let report = run_benchmark(&config, &n_list, &opts)?;
            prepare_out(&common.out)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&common.out.join("bench.json"), &(json + "\n"))?;
            write_file(&common.out.join("bench.csv"), &report.to_csv())?;
            println!("{:>4} {:>6} {:>14} {:>16}", "N", "nodes", "assemble_ns", "control_step_ns");
            for r in &report.rows {
                println!(
                    "{:>4} {:>6} {:>14.0} {:>16.0}",
                    r.n, r.nodes, r.assemble_ns, r.control_step_ns
                );
            }
            println!(
                "fit: slope {:.3} ns/node, intercept {:.0} ns, r^2 {:.4}",
                report.fit.slope, report.fit.intercept, report.fit.r_squared
            );
        }
        Command::Validate { config } => {
            let config = load(&config)?;
            print!("{}", validation_report(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
