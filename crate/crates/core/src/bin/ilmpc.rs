//! Command-line driver for the iterative learning controller.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ilmpc::config::{Config, KCandidates};
use ilmpc::dataset::TrajectoryDataset;
use ilmpc::error::{Error, Result};
use ilmpc::io;
use ilmpc::orchestrator::{self, load_reports};
use ilmpc::solver::{cold_start, solve, OcpProblem};
use ilmpc::task::State;
use ilmpc::trainer::{
    construct_regions, estimate_violation_bounds, train_certificate, verify_certificate,
};

#[derive(Parser)]
#[command(name = "ilmpc", about = "Iterative learning MPC with neural terminal certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full iterative learning loop and write all artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a certificate/policy pair on a dataset file.
    TrainCert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_cert: PathBuf,
        #[arg(long)]
        out_policy: PathBuf,
        #[arg(long, requires = "prev_policy")]
        prev_cert: Option<PathBuf>,
        #[arg(long, requires = "prev_cert")]
        prev_policy: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve one finite-horizon problem from a given state.
    SolveOcp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Comma-separated state, e.g. "-6,0,0".
        #[arg(long)]
        state: String,
        /// Absolute time index for the discount weighting.
        #[arg(long, default_value_t = 0)]
        time: usize,
    },
    /// Check certificate conditions on fresh samples (and a dataset, if given).
    VerifyCert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Dataset for the sampling region and the data-consistency condition.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the certificate on a grid slice and write it as CSV.
    ExportHeatmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sampled-safe-set baseline on the same task.
    BenchBaseline {
        #[arg(long)]
        config: PathBuf,
        /// Candidate budget per step: a number or "all".
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the cost/time table of one or two finished runs.
    Summary {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        baseline_dir: Option<PathBuf>,
    },
}

fn parse_state(text: &str) -> Result<State> {
    let values: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    values
        .map(State)
        .map_err(|e| Error::Config(format!("cannot parse --state \"{text}\": {e}")))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let config = Config::load(&config)?;
            let ctx = config.run_context(seed, out)?;
            let artifacts = orchestrator::run_all(&ctx)?;
            let table =
                orchestrator::performance_summary(&[("proposed".into(), artifacts.reports)]);
            println!("{table}");
            println!("artifacts written to {}", artifacts.out_dir.display());
        }
        Command::TrainCert {
            config,
            dataset,
            out_cert,
            out_policy,
            prev_cert,
            prev_policy,
            seed,
        } => {
            let config = Config::load(&config)?;
            let task = config.task_spec()?;
            let data = TrajectoryDataset::load_jsonl(&dataset, &task)?;
            let previous = match (prev_cert, prev_policy) {
                (Some(c), Some(p)) => Some((io::load_certificate(&c)?, io::load_policy(&p)?)),
                _ => None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.run.seed));
            let weights = config.weights_struct();
            let outcome = train_certificate(
                &data,
                &task,
                &config.trainer,
                &weights,
                previous.as_ref().map(|(c, p)| (c, p)),
                &mut rng,
            )?;
            io::save_certificate(&outcome.certificate, &out_cert)?;
            io::save_policy(&outcome.policy, &out_policy)?;
            let s = &outcome.summary;
            println!(
                "trained {} steps (alpha {:.3}, mined {}/{} safe/unsafe)",
                s.steps, s.alpha, s.mined_safe, s.mined_unsafe
            );
            println!(
                "violation rate {:.4}, V(goal) {:.2e}, delta1_max {:.4}, delta2 {:.4}",
                s.final_report.violation_rate,
                s.final_report.goal_value,
                outcome.bounds.delta1_max,
                outcome.bounds.delta2
            );
        }
        Command::SolveOcp {
            config,
            cert,
            policy,
            state,
            time,
        } => {
            let config = Config::load(&config)?;
            let task = config.task_spec()?;
            let certificate = io::load_certificate(&cert)?;
            let policy = io::load_policy(&policy)?;
            let x = parse_state(&state)?;
            if task.in_unsafe(&x) {
                return Err(Error::Safety(format!("state {:?} is unsafe", x.0)));
            }
            let warm = cold_start(&policy, &task, &x)?;
            let problem = OcpProblem::new(&task, &certificate, x, time);
            let solution = solve(&problem, &warm, &config.solver)?;
            println!(
                "status {}  objective {:.6}  kkt {:.2e}  wall {:.2} ms",
                solution.status,
                solution.objective,
                solution.kkt_residual,
                solution.wall_time_ms
            );
            println!(
                "terminal residual {:.3e}  min obstacle margin {:.3e}",
                solution.terminal_residual, solution.min_obstacle_margin
            );
            for (k, u) in solution.inputs.iter().enumerate() {
                println!("u[{k}] = [{:.6}, {:.6}]", u.0[0], u.0[1]);
            }
        }
        Command::VerifyCert {
            config,
            cert,
            policy,
            dataset,
            n_test,
            seed,
        } => {
            let config = Config::load(&config)?;
            let task = config.task_spec()?;
            let certificate = io::load_certificate(&cert)?;
            let policy = io::load_policy(&policy)?;
            let n_test = n_test.unwrap_or(config.trainer.n_test);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.run.seed));

            let Some(dataset_path) = dataset else {
                // Without data there is no sampling region: only the
                // decrease-condition bound is measurable over the domain.
                let empty = TrajectoryDataset::new();
                let bounds = estimate_violation_bounds(
                    &certificate,
                    &policy,
                    &empty,
                    &task,
                    n_test,
                    &mut rng,
                )?;
                println!(
                    "delta1_max {:.4} over {} samples; no dataset given, delta2 = 0 (no pairs)",
                    bounds.delta1_max, bounds.n_validation
                );
                println!("hint: pass --dataset for the full per-condition report");
                return Ok(());
            };

            let data = TrajectoryDataset::load_jsonl(&dataset_path, &task)?;
            let regions = construct_regions(&data, &task, &config.trainer, &mut rng)?;
            let report =
                verify_certificate(&certificate, &policy, &task, &regions, &data, n_test, &mut rng)?;
            let bounds =
                estimate_violation_bounds(&certificate, &policy, &data, &task, n_test, &mut rng)?;
            println!("samples {}  pairs {}", report.n_samples, report.n_pairs);
            println!("overall violation rate {:.4}", report.violation_rate);
            println!("V(goal) {:.3e}", report.goal_value);
            let rows = [
                ("positivity", &report.positivity),
                ("safe_level", &report.safe_level),
                ("unsafe_level", &report.unsafe_level),
                ("decrease", &report.decrease),
                ("discounted_decrease", &report.discounted_decrease),
                ("data_consistency", &report.data_consistency),
            ];
            for (name, stat) in rows {
                println!(
                    "{name:<20} {}/{} violations (worst residual {:.4})",
                    stat.violations, stat.checked, stat.worst_residual
                );
            }
            println!(
                "delta1_max {:.4}  delta2 {:.4}",
                bounds.delta1_max, bounds.delta2
            );
        }
        Command::ExportHeatmap {
            config,
            cert,
            theta,
            resolution,
            out,
        } => {
            let config = Config::load(&config)?;
            let task = config.task_spec()?;
            let certificate = io::load_certificate(&cert)?;
            let theta = theta.unwrap_or(config.run.heatmap_theta);
            let resolution = resolution.unwrap_or(config.run.heatmap_resolution);
            let rows = io::export_heatmap(&certificate, &task, theta, resolution)?;
            let certified = rows.iter().filter(|r| r.below_level).count();
            io::write_heatmap(&rows, &out)?;
            println!(
                "wrote {} cells ({certified} inside the level set) to {}",
                rows.len(),
                out.display()
            );
        }
        Command::BenchBaseline { config, k, out } => {
            let config = Config::load(&config)?;
            let k_override = match k.as_deref() {
                None => None,
                Some("all") => Some(KCandidates::All),
                Some(text) => Some(KCandidates::K(text.parse().map_err(|_| {
                    Error::Config(format!("--k must be a number or \"all\", got \"{text}\""))
                })?)),
            };
            let ctx = config.baseline_context(out, k_override)?;
            let reports = ilmpc::baseline::baseline_run(&ctx)?;
            let table = orchestrator::performance_summary(&[("baseline".into(), reports)]);
            println!("{table}");
            println!("artifacts written to {}", ctx.out_dir.display());
        }
        Command::Summary {
            run_dir,
            baseline_dir,
        } => {
            let mut methods = vec![("proposed".to_string(), load_reports(&run_dir)?)];
            if let Some(dir) = baseline_dir {
                methods.push(("baseline".to_string(), load_reports(&dir)?));
            }
            let table = orchestrator::performance_summary(&methods);
            print!("{table}");
            let csv_path = run_dir.join("performance_table.csv");
            std::fs::write(&csv_path, table.to_csv())?;
            println!("table written to {}", csv_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
