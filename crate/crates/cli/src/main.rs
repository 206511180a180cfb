use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use rvp::config::RunConfig;
use rvp::verify::{self, Suite, VerifyOptions};
use rvp::{exit, formats, run, six_significant};
use rvp_core::calibration::{tune_lambda, TuningSpec};

/// Risk variance penalization: verification suites, penalty tuning,
/// coverage simulation and colored-domain experiments.
#[derive(Parser)]
#[command(name = "rvp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run randomized verification suites; exits 1 if any check fails.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated datasets for the expansion-bound check.
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Random feasible points per region instance.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Also write one JSON record per check to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print JSON records instead of the human summary.
        #[arg(long)]
        jsonl: bool,
    },
    /// Print the penalty weight Phi^-1(1 - gamma) / sqrt(n).
    Tune {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        n: usize,
    },
    /// Monte-Carlo coverage of the RVP objective.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// truncated_normal, uniform, beta or constant.
        #[arg(long)]
        family: Option<String>,
    },
    /// Write training and grid datasets.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one model and evaluate it on the grid.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Sweep methods, hyperparameters and seeds.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        seeds: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    p_eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    train_probs: Option<Vec<f64>>,
    #[arg(long)]
    m_train: Option<usize>,
    #[arg(long)]
    m_test: Option<usize>,
    #[arg(long)]
    d_noise: Option<usize>,
    #[arg(long)]
    shape_scale: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// linear or mlp.
    #[arg(long)]
    model: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load(common: Common, require_seed: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if require_seed && common.seed.is_none() {
        anyhow::bail!("--seed is required for this command");
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, a: DataArgs) {
    let d = &mut cfg.data;
    set(&mut d.p_eps, a.p_eps);
    set(&mut d.train_probs, a.train_probs);
    set(&mut d.m_train, a.m_train);
    set(&mut d.m_test, a.m_test);
    set(&mut d.d_noise, a.d_noise);
    set(&mut d.shape_scale, a.shape_scale);
}

fn apply_train(cfg: &mut RunConfig, a: TrainArgs) {
    let t = &mut cfg.train;
    set(&mut t.method, a.method);
    set(&mut t.lambda, a.lambda);
    set(&mut t.beta, a.beta);
    set(&mut t.alpha, a.alpha);
    set(&mut t.epochs, a.epochs);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.model, a.model);
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Verify { suite, instances, seed, trials, samples, report, jsonl } => {
            let opts = VerifyOptions { instances, seed, trials, samples };
            let records = verify::run(suite, &opts)?;
            let lines = verify::to_jsonl(&records);
            if let Some(path) = report {
                formats::write_atomic(&path, lines.as_bytes())?;
            }
            if jsonl {
                print!("{lines}");
            } else {
                print!("{}", verify::human_summary(&records));
            }
            Ok(if records.iter().all(|r| r.passed) { exit::SUCCESS } else { exit::CHECK_FAILED })
        }
        Command::Tune { gamma, n } => {
            let lambda = tune_lambda(TuningSpec::new(gamma, n)?)?;
            println!("{}", six_significant(lambda));
            Ok(exit::SUCCESS)
        }
        Command::Coverage { common, lambda, gamma, n, trials, family } => {
            let mut cfg = load(common, true)?;
            let c = &mut cfg.coverage;
            if lambda.is_some() {
                c.lambda = lambda;
            }
            set(&mut c.gamma, gamma);
            set(&mut c.n, n);
            set(&mut c.trials, trials);
            set(&mut c.model.family, family);
            let rec = run::coverage(&cfg)?;
            println!(
                "lambda {} n {} trials {}: coverage {:.4} +- {:.4}, target {:.4}",
                six_significant(rec.lambda),
                rec.n,
                rec.trials,
                rec.empirical_coverage,
                rec.half_width,
                rec.target
            );
            Ok(exit::SUCCESS)
        }
        Command::GenData { common, data } => {
            let mut cfg = load(common, false)?;
            apply_data(&mut cfg, data);
            let d = run::gen_data(&cfg)?;
            println!(
                "wrote {} training and {} grid datasets to {}",
                d.train.len(),
                d.test.len(),
                cfg.out()?.display()
            );
            Ok(exit::SUCCESS)
        }
        Command::Train { common, data, train } => {
            let mut cfg = load(common, false)?;
            apply_data(&mut cfg, data);
            apply_train(&mut cfg, train);
            let cell = run::train_single(&cfg)?;
            println!(
                "{} {}: best worst-domain accuracy {:.4} at epoch {}",
                cell.row.method, cell.row.hyperparams, cell.row.worst, cell.row.best_epoch
            );
            Ok(exit::SUCCESS)
        }
        Command::Experiment { common, data, train, methods, seeds } => {
            let mut cfg = load(common, true)?;
            apply_data(&mut cfg, data);
            apply_train(&mut cfg, train);
            set(&mut cfg.experiment.methods, methods);
            set(&mut cfg.experiment.seeds, seeds);
            for table in run::experiment(&cfg)? {
                println!("p_eps {}:", table.p_eps);
                for r in &table.rows {
                    println!(
                        "  {:<8} {:<28} seed {}  worst {:.4} (epoch {})",
                        r.method, r.hyperparams, r.seed, r.worst, r.best_epoch
                    );
                }
            }
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::USAGE as u8)
        }
    }
}
