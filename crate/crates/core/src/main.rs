use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixlab::autodiff::OpKind;
use mixlab::harness::experiments::{self, write_runs_csv, write_summary_csv};
use mixlab::harness::gradcheck::CHECKED_OPS;
use mixlab::harness::plot::sweep_svg;
use mixlab::harness::sweep::write_sweep_csv;
use mixlab::harness::{self, ExperimentConfig, Manifest, SweepPairs};
use mixlab::mixup::Policy;
use mixlab::Error;

#[derive(Parser)]
#[command(name = "mixlab", version, about = "Mixup and adversarial mixing on small text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and report its test error.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the run manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a Mixup and an AMP model and sweep the mixed loss over λ.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
        /// Sweep a single pair of test examples instead of the whole set.
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Option<Vec<usize>>,
        /// Also render an SVG plot.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare none, mixup and amp across subsample ratios.
    Lowres {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.03,0.04,0.05,0.1,0.2,0.3,0.5,1.0")]
        ratios: Vec<f64>,
        /// Directory for per-ratio CSV files; stdout when absent.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Baseline, +RandOp, +MaxOp and AMP on every seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run every finite-difference gradient suite.
    Gradcheck {
        /// Negate the adjoint of one primitive to exercise the checker.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Render an SVG from an existing sweep CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Format { .. } | Error::Io { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_tables(
    dir: Option<&Path>,
    stem: &str,
    records: &[experiments::RunRecord],
) -> Result<(), Failure> {
    let summary = harness::summarize(records);
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
            write_runs_csv(create(&dir.join(format!("{stem}_runs.csv")))?, records)?;
            write_summary_csv(create(&dir.join(format!("{stem}_summary.csv")))?, &summary)?;
        }
        None => {
            write_runs_csv(io::stdout(), records)?;
            println!();
            write_summary_csv(io::stdout(), &summary)?;
        }
    }
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} run(s) failed")));
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, seed, manifest } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = harness::prepare(&cfg, seed)?;
            if let Some(path) = manifest {
                Manifest::new(&cfg, &data).write(&path)?;
            }
            let (_, report) = harness::train_on(&cfg, &data, seed)?;
            let last = report.steps.last().expect("at least one step");
            println!("policy,seed,test_error");
            println!("{},{},{}", cfg.mix.policy, seed, report.test_error);
            eprintln!(
                "best step {} of {}, final objective {:.4}, mask rate {:.3}, {:.1}s",
                report.best_step,
                report.steps.len(),
                last.objective,
                last.mask_rate,
                report.wall_time.as_secs_f64()
            );
        }
        Command::Sweep {
            config,
            grid,
            out,
            pair,
            svg,
            seed,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = harness::prepare(&cfg, seed)?;
            let model_for = |p: Policy| -> Result<_, Failure> {
                let mut c = cfg.clone();
                c.mix.policy = p;
                Ok(harness::train_on(&c, &data, seed)?.0)
            };
            let amp = model_for(Policy::Amp)?;
            let mixup = model_for(Policy::Mixup)?;
            let pairs = match pair.as_deref() {
                Some([i, j]) => SweepPairs::Single { i: *i, j: *j },
                _ => SweepPairs::Full { seed },
            };
            let rows = harness::lambda_sweep(
                &amp,
                &mixup,
                &data.test,
                &data.vocab,
                cfg.max_len,
                cfg.mix.layer,
                grid,
                pairs,
            )?;
            write_sweep_csv(create(&out)?, &rows)?;
            if let Some(path) = svg {
                fs::write(&path, sweep_svg(&rows, "amp (model a)", "mixup (model b)"))
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            }
            let (a, b) = harness::sweep::mean_losses(&rows);
            eprintln!("mean sweep loss: amp {a:.4}, mixup {b:.4}");
        }
        Command::Lowres { config, ratios, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let policies = [Policy::None, Policy::Mixup, Policy::Amp];
            for row in harness::lowres(&cfg, &ratios, &policies)? {
                if out_dir.is_none() {
                    println!("# ratio {}", row.ratio);
                }
                write_tables(out_dir.as_deref(), &format!("lowres_{}", row.ratio), &row.records)?;
            }
        }
        Command::Ablate { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records = harness::ablate(&cfg)?;
            write_tables(out_dir.as_deref(), "ablate", &records)?;
        }
        Command::Gradcheck { inject_fault } => {
            let fault = match inject_fault {
                None => None,
                Some(name) => Some(
                    CHECKED_OPS
                        .iter()
                        .copied()
                        .find(|k: &OpKind| k.name() == name)
                        .ok_or_else(|| Failure::Usage(format!("unknown op `{name}`")))?,
                ),
            };
            let report = harness::gradcheck(fault)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure::Run(format!("gradient check failed: {}", report.failures().join(", "))));
            }
        }
        Command::Plot { csv, out } => {
            let file = File::open(&csv).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
            let rows = harness::parse_sweep_csv(file)?;
            fs::write(&out, sweep_svg(&rows, "model a", "model b"))
                .map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
        }
    }
    Ok(())
}
