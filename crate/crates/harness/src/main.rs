use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use htx_harness::config::{ExperimentConfig, ExperimentKind};
use htx_harness::experiments::{
    run_ablate_exponent, run_ablate_weight_family, run_baseline_sdedit, run_restore, run_sample_unguided,
};
use htx_harness::record::RunRecord;
use htx_harness::report::{emit_report, ReportFormat};
use htx_harness::train::run_train;
use htx_harness::verify::{run_verify, VerifyOptions};
use htx_harness::Result;

#[derive(Parser)]
#[command(
    name = "htx",
    version,
    about = "Weighted h-transform guided sampling on analytic toys"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the experiment and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trial count (endpoint pairs for `verify`).
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical verification checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Trajectories per dynamics in the marginal comparison.
        #[arg(long, default_value_t = 10_000)]
        marginal_trajectories: usize,
        /// Reverse the exact h term (mutation test hook).
        #[arg(long, hide = true)]
        flip_h_sign: bool,
    },
    /// Train an epsilon network on samples of the configured density.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Unguided sampling.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Guided restoration against unguided sampling and the posterior mean.
    Restore {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the weight exponent.
    AblateExponent {
        #[command(flatten)]
        common: Common,
        /// Comma-separated exponents; the config's list when omitted.
        #[arg(long, value_delimiter = ',')]
        exponents: Option<Vec<f64>>,
    },
    /// Compare weight families at matched exponents.
    AblateWeightfn {
        #[command(flatten)]
        common: Common,
    },
    /// Noise-and-denoise baseline over start times.
    BaselineSdedit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated start times; the config's list when omitted.
        #[arg(long, value_delimiter = ',')]
        t0: Option<Vec<f64>>,
    },
    /// Re-emit CSV or SVG output from a persisted record.json.
    Report {
        record: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output directory; the record's own directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::of_kind(kind),
    };
    cfg.experiment.kind = kind;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
        cfg.train.optimizer.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.experiment.out = out.clone();
    }
    if let Some(n) = common.trials {
        cfg.experiment.trials = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_record(record: &RunRecord, dir: &Path) {
    for a in &record.aggregates {
        println!(
            "{:<24} n={:<5} mse_to_y {:.4} ± {:.4}  mse_to_coarse {:.4} ± {:.4}  loglik {:.3}{}",
            a.condition,
            a.n,
            a.mse_to_y_mean,
            a.mse_to_y_se,
            a.mse_to_coarse_mean,
            a.mse_to_coarse_se,
            a.loglik_p0_mean,
            a.posterior_mse_mean
                .map(|p| format!("  posterior-mean mse {p:.4}"))
                .unwrap_or_default()
        );
    }
    for c in &record.checks {
        println!("{}", c.line());
    }
    for n in &record.notes {
        println!("note: {n}");
    }
    println!("run directory: {}", dir.display());
}

fn run(cli: Cli) -> Result<bool> {
    let (mut record, out) = match cli.command {
        Command::Report { record, format, out } => {
            let rec = RunRecord::load(&record)?;
            let dir = out.unwrap_or_else(|| record.parent().map(Path::to_path_buf).unwrap_or_default());
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Svg => ReportFormat::Svg,
            };
            for p in emit_report(&rec, &dir, format)? {
                println!("{}", p.display());
            }
            return Ok(true);
        }
        Command::Verify {
            common,
            marginal_trajectories,
            flip_h_sign,
        } => {
            let cfg = load(&common, ExperimentKind::Verify)?;
            let opts = VerifyOptions {
                seed: cfg.experiment.seed,
                marginal_trajectories,
                endpoint_trials: common.trials.unwrap_or(VerifyOptions::default().endpoint_trials),
                flip_h_sign,
                ..VerifyOptions::default()
            };
            (run_verify(&cfg, &opts)?, cfg.experiment.out)
        }
        Command::Train { common } => {
            let cfg = load(&common, ExperimentKind::TrainScore)?;
            (run_train(&cfg)?.0, cfg.experiment.out)
        }
        Command::Sample { common } => {
            let cfg = load(&common, ExperimentKind::SampleUnguided)?;
            (run_sample_unguided(&cfg)?, cfg.experiment.out)
        }
        Command::Restore { common } => {
            let cfg = load(&common, ExperimentKind::Restore)?;
            (run_restore(&cfg)?, cfg.experiment.out)
        }
        Command::AblateExponent { common, exponents } => {
            let mut cfg = load(&common, ExperimentKind::AblateExponent)?;
            if let Some(e) = exponents {
                cfg.experiment.exponents = e;
                cfg.validate()?;
            }
            let exps = cfg.experiment.exponents.clone();
            (run_ablate_exponent(&cfg, &exps)?, cfg.experiment.out)
        }
        Command::AblateWeightfn { common } => {
            let cfg = load(&common, ExperimentKind::AblateWeightFamily)?;
            (run_ablate_weight_family(&cfg)?, cfg.experiment.out)
        }
        Command::BaselineSdedit { common, t0 } => {
            let mut cfg = load(&common, ExperimentKind::BaselineSdedit)?;
            if let Some(t) = t0 {
                cfg.experiment.t0 = t;
                cfg.validate()?;
            }
            let t0 = cfg.experiment.t0.clone();
            (run_baseline_sdedit(&cfg, &t0)?, cfg.experiment.out)
        }
    };
    let dir = record.persist(&out)?;
    print_record(&record, &dir);
    Ok(record.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
