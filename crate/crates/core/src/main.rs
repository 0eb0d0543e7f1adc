use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bandshare::baselines::PolicyKind;
use bandshare::experiment::{
    self, cmd_compare, cmd_run, cmd_sweep_stepsize, cmd_validate, parse_step_choice,
    ExperimentConfig, Overrides,
};
use bandshare::scenario::Detail;
use bandshare::Error;

#[derive(Parser)]
#[command(
    name = "bandshare",
    version,
    about = "Semi-static bandwidth sharing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy and write hyperperiod.csv, clients.csv and manifest.json.
    Run(Common),
    /// Improvement over no sharing for each policy and rate pair (compare.csv).
    Compare {
        #[command(flatten)]
        common: Common,
        /// Policies to compare (repeat or comma-separate); defaults to the file's list.
        #[arg(long = "policies", value_delimiter = ',')]
        policies: Vec<String>,
    },
    /// ABS convergence under several step sizes (sweep.csv, sweep_summary.csv).
    SweepStepsize {
        #[command(flatten)]
        common: Common,
        /// Step sizes such as 0.1, or `variable` / `variable:0.1` for eta0/sqrt(t).
        #[arg(long = "eta", value_delimiter = ',')]
        etas: Vec<String>,
    },
    /// Check the file and run a short feasibility smoke test.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    detail: Option<DetailArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetailArg {
    Hyperperiod,
    Period,
}

impl Common {
    fn overrides(&self) -> Result<Overrides, Error> {
        Ok(Overrides {
            policy: self.policy.as_deref().map(str::parse).transpose()?,
            seed: self.seed_override,
            horizon: self.horizon,
            out_dir: self.out_dir.clone(),
            detail: self.detail.map(|d| match d {
                DetailArg::Hyperperiod => Detail::Hyperperiod,
                DetailArg::Period => Detail::Period,
            }),
        })
    }

    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&self.overrides()?);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run(common) => {
            let report = cmd_run(&common.load()?)?;
            println!("mean total QoE over window: {:.6}", report.mean_qoe);
            if let Some(r) = report.reference_objective {
                println!("static optimum over window: {r:.6}");
            }
            println!("wrote {}", report.out_dir.display());
        }
        Command::Compare { common, policies } => {
            let cfg = common.load()?;
            let list = policies
                .iter()
                .map(|p| p.parse::<PolicyKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let report = cmd_compare(&cfg, (!list.is_empty()).then_some(list.as_slice()))?;
            for r in &report.rows {
                println!(
                    "({:.2}, {:.2}) {:<12} {:>9.4}%",
                    r.low_rate, r.high_rate, r.policy, r.improvement_pct
                );
            }
            println!("wrote {}", report.out_dir.join("compare.csv").display());
        }
        Command::SweepStepsize { common, etas } => {
            let cfg = common.load()?;
            let initial = cfg.sweep.clone().unwrap_or_default().variable_initial;
            let choices = etas
                .iter()
                .map(|e| parse_step_choice(e, initial))
                .collect::<Result<Vec<_>, _>>()?;
            let report =
                cmd_sweep_stepsize(&cfg, (!choices.is_empty()).then_some(choices.as_slice()))?;
            println!("static optimum over window: {:.6}", report.reference_qoe);
            for r in &report.runs {
                let reached = r
                    .hyperperiods_to_target
                    .map_or("never".to_string(), |t| t.to_string());
                println!(
                    "{:<16} final gap {:.3}%  within target at {reached}",
                    r.choice.to_string(),
                    r.final_gap_pct
                );
            }
            println!("wrote {}", report.out_dir.join("sweep.csv").display());
        }
        Command::Validate(common) => {
            let report = cmd_validate(&common.config, &common.overrides()?);
            print!("{report}");
            if !report.passed() {
                return Err(Error::InvalidConfig {
                    field: "validate".into(),
                    reason: "one or more checks failed".into(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::from(experiment::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
