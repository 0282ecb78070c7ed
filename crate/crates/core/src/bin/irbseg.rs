use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use irbseg::cli::{self, Overrides, RunConfig};
use irbseg::styletransfer::TargetSampling;

#[derive(Parser)]
#[command(name = "irbseg", version, about = "IoU-ranking blend training for sim-to-real segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Global seed, replaces the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replaces the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force the deterministic CPU path.
    #[arg(long)]
    cpu_only: bool,
    /// Cap on IRB rounds.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Spectral window fraction.
    #[arg(long)]
    beta: Option<f64>,
    /// How stylization picks target images.
    #[arg(long, value_enum)]
    target_sampling: Option<Sampling>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Fixed,
    RandomPerImage,
}

impl From<Sampling> for TargetSampling {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Fixed => TargetSampling::Fixed,
            Sampling::RandomPerImage => TargetSampling::RandomPerImage,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic sim/real domain pair and its splits.
    Generate(Common),
    /// Stylize the source set toward the real blend pool.
    Stylize(Common),
    /// Train the reference model on the source set.
    Train(Common),
    /// Evaluate a checkpoint and write an IoU report.
    Evaluate(Common),
    /// Run the full IoU-ranking blend loop.
    IrbRun {
        #[command(flatten)]
        common: Common,
        /// Generate the datasets first.
        #[arg(long)]
        generate: bool,
    },
    /// Tabulate one or more IRB run logs.
    Report(Common),
}

fn load(common: &Common) -> irbseg::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        cpu_only: common.cpu_only,
        max_iterations: common.max_iterations,
        beta: common.beta,
        target_sampling: common.target_sampling.map(Into::into),
    });
    Ok(cfg)
}

fn run(command: Command) -> irbseg::Result<()> {
    match command {
        Command::Generate(c) => {
            let out = cli::cmd_generate(&load(&c)?)?;
            for (name, path) in out.splits {
                println!("{name}\t{}", path.display());
            }
        }
        Command::Stylize(c) => println!("{}", cli::cmd_stylize(&load(&c)?)?.display()),
        Command::Train(c) => println!("{}", cli::cmd_train(&load(&c)?)?.dir.display()),
        Command::Evaluate(c) => println!("{}", cli::cmd_evaluate(&load(&c)?)?.display()),
        Command::IrbRun { common, generate } => {
            let out = cli::cmd_irb_run(&load(&common)?, generate)?;
            print!("{}", std::fs::read_to_string(&out.report.text).unwrap_or_default());
            println!("run log: {}", out.run_log.display());
        }
        Command::Report(c) => {
            let files = cli::cmd_report(&load(&c)?)?;
            print!("{}", std::fs::read_to_string(&files.text).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = if err.is_config() { "config error" } else { "error" };
            eprintln!("irbseg: {kind}: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
