use clap::{Parser, Subcommand};
use satforge::training::Stage;
use satforge_cli::config::{self, Scale, Sources, CONFIG_ENV};
use satforge_cli::{commands, selfcheck, CliError};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use toml::Value;

#[derive(Parser, Debug)]
#[command(
    name = "satforge",
    version,
    about = "Satellite image splice detection and localization"
)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Preset sizes; `desk` means 13 base images and 20 epochs per stage.
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Override any config key, e.g. `--set train.batch_size=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    models: Option<PathBuf>,
    #[arg(long, global = true)]
    outputs: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData,
    /// Train the autoencoder (plain) or fine-tune it adversarially (gan).
    Train {
        #[arg(long, default_value = "plain", value_parser = parse_stage)]
        strategy: Stage,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the one-class SVM on encoded training patches.
    FitSvm {
        #[arg(long, default_value = "gan", value_parser = parse_stage)]
        strategy: Stage,
    },
    /// Score one image and write its soft and binary masks.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "gan", value_parser = parse_stage)]
        strategy: Stage,
        #[arg(long)]
        stride: Option<usize>,
        /// Output directory (default: <outputs>/infer).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection and localization AUC over the test split.
    Eval,
    /// Parameter audit, gradient checks, SVM and AUC oracles.
    Selfcheck {
        /// Sample 10 entries per gradient tensor instead of 100.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: satforge::Error| e.to_string())
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let target = record.target().split("::").next().unwrap_or("");
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_lowercase(),
                target,
                record.args()
            )
        })
        .init();
}

fn sources(cli: &Cli) -> Sources {
    let mut flags: Vec<(String, Value)> = Vec::new();
    let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
    if let Some(s) = cli.seed {
        flags.push(("seed".into(), Value::Integer(s as i64)));
    }
    if let Some(w) = cli.workers {
        flags.push(("workers".into(), Value::Integer(w as i64)));
    }
    if let Some(p) = &cli.data {
        flags.push(("paths.data".into(), path(p)));
    }
    if let Some(p) = &cli.models {
        flags.push(("paths.models".into(), path(p)));
    }
    if let Some(p) = &cli.outputs {
        flags.push(("paths.outputs".into(), path(p)));
    }
    match &cli.command {
        Command::Train { arch, epochs, .. } => {
            if let Some(a) = arch {
                flags.push(("train.arch".into(), Value::String(a.clone())));
            }
            if let Some(e) = epochs {
                flags.push(("train.epochs".into(), Value::Integer(*e as i64)));
            }
        }
        Command::Infer {
            stride: Some(s), ..
        } => flags.push(("patches.stride".into(), Value::Integer(*s as i64))),
        _ => {}
    }
    Sources {
        file: cli.config.clone(),
        scale: cli.scale,
        sets: cli.set.clone(),
        flags,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, prov) = config::load(&sources(&cli))?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::Usage(format!("workers: {e}")))?;
    }
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &prov),
        Command::Train { strategy, .. } => commands::train(&cfg, &prov, strategy),
        Command::FitSvm { strategy } => commands::fit_svm(&cfg, &prov, strategy),
        Command::Infer {
            image,
            strategy,
            out,
            ..
        } => commands::infer(&cfg, &prov, strategy, &image, out),
        Command::Eval => commands::eval(&cfg, &prov),
        Command::Selfcheck { quick } => {
            let checks = selfcheck::run_all(if quick { 10 } else { 100 })?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "check={:?} status={} {}",
                    c.name,
                    if c.passed { "pass" } else { "fail" },
                    c.detail
                );
                failed += usize::from(!c.passed);
            }
            println!("checks={} failed={failed}", checks.len());
            if failed > 0 {
                return Err(CliError::Numeric(format!("{failed} self-check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("satforge: {e}");
            e.exit_code()
        }
    }
}
