//! `explreg`: parse explanations, match them over a corpus, refine a
//! classifier and evaluate it, driven by one config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use explreg::config::RunConfig;
use explreg::pipeline::{
    evaluate_and_write, files, match_rules, parse_rules, run_and_write, train_and_write,
    write_match, write_parse, MatchOutput, Resources,
};
use explreg::refine::load_checkpoint;
use explreg::synthetic::{SynthConfig, SyntheticWorld};
use explreg::{Error, Model};
use log::info;

#[derive(Parser)]
#[command(
    name = "explreg",
    version,
    about = "Explanation-regularized classifier refinement"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run config file (`key = value` lines).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the training preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Any config assignment, e.g. `--set train.alpha=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate explanations; writes rules.txt and diagnostics.tsv.
    Parse,
    /// Parse, then run strict and soft matching plus negative sampling.
    Match,
    /// Parse, match, fit or load the source model and refine it.
    Refine,
    /// Evaluate the refined and source checkpoints; writes metrics and heat maps.
    Eval {
        /// Refined checkpoint; defaults to the config's `model` or `<out>/model.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Every stage in order.
    Pipeline,
    /// Write a planted-bias synthetic world and its run config into DIR.
    Synth {
        dir: PathBuf,
        /// Generator seed; also written as the run seed.
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
    },
}

/// Failure with its exit code: 1 for bad input, 2 for internal failures.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Io { .. } => (1, "io"),
            Error::Format { .. } => (1, "format"),
            Error::Invalid(_) => (1, "invalid"),
            Error::Config(_) => (1, "config"),
            Error::Parse(_) => (1, "parse"),
            Error::Diverged { .. } => (2, "diverged"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage",
        message: message.into(),
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| usage("--config is required for this command"))?;
    let mut cfg = RunConfig::load(path)?;
    for kv in &g.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(p) = &g.preset {
        cfg.set("preset", p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint(configured: Option<&Path>, fallback: PathBuf) -> Result<Model, Failure> {
    let path = configured.map(Path::to_path_buf).unwrap_or(fallback);
    Ok(load_checkpoint(&path)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Command::Synth { dir, world_seed } = &cli.command {
        let world = SyntheticWorld::generate(&SynthConfig {
            seed: *world_seed,
            ..Default::default()
        })?;
        let path = world.write(dir, *world_seed)?;
        println!("{}", path.display());
        return Ok(());
    }
    let cfg = load_config(&cli.global)?;
    let res = Resources::load(&cfg)?;
    match cli.command {
        Command::Parse => {
            let report = parse_rules(&res, &cfg)?;
            write_parse(&cfg.out, &report, &cfg)?;
            for line in report.diagnostics() {
                eprintln!("{line}");
            }
            println!("{} rules accepted", report.rules.len());
            if !report.all_accepted() {
                return Err(Failure {
                    code: 1,
                    kind: "rejected",
                    message: format!(
                        "{} explanations failed to parse, {} were discarded",
                        report.errors.len(),
                        report.discarded.len()
                    ),
                });
            }
        }
        Command::Match => {
            let report = parse_rules(&res, &cfg)?;
            write_parse(&cfg.out, &report, &cfg)?;
            let m = match_rules(&report.rules, &res, &cfg)?;
            write_match(&cfg.out, &m)?;
            println!(
                "{} strict, {} soft, {} negative records",
                m.strict.len(),
                m.soft.len(),
                m.negatives.len()
            );
        }
        Command::Refine => {
            let (_, _, _, refined) = train_and_write(&res, &cfg)?;
            println!(
                "best dev F1 {:.4} at step {} of {}",
                refined.best_dev_f1, refined.best_step, refined.steps
            );
        }
        Command::Eval { model } => {
            let refined = match model {
                Some(p) => checkpoint(Some(&p), PathBuf::new())?,
                None => checkpoint(cfg.paths.model.as_deref(), cfg.out.join(files::MODEL))?,
            };
            let source = match &res.source_model {
                Some(m) => m.clone(),
                None => checkpoint(None, cfg.out.join(files::SOURCE_MODEL))?,
            };
            let matches = cfg
                .out
                .join(files::STRICT)
                .exists()
                .then(|| MatchOutput::read(&cfg.out))
                .transpose()?;
            let (before, after) =
                evaluate_and_write(&source, &refined, &res, &cfg, matches.as_ref())?;
            println!(
                "source  {}",
                serde_json::to_string(&before).expect("metrics serialize")
            );
            println!(
                "refined {}",
                serde_json::to_string(&after).expect("metrics serialize")
            );
        }
        Command::Pipeline => {
            let out = run_and_write(&res, &cfg)?;
            info!("outputs in {}", cfg.out.display());
            println!(
                "source  {}",
                serde_json::to_string(&out.source_metrics).expect("metrics serialize")
            );
            println!(
                "refined {}",
                serde_json::to_string(&out.metrics).expect("metrics serialize")
            );
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "error\t{}\t{}",
                f.kind,
                f.message.replace(['\n', '\t'], " ")
            );
            ExitCode::from(f.code)
        }
    }
}
