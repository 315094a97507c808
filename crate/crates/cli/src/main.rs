//! `csne` — experiment runner for the csne-core library.
//!
//! Grammar: `csne <subcommand> [--config path | --preset name] [--key value ...]`
//! where `--key` is a dotted path into the config schema (see config.rs).
//!
//! Exit codes: 0 success, 2 usage error, 3 config/validation error,
//! 4 verification failure, 1 runtime (I/O) error.

mod config;
mod eval;
mod gen;
mod plot;
mod svg;
mod sweep;
mod train;
mod verify;

use std::process::ExitCode;

use csne_core::Error as CoreError;

const USAGE: &str = "\
csne — contrastive losses as stochastic neighbor embedding: experiments

USAGE:
    csne <subcommand> [--config <path> | --preset <name>] [--<key> <value> ...]

SUBCOMMANDS:
    gen      draw a Gaussian-mixture dataset, write it as CSV
    train    train an encoder, write checkpoint + training-log CSV
    verify   run an oracle suite: equivalence | theorem1 | rearrangement |
             ce_decomposition | gradients | tammes
    eval     embed fresh draws with checkpoints; KNN, linear probe, metrics
    sweep    grid sweep (t_df x d_z training grid, or tau_w weighting);
             one CSV row per cell, resumable, cells may run in parallel
    plot     render a CSV as SVG: scatter2d | line | heatmap

FLAGS:
    --config <path>    load this TOML config
    --preset <name>    load presets/<name>.toml (see also $CSNE_PRESET_DIR)
    --<key> <value>    override a config key by dotted path, e.g.
                       --train.tau 0.2 --data.seed 3 --eval.shift [1.0,1.0]
    --seed <n>         shorthand: gen -> data.seed, train -> train.seed,
                       eval -> eval.seed, sweep -> train.seed
    --out <path>       shorthand: gen -> gen.out, plot -> plot.out
    --trials <n>       verify theorem1: number of random instances

ENVIRONMENT:
    CSNE_OUT_DIR       default output directory when [out].dir is unset
    CSNE_PRESET_DIR    extra directory searched for presets

EXIT CODES:
    0 success   2 usage   3 config/validation   4 verification   1 runtime";

/// Error carrier deciding the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: grammar, unknown names, missing required paths.
    Usage(String),
    /// The config or an input failed validation before/while computing.
    Config(String),
    /// An oracle suite ran and at least one check failed.
    Verify(String),
    /// I/O or another environmental failure.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }
    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            CoreError::Io(_)
            | CoreError::Parse(_)
            | CoreError::CheckpointCorrupt(_)
            | CoreError::CheckpointVersion { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}\n\n{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Verify(m)) => {
            eprintln!("verification failed:\n{m}");
            ExitCode::from(4)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    let sub = match args.first().map(String::as_str) {
        None | Some("help") | Some("--help") | Some("-h") => {
            println!("{USAGE}");
            return match args.first() {
                None => Err(CliError::usage("missing subcommand")),
                _ => Ok(()),
            };
        }
        Some(s) => s,
    };

    // `verify` takes its suite as a positional argument.
    let mut rest = &args[1..];
    let mut suite = None;
    if sub == "verify" {
        match rest.first() {
            Some(s) if !s.starts_with("--") => {
                suite = Some(s.clone());
                rest = &rest[1..];
            }
            _ => return Err(CliError::usage("verify needs a suite name")),
        }
    }

    let parsed = parse_flags(sub, rest)?;
    let cfg_path = match (&parsed.config, &parsed.preset) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage("--config and --preset are mutually exclusive"))
        }
        (Some(p), None) => Some(std::path::PathBuf::from(p)),
        (None, Some(name)) => Some(config::preset_path(name)?),
        (None, None) => None,
    };
    let cfg = config::load(cfg_path.as_deref(), &parsed.overrides)?;

    match sub {
        "gen" => gen::run(&cfg),
        "train" => train::run(&cfg).map(|_| ()),
        "verify" => verify::run(
            suite.as_deref().expect("suite parsed above"),
            parsed.trials.unwrap_or(100),
            parsed.seed_flag.unwrap_or(0),
        ),
        "eval" => eval::run(&cfg),
        "sweep" => sweep::run(&cfg),
        "plot" => plot::run(&cfg),
        other => Err(CliError::usage(format!("unknown subcommand {other:?}"))),
    }
}

struct ParsedFlags {
    config: Option<String>,
    preset: Option<String>,
    overrides: Vec<(String, String)>,
    trials: Option<usize>,
    seed_flag: Option<u64>,
}

fn parse_flags(sub: &str, args: &[String]) -> Result<ParsedFlags, CliError> {
    let mut parsed = ParsedFlags {
        config: None,
        preset: None,
        overrides: Vec::new(),
        trials: None,
        seed_flag: None,
    };
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| CliError::usage(format!("expected a --flag, got {flag:?}")))?;
        if key.is_empty() {
            return Err(CliError::usage("empty flag name"));
        }
        let value = it
            .next()
            .ok_or_else(|| CliError::usage(format!("--{key} needs a value")))?
            .clone();
        match key {
            "config" => parsed.config = Some(value),
            "preset" => parsed.preset = Some(value),
            "trials" => {
                let n = value
                    .parse::<usize>()
                    .map_err(|_| CliError::usage(format!("--trials {value:?} is not a count")))?;
                parsed.trials = Some(n);
            }
            "seed" => {
                let n = value
                    .parse::<u64>()
                    .map_err(|_| CliError::usage(format!("--seed {value:?} is not a seed")))?;
                parsed.seed_flag = Some(n);
                if let Some(path) = seed_target(sub) {
                    parsed.overrides.push((path.to_string(), value));
                }
            }
            "out" => match sub {
                "gen" => parsed.overrides.push(("gen.out".to_string(), value)),
                "plot" => parsed.overrides.push(("plot.out".to_string(), value)),
                _ => {
                    return Err(CliError::usage(format!(
                        "--out has no meaning for {sub}; use a dotted key"
                    )))
                }
            },
            dotted => parsed.overrides.push((dotted.to_string(), value)),
        }
    }
    Ok(parsed)
}

fn seed_target(sub: &str) -> Option<&'static str> {
    match sub {
        "gen" => Some("data.seed"),
        "train" => Some("train.seed"),
        "eval" => Some("eval.seed"),
        "sweep" => Some("train.seed"),
        _ => None,
    }
}
