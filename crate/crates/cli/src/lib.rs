//! `pmlp` command-line front end.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::Path;

use clap::{Arg, ArgMatches, Command};
use pmlp::{Error, ErrorKind};

use crate::config::{Layer, RunConfig, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Numeric => EXIT_NUMERIC,
        ErrorKind::Io => EXIT_IO,
    }
}

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("embed", "Write the lagged input/target table of a series"),
    (
        "train",
        "Train an unpruned network with full-batch Levenberg-Marquardt",
    ),
    (
        "prune-train",
        "Two-stage training: replicate fits, significance pruning, final fit",
    ),
    ("eval", "Evaluate a saved network on the test window"),
    (
        "compare",
        "Repeated MLP vs pruned-MLP comparison with report files",
    ),
    ("gen", "Generate a synthetic series"),
];

pub fn command() -> Command {
    let mut args: Vec<Arg> = KEYS
        .iter()
        .map(|k| {
            let help = match k.default {
                Some(d) => format!("{} [default: {d}]", k.help),
                None => k.help.to_string(),
            };
            Arg::new(k.name).long(k.name).value_name("VALUE").help(help)
        })
        .collect();
    args.push(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Flat `key = value` file; flags override it"),
    );
    Command::new("pmlp")
        .about("Time-series forecasting with pruned perceptrons trained by two-stage Levenberg-Marquardt")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(
            SUBCOMMANDS
                .iter()
                .map(|(name, about)| Command::new(*name).about(*about).args(args.clone())),
        )
}

/// Flags given on the command line, as a configuration layer.
pub fn flag_layer(m: &ArgMatches) -> Layer {
    let mut layer = Layer::default();
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            layer
                .set(k.name, v.clone(), format!("--{}", k.name))
                .expect("known key");
        }
    }
    layer
}

/// Merges flags over the optional config file and resolves the result.
pub fn resolve(m: &ArgMatches) -> Result<RunConfig, Error> {
    let flags = flag_layer(m);
    let layer = match m.get_one::<String>("config") {
        Some(path) => flags.over(&Layer::load_file(Path::new(path))?),
        None => flags,
    };
    RunConfig::resolve(&layer)
}

/// Runs the subcommand selected in `matches` and returns its stdout text.
pub fn run_matches(matches: &ArgMatches) -> Result<String, Error> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = resolve(sub)?;
    commands::dispatch(name, &cfg)
}

/// Parses `args` (program name first) and runs them.
pub fn run<I, T>(args: I) -> Result<String, Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| Error::invalid(e.to_string()))?;
    run_matches(&matches)
}
