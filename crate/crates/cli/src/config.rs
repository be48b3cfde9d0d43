//! Run configuration: built-in defaults, overridden by a flat `key = value`
//! file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pmlp::synth::SynthKind;
use pmlp::{Error, LmaConfig, ProtocolConfig, Replicates, Result, SplitSpec};

pub struct Key {
    pub name: &'static str,
    /// Built-in default as it would be written in a config file.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

/// Every configurable key. Flags use the same names with a `--` prefix.
pub const KEYS: &[Key] = &[
    key(
        "series",
        None,
        "Series file: one value per line, optional name header",
    ),
    key("lags", Some("7"), "Number of lagged inputs p"),
    key("hidden", Some("2"), "Hidden tanh units h"),
    key("n-train", Some("3200"), "Training rows"),
    key(
        "n-test",
        Some("400"),
        "Test rows following the training window",
    ),
    key(
        "offset",
        Some("0"),
        "First lagged row of the training window",
    ),
    key(
        "alpha",
        Some("0.05"),
        "Significance level of the bootstrap interval",
    ),
    key("n-boot", Some("4000"), "Bootstrap resamples per parameter"),
    key(
        "budget",
        Some("0.1"),
        "Fraction of training rows spent on replicate fits",
    ),
    key(
        "replicate-size",
        Some("auto"),
        "Rows per replicate fit, or auto (4 per parameter)",
    ),
    key(
        "replicates",
        Some("auto"),
        "Replicate count, or auto (from the budget)",
    ),
    key("runs", Some("7"), "Independent runs in compare"),
    key("seed", Some("0"), "Master seed"),
    key(
        "lambda0",
        Some("0.001"),
        "Initial damping of full-batch fits",
    ),
    key(
        "first-lambda0",
        Some("1"),
        "Initial damping of replicate fits",
    ),
    key(
        "lambda-up",
        Some("10"),
        "Damping growth after a rejected step",
    ),
    key(
        "lambda-down",
        Some("10"),
        "Damping decay after an accepted step",
    ),
    key("lambda-max", Some("1e10"), "Damping ceiling"),
    key(
        "max-iters",
        Some("200"),
        "Accepted-step limit of full-batch fits",
    ),
    key(
        "first-max-iters",
        Some("200"),
        "Accepted-step limit of replicate fits",
    ),
    key(
        "step-tol",
        Some("1e-8"),
        "Stop when the largest step component is below this",
    ),
    key(
        "loss-tol",
        Some("1e-12"),
        "Stop when the loss improves by less than this",
    ),
    key(
        "warm-start",
        Some("false"),
        "Start the second pass from the replicate means",
    ),
    key("out", Some("out"), "Output directory"),
    key("net", None, "Network file to evaluate"),
    key(
        "kind",
        Some("ar1"),
        "Generator preset: ar1, ar2, seasonal, trend, white",
    ),
    key("len", Some("3607"), "Generated series length"),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Raw values for some keys, with a note of where each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layer {
    values: BTreeMap<&'static str, (String, String)>,
}

impl Layer {
    pub fn set(
        &mut self,
        name: &str,
        value: impl Into<String>,
        origin: impl Into<String>,
    ) -> Result<()> {
        let k = lookup(name).ok_or_else(|| Error::invalid(format!("unknown key {name:?}")))?;
        self.values.insert(k.name, (value.into(), origin.into()));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|(v, _)| v.as_str())
    }

    /// `self` wins where both layers set a key.
    pub fn over(mut self, lower: &Layer) -> Layer {
        for (k, v) in &lower.values {
            self.values.entry(k).or_insert_with(|| v.clone());
        }
        self
    }

    pub fn parse_file(text: &str, path: &Path) -> Result<Layer> {
        let mut layer = Layer::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{}:{}", path.display(), i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("{at}: expected `key = value`")))?;
            let name = k.trim().replace('_', "-");
            layer
                .set(&name, v.trim(), at.clone())
                .map_err(|_| Error::invalid(format!("{at}: unknown key {:?}", k.trim())))?;
        }
        Ok(layer)
    }

    pub fn load_file(path: &Path) -> Result<Layer> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Layer::parse_file(&text, path)
    }

    fn typed<T: FromStr>(&self, name: &str) -> Result<Option<T>> {
        let Some((raw, origin)) = self.values.get(name) else {
            return Ok(lookup(name)
                .and_then(|k| k.default)
                .map(|d| d.parse().ok().expect("built-in default parses")));
        };
        raw.parse().map(Some).map_err(|_| {
            Error::invalid(format!("invalid value {raw:?} for {name} (from {origin})"))
        })
    }

    fn required<T: FromStr>(&self, name: &str) -> Result<T> {
        Ok(self.typed(name)?.expect("key has a built-in default"))
    }

    fn auto_or<T: FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.get(name).unwrap_or("auto") {
            "auto" => Ok(None),
            _ => self.typed(name),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub series: Option<PathBuf>,
    pub net: Option<PathBuf>,
    pub out: PathBuf,
    pub kind: SynthKind,
    pub len: usize,
    pub protocol: ProtocolConfig,
}

impl RunConfig {
    pub fn resolve(layer: &Layer) -> Result<RunConfig> {
        let mut p = ProtocolConfig {
            lags: layer.required("lags")?,
            hidden: layer.required("hidden")?,
            split: SplitSpec {
                offset: layer.required("offset")?,
                ..SplitSpec::new(layer.required("n-train")?, layer.required("n-test")?)
            },
            n_runs: layer.required("runs")?,
            master_seed: layer.required("seed")?,
            ..ProtocolConfig::default()
        };
        let shared = LmaConfig {
            lambda0: layer.required("lambda0")?,
            lambda_up: layer.required("lambda-up")?,
            lambda_down: layer.required("lambda-down")?,
            lambda_max: layer.required("lambda-max")?,
            max_iters: layer.required("max-iters")?,
            step_tol: layer.required("step-tol")?,
            loss_tol: layer.required("loss-tol")?,
        };
        let ts = &mut p.two_stage;
        ts.alpha = layer.required("alpha")?;
        ts.n_boot = layer.required("n-boot")?;
        ts.warm_start = layer.required("warm-start")?;
        ts.second = shared;
        ts.first.budget_fraction = layer.required("budget")?;
        ts.first.replicate_size = layer.auto_or("replicate-size")?;
        ts.first.n_replicates = match layer.auto_or("replicates")? {
            None => Replicates::Auto,
            Some(n) => Replicates::Fixed(n),
        };
        ts.first.lma = LmaConfig {
            lambda0: layer.required("first-lambda0")?,
            max_iters: layer.required("first-max-iters")?,
            ..shared
        };
        p.validate()?;

        Ok(RunConfig {
            series: layer.typed("series")?,
            net: layer.typed("net")?,
            out: layer.required("out")?,
            kind: layer.required("kind")?,
            len: layer.required("len")?,
            protocol: p,
        })
    }

    pub fn series_path(&self) -> Result<&Path> {
        self.series
            .as_deref()
            .ok_or_else(|| Error::invalid("no series given (use --series or `series = ...`)"))
    }
}
