//! Forecast-error metrics and the repeated MLP-vs-pruned-MLP comparison.
//!
//! nRMSE and nMAE are normalized by the mean of the observations in the
//! evaluation window. Forecasts are one step ahead from measured lags.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::lma::{fit, FitResult, LmaConfig};
use crate::mlp::{init_params, MaskedMlp, Topology};
use crate::prune::{two_stage_train, TwoStageConfig};
use crate::seed::{derive_seed, Stream};
use crate::series::{embed_lags, split, LagDataset, SeriesFrame, SplitSpec};

pub const RECORD_HEADER: &str =
    "series_name\tmodel\trun_index\tseed\tnrmse\tnmae\tprune_ratio\titers\tfinal_loss";

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Dimension {
            expected: obs.len(),
            got: pred.len(),
        });
    }
    if obs.is_empty() {
        return Err(Error::invalid("metrics need at least one observation"));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    if mean == 0.0 {
        return Err(Error::invalid(
            "observation mean is zero; normalized error undefined",
        ));
    }
    Ok(mean)
}

/// `sqrt(mean((pred − obs)²)) / mean(obs)`.
pub fn nrmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    let mean = check_pair(pred, obs)?;
    let mse = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>()
        / obs.len() as f64;
    Ok(mse.sqrt() / mean)
}

/// `mean(|pred − obs|) / mean(obs)`.
pub fn nmae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    let mean = check_pair(pred, obs)?;
    let mae = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o).abs())
        .sum::<f64>()
        / obs.len() as f64;
    Ok(mae / mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub nrmse: f64,
    pub nmae: f64,
}

impl MetricPair {
    pub fn compute(pred: &[f64], obs: &[f64]) -> Result<Self> {
        Ok(Self {
            nrmse: nrmse(pred, obs)?,
            nmae: nmae(pred, obs)?,
        })
    }
}

/// Metrics of `net` on `ds`.
pub fn evaluate(net: &MaskedMlp, ds: &LagDataset) -> Result<MetricPair> {
    MetricPair::compute(&net.predict(ds)?, ds.targets())
}

/// Naive persistence forecast `x̂_t = x_{t−1}` on the same rows.
pub fn persistence(ds: &LagDataset) -> Result<MetricPair> {
    let pred: Vec<f64> = ds.rows().map(|r| r[0]).collect();
    MetricPair::compute(&pred, ds.targets())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelTag {
    Mlp,
    Pmlp,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Mlp => "MLP",
            ModelTag::Pmlp => "pMLP",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub model: ModelTag,
    pub metrics: MetricPair,
    pub prune_ratio: Option<f64>,
    pub iters: usize,
    pub final_loss: f64,
    pub converged: bool,
}

impl RunRecord {
    pub fn new(
        run_index: usize,
        seed: u64,
        model: ModelTag,
        metrics: MetricPair,
        prune_ratio: Option<f64>,
        fit: &FitResult,
    ) -> Self {
        Self {
            run_index,
            seed,
            model,
            metrics,
            prune_ratio,
            iters: fit.iters,
            final_loss: fit.final_loss,
            converged: fit.converged,
        }
    }

    /// One tab-separated line matching [`RECORD_HEADER`].
    pub fn to_line(&self, series_name: &str) -> String {
        let ratio = self
            .prune_ratio
            .map_or_else(|| "NA".to_string(), |r| r.to_string());
        format!(
            "{series_name}\t{}\t{}\t{}\t{}\t{}\t{ratio}\t{}\t{}",
            self.model,
            self.run_index,
            self.seed,
            self.metrics.nrmse,
            self.metrics.nmae,
            self.iters,
            self.final_loss
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Mlp,
    Pmlp,
    Tie,
}

impl Winner {
    fn between(mlp: f64, pmlp: f64) -> Self {
        if pmlp < mlp {
            Winner::Pmlp
        } else if mlp < pmlp {
            Winner::Mlp
        } else {
            Winner::Tie
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Mlp => "MLP",
            Winner::Pmlp => "pMLP",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub series_name: String,
    pub records: Vec<RunRecord>,
    pub mlp_min: MetricPair,
    pub pmlp_min: MetricPair,
    pub mean_prune_ratio: f64,
    pub nrmse_winner: Winner,
    pub nmae_winner: Winner,
}

fn min_metrics<'a>(records: impl Iterator<Item = &'a RunRecord>) -> Option<MetricPair> {
    records.fold(None, |acc, r| {
        Some(match acc {
            None => r.metrics,
            Some(m) => MetricPair {
                nrmse: m.nrmse.min(r.metrics.nrmse),
                nmae: m.nmae.min(r.metrics.nmae),
            },
        })
    })
}

impl ComparisonReport {
    /// Summarizes per-run records; both models must be present.
    pub fn from_records(series_name: impl Into<String>, records: Vec<RunRecord>) -> Result<Self> {
        let of = |tag| records.iter().filter(move |r: &&RunRecord| r.model == tag);
        let mlp_min = min_metrics(of(ModelTag::Mlp))
            .ok_or_else(|| Error::invalid("report has no MLP runs"))?;
        let pmlp_min = min_metrics(of(ModelTag::Pmlp))
            .ok_or_else(|| Error::invalid("report has no pMLP runs"))?;
        let ratios: Vec<f64> = of(ModelTag::Pmlp).filter_map(|r| r.prune_ratio).collect();
        let mean_prune_ratio = if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
        Ok(Self {
            series_name: series_name.into(),
            mlp_min,
            pmlp_min,
            mean_prune_ratio,
            nrmse_winner: Winner::between(mlp_min.nrmse, pmlp_min.nrmse),
            nmae_winner: Winner::between(mlp_min.nmae, pmlp_min.nmae),
            records,
        })
    }

    pub fn records_for(&self, model: ModelTag) -> impl Iterator<Item = &RunRecord> + '_ {
        self.records.iter().filter(move |r| r.model == model)
    }

    /// Each reported minimum is attained by a contained record.
    pub fn check_minima(&self) -> Result<()> {
        for (tag, min) in [
            (ModelTag::Mlp, self.mlp_min),
            (ModelTag::Pmlp, self.pmlp_min),
        ] {
            let hit_rmse = self.records_for(tag).any(|r| r.metrics.nrmse == min.nrmse);
            let hit_mae = self.records_for(tag).any(|r| r.metrics.nmae == min.nmae);
            if !(hit_rmse && hit_mae) {
                return Err(Error::invalid(format!(
                    "{tag} minima not attained by any run"
                )));
            }
        }
        Ok(())
    }

    pub fn records_text(&self) -> String {
        let mut s = String::from(RECORD_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.to_line(&self.series_name));
            s.push('\n');
        }
        s
    }

    pub fn table_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "series: {}", self.series_name).unwrap();
        writeln!(
            s,
            "{:<6} {:>4} {:>20} {:>10} {:>10} {:>12} {:>6}",
            "model", "run", "seed", "nRMSE", "nMAE", "prune_ratio", "iters"
        )
        .unwrap();
        for r in &self.records {
            let ratio = r
                .prune_ratio
                .map_or_else(|| "NA".into(), |v| format!("{v:.4}"));
            writeln!(
                s,
                "{:<6} {:>4} {:>20} {:>10.6} {:>10.6} {:>12} {:>6}",
                r.model.as_str(),
                r.run_index,
                r.seed,
                r.metrics.nrmse,
                r.metrics.nmae,
                ratio,
                r.iters
            )
            .unwrap();
        }
        writeln!(s, "minima over runs:").unwrap();
        writeln!(
            s,
            "  MLP   nRMSE {:.6}  nMAE {:.6}",
            self.mlp_min.nrmse, self.mlp_min.nmae
        )
        .unwrap();
        writeln!(
            s,
            "  pMLP  nRMSE {:.6}  nMAE {:.6}  mean prune ratio {:.4}",
            self.pmlp_min.nrmse, self.pmlp_min.nmae, self.mean_prune_ratio
        )
        .unwrap();
        writeln!(s, "winner nRMSE: {}", self.nrmse_winner.as_str()).unwrap();
        writeln!(s, "winner nMAE: {}", self.nmae_winner.as_str()).unwrap();
        s
    }
}

pub const TABLE_FILE: &str = "comparison.txt";
pub const RECORDS_FILE: &str = "records.tsv";

/// Writes the human-readable table and the record file into `dir`.
pub fn emit_report(report: &ComparisonReport, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if report.records.is_empty() {
        return Err(Error::invalid("cannot emit a report without runs"));
    }
    report.check_minima()?;
    let dir = dir.as_ref();
    let table = dir.join(TABLE_FILE);
    let records = dir.join(RECORDS_FILE);
    write_atomic(&table, report.table_text().as_bytes())?;
    write_atomic(&records, report.records_text().as_bytes())?;
    Ok((table, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub lags: usize,
    pub hidden: usize,
    pub split: SplitSpec,
    pub n_runs: usize,
    pub master_seed: u64,
    /// Pruned pipeline settings. `first.master_seed` is replaced per run.
    pub two_stage: TwoStageConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            lags: 7,
            hidden: 2,
            split: SplitSpec::new(3200, 400),
            n_runs: 7,
            master_seed: 0,
            two_stage: TwoStageConfig::default(),
        }
    }
}

impl ProtocolConfig {
    /// Full-batch settings shared by the baseline and the second pass.
    pub fn batch_lma(&self) -> &LmaConfig {
        &self.two_stage.second
    }

    pub fn run_seed(&self, run_index: usize) -> u64 {
        derive_seed(self.master_seed, Stream::Run, run_index as u64)
    }

    pub fn validate(&self) -> Result<()> {
        Topology::new(self.lags, self.hidden)?;
        if self.n_runs == 0 {
            return Err(Error::invalid("at least one run is required"));
        }
        if !(self.two_stage.alpha > 0.0 && self.two_stage.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.two_stage.n_boot == 0 {
            return Err(Error::invalid("n_boot must be at least 1"));
        }
        self.two_stage.first.validate()?;
        self.two_stage.second.validate()
    }

    /// Embeds and splits `series` according to this protocol.
    pub fn windows(&self, series: &SeriesFrame) -> Result<(LagDataset, LagDataset)> {
        let ds = embed_lags(series, self.lags)?;
        split(&ds, self.split)
    }
}

/// Trains and evaluates the baseline and the pruned network for one run.
pub fn run_once(
    train: &LagDataset,
    test: &LagDataset,
    cfg: &ProtocolConfig,
    run_index: usize,
) -> Result<[RunRecord; 2]> {
    let topology = Topology::new(cfg.lags, cfg.hidden)?;
    let seed = cfg.run_seed(run_index);

    let dense = MaskedMlp::dense(topology, init_params(topology, seed))?;
    let base_fit = fit(&dense, train, cfg.batch_lma())?;
    let base_net = dense.with_params(base_fit.params.clone())?;
    let base = RunRecord::new(
        run_index,
        seed,
        ModelTag::Mlp,
        evaluate(&base_net, test)?,
        None,
        &base_fit,
    );

    let mut ts = cfg.two_stage.clone();
    ts.first.master_seed = seed;
    let outcome = two_stage_train(train, topology, &ts)?;
    let pruned = RunRecord::new(
        run_index,
        seed,
        ModelTag::Pmlp,
        evaluate(&outcome.net, test)?,
        Some(outcome.report.prune_ratio),
        &outcome.fit,
    );
    Ok([base, pruned])
}

/// Repeats the baseline-vs-pruned comparison `n_runs` times.
///
/// Runs execute in parallel; each derives its seed from the master seed and
/// its index, so the report does not depend on scheduling.
pub fn run_experiment(series: &SeriesFrame, cfg: &ProtocolConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let (train, test) = cfg.windows(series)?;
    let runs: Vec<Result<[RunRecord; 2]>> = (1..=cfg.n_runs)
        .into_par_iter()
        .map(|i| {
            run_once(&train, &test, cfg, i).map_err(|e| Error::Run {
                run_index: i,
                source: Box::new(e),
            })
        })
        .collect();
    let mut records = Vec::with_capacity(2 * cfg.n_runs);
    for pair in runs {
        records.extend(pair?);
    }
    records.sort_by_key(|r| (r.model != ModelTag::Mlp, r.run_index));
    ComparisonReport::from_records(series.name(), records)
}
