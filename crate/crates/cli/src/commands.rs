use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pmlp::fsio::write_atomic;
use pmlp::synth::{generate, to_series_text};
use pmlp::{
    embed_lags, emit_report, evaluate, fit, init_params, load_series, netfile, run_experiment,
    two_stage_train, Error, FitResult, LagDataset, MaskedMlp, MetricPair, Result, SeriesFrame,
    Topology,
};

use crate::config::RunConfig;

pub const NETWORK_FILE: &str = "network.txt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PRUNE_REPORT_FILE: &str = "prune_report.txt";
pub const LAGGED_FILE: &str = "lagged.tsv";
pub const EVAL_FILE: &str = "eval.tsv";

pub fn dispatch(name: &str, cfg: &RunConfig) -> Result<String> {
    match name {
        "embed" => cmd_embed(cfg),
        "train" => cmd_train(cfg),
        "prune-train" => cmd_prune_train(cfg),
        "eval" => cmd_eval(cfg),
        "compare" => cmd_compare(cfg),
        "gen" => cmd_gen(cfg),
        other => Err(Error::invalid(format!("unknown command {other:?}"))),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.clone(),
        source,
    })?;
    Ok(&cfg.out)
}

fn load(cfg: &RunConfig) -> Result<SeriesFrame> {
    load_series(cfg.series_path()?)
}

/// Loads the series and cuts both windows; nothing is trained before this
/// succeeds.
fn windows(cfg: &RunConfig) -> Result<(SeriesFrame, LagDataset, LagDataset)> {
    let series = load(cfg)?;
    let (train, test) = cfg.protocol.windows(&series)?;
    Ok((series, train, test))
}

fn topology(cfg: &RunConfig) -> Result<Topology> {
    Topology::new(cfg.protocol.lags, cfg.protocol.hidden)
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<String> {
    let series = load(cfg)?;
    let ds = embed_lags(&series, cfg.protocol.lags)?;
    let mut s = String::from("target");
    for k in 1..=ds.lags() {
        write!(s, "\tlag{k}").unwrap();
    }
    s.push('\n');
    for (row, y) in ds.rows().zip(ds.targets()) {
        write!(s, "{y}").unwrap();
        for v in row {
            write!(s, "\t{v}").unwrap();
        }
        s.push('\n');
    }
    let path = out_dir(cfg)?.join(LAGGED_FILE);
    write_atomic(&path, s.as_bytes())?;
    Ok(format!(
        "{} rows x {} lags -> {}\n",
        ds.len(),
        ds.lags(),
        path.display()
    ))
}

fn summary(
    model: &str,
    series: &SeriesFrame,
    net: &MaskedMlp,
    fit: &FitResult,
    train: MetricPair,
    test: MetricPair,
) -> String {
    let t = net.topology();
    let mut s = String::new();
    writeln!(s, "model: {model}").unwrap();
    writeln!(s, "series: {}", series.name()).unwrap();
    writeln!(
        s,
        "topology: inputs={} hidden={} params={} active={}",
        t.n_inputs(),
        t.n_hidden(),
        t.n_params(),
        net.mask().active_count()
    )
    .unwrap();
    writeln!(s, "converged: {}", fit.converged).unwrap();
    writeln!(s, "stop: {}", fit.reason).unwrap();
    writeln!(s, "iters: {}", fit.iters).unwrap();
    writeln!(s, "final_loss: {:.12e}", fit.final_loss).unwrap();
    writeln!(s, "train: nrmse={:.9} nmae={:.9}", train.nrmse, train.nmae).unwrap();
    writeln!(s, "test: nrmse={:.9} nmae={:.9}", test.nrmse, test.nmae).unwrap();
    s
}

fn save_outputs(dir: &Path, net: &MaskedMlp, summary: &str) -> Result<(PathBuf, PathBuf)> {
    let net_path = dir.join(NETWORK_FILE);
    let sum_path = dir.join(SUMMARY_FILE);
    netfile::save(net, &net_path)?;
    write_atomic(&sum_path, summary.as_bytes())?;
    Ok((net_path, sum_path))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let (series, train, test) = windows(cfg)?;
    let t = topology(cfg)?;
    let start = MaskedMlp::dense(t, init_params(t, cfg.protocol.master_seed))?;
    let result = fit(&start, &train, cfg.protocol.batch_lma())?;
    let net = start.with_params(result.params.clone())?;
    let text = summary(
        "MLP",
        &series,
        &net,
        &result,
        evaluate(&net, &train)?,
        evaluate(&net, &test)?,
    );
    let dir = out_dir(cfg)?;
    let (net_path, _) = save_outputs(dir, &net, &text)?;
    Ok(format!("{text}network: {}\n", net_path.display()))
}

pub fn cmd_prune_train(cfg: &RunConfig) -> Result<String> {
    let (series, train, test) = windows(cfg)?;
    let t = topology(cfg)?;
    let mut ts = cfg.protocol.two_stage.clone();
    ts.first.master_seed = cfg.protocol.master_seed;
    let outcome = two_stage_train(&train, t, &ts)?;
    let mut text = summary(
        "pMLP",
        &series,
        &outcome.net,
        &outcome.fit,
        evaluate(&outcome.net, &train)?,
        evaluate(&outcome.net, &test)?,
    );
    writeln!(
        text,
        "pruned: {}/{} ratio={:.6}",
        outcome.report.pruned_count,
        t.n_params(),
        outcome.report.prune_ratio
    )
    .unwrap();
    let dir = out_dir(cfg)?;
    let report_path = dir.join(PRUNE_REPORT_FILE);
    write_atomic(&report_path, outcome.report.to_text().as_bytes())?;
    let (net_path, _) = save_outputs(dir, &outcome.net, &text)?;
    Ok(format!(
        "{text}network: {}\nprune report: {}\n",
        net_path.display(),
        report_path.display()
    ))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let net_path = cfg
        .net
        .as_deref()
        .ok_or_else(|| Error::invalid("no network given (use --net or `net = ...`)"))?;
    let net = netfile::load(net_path)?;
    let t = net.topology();
    if t.n_inputs() != cfg.protocol.lags {
        return Err(Error::invalid(format!(
            "network has {} inputs but the configuration uses {} lags",
            t.n_inputs(),
            cfg.protocol.lags
        )));
    }
    let (series, _, test) = windows(cfg)?;
    let m = evaluate(&net, &test)?;
    let line = format!(
        "{}\t{}\t{}\t{}\t{}\n",
        series.name(),
        net_path.display(),
        net.mask().active_count(),
        m.nrmse,
        m.nmae
    );
    let path = out_dir(cfg)?.join(EVAL_FILE);
    let record = format!("series_name\tnetwork\tactive_params\tnrmse\tnmae\n{line}");
    write_atomic(&path, record.as_bytes())?;
    Ok(format!(
        "nrmse: {}\nnmae: {}\nrecord: {}\n",
        m.nrmse,
        m.nmae,
        path.display()
    ))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<String> {
    let series = load(cfg)?;
    cfg.protocol.windows(&series)?;
    let report = run_experiment(&series, &cfg.protocol)?;
    let (table, records) = emit_report(&report, out_dir(cfg)?)?;
    Ok(format!(
        "{}table: {}\nrecords: {}\n",
        report.table_text(),
        table.display(),
        records.display()
    ))
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<String> {
    let series = generate(cfg.kind, cfg.len, cfg.protocol.master_seed)?;
    let path = out_dir(cfg)?.join(format!("{}.txt", cfg.kind));
    write_atomic(&path, to_series_text(&series).as_bytes())?;
    Ok(format!("{} values -> {}\n", series.len(), path.display()))
}
