//! Two-stage training: replicate first-pass fits, bootstrap significance
//! test per parameter, then a full-batch fit of the pruned network.
//!
//! Each first-pass replicate fits the network to a small random subsample
//! (by default `4m` rows for `m` parameters). All replicates start from the
//! same initial parameters so that their solutions share a basin, and hidden
//! units are then aligned to a reference replicate; otherwise permutation and
//! sign symmetries would make the per-parameter distributions multimodal. A parameter is pruned when
//! the percentile bootstrap interval of its replicate mean, `[t1, t2]`,
//! satisfies `t1·t2 ≤ 0`.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lma::{fit, FitResult, LmaConfig, StopReason};
use crate::mlp::{init_params, ConnectionMask, MaskedMlp, ParamVector, Topology};
use crate::seed::{derive_seed, Stream};
use crate::series::LagDataset;

/// Fewest replicates an automatic budget may produce.
pub const MIN_REPLICATES: usize = 8;
const MAX_RETRIES: usize = 3;
const OUTLIER_FLOOR: f64 = 1e-6;
/// Default replicate rows per network parameter.
pub const ROWS_PER_PARAM: usize = 4;
/// Default initial damping of the replicate fits.
pub const FIRST_PASS_LAMBDA0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replicates {
    /// `floor(budget_fraction · n_train / replicate_size)`, at least [`MIN_REPLICATES`].
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstPassConfig {
    pub budget_fraction: f64,
    /// Rows per replicate; `None` means [`ROWS_PER_PARAM`] rows per parameter.
    pub replicate_size: Option<usize>,
    pub n_replicates: Replicates,
    pub master_seed: u64,
    pub lma: LmaConfig,
    /// Fit every replicate on the same subsample instead of distinct draws.
    pub shared_subsample: bool,
    /// Permute and sign-flip hidden units of each replicate to match the
    /// lowest-loss replicate before the distributions are formed.
    pub align_units: bool,
    /// Re-draw replicates whose final loss exceeds this multiple of the
    /// median replicate loss; those still above it after the retry budget
    /// are dropped. `None` keeps every finite replicate.
    pub outlier_factor: Option<f64>,
}

impl Default for FirstPassConfig {
    fn default() -> Self {
        Self {
            budget_fraction: 0.10,
            replicate_size: None,
            n_replicates: Replicates::Auto,
            master_seed: 0,
            lma: LmaConfig {
                lambda0: FIRST_PASS_LAMBDA0,
                ..LmaConfig::default()
            },
            shared_subsample: false,
            align_units: true,
            outlier_factor: Some(10.0),
        }
    }
}

impl FirstPassConfig {
    pub fn replicate_size_for(&self, topology: Topology) -> usize {
        self.replicate_size
            .unwrap_or_else(|| ROWS_PER_PARAM * topology.n_params())
    }

    /// Number of replicates for a training set of `n_train` rows.
    pub fn replicate_count(&self, n_train: usize, topology: Topology) -> usize {
        match self.n_replicates {
            Replicates::Fixed(n) => n,
            Replicates::Auto => {
                let budget = (self.budget_fraction * n_train as f64).floor() as usize;
                (budget / self.replicate_size_for(topology)).max(MIN_REPLICATES)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "budget fraction must lie in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.replicate_size == Some(0) {
            return Err(Error::invalid("replicate size must be at least 1"));
        }
        if let Some(f) = self.outlier_factor {
            if !(f > 1.0) || !f.is_finite() {
                return Err(Error::invalid(
                    "outlier factor must be a finite value above 1",
                ));
            }
        }
        if let Replicates::Fixed(n) = self.n_replicates {
            if n < 2 {
                return Err(Error::invalid("at least two replicates are required"));
            }
        }
        self.lma.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMeta {
    /// Replicate slot this fit belongs to.
    pub replicate: usize,
    /// Training-set rows used, ascending.
    pub rows: Vec<usize>,
    pub iters: usize,
    pub final_loss: f64,
    pub reason: StopReason,
    /// Draws needed before the fit came back finite (1 = first try).
    pub attempts: usize,
}

/// Converged parameter vectors of the first-pass replicates, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSamples {
    pub samples: Matrix,
    pub meta: Vec<ReplicateMeta>,
}

impl WeightSamples {
    pub fn n_replicates(&self) -> usize {
        self.samples.rows()
    }

    pub fn n_params(&self) -> usize {
        self.samples.cols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.column(j)
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        shifted_mean(&self.column(j))
    }
}

/// Runs the replicate fits. Replicates are independent and run in
/// parallel; each one draws its rows from its own derived seed.
pub fn first_pass(
    train: &LagDataset,
    topology: Topology,
    cfg: &FirstPassConfig,
) -> Result<WeightSamples> {
    cfg.validate()?;
    if train.lags() != topology.n_inputs() {
        return Err(Error::Dimension {
            expected: topology.n_inputs(),
            got: train.lags(),
        });
    }
    let size = cfg.replicate_size_for(topology);
    if train.len() < size {
        return Err(Error::invalid(format!(
            "training set has {} rows but each replicate needs {size}",
            train.len()
        )));
    }
    let n_rep = cfg.replicate_count(train.len(), topology);
    let start = MaskedMlp::dense(topology, init_params(topology, cfg.master_seed))?;

    let draw = |replicate: usize, attempt: usize| -> Vec<usize> {
        let key = if cfg.shared_subsample { 0 } else { replicate };
        let seed = derive_seed(
            cfg.master_seed,
            Stream::Replicate,
            (key * (MAX_RETRIES + 1) + attempt) as u64,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = sample(&mut rng, train.len(), size).into_vec();
        rows.sort_unstable();
        rows
    };

    let attempt_fit =
        |replicate: usize, first_attempt: usize| -> Result<(FitResult, ReplicateMeta)> {
            for attempt in first_attempt..=MAX_RETRIES {
                let rows = draw(replicate, attempt);
                let subset = train.select(&rows);
                match fit(&start, &subset, &cfg.lma) {
                    Ok(res) if res.params.iter().all(|v| v.is_finite()) => {
                        let meta = ReplicateMeta {
                            replicate,
                            rows,
                            iters: res.iters,
                            final_loss: res.final_loss,
                            reason: res.reason,
                            attempts: attempt + 1,
                        };
                        return Ok((res, meta));
                    }
                    Ok(_) | Err(Error::NonFiniteLoss { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::ReplicateFailed {
                replicate,
                attempts: MAX_RETRIES + 1,
            })
        };

    let mut fits = (0..n_rep)
        .into_par_iter()
        .map(|replicate| attempt_fit(replicate, 0))
        .collect::<Result<Vec<_>>>()?;

    if let Some(factor) = cfg.outlier_factor {
        let threshold = outlier_threshold(&fits, train, factor);
        fits = fits
            .into_par_iter()
            .map(|(mut res, mut info)| {
                while res.final_loss > threshold {
                    if info.attempts > MAX_RETRIES {
                        return Ok(None);
                    }
                    match attempt_fit(info.replicate, info.attempts) {
                        Ok(next) => (res, info) = next,
                        Err(Error::ReplicateFailed { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                    }
                }
                Ok(Some((res, info)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        if fits.len() < 2 {
            return Err(Error::ReplicateFailed {
                replicate: 0,
                attempts: MAX_RETRIES + 1,
            });
        }
    }

    let n_rep = fits.len();
    let mut samples = Matrix::zeros(n_rep, topology.n_params());
    let mut meta = Vec::with_capacity(n_rep);
    for (i, (res, info)) in fits.into_iter().enumerate() {
        samples.row_mut(i).copy_from_slice(&res.params);
        meta.push(info);
    }
    if cfg.align_units {
        let reference = (0..n_rep)
            .min_by(|&a, &b| meta[a].final_loss.total_cmp(&meta[b].final_loss))
            .expect("at least two replicates");
        align_hidden_units(&mut samples, topology, reference);
    }
    Ok(WeightSamples { samples, meta })
}

/// Loss above which a replicate counts as stuck in a poor local minimum:
/// `factor` times the median replicate loss, but never below a tiny
/// fraction of the target variance so that near-exact interpolating fits
/// are not flagged against each other.
fn outlier_threshold(fits: &[(FitResult, ReplicateMeta)], train: &LagDataset, factor: f64) -> f64 {
    let mut losses: Vec<f64> = fits.iter().map(|(r, _)| r.final_loss).collect();
    losses.sort_by(f64::total_cmp);
    let mid = losses.len() / 2;
    let median = if losses.len().is_multiple_of(2) {
        0.5 * (losses[mid - 1] + losses[mid])
    } else {
        losses[mid]
    };
    let y = train.targets();
    let mean = shifted_mean(y);
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
    (factor * median).max(OUTLIER_FLOOR * var)
}

/// Hidden unit `q` of a packed parameter row as `[W1 row, B1, W2]`.
fn unit_vector(row: &[f64], t: Topology, q: usize) -> Vec<f64> {
    let p = t.n_inputs();
    let mut v = row[q * p..(q + 1) * p].to_vec();
    v.push(row[t.hidden_bias(q)]);
    v.push(row[t.output_weight(q)]);
    v
}

/// Rewrites every row so its hidden units line up with those of row
/// `reference`.
///
/// A tanh network computes the same function after permuting hidden units
/// or negating a unit's incoming weights, bias and outgoing weight. Units
/// are matched greedily by absolute cosine similarity and flipped when the
/// similarity is negative.
pub fn align_hidden_units(samples: &mut Matrix, topology: Topology, reference: usize) {
    let h = topology.n_hidden();
    let p = topology.n_inputs();
    let ref_units: Vec<Vec<f64>> = (0..h)
        .map(|q| unit_vector(samples.row(reference), topology, q))
        .collect();

    for i in 0..samples.rows() {
        if i == reference {
            continue;
        }
        let units: Vec<Vec<f64>> = (0..h)
            .map(|q| unit_vector(samples.row(i), topology, q))
            .collect();
        let mut pairs = Vec::with_capacity(h * h);
        for (a, ra) in ref_units.iter().enumerate() {
            for (b, ub) in units.iter().enumerate() {
                pairs.push((a, b, cosine(ra, ub)));
            }
        }
        pairs.sort_by(|x, y| {
            y.2.abs()
                .total_cmp(&x.2.abs())
                .then((x.0, x.1).cmp(&(y.0, y.1)))
        });

        let mut assigned: Vec<Option<(usize, f64)>> = vec![None; h];
        let mut used = vec![false; h];
        for (a, b, sim) in pairs {
            if assigned[a].is_none() && !used[b] {
                assigned[a] = Some((b, if sim < 0.0 { -1.0 } else { 1.0 }));
                used[b] = true;
            }
        }

        let row = samples.row_mut(i);
        for (a, slot) in assigned.into_iter().enumerate() {
            let (b, sign) = slot.expect("greedy matching covers every unit");
            let src = &units[b];
            row[a * p..(a + 1) * p]
                .iter_mut()
                .zip(&src[..p])
                .for_each(|(d, s)| *d = sign * s);
            row[topology.hidden_bias(a)] = sign * src[p];
            row[topology.output_weight(a)] = sign * src[p + 1];
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean computed relative to the first element; exact for constant input.
fn shifted_mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Linear-interpolation quantile of sorted data: position `q·(n−1)`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile bootstrap interval for the mean.
///
/// Draws `n_boot` resamples of size `N` with replacement, records each
/// resample mean and returns the `alpha/2` and `1 − alpha/2` quantiles of
/// those means. Quantiles use linear interpolation between order
/// statistics at position `q·(n_boot − 1)`.
pub fn bootstrap_ci(samples: &[f64], n_boot: usize, alpha: f64, seed: u64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least two samples"));
    }
    if n_boot == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap samples must be finite"));
    }
    let n = samples.len();
    let base = samples[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let s: f64 = (0..n).map(|_| samples[rng.random_range(0..n)] - base).sum();
            base + s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&means, alpha / 2.0),
        quantile_sorted(&means, 1.0 - alpha / 2.0),
    ))
}

/// Jarque–Bera statistic `(N/6)·(S² + (K−3)²/4)` with biased (1/N) moment
/// estimates; `K` is the raw fourth standardized moment.
pub fn jarque_bera(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::invalid("Jarque-Bera needs at least four samples"));
    }
    let mean = shifted_mean(samples);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let nf = n as f64;
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(Error::invalid("Jarque-Bera is undefined for zero variance"));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    Ok(nf / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0))
}

/// Bootstrap interval endpoints per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CiTable {
    pub intervals: Vec<(f64, f64)>,
    pub alpha: f64,
    pub n_boot: usize,
}

impl CiTable {
    /// Interval excludes zero: `t1·t2 > 0`.
    pub fn is_significant(&self, j: usize) -> bool {
        let (t1, t2) = self.intervals[j];
        t1 * t2 > 0.0
    }
}

/// Builds the pruning mask from the replicate distributions.
///
/// If every output-layer parameter (`W2` and `B2`) would be pruned, the one
/// with the largest absolute replicate mean is reactivated.
pub fn significance_mask(
    ws: &WeightSamples,
    topology: Topology,
    alpha: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(ConnectionMask, CiTable)> {
    if ws.n_params() != topology.n_params() {
        return Err(Error::Dimension {
            expected: topology.n_params(),
            got: ws.n_params(),
        });
    }
    let intervals = (0..ws.n_params())
        .into_par_iter()
        .map(|j| {
            bootstrap_ci(
                &ws.column(j),
                n_boot,
                alpha,
                derive_seed(seed, Stream::Bootstrap, j as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let table = CiTable {
        intervals,
        alpha,
        n_boot,
    };
    let mut mask = ConnectionMask::from_flags(
        (0..ws.n_params())
            .map(|j| table.is_significant(j))
            .collect(),
    );
    if !topology.output_layer().any(|i| mask.is_active(i)) {
        let keep = topology
            .output_layer()
            .max_by(|&a, &b| {
                ws.column_mean(a)
                    .abs()
                    .total_cmp(&ws.column_mean(b).abs())
                    .then(b.cmp(&a))
            })
            .expect("output layer is never empty");
        mask.set(keep, true);
    }
    Ok((mask, table))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub topology: Topology,
    pub mask: ConnectionMask,
    /// Pruned parameters after the output-connectivity guard.
    pub pruned_count: usize,
    /// Pruned parameters straight from the interval test.
    pub pruned_before_guard: usize,
    pub prune_ratio: f64,
    pub ci_table: CiTable,
    /// `None` where the replicate column has zero variance.
    pub jb_stats: Vec<Option<f64>>,
    pub n_replicates: usize,
}

impl PruneReport {
    pub fn new(
        topology: Topology,
        mask: ConnectionMask,
        ci_table: CiTable,
        ws: &WeightSamples,
    ) -> Self {
        let m = topology.n_params();
        let pruned_count = m - mask.active_count();
        let pruned_before_guard = (0..m).filter(|&j| !ci_table.is_significant(j)).count();
        let jb_stats = (0..m).map(|j| jarque_bera(&ws.column(j)).ok()).collect();
        Self {
            topology,
            mask,
            pruned_count,
            pruned_before_guard,
            prune_ratio: pruned_count as f64 / m as f64,
            ci_table,
            jb_stats,
            n_replicates: ws.n_replicates(),
        }
    }

    /// One line per parameter: index, layer tag, t1, t2, kept/pruned, JB.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# alpha={} n_boot={} replicates={} pruned={}/{} ratio={:.6} pruned_before_guard={}",
            self.ci_table.alpha,
            self.ci_table.n_boot,
            self.n_replicates,
            self.pruned_count,
            self.topology.n_params(),
            self.prune_ratio,
            self.pruned_before_guard,
        )
        .unwrap();
        writeln!(s, "index\tlayer\tt1\tt2\tstatus\tjb").unwrap();
        for j in 0..self.topology.n_params() {
            let (t1, t2) = self.ci_table.intervals[j];
            let status = if self.mask.is_active(j) {
                "kept"
            } else {
                "pruned"
            };
            let jb = match self.jb_stats[j] {
                Some(v) => format!("{v:.6e}"),
                None => "NA".to_string(),
            };
            writeln!(
                s,
                "{j}\t{}\t{t1:.9e}\t{t2:.9e}\t{status}\t{jb}",
                self.topology.role(j)
            )
            .unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageConfig {
    pub first: FirstPassConfig,
    pub alpha: f64,
    pub n_boot: usize,
    pub second: LmaConfig,
    /// Start the second pass from the replicate means instead of a fresh
    /// initialization.
    pub warm_start: bool,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            first: FirstPassConfig::default(),
            alpha: 0.05,
            n_boot: 4000,
            second: LmaConfig::default(),
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutcome {
    pub net: MaskedMlp,
    pub report: PruneReport,
    pub fit: FitResult,
}

/// First pass, significance mask, then a full-batch fit of the pruned net.
pub fn two_stage_train(
    train: &LagDataset,
    topology: Topology,
    cfg: &TwoStageConfig,
) -> Result<TwoStageOutcome> {
    cfg.second.validate()?;
    let ws = first_pass(train, topology, &cfg.first)?;
    let seed = derive_seed(cfg.first.master_seed, Stream::Significance, 0);
    let (mask, table) = significance_mask(&ws, topology, cfg.alpha, cfg.n_boot, seed)?;
    let report = PruneReport::new(topology, mask.clone(), table, &ws);

    let start = if cfg.warm_start {
        ParamVector::new(
            (0..topology.n_params())
                .map(|j| ws.column_mean(j))
                .collect(),
        )?
    } else {
        init_params(topology, cfg.first.master_seed)
    };
    let net = MaskedMlp::new(topology, start, mask)?;
    let fit = fit(&net, train, &cfg.second)?;
    let net = net.with_params(fit.params.clone())?;
    Ok(TwoStageOutcome { net, report, fit })
}
