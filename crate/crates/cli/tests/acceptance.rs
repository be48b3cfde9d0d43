//! Acceptance criteria. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::fs;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use pmlp::eval::{RECORDS_FILE, RECORD_HEADER, TABLE_FILE};
use pmlp::linalg::Matrix;
use pmlp::lma::fit_subset;
use pmlp::synth::{generate, SynthKind};
use pmlp::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- 1. Jacobian against central differences -------------------------------

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
/// Denominator floor of the relative error, for entries that are zero
/// analytically and only round-off in the difference quotient.
const FD_FLOOR: f64 = 1e-3;

fn random_net(rng: &mut ChaCha8Rng, p: usize, h: usize) -> MaskedMlp {
    let t = Topology::new(p, h).unwrap();
    let w = (0..t.n_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    MaskedMlp::dense(t, ParamVector::new(w).unwrap()).unwrap()
}

fn random_data(rng: &mut ChaCha8Rng, p: usize, n: usize) -> LagDataset {
    let inputs = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    LagDataset::from_parts(p, inputs, targets).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes = [(3, 1), (3, 2), (7, 1), (7, 2)];
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (p, h) = shapes[i % shapes.len()];
        let net = random_net(&mut rng, p, h);
        let ds = random_data(&mut rng, p, 20);
        let jac = net.jacobian(&ds).unwrap();
        for k in 0..net.topology().n_params() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.set_param(k, net.params()[k] + FD_STEP).unwrap();
            minus.set_param(k, net.params()[k] - FD_STEP).unwrap();
            let rp = plus.residuals(&ds).unwrap();
            let rm = minus.residuals(&ds).unwrap();
            for row in 0..ds.len() {
                let fd = (rp[row] - rm[row]) / (2.0 * FD_STEP);
                let an = jac[(row, k)];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(FD_FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    outcome(
        worst <= FD_TOL,
        format!("100 nets, max relative error {worst:.2e} (tol {FD_TOL:.0e})"),
    )
}

// ---- 2. LM recovers a closed-form least-squares solution --------------------

fn linear_problem(seed: u64) -> Outcome {
    let t = Topology::new(3, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; t.n_params()];
    for j in 0..3 {
        w[t.input_weight(0, j)] = rng.random_range(-1.0..1.0);
    }
    w[t.hidden_bias(0)] = rng.random_range(-0.5..0.5);
    let start = MaskedMlp::dense(t, ParamVector::new(w.clone()).unwrap()).unwrap();

    let n = 60;
    let inputs: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z: Vec<f64> = inputs
        .chunks(3)
        .map(|x| {
            let a: f64 = (0..3).map(|j| w[t.input_weight(0, j)] * x[j]).sum();
            (a + w[t.hidden_bias(0)]).tanh()
        })
        .collect();
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let targets: Vec<f64> = z
        .iter()
        .map(|&zi| a * zi + b + 0.1 * rng.random_range(-1.0..1.0))
        .collect();
    let ds = LagDataset::from_parts(3, inputs, targets.clone()).unwrap();

    let x = DMatrix::from_fn(n, 2, |i, k| if k == 0 { z[i] } else { 1.0 });
    let y = DVector::from_vec(targets);
    let ols = (x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * y))
        .unwrap();

    let free = [t.output_weight(0), t.output_bias()];
    let res = fit_subset(&start, &ds, &LmaConfig::default(), &free).unwrap();
    let err = (res.params[free[0]] - ols[0])
        .abs()
        .max((res.params[free[1]] - ols[1]).abs());
    let decreasing = res.loss_trace.windows(2).all(|w| w[1] < w[0]);
    outcome(
        err <= 1e-8 && res.iters <= 20 && decreasing,
        format!("err {err:.1e} iters {}", res.iters),
    )
}

fn criterion_2() -> Outcome {
    let mut worst_err = String::new();
    let mut all = true;
    for seed in 0..10 {
        let o = linear_problem(seed);
        all &= o.pass;
        if !o.pass || seed == 0 {
            worst_err = format!("seed {seed}: {}", o.detail);
        }
    }
    // Nonlinear fits: the recorded loss trace must strictly decrease too.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut traces_ok = true;
    for _ in 0..20 {
        let net = random_net(&mut rng, 7, 2);
        let ds = random_data(&mut rng, 7, 80);
        let res = fit(&net, &ds, &LmaConfig::default()).unwrap();
        traces_ok &= res.loss_trace.windows(2).all(|w| w[1] < w[0]);
    }
    outcome(
        all && traces_ok,
        format!("10 linear problems ({worst_err}); 20 nonlinear traces strictly decreasing: {traces_ok}"),
    )
}

// ---- 3. Damped-step law ----------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut monotone = true;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let cols = rng.random_range(2..=8);
        let rows = rng.random_range(cols + 2..=30);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let j = Matrix::from_row_major(rows, cols, data.clone()).unwrap();
        let r: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut prev = f64::INFINITY;
        for e in -4..=4 {
            let d = solve_damped_normal_equations(&j, &r, 10f64.powi(e)).unwrap();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            monotone &= norm <= prev * (1.0 + 1e-12);
            prev = norm;
        }

        let d = solve_damped_normal_equations(&j, &r, 1e-12).unwrap();
        let a = DMatrix::from_row_slice(rows, cols, &data);
        let b = -DVector::from_column_slice(&r);
        let oracle = a.svd(true, true).solve(&b, 1e-14).unwrap();
        for (x, y) in d.iter().zip(oracle.iter()) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        monotone && worst <= 1e-6,
        format!("50 systems, norm non-increasing over 1e-4..1e4: {monotone}; lambda=1e-12 max deviation {worst:.1e} (tol 1e-6)"),
    )
}

// ---- 4. Bootstrap calibration ---------------------------------------------

fn criterion_4() -> Outcome {
    let trials = 1000;
    let (mut pruned_null, mut kept_signal) = (0, 0);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + t);
        let null: Vec<f64> = StandardNormal.sample_iter(&mut rng).take(16).collect();
        let signal: Vec<f64> = (0..16)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                5.0 + z
            })
            .collect();
        let (a, b) = bootstrap_ci(&null, 4000, 0.05, 2 * t).unwrap();
        if a * b <= 0.0 {
            pruned_null += 1;
        }
        let (a, b) = bootstrap_ci(&signal, 4000, 0.05, 2 * t + 1).unwrap();
        if a * b > 0.0 {
            kept_signal += 1;
        }
    }
    let prune_rate = pruned_null as f64 / trials as f64;
    let keep_rate = kept_signal as f64 / trials as f64;
    outcome(
        prune_rate >= 0.90 && keep_rate >= 0.99,
        format!("zero-mean prune rate {prune_rate:.3} (>= 0.90), mean=5sd keep rate {keep_rate:.3} (>= 0.99)"),
    )
}

// ---- 5. Teacher-student pruning recovery -----------------------------------

const DEAD: [usize; 3] = [4, 5, 6];

fn criterion_5() -> Outcome {
    let t = Topology::new(7, 2).unwrap();
    let (mut dead_pruned, mut dead_total, mut live_kept, mut live_total) = (0, 0, 0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut w = vec![0.0; t.n_params()];
        for q in 0..2 {
            for j in (0..7).filter(|j| !DEAD.contains(j)) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                w[t.input_weight(q, j)] = sign * rng.random_range(0.3..1.0);
            }
        }
        for q in 0..2 {
            w[t.hidden_bias(q)] = rng.random_range(-0.5..0.5);
            w[t.output_weight(q)] = [1.0, -1.0][q] * rng.random_range(0.5..1.5);
        }
        w[t.output_bias()] = rng.random_range(-0.5..0.5);
        let teacher = MaskedMlp::dense(t, ParamVector::new(w).unwrap()).unwrap();

        let n = 3200;
        let inputs: Vec<f64> = (0..n * 7)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let clean: Vec<f64> = inputs
            .chunks(7)
            .map(|x| teacher.forward(x).unwrap())
            .collect();
        let mean = clean.iter().sum::<f64>() / n as f64;
        let sd = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let targets = clean
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + 0.01 * sd * z
            })
            .collect();
        let ds = LagDataset::from_parts(7, inputs, targets).unwrap();

        let cfg = TwoStageConfig {
            first: FirstPassConfig {
                master_seed: seed,
                ..FirstPassConfig::default()
            },
            ..TwoStageConfig::default()
        };
        let mask = two_stage_train(&ds, t, &cfg).unwrap().report.mask;
        for q in 0..2 {
            for j in 0..7 {
                let active = mask.is_active(t.input_weight(q, j));
                if DEAD.contains(&j) {
                    dead_total += 1;
                    dead_pruned += usize::from(!active);
                } else {
                    live_total += 1;
                    live_kept += usize::from(active);
                }
            }
        }
    }
    let dead_rate = dead_pruned as f64 / dead_total as f64;
    let live_rate = live_kept as f64 / live_total as f64;
    outcome(
        dead_rate >= 0.80 && live_rate >= 0.90,
        format!(
            "20 seeds, dead pruned {dead_pruned}/{dead_total} = {dead_rate:.3} (>= 0.80), live kept {live_kept}/{live_total} = {live_rate:.3} (>= 0.90)"
        ),
    )
}

// ---- 6. End-to-end parity on synthetic series ------------------------------

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_6() -> Outcome {
    let cfg = ProtocolConfig::default();
    let len = cfg.split.n_train + cfg.split.n_test + cfg.lags;
    let mut parity = true;
    let mut ratios = Vec::new();
    let mut parts = Vec::new();
    for kind in SynthKind::ALL {
        let series = generate(kind, len, 42).unwrap();
        let report = run_experiment(&series, &cfg).unwrap();
        let med = |m| median(report.records_for(m).map(|r| r.metrics.nrmse).collect());
        let rel = med(ModelTag::Pmlp) / med(ModelTag::Mlp) - 1.0;
        parity &= rel.abs() <= 0.10;
        ratios.extend(
            report
                .records_for(ModelTag::Pmlp)
                .filter_map(|r| r.prune_ratio),
        );
        parts.push(format!("{kind} {rel:+.3}/{:.2}", report.mean_prune_ratio));
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let band = (0.05..=0.40).contains(&mean_ratio);
    outcome(
        parity && band,
        format!(
            "median nRMSE rel. diff / mean prune ratio: {}; parity within 10%: {parity}; overall mean prune ratio {mean_ratio:.3} in [0.05, 0.40]: {band}",
            parts.join(", ")
        ),
    )
}

// ---- 7 and 8 drive the binary ---------------------------------------------

fn pmlp(dir: &Path, args: &[&str], threads: Option<usize>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pmlp"));
    cmd.args(args).current_dir(dir);
    if let Some(n) = threads {
        cmd.env("RAYON_NUM_THREADS", n.to_string());
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn criterion_7() -> Outcome {
    let dir = TempDir::new().unwrap();
    let run = || -> Result<String, String> {
        pmlp(
            dir.path(),
            &["gen", "--kind", "ar1", "--seed", "7", "--out", "data"],
            None,
        )?;
        pmlp(
            dir.path(),
            &[
                "compare",
                "--series",
                "data/ar1.txt",
                "--n-train",
                "3200",
                "--n-test",
                "400",
                "--lags",
                "7",
                "--hidden",
                "2",
                "--runs",
                "7",
                "--out",
                "cmp",
            ],
            None,
        )?;
        let records = fs::read_to_string(dir.path().join("cmp").join(RECORDS_FILE)).unwrap();
        let table = fs::read_to_string(dir.path().join("cmp").join(TABLE_FILE)).unwrap();
        let mut lines = records.lines();
        let header_ok = lines.next() == Some(RECORD_HEADER);
        let n = lines.count();
        let footer = table.contains("minima over runs:")
            && table.contains("  MLP   nRMSE")
            && table.contains("  pMLP  nRMSE")
            && table.contains("winner nRMSE:");
        if header_ok && n == 14 && footer {
            Ok(format!("{n} run records, minima footer present"))
        } else {
            Err(format!("header {header_ok}, {n} records, footer {footer}"))
        }
    };
    match run() {
        Ok(d) => outcome(true, d),
        Err(d) => outcome(false, d),
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let root = TempDir::new().unwrap();
    let session = |name: &str, threads: usize| -> Result<Vec<(String, Vec<u8>)>, String> {
        let dir = root.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        let d = dir.as_path();
        let t = Some(threads);
        pmlp(
            d,
            &[
                "gen", "--kind", "ar2", "--seed", "5", "--len", "1200", "--out", "gen",
            ],
            t,
        )?;
        let common = [
            "--series",
            "gen/ar2.txt",
            "--n-train",
            "900",
            "--n-test",
            "250",
            "--seed",
            "3",
        ];
        let with = |extra: &[&'static str]| -> Vec<&str> {
            let mut v: Vec<&str> = extra.to_vec();
            v.extend(common);
            v
        };
        pmlp(d, &with(&["embed", "--out", "embed"]), t)?;
        pmlp(d, &with(&["train", "--out", "train"]), t)?;
        pmlp(d, &with(&["prune-train", "--out", "prune"]), t)?;
        pmlp(
            d,
            &with(&["eval", "--net", "prune/network.txt", "--out", "eval"]),
            t,
        )?;
        pmlp(d, &with(&["compare", "--runs", "4", "--out", "compare"]), t)?;
        Ok(tree(d))
    };
    let result = (|| -> Result<String, String> {
        let a = session("a", 1)?;
        let b = session("b", 4)?;
        let c = session("c", 4)?;
        let files = a.len();
        if a == b && b == c {
            Ok(format!(
                "gen, embed, train, prune-train, eval, compare: {files} files byte-identical across 3 runs (1 and 4 threads)"
            ))
        } else {
            let diff: Vec<&String> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| &x.0)
                .collect();
            Err(format!("outputs differ: {diff:?}"))
        }
    })();
    match result {
        Ok(d) => outcome(true, d),
        Err(d) => outcome(false, d),
    }
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "Jacobian matches central differences",
            criterion_1,
            Duration::from_secs(5),
        ),
        ("LM oracle recovery", criterion_2, Duration::MAX),
        ("damped-step law", criterion_3, Duration::MAX),
        (
            "bootstrap calibration",
            criterion_4,
            Duration::from_secs(60),
        ),
        (
            "teacher-student pruning recovery",
            criterion_5,
            Duration::MAX,
        ),
        ("end-to-end parity", criterion_6, Duration::from_secs(600)),
        (
            "protocol reproduction",
            criterion_7,
            Duration::from_secs(300),
        ),
        ("determinism", criterion_8, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(", limit {} s", limit.as_secs())
        };
        println!(
            "criterion {} {}: {name}: {} [{:.2} s{budget}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
