//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the criteria execute one after the
//! other and their wall-clock budgets are not shared with other tests.
//! Every CLI run uses `--threads 1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cgvae::autodiff::Tensor;
use cgvae::distributions::CategoricalPmf;
use cgvae::divergence::{check_information_monotonicity, kl_category_surrogate, Partition};
use cgvae::expfam::random_instance;
use cgvae::sampling::Rng;

const SEED: &str = "20240601";

struct Verdict {
    ok: bool,
    detail: String,
}

fn pass_if(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn cli(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["cgvae".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--seed".into(), SEED.into(), "--threads".into(), "1".into()]);
    argv.extend(["--out".into(), out.display().to_string()]);
    cgvae::cli::run(argv)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

/// Rows of a CSV file as header-keyed maps.
fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("column {key}: `{}`", row[key]))
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed <= Duration::from_secs(budget_s)
}

// Criterion runs. Each writes into `root/<name>` so that the determinism
// criterion can repeat them into a second root and compare files.

fn run_grad_check(root: &Path) -> (i32, Duration) {
    timed(|| cli(&root.join("grad_check"), &["grad-check"]))
}

fn run_theorem1(root: &Path) -> (i32, Duration) {
    timed(|| cli(&root.join("theorem1"), &["verify-theorem1"]))
}

fn run_sweep(root: &Path) -> (i32, Duration) {
    let args = [
        "bound-sweep",
        "--generator",
        "dirichlet(0.5)",
        "--R",
        "100",
        "--trials",
        "100",
        "--samples",
        "100000",
        "--temperatures",
        "0.1,0.2,0.3,0.4,0.5",
    ];
    timed(|| cli(&root.join("sweep"), &args))
}

fn run_theorem2(root: &Path) -> (i32, Duration) {
    let args = [
        "verify-theorem2",
        "--instances",
        "100",
        "--max-members",
        "10",
        "--max-support",
        "50",
        "--max-stats",
        "5",
    ];
    timed(|| cli(&root.join("theorem2"), &args))
}

fn run_density(root: &Path) -> (i32, Duration) {
    let args = ["density", "--alpha", "1/3,1/3,1/3", "--samples", "1000000"];
    timed(|| cli(&root.join("density"), &args))
}

fn training_args(kind: &str) -> Vec<&str> {
    let mut args = vec!["train", "--kind", kind];
    args.extend([
        "--d", "8", "--M", "5", "--R", "51", "--L", "1", "--tmax", "1", "--tmin", "0.8", "--gamma", "0.001", "--batch",
        "100", "--iters", "2000",
    ]);
    args
}

fn run_training(root: &Path) -> (i32, Duration) {
    timed(|| cli(&root.join("train_cgbpef"), &training_args("cgbpef")))
}

fn run_gauss_training(root: &Path) -> i32 {
    cli(&root.join("train_gauss"), &training_args("gauss"))
}

// Criteria.

fn criterion_1(root: &Path) -> Verdict {
    let (code, t) = run_grad_check(root);
    let rows = read_csv(&root.join("grad_check/grad_check.csv"));
    let kinds: Vec<&str> = rows.iter().map(|r| r["kind"].as_str()).collect();
    let worst = rows.iter().map(|r| num(r, "max_relative_error")).fold(0.0, f64::max);
    pass_if(
        code == 0 && kinds == ["gauss", "cat", "cgbpef"] && worst < 1e-4 && within(t, 30),
        format!("max relative error {worst:.3e} over {kinds:?}, exit {code}, {:.2}s", t.as_secs_f64()),
    )
}

fn criterion_2(root: &Path, t: Duration) -> Verdict {
    let rows = read_csv(&root.join("theorem1/limit_property.csv"));
    let target = [0.5, 1.0 / 3.0, 1.0 / 6.0];
    let mut worst: f64 = 0.0;
    let mut temps = Vec::new();
    for r in &rows {
        let k: usize = r["category"].parse().unwrap();
        worst = worst.max((num(r, "frequency") - target[k]).abs());
        let temp = num(r, "temperature");
        if !temps.contains(&temp) {
            temps.push(temp);
        }
    }
    pass_if(
        rows.len() == 9 && temps == [0.1, 0.5, 1.0] && worst <= 0.01 && within(t, 10),
        format!("worst |freq - alpha| {worst:.4} at T {temps:?}, {:.2}s", t.as_secs_f64()),
    )
}

/// KL between pmfs given as plain vectors, zero terms skipped.
fn kl_plain(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

fn criterion_3(root: &Path, t: Duration) -> Verdict {
    let rows = read_csv(&root.join("theorem1/monotonicity.csv"));
    let max_support = rows.iter().map(|r| num(r, "support") as usize).max().unwrap_or(0);
    let violations = rows
        .iter()
        .filter(|r| num(r, "kl_coarse") > num(r, "kl_fine") + 1e-12)
        .count();

    // Independent triples: plain normalized uniforms, aggregation done here.
    let mut rng = Rng::new(3);
    let mut oracle_gap: f64 = 0.0;
    let mut oracle_violations = 0;
    for _ in 0..500 {
        let support = 2 + rng.below(199);
        let cells = 1 + rng.below(support);
        let draw = |rng: &mut Rng| {
            let w: Vec<f64> = (0..support).map(|_| rng.uniform()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let (p, q) = (draw(&mut rng), draw(&mut rng));
        let assignment: Vec<usize> = (0..support).map(|i| if i < cells { i } else { rng.below(cells) }).collect();
        let mut pc = vec![0.0; cells];
        let mut qc = vec![0.0; cells];
        for (i, &c) in assignment.iter().enumerate() {
            pc[c] += p[i];
            qc[c] += q[i];
        }
        let (fine, coarse) = (kl_plain(&p, &q), kl_plain(&pc, &qc));
        if coarse > fine + 1e-12 {
            oracle_violations += 1;
        }
        let lib = check_information_monotonicity(
            &CategoricalPmf::new(p.clone()).unwrap(),
            &CategoricalPmf::new(q.clone()).unwrap(),
            &Partition::new(assignment).unwrap(),
        )
        .unwrap();
        oracle_gap = oracle_gap.max((lib.0 - fine).abs()).max((lib.1 - coarse).abs());
    }
    pass_if(
        rows.len() == 500 && max_support <= 200 && violations == 0 && oracle_violations == 0 && oracle_gap < 1e-12,
        format!(
            "{} triples (support up to {max_support}), {violations} violations; oracle triples: {oracle_violations} violations, \
             library vs oracle {oracle_gap:.1e}; {:.2}s",
            rows.len(),
            t.as_secs_f64()
        ),
    )
}

/// Numerically stable log-softmax: `(v - max) - ln Σ exp(v - max)`.
fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_sum = v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| (x - m) - ln_sum).collect()
}

/// `KL(softmax(beta) : softmax(alpha))` through log-probabilities.
fn kl_of_softmaxes(beta: &[f64], alpha: &[f64]) -> f64 {
    let (log_q, log_p) = (log_softmax(beta), log_softmax(alpha));
    log_q.iter().zip(&log_p).map(|(lq, lp)| lq.exp() * (lq - lp)).sum()
}

fn criterion_4_values() -> Vec<(f64, f64)> {
    let mut rng = Rng::new(4);
    (0..200)
        .map(|k| {
            let r = 2 + rng.below(49);
            let scale = if k % 2 == 0 { 3.0 } else { 500.0 };
            let draw = |rng: &mut Rng| (0..r).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect::<Vec<f64>>();
            let (beta, alpha) = (draw(&mut rng), draw(&mut rng));
            let lib = kl_category_surrogate(&Tensor::matrix(1, r, beta.clone()).unwrap(), &Tensor::matrix(1, r, alpha.clone()).unwrap())
                .unwrap();
            (lib, kl_of_softmaxes(&beta, &alpha))
        })
        .collect()
}

fn criterion_4() -> Verdict {
    let values = criterion_4_values();
    let worst = values.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let finite = values.iter().all(|(a, _)| a.is_finite());
    let largest = values.iter().map(|(_, b)| *b).fold(0.0, f64::max);
    pass_if(
        finite && worst <= 1e-12,
        format!("200 pairs (half with |logit| up to 500, KL up to {largest:.1}), worst gap {worst:.2e}"),
    )
}

fn criterion_5(root: &Path) -> Verdict {
    let (code, t) = run_sweep(root);
    let rows = read_csv(&root.join("sweep/sweep_records.csv"));
    let mut by_t: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = by_t.entry(r["temperature"].clone()).or_default();
        e.0 += num(r, "kl_category");
        e.1 += num(r, "kl_z_mc");
        e.2 += 1;
    }
    let mut ok = code == 0 && by_t.len() == 5 && within(t, 300);
    let mut parts = Vec::new();
    for (temp, (cat, z, n)) in &by_t {
        let (cat, z) = (cat / *n as f64, z / *n as f64);
        ok &= *n == 100 && cat >= z;
        parts.push(format!("T={temp}: {cat:.3} >= {z:.3}"));
    }
    pass_if(ok, format!("{}; {:.1}s", parts.join(", "), t.as_secs_f64()))
}

fn criterion_6_values() -> Vec<f64> {
    let root = Rng::new(6);
    let mut out = Vec::new();
    for i in 0..100 {
        let (fam, phis, _) = random_instance(&mut root.split(i), 50, 5, 10).unwrap();
        out.push(phis.iter().map(|p| fam.lemma_check(p).unwrap()).fold(0.0, f64::max));
    }
    out
}

fn criterion_6() -> Verdict {
    let (values, t) = timed(criterion_6_values);
    let worst = values.iter().copied().fold(0.0, f64::max);
    pass_if(
        worst < 1e-9 && within(t, 5),
        format!("100 instances, worst residual {worst:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

/// Rounding slack on the chain's inequalities; equal sides may differ in the last bits.
const ROUNDING: f64 = 1e-12;

fn criterion_7(root: &Path) -> Verdict {
    let (code, t) = run_theorem2(root);
    let rows = read_csv(&root.join("theorem2/theorem2_chain.csv"));
    let mut worst_eq: f64 = 0.0;
    let mut broken = 0;
    for r in &rows {
        let (random, centroid, param, nonparam) = (
            num(r, "term1_at_random_phi"),
            num(r, "term1_at_centroid"),
            num(r, "parametric_bound"),
            num(r, "nonparametric_bound"),
        );
        worst_eq = worst_eq.max((centroid - param).abs());
        if !(random + ROUNDING >= centroid && param + ROUNDING >= nonparam && nonparam >= -ROUNDING) {
            broken += 1;
        }
    }
    pass_if(
        code == 0 && rows.len() == 100 && broken == 0 && worst_eq <= 1e-10 && within(t, 60),
        format!(
            "{} rows, {broken} broken chains, worst |centroid - parametric| {worst_eq:.1e}, {:.2}s",
            rows.len(),
            t.as_secs_f64()
        ),
    )
}

fn criterion_8(root: &Path) -> Verdict {
    let (code, t) = run_density(root);
    let dir = root.join("density");
    let summary = read_csv(&dir.join("density_summary.csv"));
    let temps: Vec<String> = (1..=16).map(|k| format!("{:.1}", k as f64 / 10.0)).collect();
    let mut worst: f64 = 0.0;
    let mut cells_checked = 0;
    for label in &temps {
        let rows = read_csv(&dir.join(format!("density_T{label}.csv")));
        let counts: BTreeMap<[usize; 3], f64> = rows
            .iter()
            .map(|r| {
                let idx = ["a", "b", "c"].map(|k| r[k].parse::<usize>().unwrap());
                (idx, num(r, "count"))
            })
            .collect();
        for (idx, &c) in &counts {
            if c < 500.0 {
                continue;
            }
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mean = perms
                .iter()
                .map(|p| counts[&[idx[p[0]], idx[p[1]], idx[p[2]]]])
                .sum::<f64>()
                / 6.0;
            worst = worst.max((c - mean).abs() / mean);
            cells_checked += 1;
        }
    }
    // Near-vertex fraction, listed by increasing T, must not increase.
    let fractions: Vec<f64> = summary.iter().map(|r| num(r, "near_vertex_fraction")).collect();
    let monotone = fractions.windows(2).all(|w| w[0] >= w[1]);
    pass_if(
        code == 0 && summary.len() == 16 && worst < 0.1 && monotone && within(t, 120),
        format!(
            "16 grids, {cells_checked} cells with >= 500 counts, worst deviation {:.1}%, near-vertex fraction {:.3} (T=0.1) .. {:.4} (T=1.6), monotone: {monotone}, {:.1}s",
            100.0 * worst,
            fractions.first().copied().unwrap_or(f64::NAN),
            fractions.last().copied().unwrap_or(f64::NAN),
            t.as_secs_f64()
        ),
    )
}

fn test_line(report: &str) -> Option<f64> {
    report
        .lines()
        .find_map(|l| l.strip_prefix("test L: "))
        .and_then(|v| v.trim().parse().ok())
}

fn criterion_9(root: &Path) -> Verdict {
    let (code, t) = run_training(root);
    let rows = read_csv(&root.join("train_cgbpef/history.csv"));
    let exact = rows
        .iter()
        .all(|r| num(r, "L") == num(r, "term1") + num(r, "term2"));
    let valid: Vec<f64> = rows.iter().filter(|r| r["split"] == "valid").map(|r| num(r, "L")).collect();
    let (first, last) = (valid.first().copied().unwrap_or(f64::NAN), valid.last().copied().unwrap_or(f64::NAN));
    let drop = (first - last) / first;

    let gauss_code = run_gauss_training(root);
    let read_report = |name: &str| fs::read_to_string(root.join(name).join("report.txt")).unwrap_or_default();
    let (cg, ga) = (test_line(&read_report("train_cgbpef")), test_line(&read_report("train_gauss")));
    println!(
        "  soft comparison (not gated): test L cgbpef {} vs gauss {} (gauss exit {gauss_code})",
        cg.map_or("n/a".into(), |v| format!("{v:.3}")),
        ga.map_or("n/a".into(), |v| format!("{v:.3}"))
    );
    pass_if(
        code == 0 && exact && drop >= 0.2 && within(t, 600),
        format!(
            "valid L {first:.3} -> {last:.3} ({:.1}% lower), L = term1 + term2 in all {} rows: {exact}, {:.1}s",
            100.0 * drop,
            rows.len(),
            t.as_secs_f64()
        ),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_10(first: &Path, second: &Path) -> Verdict {
    run_grad_check(second);
    run_theorem1(second);
    run_sweep(second);
    run_theorem2(second);
    run_density(second);
    run_training(second);
    run_gauss_training(second);
    let (a, b) = (files_under(first), files_under(second));
    let csvs = a.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    let differing: Vec<String> = a
        .iter()
        .filter(|p| fs::read(first.join(p)).ok() != fs::read(second.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    let in_memory = criterion_4_values() == criterion_4_values() && criterion_6_values() == criterion_6_values();
    pass_if(
        a == b && differing.is_empty() && csvs > 0 && in_memory,
        format!(
            "{} files ({csvs} CSV) compared byte for byte, differing: {differing:?}; in-memory criteria repeat: {in_memory}",
            a.len()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; there is only one test here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let root = first.path();

    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id: u32, name: &'static str, v: Verdict| {
        println!("criterion {id:>2} {} {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    record(1, "gradient fidelity", criterion_1(root));
    let (code, t1) = run_theorem1(root);
    if code != 0 {
        println!("  verify-theorem1 exited with {code}");
    }
    record(2, "argmax limit property", criterion_2(root, t1));
    record(3, "information monotonicity", criterion_3(root, t1));
    record(4, "category KL identity", criterion_4());
    record(5, "bound sweep ordering", criterion_5(root));
    record(6, "negative entropy lemma", criterion_6());
    record(7, "lower-bound chain", criterion_7(root));
    record(8, "simplex density symmetry", criterion_8(root));
    record(9, "training sanity", criterion_9(root));
    record(10, "determinism", criterion_10(root, second.path()));

    let failed: Vec<u32> = results.iter().filter(|(_, _, v)| !v.ok).map(|(id, _, _)| *id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
