use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::settings::Settings;
use super::{Cli, CliError, Command, Outcome};
use crate::data::{self, Dataset, Split};
use crate::distributions::{density_grid, verify_limit_property, CategoricalPmf};
use crate::divergence::{
    bound_sweep, check_information_monotonicity, summarize, write_sweep_records, write_sweep_summary, AlphaGenerator,
    Partition, SweepConfig,
};
use crate::expfam::{bound_chain, random_instance};
use crate::parallel::Exec;
use crate::sampling::Rng;
use crate::vae::{self, ModelConfig, ModelKind, TrainConfig};

const DEFAULT_TEMPERATURES: &str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.1,1.2,1.3,1.4,1.5,1.6";

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("kind", "cgbpef"),
    ("d", "8"),
    ("M", "5"),
    ("R", "51"),
    ("C", "10"),
    ("L", "1"),
    ("tmin", "0.8"),
    ("tmax", "1"),
    ("gamma", "0.001"),
    ("batch", "100"),
    ("iters", "2000"),
    ("hidden", "64"),
    ("mnist-images", ""),
    ("limit", "2000"),
    ("per-class", "140"),
    ("noise", "0.05"),
    ("valid-every", "100"),
    ("eval-samples", "1"),
];

const THEOREM1_KEYS: &[(&str, &str)] = &[
    ("triples", "500"),
    ("max-support", "200"),
    ("samples", "100000"),
    ("alpha", "1/2,1/3,1/6"),
    ("temperatures", "0.1,0.5,1.0"),
    ("tolerance", "0.01"),
    ("fixture", "none"),
];

const THEOREM2_KEYS: &[(&str, &str)] = &[
    ("instances", "100"),
    ("max-support", "50"),
    ("max-stats", "5"),
    ("max-members", "10"),
    ("fixture", "none"),
];

const SWEEP_KEYS: &[(&str, &str)] = &[
    ("generator", "dirichlet(0.5)"),
    ("R", "100"),
    ("trials", "100"),
    ("samples", "100000"),
    ("bins", "100"),
    ("temperatures", DEFAULT_TEMPERATURES),
];

const DENSITY_KEYS: &[(&str, &str)] = &[
    ("alpha", "1/3,1/3,1/3"),
    ("samples", "1000000"),
    ("bins", "6"),
    ("temperatures", DEFAULT_TEMPERATURES),
    ("min-count", "500"),
];

const GRAD_CHECK_KEYS: &[(&str, &str)] = &[
    ("kinds", "gauss,cat,cgbpef"),
    ("d", "2"),
    ("M", "3"),
    ("R", "11"),
    ("C", "4"),
    ("L", "2"),
    ("tmin", "0.7"),
    ("tolerance", "0.0001"),
    ("corrupt-gradient", "false"),
];

type Flags = Vec<(&'static str, Option<String>)>;

fn flag(key: &'static str, v: &Option<String>) -> (&'static str, Option<String>) {
    (key, v.clone())
}

pub(super) fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let mut flags: Flags = vec![flag("seed", &cli.seed), flag("threads", &cli.threads)];
    let (name, defaults) = match &cli.command {
        Command::Train(a) => {
            flags.extend([
                flag("kind", &a.kind),
                flag("d", &a.d),
                flag("M", &a.m),
                flag("R", &a.r),
                flag("C", &a.c),
                flag("L", &a.l),
                flag("tmin", &a.tmin),
                flag("tmax", &a.tmax),
                flag("gamma", &a.gamma),
                flag("batch", &a.batch),
                flag("iters", &a.iters),
                flag("hidden", &a.hidden),
                flag("mnist-images", &a.mnist_images),
                flag("limit", &a.limit),
                flag("per-class", &a.per_class),
                flag("noise", &a.noise),
                flag("valid-every", &a.valid_every),
                flag("eval-samples", &a.eval_samples),
            ]);
            ("train", TRAIN_KEYS)
        }
        Command::VerifyTheorem1(a) => {
            flags.extend([
                flag("triples", &a.triples),
                flag("max-support", &a.max_support),
                flag("samples", &a.samples),
                flag("alpha", &a.alpha),
                flag("temperatures", &a.temperatures),
                flag("tolerance", &a.tolerance),
                flag("fixture", &a.fixture),
            ]);
            ("verify-theorem1", THEOREM1_KEYS)
        }
        Command::VerifyTheorem2(a) => {
            flags.extend([
                flag("instances", &a.instances),
                flag("max-support", &a.max_support),
                flag("max-stats", &a.max_stats),
                flag("max-members", &a.max_members),
                flag("fixture", &a.fixture),
            ]);
            ("verify-theorem2", THEOREM2_KEYS)
        }
        Command::BoundSweep(a) => {
            flags.extend([
                flag("generator", &a.generator),
                flag("R", &a.r),
                flag("trials", &a.trials),
                flag("samples", &a.samples),
                flag("bins", &a.bins),
                flag("temperatures", &a.temperatures),
            ]);
            ("bound-sweep", SWEEP_KEYS)
        }
        Command::Density(a) => {
            flags.extend([
                flag("alpha", &a.alpha),
                flag("samples", &a.samples),
                flag("bins", &a.bins),
                flag("temperatures", &a.temperatures),
                flag("min-count", &a.min_count),
            ]);
            ("density", DENSITY_KEYS)
        }
        Command::GradCheck(a) => {
            flags.extend([
                flag("kinds", &a.kinds),
                flag("d", &a.d),
                flag("M", &a.m),
                flag("R", &a.r),
                flag("C", &a.c),
                flag("L", &a.l),
                flag("tmin", &a.tmin),
                flag("tolerance", &a.tolerance),
                ("corrupt-gradient", a.corrupt_gradient.then(|| "true".to_string())),
            ]);
            ("grad-check", GRAD_CHECK_KEYS)
        }
    };
    let settings = Settings::resolve(name, defaults, cli.config.as_deref(), &flags)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("cgvae-out").join(name));
    fs::create_dir_all(&out).map_err(crate::Error::from)?;
    fs::write(out.join("resolved_config.txt"), settings.to_text()).map_err(crate::Error::from)?;
    let exec = Exec::with_threads(settings.get("threads")?);
    match &cli.command {
        Command::Train(_) => cmd_train(&settings, &out),
        Command::VerifyTheorem1(_) => cmd_verify_theorem1(&settings, &out, &exec),
        Command::VerifyTheorem2(_) => cmd_verify_theorem2(&settings, &out),
        Command::BoundSweep(_) => cmd_bound_sweep(&settings, &out, &exec),
        Command::Density(_) => cmd_density(&settings, &out, &exec),
        Command::GradCheck(_) => cmd_grad_check(&settings, &out),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(crate::Error::from)?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn write_row<const N: usize>(w: &mut csv::Writer<BufWriter<File>>, row: [String; N]) -> Result<(), CliError> {
    w.write_record(row).map_err(crate::Error::from)?;
    Ok(())
}

fn finish(mut w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    w.flush().map_err(crate::Error::from)?;
    Ok(())
}

fn write_report(out: &Path, text: &str) -> Result<(), CliError> {
    fs::write(out.join("report.txt"), text).map_err(crate::Error::from)?;
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn model_kind(s: &Settings) -> Result<ModelKind, CliError> {
    Ok(match s.raw("kind") {
        "gauss" => ModelKind::Gauss,
        "cat" => ModelKind::Cat { categories: s.get("C")? },
        "cgbpef" => ModelKind::CgBpef {
            order: s.get("M")?,
            resolution: s.get("R")?,
        },
        other => return Err(CliError::Usage(format!("unknown model kind `{other}`"))),
    })
}

fn load_dataset(s: &Settings, rng: &Rng) -> Result<Dataset, CliError> {
    let path = s.raw("mnist-images");
    let ds = if path.is_empty() {
        data::synth_grid_digits(s.get("per-class")?, s.get("noise")?, &mut rng.split(0))?
    } else {
        data::load_idx(Path::new(path), Some(s.get("limit")?))?.binarized()
    };
    Ok(data::split(&ds, [11.0, 1.0, 2.0], &mut rng.split(1))?)
}

fn cmd_train(s: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let seed: u64 = s.get("seed")?;
    let root = Rng::new(seed);
    let data = load_dataset(s, &root.split(10))?;
    let hidden = s
        .list("hidden")
        .iter()
        .map(|h| h.parse().map_err(|_| CliError::Usage(format!("bad hidden width `{h}`"))))
        .collect::<Result<Vec<usize>, _>>()?;
    let model = ModelConfig {
        kind: model_kind(s)?,
        hidden,
        latent: s.get("d")?,
        samples: s.get("L")?,
        t_max: s.get("tmax")?,
        t_min: s.get("tmin")?,
        input_dim: data.dim(),
    };
    let tc = TrainConfig {
        lr: s.get("gamma")?,
        batch: s.get("batch")?,
        iterations: s.get("iters")?,
        seed,
        valid_every: s.get("valid-every")?,
        eval_samples: s.get("eval-samples")?,
    };
    let result = vae::train(&model, &tc, &data)?;

    let mut w = csv_writer(&out.join("history.csv"))?;
    write_row(&mut w, ["iteration", "temperature", "term1", "term2", "L", "split"].map(String::from))?;
    for h in &result.history {
        let r = &h.report;
        write_row(
            &mut w,
            [
                r.iteration.to_string(),
                r.temperature.to_string(),
                r.term1.to_string(),
                r.term2.to_string(),
                r.total.to_string(),
                h.split.name().to_string(),
            ],
        )?;
    }
    finish(w)?;
    vae::save_snapshot(&out.join("model.cgv"), &model, &result.best)?;

    let mut report = String::new();
    let _ = writeln!(report, "model: {}", model.kind.name());
    let _ = writeln!(report, "data: {} ({} items of dimension {})", data.provenance, data.len(), data.dim());
    for split in [Split::Train, Split::Valid, Split::Test] {
        let _ = writeln!(report, "{} items: {}", split.name(), data.indices(split).len());
    }
    let _ = writeln!(report, "iterations: {}", tc.iterations);
    let valid: Vec<f64> = result
        .history
        .iter()
        .filter(|h| h.split == Split::Valid)
        .map(|h| h.report.total)
        .collect();
    if let (Some(first), Some(last)) = (valid.first(), valid.last()) {
        let _ = writeln!(report, "initial valid L: {first}");
        let _ = writeln!(report, "final valid L: {last}");
    }
    if let Some(b) = result.best_valid {
        let _ = writeln!(report, "best valid L: {b}");
    }
    if let Some(d) = &result.divergence {
        let _ = writeln!(report, "diverged at iteration {}: {}", d.iteration, d.detail);
        write_report(out, &report)?;
        return Ok(Outcome::Diverged);
    }
    let test_split = if data.indices(Split::Test).is_empty() { Split::Train } else { Split::Test };
    let test = vae::evaluate(&model, &result.best, &data, test_split, &root.split(20), tc.eval_samples)?;
    let _ = writeln!(report, "{} term1: {}", test_split.name(), test.term1);
    let _ = writeln!(report, "{} term2: {}", test_split.name(), test.term2);
    let _ = writeln!(report, "{} L: {}", test_split.name(), test.total);
    write_report(out, &report)?;
    Ok(Outcome::Pass)
}

fn cmd_verify_theorem1(s: &Settings, out: &Path, exec: &Exec) -> Result<Outcome, CliError> {
    let root = Rng::new(s.get("seed")?);
    let triples: usize = s.get("triples")?;
    let max_support: usize = s.get("max-support")?;
    if max_support < 2 {
        return Err(CliError::Usage("max-support must be at least 2".into()));
    }
    let identical = match s.raw("fixture") {
        "none" => false,
        "identical" => true,
        other => return Err(CliError::Usage(format!("unknown fixture `{other}`"))),
    };

    let mut mono_ok = true;
    let mut w = csv_writer(&out.join("monotonicity.csv"))?;
    write_row(&mut w, ["triple", "support", "cells", "kl_fine", "kl_coarse", "pass"].map(String::from))?;
    for i in 0..triples {
        let mut rng = root.split(0).split(i as u64);
        let support = 2 + rng.below(max_support - 1);
        let cells = 1 + rng.below(support);
        let p = AlphaGenerator::UniformSimplex.sample(support, &mut rng);
        let q = if identical {
            p.clone()
        } else {
            AlphaGenerator::UniformSimplex.sample(support, &mut rng)
        };
        let part = Partition::random(support, cells, &mut rng)?;
        let (fine, coarse) = check_information_monotonicity(&p, &q, &part)?;
        let ok = coarse <= fine + 1e-12;
        mono_ok &= ok;
        write_row(
            &mut w,
            [
                i.to_string(),
                support.to_string(),
                part.coarse_cells().to_string(),
                fine.to_string(),
                coarse.to_string(),
                ok.to_string(),
            ],
        )?;
    }
    finish(w)?;

    let alpha = CategoricalPmf::from_weights(&s.reals("alpha")?)?;
    let logits = alpha.logits();
    let samples: usize = s.get("samples")?;
    let tolerance: f64 = s.get("tolerance")?;
    let mut limit_ok = true;
    let mut w = csv_writer(&out.join("limit_property.csv"))?;
    write_row(&mut w, ["temperature", "category", "target", "frequency", "abs_error"].map(String::from))?;
    for (ti, t) in s.reals("temperatures")?.into_iter().enumerate() {
        let freq = verify_limit_property(&logits, t, samples, &root.split(1).split(ti as u64), exec)?;
        for (k, (&f, &a)) in freq.iter().zip(alpha.probs()).enumerate() {
            let err = (f - a).abs();
            limit_ok &= err <= tolerance;
            write_row(&mut w, [t.to_string(), k.to_string(), a.to_string(), f.to_string(), err.to_string()])?;
        }
    }
    finish(w)?;

    let report = format!(
        "information monotonicity over {triples} triples: {}\nargmax frequencies within {tolerance}: {}\n",
        verdict(mono_ok),
        verdict(limit_ok)
    );
    write_report(out, &report)?;
    Ok(if mono_ok && limit_ok { Outcome::Pass } else { Outcome::Fail })
}

/// Tolerance on the centroid/parametric-bound equality.
const CHAIN_EQ_TOL: f64 = 1e-10;
/// Slack allowed on the chain's inequalities, for rounding.
const CHAIN_SLACK: f64 = 1e-12;

fn cmd_verify_theorem2(s: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let root = Rng::new(s.get("seed")?);
    let instances: usize = s.get("instances")?;
    let (max_support, max_stats, max_members): (usize, usize, usize) =
        (s.get("max-support")?, s.get("max-stats")?, s.get("max-members")?);
    if max_support < 3 || max_stats == 0 || max_members == 0 {
        return Err(CliError::Usage("need max-support >= 3 and positive max-stats, max-members".into()));
    }
    let identical = match s.raw("fixture") {
        "none" => false,
        "identical" => true,
        other => return Err(CliError::Usage(format!("unknown fixture `{other}`"))),
    };
    let mut all_ok = true;
    let mut w = csv_writer(&out.join("theorem2_chain.csv"))?;
    write_row(
        &mut w,
        [
            "instance",
            "term1_at_random_phi",
            "term1_at_centroid",
            "parametric_bound",
            "nonparametric_bound",
        ]
        .map(String::from),
    )?;
    for i in 0..instances {
        let (fam, mut phis, mut phi_z) = random_instance(&mut root.split(i as u64), max_support, max_stats, max_members)?;
        if identical {
            phis = vec![phis[0].clone(); phis.len()];
            phi_z = phis[0].clone();
        }
        let c = bound_chain(i, &fam, &phis, &phi_z)?;
        all_ok &= c.holds(CHAIN_EQ_TOL, CHAIN_SLACK);
        write_row(
            &mut w,
            [
                c.instance.to_string(),
                c.term1_at_random_phi.to_string(),
                c.term1_at_centroid.to_string(),
                c.parametric_bound.to_string(),
                c.nonparametric_bound.to_string(),
            ],
        )?;
    }
    finish(w)?;
    write_report(
        out,
        &format!("bound chain over {instances} instances: {}\n", verdict(all_ok)),
    )?;
    Ok(if all_ok { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_bound_sweep(s: &Settings, out: &Path, exec: &Exec) -> Result<Outcome, CliError> {
    let cfg = SweepConfig {
        generator: AlphaGenerator::parse(s.raw("generator"))?,
        temperatures: s.reals("temperatures")?,
        trials: s.get("trials")?,
        resolution: s.get("R")?,
        samples: s.get("samples")?,
        bins: s.get("bins")?,
    };
    let records = bound_sweep(&cfg, &Rng::new(s.get("seed")?), exec)?;
    let summary = summarize(&records);
    write_sweep_records(&records, File::create(out.join("sweep_records.csv")).map_err(crate::Error::from)?)?;
    write_sweep_summary(&summary, File::create(out.join("sweep_summary.csv")).map_err(crate::Error::from)?)?;
    let mut report = String::new();
    for r in &summary {
        let _ = writeln!(
            report,
            "T={}: mean category KL {} {} mean z KL {}",
            r.temperature,
            r.kl_category_mean,
            if r.kl_category_mean >= r.kl_z_mean { ">=" } else { "<" },
            r.kl_z_mean
        );
    }
    write_report(out, &report)?;
    Ok(Outcome::Pass)
}

fn cmd_density(s: &Settings, out: &Path, exec: &Exec) -> Result<Outcome, CliError> {
    let root = Rng::new(s.get("seed")?);
    let alpha = CategoricalPmf::from_weights(&s.reals("alpha")?)?;
    let samples: usize = s.get("samples")?;
    let bins: usize = s.get("bins")?;
    let min_count: u64 = s.get("min-count")?;
    let labels = s.list("temperatures");
    let temps = s.reals("temperatures")?;
    let depth = (bins / 3).max(1);

    let mut summary = csv_writer(&out.join("density_summary.csv"))?;
    write_row(
        &mut summary,
        [
            "temperature",
            "samples",
            "near_vertex_fraction",
            "permutation_deviation",
            "corner_mass_0",
            "corner_mass_1",
            "corner_mass_2",
        ]
        .map(String::from),
    )?;
    let mut report = String::new();
    for (ti, (label, &t)) in labels.iter().zip(&temps).enumerate() {
        let grid = density_grid(&alpha, t, samples, bins, &root.split(ti as u64), exec)?;
        let mut w = csv_writer(&out.join(format!("density_T{label}.csv")))?;
        write_row(&mut w, ["a", "b", "c", "upward", "x", "y", "count"].map(String::from))?;
        for c in grid.cells() {
            write_row(
                &mut w,
                [
                    c.index[0].to_string(),
                    c.index[1].to_string(),
                    c.index[2].to_string(),
                    c.upward.to_string(),
                    c.x.to_string(),
                    c.y.to_string(),
                    c.count.to_string(),
                ],
            )?;
        }
        finish(w)?;
        let corners = [0, 1, 2].map(|k| grid.corner_mass(k, depth));
        write_row(
            &mut summary,
            [
                t.to_string(),
                grid.total().to_string(),
                grid.near_vertex_fraction().to_string(),
                grid.permutation_deviation(min_count).to_string(),
                corners[0].to_string(),
                corners[1].to_string(),
                corners[2].to_string(),
            ],
        )?;
        let _ = writeln!(
            report,
            "T={t}: near-vertex fraction {}, corner masses {:?}",
            grid.near_vertex_fraction(),
            corners
        );
    }
    finish(summary)?;
    write_report(out, &report)?;
    Ok(Outcome::Pass)
}

fn cmd_grad_check(s: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let seed: u64 = s.get("seed")?;
    let tolerance: f64 = s.get("tolerance")?;
    let corrupt: bool = s.get("corrupt-gradient")?;
    let mut all_ok = true;
    let mut w = csv_writer(&out.join("grad_check.csv"))?;
    write_row(&mut w, ["kind", "max_relative_error", "tolerance", "pass"].map(String::from))?;
    let mut report = String::new();
    for kind in s.list("kinds") {
        let kind = match kind.as_str() {
            "gauss" => ModelKind::Gauss,
            "cat" => ModelKind::Cat { categories: s.get("C")? },
            "cgbpef" => ModelKind::CgBpef {
                order: s.get("M")?,
                resolution: s.get("R")?,
            },
            other => return Err(CliError::Usage(format!("unknown model kind `{other}`"))),
        };
        let t: f64 = s.get("tmin")?;
        let cfg = ModelConfig {
            kind,
            hidden: vec![6],
            latent: s.get("d")?,
            samples: s.get("L")?,
            t_max: t,
            t_min: t,
            input_dim: 5,
        };
        let err = vae::model_grad_check(&cfg, 2, seed, corrupt)?;
        let ok = err < tolerance;
        all_ok &= ok;
        write_row(
            &mut w,
            [cfg.kind.name().to_string(), err.to_string(), tolerance.to_string(), ok.to_string()],
        )?;
        let _ = writeln!(report, "{}: max relative error {err}: {}", cfg.kind.name(), verdict(ok));
    }
    finish(w)?;
    write_report(out, &report)?;
    Ok(if all_ok { Outcome::Pass } else { Outcome::Fail })
}
