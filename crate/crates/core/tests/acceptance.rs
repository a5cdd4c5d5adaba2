//! Acceptance suite: one status line per criterion.
//!
//! `SPINE_ACCEPTANCE=1,3,12` restricts the run to the listed criteria.
//! `SPINE_ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit.
//! Criteria that need external data read `SPINE_MNIST_DIR` (IDX files),
//! `SPINE_BANKNOTE_CSV`, `SPINE_IRIS_CSV`, `SPINE_PIMA_CSV` and
//! `SPINE_CIFAR_BATCH`; the bundled Iris and Pima files are the defaults.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use spine::analyze::{expressed_components, locality_fractions, perturbation_profile, PerturbationConfig, Slice1d};
use spine::data::{load_cifar_batch, load_csv, CsvSchema, Dataset};
use spine::evolve::{distill_to_maxmin, targeted_learning, Region, TargetOptions};
use spine::experiments::*;
use spine::grad::finite_difference_check;
use spine::model::Form;
use spine::train::{evaluate, Loss, TrainConfig};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// Every part that ran passed, but some part needs absent data.
    Partial,
    NotRun,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Partial => "PARTIAL",
            Status::NotRun => "NOT RUN",
        }
    }

    fn from(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

type Outcome = (Status, String);

/// Training runs shared between criteria 1, 10 and 12.
#[derive(Default)]
struct Shared {
    sim: Option<(Dataset, Vec<SimRun>)>,
}

impl Shared {
    fn sim_runs(&mut self, seeds: usize) -> &(Dataset, Vec<SimRun>) {
        if self.sim.as_ref().is_none_or(|(_, r)| r.len() < seeds) {
            let setup = SimSetup::linear();
            let data = setup.data().unwrap();
            let runs = (0..seeds as u64)
                .map(|s| run_sim_regression(&setup, &data, s).unwrap())
                .collect();
            self.sim = Some((data, runs));
        }
        self.sim.as_ref().unwrap()
    }
}

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).map(PathBuf::from).filter(|p| !p.as_os_str().is_empty())
}

fn bundled(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci").join(file)
}

fn sim_regression(shared: &mut Shared) -> Outcome {
    let (_, runs) = shared.sim_runs(10);
    let mses: Vec<f64> = runs.iter().map(|r| r.best_mse).collect();
    let best = mses.iter().copied().fold(f64::INFINITY, f64::min);
    let good = mses.iter().filter(|&&m| m <= 0.05).count();
    let tight = mses.iter().filter(|&&m| m <= 0.02).count();
    // Training-side invariant checked on the same runs: the best epoch's
    // loss is at least ten times below the first epoch's.
    let dropped = runs
        .iter()
        .filter(|r| r.history.records[0].loss >= 10.0 * r.history.best_loss())
        .count();
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let diverged = runs.iter().any(|r| r.history.diverged.is_some());
    (
        Status::from(best <= 0.02 && good >= 8 && slowest <= 120.0 && !diverged),
        format!(
            "best MSE {best:.4} (≤ 0.02), {good}/10 seeds ≤ 0.05 ({tight}/10 ≤ 0.02), \
             loss fell ≥ 10x on {dropped}/10, slowest seed {slowest:.1} s"
        ),
    )
}

fn sinusoidal() -> Outcome {
    let setup = SimSetup::sinusoidal();
    let data = setup.data().unwrap();
    let runs: Vec<SimRun> = (0..10).map(|s| run_sim_regression(&setup, &data, s).unwrap()).collect();
    let worst = runs.iter().map(|r| r.best_mse).fold(0.0, f64::max);
    let best = runs.iter().map(|r| r.best_mse).fold(f64::INFINITY, f64::min);
    let diverged = runs.iter().filter(|r| r.history.diverged.is_some()).count();
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    (
        Status::from(worst <= 0.5 && diverged == 0 && slowest <= 120.0),
        format!("MSE range {best:.4}..{worst:.4} over 10 seeds (≤ 0.5), {diverged} diverged, slowest {slowest:.1} s"),
    )
}

fn spiral() -> Outcome {
    let setup = SpiralSetup::default();
    let (train, test) = setup.data().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for u in [4usize, 8, 16] {
        let start = Instant::now();
        let mut hit = None;
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let run = run_spiral(&setup, &train, &test, u, seed).unwrap();
            accs.push(run.test_accuracy());
            if run.test_accuracy() == 1.0 {
                hit = Some(seed);
                break;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ok &= hit.is_some() && secs <= 300.0;
        let accs: Vec<String> = accs.iter().map(|a| format!("{:.2}%", 100.0 * a)).collect();
        parts.push(format!("u={u}: [{}] {secs:.0} s", accs.join(" ")));
    }
    let start = Instant::now();
    let one = run_spiral(&setup, &train, &test, 1, 0).unwrap().test_accuracy();
    let secs = start.elapsed().as_secs_f64();
    ok &= one <= 0.85 && secs <= 300.0;
    parts.push(format!("u=1: {:.2}% (≤ 85%) {secs:.0} s", 100.0 * one));
    (Status::from(ok), parts.join("; "))
}

fn sandwich_bound() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(4);
    let (mut violations, mut nonmonotone, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    for _ in 0..1000 {
        let mut m = common::random_model(&mut rng, 3, 8, 8, 1.0, &common::FAMILIES);
        let n_max = m.structure.max_head_size() as f64;
        let m_max = m.structure.max_polytope_size() as f64;
        for _ in 0..100 {
            let x = common::random_point(&mut rng, m.input_dim());
            let exact = m.forward_maxmin(&x).unwrap().values;
            let mut gaps = Vec::new();
            for a in [1.0, 10.0, 100.0] {
                m.a = a;
                let smooth = m.forward_logexp(&x).unwrap();
                let bound = m_max.ln().max(n_max.ln()) / a;
                let gap = smooth
                    .iter()
                    .zip(&exact)
                    .map(|(s, e)| (s - e).abs())
                    .fold(0.0, f64::max);
                let slack = 1e-12 * exact.iter().fold(1.0f64, |acc, e| acc.max(e.abs()));
                if gap > bound + slack {
                    violations += 1;
                }
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(gap / bound);
                }
                gaps.push(gap);
            }
            // Heads with a single component agree exactly at a=1, so only
            // differences beyond rounding count.
            let slack = 1e-12 * exact.iter().fold(1.0f64, |acc, e| acc.max(e.abs()));
            if gaps[2] > gaps[0] + slack {
                nonmonotone += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        Status::from(violations == 0 && nonmonotone == 0 && secs < 60.0),
        format!(
            "1000 models × 100 points × 3 sharpnesses: {violations} bound violations, \
             {nonmonotone} points where the a=100 gap exceeds the a=1 gap, worst gap/bound {worst_ratio:.3}, {secs:.1} s"
        ),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(5);
    let (mut worst, mut raw) = (0.0f64, 0.0f64);
    let mut families = BTreeSet::new();
    let (mut complemented, mut trees) = (false, 0);
    for k in 0..50 {
        let a = [0.5, 1.0, 5.0, 10.0][k % 4];
        let m = if k % 5 == 4 {
            trees += 1;
            common::random_tree_model(&mut rng, a)
        } else {
            common::random_model(&mut rng, 3, 4, 4, a, &common::FAMILIES)
        };
        for c in &m.structure.components {
            families.insert(c.family.tag());
            complemented |= c.complemented;
        }
        for _ in 0..20 {
            let x = common::random_point(&mut rng, m.input_dim());
            let r = finite_difference_check(&m, &x, 1e-6).unwrap();
            worst = worst.max(r.max_rel_error);
            raw = raw.max(r.max_raw_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let all = families.len() == 4 && complemented && trees > 0;
    (
        Status::from(worst < 1e-5 && all && secs < 60.0),
        format!(
            "50 models × 20 points ({} families, complemented sigmoids: {complemented}, {trees} aliased trees): \
             max relative error {worst:.2e} beyond rounding noise (< 1e-5; undiscounted {raw:.1e}, \
             dominated by partials below 1e-6), {secs:.1} s",
            families.len()
        ),
    )
}

fn mnist_data() -> Option<(Dataset, Dataset)> {
    env_path("SPINE_MNIST_DIR").map(|d| load_mnist(d).unwrap())
}

fn mnist(data: Option<&(Dataset, Dataset)>) -> Outcome {
    let Some((train, test)) = data else {
        return (Status::NotRun, "set SPINE_MNIST_DIR to a directory with the four MNIST IDX files".into());
    };
    let run = run_mnist(train, test, 0.1, 0).unwrap();
    let acc = run.test_accuracy();
    (
        Status::from(acc >= 0.97 && run.seconds <= 45.0 * 60.0),
        format!("test accuracy {:.2}% (≥ 97%), {:.0} s", 100.0 * acc, run.seconds),
    )
}

fn distillation(data: Option<&(Dataset, Dataset)>) -> Outcome {
    let setup = SimSetup { a: 20.0, ..SimSetup::linear() };
    let sim = setup.data().unwrap();
    let runs: Vec<DistillRun> = (0..5).map(|s| distill_sim_regression(&setup, &sim, s, 20).unwrap()).collect();
    let ratios: Vec<f64> = runs.iter().map(|r| r.maxmin_after_mse / r.logexp_mse).collect();
    let fast_ok = ratios.iter().all(|&r| r <= 2.0);
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    let mut detail = format!("sim-regression a=20, distilled/log-exp MSE per seed [{}] (≤ 2)", ratios.join(" "));
    let Some((train, test)) = data else {
        detail.push_str("; MNIST part not run (SPINE_MNIST_DIR unset)");
        return (if fast_ok { Status::Partial } else { Status::Fail }, detail);
    };
    let run = run_mnist(train, test, 10.0, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 1000,
        learning_rate: 1e-2,
        loss: Loss::Nll,
        ..TrainConfig::default()
    };
    let (mm, _) = distill_to_maxmin(&run.model, train, &cfg).unwrap();
    assert_eq!(mm.form, Form::MaxMin);
    let le = run.test_accuracy();
    let acc = evaluate(&mm, test, Loss::Nll).unwrap().accuracy.unwrap();
    let slow_ok = acc >= le - 0.015;
    detail.push_str(&format!(
        "; MNIST a=10 log-exp {:.2}% → max-min {:.2}% (within 1.5 points)",
        100.0 * le,
        100.0 * acc
    ));
    (Status::from(fast_ok && slow_ok), detail)
}

fn uci() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut missing = false;
    let cases = [
        ("iris", env_path("SPINE_IRIS_CSV").or(Some(bundled("iris.csv"))), 1.0),
        ("banknote", env_path("SPINE_BANKNOTE_CSV"), 1.0),
        ("pima", env_path("SPINE_PIMA_CSV").or(Some(bundled("pima.csv"))), 0.72),
    ];
    for (name, path, need) in cases {
        let Some(path) = path.filter(|p| p.exists()) else {
            missing = true;
            parts.push(format!("{name}: not run (no CSV supplied)"));
            continue;
        };
        let ds = load_csv(&path, &CsvSchema::default()).unwrap();
        let r = repeated_splits(&ds, 0..10).unwrap();
        ok &= r.best() >= need;
        parts.push(format!(
            "{name}: best {:.1}% mean {:.1}% over 10 splits (need {:.0}%)",
            100.0 * r.best(),
            100.0 * r.mean(),
            100.0 * need
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 120.0;
    parts.push(format!("{secs:.1} s"));
    let status = match (ok, missing) {
        (false, _) => Status::Fail,
        (true, true) => Status::Partial,
        (true, false) => Status::Pass,
    };
    (status, parts.join("; "))
}

fn targeting() -> Outcome {
    let setup = SimSetup {
        unions: 6,
        ..SimSetup::linear()
    };
    let data = setup.data().unwrap();
    let mut good = 0;
    let mut parts = Vec::new();
    for seed in 0..10 {
        let run = run_sim_regression(&setup, &data, seed).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            ..setup.config(seed)
        };
        let (_, r) = targeted_learning(
            &run.model,
            &data,
            &Region::Auto {
                bins: Region::AUTO_BINS,
            },
            &TargetOptions::default(),
            &cfg,
        )
        .unwrap();
        let region = r.after.region.loss / r.before.region.loss - 1.0;
        let global = r.after.global.loss / r.before.global.loss - 1.0;
        if region <= -0.30 && global <= 0.05 {
            good += 1;
        }
        parts.push(format!("{:+.0}%/{:+.0}%", 100.0 * region, 100.0 * global));
    }
    (
        Status::from(good >= 8),
        format!(
            "u=6 i=3, worst of 50 bins, 500 epochs: {good}/10 seeds with region ≤ -30% and global ≤ +5% \
             (need 8); region/global change per seed [{}]",
            parts.join(" ")
        ),
    )
}

fn maxmin_direct(shared: &mut Shared) -> Outcome {
    let setup = SimSetup::linear();
    let (data, runs) = shared.sim_runs(10);
    let demos: Vec<MaxMinDemo> = runs
        .iter()
        .map(|r| maxmin_failure_demo(&setup, data, r.seed, Some(r)).unwrap())
        .collect();
    let fewer = demos.iter().filter(|d| d.direct_expressed < d.logexp_expressed).count();
    let pairs: Vec<String> = demos
        .iter()
        .map(|d| format!("{}<{}", d.direct_expressed, d.logexp_expressed))
        .collect();
    (
        Status::from(fewer >= 8),
        format!(
            "direct max-min expresses fewer components on {fewer}/10 seeds (need 8); direct<log-exp [{}]",
            pairs.join(" ")
        ),
    )
}

fn noise() -> Outcome {
    let levels: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let rows = noise_analysis(&SimSetup::linear(), &levels, 0).unwrap();
    let noisy: Vec<f64> = rows.iter().map(|r| r.mse_noisy).collect();
    let rho = spearman(&levels, &noisy);
    let below = rows.iter().all(|r| r.mse_noiseless < r.mse_noisy);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1}:{:.2e}/{:.2e}", r.noise, r.mse_noisy, r.mse_noiseless))
        .collect();
    (
        Status::from(rho == 1.0 && below),
        format!(
            "Spearman ρ {rho:.3} (need 1), noiseless below noisy everywhere: {below}; noise:noisy/noiseless [{}]",
            table.join(" ")
        ),
    )
}

fn locality(shared: &mut Shared) -> Outcome {
    let (_, runs) = shared.sim_runs(1);
    let model = &runs[0].model;
    let slice = Slice1d::interval(0.0, 1.0);
    let profile = perturbation_profile(model, &slice, &PerturbationConfig::default()).unwrap();
    let fractions = locality_fractions(model, &profile, 0).unwrap();
    let local = fractions.iter().filter(|&&f| f >= 0.8).count();
    let share = local as f64 / fractions.len() as f64;
    let expressed = expressed_components(model, &profile.inputs).unwrap();
    let (mut el, mut et) = (0, 0);
    for j in &expressed {
        for k in model.structure.components[*j].params.clone() {
            et += 1;
            if fractions[k] >= 0.8 {
                el += 1;
            }
        }
    }
    (
        Status::from(share >= 0.8),
        format!(
            "{local}/{} parameters ({:.0}%) keep ≥ 80% of their output spread inside their component's active bins \
             (need 80%); {} of {} components are expressed on the slice, and {el}/{et} of their parameters are local",
            fractions.len(),
            100.0 * share,
            expressed.len(),
            model.structure.components.len()
        ),
    )
}

fn pre_linear_path() -> Outcome {
    let start = Instant::now();
    let data = match env_path("SPINE_CIFAR_BATCH") {
        Some(p) => load_cifar_batch(p, Some(500)).unwrap(),
        None => synthetic_cifar(500, 0).unwrap(),
    };
    let (model, history) = cifar_smoke(&data, 2, 0).unwrap();
    let merged = model.merge_pre_linear().unwrap();
    let mut worst = 0.0f64;
    for i in 0..data.n {
        let a = model.predict_raw(data.row(i)).unwrap();
        let b = merged.predict_raw(data.row(i)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    let source = if env_path("SPINE_CIFAR_BATCH").is_some() { "CIFAR batch" } else { "synthetic" };
    let finite = history.records.iter().all(|r| r.loss.is_finite());
    (
        Status::from(worst <= 1e-9 && history.diverged.is_none() && finite),
        format!(
            "{source} 500×3072, pre-linear 300: 2 epochs without divergence (final loss {:.3}); merged vs unmerged max diff {worst:.1e} (≤ 1e-9), {:.1} s",
            history.final_record().map_or(f64::NAN, |r| r.loss),
            start.elapsed().as_secs_f64()
        ),
    )
}

type Check<'a> = Box<dyn FnOnce(&mut Shared) -> Outcome + 'a>;

fn main() {
    let selected: Option<BTreeSet<u32>> = std::env::var("SPINE_ACCEPTANCE")
        .ok()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("SPINE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wants = |id: u32| selected.as_ref().is_none_or(|s| s.contains(&id));

    let mut shared = Shared::default();
    let mnist_sets = if wants(6) || wants(7) { mnist_data() } else { None };
    let criteria: Vec<(u32, &str, Check<'_>)> = vec![
        (1, "simulated regression, linear", Box::new(sim_regression)),
        (2, "simulated regression, sinusoidal", Box::new(|_| sinusoidal())),
        (3, "spiral classification", Box::new(|_| spiral())),
        (4, "log-exp / max-min sandwich bound", Box::new(|_| sandwich_bound())),
        (5, "analytic gradients", Box::new(|_| gradients())),
        (6, "MNIST", Box::new(|_| mnist(mnist_sets.as_ref()))),
        (7, "max-min distillation", Box::new(|_| distillation(mnist_sets.as_ref()))),
        (8, "UCI tables", Box::new(|_| uci())),
        (9, "targeted learning", Box::new(|_| targeting())),
        (10, "direct max-min training", Box::new(maxmin_direct)),
        (11, "noise analysis", Box::new(|_| noise())),
        (12, "perturbation locality", Box::new(locality)),
        (13, "pre-linear merge + image smoke run", Box::new(|_| pre_linear_path())),
    ];
    let mut failed = 0;
    for (id, title, run) in criteria {
        if !wants(id) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = run(&mut shared);
        if status == Status::Fail {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<7} {title} [{:.0} s]: {detail}",
            status.label(),
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failing");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
