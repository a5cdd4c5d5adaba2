//! Ready-made experiment runners with the published hyperparameters. The
//! acceptance suite, the scripts and the CLI all go through these.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyze::expressed_components;
use crate::classify::{build_classifier, ClassifierSpec, Layout};
use crate::data::{gen_sim_regression, gen_spiral, load_idx, sim_regression_noiseless, split, Dataset};
use crate::error::Result;
use crate::evolve::{distill_to_maxmin, train_maxmin_direct};
use crate::model::{Family, Model, SetStructure};
use crate::train::{
    evaluate, fit, fit_default_scalers, init_params, Evaluation, History, InitScheme, Loss, Scaler, TrainConfig,
};

/// Uniform single-head regressor on the simulated curve.
#[derive(Clone, Debug, Serialize)]
pub struct SimSetup {
    pub family: Family,
    pub unions: usize,
    pub intersections: usize,
    pub a: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub n: usize,
    pub noise: f64,
    pub data_seed: u64,
}

impl SimSetup {
    pub fn linear() -> Self {
        SimSetup {
            family: Family::Linear,
            unions: 25,
            intersections: 3,
            a: 10.0,
            learning_rate: 1e-2,
            epochs: 2000,
            n: 1000,
            noise: 0.1,
            data_seed: 7,
        }
    }

    pub fn sinusoidal() -> Self {
        SimSetup {
            family: Family::Sinusoidal,
            unions: 33,
            ..SimSetup::linear()
        }
    }

    pub fn data(&self) -> Result<Dataset> {
        gen_sim_regression(self.n, self.noise, self.data_seed)
    }

    pub fn structure(&self) -> SetStructure {
        SetStructure::uniform(self.family, 1, self.unions, self.intersections)
    }

    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Initialized model with scalers fitted on `data`.
    pub fn model(&self, data: &Dataset, seed: u64) -> Result<Model> {
        let mut m = Model::new(self.structure(), self.a, None)?;
        m.theta = init_params(&m, seed, InitScheme::UniformFanIn);
        fit_default_scalers(&mut m, data);
        Ok(m)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimRun {
    pub seed: u64,
    #[serde(skip)]
    pub model: Model,
    pub history: History,
    /// Lowest per-epoch training MSE in z-scored target units.
    pub best_mse: f64,
    pub seconds: f64,
}

pub fn run_sim_regression(setup: &SimSetup, data: &Dataset, seed: u64) -> Result<SimRun> {
    let start = Instant::now();
    let mut model = setup.model(data, seed)?;
    let history = fit(&mut model, data, &setup.config(seed))?;
    Ok(SimRun {
        seed,
        best_mse: history.best_metric(),
        model,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Two-class spiral with `unions * intersections = components` per class.
#[derive(Clone, Debug, Serialize)]
pub struct SpiralSetup {
    pub n_per_class: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub components: usize,
    pub a: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SpiralSetup {
    fn default() -> Self {
        SpiralSetup {
            n_per_class: 2000,
            noise: 0.05,
            data_seed: 0,
            components: 64,
            a: 1.0,
            learning_rate: 5e-2,
            epochs: 3000,
            batch_size: 256,
        }
    }
}

impl SpiralSetup {
    /// Stratified 80/20 split of the generated spiral.
    pub fn data(&self) -> Result<(Dataset, Dataset)> {
        let full = gen_spiral(self.n_per_class, self.noise, self.data_seed)?;
        split(&full, 0.8, self.data_seed, true)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifierRun {
    pub seed: u64,
    #[serde(skip)]
    pub model: Model,
    pub history: History,
    pub train: Evaluation,
    pub test: Evaluation,
    pub seconds: f64,
}

impl ClassifierRun {
    pub fn test_accuracy(&self) -> f64 {
        self.test.accuracy.unwrap_or(f64::NAN)
    }
}

/// Builds a uniform linear classifier, fits z-score input scaling on
/// `train` and trains it with the negative log-likelihood.
pub fn run_classifier(
    train: &Dataset,
    test: &Dataset,
    unions: usize,
    intersections: usize,
    a: f64,
    cfg: &TrainConfig,
) -> Result<ClassifierRun> {
    let start = Instant::now();
    let spec = ClassifierSpec {
        num_classes: train.num_classes().unwrap_or(0),
        input_dim: train.d,
        family: Family::Linear,
        layout: Layout::Uniform { unions, intersections },
        a,
        pre_linear: None,
        seed: cfg.seed,
    };
    let mut model = build_classifier(&spec)?;
    fit_default_scalers(&mut model, train);
    let history = fit(&mut model, train, cfg)?;
    Ok(ClassifierRun {
        seed: cfg.seed,
        train: evaluate(&model, train, cfg.loss)?,
        test: evaluate(&model, test, cfg.loss)?,
        model,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_spiral(setup: &SpiralSetup, train: &Dataset, test: &Dataset, unions: usize, seed: u64) -> Result<ClassifierRun> {
    let cfg = TrainConfig {
        epochs: setup.epochs,
        batch_size: setup.batch_size,
        learning_rate: setup.learning_rate,
        loss: Loss::Nll,
        seed,
        ..TrainConfig::default()
    };
    run_classifier(train, test, unions, setup.components / unions, setup.a, &cfg)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoiseRow {
    pub noise: f64,
    /// Training MSE against the noisy targets, unit-scaled.
    pub mse_noisy: f64,
    /// MSE against the noiseless curve on the same grid and scale.
    pub mse_noiseless: f64,
}

/// Retrains `setup` at each noise level (same data seed, so only the noise
/// amplitude changes) and measures both errors in the model's 0–1 target
/// scale.
pub fn noise_analysis(setup: &SimSetup, levels: &[f64], seed: u64) -> Result<Vec<NoiseRow>> {
    let clean = sim_regression_noiseless(setup.n)?;
    levels
        .iter()
        .map(|&noise| {
            let s = SimSetup { noise, ..setup.clone() };
            let data = s.data()?;
            let run = run_sim_regression(&s, &data, seed)?;
            Ok(NoiseRow {
                noise,
                mse_noisy: evaluate(&run.model, &data, Loss::Mse)?.loss,
                mse_noiseless: evaluate(&run.model, &clean, Loss::Mse)?.loss,
            })
        })
        .collect()
}

/// Spearman rank correlation; ties share their mean rank.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxMinDemo {
    pub seed: u64,
    pub logexp_expressed: usize,
    pub logexp_mse: f64,
    pub direct_expressed: usize,
    pub direct_ever_active: usize,
    pub direct_mse: f64,
}

/// Trains the same structure and initialization once in log-exp form and
/// once directly in max-min form, then counts expressed components on the
/// training inputs. A log-exp run already trained with `seed` can be
/// passed in to avoid repeating it.
pub fn maxmin_failure_demo(setup: &SimSetup, data: &Dataset, seed: u64, logexp: Option<&SimRun>) -> Result<MaxMinDemo> {
    let owned;
    let logexp = match logexp {
        Some(r) => r,
        None => {
            owned = run_sim_regression(setup, data, seed)?;
            &owned
        }
    };
    let rows: Vec<Vec<f64>> = (0..data.n).map(|i| data.row(i).to_vec()).collect();
    let (_, direct) = train_maxmin_direct(setup.structure(), setup.a, data, &setup.config(seed))?;
    Ok(MaxMinDemo {
        seed,
        logexp_expressed: expressed_components(&logexp.model, &rows)?.len(),
        logexp_mse: logexp.best_mse,
        direct_expressed: direct.expressed.len(),
        direct_ever_active: direct.ever_active.len(),
        direct_mse: direct.history.best_metric(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DistillRun {
    pub seed: u64,
    pub logexp_mse: f64,
    pub maxmin_before_mse: f64,
    pub maxmin_after_mse: f64,
}

/// Trains a log-exp regressor, distills it into max-min form and
/// fine-tunes for `finetune_epochs` full-batch epochs. MSEs are z-scored.
pub fn distill_sim_regression(setup: &SimSetup, data: &Dataset, seed: u64, finetune_epochs: usize) -> Result<DistillRun> {
    let run = run_sim_regression(setup, data, seed)?;
    let cfg = TrainConfig {
        epochs: finetune_epochs,
        ..setup.config(seed)
    };
    let (_, r) = distill_to_maxmin(&run.model, data, &cfg)?;
    let z = |e: &Evaluation| e.mse_z.unwrap_or(f64::NAN);
    Ok(DistillRun {
        seed,
        logexp_mse: z(&r.logexp),
        maxmin_before_mse: z(&r.maxmin_before),
        maxmin_after_mse: z(&r.maxmin_after),
    })
}

/// Accuracy of a classifier over repeated stratified 80/20 splits, one
/// per seed (the seed drives both split and initialization).
#[derive(Clone, Debug, Serialize)]
pub struct RepeatedSplits {
    pub accuracies: Vec<f64>,
}

impl RepeatedSplits {
    pub fn best(&self) -> f64 {
        self.accuracies.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Default small-tabular setup: two polytopes of two linear components per
/// class, a=1, 300 full-batch epochs.
pub fn tabular_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 300,
        loss: Loss::Nll,
        seed,
        ..TrainConfig::default()
    }
}

pub fn repeated_splits(data: &Dataset, seeds: std::ops::Range<u64>) -> Result<RepeatedSplits> {
    let mut accuracies = Vec::new();
    for seed in seeds {
        let (train, test) = split(data, 0.8, seed, true)?;
        let run = run_classifier(&train, &test, 2, 2, 1.0, &tabular_config(seed))?;
        accuracies.push(run.test_accuracy());
    }
    Ok(RepeatedSplits { accuracies })
}

/// MNIST in the standard IDX file names under `dir`, pixel-normalized
/// with the MNIST constants.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"), true)?;
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"), true)?;
    Ok((train, test))
}

/// The published MNIST classifier: 16 polytopes of 4 linear components
/// per digit, batch 1000, 20 epochs (published sharpness a=0.1). Inputs
/// are already normalized, so no further scaling is fitted.
pub fn run_mnist(train: &Dataset, test: &Dataset, a: f64, seed: u64) -> Result<ClassifierRun> {
    let start = Instant::now();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 1000,
        learning_rate: 1e-2,
        loss: Loss::Nll,
        seed,
        log_every: 1,
        ..TrainConfig::default()
    };
    let spec = ClassifierSpec {
        num_classes: 10,
        input_dim: train.d,
        family: Family::Linear,
        layout: Layout::Uniform {
            unions: 16,
            intersections: 4,
        },
        a,
        pre_linear: None,
        seed,
    };
    let mut model = build_classifier(&spec)?;
    let history = fit(&mut model, train, &cfg)?;
    Ok(ClassifierRun {
        seed,
        train: evaluate(&model, train, cfg.loss)?,
        test: evaluate(&model, test, cfg.loss)?,
        model,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// 3072-dimensional ten-class stand-in for a CIFAR-10 subset when no batch
/// file is available: class-dependent mean images plus uniform noise.
pub fn synthetic_cifar(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..10).map(|_| (0..3072).map(|_| rng.random_range(0.3..0.7)).collect()).collect();
    let mut features = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 10;
        labels.push(c);
        features.extend(means[c].iter().map(|m| (m + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)));
    }
    Dataset::classification(
        features,
        3072,
        labels,
        crate::data::CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
    )
}

/// Short run of the pre-linear image classifier (3072 → 300, one polytope
/// of 64 components per class, a=0.1) with per-pixel z-scoring.
pub fn cifar_smoke(data: &Dataset, epochs: usize, seed: u64) -> Result<(Model, History)> {
    let spec = ClassifierSpec {
        num_classes: 10,
        input_dim: data.d,
        family: Family::Linear,
        layout: Layout::Uniform {
            unions: 1,
            intersections: 64,
        },
        a: 0.1,
        pre_linear: Some(300),
        seed,
    };
    let mut model = build_classifier(&spec)?;
    model.x_scaler = Scaler::fit(crate::train::ScalerKind::ZScore, &data.features, data.d);
    let cfg = TrainConfig {
        epochs,
        batch_size: 100,
        learning_rate: 1e-3,
        loss: Loss::Nll,
        seed,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, data, &cfg)?;
    Ok((model, history))
}

/// Components active on some row of `data`.
pub fn expressed_on(model: &Model, data: &Dataset) -> Result<BTreeSet<usize>> {
    let rows: Vec<Vec<f64>> = (0..data.n).map(|i| data.row(i).to_vec()).collect();
    expressed_components(model, &rows)
}
