use std::path::{Path, PathBuf};

use spine::analyze::{
    active_map, export_components, expressed_components, locality_fractions, perturbation_profile, saliency,
    saliency_agreement, write_active_csv, write_perturbation_csv, write_saliency_csv, PerturbationConfig, Slice1d,
};
use spine::data::{self, CsvSchema, Dataset, TargetKind};
use spine::evolve::{self, distill_to_maxmin, targeted_learning, Region, TargetOptions};
use spine::experiments::{maxmin_failure_demo, SimSetup};
use spine::structure;
use spine::train::{self, evaluate, fit, Evaluation, History, InitScheme, Loss, Scaler, TrainConfig};
use spine::{Form, Model, PreLinear};

use crate::{
    AnalyzeArgs, Command, DataArgs, DemoArgs, DistillArgs, EvalArgs, Failure, GenArgs, Generator, KindArg, LossArg,
    Mode, TargetArgs, TrainArgs,
};

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Distill(a) => distill(a),
        Command::Target(a) => target(a),
        Command::DemoMaxminFailure(a) => demo(a),
    }
}

fn load(paths: &[PathBuf], args: &DataArgs) -> Result<Dataset, Failure> {
    let ds = match paths {
        [csv] => data::load_csv(
            csv,
            &CsvSchema {
                target_columns: args.target.clone(),
                kind: match args.kind {
                    None => TargetKind::Auto,
                    Some(KindArg::Regression) => TargetKind::Regression,
                    Some(KindArg::Classification) => TargetKind::Classification,
                },
            },
        )?,
        [images, labels] => data::load_idx(images, labels, args.mnist_norm)?,
        _ => return Err(Failure::Usage("expected one CSV path or an IDX image/label pair".into())),
    };
    log::info!("loaded {} rows x {} features from {}", ds.n, ds.d, paths[0].display());
    Ok(ds)
}

fn loss_for(arg: Option<LossArg>, data: &Dataset) -> Loss {
    match arg {
        Some(LossArg::Mse) => Loss::Mse,
        Some(LossArg::Nll) => Loss::Nll,
        None => evolve::default_loss(data),
    }
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::load(path).map_err(|e| match e {
        // A model file that does not parse is bad input, not bad usage.
        spine::SpineError::Structure(m) => Failure::Data(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

fn check_dims(model: &Model, data: &Dataset) -> Outcome {
    let d = model.pre_linear.map_or(model.input_dim(), |p| p.in_dim);
    if d != data.d {
        return Err(Failure::Data(format!("model expects {d} inputs, data has {}", data.d)));
    }
    Ok(())
}

fn print_eval(prefix: &str, e: &Evaluation) {
    println!("{prefix}loss={:?}", e.loss);
    if let Some(v) = e.mse_z {
        println!("{prefix}mse_z={v:?}");
    }
    if let Some(v) = e.mse_raw {
        println!("{prefix}mse_raw={v:?}");
    }
    if let Some(v) = e.accuracy {
        println!("{prefix}accuracy={v:?}");
    }
}

fn finish_history(h: &History, out: Option<&PathBuf>) -> Outcome {
    if let Some(p) = out {
        h.write_csv(p)?;
    }
    match &h.diverged {
        Some(m) => Err(Failure::Diverged(m.clone())),
        None => Ok(()),
    }
}

fn gen(a: GenArgs) -> Outcome {
    let ds = match a.kind {
        Generator::SimReg => {
            let n = a.n.unwrap_or(1000);
            if a.noiseless {
                data::sim_regression_noiseless(n)?
            } else {
                data::gen_sim_regression(n, a.noise.unwrap_or(0.1), a.seed)?
            }
        }
        Generator::Spiral => {
            if a.noiseless {
                return Err(Failure::Usage("--noiseless applies to sim-reg only".into()));
            }
            data::gen_spiral(a.n.unwrap_or(2000), a.noise.unwrap_or(0.05), a.seed)?
        }
    };
    match &a.out {
        Some(p) => data::save_csv(&ds, p)?,
        None => data::write_csv(&ds, std::io::stdout().lock(), "<stdout>")?,
    }
    Ok(())
}

fn structure_text(arg: &str) -> Result<String, Failure> {
    let p = Path::new(arg);
    if p.is_file() {
        std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
    } else {
        Ok(arg.to_string())
    }
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let full = load(&a.data.data, &a.data)?;
    let (train_set, test_set) = match (a.split, a.test.is_empty()) {
        (Some(f), _) => {
            let (tr, te) = data::split(&full, f, a.seed, full.is_classification())?;
            (tr, Some(te))
        }
        (None, false) => (full.clone(), Some(load(&a.test, &a.data)?)),
        (None, true) => (full, None),
    };
    let text = structure_text(&a.structure)?;
    let expr = structure::parse(&text)?;
    let comp_dim = a.pre_linear.unwrap_or(train_set.d);
    let s = structure::elaborate_heads(&expr, comp_dim, Some(train_set.output_dim()))?;
    let pre = a.pre_linear.map(|out_dim| PreLinear {
        in_dim: train_set.d,
        out_dim,
    });
    let mut model = Model::new(s, a.a, pre)?;
    model.theta = train::init_params(&model, a.seed, InitScheme::UniformFanIn);
    model.source = Some(text);
    train::fit_default_scalers(&mut model, &train_set);
    if a.raw_inputs {
        model.x_scaler = Scaler::identity();
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        loss: loss_for(a.loss, &train_set),
        log_every: a.log_every,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    log::info!(
        "{} components in {} polytopes, {} parameters",
        model.structure.components.len(),
        model.structure.polytopes.len(),
        model.theta.len()
    );
    let history = fit(&mut model, &train_set, &cfg)?;
    let metric = if train_set.is_classification() { "accuracy" } else { "mse_z" };
    if let Some(r) = history.final_record() {
        println!("final_loss={:?}", r.loss);
        println!("final_{metric}={:?}", r.metric);
    }
    if let Some(r) = history.best {
        println!("best_epoch={}", r.epoch);
        println!("best_loss={:?}", r.loss);
        println!("best_{metric}={:?}", r.metric);
    }
    if history.clipped_steps > 0 {
        println!("clipped_steps={}", history.clipped_steps);
    }
    if history.diverged.is_none() {
        if let Some(te) = &test_set {
            print_eval("test_", &evaluate(&model, te, cfg.loss)?);
        }
    }
    if let Some(p) = &a.model_out {
        model.save(p)?;
    }
    finish_history(&history, a.history_out.as_ref())
}

fn eval(a: EvalArgs) -> Outcome {
    let mut model = load_model(&a.model)?;
    if a.maxmin {
        model.form = Form::MaxMin;
    }
    let ds = load(&a.data.data, &a.data)?;
    check_dims(&model, &ds)?;
    let loss = loss_for(a.loss, &ds);
    let e = evaluate(&model, &ds, loss)?;
    println!("set,n,loss,mse_z,mse_raw,accuracy");
    let row = |name: &str, e: &Evaluation| {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        println!("{name},{},{:?},{},{},{}", e.n, e.loss, opt(e.mse_z), opt(e.mse_raw), opt(e.accuracy));
    };
    row("data", &e);
    if let Some(p) = &a.against {
        let clean = load(std::slice::from_ref(p), &a.data)?;
        if clean.features != ds.features {
            return Err(Failure::Data(format!("{} does not have the same inputs as --data", p.display())));
        }
        row("against", &evaluate(&model, &clean, loss)?);
    }
    Ok(())
}

fn rows(ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.n).map(|i| ds.row(i).to_vec()).collect()
}

fn slice_for(a: &AnalyzeArgs, ds: &Dataset) -> Result<Slice1d, Failure> {
    if a.axis >= ds.d {
        return Err(Failure::Usage(format!("--axis {} but data has {} inputs", a.axis, ds.d)));
    }
    let col = |j: usize| (0..ds.n).map(move |i| ds.row(i)[j]);
    let base: Vec<f64> = (0..ds.d).map(|j| col(j).sum::<f64>() / ds.n as f64).collect();
    let lo = a.lo.unwrap_or_else(|| col(a.axis).fold(f64::INFINITY, f64::min));
    let hi = a.hi.unwrap_or_else(|| col(a.axis).fold(f64::NEG_INFINITY, f64::max));
    Ok(Slice1d {
        axis: a.axis,
        lo,
        hi,
        base,
    })
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let ds = load(&a.data.data, &a.data)?;
    check_dims(&model, &ds)?;
    if a.head >= model.num_heads() {
        return Err(Failure::Usage(format!("--head {} but model has {} heads", a.head, model.num_heads())));
    }
    let inputs = rows(&ds);
    match a.mode {
        Mode::Saliency => {
            let scores = inputs
                .iter()
                .map(|x| saliency(&model, x, a.head))
                .collect::<spine::Result<Vec<_>>>()?;
            write_saliency_csv(&scores, &a.out)?;
            println!("agreement={:?}", saliency_agreement(&model, &inputs, a.head)?);
        }
        Mode::Active => {
            write_active_csv(&active_map(&model, &inputs)?, &a.out)?;
            println!("expressed_components={}", expressed_components(&model, &inputs)?.len());
        }
        Mode::Perturb => {
            let slice = slice_for(&a, &ds)?;
            let cfg = PerturbationConfig {
                n_bins: a.bins,
                n_draws: a.draws,
                seed: a.seed,
                head: a.head,
                ..PerturbationConfig::default()
            };
            let profile = perturbation_profile(&model, &slice, &cfg)?;
            write_perturbation_csv(&profile, &a.out)?;
            let local = locality_fractions(&model, &profile, a.head)?;
            let mean = local.iter().sum::<f64>() / local.len().max(1) as f64;
            println!("mean_locality={mean:?}");
        }
        Mode::Components => {
            let grid = slice_for(&a, &ds)?.bin_inputs(a.bins);
            let export = export_components(&model, &grid)?;
            std::fs::write(&a.out, export.to_gnuplot())
                .map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
            println!("grid_points={}", grid.len());
        }
    }
    Ok(())
}

fn distill(a: DistillArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let ds = load(&a.data.data, &a.data)?;
    check_dims(&model, &ds)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        loss: loss_for(a.loss, &ds),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let (out, report) = distill_to_maxmin(&model, &ds, &cfg)?;
    print_eval("logexp_", &report.logexp);
    print_eval("maxmin_before_", &report.maxmin_before);
    print_eval("maxmin_after_", &report.maxmin_after);
    if let Some(p) = &a.out {
        out.save(p)?;
    }
    finish_history(&report.history, a.history_out.as_ref())
}

fn target(a: TargetArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let ds = load(&a.data.data, &a.data)?;
    check_dims(&model, &ds)?;
    let region = match &a.region {
        Some(r) => r.parse::<Region>()?,
        None => Region::Auto {
            bins: Region::AUTO_BINS,
        },
    };
    let opts = TargetOptions {
        noise_scale: a.noise_scale,
        growth_cap: a.growth_cap,
        baseline_polytopes: a.baseline_polytopes,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        loss: loss_for(a.loss, &ds),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let (grown, report) = targeted_learning(&model, &ds, &region, &opts, &cfg)?;
    println!("region={region}");
    println!("region_rows={}", report.region.len());
    println!("replicated={}", report.replicated.len());
    println!("polytopes={}", grown.structure.polytopes.len());
    let pair = |name: &str, b: &Evaluation, after: &Evaluation| {
        println!("{name}_loss_before={:?}", b.loss);
        println!("{name}_loss_after={:?}", after.loss);
    };
    pair("region", &report.before.region, &report.after.region);
    if let (Some(b), Some(after)) = (&report.before.off_region, &report.after.off_region) {
        pair("off_region", b, after);
    }
    pair("global", &report.before.global, &report.after.global);
    if let Some(p) = &a.report {
        report.write_csv(p)?;
    }
    if let Some(p) = &a.out {
        grown.save(p)?;
    }
    finish_history(&report.history, None)
}

fn demo(a: DemoArgs) -> Outcome {
    let setup = SimSetup {
        unions: a.unions,
        intersections: a.intersections,
        a: a.a,
        epochs: a.epochs,
        n: a.n,
        data_seed: a.data_seed,
        ..SimSetup::linear()
    };
    let data = setup.data()?;
    let demo = maxmin_failure_demo(&setup, &data, a.seed, None)?;
    let total = setup.unions * setup.intersections;
    println!("components={total}");
    println!("logexp_expressed={}", demo.logexp_expressed);
    println!("logexp_best_mse_z={:?}", demo.logexp_mse);
    println!("maxmin_expressed={}", demo.direct_expressed);
    println!("maxmin_ever_active={}", demo.direct_ever_active);
    println!("maxmin_best_mse_z={:?}", demo.direct_mse);
    Ok(())
}
