//! Post-training surgery: moving a trained log-exp model into the exact
//! max-min form, training max-min directly (to show why that is a bad
//! idea), and growing capacity where the fit is poor.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analyze::{active_map, expressed_components};
use crate::data::Dataset;
use crate::error::{Result, SpineError};
use crate::model::{ComponentFunction, Form, Model, SetStructure};
use crate::train::{evaluate, fit, fit_default_scalers, fit_with, init_params, Evaluation, History, InitScheme, Loss, TrainConfig};

/// Loss matching the dataset's target kind.
pub fn default_loss(data: &Dataset) -> Loss {
    if data.is_classification() {
        Loss::Nll
    } else {
        Loss::Mse
    }
}

fn raw_rows(data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.n).map(|i| data.row(i).to_vec()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DistillReport {
    /// The source model, evaluated in its own log-exp form.
    pub logexp: Evaluation,
    /// Parameters copied verbatim, evaluated in max-min form.
    pub maxmin_before: Evaluation,
    pub maxmin_after: Evaluation,
    pub history: History,
}

/// Copies `model` into max-min form and fine-tunes it there. All metrics
/// are measured on `data` with the loss from `cfg`.
pub fn distill_to_maxmin(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, DistillReport)> {
    let mut logexp = model.clone();
    logexp.form = Form::LogExp;
    let before = evaluate(&logexp, data, cfg.loss)?;
    let mut out = model.clone();
    out.form = Form::MaxMin;
    let maxmin_before = evaluate(&out, data, cfg.loss)?;
    let history = fit(&mut out, data, cfg)?;
    let maxmin_after = evaluate(&out, data, cfg.loss)?;
    Ok((
        out,
        DistillReport {
            logexp: before,
            maxmin_before,
            maxmin_after,
            history,
        },
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectReport {
    pub history: History,
    /// Components that were max-min active on some training input after
    /// any epoch (including the initial parameters).
    pub ever_active: BTreeSet<usize>,
    /// Components active on some training input at the end.
    pub expressed: BTreeSet<usize>,
}

/// Trains the max-min form from a random start, recording which
/// components ever carry gradient.
///
/// Only the active component of the active polytope receives a gradient,
/// so components that start out dominated tend to stay that way.
pub fn train_maxmin_direct(
    structure: SetStructure,
    a: f64,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, DirectReport)> {
    let mut model = Model::new(structure, a, None)?;
    model.theta = init_params(&model, cfg.seed, InitScheme::UniformFanIn);
    fit_default_scalers(&mut model, data);
    model.form = Form::MaxMin;
    let rows = raw_rows(data);
    let mut ever_active = expressed_components(&model, &rows)?;
    let mut census_error = None;
    let history = fit_with(&mut model, data, cfg, &mut |_, m| {
        if census_error.is_some() {
            return;
        }
        match expressed_components(m, &rows) {
            Ok(s) => ever_active.extend(s),
            Err(e) => census_error = Some(e),
        }
    })?;
    if let Some(e) = census_error {
        return Err(e);
    }
    let expressed = expressed_components(&model, &rows)?;
    Ok((
        model,
        DirectReport {
            history,
            ever_active,
            expressed,
        },
    ))
}

/// Closed interval on one raw input coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Which training points a targeting pass should improve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Points inside every listed interval.
    Box(Vec<AxisRange>),
    Indices(Vec<usize>),
    /// The bin along input 0 with the largest mean squared residual.
    Auto { bins: usize },
}

impl Region {
    pub const AUTO_BINS: usize = 50;

    /// Indices of the selected rows of `data`; never empty.
    pub fn select(&self, model: &Model, data: &Dataset) -> Result<Vec<usize>> {
        let idx: Vec<usize> = match self {
            Region::Box(ranges) => {
                for r in ranges {
                    if r.axis >= data.d {
                        return Err(SpineError::Input(format!(
                            "region axis x{} out of range for {} features",
                            r.axis, data.d
                        )));
                    }
                }
                (0..data.n)
                    .filter(|&i| {
                        let x = data.row(i);
                        ranges.iter().all(|r| x[r.axis] >= r.lo && x[r.axis] <= r.hi)
                    })
                    .collect()
            }
            Region::Indices(list) => {
                if let Some(&bad) = list.iter().find(|&&i| i >= data.n) {
                    return Err(SpineError::Input(format!("region index {bad} out of range for {} rows", data.n)));
                }
                let set: BTreeSet<usize> = list.iter().copied().collect();
                set.into_iter().collect()
            }
            Region::Auto { bins } => worst_bin(model, data, *bins)?,
        };
        if idx.is_empty() {
            return Err(SpineError::Input("region selects no dataset points".into()));
        }
        Ok(idx)
    }
}

fn worst_bin(model: &Model, data: &Dataset, bins: usize) -> Result<Vec<usize>> {
    let Some((targets, k)) = data.values() else {
        return Err(SpineError::Input("automatic regions need regression targets".into()));
    };
    if bins == 0 || data.n == 0 {
        return Err(SpineError::Input("automatic region needs at least one bin and one row".into()));
    }
    let preds = crate::train::predict_raw(model, data)?;
    let xs: Vec<f64> = (0..data.n).map(|i| data.row(i)[0]).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let bin_of = |x: f64| {
        if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for i in 0..data.n {
        let b = bin_of(xs[i]);
        for c in 0..k {
            sum[b] += (preds[i * k + c] - targets[i * k + c]).powi(2);
        }
        count[b] += 1;
    }
    let mut best = None;
    for b in 0..bins {
        if count[b] > 0 {
            let mean = sum[b] / count[b] as f64;
            if best.is_none_or(|(_, m)| mean > m) {
                best = Some((b, mean));
            }
        }
    }
    let (b, _) = best.expect("at least one row");
    Ok((0..data.n).filter(|&i| bin_of(xs[i]) == b).collect())
}

impl FromStr for Region {
    type Err = SpineError;

    /// `auto`, `auto:<bins>`, `x0:lo:hi[,x1:lo:hi...]` or a comma-separated
    /// list of row indices.
    fn from_str(s: &str) -> Result<Region> {
        let s = s.trim();
        let bad = |m: String| SpineError::Input(format!("invalid region '{s}': {m}"));
        if s == "auto" {
            return Ok(Region::Auto { bins: Region::AUTO_BINS });
        }
        if let Some(b) = s.strip_prefix("auto:") {
            let bins = b.parse().map_err(|_| bad("bin count must be an integer".into()))?;
            return Ok(Region::Auto { bins });
        }
        if s.starts_with('x') {
            let mut ranges = Vec::new();
            for part in s.split(',') {
                let fields: Vec<&str> = part.trim().split(':').collect();
                let [axis, lo, hi] = fields[..] else {
                    return Err(bad(format!("'{part}' is not of the form xN:lo:hi")));
                };
                let axis = axis
                    .strip_prefix('x')
                    .and_then(|a| a.parse().ok())
                    .ok_or_else(|| bad(format!("'{axis}' is not an input name like x0")))?;
                let lo: f64 = lo.parse().map_err(|_| bad(format!("'{lo}' is not a number")))?;
                let hi: f64 = hi.parse().map_err(|_| bad(format!("'{hi}' is not a number")))?;
                if !(lo <= hi) {
                    return Err(bad(format!("empty interval [{lo}, {hi}]")));
                }
                ranges.push(AxisRange { axis, lo, hi });
            }
            return Ok(Region::Box(ranges));
        }
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad(format!("'{t}' is not a row index"))))
            .collect::<Result<Vec<usize>>>()
            .map(Region::Indices)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Box(r) => {
                let parts: Vec<String> = r.iter().map(|r| format!("x{}:{}:{}", r.axis, r.lo, r.hi)).collect();
                f.write_str(&parts.join(","))
            }
            Region::Indices(i) => {
                let parts: Vec<String> = i.iter().map(usize::to_string).collect();
                f.write_str(&parts.join(","))
            }
            Region::Auto { bins } => write!(f, "auto:{bins}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetOptions {
    /// Relative noise on each copied parameter; see [`replicate_polytopes`].
    pub noise_scale: f64,
    /// Upper bound on total polytopes as a multiple of `baseline_polytopes`.
    pub growth_cap: f64,
    /// Polytope count the cap is relative to; defaults to the incoming
    /// model's count. Set it when targeting repeatedly.
    pub baseline_polytopes: Option<usize>,
}

impl Default for TargetOptions {
    fn default() -> Self {
        TargetOptions {
            noise_scale: 0.05,
            growth_cap: 4.0,
            baseline_polytopes: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegionMetrics {
    pub region: Evaluation,
    pub off_region: Option<Evaluation>,
    pub global: Evaluation,
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetReport {
    pub region: Vec<usize>,
    /// Source polytopes that were copied.
    pub replicated: Vec<usize>,
    /// Indices of the copies, parallel to `replicated`.
    pub added: Vec<usize>,
    pub before: RegionMetrics,
    pub after: RegionMetrics,
    pub history: History,
}

impl TargetReport {
    /// `set,n,loss_before,loss_after` rows for region, off-region and global.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("set,n,loss_before,loss_after\n");
        let mut row = |name: &str, b: &Evaluation, a: &Evaluation| {
            out.push_str(&format!("{name},{},{:?},{:?}\n", b.n, b.loss, a.loss));
        };
        row("region", &self.before.region, &self.after.region);
        if let (Some(b), Some(a)) = (&self.before.off_region, &self.after.off_region) {
            row("off_region", b, a);
        }
        row("global", &self.before.global, &self.after.global);
        std::fs::write(path, out).map_err(|e| SpineError::io(path, e))
    }
}

fn region_metrics(model: &Model, data: &Dataset, region: &[usize], loss: Loss) -> Result<RegionMetrics> {
    let inside: BTreeSet<usize> = region.iter().copied().collect();
    let outside: Vec<usize> = (0..data.n).filter(|i| !inside.contains(i)).collect();
    Ok(RegionMetrics {
        region: evaluate(model, &data.subset(region), loss)?,
        off_region: if outside.is_empty() {
            None
        } else {
            Some(evaluate(model, &data.subset(&outside), loss)?)
        },
        global: evaluate(model, data, loss)?,
    })
}

/// Appends a perturbed copy of each listed polytope and wires it into every
/// head that references the original. Each copied parameter `p` becomes
/// `p + U(-noise, noise) * (|p| + 0.01)`. Existing components, slices and
/// head order are untouched. Returns the new polytope indices.
pub fn replicate_polytopes(model: &mut Model, sources: &[usize], noise_scale: f64, seed: u64) -> Result<Vec<usize>> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(SpineError::Config(format!("noise_scale must be non-negative, got {noise_scale}")));
    }
    if let Some(&p) = sources.iter().find(|&&p| p >= model.structure.polytopes.len()) {
        return Err(SpineError::Input(format!("polytope {p} does not exist")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added = Vec::with_capacity(sources.len());
    for &src in sources {
        // Members that alias one slice keep aliasing each other in the copy.
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut members = Vec::new();
        for j in model.structure.polytopes[src].clone() {
            let old = model.structure.components[j].clone();
            let start = match remap.get(&old.params.start) {
                Some(&s) => s,
                None => {
                    let s = model.theta.len();
                    for k in old.params.clone() {
                        let p = model.theta[k];
                        let noise = if noise_scale > 0.0 {
                            rng.random_range(-noise_scale..=noise_scale) * (p.abs() + 0.01)
                        } else {
                            0.0
                        };
                        model.theta.push(p + noise);
                    }
                    remap.insert(old.params.start, s);
                    s
                }
            };
            members.push(model.structure.components.len());
            model.structure.components.push(ComponentFunction {
                params: start..start + old.params.len(),
                ..old
            });
        }
        model.structure.polytopes.push(members);
        let copy = model.structure.polytopes.len() - 1;
        for head in &mut model.structure.heads {
            if head.contains(&src) {
                head.push(copy);
            }
        }
        added.push(copy);
    }
    model.validate()?;
    Ok(added)
}

/// Replicates the polytopes active on `region`, perturbs the copies and
/// fine-tunes the grown model in log-exp form.
pub fn targeted_learning(
    model: &Model,
    data: &Dataset,
    region: &Region,
    opts: &TargetOptions,
    cfg: &TrainConfig,
) -> Result<(Model, TargetReport)> {
    let idx = region.select(model, data)?;
    let mut grown = model.clone();
    grown.form = Form::LogExp;
    let before = region_metrics(&grown, data, &idx, cfg.loss)?;

    let points: Vec<Vec<f64>> = idx.iter().map(|&i| data.row(i).to_vec()).collect();
    let sources: Vec<usize> = active_map(&grown, &points)?
        .into_iter()
        .flatten()
        .map(|a| a.polytope)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let baseline = opts.baseline_polytopes.unwrap_or(model.structure.polytopes.len());
    let limit = (opts.growth_cap * baseline as f64).floor() as usize;
    let total = grown.structure.polytopes.len() + sources.len();
    if total > limit {
        return Err(SpineError::Structure(format!(
            "targeting would grow the model to {total} polytopes, above the cap of {limit}"
        )));
    }

    let added = replicate_polytopes(&mut grown, &sources, opts.noise_scale, cfg.seed)?;
    log::info!("replicated {} polytopes for {} region points", added.len(), idx.len());
    let history = fit(&mut grown, data, cfg)?;
    let after = region_metrics(&grown, data, &idx, cfg.loss)?;
    Ok((
        grown,
        TargetReport {
            region: idx,
            replicated: sources,
            added,
            before,
            after,
            history,
        },
    ))
}
