//! Interpretability tools: gradient saliency per component, perturbation
//! profiles, active-set maps and component export for plotting.
//!
//! Every function takes raw inputs and applies the model's input scaler;
//! outputs are in the model's (scaled) target units.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::grad::{component_gradient, component_sensitivities};
use crate::lse::log_sum_exp;
use crate::model::{ActiveSet, Family, Form, Model, Trace};
use crate::par;

/// Squared-gradient score of every component for one input and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub scores: Vec<f64>,
    /// The component assumed to apply at this input.
    pub argmax: usize,
}

/// Scores each component by `sum_k (dy_h / dtheta_k)^2` over its own
/// parameters, using the log-exp form.
///
/// For aliased parameters only the component's own path contributes, so
/// the score identifies the component rather than the shared slice.
pub fn saliency(model: &Model, x_raw: &[f64], head: usize) -> Result<Saliency> {
    check_head(model, head)?;
    let x = model.x_scaler.transform_row(x_raw);
    let mut m = model.clone();
    m.form = Form::LogExp;
    let mut trace = Trace::default();
    m.trace_logexp(&x, &mut trace)?;
    let sens = &component_sensitivities(&m, &trace)[head];
    let scores: Vec<f64> = m
        .structure
        .components
        .iter()
        .zip(sens)
        .map(|(c, &g)| {
            let grad = component_gradient(c, &m.theta[c.params.clone()], &trace.z);
            g * g * grad.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let mut argmax = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[argmax] {
            argmax = j;
        }
    }
    Ok(Saliency { scores, argmax })
}

fn check_head(model: &Model, head: usize) -> Result<()> {
    if head >= model.num_heads() {
        return Err(SpineError::Input(format!(
            "head {head} out of range for {} heads",
            model.num_heads()
        )));
    }
    Ok(())
}

/// `(polytope, component)` realizing the max-min value, per input and head.
pub fn active_map(model: &Model, inputs: &[Vec<f64>]) -> Result<Vec<Vec<ActiveSet>>> {
    par::map_range(inputs.len(), |i| {
        let x = model.x_scaler.transform_row(&inputs[i]);
        model.forward_maxmin(&x).map(|o| o.active)
    })
    .into_iter()
    .collect()
}

/// Components that are max-min active for at least one input on some head.
pub fn expressed_components(model: &Model, inputs: &[Vec<f64>]) -> Result<BTreeSet<usize>> {
    Ok(active_map(model, inputs)?
        .into_iter()
        .flatten()
        .map(|a| a.component)
        .collect())
}

/// A 1-D line through input space: `base` with coordinate `axis` swept
/// over `[lo, hi]` (raw units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice1d {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub base: Vec<f64>,
}

impl Slice1d {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Slice1d {
            axis: 0,
            lo,
            hi,
            base: vec![0.0],
        }
    }

    /// Centers of `n_bins` equal bins.
    pub fn bin_inputs(&self, n_bins: usize) -> Vec<Vec<f64>> {
        let w = (self.hi - self.lo) / n_bins as f64;
        (0..n_bins)
            .map(|b| {
                let mut x = self.base.clone();
                x[self.axis] = self.lo + (b as f64 + 0.5) * w;
                x
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub n_bins: usize,
    pub n_draws: usize,
    /// Multiplicative factors are drawn uniformly from this range.
    pub scale: (f64, f64),
    pub seed: u64,
    pub head: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            n_bins: 500,
            n_draws: 64,
            scale: (0.9, 1.1),
            seed: 0,
            head: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationProfile {
    /// Bin-center inputs.
    pub inputs: Vec<Vec<f64>>,
    /// `std[k][b]`: spread of the output in bin `b` when parameter `k` alone
    /// is perturbed.
    pub std: Vec<Vec<f64>>,
}

/// Perturbs each parameter alone by random multiplicative factors and
/// records the per-bin standard deviation of the output.
///
/// Parameter `k` draws from its own random stream, so jobs are independent
/// and the result does not depend on thread count.
pub fn perturbation_profile(model: &Model, slice: &Slice1d, cfg: &PerturbationConfig) -> Result<PerturbationProfile> {
    check_head(model, cfg.head)?;
    if !(slice.hi > slice.lo) || !slice.lo.is_finite() || !slice.hi.is_finite() {
        return Err(SpineError::Input(format!(
            "perturbation domain [{}, {}] has no width",
            slice.lo, slice.hi
        )));
    }
    if slice.base.len() != model.input_dim() || slice.axis >= slice.base.len() {
        return Err(SpineError::Input(format!(
            "slice base has {} coordinates (axis {}), model expects {}",
            slice.base.len(),
            slice.axis,
            model.input_dim()
        )));
    }
    if cfg.n_bins == 0 || cfg.n_draws == 0 || !(cfg.scale.0 <= cfg.scale.1) {
        return Err(SpineError::Config("perturbation needs bins, draws and scale lo <= hi".into()));
    }
    let inputs = slice.bin_inputs(cfg.n_bins);
    let scaled: Vec<Vec<f64>> = inputs.iter().map(|x| model.x_scaler.transform_row(x)).collect();
    let jobs = par::map_range(model.theta.len(), |k| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let mut m = model.clone();
        let orig = m.theta[k];
        let mut mean = vec![0.0; scaled.len()];
        let mut m2 = vec![0.0; scaled.len()];
        let mut trace = Trace::default();
        for draw in 0..cfg.n_draws {
            let factor = if cfg.scale.0 == cfg.scale.1 {
                cfg.scale.0
            } else {
                rng.random_range(cfg.scale.0..cfg.scale.1)
            };
            m.theta[k] = orig * factor;
            for (b, x) in scaled.iter().enumerate() {
                m.trace(x, &mut trace)?;
                let y = trace.heads[cfg.head];
                let delta = y - mean[b];
                mean[b] += delta / (draw + 1) as f64;
                m2[b] += delta * (y - mean[b]);
            }
        }
        Ok(m2.into_iter().map(|s| (s / cfg.n_draws as f64).sqrt()).collect())
    });
    Ok(PerturbationProfile {
        inputs,
        std: jobs.into_iter().collect::<Result<_>>()?,
    })
}

/// Per parameter, the share of its perturbation spread that falls in bins
/// where a component using that parameter is max-min active on `head`.
/// Parameters with no spread at all report 1.
pub fn locality_fractions(model: &Model, profile: &PerturbationProfile, head: usize) -> Result<Vec<f64>> {
    let active = active_map(model, &profile.inputs)?;
    Ok((0..model.theta.len())
        .map(|k| {
            let owners: Vec<usize> = model
                .structure
                .components
                .iter()
                .enumerate()
                .filter(|(_, c)| c.params.contains(&k))
                .map(|(j, _)| j)
                .collect();
            let total: f64 = profile.std[k].iter().sum();
            if total == 0.0 {
                return 1.0;
            }
            let local: f64 = profile.std[k]
                .iter()
                .zip(&active)
                .filter(|(_, a)| owners.contains(&a[head].component))
                .map(|(s, _)| s)
                .sum();
            local / total
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCurve {
    pub index: usize,
    pub family: Family,
    pub complemented: bool,
    pub params: Vec<f64>,
    pub polytope: usize,
    pub heads: Vec<usize>,
    /// Linear components: weights and bias in component space.
    pub slope: Option<Vec<f64>>,
    pub intercept: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentExport {
    pub grid: Vec<Vec<f64>>,
    pub components: Vec<ComponentCurve>,
    /// Soft-min value of each polytope over the grid.
    pub polytopes: Vec<Vec<f64>>,
    pub a: f64,
    pub heads: Vec<Vec<usize>>,
}

impl ComponentExport {
    /// Soft-max of the exported polytope curves per head.
    pub fn recompose(&self) -> Vec<Vec<f64>> {
        self.heads
            .iter()
            .map(|head| {
                (0..self.grid.len())
                    .map(|g| log_sum_exp(head.iter().map(|&p| self.a * self.polytopes[p][g])) / self.a)
                    .collect()
            })
            .collect()
    }

    /// Whitespace-separated columns: inputs, component values, polytope
    /// values, recomposed head values.
    pub fn to_gnuplot(&self) -> String {
        let heads = self.recompose();
        let d = self.grid.first().map_or(0, Vec::len);
        let mut out = String::from("#");
        for i in 0..d {
            write!(out, " x{i}").unwrap();
        }
        for c in &self.components {
            write!(out, " f{}", c.index).unwrap();
        }
        for p in 0..self.polytopes.len() {
            write!(out, " s{p}").unwrap();
        }
        for h in 0..heads.len() {
            write!(out, " y{h}").unwrap();
        }
        out.push('\n');
        for (g, x) in self.grid.iter().enumerate() {
            let cols = x
                .iter()
                .copied()
                .chain(self.components.iter().map(|c| c.values[g]))
                .chain(self.polytopes.iter().map(|p| p[g]))
                .chain(heads.iter().map(|h| h[g]));
            let row: Vec<String> = cols.map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Samples every component and polytope over a grid of raw inputs.
pub fn export_components(model: &Model, grid: &[Vec<f64>]) -> Result<ComponentExport> {
    let owner = model.structure.owner_polytope();
    let ncomp = model.structure.components.len();
    let mut values = vec![Vec::with_capacity(grid.len()); ncomp];
    let mut polytopes = vec![Vec::with_capacity(grid.len()); model.structure.polytopes.len()];
    let mut trace = Trace::default();
    let mut m = model.clone();
    m.form = Form::LogExp;
    for x in grid {
        m.trace_logexp(&m.x_scaler.transform_row(x), &mut trace)?;
        for (j, v) in trace.components.iter().enumerate() {
            values[j].push(*v);
        }
        for (p, v) in trace.polytopes.iter().enumerate() {
            polytopes[p].push(*v);
        }
    }
    let d = model.structure.input_dim;
    let components = model
        .structure
        .components
        .iter()
        .enumerate()
        .zip(values)
        .map(|((j, c), values)| {
            let params = model.theta[c.params.clone()].to_vec();
            let linear = c.family == Family::Linear;
            ComponentCurve {
                index: j,
                family: c.family,
                complemented: c.complemented,
                slope: linear.then(|| params[..d].to_vec()),
                intercept: linear.then(|| params[d]),
                params,
                polytope: owner[j],
                heads: model
                    .structure
                    .heads
                    .iter()
                    .enumerate()
                    .filter(|(_, h)| h.contains(&owner[j]))
                    .map(|(h, _)| h)
                    .collect(),
                values,
            }
        })
        .collect();
    Ok(ComponentExport {
        grid: grid.to_vec(),
        components,
        polytopes,
        a: model.a,
        heads: model.structure.heads.clone(),
    })
}

/// Fraction of inputs where the saliency argmax is the max-min active
/// component of `head`.
pub fn saliency_agreement(model: &Model, inputs: &[Vec<f64>], head: usize) -> Result<f64> {
    let active = active_map(model, inputs)?;
    let hits = par::map_range(inputs.len(), |i| {
        saliency(model, &inputs[i], head).map(|s| s.argmax == active[i][head].component)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / inputs.len().max(1) as f64)
}

/// Groups inputs by saliency argmax and, within each group with at least
/// `min_points`, regresses the head output on that component's value.
/// Returns `(component, points, r_squared)` per group.
pub fn linearity_by_component(
    model: &Model,
    inputs: &[Vec<f64>],
    head: usize,
    min_points: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let rows = par::map_range(inputs.len(), |i| -> Result<(usize, f64, f64)> {
        let s = saliency(model, &inputs[i], head)?;
        let x = model.x_scaler.transform_row(&inputs[i]);
        let mut t = Trace::default();
        model.trace_logexp(&x, &mut t)?;
        Ok((s.argmax, t.components[s.argmax], t.heads[head]))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let groups: BTreeSet<usize> = rows.iter().map(|r| r.0).collect();
    let mut out = Vec::new();
    for j in groups {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.0 == j).map(|r| (r.1, r.2)).collect();
        if pts.len() < min_points {
            continue;
        }
        out.push((j, pts.len(), r_squared(&pts)));
    }
    Ok(out)
}

fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Everything the analysis tools produced for one model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub active: Vec<Vec<ActiveSet>>,
    pub saliency: Vec<Saliency>,
    pub perturbation: Option<PerturbationProfile>,
    pub components: Option<ComponentExport>,
}

impl AnalysisReport {
    /// Compact JSON summary: counts and agreement statistics.
    pub fn summary(&self) -> serde_json::Value {
        let expressed: BTreeSet<usize> = self.active.iter().flatten().map(|a| a.component).collect();
        let agreement = if !self.saliency.is_empty() && self.saliency.len() == self.active.len() {
            let hits = self
                .saliency
                .iter()
                .zip(&self.active)
                .filter(|(s, a)| s.argmax == a[0].component)
                .count();
            Some(hits as f64 / self.saliency.len() as f64)
        } else {
            None
        };
        serde_json::json!({
            "inputs": self.active.len(),
            "expressed_components": expressed.into_iter().collect::<Vec<_>>(),
            "saliency_maxmin_agreement": agreement,
            "perturbation_shape": self.perturbation.as_ref().map(|p| [p.std.len(), p.inputs.len()]),
            "exported_components": self.components.as_ref().map(|c| c.components.len()),
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SpineError::io(path, e))
}

/// `param,bin0,bin1,...` rows.
pub fn write_perturbation_csv(profile: &PerturbationProfile, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("param");
    for b in 0..profile.inputs.len() {
        write!(out, ",bin{b}").unwrap();
    }
    out.push('\n');
    for (k, row) in profile.std.iter().enumerate() {
        write!(out, "{k}").unwrap();
        for v in row {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

/// `input,component0,...,argmax` rows.
pub fn write_saliency_csv(rows: &[Saliency], path: impl AsRef<Path>) -> Result<()> {
    let ncomp = rows.first().map_or(0, |r| r.scores.len());
    let mut out = String::from("input");
    for j in 0..ncomp {
        write!(out, ",c{j}").unwrap();
    }
    out.push_str(",argmax\n");
    for (i, r) in rows.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in &r.scores {
            write!(out, ",{v:?}").unwrap();
        }
        writeln!(out, ",{}", r.argmax).unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// `input,head,polytope,component` rows.
pub fn write_active_csv(active: &[Vec<ActiveSet>], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("input,head,polytope,component\n");
    for (i, row) in active.iter().enumerate() {
        for (h, a) in row.iter().enumerate() {
            writeln!(out, "{i},{h},{},{}", a.polytope, a.component).unwrap();
        }
    }
    write_text(path.as_ref(), &out)
}
