//! Closed-form gradients of both forms with respect to the flat parameter
//! vector, and a central-difference checker.
//!
//! For the log-exp form the sensitivity of head `h` to component `j` in
//! polytope `p` factors into two convex weights:
//!
//! ```text
//! dy_h/df_j = exp(a (s_p - y_h)) * exp(-a (f_j - s_p))
//! ```
//!
//! Both exponents are non-positive by construction, so the weights never
//! overflow.

use crate::error::{Result, SpineError};
use crate::lse::sigmoid;
use crate::model::{dot, ComponentFunction, Family, Form, Model, Trace};

/// Gradient aligned with `Model::theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub dtheta: Vec<f64>,
    pre_linear_len: usize,
}

impl GradientBuffer {
    pub fn zeros(model: &Model) -> Self {
        GradientBuffer {
            dtheta: vec![0.0; model.theta.len()],
            pre_linear_len: model.component_offset(),
        }
    }

    /// Pre-linear weights followed by biases, if the model has that layer.
    pub fn pre_linear(&self) -> Option<&[f64]> {
        (self.pre_linear_len > 0).then(|| &self.dtheta[..self.pre_linear_len])
    }

    pub fn components(&self) -> &[f64] {
        &self.dtheta[self.pre_linear_len..]
    }

    pub fn norm(&self) -> f64 {
        self.dtheta.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Reusable scratch space for repeated backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    pub trace: Trace,
    df: Vec<f64>,
    dz: Vec<f64>,
}

/// `dy_h/df_j` for every head and component under the model's form,
/// computed from a trace of that same form.
pub fn component_sensitivities(model: &Model, trace: &Trace) -> Vec<Vec<f64>> {
    let ncomp = model.structure.components.len();
    let mut out = Vec::with_capacity(model.num_heads());
    for h in 0..model.num_heads() {
        let mut upstream = vec![0.0; model.num_heads()];
        upstream[h] = 1.0;
        let mut df = vec![0.0; ncomp];
        match model.form {
            Form::LogExp => logexp_df(model, trace, &upstream, &mut df),
            Form::MaxMin => maxmin_df(trace, &upstream, &mut df),
        }
        out.push(df);
    }
    out
}

fn logexp_df(model: &Model, trace: &Trace, upstream: &[f64], df: &mut [f64]) {
    let a = model.a;
    let s = &trace.polytopes;
    let f = &trace.components;
    for (h, head) in model.structure.heads.iter().enumerate() {
        let up = upstream[h];
        if up == 0.0 {
            continue;
        }
        let y = trace.heads[h];
        for &p in head {
            let pw = (a * (s[p] - y)).exp();
            for &j in &model.structure.polytopes[p] {
                df[j] += up * pw * (-a * (f[j] - s[p])).exp();
            }
        }
    }
}

fn maxmin_df(trace: &Trace, upstream: &[f64], df: &mut [f64]) {
    for (h, &p) in trace.argmax.iter().enumerate() {
        df[trace.argmin[p]] += upstream[h];
    }
}

/// Adds `g * df/dparams` of one component into `dparams`, and, when `dz` is
/// given, `g * df/dz` into it.
#[inline]
fn component_backward(
    c: &ComponentFunction,
    p: &[f64],
    z: &[f64],
    g: f64,
    dparams: &mut [f64],
    dz: Option<&mut [f64]>,
) {
    let d = z.len();
    match c.family {
        Family::Linear => {
            for i in 0..d {
                dparams[i] += g * z[i];
            }
            dparams[d] += g;
            if let Some(dz) = dz {
                for i in 0..d {
                    dz[i] += g * p[i];
                }
            }
        }
        Family::Quadratic => {
            for i in 0..d {
                dparams[i] += g * z[i] * z[i];
                dparams[d + i] += g * z[i];
            }
            dparams[2 * d] += g;
            if let Some(dz) = dz {
                for i in 0..d {
                    dz[i] += g * (2.0 * p[i] * z[i] + p[d + i]);
                }
            }
        }
        Family::Sinusoidal => {
            let u = dot(&p[..d], z) + p[d];
            let (sin, cos) = u.sin_cos();
            let gu = g * p[d + 1] * cos;
            for i in 0..d {
                dparams[i] += gu * z[i];
            }
            dparams[d] += gu;
            dparams[d + 1] += g * sin;
            dparams[d + 2] += g;
            if let Some(dz) = dz {
                for i in 0..d {
                    dz[i] += gu * p[i];
                }
            }
        }
        Family::Sigmoid => {
            let s = sigmoid(dot(&p[..d], z) + p[d]);
            let mut gu = g * s * (1.0 - s);
            if c.complemented {
                gu = -gu;
            }
            for i in 0..d {
                dparams[i] += gu * z[i];
            }
            dparams[d] += gu;
            if let Some(dz) = dz {
                for i in 0..d {
                    dz[i] += gu * p[i];
                }
            }
        }
    }
}

/// Gradient of one component's value with respect to its own parameter
/// slice, at component-space input `z`.
pub fn component_gradient(c: &ComponentFunction, p: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    component_backward(c, p, z, 1.0, &mut out, None);
    out
}

/// Forward then backward under the model's own form, adding
/// `sum_h upstream_h * dy_h/dtheta` into `dtheta`. Returns the head outputs
/// through `ws.trace.heads`.
pub fn accumulate(
    model: &Model,
    x: &[f64],
    upstream: &[f64],
    dtheta: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    model.trace(x, &mut ws.trace)?;
    accumulate_from_trace(model, x, upstream, dtheta, ws)
}

/// Backward pass reusing a trace already held in `ws.trace`.
pub fn accumulate_from_trace(
    model: &Model,
    x: &[f64],
    upstream: &[f64],
    dtheta: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    let Workspace { trace, df, dz } = ws;
    df.clear();
    df.resize(model.structure.components.len(), 0.0);
    match model.form {
        Form::LogExp => logexp_df(model, trace, upstream, df),
        Form::MaxMin => maxmin_df(trace, upstream, df),
    }
    if let Some(j) = df.iter().position(|g| !g.is_finite()) {
        return Err(SpineError::Numerical {
            component: j,
            message: format!("non-finite sensitivity {}", df[j]),
        });
    }
    let with_pre = model.pre_linear.is_some();
    dz.clear();
    dz.resize(trace.z.len(), 0.0);
    for (j, c) in model.structure.components.iter().enumerate() {
        let g = df[j];
        if g == 0.0 {
            continue;
        }
        let r = c.params.clone();
        component_backward(
            c,
            &model.theta[r.clone()],
            &trace.z,
            g,
            &mut dtheta[r],
            with_pre.then_some(dz.as_mut_slice()),
        );
    }
    if let Some(pl) = model.pre_linear {
        let (dw, db) = dtheta[..pl.param_len()].split_at_mut(pl.out_dim * pl.in_dim);
        for (r, row) in dw.chunks_exact_mut(pl.in_dim).enumerate() {
            let g = dz[r];
            if g == 0.0 {
                continue;
            }
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
            db[r] += g;
        }
    }
    Ok(())
}

fn backward_in(model: &Model, form: Form, x: &[f64], upstream: &[f64]) -> Result<GradientBuffer> {
    if upstream.len() != model.num_heads() {
        return Err(SpineError::Input(format!(
            "upstream has {} entries for {} heads",
            upstream.len(),
            model.num_heads()
        )));
    }
    let mut buf = GradientBuffer::zeros(model);
    let mut ws = Workspace::default();
    if model.form == form {
        accumulate(model, x, upstream, &mut buf.dtheta, &mut ws)?;
    } else {
        let mut m = model.clone();
        m.form = form;
        accumulate(&m, x, upstream, &mut buf.dtheta, &mut ws)?;
    }
    Ok(buf)
}

/// Gradient of `sum_h upstream_h * y_h` for the log-exp form.
pub fn backward_logexp(model: &Model, x: &[f64], upstream: &[f64]) -> Result<GradientBuffer> {
    backward_in(model, Form::LogExp, x, upstream)
}

/// Subgradient of `sum_h upstream_h * y_h` for the max-min form; only the
/// active component of each head receives gradient.
pub fn backward_maxmin(model: &Model, x: &[f64], upstream: &[f64]) -> Result<GradientBuffer> {
    backward_in(model, Form::MaxMin, x, upstream)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Worst relative error after discounting the rounding noise of the
    /// central difference itself.
    pub max_rel_error: f64,
    /// Worst plain `|analytic - numeric| / (|analytic| + 1e-8)`.
    pub max_raw_rel_error: f64,
    pub worst_index: usize,
    pub worst_head: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient of every head against central differences
/// with step `eps`, under the model's form.
///
/// A central difference of values of magnitude `|y|` carries rounding noise
/// of order `eps_machine * |y| / eps`; that amount is subtracted from each
/// absolute discrepancy before normalizing, so tiny analytic partials are
/// not judged against pure cancellation noise.
pub fn finite_difference_check(model: &Model, x: &[f64], eps: f64) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SpineError::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let heads = model.num_heads();
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_raw_rel_error: 0.0,
        worst_index: 0,
        worst_head: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = model.clone();
    let mut plus = Vec::with_capacity(model.theta.len());
    let mut minus = Vec::with_capacity(model.theta.len());
    for k in 0..model.theta.len() {
        let orig = probe.theta[k];
        probe.theta[k] = orig + eps;
        plus.push(probe.forward(x)?);
        probe.theta[k] = orig - eps;
        minus.push(probe.forward(x)?);
        probe.theta[k] = orig;
    }
    for h in 0..heads {
        let mut upstream = vec![0.0; heads];
        upstream[h] = 1.0;
        let mut buf = GradientBuffer::zeros(model);
        accumulate(model, x, &upstream, &mut buf.dtheta, &mut Workspace::default())?;
        for k in 0..model.theta.len() {
            let (yp, ym) = (plus[k][h], minus[k][h]);
            let numeric = (yp - ym) / (2.0 * eps);
            let analytic = buf.dtheta[k];
            let noise = 64.0 * f64::EPSILON * yp.abs().max(ym.abs()).max(1.0) / (2.0 * eps);
            let diff = (analytic - numeric).abs();
            let raw = diff / (analytic.abs() + 1e-8);
            let rel = (diff - noise).max(0.0) / (analytic.abs() + 1e-8);
            report.max_raw_rel_error = report.max_raw_rel_error.max(raw);
            if rel > report.max_rel_error || (k == 0 && h == 0) {
                report.max_rel_error = rel;
                report.worst_index = k;
                report.worst_head = h;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
