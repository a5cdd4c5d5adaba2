//! Model data types and the two forward evaluators.
//!
//! A model is a disjunctive normal form over learnable component functions:
//! components are grouped into polytopes (intersections) and polytopes into
//! heads (unions). The log-exp form evaluates
//!
//! ```text
//! y_h = (1/a) ln( sum_{p in head h} 1 / sum_{j in p} exp(-a f_j(x)) )
//! ```
//!
//! as a soft-max over polytope soft-minima. The max-min form replaces both
//! reductions by their exact counterparts.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpineError};
use crate::lse::{log_sum_exp, sigmoid};
use crate::train::Scaler;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `w.x + b`
    Linear,
    /// `w1.x^2 + w2.x + b`
    Quadratic,
    /// `A sin(w.x + b) + B`
    Sinusoidal,
    /// `sigmoid(w.x + b)`, or its complement.
    Sigmoid,
}

impl Family {
    /// Number of parameters for input dimension `d`.
    pub fn arity(self, d: usize) -> usize {
        match self {
            Family::Linear | Family::Sigmoid => d + 1,
            Family::Quadratic => 2 * d + 1,
            Family::Sinusoidal => d + 3,
        }
    }

    /// Short tag used by the structure grammar.
    pub fn tag(self) -> &'static str {
        match self {
            Family::Linear => "lin",
            Family::Quadratic => "quad",
            Family::Sinusoidal => "sin",
            Family::Sigmoid => "sig",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Family> {
        match tag {
            "lin" => Some(Family::Linear),
            "quad" => Some(Family::Quadratic),
            "sin" => Some(Family::Sinusoidal),
            "sig" => Some(Family::Sigmoid),
            _ => None,
        }
    }

    /// Whether the family is a fixed function of one affine form `w.x + b`.
    pub fn is_affine_inside(self) -> bool {
        !matches!(self, Family::Quadratic)
    }
}

/// One learnable inequality piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFunction {
    pub family: Family,
    /// Slice of the model's flat parameter vector. Several components may
    /// alias the same slice (tree nodes reached on more than one path).
    pub params: Range<usize>,
    #[serde(default)]
    pub complemented: bool,
}

impl ComponentFunction {
    pub fn new(family: Family, offset: usize, input_dim: usize) -> Self {
        ComponentFunction {
            family,
            params: offset..offset + family.arity(input_dim),
            complemented: false,
        }
    }

    /// Evaluates the component at `x` with parameters `p` (this component's slice).
    #[inline]
    pub fn eval(&self, p: &[f64], x: &[f64]) -> f64 {
        let d = x.len();
        match self.family {
            Family::Linear => dot(&p[..d], x) + p[d],
            Family::Quadratic => {
                let mut acc = p[2 * d];
                for (i, &xi) in x.iter().enumerate() {
                    acc += p[i] * xi * xi + p[d + i] * xi;
                }
                acc
            }
            Family::Sinusoidal => {
                let u = dot(&p[..d], x) + p[d];
                p[d + 1] * u.sin() + p[d + 2]
            }
            Family::Sigmoid => {
                let s = sigmoid(dot(&p[..d], x) + p[d]);
                if self.complemented {
                    1.0 - s
                } else {
                    s
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// DNF wiring: components grouped into polytopes, polytopes into heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetStructure {
    /// Dimension seen by the components (after any pre-linear reduction).
    pub input_dim: usize,
    pub components: Vec<ComponentFunction>,
    /// Each polytope lists component indices that are intersected.
    pub polytopes: Vec<Vec<usize>>,
    /// Each head lists polytope indices that are unioned.
    pub heads: Vec<Vec<usize>>,
}

impl SetStructure {
    /// `u` polytopes of `i` components each under a single head.
    pub fn uniform(family: Family, input_dim: usize, unions: usize, intersections: usize) -> Self {
        let mut s = SetStructure {
            input_dim,
            components: Vec::new(),
            polytopes: Vec::new(),
            heads: vec![Vec::new()],
        };
        for _ in 0..unions {
            let p = s.push_polytope(&vec![(family, false); intersections], 0);
            s.heads[0].push(p);
        }
        s
    }

    /// Appends a polytope of fresh components whose slices start at
    /// `param_base + current parameter end`. Returns the polytope index.
    pub(crate) fn push_polytope(&mut self, atoms: &[(Family, bool)], param_base: usize) -> usize {
        let mut next = self.component_param_end().max(param_base);
        let mut members = Vec::with_capacity(atoms.len());
        for &(family, complemented) in atoms {
            let mut c = ComponentFunction::new(family, next, self.input_dim);
            c.complemented = complemented;
            next = c.params.end;
            members.push(self.components.len());
            self.components.push(c);
        }
        self.polytopes.push(members);
        self.polytopes.len() - 1
    }

    /// One past the highest parameter index used by any component.
    pub fn component_param_end(&self) -> usize {
        self.components.iter().map(|c| c.params.end).max().unwrap_or(0)
    }

    /// Largest number of components in any polytope.
    pub fn max_polytope_size(&self) -> usize {
        self.polytopes.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Largest number of polytopes in any head.
    pub fn max_head_size(&self) -> usize {
        self.heads.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Polytope index owning each component.
    pub fn owner_polytope(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.components.len()];
        for (p, members) in self.polytopes.iter().enumerate() {
            for &j in members {
                owner[j] = p;
            }
        }
        owner
    }

    /// Number of heads referencing each polytope.
    pub fn polytope_head_counts(&self) -> Vec<usize> {
        let mut count = vec![0; self.polytopes.len()];
        for head in &self.heads {
            for &p in head {
                count[p] += 1;
            }
        }
        count
    }

    /// Checks every wiring invariant. `param_offset` is where component
    /// slices begin in the flat parameter vector.
    pub fn validate(&self, param_offset: usize) -> Result<()> {
        let err = |m: String| Err(SpineError::Structure(m));
        if self.input_dim == 0 {
            return err("input_dim must be positive".into());
        }
        if self.heads.is_empty() {
            return err("structure has no heads".into());
        }
        if self.polytopes.is_empty() || self.components.is_empty() {
            return err("structure has no polytopes".into());
        }
        let mut seen = vec![0usize; self.components.len()];
        for (p, members) in self.polytopes.iter().enumerate() {
            if members.is_empty() {
                return err(format!("polytope {p} is empty"));
            }
            for &j in members {
                if j >= self.components.len() {
                    return err(format!("polytope {p} references missing component {j}"));
                }
                seen[j] += 1;
            }
        }
        if let Some(j) = seen.iter().position(|&c| c != 1) {
            return err(format!(
                "component {j} referenced by {} polytopes, expected exactly 1",
                seen[j]
            ));
        }
        let mut used = vec![false; self.polytopes.len()];
        for (h, head) in self.heads.iter().enumerate() {
            if head.is_empty() {
                return err(format!("head {h} is empty"));
            }
            for &p in head {
                if p >= self.polytopes.len() {
                    return err(format!("head {h} references missing polytope {p}"));
                }
                used[p] = true;
            }
        }
        if let Some(p) = used.iter().position(|u| !u) {
            return err(format!("polytope {p} is not referenced by any head"));
        }
        // Slices must match arity; aliased slices must agree in family; the
        // union of slices must tile [param_offset, end) without overlap.
        let mut slices: Vec<(Range<usize>, Family)> = Vec::new();
        for (j, c) in self.components.iter().enumerate() {
            if c.params.len() != c.family.arity(self.input_dim) {
                return err(format!(
                    "component {j} has {} parameters, {:?} needs {}",
                    c.params.len(),
                    c.family,
                    c.family.arity(self.input_dim)
                ));
            }
            if c.complemented && c.family != Family::Sigmoid {
                return err(format!("component {j}: complement is only defined for sigmoid"));
            }
            match slices.iter().find(|(r, _)| *r == c.params) {
                Some((_, f)) if *f != c.family => {
                    return err(format!("component {j} aliases a slice of a different family"));
                }
                Some(_) => {}
                None => slices.push((c.params.clone(), c.family)),
            }
        }
        slices.sort_by_key(|(r, _)| r.start);
        let mut cursor = param_offset;
        for (r, _) in &slices {
            if r.start != cursor {
                return err(format!(
                    "parameter slices are not contiguous: expected start {cursor}, found {}",
                    r.start
                ));
            }
            cursor = r.end;
        }
        Ok(())
    }
}

/// Linear map without activation applied to the raw input before the
/// components. Weights are row-major `[out_dim][in_dim]` followed by
/// `out_dim` biases, stored at the front of the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreLinear {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl PreLinear {
    pub fn param_len(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn apply(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let (w, b) = params[..self.param_len()].split_at(self.out_dim * self.in_dim);
        out.clear();
        out.extend(
            w.chunks_exact(self.in_dim)
                .zip(b)
                .map(|(row, bias)| dot(row, x) + bias),
        );
    }
}

/// Which evaluator a model uses for prediction and training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    #[default]
    LogExp,
    MaxMin,
}

/// The (argmax polytope, argmin component) pair realizing a max-min value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveSet {
    pub polytope: usize,
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxMinOutput {
    pub values: Vec<f64>,
    pub active: Vec<ActiveSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub structure: SetStructure,
    pub theta: Vec<f64>,
    pub a: f64,
    #[serde(default)]
    pub form: Form,
    #[serde(default)]
    pub pre_linear: Option<PreLinear>,
    #[serde(default)]
    pub x_scaler: Scaler,
    #[serde(default)]
    pub y_scaler: Scaler,
    /// Structure text the model was elaborated from, when known.
    #[serde(default)]
    pub source: Option<String>,
}

/// Per-input intermediate values of a forward pass, reused by backward.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Component-space input (after pre-linear, if any).
    pub z: Vec<f64>,
    pub components: Vec<f64>,
    /// Soft-min (log-exp) or min (max-min) value per polytope.
    pub polytopes: Vec<f64>,
    pub heads: Vec<f64>,
    /// Max-min only: argmin component per polytope.
    pub argmin: Vec<usize>,
    /// Max-min only: argmax polytope per head.
    pub argmax: Vec<usize>,
    /// Polytope reductions performed for the last input.
    pub polytope_evaluations: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    /// Builds a model with zeroed parameters; see [`crate::train::init_params`].
    ///
    /// Component slices in `structure` are taken relative to the start of
    /// the component block and are shifted past any pre-linear parameters.
    pub fn new(mut structure: SetStructure, a: f64, pre_linear: Option<PreLinear>) -> Result<Model> {
        let offset = pre_linear.map_or(0, |p| p.param_len());
        for c in &mut structure.components {
            c.params = c.params.start + offset..c.params.end + offset;
        }
        let len = structure.component_param_end().max(offset);
        let model = Model {
            structure,
            theta: vec![0.0; len],
            a,
            form: Form::LogExp,
            pre_linear,
            x_scaler: Scaler::default(),
            y_scaler: Scaler::default(),
            source: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Where component slices begin in `theta`.
    pub fn component_offset(&self) -> usize {
        self.pre_linear.map_or(0, |p| p.param_len())
    }

    /// Raw input dimension expected by the evaluators.
    pub fn input_dim(&self) -> usize {
        self.pre_linear.map_or(self.structure.input_dim, |p| p.in_dim)
    }

    pub fn num_heads(&self) -> usize {
        self.structure.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(SpineError::Structure(format!(
                "sharpness a must be positive and finite, got {}",
                self.a
            )));
        }
        if let Some(pl) = self.pre_linear {
            if pl.out_dim != self.structure.input_dim || pl.in_dim == 0 {
                return Err(SpineError::Structure(format!(
                    "pre-linear maps {} -> {}, components expect {}",
                    pl.in_dim, pl.out_dim, self.structure.input_dim
                )));
            }
        }
        let offset = self.component_offset();
        self.structure.validate(offset)?;
        let expected = self.structure.component_param_end();
        if self.theta.len() != expected {
            return Err(SpineError::Structure(format!(
                "theta has {} entries, structure needs {expected}",
                self.theta.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SpineError::Input(format!(
                "expected {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SpineError::Input(format!("feature {i} is not finite ({})", x[i])));
        }
        Ok(())
    }

    fn fill_components(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(x)?;
        match self.pre_linear {
            Some(pl) => pl.apply(&self.theta, x, &mut trace.z),
            None => {
                trace.z.clear();
                trace.z.extend_from_slice(x);
            }
        }
        trace.components.clear();
        trace.components.extend(
            self.structure
                .components
                .iter()
                .map(|c| c.eval(&self.theta[c.params.clone()], &trace.z)),
        );
        Ok(())
    }

    /// Value of every component function at `x`.
    pub fn eval_components(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.fill_components(x, &mut trace)?;
        Ok(trace.components)
    }

    /// Log-exp forward pass into a reusable trace.
    pub fn trace_logexp(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        self.fill_components(x, trace)?;
        let a = self.a;
        let f = &trace.components;
        trace.polytopes.clear();
        trace.polytopes.extend(
            self.structure
                .polytopes
                .iter()
                .map(|members| -log_sum_exp(members.iter().map(|&j| -a * f[j])) / a),
        );
        trace.polytope_evaluations = self.structure.polytopes.len();
        let s = &trace.polytopes;
        trace.heads.clear();
        trace.heads.extend(
            self.structure
                .heads
                .iter()
                .map(|head| log_sum_exp(head.iter().map(|&p| a * s[p])) / a),
        );
        Ok(())
    }

    /// Max-min forward pass into a reusable trace. Ties resolve to the
    /// lowest component index and the lowest polytope index.
    pub fn trace_maxmin(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        self.fill_components(x, trace)?;
        let f = &trace.components;
        trace.polytopes.clear();
        trace.argmin.clear();
        for members in &self.structure.polytopes {
            let mut best = members[0];
            for &j in &members[1..] {
                if f[j] < f[best] || (f[j] == f[best] && j < best) {
                    best = j;
                }
            }
            trace.argmin.push(best);
            trace.polytopes.push(f[best]);
        }
        trace.polytope_evaluations = self.structure.polytopes.len();
        let s = &trace.polytopes;
        trace.heads.clear();
        trace.argmax.clear();
        for head in &self.structure.heads {
            let mut best = head[0];
            for &p in &head[1..] {
                if s[p] > s[best] || (s[p] == s[best] && p < best) {
                    best = p;
                }
            }
            trace.argmax.push(best);
            trace.heads.push(s[best]);
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64], trace: &mut Trace) -> Result<()> {
        match self.form {
            Form::LogExp => self.trace_logexp(x, trace),
            Form::MaxMin => self.trace_maxmin(x, trace),
        }
    }

    /// Head outputs of the log-exp form.
    pub fn forward_logexp(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.trace_logexp(x, &mut trace)?;
        Ok(trace.heads)
    }

    /// Head outputs of the max-min form with the active set per head.
    pub fn forward_maxmin(&self, x: &[f64]) -> Result<MaxMinOutput> {
        let mut trace = Trace::default();
        self.trace_maxmin(x, &mut trace)?;
        let active = trace
            .argmax
            .iter()
            .map(|&p| ActiveSet {
                polytope: p,
                component: trace.argmin[p],
            })
            .collect();
        Ok(MaxMinOutput {
            values: trace.heads,
            active,
        })
    }

    /// Head outputs under the model's own form.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.form {
            Form::LogExp => self.forward_logexp(x),
            Form::MaxMin => Ok(self.forward_maxmin(x)?.values),
        }
    }

    /// Applies the input scaler, evaluates, and maps head outputs back
    /// through the target scaler.
    pub fn predict_raw(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        let x = self.x_scaler.transform_row(x_raw);
        let mut y = self.forward(&x)?;
        self.y_scaler.inverse_row_in_place(&mut y);
        Ok(y)
    }

    /// Folds the pre-linear layer into every component, yielding an
    /// equivalent model that reads the raw input directly.
    ///
    /// Only families that see `w.z + b` can absorb the map; quadratic
    /// components make the merge impossible.
    pub fn merge_pre_linear(&self) -> Result<Model> {
        let Some(pl) = self.pre_linear else {
            return Ok(self.clone());
        };
        if let Some(c) = self.structure.components.iter().find(|c| !c.family.is_affine_inside()) {
            return Err(SpineError::Structure(format!(
                "{:?} components cannot absorb the pre-linear layer",
                c.family
            )));
        }
        let offset = pl.param_len();
        let (w_pre, b_pre) = self.theta[..offset].split_at(pl.out_dim * pl.in_dim);
        let d_out = pl.in_dim;
        let d_in = pl.out_dim;

        // Remap each distinct slice, keeping aliasing intact.
        let mut remap: Vec<(Range<usize>, Range<usize>)> = Vec::new();
        let mut theta = Vec::new();
        let mut components = Vec::with_capacity(self.structure.components.len());
        let mut order: Vec<usize> = (0..self.structure.components.len()).collect();
        order.sort_by_key(|&j| self.structure.components[j].params.start);
        let mut new_ranges = vec![0..0; order.len()];
        for &j in &order {
            let c = &self.structure.components[j];
            if let Some((_, r)) = remap.iter().find(|(old, _)| *old == c.params) {
                new_ranges[j] = r.clone();
                continue;
            }
            let p = &self.theta[c.params.clone()];
            let (w, rest) = p.split_at(d_in);
            let start = theta.len();
            for col in 0..d_out {
                theta.push((0..d_in).map(|r| w[r] * w_pre[r * d_out + col]).sum());
            }
            theta.push(dot(w, b_pre) + rest[0]);
            theta.extend_from_slice(&rest[1..]);
            let r = start..theta.len();
            remap.push((c.params.clone(), r.clone()));
            new_ranges[j] = r;
        }
        for (j, c) in self.structure.components.iter().enumerate() {
            components.push(ComponentFunction {
                family: c.family,
                params: new_ranges[j].clone(),
                complemented: c.complemented,
            });
        }
        let structure = SetStructure {
            input_dim: d_out,
            components,
            polytopes: self.structure.polytopes.clone(),
            heads: self.structure.heads.clone(),
        };
        let merged = Model {
            structure,
            theta,
            a: self.a,
            form: self.form,
            pre_linear: None,
            x_scaler: self.x_scaler.clone(),
            y_scaler: self.y_scaler.clone(),
            source: self.source.clone(),
        };
        merged.validate()?;
        Ok(merged)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(SpineError::Structure(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| SpineError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SpineError::io(path, e))?;
        Model::from_json(&text)
    }
}

/// Stable softmax over head outputs.
pub fn softmax_head(logits: &[f64]) -> Vec<f64> {
    crate::lse::softmax(logits)
}

#[cfg(test)]
// Reference values keep every digit the high-precision oracle printed.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    pub(crate) fn linear_model(polys: &[&[(f64, f64)]], a: f64) -> Model {
        let mut s = SetStructure {
            input_dim: 1,
            components: vec![],
            polytopes: vec![],
            heads: vec![vec![]],
        };
        let mut theta = vec![];
        for poly in polys {
            let p = s.push_polytope(&vec![(Family::Linear, false); poly.len()], 0);
            s.heads[0].push(p);
            for &(w, b) in poly.iter() {
                theta.extend([w, b]);
            }
        }
        let mut m = Model::new(s, a, None).unwrap();
        m.theta = theta;
        m
    }

    fn fig1c() -> Model {
        linear_model(
            &[
                &[(1.0, 0.0), (0.0, 1.0), (-1.0, 3.1)],
                &[(1.0, -4.1), (0.0, 1.0), (-1.0, 5.5)],
                &[(1.0, -6.3), (0.0, -1.0), (-1.0, 9.4)],
            ],
            10.0,
        )
    }

    #[test]
    fn component_examples() {
        let lin = ComponentFunction::new(Family::Linear, 0, 1);
        assert_eq!(lin.eval(&[2.0, 1.0], &[3.0]), 7.0);
        let mut sig = ComponentFunction::new(Family::Sigmoid, 0, 1);
        sig.complemented = true;
        assert_eq!(sig.eval(&[0.0, 0.0], &[123.0]), 0.5);
        let quad = ComponentFunction::new(Family::Quadratic, 0, 1);
        assert_eq!(quad.eval(&[1.0, 0.0, 0.0], &[3.0]), 9.0);
        let sin = ComponentFunction::new(Family::Sinusoidal, 0, 1);
        let v = sin.eval(&[2.0, 0.5, 3.0, -1.0], &[0.25]);
        assert!((v - (3.0 * 1f64.sin() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_component_is_identity() {
        let m = linear_model(&[&[(1.0, 0.0)]], 10.0);
        assert_eq!(m.forward_logexp(&[5.0]).unwrap(), vec![5.0]);
        for a in [1e-3, 1.0, 1e3] {
            let mut m = m.clone();
            m.a = a;
            assert!((m.forward_logexp(&[5.0]).unwrap()[0] - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fig1a_matches_extended_precision_oracle() {
        // mpmath, 50 digits: ln(1/(e^0 + e^-10 + e^-31))/10
        let oracle = -4.5398899251287855042949186852430512394090674995731e-6;
        let m = linear_model(&[&[(1.0, 0.0), (0.0, 1.0), (-1.0, 3.1)]], 10.0);
        let y = m.forward_logexp(&[0.0]).unwrap()[0];
        assert!((y - oracle).abs() < 1e-12, "{y} vs {oracle}");
        let mm = m.forward_maxmin(&[0.0]).unwrap();
        assert_eq!(mm.values[0], 0.0);
        assert_eq!(mm.active[0], ActiveSet { polytope: 0, component: 0 });
    }

    #[test]
    fn fig1c_union_of_three_polytopes() {
        let m = fig1c();
        // mpmath oracles for Eq. 2 at a = 10.
        let cases = [
            (0.5, 0.49932846507577007851, 0.5, 0),
            (4.8, 0.62822640819786343584, 0.7, 1),
            (8.0, -0.99999996941373571369, -1.0, 2),
        ];
        for (x, logexp, maxmin, poly) in cases {
            let y = m.forward_logexp(&[x]).unwrap()[0];
            assert!((y - logexp).abs() < 1e-12, "x={x}: {y} vs {logexp}");
            let mm = m.forward_maxmin(&[x]).unwrap();
            assert!((mm.values[0] - maxmin).abs() < 1e-12);
            assert_eq!(mm.active[0].polytope, poly);
            assert!((y - mm.values[0]).abs() <= 3f64.ln() / 10.0);
        }
    }

    #[test]
    fn overflow_safe_for_large_exponents() {
        let m = linear_model(&[&[(0.0, 1000.0), (0.0, 1001.0)], &[(0.0, -999.0)]], 10.0);
        let y = m.forward_logexp(&[0.0]).unwrap()[0];
        let expected = 1000.0 - (-10f64).exp().ln_1p() / 10.0;
        assert!((y - expected).abs() < 1e-9, "{y}");
    }

    #[test]
    fn maxmin_tie_prefers_lowest_index() {
        let m = linear_model(&[&[(1.0, 0.0), (0.0, 0.5)]], 5.0);
        let out = m.forward_maxmin(&[0.5]).unwrap();
        assert_eq!(out.active[0].component, 0);
    }

    #[test]
    fn translation_shifts_outputs() {
        let m = fig1c();
        let mut shifted = m.clone();
        for c in &shifted.structure.components {
            shifted.theta[c.params.end - 1] += 0.75;
        }
        for x in [-1.0, 0.3, 4.8, 7.7] {
            let d = shifted.forward_logexp(&[x]).unwrap()[0] - m.forward_logexp(&[x]).unwrap()[0];
            assert!((d - 0.75).abs() < 1e-12);
            let d = shifted.forward_maxmin(&[x]).unwrap().values[0]
                - m.forward_maxmin(&[x]).unwrap().values[0];
            assert!((d - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let m = fig1c();
        assert!(matches!(m.forward_logexp(&[1.0, 2.0]), Err(SpineError::Input(_))));
        assert!(matches!(m.forward_logexp(&[f64::NAN]), Err(SpineError::Input(_))));
    }

    #[test]
    fn validate_rejects_bad_wiring() {
        let mut m = fig1c();
        m.structure.heads[0].pop();
        assert!(matches!(m.validate(), Err(SpineError::Structure(_))));

        let mut m = fig1c();
        m.structure.components[0].complemented = true;
        assert!(m.validate().is_err());

        let mut m = fig1c();
        m.theta.push(0.0);
        assert!(m.validate().is_err());

        let mut m = fig1c();
        m.a = 0.0;
        assert!(m.validate().is_err());

        let mut m = fig1c();
        m.structure.polytopes[1].push(0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn polytope_reductions_counted_once_per_input() {
        let mut s = SetStructure::uniform(Family::Linear, 1, 3, 2);
        s.heads.push(vec![0, 2]);
        let m = Model::new(s, 2.0, None).unwrap();
        let mut t = Trace::default();
        m.trace_logexp(&[0.2], &mut t).unwrap();
        assert_eq!(t.polytope_evaluations, 3);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = fig1c();
        m.theta[0] = 0.1 + 0.2;
        m.theta[1] = 1e-300;
        m.theta[2] = -std::f64::consts::PI;
        m.source = Some("head = uniform(lin, 3, 3)".into());
        let back = Model::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().unwrap().contains("\"format_version\": 1"));
    }
}
