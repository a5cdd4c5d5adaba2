//! Multi-head classifiers: one union head per class over a common polytope
//! pool, optional shared polytopes, optional pre-linear reduction, and
//! neural decision trees.

use crate::error::{Result, SpineError};
use crate::model::{ActiveSet, Family, Model, PreLinear, SetStructure};
use crate::structure::{self, StructureExpr, Term};
use crate::train::{argmax, init_params, InitScheme};

/// Node of a binary decision tree. Each split is one sigmoid decision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(usize),
    /// `(taken when the sigmoid holds, taken when its complement holds)`
    Split(Box<TreeNode>, Box<TreeNode>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeSpec {
    pub root: TreeNode,
    pub num_classes: usize,
}

impl TreeSpec {
    /// Validates that classes `0..k` each label at least one leaf, `k >= 2`.
    pub fn new(root: TreeNode) -> Result<TreeSpec> {
        let mut leaves = Vec::new();
        collect_leaves(&root, &mut leaves);
        let k = leaves.iter().copied().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(SpineError::Structure("a tree needs at least two classes".into()));
        }
        if let Some(c) = (0..k).find(|c| !leaves.contains(c)) {
            return Err(SpineError::Structure(format!("class {c} does not label any leaf")));
        }
        Ok(TreeSpec { root, num_classes: k })
    }

    pub fn num_nodes(&self) -> usize {
        fn count(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split(t, e) => 1 + count(t) + count(e),
            }
        }
        count(&self.root)
    }

    /// One polytope per leaf (the conjunction of decisions along its path),
    /// one head per class. Node `k` in preorder owns parameter slice `k`;
    /// every path through a node aliases that slice.
    pub fn to_structure(&self, input_dim: usize) -> Result<SetStructure> {
        if input_dim < 1 {
            return Err(SpineError::Structure("input_dim must be at least 1".into()));
        }
        let arity = Family::Sigmoid.arity(input_dim);
        let mut s = SetStructure {
            input_dim,
            components: Vec::new(),
            polytopes: Vec::new(),
            heads: vec![Vec::new(); self.num_classes],
        };
        let mut path = Vec::new();
        let mut next_node = 0;
        walk(&self.root, &mut path, &mut next_node, &mut |path, class| {
            let members = path
                .iter()
                .map(|&(node, complemented): &(usize, bool)| {
                    s.components.push(crate::model::ComponentFunction {
                        family: Family::Sigmoid,
                        params: node * arity..(node + 1) * arity,
                        complemented,
                    });
                    s.components.len() - 1
                })
                .collect();
            s.polytopes.push(members);
            s.heads[class].push(s.polytopes.len() - 1);
        });
        s.validate(0)?;
        Ok(s)
    }
}

fn collect_leaves(n: &TreeNode, out: &mut Vec<usize>) {
    match n {
        TreeNode::Leaf(c) => out.push(*c),
        TreeNode::Split(t, e) => {
            collect_leaves(t, out);
            collect_leaves(e, out);
        }
    }
}

fn walk(
    n: &TreeNode,
    path: &mut Vec<(usize, bool)>,
    next_node: &mut usize,
    leaf: &mut impl FnMut(&[(usize, bool)], usize),
) {
    match n {
        TreeNode::Leaf(c) => leaf(path, *c),
        TreeNode::Split(t, e) => {
            let id = *next_node;
            *next_node += 1;
            path.push((id, false));
            walk(t, path, next_node, leaf);
            path.pop();
            path.push((id, true));
            walk(e, path, next_node, leaf);
            path.pop();
        }
    }
}

/// How class heads are wired.
#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// `unions` private polytopes of `intersections` components per class.
    Uniform { unions: usize, intersections: usize },
    /// `private` polytopes per class plus `shared` polytopes referenced by
    /// every class head.
    Shared {
        private: usize,
        shared: usize,
        intersections: usize,
    },
    /// Structure text; a single head is replicated per class.
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub family: Family,
    pub layout: Layout,
    pub a: f64,
    /// Width of a pre-linear reduction applied to the raw input.
    pub pre_linear: Option<usize>,
    pub seed: u64,
}

impl ClassifierSpec {
    /// Structure text equivalent to this spec.
    pub fn structure_text(&self) -> String {
        let tag = self.family.tag();
        match &self.layout {
            Layout::Uniform {
                unions,
                intersections,
            } => format!("head = uniform({tag}, {unions}, {intersections})"),
            Layout::Shared {
                private,
                shared,
                intersections,
            } => {
                let lit = format!("({})", vec![tag; *intersections].join(" & "));
                let mut text = String::new();
                for s in 0..*shared {
                    text.push_str(&format!("S{s} := {lit}\n"));
                }
                for c in 0..self.num_classes {
                    let mut terms: Vec<String> = vec![lit.clone(); *private];
                    terms.extend((0..*shared).map(|s| format!("S{s}")));
                    text.push_str(&format!("head C{c} = {}\n", terms.join(" | ")));
                }
                text
            }
            Layout::Text(t) => t.clone(),
        }
    }
}

/// Assembles one model whose heads are the class logits.
pub fn build_classifier(spec: &ClassifierSpec) -> Result<Model> {
    if spec.num_classes < 2 {
        return Err(SpineError::Structure(format!(
            "a classifier needs at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if let Layout::Shared { shared: 0, .. } = spec.layout {
        return Err(SpineError::Structure("a shared layout needs at least one shared polytope".into()));
    }
    let text = spec.structure_text();
    let expr = structure::parse(&text)?;
    let comp_dim = spec.pre_linear.unwrap_or(spec.input_dim);
    let s = structure::elaborate_heads(&expr, comp_dim, Some(spec.num_classes))?;
    let pre = spec.pre_linear.map(|out_dim| PreLinear {
        in_dim: spec.input_dim,
        out_dim,
    });
    let mut model = Model::new(s, spec.a, pre)?;
    model.theta = init_params(&model, spec.seed, InitScheme::UniformFanIn);
    model.source = Some(text);
    Ok(model)
}

/// Decision-tree classifier with node parameters aliased across paths.
pub fn build_tree_classifier(tree: &TreeSpec, input_dim: usize, a: f64, seed: u64) -> Result<Model> {
    let s = tree.to_structure(input_dim)?;
    let mut model = Model::new(s, a, None)?;
    model.theta = init_params(&model, seed, InitScheme::UniformFanIn);
    model.source = Some(
        StructureExpr {
            defs: Vec::new(),
            heads: Vec::new(),
            tree: Some(tree.clone()),
        }
        .to_string(),
    );
    Ok(model)
}

/// Whether polytope sharing is present in the given expression.
pub fn shares_polytopes(expr: &StructureExpr) -> bool {
    expr.heads
        .iter()
        .any(|h| h.terms.iter().any(|t| matches!(t, Term::Named(_))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
    /// Head outputs under the model's form.
    pub logits: Vec<f64>,
    /// Max-min winner per class head on the same parameters.
    pub active: Vec<ActiveSet>,
    /// Class chosen by taking the max of the max-min logits.
    pub maxmin_class: usize,
    /// The winning max-min polytope is shared by several class heads: the
    /// input lies in a region the model treats as equally likely for them.
    pub shared_argmax: bool,
}

/// Classifies a raw input (scalers are applied here).
pub fn predict(model: &Model, x_raw: &[f64]) -> Result<Prediction> {
    let x = model.x_scaler.transform_row(x_raw);
    let logits = model.forward(&x)?;
    let probabilities = crate::model::softmax_head(&logits);
    let mm = model.forward_maxmin(&x)?;
    let maxmin_class = argmax(&mm.values);
    let counts = model.structure.polytope_head_counts();
    let shared_argmax = counts[mm.active[maxmin_class].polytope] > 1;
    Ok(Prediction {
        class: argmax(&probabilities),
        probabilities,
        logits,
        active: mm.active,
        maxmin_class,
        shared_argmax,
    })
}
