//! A small text grammar for model wiring.
//!
//! ```text
//! spec      := { def } head { head } | tree
//! def       := NAME ":=" "(" atom { "&" atom } ")"
//! head      := "head" [NAME] "=" term { "|" term }
//! term      := NAME | "(" atom { "&" atom } ")" | "uniform(" family "," u "," i ")"
//! atom      := ["!"] family
//! family    := "lin" | "quad" | "sin" | "sig"
//! tree      := "tree" "{" node "}"
//! node      := CLASS | "(" "sig" node node ")"
//! ```
//!
//! A named polytope used by several heads is one polytope: its parameters
//! and its value are shared. Repeating a literal creates independent
//! copies. In a tree the first child of a node is taken when the node's
//! sigmoid holds and the second when its complement does.

mod lexer;
mod parser;

use std::fmt;

use crate::classify::{TreeNode, TreeSpec};
use crate::error::{Result, SpineError};
use crate::model::{Family, SetStructure};

pub use parser::parse;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Atom {
    pub family: Family,
    pub complemented: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub name: String,
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Named(String),
    Literal(Vec<Atom>),
    Uniform {
        family: Family,
        unions: usize,
        intersections: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadExpr {
    pub name: Option<String>,
    pub terms: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureExpr {
    pub defs: Vec<Definition>,
    pub heads: Vec<HeadExpr>,
    pub tree: Option<TreeSpec>,
}

impl StructureExpr {
    /// Names of the heads, `None` where unnamed.
    pub fn head_names(&self) -> Vec<Option<String>> {
        self.heads.iter().map(|h| h.name.clone()).collect()
    }
}

/// Builds the wiring for input dimension `input_dim`.
///
/// Components are laid out definitions first, then heads left to right,
/// with contiguous parameter slices starting at 0.
pub fn elaborate(expr: &StructureExpr, input_dim: usize) -> Result<SetStructure> {
    elaborate_heads(expr, input_dim, None)
}

/// Like [`elaborate`], but a spec with a single head is replicated into
/// `outputs` heads (one per class), each with its own literal polytopes.
/// Named polytopes referenced by the replicated head stay shared.
pub fn elaborate_heads(expr: &StructureExpr, input_dim: usize, outputs: Option<usize>) -> Result<SetStructure> {
    if input_dim < 1 {
        return Err(SpineError::Structure("input_dim must be at least 1".into()));
    }
    if let Some(tree) = &expr.tree {
        let s = tree.to_structure(input_dim)?;
        if let Some(k) = outputs {
            if k != s.heads.len() {
                return Err(SpineError::Structure(format!(
                    "tree has {} classes, data has {k}",
                    s.heads.len()
                )));
            }
        }
        return Ok(s);
    }
    let mut s = SetStructure {
        input_dim,
        components: Vec::new(),
        polytopes: Vec::new(),
        heads: Vec::new(),
    };
    let atoms = |a: &[Atom]| a.iter().map(|a| (a.family, a.complemented)).collect::<Vec<_>>();
    let mut named = Vec::with_capacity(expr.defs.len());
    for def in &expr.defs {
        named.push((def.name.as_str(), s.push_polytope(&atoms(&def.atoms), 0)));
    }
    let heads: Vec<&HeadExpr> = match outputs {
        Some(k) if expr.heads.len() == 1 => vec![&expr.heads[0]; k],
        Some(k) if k != expr.heads.len() => {
            return Err(SpineError::Structure(format!(
                "structure declares {} heads, data needs {k}",
                expr.heads.len()
            )))
        }
        _ => expr.heads.iter().collect(),
    };
    for head in heads {
        let mut members = Vec::new();
        for term in &head.terms {
            match term {
                Term::Named(name) => {
                    let (_, p) = named
                        .iter()
                        .find(|(n, _)| n == name)
                        .ok_or_else(|| SpineError::Structure(format!("undefined polytope '{name}'")))?;
                    members.push(*p);
                }
                Term::Literal(a) => members.push(s.push_polytope(&atoms(a), 0)),
                Term::Uniform {
                    family,
                    unions,
                    intersections,
                } => {
                    for _ in 0..*unions {
                        members.push(s.push_polytope(&vec![(*family, false); *intersections], 0));
                    }
                }
            }
        }
        s.heads.push(members);
    }
    s.validate(0)?;
    Ok(s)
}

/// Parses and elaborates in one step.
pub fn parse_structure(text: &str, input_dim: usize) -> Result<SetStructure> {
    elaborate(&parse(text)?, input_dim)
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.complemented {
            f.write_str("!")?;
        }
        f.write_str(self.family.tag())
    }
}

fn write_atoms(f: &mut fmt::Formatter<'_>, atoms: &[Atom]) -> fmt::Result {
    f.write_str("(")?;
    for (i, a) in atoms.iter().enumerate() {
        if i > 0 {
            f.write_str(" & ")?;
        }
        write!(f, "{a}")?;
    }
    f.write_str(")")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Named(n) => f.write_str(n),
            Term::Literal(a) => write_atoms(f, a),
            Term::Uniform {
                family,
                unions,
                intersections,
            } => write!(f, "uniform({}, {unions}, {intersections})", family.tag()),
        }
    }
}

impl fmt::Display for TreeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeNode::Leaf(c) => write!(f, "{c}"),
            TreeNode::Split(t, e) => write!(f, "(sig {t} {e})"),
        }
    }
}

impl fmt::Display for StructureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(tree) = &self.tree {
            return writeln!(f, "tree {{ {} }}", tree.root);
        }
        for d in &self.defs {
            write!(f, "{} := ", d.name)?;
            write_atoms(f, &d.atoms)?;
            writeln!(f)?;
        }
        for h in &self.heads {
            f.write_str("head")?;
            if let Some(n) = &h.name {
                write!(f, " {n}")?;
            }
            f.write_str(" =")?;
            for (i, t) in h.terms.iter().enumerate() {
                if i > 0 {
                    f.write_str(" |")?;
                }
                write!(f, " {t}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
