//! Random model generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spine::classify::{TreeNode, TreeSpec};
use spine::model::{Family, Model};
use spine::structure::parse_structure;

pub const FAMILIES: [Family; 4] = [Family::Linear, Family::Quadratic, Family::Sinusoidal, Family::Sigmoid];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn atom(rng: &mut ChaCha8Rng, families: &[Family]) -> String {
    let f = families[rng.random_range(0..families.len())];
    if f == Family::Sigmoid && rng.random_bool(0.5) {
        "!sig".into()
    } else {
        f.tag().into()
    }
}

fn polytope(rng: &mut ChaCha8Rng, m_max: usize, families: &[Family]) -> String {
    let m = rng.random_range(1..=m_max);
    let atoms: Vec<String> = (0..m).map(|_| atom(rng, families)).collect();
    format!("({})", atoms.join(" & "))
}

/// Structure text with up to `heads` heads of at most `n_max` polytopes of
/// at most `m_max` components; multi-head structures sometimes share a
/// named polytope.
pub fn random_text(rng: &mut ChaCha8Rng, heads: usize, n_max: usize, m_max: usize, families: &[Family]) -> String {
    let k = rng.random_range(1..=heads);
    let shared = k > 1 && rng.random_bool(0.5);
    let mut text = String::new();
    if shared {
        text.push_str(&format!("S := {}\n", polytope(rng, m_max, families)));
    }
    for h in 0..k {
        let n = rng.random_range(1..=n_max);
        let mut terms: Vec<String> = (0..n).map(|_| polytope(rng, m_max, families)).collect();
        if shared && (h == 0 || rng.random_bool(0.5)) {
            terms[0] = "S".into();
        }
        text.push_str(&format!("head = {}\n", terms.join(" | ")));
    }
    text
}

pub fn random_theta(rng: &mut ChaCha8Rng, model: &mut Model, scale: f64) {
    for t in &mut model.theta {
        *t = rng.random_range(-scale..scale);
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, d_max: usize, n_max: usize, m_max: usize, a: f64, families: &[Family]) -> Model {
    let d = rng.random_range(1..=d_max);
    let text = random_text(rng, 2, n_max, m_max, families);
    let s = parse_structure(&text, d).unwrap_or_else(|e| panic!("{e}\n{text}"));
    let mut m = Model::new(s, a, None).unwrap();
    random_theta(rng, &mut m, 1.5);
    m.source = Some(text);
    m
}

fn random_node(rng: &mut ChaCha8Rng, depth: usize, next_class: &mut usize) -> TreeNode {
    if depth == 0 || (depth < 3 && rng.random_bool(0.3)) {
        let c = *next_class % 3;
        *next_class += 1;
        TreeNode::Leaf(c)
    } else {
        TreeNode::Split(
            Box::new(random_node(rng, depth - 1, next_class)),
            Box::new(random_node(rng, depth - 1, next_class)),
        )
    }
}

/// Decision tree whose inner nodes are reused by several leaf paths.
pub fn random_tree_model(rng: &mut ChaCha8Rng, a: f64) -> Model {
    loop {
        let mut next = 0;
        let root = random_node(rng, 3, &mut next);
        if let Ok(tree) = TreeSpec::new(root) {
            let d = rng.random_range(1..=3);
            let s = tree.to_structure(d).unwrap();
            let mut m = Model::new(s, a, None).unwrap();
            random_theta(rng, &mut m, 1.5);
            return m;
        }
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}
