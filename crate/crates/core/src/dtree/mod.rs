//! Typed decision trees over entity coordinates.
//!
//! A tree is made of condition nodes and action leaves. Every condition holds
//! a comparison between two arithmetic expressions built from constants,
//! coordinate variables and `+ − × ÷` (division is protected). Tree depth
//! and expression depth are limited separately.

mod codec;
mod render;
mod simplify;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use codec::{from_prefix, to_prefix};
pub use render::{render_dot, render_text, Names};
pub use simplify::{simplify, VariableRange};

use crate::error::{invalid, Result};

/// Denominators smaller than this in magnitude make division return 1.
pub const PROTECTED_DIV_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
            ArithOp::Mul => a * b,
            ArithOp::Div => {
                if b.abs() < PROTECTED_DIV_EPS {
                    1.0
                } else {
                    a / b
                }
            }
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Less,
    Equal,
    Greater,
}

impl CompareOp {
    pub const ALL: [CompareOp; 3] = [CompareOp::Less, CompareOp::Equal, CompareOp::Greater];

    #[inline]
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CompareOp::Less => a < b,
            // Exact: coordinates are integer valued.
            CompareOp::Equal => a == b,
            CompareOp::Greater => a > b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Less => "<",
            CompareOp::Equal => "=",
            CompareOp::Greater => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Arith {
        op: ArithOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
}

impl Expr {
    pub fn arith(op: ArithOp, left: Expr, right: Expr) -> Self {
        Expr::Arith {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Arith { op, left, right } => op.apply(left.eval(x), right.eval(x)),
        }
    }

    /// Constants and variables have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 0,
            Expr::Arith { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Arith { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn arith_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 0,
            Expr::Arith { left, right, .. } => 1 + left.arith_count() + right.arith_count(),
        }
    }

    pub fn has_variables(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(_) => true,
            Expr::Arith { left, right, .. } => left.has_variables() || right.has_variables(),
        }
    }

    pub fn collect_variables(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            Expr::Arith { left, right, .. } => {
                left.collect_variables(out);
                right.collect_variables(out);
            }
        }
    }

    fn validate(&self, limits: &Limits) -> Result<()> {
        match self {
            Expr::Const(c) if !c.is_finite() => Err(invalid("non-finite constant")),
            Expr::Var(i) if *i >= limits.variable_arity => Err(invalid(format!(
                "variable index {i} out of range for arity {}",
                limits.variable_arity
            ))),
            Expr::Arith { left, right, .. } => {
                left.validate(limits)?;
                right.validate(limits)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub op: CompareOp,
    pub left: Expr,
    pub right: Expr,
}

impl Comparison {
    pub fn new(op: CompareOp, left: Expr, right: Expr) -> Self {
        Self { op, left, right }
    }

    #[inline]
    pub fn holds(&self, x: &[f64]) -> bool {
        self.op.holds(self.left.eval(x), self.right.eval(x))
    }

    pub fn variables(&self) -> Vec<usize> {
        let mut v = Vec::new();
        self.left.collect_variables(&mut v);
        self.right.collect_variables(&mut v);
        v
    }
}

/// Serialized as its prefix encoding (see [`to_prefix`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Tree {
    Condition {
        test: Comparison,
        if_true: Box<Tree>,
        if_false: Box<Tree>,
    },
    Leaf(usize),
}

/// Structural limits every tree in a population must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_tree_depth: usize,
    pub max_condition_depth: usize,
    pub variable_arity: usize,
    pub action_count: usize,
}

impl Tree {
    pub fn condition(test: Comparison, if_true: Tree, if_false: Tree) -> Self {
        Tree::Condition {
            test,
            if_true: Box::new(if_true),
            if_false: Box::new(if_false),
        }
    }

    /// Walks conditions down to a leaf and returns its action.
    pub fn evaluate(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                Tree::Leaf(a) => return *a,
                Tree::Condition {
                    test,
                    if_true,
                    if_false,
                } => {
                    node = if test.holds(x) { if_true } else { if_false };
                }
            }
        }
    }

    /// Condition nesting depth; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Condition {
                if_true, if_false, ..
            } => 1 + if_true.depth().max(if_false.depth()),
        }
    }

    /// Deepest expression found in any comparison.
    pub fn max_expression_depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Condition {
                test,
                if_true,
                if_false,
            } => test
                .left
                .depth()
                .max(test.right.depth())
                .max(if_true.max_expression_depth())
                .max(if_false.max_expression_depth()),
        }
    }

    pub fn validate(&self, limits: &Limits) -> Result<()> {
        fn walk(t: &Tree, depth: usize, limits: &Limits) -> Result<()> {
            match t {
                Tree::Leaf(a) => {
                    if *a >= limits.action_count {
                        return Err(invalid(format!(
                            "leaf action {a} out of range for {} actions",
                            limits.action_count
                        )));
                    }
                    Ok(())
                }
                Tree::Condition {
                    test,
                    if_true,
                    if_false,
                } => {
                    if depth + 1 > limits.max_tree_depth {
                        return Err(invalid(format!(
                            "tree depth exceeds {}",
                            limits.max_tree_depth
                        )));
                    }
                    for e in [&test.left, &test.right] {
                        if e.depth() > limits.max_condition_depth {
                            return Err(invalid(format!(
                                "condition depth {} exceeds {}",
                                e.depth(),
                                limits.max_condition_depth
                            )));
                        }
                        e.validate(limits)?;
                    }
                    walk(if_true, depth + 1, limits)?;
                    walk(if_false, depth + 1, limits)
                }
            }
        }
        walk(self, 0, limits)
    }

    pub fn complexity_profile(&self) -> ComplexityProfile {
        let mut p = ComplexityProfile::default();
        fn walk(t: &Tree, p: &mut ComplexityProfile) {
            match t {
                Tree::Leaf(_) => p.symbols += 1,
                Tree::Condition {
                    test,
                    if_true,
                    if_false,
                } => {
                    let arith = test.left.arith_count() + test.right.arith_count();
                    // condition + comparison + expression nodes
                    p.symbols += 2 + test.left.node_count() + test.right.node_count();
                    p.operations += arith + 2;
                    p.non_arithmetic += 2;
                    walk(if_true, p);
                    walk(if_false, p);
                }
            }
        }
        walk(self, &mut p);
        p.max_non_arithmetic_chain = self.depth();
        p
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Condition {
                if_true, if_false, ..
            } => if_true.leaf_count() + if_false.leaf_count(),
        }
    }

    /// Sorted indices of every variable read anywhere in the tree.
    pub fn variables(&self) -> Vec<usize> {
        fn walk(t: &Tree, out: &mut Vec<usize>) {
            if let Tree::Condition {
                test,
                if_true,
                if_false,
            } = t
            {
                test.left.collect_variables(out);
                test.right.collect_variables(out);
                walk(if_true, out);
                walk(if_false, out);
            }
        }
        let mut v = Vec::new();
        walk(self, &mut v);
        v.sort_unstable();
        v
    }
}

impl From<Tree> for String {
    fn from(t: Tree) -> Self {
        to_prefix(&t)
    }
}

impl TryFrom<String> for Tree {
    type Error = crate::Error;

    fn try_from(s: String) -> Result<Self> {
        from_prefix(&s)
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&to_prefix(self))
    }
}

/// Size and operation counts that feed the interpretability metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ComplexityProfile {
    /// ℓ: all AST nodes.
    pub symbols: usize,
    /// n_o: arithmetic operators, comparisons and conditions.
    pub operations: usize,
    /// n_nao: comparisons and conditions.
    pub non_arithmetic: usize,
    /// n_naoc: most conditions on one root-to-leaf path.
    pub max_non_arithmetic_chain: usize,
}

impl ComplexityProfile {
    pub fn new(symbols: usize, operations: usize, non_arithmetic: usize, chain: usize) -> Self {
        Self {
            symbols,
            operations,
            non_arithmetic,
            max_non_arithmetic_chain: chain,
        }
    }

    /// `M′ = −0.2 + 0.2ℓ + 0.5n_o + 3.4n_nao + 4.5n_naoc`; 0 for a constant model.
    pub fn m_prime(&self) -> f64 {
        -0.2 + 0.2 * self.symbols as f64
            + 0.5 * self.operations as f64
            + 3.4 * self.non_arithmetic as f64
            + 4.5 * self.max_non_arithmetic_chain as f64
    }

    /// `M = 79.1 − 0.2ℓ − 0.5n_o − 3.4n_nao − 4.5n_naoc`, unclamped.
    pub fn m_score(&self) -> f64 {
        79.1 - 0.2 * self.symbols as f64
            - 0.5 * self.operations as f64
            - 3.4 * self.non_arithmetic as f64
            - 4.5 * self.max_non_arithmetic_chain as f64
    }
}

pub fn m_prime(p: &ComplexityProfile) -> f64 {
    p.m_prime()
}

pub fn m_score(p: &ComplexityProfile) -> f64 {
    p.m_score()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn cst(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn cmp(op: CompareOp, l: Expr, r: Expr) -> Comparison {
        Comparison::new(op, l, r)
    }

    /// Pong policy over (x_r, y_r, x_b, y_b) with actions NOP, FIRE, UP, DOWN.
    pub fn pong_policy() -> Tree {
        Tree::condition(
            cmp(CompareOp::Greater, cst(53.9), var(1)),
            Tree::condition(cmp(CompareOp::Less, var(3), var(0)), Tree::Leaf(3), Tree::Leaf(0)),
            Tree::condition(cmp(CompareOp::Greater, cst(87.4), var(3)), Tree::Leaf(2), Tree::Leaf(0)),
        )
    }
}
