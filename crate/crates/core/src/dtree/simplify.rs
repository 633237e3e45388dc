//! Removal of conditions whose outcome is fixed over a coordinate domain.

use serde::{Deserialize, Serialize};

use super::{ArithOp, CompareOp, Comparison, Expr, Tree, PROTECTED_DIV_EPS};

/// Inclusive integer range of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRange {
    pub lo: i64,
    pub hi: i64,
}

impl VariableRange {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    fn size(&self) -> u64 {
        (self.hi - self.lo).unsigned_abs() + 1
    }
}

/// Largest number of lattice points scanned per comparison.
const LATTICE_BUDGET: u64 = 1_000_000;

/// Replaces every condition that takes the same branch on all scanned points
/// of `domain` by that branch. Small domains are scanned exhaustively; larger
/// ones on an evenly spaced lattice, with interval confirmation when both
/// sides are affine. Variables outside `domain` are held at 0.
pub fn simplify(tree: &Tree, domain: &[VariableRange]) -> Tree {
    match tree {
        Tree::Leaf(a) => Tree::Leaf(*a),
        Tree::Condition {
            test,
            if_true,
            if_false,
        } => match constant_outcome(test, domain) {
            Some(true) => simplify(if_true, domain),
            Some(false) => simplify(if_false, domain),
            None => Tree::condition(
                test.clone(),
                simplify(if_true, domain),
                simplify(if_false, domain),
            ),
        },
    }
}

fn range_of(domain: &[VariableRange], i: usize) -> VariableRange {
    domain.get(i).copied().unwrap_or(VariableRange::new(0, 0))
}

fn constant_outcome(test: &Comparison, domain: &[VariableRange]) -> Option<bool> {
    let vars = test.variables();
    let arity = domain.len().max(vars.iter().map(|v| v + 1).max().unwrap_or(0));
    let mut x: Vec<f64> = (0..arity).map(|i| range_of(domain, i).lo as f64).collect();
    let ranges: Vec<VariableRange> = vars.iter().map(|&v| range_of(domain, v)).collect();

    let total = ranges
        .iter()
        .try_fold(1u64, |acc, r| acc.checked_mul(r.size()))
        .unwrap_or(u64::MAX);
    let exhaustive = total <= LATTICE_BUDGET;
    let axes: Vec<Vec<i64>> = if exhaustive {
        ranges.iter().map(|r| (r.lo.min(r.hi)..=r.hi.max(r.lo)).collect()).collect()
    } else {
        let per_axis = (LATTICE_BUDGET as f64).powf(1.0 / vars.len() as f64).floor().max(2.0) as u64;
        ranges.iter().map(|r| axis(*r, per_axis)).collect()
    };

    let mut idx = vec![0usize; vars.len()];
    let mut first: Option<bool> = None;
    loop {
        for (k, &v) in vars.iter().enumerate() {
            x[v] = axes[k][idx[k]] as f64;
        }
        let outcome = test.holds(&x);
        match first {
            None => first = Some(outcome),
            Some(f) if f != outcome => return None,
            _ => {}
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == vars.len() {
                let outcome = first?;
                if exhaustive {
                    return Some(outcome);
                }
                return confirm(test, domain, outcome);
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `n` evenly spaced integers covering both ends of `r`.
fn axis(r: VariableRange, n: u64) -> Vec<i64> {
    let (lo, hi) = (r.lo.min(r.hi), r.hi.max(r.lo));
    let n = n.min(r.size()).max(1);
    if n == 1 {
        return vec![lo];
    }
    let mut v: Vec<i64> = (0..n)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (n - 1) as f64).round() as i64)
        .collect();
    v.dedup();
    v
}

/// Lattice-only verdicts are kept for non-affine comparisons; affine ones
/// must also be confirmed by interval bounds over the whole box.
fn confirm(test: &Comparison, domain: &[VariableRange], outcome: bool) -> Option<bool> {
    if !(is_affine(&test.left) && is_affine(&test.right)) {
        return Some(outcome);
    }
    let (llo, lhi) = interval(&test.left, domain);
    let (rlo, rhi) = interval(&test.right, domain);
    let (dlo, dhi) = (llo - rhi, lhi - rlo);
    let proven = match (test.op, outcome) {
        (CompareOp::Less, true) => dhi < 0.0,
        (CompareOp::Less, false) => dlo >= 0.0,
        (CompareOp::Greater, true) => dlo > 0.0,
        (CompareOp::Greater, false) => dhi <= 0.0,
        (CompareOp::Equal, true) => dlo == 0.0 && dhi == 0.0,
        (CompareOp::Equal, false) => dlo > 0.0 || dhi < 0.0,
    };
    proven.then_some(outcome)
}

fn is_affine(e: &Expr) -> bool {
    match e {
        Expr::Const(_) | Expr::Var(_) => true,
        Expr::Arith { op, left, right } => match op {
            ArithOp::Add | ArithOp::Sub => is_affine(left) && is_affine(right),
            ArithOp::Mul => {
                (!left.has_variables() && is_affine(right)) || (!right.has_variables() && is_affine(left))
            }
            ArithOp::Div => !right.has_variables() && is_affine(left),
        },
    }
}

/// Bounds of an affine expression over the box `domain`.
fn interval(e: &Expr, domain: &[VariableRange]) -> (f64, f64) {
    match e {
        Expr::Const(c) => (*c, *c),
        Expr::Var(i) => {
            let r = range_of(domain, *i);
            (r.lo.min(r.hi) as f64, r.hi.max(r.lo) as f64)
        }
        Expr::Arith { op, left, right } => {
            let (a, b) = interval(left, domain);
            let (c, d) = interval(right, domain);
            match op {
                ArithOp::Add => (a + c, b + d),
                ArithOp::Sub => (a - d, b - c),
                ArithOp::Mul => {
                    let p = [a * c, a * d, b * c, b * d];
                    (
                        p.iter().copied().fold(f64::INFINITY, f64::min),
                        p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    )
                }
                ArithOp::Div => {
                    // Affine: the denominator is a constant.
                    if c.abs() < PROTECTED_DIV_EPS {
                        (1.0, 1.0)
                    } else {
                        let (p, q) = (a / c, b / c);
                        (p.min(q), p.max(q))
                    }
                }
            }
        }
    }
}
