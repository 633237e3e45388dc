//! Infix text and Graphviz DOT output.

use std::fmt::Write as _;

use super::{Comparison, Expr, Tree};

/// Display names for variables and actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Names {
    pub variables: Vec<String>,
    pub actions: Vec<String>,
}

impl Names {
    pub fn new<V: Into<String>, A: Into<String>>(
        variables: impl IntoIterator<Item = V>,
        actions: impl IntoIterator<Item = A>,
    ) -> Self {
        Self {
            variables: variables.into_iter().map(Into::into).collect(),
            actions: actions.into_iter().map(Into::into).collect(),
        }
    }

    /// `x_1, y_1, …, x_k, y_k` for `k` located entities.
    pub fn entities<A: Into<String>>(k: usize, actions: impl IntoIterator<Item = A>) -> Self {
        let variables = (1..=k).flat_map(|i| [format!("x_{i}"), format!("y_{i}")]);
        Self::new(variables, actions)
    }

    fn variable(&self, i: usize) -> String {
        self.variables
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("v{i}"))
    }

    fn action(&self, a: usize) -> String {
        self.actions
            .get(a)
            .cloned()
            .unwrap_or_else(|| format!("A{a}"))
    }
}

fn expr_text(e: &Expr, names: &Names, top: bool, out: &mut String) {
    match e {
        Expr::Const(c) => {
            let _ = write!(out, "{c}");
        }
        Expr::Var(i) => out.push_str(&names.variable(*i)),
        Expr::Arith { op, left, right } => {
            if !top {
                out.push('(');
            }
            expr_text(left, names, false, out);
            let _ = write!(out, " {} ", op.symbol());
            expr_text(right, names, false, out);
            if !top {
                out.push(')');
            }
        }
    }
}

fn comparison_text(c: &Comparison, names: &Names) -> String {
    let mut s = String::new();
    expr_text(&c.left, names, true, &mut s);
    let _ = write!(s, " {} ", c.op.symbol());
    expr_text(&c.right, names, true, &mut s);
    s
}

/// A condition whose branches are both leaves prints on one line:
/// `if y_p < y_o then PUNCH else UP`. Deeper trees use indented blocks.
pub fn render_text(tree: &Tree, names: &Names) -> String {
    let mut out = String::new();
    text(tree, names, 0, &mut out);
    out
}

fn text(tree: &Tree, names: &Names, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match tree {
        Tree::Leaf(a) => {
            let _ = write!(out, "{pad}{}", names.action(*a));
        }
        Tree::Condition {
            test,
            if_true,
            if_false,
        } => {
            let cond = comparison_text(test, names);
            if let (Tree::Leaf(a), Tree::Leaf(b)) = (&**if_true, &**if_false) {
                let _ = write!(
                    out,
                    "{pad}if {cond} then {} else {}",
                    names.action(*a),
                    names.action(*b)
                );
                return;
            }
            let _ = writeln!(out, "{pad}if {cond} then");
            text(if_true, names, indent + 1, out);
            let _ = writeln!(out);
            let _ = writeln!(out, "{pad}else");
            text(if_false, names, indent + 1, out);
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Condition nodes are boxes, leaves are ellipses; edges are labelled
/// `true` / `false`. Node ids follow pre-order.
pub fn render_dot(tree: &Tree, names: &Names) -> String {
    let mut out = String::from("digraph tree {\n  node [fontname=\"monospace\"];\n");
    let mut next = 0;
    dot(tree, names, &mut next, &mut out);
    out.push_str("}\n");
    out
}

fn dot(tree: &Tree, names: &Names, next: &mut usize, out: &mut String) -> usize {
    let id = *next;
    *next += 1;
    match tree {
        Tree::Leaf(a) => {
            let _ = writeln!(
                out,
                "  n{id} [shape=ellipse, label=\"{}\"];",
                escape(&names.action(*a))
            );
        }
        Tree::Condition {
            test,
            if_true,
            if_false,
        } => {
            let _ = writeln!(
                out,
                "  n{id} [shape=box, label=\"{}\"];",
                escape(&comparison_text(test, names))
            );
            let t = dot(if_true, names, next, out);
            let _ = writeln!(out, "  n{id} -> n{t} [label=\"true\"];");
            let f = dot(if_false, names, next, out);
            let _ = writeln!(out, "  n{id} -> n{f} [label=\"false\"];");
        }
    }
    id
}
