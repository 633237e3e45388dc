//! Whitespace-separated prefix encoding, e.g.
//! `if lt var:1 const:53.9 leaf:3 leaf:0`.

use super::{ArithOp, CompareOp, Comparison, Expr, Tree};
use crate::error::{Error, Result};

pub fn to_prefix(tree: &Tree) -> String {
    let mut out = String::new();
    write_tree(tree, &mut out);
    out
}

fn push(out: &mut String, tok: &str) {
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(tok);
}

fn write_tree(tree: &Tree, out: &mut String) {
    match tree {
        Tree::Leaf(a) => push(out, &format!("leaf:{a}")),
        Tree::Condition {
            test,
            if_true,
            if_false,
        } => {
            push(out, "if");
            push(out, compare_token(test.op));
            write_expr(&test.left, out);
            write_expr(&test.right, out);
            write_tree(if_true, out);
            write_tree(if_false, out);
        }
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        // `{:?}` prints the shortest string that parses back to the same bits.
        Expr::Const(c) => push(out, &format!("const:{c:?}")),
        Expr::Var(i) => push(out, &format!("var:{i}")),
        Expr::Arith { op, left, right } => {
            push(out, arith_token(*op));
            write_expr(left, out);
            write_expr(right, out);
        }
    }
}

fn compare_token(op: CompareOp) -> &'static str {
    match op {
        CompareOp::Less => "lt",
        CompareOp::Equal => "eq",
        CompareOp::Greater => "gt",
    }
}

fn arith_token(op: ArithOp) -> &'static str {
    match op {
        ArithOp::Add => "add",
        ArithOp::Sub => "sub",
        ArithOp::Mul => "mul",
        ArithOp::Div => "div",
    }
}

pub fn from_prefix(text: &str) -> Result<Tree> {
    let mut tokens = text.split_whitespace();
    let tree = read_tree(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(Error::Parse(format!("unexpected trailing token `{extra}`")));
    }
    Ok(tree)
}

fn next<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<&'a str> {
    tokens
        .next()
        .ok_or_else(|| Error::Parse("unexpected end of tree".into()))
}

fn read_tree<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Tree> {
    let tok = next(tokens)?;
    if let Some(a) = tok.strip_prefix("leaf:") {
        let a = a
            .parse()
            .map_err(|_| Error::Parse(format!("bad leaf action `{tok}`")))?;
        return Ok(Tree::Leaf(a));
    }
    if tok != "if" {
        return Err(Error::Parse(format!("expected `if` or a leaf, got `{tok}`")));
    }
    let op = match next(tokens)? {
        "lt" => CompareOp::Less,
        "eq" => CompareOp::Equal,
        "gt" => CompareOp::Greater,
        other => return Err(Error::Parse(format!("unknown comparison `{other}`"))),
    };
    let left = read_expr(tokens)?;
    let right = read_expr(tokens)?;
    let if_true = read_tree(tokens)?;
    let if_false = read_tree(tokens)?;
    Ok(Tree::condition(Comparison::new(op, left, right), if_true, if_false))
}

fn read_expr<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<Expr> {
    let tok = next(tokens)?;
    if let Some(c) = tok.strip_prefix("const:") {
        let c: f64 = c
            .parse()
            .map_err(|_| Error::Parse(format!("bad constant `{tok}`")))?;
        return Ok(Expr::Const(c));
    }
    if let Some(i) = tok.strip_prefix("var:") {
        let i = i
            .parse()
            .map_err(|_| Error::Parse(format!("bad variable `{tok}`")))?;
        return Ok(Expr::Var(i));
    }
    let op = match tok {
        "add" => ArithOp::Add,
        "sub" => ArithOp::Sub,
        "mul" => ArithOp::Mul,
        "div" => ArithOp::Div,
        other => return Err(Error::Parse(format!("unknown expression token `{other}`"))),
    };
    let left = read_expr(tokens)?;
    let right = read_expr(tokens)?;
    Ok(Expr::arith(op, left, right))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn pong_policy_round_trip() {
        let t = pong_policy();
        let s = to_prefix(&t);
        assert_eq!(
            s,
            "if gt const:53.9 var:1 if lt var:3 var:0 leaf:3 leaf:0 if gt const:87.4 var:3 leaf:2 leaf:0"
        );
        assert_eq!(from_prefix(&s).unwrap(), t);
    }

    #[test]
    fn awkward_constants_round_trip() {
        for c in [0.1 + 0.2, -1e-300, 1.0 / 3.0, 95.99999999999999, -0.0] {
            let t = Tree::condition(
                cmp(CompareOp::Equal, Expr::arith(ArithOp::Div, var(0), cst(c)), cst(c)),
                Tree::Leaf(1),
                Tree::Leaf(0),
            );
            let back = from_prefix(&to_prefix(&t)).unwrap();
            assert_eq!(to_prefix(&back), to_prefix(&t));
            if let Tree::Condition { test, .. } = back {
                assert_eq!(test.right, Expr::Const(c));
                if let Expr::Const(b) = test.right {
                    assert_eq!(b.to_bits(), c.to_bits());
                }
            }
        }
    }

    #[test]
    fn malformed_input() {
        for bad in ["", "if", "if lt var:0", "leaf:x", "leaf:1 leaf:2", "if ne var:0 var:1 leaf:0 leaf:1", "if lt pow var:0 leaf:0 leaf:1"] {
            assert!(from_prefix(bad).is_err(), "{bad}");
        }
    }
}
