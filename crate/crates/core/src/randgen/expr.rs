use std::fmt;

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::check_finite;

/// Divisors with magnitude at or below this are treated as zero.
pub const DIV_GUARD: f64 = 1e-9;
/// Offset inside the protected logarithm.
pub const LOG_GUARD: f64 = 1e-9;
/// Largest exponent passed to `exp`.
pub const EXP_CAP: f64 = 50.0;
/// Every intermediate value is saturated to `[-SATURATION, SATURATION]`.
pub const SATURATION: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Operators that collapse the whole decision vector into one value.
#[derive(Debug, Clone, PartialEq)]
pub enum Reduction {
    Mean,
    Sum,
    Min,
    Max,
    /// `sum_i w_i * x_i`
    Linear(Vec<f64>),
    /// `sum_i w_i * x_i^2`
    Squares(Vec<f64>),
}

/// Node of a random objective expression.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Var(usize),
    Const(f64),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    Reduce(Reduction),
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Neg,
        UnaryOp::Abs,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Square,
    ];

    pub fn apply(self, a: f64) -> f64 {
        let v = match self {
            UnaryOp::Neg => -a,
            UnaryOp::Abs => a.abs(),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.min(EXP_CAP).exp(),
            UnaryOp::Log => (a.abs() + LOG_GUARD).ln(),
            UnaryOp::Sqrt => a.abs().sqrt(),
            UnaryOp::Square => a * a,
        };
        saturate(v)
    }

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Square => "sq",
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b.abs() > DIV_GUARD {
                    a / b
                } else {
                    a
                }
            }
        };
        saturate(v)
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

impl Reduction {
    pub fn apply(&self, x: &[f64]) -> f64 {
        let v = match self {
            Reduction::Mean => x.iter().sum::<f64>() / x.len() as f64,
            Reduction::Sum => x.iter().sum(),
            Reduction::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            Reduction::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Reduction::Linear(w) => w.iter().zip(x).map(|(w, x)| w * x).sum(),
            Reduction::Squares(w) => w.iter().zip(x).map(|(w, x)| w * x * x).sum(),
        };
        saturate(v)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
            Reduction::Min => "min",
            Reduction::Max => "max",
            Reduction::Linear(_) => "lin",
            Reduction::Squares(_) => "sqs",
        }
    }
}

fn saturate(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.clamp(-SATURATION, SATURATION)
    }
}

impl ExprNode {
    /// Number of operator nodes (everything except variables and constants).
    pub fn operator_count(&self) -> usize {
        match self {
            ExprNode::Var(_) | ExprNode::Const(_) => 0,
            ExprNode::Reduce(_) => 1,
            ExprNode::Unary(_, a) => 1 + a.operator_count(),
            ExprNode::Binary(_, a, b) => 1 + a.operator_count() + b.operator_count(),
        }
    }

    /// Checks arity/index invariants against dimensionality `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            ExprNode::Var(i) if *i >= d => Err(Error::InvalidArgument(format!(
                "variable x{i} out of range for d={d}"
            ))),
            ExprNode::Reduce(Reduction::Linear(w) | Reduction::Squares(w)) if w.len() != d => {
                Err(Error::InvalidArgument(format!(
                    "weighted reduction has {} weights for d={d}",
                    w.len()
                )))
            }
            ExprNode::Unary(_, a) => a.validate(d),
            ExprNode::Binary(_, a, b) => {
                a.validate(d)?;
                b.validate(d)
            }
            _ => Ok(()),
        }
    }

    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self {
            ExprNode::Var(i) => x[*i],
            ExprNode::Const(c) => *c,
            ExprNode::Unary(op, a) => op.apply(a.eval_point(x)),
            ExprNode::Binary(op, a, b) => op.apply(a.eval_point(x), b.eval_point(x)),
            ExprNode::Reduce(r) => r.apply(x),
        }
    }

    fn eval_columns(&self, x: &ArrayView2<f64>) -> Vec<f64> {
        match self {
            ExprNode::Var(i) => x.column(*i).to_vec(),
            ExprNode::Const(c) => vec![*c; x.nrows()],
            ExprNode::Unary(op, a) => {
                let mut v = a.eval_columns(x);
                v.iter_mut().for_each(|e| *e = op.apply(*e));
                v
            }
            ExprNode::Binary(op, a, b) => {
                let mut va = a.eval_columns(x);
                let vb = b.eval_columns(x);
                va.iter_mut().zip(vb).for_each(|(l, r)| *l = op.apply(*l, r));
                va
            }
            ExprNode::Reduce(r) => x.rows().into_iter().map(|row| r.apply(&row.to_vec())).collect(),
        }
    }

    /// Evaluates the tree on every row of `x`.
    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let out = self.eval_columns(&x);
        check_finite(&out)?;
        Ok(out)
    }

    /// Collects operator names (for generation statistics).
    pub fn visit_operators(&self, f: &mut impl FnMut(&'static str)) {
        match self {
            ExprNode::Var(_) | ExprNode::Const(_) => {}
            ExprNode::Reduce(r) => f(r.name()),
            ExprNode::Unary(op, a) => {
                f(op.name());
                a.visit_operators(f);
            }
            ExprNode::Binary(op, a, b) => {
                f(op.name());
                a.visit_operators(f);
                b.visit_operators(f);
            }
        }
    }
}

/// Relative sampling weights of the operator pool. Linear, square and
/// additive structure is favoured over the heavy-tailed exp/log operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorWeights {
    pub add: f64,
    pub sub: f64,
    pub mul: f64,
    pub div: f64,
    pub neg: f64,
    pub abs: f64,
    pub sin: f64,
    pub cos: f64,
    pub exp: f64,
    pub log: f64,
    pub sqrt: f64,
    pub square: f64,
    pub mean: f64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
    pub linear: f64,
    pub squares: f64,
    /// Probability that a terminal is a variable rather than a constant.
    pub variable_leaf: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        OperatorWeights {
            add: 3.0,
            sub: 2.0,
            mul: 2.0,
            div: 1.0,
            neg: 0.5,
            abs: 0.5,
            sin: 1.0,
            cos: 1.0,
            exp: 0.3,
            log: 0.3,
            sqrt: 0.5,
            square: 2.5,
            mean: 0.5,
            sum: 0.5,
            min: 0.3,
            max: 0.3,
            linear: 1.5,
            squares: 1.5,
            variable_leaf: 0.75,
        }
    }
}

impl OperatorWeights {
    fn unary(&self) -> [(UnaryOp, f64); 8] {
        [
            (UnaryOp::Neg, self.neg),
            (UnaryOp::Abs, self.abs),
            (UnaryOp::Sin, self.sin),
            (UnaryOp::Cos, self.cos),
            (UnaryOp::Exp, self.exp),
            (UnaryOp::Log, self.log),
            (UnaryOp::Sqrt, self.sqrt),
            (UnaryOp::Square, self.square),
        ]
    }

    fn binary(&self) -> [(BinaryOp, f64); 4] {
        [
            (BinaryOp::Add, self.add),
            (BinaryOp::Sub, self.sub),
            (BinaryOp::Mul, self.mul),
            (BinaryOp::Div, self.div),
        ]
    }

    fn reduction(&self) -> [(u8, f64); 6] {
        [
            (0, self.mean),
            (1, self.sum),
            (2, self.min),
            (3, self.max),
            (4, self.linear),
            (5, self.squares),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .unary()
            .iter()
            .map(|p| p.1)
            .chain(self.binary().iter().map(|p| p.1))
            .chain(self.reduction().iter().map(|p| p.1))
            .collect::<Vec<_>>();
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("operator weights must be finite and >= 0".into()));
        }
        if self.unary().iter().map(|p| p.1).sum::<f64>() + self.binary().iter().map(|p| p.1).sum::<f64>() <= 0.0 {
            return Err(Error::Config("at least one unary or binary operator needs positive weight".into()));
        }
        if !(0.0..=1.0).contains(&self.variable_leaf) {
            return Err(Error::Config("variable_leaf must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn pick<T: Copy>(items: &[(T, f64)], rng: &mut crate::Rng) -> Option<T> {
    let total: f64 = items.iter().map(|p| p.1).sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for &(item, w) in items {
        if u < w {
            return Some(item);
        }
        u -= w;
    }
    items.iter().rev().find(|p| p.1 > 0.0).map(|p| p.0)
}

/// Grows a tree with exactly `budget` operator nodes.
pub(crate) fn grow(budget: usize, d: usize, w: &OperatorWeights, rng: &mut crate::Rng) -> ExprNode {
    if budget == 0 {
        return if rng.random::<f64>() < w.variable_leaf {
            ExprNode::Var(rng.random_range(0..d))
        } else {
            ExprNode::Const(rng.random_range(-5.0..5.0))
        };
    }
    let unary_w: f64 = w.unary().iter().map(|p| p.1).sum();
    let binary_w: f64 = w.binary().iter().map(|p| p.1).sum();
    let reduce_w: f64 = if budget == 1 {
        w.reduction().iter().map(|p| p.1).sum()
    } else {
        0.0
    };
    let class = pick(&[(0u8, unary_w), (1, binary_w), (2, reduce_w)], rng).unwrap_or(1);
    match class {
        0 => {
            let op = pick(&w.unary(), rng).expect("positive unary weight");
            ExprNode::Unary(op, Box::new(grow(budget - 1, d, w, rng)))
        }
        1 => {
            let op = pick(&w.binary(), rng).expect("positive binary weight");
            let left = rng.random_range(0..budget);
            let a = grow(left, d, w, rng);
            let b = grow(budget - 1 - left, d, w, rng);
            ExprNode::Binary(op, Box::new(a), Box::new(b))
        }
        _ => {
            let r = match pick(&w.reduction(), rng).expect("positive reduction weight") {
                0 => Reduction::Mean,
                1 => Reduction::Sum,
                2 => Reduction::Min,
                3 => Reduction::Max,
                4 => Reduction::Linear((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()),
                _ => Reduction::Squares((0..d).map(|_| rng.random_range(0.0..1.0)).collect()),
            };
            ExprNode::Reduce(r)
        }
    }
}

impl fmt::Display for ExprNode {
    /// Prefix notation, e.g. `add x0 sq x1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprNode::Var(i) => write!(f, "x{i}"),
            ExprNode::Const(c) => write!(f, "c:{c:?}"),
            ExprNode::Unary(op, a) => write!(f, "{} {a}", op.name()),
            ExprNode::Binary(op, a, b) => write!(f, "{} {a} {b}", op.name()),
            ExprNode::Reduce(r) => match r {
                Reduction::Linear(w) | Reduction::Squares(w) => {
                    let ws: Vec<String> = w.iter().map(|v| format!("{v:?}")).collect();
                    write!(f, "{}:{}", r.name(), ws.join(","))
                }
                _ => write!(f, "{}", r.name()),
            },
        }
    }
}

impl std::str::FromStr for ExprNode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let node = parse_prefix(&mut tokens)?;
        if let Some(extra) = tokens.next() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("trailing token `{extra}`"),
            });
        }
        Ok(node)
    }
}

fn parse_err(msg: String) -> Error {
    Error::Parse { line: 0, msg }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(format!("bad number `{s}`")))
}

fn parse_prefix<'a>(tokens: &mut impl Iterator<Item = &'a str>) -> Result<ExprNode> {
    let tok = tokens
        .next()
        .ok_or_else(|| parse_err("unexpected end of expression".into()))?;
    if let Some(i) = tok.strip_prefix('x') {
        let i = i
            .parse()
            .map_err(|_| parse_err(format!("bad variable `{tok}`")))?;
        return Ok(ExprNode::Var(i));
    }
    if let Some((head, payload)) = tok.split_once(':') {
        return match head {
            "c" => Ok(ExprNode::Const(parse_f64(payload)?)),
            "lin" | "sqs" => {
                let w = payload
                    .split(',')
                    .map(parse_f64)
                    .collect::<Result<Vec<_>>>()?;
                Ok(ExprNode::Reduce(if head == "lin" {
                    Reduction::Linear(w)
                } else {
                    Reduction::Squares(w)
                }))
            }
            _ => Err(parse_err(format!("unknown token `{tok}`"))),
        };
    }
    if let Some(op) = UnaryOp::ALL.iter().find(|o| o.name() == tok) {
        return Ok(ExprNode::Unary(*op, Box::new(parse_prefix(tokens)?)));
    }
    if let Some(op) = BinaryOp::ALL.iter().find(|o| o.name() == tok) {
        let a = parse_prefix(tokens)?;
        let b = parse_prefix(tokens)?;
        return Ok(ExprNode::Binary(*op, Box::new(a), Box::new(b)));
    }
    let r = match tok {
        "mean" => Reduction::Mean,
        "sum" => Reduction::Sum,
        "min" => Reduction::Min,
        "max" => Reduction::Max,
        _ => return Err(parse_err(format!("unknown token `{tok}`"))),
    };
    Ok(ExprNode::Reduce(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_of_variable() {
        let t = ExprNode::Unary(UnaryOp::Square, Box::new(ExprNode::Var(0)));
        assert_eq!(t.evaluate(array![[2.0]].view()).unwrap(), vec![4.0]);
    }

    #[test]
    fn protected_operators() {
        assert_eq!(BinaryOp::Div.apply(1.0, 0.0), 1.0);
        assert!((UnaryOp::Log.apply(-1.0) - (1.0f64 + 1e-9).ln()).abs() < 1e-15);
        assert!(UnaryOp::Log.apply(-1.0).abs() < 1e-8);
        assert_eq!(UnaryOp::Sqrt.apply(-4.0), 2.0);
        assert_eq!(UnaryOp::Exp.apply(1e6), 50f64.exp());
        assert_eq!(UnaryOp::Log.apply(0.0), (1e-9f64).ln());
    }

    #[test]
    fn mean_reduction() {
        let t = ExprNode::Reduce(Reduction::Mean);
        assert_eq!(t.evaluate(array![[1.0, 3.0]].view()).unwrap(), vec![2.0]);
    }

    #[test]
    fn saturation_prevents_overflow() {
        let mut t = ExprNode::Unary(UnaryOp::Exp, Box::new(ExprNode::Const(100.0)));
        for _ in 0..8 {
            t = ExprNode::Unary(UnaryOp::Square, Box::new(t));
        }
        let t = ExprNode::Binary(BinaryOp::Sub, Box::new(t.clone()), Box::new(t));
        let y = t.evaluate(array![[0.0]].view()).unwrap();
        assert!(y[0].is_finite());
    }

    #[test]
    fn prefix_round_trip() {
        let src = "sub add x0 mul sq x1 c:-1.25 add lin:0.5,-0.25 sin sqs:1.0,0.1";
        let t: ExprNode = src.parse().unwrap();
        assert_eq!(t.to_string(), src);
        assert_eq!(t.operator_count(), 8);
        assert!("add x0".parse::<ExprNode>().is_err());
        assert!("x0 x1".parse::<ExprNode>().is_err());
        assert!("foo".parse::<ExprNode>().is_err());
    }
}
