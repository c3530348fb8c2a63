//! Arithmetic expressions over `t` and `x1..xd` used for drifts, potentials
//! and custom Lyapunov functions in configuration files.
//!
//! Grammar (one expression per component, components separated by `;`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | 't' | 'x' k | func '(' expr ')' | 'norm(x)' | '(' expr ')'
//! func    := exp | log | sin | cos | abs | sqrt
//! ```
//!
//! `norm(x)` is the Euclidean norm of the whole state vector.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("expected {expected} drift components, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("{func} of {arg} is outside its domain")]
    Domain { func: &'static str, arg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> Result<f64, ExprError> {
        match self {
            Func::Exp => Ok(v.exp()),
            Func::Log if v > 0.0 => Ok(v.ln()),
            Func::Log => Err(ExprError::Domain {
                func: "log",
                arg: v,
            }),
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Abs => Ok(v.abs()),
            // sqrt(0) = 0 is well defined and shows up in radial drifts.
            Func::Sqrt if v >= 0.0 => Ok(v.sqrt()),
            Func::Sqrt => Err(ExprError::Domain {
                func: "sqrt",
                arg: v,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => pow(a, b),
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    /// Zero-based coordinate index.
    Var(usize),
    Norm,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Neg(_) => NEG_PRECEDENCE,
            Expr::Bin(op, ..) => op.precedence(),
            _ => ATOM_PRECEDENCE,
        }
    }

    /// Tree-walking evaluation.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Var(i) => x[*i],
            Expr::Norm => norm(x),
            Expr::Neg(e) => -e.eval(t, x)?,
            Expr::Bin(op, a, b) => op.apply(a.eval(t, x)?, b.eval(t, x)?),
            Expr::Call(f, e) => f.apply(e.eval(t, x)?)?,
        })
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::Var(_) | Expr::Norm => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.depends_on_time(),
            Expr::Bin(_, a, b) => a.depends_on_time() || b.depends_on_time(),
        }
    }

    pub fn depends_on_state(&self) -> bool {
        match self {
            Expr::Var(_) | Expr::Norm => true,
            Expr::Num(_) | Expr::Time => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.depends_on_state(),
            Expr::Bin(_, a, b) => a.depends_on_state() || b.depends_on_state(),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Time => f.write_str("t"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Norm => f.write_str("norm(x)"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_operand(f, e, e.precedence() < NEG_PRECEDENCE)
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Bin(BinOp::Pow, a, b) => {
                // base must be an atom; the exponent may be any unary
                write_operand(f, a, a.precedence() < ATOM_PRECEDENCE)?;
                f.write_str("^")?;
                write_operand(f, b, b.precedence() < NEG_PRECEDENCE)
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                write_operand(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, b, b.precedence() <= p)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    base: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            offset: self.base + offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.err(
                self.pos,
                format!("expected `{}`, found `{}`", c as char, b as char),
            ),
            None => self.err(
                self.pos,
                format!("expected `{}`, found end of input", c as char),
            ),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        match self.peek() {
            None => self.err(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.identifier(),
            Some(b) => self.err(
                start.max(self.pos),
                format!("unexpected character `{}`", b as char),
            ),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = i;
                Ok(Expr::Num(v))
            }
            Ok(_) => self.err(start, format!("literal `{text}` overflows")),
            Err(_) => self.err(start, format!("malformed number `{text}`")),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let mut i = self.pos;
        while i < self.bytes.len() && self.bytes[i].is_ascii_alphanumeric() {
            i += 1;
        }
        let name = &self.src[start..i];
        self.pos = i;
        if name == "t" {
            return Ok(Expr::Time);
        }
        if name == "norm" {
            self.expect(b'(')?;
            let arg = self.pos;
            match self.peek() {
                Some(b'x') => {
                    self.pos += 1;
                    if self
                        .bytes
                        .get(self.pos)
                        .is_some_and(|c| c.is_ascii_alphanumeric())
                    {
                        return self.err(arg, "norm takes the state vector `x`");
                    }
                }
                _ => return self.err(arg, "norm takes the state vector `x`"),
            }
            self.expect(b')')?;
            return Ok(Expr::Norm);
        }
        if let Some(func) = Func::from_name(name) {
            self.expect(b'(')?;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::Call(func, Box::new(e)));
        }
        if let Some(k) = name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
            if (1..=self.dim).contains(&k) {
                return Ok(Expr::Var(k - 1));
            }
        }
        Err(ExprError::UnknownIdentifier {
            name: name.to_string(),
            offset: self.base + start,
        })
    }
}

/// Parse a single scalar expression in `t` and `x1..x{dim}`.
pub fn parse(source: &str, dim: usize) -> Result<Expr, ExprError> {
    parse_at(source, 0, dim)
}

fn parse_at(source: &str, base: usize, dim: usize) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
        base,
        dim,
    };
    let e = p.expr()?;
    if let Some(b) = p.peek() {
        return p.err(
            p.pos,
            format!("unexpected `{}` after expression", b as char),
        );
    }
    Ok(e)
}

/// Parse `;`-separated components; exactly `dim` are required.
pub fn parse_components(source: &str, dim: usize) -> Result<Vec<Expr>, ExprError> {
    let mut out = Vec::new();
    let mut base = 0;
    for piece in source.split(';') {
        out.push(parse_at(piece, base, dim)?);
        base += piece.len() + 1;
    }
    if out.len() != dim {
        return Err(ExprError::Arity {
            expected: dim,
            found: out.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Time,
    Var(usize),
    Norm,
    Neg,
    Bin(BinOp),
    Call(Func),
}

const STACK: usize = 32;

/// An expression flattened to postfix form for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    code: Vec<Instr>,
    depth: usize,
    tree: Expr,
    time_dependent: bool,
}

impl Compiled {
    pub fn new(tree: Expr) -> Self {
        let mut code = Vec::new();
        let depth = emit(&tree, &mut code);
        let time_dependent = tree.depends_on_time();
        Compiled {
            code,
            depth,
            tree,
            time_dependent,
        }
    }

    pub fn tree(&self) -> &Expr {
        &self.tree
    }

    pub fn depends_on_time(&self) -> bool {
        self.time_dependent
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        if self.depth > STACK {
            return self.tree.eval(t, x);
        }
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        for ins in &self.code {
            match *ins {
                Instr::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Instr::Time => {
                    stack[sp] = t;
                    sp += 1;
                }
                Instr::Var(i) => {
                    stack[sp] = x[i];
                    sp += 1;
                }
                Instr::Norm => {
                    stack[sp] = norm(x);
                    sp += 1;
                }
                Instr::Neg => stack[sp - 1] = -stack[sp - 1],
                Instr::Bin(op) => {
                    sp -= 1;
                    stack[sp - 1] = op.apply(stack[sp - 1], stack[sp]);
                }
                Instr::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1])?,
            }
        }
        Ok(stack[0])
    }
}

// Returns the stack depth needed by `e`.
fn emit(e: &Expr, code: &mut Vec<Instr>) -> usize {
    match e {
        Expr::Num(v) => {
            code.push(Instr::Const(*v));
            1
        }
        Expr::Time => {
            code.push(Instr::Time);
            1
        }
        Expr::Var(i) => {
            code.push(Instr::Var(*i));
            1
        }
        Expr::Norm => {
            code.push(Instr::Norm);
            1
        }
        Expr::Neg(a) => {
            let d = emit(a, code);
            code.push(Instr::Neg);
            d
        }
        Expr::Call(f, a) => {
            let d = emit(a, code);
            code.push(Instr::Call(*f));
            d
        }
        Expr::Bin(op, a, b) => {
            let da = emit(a, code);
            let db = emit(b, code);
            code.push(Instr::Bin(*op));
            da.max(db + 1)
        }
    }
}

/// A compiled vector field, one expression per coordinate.
#[derive(Debug, Clone)]
pub struct VectorExpr {
    components: Vec<Compiled>,
    source: String,
}

impl VectorExpr {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        let components = parse_components(source, dim)?
            .into_iter()
            .map(Compiled::new)
            .collect();
        Ok(VectorExpr {
            components,
            source: source.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn depends_on_time(&self) -> bool {
        self.components.iter().any(Compiled::depends_on_time)
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(t, x)?;
        }
        Ok(())
    }

    pub fn pretty(&self) -> String {
        self.components
            .iter()
            .map(|c| c.tree().to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval1(src: &str, t: f64, x: &[f64]) -> f64 {
        Compiled::new(parse(src, x.len()).unwrap())
            .eval(t, x)
            .unwrap()
    }

    #[test]
    fn negation() {
        assert_eq!(eval1("-x1", 0.0, &[2.5]), -2.5);
    }

    #[test]
    fn cubic_through_norm() {
        assert_eq!(eval1("-x1*norm(x)^2", 0.0, &[2.0]), -8.0);
    }

    #[test]
    fn time_dependent_components() {
        let v = VectorExpr::parse("-(1+sin(t))*x1; -(1+sin(t))*x2", 2).unwrap();
        let mut out = [0.0; 2];
        v.eval_into(0.0, &[1.0, 2.0], &mut out).unwrap();
        assert_eq!(out, [-1.0, -2.0]);
        assert!(v.depends_on_time());
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval1("2^3^2", 0.0, &[0.0]), 512.0);
        assert_eq!(eval1("-2^2", 0.0, &[0.0]), -4.0);
        assert_eq!(eval1("8/4/2", 0.0, &[0.0]), 1.0);
        assert_eq!(eval1("1-2-3", 0.0, &[0.0]), -4.0);
        assert_eq!(eval1("2*3+4*5", 0.0, &[0.0]), 26.0);
        assert_eq!(eval1("2^-1", 0.0, &[0.0]), 0.5);
        assert_eq!(eval1("1.5e2 + 2E-1", 0.0, &[0.0]), 150.2);
    }

    #[test]
    fn syntax_error_reports_offset() {
        match parse("x1 + * 2", 1) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match parse_components("-x1; x2 +", 2) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("(x1", 1),
            Err(ExprError::Syntax { offset: 3, .. })
        ));
    }

    #[test]
    fn arity_and_identifiers() {
        assert_eq!(
            parse_components("-x1", 2),
            Err(ExprError::Arity {
                expected: 2,
                found: 1
            })
        );
        assert!(matches!(
            parse("x3", 2),
            Err(ExprError::UnknownIdentifier { ref name, offset: 0 }) if name == "x3"
        ));
        assert!(matches!(
            parse("1 + tan(x1)", 1),
            Err(ExprError::UnknownIdentifier { offset: 4, .. })
        ));
    }

    #[test]
    fn domain_errors_at_call_time() {
        let c = Compiled::new(parse("log(x1)", 1).unwrap());
        assert!(matches!(
            c.eval(0.0, &[0.0]),
            Err(ExprError::Domain { func: "log", .. })
        ));
        let c = Compiled::new(parse("sqrt(x1)", 1).unwrap());
        assert!(matches!(
            c.eval(0.0, &[-1.0]),
            Err(ExprError::Domain { func: "sqrt", .. })
        ));
        assert_eq!(c.eval(0.0, &[0.0]), Ok(0.0));
    }

    #[test]
    fn deep_expressions_fall_back_to_tree_walk() {
        let src = (0..40).fold("x1".to_string(), |acc, _| format!("1 + ({acc})*1"));
        let right_heavy = (0..40).fold("x1".to_string(), |acc, _| format!("x1 + ({acc})"));
        assert_eq!(eval1(&src, 0.0, &[2.0]), 42.0);
        assert_eq!(eval1(&right_heavy, 0.0, &[1.0]), 41.0);
    }

    #[test]
    fn pretty_printing_inserts_needed_parentheses() {
        let e = parse("-(1+sin(t))*x1", 1).unwrap();
        assert_eq!(e.to_string(), "-(1 + sin(t)) * x1");
        let e = parse("(2^3)^2 - (x1 - 1)", 1).unwrap();
        assert_eq!(e.to_string(), "(2^3)^2 - (x1 - 1)");
    }

    fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            Just(Expr::Time),
            (0..dim).prop_map(Expr::Var),
            Just(Expr::Norm),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            let op = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow),
            ];
            let func = prop_oneof![
                Just(Func::Exp),
                Just(Func::Log),
                Just(Func::Sin),
                Just(Func::Cos),
                Just(Func::Abs),
                Just(Func::Sqrt),
            ];
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(
                    o,
                    Box::new(a),
                    Box::new(b)
                )),
                (func, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_print_is_a_fixed_point(e in arb_expr(3)) {
            let once = e.to_string();
            let reparsed = parse(&once, 3).unwrap();
            prop_assert_eq!(reparsed.to_string(), once);
        }

        #[test]
        fn printing_preserves_structure(e in arb_expr(2)) {
            prop_assert_eq!(parse(&e.to_string(), 2).unwrap(), e);
        }

        #[test]
        fn compiled_matches_tree(e in arb_expr(2), t in -2.0f64..2.0, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
            let x = [x0, x1];
            let c = Compiled::new(e.clone());
            match (e.eval(t, &x), c.eval(t, &x)) {
                (Ok(a), Ok(b)) => prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())),
                (Err(a), Err(b)) => prop_assert_eq!(format!("{a:?}"), format!("{b:?}")),
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }
}
