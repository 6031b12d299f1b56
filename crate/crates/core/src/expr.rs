//! Arithmetic expression language for scenario-supplied formulas.
//!
//! Constraint level sets, metric entries, frame components and force laws are
//! authored as strings like `"y - L*sin(th)"`. This module parses them into a
//! small AST with byte-offset spans, binds identifiers to evaluation slots,
//! evaluates bound expressions, and differentiates the smooth subset
//! symbolically (falling back to finite differences elsewhere).
//!
//! Grammar (standard precedence, `^` binds tightest, then unary minus, then
//! `*` `/`, then `+` `-`; `^` is right-associative, the rest left):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;

/// Byte range of a token or node in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn merge(self, other: Span) -> Span {
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bytes {}..{}", self.start, self.end)
    }
}

/// Expression errors, all carrying source locations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdent { name: String, offset: usize },
    #[error("function `{name}` expects {expected} argument(s), got {got} ({span})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        span: Span,
    },
    #[error("division by zero ({span})")]
    DivisionByZero { span: Span },
    #[error("square root of a negative value ({span})")]
    SqrtNegative { span: Span },
    #[error("non-finite value ({span})")]
    NonFiniteValue { span: Span },
}

type ExprResult<T> = std::result::Result<T, ExprError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

/// Parsed expression node. `V` is the variable representation: `String` for a
/// freshly parsed tree, [`Slot`] after binding.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr<V = String> {
    pub node: Node<V>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<V> {
    Num(f64),
    Var(V),
    Neg(Box<Expr<V>>),
    Binary(BinOp, Box<Expr<V>>, Box<Expr<V>>),
    Call(Func, Vec<Expr<V>>),
}

/// Where a bound identifier reads its value from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// The absolute time coordinate `t`.
    Time,
    /// Spatial coordinate `i` of the chart.
    Coord(usize),
    /// Dotted coordinate `i` (velocity component).
    Dot(usize),
    /// Named scalar supplied per evaluation (law parameters and similar).
    Extra(usize),
}

/// Expression with identifiers resolved; ready for evaluation.
pub type BoundExpr = Expr<Slot>;

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

/// Parse a source string into an AST. Identifiers are left unresolved.
pub fn parse(src: &str) -> ExprResult<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(ExprError::Syntax {
            offset: p.pos,
            msg: format!("unexpected `{}`", p.src[p.pos] as char),
        });
    }
    Ok(expr)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> ExprResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ExprError::Syntax {
                offset: self.pos,
                msg: format!("expected `{}`", c as char),
            })
        }
    }

    fn expr(&mut self) -> ExprResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            self.skip_ws();
            let rhs = self.term()?;
            let span = lhs.span.merge(rhs.span);
            lhs = Expr {
                node: Node::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> ExprResult<Expr> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            self.skip_ws();
            let rhs = self.factor()?;
            let span = lhs.span.merge(rhs.span);
            lhs = Expr {
                node: Node::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    // Unary minus binds looser than `^`: -x^2 is -(x^2), while an exponent may
    // itself be negated: 2^-3 parses because the exponent re-enters factor.
    fn factor(&mut self) -> ExprResult<Expr> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            let start = self.pos;
            self.pos += 1;
            let inner = self.factor()?;
            let span = Span {
                start,
                end: inner.span.end,
            };
            return Ok(Expr {
                node: Node::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> ExprResult<Expr> {
        let base = self.atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let exp = self.factor()?;
            let span = base.span.merge(exp.span);
            return Ok(Expr {
                node: Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)),
                span,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> ExprResult<Expr> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(Expr {
                    node: inner.node,
                    span: Span {
                        start,
                        end: self.pos,
                    },
                })
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident_or_call(),
            Some(c) => Err(ExprError::Syntax {
                offset: self.pos,
                msg: format!("unexpected `{}`", c as char),
            }),
            None => Err(ExprError::Syntax {
                offset: self.pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    fn number(&mut self) -> ExprResult<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // `e` belongs to a following identifier, not this literal
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            msg: format!("invalid number literal `{text}`"),
        })?;
        Ok(Expr {
            node: Node::Num(value),
            span: Span {
                start,
                end: self.pos,
            },
        })
    }

    fn ident_or_call(&mut self) -> ExprResult<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_string();
        let ident_span = Span {
            start,
            end: self.pos,
        };
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let (func, arity) = Func::lookup(&name).ok_or_else(|| ExprError::Syntax {
                offset: start,
                msg: format!("unknown function `{name}`"),
            })?;
            self.pos += 1;
            let mut args = vec![self.expr()?];
            self.skip_ws();
            while self.eat(b',') {
                args.push(self.expr()?);
                self.skip_ws();
            }
            self.expect(b')')?;
            let span = Span {
                start,
                end: self.pos,
            };
            if args.len() != arity {
                return Err(ExprError::Arity {
                    name,
                    expected: arity,
                    got: args.len(),
                    span,
                });
            }
            Ok(Expr {
                node: Node::Call(func, args),
                span,
            })
        } else {
            Ok(Expr {
                node: Node::Var(name),
                span: ident_span,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

/// Identifier resolution table for [`bind`].
///
/// Recognized names, in lookup order: `t`, chart coordinates, dotted
/// coordinates (`<coord>dot`), scenario parameters (inlined as constants),
/// and caller-declared extras.
#[derive(Debug, Clone, Default)]
pub struct BindContext {
    pub coords: Vec<String>,
    pub allow_dots: bool,
    pub params: BTreeMap<String, f64>,
    pub extras: Vec<String>,
}

impl BindContext {
    pub fn new(coords: &[String]) -> Self {
        BindContext {
            coords: coords.to_vec(),
            allow_dots: false,
            params: BTreeMap::new(),
            extras: Vec::new(),
        }
    }

    pub fn with_dots(mut self) -> Self {
        self.allow_dots = true;
        self
    }

    pub fn with_params(mut self, params: &BTreeMap<String, f64>) -> Self {
        self.params = params.clone();
        self
    }

    pub fn with_extras(mut self, extras: &[&str]) -> Self {
        self.extras = extras.iter().map(|s| s.to_string()).collect();
        self
    }

    fn resolve(&self, name: &str, offset: usize) -> ExprResult<Node<Slot>> {
        if name == "t" {
            return Ok(Node::Var(Slot::Time));
        }
        if let Some(i) = self.coords.iter().position(|c| c == name) {
            return Ok(Node::Var(Slot::Coord(i)));
        }
        if self.allow_dots {
            if let Some(stem) = name.strip_suffix("dot") {
                if let Some(i) = self.coords.iter().position(|c| c == stem) {
                    return Ok(Node::Var(Slot::Dot(i)));
                }
            }
        }
        if let Some(v) = self.params.get(name) {
            return Ok(Node::Num(*v));
        }
        if let Some(i) = self.extras.iter().position(|e| e == name) {
            return Ok(Node::Var(Slot::Extra(i)));
        }
        Err(ExprError::UnknownIdent {
            name: name.to_string(),
            offset,
        })
    }
}

/// Resolve every identifier of `expr` against `ctx`.
pub fn bind(expr: &Expr, ctx: &BindContext) -> ExprResult<BoundExpr> {
    let node = match &expr.node {
        Node::Num(v) => Node::Num(*v),
        Node::Var(name) => ctx.resolve(name, expr.span.start)?,
        Node::Neg(e) => Node::Neg(Box::new(bind(e, ctx)?)),
        Node::Binary(op, a, b) => {
            Node::Binary(*op, Box::new(bind(a, ctx)?), Box::new(bind(b, ctx)?))
        }
        Node::Call(f, args) => Node::Call(
            *f,
            args.iter().map(|a| bind(a, ctx)).collect::<ExprResult<_>>()?,
        ),
    };
    Ok(Expr {
        node,
        span: expr.span,
    })
}

/// Parse and bind in one step.
pub fn compile(src: &str, ctx: &BindContext) -> ExprResult<BoundExpr> {
    bind(&parse(src)?, ctx)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Values backing the slots during one evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalEnv<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub xdot: &'a [f64],
    pub extras: &'a [f64],
}

impl BoundExpr {
    pub fn eval(&self, env: &EvalEnv<'_>) -> ExprResult<f64> {
        let v = match &self.node {
            Node::Num(v) => *v,
            Node::Var(Slot::Time) => env.t,
            Node::Var(Slot::Coord(i)) => env.x[*i],
            Node::Var(Slot::Dot(i)) => env.xdot[*i],
            Node::Var(Slot::Extra(i)) => env.extras[*i],
            Node::Neg(e) => -e.eval(env)?,
            Node::Binary(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::DivisionByZero { span: self.span });
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(f, args) => {
                let a0 = args[0].eval(env)?;
                match f {
                    Func::Sin => a0.sin(),
                    Func::Cos => a0.cos(),
                    Func::Tan => a0.tan(),
                    Func::Sqrt => {
                        if a0 < 0.0 {
                            return Err(ExprError::SqrtNegative { span: self.span });
                        }
                        a0.sqrt()
                    }
                    Func::Abs => a0.abs(),
                    Func::Min => a0.min(args[1].eval(env)?),
                    Func::Max => a0.max(args[1].eval(env)?),
                }
            }
        };
        if v.is_nan() {
            return Err(ExprError::NonFiniteValue { span: self.span });
        }
        Ok(v)
    }

    /// Symbolic partial derivative with respect to `slot`, when the tree is
    /// smooth (`abs`, `min`, `max` and variable exponents return `None`;
    /// callers fall back to finite differences).
    pub fn derivative(&self, slot: Slot) -> Option<BoundExpr> {
        let span = self.span;
        let d = |n: Node<Slot>| Expr { node: n, span };
        Some(match &self.node {
            Node::Num(_) => d(Node::Num(0.0)),
            Node::Var(s) => d(Node::Num(if *s == slot { 1.0 } else { 0.0 })),
            Node::Neg(e) => neg(e.derivative(slot)?),
            Node::Binary(BinOp::Add, a, b) => add(a.derivative(slot)?, b.derivative(slot)?),
            Node::Binary(BinOp::Sub, a, b) => sub(a.derivative(slot)?, b.derivative(slot)?),
            Node::Binary(BinOp::Mul, a, b) => add(
                mul(a.derivative(slot)?, (**b).clone()),
                mul((**a).clone(), b.derivative(slot)?),
            ),
            Node::Binary(BinOp::Div, a, b) => {
                // (a/b)' = (a'·b − a·b') / b²
                let num = sub(
                    mul(a.derivative(slot)?, (**b).clone()),
                    mul((**a).clone(), b.derivative(slot)?),
                );
                let den = mul((**b).clone(), (**b).clone());
                d(Node::Binary(BinOp::Div, Box::new(num), Box::new(den)))
            }
            Node::Binary(BinOp::Pow, a, b) => {
                // only constant exponents: (a^c)' = c·a^(c−1)·a'
                let c = match b.node {
                    Node::Num(c) => c,
                    _ => return None,
                };
                let lowered = d(Node::Binary(
                    BinOp::Pow,
                    Box::new((**a).clone()),
                    Box::new(d(Node::Num(c - 1.0))),
                ));
                mul(mul(d(Node::Num(c)), lowered), a.derivative(slot)?)
            }
            Node::Call(Func::Sin, args) => mul(
                d(Node::Call(Func::Cos, args.clone())),
                args[0].derivative(slot)?,
            ),
            Node::Call(Func::Cos, args) => neg(mul(
                d(Node::Call(Func::Sin, args.clone())),
                args[0].derivative(slot)?,
            )),
            Node::Call(Func::Tan, args) => {
                // tan' = 1/cos²
                let cos = d(Node::Call(Func::Cos, args.clone()));
                let den = mul(cos.clone(), cos);
                let ratio = d(Node::Binary(
                    BinOp::Div,
                    Box::new(args[0].derivative(slot)?),
                    Box::new(den),
                ));
                ratio
            }
            Node::Call(Func::Sqrt, args) => {
                // sqrt' = a' / (2·sqrt(a))
                let den = mul(d(Node::Num(2.0)), d(Node::Call(Func::Sqrt, args.clone())));
                d(Node::Binary(
                    BinOp::Div,
                    Box::new(args[0].derivative(slot)?),
                    Box::new(den),
                ))
            }
            Node::Call(Func::Abs | Func::Min | Func::Max, _) => return None,
        })
    }
}

// Constant-folding constructors keep derivative trees small.
fn is_zero(e: &BoundExpr) -> bool {
    matches!(e.node, Node::Num(v) if v == 0.0)
}

fn is_one(e: &BoundExpr) -> bool {
    matches!(e.node, Node::Num(v) if v == 1.0)
}

fn add(a: BoundExpr, b: BoundExpr) -> BoundExpr {
    if is_zero(&a) {
        return b;
    }
    if is_zero(&b) {
        return a;
    }
    let span = a.span.merge(b.span);
    Expr {
        node: Node::Binary(BinOp::Add, Box::new(a), Box::new(b)),
        span,
    }
}

fn sub(a: BoundExpr, b: BoundExpr) -> BoundExpr {
    if is_zero(&b) {
        return a;
    }
    if is_zero(&a) {
        return neg(b);
    }
    let span = a.span.merge(b.span);
    Expr {
        node: Node::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
        span,
    }
}

fn mul(a: BoundExpr, b: BoundExpr) -> BoundExpr {
    if is_zero(&a) || is_one(&b) {
        return a;
    }
    if is_zero(&b) || is_one(&a) {
        return b;
    }
    let span = a.span.merge(b.span);
    Expr {
        node: Node::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
        span,
    }
}

fn neg(a: BoundExpr) -> BoundExpr {
    if is_zero(&a) {
        return a;
    }
    let span = a.span;
    Expr {
        node: Node::Neg(Box::new(a)),
        span,
    }
}
