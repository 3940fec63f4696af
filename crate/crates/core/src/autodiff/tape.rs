use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::real::{abs_slope, max_c_slope, Real};
use super::AdError;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddC(u32, f64),
    MulC(u32, f64),
    DivC(u32, f64),
    /// `c / a`
    CDiv(f64, u32),
    /// `c - a`
    CSub(f64, u32),
    Tanh(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Sin(u32),
    Cos(u32),
    Powf(u32, f64),
    MaxC(u32, f64),
    Abs(u32),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    value: f64,
}

/// Reverse-mode tape (Wengert list).
///
/// Nodes are appended in evaluation order, so a reverse sweep over the node
/// vector is a reverse topological order. Leaves registered through
/// [`Tape::param`] carry a slot in the flat parameter vector.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    slots: RefCell<Vec<(u32, usize)>>,
}

/// A scalar recorded on a [`Tape`]. Constants carry no tape and cost nothing.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{} = {})", self.idx, self.val),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            slots: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every node. Variables created before the call must not be used
    /// afterwards.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.slots.borrow_mut().clear();
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Op::Leaf, value);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    /// A leaf bound to slot `slot` of the flat parameter vector.
    pub fn param(&self, slot: usize, value: f64) -> Var<'_> {
        let v = self.var(value);
        self.slots.borrow_mut().push((v.idx, slot));
        v
    }

    /// Record every entry of `params` as a parameter leaf.
    pub fn params(&self, params: &[f64]) -> Vec<Var<'_>> {
        params
            .iter()
            .enumerate()
            .map(|(i, &p)| self.param(i, p))
            .collect()
    }

    #[inline]
    fn push(&self, op: Op, value: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { op, value });
        idx
    }

    /// Recorded primal values, in node order.
    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    /// Re-run the recorded operations. Parameter leaves take their value from
    /// `params` when given; other leaves keep their recorded value.
    pub fn replay(&self, params: Option<&[f64]>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut vals: Vec<f64> = nodes.iter().map(|n| n.value).collect();
        if let Some(p) = params {
            for &(node, slot) in self.slots.borrow().iter() {
                vals[node as usize] = p[slot];
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            let v = |j: u32| vals[j as usize];
            let y = match n.op {
                Op::Leaf => continue,
                Op::Add(a, b) => v(a) + v(b),
                Op::Sub(a, b) => v(a) - v(b),
                Op::Mul(a, b) => v(a) * v(b),
                Op::Div(a, b) => v(a) / v(b),
                Op::Neg(a) => -v(a),
                Op::AddC(a, c) => v(a) + c,
                Op::MulC(a, c) => v(a) * c,
                Op::DivC(a, c) => v(a) / c,
                Op::CDiv(c, a) => c / v(a),
                Op::CSub(c, a) => c - v(a),
                Op::Tanh(a) => v(a).tanh(),
                Op::Exp(a) => v(a).exp(),
                Op::Ln(a) => v(a).ln(),
                Op::Sqrt(a) => v(a).sqrt(),
                Op::Sin(a) => v(a).sin(),
                Op::Cos(a) => v(a).cos(),
                Op::Powf(a, p) => v(a).powf(p),
                Op::MaxC(a, c) => Real::max_c(v(a), c),
                Op::Abs(a) => v(a).abs(),
            };
            vals[i] = y;
        }
        vals
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Adjoints {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if output.tape.is_none() {
            return Adjoints { adj };
        }
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let n = nodes[i];
            let val = |j: u32| nodes[j as usize].value;
            match n.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * val(b);
                    adj[b as usize] += g * val(a);
                }
                Op::Div(a, b) => {
                    let vb = val(b);
                    adj[a as usize] += g / vb;
                    adj[b as usize] -= g * n.value / vb;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::AddC(a, _) => adj[a as usize] += g,
                Op::MulC(a, c) => adj[a as usize] += g * c,
                Op::DivC(a, c) => adj[a as usize] += g / c,
                Op::CDiv(_, a) => adj[a as usize] -= g * n.value / val(a),
                Op::CSub(_, a) => adj[a as usize] -= g,
                Op::Tanh(a) => adj[a as usize] += g * (1.0 - n.value * n.value),
                Op::Exp(a) => adj[a as usize] += g * n.value,
                Op::Ln(a) => adj[a as usize] += g / val(a),
                Op::Sqrt(a) => adj[a as usize] += g * 0.5 / n.value,
                Op::Sin(a) => adj[a as usize] += g * val(a).cos(),
                Op::Cos(a) => adj[a as usize] -= g * val(a).sin(),
                Op::Powf(a, p) => adj[a as usize] += g * p * val(a).powf(p - 1.0),
                Op::MaxC(a, c) => adj[a as usize] += g * max_c_slope(val(a), c),
                Op::Abs(a) => adj[a as usize] += g * abs_slope(val(a)),
            }
        }
        Adjoints { adj }
    }

    /// Gradient of `output` with respect to the registered parameter slots.
    pub fn param_gradient(&self, output: Var<'_>, n_params: usize) -> Vec<f64> {
        let adj = self.gradient(output);
        let mut g = vec![0.0; n_params];
        for &(node, slot) in self.slots.borrow().iter() {
            g[slot] += adj.adj[node as usize];
        }
        g
    }
}

/// Adjoint values produced by a reverse sweep.
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    /// Adjoint of `v`; constants have adjoint 0.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.adj[v.idx as usize],
            None => 0.0,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adj
    }
}

impl<'t> Var<'t> {
    #[inline]
    fn unary(self, op: impl FnOnce(u32) -> Op, value: f64) -> Self {
        match self.tape {
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(op(self.idx), value),
                val: value,
            },
            None => Var::constant(value),
        }
    }

    #[inline]
    pub fn constant(v: f64) -> Self {
        Var {
            tape: None,
            idx: 0,
            val: v,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let v = self.val + o.val;
        match (self.tape, o.tape) {
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Op::Add(self.idx, o.idx), v),
                val: v,
            },
            (Some(_), None) => self.unary(|a| Op::AddC(a, o.val), v),
            (None, Some(_)) => o.unary(|a| Op::AddC(a, self.val), v),
            (None, None) => Var::constant(v),
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let v = self.val - o.val;
        match (self.tape, o.tape) {
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Op::Sub(self.idx, o.idx), v),
                val: v,
            },
            (Some(_), None) => self.unary(|a| Op::AddC(a, -o.val), v),
            (None, Some(_)) => o.unary(|a| Op::CSub(self.val, a), v),
            (None, None) => Var::constant(v),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let v = self.val * o.val;
        match (self.tape, o.tape) {
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Op::Mul(self.idx, o.idx), v),
                val: v,
            },
            (Some(_), None) => self.unary(|a| Op::MulC(a, o.val), v),
            (None, Some(_)) => o.unary(|a| Op::MulC(a, self.val), v),
            (None, None) => Var::constant(v),
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let v = self.val / o.val;
        match (self.tape, o.tape) {
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Op::Div(self.idx, o.idx), v),
                val: v,
            },
            (Some(_), None) => self.unary(|a| Op::DivC(a, o.val), v),
            (None, Some(_)) => o.unary(|a| Op::CDiv(self.val, a), v),
            (None, None) => Var::constant(v),
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.val)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        self + Var::constant(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        self - Var::constant(c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self * Var::constant(c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self / Var::constant(c)
    }
}

impl<'t> AddAssign for Var<'t> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<'t> SubAssign for Var<'t> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<'t> MulAssign for Var<'t> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.val
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh, self.val.tanh())
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp, self.val.exp())
    }
    fn ln(self) -> Self {
        self.unary(Op::Ln, self.val.ln())
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt, self.val.sqrt())
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin, self.val.sin())
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos, self.val.cos())
    }
    fn powf(self, p: f64) -> Self {
        self.unary(|a| Op::Powf(a, p), self.val.powf(p))
    }
    fn max_c(self, c: f64) -> Self {
        self.unary(|a| Op::MaxC(a, c), Real::max_c(self.val, c))
    }
    fn abs(self) -> Self {
        self.unary(Op::Abs, self.val.abs())
    }
}

/// A scalar objective written once over any [`Real`], split into named terms.
pub trait ScalarObjective {
    fn terms<R: Real>(&self, params: &[R]) -> Vec<(&'static str, R)>;

    fn eval<R: Real>(&self, params: &[R]) -> R {
        self.terms(params)
            .into_iter()
            .fold(R::zero(), |acc, (_, t)| acc + t)
    }
}

/// Exact reverse-mode gradient of `objective` at `params`.
///
/// A non-finite term aborts with an error naming that term.
pub fn loss_gradient<O: ScalarObjective>(
    objective: &O,
    params: &[f64],
) -> Result<Vec<f64>, AdError> {
    let tape = Tape::new();
    let p = tape.params(params);
    let terms = objective.terms(&p);
    let mut total = Var::constant(0.0);
    for (name, t) in terms {
        if !t.value().is_finite() {
            return Err(AdError::NonFinite {
                term: name.to_string(),
            });
        }
        total += t;
    }
    Ok(tape.param_gradient(total, params.len()))
}

/// Forward-mode directional derivative `<grad objective(params), dir>`.
pub fn directional_derivative<O: ScalarObjective>(
    objective: &O,
    params: &[f64],
    dir: &[f64],
) -> f64 {
    use super::dual::Dual;
    let p: Vec<Dual<f64, 1>> = params
        .iter()
        .zip(dir)
        .map(|(&x, &d)| Dual::with_tangent(x, [d]))
        .collect();
    objective.eval(&p).eps[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_bit_exact() {
        let tape = Tape::new();
        let x = tape.param(0, 0.7);
        let y = tape.param(1, -1.3);
        let z = (x * y).tanh() + (x / y).exp() - y.sqrt().max_c(0.0)
            + (Var::constant(2.0) - x).powf(1.5);
        let _ = z;
        let rec = tape.values();
        let rep = tape.replay(None);
        assert_eq!(rec.len(), rep.len());
        for (a, b) in rec.iter().zip(rep.iter()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn replay_with_new_params_matches_fresh_recording() {
        let f = |t: &Tape, a: f64, b: f64| {
            let x = t.param(0, a);
            let y = t.param(1, b);
            ((x * x + y).sin() * y.exp()).value()
        };
        let tape = Tape::new();
        f(&tape, 0.2, 0.4);
        let replayed = *tape.replay(Some(&[1.1, -0.3])).last().unwrap();
        let fresh = f(&Tape::new(), 1.1, -0.3);
        assert_eq!(replayed.to_bits(), fresh.to_bits());
    }

    #[test]
    fn constants_do_not_touch_the_tape() {
        let tape = Tape::new();
        let c = Var::constant(2.0) * Var::constant(3.0);
        assert_eq!(c.value(), 6.0);
        assert!(tape.is_empty());
    }

    struct Norm2;
    impl ScalarObjective for Norm2 {
        fn terms<R: Real>(&self, p: &[R]) -> Vec<(&'static str, R)> {
            vec![("norm", p.iter().fold(R::zero(), |a, &x| a + x * x))]
        }
    }

    struct Broken;
    impl ScalarObjective for Broken {
        fn terms<R: Real>(&self, p: &[R]) -> Vec<(&'static str, R)> {
            vec![("fine", p[0]), ("pde", p[0].ln())]
        }
    }

    #[test]
    fn norm_gradient_is_twice_params() {
        let p = [0.5, -2.0, 3.25];
        let g = loss_gradient(&Norm2, &p).unwrap();
        for (gi, pi) in g.iter().zip(p) {
            assert_eq!(*gi, 2.0 * pi);
        }
    }

    #[test]
    fn non_finite_term_is_named() {
        let err = loss_gradient(&Broken, &[-1.0]).unwrap_err();
        assert!(err.to_string().contains("pde"));
    }
}
