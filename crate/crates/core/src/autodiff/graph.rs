use crate::error::{Error, Result};
use crate::tensor::{check_rank2, gemm, MatRef, Tensor};

/// Negative-side slope of [`ElementwiseOp::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

/// Floor applied to the spectral-norm estimate before dividing by it.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Neg,
    Exp,
    Log,
    Square,
    Tanh,
    LeakyRelu,
    Softplus,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(ElementwiseOp, usize, usize),
    Unary(ElementwiseOp, usize),
    Scale(usize, f64),
    Clamp(usize, f64, f64),
    /// `a · b` or, with the flag set, `a · bᵀ`.
    Matmul(usize, usize, bool),
    Reduce(ReduceOp, usize, Option<usize>),
    Concat(usize, usize),
    SpectralNorm {
        w: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
        floored: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
///
/// Nodes are pushed in evaluation order, so inputs always precede their
/// consumers. A graph supports exactly one [`Graph::backward`] call.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant; its gradient is always zero.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A constant copy of `v`'s value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    /// Applies an elementwise op. Binary kinds require `b`; unary kinds reject it.
    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(Error::Contract(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(Error::Contract(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Square, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Tanh, a)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::LeakyRelu, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseOp::Softplus, a)
    }

    fn binary(&mut self, kind: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
            _ => unreachable!("not a binary op"),
        };
        let data = broadcast_apply(ta.data(), tb.data(), shape.iter().product(), f);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Binary(kind, a.0, b.0), rg))
    }

    fn unary(&mut self, kind: ElementwiseOp, a: Var) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let y = match kind {
            ElementwiseOp::Neg => x.map(|v| -v),
            ElementwiseOp::Exp => x.map(f64::exp),
            ElementwiseOp::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::Domain(format!("log of nonpositive value {bad}")));
                }
                x.map(f64::ln)
            }
            ElementwiseOp::Square => x.map(|v| v * v),
            ElementwiseOp::Tanh => x.map(f64::tanh),
            ElementwiseOp::LeakyRelu => x.map(|v| if v > 0.0 { v } else { LEAKY_RELU_SLOPE * v }),
            ElementwiseOp::Softplus => x.map(softplus),
            _ => unreachable!("not a unary op"),
        };
        let rg = self.rg(a.0);
        Ok(self.push(y, Op::Unary(kind, a.0), rg))
    }

    /// `c · a` for a fixed real `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let y = self.nodes[a.0].value.map(|v| c * v);
        let rg = self.rg(a.0);
        Ok(self.push(y, Op::Scale(a.0, c), rg))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Contract(format!("clamp bounds {lo} > {hi}")));
        }
        let y = self.nodes[a.0].value.map(|v| v.clamp(lo, hi));
        let rg = self.rg(a.0);
        Ok(self.push(y, Op::Clamp(a.0, lo, hi), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`, used by linear layers whose weight is stored `out × in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_rank2(ta, "matmul lhs")?;
        check_rank2(tb, "matmul rhs")?;
        let (bk, bn) = if trans_b {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if ta.cols() != bk {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {:?} x {:?}{}",
                ta.shape(),
                tb.shape(),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let m = ta.rows();
        let mut out = vec![0.0; m * bn];
        gemm(
            1.0,
            MatRef::new(ta, false),
            MatRef::new(tb, trans_b),
            0.0,
            &mut out,
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(&[m, bn], out)?, Op::Matmul(a.0, b.0, trans_b), rg))
    }

    /// Sum or mean over one axis, or over everything when `axis` is `None`.
    pub fn reduce(&mut self, kind: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let y = match axis {
            None => {
                let s = x.sum();
                let v = match kind {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean if x.numel() == 0 => 0.0,
                    ReduceOp::Mean => s / x.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                let (outer, len, inner) = axis_split(x.shape(), ax)?;
                let mut out = vec![0.0; outer * inner];
                let src = x.data();
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        let dst = &mut out[o * inner..(o + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                            *d += s;
                        }
                    }
                }
                if kind == ReduceOp::Mean && len > 0 {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut shape = x.shape().to_vec();
                shape.remove(ax);
                Tensor::new(&shape, out)?
            }
        };
        let rg = self.rg(a.0);
        Ok(self.push(y, Op::Reduce(kind, a.0, axis), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, None)
    }

    /// Column-wise concatenation of two rank-2 tensors with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_rank2(ta, "concat lhs")?;
        check_rank2(tb, "concat rhs")?;
        if ta.rows() != tb.rows() {
            return Err(Error::Shape(format!(
                "concat needs equal batch extents: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(&[m, p + q], data)?, Op::Concat(a.0, b.0), rg))
    }

    /// `w / σ̂` with `σ̂ = uᵀ w v` for fixed power-iteration vectors `u`, `v`.
    ///
    /// The gradient flows through `σ̂` as a function of `w`; `u` and `v` are
    /// constants. `σ̂` is floored at [`SIGMA_FLOOR`].
    pub fn spectral_normalize(&mut self, w: Var, u: &Tensor, v: &Tensor) -> Result<Var> {
        let tw = &self.nodes[w.0].value;
        check_rank2(tw, "spectral_normalize weight")?;
        if u.numel() != tw.rows() || v.numel() != tw.cols() {
            return Err(Error::Shape(format!(
                "power-iteration vectors ({}, {}) do not fit weight {:?}",
                u.numel(),
                v.numel(),
                tw.shape()
            )));
        }
        let raw = bilinear(tw, u.data(), v.data());
        let floored = !(raw > SIGMA_FLOOR);
        let sigma = if floored { SIGMA_FLOOR } else { raw };
        let y = tw.map(|x| x / sigma);
        let rg = self.rg(w.0);
        Ok(self.push(
            y,
            Op::SpectralNorm {
                w: w.0,
                u: u.data().to_vec(),
                v: v.data().to_vec(),
                sigma,
                floored,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Every leaf created with [`Graph::param`] gets a gradient of its own
    /// shape; leaves the root does not depend on get zeros. A graph can only
    /// be differentiated once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this graph".to_string(),
            ));
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.consumed = true;

        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let root_shape = self.nodes[root.0].value.shape().to_vec();
        grads[root.0] = Some(Tensor::ones(&root_shape));

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.rg(a) {
                    let local: Vec<f64> = match kind {
                        ElementwiseOp::Add | ElementwiseOp::Sub => g.data().to_vec(),
                        ElementwiseOp::Mul => broadcast_apply(g.data(), vb.data(), g.numel(), |x, y| x * y),
                        _ => unreachable!(),
                    };
                    accumulate_reduced(grads, a, va.shape(), &local);
                }
                if self.rg(b) {
                    let local: Vec<f64> = match kind {
                        ElementwiseOp::Add => g.data().to_vec(),
                        ElementwiseOp::Sub => g.data().iter().map(|x| -x).collect(),
                        ElementwiseOp::Mul => broadcast_apply(g.data(), va.data(), g.numel(), |x, y| x * y),
                        _ => unreachable!(),
                    };
                    accumulate_reduced(grads, b, vb.shape(), &local);
                }
            }
            Op::Unary(kind, a) => {
                let a = *a;
                if !self.rg(a) {
                    return Ok(());
                }
                let x = self.nodes[a].value.data();
                let y = node.value.data();
                let gd = g.data();
                let local: Vec<f64> = match kind {
                    ElementwiseOp::Neg => gd.iter().map(|v| -v).collect(),
                    ElementwiseOp::Exp => zip_map(gd, y, |g, y| g * y),
                    ElementwiseOp::Log => zip_map(gd, x, |g, x| g / x),
                    ElementwiseOp::Square => zip_map(gd, x, |g, x| 2.0 * x * g),
                    ElementwiseOp::Tanh => zip_map(gd, y, |g, y| g * (1.0 - y * y)),
                    ElementwiseOp::LeakyRelu => {
                        zip_map(gd, x, |g, x| if x > 0.0 { g } else { LEAKY_RELU_SLOPE * g })
                    }
                    ElementwiseOp::Softplus => zip_map(gd, x, |g, x| g * sigmoid(x)),
                    _ => unreachable!(),
                };
                accumulate(grads, a, self.nodes[a].value.shape(), &local);
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let local: Vec<f64> = g.data().iter().map(|v| c * v).collect();
                    accumulate(grads, *a, g.shape(), &local);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.rg(*a) {
                    let x = self.nodes[*a].value.data();
                    let local = zip_map(g.data(), x, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 });
                    accumulate(grads, *a, g.shape(), &local);
                }
            }
            Op::Matmul(a, b, trans_b) => {
                let (a, b, trans_b) = (*a, *b, *trans_b);
                let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.rg(a) {
                    // dA = G · op(B)ᵀ
                    let mut da = vec![0.0; ta.numel()];
                    gemm(1.0, MatRef::new(g, false), MatRef::new(tb, !trans_b), 0.0, &mut da);
                    accumulate(grads, a, ta.shape(), &da);
                }
                if self.rg(b) {
                    let mut db = vec![0.0; tb.numel()];
                    if trans_b {
                        // C = A·Bᵀ  ⇒  dB = Gᵀ·A
                        gemm(1.0, MatRef::new(g, true), MatRef::new(ta, false), 0.0, &mut db);
                    } else {
                        // dB = Aᵀ·G
                        gemm(1.0, MatRef::new(ta, true), MatRef::new(g, false), 0.0, &mut db);
                    }
                    accumulate(grads, b, tb.shape(), &db);
                }
            }
            Op::Reduce(kind, a, axis) => {
                let a = *a;
                if !self.rg(a) {
                    return Ok(());
                }
                let shape = self.nodes[a].value.shape();
                let total: usize = shape.iter().product();
                let local = match axis {
                    None => {
                        let scale = match kind {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / total.max(1) as f64,
                        };
                        vec![g.data()[0] * scale; total]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_split(shape, *ax)?;
                        let scale = match kind {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / len.max(1) as f64,
                        };
                        let mut out = vec![0.0; total];
                        let gd = g.data();
                        for o in 0..outer {
                            let src = &gd[o * inner..(o + 1) * inner];
                            for l in 0..len {
                                let base = (o * len + l) * inner;
                                for (d, s) in out[base..base + inner].iter_mut().zip(src) {
                                    *d = s * scale;
                                }
                            }
                        }
                        out
                    }
                };
                accumulate(grads, a, shape, &local);
            }
            Op::Concat(a, b) => {
                let (a, b) = (*a, *b);
                let p = self.nodes[a].value.cols();
                let q = self.nodes[b].value.cols();
                let m = g.rows();
                if self.rg(a) {
                    let mut da = Vec::with_capacity(m * p);
                    for r in 0..m {
                        da.extend_from_slice(&g.row(r)[..p]);
                    }
                    accumulate(grads, a, &[m, p], &da);
                }
                if self.rg(b) {
                    let mut db = Vec::with_capacity(m * q);
                    for r in 0..m {
                        db.extend_from_slice(&g.row(r)[p..]);
                    }
                    accumulate(grads, b, &[m, q], &db);
                }
            }
            Op::SpectralNorm {
                w,
                u,
                v,
                sigma,
                floored,
            } => {
                let w = *w;
                if !self.rg(w) {
                    return Ok(());
                }
                let tw = &self.nodes[w].value;
                let inv = 1.0 / sigma;
                let mut dw: Vec<f64> = g.data().iter().map(|x| x * inv).collect();
                if !floored {
                    // d(W/σ)/dW through σ = uᵀWv contributes −⟨G, W⟩/σ² · u vᵀ.
                    let inner: f64 = g.data().iter().zip(tw.data()).map(|(a, b)| a * b).sum();
                    let coef = inner * inv * inv;
                    let cols = tw.cols();
                    for (r, ur) in u.iter().enumerate() {
                        let row = &mut dw[r * cols..(r + 1) * cols];
                        for (d, vc) in row.iter_mut().zip(v) {
                            *d -= coef * ur * vc;
                        }
                    }
                }
                accumulate(grads, w, tw.shape(), &dw);
            }
        }
        Ok(())
    }
}

/// `uᵀ W v` for a rank-2 `W`.
pub(crate) fn bilinear(w: &Tensor, u: &[f64], v: &[f64]) -> f64 {
    let cols = w.cols();
    u.iter()
        .enumerate()
        .map(|(r, ur)| {
            let row = &w.data()[r * cols..(r + 1) * cols];
            ur * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Shape of `a ∘ b` when one operand repeats over leading axes of the other.
///
/// The smaller operand, with leading unit axes dropped, must match the
/// trailing axes of the larger one. Scalars broadcast everywhere.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    let (big, small) = if na >= nb { (a, b) } else { (b, a) };
    let trimmed: Vec<usize> = small.iter().copied().skip_while(|&d| d == 1).collect();
    if trimmed.len() <= big.len() && big.ends_with(&trimmed) {
        Ok(big.to_vec())
    } else {
        Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// Applies `f` over `n` outputs, cycling the shorter operand.
fn broadcast_apply(a: &[f64], b: &[f64], n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    if a.len() == n && b.len() == n {
        out.extend(a.iter().zip(b).map(|(&x, &y)| f(x, y)));
    } else if a.len() == n {
        for chunk in a.chunks(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
    } else {
        for chunk in b.chunks(a.len()) {
            out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
    }
    out
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, shape: &[usize], local: &[f64]) {
    match &mut grads[idx] {
        Some(acc) => {
            for (d, s) in acc.data_mut().iter_mut().zip(local) {
                *d += s;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape, local.to_vec()).expect("gradient shape"));
        }
    }
}

/// Accumulates a full-size gradient into a possibly broadcast operand.
fn accumulate_reduced(grads: &mut [Option<Tensor>], idx: usize, shape: &[usize], local: &[f64]) {
    let n: usize = shape.iter().product();
    if n == local.len() {
        accumulate(grads, idx, shape, local);
        return;
    }
    let mut reduced = vec![0.0; n];
    for chunk in local.chunks(n.max(1)) {
        for (d, s) in reduced.iter_mut().zip(chunk) {
            *d += s;
        }
    }
    accumulate(grads, idx, shape, &reduced);
}
