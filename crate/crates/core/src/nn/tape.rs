//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] consumes the tape and returns the gradient of a scalar
//! node with respect to every node that was recorded with `requires_grad`.

use super::matrix::{affine, Matrix};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp {
    /// Returns one gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, upstream: &Matrix) -> Vec<Matrix>;
}

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Hcat(Var, Var),
    Sum(Var),
    WeightedSum { x: Var, weights: Matrix },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input (parameter, or an action we differentiate against).
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input. No gradient is produced for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `x * w^T + b` where `w` is `out x in` and `b` is `1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.1 != ws.1 || bs != (1, ws.0) {
            return Err(Error::usage(format!(
                "affine shape mismatch: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let value = affine(
            self.value(x),
            self.value(w).as_slice(),
            self.value(b).as_slice(),
            ws.0,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::usage(format!("{what} shape mismatch: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, k), rg)
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, rb) = (self.value(a).rows(), self.value(b).rows());
        if ra != rb {
            return Err(Error::usage(format!("hcat row mismatch: {ra} vs {rb}")));
        }
        let value = self.value(a).hcat(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Hcat(a, b), rg))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Matrix::scalar(s), Op::Sum(x), rg)
    }

    /// `sum(weights ∘ x)`; `weights` is either shaped like `x` or a single
    /// row broadcast over every row of `x`.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix) -> Result<Var> {
        let xv = self.value(x);
        let ok = weights.shape() == xv.shape() || (weights.rows() == 1 && weights.cols() == xv.cols());
        if !ok {
            return Err(Error::usage(format!(
                "weighted_sum shape mismatch: x {:?}, weights {:?}",
                xv.shape(),
                weights.shape()
            )));
        }
        let mut s = 0.0;
        for r in 0..xv.rows() {
            let wr = if weights.rows() == 1 { weights.row(0) } else { weights.row(r) };
            s += xv.row(r).iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Matrix::scalar(s), Op::WeightedSum { x, weights }, rg))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::usage(format!("backward needs a scalar loss, got {shape:?}")));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = std::iter::repeat_with(|| None).take(n).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (out_dim, in_dim) = wv.shape();
                    if self.nodes[w.0].requires_grad {
                        let mut dw = Matrix::zeros(out_dim, in_dim);
                        for r in 0..g.rows() {
                            let xr = xv.row(r);
                            for (o, &go) in g.row(r).iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, &xi) in dw.row_mut(o).iter_mut().zip(xr) {
                                    *d += go * xi;
                                }
                            }
                        }
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = Matrix::zeros(1, out_dim);
                        for r in 0..g.rows() {
                            for (d, &go) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += go;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                    if self.nodes[x.0].requires_grad {
                        let mut dx = Matrix::zeros(xv.rows(), in_dim);
                        for r in 0..g.rows() {
                            let dxr = dx.row_mut(r);
                            for (o, &go) in g.row(r).iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, &wi) in dxr.iter_mut().zip(wv.row(o)) {
                                    *d += go * wi;
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .map(|(&gi, &yi)| gi * (1.0 - yi * yi))
                        .collect();
                    accumulate(&mut grads, *x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Add(a, b) => {
                    accumulate_if(&self, &mut grads, *a, || g.clone());
                    accumulate_if(&self, &mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate_if(&self, &mut grads, *a, || g.clone());
                    accumulate_if(&self, &mut grads, *b, || g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate_if(&self, &mut grads, *a, || hadamard(&g, vb));
                    accumulate_if(&self, &mut grads, *b, || hadamard(&g, va));
                }
                Op::Scale(x, k) => {
                    let k = *k;
                    accumulate(&mut grads, *x, g.map(|v| v * k));
                }
                Op::Hcat(a, b) => {
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    if self.nodes[a.0].requires_grad {
                        let mut ga = Matrix::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut gb = Matrix::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::WeightedSum { x, weights } => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    let s = g.get(0, 0);
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        let wr = if weights.rows() == 1 { weights.row(0) } else { weights.row(i) };
                        for (d, &w) in gx.row_mut(i).iter_mut().zip(wr) {
                            *d = s * w;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let local = op.backward(&values, &node.value, &g);
                    debug_assert_eq!(local.len(), inputs.len());
                    for (v, gv) in inputs.iter().zip(local) {
                        if self.nodes[v.0].requires_grad {
                            debug_assert_eq!(gv.shape(), self.nodes[v.0].value.shape());
                            accumulate(&mut grads, *v, gv);
                        }
                    }
                }
            }
        }

        // Only leaves keep their gradient; interior buffers were consumed above.
        Ok(Gradients { grads })
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_if(tape: &Tape, grads: &mut [Option<Matrix>], v: Var, g: impl FnOnce() -> Matrix) {
    if tape.nodes[v.0].requires_grad {
        accumulate(grads, v, g());
    }
}

/// Gradients of a scalar with respect to the leaves of a consumed tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the leaf does not influence the loss or is a constant.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
