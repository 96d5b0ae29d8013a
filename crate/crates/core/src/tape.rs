//! Reverse-mode automatic differentiation over a straight-line tape.
//!
//! Every value produced during a forward pass is appended to the tape together
//! with the op that made it, so the tape is always in topological order and the
//! backward sweep is a single reverse iteration. Leaves are either parameters
//! (gradients wanted) or constants (never differentiated).
//!
//! ```
//! use convlstm_anomaly::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let a = tape.param(Tensor::scalar(3.0));
//! let c = tape.constant(Tensor::scalar(1.0));
//! let loss = tape.mse(a, c).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(a).item(), 4.0); // 2 * (3 - 1)
//! ```

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernels: Var,
        bias: Var,
        cols: Vec<f64>,
        geom: ConvGeometry,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; exactly zero when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

/// `[outer, axis_dim, inner]` factorisation of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is never differentiated (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d_same(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (out, cols, geom) =
            conv::conv2d_forward(self.value(input), self.value(kernels), self.value(bias))?;
        let rg = self.rg(input) || self.rg(kernels) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                kernels,
                bias,
                cols,
                geom,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).tanh();
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::config(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::config(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|v| self.rg(*v));
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(input);
        let shape = src.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::config(format!(
                "slice [{start}, {}) along axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Slice { input, axis, start }, rg))
    }

    /// Scalar mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let e = crate::tensor::mse(self.value(pred), self.value(target))?;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(e), Op::Mse(pred, target), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let keep = matches!(node.op, Op::Leaf);
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if keep {
                grads[idx] = Some(g);
            }
        }

        // Only parameters keep their gradients; intermediates were consumed.
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernels,
                bias,
                cols,
                geom,
            } => {
                let cg = conv::conv2d_backward(g.data(), self.value(*kernels), cols, geom);
                self.accumulate(grads, *input, cg.input);
                self.accumulate(grads, *kernels, cg.kernels);
                self.accumulate(grads, *bias, cg.bias);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.mul(self.value(*b)).expect("mul grad shape");
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.mul(self.value(*a)).expect("mul grad shape");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_with(out, |g, y| g * y * (1.0 - y)).expect("shape");
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_with(out, |g, y| g * (1.0 - y * y)).expect("shape");
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g
                    .zip_with(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                    .expect("shape");
                self.accumulate(grads, *a, ga);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let part = self.value(*v).shape()[*axis];
                    if self.rg(*v) {
                        let mut data = Vec::with_capacity(outer * part * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + part * inner]);
                        }
                        let t = Tensor::new(self.value(*v).shape().to_vec(), data).expect("shape");
                        self.accumulate(grads, *v, t);
                    }
                    offset += part;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.value(*input).shape();
                let (outer, dim, inner) = split_axis(in_shape, *axis);
                let len = out.shape()[*axis];
                let mut full = Tensor::zeros(in_shape.to_vec());
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    full.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *input, full);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let k = 2.0 * g.item() / pv.len() as f64;
                let d = pv.zip_with(tv, |a, b| k * (a - b)).expect("shape");
                if self.rg(*t) {
                    self.accumulate(grads, *t, d.scale(-1.0));
                }
                self.accumulate(grads, *p, d);
            }
        }
    }
}
