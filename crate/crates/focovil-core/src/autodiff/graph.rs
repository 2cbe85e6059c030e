//! Reverse-mode tape.
//!
//! Nodes are appended in topological order (parents always precede
//! children), so backward is a single reverse sweep. Gradient buffers of
//! interior nodes are dropped as soon as they have been distributed to their
//! parents; leaf gradients survive for the caller.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

use super::tensor::Tensor;
use super::EPS_FLOOR;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    DivRows(Var, Var),
    AffineScalar { x: Var, mul: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize, end: usize },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Diag(Var),
    RowNorms(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    L2Norm(Var),
    ClampMin { x: Var, floor: f64 },
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
///
/// Only leaves (and the nodes on the path to them) retain gradients;
/// interior buffers are consumed during the sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Constant copy of an existing node's value: forward identity, no
    /// gradient flow. This is the `stop_grad` primitive.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_all_finite() {
            return Err(Error::NonFiniteValue {
                context: name.into(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
        Error::ShapeMismatch {
            op,
            detail: format!("{a:?} vs {b:?}"),
        }
    }

    /// Matrix product of two rank-2 tensors: (m×k)·(k×n) → (m×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(Self::mismatch("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros([m, n]);
        matmul_into(av.data(), bv.data(), m, k, n, out.data_mut());
        let rg = self.needs_grad(&[a, b]);
        self.push(out, Op::Matmul(a, b), rg, "matmul")
    }

    /// Element-wise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Element-wise difference of two same-shape tensors.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Element-wise quotient of two same-shape tensors. The denominator is
    /// used as-is; callers that need a safe denominator clamp it first.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn zip_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Self::mismatch(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a, b]);
        self.push(out, op, rg, name)
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (mv, bv) = (&self.nodes[m.0].value, &self.nodes[bias.0].value);
        if mv.rank() != 2 || bv.rank() != 1 || mv.cols() != bv.numel() {
            return Err(Self::mismatch("add_bias", mv.shape(), bv.shape()));
        }
        let cols = mv.cols();
        let data = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % cols])
            .collect();
        let out = Tensor::new(mv.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[m, bias]);
        self.push(out, Op::AddBias(m, bias), rg, "add_bias")
    }

    /// Divides every row of a rank-2 tensor by the matching entry of a
    /// rank-1 tensor. Denominators are floored at [`EPS_FLOOR`].
    pub fn div_rows(&mut self, m: Var, denom: Var) -> Result<Var> {
        let (mv, dv) = (&self.nodes[m.0].value, &self.nodes[denom.0].value);
        if mv.rank() != 2 || dv.rank() != 1 || mv.rows() != dv.numel() {
            return Err(Self::mismatch("div_rows", mv.shape(), dv.shape()));
        }
        let cols = mv.cols();
        let data = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x / dv.data()[i / cols].max(EPS_FLOOR))
            .collect();
        let out = Tensor::new(mv.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[m, denom]);
        self.push(out, Op::DivRows(m, denom), rg, "div_rows")
    }

    /// Element-wise `x * mul + add`.
    pub fn affine_scalar(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| v * mul + add).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[x]);
        self.push(out, Op::AffineScalar { x, mul }, rg, "affine_scalar")
    }

    /// Element-wise `x * c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine_scalar(x, c, 0.0)
    }

    /// Element-wise `x + c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine_scalar(x, 1.0, c)
    }

    /// Concatenation along `axis`. Rank-1 tensors concatenate along axis 0;
    /// rank-2 tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidInput {
                reason: "concat of zero tensors".into(),
            });
        }
        let rank = self.nodes[parts[0].0].value.rank();
        if axis >= rank {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} for rank {rank}"),
            });
        }
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != rank {
                return Err(Self::mismatch(
                    "concat",
                    self.nodes[parts[0].0].value.shape(),
                    v.shape(),
                ));
            }
            if rank == 2 {
                let (first, cur) = (&self.nodes[parts[0].0].value, v);
                let same = if axis == 0 {
                    cur.cols() == first.cols()
                } else {
                    cur.rows() == first.rows()
                };
                if !same {
                    return Err(Self::mismatch("concat", first.shape(), cur.shape()));
                }
            }
        }
        let out = if rank == 1 {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.data());
            }
            Tensor::new([data.len()], data)?
        } else if axis == 0 {
            let cols = self.nodes[parts[0].0].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let v = &self.nodes[p.0].value;
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::new([rows, cols], data)?
        } else {
            let rows = self.nodes[parts[0].0].value.rows();
            let total_cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * total_cols);
            for r in 0..rows {
                for p in parts {
                    let v = &self.nodes[p.0].value;
                    let c = v.cols();
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new([rows, total_cols], data)?
        };
        let rg = self.needs_grad(parts);
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// Contiguous slice `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let rank = xv.rank();
        if axis >= rank || start >= end || end > xv.shape()[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("{start}..{end} along axis {axis} of {:?}", xv.shape()),
            });
        }
        let out = if rank == 1 {
            Tensor::new([end - start], xv.data()[start..end].to_vec())?
        } else if axis == 0 {
            let c = xv.cols();
            Tensor::new([end - start, c], xv.data()[start * c..end * c].to_vec())?
        } else {
            let (r, c) = (xv.rows(), xv.cols());
            let mut data = Vec::with_capacity((end - start) * r);
            for row in 0..r {
                data.extend_from_slice(&xv.data()[row * c + start..row * c + end]);
            }
            Tensor::new([r, end - start], data)?
        };
        let rg = self.needs_grad(&[x]);
        self.push(out, Op::Slice { x, axis, start, end }, rg, "slice")
    }

    /// Single element of a rank-2 tensor as a scalar node.
    pub fn at(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let row = self.slice(x, 0, r, r + 1)?;
        self.slice(row, 1, c, c + 1)
    }

    /// Single element of a rank-1 tensor as a scalar node.
    pub fn at1(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice(x, 0, i, i + 1)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 {
            return Err(Self::mismatch("transpose", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros([c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[j * r + i] = xv.data()[i * c + j];
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(out, Op::Transpose(x), rg, "transpose")
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// Arithmetic mean of all elements, as a scalar node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg, "mean")
    }

    /// Per-row sums of a rank-2 tensor, as a rank-1 node.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 {
            return Err(Self::mismatch("row_sums", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let data = (0..r)
            .map(|i| xv.data()[i * c..(i + 1) * c].iter().sum())
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new([r], data)?, Op::RowSums(x), rg, "row_sums")
    }

    /// Main diagonal of a square rank-2 tensor, as a rank-1 node.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || xv.rows() != xv.cols() {
            return Err(Self::mismatch("diag", xv.shape(), &[]));
        }
        let n = xv.rows();
        let data = (0..n).map(|i| xv.data()[i * n + i]).collect();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new([n], data)?, Op::Diag(x), rg, "diag")
    }

    /// Per-row Euclidean norms of a rank-2 tensor. Forward is exact (a zero
    /// row has norm 0); the backward denominator is floored at
    /// [`EPS_FLOOR`].
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 {
            return Err(Self::mismatch("row_norms", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let data = (0..r)
            .map(|i| {
                math::sqrt(
                    xv.data()[i * c..(i + 1) * c]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>(),
                )
            })
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new([r], data)?, Op::RowNorms(x), rg, "row_norms")
    }

    /// Euclidean norm over all elements, as a scalar node. Forward is exact;
    /// the backward denominator is floored at [`EPS_FLOOR`].
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.frobenius_norm();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::scalar(n), Op::L2Norm(x), rg, "l2_norm")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, "sigmoid", math::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, "tanh", math::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, "exp", math::exp, Op::Exp(x))
    }

    /// Natural log of `max(x, EPS_FLOOR)` element-wise.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, "log", |v| math::ln(v.max(EPS_FLOOR)), Op::Log(x))
    }

    /// Square root of `max(x, EPS_FLOOR)` element-wise.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, "sqrt", |v| math::sqrt(v.max(EPS_FLOOR)), Op::Sqrt(x))
    }

    /// Element-wise `max(x, floor)`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.map_elementwise(x, "clamp_min", |v| v.max(floor), Op::ClampMin { x, floor })
    }

    fn map_elementwise(
        &mut self,
        x: Var,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[x]);
        self.push(out, op, rg, name)
    }

    /// Row-wise softmax of a rank-2 tensor, stabilized by subtracting each
    /// row's max (which leaves both value and gradient unchanged).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 {
            return Err(Self::mismatch("softmax", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros([r, c]);
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for j in 0..c {
                let e = math::exp(row[j] - m);
                out.data_mut()[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out.data_mut()[i * c + j] /= z;
            }
        }
        let rg = self.needs_grad(&[x]);
        self.push(out, Op::Softmax(x), rg, "softmax")
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, as a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        if lv.rank() != 2 {
            return Err(Self::mismatch("cross_entropy", lv.shape(), &[]));
        }
        let (r, c) = (lv.rows(), lv.cols());
        if targets.len() != r {
            return Err(Error::LengthMismatch {
                left: targets.len(),
                right: r,
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad as u32,
                n_classes: c,
            });
        }
        let mut total = 0.0;
        for i in 0..r {
            let row = &lv.data()[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + math::ln(row.iter().map(|&v| math::exp(v - m)).sum::<f64>());
            total += lse - row[targets[i]];
        }
        let rg = self.needs_grad(&[logits]);
        self.push(
            Tensor::scalar(total / r as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
            "cross_entropy",
        )
    }

    /// Reverse sweep from a single-element node, returning gradients of
    /// every leaf that participates in differentiation.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("loss shape {:?} is not scalar", self.nodes[loss.0].value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.distribute(id, &gout, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// Applies node `id`'s backward rule, accumulating into parent buffers.
    fn distribute(&self, id: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    // dA += dC · Bᵀ
                    let ga = acc(grads, *a, av.shape());
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout.data()[i * n + j];
                            if g != 0.0 {
                                let brow = j; // column j of B == elements b[p*n + j]
                                for p in 0..k {
                                    ga[i * k + p] += g * bv.data()[p * n + brow];
                                }
                            }
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    // dB += Aᵀ · dC
                    let gb = acc(grads, *b, bv.shape());
                    for i in 0..m {
                        for p in 0..k {
                            let av_ip = av.data()[i * k + p];
                            if av_ip != 0.0 {
                                for j in 0..n {
                                    gb[p * n + j] += av_ip * gout.data()[i * n + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_scaled(grads, *a, gout, 1.0);
                self.acc_scaled(grads, *b, gout, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_scaled(grads, *a, gout, 1.0);
                self.acc_scaled(grads, *b, gout, -1.0);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let bv = &self.nodes[b.0].value;
                    let ga = acc(grads, *a, bv.shape());
                    for (g, (&go, &y)) in ga.iter_mut().zip(gout.data().iter().zip(bv.data())) {
                        *g += go * y;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let av = &self.nodes[a.0].value;
                    let gb = acc(grads, *b, av.shape());
                    for (g, (&go, &x)) in gb.iter_mut().zip(gout.data().iter().zip(av.data())) {
                        *g += go * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if self.nodes[a.0].requires_grad {
                    let ga = acc(grads, *a, av.shape());
                    for (g, (&go, &y)) in ga.iter_mut().zip(gout.data().iter().zip(bv.data())) {
                        *g += go / y;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let gb = acc(grads, *b, bv.shape());
                    for i in 0..gb.len() {
                        gb[i] -= gout.data()[i] * av.data()[i] / (bv.data()[i] * bv.data()[i]);
                    }
                }
            }
            Op::DivRows(m, d) => {
                let (mv, dv) = (&self.nodes[m.0].value, &self.nodes[d.0].value);
                let cols = mv.cols();
                if self.nodes[m.0].requires_grad {
                    let gm = acc(grads, *m, mv.shape());
                    for i in 0..gm.len() {
                        gm[i] += gout.data()[i] / dv.data()[i / cols].max(EPS_FLOOR);
                    }
                }
                if self.nodes[d.0].requires_grad {
                    let gd = acc(grads, *d, dv.shape());
                    for r in 0..dv.numel() {
                        let den = dv.data()[r];
                        if den > EPS_FLOOR {
                            let mut s = 0.0;
                            for c in 0..cols {
                                s += gout.data()[r * cols + c] * mv.data()[r * cols + c];
                            }
                            gd[r] -= s / (den * den);
                        }
                    }
                }
            }
            Op::AffineScalar { x, mul } => {
                self.acc_scaled(grads, *x, gout, *mul);
            }
            Op::Concat { parts, axis } => {
                let rank = self.nodes[parts[0].0].value.rank();
                if rank == 1 || *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.numel();
                        if self.nodes[p.0].requires_grad {
                            let shape = self.nodes[p.0].value.shape().to_vec();
                            let gp = acc(grads, *p, &shape);
                            for (g, &go) in gp.iter_mut().zip(&gout.data()[offset..offset + n]) {
                                *g += go;
                            }
                        }
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[parts[0].0].value.rows();
                    let total_cols = gout.cols();
                    let mut col0 = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        if self.nodes[p.0].requires_grad {
                            let shape = self.nodes[p.0].value.shape().to_vec();
                            let gp = acc(grads, *p, &shape);
                            for r in 0..rows {
                                for j in 0..c {
                                    gp[r * c + j] += gout.data()[r * total_cols + col0 + j];
                                }
                            }
                        }
                        col0 += c;
                    }
                }
            }
            Op::Slice { x, axis, start, end } => {
                if !self.nodes[x.0].requires_grad {
                    return Ok(());
                }
                let shape = self.nodes[x.0].value.shape().to_vec();
                let rank = shape.len();
                let gx = acc(grads, *x, &shape);
                if rank == 1 {
                    for (i, &go) in gout.data().iter().enumerate() {
                        gx[start + i] += go;
                    }
                } else if *axis == 0 {
                    let c = shape[1];
                    for (i, &go) in gout.data().iter().enumerate() {
                        gx[start * c + i] += go;
                    }
                } else {
                    let c = shape[1];
                    let w = end - start;
                    for r in 0..shape[0] {
                        for j in 0..w {
                            gx[r * c + start + j] += gout.data()[r * w + j];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if self.nodes[x.0].requires_grad {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let (r, c) = (shape[0], shape[1]);
                    let gx = acc(grads, *x, &shape);
                    for i in 0..c {
                        for j in 0..r {
                            gx[j * c + i] += gout.data()[i * r + j];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                self.acc_broadcast(grads, *x, gout.item());
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                self.acc_broadcast(grads, *x, gout.item() / n);
            }
            Op::AddBias(m, b) => {
                self.acc_scaled(grads, *m, gout, 1.0);
                if self.nodes[b.0].requires_grad {
                    let cols = self.nodes[b.0].value.numel();
                    let shape = self.nodes[b.0].value.shape().to_vec();
                    let gb = acc(grads, *b, &shape);
                    for (i, &go) in gout.data().iter().enumerate() {
                        gb[i % cols] += go;
                    }
                }
            }
            Op::RowSums(x) => {
                if self.nodes[x.0].requires_grad {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let c = shape[1];
                    let gx = acc(grads, *x, &shape);
                    for (i, g) in gx.iter_mut().enumerate() {
                        *g += gout.data()[i / c];
                    }
                }
            }
            Op::Diag(x) => {
                if self.nodes[x.0].requires_grad {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let n = shape[0];
                    let gx = acc(grads, *x, &shape);
                    for (i, &g) in gout.data().iter().enumerate() {
                        gx[i * n + i] += g;
                    }
                }
            }
            Op::RowNorms(x) => {
                if self.nodes[x.0].requires_grad {
                    let xv = &self.nodes[x.0].value;
                    let c = xv.cols();
                    let gx = acc(grads, *x, xv.shape());
                    for (i, g) in gx.iter_mut().enumerate() {
                        let r = i / c;
                        *g += gout.data()[r] * xv.data()[i] / node.value.data()[r].max(EPS_FLOOR);
                    }
                }
            }
            Op::L2Norm(x) => {
                if self.nodes[x.0].requires_grad {
                    let xv = &self.nodes[x.0].value;
                    let norm = node.value.item().max(EPS_FLOOR);
                    let s = gout.item() / norm;
                    let gx = acc(grads, *x, xv.shape());
                    for (g, &v) in gx.iter_mut().zip(xv.data()) {
                        *g += s * v;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                self.acc_map(grads, *x, gout, |i, go| {
                    let v = y.data()[i];
                    go * v * (1.0 - v)
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                self.acc_map(grads, *x, gout, |i, go| {
                    let v = y.data()[i];
                    go * (1.0 - v * v)
                });
            }
            Op::Exp(x) => {
                let y = &node.value;
                self.acc_map(grads, *x, gout, |i, go| go * y.data()[i]);
            }
            Op::Log(x) => {
                let xv = &self.nodes[x.0].value;
                self.acc_map(grads, *x, gout, |i, go| {
                    let v = xv.data()[i];
                    if v > EPS_FLOOR {
                        go / v
                    } else {
                        0.0 // forward is constant in the floored region
                    }
                });
            }
            Op::Sqrt(x) => {
                let xv = &self.nodes[x.0].value;
                let y = &node.value;
                self.acc_map(grads, *x, gout, |i, go| {
                    if xv.data()[i] > EPS_FLOOR {
                        go / (2.0 * y.data()[i])
                    } else {
                        0.0
                    }
                });
            }
            Op::ClampMin { x, floor } => {
                let xv = &self.nodes[x.0].value;
                let floor = *floor;
                self.acc_map(grads, *x, gout, |i, go| {
                    if xv.data()[i] >= floor {
                        go
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax(x) => {
                if self.nodes[x.0].requires_grad {
                    let y = &node.value;
                    let (r, c) = (y.rows(), y.cols());
                    let gx = acc(grads, *x, y.shape());
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += gout.data()[i * c + j] * y.data()[i * c + j];
                        }
                        for j in 0..c {
                            let yj = y.data()[i * c + j];
                            gx[i * c + j] += yj * (gout.data()[i * c + j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if self.nodes[logits.0].requires_grad {
                    let lv = &self.nodes[logits.0].value;
                    let (r, c) = (lv.rows(), lv.cols());
                    let scale = gout.item() / r as f64;
                    let gx = acc(grads, *logits, lv.shape());
                    for i in 0..r {
                        let row = &lv.data()[i * c..(i + 1) * c];
                        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let z: f64 = row.iter().map(|&v| math::exp(v - m)).sum();
                        for j in 0..c {
                            let p = math::exp(row[j] - m) / z;
                            let y = if j == targets[i] { 1.0 } else { 0.0 };
                            gx[i * c + j] += scale * (p - y);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn acc_scaled(&self, grads: &mut [Option<Tensor>], v: Var, gout: &Tensor, s: f64) {
        if self.nodes[v.0].requires_grad {
            let shape = self.nodes[v.0].value.shape().to_vec();
            let gv = acc(grads, v, &shape);
            for (g, &go) in gv.iter_mut().zip(gout.data()) {
                *g += s * go;
            }
        }
    }

    fn acc_broadcast(&self, grads: &mut [Option<Tensor>], v: Var, value: f64) {
        if self.nodes[v.0].requires_grad {
            let shape = self.nodes[v.0].value.shape().to_vec();
            let gv = acc(grads, v, &shape);
            for g in gv.iter_mut() {
                *g += value;
            }
        }
    }

    fn acc_map(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        gout: &Tensor,
        f: impl Fn(usize, f64) -> f64,
    ) {
        if self.nodes[v.0].requires_grad {
            let shape = self.nodes[v.0].value.shape().to_vec();
            let gv = acc(grads, v, &shape);
            for (i, g) in gv.iter_mut().enumerate() {
                *g += f(i, gout.data()[i]);
            }
        }
    }
}

/// Gets (or lazily creates) the gradient buffer for `v`.
fn acc<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
        .data_mut()
}

/// C (m×n) = A (m×k) · B (k×n), accumulating into a zeroed buffer. The
/// i-k-j loop order keeps the inner loop contiguous over both B and C.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                let b_row = &b[p * n..(p + 1) * n];
                let c_row = &mut c[i * n..(i + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += a_ip * bv;
                }
            }
        }
    }
}
