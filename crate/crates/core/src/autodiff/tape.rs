//! The recording tape and differentiable variable handle.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use super::tensor::{mm_nn, mm_nt, mm_tn, Tensor};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward() requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward() on a value with no gradient path to any parameter")]
    DetachedGraph,
    #[error("parameter {index} has no gradient (not reached by backward)")]
    MissingGrad { index: usize },
    #[error("non-finite loss encountered")]
    NonFiniteLoss,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Matrix (or batch of matrices) plus a bias vector over the last axis.
    AddBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Bmm(usize, usize),
    TransposeLast(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Softplus(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    Sum(usize),
    Mean(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// An operation record shared by all [`Var`]s built on it.
///
/// Nodes are appended in construction order, which is a topological order of
/// the computation graph; backward() walks it once in reverse.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input tensor. Only leaves with `requires_grad` (and nodes
    /// computed from them) receive gradients.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        inner.grads.push(None);
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

/// Split a shape into (outer, axis_len, inner) strides around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape.clone()
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        let inner = self.tape.inner.borrow();
        inner.grads[self.id].as_ref().map(|g| Tensor {
            shape: inner.nodes[self.id].value.shape.clone(),
            data: g.clone(),
        })
    }

    fn unary(&self, op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let data = node.value.data.iter().map(|&x| f(x)).collect();
            (
                Tensor {
                    shape: node.value.shape.clone(),
                    data,
                },
                node.requires_grad,
            )
        };
        self.tape.push(value, rg, op(self.id))
    }

    fn zip(&self, other: &Var, op: impl FnOnce(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var {
        assert!(self.tape.same_tape(&other.tape), "vars from different tapes");
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            assert_eq!(
                a.value.shape, b.value.shape,
                "shape mismatch in elementwise op"
            );
            let data = a
                .value
                .data
                .iter()
                .zip(&b.value.data)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (
                Tensor {
                    shape: a.value.shape.clone(),
                    data,
                },
                a.requires_grad || b.requires_grad,
            )
        };
        self.tape.push(value, rg, op(self.id, other.id))
    }

    pub fn add(&self, other: &Var) -> Var {
        self.zip(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.zip(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.zip(other, Op::Mul, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(|id| Op::Scale(id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid, stable_sigmoid)
    }

    pub fn exp(&self) -> Var {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Var {
        self.unary(Op::Ln, f64::ln)
    }

    pub fn square(&self) -> Var {
        self.unary(Op::Square, |x| x * x)
    }

    pub fn softplus(&self) -> Var {
        self.unary(Op::Softplus, stable_softplus)
    }

    /// Add a bias vector to every row (last axis) of a rank-2 or rank-3
    /// tensor. The one permitted broadcast.
    pub fn add_bias(&self, bias: &Var) -> Var {
        assert!(self.tape.same_tape(&bias.tape), "vars from different tapes");
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[bias.id];
            assert_eq!(b.value.rank(), 1, "bias must be a vector");
            let n = *a.value.shape.last().expect("add_bias on scalar");
            assert_eq!(
                n,
                b.value.shape[0],
                "bias length {} does not match last axis {}",
                b.value.shape[0],
                n
            );
            let mut data = a.value.data.clone();
            for row in data.chunks_mut(n) {
                for (v, &bv) in row.iter_mut().zip(&b.value.data) {
                    *v += bv;
                }
            }
            (
                Tensor {
                    shape: a.value.shape.clone(),
                    data,
                },
                a.requires_grad || b.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::AddBias(self.id, bias.id))
    }

    /// 2-D matrix product `(m,k) · (k,n)`.
    pub fn matmul(&self, other: &Var) -> Var {
        assert!(self.tape.same_tape(&other.tape), "vars from different tapes");
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            assert_eq!(a.value.rank(), 2, "matmul lhs must be rank 2");
            assert_eq!(b.value.rank(), 2, "matmul rhs must be rank 2");
            let (m, k) = (a.value.shape[0], a.value.shape[1]);
            let (k2, n) = (b.value.shape[0], b.value.shape[1]);
            assert_eq!(k, k2, "matmul inner dims differ: {k} vs {k2}");
            let mut data = vec![0.0; m * n];
            mm_nn(&mut data, &a.value.data, &b.value.data, m, k, n);
            (
                Tensor {
                    shape: vec![m, n],
                    data,
                },
                a.requires_grad || b.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::Matmul(self.id, other.id))
    }

    /// Batched matrix product `(b,m,k) · (b,k,n)`.
    pub fn bmm(&self, other: &Var) -> Var {
        assert!(self.tape.same_tape(&other.tape), "vars from different tapes");
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            assert_eq!(a.value.rank(), 3, "bmm lhs must be rank 3");
            assert_eq!(b.value.rank(), 3, "bmm rhs must be rank 3");
            let (nb, m, k) = (a.value.shape[0], a.value.shape[1], a.value.shape[2]);
            let (nb2, k2, n) = (b.value.shape[0], b.value.shape[1], b.value.shape[2]);
            assert_eq!(nb, nb2, "bmm batch dims differ");
            assert_eq!(k, k2, "bmm inner dims differ");
            let mut data = vec![0.0; nb * m * n];
            for i in 0..nb {
                mm_nn(
                    &mut data[i * m * n..(i + 1) * m * n],
                    &a.value.data[i * m * k..(i + 1) * m * k],
                    &b.value.data[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                );
            }
            (
                Tensor {
                    shape: vec![nb, m, n],
                    data,
                },
                a.requires_grad || b.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::Bmm(self.id, other.id))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last(&self) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let value = transpose_last_tensor(&a.value);
            (value, a.requires_grad)
        };
        self.tape.push(value, rg, Op::TransposeLast(self.id))
    }

    /// Softmax over one axis; other axes index independent lanes.
    pub fn softmax(&self, axis: usize) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let (outer, axis_len, inner_len) = axis_split(&a.value.shape, axis);
            let mut data = a.value.data.clone();
            for o in 0..outer {
                for i in 0..inner_len {
                    let base = o * axis_len * inner_len + i;
                    let mut max = f64::NEG_INFINITY;
                    for k in 0..axis_len {
                        max = max.max(data[base + k * inner_len]);
                    }
                    let mut sum = 0.0;
                    for k in 0..axis_len {
                        let idx = base + k * inner_len;
                        data[idx] = (data[idx] - max).exp();
                        sum += data[idx];
                    }
                    for k in 0..axis_len {
                        data[base + k * inner_len] /= sum;
                    }
                }
            }
            (
                Tensor {
                    shape: a.value.shape.clone(),
                    data,
                },
                a.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::Softmax { input: self.id, axis })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            (Tensor::scalar(a.value.data.iter().sum()), a.requires_grad)
        };
        self.tape.push(value, rg, Op::Sum(self.id))
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let n = a.value.len() as f64;
            (
                Tensor::scalar(a.value.data.iter().sum::<f64>() / n),
                a.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::Mean(self.id))
    }

    /// Concatenate along `axis`. All parts must share the other dims.
    pub fn concat(parts: &[&Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let tape = parts[0].tape.clone();
        assert!(
            parts.iter().all(|p| tape.same_tape(&p.tape)),
            "vars from different tapes"
        );
        let (value, rg) = {
            let inner = tape.inner.borrow();
            let first = &inner.nodes[parts[0].id].value;
            let mut out_shape = first.shape.clone();
            let mut total_axis = 0;
            for p in parts {
                let s = &inner.nodes[p.id].value.shape;
                assert_eq!(s.len(), out_shape.len(), "concat rank mismatch");
                for (d, (&a, &b)) in s.iter().zip(&out_shape).enumerate() {
                    assert!(
                        d == axis || a == b,
                        "concat shape mismatch at dim {d}: {s:?} vs {out_shape:?}"
                    );
                }
                total_axis += s[axis];
            }
            out_shape[axis] = total_axis;
            let (outer, _, inner_len) = axis_split(&out_shape, axis);
            let mut data = vec![0.0; out_shape.iter().product()];
            let out_stride = total_axis * inner_len;
            let mut offset = 0;
            for p in parts {
                let v = &inner.nodes[p.id].value;
                let part_axis = v.shape[axis];
                let part_stride = part_axis * inner_len;
                for o in 0..outer {
                    let src = &v.data[o * part_stride..(o + 1) * part_stride];
                    let dst_base = o * out_stride + offset * inner_len;
                    data[dst_base..dst_base + part_stride].copy_from_slice(src);
                }
                offset += part_axis;
            }
            (
                Tensor {
                    shape: out_shape,
                    data,
                },
                parts.iter().any(|p| inner.nodes[p.id].requires_grad),
            )
        };
        tape.push(
            value,
            rg,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        )
    }

    /// Take `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let (outer, axis_len, inner_len) = axis_split(&a.value.shape, axis);
            assert!(
                start + len <= axis_len,
                "slice [{start}, {}) out of range for axis of length {axis_len}",
                start + len
            );
            let mut shape = a.value.shape.clone();
            shape[axis] = len;
            let mut data = vec![0.0; shape.iter().product()];
            let src_stride = axis_len * inner_len;
            let dst_stride = len * inner_len;
            for o in 0..outer {
                let src = &a.value.data
                    [o * src_stride + start * inner_len..o * src_stride + (start + len) * inner_len];
                data[o * dst_stride..(o + 1) * dst_stride].copy_from_slice(src);
            }
            (Tensor { shape, data }, a.requires_grad)
        };
        self.tape.push(
            value,
            rg,
            Op::Slice {
                input: self.id,
                axis,
                start,
                len,
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            assert_eq!(
                shape.iter().product::<usize>(),
                a.value.len(),
                "reshape to {:?} changes element count",
                shape
            );
            (
                Tensor {
                    shape: shape.to_vec(),
                    data: a.value.data.clone(),
                },
                a.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::Reshape(self.id))
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate
    /// additively into every `requires_grad` node reachable from it.
    pub fn backward(&self) -> Result<(), AutodiffError> {
        let mut inner = self.tape.inner.borrow_mut();
        {
            let loss = &inner.nodes[self.id];
            if loss.value.len() != 1 {
                return Err(AutodiffError::NotScalar(loss.value.shape.clone()));
            }
            if !loss.requires_grad {
                return Err(AutodiffError::DetachedGraph);
            }
        }
        inner.grads[self.id] = Some(vec![1.0]);

        let TapeInner { nodes, grads } = &mut *inner;
        for id in (0..=self.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(grad) = grads[id].clone() else {
                continue;
            };
            backprop_node(nodes, grads, id, &grad);
        }
        Ok(())
    }
}

fn transpose_last_tensor(a: &Tensor) -> Tensor {
    match a.rank() {
        2 => {
            let (m, n) = (a.shape[0], a.shape[1]);
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = a.data[i * n + j];
                }
            }
            Tensor {
                shape: vec![n, m],
                data,
            }
        }
        3 => {
            let (b, m, n) = (a.shape[0], a.shape[1], a.shape[2]);
            let mut data = vec![0.0; b * m * n];
            for bb in 0..b {
                let base = bb * m * n;
                for i in 0..m {
                    for j in 0..n {
                        data[base + j * m + i] = a.data[base + i * n + j];
                    }
                }
            }
            Tensor {
                shape: vec![b, n, m],
                data,
            }
        }
        r => panic!("transpose_last on rank-{r} tensor"),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: &[f64]) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (gv, &dv) in g.iter_mut().zip(delta) {
                *gv += dv;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

#[allow(clippy::too_many_lines)]
fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, grad: &[f64]) {
    let op = nodes[id].op.clone();
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, a, grad);
            accumulate(grads, nodes, b, grad);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, a, grad);
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            accumulate(grads, nodes, b, &neg);
        }
        Op::Mul(a, b) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[b].value.data)
                .map(|(g, v)| g * v)
                .collect();
            accumulate(grads, nodes, a, &da);
            let db: Vec<f64> = grad
                .iter()
                .zip(&nodes[a].value.data)
                .map(|(g, v)| g * v)
                .collect();
            accumulate(grads, nodes, b, &db);
        }
        Op::AddBias(a, b) => {
            accumulate(grads, nodes, a, grad);
            let n = nodes[b].value.len();
            let mut db = vec![0.0; n];
            for row in grad.chunks(n) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            accumulate(grads, nodes, b, &db);
        }
        Op::Scale(a, c) => {
            let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::AddScalar(a) => accumulate(grads, nodes, a, grad),
        Op::Matmul(a, b) => {
            let (m, k) = (nodes[a].value.shape[0], nodes[a].value.shape[1]);
            let n = nodes[b].value.shape[1];
            if nodes[a].requires_grad {
                let mut da = vec![0.0; m * k];
                mm_nt(&mut da, grad, &nodes[b].value.data, m, n, k);
                accumulate(grads, nodes, a, &da);
            }
            if nodes[b].requires_grad {
                let mut db = vec![0.0; k * n];
                mm_tn(&mut db, &nodes[a].value.data, grad, m, k, n);
                accumulate(grads, nodes, b, &db);
            }
        }
        Op::Bmm(a, b) => {
            let (nb, m, k) = (
                nodes[a].value.shape[0],
                nodes[a].value.shape[1],
                nodes[a].value.shape[2],
            );
            let n = nodes[b].value.shape[2];
            if nodes[a].requires_grad {
                let mut da = vec![0.0; nb * m * k];
                for i in 0..nb {
                    mm_nt(
                        &mut da[i * m * k..(i + 1) * m * k],
                        &grad[i * m * n..(i + 1) * m * n],
                        &nodes[b].value.data[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                    );
                }
                accumulate(grads, nodes, a, &da);
            }
            if nodes[b].requires_grad {
                let mut db = vec![0.0; nb * k * n];
                for i in 0..nb {
                    mm_tn(
                        &mut db[i * k * n..(i + 1) * k * n],
                        &nodes[a].value.data[i * m * k..(i + 1) * m * k],
                        &grad[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(grads, nodes, b, &db);
            }
        }
        Op::TransposeLast(a) => {
            let gt = transpose_last_tensor(&Tensor {
                shape: nodes[id].value.shape.clone(),
                data: grad.to_vec(),
            });
            accumulate(grads, nodes, a, &gt.data);
        }
        Op::Tanh(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[id].value.data)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Sigmoid(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[id].value.data)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Exp(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[id].value.data)
                .map(|(g, y)| g * y)
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Ln(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[a].value.data)
                .map(|(g, x)| g / x)
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Square(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[a].value.data)
                .map(|(g, x)| g * 2.0 * x)
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Softplus(a) => {
            let da: Vec<f64> = grad
                .iter()
                .zip(&nodes[a].value.data)
                .map(|(g, x)| g * stable_sigmoid(*x))
                .collect();
            accumulate(grads, nodes, a, &da);
        }
        Op::Softmax { input, axis } => {
            let y = &nodes[id].value;
            let (outer, axis_len, inner_len) = axis_split(&y.shape, axis);
            let mut da = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner_len {
                    let base = o * axis_len * inner_len + i;
                    let mut dot = 0.0;
                    for k in 0..axis_len {
                        let idx = base + k * inner_len;
                        dot += grad[idx] * y.data[idx];
                    }
                    for k in 0..axis_len {
                        let idx = base + k * inner_len;
                        da[idx] = y.data[idx] * (grad[idx] - dot);
                    }
                }
            }
            accumulate(grads, nodes, input, &da);
        }
        Op::Sum(a) => {
            let g = grad[0];
            let da = vec![g; nodes[a].value.len()];
            accumulate(grads, nodes, a, &da);
        }
        Op::Mean(a) => {
            let n = nodes[a].value.len();
            let g = grad[0] / n as f64;
            let da = vec![g; n];
            accumulate(grads, nodes, a, &da);
        }
        Op::Concat { inputs, axis } => {
            let out_shape = &nodes[id].value.shape;
            let (outer, total_axis, inner_len) = axis_split(out_shape, axis);
            let out_stride = total_axis * inner_len;
            let mut offset = 0;
            for input in inputs {
                let part_axis = nodes[input].value.shape[axis];
                let part_stride = part_axis * inner_len;
                if nodes[input].requires_grad {
                    let mut da = vec![0.0; outer * part_stride];
                    for o in 0..outer {
                        let src_base = o * out_stride + offset * inner_len;
                        da[o * part_stride..(o + 1) * part_stride]
                            .copy_from_slice(&grad[src_base..src_base + part_stride]);
                    }
                    accumulate(grads, nodes, input, &da);
                }
                offset += part_axis;
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let in_shape = &nodes[input].value.shape;
            let (outer, axis_len, inner_len) = axis_split(in_shape, axis);
            let mut da = vec![0.0; nodes[input].value.len()];
            let src_stride = len * inner_len;
            let dst_stride = axis_len * inner_len;
            for o in 0..outer {
                let dst_base = o * dst_stride + start * inner_len;
                da[dst_base..dst_base + src_stride]
                    .copy_from_slice(&grad[o * src_stride..(o + 1) * src_stride]);
            }
            accumulate(grads, nodes, input, &da);
        }
        Op::Reshape(a) => accumulate(grads, nodes, a, grad),
    }
}
