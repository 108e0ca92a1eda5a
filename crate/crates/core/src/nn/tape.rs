//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse creation order and accumulates gradients. Values are never
//! mutated after they are pushed, so a finished tape can be read concurrently;
//! recording itself is single-threaded.

use std::cell::RefCell;

use super::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    /// a[..., d] + b[d], broadcasting b over leading axes.
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// a[..., d] * b[d], broadcasting b over leading axes.
    MulBias(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    /// Batched matmul over leading axis: [b,m,k] @ [b,k,n].
    Bmm(usize, usize),
    Transpose(usize),
    /// Swap the last two axes of a rank-3 tensor.
    TransposeBatch(usize),
    Reshape(usize),
    Relu(usize),
    Tanh(usize),
    Softmax(usize, usize),
    LayerNorm(usize, usize),
    MeanAxis(usize, usize),
    MeanAll(usize),
    Concat(Vec<usize>, usize),
    /// Rows start..start+len along axis 0.
    SliceRows(usize, usize, usize),
    /// y[r] = x[r - offset], zero-filled at the boundary.
    ShiftRows(usize, isize),
    /// y[t,i,c] = sum_j A[i,j] x[t,j,c] with constant matrix A.
    Aggregate(usize, Tensor),
    /// Tile a [1,d] row into [rows,d].
    RepeatRows(usize),
    /// Packed upper-triangular rows [b, n(n+1)/2] -> symmetric [b, n, n].
    SymFromUpper(usize, usize),
    Mse(usize, usize),
    /// Mean cross-entropy from logits [b, c] against class indices.
    CrossEntropy(usize, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by one backward pass, indexed by `Var`.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a recorded variable, zeros if it never received one.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }
}

const LN_EPS: f64 = 1e-5;

/// Splits a shape into (outer, len, inner) around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Records a value that does not need a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Runs reverse accumulation from `loss` (must be scalar).
    pub fn backward(&self, loss: Var<'_>) -> Grads {
        assert!(std::ptr::eq(self, loss.tape), "var from another tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &nodes[id];
            let mut acc = |pid: usize, contrib: Tensor| {
                if !nodes[pid].requires_grad {
                    return;
                }
                match &mut grads[pid] {
                    Some(t) => t.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddBias(a, b) => {
                    acc(*a, g.clone());
                    let d = nodes[*b].value.numel();
                    let rows = g.numel() / d;
                    let mut gb = vec![0.0; d];
                    for r in 0..rows {
                        for (j, gbj) in gb.iter_mut().enumerate() {
                            *gbj += g.data()[r * d + j];
                        }
                    }
                    acc(*b, Tensor::new(nodes[*b].value.shape(), gb));
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip(&nodes[*b].value, |gv, bv| gv * bv));
                    acc(*b, g.zip(&nodes[*a].value, |gv, av| gv * av));
                }
                Op::MulBias(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let d = bv.numel();
                    let mut ga = vec![0.0; av.numel()];
                    let mut gb = vec![0.0; d];
                    for (i, (&gv, &x)) in g.data().iter().zip(av.data()).enumerate() {
                        ga[i] = gv * bv.data()[i % d];
                        gb[i % d] += gv * x;
                    }
                    acc(*a, Tensor::new(av.shape(), ga));
                    acc(*b, Tensor::new(bv.shape(), gb));
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::Matmul(a, b) => {
                    acc(*a, g.matmul_nt(&nodes[*b].value));
                    acc(*b, nodes[*a].value.matmul_tn(&g));
                }
                Op::Bmm(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = bv.shape()[2];
                    let mut ga = vec![0.0; av.numel()];
                    let mut gb = vec![0.0; bv.numel()];
                    for s in 0..bs {
                        let asl = Tensor::new(&[m, k], av.data()[s * m * k..(s + 1) * m * k].to_vec());
                        let bsl = Tensor::new(&[k, n], bv.data()[s * k * n..(s + 1) * k * n].to_vec());
                        let gsl = Tensor::new(&[m, n], g.data()[s * m * n..(s + 1) * m * n].to_vec());
                        ga[s * m * k..(s + 1) * m * k].copy_from_slice(gsl.matmul_nt(&bsl).data());
                        gb[s * k * n..(s + 1) * k * n].copy_from_slice(asl.matmul_tn(&gsl).data());
                    }
                    acc(*a, Tensor::new(av.shape(), ga));
                    acc(*b, Tensor::new(bv.shape(), gb));
                }
                Op::Transpose(a) => acc(*a, g.t2()),
                Op::TransposeBatch(a) => {
                    let sh = nodes[*a].value.shape();
                    let (bs, m, n) = (sh[0], sh[1], sh[2]);
                    let mut out = vec![0.0; bs * m * n];
                    for s in 0..bs {
                        for i in 0..m {
                            for j in 0..n {
                                out[s * m * n + i * n + j] = g.data()[s * m * n + j * m + i];
                            }
                        }
                    }
                    acc(*a, Tensor::new(sh, out));
                }
                Op::Reshape(a) => acc(*a, g.reshaped(nodes[*a].value.shape())),
                Op::Relu(a) => {
                    acc(*a, g.zip(&nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 }));
                }
                Op::Tanh(a) => {
                    acc(*a, g.zip(&node.value, |gv, y| gv * (1.0 - y * y)));
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(y.shape(), *axis);
                    let mut out = vec![0.0; y.numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| o * len * inner + l * inner + i;
                            let dot: f64 =
                                (0..len).map(|l| g.data()[at(l)] * y.data()[at(l)]).sum();
                            for l in 0..len {
                                out[at(l)] = y.data()[at(l)] * (g.data()[at(l)] - dot);
                            }
                        }
                    }
                    acc(*a, Tensor::new(y.shape(), out));
                }
                Op::LayerNorm(a, axis) => {
                    let x = &nodes[*a].value;
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(x.shape(), *axis);
                    let mut out = vec![0.0; x.numel()];
                    let ln = len as f64;
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| o * len * inner + l * inner + i;
                            let mean: f64 = (0..len).map(|l| x.data()[at(l)]).sum::<f64>() / ln;
                            let var: f64 = (0..len)
                                .map(|l| {
                                    let d = x.data()[at(l)] - mean;
                                    d * d
                                })
                                .sum::<f64>()
                                / ln;
                            let istd = 1.0 / (var + LN_EPS).sqrt();
                            let gm: f64 = (0..len).map(|l| g.data()[at(l)]).sum::<f64>() / ln;
                            let gym: f64 = (0..len)
                                .map(|l| g.data()[at(l)] * y.data()[at(l)])
                                .sum::<f64>()
                                / ln;
                            for l in 0..len {
                                out[at(l)] =
                                    istd * (g.data()[at(l)] - gm - y.data()[at(l)] * gym);
                            }
                        }
                    }
                    acc(*a, Tensor::new(x.shape(), out));
                }
                Op::MeanAxis(a, axis) => {
                    let sh = nodes[*a].value.shape();
                    let (outer, len, inner) = axis_split(sh, *axis);
                    let mut out = vec![0.0; nodes[*a].value.numel()];
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                out[o * len * inner + l * inner + i] =
                                    g.data()[o * inner + i] / len as f64;
                            }
                        }
                    }
                    acc(*a, Tensor::new(sh, out));
                }
                Op::MeanAll(a) => {
                    let n = nodes[*a].value.numel() as f64;
                    acc(*a, Tensor::full(nodes[*a].value.shape(), g.item() / n));
                }
                Op::Concat(parts, axis) => {
                    let gsh = node.value.shape().to_vec();
                    let (outer, _, inner) = axis_split(&gsh, *axis);
                    let mut offset = 0usize;
                    for &pid in parts {
                        let psh = nodes[pid].value.shape();
                        let plen = psh[*axis];
                        let total_len = gsh[*axis];
                        let mut out = vec![0.0; nodes[pid].value.numel()];
                        for o in 0..outer {
                            for l in 0..plen {
                                let src = (o * total_len + offset + l) * inner;
                                let dst = (o * plen + l) * inner;
                                out[dst..dst + inner].copy_from_slice(&g.data()[src..src + inner]);
                            }
                        }
                        offset += plen;
                        acc(pid, Tensor::new(psh, out));
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let sh = nodes[*a].value.shape();
                    let inner: usize = sh[1..].iter().product();
                    let mut out = vec![0.0; nodes[*a].value.numel()];
                    out[start * inner..(start + len) * inner].copy_from_slice(g.data());
                    acc(*a, Tensor::new(sh, out));
                }
                Op::ShiftRows(a, offset) => {
                    let sh = nodes[*a].value.shape();
                    let rows = sh[0];
                    let inner: usize = sh[1..].iter().product();
                    let mut out = vec![0.0; nodes[*a].value.numel()];
                    for r in 0..rows as isize {
                        let src = r + offset;
                        if src >= 0 && src < rows as isize {
                            let (r, src) = (r as usize, src as usize);
                            out[r * inner..(r + 1) * inner]
                                .copy_from_slice(&g.data()[src * inner..(src + 1) * inner]);
                        }
                    }
                    acc(*a, Tensor::new(sh, out));
                }
                Op::Aggregate(a, mat) => {
                    let sh = nodes[*a].value.shape();
                    let (t, k, c) = (sh[0], sh[1], sh[2]);
                    let mut out = vec![0.0; t * k * c];
                    for s in 0..t {
                        for j in 0..k {
                            for i in 0..k {
                                let aij = mat.data()[i * k + j];
                                for ch in 0..c {
                                    out[s * k * c + j * c + ch] +=
                                        aij * g.data()[s * k * c + i * c + ch];
                                }
                            }
                        }
                    }
                    acc(*a, Tensor::new(sh, out));
                }
                Op::RepeatRows(a) => {
                    let d = nodes[*a].value.numel();
                    let rows = g.numel() / d;
                    let mut out = vec![0.0; d];
                    for r in 0..rows {
                        for (j, oj) in out.iter_mut().enumerate() {
                            *oj += g.data()[r * d + j];
                        }
                    }
                    acc(*a, Tensor::new(nodes[*a].value.shape(), out));
                }
                Op::SymFromUpper(a, n) => {
                    let n = *n;
                    let bsh = nodes[*a].value.shape();
                    let batch = bsh[0];
                    let mut out = vec![0.0; nodes[*a].value.numel()];
                    let tri = n * (n + 1) / 2;
                    for s in 0..batch {
                        let mut u = 0usize;
                        for i in 0..n {
                            for j in i..n {
                                let mut gv = g.data()[s * n * n + i * n + j];
                                if i != j {
                                    gv += g.data()[s * n * n + j * n + i];
                                }
                                out[s * tri + u] = gv;
                                u += 1;
                            }
                        }
                    }
                    acc(*a, Tensor::new(bsh, out));
                }
                Op::Mse(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let n = av.numel() as f64;
                    let c = 2.0 * g.item() / n;
                    acc(*a, av.zip(bv, |x, y| c * (x - y)));
                    acc(*b, av.zip(bv, |x, y| -c * (x - y)));
                }
                Op::CrossEntropy(a, labels) => {
                    let z = &nodes[*a].value;
                    let (b, c) = (z.shape()[0], z.shape()[1]);
                    let gv = g.item() / b as f64;
                    let mut out = vec![0.0; b * c];
                    for (r, &lab) in labels.iter().enumerate() {
                        let row = &z.data()[r * c..(r + 1) * c];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / denom;
                            out[r * c + j] = gv * (p - if j == lab { 1.0 } else { 0.0 });
                        }
                    }
                    acc(*a, Tensor::new(z.shape(), out));
                }
            }
        }
        Grads { grads }
    }
}

impl<'t> Var<'t> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        self.same_tape(other);
        let rg = self.tape.rg(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.add(&nodes[other.id].value)
        };
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    /// Adds a bias vector over the last axis.
    pub fn add_bias(&self, bias: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            let d = b.numel();
            assert_eq!(
                *a.shape().last().unwrap(),
                d,
                "bias dim {d} does not match last axis of {:?}",
                a.shape()
            );
            let mut data = a.data().to_vec();
            for (i, x) in data.iter_mut().enumerate() {
                *x += b.data()[i % d];
            }
            Tensor::new(a.shape(), data)
        };
        self.binary(bias, v, Op::AddBias(self.id, bias.id))
    }

    /// Multiplies by a per-channel vector over the last axis.
    pub fn mul_bias(&self, scale: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[scale.id].value;
            let d = b.numel();
            assert_eq!(
                *a.shape().last().unwrap(),
                d,
                "scale dim {d} does not match last axis of {:?}",
                a.shape()
            );
            let mut data = a.data().to_vec();
            for (i, x) in data.iter_mut().enumerate() {
                *x *= b.data()[i % d];
            }
            Tensor::new(a.shape(), data)
        };
        self.binary(scale, v, Op::MulBias(self.id, scale.id))
    }

    /// The tape this variable is recorded on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.sub(&nodes[other.id].value)
        };
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.zip(&nodes[other.id].value, |a, b| a * b)
        };
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)
        };
        self.binary(other, v, Op::Matmul(self.id, other.id))
    }

    pub fn bmm(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let (bs2, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
            assert_eq!(bs, bs2, "bmm batch mismatch");
            assert_eq!(k, k2, "bmm inner mismatch");
            let mut out = vec![0.0; bs * m * n];
            for s in 0..bs {
                let asl = &a.data()[s * m * k..(s + 1) * m * k];
                let bsl = &b.data()[s * k * n..(s + 1) * k * n];
                let osl = &mut out[s * m * n..(s + 1) * m * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = asl[i * k + kk];
                        let brow = &bsl[kk * n..(kk + 1) * n];
                        let orow = &mut osl[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            Tensor::new(&[bs, m, n], out)
        };
        self.binary(other, v, Op::Bmm(self.id, other.id))
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.t2();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn transpose_batch(&self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let (bs, m, n) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let mut out = vec![0.0; bs * m * n];
            for s in 0..bs {
                for i in 0..m {
                    for j in 0..n {
                        out[s * m * n + j * m + i] = a.data()[s * m * n + i * n + j];
                    }
                }
            }
            Tensor::new(&[bs, n, m], out)
        };
        self.unary(v, Op::TransposeBatch(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.reshaped(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn softmax(&self, axis: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| o * len * inner + l * inner + i;
                    let mx = (0..len)
                        .map(|l| x.data()[at(l)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for l in 0..len {
                        let e = (x.data()[at(l)] - mx).exp();
                        out[at(l)] = e;
                        denom += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= denom;
                    }
                }
            }
            Tensor::new(x.shape(), out)
        };
        self.unary(v, Op::Softmax(self.id, axis))
    }

    /// Normalizes along `axis` to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, axis: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; x.numel()];
            let ln = len as f64;
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| o * len * inner + l * inner + i;
                    let mean: f64 = (0..len).map(|l| x.data()[at(l)]).sum::<f64>() / ln;
                    let var: f64 = (0..len)
                        .map(|l| {
                            let d = x.data()[at(l)] - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / ln;
                    let istd = 1.0 / (var + LN_EPS).sqrt();
                    for l in 0..len {
                        out[at(l)] = (x.data()[at(l)] - mean) * istd;
                    }
                }
            }
            Tensor::new(x.shape(), out)
        };
        self.unary(v, Op::LayerNorm(self.id, axis))
    }

    pub fn mean_axis(&self, axis: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[o * len * inner + l * inner + i];
                    }
                }
            }
            for v in out.iter_mut() {
                *v /= len as f64;
            }
            let mut shape: Vec<usize> = x.shape()[..axis].to_vec();
            shape.extend_from_slice(&x.shape()[axis + 1..]);
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(&shape, out)
        };
        self.unary(v, Op::MeanAxis(self.id, axis))
    }

    pub fn mean_all(&self) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)
        };
        self.unary(v, Op::MeanAll(self.id))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let inner: usize = x.shape()[1..].iter().product();
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            Tensor::new(&shape, x.data()[start * inner..(start + len) * inner].to_vec())
        };
        self.unary(v, Op::SliceRows(self.id, start, len))
    }

    pub fn shift_rows(&self, offset: isize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let rows = x.shape()[0] as isize;
            let inner: usize = x.shape()[1..].iter().product();
            let mut out = vec![0.0; x.numel()];
            for r in 0..rows {
                let src = r - offset;
                if src >= 0 && src < rows {
                    let (r, src) = (r as usize, src as usize);
                    out[r * inner..(r + 1) * inner]
                        .copy_from_slice(&x.data()[src * inner..(src + 1) * inner]);
                }
            }
            Tensor::new(x.shape(), out)
        };
        self.unary(v, Op::ShiftRows(self.id, offset))
    }

    /// Left-multiplies each frame by a constant matrix: y[t] = A @ x[t].
    pub fn aggregate(&self, mat: &Tensor) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let (t, k, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            assert_eq!(mat.shape(), &[k, k], "aggregate matrix shape");
            let mut out = vec![0.0; t * k * c];
            for s in 0..t {
                for i in 0..k {
                    for j in 0..k {
                        let aij = mat.data()[i * k + j];
                        for ch in 0..c {
                            out[s * k * c + i * c + ch] += aij * x.data()[s * k * c + j * c + ch];
                        }
                    }
                }
            }
            Tensor::new(x.shape(), out)
        };
        self.unary(v, Op::Aggregate(self.id, mat.clone()))
    }

    pub fn repeat_rows(&self, rows: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            assert_eq!(x.shape()[0], 1, "repeat_rows expects a single row");
            let d = x.numel();
            let mut out = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                out.extend_from_slice(x.data());
            }
            Tensor::new(&[rows, d], out)
        };
        self.unary(v, Op::RepeatRows(self.id))
    }

    /// Expands packed upper-triangular rows into symmetric matrices.
    pub fn sym_from_upper(&self, n: usize) -> Var<'t> {
        let v = {
            let x = &self.tape.nodes.borrow()[self.id].value;
            let batch = x.shape()[0];
            let tri = n * (n + 1) / 2;
            assert_eq!(x.shape()[1], tri, "packed length for n={n}");
            let mut out = vec![0.0; batch * n * n];
            for s in 0..batch {
                let mut u = 0usize;
                for i in 0..n {
                    for j in i..n {
                        let val = x.data()[s * tri + u];
                        out[s * n * n + i * n + j] = val;
                        out[s * n * n + j * n + i] = val;
                        u += 1;
                    }
                }
            }
            Tensor::new(&[batch, n, n], out)
        };
        self.unary(v, Op::SymFromUpper(self.id, n))
    }

    /// Mean squared error over all elements, scalar output.
    pub fn mse(&self, other: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
            let s: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            Tensor::scalar(s / a.numel() as f64)
        };
        self.binary(other, v, Op::Mse(self.id, other.id))
    }

    /// Mean cross-entropy of logits [b, c] against integer labels,
    /// computed with the log-sum-exp trick.
    pub fn cross_entropy(&self, labels: &[usize]) -> Var<'t> {
        let v = {
            let z = &self.tape.nodes.borrow()[self.id].value;
            let (b, c) = (z.shape()[0], z.shape()[1]);
            assert_eq!(b, labels.len(), "label count");
            let mut total = 0.0;
            for (r, &lab) in labels.iter().enumerate() {
                assert!(lab < c, "label {lab} out of range {c}");
                let row = &z.data()[r * c..(r + 1) * c];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
                total += lse - row[lab];
            }
            Tensor::scalar(total / b as f64)
        };
        self.unary(v, Op::CrossEntropy(self.id, labels.to_vec()))
    }
}

/// Concatenates along `axis`. All parts must live on the same tape.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    for p in parts {
        assert!(std::ptr::eq(tape, p.tape), "vars from different tapes");
    }
    let (value, ids) = {
        let nodes = tape.nodes.borrow();
        let first = nodes[parts[0].id].value.shape().to_vec();
        let (outer, _, inner) = axis_split(&first, axis);
        let total_len: usize = parts
            .iter()
            .map(|p| nodes[p.id].value.shape()[axis])
            .sum();
        let mut shape = first.clone();
        shape[axis] = total_len;
        let mut out = vec![0.0; outer * total_len * inner];
        let mut offset = 0usize;
        for p in parts {
            let pv = &nodes[p.id].value;
            let plen = pv.shape()[axis];
            for o in 0..outer {
                for l in 0..plen {
                    let dst = (o * total_len + offset + l) * inner;
                    let src = (o * plen + l) * inner;
                    out[dst..dst + inner].copy_from_slice(&pv.data()[src..src + inner]);
                }
            }
            offset += plen;
        }
        (Tensor::new(&shape, out), parts.iter().map(|p| p.id).collect::<Vec<_>>())
    };
    let rg = tape.rg(&ids);
    tape.push(value, Op::Concat(ids, axis), rg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn relu_gradient_gates() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(&[4], vec![-1.0, -0.5, 0.5, 2.0]));
        let loss = x.relu().mean_all();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = Rng::new(4);
        let tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[3, 8], -2.0, 2.0, &mut rng));
        let y = x.layer_norm(1).value();
        for r in 0..3 {
            let row = &y.data()[r * 8..(r + 1) * 8];
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(8);
        let tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[5, 7], -3.0, 3.0, &mut rng));
        let y = x.softmax(1).value();
        for r in 0..5 {
            let s: f64 = y.data()[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_chain_backward_matches_hand_derivation() {
        // loss = mean(A @ B) for 1x2 @ 2x1: d loss / dA = B^T, / dB = A^T.
        let tape = Tape::new();
        let a = tape.param(Tensor::new(&[1, 2], vec![2.0, 3.0]));
        let b = tape.param(Tensor::new(&[2, 1], vec![5.0, 7.0]));
        let loss = a.matmul(b).mean_all();
        let g = tape.backward(loss);
        assert_eq!(g.get(a).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let z = tape.param(Tensor::zeros(&[1, 4]));
        let loss = z.cross_entropy(&[2]);
        assert!((loss.item() - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(3.0));
        let p = tape.param(Tensor::scalar(2.0));
        let loss = c.mul(p).mean_all();
        let g = tape.backward(loss);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[3.0]);
    }

    #[test]
    fn ops_do_not_mutate_inputs() {
        let mut rng = Rng::new(17);
        let a0 = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let b0 = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let tape = Tape::new();
        let a = tape.param(a0.clone());
        let b = tape.param(b0.clone());
        let loss = a.matmul(b).relu().layer_norm(1).softmax(1).mean_all();
        let _ = tape.backward(loss);
        assert_eq!(a.value(), a0);
        assert_eq!(b.value(), b0);
    }
}
