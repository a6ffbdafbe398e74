//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation is evaluated eagerly when it is appended, so the node list
//! is a topological order by construction. `backward` walks it once in
//! reverse and accumulates vector-Jacobian products.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Transpose(NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    MeanPoolTime(NodeId),
    L2NormalizeRows(NodeId),
    Concat(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    ScaleShift {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    ScaleConst(NodeId, f64),
    Softmax(NodeId),
    Nll {
        probs: NodeId,
        targets: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    Sum(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Conv1d { .. } => "conv1d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MeanPoolTime(_) => "mean_pool_time",
            Op::L2NormalizeRows(_) => "l2_normalize",
            Op::Concat(..) => "concat",
            Op::Mul(..) => "mul",
            Op::Add(..) => "add",
            Op::ScaleShift { .. } => "scale_shift",
            Op::ScaleConst(..) => "scale_const",
            Op::Softmax(_) => "softmax",
            Op::Nll { .. } => "nll",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SelectRows { .. } => "select_rows",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients keyed by parameter.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Tensor> {
        self.grads.remove(&id)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    warnings: Vec<String>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Non-fatal conditions met during the forward pass (e.g. zero-norm rows).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Inserts a trainable parameter leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.get(id).clone(), true)
    }

    /// Inserts a parameter as a constant; it receives no gradient.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Constant, store.get(id).clone(), false)
    }

    /// `x[B,in] * w[in,out] + b[out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.shape()[0] || bv.len() != wv.cols() {
            return Err(self.shape_err(
                "affine",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        matmul_acc(xv.data(), wv.data(), &mut out, m, k, n);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Op::Affine { x, w, b }, Tensor::new(vec![m, n], out)?, rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.shape()[0] {
            return Err(self.shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul { a, b }, Tensor::new(vec![m, n], out)?, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(self.shape_err("transpose", format!("rank {}", av.rank())));
        }
        let (r, c) = (av.rows(), av.cols());
        let t = transpose_data(av.data(), r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Transpose(a), Tensor::new(vec![c, r], t)?, rg))
    }

    /// Valid 1-D convolution over time.
    ///
    /// `x` is `[B, T, C_in]`, `w` is `[kernel * C_in, C_out]` (row index
    /// `k * C_in + c`), `b` is `[C_out]`. Output is `[B, T_out, C_out]` with
    /// `T_out = (T - kernel) / stride + 1`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 3 || wv.rank() != 2 || kernel == 0 || stride == 0 {
            return Err(self.shape_err(
                "conv1d",
                format!(
                    "x {:?}, w {:?}, kernel {kernel}, stride {stride}",
                    xv.shape(),
                    wv.shape()
                ),
            ));
        }
        let (batch, t, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let cout = wv.cols();
        if wv.shape()[0] != kernel * cin || bv.len() != cout || t < kernel {
            return Err(self.shape_err(
                "conv1d",
                format!(
                    "x {:?}, w {:?}, b {:?}, kernel {kernel}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            ));
        }
        let t_out = (t - kernel) / stride + 1;
        let win = kernel * cin;
        let mut out = vec![0.0; batch * t_out * cout];
        for bi in 0..batch {
            let xb = &xv.data()[bi * t * cin..(bi + 1) * t * cin];
            for to in 0..t_out {
                let window = &xb[to * stride * cin..to * stride * cin + win];
                let orow = &mut out[(bi * t_out + to) * cout..(bi * t_out + to + 1) * cout];
                orow.copy_from_slice(bv.data());
                matmul_acc(window, wv.data(), orow, 1, win, cout);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
            },
            Tensor::new(vec![batch, t_out, cout], out)?,
            rg,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), v, rg)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    /// `[B, T, C] -> [B, C]` average over the time axis.
    pub fn mean_pool_time(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 3 || av.shape()[1] == 0 {
            return Err(self.shape_err("mean_pool_time", format!("{:?}", av.shape())));
        }
        let (batch, t, c) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let mut out = vec![0.0; batch * c];
        for bi in 0..batch {
            let o = &mut out[bi * c..(bi + 1) * c];
            for ti in 0..t {
                let row = &av.data()[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for (x, y) in o.iter_mut().zip(row) {
                    *x += y;
                }
            }
            for x in o.iter_mut() {
                *x /= t as f64;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::MeanPoolTime(a), Tensor::new(vec![batch, c], out)?, rg))
    }

    /// Normalizes each row (last axis) to unit L2 norm. Zero rows stay zero
    /// and are reported through [`Graph::warnings`].
    pub fn l2_normalize(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.data().to_vec();
        let mut zero_rows = 0;
        for row in out.chunks_mut(c.max(1)) {
            let n = dot(row, row).sqrt();
            if n == 0.0 {
                zero_rows += 1;
            } else {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let shape = av.shape().to_vec();
        if zero_rows > 0 {
            self.warnings.push(format!(
                "l2_normalize at node {}: {zero_rows} zero row(s) left as zero",
                self.nodes.len()
            ));
        }
        let rg = self.rg(&[a]);
        self.push(Op::L2NormalizeRows(a), Tensor::new(shape, out).expect("same shape"), rg)
    }

    /// Concatenates two `[R, *]` matrices along columns.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows() {
            return Err(self.shape_err("concat", format!("{:?} and {:?}", av.shape(), bv.shape())));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Concat(a, b), Tensor::new(vec![r, ca + cb], out)?, rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    /// `scale * x + shift` with scalar (single-element) `scale` and `shift`.
    pub fn scale_shift(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        if self.value(scale).len() != 1 || self.value(shift).len() != 1 {
            return Err(self.shape_err(
                "scale_shift",
                format!(
                    "scale {:?} and shift {:?} must be scalars",
                    self.value(scale).shape(),
                    self.value(shift).shape()
                ),
            ));
        }
        let (s, t) = (self.value(scale).item(), self.value(shift).item());
        let v = self.map(x, |v| s * v + t);
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(Op::ScaleShift { x, scale, shift }, v, rg))
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| c * x);
        let rg = self.rg(&[a]);
        self.push(Op::ScaleConst(a, c), v, rg)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let c = av.cols().max(1);
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let v = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(Op::Softmax(a), v, rg)
    }

    fn check_targets(&self, op: &'static str, a: NodeId, targets: &[usize]) -> Result<()> {
        let av = self.value(a);
        if av.rank() != 2 || av.rows() != targets.len() || targets.is_empty() {
            return Err(self.shape_err(op, format!("input {:?} with {} targets", av.shape(), targets.len())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= av.cols()) {
            return Err(self.shape_err(op, format!("target {t} out of range for {} classes", av.cols())));
        }
        Ok(())
    }

    /// Mean negative log-likelihood of `targets` under row probabilities.
    pub fn nll(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.check_targets("nll", probs, targets)?;
        let pv = self.value(probs);
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -pv.row(i)[t].ln())
            .sum::<f64>()
            / n;
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Fused, numerically stable softmax + mean negative log-likelihood.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.check_targets("softmax_cross_entropy", logits, targets)?;
        let lv = self.value(logits);
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = lv.row(i);
                log_sum_exp(row) - row[t]
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 || rows.iter().any(|&r| r >= xv.rows()) {
            return Err(self.shape_err("select_rows", format!("{:?}, rows {rows:?}", xv.shape())));
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        let v = Tensor::new(vec![rows.len(), c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SelectRows { x, rows: rows.to_vec() }, v, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Pairwise cosine similarity `[N, d] x [M, d] -> [N, M]`.
    pub fn cosine_matrix(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let na = self.l2_normalize(a);
        let nb = self.l2_normalize(b);
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// Reverse pass from a scalar node. Returns gradients for every trainable
    /// parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss {
                node: loss.0,
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => match grads.grads.get_mut(pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.grads.insert(*pid, g);
                    }
                },
                op => {
                    for (input, contrib) in self.vjp(op, &node.value, &g)? {
                        if !self.nodes[input.0].requires_grad {
                            continue;
                        }
                        match &mut adj[input.0] {
                            Some(acc) => acc.add_assign(&contrib),
                            slot => *slot = Some(contrib),
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    fn vjp(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let gd = g.data();
        let like = |id: NodeId, data: Vec<f64>| Tensor::new(self.value(id).shape().to_vec(), data);
        Ok(match op {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                let mut dx = vec![0.0; m * k];
                matmul_nt_acc(gd, wv.data(), &mut dx, m, n, k);
                let mut dw = vec![0.0; k * n];
                matmul_tn_acc(xv.data(), gd, &mut dw, m, k, n);
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*x, like(*x, dx)?), (*w, like(*w, dw)?), (*b, like(*b, db)?)]
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; m * k];
                matmul_nt_acc(gd, bv.data(), &mut da, m, n, k);
                let mut db = vec![0.0; k * n];
                matmul_tn_acc(av.data(), gd, &mut db, m, k, n);
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                vec![(*a, like(*a, transpose_data(gd, r, c))?)]
            }
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, t, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (t_out, cout) = (out.shape()[1], out.shape()[2]);
                let win = kernel * cin;
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; cout];
                for bi in 0..batch {
                    let xb = &xv.data()[bi * t * cin..(bi + 1) * t * cin];
                    for to in 0..t_out {
                        let grow = &gd[(bi * t_out + to) * cout..(bi * t_out + to + 1) * cout];
                        let start = bi * t * cin + to * stride * cin;
                        for (d, v) in db.iter_mut().zip(grow) {
                            *d += v;
                        }
                        let window = &xb[to * stride * cin..to * stride * cin + win];
                        matmul_tn_acc(window, grow, &mut dw, 1, win, cout);
                        matmul_nt_acc(grow, wv.data(), &mut dx[start..start + win], 1, cout, win);
                    }
                }
                vec![(*x, like(*x, dx)?), (*w, like(*w, dw)?), (*b, like(*b, db)?)]
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = av
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*a, like(*a, d)?)]
            }
            Op::Sigmoid(a) => {
                let d = out.data().iter().zip(gd).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                vec![(*a, like(*a, d)?)]
            }
            Op::MeanPoolTime(a) => {
                let av = self.value(*a);
                let (batch, t, c) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let mut d = vec![0.0; av.len()];
                for bi in 0..batch {
                    let grow = &gd[bi * c..(bi + 1) * c];
                    for ti in 0..t {
                        let drow = &mut d[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                        for (x, &gv) in drow.iter_mut().zip(grow) {
                            *x = gv / t as f64;
                        }
                    }
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::L2NormalizeRows(a) => {
                let av = self.value(*a);
                let c = av.cols().max(1);
                let mut d = vec![0.0; av.len()];
                for ((drow, xrow), (yrow, grow)) in d
                    .chunks_mut(c)
                    .zip(av.data().chunks(c))
                    .zip(out.data().chunks(c).zip(gd.chunks(c)))
                {
                    let n = dot(xrow, xrow).sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let yg = dot(yrow, grow);
                    for ((dv, &y), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = (gv - y * yg) / n;
                    }
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in gd.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = bv.data().iter().zip(gd).map(|(y, g)| y * g).collect();
                let db = av.data().iter().zip(gd).map(|(x, g)| x * g).collect();
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::Add(a, b) => vec![(*a, like(*a, gd.to_vec())?), (*b, like(*b, gd.to_vec())?)],
            Op::ScaleShift { x, scale, shift } => {
                let xv = self.value(*x);
                let s = self.value(*scale).item();
                let dx = gd.iter().map(|g| s * g).collect();
                let ds = dot(xv.data(), gd);
                let dt = gd.iter().sum();
                vec![
                    (*x, like(*x, dx)?),
                    (*scale, like(*scale, vec![ds])?),
                    (*shift, like(*shift, vec![dt])?),
                ]
            }
            Op::ScaleConst(a, c) => vec![(*a, like(*a, gd.iter().map(|g| c * g).collect())?)],
            Op::Softmax(a) => {
                let c = out.cols().max(1);
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(gd.chunks(c)) {
                    let yg = dot(yrow, grow);
                    for ((dv, &y), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = y * (gv - yg);
                    }
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::Nll { probs, targets } => {
                let pv = self.value(*probs);
                let c = pv.cols();
                let n = targets.len() as f64;
                let mut d = vec![0.0; pv.len()];
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] = -gd[0] / (n * pv.row(i)[t]);
                }
                vec![(*probs, like(*probs, d)?)]
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let n = targets.len() as f64;
                let mut d = lv.data().to_vec();
                for (i, &t) in targets.iter().enumerate() {
                    let row = &mut d[i * c..(i + 1) * c];
                    softmax_in_place(row);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= gd[0] / n);
                }
                vec![(*logits, like(*logits, d)?)]
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (dv, gv) in d[r * c..(r + 1) * c].iter_mut().zip(&gd[i * c..(i + 1) * c]) {
                        *dv += gv;
                    }
                }
                vec![(*x, like(*x, d)?)]
            }
            Op::Sum(a) => vec![(*a, like(*a, vec![gd[0]; self.value(*a).len()])?)],
        })
    }

    /// Name of the operation that produced `id`; used in diagnostics.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}

fn transpose_data(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = data[i * c + j];
        }
    }
    t
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn affine_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_and_softmax() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 3.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = g.softmax(z);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn normalize_and_cosine() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let n = g.l2_normalize(x);
        let v = g.value(n).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);

        let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
        let c = g.cosine_matrix(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[0.0]);
    }

    #[test]
    fn zero_row_normalizes_to_zero_with_warning() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let n = g.l2_normalize(x);
        assert_eq!(g.value(n).data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.warnings().len(), 1);
    }

    #[test]
    fn identity_kernel_conv() {
        let seq = vec![0.5, -1.0, 2.0, 3.5, 0.0];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 5, 1], seq.clone()).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0]));
        let y = g.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), seq.as_slice());
        assert_eq!(g.value(y).shape(), &[1, 5, 1]);
    }

    #[test]
    fn conv_output_length() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 10, 3]));
        let w = g.constant(Tensor::zeros(&[9, 4]));
        let b = g.constant(Tensor::zeros(&[4]));
        let y = g.conv1d(x, w, b, 3, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 4]);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        match g.affine(x, w, b) {
            Err(Error::Shape { node, op, .. }) => {
                assert_eq!(node, 3);
                assert_eq!(op, "affine");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let (store, id) = store_with("p", Tensor::vector(vec![0.3, -2.0, 5.0]));
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_half_squared_norm() {
        let (store, id) = store_with("p", Tensor::vector(vec![1.0, -2.0]));
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let l = g.scale_const(s, 0.5);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn cross_entropy_gradient_on_uniform_logits() {
        let (store, id) = store_with("logits", Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        for fused in [false, true] {
            let mut g = Graph::new();
            let z = g.param(&store, id);
            let l = if fused {
                g.softmax_cross_entropy(z, &[0]).unwrap()
            } else {
                let p = g.softmax(z);
                g.nll(p, &[0]).unwrap()
            };
            assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
            let grads = g.backward(l).unwrap();
            let d = grads.get(id).unwrap().data();
            assert!((d[0] + 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, id) = store_with("p", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let p = g.param(&store, id);
        assert!(matches!(g.backward(p), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let (store, id) = store_with("p", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let p = g.frozen(&store, id);
        let q = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let s = g.mul(p, q).unwrap();
        let l = g.sum(s);
        assert!(g.backward(l).unwrap().is_empty());
    }
}
