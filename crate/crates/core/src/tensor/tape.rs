use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Adds a `[cols]` vector to every row.
    AddRow(usize, usize),
    /// Multiplies every row elementwise by a `[cols]` vector.
    MulRow(usize, usize),
    MatMul(usize, usize),
    /// `a * b^T`
    MatMulNt(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    SoftmaxRows(usize, f64),
    LogSoftmaxRows(usize),
    SliceCols(usize, usize),
    ConcatLast(usize, usize),
    ConcatRows(Vec<usize>),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Gather(usize, Vec<usize>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order. Node ids are indices,
/// so inputs always precede the nodes that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

fn cols_of(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that participates in differentiation.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, false)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to another tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        // Only leaves that asked for gradients keep them.
        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            }
        }
        for (id, node) in nodes.iter().enumerate().take(loss.id + 1) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, nodes: &[Node], delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, nodes, g.to_vec());
            accumulate(grads, *b, nodes, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, nodes, g.to_vec());
            accumulate(grads, *b, nodes, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, *a, nodes, g.iter().zip(vb).map(|(g, y)| g * y).collect());
            accumulate(grads, *b, nodes, g.iter().zip(va).map(|(g, x)| g * x).collect());
        }
        Op::AddRow(a, r) => {
            accumulate(grads, *a, nodes, g.to_vec());
            let c = nodes[*r].value.len();
            let mut dr = vec![0.0; c];
            for row in g.chunks(c) {
                for (d, v) in dr.iter_mut().zip(row) {
                    *d += v;
                }
            }
            accumulate(grads, *r, nodes, dr);
        }
        Op::MulRow(a, r) => {
            let (va, vr) = (&nodes[*a].value, &nodes[*r].value);
            let c = vr.len();
            let da = g
                .chunks(c)
                .flat_map(|row| row.iter().zip(vr).map(|(g, s)| g * s))
                .collect();
            accumulate(grads, *a, nodes, da);
            let mut dr = vec![0.0; c];
            for (grow, arow) in g.chunks(c).zip(va.chunks(c)) {
                for j in 0..c {
                    dr[j] += grow[j] * arow[j];
                }
            }
            accumulate(grads, *r, nodes, dr);
        }
        Op::MatMul(a, b) => {
            // c[m,n] = a[m,k] b[k,n]
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let n = cols_of(&node.shape);
            let k = cols_of(&nodes[*a].shape);
            let m = va.len() / k;
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * vb[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                accumulate(grads, *a, nodes, da);
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = va[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += x * g[i * n + j];
                        }
                    }
                }
                accumulate(grads, *b, nodes, db);
            }
        }
        Op::MatMulNt(a, b) => {
            // c[m,n] = sum_p a[m,p] b[n,p]
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let n = cols_of(&node.shape);
            let k = cols_of(&nodes[*a].shape);
            let m = va.len() / k;
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += gij * vb[j * k + p];
                        }
                    }
                }
                accumulate(grads, *a, nodes, da);
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for p in 0..k {
                            db[j * k + p] += gij * va[i * k + p];
                        }
                    }
                }
                accumulate(grads, *b, nodes, db);
            }
        }
        Op::Scale(a, s) => accumulate(grads, *a, nodes, g.iter().map(|v| v * s).collect()),
        Op::Relu(a) => {
            let va = &nodes[*a].value;
            let d = g
                .iter()
                .zip(va)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, *a, nodes, d);
        }
        Op::Sigmoid(a) => {
            let d = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
            accumulate(grads, *a, nodes, d);
        }
        Op::Tanh(a) => {
            let d = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            accumulate(grads, *a, nodes, d);
        }
        Op::Square(a) => {
            let va = &nodes[*a].value;
            let d = g.iter().zip(va).map(|(g, x)| 2.0 * g * x).collect();
            accumulate(grads, *a, nodes, d);
        }
        Op::SoftmaxRows(a, scale) => {
            let c = cols_of(&node.shape);
            let mut d = vec![0.0; out.len()];
            for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for j in 0..c {
                    drow[j] = yrow[j] * (grow[j] - dot) / scale;
                }
            }
            accumulate(grads, *a, nodes, d);
        }
        Op::LogSoftmaxRows(a) => {
            let c = cols_of(&node.shape);
            let mut d = vec![0.0; out.len()];
            for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                let gsum: f64 = grow.iter().sum();
                for j in 0..c {
                    drow[j] = grow[j] - yrow[j].exp() * gsum;
                }
            }
            accumulate(grads, *a, nodes, d);
        }
        Op::SliceCols(a, start) => {
            let c_in = cols_of(&nodes[*a].shape);
            let c = cols_of(&node.shape);
            let mut d = vec![0.0; nodes[*a].value.len()];
            for (drow, grow) in d.chunks_mut(c_in).zip(g.chunks(c)) {
                drow[*start..*start + c].copy_from_slice(grow);
            }
            accumulate(grads, *a, nodes, d);
        }
        Op::ConcatLast(a, b) => {
            let ca = cols_of(&nodes[*a].shape);
            let cb = cols_of(&nodes[*b].shape);
            let mut da = Vec::with_capacity(nodes[*a].value.len());
            let mut db = Vec::with_capacity(nodes[*b].value.len());
            for grow in g.chunks(ca + cb) {
                da.extend_from_slice(&grow[..ca]);
                db.extend_from_slice(&grow[ca..]);
            }
            accumulate(grads, *a, nodes, da);
            accumulate(grads, *b, nodes, db);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                accumulate(grads, p, nodes, g[offset..offset + n].to_vec());
                offset += n;
            }
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, *a, nodes, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            accumulate(grads, *a, nodes, vec![g[0] / n as f64; n]);
        }
        Op::MeanRows(a) => {
            let c = cols_of(&node.shape);
            let n = nodes[*a].value.len();
            let r = (n / c) as f64;
            let d = (0..n).map(|i| g[i % c] / r).collect();
            accumulate(grads, *a, nodes, d);
        }
        Op::Gather(a, idx) => {
            let mut d = vec![0.0; nodes[*a].value.len()];
            for (gi, &i) in g.iter().zip(idx) {
                d[i] += gi;
            }
            accumulate(grads, *a, nodes, d);
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`]. Only leaves recorded
/// with `requires_grad` carry a gradient.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Stores the gradient for `v` on `t`, replacing any previous one.
    pub fn write_into(&self, v: Var<'_>, t: &mut Tensor) {
        t.grad = self.get(v).map(|g| g.to_vec());
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn cols(&self) -> usize {
        cols_of(&self.tape.nodes.borrow()[self.id].shape)
    }

    pub fn rows(&self) -> usize {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        n.value.len() / cols_of(&n.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    /// The single value of a scalar node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    fn unary(self, op: Op, f: impl Fn(&[f64]) -> Vec<f64>) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), f(&n.value))
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(shape, value, op, rg)
    }

    fn zip_same(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            let v = a.value.iter().zip(&b.value).map(|(x, y)| f(*x, *y)).collect();
            (a.shape.clone(), v)
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(shape, value, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_same(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    fn row_broadcast(
        self,
        row: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id], &nodes[row.id]);
            let c = cols_of(&a.shape);
            if r.value.len() != c {
                return Err(Error::shape(name, &a.shape, &r.shape));
            }
            let v = a
                .value
                .chunks(c)
                .flat_map(|x| x.iter().zip(&r.value).map(|(x, y)| f(*x, *y)))
                .collect();
            (a.shape.clone(), v)
        };
        let rg = self.tape.rg(&[self.id, row.id]);
        Ok(self.tape.push(shape, value, op, rg))
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.row_broadcast(row, "add_row", Op::AddRow(self.id, row.id), |a, b| a + b)
    }

    /// Multiplies every row elementwise by a `[cols]` vector.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.row_broadcast(row, "mul_row", Op::MulRow(self.id, row.id), |a, b| a * b)
    }

    /// `[..., k] x [k, n] -> [..., n]`
    pub fn matmul(self, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[b.id]);
            let k = cols_of(&na.shape);
            if nb.shape.len() != 2 || nb.shape[0] != k {
                return Err(Error::shape("matmul", &na.shape, &nb.shape));
            }
            let n = nb.shape[1];
            let m = na.value.len() / k;
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = na.value[i * k + p];
                    let brow = &nb.value[p * n..(p + 1) * n];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += x * bv;
                    }
                }
            }
            let mut shape = na.shape.clone();
            match shape.last_mut() {
                Some(last) => *last = n,
                None => shape.push(n),
            }
            (shape, c)
        };
        let rg = self.tape.rg(&[self.id, b.id]);
        Ok(self.tape.push(shape, value, Op::MatMul(self.id, b.id), rg))
    }

    /// `[..., k] x [n, k]^T -> [..., n]`
    pub fn matmul_nt(self, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[b.id]);
            let k = cols_of(&na.shape);
            if nb.shape.len() != 2 || nb.shape[1] != k {
                return Err(Error::shape("matmul_nt", &na.shape, &nb.shape));
            }
            let n = nb.shape[0];
            let m = na.value.len() / k;
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                let arow = &na.value[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &nb.value[j * k..(j + 1) * k];
                    c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
            let mut shape = na.shape.clone();
            match shape.last_mut() {
                Some(last) => *last = n,
                None => shape.push(n),
            }
            (shape, c)
        };
        let rg = self.tape.rg(&[self.id, b.id]);
        Ok(self.tape.push(shape, value, Op::MatMulNt(self.id, b.id), rg))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x.iter().map(|v| v * s).collect())
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.iter().map(|v| v.max(0.0)).collect())
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| x.iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |x| x.iter().map(|v| v.tanh()).collect())
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x.iter().map(|v| v * v).collect())
    }

    /// Row-wise softmax of `x / scale` along the last axis.
    pub fn softmax_rows(self, scale: f64) -> Var<'t> {
        let c = self.cols();
        self.unary(Op::SoftmaxRows(self.id, scale), |x| {
            let mut out = Vec::with_capacity(x.len());
            for row in x.chunks(c) {
                softmax_into(row, scale, &mut out);
            }
            out
        })
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        let c = self.cols();
        self.unary(Op::LogSoftmaxRows(self.id), |x| {
            let mut out = Vec::with_capacity(x.len());
            for row in x.chunks(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                out.extend(row.iter().map(|v| v - lse));
            }
            out
        })
    }

    /// Columns `start..start+len` of every row.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let c = cols_of(&n.shape);
            if len == 0 || start + len > c {
                return Err(Error::shape("slice_cols", &n.shape, &[start, len]));
            }
            let v = n
                .value
                .chunks(c)
                .flat_map(|r| r[start..start + len].iter().copied())
                .collect();
            let mut shape = n.shape.clone();
            *shape.last_mut().expect("non-scalar") = len;
            (shape, v)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(shape, value, Op::SliceCols(self.id, start), rg))
    }

    /// Joins along the last axis; leading axes must agree.
    pub fn concat_last(self, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (na, nb) = (&nodes[self.id], &nodes[b.id]);
            let (ca, cb) = (cols_of(&na.shape), cols_of(&nb.shape));
            let lead_a = &na.shape[..na.shape.len().saturating_sub(1)];
            let lead_b = &nb.shape[..nb.shape.len().saturating_sub(1)];
            if lead_a != lead_b {
                return Err(Error::shape("concat_last", &na.shape, &nb.shape));
            }
            let mut v = Vec::with_capacity(na.value.len() + nb.value.len());
            for (ra, rb) in na.value.chunks(ca).zip(nb.value.chunks(cb)) {
                v.extend_from_slice(ra);
                v.extend_from_slice(rb);
            }
            let mut shape = na.shape.clone();
            *shape.last_mut().expect("non-scalar") = ca + cb;
            (shape, v)
        };
        let rg = self.tape.rg(&[self.id, b.id]);
        Ok(self.tape.push(shape, value, Op::ConcatLast(self.id, b.id), rg))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| vec![x.iter().sum()])
            .reshaped_scalar()
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |x| vec![x.iter().sum::<f64>() / x.len() as f64])
            .reshaped_scalar()
    }

    /// Column means over all rows: `[..., c] -> [1, c]`.
    pub fn mean_rows(self) -> Var<'t> {
        let c = self.cols();
        let out = self.unary(Op::MeanRows(self.id), |x| {
            let r = (x.len() / c) as f64;
            let mut m = vec![0.0; c];
            for row in x.chunks(c) {
                for (a, v) in m.iter_mut().zip(row) {
                    *a += v;
                }
            }
            m.iter().map(|v| v / r).collect()
        });
        out.tape.nodes.borrow_mut()[out.id].shape = vec![1, c];
        out
    }

    /// Flat-index gather, producing a `[idx.len()]` vector.
    pub fn gather(self, idx: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            if let Some(&bad) = idx.iter().find(|&&i| i >= n.value.len()) {
                return Err(Error::shape("gather", &n.shape, &[bad]));
            }
            idx.iter().map(|&i| n.value[i]).collect()
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self
            .tape
            .push(vec![idx.len()], value, Op::Gather(self.id, idx.to_vec()), rg))
    }

    fn reshaped_scalar(self) -> Var<'t> {
        self.tape.nodes.borrow_mut()[self.id].shape = vec![];
        self
    }
}

/// Stacks row blocks; all parts must share the trailing dimension.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
    let tape = first.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let c = cols_of(&nodes[first.id].shape);
        let mut v = Vec::new();
        for p in parts {
            let n = &nodes[p.id];
            if cols_of(&n.shape) != c {
                return Err(Error::shape("concat_rows", &nodes[first.id].shape, &n.shape));
            }
            v.extend_from_slice(&n.value);
        }
        (vec![v.len() / c, c], v)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.rg(&ids);
    Ok(tape.push(shape, value, Op::ConcatRows(ids), rg))
}

/// Feed-forward stack `(W, b)` per layer, ReLU between layers, linear output.
pub fn mlp_forward<'t>(layers: &[(Var<'t>, Var<'t>)], x: Var<'t>) -> Result<Var<'t>> {
    let mut h = x;
    for (i, (w, b)) in layers.iter().enumerate() {
        h = h.matmul(*w)?.add_row(*b)?;
        if i + 1 < layers.len() {
            h = h.relu();
        }
    }
    Ok(h)
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_into(row: &[f64], scale: f64, out: &mut Vec<f64>) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for v in row {
        let e = ((v - m) / scale).exp();
        sum += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= sum;
    }
}
