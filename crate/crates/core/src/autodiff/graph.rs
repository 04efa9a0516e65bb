use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Constant(Tensor),
    Affine,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Sigmoid,
    Relu,
    Softplus,
    Sum,
    Mean,
    SumRows,
    LogSumExpRows,
    SoftmaxRows(f64),
    Reshape(Vec<usize>),
    TileRows(usize),
    SliceCols { start: usize, len: usize },
    BceWithLogits,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Affine => "affine",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumRows => "sum_rows",
            Op::LogSumExpRows => "logsumexp_rows",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Reshape(_) => "reshape",
            Op::TileRows(_) => "tile_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::BceWithLogits => "bce_with_logits",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Option<Tensor>,
}

/// A recorded computation over named input tensors.
///
/// Nodes are appended in topological order: every operation refers only to
/// nodes created before it. [`Graph::forward`] binds the inputs and caches
/// every node value; [`Graph::backward`] then walks the nodes in reverse.
/// Graphs are cheap to build and are rebuilt for every minibatch.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
    evaluated: bool,
}

pub type Inputs = BTreeMap<String, Tensor>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, parents: &[NodeId]) -> NodeId {
        for p in parents {
            assert!(p.0 < self.nodes.len(), "parent node does not belong to this graph");
        }
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            parents: parents.iter().map(|p| p.0).collect(),
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A named leaf bound at [`Graph::forward`] time.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), &[])
    }

    /// A leaf whose value is fixed at construction. Gradients are not reported for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value), &[])
    }

    /// Registers `node` under `name` in the map returned by [`Graph::forward`].
    pub fn mark_output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.to_string(), node);
    }

    /// `x W + b` with `x: n×i`, `W: i×o`, `b` of length `o` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine, &[x, w, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(c), &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(c), &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, &[x])
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softplus, &[x])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, &[x])
    }

    /// Row sums of an `n×m` matrix, shape `n×1`.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumRows, &[x])
    }

    /// Row-wise `log Σ exp`, shape `n×1`, computed on max-shifted rows.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> NodeId {
        self.push(Op::LogSumExpRows, &[x])
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, x: NodeId, temperature: f64) -> NodeId {
        assert!(temperature > 0.0, "softmax temperature must be positive");
        self.push(Op::SoftmaxRows(temperature), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(shape.to_vec()), &[x])
    }

    /// Stacks `copies` copies of an `n×m` matrix into `(copies·n)×m`.
    pub fn tile_rows(&mut self, x: NodeId, copies: usize) -> NodeId {
        self.push(Op::TileRows(copies), &[x])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceCols { start, len }, &[x])
    }

    /// Elementwise Bernoulli negative log-likelihood `softplus(l) - t·l`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::BceWithLogits, &[logits, targets])
    }

    /// Cached value of `node` after [`Graph::forward`].
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(|n| n.value.as_ref())
    }

    /// Gradient stored on the first leaf named `name` by the last [`Graph::backward`].
    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.nodes.iter().find_map(|n| match &n.op {
            Op::Input(k) if k == name => n.value.as_ref().and_then(|v| v.grad()),
            _ => None,
        })
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input(k) => Some(k.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Evaluates every node with `inputs` bound to the named leaves.
    ///
    /// Returns the tensors registered through [`Graph::mark_output`].
    pub fn forward(&mut self, inputs: &Inputs) -> Result<BTreeMap<String, Tensor>> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let value = self.eval_node(i, inputs)?;
            if !value.all_finite() {
                return Err(Error::NonFinite {
                    op: self.nodes[i].op.name(),
                    node: i,
                });
            }
            self.nodes[i].value = Some(value);
        }
        self.evaluated = true;
        Ok(self
            .outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.nodes[id.0].value.clone().unwrap()))
            .collect())
    }

    fn val(&self, i: usize) -> &Tensor {
        self.nodes[i].value.as_ref().unwrap()
    }

    fn eval_node(&self, i: usize, inputs: &Inputs) -> Result<Tensor> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let op = node.op.name();
        let unary = |f: &dyn Fn(f64) -> f64| {
            let x = self.val(p[0]);
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        };
        match &node.op {
            Op::Input(name) => {
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::MissingInput(name.clone()))?;
                let mut t = t.clone();
                t.clear_grad();
                Ok(t)
            }
            Op::Constant(t) => Ok(t.clone()),
            Op::Affine => {
                let (x, w, b) = (self.val(p[0]), self.val(p[1]), self.val(p[2]));
                let (n, k) = dims2(x, op)?;
                let (k2, m) = dims2(w, op)?;
                if k != k2 || b.len() != m {
                    return Err(shape_err(op, format!("{:?} · {:?} + {:?}", x.shape(), w.shape(), b.shape())));
                }
                let mut out = matmul_raw(x.data(), w.data(), n, k, m);
                for row in out.chunks_mut(m) {
                    for (o, bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Tensor::matrix(n, m, out)
            }
            Op::MatMul => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                let (n, k) = dims2(a, op)?;
                let (k2, m) = dims2(b, op)?;
                if k != k2 {
                    return Err(shape_err(op, format!("{:?} · {:?}", a.shape(), b.shape())));
                }
                Tensor::matrix(n, m, matmul_raw(a.data(), b.data(), n, k, m))
            }
            Op::Add | Op::Sub | Op::Mul | Op::BceWithLogits => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                if a.shape() != b.shape() {
                    return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let f: fn(f64, f64) -> f64 = match node.op {
                    Op::Add => |x, y| x + y,
                    Op::Sub => |x, y| x - y,
                    Op::Mul => |x, y| x * y,
                    _ => |l, t| softplus(l) - t * l,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::Scale(c) => unary(&|v| c * v),
            Op::AddScalar(c) => unary(&|v| v + c),
            Op::Exp => unary(&f64::exp),
            Op::Log => unary(&f64::ln),
            Op::Sigmoid => unary(&sigmoid),
            Op::Relu => unary(&|v| if v > 0.0 { v } else { 0.0 }),
            Op::Softplus => unary(&softplus),
            Op::Sum => Ok(Tensor::scalar(self.val(p[0]).data().iter().sum())),
            Op::Mean => {
                let x = self.val(p[0]);
                if x.is_empty() {
                    return Err(shape_err(op, "mean of an empty tensor".into()));
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64))
            }
            Op::SumRows | Op::LogSumExpRows => {
                let x = self.val(p[0]);
                let (n, m) = dims2(x, op)?;
                let data = x
                    .data()
                    .chunks(m.max(1))
                    .take(n)
                    .map(|row| match node.op {
                        Op::SumRows => row.iter().sum(),
                        _ => logsumexp(row),
                    })
                    .collect();
                Tensor::matrix(n, 1, data)
            }
            Op::SoftmaxRows(t) => {
                let x = self.val(p[0]);
                let (n, m) = dims2(x, op)?;
                let mut out = vec![0.0; n * m];
                for (row, o) in x.data().chunks(m).zip(out.chunks_mut(m)) {
                    softmax_into(row, *t, o);
                }
                Tensor::new(x.shape().to_vec(), out)
            }
            Op::Reshape(shape) => self.val(p[0]).clone().reshaped(shape.clone()),
            Op::TileRows(copies) => {
                let x = self.val(p[0]);
                let (n, m) = dims2(x, op)?;
                let mut out = Vec::with_capacity(copies * n * m);
                for _ in 0..*copies {
                    out.extend_from_slice(x.data());
                }
                Tensor::matrix(copies * n, m, out)
            }
            Op::SliceCols { start, len } => {
                let x = self.val(p[0]);
                let (n, m) = dims2(x, op)?;
                if start + len > m {
                    return Err(shape_err(op, format!("columns {}..{} of {}", start, start + len, m)));
                }
                let mut out = Vec::with_capacity(n * len);
                for row in x.data().chunks(m) {
                    out.extend_from_slice(&row[*start..start + len]);
                }
                Tensor::matrix(n, *len, out)
            }
        }
    }

    /// Back-propagates `seed` from `output`, filling the gradient slot of
    /// every input leaf with `∂(seed · output)/∂leaf`.
    ///
    /// Returns the input gradients by name.
    pub fn backward(&mut self, output: NodeId, seed: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let out_shape = self.val(output.0).shape();
        if out_shape.iter().product::<usize>() != seed.len() {
            return Err(shape_err("backward", format!("seed {:?} for output {:?}", seed.shape(), out_shape)));
        }
        self.zero_grad();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.data().to_vec());
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if let Op::Input(_) = self.nodes[i].op {
                self.nodes[i].value.as_mut().unwrap().set_grad(g)?;
                continue;
            }
            for (parent, pg) in self.local_backward(i, &g) {
                match &mut adj[parent] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for node in &self.nodes {
            let Op::Input(name) = &node.op else { continue };
            let v = node.value.as_ref().unwrap();
            let Some(g) = v.grad() else {
                grads.entry(name.clone()).or_insert_with(|| Tensor::zeros(v.shape()));
                continue;
            };
            // The same name may be bound to several leaves.
            match grads.get_mut(name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name.clone(), Tensor::new(v.shape().to_vec(), g.to_vec())?);
                }
            }
        }
        Ok(grads)
    }

    /// Clears leaf gradients left by a previous backward pass.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(v) = n.value.as_mut() {
                v.clear_grad();
            }
        }
    }

    fn local_backward(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let y = self.val(i);
        let elementwise = |f: &dyn Fn(usize) -> f64| (0..g.len()).map(|k| g[k] * f(k)).collect::<Vec<_>>();
        match &node.op {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::Affine | Op::MatMul => {
                let (a, b) = (self.val(p[0]), self.val(p[1]));
                let (n, k) = a.dims2().unwrap();
                let (_, m) = b.dims2().unwrap();
                // dA = G Bᵀ, dB = Aᵀ G
                let mut da = vec![0.0; n * k];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for c in 0..k {
                        let brow = &b.data()[c * m..(c + 1) * m];
                        da[r * k + c] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                let mut db = vec![0.0; k * m];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for c in 0..k {
                        let av = a.data()[r * k + c];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[c * m..(c + 1) * m].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
                let mut out = vec![(p[0], da), (p[1], db)];
                if let Op::Affine = node.op {
                    let mut dbias = vec![0.0; m];
                    for row in g.chunks(m) {
                        dbias.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    out.push((p[2], dbias));
                }
                out
            }
            Op::Add => vec![(p[0], g.to_vec()), (p[1], g.to_vec())],
            Op::Sub => vec![(p[0], g.to_vec()), (p[1], g.iter().map(|v| -v).collect())],
            Op::Mul => {
                let (a, b) = (self.val(p[0]).data(), self.val(p[1]).data());
                vec![(p[0], elementwise(&|k| b[k])), (p[1], elementwise(&|k| a[k]))]
            }
            Op::BceWithLogits => {
                let (l, t) = (self.val(p[0]).data(), self.val(p[1]).data());
                vec![
                    (p[0], elementwise(&|k| sigmoid(l[k]) - t[k])),
                    (p[1], elementwise(&|k| -l[k])),
                ]
            }
            Op::Scale(c) => vec![(p[0], elementwise(&|_| *c))],
            Op::AddScalar(_) | Op::Reshape(_) => vec![(p[0], g.to_vec())],
            Op::Exp => vec![(p[0], elementwise(&|k| y.data()[k]))],
            Op::Log => {
                let x = self.val(p[0]).data();
                vec![(p[0], elementwise(&|k| 1.0 / x[k]))]
            }
            Op::Sigmoid => {
                let s = y.data();
                vec![(p[0], elementwise(&|k| s[k] * (1.0 - s[k])))]
            }
            Op::Relu => {
                let x = self.val(p[0]).data();
                vec![(p[0], elementwise(&|k| if x[k] > 0.0 { 1.0 } else { 0.0 }))]
            }
            Op::Softplus => {
                let x = self.val(p[0]).data();
                vec![(p[0], elementwise(&|k| sigmoid(x[k])))]
            }
            Op::Sum => vec![(p[0], vec![g[0]; self.val(p[0]).len()])],
            Op::Mean => {
                let n = self.val(p[0]).len();
                vec![(p[0], vec![g[0] / n as f64; n])]
            }
            Op::SumRows => {
                let (n, m) = self.val(p[0]).dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for (r, row) in dx.chunks_mut(m.max(1)).take(n).enumerate() {
                    row.fill(g[r]);
                }
                vec![(p[0], dx)]
            }
            Op::LogSumExpRows => {
                let x = self.val(p[0]);
                let (n, m) = x.dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    let row = &x.data()[r * m..(r + 1) * m];
                    for (d, v) in dx[r * m..(r + 1) * m].iter_mut().zip(row) {
                        *d = g[r] * (v - y.data()[r]).exp();
                    }
                }
                vec![(p[0], dx)]
            }
            Op::SoftmaxRows(t) => {
                let (n, m) = y.dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    let yr = &y.data()[r * m..(r + 1) * m];
                    let gr = &g[r * m..(r + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..m {
                        dx[r * m + c] = yr[c] * (gr[c] - dot) / t;
                    }
                }
                vec![(p[0], dx)]
            }
            Op::TileRows(copies) => {
                let len = self.val(p[0]).len();
                let mut dx = vec![0.0; len];
                for c in 0..*copies {
                    dx.iter_mut().zip(&g[c * len..(c + 1) * len]).for_each(|(d, v)| *d += v);
                }
                vec![(p[0], dx)]
            }
            Op::SliceCols { start, len } => {
                let (n, m) = self.val(p[0]).dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    dx[r * m + start..r * m + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(p[0], dx)]
            }
        }
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| shape_err(op, format!("expected a matrix, got {:?}", t.shape())))
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[c * m..(c + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log Σ exp(v)` via the max shift. Returns `-inf` for an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Writes `softmax(v / temperature)` into `out`.
pub fn softmax_into(v: &[f64], temperature: f64, out: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = ((x - m) / temperature).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}
