//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly when it is recorded, so the node list is
//! always in topological order. Values are interpreted as row-major matrices
//! (`[rows, cols]`); a rank-1 tensor is a single row.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::GradError;
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Norms below this are treated as degenerate by [`Graph::normalize`].
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulCol { x: Var, col: Var },
    Scale { x: Var, factor: f64 },
    AddScalar { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Softplus { x: Var },
    Relu { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    View { x: Var, offset: usize },
    BroadcastRows { x: Var },
    Normalize { x: Var, norm: f64 },
    Mse { a: Var, target: Arc<Tensor> },
    SoftmaxXent { logits: Var, probs: Vec<f64> , labels: Arc<Vec<u8>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::MulCol { .. } => "mul_col",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softplus { .. } => "softplus",
            Op::Relu { .. } => "relu",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::View { .. } => "view",
            Op::BroadcastRows { .. } => "broadcast_rows",
            Op::Normalize { .. } => "normalize",
            Op::Mse { .. } => "mse",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
    requires_grad: bool,
}

/// A recorded computation. Build one per minibatch item; graphs are `Send` so
/// independent graphs can be evaluated on worker threads.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    inputs: BTreeMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of a node, or zeros if no gradient reached it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_slice(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    /// Gradients of every trainable parameter registered through [`Graph::param`].
    pub fn named(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &var)| (name.clone(), self.get(var)))
            .collect()
    }
}

fn shape_err(op: &'static str, detail: String) -> GradError {
    GradError::ShapeMismatch { op, detail }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn accumulate_with(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shared_value(&self, var: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[var.0].value)
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn rc(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.rows_cols()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var, GradError> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(GradError::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
        });
        Ok(Var(id))
    }

    fn push_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Result<Var, GradError> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(GradError::NonFinite { node: id, op: "leaf" });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Ok(Var(id))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, GradError> {
        self.push(Op::Leaf, value, false)
    }

    /// A leaf that receives gradients but is not reported by name.
    pub fn variable(&mut self, value: Tensor) -> Result<Var, GradError> {
        self.push(Op::Leaf, value, true)
    }

    /// A named trainable parameter. Gradients are reported by [`Gradients::named`].
    pub fn param(&mut self, name: &str, value: Arc<Tensor>) -> Result<Var, GradError> {
        let var = self.push_shared(value, true)?;
        self.params.insert(name.to_string(), var);
        Ok(var)
    }

    /// A named leaf bound under `name`; trainable leaves are also reported as params.
    pub fn input(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<Var, GradError> {
        let var = self.push(Op::Leaf, value, trainable)?;
        self.inputs.insert(name.to_string(), var);
        if trainable {
            self.params.insert(name.to_string(), var);
        }
        Ok(var)
    }

    /// A frozen leaf sharing storage with the caller (e.g. model weights at inference).
    pub fn frozen(&mut self, value: Arc<Tensor>) -> Result<Var, GradError> {
        self.push_shared(value, false)
    }

    pub fn input_var(&self, name: &str) -> Result<Var, GradError> {
        self.inputs
            .get(name)
            .copied()
            .ok_or_else(|| GradError::UnknownInput(name.to_string()))
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `x @ w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]` or `[1, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, GradError> {
        let (m, k) = self.rc(x);
        let (wk, n) = self.rc(w);
        if k != wk {
            return Err(shape_err("linear", format!("x [{m},{k}] vs w [{wk},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != n {
                return Err(shape_err("linear", format!("bias len {} vs {n}", bias.len())));
            }
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(Op::Linear { x, w, b }, Tensor::new(vec![m, n], out)?, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (m, k) = self.rc(a);
        let (bk, n) = self.rc(b);
        if k != bk {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{bk},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul { a, b }, Tensor::new(vec![m, n], out)?, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GradError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Add { a, b }, v, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Sub { a, b }, v, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Mul { a, b }, v, rg)
    }

    /// Scales each row of `x: [m, n]` by the matching entry of `col: [m, 1]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, GradError> {
        let (m, n) = self.rc(x);
        if self.value(col).numel() != m {
            return Err(shape_err("mul_col", format!("x has {m} rows, col has {}", self.value(col).numel())));
        }
        let xv = self.value(x).data();
        let cv = self.value(col).data();
        let mut out = Vec::with_capacity(m * n);
        for (row, &c) in xv.chunks_exact(n.max(1)).zip(cv) {
            out.extend(row.iter().map(|v| v * c));
        }
        let rg = self.rg(&[x, col]);
        let shape = self.shape(x).to_vec();
        self.push(Op::MulCol { x, col }, Tensor::new(shape, out)?, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, GradError> {
        let v = self.map(x, |a| a * factor);
        let rg = self.rg(&[x]);
        self.push(Op::Scale { x, factor }, v, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, GradError> {
        let v = self.map(x, |a| a + c);
        let rg = self.rg(&[x]);
        self.push(Op::AddScalar { x }, v, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.map(x, f64::tanh);
        let rg = self.rg(&[x]);
        self.push(Op::Tanh { x }, v, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.map(x, sigmoid);
        let rg = self.rg(&[x]);
        self.push(Op::Sigmoid { x }, v, rg)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.map(x, softplus);
        let rg = self.rg(&[x]);
        self.push(Op::Softplus { x }, v, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.map(x, |a| a.max(0.0));
        let rg = self.rg(&[x]);
        self.push(Op::Relu { x }, v, rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, GradError> {
        let v = self.map(x, |a| a * a);
        let rg = self.rg(&[x]);
        self.push(Op::Square { x }, v, rg)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var, GradError> {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Op::Sum { x }, Tensor::scalar(s), rg)
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var, GradError> {
        let xv = self.value(x);
        let s = xv.sum() / xv.numel().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Op::Mean { x }, Tensor::scalar(s), rg)
    }

    /// Columns `start..end` of `x: [m, n]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let (m, n) = self.rc(x);
        if start > end || end > n {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let w = end - start;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for row in xv.chunks_exact(n.max(1)) {
            out.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(&[x]);
        self.push(Op::SliceCols { x, start }, Tensor::new(vec![m, w], out)?, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let m = parts.first().map(|&p| self.rc(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.rc(p).0 != m) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let (_, n) = self.rc(p);
                out.extend_from_slice(&self.value(p).data()[r * n..(r + 1) * n]);
            }
        }
        let rg = self.rg(parts);
        self.push(Op::ConcatCols { parts: parts.to_vec() }, Tensor::new(vec![m, total], out)?, rg)
    }

    /// A reshaped window `offset..offset+numel(shape)` of `x`'s flat data.
    pub fn view(&mut self, x: Var, offset: usize, shape: &[usize]) -> Result<Var, GradError> {
        let len: usize = shape.iter().product();
        let xv = self.value(x).data();
        if offset + len > xv.len() {
            return Err(shape_err("view", format!("{offset}+{len} exceeds {}", xv.len())));
        }
        let out = xv[offset..offset + len].to_vec();
        let rg = self.rg(&[x]);
        self.push(Op::View { x, offset }, Tensor::new(shape.to_vec(), out)?, rg)
    }

    /// Repeats a single row `x: [1, n]` to `[rows, n]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var, GradError> {
        let (m, n) = self.rc(x);
        if m != 1 {
            return Err(shape_err("broadcast_rows", format!("expected one row, got {m}")));
        }
        let row = self.value(x).data();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        let rg = self.rg(&[x]);
        self.push(Op::BroadcastRows { x }, Tensor::new(vec![rows, n], out)?, rg)
    }

    /// `x / ||x||` over all entries. Below [`NORMALIZE_EPS`] the result is the
    /// first basis vector and no gradient flows.
    pub fn normalize(&mut self, x: Var) -> Result<Var, GradError> {
        let xv = self.value(x);
        let norm = xv.norm_sq().sqrt();
        let shape = xv.shape().to_vec();
        let out = if norm < NORMALIZE_EPS {
            let mut d = vec![0.0; xv.numel()];
            if let Some(first) = d.first_mut() {
                *first = 1.0;
            }
            d
        } else {
            xv.data().iter().map(|v| v / norm).collect()
        };
        let rg = self.rg(&[x]);
        self.push(Op::Normalize { x, norm }, Tensor::new(shape, out)?, rg)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: Arc<Tensor>) -> Result<Var, GradError> {
        if self.shape(a) != target.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", self.shape(a), target.shape())));
        }
        let av = self.value(a).data();
        let n = av.len().max(1) as f64;
        let l = av
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[a]);
        self.push(Op::Mse { a, target }, Tensor::scalar(l), rg)
    }

    /// Mean softmax cross-entropy of `logits: [m, C]` against class ids.
    pub fn softmax_xent(&mut self, logits: Var, labels: Arc<Vec<u8>>) -> Result<Var, GradError> {
        let (m, c) = self.rc(logits);
        if labels.len() != m {
            return Err(shape_err("softmax_xent", format!("{m} rows vs {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(shape_err("softmax_xent", format!("label {bad} >= {c} classes")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &lv[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[r * c + j] = e;
                z += e;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p /= z;
            }
            let label = labels[r] as usize;
            loss += -(row[label] - mx - z.ln());
        }
        loss /= m.max(1) as f64;
        let rg = self.rg(&[logits]);
        self.push(Op::SoftmaxXent { logits, probs, labels }, Tensor::scalar(loss), rg)
    }

    /// Reverse pass from `output`. `seed` defaults to ones (for scalar losses).
    pub fn backward(&self, output: Var, seed: Option<Tensor>) -> Result<Gradients, GradError> {
        if output.0 >= self.nodes.len() {
            return Err(GradError::NotEvaluated {
                node: output.0,
                len: self.nodes.len(),
            });
        }
        let out_val = self.value(output);
        let seed = match seed {
            Some(s) => {
                if s.shape() != out_val.shape() {
                    return Err(shape_err(
                        "backward",
                        format!("seed {:?} vs output {:?}", s.shape(), out_val.shape()),
                    ));
                }
                s.into_data()
            }
            None => vec![1.0; out_val.numel()],
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.backprop_node(id, &node.op, &dy, &mut grads);
            grads[id] = Some(dy);
        }

        let shapes = self.nodes[..=output.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let params = self
            .params
            .iter()
            .filter(|(_, v)| v.0 <= output.0)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }

    fn backprop_node(&self, id: usize, op: &Op, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let y = self.nodes[id].value.data();
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (m, k) = self.rc(*x);
                let (_, n) = self.rc(*w);
                if needs(*x) {
                    let wv = self.value(*w).data();
                    accumulate_with(&mut grads[x.0], m * k, |gx| {
                        gemm(m, n, k, dy, false, wv, true, gx, 1.0);
                    });
                }
                if needs(*w) {
                    let xv = self.value(*x).data();
                    accumulate_with(&mut grads[w.0], k * n, |gw| {
                        gemm(k, m, n, xv, true, dy, false, gw, 1.0);
                    });
                }
                if let Some(b) = b {
                    if needs(*b) {
                        accumulate_with(&mut grads[b.0], n, |gb| {
                            for row in dy.chunks_exact(n) {
                                for (g, d) in gb.iter_mut().zip(row) {
                                    *g += d;
                                }
                            }
                        });
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = self.rc(*a);
                let (_, n) = self.rc(*b);
                if needs(*a) {
                    let bv = self.value(*b).data();
                    accumulate_with(&mut grads[a.0], m * k, |ga| {
                        gemm(m, n, k, dy, false, bv, true, ga, 1.0);
                    });
                }
                if needs(*b) {
                    let av = self.value(*a).data();
                    accumulate_with(&mut grads[b.0], k * n, |gb| {
                        gemm(k, m, n, av, true, dy, false, gb, 1.0);
                    });
                }
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], dy.to_vec());
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], dy.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], dy.to_vec());
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], dy.iter().map(|d| -d).collect());
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if needs(*a) {
                    accumulate(&mut grads[a.0], dy.iter().zip(bv).map(|(d, b)| d * b).collect());
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], dy.iter().zip(av).map(|(d, a)| d * a).collect());
                }
            }
            Op::MulCol { x, col } => {
                let (_, n) = self.rc(*x);
                let n = n.max(1);
                let xv = self.value(*x).data();
                let cv = self.value(*col).data();
                if needs(*x) {
                    let mut gx = Vec::with_capacity(dy.len());
                    for (row, &c) in dy.chunks_exact(n).zip(cv) {
                        gx.extend(row.iter().map(|d| d * c));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                if needs(*col) {
                    let gc = dy
                        .chunks_exact(n)
                        .zip(xv.chunks_exact(n))
                        .map(|(d, x)| d.iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads[col.0], gc);
                }
            }
            Op::Scale { x, factor } => {
                accumulate(&mut grads[x.0], dy.iter().map(|d| d * factor).collect());
            }
            Op::AddScalar { x } => {
                accumulate(&mut grads[x.0], dy.to_vec());
            }
            Op::Tanh { x } => {
                accumulate(
                    &mut grads[x.0],
                    dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect(),
                );
            }
            Op::Sigmoid { x } => {
                accumulate(
                    &mut grads[x.0],
                    dy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect(),
                );
            }
            Op::Softplus { x } => {
                let xv = self.value(*x).data();
                accumulate(
                    &mut grads[x.0],
                    dy.iter().zip(xv).map(|(d, &a)| d * sigmoid(a)).collect(),
                );
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                accumulate(
                    &mut grads[x.0],
                    dy.iter()
                        .zip(xv)
                        .map(|(d, &a)| if a > 0.0 { *d } else { 0.0 })
                        .collect(),
                );
            }
            Op::Square { x } => {
                let xv = self.value(*x).data();
                accumulate(
                    &mut grads[x.0],
                    dy.iter().zip(xv).map(|(d, a)| 2.0 * a * d).collect(),
                );
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                accumulate(&mut grads[x.0], vec![dy[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                accumulate(&mut grads[x.0], vec![dy[0] / n.max(1) as f64; n]);
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.rc(*x);
                let w = self.rc(Var(id)).1;
                let start = *start;
                accumulate_with(&mut grads[x.0], m * n, |gx| {
                    for (r, drow) in dy.chunks_exact(w.max(1)).enumerate().take(m) {
                        for (g, d) in gx[r * n + start..r * n + start + w].iter_mut().zip(drow) {
                            *g += d;
                        }
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let (m, total) = self.rc(Var(id));
                let mut col0 = 0;
                for &p in parts {
                    let (_, n) = self.rc(p);
                    if needs(p) {
                        accumulate_with(&mut grads[p.0], m * n, |gp| {
                            for r in 0..m {
                                for (g, d) in gp[r * n..(r + 1) * n]
                                    .iter_mut()
                                    .zip(&dy[r * total + col0..r * total + col0 + n])
                                {
                                    *g += d;
                                }
                            }
                        });
                    }
                    col0 += n;
                }
            }
            Op::View { x, offset } => {
                let len = self.value(*x).numel();
                let offset = *offset;
                accumulate_with(&mut grads[x.0], len, |gx| {
                    for (g, d) in gx[offset..offset + dy.len()].iter_mut().zip(dy) {
                        *g += d;
                    }
                });
            }
            Op::BroadcastRows { x } => {
                let n = self.value(*x).numel();
                accumulate_with(&mut grads[x.0], n, |gx| {
                    for row in dy.chunks_exact(n.max(1)) {
                        for (g, d) in gx.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                });
            }
            Op::Normalize { x, norm } => {
                if *norm >= NORMALIZE_EPS {
                    let dot: f64 = dy.iter().zip(y).map(|(d, v)| d * v).sum();
                    accumulate(
                        &mut grads[x.0],
                        dy.iter().zip(y).map(|(d, v)| (d - v * dot) / norm).collect(),
                    );
                }
            }
            Op::Mse { a, target } => {
                let av = self.value(*a).data();
                let scale = 2.0 * dy[0] / av.len().max(1) as f64;
                accumulate(
                    &mut grads[a.0],
                    av.iter().zip(target.data()).map(|(x, t)| scale * (x - t)).collect(),
                );
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
            } => {
                let (m, c) = self.rc(*logits);
                let scale = dy[0] / m.max(1) as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    g[r * c + l as usize] -= scale;
                }
                accumulate(&mut grads[logits.0], g);
            }
        }
    }
}
