use std::sync::atomic::{AtomicU64, Ordering};

use super::gemm::gemm;
use super::kernels::{lse_unchecked, softmax_into};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Clamp {
        a: usize,
        lo: f64,
        hi: f64,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    SliceCols {
        a: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
    SumRows(usize),
    LogSumExpRows(usize),
    SoftmaxRows(usize),
    /// Per row `sum_c w[r, c] * log_softmax(logits)[r, c]`; the softmax is
    /// kept in `aux`.
    WeightedLogSoftmax {
        logits: usize,
        weights: Vec<f64>,
    },
    /// Per row `sum_c (a - target)^2`.
    SquaredError {
        a: usize,
        target: Vec<f64>,
    },
    /// Per row log N(target | mean, sigma2 I).
    GaussianLogDensity {
        mean: usize,
        target: Vec<f64>,
        sigma2: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    aux: Vec<f64>,
    requires_grad: bool,
}

/// Define-by-run record of primitive operations over row-major matrices.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Gradients of leaves that require them accumulate
/// across repeated [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(v.idx)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.value)
    }

    pub fn dims(&self, v: Var) -> Result<(usize, usize)> {
        let n = self.node(v)?;
        Ok((n.rows, n.cols))
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v)?;
        if n.value.len() != 1 {
            return Err(Error::InvalidShape(format!("expected scalar, got {}x{}", n.rows, n.cols)));
        }
        Ok(n.value[0])
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, aux: Vec<f64>, name: &str) -> Result<Var> {
        debug_assert_eq!(rows * cols, value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op_inputs(op).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { op, rows, cols, value, aux, requires_grad });
        self.leaf_grads.push(None);
        Ok(Var { tape: self.id, idx: self.nodes.len() - 1 })
    }

    fn leaf_raw(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::InvalidShape(format!("{rows}x{cols} leaf with {} values", data.len())));
        }
        let v = self.push(Op::Leaf, rows, cols, data, Vec::new(), "leaf")?;
        self.nodes[v.idx].requires_grad = requires_grad;
        Ok(v)
    }

    /// Records a tensor as a leaf, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        let (r, c) = t.as_matrix_dims()?;
        self.leaf_raw(r, c, t.data().to_vec(), t.requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf_raw(rows, cols, data, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf_raw(rows, cols, data, false)
    }

    /// `x W^T + b` with `x: n x i`, `W: o x i`, `b: 1 x o`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (n, i) = (self.nodes[xi].rows, self.nodes[xi].cols);
        let (o, wi_cols) = (self.nodes[wi].rows, self.nodes[wi].cols);
        if wi_cols != i {
            return Err(Error::InvalidShape(format!("affine: input width {i}, weight {o}x{wi_cols}")));
        }
        let mut out = vec![0.0; n * o];
        if let Some(bi) = bi {
            let bias = &self.nodes[bi].value;
            if bias.len() != o {
                return Err(Error::InvalidShape(format!("affine: bias length {} for {o} outputs", bias.len())));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            n,
            i,
            o,
            1.0,
            &self.nodes[xi].value,
            (i, 1),
            &self.nodes[wi].value,
            (1, i),
            if bi.is_some() { 1.0 } else { 0.0 },
            &mut out,
            (o, 1),
        );
        self.push(Op::Affine { x: xi, w: wi, b: bi }, n, o, out, Vec::new(), "affine")
    }

    fn unary(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        let (r, c) = (node.rows, node.cols);
        let out = node.value.iter().map(|&x| f(x)).collect();
        self.push(op(ai), r, c, out, Vec::new(), name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, "clamp", |x| x.clamp(lo, hi), |a| Op::Clamp { a, lo, hi })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "scale", |x| c * x, |a| Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "add_const", |x| x + c, Op::AddConst)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (na, nb) = (&self.nodes[ai], &self.nodes[bi]);
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(Error::InvalidShape(format!("{name}: {}x{} vs {}x{}", na.rows, na.cols, nb.rows, nb.cols)));
        }
        let (r, c) = (na.rows, na.cols);
        let out = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        self.push(op(ai, bi), r, c, out, Vec::new(), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        if start + len > node.cols {
            return Err(Error::InvalidShape(format!("slice {start}..{} of {} columns", start + len, node.cols)));
        }
        let rows = node.rows;
        let mut out = Vec::with_capacity(rows * len);
        for row in node.value.chunks(node.cols) {
            out.extend_from_slice(&row[start..start + len]);
        }
        self.push(Op::SliceCols { a: ai, start }, rows, len, out, Vec::new(), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidShape("concat of nothing".into()));
        }
        let idxs = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let rows = self.nodes[idxs[0]].rows;
        if idxs.iter().any(|&i| self.nodes[i].rows != rows) {
            return Err(Error::InvalidShape("concat: row counts differ".into()));
        }
        let cols: usize = idxs.iter().map(|&i| self.nodes[i].cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idxs {
                let n = &self.nodes[i];
                out.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
            }
        }
        self.push(Op::ConcatCols(idxs), rows, cols, out, Vec::new(), "concat_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s = self.nodes[ai].value.iter().sum();
        self.push(Op::SumAll(ai), 1, 1, vec![s], Vec::new(), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let n = self.nodes[ai].value.len();
        if n == 0 {
            return Err(Error::InvalidShape("mean of empty tensor".into()));
        }
        let s = self.nodes[ai].value.iter().sum::<f64>() / n as f64;
        self.push(Op::MeanAll(ai), 1, 1, vec![s], Vec::new(), "mean")
    }

    /// Sums each row: `n x c -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        let rows = node.rows;
        let out = if node.cols == 0 {
            vec![0.0; rows]
        } else {
            node.value.chunks(node.cols).map(|r| r.iter().sum()).collect()
        };
        self.push(Op::SumRows(ai), rows, 1, out, Vec::new(), "sum_rows")
    }

    /// Row-wise log-sum-exp: `n x k -> n x 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        if node.cols == 0 {
            return Err(Error::InvalidShape("logsumexp over zero columns".into()));
        }
        let rows = node.rows;
        let out = node.value.chunks(node.cols).map(lse_unchecked).collect();
        self.push(Op::LogSumExpRows(ai), rows, 1, out, Vec::new(), "logsumexp")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        if node.cols == 0 {
            return Err(Error::InvalidShape("softmax over zero columns".into()));
        }
        let (rows, cols) = (node.rows, node.cols);
        let mut out = vec![0.0; rows * cols];
        for (src, dst) in node.value.chunks(cols).zip(out.chunks_mut(cols)) {
            softmax_into(src, dst);
        }
        self.push(Op::SoftmaxRows(ai), rows, cols, out, Vec::new(), "softmax")
    }

    /// Categorical / multinomial log-likelihood: per row
    /// `sum_c weights[r, c] * log_softmax(logits)[r, c]`. One-hot weights give
    /// the categorical log-likelihood of a label, count vectors the unigram
    /// multinomial log-likelihood without its coefficient.
    pub fn weighted_log_softmax(&mut self, logits: Var, weights: Vec<f64>) -> Result<Var> {
        let li = self.idx(logits)?;
        let node = &self.nodes[li];
        let (rows, cols) = (node.rows, node.cols);
        if weights.len() != rows * cols || cols == 0 {
            return Err(Error::InvalidShape(format!(
                "log-likelihood weights {} for {rows}x{cols} logits",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("log-likelihood weights".into()));
        }
        let mut probs = vec![0.0; rows * cols];
        let mut out = Vec::with_capacity(rows);
        for ((src, dst), w) in node.value.chunks(cols).zip(probs.chunks_mut(cols)).zip(weights.chunks(cols)) {
            softmax_into(src, dst);
            let lse = lse_unchecked(src);
            out.push(src.iter().zip(w).map(|(l, w)| w * (l - lse)).sum());
        }
        self.push(Op::WeightedLogSoftmax { logits: li, weights }, rows, 1, out, probs, "categorical log-likelihood")
    }

    pub fn squared_error(&mut self, a: Var, target: Vec<f64>) -> Result<Var> {
        let ai = self.idx(a)?;
        let node = &self.nodes[ai];
        let (rows, cols) = (node.rows, node.cols);
        if target.len() != rows * cols {
            return Err(Error::InvalidShape("squared error target".into()));
        }
        let out = if cols == 0 {
            vec![0.0; rows]
        } else {
            node.value
                .chunks(cols)
                .zip(target.chunks(cols))
                .map(|(a, t)| a.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum())
                .collect()
        };
        self.push(Op::SquaredError { a: ai, target }, rows, 1, out, Vec::new(), "squared error")
    }

    /// Per row `-D/2 log(2 pi sigma2) - |target - mean|^2 / (2 sigma2)`.
    pub fn gaussian_log_density(&mut self, mean: Var, target: Vec<f64>, sigma2: f64) -> Result<Var> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        let mi = self.idx(mean)?;
        let node = &self.nodes[mi];
        let (rows, cols) = (node.rows, node.cols);
        if target.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "gaussian target has {} values for {rows}x{cols} mean",
                target.len()
            )));
        }
        let norm = -0.5 * cols as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();
        let out = (0..rows)
            .map(|r| {
                let sq: f64 = (0..cols)
                    .map(|c| {
                        let d = target[r * cols + c] - node.value[r * cols + c];
                        d * d
                    })
                    .sum();
                norm - sq / (2.0 * sigma2)
            })
            .collect();
        self.push(Op::GaussianLogDensity { mean: mi, target, sigma2 }, rows, 1, out, Vec::new(), "gaussian log-density")
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar loss, got {}x{}",
                self.nodes[li].rows, self.nodes[li].cols
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        adj[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let wants = |j: usize| nodes[j].requires_grad;
        // Accumulates `f(k)` into the adjoint of node `j` elementwise.
        let mut acc = |j: usize, f: &dyn Fn(usize) -> f64| {
            if !nodes[j].requires_grad {
                return;
            }
            let n = nodes[j].value.len();
            let slot = adj[j].get_or_insert_with(|| vec![0.0; n]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s += f(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, o) = (node.rows, node.cols);
                let inp = nodes[*x].cols;
                if wants(*x) {
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; n * inp]);
                    gemm(n, o, inp, 1.0, g, (o, 1), &nodes[*w].value, (inp, 1), 1.0, slot, (inp, 1));
                }
                if wants(*w) {
                    let slot = adj[*w].get_or_insert_with(|| vec![0.0; o * inp]);
                    gemm(o, n, inp, 1.0, g, (1, o), &nodes[*x].value, (inp, 1), 1.0, slot, (inp, 1));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let slot = adj[*b].get_or_insert_with(|| vec![0.0; o]);
                        for row in g.chunks(o) {
                            slot.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &|k| g[k] * (1.0 - y[k] * y[k]));
            }
            Op::Relu(a) => {
                let x = &nodes[*a].value;
                acc(*a, &|k| if x[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, &|k| g[k] * y[k]);
            }
            Op::Clamp { a, lo, hi } => {
                let x = &nodes[*a].value;
                acc(*a, &|k| if x[k] >= *lo && x[k] <= *hi { g[k] } else { 0.0 });
            }
            Op::Add(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                acc(*a, &|k| g[k] * vb[k]);
                acc(*b, &|k| g[k] * va[k]);
            }
            Op::Scale(a, c) => acc(*a, &|k| g[k] * c),
            Op::AddConst(a) => acc(*a, &|k| g[k]),
            Op::SliceCols { a, start } => {
                let (src_cols, len) = (nodes[*a].cols, node.cols);
                acc(*a, &|k| {
                    let (r, c) = (k / src_cols, k % src_cols);
                    if c >= *start && c < start + len {
                        g[r * len + c - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p].cols;
                    acc(p, &|k| g[(k / pc) * total + offset + k % pc]);
                    offset += pc;
                }
            }
            Op::SumAll(a) => acc(*a, &|_| g[0]),
            Op::MeanAll(a) => {
                let n = nodes[*a].value.len() as f64;
                acc(*a, &|_| g[0] / n);
            }
            Op::SumRows(a) => {
                let c = nodes[*a].cols;
                acc(*a, &|k| g[k / c]);
            }
            Op::LogSumExpRows(a) => {
                let c = nodes[*a].cols;
                let mut p = vec![0.0; nodes[*a].value.len()];
                for (src, dst) in nodes[*a].value.chunks(c).zip(p.chunks_mut(c)) {
                    softmax_into(src, dst);
                }
                acc(*a, &|k| g[k / c] * p[k]);
            }
            Op::SoftmaxRows(a) => {
                let c = node.cols;
                let s = &node.value;
                let dots: Vec<f64> =
                    g.chunks(c).zip(s.chunks(c)).map(|(gr, sr)| gr.iter().zip(sr).map(|(x, y)| x * y).sum()).collect();
                acc(*a, &|k| s[k] * (g[k] - dots[k / c]));
            }
            Op::WeightedLogSoftmax { logits, weights } => {
                let c = nodes[*logits].cols;
                let p = &node.aux;
                let totals: Vec<f64> = weights.chunks(c).map(|w| w.iter().sum()).collect();
                acc(*logits, &|k| g[k / c] * (weights[k] - totals[k / c] * p[k]));
            }
            Op::SquaredError { a, target } => {
                let c = nodes[*a].cols;
                let x = &nodes[*a].value;
                acc(*a, &|k| g[k / c] * 2.0 * (x[k] - target[k]));
            }
            Op::GaussianLogDensity { mean, target, sigma2 } => {
                let c = nodes[*mean].cols;
                let m = &nodes[*mean].value;
                acc(*mean, &|k| g[k / c] * (target[k] - m[k]) / sigma2);
            }
        }
    }

    /// Accumulated gradient of a leaf, if it requires one and was reached.
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>> {
        let i = self.idx(v)?;
        Ok(self.leaf_grads[i].as_deref())
    }

    /// Gradient of a leaf, zeros when it was not reached by any backward pass.
    pub fn grad_or_zeros(&self, v: Var) -> Result<Vec<f64>> {
        let i = self.idx(v)?;
        Ok(self.leaf_grads[i].clone().unwrap_or_else(|| vec![0.0; self.nodes[i].value.len()]))
    }

    /// Adds this tape's gradient for `v` into `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v)? {
            Some(g) => t.accumulate_grad(g),
            None => t.accumulate_grad(&vec![0.0; t.len()]),
        }
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Affine { x, w, b } => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::Tanh(a)
        | Op::Relu(a)
        | Op::Exp(a)
        | Op::Clamp { a, .. }
        | Op::Scale(a, _)
        | Op::AddConst(a)
        | Op::SliceCols { a, .. }
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::SumRows(a)
        | Op::LogSumExpRows(a)
        | Op::SoftmaxRows(a)
        | Op::SquaredError { a, .. } => vec![*a],
        Op::WeightedLogSoftmax { logits, .. } => vec![*logits],
        Op::GaussianLogDensity { mean, .. } => vec![*mean],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::ConcatCols(parts) => parts.clone(),
    }
}
