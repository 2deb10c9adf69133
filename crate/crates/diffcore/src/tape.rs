use crate::tensor::{matmul_at_into, matmul_bt_into};
use crate::{DiffError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
///
/// A handle is only valid for the tape generation that created it; once the
/// tape is cleared (after [`Tape::backward`]) every older handle is stale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    generation: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Affine(usize, f64),
    Gelu(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    // argmax row per column
    MaxRows(usize, Vec<usize>),
    Softmax(usize),
    // inverse standard deviation per row
    LayerNorm(usize, Vec<f64>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    StackRows(Vec<usize>),
    Row(usize, usize),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    PairwiseDist(usize, usize),
    SoftRank(usize, f64),
    // labels and cached probabilities
    CrossEntropy(usize, Vec<usize>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a computation.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u32,
}

/// Gradients of the leaves that were created with `requires_grad`.
#[derive(Debug)]
pub struct Gradients {
    generation: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var) -> Result<&Tensor> {
        self.get(var).ok_or(DiffError::MissingGradient(var.index()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get_mut(var.index()).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
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

    /// Drops every recorded node and invalidates outstanding handles.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = self.generation.wrapping_add(1);
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.generation != self.generation || var.index() >= self.nodes.len() {
            return Err(DiffError::StaleTape {
                var: var.generation,
                tape: self.generation,
            });
        }
        Ok(var.index())
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        let i = self.check(var)?;
        Ok(&self.nodes[i].value)
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool> {
        let i = self.check(var)?;
        Ok(self.nodes[i].requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index,
            generation: self.generation,
        }
    }

    fn node(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.node(ia).matmul(self.node(ib))?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.node(ia).transpose()?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Transpose(ia), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.node(ia), self.node(ib));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, value) = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Add(ia, ib), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, value) = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Sub(ia, ib), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, value) = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Mul(ia, ib), rg))
    }

    fn row_broadcast(
        &mut self,
        m: Var,
        v: Var,
        name: &'static str,
        f: fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (im, iv) = (self.check(m)?, self.check(v)?);
        let (tm, tv) = (self.node(im), self.node(iv));
        if tm.rank() == 0 || tv.len() != tm.cols() {
            return Err(shape_err(name, tm, tv));
        }
        let c = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, tv.data()[k % c]))
            .collect();
        Ok((im, iv, Tensor::new(tm.shape().to_vec(), data)?))
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv, value) = self.row_broadcast(m, v, "add_row", |x, y| x + y)?;
        let rg = self.rg(im) || self.rg(iv);
        Ok(self.push(value, Op::AddRow(im, iv), rg))
    }

    /// Multiplies every row of an `r×c` matrix elementwise by a length-`c` vector.
    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv, value) = self.row_broadcast(m, v, "mul_row", |x, y| x * y)?;
        let rg = self.rg(im) || self.rg(iv);
        Ok(self.push(value, Op::MulRow(im, iv), rg))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.node(ia).map(|x| scale * x + shift);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Affine(ia, scale), rg))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.node(ia).map(gelu);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Gelu(ia), rg))
    }

    /// Natural logarithm; inputs must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.node(ia);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
            return Err(DiffError::Invalid(format!("ln of non-positive value {bad}")));
        }
        let value = t.map(f64::ln);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Ln(ia), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.node(ia).map(|x| x.clamp(lo, hi));
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Clamp(ia, lo, hi), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Tensor::scalar(self.node(ia).data().iter().sum());
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.node(ia);
        if t.is_empty() {
            return Err(DiffError::Empty { op: "mean" });
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Mean(ia), rg))
    }

    fn matrix_dims(&self, i: usize, op: &'static str) -> Result<(usize, usize)> {
        let t = self.node(i);
        if t.rank() != 2 {
            return Err(DiffError::Invalid(format!(
                "{op} needs a matrix, got shape {:?}",
                t.shape()
            )));
        }
        if t.is_empty() {
            return Err(DiffError::Empty { op });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// Column means of a `j×d` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (r, c) = self.matrix_dims(ia, "mean_rows")?;
        let t = self.node(ia);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.rg(ia);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(ia), rg))
    }

    /// Column maxima of a `j×d` matrix. Ties route the gradient to the first
    /// maximal row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (r, c) = self.matrix_dims(ia, "max_rows")?;
        let t = self.node(ia);
        let mut out = t.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for (k, &x) in t.row(i).iter().enumerate() {
                if x > out[k] {
                    out[k] = x;
                    arg[k] = i;
                }
            }
        }
        let rg = self.rg(ia);
        Ok(self.push(Tensor::vector(out), Op::MaxRows(ia, arg), rg))
    }

    /// Softmax over the last axis, stabilized by subtracting the slice maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.node(ia);
        if t.is_empty() {
            return Err(DiffError::Empty { op: "softmax" });
        }
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Softmax(ia), rg))
    }

    /// Normalizes each row (last axis) to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.node(ia);
        if t.is_empty() {
            return Err(DiffError::Empty { op: "layer_norm" });
        }
        let c = t.cols();
        let mut data = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / c);
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::LayerNorm(ia, inv_std), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (r, c) = self.matrix_dims(ia, "slice_cols")?;
        if start >= end || end > c {
            return Err(DiffError::Invalid(format!("column slice {start}..{end} of width {c}")));
        }
        let t = self.node(ia);
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&t.row(i)[start..end]);
        }
        let rg = self.rg(ia);
        Ok(self.push(Tensor::matrix(r, w, out)?, Op::SliceCols(ia, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(DiffError::Empty { op: "concat_cols" });
        };
        let (r, _) = self.matrix_dims(first, "concat_cols")?;
        let mut total = 0;
        for &i in &idx {
            let (ri, ci) = self.matrix_dims(i, "concat_cols")?;
            if ri != r {
                return Err(shape_err("concat_cols", self.node(first), self.node(i)));
            }
            total += ci;
        }
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for &i in &idx {
                out.extend_from_slice(self.node(i).row(row));
            }
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(idx), rg))
    }

    /// Stacks equally long vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let idx = rows.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(DiffError::Empty { op: "stack_rows" });
        };
        let c = self.node(first).len();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            let t = self.node(i);
            if t.len() != c {
                return Err(shape_err("stack_rows", self.node(first), t));
            }
            out.extend_from_slice(t.data());
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        let n = idx.len();
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::StackRows(idx), rg))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (r, _) = self.matrix_dims(ia, "row")?;
        if i >= r {
            return Err(DiffError::Invalid(format!("row {i} of {r}")));
        }
        let value = Tensor::vector(self.node(ia).row(i).to_vec());
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Row(ia, i), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.node(ia).clone().reshaped(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Reshape(ia), rg))
    }

    /// Embedding lookup: row `indices[k]` of `table` becomes output row `k`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let (r, c) = self.matrix_dims(it, "gather_rows")?;
        if indices.is_empty() {
            return Err(DiffError::Empty { op: "gather_rows" });
        }
        let t = self.node(it);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &k in indices {
            if k >= r {
                return Err(DiffError::Invalid(format!("gather index {k} out of {r} rows")));
            }
            out.extend_from_slice(t.row(k));
        }
        let rg = self.rg(it);
        let value = Tensor::matrix(indices.len(), c, out)?;
        Ok(self.push(value, Op::GatherRows(it, indices.to_vec()), rg))
    }

    /// `D[i][j] = ‖q_i − t_j‖₂` for query rows `q` and target rows `t`.
    pub fn pairwise_dist(&mut self, queries: Var, targets: Var) -> Result<Var> {
        let (iq, it) = (self.check(queries)?, self.check(targets)?);
        let (b, d) = self.matrix_dims(iq, "pairwise_dist")?;
        let (n, d2) = self.matrix_dims(it, "pairwise_dist")?;
        if d != d2 {
            return Err(shape_err("pairwise_dist", self.node(iq), self.node(it)));
        }
        let (q, t) = (self.node(iq), self.node(it));
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            for j in 0..n {
                out.push(euclidean(q.row(i), t.row(j)));
            }
        }
        let rg = self.rg(iq) || self.rg(it);
        Ok(self.push(Tensor::matrix(b, n, out)?, Op::PairwiseDist(iq, it), rg))
    }

    /// Sigmoid-relaxed rank of every candidate within its row:
    /// `R[i][j] = 1 + Σ_{k≠j} σ((D[i][j] − D[i][k]) / τ)`.
    pub fn soft_rank(&mut self, distances: Var, temperature: f64) -> Result<Var> {
        let id = self.check(distances)?;
        let (b, n) = self.matrix_dims(id, "soft_rank")?;
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(DiffError::Invalid(format!(
                "soft rank temperature must be positive, got {temperature}"
            )));
        }
        let dist = self.node(id);
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            let row = dist.row(i);
            for j in 0..n {
                let mut r = 1.0;
                for k in 0..n {
                    if k != j {
                        r += sigmoid((row[j] - row[k]) / temperature);
                    }
                }
                out.push(r);
            }
        }
        let rg = self.rg(id);
        Ok(self.push(Tensor::matrix(b, n, out)?, Op::SoftRank(id, temperature), rg))
    }

    /// Mean softmax cross-entropy of `N×C` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let (n, c) = self.matrix_dims(il, "cross_entropy")?;
        if labels.len() != n {
            return Err(DiffError::Invalid(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(DiffError::Invalid(format!("label {bad} out of {c} classes")));
        }
        let mut probs = self.node(il).data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(row);
        }
        let rg = self.rg(il);
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(value, Op::CrossEntropy(il, labels.to_vec(), probs), rg))
    }

    /// Reverse pass from a scalar loss. Clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        let t = self.node(il);
        if !t.is_scalar() {
            return Err(DiffError::NonScalarLoss(t.shape().to_vec()));
        }
        let seed = Tensor::new(t.shape().to_vec(), vec![1.0])?;
        self.backward_from(&[(loss, seed)])
    }

    /// Reverse pass seeded with explicit upstream gradients for any number of
    /// outputs. Clears the tape.
    pub fn backward_from(&mut self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut last = 0;
        for (var, g) in seeds {
            let i = self.check(*var)?;
            let t = self.node(i);
            if g.shape() != t.shape() {
                return Err(shape_err("backward seed", t, g));
            }
            accumulate(&mut grads, i, g.len(), |buf| {
                buf.iter_mut().zip(g.data()).for_each(|(b, x)| *b += x)
            });
            last = last.max(i + 1);
        }
        for i in (0..last).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(Tensor::new(
                    node.value.shape().to_vec(),
                    g.unwrap_or_else(|| vec![0.0; node.value.len()]),
                )),
                _ => None,
            })
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        let out = Gradients {
            generation: self.generation,
            grads,
        };
        self.clear();
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.node(*a), self.node(*b));
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    accumulate(grads, *a, p * q, |buf| matmul_bt_into(g, tb.data(), buf, p, r, q));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, q * r, |buf| matmul_at_into(ta.data(), g, buf, q, p, r));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                accumulate(grads, *a, r * c, |buf| {
                    for x in 0..r {
                        for y in 0..c {
                            buf[y * r + x] += g[x * c + y];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for k in [*a, *b] {
                    if self.rg(k) {
                        add_into(grads, k, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(grads, *a, g);
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, x)| *o -= x)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.node(*a), self.node(*b));
                if self.rg(*a) {
                    accumulate(grads, *a, g.len(), |buf| {
                        for k in 0..g.len() {
                            buf[k] += g[k] * tb.data()[k];
                        }
                    });
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.len(), |buf| {
                        for k in 0..g.len() {
                            buf[k] += g[k] * ta.data()[k];
                        }
                    });
                }
            }
            Op::AddRow(m, v) => {
                if self.rg(*m) {
                    add_into(grads, *m, g);
                }
                if self.rg(*v) {
                    let c = out.cols();
                    accumulate(grads, *v, c, |buf| {
                        for row in g.chunks(c) {
                            buf.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                        }
                    });
                }
            }
            Op::MulRow(m, v) => {
                let (tm, tv) = (self.node(*m), self.node(*v));
                let c = out.cols();
                if self.rg(*m) {
                    accumulate(grads, *m, g.len(), |buf| {
                        for k in 0..g.len() {
                            buf[k] += g[k] * tv.data()[k % c];
                        }
                    });
                }
                if self.rg(*v) {
                    accumulate(grads, *v, c, |buf| {
                        for k in 0..g.len() {
                            buf[k % c] += g[k] * tm.data()[k];
                        }
                    });
                }
            }
            Op::Affine(a, scale) => {
                accumulate(grads, *a, g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, x)| *o += scale * x)
                });
            }
            Op::Gelu(a) => {
                let x = self.node(*a).data();
                accumulate(grads, *a, g.len(), |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * gelu_grad(x[k]);
                    }
                });
            }
            Op::Ln(a) => {
                let x = self.node(*a).data();
                accumulate(grads, *a, g.len(), |buf| {
                    for k in 0..g.len() {
                        buf[k] += g[k] / x[k];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.node(*a).data();
                accumulate(grads, *a, g.len(), |buf| {
                    for k in 0..g.len() {
                        if x[k] > *lo && x[k] < *hi {
                            buf[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.node(*a).len();
                accumulate(grads, *a, n, |buf| buf.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(a) => {
                let n = self.node(*a).len();
                let s = g[0] / n as f64;
                accumulate(grads, *a, n, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::MeanRows(a) => {
                let t = self.node(*a);
                let (r, c) = (t.shape()[0], t.shape()[1]);
                accumulate(grads, *a, r * c, |buf| {
                    for row in buf.chunks_mut(c) {
                        for (o, x) in row.iter_mut().zip(g) {
                            *o += x / r as f64;
                        }
                    }
                });
            }
            Op::MaxRows(a, arg) => {
                let t = self.node(*a);
                let c = t.cols();
                accumulate(grads, *a, t.len(), |buf| {
                    for (k, &row) in arg.iter().enumerate() {
                        buf[row * c + k] += g[k];
                    }
                });
            }
            Op::Softmax(a) => {
                let c = out.cols();
                accumulate(grads, *a, g.len(), |buf| {
                    for ((bo, go), yo) in buf.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let dot: f64 = go.iter().zip(yo).map(|(x, y)| x * y).sum();
                        for k in 0..c {
                            bo[k] += yo[k] * (go[k] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let c = out.cols();
                accumulate(grads, *a, g.len(), |buf| {
                    for (r, ((bo, go), xo)) in buf.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)).enumerate()
                    {
                        let mean_g = go.iter().sum::<f64>() / c as f64;
                        let mean_gx = go.iter().zip(xo).map(|(x, y)| x * y).sum::<f64>() / c as f64;
                        for k in 0..c {
                            bo[k] += inv_std[r] * (go[k] - mean_g - xo[k] * mean_gx);
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let c = self.node(*a).cols();
                let w = out.cols();
                accumulate(grads, *a, self.node(*a).len(), |buf| {
                    for (row, go) in g.chunks(w).enumerate() {
                        let dst = &mut buf[row * c + start..row * c + start + w];
                        dst.iter_mut().zip(go).for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.node(p).cols();
                    if self.rg(p) {
                        accumulate(grads, p, self.node(p).len(), |buf| {
                            for (row, bo) in buf.chunks_mut(w).enumerate() {
                                let src = &g[row * total + offset..row * total + offset + w];
                                bo.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let c = out.cols();
                for (r, &p) in rows.iter().enumerate() {
                    if self.rg(p) {
                        add_into(grads, p, &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Row(a, i) => {
                let t = self.node(*a);
                let c = t.cols();
                accumulate(grads, *a, t.len(), |buf| {
                    buf[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
            }
            Op::Reshape(a) => add_into(grads, *a, g),
            Op::GatherRows(table, indices) => {
                let t = self.node(*table);
                let c = t.cols();
                accumulate(grads, *table, t.len(), |buf| {
                    for (row, &k) in indices.iter().enumerate() {
                        buf[k * c..(k + 1) * c]
                            .iter_mut()
                            .zip(&g[row * c..(row + 1) * c])
                            .for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::PairwiseDist(q, t) => {
                let (tq, tt) = (self.node(*q), self.node(*t));
                let (b, n, d) = (tq.rows(), tt.rows(), tq.cols());
                let mut gq = vec![0.0; b * d];
                let mut gt = vec![0.0; n * d];
                for i in 0..b {
                    for j in 0..n {
                        let dist = out.data()[i * n + j];
                        if dist == 0.0 {
                            continue;
                        }
                        let s = g[i * n + j] / dist;
                        for k in 0..d {
                            let diff = s * (tq.data()[i * d + k] - tt.data()[j * d + k]);
                            gq[i * d + k] += diff;
                            gt[j * d + k] -= diff;
                        }
                    }
                }
                if self.rg(*q) {
                    add_into(grads, *q, &gq);
                }
                if self.rg(*t) {
                    add_into(grads, *t, &gt);
                }
            }
            Op::SoftRank(dist, tau) => {
                let td = self.node(*dist);
                let (b, n) = (td.rows(), td.cols());
                accumulate(grads, *dist, b * n, |buf| {
                    for i in 0..b {
                        let row = td.row(i);
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..n {
                                if k == j {
                                    continue;
                                }
                                let s = sigmoid((row[j] - row[k]) / tau);
                                let ds = gij * s * (1.0 - s) / tau;
                                buf[i * n + j] += ds;
                                buf[i * n + k] -= ds;
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let t = self.node(*logits);
                let c = t.cols();
                let scale = g[0] / labels.len() as f64;
                accumulate(grads, *logits, t.len(), |buf| {
                    for (r, &y) in labels.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == y { 1.0 } else { 0.0 };
                            buf[r * c + k] += scale * (probs[r * c + k] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], i: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = grads[i].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    accumulate(grads, i, g.len(), |buf| {
        buf.iter_mut().zip(g).for_each(|(o, x)| *o += x)
    });
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let a = tape.constant(mat(&[&[1.5, -2.0], &[0.25, 4.0]]));
        let out = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(out).unwrap(), tape.value(a).unwrap());
    }

    #[test]
    fn small_matmul_by_definition() {
        let mut tape = Tape::new();
        let a = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(mat(&[&[0.0], &[1.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            DiffError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn softmax_uniform_and_overflow_safe() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let s = tape.softmax(z).unwrap();
        for &p in tape.value(s).unwrap().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let s = tape.softmax(big).unwrap();
        let v = tape.value(s).unwrap().data();
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-300_f64.max(f64::EPSILON));
        assert!(v[1] < 1e-300);
    }

    #[test]
    fn pooling_definitions() {
        let mut tape = Tape::new();
        let v = tape.constant(mat(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let mx = tape.max_rows(v).unwrap();
        assert_eq!(tape.value(mx).unwrap().data(), &[3.0, 5.0]);
        let w = tape.constant(mat(&[&[0.0, 2.0], &[2.0, 0.0]]));
        let avg = tape.mean_rows(w).unwrap();
        assert_eq!(tape.value(avg).unwrap().data(), &[1.0, 1.0]);
        let single = tape.constant(mat(&[&[7.0, -1.0]]));
        let a = tape.max_rows(single).unwrap();
        let b = tape.mean_rows(single).unwrap();
        assert_eq!(tape.value(a).unwrap().data(), &[7.0, -1.0]);
        assert_eq!(tape.value(b).unwrap().data(), &[7.0, -1.0]);
    }

    #[test]
    fn pooling_rejects_empty_input() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::zeros(&[0, 3]));
        assert_eq!(tape.max_rows(e).unwrap_err(), DiffError::Empty { op: "max_rows" });
        assert_eq!(tape.mean_rows(e).unwrap_err(), DiffError::Empty { op: "mean_rows" });
    }

    #[test]
    fn max_pool_tie_routes_to_first_row() {
        let mut tape = Tape::new();
        let v = tape.param(mat(&[&[2.0], &[2.0], &[1.0]]));
        let mx = tape.max_rows(v).unwrap();
        let s = tape.sum(mx).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(v).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.wrt(x).unwrap().item(), Some(6.0));
    }

    #[test]
    fn backward_contracts() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.scale(x, 2.0).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), DiffError::NonScalarLoss(vec![2]));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.is_empty());
        assert!(matches!(tape.backward(s), Err(DiffError::StaleTape { .. })));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0]));
        let unused = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn soft_rank_tied_pair_is_one_and_a_half() {
        let mut tape = Tape::new();
        let d = tape.constant(mat(&[&[0.7, 0.7]]));
        let r = tape.soft_rank(d, 0.5).unwrap();
        assert_eq!(tape.value(r).unwrap().data(), &[1.5, 1.5]);
    }

    #[test]
    fn ln_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.ln(x), Err(DiffError::Invalid(_))));
    }

    #[test]
    fn gather_gradient_counts_occurrences() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::zeros(&[3, 2]));
        let rows = tape.gather_rows(table, &[2, 0, 2, 2]).unwrap();
        let s = tape.sum(rows).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 3.0, 3.0]);
    }
}
