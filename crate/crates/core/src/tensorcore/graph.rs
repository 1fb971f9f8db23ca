//! Reverse-mode differentiation over a flat tape of 2-D tensors.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse, accumulating adjoints only through nodes that
//! depend on a leaf created with `requires_grad = true`.

use super::tensor::{matmul, matmul_at, matmul_bt, softmax_in_place, Tensor};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
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
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    CausalMask(Var),
    SoftmaxRows(Var),
    /// Saves per-row inverse standard deviation.
    LayerNorm(Var, Vec<f64>),
    /// Saves per-column inverse standard deviation.
    BatchNorm(Var, Vec<f64>),
    Embedding(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Saves the row softmax of the logits.
    CrossEntropy(Var, Vec<usize>, Vec<f64>),
    Mse(Var, Vec<f64>, Vec<f64>),
    AbsSum(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn make(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, tracked: bool) -> Var {
        let t = Tensor::matrix(rows, cols, data).expect("graph op produced inconsistent shape");
        self.push(t, op, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let tr = self.tracked(a) || self.tracked(b);
        self.make(m, n, out, Op::MatMul(a, b), tr)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_bt inner dimension");
        let out = matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        let tr = self.tracked(a) || self.tracked(b);
        self.make(m, n, out, Op::MatMulBt(a, b), tr)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let tr = self.tracked(a) || self.tracked(b);
        self.make(m, n, out, Op::Add(a, b), tr)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shapes");
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let tr = self.tracked(a) || self.tracked(b);
        self.make(m, n, out, Op::Mul(a, b), tr)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.value(row).len(), n, "add_row width");
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let tr = self.tracked(a) || self.tracked(row);
        self.make(m, n, out, Op::AddRow(a, row), tr)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.value(row).len(), n, "mul_row width");
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o *= b;
            }
        }
        let tr = self.tracked(a) || self.tracked(row);
        self.make(m, n, out, Op::MulRow(a, row), tr)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        let tr = self.tracked(a);
        self.make(m, n, out, Op::Scale(a, c), tr)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let tr = self.tracked(a);
        self.make(m, n, out, Op::Relu(a), tr)
    }

    /// Sets entries strictly above the diagonal to `-inf`.
    pub fn causal_mask(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for v in &mut out[i * n + (i + 1).min(n)..(i + 1) * n] {
                *v = f64::NEG_INFINITY;
            }
        }
        let tr = self.tracked(a);
        self.make(m, n, out, Op::CausalMask(a), tr)
    }

    /// Row softmax. Panics on a fully masked row; callers mask causally so
    /// the diagonal always survives.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for (r, row) in out.chunks_mut(n).enumerate() {
            assert!(softmax_in_place(row), "softmax row {r} fully masked");
        }
        let tr = self.tracked(a);
        self.make(m, n, out, Op::SoftmaxRows(a), tr)
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        let mut inv = Vec::with_capacity(m);
        for row in out.chunks_mut(n) {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * is;
            }
            inv.push(is);
        }
        let tr = self.tracked(a);
        self.make(m, n, out, Op::LayerNorm(a, inv), tr)
    }

    /// Per-column normalization with batch statistics (training-mode batch norm,
    /// biased variance). Returns the node plus the batch means and variances.
    pub fn batch_norm(&mut self, a: Var) -> (Var, Vec<f64>, Vec<f64>) {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let mut means = vec![0.0; n];
        let mut vars = vec![0.0; n];
        for row in x.chunks(n) {
            for (mu, v) in means.iter_mut().zip(row) {
                *mu += v;
            }
        }
        for mu in &mut means {
            *mu /= m as f64;
        }
        for row in x.chunks(n) {
            for ((s, v), mu) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - mu) * (v - mu);
            }
        }
        for s in &mut vars {
            *s /= m as f64;
        }
        let inv: Vec<f64> = vars.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut out = x.to_vec();
        for row in out.chunks_mut(n) {
            for ((v, mu), is) in row.iter_mut().zip(&means).zip(&inv) {
                *v = (*v - mu) * is;
            }
        }
        let tr = self.tracked(a);
        let var = self.make(m, n, out, Op::BatchNorm(a, inv), tr);
        (var, means, vars)
    }

    /// Gathers rows of `table` (vocab × d) at `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (vocab, d) = self.dims(table);
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "embedding id {id} outside vocabulary {vocab}");
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let tr = self.tracked(table);
        self.make(ids.len(), d, out, Op::Embedding(table, ids.to_vec()), tr)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= m, "slice_rows out of range");
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let tr = self.tracked(a);
        self.make(len, n, out, Op::SliceRows(a, start), tr)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(a);
        assert!(start + len <= n, "slice_cols out of range");
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for row in src.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let tr = self.tracked(a);
        self.make(m, len, out, Op::SliceCols(a, start), tr)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.dims(p);
                assert_eq!(r, m, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let tr = parts.iter().any(|&p| self.tracked(p));
        self.make(m, total, out, Op::ConcatCols(parts.to_vec()), tr)
    }

    /// Mean token negative log-likelihood of `targets` under row-softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (m, n) = self.dims(logits);
        assert_eq!(m, targets.len(), "cross_entropy target count");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(n).zip(targets) {
            assert!(t < n, "target class {t} outside {n}");
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        loss /= m as f64;
        let tr = self.tracked(logits);
        self.make(1, 1, vec![loss], Op::CrossEntropy(logits, targets.to_vec(), probs), tr)
    }

    /// Weighted mean squared error `Σ w (p - t)² / Σ w` against constant targets.
    pub fn mse(&mut self, pred: Var, target: &[f64], weight: Option<&[f64]>) -> Var {
        let p = self.value(pred).data();
        assert_eq!(p.len(), target.len(), "mse target length");
        let w: Vec<f64> = match weight {
            Some(w) => {
                assert_eq!(w.len(), p.len(), "mse weight length");
                w.to_vec()
            }
            None => vec![1.0; p.len()],
        };
        let wsum: f64 = w.iter().sum();
        let loss = if wsum > 0.0 {
            p.iter()
                .zip(target)
                .zip(&w)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
                / wsum
        } else {
            0.0
        };
        let tr = self.tracked(pred);
        self.make(1, 1, vec![loss], Op::Mse(pred, target.to_vec(), w), tr)
    }

    /// `Σ |a|`
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        let tr = self.tracked(a);
        self.make(1, 1, vec![s], Op::AbsSum(a), tr)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tr = self.tracked(a);
        self.make(1, 1, vec![s], Op::Sum(a), tr)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.tracked(*a) {
                    let da = matmul_bt(g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.tracked(*b) {
                    let db = matmul_at(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.tracked(*a) {
                    let da = matmul(g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.tracked(*b) {
                    let db = matmul_at(g, self.value(*a).data(), m, n, k);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.tracked(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.tracked(*row) {
                    let n = out.cols();
                    let mut d = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (s, v) in d.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, d);
                }
            }
            Op::MulRow(a, row) => {
                let n = out.cols();
                let r = self.value(*row).data();
                if self.tracked(*a) {
                    let mut d = g.to_vec();
                    for chunk in d.chunks_mut(n) {
                        for (v, s) in chunk.iter_mut().zip(r) {
                            *v *= s;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.tracked(*row) {
                    let x = self.value(*a).data();
                    let mut d = vec![0.0; n];
                    for (gc, xc) in g.chunks(n).zip(x.chunks(n)) {
                        for ((s, gv), xv) in d.iter_mut().zip(gc).zip(xc) {
                            *s += gv * xv;
                        }
                    }
                    self.accumulate(grads, *row, d);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * c).collect());
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::CausalMask(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, o)| if *o == f64::NEG_INFINITY { 0.0 } else { *gv })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dc, gc), yc) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(x, y)| x * y).sum();
                    for ((dv, gv), yv) in dc.iter_mut().zip(gc).zip(yc) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm(a, inv) => {
                let n = out.cols();
                let nf = n as f64;
                let mut d = vec![0.0; g.len()];
                for (((dc, gc), yc), is) in d
                    .chunks_mut(n)
                    .zip(g.chunks(n))
                    .zip(out.data().chunks(n))
                    .zip(inv)
                {
                    let mg = gc.iter().sum::<f64>() / nf;
                    let mgy = gc.iter().zip(yc).map(|(x, y)| x * y).sum::<f64>() / nf;
                    for ((dv, gv), yv) in dc.iter_mut().zip(gc).zip(yc) {
                        *dv = is * (gv - mg - yv * mgy);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::BatchNorm(a, inv) => {
                let n = out.cols();
                let m = out.rows() as f64;
                let y = out.data();
                let mut mg = vec![0.0; n];
                let mut mgy = vec![0.0; n];
                for (gc, yc) in g.chunks(n).zip(y.chunks(n)) {
                    for j in 0..n {
                        mg[j] += gc[j];
                        mgy[j] += gc[j] * yc[j];
                    }
                }
                for j in 0..n {
                    mg[j] /= m;
                    mgy[j] /= m;
                }
                let mut d = vec![0.0; g.len()];
                for ((dc, gc), yc) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    for j in 0..n {
                        dc[j] = inv[j] * (gc[j] - mg[j] - yc[j] * mgy[j]);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Embedding(table, ids) => {
                if self.tracked(*table) {
                    let d = out.cols();
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, v) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::SliceRows(a, start) => {
                let n = out.cols();
                let mut d = vec![0.0; self.value(*a).len()];
                d[start * n..start * n + g.len()].copy_from_slice(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let w = out.cols();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.tracked(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let n = self.dims(*logits).1;
                let m = targets.len() as f64;
                let scale = g[0] / m;
                let mut d = probs.clone();
                for (row, &t) in d.chunks_mut(n).zip(targets) {
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Mse(pred, target, w) => {
                let wsum: f64 = w.iter().sum();
                if wsum > 0.0 {
                    let p = self.value(*pred).data();
                    let d = p
                        .iter()
                        .zip(target)
                        .zip(w)
                        .map(|((a, b), wv)| g[0] * 2.0 * wv * (a - b) / wsum)
                        .collect();
                    self.accumulate(grads, *pred, d);
                }
            }
            Op::AbsSum(a) => {
                let d = self
                    .value(*a)
                    .data()
                    .iter()
                    .map(|x| {
                        if *x > 0.0 {
                            g[0]
                        } else if *x < 0.0 {
                            -g[0]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
        }
    }
}
