use std::collections::HashMap;

use super::kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_rows};
use super::{ParamId, ParamSet, Real, Tensor};
use crate::error::{contract_err, shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberately wrong backward rules, used as negative controls for the
/// gradient checker. Never set outside of tests and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// ReLU passes gradient through negative inputs as well.
    ReluLeaks,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulBt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Softmax { x: Var },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<F> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<F> },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    tracked: bool,
}

/// Define-by-run recording of one forward pass.
///
/// Build a fresh tape per forward pass; parameters are bound by copying their
/// current values, so a tape never borrows the model.
#[derive(Debug)]
pub struct Tape<F: Real = f32> {
    nodes: Vec<Node<F>>,
    bound: HashMap<ParamId, Var>,
    fault: Option<BackwardFault>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new(), fault: None }
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Self { fault: Some(fault), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn rows(&self, v: Var) -> usize {
        rows_cols(self.shape(v)).0
    }

    pub fn cols(&self, v: Var) -> usize {
        rows_cols(self.shape(v)).1
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes are shape-consistent")
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, tracked: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if let Some(bad) = value.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} produced by {} at flat index {bad}",
                value[bad],
                op_name(&op)
            )));
        }
        self.nodes.push(Node { shape, value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records a leaf; gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor<F>) -> Result<Var> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false)
    }

    /// Binds a named parameter, reusing the node when already bound.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.leaf(params.get(id))?;
        self.bound.insert(id, v);
        Ok(v)
    }

    /// Node holding the bound copy of `id`, if the forward pass used it.
    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, tracked)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err!("matmul_bt of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![F::zero(); m * n];
        matmul_bt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMulBt { a, b, m, k, n }, tracked)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{what} of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), tracked)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, s), self.tracked(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), self.tracked(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax where row `i` sees only columns `0..=i + offset`.
    pub fn softmax_causal(&mut self, x: Var, offset: usize) -> Result<Var> {
        self.softmax_impl(x, Some(offset))
    }

    fn softmax_impl(&mut self, x: Var, causal: Option<usize>) -> Result<Var> {
        let (_, n) = rows_cols(self.shape(x));
        if n == 0 {
            return Err(shape_err!("softmax over an empty last dimension"));
        }
        let mut out = vec![F::zero(); self.value(x).len()];
        softmax_rows(self.value(x), &mut out, n, causal);
        self.push(self.shape(x).to_vec(), out, Op::Softmax { x }, self.tracked(x))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: F) -> Result<Var> {
        let (_, n) = rows_cols(self.shape(x));
        if self.value(gain).len() != n {
            return Err(shape_err!(
                "rms_norm gain of length {} for width {n}",
                self.value(gain).len()
            ));
        }
        let xs = self.value(x);
        let g = self.value(gain);
        let mut out = vec![F::zero(); xs.len()];
        let mut inv_rms = Vec::new();
        if n > 0 {
            let nf = F::of(n as f64);
            for (xr, yr) in xs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                let ms = xr.iter().map(|&v| v * v).sum::<F>() / nf;
                let inv = F::one() / (ms + eps).sqrt();
                for ((y, &v), &gv) in yr.iter_mut().zip(xr).zip(g) {
                    *y = v * inv * gv;
                }
                inv_rms.push(inv);
            }
        }
        let tracked = self.tracked(x) || self.tracked(gain);
        self.push(self.shape(x).to_vec(), out, Op::RmsNorm { x, gain, inv_rms }, tracked)
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = rows_cols(self.shape(table));
        let mut out = Vec::with_capacity(ids.len() * d);
        let tv = self.value(table);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("row {id} out of range for table of {rows} rows")));
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let tracked = self.tracked(table);
        self.push(vec![ids.len(), d], out, Op::Gather { table, ids: ids.to_vec() }, tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract_err!("concat_rows of nothing"))?;
        let d = self.cols(*first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 2 || self.cols(p) != d {
                return Err(shape_err!("concat_rows of width {d} with {:?}", self.shape(p)));
            }
            rows += self.rows(p);
            out.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(vec![rows, d], out, Op::ConcatRows(parts.to_vec()), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract_err!("concat_cols of nothing"))?;
        let r = self.rows(*first);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.shape(p).len() != 2 || self.rows(p) != r {
                return Err(shape_err!("concat_cols of {r} rows with {:?}", self.shape(p)));
            }
            widths.push(self.cols(p));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), tracked)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if self.shape(x).len() != 2 || start + len > c {
            return Err(shape_err!("slice_cols {start}..{} of {:?}", start + len, self.shape(x)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        self.push(vec![r, len], out, Op::SliceCols { x, start }, self.tracked(x))
    }

    /// Mean token-level negative log-likelihood over positions whose target
    /// differs from `ignore_index`. All-ignored input yields a zero loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let (t, v) = rows_cols(self.shape(logits));
        if self.shape(logits).len() != 2 || t != targets.len() {
            return Err(shape_err!(
                "cross_entropy logits {:?} with {} targets",
                self.shape(logits),
                targets.len()
            ));
        }
        let mut mapped = Vec::with_capacity(t);
        for &tg in targets {
            if tg == ignore_index {
                mapped.push(None);
            } else if tg < v {
                mapped.push(Some(tg));
            } else {
                return Err(Error::Index(format!("target {tg} outside vocabulary of {v}")));
            }
        }
        let lv = self.value(logits);
        let mut probs = vec![F::zero(); lv.len()];
        softmax_rows(lv, &mut probs, v, None);
        let mut total = F::zero();
        let mut count = 0usize;
        for (row, tg) in mapped.iter().enumerate() {
            if let Some(tg) = *tg {
                let xr = &lv[row * v..(row + 1) * v];
                let max = xr.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
                let lse = xr.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
                total = total + (lse - xr[tg]);
                count += 1;
            }
        }
        let loss = if count == 0 { F::zero() } else { total / F::of(count as f64) };
        let tracked = self.tracked(logits);
        self.push(Vec::new(), vec![loss], Op::CrossEntropy { logits, targets: mapped, probs }, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x), self.tracked(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(shape_err!("mean of an empty tensor"));
        }
        let s = self.value(x).iter().copied().sum::<F>() / F::of(n as f64);
        self.push(Vec::new(), vec![s], Op::Mean(x), self.tracked(x))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(contract_err!(
                "backward from non-scalar of shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`backward`](Self::backward) and adds the result into every bound
    /// parameter that requires a gradient.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.bound {
            let t = params.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            if let Some(g) = grads.wrt(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        // Lazily allocates the input's gradient buffer, skipping untracked inputs.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            let n = &self.nodes[v.0];
            if !n.tracked {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![F::zero(); n.value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |da| matmul_bt_acc(g, bv, da, m, n, k));
                acc(b, &mut |db| matmul_at_acc(av, g, db, m, k, n));
            }
            &Op::MatMulBt { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |da| matmul_acc(g, bv, da, m, n, k));
                acc(b, &mut |db| matmul_at_acc(g, av, db, m, n, k));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |da| add_into(da, g));
                acc(b, &mut |db| add_into(db, g));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |da| {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * y;
                    }
                });
                acc(b, &mut |db| {
                    for ((d, &gi), &x) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * x;
                    }
                });
            }
            &Op::Scale(x, s) => acc(x, &mut |dx| {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d = *d + gi * s;
                }
            }),
            &Op::Relu(x) => {
                let xv = self.value(x);
                let leaks = self.fault == Some(BackwardFault::ReluLeaks);
                acc(x, &mut |dx| {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > F::zero() || leaks {
                            *d = *d + gi;
                        }
                    }
                });
            }
            &Op::Softmax { x } => {
                let y = &node.value;
                let (_, n) = rows_cols(&node.shape);
                acc(x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                        let s: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + yi * (gi - s);
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (x, gain) = (*x, *gain);
                let (_, n) = rows_cols(&node.shape);
                let xv = self.value(x);
                let gv = self.value(gain);
                let nf = F::of(n as f64);
                acc(x, &mut |dx| {
                    for (((dr, gr), xr), &inv) in
                        dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(xv.chunks_exact(n)).zip(inv_rms)
                    {
                        let s: F = gr.iter().zip(gv).zip(xr).map(|((&a, &b), &c)| a * b * c).sum();
                        let coef = s * inv * inv * inv / nf;
                        for (((d, &gi), &gw), &xi) in dr.iter_mut().zip(gr).zip(gv).zip(xr) {
                            *d = *d + gi * gw * inv - xi * coef;
                        }
                    }
                });
                acc(gain, &mut |dg| {
                    for ((gr, xr), &inv) in g.chunks_exact(n).zip(xv.chunks_exact(n)).zip(inv_rms) {
                        for ((d, &gi), &xi) in dg.iter_mut().zip(gr).zip(xr) {
                            *d = *d + gi * xi * inv;
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.cols(*table);
                acc(*table, &mut |dt| {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |dp| add_into(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = rows_cols(&node.shape);
                let mut col = 0;
                for &p in parts {
                    let w = self.cols(p);
                    acc(p, &mut |dp| {
                        for i in 0..r {
                            add_into(&mut dp[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            &Op::SliceCols { x, start } => {
                let (r, w) = rows_cols(&node.shape);
                let c = self.cols(x);
                acc(x, &mut |dx| {
                    for i in 0..r {
                        add_into(&mut dx[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.cols(*logits);
                let count = targets.iter().filter(|t| t.is_some()).count();
                if count == 0 {
                    return;
                }
                let scale = g[0] / F::of(count as f64);
                acc(*logits, &mut |dl| {
                    for (row, tg) in targets.iter().enumerate() {
                        let Some(tg) = *tg else { continue };
                        let pr = &probs[row * v..(row + 1) * v];
                        let dr = &mut dl[row * v..(row + 1) * v];
                        for (d, &p) in dr.iter_mut().zip(pr) {
                            *d = *d + p * scale;
                        }
                        dr[tg] = dr[tg] - scale;
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d = *d + g[0])),
            &Op::Mean(x) => {
                let n = F::of(self.value(x).len() as f64);
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d = *d + g[0] / n));
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::MatMulBt { .. } => "matmul_bt",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Softmax { .. } => "softmax",
        Op::RmsNorm { .. } => "rms_norm",
        Op::Gather { .. } => "gather_rows",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
    }
}
