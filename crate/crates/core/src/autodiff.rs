//! Reverse-mode differentiation over dense and sparse matrix operations.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; [`Tape::backward`] sweeps the nodes in reverse
//! append order and accumulates gradients into leaves created with
//! `requires_grad = true`. Leaves created as constants never receive a
//! gradient, and neither does any node whose inputs are all constant.
//!
//! Calling `backward` twice without [`Tape::zero_grad`] adds the second
//! sweep's gradients onto the first.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PspError, Result};
use crate::tensor::{dot, CsrMatrix, Tensor};

/// Floor on the norm product in cosine similarity denominators.
pub const COSINE_EPS: f64 = 1e-12;

/// Degree floor used by symmetric normalization.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Relu,
    Add,
    Scale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Spmm {
        matrix: Arc<CsrMatrix>,
        values: Option<Var>,
        dense: Var,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Dropout(Var, Vec<f64>),
    Cosine(Var, Var),
    Sum(Var),
    SelectRows(Var, Vec<usize>),
    VStack(Var, Var),
    SegmentMean {
        x: Var,
        groups: Arc<Vec<usize>>,
        counts: Vec<usize>,
    },
    Gather {
        src: Var,
        map: Arc<Vec<Option<usize>>>,
    },
    SymNormalize {
        values: Var,
        pattern: Arc<CsrMatrix>,
    },
    ContrastiveNll {
        logits: Var,
        positives: Vec<usize>,
        include_positive: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf; `None` for constants or before `backward`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Sparse-dense product with the matrix's stored values.
    pub fn spmm(&mut self, matrix: Arc<CsrMatrix>, dense: Var) -> Result<Var> {
        let out = matrix.spmm(self.value(dense))?;
        let rg = self.rg(dense);
        Ok(self.push(
            out,
            Op::Spmm {
                matrix,
                values: None,
                dense,
            },
            rg,
        ))
    }

    /// Sparse-dense product whose nonzero values come from the `1 × nnz` node
    /// `values`, laid out in the pattern's storage order.
    pub fn spmm_values(&mut self, pattern: Arc<CsrMatrix>, values: Var, dense: Var) -> Result<Var> {
        let vals = self.value(values);
        if vals.rows() != 1 || vals.cols() != pattern.nnz() {
            return Err(PspError::dim("spmm_values", vals.shape(), (1, pattern.nnz())));
        }
        let out = pattern.spmm_with(vals.data(), self.value(dense))?;
        let rg = self.rg(values) || self.rg(dense);
        Ok(self.push(
            out,
            Op::Spmm {
                matrix: pattern,
                values: Some(values),
                dense,
            },
            rg,
        ))
    }

    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        match (kind, inputs) {
            (Elementwise::Relu, [x]) => Ok(self.relu(*x)),
            (Elementwise::Add, [a, b]) => self.add(*a, *b),
            (Elementwise::Scale(s), [x]) => Ok(self.scale(*x, s)),
            _ => Err(PspError::Contract(format!(
                "{kind:?} takes {} input(s), got {}",
                if kind == Elementwise::Add { 2 } else { 1 },
                inputs.len()
            ))),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(PspError::dim("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(PspError::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data).unwrap();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Adds a `1 × C` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(PspError::dim("add_row", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Inverted dropout. The mask depends only on `(seed, ordinal)`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, ordinal: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(PspError::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ordinal);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.data().len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data).unwrap();
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
    pub fn cosine_sim_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = cosine_forward(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Cosine(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(PspError::Contract(format!("row {bad} out of range for {} rows", t.rows())));
        }
        let out = t.select_rows(indices);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectRows(x, indices.to_vec()), rg))
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).vstack(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::VStack(a, b), rg))
    }

    /// Mean of the rows of `x` per group; `groups[r]` names the group of row `r`.
    pub fn segment_mean(&mut self, x: Var, groups: Arc<Vec<usize>>, n_groups: usize) -> Result<Var> {
        let t = self.value(x);
        if groups.len() != t.rows() {
            return Err(PspError::dim("segment_mean", t.shape(), (groups.len(), 1)));
        }
        let mut counts = vec![0usize; n_groups];
        let mut out = Tensor::zeros(n_groups, t.cols());
        for (r, &g) in groups.iter().enumerate() {
            if g >= n_groups {
                return Err(PspError::Dataset(format!("row {r} assigned to group {g} of {n_groups}")));
            }
            counts[g] += 1;
            for (o, v) in out.row_mut(g).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(PspError::Dataset(format!("group {g} has no rows")));
        }
        for (g, &c) in counts.iter().enumerate() {
            for o in out.row_mut(g) {
                *o /= c as f64;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMean { x, groups, counts }, rg))
    }

    /// Builds a `1 × map.len()` row. Entry `k` is `src.data[i]` when
    /// `map[k] = Some(i)`, else `base[k]`. Gradients scatter-add back into
    /// `src`, so a source entry used several times collects every use.
    pub fn gather(&mut self, src: Var, map: Arc<Vec<Option<usize>>>, base: &[f64]) -> Result<Var> {
        let s = self.value(src);
        if base.len() != map.len() {
            return Err(PspError::dim("gather", (1, base.len()), (1, map.len())));
        }
        let mut data = base.to_vec();
        for (k, m) in map.iter().enumerate() {
            if let Some(i) = *m {
                if i >= s.data().len() {
                    return Err(PspError::Contract(format!("gather index {i} beyond source length {}", s.data().len())));
                }
                data[k] = s.data()[i];
            }
        }
        let out = Tensor::from_vec(1, data.len(), data).unwrap();
        let rg = self.rg(src);
        Ok(self.push(out, Op::Gather { src, map }, rg))
    }

    /// Symmetric degree normalization of the values of a square pattern:
    /// `v'_k = v_k / sqrt(d_row · d_col)` with `d_i = max(Σ_row |v|, floor)`.
    pub fn sym_normalize(&mut self, pattern: Arc<CsrMatrix>, values: Var) -> Result<Var> {
        let vals = self.value(values);
        if pattern.rows() != pattern.cols() {
            return Err(PspError::dim("sym_normalize", pattern.shape(), pattern.shape()));
        }
        if vals.rows() != 1 || vals.cols() != pattern.nnz() {
            return Err(PspError::dim("sym_normalize", vals.shape(), (1, pattern.nnz())));
        }
        let inv_sqrt = inv_sqrt_degrees(&pattern, vals.data());
        let mut out = Vec::with_capacity(pattern.nnz());
        let mut k = 0;
        for r in 0..pattern.rows() {
            let (cols, _) = pattern.row(r);
            for &c in cols {
                out.push(vals.data()[k] * inv_sqrt[r] * inv_sqrt[c]);
                k += 1;
            }
        }
        let out = Tensor::from_vec(1, out.len(), out).unwrap();
        let rg = self.rg(values);
        Ok(self.push(out, Op::SymNormalize { values, pattern }, rg))
    }

    /// Mean contrastive negative log-likelihood over the rows of `logits`:
    /// `-(1/M) Σ_i [ l_{i,pos_i} - log Σ_{j∈D_i} exp(l_ij) ]` where `D_i`
    /// holds every column except `pos_i`, or every column when
    /// `include_positive` is set.
    pub fn contrastive_nll(&mut self, logits: Var, positives: &[usize], include_positive: bool) -> Result<Var> {
        let l = self.value(logits);
        if positives.len() != l.rows() {
            return Err(PspError::dim("contrastive_nll", l.shape(), (positives.len(), 1)));
        }
        if l.rows() == 0 {
            return Err(PspError::Contract("contrastive loss needs at least one anchor".into()));
        }
        if !include_positive && l.cols() < 2 {
            return Err(PspError::Contract(
                "contrastive loss without the positive term needs at least two candidates".into(),
            ));
        }
        let mut total = 0.0;
        for (i, &pos) in positives.iter().enumerate() {
            if pos >= l.cols() {
                return Err(PspError::Contract(format!("positive index {pos} out of range for {} columns", l.cols())));
            }
            let row = l.row(i);
            let lse = log_sum_exp(row, (!include_positive).then_some(pos));
            total += lse - row[pos];
        }
        let out = Tensor::filled(1, 1, total / l.rows() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::ContrastiveNll {
                logits,
                positives: positives.to_vec(),
                include_positive,
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1 × 1` loss node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(PspError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contrib: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {
                    let slot = &mut self.nodes[idx].grad;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        contrib.push((*a, g.matmul_t(self.value(*b))?));
                    }
                    if self.rg(*b) {
                        contrib.push((*b, self.value(*a).t_matmul(&g)?));
                    }
                }
                Op::Spmm { matrix, values, dense } => {
                    let vals = match values {
                        Some(v) => self.value(*v).data(),
                        None => matrix.values(),
                    };
                    if self.rg(*dense) {
                        contrib.push((*dense, matrix.t_spmm_with(vals, &g)));
                    }
                    if let Some(v) = values {
                        if self.rg(*v) {
                            let d = self.value(*dense);
                            let rows = matrix.entry_rows();
                            let dv: Vec<f64> = rows
                                .iter()
                                .zip(matrix.col_indices())
                                .map(|(&r, &c)| dot(g.row(r), d.row(c)))
                                .collect();
                            contrib.push((*v, Tensor::from_vec(1, dv.len(), dv).unwrap()));
                        }
                    }
                }
                Op::Relu(x) => {
                    let fwd = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(fwd.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    contrib.push((*x, Tensor::from_vec(g.rows(), g.cols(), data).unwrap()));
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        contrib.push((*a, g.clone()));
                    }
                    if self.rg(*b) {
                        contrib.push((*b, g));
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        contrib.push((*a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap()));
                    }
                    if self.rg(*b) {
                        let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        contrib.push((*b, Tensor::from_vec(g.rows(), g.cols(), d).unwrap()));
                    }
                }
                Op::Scale(x, s) => contrib.push((*x, g.scale(*s))),
                Op::AddRow(x, bias) => {
                    if self.rg(*bias) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        contrib.push((*bias, db));
                    }
                    if self.rg(*x) {
                        contrib.push((*x, g));
                    }
                }
                Op::Dropout(x, mask) => {
                    let d = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    contrib.push((*x, Tensor::from_vec(g.rows(), g.cols(), d).unwrap()));
                }
                Op::Cosine(a, b) => {
                    let (da, db) = cosine_backward(self.value(*a), self.value(*b), &node.value, &g);
                    if self.rg(*a) {
                        contrib.push((*a, da));
                    }
                    if self.rg(*b) {
                        contrib.push((*b, db));
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    contrib.push((*x, Tensor::filled(r, c, g.data()[0])));
                }
                Op::SelectRows(x, indices) => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    contrib.push((*x, dx));
                }
                Op::VStack(a, b) => {
                    let ra = self.shape(*a).0;
                    let c = g.cols();
                    if self.rg(*a) {
                        let d = g.data()[..ra * c].to_vec();
                        contrib.push((*a, Tensor::from_vec(ra, c, d).unwrap()));
                    }
                    if self.rg(*b) {
                        let d = g.data()[ra * c..].to_vec();
                        contrib.push((*b, Tensor::from_vec(g.rows() - ra, c, d).unwrap()));
                    }
                }
                Op::SegmentMean { x, groups, counts } => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor::zeros(r, c);
                    for (row, &grp) in groups.iter().enumerate() {
                        let w = 1.0 / counts[grp] as f64;
                        for (o, v) in dx.row_mut(row).iter_mut().zip(g.row(grp)) {
                            *o = v * w;
                        }
                    }
                    contrib.push((*x, dx));
                }
                Op::Gather { src, map } => {
                    let (r, c) = self.shape(*src);
                    let mut ds = Tensor::zeros(r, c);
                    for (k, m) in map.iter().enumerate() {
                        if let Some(i) = *m {
                            ds.data_mut()[i] += g.data()[k];
                        }
                    }
                    contrib.push((*src, ds));
                }
                Op::SymNormalize { values, pattern } => {
                    let dv = sym_normalize_backward(pattern, self.value(*values).data(), g.data());
                    contrib.push((*values, Tensor::from_vec(1, dv.len(), dv).unwrap()));
                }
                Op::ContrastiveNll {
                    logits,
                    positives,
                    include_positive,
                } => {
                    let l = self.value(*logits);
                    let scale = g.data()[0] / l.rows() as f64;
                    let mut dl = Tensor::zeros(l.rows(), l.cols());
                    for (i, &pos) in positives.iter().enumerate() {
                        let row = l.row(i);
                        let skip = (!include_positive).then_some(pos);
                        let lse = log_sum_exp(row, skip);
                        let out = dl.row_mut(i);
                        for (j, o) in out.iter_mut().enumerate() {
                            if Some(j) != skip {
                                *o += scale * (row[j] - lse).exp();
                            }
                        }
                        out[pos] -= scale;
                    }
                    contrib.push((*logits, dl));
                }
            }
            for (v, t) in contrib {
                if !self.rg(v) {
                    continue;
                }
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64], skip: Option<usize>) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + s.ln()
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| dot(t.row(r), t.row(r)).sqrt()).collect()
}

pub(crate) fn cosine_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(PspError::dim("cosine_sim_matrix", a.shape(), b.shape()));
    }
    let na = row_norms(a);
    let nb = row_norms(b);
    let mut out = a.matmul_t(b)?;
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v /= (na[i] * nb[j]).max(COSINE_EPS);
        }
    }
    Ok(out)
}

// With den = max(n_i m_j, ε), Q = g / den and row scalings c, c':
//   da = Q·B − diag(c)·A,  c_i  = Σ_j g_ij sim_ij m_j / (n_i den_ij)
//   db = Qᵀ·A − diag(c')·B, c'_j = Σ_i g_ij sim_ij n_i / (m_j den_ij)
// The c terms vanish where the floor is active, since den is then constant.
fn cosine_backward(a: &Tensor, b: &Tensor, sim: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let na = row_norms(a);
    let nb = row_norms(b);
    let mut q = Tensor::zeros(a.rows(), b.rows());
    let mut ca = vec![0.0; a.rows()];
    let mut cb = vec![0.0; b.rows()];
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let gij = g.get(i, j);
            if gij == 0.0 {
                continue;
            }
            let norms = na[i] * nb[j];
            let den = norms.max(COSINE_EPS);
            q.set(i, j, gij / den);
            if norms > COSINE_EPS {
                let t = gij * sim.get(i, j) / den;
                ca[i] += t * nb[j] / na[i];
                cb[j] += t * na[i] / nb[j];
            }
        }
    }
    let mut da = q.matmul(b).expect("shapes checked in forward");
    let mut db = q.t_matmul(a).expect("shapes checked in forward");
    for (i, c) in ca.iter().enumerate() {
        for (d, &av) in da.row_mut(i).iter_mut().zip(a.row(i)) {
            *d -= c * av;
        }
    }
    for (j, c) in cb.iter().enumerate() {
        for (d, &bv) in db.row_mut(j).iter_mut().zip(b.row(j)) {
            *d -= c * bv;
        }
    }
    (da, db)
}

fn inv_sqrt_degrees(pattern: &CsrMatrix, values: &[f64]) -> Vec<f64> {
    (0..pattern.rows())
        .map(|r| {
            let (s, e) = (pattern.row_offsets()[r], pattern.row_offsets()[r + 1]);
            let d: f64 = values[s..e].iter().map(|v| v.abs()).sum();
            d.max(DEGREE_FLOOR).powf(-0.5)
        })
        .collect()
}

fn sym_normalize_backward(pattern: &CsrMatrix, values: &[f64], g: &[f64]) -> Vec<f64> {
    let n = pattern.rows();
    let s = inv_sqrt_degrees(pattern, values);
    let rows = pattern.entry_rows();
    let cols = pattern.col_indices();
    // dL/ds_i from every entry touching row i or column i.
    let mut ds = vec![0.0; n];
    for k in 0..values.len() {
        let (r, c) = (rows[k], cols[k]);
        ds[r] += g[k] * values[k] * s[c];
        ds[c] += g[k] * values[k] * s[r];
    }
    // ds_i/dd_i = -½ d_i^{-3/2} = -½ s_i³, zero below the floor.
    let dd: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (pattern.row_offsets()[i], pattern.row_offsets()[i + 1]);
            let d: f64 = values[a..b].iter().map(|v| v.abs()).sum();
            if d > DEGREE_FLOOR {
                -0.5 * s[i].powi(3) * ds[i]
            } else {
                0.0
            }
        })
        .collect();
    (0..values.len())
        .map(|k| {
            let (r, c) = (rows[k], cols[k]);
            let sign = if values[k] > 0.0 {
                1.0
            } else if values[k] < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[k] * s[r] * s[c] + dd[r] * sign
        })
        .collect()
}
