//! The prompted graph: original nodes plus one virtual node per class.
//!
//! The augmented operator over `N + C` rows is
//!
//! ```text
//! [[ A , W ],
//!  [ Wᵀ, I ]]
//! ```
//!
//! where each prototype keeps a unit self-connection. Before propagation an
//! implicit unit self-loop is added to every original node and the whole
//! operator is degree-normalized with `d_i = Σ_j |entry(i, j)|`. `W` is the
//! only trainable quantity; the `Wᵀ` block reuses the same parameters.
//!
//! For batched graph datasets the weight matrix has one row per graph and
//! every node of graph `g` connects to prototype `c` with weight `W[g][c]`.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{PspError, Result};
use crate::tensor::{CsrMatrix, Tensor};

/// Sparse layout of the augmented operator with the source of every entry.
#[derive(Debug, Clone)]
pub struct AugmentedOperator {
    n_nodes: usize,
    n_prototypes: usize,
    weight_rows: usize,
    /// Pattern including the unit self-loops on original nodes.
    pattern: Arc<CsrMatrix>,
    /// Constant value of each entry not drawn from `W`.
    base: Vec<f64>,
    /// Flat index into `W` for entries drawn from it.
    sources: Arc<Vec<Option<usize>>>,
    /// Entries that are the implicit original-node self-loop.
    implicit_loop: Vec<bool>,
}

impl AugmentedOperator {
    /// `row_of_node[i]` is the row of `W` that node `i` uses: the node itself
    /// for node tasks, its graph for graph tasks.
    pub fn new(a: &CsrMatrix, row_of_node: &[usize], weight_rows: usize, n_prototypes: usize) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(PspError::dim("augment_prompted", a.shape(), a.shape()));
        }
        if row_of_node.len() != n {
            return Err(PspError::dim("augment_prompted", (n, n), (row_of_node.len(), n_prototypes)));
        }
        if let Some(&bad) = row_of_node.iter().find(|&&r| r >= weight_rows) {
            return Err(PspError::Contract(format!("weight row {bad} beyond {weight_rows}")));
        }
        let c = n_prototypes;
        let total = n + c;
        let nnz = a.nnz() + n + 2 * n * c + c;
        let mut row_offsets = Vec::with_capacity(total + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut base = Vec::with_capacity(nnz);
        let mut sources = Vec::with_capacity(nnz);
        let mut implicit_loop = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for i in 0..n {
            let (a_cols, a_vals) = a.row(i);
            let mut loop_done = false;
            for (&j, &v) in a_cols.iter().zip(a_vals) {
                if j == i {
                    return Err(PspError::Contract(format!("adjacency stores a self-loop at node {i}")));
                }
                if j > i && !loop_done {
                    cols.push(i);
                    base.push(1.0);
                    sources.push(None);
                    implicit_loop.push(true);
                    loop_done = true;
                }
                cols.push(j);
                base.push(v);
                sources.push(None);
                implicit_loop.push(false);
            }
            if !loop_done {
                cols.push(i);
                base.push(1.0);
                sources.push(None);
                implicit_loop.push(true);
            }
            for p in 0..c {
                cols.push(n + p);
                base.push(0.0);
                sources.push(Some(row_of_node[i] * c + p));
                implicit_loop.push(false);
            }
            row_offsets.push(cols.len());
        }
        for p in 0..c {
            for (i, &wr) in row_of_node.iter().enumerate() {
                cols.push(i);
                base.push(0.0);
                sources.push(Some(wr * c + p));
                implicit_loop.push(false);
            }
            cols.push(n + p);
            base.push(1.0);
            sources.push(None);
            implicit_loop.push(false);
            row_offsets.push(cols.len());
        }
        let pattern = CsrMatrix::new(total, total, row_offsets, cols, vec![0.0; nnz])?;
        Ok(AugmentedOperator {
            n_nodes: n,
            n_prototypes: c,
            weight_rows,
            pattern: Arc::new(pattern),
            base,
            sources: Arc::new(sources),
            implicit_loop,
        })
    }

    /// Node-task layout: one weight row per node.
    pub fn for_nodes(a: &CsrMatrix, n_prototypes: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..a.rows()).collect();
        AugmentedOperator::new(a, &rows, a.rows(), n_prototypes)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_prototypes(&self) -> usize {
        self.n_prototypes
    }

    pub fn weight_rows(&self) -> usize {
        self.weight_rows
    }

    pub fn pattern(&self) -> &Arc<CsrMatrix> {
        &self.pattern
    }

    fn check_w(&self, shape: (usize, usize)) -> Result<()> {
        if shape != (self.weight_rows, self.n_prototypes) {
            return Err(PspError::dim("augment_prompted", shape, (self.weight_rows, self.n_prototypes)));
        }
        Ok(())
    }

    /// The raw `[[A, W], [Wᵀ, I]]` operator, without the implicit self-loops.
    pub fn materialize(&self, w: &Tensor) -> Result<CsrMatrix> {
        self.check_w(w.shape())?;
        let mut trip = Vec::with_capacity(self.pattern.nnz());
        for (k, (r, c, _)) in self.pattern.iter().enumerate() {
            if self.implicit_loop[k] {
                continue;
            }
            let v = match self.sources[k] {
                Some(i) => w.data()[i],
                None => self.base[k],
            };
            trip.push((r, c, v));
        }
        let n = self.pattern.rows();
        CsrMatrix::from_triplets(n, n, &trip)
    }

    /// Differentiable normalized operator values (`1 × nnz`, aligned with
    /// [`pattern`](Self::pattern)) as a function of the `W` node.
    pub fn normalized(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        self.check_w(tape.shape(w))?;
        let raw = tape.gather(w, Arc::clone(&self.sources), &self.base)?;
        tape.sym_normalize(Arc::clone(&self.pattern), raw)
    }

    /// Normalized operator as a plain matrix, no tape.
    pub fn normalized_matrix(&self, w: &Tensor) -> Result<CsrMatrix> {
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let vals = self.normalized(&mut tape, wv)?;
        self.pattern.with_values(tape.value(vals).data().to_vec())
    }
}

/// `[[A, W], [Wᵀ, I_C]]` for a node task.
pub fn augment_prompted(a: &CsrMatrix, w: &Tensor) -> Result<CsrMatrix> {
    if w.rows() != a.rows() {
        return Err(PspError::dim("augment_prompted", a.shape(), w.shape()));
    }
    AugmentedOperator::for_nodes(a, w.cols())?.materialize(w)
}

/// Symmetric normalization of an augmented operator whose first `n_original`
/// rows are graph nodes: adds a unit self-loop to each of them, then scales
/// entry `(i, j)` by `(d_i d_j)^{-1/2}` with `d_i = Σ_j |entry(i, j)|`.
pub fn normalize_prompted(aug: &CsrMatrix, n_original: usize) -> Result<CsrMatrix> {
    if aug.rows() != aug.cols() || n_original > aug.rows() {
        return Err(PspError::dim("normalize_prompted", aug.shape(), (n_original, n_original)));
    }
    let n = aug.rows();
    let mut trip: Vec<(usize, usize, f64)> = aug.iter().collect();
    trip.extend((0..n_original).map(|i| (i, i, 1.0)));
    let full = CsrMatrix::from_triplets(n, n, &trip)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|r| {
            let d: f64 = full.row(r).1.iter().map(|v| v.abs()).sum();
            d.max(crate::autodiff::DEGREE_FLOOR).powf(-0.5)
        })
        .collect();
    let values = full.iter().map(|(r, c, v)| v * inv_sqrt[r] * inv_sqrt[c]).collect();
    full.with_values(values)
}
