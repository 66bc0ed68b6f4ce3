//! Graph container, adjacency construction and GCN normalization.

use crate::error::{PspError, Result};
use crate::tensor::{CsrMatrix, Tensor};

/// Node features with an undirected adjacency.
///
/// For multi-graph (batched) datasets `graph_of` maps each node to its graph
/// and `labels` holds one class per *graph*; otherwise `labels` holds one
/// class per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    features: Tensor,
    adjacency: CsrMatrix,
    labels: Option<Vec<usize>>,
    graph_of: Option<Vec<usize>>,
    n_graphs: usize,
    n_classes: usize,
}

impl GraphData {
    pub fn new(
        features: Tensor,
        adjacency: CsrMatrix,
        labels: Option<Vec<usize>>,
        graph_of: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if adjacency.shape() != (n, n) {
            return Err(PspError::dim("GraphData", adjacency.shape(), (n, n)));
        }
        if !adjacency.is_symmetric(0.0) {
            return Err(PspError::Dataset("adjacency is not symmetric".into()));
        }
        let n_graphs = match &graph_of {
            Some(g) => {
                if g.len() != n {
                    return Err(PspError::Dataset(format!("graph_of has {} entries for {n} nodes", g.len())));
                }
                let n_graphs = g.iter().max().map_or(0, |m| m + 1);
                let mut seen = vec![false; n_graphs];
                for &x in g {
                    seen[x] = true;
                }
                if let Some(missing) = seen.iter().position(|s| !s) {
                    return Err(PspError::Dataset(format!("graph {missing} has no nodes")));
                }
                n_graphs
            }
            None => 0,
        };
        if let Some(l) = &labels {
            let expected = if graph_of.is_some() { n_graphs } else { n };
            if l.len() != expected {
                return Err(PspError::Dataset(format!("expected {expected} labels, got {}", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&c| c >= n_classes) {
                return Err(PspError::Dataset(format!("label {bad} outside [0, {n_classes})")));
            }
        }
        Ok(GraphData {
            features,
            adjacency,
            labels,
            graph_of,
            n_graphs,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of graphs in a batched dataset, zero for a single graph.
    pub fn n_graphs(&self) -> usize {
        self.n_graphs
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn graph_of(&self) -> Option<&[usize]> {
        self.graph_of.as_deref()
    }

    pub fn is_multi_graph(&self) -> bool {
        self.graph_of.is_some()
    }

    /// Copy with a different adjacency; used by structural-independence tests.
    pub fn with_adjacency(&self, adjacency: CsrMatrix) -> Result<Self> {
        GraphData::new(
            self.features.clone(),
            adjacency,
            self.labels.clone(),
            self.graph_of.clone(),
            self.n_classes,
        )
    }
}

/// Symmetrized, deduplicated, self-loop-free adjacency with unit values.
pub fn build_csr(n: usize, edges: &[(usize, usize)]) -> Result<CsrMatrix> {
    let mut trip = Vec::with_capacity(edges.len() * 2);
    for &(s, d) in edges {
        if s >= n || d >= n {
            return Err(PspError::Dataset(format!("edge ({s}, {d}) out of range for {n} nodes")));
        }
        if s != d {
            trip.push((s, d));
            trip.push((d, s));
        }
    }
    trip.sort_unstable();
    trip.dedup();
    let trip: Vec<(usize, usize, f64)> = trip.into_iter().map(|(s, d)| (s, d, 1.0)).collect();
    CsrMatrix::from_triplets(n, n, &trip)
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the degree matrix of `A + I`.
pub fn gcn_normalize(a: &CsrMatrix) -> Result<CsrMatrix> {
    if a.rows() != a.cols() {
        return Err(PspError::dim("gcn_normalize", a.shape(), a.shape()));
    }
    let n = a.rows();
    let mut trip: Vec<(usize, usize, f64)> = a.iter().filter(|(r, c, _)| r != c).collect();
    for i in 0..n {
        trip.push((i, i, 1.0 + a.get(i, i)));
    }
    let with_loops = CsrMatrix::from_triplets(n, n, &trip)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|r| with_loops.row(r).1.iter().sum::<f64>().powf(-0.5))
        .collect();
    let values = with_loops
        .iter()
        .map(|(r, c, v)| v * inv_sqrt[r] * inv_sqrt[c])
        .collect();
    with_loops.with_values(values)
}

/// Per-graph mean of node rows.
pub fn mean_readout(z: &Tensor, graph_of: &[usize], n_graphs: usize) -> Result<Tensor> {
    if graph_of.len() != z.rows() {
        return Err(PspError::dim("mean_readout", z.shape(), (graph_of.len(), 1)));
    }
    let mut out = Tensor::zeros(n_graphs, z.cols());
    let mut counts = vec![0usize; n_graphs];
    for (r, &g) in graph_of.iter().enumerate() {
        if g >= n_graphs {
            return Err(PspError::Dataset(format!("node {r} assigned to graph {g} of {n_graphs}")));
        }
        counts[g] += 1;
        for (o, v) in out.row_mut(g).iter_mut().zip(z.row(r)) {
            *o += v;
        }
    }
    for (g, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(PspError::Dataset(format!("graph {g} has no nodes")));
        }
        for o in out.row_mut(g) {
            *o /= c as f64;
        }
    }
    Ok(out)
}
