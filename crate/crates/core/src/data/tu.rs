//! Graph-classification datasets in the TU text layout.
//!
//! `NAME_A.txt` holds 1-based `i, j` edge pairs, `NAME_graph_indicator.txt`
//! the 1-based graph of each node and `NAME_graph_labels.txt` one label per
//! graph. `NAME_node_attributes.txt` is optional; without it nodes get
//! one-hot degree features. Node-classification variants additionally read
//! `NAME_node_labels.txt`.

use std::collections::BTreeMap;
use std::path::Path;

use super::node_tsv::{lines, read_text};
use crate::error::{PspError, Result};
use crate::graph::{build_csr, GraphData};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TuOptions {
    /// Width of the degree one-hot fallback; degrees at or above
    /// `width - 1` share the last bucket.
    pub degree_one_hot_width: usize,
}

impl Default for TuOptions {
    fn default() -> Self {
        TuOptions {
            degree_one_hot_width: 64,
        }
    }
}

fn parse_int(file: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse()
        .map_err(|_| PspError::data(file, line, format!("cannot parse `{s}`")))
}

pub fn load_tu_dataset(dir: &Path, name: &str, opts: TuOptions) -> Result<GraphData> {
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let ind_path = path("graph_indicator");
    let mut graph_of = Vec::new();
    for (ln, line) in lines(&read_text(&ind_path)?) {
        let g = parse_int(&ind_path, ln, line)?;
        if g < 1 {
            return Err(PspError::data(&ind_path, ln, "graph ids are 1-based"));
        }
        graph_of.push(g as usize - 1);
    }
    let n = graph_of.len();

    let label_path = path("graph_labels");
    let mut raw_labels = Vec::new();
    for (ln, line) in lines(&read_text(&label_path)?) {
        raw_labels.push(parse_int(&label_path, ln, line)?);
    }
    let n_graphs = graph_of.iter().max().map_or(0, |m| m + 1);
    if raw_labels.len() != n_graphs {
        return Err(PspError::data(
            &label_path,
            0,
            format!("{} labels for {n_graphs} graphs", raw_labels.len()),
        ));
    }
    let labels = dense_remap(&raw_labels);

    let a_path = path("A");
    let mut edges = Vec::new();
    for (ln, line) in lines(&read_text(&a_path)?) {
        let mut parts = line.split(',');
        let (Some(s), Some(d), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(PspError::data(&a_path, ln, "expected `i, j`"));
        };
        let (s, d) = (parse_int(&a_path, ln, s)?, parse_int(&a_path, ln, d)?);
        if s < 1 || d < 1 || s as usize > n || d as usize > n {
            return Err(PspError::data(&a_path, ln, format!("edge ({s}, {d}) out of range for {n} nodes")));
        }
        let (s, d) = (s as usize - 1, d as usize - 1);
        if graph_of[s] != graph_of[d] {
            return Err(PspError::data(
                &a_path,
                ln,
                format!("edge ({}, {}) joins graphs {} and {}", s + 1, d + 1, graph_of[s] + 1, graph_of[d] + 1),
            ));
        }
        edges.push((s, d));
    }
    let adjacency = build_csr(n, &edges)?;

    let attr_path = path("node_attributes");
    let features = if attr_path.exists() {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (ln, line) in lines(&read_text(&attr_path)?) {
            let row = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| PspError::data(&attr_path, ln, format!("cannot parse `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(PspError::data(&attr_path, ln, format!("expected {} columns", first.len())));
                }
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(PspError::data(&attr_path, 0, format!("{} attribute rows for {n} nodes", rows.len())));
        }
        let f = rows.first().map_or(0, |r| r.len());
        Tensor::from_vec(n, f, rows.into_iter().flatten().collect())?
    } else {
        let width = opts.degree_one_hot_width.max(1);
        let mut t = Tensor::zeros(n, width);
        for i in 0..n {
            let deg = adjacency.row(i).0.len();
            t.set(i, deg.min(width - 1), 1.0);
        }
        t
    };
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    GraphData::new(features, adjacency, Some(labels), Some(graph_of), n_classes)
}

fn dense_remap(raw: &[i64]) -> Vec<usize> {
    let mut distinct = raw.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let remap: BTreeMap<i64, usize> = distinct.into_iter().enumerate().map(|(i, v)| (v, i)).collect();
    raw.iter().map(|v| remap[v]).collect()
}

/// Node-classification view of a TU dataset: the batched graph as one
/// block-diagonal graph labeled per node (first field of each line of
/// `NAME_node_labels.txt`), plus each node's graph for per-graph sampling.
pub fn load_tu_node_dataset(dir: &Path, name: &str, opts: TuOptions) -> Result<(GraphData, Vec<usize>)> {
    let batched = load_tu_dataset(dir, name, opts)?;
    let graph_of = batched.graph_of().expect("TU datasets are batched").to_vec();
    let path = dir.join(format!("{name}_node_labels.txt"));
    let mut raw = Vec::with_capacity(graph_of.len());
    for (ln, line) in lines(&read_text(&path)?) {
        let first = line.split(',').next().unwrap_or("");
        raw.push(parse_int(&path, ln, first)?);
    }
    if raw.len() != graph_of.len() {
        return Err(PspError::data(&path, 0, format!("{} labels for {} nodes", raw.len(), graph_of.len())));
    }
    let labels = dense_remap(&raw);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let g = GraphData::new(
        batched.features().clone(),
        batched.adjacency().clone(),
        Some(labels),
        None,
        n_classes,
    )?;
    Ok((g, graph_of))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    /// Triangle (nodes 1-3), path (4-6), single node (7).
    fn fixture(dir: &Path, labels: &str, attrs: bool) {
        fs::write(
            dir.join("TOY_A.txt"),
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n",
        )
        .unwrap();
        fs::write(dir.join("TOY_graph_indicator.txt"), "1\n1\n1\n2\n2\n2\n3\n").unwrap();
        fs::write(dir.join("TOY_graph_labels.txt"), labels).unwrap();
        if attrs {
            fs::write(dir.join("TOY_node_attributes.txt"), "0.5\n1\n2\n3\n4\n5\n6\n").unwrap();
        }
    }

    #[test]
    fn three_toy_graphs() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), "-1\n1\n1\n", true);
        let g = load_tu_dataset(d.path(), "TOY", TuOptions::default()).unwrap();
        assert_eq!(g.n_nodes(), 7);
        assert_eq!(g.n_graphs(), 3);
        assert_eq!(g.graph_of().unwrap(), &[0, 0, 0, 1, 1, 1, 2]);
        assert_eq!(g.labels().unwrap(), &[0, 1, 1]);
        assert_eq!(g.n_features(), 1);
        assert_eq!(g.adjacency().nnz(), 10);
        assert!(g.adjacency().iter().all(|(r, c, _)| g.graph_of().unwrap()[r] == g.graph_of().unwrap()[c]));
    }

    #[test]
    fn degree_fallback() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), "0\n1\n0\n", false);
        let g = load_tu_dataset(d.path(), "TOY", TuOptions { degree_one_hot_width: 3 }).unwrap();
        assert_eq!(g.n_features(), 3);
        assert_eq!(g.features().row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(g.features().row(3), &[0.0, 1.0, 0.0]);
        assert_eq!(g.features().row(6), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn node_labels_view() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), "0\n1\n0\n", true);
        fs::write(d.path().join("TOY_node_labels.txt"), "5\n7\n5\n7, 1\n5\n7\n5\n").unwrap();
        let (g, graph_of) = load_tu_node_dataset(d.path(), "TOY", TuOptions::default()).unwrap();
        assert_eq!(g.labels().unwrap(), &[0, 1, 0, 1, 0, 1, 0]);
        assert_eq!(g.n_classes(), 2);
        assert!(!g.is_multi_graph());
        assert_eq!(graph_of, vec![0, 0, 0, 1, 1, 1, 2]);

        fs::write(d.path().join("TOY_node_labels.txt"), "1\n2\n").unwrap();
        let err = load_tu_node_dataset(d.path(), "TOY", TuOptions::default()).unwrap_err().to_string();
        assert!(err.contains("TOY_node_labels.txt"), "{err}");
    }

    #[test]
    fn crossing_edge_rejected() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), "0\n1\n0\n", false);
        fs::write(d.path().join("TOY_A.txt"), "1, 2\n3, 4\n").unwrap();
        let err = load_tu_dataset(d.path(), "TOY", TuOptions::default()).unwrap_err().to_string();
        assert!(err.contains("TOY_A.txt:2"), "{err}");
    }
}
