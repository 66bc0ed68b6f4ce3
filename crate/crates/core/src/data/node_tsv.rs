//! Node-classification datasets as three tab-separated files:
//! `edges.tsv` (`src\tdst`, 0-based), `features.tsv` (one row per node) and
//! `labels.tsv` (one class per line).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{PspError, Result};
use crate::graph::{build_csr, GraphData};
use crate::tensor::Tensor;

pub(crate) fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(PspError::data(path, 0, "file not found")),
        Err(e) => Err(PspError::io(path, e)),
    }
}

/// Non-blank lines with their 1-based line numbers.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse<T: std::str::FromStr>(file: &Path, line: usize, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| PspError::data(file, line, format!("cannot parse `{field}`")))
}

pub fn load_node_dataset(dir: &Path) -> Result<GraphData> {
    let feat_path = dir.join("features.tsv");
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in lines(&read_text(&feat_path)?) {
        let row = line
            .split('\t')
            .map(|f| parse(&feat_path, ln, f))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(PspError::data(
                    &feat_path,
                    ln,
                    format!("expected {} columns, got {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let f = rows.first().map_or(0, |r| r.len());
    let features = Tensor::from_vec(n, f, rows.into_iter().flatten().collect())?;

    let label_path = dir.join("labels.tsv");
    let mut labels = Vec::with_capacity(n);
    for (ln, line) in lines(&read_text(&label_path)?) {
        labels.push(parse::<usize>(&label_path, ln, line)?);
        if labels.len() > n {
            return Err(PspError::data(&label_path, ln, format!("more labels than the {n} feature rows")));
        }
    }
    if labels.len() != n {
        return Err(PspError::data(
            &label_path,
            0,
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }

    let edge_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (ln, line) in lines(&read_text(&edge_path)?) {
        let mut parts = line.split('\t');
        let (Some(s), Some(d), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(PspError::data(&edge_path, ln, "expected `src<TAB>dst`"));
        };
        let (s, d): (usize, usize) = (parse(&edge_path, ln, s)?, parse(&edge_path, ln, d)?);
        if s >= n || d >= n {
            return Err(PspError::data(&edge_path, ln, format!("edge ({s}, {d}) out of range for {n} nodes")));
        }
        edges.push((s, d));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    GraphData::new(features, build_csr(n, &edges)?, Some(labels), None, n_classes)
}

/// Writes `g` in the layout [`load_node_dataset`] reads. Each undirected edge
/// is written once with `src < dst`.
pub fn save_node_dataset(dir: &Path, g: &GraphData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PspError::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).map_err(|e| PspError::io(&p, e))?;
        f.write_all(body.as_bytes()).map_err(|e| PspError::io(&p, e))?;
        Ok(p)
    };
    let mut edges = String::new();
    for (r, c, _) in g.adjacency().iter().filter(|(r, c, _)| r < c) {
        edges.push_str(&format!("{r}\t{c}\n"));
    }
    write("edges.tsv", edges)?;
    let mut feats = String::new();
    for r in 0..g.n_nodes() {
        let row: Vec<String> = g.features().row(r).iter().map(|v| format!("{v:?}")).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    write("features.tsv", feats)?;
    let labels = g
        .labels()
        .ok_or_else(|| PspError::Contract("node dataset needs labels".into()))?;
    let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write("labels.tsv", body)?;
    Ok(())
}
