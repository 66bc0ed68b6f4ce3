//! Tab-separated dump of the prompt weight matrix for plotting.

use std::fs;
use std::path::Path;

use super::node_tsv::{lines, read_text};
use crate::error::{PspError, Result};
use crate::tensor::Tensor;

/// Header `node\tlabel\tw_0…w_{C-1}`, then one row per node. Missing labels
/// are written as `-1`.
pub fn export_weight_matrix(w: &Tensor, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != w.rows() {
            return Err(PspError::Contract(format!("{} labels for {} weight rows", l.len(), w.rows())));
        }
    }
    let mut out = String::from("node\tlabel");
    for c in 0..w.cols() {
        out.push_str(&format!("\tw_{c}"));
    }
    out.push('\n');
    for r in 0..w.rows() {
        let label = labels.map_or(-1, |l| l[r] as i64);
        out.push_str(&format!("{r}\t{label}"));
        for v in w.row(r) {
            out.push_str(&format!("\t{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| PspError::io(path, e))
}

/// Reads a file written by [`export_weight_matrix`]: weights plus labels
/// (`-1` for missing).
pub fn read_weight_matrix(path: &Path) -> Result<(Tensor, Vec<i64>)> {
    let text = read_text(path)?;
    let mut it = lines(&text);
    let Some((_, header)) = it.next() else {
        return Err(PspError::data(path, 1, "empty file"));
    };
    let cols = header.split('\t').count().saturating_sub(2);
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    for (ln, line) in it {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols + 2 {
            return Err(PspError::data(path, ln, format!("expected {} fields", cols + 2)));
        }
        labels.push(
            fields[1]
                .parse()
                .map_err(|_| PspError::data(path, ln, "bad label"))?,
        );
        for f in &fields[2..] {
            data.push(f.parse::<f64>().map_err(|_| PspError::data(path, ln, format!("cannot parse `{f}`")))?);
        }
    }
    Ok((Tensor::from_vec(labels.len(), cols, data)?, labels))
}
