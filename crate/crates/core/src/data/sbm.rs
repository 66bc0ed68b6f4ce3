//! Stochastic block model graphs with controllable homophily.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PspError, Result};
use crate::graph::{build_csr, GraphData};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n: usize,
    pub classes: usize,
    /// Expected fraction of edges joining same-class nodes.
    pub homophily: f64,
    pub avg_degree: f64,
    pub feat_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n: 300,
            classes: 3,
            homophily: 0.8,
            avg_degree: 6.0,
            feat_dim: 16,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Node `i` belongs to class `i % classes`, so classes differ in size by at
/// most one. Pairs are visited in a fixed order with an edge probability
/// chosen so that the expected edge count is `n·avg_degree/2` with a fraction
/// `homophily` of them inside classes. Features are the one-hot class mean
/// plus independent `N(0, noise²)` noise.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<GraphData> {
    let SbmConfig {
        n,
        classes,
        homophily,
        avg_degree,
        feat_dim,
        noise,
        seed,
    } = *cfg;
    if classes == 0 || n < classes {
        return Err(PspError::Parameter(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    if !(0.0..=1.0).contains(&homophily) {
        return Err(PspError::Parameter(format!("homophily {homophily} outside [0, 1]")));
    }
    if feat_dim < classes {
        return Err(PspError::Parameter(format!(
            "feat_dim {feat_dim} cannot hold {classes} orthogonal class means"
        )));
    }
    if !(avg_degree >= 0.0) || !(noise >= 0.0) {
        return Err(PspError::Parameter("avg_degree and noise must be non-negative".into()));
    }

    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut sizes = vec![0usize; classes];
    for &c in &labels {
        sizes[c] += 1;
    }
    let intra_pairs: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum();
    let all_pairs = (n * (n - 1)) as f64 / 2.0;
    let inter_pairs = all_pairs - intra_pairs;
    let edges_wanted = n as f64 * avg_degree / 2.0;
    let p_in = if intra_pairs > 0.0 { (homophily * edges_wanted / intra_pairs).min(1.0) } else { 0.0 };
    let p_out = if inter_pairs > 0.0 { ((1.0 - homophily) * edges_wanted / inter_pairs).min(1.0) } else { 0.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let normal = Normal::new(0.0, noise).map_err(|e| PspError::Parameter(e.to_string()))?;
    let mut features = Tensor::zeros(n, feat_dim);
    for (i, &c) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        row[c] += 1.0;
    }
    let adjacency = build_csr(n, &edges)?;
    GraphData::new(features, adjacency, Some(labels), None, classes)
}

/// Fraction of stored edges joining same-class nodes.
pub fn edge_homophily(g: &GraphData) -> f64 {
    let labels = g.labels().expect("node labels");
    let (mut same, mut total) = (0usize, 0usize);
    for (r, c, _) in g.adjacency().iter() {
        total += 1;
        if labels[r] == labels[c] {
            same += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        same as f64 / total as f64
    }
}
