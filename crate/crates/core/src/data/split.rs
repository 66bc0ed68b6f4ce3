//! Few-shot train/validation/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PspError, Result};
use crate::prompt::LabeledSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn train_set(&self, labels: &[usize]) -> Result<LabeledSet> {
        LabeledSet::from_indices(&self.train, labels, self.k)
    }

    pub fn val_set(&self, labels: &[usize]) -> Result<LabeledSet> {
        LabeledSet::from_indices(&self.val, labels, self.k)
    }
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        out[c].push(i);
    }
    out
}

/// Per class, `k` training and `val_k` validation items drawn uniformly
/// without replacement; everything else is test. Lists come back sorted.
pub fn sample_k_shot(labels: &[usize], k: usize, seed: u64, val_k: usize) -> Result<SplitSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, mut members) in by_class(labels).into_iter().enumerate() {
        if members.len() < k + val_k {
            return Err(PspError::Dataset(format!(
                "class {c} has {} items, needs {} for {k}-shot with {val_k} validation",
                members.len(),
                k + val_k
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..k + val_k]);
        test.extend_from_slice(&members[k + val_k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        k,
        seed,
    })
}

/// Batched variant of [`sample_k_shot`]: every graph contributes `k`
/// training and `val_k` validation items for each class it holds at least
/// `k + val_k` of. Smaller class groups go to test whole. `graph_of[i]` is
/// the graph of node `i`.
pub fn sample_k_shot_per_graph(
    labels: &[usize],
    graph_of: &[usize],
    k: usize,
    seed: u64,
    val_k: usize,
) -> Result<SplitSpec> {
    if graph_of.len() != labels.len() {
        return Err(PspError::Dataset(format!(
            "{} graph ids for {} labels",
            graph_of.len(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n_graphs = graph_of.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); n_graphs * n_classes];
    for (i, (&c, &gid)) in labels.iter().zip(graph_of).enumerate() {
        groups[gid * n_classes + c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut covered = vec![false; n_classes];
    for (slot, mut members) in groups.into_iter().enumerate() {
        if members.len() < k + val_k || k == 0 {
            test.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        covered[slot % n_classes] = true;
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..k + val_k]);
        test.extend_from_slice(&members[k + val_k..]);
    }
    if let Some(c) = covered.iter().position(|&ok| !ok) {
        return Err(PspError::Dataset(format!(
            "no graph has {} items of class {c} for {k}-shot with {val_k} validation",
            k + val_k
        )));
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        k,
        seed,
    })
}

/// Drops a uniform `ratio` fraction of each class's training items, keeping
/// `max(1, n_c - round(ratio·n_c))` per class. Validation and test are untouched.
pub fn mask_training_labels(split: &SplitSpec, labels: &[usize], ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(PspError::Parameter(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &split.train {
        let c = labels[i];
        if groups.len() <= c {
            groups.resize(c + 1, Vec::new());
        }
        groups[c].push(i);
    }
    let mut train = Vec::with_capacity(split.train.len());
    let mut min_kept = usize::MAX;
    for mut members in groups.into_iter().filter(|g| !g.is_empty()) {
        let drop = (ratio * members.len() as f64).round() as usize;
        let keep = members.len().saturating_sub(drop).max(1);
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..keep]);
        min_kept = min_kept.min(keep);
    }
    train.sort_unstable();
    Ok(SplitSpec {
        train,
        val: split.val.clone(),
        test: split.test.clone(),
        k: if min_kept == usize::MAX { 0 } else { min_kept },
        seed: split.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(per_class: usize, classes: usize) -> Vec<usize> {
        (0..per_class * classes).map(|i| i % classes).collect()
    }

    #[test]
    fn per_graph_draws_within_each_graph() {
        // Two graphs of six nodes; graph 1 has a single node of class 2.
        let l = vec![0, 1, 2, 0, 1, 2, 0, 1, 0, 1, 2, 0];
        let g = vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let s = sample_k_shot_per_graph(&l, &g, 1, 4, 1).unwrap();
        let count = |gid: usize, c: usize| s.train.iter().filter(|&&i| g[i] == gid && l[i] == c).count();
        assert_eq!((count(0, 0), count(0, 1), count(0, 2)), (1, 1, 1));
        assert_eq!((count(1, 0), count(1, 1), count(1, 2)), (1, 1, 0));
        assert!(s.test.contains(&10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(s, sample_k_shot_per_graph(&l, &g, 1, 4, 1).unwrap());
    }

    #[test]
    fn per_graph_needs_every_class_somewhere() {
        let l = vec![0, 0, 1, 0, 0, 1];
        let g = vec![0, 0, 0, 1, 1, 1];
        assert!(sample_k_shot_per_graph(&l, &g, 2, 0, 0).is_err());
        assert!(sample_k_shot_per_graph(&l, &g, 1, 0, 0).is_ok());
        assert!(sample_k_shot_per_graph(&l, &g[..5], 1, 0, 0).is_err());
    }

    #[test]
    fn one_shot_two_classes() {
        let l = labels(5, 2);
        let s = sample_k_shot(&l, 1, 0, 0).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_ne!(l[s.train[0]], l[s.train[1]]);
        assert_eq!(s.test.len(), 8);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let l = labels(20, 3);
        let a = sample_k_shot(&l, 3, 42, 3).unwrap();
        assert_eq!(a, sample_k_shot(&l, 3, 42, 3).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_items() {
        let err = sample_k_shot(&labels(2, 2), 3, 0, 0).unwrap_err();
        assert!(err.to_string().contains("class 0"));
    }

    #[test]
    fn masking_half_of_twenty() {
        let l = labels(40, 2);
        let s = sample_k_shot(&l, 20, 1, 0).unwrap();
        let unchanged = mask_training_labels(&s, &l, 0.0, 3).unwrap();
        assert_eq!(unchanged.train, s.train);
        let m = mask_training_labels(&s, &l, 0.5, 3).unwrap();
        for c in 0..2 {
            assert_eq!(m.train.iter().filter(|&&i| l[i] == c).count(), 10);
        }
        assert_eq!(m.test, s.test);
        let all = mask_training_labels(&s, &l, 1.0, 3).unwrap();
        for c in 0..2 {
            assert_eq!(all.train.iter().filter(|&&i| l[i] == c).count(), 1);
        }
    }
}
