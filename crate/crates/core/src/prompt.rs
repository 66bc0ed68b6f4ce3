//! Structure prompt tuning.
//!
//! One virtual node per class is attached to the graph through a weight
//! matrix `W`. Prototype attributes start as labeled-class feature means,
//! `W` starts as the dot products between GCN embeddings and labeled-class
//! mean embeddings, and the prototype embeddings are whatever the frozen GCN
//! produces for the virtual nodes. Only `W` is trained.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::{gnn_forward_projected, EncoderParams, Mode, Propagation};
use crate::error::{PspError, Result};
use crate::graph::{gcn_normalize, mean_readout, GraphData};
use crate::inference::{evaluate, predict};
use crate::optim::{AdamState, Param};
use crate::prompted::AugmentedOperator;
use crate::tensor::Tensor;

pub const LR_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const WEIGHT_DECAY_GRID: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Node,
    Graph,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Node => "node",
            Task::Graph => "graph",
        })
    }
}

/// Labeled items, `(index, class)`. Indices are nodes for node tasks and
/// graphs for graph tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    items: Vec<(usize, usize)>,
    k: usize,
}

impl LabeledSet {
    pub fn new(items: Vec<(usize, usize)>, k: usize) -> Result<Self> {
        let mut idx: Vec<usize> = items.iter().map(|(i, _)| *i).collect();
        idx.sort_unstable();
        if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
            return Err(PspError::Dataset(format!("index {} labeled twice", w[0])));
        }
        Ok(LabeledSet { items, k })
    }

    /// Builds from indices and a full label vector.
    pub fn from_indices(indices: &[usize], labels: &[usize], k: usize) -> Result<Self> {
        let items = indices
            .iter()
            .map(|&i| {
                labels
                    .get(i)
                    .map(|&c| (i, c))
                    .ok_or_else(|| PspError::Dataset(format!("index {i} has no label")))
            })
            .collect::<Result<_>>()?;
        LabeledSet::new(items, k)
    }

    pub fn items(&self) -> &[(usize, usize)] {
        &self.items
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|(i, _)| *i).collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.items.iter().map(|(_, c)| *c).collect()
    }
}

/// Row `c` is the mean of `t`'s rows over labeled items of class `c`.
pub(crate) fn class_means(t: &Tensor, labeled: &LabeledSet, n_classes: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(n_classes, t.cols());
    let mut counts = vec![0usize; n_classes];
    for &(i, c) in labeled.items() {
        if c >= n_classes {
            return Err(PspError::Dataset(format!("class {c} outside [0, {n_classes})")));
        }
        if i >= t.rows() {
            return Err(PspError::Dataset(format!("labeled index {i} beyond {} rows", t.rows())));
        }
        counts[c] += 1;
        for (o, v) in out.row_mut(c).iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(PspError::Dataset(format!("class {c} has no labeled items")));
        }
        for o in out.row_mut(c) {
            *o /= n as f64;
        }
    }
    Ok(out)
}

/// Prototype attributes: mean feature row of each labeled class.
pub fn init_prototype_features(x: &Tensor, labeled: &LabeledSet, n_classes: usize) -> Result<Tensor> {
    class_means(x, labeled, n_classes)
}

/// `W = Z² Pᵀ` with `P` the labeled-class means of `Z²`.
pub fn init_edge_weights(z2: &Tensor, labeled: &LabeledSet, n_classes: usize) -> Result<Tensor> {
    let p = class_means(z2, labeled, n_classes)?;
    z2.matmul_t(&p)
}

/// Rows of `W` allowed to carry weight: every labeled row plus
/// `min(⌊r·n⌋, n − n_labeled)` rows drawn uniformly from the rest.
pub fn restrict_edge_ratio(n: usize, labeled: &LabeledSet, r: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(PspError::Parameter(format!("edge ratio {r} outside [0, 1]")));
    }
    let mut mask = vec![false; n];
    for i in labeled.indices() {
        if i >= n {
            return Err(PspError::Dataset(format!("labeled index {i} beyond {n} rows")));
        }
        mask[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    let want = ((r * n as f64 + 1e-9).floor() as usize).min(rest.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in sample(&mut rng, rest.len(), want).into_iter() {
        mask[rest[k]] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub edge_ratio: f64,
    pub seed: u64,
    pub task: Task,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            epochs: 200,
            lr: 1e-2,
            weight_decay: 1e-4,
            tau: 0.5,
            edge_ratio: 1.0,
            seed: 0,
            task: Task::Node,
            patience: 30,
        }
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (v - g).abs() <= 1e-9 * g)
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if !on_grid(self.lr, &LR_GRID) {
            return Err(PspError::Parameter(format!("prompt lr {} not in {LR_GRID:?}", self.lr)));
        }
        if !on_grid(self.weight_decay, &WEIGHT_DECAY_GRID) {
            return Err(PspError::Parameter(format!(
                "prompt weight decay {} not in {WEIGHT_DECAY_GRID:?}",
                self.weight_decay
            )));
        }
        if !(self.tau > 0.0) {
            return Err(PspError::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.edge_ratio) {
            return Err(PspError::Parameter(format!("edge ratio {} outside [0, 1]", self.edge_ratio)));
        }
        Ok(())
    }
}

/// Tuned prompt state.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptedGraph {
    pub task: Task,
    /// `C × F` prototype attributes.
    pub proto_features: Tensor,
    /// `rows × C`; rows are nodes (node task) or graphs (graph task).
    pub weights: Tensor,
    pub trainable_rows: Vec<bool>,
}

impl PromptedGraph {
    pub fn n_prototypes(&self) -> usize {
        self.proto_features.rows()
    }

    /// Number of entries of `W` that may be nonzero.
    pub fn parameter_count(&self) -> usize {
        self.trainable_rows.iter().filter(|m| **m).count() * self.weights.cols()
    }
}

/// Evaluation-mode embeddings the prompt stage works from.
#[derive(Debug, Clone)]
pub struct TaskViews {
    /// MLP-view rows per item (`Z¹` or `S¹`).
    pub anchors: Tensor,
    /// GCN-view rows per item (`Z²` or `S²`).
    pub structure: Tensor,
}

/// Node-task views: `Z¹` and `Z²` on the original graph.
pub fn node_task_views(g: &GraphData, params: &EncoderParams) -> Result<TaskViews> {
    let a_norm = Arc::new(gcn_normalize(g.adjacency())?);
    Ok(TaskViews {
        anchors: params.embed_mlp(g.features())?,
        structure: params.embed_gnn(g.features(), &a_norm)?,
    })
}

/// Graph-task views `S¹`, `S²`: per-graph mean readout of each view.
pub fn graph_task_views(g: &GraphData, params: &EncoderParams) -> Result<(Tensor, Tensor)> {
    let graph_of = g
        .graph_of()
        .ok_or_else(|| PspError::Contract("graph task needs graph membership".into()))?;
    let nodes = node_task_views(g, params)?;
    Ok((
        mean_readout(&nodes.anchors, graph_of, g.n_graphs())?,
        mean_readout(&nodes.structure, graph_of, g.n_graphs())?,
    ))
}

pub fn task_views(g: &GraphData, params: &EncoderParams, task: Task) -> Result<TaskViews> {
    match task {
        Task::Node => node_task_views(g, params),
        Task::Graph => {
            let (anchors, structure) = graph_task_views(g, params)?;
            Ok(TaskViews { anchors, structure })
        }
    }
}

/// Prototype attributes for either task. For graphs, each labeled graph
/// contributes its mean node feature row.
pub fn task_prototype_features(g: &GraphData, labeled: &LabeledSet, task: Task) -> Result<Tensor> {
    match task {
        Task::Node => init_prototype_features(g.features(), labeled, g.n_classes()),
        Task::Graph => {
            let graph_of = g
                .graph_of()
                .ok_or_else(|| PspError::Contract("graph task needs graph membership".into()))?;
            let per_graph = mean_readout(g.features(), graph_of, g.n_graphs())?;
            init_prototype_features(&per_graph, labeled, g.n_classes())
        }
    }
}

/// Frozen GCN over the prompted graph, differentiable in `W`.
///
/// The first-layer projection of `[X; X_P]` is computed once.
pub struct PrototypeModel<'a> {
    params: &'a EncoderParams,
    op: AugmentedOperator,
    projected: Tensor,
}

impl<'a> PrototypeModel<'a> {
    pub fn new(g: &GraphData, proto_features: &Tensor, params: &'a EncoderParams, task: Task) -> Result<Self> {
        let c = proto_features.rows();
        let op = match task {
            Task::Node => AugmentedOperator::for_nodes(g.adjacency(), c)?,
            Task::Graph => {
                let graph_of = g
                    .graph_of()
                    .ok_or_else(|| PspError::Contract("graph task needs graph membership".into()))?;
                AugmentedOperator::new(g.adjacency(), graph_of, g.n_graphs(), c)?
            }
        };
        let all = g.features().vstack(proto_features)?;
        let projected = all.matmul(&params.gnn[0].weight.value)?;
        Ok(PrototypeModel { params, op, projected })
    }

    pub fn operator(&self) -> &AugmentedOperator {
        &self.op
    }

    /// `C × D` prototype embeddings: the last `C` rows of the GCN output.
    pub fn forward(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        let values = self.op.normalized(tape, w)?;
        let prop = Propagation::Learned {
            pattern: Arc::clone(self.op.pattern()),
            values,
        };
        let mut frozen = self.params.clone();
        frozen.frozen = true;
        let bound = frozen.bind(tape);
        let xw = tape.constant(self.projected.clone());
        let out = gnn_forward_projected(tape, xw, &prop, &bound, Mode::Eval)?;
        let n = self.op.n_nodes();
        let rows: Vec<usize> = (n..n + self.op.n_prototypes()).collect();
        tape.select_rows(out, &rows)
    }

    pub fn embed(&self, w: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let p = self.forward(&mut tape, wv)?;
        Ok(tape.value(p).clone())
    }
}

/// Prototype embeddings `P = GNN([X; X_P], [[A, W], [Wᵀ, I]])`.
pub fn prototype_embeddings(g: &GraphData, ps: &PromptedGraph, params: &EncoderParams) -> Result<Tensor> {
    if !params.frozen {
        return Err(PspError::Contract("prototype embeddings need frozen encoders".into()));
    }
    PrototypeModel::new(g, &ps.proto_features, params, ps.task)?.embed(&ps.weights)
}

/// Contrastive loss between fixed anchors and prototypes. The denominator
/// skips each anchor's own class.
pub fn prompt_loss(tape: &mut Tape, anchors: Var, prototypes: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let c = tape.shape(prototypes).0;
    if c < 2 {
        return Err(PspError::Contract(format!("prompt loss needs at least 2 classes, got {c}")));
    }
    if tape.shape(anchors).0 == 0 {
        return Err(PspError::Contract("prompt loss needs at least one anchor".into()));
    }
    let detached = if tape.requires_grad(anchors) {
        let v = tape.value(anchors).clone();
        tape.constant(v)
    } else {
        anchors
    };
    let sim = tape.cosine_sim_matrix(detached, prototypes)?;
    let logits = tape.scale(sim, 1.0 / tau);
    tape.contrastive_nll(logits, labels, false)
}

#[derive(Debug, Clone)]
pub struct PromptOutcome {
    pub prompted: PromptedGraph,
    pub initial_weights: Tensor,
    /// Training loss per optimization step.
    pub losses: Vec<f64>,
    /// Validation accuracy per evaluated epoch, when validation was given.
    pub val_accuracy: Vec<f64>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

impl PromptOutcome {
    pub fn write_loss_log(&self, path: &Path) -> Result<()> {
        crate::pretrain::write_loss_log(path, &self.losses)
    }
}

fn detached_prompt_loss(anchors: &Tensor, prototypes: &Tensor, labels: &[usize], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(anchors.clone());
    let p = tape.constant(prototypes.clone());
    let l = prompt_loss(&mut tape, a, p, labels, tau)?;
    Ok(tape.value(l).get(0, 0))
}

/// Optimizes `W` alone. With `validation`, keeps the weights with the best
/// validation accuracy, ties going to the lower validation loss, and stops
/// after `cfg.patience` epochs without improvement.
pub fn prompt_tune(
    g: &GraphData,
    labeled: &LabeledSet,
    validation: Option<&LabeledSet>,
    params: &EncoderParams,
    cfg: &PromptConfig,
) -> Result<PromptOutcome> {
    cfg.validate()?;
    if !params.frozen {
        return Err(PspError::Contract("prompt tuning needs frozen encoders".into()));
    }
    if labeled.is_empty() {
        return Err(PspError::Contract("prompt tuning needs labeled items".into()));
    }
    let c = g.n_classes();
    let views = task_views(g, params, cfg.task)?;
    let proto_features = task_prototype_features(g, labeled, cfg.task)?;
    let mut w0 = init_edge_weights(&views.structure, labeled, c)?;
    let mask = restrict_edge_ratio(w0.rows(), labeled, cfg.edge_ratio, cfg.seed)?;
    for (r, keep) in mask.iter().enumerate() {
        if !keep {
            w0.row_mut(r).fill(0.0);
        }
    }

    let model = PrototypeModel::new(g, &proto_features, params, cfg.task)?;
    let train_anchors = views.anchors.select_rows(&labeled.indices());
    let train_labels = labeled.classes();
    let val = validation.map(|v| (views.anchors.select_rows(&v.indices()), v.classes()));

    let mut w = Param::new("prompt.w", w0.clone());
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut val_accuracy = Vec::new();
    let mut best: Option<(f64, f64, usize, Tensor)> = None;
    let mut stale = 0usize;

    for epoch in 0..=cfg.epochs {
        let mut tape = Tape::new();
        let wv = tape.param(w.value.clone());
        let p = model.forward(&mut tape, wv)?;

        if let Some((anchors, truth)) = &val {
            let prototypes = tape.value(p).clone();
            let acc = evaluate(&predict(anchors, &prototypes, cfg.tau)?, truth)?;
            let val_loss = detached_prompt_loss(anchors, &prototypes, truth, cfg.tau)?;
            val_accuracy.push(acc);
            let improved = match &best {
                None => true,
                Some((b_acc, b_loss, _, _)) => acc > *b_acc || (acc == *b_acc && val_loss < *b_loss),
            };
            if improved {
                best = Some((acc, val_loss, epoch, w.value.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    break;
                }
            }
        }
        if epoch == cfg.epochs {
            break;
        }

        let anchors = tape.constant(train_anchors.clone());
        let loss = prompt_loss(&mut tape, anchors, p, &train_labels, cfg.tau)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(PspError::Numeric(format!("prompt loss is {value} at epoch {epoch}")));
        }
        losses.push(value);
        tape.backward(loss)?;
        let mut grad = tape
            .grad(wv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(w.value.rows(), w.value.cols()));
        for (r, keep) in mask.iter().enumerate() {
            if !keep {
                grad.row_mut(r).fill(0.0);
            }
        }
        w.grad = Some(grad);
        adam.step(&mut [&mut w])?;
    }

    let (weights, best_epoch) = match best {
        Some((_, _, epoch, weights)) => (weights, epoch),
        None => (w.value, cfg.epochs),
    };
    Ok(PromptOutcome {
        prompted: PromptedGraph {
            task: cfg.task,
            proto_features,
            weights,
            trainable_rows: mask,
        },
        initial_weights: w0,
        losses,
        val_accuracy,
        best_epoch,
    })
}
