//! Dual-view contrastive pre-training.
//!
//! Each node's MLP embedding is pulled toward its own GCN embedding and
//! pushed away from every other node's GCN embedding. Anchors come from the
//! MLP view only. The denominator skips the positive pair, so the loss can go
//! below zero; `include_positive_in_denominator` switches to the usual
//! NT-Xent form.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::{gnn_forward, mlp_forward, EncoderParams, Mode, Propagation};
use crate::error::{PspError, Result};
use crate::graph::{gcn_normalize, GraphData};
use crate::optim::AdamState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub include_positive_in_denominator: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-4,
            tau: 0.5,
            dropout: 0.2,
            hidden_dim: 128,
            seed: 0,
            include_positive_in_denominator: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(PspError::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PspError::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden_dim == 0 {
            return Err(PspError::Parameter("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Contrastive loss between the MLP view `z1` and the GCN view `z2`.
pub fn ntxent_pretrain_loss(tape: &mut Tape, z1: Var, z2: Var, tau: f64, include_positive: bool) -> Result<Var> {
    let (s1, s2) = (tape.shape(z1), tape.shape(z2));
    if s1 != s2 {
        return Err(PspError::dim("ntxent_pretrain_loss", s1, s2));
    }
    if s1.0 < 2 {
        return Err(PspError::Contract(format!(
            "contrastive pre-training needs at least 2 nodes, got {}",
            s1.0
        )));
    }
    let sim = tape.cosine_sim_matrix(z1, z2)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let positives: Vec<usize> = (0..s1.0).collect();
    tape.contrastive_nll(logits, &positives, include_positive)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    /// Loss at each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

impl PretrainOutcome {
    /// Tab-separated `epoch\tloss` lines.
    pub fn write_loss_log(&self, path: &Path) -> Result<()> {
        write_loss_log(path, &self.losses)
    }
}

pub(crate) fn write_loss_log(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| PspError::io(path, e))?);
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(f, "{epoch}\t{loss}").map_err(|e| PspError::io(path, e))?;
    }
    f.flush().map_err(|e| PspError::io(path, e))
}

/// Full-batch pre-training. Returns frozen encoders.
pub fn pretrain(g: &GraphData, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if g.n_nodes() < 2 {
        return Err(PspError::Contract("pre-training needs at least 2 nodes".into()));
    }
    let mut params = EncoderParams::init(g.n_features(), cfg.hidden_dim, cfg.seed);
    let a_norm = Arc::new(gcn_normalize(g.adjacency())?);
    let prop = Propagation::Fixed(a_norm);
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mode = Mode::Train {
            dropout: cfg.dropout,
            seed: cfg.seed,
            step: epoch as u64,
        };
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(g.features().clone());
        let z1 = mlp_forward(&mut tape, x, &bound, mode)?;
        let z2 = gnn_forward(&mut tape, x, &prop, &bound, mode)?;
        let loss = ntxent_pretrain_loss(&mut tape, z1, z2, cfg.tau, cfg.include_positive_in_denominator)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(PspError::Numeric(format!("pre-training loss is {value} at epoch {epoch}")));
        }
        losses.push(value);
        tape.backward(loss)?;
        params.collect_grads(&tape, &bound);
        adam.step(&mut params.params_mut())?;
    }
    params.frozen = true;
    Ok(PretrainOutcome { params, losses })
}
