//! Run configuration: command-line flags over a TOML file over defaults.

use std::path::{Path, PathBuf};

use psp_core::data::SbmConfig;
use psp_core::prompt::{LR_GRID, WEIGHT_DECAY_GRID};
use psp_core::{PretrainConfig, PromptConfig, Task, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_DROPOUT_GRID: [f64; 3] = [0.2, 0.5, 0.8];

/// Every setting a run can take. Unset fields fall through to the next
/// source. Also the schema of the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub task: Option<Task>,
    pub tu_name: Option<String>,
    pub per_graph_split: Option<bool>,
    pub k_shot: Option<usize>,
    pub val_k: Option<usize>,
    pub mask_ratio: Option<f64>,
    pub edge_ratio: Option<f64>,
    pub tau: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub pretrain_lr: Option<f64>,
    pub pretrain_weight_decay: Option<f64>,
    pub pretrain_epochs: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub variant: Option<Variant>,
    pub n: Option<usize>,
    pub classes: Option<usize>,
    pub homophily: Option<f64>,
    pub avg_degree: Option<f64>,
    pub feat_dim: Option<usize>,
    pub noise: Option<f64>,
    pub lr_grid: Option<Vec<f64>>,
    pub weight_decay_grid: Option<Vec<f64>>,
    pub dropout_grid: Option<Vec<f64>>,
    pub initial: Option<bool>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings, echoed at the start of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub task: Task,
    pub tu_name: Option<String>,
    pub per_graph_split: bool,
    pub k_shot: usize,
    pub val_k: usize,
    pub mask_ratio: f64,
    pub edge_ratio: f64,
    pub tau: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub pretrain_epochs: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub n: usize,
    pub classes: usize,
    pub homophily: f64,
    pub avg_degree: f64,
    pub feat_dim: usize,
    pub noise: f64,
    pub lr_grid: Vec<f64>,
    pub weight_decay_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub initial: bool,
}

impl RunConfig {
    pub fn resolve(command: &str, flags: Overrides, file: Overrides) -> Result<Self, CliError> {
        let pre = PretrainConfig::default();
        let prompt = PromptConfig::default();
        let sbm = SbmConfig::default();
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                flags.$field.clone().or(file.$field.clone()).unwrap_or_else(|| $default)
            };
            ($field:ident) => {
                flags.$field.clone().or(file.$field.clone())
            };
        }
        if flags.seed.is_some() && flags.seeds.is_some() {
            return Err(CliError::Usage("--seed and --seeds are mutually exclusive".into()));
        }
        if file.seed.is_some() && file.seeds.is_some() {
            return Err(CliError::Usage("config sets both `seed` and `seeds`".into()));
        }
        // A flag of either form beats the file.
        let seeds = match (&flags.seed, &flags.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(list)) => list.clone(),
            (None, None) => match (&file.seed, &file.seeds) {
                (Some(s), _) => vec![*s],
                (None, Some(list)) => list.clone(),
                (None, None) => DEFAULT_SEEDS.to_vec(),
            },
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        Ok(RunConfig {
            command: command.to_string(),
            data_dir: pick!(data_dir),
            out: pick!(out),
            checkpoint: pick!(checkpoint),
            loss_log: pick!(loss_log),
            task: pick!(task, prompt.task),
            tu_name: pick!(tu_name),
            per_graph_split: pick!(per_graph_split, false),
            k_shot: pick!(k_shot, 3),
            val_k: pick!(val_k, 3),
            mask_ratio: pick!(mask_ratio, 0.0),
            edge_ratio: pick!(edge_ratio, prompt.edge_ratio),
            tau: pick!(tau, prompt.tau),
            lr: pick!(lr, prompt.lr),
            weight_decay: pick!(weight_decay, prompt.weight_decay),
            epochs: pick!(epochs, prompt.epochs),
            patience: pick!(patience, prompt.patience),
            pretrain_lr: pick!(pretrain_lr, pre.lr),
            pretrain_weight_decay: pick!(pretrain_weight_decay, pre.weight_decay),
            pretrain_epochs: pick!(pretrain_epochs, pre.epochs),
            hidden_dim: pick!(hidden_dim, pre.hidden_dim),
            dropout: pick!(dropout, pre.dropout),
            seeds,
            variant: pick!(variant, Variant::Psp),
            n: pick!(n, sbm.n),
            classes: pick!(classes, sbm.classes),
            homophily: pick!(homophily, sbm.homophily),
            avg_degree: pick!(avg_degree, sbm.avg_degree),
            feat_dim: pick!(feat_dim, sbm.feat_dim),
            noise: pick!(noise, sbm.noise),
            lr_grid: pick!(lr_grid, LR_GRID.to_vec()),
            weight_decay_grid: pick!(weight_decay_grid, WEIGHT_DECAY_GRID.to_vec()),
            dropout_grid: pick!(dropout_grid, DEFAULT_DROPOUT_GRID.to_vec()),
            initial: pick!(initial, false),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            weight_decay: self.pretrain_weight_decay,
            tau: self.tau,
            dropout: self.dropout,
            hidden_dim: self.hidden_dim,
            seed,
            include_positive_in_denominator: false,
        }
    }

    pub fn prompt_config(&self, seed: u64) -> PromptConfig {
        PromptConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            tau: self.tau,
            edge_ratio: self.edge_ratio,
            seed,
            task: self.task,
            patience: self.patience,
        }
    }

    pub fn experiment(&self) -> psp_core::ExperimentConfig {
        psp_core::ExperimentConfig {
            k_shot: self.k_shot,
            val_k: self.val_k,
            mask_ratio: self.mask_ratio,
            variant: self.variant,
            pretrain: self.pretrain_config(self.seed()),
            prompt: self.prompt_config(self.seed()),
        }
    }

    pub fn sbm(&self) -> SbmConfig {
        SbmConfig {
            n: self.n,
            classes: self.classes,
            homophily: self.homophily,
            avg_degree: self.avg_degree,
            feat_dim: self.feat_dim,
            noise: self.noise,
            seed: self.seed(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
