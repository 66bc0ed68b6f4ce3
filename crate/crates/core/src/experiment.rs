//! One-seed few-shot runs and their summaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{mask_training_labels, sample_k_shot, sample_k_shot_per_graph, SplitSpec};
use crate::encoders::EncoderParams;
use crate::error::{PspError, Result};
use crate::graph::GraphData;
use crate::inference::{evaluate, np_prototypes, predict};
use crate::pretrain::{pretrain, PretrainConfig};
use crate::prompt::{
    prompt_tune, prototype_embeddings, task_views, LabeledSet, PromptConfig, PromptOutcome, PromptedGraph, Task, TaskViews,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Psp,
    /// Labeled-mean prototypes, no tuning.
    PspNp,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Psp => "psp",
            Variant::PspNp => "psp-np",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = PspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psp" => Ok(Variant::Psp),
            "psp-np" => Ok(Variant::PspNp),
            other => Err(PspError::Parameter(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub k_shot: usize,
    pub val_k: usize,
    pub mask_ratio: f64,
    pub variant: Variant,
    pub pretrain: PretrainConfig,
    pub prompt: PromptConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k_shot: 3,
            val_k: 3,
            mask_ratio: 0.0,
            variant: Variant::Psp,
            pretrain: PretrainConfig::default(),
            prompt: PromptConfig::default(),
        }
    }
}

fn labels_of(g: &GraphData) -> Result<&[usize]> {
    g.labels()
        .ok_or_else(|| PspError::Dataset("few-shot evaluation needs labels".into()))
}

/// Few-shot split for `seed`, with optional label masking.
pub fn make_split(g: &GraphData, cfg: &ExperimentConfig, seed: u64) -> Result<SplitSpec> {
    let labels = labels_of(g)?;
    let split = sample_k_shot(labels, cfg.k_shot, seed, cfg.val_k)?;
    masked(split, labels, cfg, seed)
}

/// As [`make_split`], but items are drawn inside each graph of a batched
/// node-labeled dataset. `graph_of[i]` is the graph of node `i`.
pub fn make_split_per_graph(g: &GraphData, graph_of: &[usize], cfg: &ExperimentConfig, seed: u64) -> Result<SplitSpec> {
    let labels = labels_of(g)?;
    let split = sample_k_shot_per_graph(labels, graph_of, cfg.k_shot, seed, cfg.val_k)?;
    masked(split, labels, cfg, seed)
}

fn masked(split: SplitSpec, labels: &[usize], cfg: &ExperimentConfig, seed: u64) -> Result<SplitSpec> {
    if cfg.mask_ratio > 0.0 {
        mask_training_labels(&split, labels, cfg.mask_ratio, seed)
    } else {
        Ok(split)
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub tuned: Option<PromptOutcome>,
}

/// Class prototypes for one split, before any scoring.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub prototypes: Tensor,
    pub tuned: Option<PromptOutcome>,
    views: TaskViews,
    tau: f64,
}

impl Fitted {
    /// Accuracy of the prototypes on `set`.
    pub fn score(&self, set: &LabeledSet) -> Result<f64> {
        let anchors = self.views.anchors.select_rows(&set.indices());
        evaluate(&predict(&anchors, &self.prototypes, self.tau)?, &set.classes())
    }
}

/// Builds prototypes for one variant with frozen encoders. Tuning sees the
/// training and validation items only. Seeds and the task come from `prompt`.
pub fn fit_split(
    g: &GraphData,
    split: &SplitSpec,
    params: &EncoderParams,
    variant: Variant,
    prompt: &PromptConfig,
) -> Result<Fitted> {
    let labels = labels_of(g)?;
    let train = split.train_set(labels)?;
    let val = split.val_set(labels)?;
    let views = task_views(g, params, prompt.task)?;
    let (prototypes, tuned) = match variant {
        Variant::PspNp => (np_prototypes(&views.structure, &train, g.n_classes())?, None),
        Variant::Psp => {
            let validation = (!val.is_empty()).then_some(&val);
            let out = prompt_tune(g, &train, validation, params, prompt)?;
            (prototype_embeddings(g, &out.prompted, params)?, Some(out))
        }
    };
    Ok(Fitted {
        prototypes,
        tuned,
        views,
        tau: prompt.tau,
    })
}

/// Prototypes from an already tuned prompt.
pub fn fit_from_prompt(g: &GraphData, prompted: &PromptedGraph, params: &EncoderParams, tau: f64) -> Result<Fitted> {
    Ok(Fitted {
        prototypes: prototype_embeddings(g, prompted, params)?,
        tuned: None,
        views: task_views(g, params, prompted.task)?,
        tau,
    })
}

/// Validation and test sets of a split.
pub fn held_out_sets(g: &GraphData, split: &SplitSpec) -> Result<(LabeledSet, LabeledSet)> {
    let labels = labels_of(g)?;
    Ok((
        split.val_set(labels)?,
        LabeledSet::from_indices(&split.test, labels, split.k)?,
    ))
}

/// [`fit_split`] followed by validation and test scoring.
pub fn evaluate_split(
    g: &GraphData,
    split: &SplitSpec,
    params: &EncoderParams,
    variant: Variant,
    prompt: &PromptConfig,
) -> Result<Evaluation> {
    let fitted = fit_split(g, split, params, variant, prompt)?;
    let (val, test) = held_out_sets(g, split)?;
    Ok(Evaluation {
        val_accuracy: fitted.score(&val)?,
        test_accuracy: fitted.score(&test)?,
        tuned: fitted.tuned,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub split: SplitSpec,
    pub encoders: EncoderParams,
    pub pretrain_losses: Vec<f64>,
    pub evaluation: Evaluation,
}

/// Pre-trains, tunes and evaluates with every seed set to `seed`.
pub fn run_seed(g: &GraphData, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let split = make_split(g, cfg, seed)?;
    let pre = pretrain(g, &PretrainConfig { seed, ..cfg.pretrain.clone() })?;
    let prompt = PromptConfig { seed, ..cfg.prompt.clone() };
    let evaluation = evaluate_split(g, &split, &pre.params, cfg.variant, &prompt)?;
    Ok(SeedRun {
        seed,
        split,
        encoders: pre.params,
        pretrain_losses: pre.losses,
        evaluation,
    })
}

/// One tab-separated metrics row: `run_id seed task shots accuracy`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub run_id: String,
    pub seed: u64,
    pub task: Task,
    pub shots: usize,
    pub accuracy: f64,
}

impl MetricLine {
    pub const HEADER: &'static str = "run_id\tseed\ttask\tshots\taccuracy";
}

impl fmt::Display for MetricLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{:.6}",
            self.run_id, self.seed, self.task, self.shots, self.accuracy
        )
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
