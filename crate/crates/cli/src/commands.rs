use std::io::Write;
use std::path::{Path, PathBuf};

use psp_core::data::{
    edge_homophily, export_weight_matrix, generate_sbm, load_checkpoint, load_node_dataset, load_tu_dataset,
    load_tu_node_dataset,
    save_checkpoint, save_node_dataset, Checkpoint, PromptWeights, SplitSpec, TuOptions,
};
use psp_core::experiment::{
    fit_from_prompt, fit_split, held_out_sets, make_split, make_split_per_graph, mean_std, Fitted,
};
use psp_core::prompt::{init_edge_weights, task_prototype_features, task_views};
use psp_core::{pretrain, ExperimentConfig, GraphData, MetricLine, PretrainConfig, PromptConfig, PromptedGraph, PspError, Task, Variant};

use crate::config::RunConfig;
use crate::CliError;

pub fn dispatch(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.command.as_str() {
        "synth" => synth(cfg),
        "pretrain" => pretrain_cmd(cfg),
        "tune" => tune(cfg),
        "eval" => eval(cfg),
        "sweep" => sweep(cfg),
        "export-w" => export_w(cfg),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// A loaded dataset. `graph_of` is set for node tasks read from TU files,
/// where nodes belong to separate graphs of one batched graph.
struct Dataset {
    g: GraphData,
    graph_of: Option<Vec<usize>>,
}

impl Dataset {
    fn split(&self, cfg: &RunConfig, exp: &ExperimentConfig, seed: u64) -> Result<SplitSpec, CliError> {
        if !cfg.per_graph_split {
            return Ok(make_split(&self.g, exp, seed)?);
        }
        let graph_of = self.graph_of.as_deref().ok_or_else(|| {
            CliError::Usage("--per-graph-split needs a batched node dataset (--task node --tu-name NAME)".into())
        })?;
        Ok(make_split_per_graph(&self.g, graph_of, exp, seed)?)
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = require(&cfg.data_dir, "--data")?;
    let (g, graph_of) = match (cfg.task, cfg.tu_name.as_deref()) {
        (Task::Node, None) => (load_node_dataset(dir)?, None),
        (Task::Node, Some(name)) => {
            let (g, graph_of) = load_tu_node_dataset(dir, name, TuOptions::default())?;
            (g, Some(graph_of))
        }
        (Task::Graph, Some(name)) => (load_tu_dataset(dir, name, TuOptions::default())?, None),
        (Task::Graph, None) => return Err(CliError::Usage("--tu-name is required for graph tasks".into())),
    };
    Ok(Dataset { g, graph_of })
}

fn labels(g: &GraphData) -> Result<&[usize], CliError> {
    g.labels()
        .ok_or_else(|| PspError::Dataset("dataset has no labels".into()).into())
}

fn loss_log_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.loss_log.clone().unwrap_or_else(|| out.with_extension("loss.tsv"))
}

fn print_metrics(lines: &[String]) {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "{}", MetricLine::HEADER);
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
}

fn metric(cfg: &RunConfig, run_id: String, seed: u64, accuracy: f64) -> MetricLine {
    MetricLine {
        run_id,
        seed,
        task: cfg.task,
        shots: cfg.k_shot,
        accuracy,
    }
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = require(&cfg.out, "--out")?;
    let g = generate_sbm(&cfg.sbm())?;
    save_node_dataset(out, &g)?;
    eprintln!(
        "synth: {} nodes, {} edges, edge homophily {:.3} -> {}",
        g.n_nodes(),
        g.adjacency().nnz() / 2,
        edge_homophily(&g),
        out.display()
    );
    Ok(())
}

fn pretrain_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let out = require(&cfg.out, "--out")?;
    let g = load_data(cfg)?.g;
    let seed = cfg.seed();
    let pre = pretrain(&g, &cfg.pretrain_config(seed))?;
    let ckpt = Checkpoint {
        hidden_dim: cfg.hidden_dim,
        tau: cfg.tau,
        seed,
        encoders: pre.params.clone(),
        prompt: None,
    };
    save_checkpoint(out, &ckpt)?;
    let log = loss_log_path(cfg, out);
    pre.write_loss_log(&log)?;
    if let (Some(first), Some(last)) = (pre.losses.first(), pre.losses.last()) {
        eprintln!("pretrain: {} epochs, loss {first:.4} -> {last:.4}", pre.losses.len());
    }
    eprintln!("pretrain: checkpoint {}, loss log {}", out.display(), log.display());
    Ok(())
}

fn load_encoders(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let path = require(&cfg.checkpoint, "--checkpoint")?;
    Ok(load_checkpoint(path)?)
}

fn tune(cfg: &RunConfig) -> Result<(), CliError> {
    let out = require(&cfg.out, "--out")?;
    let data = load_data(cfg)?;
    let g = &data.g;
    let ckpt = load_encoders(cfg)?;
    let seed = cfg.seed();
    let split = data.split(cfg, &cfg.experiment(), seed)?;
    let fitted = fit_split(g, &split, &ckpt.encoders, Variant::Psp, &cfg.prompt_config(seed))?;
    let (val, _) = held_out_sets(g, &split)?;
    let val_acc = fitted.score(&val)?;
    let tuned = fitted.tuned.expect("psp variant tunes");
    let stored = Checkpoint {
        seed,
        prompt: Some(PromptWeights {
            weights: tuned.prompted.weights.clone(),
            mask: tuned.prompted.trainable_rows.clone(),
        }),
        ..ckpt
    };
    save_checkpoint(out, &stored)?;
    let log = loss_log_path(cfg, out);
    tuned.write_loss_log(&log)?;
    eprintln!(
        "tune: {} trainable entries, best epoch {}, checkpoint {}, loss log {}",
        tuned.prompted.parameter_count(),
        tuned.best_epoch,
        out.display(),
        log.display()
    );
    print_metrics(&[metric(cfg, "psp-val".into(), seed, val_acc).to_string()]);
    Ok(())
}

/// Prompt stored in a tuned checkpoint, rebuilt against its own split.
fn stored_prompt(cfg: &RunConfig, g: &GraphData, ckpt: &Checkpoint, split: &SplitSpec) -> Result<PromptedGraph, CliError> {
    let pw = ckpt
        .prompt
        .as_ref()
        .ok_or_else(|| PspError::Format("checkpoint holds no tuned weights; run `tune` first".into()))?;
    let train = split.train_set(labels(g)?)?;
    Ok(PromptedGraph {
        task: cfg.task,
        proto_features: task_prototype_features(g, &train, cfg.task)?,
        weights: pw.weights.clone(),
        trainable_rows: pw.mask.clone(),
    })
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let g = &data.g;
    let ckpt = load_encoders(cfg)?;
    let exp = cfg.experiment();
    let mut lines = Vec::new();
    let mut accs = Vec::new();
    if cfg.variant == Variant::Psp && ckpt.prompt.is_some() {
        let seed = ckpt.seed;
        eprintln!("eval: scoring stored weights on the split of seed {seed}");
        let split = data.split(cfg, &exp, seed)?;
        let prompted = stored_prompt(cfg, g, &ckpt, &split)?;
        let fitted = fit_from_prompt(g, &prompted, &ckpt.encoders, cfg.tau)?;
        let (_, test) = held_out_sets(g, &split)?;
        let acc = fitted.score(&test)?;
        accs.push(acc);
        lines.push(metric(cfg, cfg.variant.to_string(), seed, acc).to_string());
    } else {
        for &seed in &cfg.seeds {
            let split = data.split(cfg, &exp, seed)?;
            let fitted = fit_split(g, &split, &ckpt.encoders, cfg.variant, &cfg.prompt_config(seed))?;
            let (_, test) = held_out_sets(g, &split)?;
            let acc = fitted.score(&test)?;
            accs.push(acc);
            lines.push(metric(cfg, cfg.variant.to_string(), seed, acc).to_string());
        }
    }
    let (mean, std) = mean_std(&accs);
    eprintln!("eval: {} over {} seed(s): {:.4} ± {:.4}", cfg.variant, accs.len(), mean, std);
    print_metrics(&lines);
    Ok(())
}

struct GridPoint {
    dropout: f64,
    lr: f64,
    weight_decay: f64,
    val_mean: f64,
    fitted: Vec<Fitted>,
}

impl GridPoint {
    fn id(&self) -> String {
        format!("psp[lr={},wd={},dropout={}]", self.lr, self.weight_decay, self.dropout)
    }
}

fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.lr_grid.is_empty() || cfg.weight_decay_grid.is_empty() || cfg.dropout_grid.is_empty() {
        return Err(CliError::Usage("sweep grids must be non-empty".into()));
    }
    let data = load_data(cfg)?;
    let g = &data.g;
    let exp = cfg.experiment();
    let splits = cfg
        .seeds
        .iter()
        .map(|&s| data.split(cfg, &exp, s))
        .collect::<Result<Vec<_>, _>>()?;
    let held_out = splits
        .iter()
        .map(|s| held_out_sets(g, s))
        .collect::<psp_core::Result<Vec<_>>>()?;

    let mut best: Option<GridPoint> = None;
    for &dropout in &cfg.dropout_grid {
        let encoders = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let pc = PretrainConfig {
                    dropout,
                    ..cfg.pretrain_config(seed)
                };
                pretrain(g, &pc).map(|o| o.params)
            })
            .collect::<psp_core::Result<Vec<_>>>()?;
        for &lr in &cfg.lr_grid {
            for &weight_decay in &cfg.weight_decay_grid {
                let mut fitted = Vec::with_capacity(cfg.seeds.len());
                let mut vals = Vec::with_capacity(cfg.seeds.len());
                for (i, &seed) in cfg.seeds.iter().enumerate() {
                    let pc = PromptConfig {
                        lr,
                        weight_decay,
                        ..cfg.prompt_config(seed)
                    };
                    let f = fit_split(g, &splits[i], &encoders[i], Variant::Psp, &pc)?;
                    vals.push(f.score(&held_out[i].0)?);
                    fitted.push(f);
                }
                let point = GridPoint {
                    dropout,
                    lr,
                    weight_decay,
                    val_mean: mean_std(&vals).0,
                    fitted,
                };
                eprintln!("sweep: {} validation {:.4}", point.id(), point.val_mean);
                if best.as_ref().map_or(true, |b| point.val_mean > b.val_mean) {
                    best = Some(point);
                }
            }
        }
    }

    let best = best.expect("grids are non-empty");
    let id = best.id();
    let mut lines = Vec::new();
    let mut tests = Vec::new();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let acc = best.fitted[i].score(&held_out[i].1)?;
        tests.push(acc);
        lines.push(metric(cfg, id.clone(), seed, acc).to_string());
    }
    let (mean, std) = mean_std(&tests);
    eprintln!("sweep: selected {id} (validation {:.4}); test {mean:.4} ± {std:.4}", best.val_mean);
    lines.push(format!("{id}\tmean\t{}\t{}\t{mean:.6}", cfg.task, cfg.k_shot));
    lines.push(format!("{id}\tstd\t{}\t{}\t{std:.6}", cfg.task, cfg.k_shot));
    print_metrics(&lines);
    Ok(())
}

fn export_w(cfg: &RunConfig) -> Result<(), CliError> {
    let out = require(&cfg.out, "--out")?;
    let ckpt = load_encoders(cfg)?;
    let data = match cfg.data_dir {
        Some(_) => Some(load_data(cfg)?),
        None => None,
    };
    let g = data.as_ref().map(|d| &d.g);
    let weights = if cfg.initial {
        let data = data
            .as_ref()
            .ok_or_else(|| CliError::Usage("--initial needs --data".into()))?;
        let g = &data.g;
        let split = data.split(cfg, &cfg.experiment(), ckpt.seed)?;
        let train = split.train_set(labels(g)?)?;
        let views = task_views(g, &ckpt.encoders, cfg.task)?;
        let mut w0 = init_edge_weights(&views.structure, &train, g.n_classes())?;
        if let Some(pw) = &ckpt.prompt {
            for (r, keep) in pw.mask.iter().enumerate() {
                if !keep {
                    w0.row_mut(r).fill(0.0);
                }
            }
        }
        w0
    } else {
        ckpt.prompt
            .as_ref()
            .ok_or_else(|| PspError::Format("checkpoint holds no tuned weights; run `tune` first".into()))?
            .weights
            .clone()
    };
    let node_labels = match &g {
        Some(g) => Some(labels(g)?),
        None => None,
    };
    export_weight_matrix(&weights, node_labels, out)?;
    eprintln!("export-w: {}×{} -> {}", weights.rows(), weights.cols(), out.display());
    Ok(())
}
