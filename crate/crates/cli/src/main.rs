//! `psp`: synthetic data, pre-training, prompt tuning, evaluation, sweeps and
//! weight export from the command line.
//!
//! Metrics go to stdout as TSV, logs to stderr. The first log line of every
//! run is the resolved configuration as JSON. Exit status is 0 on success,
//! 2 on usage errors and 1 on runtime errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psp_core::{PspError, Task, Variant};

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(PspError),
}

impl From<PspError> for CliError {
    fn from(e: PspError) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "psp", version, about = "Structure prompt tuning for few-shot graph classification")]
struct Cli {
    /// TOML file supplying defaults for any flag (keys use snake_case).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a stochastic block model dataset in the node TSV layout.
    Synth {
        #[command(flatten)]
        sbm: SbmFlags,
        #[command(flatten)]
        seeds: SeedFlags,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train both encoders and write a checkpoint plus loss log.
    Pretrain {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        seeds: SeedFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
        #[command(flatten)]
        tau: TauFlag,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss log path (default: next to the checkpoint).
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Tune prompt weights on a few-shot split and store them with the encoders.
    Tune {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        seeds: SeedFlags,
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        prompt: PromptFlags,
        #[command(flatten)]
        tau: TauFlag,
        /// Pre-trained checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output checkpoint with the tuned weights.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Test accuracy per seed. A checkpoint holding tuned weights is scored
    /// on its own split; otherwise each seed gets a fresh split.
    Eval {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        seeds: SeedFlags,
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        prompt: PromptFlags,
        #[command(flatten)]
        tau: TauFlag,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// psp or psp-np.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Grid search over prompt lr, weight decay and dropout, selected by mean
    /// validation accuracy; reports test accuracy of the winner per seed.
    Sweep {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        seeds: SeedFlags,
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
        #[command(flatten)]
        prompt: PromptFlags,
        #[command(flatten)]
        tau: TauFlag,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        weight_decay_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        dropout_grid: Option<Vec<f64>>,
    },
    /// Dump the prompt weight matrix as TSV.
    ExportW {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        tau: TauFlag,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export the weights before tuning instead (needs --data).
        #[arg(long)]
        initial: bool,
    },
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Dataset directory (node TSV, or TU files for graph tasks).
    #[arg(long = "data")]
    data_dir: Option<PathBuf>,
    /// node or graph.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// TU dataset name, the prefix of its files. With `--task node` the
    /// nodes are classified using `NAME_node_labels.txt`.
    #[arg(long)]
    tu_name: Option<String>,
    /// Sample the few-shot split inside each graph of a batched node dataset.
    #[arg(long)]
    per_graph_split: bool,
}

#[derive(Args, Debug)]
struct SeedFlags {
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
struct SplitFlags {
    #[arg(long)]
    k_shot: Option<usize>,
    /// Validation items per class.
    #[arg(long)]
    val_k: Option<usize>,
    /// Fraction of training labels to hide.
    #[arg(long)]
    mask_ratio: Option<f64>,
}

#[derive(Args, Debug)]
struct EncoderFlags {
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    pretrain_weight_decay: Option<f64>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct PromptFlags {
    /// Prompt-tuning learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Fraction of non-training rows of W allowed to carry weight.
    #[arg(long)]
    edge_ratio: Option<f64>,
}

#[derive(Args, Debug)]
struct TauFlag {
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug)]
struct SbmFlags {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Homophily.
    #[arg(long = "h")]
    homophily: Option<f64>,
    #[arg(long)]
    avg_degree: Option<f64>,
    #[arg(long)]
    feat_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "node" => Ok(Task::Node),
        "graph" => Ok(Task::Graph),
        other => Err(format!("unknown task `{other}` (node|graph)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: PspError| e.to_string())
}

impl DataFlags {
    fn apply(self, o: &mut Overrides) {
        o.data_dir = self.data_dir;
        o.task = self.task;
        o.tu_name = self.tu_name;
        o.per_graph_split = self.per_graph_split.then_some(true);
    }
}

impl SeedFlags {
    fn apply(self, o: &mut Overrides) {
        o.seed = self.seed;
        o.seeds = self.seeds;
    }
}

impl SplitFlags {
    fn apply(self, o: &mut Overrides) {
        o.k_shot = self.k_shot;
        o.val_k = self.val_k;
        o.mask_ratio = self.mask_ratio;
    }
}

impl EncoderFlags {
    fn apply(self, o: &mut Overrides) {
        o.pretrain_lr = self.pretrain_lr;
        o.pretrain_weight_decay = self.pretrain_weight_decay;
        o.pretrain_epochs = self.pretrain_epochs;
        o.hidden_dim = self.hidden_dim;
        o.dropout = self.dropout;
    }
}

impl PromptFlags {
    fn apply(self, o: &mut Overrides) {
        o.lr = self.lr;
        o.weight_decay = self.weight_decay;
        o.epochs = self.epochs;
        o.patience = self.patience;
        o.edge_ratio = self.edge_ratio;
    }
}

impl SbmFlags {
    fn apply(self, o: &mut Overrides) {
        o.n = self.n;
        o.classes = self.classes;
        o.homophily = self.homophily;
        o.avg_degree = self.avg_degree;
        o.feat_dim = self.feat_dim;
        o.noise = self.noise;
    }
}

/// Command name and the flags given for it.
fn flag_overrides(command: Command) -> (&'static str, Overrides) {
    let mut o = Overrides::default();
    let name = match command {
        Command::Synth { sbm, seeds, out } => {
            sbm.apply(&mut o);
            seeds.apply(&mut o);
            o.out = out;
            "synth"
        }
        Command::Pretrain {
            data,
            seeds,
            encoder,
            tau,
            out,
            loss_log,
        } => {
            data.apply(&mut o);
            seeds.apply(&mut o);
            encoder.apply(&mut o);
            o.tau = tau.tau;
            o.out = out;
            o.loss_log = loss_log;
            "pretrain"
        }
        Command::Tune {
            data,
            seeds,
            split,
            prompt,
            tau,
            checkpoint,
            out,
            loss_log,
        } => {
            data.apply(&mut o);
            seeds.apply(&mut o);
            split.apply(&mut o);
            prompt.apply(&mut o);
            o.tau = tau.tau;
            o.checkpoint = checkpoint;
            o.out = out;
            o.loss_log = loss_log;
            "tune"
        }
        Command::Eval {
            data,
            seeds,
            split,
            prompt,
            tau,
            checkpoint,
            variant,
        } => {
            data.apply(&mut o);
            seeds.apply(&mut o);
            split.apply(&mut o);
            prompt.apply(&mut o);
            o.tau = tau.tau;
            o.checkpoint = checkpoint;
            o.variant = variant;
            "eval"
        }
        Command::Sweep {
            data,
            seeds,
            split,
            encoder,
            prompt,
            tau,
            lr_grid,
            weight_decay_grid,
            dropout_grid,
        } => {
            data.apply(&mut o);
            seeds.apply(&mut o);
            split.apply(&mut o);
            encoder.apply(&mut o);
            prompt.apply(&mut o);
            o.tau = tau.tau;
            o.lr_grid = lr_grid;
            o.weight_decay_grid = weight_decay_grid;
            o.dropout_grid = dropout_grid;
            "sweep"
        }
        Command::ExportW {
            data,
            split,
            tau,
            checkpoint,
            out,
            initial,
        } => {
            data.apply(&mut o);
            split.apply(&mut o);
            o.tau = tau.tau;
            o.checkpoint = checkpoint;
            o.out = out;
            o.initial = initial.then_some(true);
            "export-w"
        }
    };
    (name, o)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    let (name, flags) = flag_overrides(cli.command);
    let cfg = RunConfig::resolve(name, flags, file)?;
    eprintln!("config {}", cfg.to_json());
    commands::dispatch(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
