//! Dataset formats, synthetic graphs, few-shot splits and checkpoints.

mod checkpoint;
mod export;
mod node_tsv;
mod sbm;
mod split;
mod tu;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, PromptWeights, MAGIC, VERSION,
};
pub use export::{export_weight_matrix, read_weight_matrix};
pub use node_tsv::{load_node_dataset, save_node_dataset};
pub use sbm::{edge_homophily, generate_sbm, SbmConfig};
pub use split::{mask_training_labels, sample_k_shot, sample_k_shot_per_graph, SplitSpec};
pub use tu::{load_tu_dataset, load_tu_node_dataset, TuOptions};
