//! Toy architectures, datasets, re-initialization, training and model files.

mod arch;
mod data;
mod idx;
mod randomize;
mod serialize;
mod train;

pub use arch::{build, he_init_node, ArchitectureId};
pub use data::{synth_dataset, Dataset, Provenance, SynthKind, SynthSpec};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use randomize::{randomize, RandomizationMode, RandomizationPlan};
pub use serialize::{deserialize, from_bytes, serialize, to_bytes, FORMAT_VERSION};
pub use train::{accuracy, train, EpochLog, TrainConfig};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NodeId};

/// Splits `model` at `node` into a feature extractor and a head such that
/// running the extractor and feeding its output to the head reproduces the
/// full forward pass bit for bit.
pub fn split_at(model: &ModelGraph, node: NodeId) -> Result<(ModelGraph, ModelGraph)> {
    if node >= model.len() {
        return Err(Error::Graph(format!("no node {node}")));
    }
    if !model.is_cut(node) {
        return Err(Error::Graph(format!(
            "node '{}' is not a cut: a later node reads from before it",
            model.node(node).name()
        )));
    }
    Ok((model.prefix(node), model.suffix(node)))
}
