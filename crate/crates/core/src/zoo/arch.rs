use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, ModelGraph, NodeId, ParamKind, ParamSlot};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// The toy architectures.
///
/// * `MlpSmall`: flatten, then one or two hidden ReLU dense layers and a
///   dense logit layer.
/// * `ConvPlain`: four 3×3 conv layers (average pooling after the first
///   three) followed by two dense layers.
/// * `ConvResidual`: a conv stem, two residual blocks (conv, ReLU, conv,
///   add, ReLU) and one dense head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ArchitectureId {
    MlpSmall {
        input: Vec<usize>,
        hidden: Vec<usize>,
        classes: usize,
    },
    ConvPlain {
        channels: usize,
        size: usize,
        width: usize,
        classes: usize,
    },
    ConvResidual {
        channels: usize,
        size: usize,
        width: usize,
        classes: usize,
    },
}

impl ArchitectureId {
    pub fn name(&self) -> &'static str {
        match self {
            ArchitectureId::MlpSmall { .. } => "mlp_small",
            ArchitectureId::ConvPlain { .. } => "conv_plain",
            ArchitectureId::ConvResidual { .. } => "conv_residual",
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ArchitectureId::MlpSmall { classes, .. }
            | ArchitectureId::ConvPlain { classes, .. }
            | ArchitectureId::ConvResidual { classes, .. } => classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes() == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        match self {
            ArchitectureId::MlpSmall { input, hidden, .. } => {
                if input.is_empty() || input.contains(&0) {
                    return Err(Error::invalid("MLP input shape must be non-empty"));
                }
                if hidden.is_empty() || hidden.len() > 2 || hidden.contains(&0) {
                    return Err(Error::invalid("MLP needs one or two non-zero hidden widths"));
                }
            }
            ArchitectureId::ConvPlain {
                channels,
                size,
                width,
                ..
            }
            | ArchitectureId::ConvResidual {
                channels,
                size,
                width,
                ..
            } => {
                if *channels == 0 || *width == 0 {
                    return Err(Error::invalid("channels and width must be positive"));
                }
                if *size == 0 || size % 8 != 0 {
                    return Err(Error::invalid(format!(
                        "image size {size} must be a positive multiple of 8"
                    )));
                }
            }
        }
        Ok(())
    }

    fn graph(&self) -> Result<ModelGraph> {
        self.validate()?;
        match self {
            ArchitectureId::MlpSmall {
                input,
                hidden,
                classes,
            } => {
                let mut b = GraphBuilder::new(input);
                let mut h = if input.len() > 1 {
                    b.flatten("flatten", 0)
                } else {
                    0
                };
                for (i, &width) in hidden.iter().enumerate() {
                    let d = b.dense(&format!("fc{}", i + 1), h, width);
                    h = b.relu(&format!("relu{}", i + 1), d);
                }
                b.dense(&format!("fc{}", hidden.len() + 1), h, *classes);
                b.build()
            }
            &ArchitectureId::ConvPlain {
                channels,
                size,
                width,
                classes,
            } => {
                let mut b = GraphBuilder::new(&[channels, size, size]);
                let widths = [width, width, 2 * width, 2 * width];
                let mut h: NodeId = 0;
                for (i, &w) in widths.iter().enumerate() {
                    let c = b.conv(&format!("conv{}", i + 1), h, w, 3, 1, 1);
                    h = b.relu(&format!("relu{}", i + 1), c);
                    if i < 3 {
                        h = b.avg_pool(&format!("pool{}", i + 1), h, 2);
                    }
                }
                let f = b.flatten("flatten", h);
                let d = b.dense("fc1", f, 4 * width);
                let r = b.relu("relu_fc1", d);
                b.dense("fc2", r, classes);
                b.build()
            }
            &ArchitectureId::ConvResidual {
                channels,
                size,
                width,
                classes,
            } => {
                let mut b = GraphBuilder::new(&[channels, size, size]);
                let c = b.conv("stem", 0, width, 3, 1, 1);
                let r = b.relu("stem_relu", c);
                let mut h = b.avg_pool("pool0", r, 2);
                for blk in 1..=2 {
                    let c1 = b.conv(&format!("block{blk}.conv1"), h, width, 3, 1, 1);
                    let r1 = b.relu(&format!("block{blk}.relu1"), c1);
                    let c2 = b.conv(&format!("block{blk}.conv2"), r1, width, 3, 1, 1);
                    let add = b.residual_add(&format!("block{blk}.add"), h, c2);
                    let r2 = b.relu(&format!("block{blk}.relu2"), add);
                    h = b.avg_pool(&format!("pool{blk}"), r2, 2);
                }
                let f = b.flatten("flatten", h);
                b.dense("fc", f, classes);
                b.build()
            }
        }
    }

    /// Default top-down randomization groups: the dense head first, then
    /// one group per conv block (per hidden dense layer for MLPs).
    pub fn default_groups(&self, model: &ModelGraph) -> Vec<(String, Vec<NodeId>)> {
        let ids = |names: &[&str]| -> Vec<NodeId> {
            names.iter().filter_map(|n| model.find(n)).collect()
        };
        match self {
            ArchitectureId::MlpSmall { hidden, .. } => {
                let last = format!("fc{}", hidden.len() + 1);
                let mut groups = vec![(last.clone(), ids(&[last.as_str()]))];
                for i in (1..=hidden.len()).rev() {
                    let name = format!("fc{i}");
                    groups.push((name.clone(), ids(&[name.as_str()])));
                }
                groups
            }
            ArchitectureId::ConvPlain { .. } => {
                let mut groups = vec![("head".to_string(), ids(&["fc1", "fc2"]))];
                for i in (1..=4).rev() {
                    let name = format!("conv{i}");
                    groups.push((name.clone(), ids(&[name.as_str()])));
                }
                groups
            }
            ArchitectureId::ConvResidual { .. } => vec![
                ("head".to_string(), ids(&["fc"])),
                ("block2".to_string(), ids(&["block2.conv1", "block2.conv2"])),
                ("block1".to_string(), ids(&["block1.conv1", "block1.conv2"])),
                ("stem".to_string(), ids(&["stem"])),
            ],
        }
    }
}

/// He re-initialization of one node: weights from N(0, 2/fan_in), biases 0.
pub fn he_init_node(model: &mut ModelGraph, node: NodeId, seed: u64) -> Result<()> {
    let n = model.node(node);
    if let (Some(fan_in), Some(w)) = (n.kind().fan_in(), n.weight.as_ref()) {
        let shape = w.shape().to_vec();
        let len = w.len();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = rng_for(seed, &[node as u64]);
        let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        model.set_param(
            ParamSlot {
                node,
                kind: ParamKind::Weight,
            },
            Tensor::new(shape, data)?,
        )?;
    }
    if let Some(b) = model.node(node).bias.as_ref() {
        let zeros = Tensor::zeros(b.shape());
        model.set_param(
            ParamSlot {
                node,
                kind: ParamKind::Bias,
            },
            zeros,
        )?;
    }
    Ok(())
}

/// Instantiates `arch` with He-initialized weights and zero biases.
pub fn build(arch: &ArchitectureId, seed: u64) -> Result<ModelGraph> {
    let mut model = arch.graph()?;
    for node in model.parameterized_nodes() {
        he_init_node(&mut model, node, seed)?;
    }
    Ok(model)
}
