//! Layer graphs.
//!
//! A [`ModelGraph`] is an immutable list of nodes in topological order. Node 0
//! is always the input, every other node reads only from nodes with a smaller
//! id, and the last node is the logit output. Parameters live inside the nodes
//! that own them; functions that change parameters return a new graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Input {
        shape: Vec<usize>,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Average pooling with window = stride = `size`.
    AvgPool {
        size: usize,
    },
    /// Max pooling with window = stride = `size`.
    MaxPool {
        size: usize,
    },
    #[serde(rename = "relu")]
    ReLU,
    /// Elementwise sum of `inputs[0]` (the skip path) and `inputs[1]` (the
    /// weighted path).
    ResidualAdd,
    Flatten,
    /// Adds an elementwise bias shaped like its input.
    BiasOnly,
}

impl LayerKind {
    pub fn has_weight(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2D { .. })
    }

    pub fn has_bias(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } | LayerKind::BiasOnly
        )
    }

    pub fn is_linear(&self) -> bool {
        self.has_weight()
    }

    fn arity(&self) -> usize {
        match self {
            LayerKind::Input { .. } => 0,
            LayerKind::ResidualAdd => 2,
            _ => 1,
        }
    }

    /// Fan-in used for He initialization.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerKind::Dense { in_features, .. } => Some(in_features),
            LayerKind::Conv2D {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            _ => None,
        }
    }
}

/// Structural description of one node, without parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    out_shape: Vec<usize>,
}

impl Node {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.spec.kind
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.spec.inputs
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One parameter tensor of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamSlot {
    pub node: NodeId,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    nodes: Vec<Node>,
    split: Option<NodeId>,
}

impl ModelGraph {
    /// Validates `specs`, infers shapes and attaches zero parameters.
    pub fn from_specs(specs: Vec<LayerSpec>) -> Result<Self> {
        let mut nodes: Vec<Node> = Vec::with_capacity(specs.len());
        for (id, spec) in specs.into_iter().enumerate() {
            if id == 0 && !matches!(spec.kind, LayerKind::Input { .. }) {
                return Err(Error::Graph("node 0 must be the input".into()));
            }
            if id > 0 && matches!(spec.kind, LayerKind::Input { .. }) {
                return Err(Error::Graph(format!("node {id} '{}' is a second input", spec.name)));
            }
            if nodes.iter().any(|n| n.spec.name == spec.name) {
                return Err(Error::Graph(format!("duplicate node name '{}'", spec.name)));
            }
            if spec.inputs.len() != spec.kind.arity() {
                return Err(Error::Graph(format!(
                    "node '{}' takes {} inputs, got {}",
                    spec.name,
                    spec.kind.arity(),
                    spec.inputs.len()
                )));
            }
            if let Some(&bad) = spec.inputs.iter().find(|&&i| i >= id) {
                return Err(Error::Graph(format!(
                    "node '{}' reads from node {bad}, which does not precede it",
                    spec.name
                )));
            }
            let in_shapes: Vec<&[usize]> = spec.inputs.iter().map(|&i| nodes[i].out_shape()).collect();
            let out_shape = infer_shape(&spec, &in_shapes)?;
            let (weight, bias) = zero_params(&spec.kind, in_shapes.first().copied(), &out_shape);
            nodes.push(Node {
                spec,
                weight,
                bias,
                out_shape,
            });
        }
        if nodes.is_empty() {
            return Err(Error::Graph("empty graph".into()));
        }
        Ok(Self { nodes, split: None })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].out_shape
    }

    pub fn output_id(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output_id()].out_shape
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.nodes.iter().map(|n| n.spec.clone()).collect()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.spec.name == name)
    }

    pub fn split_marker(&self) -> Option<NodeId> {
        self.split
    }

    /// Marks `node` as the boundary between feature extractor and head.
    pub fn with_split_marker(mut self, node: NodeId) -> Result<Self> {
        if !self.is_cut(node) {
            return Err(Error::Graph(format!("node {node} is not a cut of the graph")));
        }
        self.split = Some(node);
        Ok(self)
    }

    /// True when every node after `node` reads only from `node` or later.
    pub fn is_cut(&self, node: NodeId) -> bool {
        node < self.nodes.len()
            && self.nodes[node + 1..]
                .iter()
                .all(|n| n.spec.inputs.iter().all(|&i| i >= node))
    }

    pub fn residual_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].spec.kind == LayerKind::ResidualAdd)
            .collect()
    }

    /// All parameter slots in node order, weight before bias.
    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for (node, n) in self.nodes.iter().enumerate() {
            if n.weight.is_some() {
                slots.push(ParamSlot {
                    node,
                    kind: ParamKind::Weight,
                });
            }
            if n.bias.is_some() {
                slots.push(ParamSlot {
                    node,
                    kind: ParamKind::Bias,
                });
            }
        }
        slots
    }

    pub fn param(&self, slot: ParamSlot) -> Option<&Tensor> {
        let n = self.nodes.get(slot.node)?;
        match slot.kind {
            ParamKind::Weight => n.weight.as_ref(),
            ParamKind::Bias => n.bias.as_ref(),
        }
    }

    /// Returns a copy with one parameter tensor replaced.
    pub fn with_param(&self, slot: ParamSlot, value: Tensor) -> Result<Self> {
        let mut out = self.clone();
        out.set_param(slot, value)?;
        Ok(out)
    }

    pub(crate) fn set_param(&mut self, slot: ParamSlot, value: Tensor) -> Result<()> {
        let node = self
            .nodes
            .get_mut(slot.node)
            .ok_or_else(|| Error::Graph(format!("no node {}", slot.node)))?;
        let target = match slot.kind {
            ParamKind::Weight => node.weight.as_mut(),
            ParamKind::Bias => node.bias.as_mut(),
        }
        .ok_or_else(|| Error::Graph(format!("node '{}' has no {:?}", node.spec.name, slot.kind)))?;
        if target.shape() != value.shape() {
            return Err(Error::shape(
                format!("parameter {:?} of '{}'", slot.kind, node.spec.name),
                target.shape(),
                value.shape(),
            ));
        }
        *target = value;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_slots()
            .into_iter()
            .map(|s| self.param(s).map_or(0, Tensor::len))
            .sum()
    }

    /// Every parameter value, flattened in slot order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for slot in self.param_slots() {
            if let Some(t) = self.param(slot) {
                out.extend_from_slice(t.data());
            }
        }
        out
    }

    /// Inverse of [`ModelGraph::flat_params`].
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for slot in self.param_slots() {
            let shape = self.param(slot).map(|t| t.shape().to_vec()).unwrap_or_default();
            let n: usize = shape.iter().product();
            out.set_param(slot, Tensor::new(shape, flat[offset..offset + n].to_vec())?)?;
            offset += n;
        }
        Ok(out)
    }

    /// Nodes that own at least one parameter tensor.
    pub fn parameterized_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].weight.is_some() || self.nodes[i].bias.is_some())
            .collect()
    }

    /// Graph consisting of nodes `0..=node`, with `node` as output.
    pub(crate) fn prefix(&self, node: NodeId) -> Self {
        Self {
            nodes: self.nodes[..=node].to_vec(),
            split: self.split.filter(|&s| s <= node),
        }
    }

    /// Graph whose input has the shape of `node` and whose remaining nodes are
    /// `node+1..`, with ids shifted down. Requires `node` to be a cut.
    pub(crate) fn suffix(&self, node: NodeId) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len() - node);
        nodes.push(Node {
            spec: LayerSpec {
                name: "input".into(),
                kind: LayerKind::Input {
                    shape: self.nodes[node].out_shape.clone(),
                },
                inputs: vec![],
            },
            weight: None,
            bias: None,
            out_shape: self.nodes[node].out_shape.clone(),
        });
        for n in &self.nodes[node + 1..] {
            let mut n = n.clone();
            for i in &mut n.spec.inputs {
                *i -= node;
            }
            if n.spec.name == "input" {
                n.spec.name = "input_".into();
            }
            nodes.push(n);
        }
        Self {
            nodes,
            split: self.split.filter(|&s| s >= node).map(|s| s - node),
        }
    }
}

fn infer_shape(spec: &LayerSpec, ins: &[&[usize]]) -> Result<Vec<usize>> {
    let bad = |expected: &[usize], got: &[usize]| {
        Error::shape(format!("node '{}'", spec.name), expected, got)
    };
    match &spec.kind {
        LayerKind::Input { shape } => Ok(shape.clone()),
        &LayerKind::Dense {
            in_features,
            out_features,
        } => {
            if ins[0] != [in_features] {
                return Err(bad(&[in_features], ins[0]));
            }
            if out_features == 0 {
                return Err(Error::Graph(format!("node '{}' has zero outputs", spec.name)));
            }
            Ok(vec![out_features])
        }
        &LayerKind::Conv2D {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let s = ins[0];
            if s.len() != 3 || s[0] != in_channels {
                return Err(bad(&[in_channels, 0, 0], s));
            }
            if kernel == 0 || stride == 0 || out_channels == 0 {
                return Err(Error::Graph(format!("node '{}' has a zero hyperparameter", spec.name)));
            }
            let (h, w) = (s[1] + 2 * padding, s[2] + 2 * padding);
            if h < kernel || w < kernel {
                return Err(Error::Graph(format!(
                    "node '{}': kernel {kernel} larger than padded input {h}x{w}",
                    spec.name
                )));
            }
            Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        &LayerKind::AvgPool { size } | &LayerKind::MaxPool { size } => {
            let s = ins[0];
            if s.len() != 3 {
                return Err(bad(&[0, 0, 0], s));
            }
            if size == 0 || !s[1].is_multiple_of(size) || !s[2].is_multiple_of(size) {
                return Err(Error::Graph(format!(
                    "node '{}': pooling window {size} does not tile {}x{}",
                    spec.name, s[1], s[2]
                )));
            }
            Ok(vec![s[0], s[1] / size, s[2] / size])
        }
        LayerKind::ReLU | LayerKind::BiasOnly => Ok(ins[0].to_vec()),
        LayerKind::ResidualAdd => {
            if ins[0] != ins[1] {
                return Err(bad(ins[0], ins[1]));
            }
            Ok(ins[0].to_vec())
        }
        LayerKind::Flatten => Ok(vec![ins[0].iter().product()]),
    }
}

fn zero_params(
    kind: &LayerKind,
    in_shape: Option<&[usize]>,
    out_shape: &[usize],
) -> (Option<Tensor>, Option<Tensor>) {
    match *kind {
        LayerKind::Dense {
            in_features,
            out_features,
        } => (
            Some(Tensor::zeros(&[out_features, in_features])),
            Some(Tensor::zeros(&[out_features])),
        ),
        LayerKind::Conv2D {
            in_channels,
            out_channels,
            kernel,
            ..
        } => (
            Some(Tensor::zeros(&[out_channels, in_channels, kernel, kernel])),
            Some(Tensor::zeros(&[out_channels])),
        ),
        LayerKind::BiasOnly => (None, Some(Tensor::zeros(in_shape.unwrap_or(out_shape)))),
        _ => (None, None),
    }
}

/// Incremental graph construction.
///
/// ```
/// use attrib_audit::graph::GraphBuilder;
///
/// let mut b = GraphBuilder::new(&[4]);
/// let h = b.dense("fc1", b.input(), 8);
/// let h = b.relu("relu1", h);
/// b.dense("fc2", h, 3);
/// let model = b.build().unwrap();
/// assert_eq!(model.num_classes(), 3);
/// ```
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    specs: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            specs: vec![LayerSpec {
                name: "input".into(),
                kind: LayerKind::Input {
                    shape: input_shape.to_vec(),
                },
                inputs: vec![],
            }],
            shapes: vec![input_shape.to_vec()],
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.shapes[id]
    }

    /// Appends a node. Shape errors surface at [`GraphBuilder::build`]; the
    /// recorded shape here is best effort so chained layers can size
    /// themselves.
    pub fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<NodeId>) -> NodeId {
        let spec = LayerSpec {
            name: name.into(),
            kind,
            inputs,
        };
        let ins: Vec<&[usize]> = spec
            .inputs
            .iter()
            .map(|&i| self.shapes.get(i).map_or(&[][..], Vec::as_slice))
            .collect();
        let shape = infer_shape(&spec, &ins).unwrap_or_default();
        self.specs.push(spec);
        self.shapes.push(shape);
        self.specs.len() - 1
    }

    pub fn dense(&mut self, name: &str, from: NodeId, out_features: usize) -> NodeId {
        let in_features = self.shapes[from].iter().product();
        self.push(
            name,
            LayerKind::Dense {
                in_features,
                out_features,
            },
            vec![from],
        )
    }

    pub fn conv(
        &mut self,
        name: &str,
        from: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> NodeId {
        let in_channels = self.shapes[from].first().copied().unwrap_or(0);
        self.push(
            name,
            LayerKind::Conv2D {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            vec![from],
        )
    }

    pub fn relu(&mut self, name: &str, from: NodeId) -> NodeId {
        self.push(name, LayerKind::ReLU, vec![from])
    }

    pub fn avg_pool(&mut self, name: &str, from: NodeId, size: usize) -> NodeId {
        self.push(name, LayerKind::AvgPool { size }, vec![from])
    }

    pub fn max_pool(&mut self, name: &str, from: NodeId, size: usize) -> NodeId {
        self.push(name, LayerKind::MaxPool { size }, vec![from])
    }

    pub fn flatten(&mut self, name: &str, from: NodeId) -> NodeId {
        self.push(name, LayerKind::Flatten, vec![from])
    }

    pub fn bias(&mut self, name: &str, from: NodeId) -> NodeId {
        self.push(name, LayerKind::BiasOnly, vec![from])
    }

    pub fn residual_add(&mut self, name: &str, skip: NodeId, weighted: NodeId) -> NodeId {
        self.push(name, LayerKind::ResidualAdd, vec![skip, weighted])
    }

    pub fn build(self) -> Result<ModelGraph> {
        ModelGraph::from_specs(self.specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_untiled_pooling() {
        let mut b = GraphBuilder::new(&[1, 5, 5]);
        b.avg_pool("pool", 0, 2);
        assert!(matches!(b.build(), Err(Error::Graph(_))));
    }

    #[test]
    fn rejects_residual_shape_mismatch() {
        let mut b = GraphBuilder::new(&[1, 4, 4]);
        let c = b.conv("c", 0, 2, 3, 1, 1);
        b.residual_add("add", 0, c);
        assert!(matches!(b.build(), Err(Error::Shape { .. })));
    }

    #[test]
    fn cut_detection() {
        let mut b = GraphBuilder::new(&[1, 4, 4]);
        let c1 = b.conv("c1", 0, 1, 3, 1, 1);
        let r = b.relu("r1", c1);
        let c2 = b.conv("c2", r, 1, 3, 1, 1);
        let add = b.residual_add("add", c1, c2);
        let f = b.flatten("flat", add);
        b.dense("fc", f, 2);
        let g = b.build().unwrap();
        assert!(g.is_cut(0));
        assert!(g.is_cut(c1));
        assert!(!g.is_cut(r));
        assert!(!g.is_cut(c2));
        assert!(g.is_cut(add));
        assert!(g.is_cut(g.output_id()));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut b = GraphBuilder::new(&[3]);
        b.dense("fc", 0, 2);
        let g = b.build().unwrap();
        let flat: Vec<f64> = (0..g.param_count()).map(|i| i as f64).collect();
        let g2 = g.with_flat_params(&flat).unwrap();
        assert_eq!(g2.flat_params(), flat);
    }
}
