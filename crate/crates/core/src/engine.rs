//! Forward inference and reverse-mode gradient passes over a [`ModelGraph`].

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, NodeId};
use crate::ops::{self, LinearGeom};
use crate::tensor::Tensor;

/// Every node output of one forward pass, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    values: Vec<Tensor>,
}

impl Activations {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn logits(&self) -> &Tensor {
        self.values.last().expect("activations are never empty")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter()
    }
}

pub(crate) fn linear_geom(model: &ModelGraph, id: NodeId) -> Option<LinearGeom> {
    let node = model.node(id);
    match *node.kind() {
        LayerKind::Dense {
            in_features,
            out_features,
        } => Some(LinearGeom::Dense {
            in_features,
            out_features,
        }),
        LayerKind::Conv2D {
            kernel,
            stride,
            padding,
            ..
        } => {
            let ins = model.node(node.inputs()[0]).out_shape();
            let outs = node.out_shape();
            Some(LinearGeom::Conv {
                in_shape: [ins[0], ins[1], ins[2]],
                out_shape: [outs[0], outs[1], outs[2]],
                kernel,
                stride,
                padding,
            })
        }
        _ => None,
    }
}

/// Runs the model on a single sample and keeps every intermediate output.
pub fn forward(model: &ModelGraph, input: &Tensor) -> Result<Activations> {
    if input.shape() != model.input_shape() {
        return Err(Error::shape(
            format!("input node '{}'", model.node(0).name()),
            model.input_shape(),
            input.shape(),
        ));
    }
    let mut values: Vec<Tensor> = Vec::with_capacity(model.len());
    values.push(input.clone());
    for id in 1..model.len() {
        let out = eval_node(model, id, &values);
        values.push(out);
    }
    Ok(Activations { values })
}

pub fn logits(model: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    Ok(forward(model, input)?.logits().clone())
}

fn eval_node(model: &ModelGraph, id: NodeId, values: &[Tensor]) -> Tensor {
    let node = model.node(id);
    let x = &values[node.inputs().first().copied().unwrap_or(0)];
    let shape = node.out_shape().to_vec();
    let data = match *node.kind() {
        LayerKind::Input { .. } => unreachable!("input is node 0"),
        LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
            let geom = linear_geom(model, id).expect("linear node");
            let w = node.weight.as_ref().expect("linear node has weights");
            let mut z = geom.apply(w.data(), x.data());
            if let Some(b) = &node.bias {
                geom.add_bias(&mut z, b.data());
            }
            z
        }
        LayerKind::AvgPool { size } => ops::avg_pool(x.data(), x.shape(), size),
        LayerKind::MaxPool { size } => ops::max_pool_argmax(x.data(), x.shape(), size)
            .into_iter()
            .map(|i| x.data()[i])
            .collect(),
        LayerKind::ReLU => x.data().iter().map(|&v| v.max(0.0)).collect(),
        LayerKind::ResidualAdd => {
            let y = &values[node.inputs()[1]];
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()
        }
        LayerKind::Flatten => x.data().to_vec(),
        LayerKind::BiasOnly => {
            let b = node.bias.as_ref().expect("bias node has a bias");
            x.data().iter().zip(b.data()).map(|(a, b)| a + b).collect()
        }
    };
    Tensor::from_parts(shape, data)
}

/// How gradients pass through a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluRule {
    /// Ordinary subgradient, zero where the forward input is `<= 0`.
    Standard,
    /// Guided backpropagation: additionally zero where the incoming gradient
    /// is `<= 0`.
    Guided,
}

/// Gradients of a scalar with respect to every parameter, in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Vec<Option<Vec<f64>>>,
    pub bias: Vec<Option<Vec<f64>>>,
}

/// Reverse pass seeded with `cotangent` at node `from`. Returns the gradient
/// with respect to the input and, when `want_params`, every parameter.
pub(crate) fn backward_from(
    model: &ModelGraph,
    acts: &Activations,
    from: NodeId,
    cotangent: Vec<f64>,
    rule: ReluRule,
    want_params: bool,
) -> (Vec<f64>, Option<ParamGrads>) {
    let n = model.len();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
    grads[from] = Some(cotangent);
    let mut pg = want_params.then(|| ParamGrads {
        weight: vec![None; n],
        bias: vec![None; n],
    });

    for id in (1..=from).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = model.node(id);
        let src = node.inputs()[0];
        let x = acts.get(src).data();
        let mut push = |target: NodeId, v: Vec<f64>| match &mut grads[target] {
            Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(v),
        };
        match *node.kind() {
            LayerKind::Input { .. } => unreachable!(),
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } => {
                let geom = linear_geom(model, id).expect("linear node");
                let w = node.weight.as_ref().expect("linear node has weights");
                if let Some(pg) = pg.as_mut() {
                    pg.weight[id] = Some(geom.weight_grad(&g, x, w.len()));
                    pg.bias[id] = Some(geom.bias_grad(&g));
                }
                push(src, geom.transpose(w.data(), &g));
            }
            LayerKind::AvgPool { size } => {
                let mut gx = vec![0.0; x.len()];
                let inv = 1.0 / (size * size) as f64;
                ops::pool_windows(acts.get(src).shape(), size, |o, win| {
                    for &i in win {
                        gx[i] += g[o] * inv;
                    }
                });
                push(src, gx);
            }
            LayerKind::MaxPool { size } => {
                let mut gx = vec![0.0; x.len()];
                for (o, i) in ops::max_pool_argmax(x, acts.get(src).shape(), size)
                    .into_iter()
                    .enumerate()
                {
                    gx[i] += g[o];
                }
                push(src, gx);
            }
            LayerKind::ReLU => {
                let gx = x
                    .iter()
                    .zip(&g)
                    .map(|(&xi, &gi)| {
                        let open = xi > 0.0 && (rule == ReluRule::Standard || gi > 0.0);
                        if open {
                            gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                push(src, gx);
            }
            LayerKind::ResidualAdd => {
                push(node.inputs()[1], g.clone());
                push(src, g);
            }
            LayerKind::Flatten => push(src, g),
            LayerKind::BiasOnly => {
                if let Some(pg) = pg.as_mut() {
                    pg.bias[id] = Some(g.clone());
                }
                push(src, g);
            }
        }
    }
    let input_grad = grads[0].take().unwrap_or_else(|| vec![0.0; acts.get(0).len()]);
    (input_grad, pg)
}

fn check_selector(model: &ModelGraph, selector: usize) -> Result<()> {
    let len = model.num_classes();
    if selector >= len {
        return Err(Error::Selector { selector, len });
    }
    Ok(())
}

fn one_hot(len: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[i] = 1.0;
    v
}

/// Gradient of logit `selector` with respect to the input.
pub fn backward_vjp(model: &ModelGraph, input: &Tensor, selector: usize) -> Result<Tensor> {
    backward_with_rule(model, input, selector, ReluRule::Standard)
}

/// Guided backpropagation of logit `selector` to the input.
pub fn backward_guided(model: &ModelGraph, input: &Tensor, selector: usize) -> Result<Tensor> {
    backward_with_rule(model, input, selector, ReluRule::Guided)
}

fn backward_with_rule(
    model: &ModelGraph,
    input: &Tensor,
    selector: usize,
    rule: ReluRule,
) -> Result<Tensor> {
    check_selector(model, selector)?;
    let acts = forward(model, input)?;
    let seed = one_hot(model.num_classes(), selector);
    let (g, _) = backward_from(model, &acts, model.output_id(), seed, rule, false);
    Ok(Tensor::from_parts(input.shape().to_vec(), g))
}

/// Vector-Jacobian product of an arbitrary cotangent at node `from`.
pub fn vjp_at(
    model: &ModelGraph,
    acts: &Activations,
    from: NodeId,
    cotangent: &Tensor,
    rule: ReluRule,
) -> Result<Tensor> {
    if from >= model.len() {
        return Err(Error::Graph(format!("no node {from}")));
    }
    acts.get(from).check_same_shape(cotangent, "cotangent")?;
    let (g, _) = backward_from(model, acts, from, cotangent.data().to_vec(), rule, false);
    Ok(Tensor::from_parts(acts.get(0).shape().to_vec(), g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, ParamKind, ParamSlot};

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn dense_forward_by_hand() {
        let mut b = GraphBuilder::new(&[2]);
        b.dense("fc", 0, 1);
        let m = b.build().unwrap();
        let m = m
            .with_param(ParamSlot { node: 1, kind: ParamKind::Weight }, t(&[1, 2], &[1.0, 2.0]))
            .unwrap();
        let out = logits(&m, &t(&[2], &[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut b = GraphBuilder::new(&[2]);
        b.relu("relu", 0);
        let m = b.build().unwrap();
        let out = logits(&m, &t(&[2], &[-1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
        let g = backward_vjp(&m, &t(&[2], &[-1.0, 2.0]), 0).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
        let g = backward_vjp(&m, &t(&[2], &[0.0, 2.0]), 0).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0], "gradient at the kink is zero");
    }

    #[test]
    fn residual_with_zero_branch_is_identity() {
        let mut b = GraphBuilder::new(&[2, 3, 3]);
        let c = b.conv("conv", 0, 2, 3, 1, 1);
        b.residual_add("add", 0, c);
        let m = b.build().unwrap();
        let x = Tensor::new(vec![2, 3, 3], (0..18).map(|i| i as f64 - 4.0).collect()).unwrap();
        assert_eq!(logits(&m, &x).unwrap(), x);
    }

    #[test]
    fn shape_error_names_input_node() {
        let mut b = GraphBuilder::new(&[2]);
        b.dense("fc", 0, 1);
        let m = b.build().unwrap();
        let err = forward(&m, &t(&[3], &[1.0, 2.0, 3.0])).unwrap_err();
        assert!(err.to_string().contains("input"));
    }

    #[test]
    fn selector_out_of_range() {
        let mut b = GraphBuilder::new(&[2]);
        b.dense("fc", 0, 2);
        let m = b.build().unwrap();
        assert!(matches!(
            backward_vjp(&m, &t(&[2], &[1.0, 1.0]), 2),
            Err(Error::Selector { selector: 2, len: 2 })
        ));
    }

    #[test]
    fn guided_blocks_negative_upstream() {
        // f(x) = -relu(x); at x = 1 the upstream gradient into the ReLU is -1.
        let mut b = GraphBuilder::new(&[1]);
        let r = b.relu("relu", 0);
        b.dense("fc", r, 1);
        let m = b.build().unwrap();
        let m = m
            .with_param(ParamSlot { node: 2, kind: ParamKind::Weight }, t(&[1, 1], &[-1.0]))
            .unwrap();
        let x = t(&[1], &[1.0]);
        assert_eq!(backward_vjp(&m, &x, 0).unwrap().data(), &[-1.0]);
        assert_eq!(backward_guided(&m, &x, 0).unwrap().data(), &[0.0]);
    }

    #[test]
    fn conv_1x1_image_equals_dense() {
        let w: Vec<f64> = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let bias = vec![0.1, -0.2];
        let mut b = GraphBuilder::new(&[3, 1, 1]);
        b.conv("conv", 0, 2, 1, 1, 0);
        let conv = b.build().unwrap();
        let conv = conv
            .with_param(ParamSlot { node: 1, kind: ParamKind::Weight }, t(&[2, 3, 1, 1], &w))
            .unwrap()
            .with_param(ParamSlot { node: 1, kind: ParamKind::Bias }, t(&[2], &bias))
            .unwrap();
        let mut b = GraphBuilder::new(&[3]);
        b.dense("fc", 0, 2);
        let dense = b.build().unwrap();
        let dense = dense
            .with_param(ParamSlot { node: 1, kind: ParamKind::Weight }, t(&[2, 3], &w))
            .unwrap()
            .with_param(ParamSlot { node: 1, kind: ParamKind::Bias }, t(&[2], &bias))
            .unwrap();
        let x = [0.3, -1.2, 2.5];
        let a = logits(&conv, &t(&[3, 1, 1], &x)).unwrap();
        let d = logits(&dense, &t(&[3], &x)).unwrap();
        assert_eq!(a.data(), d.data());
    }
}
