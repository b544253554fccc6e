//! Attribution methods: gradient family, guided backpropagation and LRP.

mod gradient;
mod lrp;

use serde::{Deserialize, Serialize};

pub use gradient::{gradient, gradient_x_input, guided_backprop, integrated_gradients, smoothgrad};
pub use lrp::{
    adaptive_beta, adaptive_beta_from_sums, attribute_intermediate, lrp, lrp_with_report, skip_split,
    AdaptiveVariant, GammaDecay, LinearRule, LrpConfig, LrpReport, PoolRule, SkipSplit,
};

use crate::engine::Activations;
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NodeId};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// What is being explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A single output logit.
    Logit(usize),
    /// The sum of all activations at a node.
    ActivationSum(NodeId),
}

impl Target {
    /// Node the explanation starts from and its initial cotangent, given the
    /// forward activations.
    pub(crate) fn seed(&self, model: &ModelGraph, acts: &Activations) -> Result<(NodeId, Vec<f64>)> {
        match *self {
            Target::Logit(c) => {
                let len = model.num_classes();
                if c >= len {
                    return Err(Error::Selector { selector: c, len });
                }
                let mut v = vec![0.0; len];
                v[c] = 1.0;
                Ok((model.output_id(), v))
            }
            Target::ActivationSum(node) => {
                if node >= model.len() {
                    return Err(Error::Graph(format!("no node {node}")));
                }
                Ok((node, vec![1.0; acts.get(node).len()]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelReduction {
    #[default]
    None,
    Sum,
    AbsSum,
    L2,
}

impl ChannelReduction {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelReduction::None => "none",
            ChannelReduction::Sum => "sum",
            ChannelReduction::AbsSum => "abs-sum",
            ChannelReduction::L2 => "l2",
        }
    }
}

/// Signed relevance per input element, with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Tensor,
    pub method: String,
    pub target: Target,
    pub reduction: ChannelReduction,
}

impl AttributionMap {
    pub fn new(values: Tensor, method: impl Into<String>, target: Target) -> Result<Self> {
        if !values.all_finite() {
            let index = values.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            values,
            method: method.into(),
            target,
            reduction: ChannelReduction::None,
        })
    }
}

/// Collapses the channel axis of a `[C, H, W]` map to `[1, H, W]`.
pub fn reduce_channels(map: &AttributionMap, mode: ChannelReduction) -> Result<AttributionMap> {
    if mode == ChannelReduction::None {
        return Ok(map.clone());
    }
    let shape = map.values.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "channel reduction needs a [C, H, W] map, got {shape:?}"
        )));
    }
    let (c, plane) = (shape[0], shape[1] * shape[2]);
    let d = map.values.data();
    let out: Vec<f64> = (0..plane)
        .map(|p| {
            let vals = (0..c).map(|ch| d[ch * plane + p]);
            match mode {
                ChannelReduction::Sum => vals.sum(),
                ChannelReduction::AbsSum => vals.map(f64::abs).sum(),
                ChannelReduction::L2 => vals.map(|v| v * v).sum::<f64>().sqrt(),
                ChannelReduction::None => unreachable!(),
            }
        })
        .collect();
    Ok(AttributionMap {
        values: Tensor::new(vec![1, shape[1], shape[2]], out)?,
        method: map.method.clone(),
        target: map.target,
        reduction: mode,
    })
}

/// An attribution method with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Gradient,
    GradientXInput,
    IntegratedGradients {
        steps: usize,
        /// Constant baseline value for every input element.
        #[serde(default)]
        baseline: f64,
    },
    SmoothGrad {
        sigma: f64,
        samples: usize,
    },
    GuidedBackprop,
    Lrp {
        #[serde(default)]
        config: LrpConfig,
    },
    /// Input-independent Gaussian noise, fresh for every call seed.
    RandomNoise,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Gradient => "gradient".into(),
            Method::GradientXInput => "gradient_x_input".into(),
            Method::IntegratedGradients { .. } => "integrated_gradients".into(),
            Method::SmoothGrad { .. } => "smoothgrad".into(),
            Method::GuidedBackprop => "guided_backprop".into(),
            Method::Lrp { config } => config.name(),
            Method::RandomNoise => "random_noise".into(),
        }
    }

    /// True when the result ignores both the model and the input.
    pub fn is_input_independent(&self) -> bool {
        matches!(self, Method::RandomNoise)
    }

    /// Runs the method. `seed` drives the stochastic methods only.
    pub fn attribute(&self, model: &ModelGraph, x: &Tensor, target: Target, seed: u64) -> Result<AttributionMap> {
        match self {
            Method::Gradient => gradient(model, x, target),
            Method::GradientXInput => gradient_x_input(model, x, target),
            Method::IntegratedGradients { steps, baseline } => {
                integrated_gradients(model, x, &Tensor::filled(x.shape(), *baseline), *steps, target)
            }
            Method::SmoothGrad { sigma, samples } => smoothgrad(model, x, *sigma, *samples, target, seed),
            Method::GuidedBackprop => guided_backprop(model, x, target),
            Method::Lrp { config } => lrp(model, x, target, config),
            Method::RandomNoise => random_noise(x.shape(), target, seed),
        }
    }
}

fn random_noise(shape: &[usize], target: Target, seed: u64) -> Result<AttributionMap> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_for(seed, &[]);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    AttributionMap::new(Tensor::new(shape.to_vec(), data)?, "random_noise", target)
}
