use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attribution::{gradient_x_input, lrp_with_report, LrpConfig, Target};
use crate::engine::logits;
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, ModelGraph, NodeId, ParamKind, ParamSlot};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Largest feature count for exact subset enumeration.
pub const MAX_SHAPLEY_FEATURES: usize = 12;

/// Activation of a single neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    /// `-z²`, not monotone; only for demonstrating the precondition.
    NegSquare,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::NegSquare => -z * z,
        }
    }

    pub fn is_monotone(&self) -> bool {
        !matches!(self, Activation::NegSquare)
    }
}

/// Shapley values of every feature for `f(S) = g(b + Σ_{j∈S} w_j x_j)`,
/// absent features set to zero.
pub fn shapley_values(w: &[f64], b: f64, g: Activation, x: &[f64]) -> Result<Vec<f64>> {
    let d = w.len();
    if d != x.len() {
        return Err(Error::shape("Shapley features", &[d], &[x.len()]));
    }
    if d == 0 || d > MAX_SHAPLEY_FEATURES {
        return Err(Error::invalid(format!(
            "exact Shapley needs 1..={MAX_SHAPLEY_FEATURES} features, got {d}"
        )));
    }
    let contrib: Vec<f64> = w.iter().zip(x).map(|(a, b)| a * b).collect();
    let value: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            let z: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| contrib[j]).sum();
            g.apply(b + z)
        })
        .collect();
    // c_s = s! (d - s - 1)! / d!
    let mut coef = vec![0.0; d];
    for (s, c) in coef.iter_mut().enumerate() {
        let mut binom = 1.0;
        for k in 0..s {
            binom = binom * (d - 1 - k) as f64 / (k + 1) as f64;
        }
        *c = 1.0 / (d as f64 * binom);
    }
    Ok((0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|m| m >> i & 1 == 0)
                .map(|m| coef[m.count_ones() as usize] * (value[m | 1 << i] - value[m]))
                .sum()
        })
        .collect())
}

pub fn shapley_exact(w: &[f64], b: f64, g: Activation, x: &[f64], i: usize) -> Result<f64> {
    let all = shapley_values(w, b, g, x)?;
    all.get(i)
        .copied()
        .ok_or(Error::Selector { selector: i, len: all.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MonotonicityMethod {
    /// Gradient × input on a ReLU neuron with positive pre-activation.
    GradientXInput,
    /// As above, ordering pairs by `|w_i x_i|`.
    GradientXInputStrong,
    LrpBeta { beta: f64 },
    Shapley { activation: Activation },
}

impl MonotonicityMethod {
    pub fn name(&self) -> String {
        match self {
            MonotonicityMethod::GradientXInput => "gradient_x_input".into(),
            MonotonicityMethod::GradientXInputStrong => "gradient_x_input_strong".into(),
            MonotonicityMethod::LrpBeta { .. } => "lrp_beta".into(),
            MonotonicityMethod::Shapley { .. } => "shapley_exact".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub instances: usize,
    pub pairs: usize,
    pub violations: usize,
}

/// A one-output dense layer, optionally followed by a ReLU.
fn neuron_model(w: &[f64], b: f64, relu: bool) -> Result<ModelGraph> {
    let mut g = GraphBuilder::new(&[w.len()]);
    let fc = g.dense("fc", 0, 1);
    if relu {
        g.relu("act", fc);
    }
    g.build()?
        .with_param(ParamSlot { node: fc, kind: ParamKind::Weight }, Tensor::new(vec![1, w.len()], w.to_vec())?)?
        .with_param(ParamSlot { node: fc, kind: ParamKind::Bias }, Tensor::new(vec![1], vec![b])?)
}

/// Counts pairs `w_i x_i ≥ w_j x_j > 0` with `|R_i| < |R_j|` over random
/// single-neuron instances.
pub fn monotonicity_test(method: MonotonicityMethod, n_instances: usize, seed: u64) -> Result<MonotonicityReport> {
    if let MonotonicityMethod::Shapley { activation } = method {
        if !activation.is_monotone() {
            return Err(Error::Precondition(format!(
                "Shapley monotonicity requires a non-decreasing activation, got {activation:?}"
            )));
        }
    }
    if let MonotonicityMethod::LrpBeta { beta } = method {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("β must be non-negative, got {beta}")));
        }
    }
    let mut report = MonotonicityReport { instances: n_instances, pairs: 0, violations: 0 };
    for k in 0..n_instances {
        let mut rng = rng_for(seed, &[k as u64]);
        let d = rng.random_range(2..=8usize);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let xt = Tensor::new(vec![d], x.clone())?;
        let r: Vec<f64> = match method {
            MonotonicityMethod::GradientXInput | MonotonicityMethod::GradientXInputStrong => {
                let b = (-z).max(0.0) + rng.random_range(0.1..1.0);
                let m = neuron_model(&w, b, true)?;
                gradient_x_input(&m, &xt, Target::Logit(0))?.values.data().to_vec()
            }
            MonotonicityMethod::LrpBeta { beta } => {
                let m = neuron_model(&w, 0.0, false)?;
                let (map, _) = lrp_with_report(&m, &xt, Target::Logit(0), &LrpConfig::beta(beta))?;
                map.values.data().to_vec()
            }
            MonotonicityMethod::Shapley { activation } => {
                let e: f64 = StandardNormal.sample(&mut rng);
                let b = 0.5 * e;
                shapley_values(&w, b, activation, &x)?
            }
        };
        let score: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a * b).collect();
        let tol = 1e-12 * (1.0 + r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let strong = method == MonotonicityMethod::GradientXInputStrong;
        for i in 0..d {
            for j in 0..d {
                let ordered = if strong {
                    score[i].abs() >= score[j].abs() && score[j] != 0.0
                } else {
                    score[i] >= score[j] && score[j] > 0.0
                };
                if i == j || !ordered {
                    continue;
                }
                report.pairs += 1;
                if r[i].abs() < r[j].abs() - tol {
                    report.violations += 1;
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DominanceRule {
    Zero,
    Beta { beta: f64 },
}

impl DominanceRule {
    fn config(&self) -> LrpConfig {
        match *self {
            DominanceRule::Zero => LrpConfig::zero(),
            DominanceRule::Beta { beta } => LrpConfig::beta(beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub logit: f64,
    pub layer_sums: Vec<(NodeId, String, f64)>,
    pub all_positive: bool,
    pub bias_free: bool,
    /// Largest `|sum − logit| / logit` over layers.
    pub max_relative_deviation: f64,
}

impl DominanceReport {
    /// True when every layer sum is positive and, for bias-free models,
    /// equals the logit within `tol` relative.
    pub fn holds(&self, tol: f64) -> bool {
        self.all_positive && (!self.bias_free || self.max_relative_deviation <= tol)
    }
}

/// Per-layer relevance sums for a ReLU net with non-positive biases and a
/// positive target logit.
pub fn positive_dominance_check(
    model: &ModelGraph,
    x: &Tensor,
    class: usize,
    rule: DominanceRule,
) -> Result<DominanceReport> {
    let mut bias_free = true;
    for slot in model.param_slots().into_iter().filter(|s| s.kind == ParamKind::Bias) {
        let b = model.param(slot).expect("listed slot");
        if b.data().iter().any(|&v| v > 0.0) {
            return Err(Error::Precondition(format!(
                "layer '{}' has a positive bias",
                model.node(slot.node).name()
            )));
        }
        bias_free &= b.data().iter().all(|&v| v == 0.0);
    }
    let out = logits(model, x)?;
    let len = out.len();
    let logit = *out.data().get(class).ok_or(Error::Selector { selector: class, len })?;
    if logit.is_nan() || logit <= 0.0 {
        return Err(Error::Precondition(format!("target logit {logit} is not positive")));
    }
    let (_, report) = lrp_with_report(model, x, Target::Logit(class), &rule.config())?;
    let all_positive = report.layer_sums.iter().all(|t| t.2 > 0.0);
    let max_relative_deviation = report
        .layer_sums
        .iter()
        .map(|t| (t.2 - logit).abs() / logit)
        .fold(0.0, f64::max);
    Ok(DominanceReport {
        logit,
        layer_sums: report.layer_sums,
        all_positive,
        bias_free,
        max_relative_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapley_two_feature_relu() {
        let phi = shapley_values(&[3.0, -1.0], 0.0, Activation::Relu, &[1.0, 1.0]).unwrap();
        assert!((phi[0] - 2.5).abs() < 1e-15);
        assert!((phi[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shapley_linear_and_efficiency() {
        let w = [0.3, -1.2, 2.0, 0.7];
        let x = [1.0, 0.5, -0.25, 2.0];
        let phi = shapley_values(&w, 0.0, Activation::Identity, &x).unwrap();
        for i in 0..4 {
            assert!((phi[i] - w[i] * x[i]).abs() < 1e-12);
        }
        let g = Activation::Softplus;
        let phi = shapley_values(&w, -0.2, g, &x).unwrap();
        let full = g.apply(-0.2 + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>());
        assert!((phi.iter().sum::<f64>() - (full - g.apply(-0.2))).abs() < 1e-12);
        assert!(shapley_values(&[1.0; 13], 0.0, g, &[1.0; 13]).is_err());
        assert!(shapley_exact(&w, 0.0, g, &x, 4).is_err());
    }

    #[test]
    fn non_monotone_activation_is_rejected() {
        let m = MonotonicityMethod::Shapley { activation: Activation::NegSquare };
        assert!(matches!(monotonicity_test(m, 1, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn dominance_preconditions() {
        let m = neuron_model(&[1.0, 1.0], 0.0, true).unwrap();
        let neg = Tensor::new(vec![2], vec![-1.0, -1.0]).unwrap();
        assert!(matches!(
            positive_dominance_check(&m, &neg, 0, DominanceRule::Zero),
            Err(Error::Precondition(_))
        ));
        let biased = neuron_model(&[1.0, 1.0], 0.5, true).unwrap();
        let pos = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(positive_dominance_check(&biased, &pos, 0, DominanceRule::Zero).is_err());
        let r = positive_dominance_check(&m, &pos, 0, DominanceRule::Zero).unwrap();
        assert!(r.bias_free && r.holds(1e-12));
        assert_eq!(r.logit, 3.0);
    }
}
