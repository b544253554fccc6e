use rand_distr::{Distribution, Normal};

use super::{AttributionMap, Target};
use crate::engine::{backward_from, forward, ReluRule};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::seed::rng_for;
use crate::tensor::Tensor;

fn grad_with_rule(model: &ModelGraph, x: &Tensor, target: Target, rule: ReluRule) -> Result<Tensor> {
    let acts = forward(model, x)?;
    let (from, seed) = target.seed(model, &acts)?;
    let (g, _) = backward_from(model, &acts, from, seed, rule, false);
    Ok(Tensor::from_parts(x.shape().to_vec(), g))
}

pub fn gradient(model: &ModelGraph, x: &Tensor, target: Target) -> Result<AttributionMap> {
    AttributionMap::new(grad_with_rule(model, x, target, ReluRule::Standard)?, "gradient", target)
}

pub fn gradient_x_input(model: &ModelGraph, x: &Tensor, target: Target) -> Result<AttributionMap> {
    let g = grad_with_rule(model, x, target, ReluRule::Standard)?;
    AttributionMap::new(g.mul(x)?, "gradient_x_input", target)
}

pub fn guided_backprop(model: &ModelGraph, x: &Tensor, target: Target) -> Result<AttributionMap> {
    AttributionMap::new(grad_with_rule(model, x, target, ReluRule::Guided)?, "guided_backprop", target)
}

/// Integrated gradients with an `m`-step midpoint Riemann sum.
pub fn integrated_gradients(
    model: &ModelGraph,
    x: &Tensor,
    baseline: &Tensor,
    m: usize,
    target: Target,
) -> Result<AttributionMap> {
    x.check_same_shape(baseline, "integrated gradients baseline")?;
    if m == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    let delta = x.sub(baseline)?;
    let mut acc = vec![0.0; x.len()];
    for k in 0..m {
        let t = (k as f64 + 0.5) / m as f64;
        let point = Tensor::from_parts(
            x.shape().to_vec(),
            baseline.data().iter().zip(delta.data()).map(|(b, d)| b + t * d).collect(),
        );
        let g = grad_with_rule(model, &point, target, ReluRule::Standard)?;
        acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
    }
    let data = acc
        .iter()
        .zip(delta.data())
        .map(|(a, d)| d * a / m as f64)
        .collect();
    AttributionMap::new(Tensor::from_parts(x.shape().to_vec(), data), "integrated_gradients", target)
}

/// Mean gradient over `n` inputs perturbed with `N(0, sigma²)` noise.
pub fn smoothgrad(
    model: &ModelGraph,
    x: &Tensor,
    sigma: f64,
    n: usize,
    target: Target,
    seed: u64,
) -> Result<AttributionMap> {
    if n == 0 {
        return Err(Error::invalid("smoothgrad needs at least one sample"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise scale {sigma} is not valid")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(seed, &[]);
    let mut acc = vec![0.0; x.len()];
    for _ in 0..n {
        let data = x.data().iter().map(|v| v + noise.sample(&mut rng)).collect();
        let noisy = Tensor::from_parts(x.shape().to_vec(), data);
        let g = grad_with_rule(model, &noisy, target, ReluRule::Standard)?;
        acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
    }
    let data = acc.into_iter().map(|a| a / n as f64).collect();
    AttributionMap::new(Tensor::from_parts(x.shape().to_vec(), data), "smoothgrad", target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, ParamKind, ParamSlot};

    fn linear() -> ModelGraph {
        let mut b = GraphBuilder::new(&[3]);
        b.dense("fc", 0, 1);
        b.build()
            .unwrap()
            .with_param(
                ParamSlot { node: 1, kind: ParamKind::Weight },
                Tensor::new(vec![1, 3], vec![0.5, -2.0, 1.5]).unwrap(),
            )
            .unwrap()
    }

    fn x() -> Tensor {
        Tensor::new(vec![3], vec![1.0, 2.0, -3.0]).unwrap()
    }

    #[test]
    fn linear_model_identities() {
        let m = linear();
        let w = [0.5, -2.0, 1.5];
        assert_eq!(gradient(&m, &x(), Target::Logit(0)).unwrap().values.data(), &w);
        let gi = gradient_x_input(&m, &x(), Target::Logit(0)).unwrap();
        let f = crate::engine::logits(&m, &x()).unwrap().data()[0];
        assert!((gi.values.sum() - f).abs() < 1e-12);
        let zero = gradient_x_input(&m, &Tensor::zeros(&[3]), Target::Logit(0)).unwrap();
        assert!(zero.values.data().iter().all(|&v| v == 0.0));
        let ig = integrated_gradients(&m, &x(), &Tensor::zeros(&[3]), 3, Target::Logit(0)).unwrap();
        let expect: Vec<f64> = x().data().iter().zip(w).map(|(a, b)| a * b).collect();
        assert_eq!(ig.values.data(), expect.as_slice());
        let sg = smoothgrad(&m, &x(), 0.7, 5, Target::Logit(0), 3).unwrap();
        assert_eq!(sg.values.data(), &w);
    }

    #[test]
    fn ig_baseline_equal_to_input_is_zero() {
        let m = linear();
        let ig = integrated_gradients(&m, &x(), &x(), 8, Target::Logit(0)).unwrap();
        assert!(ig.values.data().iter().all(|&v| v == 0.0));
        assert!(integrated_gradients(&m, &x(), &Tensor::zeros(&[2]), 8, Target::Logit(0)).is_err());
    }

    #[test]
    fn smoothgrad_zero_sigma_and_reproducible() {
        let m = crate::zoo::build(
            &crate::zoo::ArchitectureId::MlpSmall { input: vec![3], hidden: vec![4], classes: 2 },
            3,
        )
        .unwrap();
        let g = gradient(&m, &x(), Target::Logit(1)).unwrap();
        let s0 = smoothgrad(&m, &x(), 0.0, 4, Target::Logit(1), 9).unwrap();
        assert_eq!(g.values, s0.values);
        let a = smoothgrad(&m, &x(), 0.3, 1, Target::Logit(1), 9).unwrap();
        let b2 = smoothgrad(&m, &x(), 0.3, 1, Target::Logit(1), 9).unwrap();
        assert_eq!(a, b2);
    }
}
