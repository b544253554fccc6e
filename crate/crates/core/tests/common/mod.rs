#![allow(dead_code)]

use attrib_audit::graph::{ModelGraph, ParamKind};
use attrib_audit::seed::rng_for;
use attrib_audit::zoo::{build, ArchitectureId};
use attrib_audit::engine::logits;
use attrib_audit::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A small architecture chosen by `k`: MLPs, plain and residual conv nets.
pub fn small_arch(seed: u64, k: u64) -> ArchitectureId {
    let mut rng = rng_for(seed, &[k, 0]);
    match k % 3 {
        0 => {
            let d = rng.random_range(2..=12usize);
            let mut hidden = vec![rng.random_range(2..=10usize)];
            if rng.random_bool(0.5) {
                hidden.push(rng.random_range(2..=10usize));
            }
            ArchitectureId::MlpSmall { input: vec![d], hidden, classes: rng.random_range(2..=4) }
        }
        1 => ArchitectureId::ConvPlain {
            channels: rng.random_range(1..=2),
            size: 8,
            width: 2,
            classes: 3,
        },
        _ => ArchitectureId::ConvResidual {
            channels: rng.random_range(1..=2),
            size: 8,
            width: 2,
            classes: 3,
        },
    }
}

pub fn random_net(seed: u64, k: u64) -> ModelGraph {
    build(&small_arch(seed, k), seed ^ k).unwrap()
}

/// Same net with every bias drawn from `N(0, scale²)`.
pub fn with_random_biases(model: &ModelGraph, seed: u64, scale: f64) -> ModelGraph {
    let mut rng = rng_for(seed, &[0xb1a5]);
    let mut m = model.clone();
    for slot in model.param_slots().into_iter().filter(|s| s.kind == ParamKind::Bias) {
        let old = model.param(slot).unwrap();
        let data = (0..old.len())
            .map(|_| { let e: f64 = StandardNormal.sample(&mut rng); scale * e })
            .collect();
        m = m.with_param(slot, Tensor::new(old.shape().to_vec(), data).unwrap()).unwrap();
    }
    m
}

pub fn random_input(shape: &[usize], seed: u64, k: u64) -> Tensor {
    let mut rng = rng_for(seed, &[k, 1]);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn largest_logit(model: &ModelGraph, x: &Tensor) -> usize {
    let z = logits(model, x).unwrap();
    (0..z.len())
        .max_by(|&a, &b| z.data()[a].abs().total_cmp(&z.data()[b].abs()))
        .unwrap()
}

/// First input draw whose largest-magnitude logit is not vanishing.
pub fn live_input(model: &ModelGraph, seed: u64, k: u64) -> Option<(Tensor, usize, f64)> {
    (0..20).find_map(|draw| {
        let x = random_input(model.input_shape(), seed + draw, k);
        let class = largest_logit(model, &x);
        let logit = logits(model, &x).unwrap().data()[class];
        (logit.abs() > 1e-6).then_some((x, class, logit))
    })
}
