mod common;

use attrib_audit::attribution::{
    gradient, integrated_gradients, lrp_with_report, skip_split, LrpConfig, Method, Target,
};
use attrib_audit::engine::{backward_vjp, forward, logits};
use attrib_audit::graph::{LayerKind, ModelGraph, ParamKind, ParamSlot};
use attrib_audit::zoo::{build, randomize, ArchitectureId, RandomizationMode, RandomizationPlan};
use attrib_audit::Tensor;
use common::*;

fn min_abs_preactivation(model: &ModelGraph, x: &Tensor) -> f64 {
    let acts = forward(model, x).unwrap();
    model
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind(), LayerKind::ReLU))
        .flat_map(|n| acts.get(n.inputs()[0]).data().to_vec())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

#[test]
fn gradient_matches_central_differences_on_100_nets() {
    let h = 1e-6;
    for k in 0..100u64 {
        let model = with_random_biases(&random_net(11, k), k, 0.1);
        let mut x = random_input(model.input_shape(), 11, k);
        let mut draw = 0;
        while min_abs_preactivation(&model, &x) < 1e-3 {
            draw += 1;
            x = random_input(model.input_shape(), 11 + draw, k);
        }
        let class = (k as usize) % model.num_classes();
        let g = backward_vjp(&model, &x, class).unwrap();
        let fd: Vec<f64> = (0..x.len())
            .map(|i| {
                let bump = |s: f64| {
                    let mut d = x.data().to_vec();
                    d[i] += s * h;
                    logits(&model, &Tensor::new(x.shape().to_vec(), d).unwrap()).unwrap().data()[class]
                };
                (bump(1.0) - bump(-1.0)) / (2.0 * h)
            })
            .collect();
        let scale = g.max_abs().max(1e-12);
        let err = max_abs_diff(g.data(), &fd) / scale;
        assert!(err <= 1e-5, "net {k}: relative error {err}");
    }
}

#[test]
fn lrp_conserves_relevance_on_bias_free_nets() {
    for k in 0..100u64 {
        let model = random_net(23, k);
        let Some((x, class, logit)) = live_input(&model, 23, k) else { continue };
                for config in [LrpConfig::zero(), LrpConfig::beta(1.0)] {
            let (map, report) = lrp_with_report(&model, &x, Target::Logit(class), &config).unwrap();
            assert_eq!(report.absorbed, 0);
            for (node, name, sum) in report.layer_sums.iter().filter(|t| model.is_cut(t.0)) {
                let rel = (sum - logit).abs() / logit.abs();
                assert!(rel <= 1e-9, "net {k} {} node {node} ({name}): {rel}", config.name());
            }
            assert!((map.values.sum() - logit).abs() <= 1e-9 * logit.abs());
        }
    }
}

#[test]
fn skip_split_is_additive() {
    let arch = ArchitectureId::ConvResidual { channels: 2, size: 8, width: 3, classes: 3 };
    for k in 0..20u64 {
        let model = build(&arch, k).unwrap();
        let x = random_input(model.input_shape(), 31, k);
        for config in [LrpConfig::zero(), LrpConfig::composite()] {
            let s = skip_split(&model, &x, Target::Logit(0), &config, None).unwrap();
            let sum = s.skip.values.add(&s.weighted.values).unwrap();
            assert!(max_abs_diff(sum.data(), s.total.values.data()) <= 1e-10 * (1.0 + s.total.values.max_abs()));
        }
    }
}

fn ig_gap_error(model: &ModelGraph, x: &Tensor, m: usize) -> f64 {
    let base = Tensor::zeros(model.input_shape());
    let class = largest_logit(model, x);
    let ig = integrated_gradients(model, x, &base, m, Target::Logit(class)).unwrap();
    let gap = logits(model, x).unwrap().data()[class] - logits(model, &base).unwrap().data()[class];
    (ig.values.sum() - gap).abs() / gap.abs().max(1.0)
}

#[test]
fn integrated_gradients_completeness_on_a_linear_path() {
    for k in 0..30u64 {
        let model = random_net(41, k);
        let x = random_input(model.input_shape(), 41, k);
        let err = ig_gap_error(&model, &x, 256);
        assert!(err <= 1e-3, "net {k}: completeness error {err}");
    }
}

#[test]
fn integrated_gradients_converge_across_kinks() {
    let (mut coarse, mut fine) = (0.0f64, 0.0f64);
    for k in 0..30u64 {
        let model = with_random_biases(&random_net(41, k), k, 0.1);
        let x = random_input(model.input_shape(), 41, k);
        coarse = coarse.max(ig_gap_error(&model, &x, 64));
        fine = fine.max(ig_gap_error(&model, &x, 1024));
    }
    assert!(fine < coarse / 4.0, "m=64 {coarse}, m=1024 {fine}");
}

#[test]
fn null_feature_gets_exactly_zero() {
    let arch = ArchitectureId::MlpSmall { input: vec![6], hidden: vec![5, 4], classes: 3 };
    for k in 0..10u64 {
        let model = with_random_biases(&build(&arch, k).unwrap(), k, 0.2);
        let slot = ParamSlot { node: model.find("fc1").unwrap(), kind: ParamKind::Weight };
        let mut w = model.param(slot).unwrap().clone();
        let cols = w.shape()[1];
        let zeroed: Vec<f64> = w
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % cols == 2 { 0.0 } else { v })
            .collect();
        w = Tensor::new(w.shape().to_vec(), zeroed).unwrap();
        let model = model.with_param(slot, w).unwrap();
        let x = random_input(&[6], 51, k);
        let methods = [
            Method::Gradient,
            Method::GradientXInput,
            Method::IntegratedGradients { steps: 16, baseline: 0.0 },
            Method::SmoothGrad { sigma: 0.3, samples: 4 },
            Method::GuidedBackprop,
            Method::Lrp { config: LrpConfig::zero() },
            Method::Lrp { config: LrpConfig::epsilon(0.1) },
            Method::Lrp { config: LrpConfig::beta(1.0) },
            Method::Lrp { config: LrpConfig::adaptive_beta(10.0) },
            Method::Lrp { config: LrpConfig::composite() },
        ];
        for m in &methods {
            let a = m.attribute(&model, &x, Target::Logit(1), k).unwrap();
            assert_eq!(a.values.data()[2], 0.0, "{} on net {k}", m.name());
        }
    }
}

#[test]
fn randomizing_the_head_keeps_features_bit_identical() {
    let arch = ArchitectureId::ConvPlain { channels: 1, size: 16, width: 2, classes: 3 };
    let model = build(&arch, 3).unwrap();
    let plan = RandomizationPlan::default_for(&arch, &model, 8).unwrap();
    let r = randomize(&model, &plan, 0, RandomizationMode::Cascading).unwrap();
    let flatten = model.find("flatten").unwrap();
    let x = random_input(model.input_shape(), 61, 0);
    let (a, b) = (forward(&model, &x).unwrap(), forward(&r, &x).unwrap());
    assert_eq!(a.get(flatten), b.get(flatten));
    assert_ne!(a.logits(), b.logits());
    assert_eq!(forward(&r, &x).unwrap().logits(), b.logits());
}

#[test]
fn attributions_are_deterministic() {
    for k in 0..6u64 {
        let model = random_net(71, k);
        let x = random_input(model.input_shape(), 71, k);
        let a = gradient(&model, &x, Target::Logit(0)).unwrap();
        let b = gradient(&model, &x, Target::Logit(0)).unwrap();
        assert_eq!(a, b);
        let m = Method::SmoothGrad { sigma: 0.1, samples: 3 };
        assert_eq!(
            m.attribute(&model, &x, Target::Logit(0), 5).unwrap(),
            m.attribute(&model, &x, Target::Logit(0), 5).unwrap()
        );
    }
}
