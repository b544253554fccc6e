use attrib_audit::attribution::{AttributionMap, Target};
use attrib_audit::csvout::fmt_f64;
use attrib_audit::faithfulness::{blur_image, rank_regions, run_occlusion, OcclusionConfig};
use attrib_audit::graph::GraphBuilder;
use attrib_audit::simmetrics::{
    mse_normalized, normalize_second_moment, spearman, ssim, SsimParams, Window,
};
use attrib_audit::theory::{cauchy_tail, quantile_sorted, shapley_values, Activation};
use attrib_audit::Tensor;
use proptest::prelude::*;

fn map_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn plane(v: Vec<f64>, side: usize) -> Tensor {
    Tensor::new(vec![1, side, side], v).unwrap()
}

fn varied(v: &[f64]) -> bool {
    v.iter().any(|x| (x - v[0]).abs() > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric(a in map_strategy(64), b in map_strategy(64)) {
        let (a, b) = (plane(a, 8), plane(b, 8));
        for p in [SsimParams::default(), SsimParams::whole(1e-4, 9e-4)] {
            let ab = ssim(&a, &b, &p).unwrap().value;
            let ba = ssim(&b, &a, &p).unwrap().value;
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn normalized_ssim_ignores_positive_scaling(a in map_strategy(64), b in map_strategy(64), c in 0.01f64..100.0) {
        prop_assume!(varied(&a) && varied(&b));
        let (a, b) = (plane(a, 8), plane(b, 8));
        let p = SsimParams { window: Window::Square { size: 4, stride: 2 }, ..SsimParams::default() };
        let base = ssim(&normalize_second_moment(&a).unwrap(), &normalize_second_moment(&b).unwrap(), &p).unwrap().value;
        let scaled = ssim(&normalize_second_moment(&a.scale(c)).unwrap(), &normalize_second_moment(&b).unwrap(), &p).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(a in map_strategy(40), b in map_strategy(40)) {
        prop_assume!(varied(&a) && varied(&b));
        let (ta, tb) = (Tensor::new(vec![40], a.clone()).unwrap(), Tensor::new(vec![40], b).unwrap());
        let ea = ta.map(|v| v.exp() * 3.0 + 1.0);
        let r = spearman(&ta, &tb).unwrap().value;
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert_eq!(r, spearman(&ea, &tb).unwrap().value);
    }

    #[test]
    fn normalized_mse_identity(a in map_strategy(50), b in map_strategy(50)) {
        prop_assume!(varied(&a) && varied(&b));
        let (ta, tb) = (Tensor::new(vec![50], a).unwrap(), Tensor::new(vec![50], b).unwrap());
        let (na, nb) = (normalize_second_moment(&ta).unwrap(), normalize_second_moment(&tb).unwrap());
        let cross = na.data().iter().zip(nb.data()).map(|(x, y)| x * y).sum::<f64>() / 50.0;
        prop_assert!((mse_normalized(&ta, &tb).unwrap().value - (2.0 - 2.0 * cross)).abs() < 1e-12);
    }

    #[test]
    fn cauchy_tail_monotone(k1 in 0.01f64..50.0, dk in 0.01f64..10.0, g1 in 0.01f64..10.0, dg in 0.01f64..10.0) {
        prop_assert!(cauchy_tail(k1 + dk, g1).unwrap() < cauchy_tail(k1, g1).unwrap());
        prop_assert!(cauchy_tail(k1, g1 + dg).unwrap() > cauchy_tail(k1, g1).unwrap());
        let p = cauchy_tail(k1, g1).unwrap();
        prop_assert!((0.0..=0.5).contains(&p));
    }

    #[test]
    fn shapley_efficiency(ws in prop::collection::vec(-2.0f64..2.0, 1..=10), b in -1.0f64..1.0, soft in any::<bool>()) {
        let d = ws.len();
        let x: Vec<f64> = (0..d).map(|i| 0.1 + i as f64 * 0.2).collect();
        let g = if soft { Activation::Softplus } else { Activation::Relu };
        let phi = shapley_values(&ws, b, g, &x).unwrap();
        let full = g.apply(b + ws.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>());
        prop_assert!((phi.iter().sum::<f64>() - (full - g.apply(b))).abs() <= 1e-10);
    }

    #[test]
    fn quantiles_are_monotone(mut v in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        v.sort_by(f64::total_cmp);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=20 {
            let q = quantile_sorted(&v, k as f64 / 20.0).unwrap();
            prop_assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn best_region_has_the_largest_mean(v in map_strategy(2 * 12 * 12), k in 2usize..=6) {
        let r = rank_regions(&Tensor::new(vec![2, 12, 12], v).unwrap(), k).unwrap();
        prop_assert!(r.regions.iter().all(|x| x.mean <= r.regions[0].mean));
        prop_assert!(r.regions.windows(2).all(|w| w[0].mean >= w[1].mean));
        prop_assert_eq!(r.regions.len(), (12 / k) * (12 / k));
    }

    #[test]
    fn blur_preserves_constant_interior(c in -3.0f64..3.0) {
        let b = blur_image(&Tensor::filled(&[1, 9, 9], c), 3).unwrap();
        for i in 1..8 {
            for j in 1..8 {
                prop_assert!((b.data()[i * 9 + j] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_floats_round_trip(v in any::<f64>()) {
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

fn region_model() -> attrib_audit::graph::ModelGraph {
    let mut b = GraphBuilder::new(&[1, 8, 8]);
    let f = b.flatten("flatten", 0);
    b.dense("fc", f, 2);
    b.build().unwrap()
}

#[test]
fn occlusion_curve_starts_clean_and_has_fixed_length() {
    let model = attrib_audit::zoo::build(
        &attrib_audit::zoo::ArchitectureId::MlpSmall { input: vec![1, 8, 8], hidden: vec![6], classes: 3 },
        2,
    )
    .unwrap();
    let x = Tensor::new(vec![1, 8, 8], (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let map = AttributionMap::new(x.clone(), "input", Target::Logit(0)).unwrap();
    let cfg = OcclusionConfig { blur_kernel: 3, patch: 2, n_steps: 16, ..OcclusionConfig::default() };
    let c = run_occlusion(&model, &x, &map, &cfg).unwrap();
    assert_eq!(c.scores.len(), 17);
    let clean = attrib_audit::ops::softmax(attrib_audit::engine::logits(&model, &x).unwrap().data());
    assert_eq!(c.scores[0], clean[c.class]);
    assert!(c.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let too_many = OcclusionConfig { n_steps: 17, ..cfg };
    assert!(run_occlusion(&model, &x, &map, &too_many).is_err());
}

#[test]
fn constant_model_gives_flat_curve() {
    let model = region_model();
    let x = Tensor::new(vec![1, 8, 8], (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
    let map = AttributionMap::new(x.clone(), "input", Target::Logit(0)).unwrap();
    let cfg = OcclusionConfig { blur_kernel: 3, patch: 4, n_steps: 4, ..OcclusionConfig::default() };
    let c = run_occlusion(&model, &x, &map, &cfg).unwrap();
    assert!(c.scores.iter().all(|&s| s == c.scores[0]));
    assert_eq!(c.auc, c.scores[0]);
}

#[test]
fn occluding_the_only_read_region_first_gives_the_largest_drop() {
    use attrib_audit::graph::{ParamKind, ParamSlot};
    let model = region_model();
    let mut w = vec![0.0; 2 * 64];
    for i in 0..4 {
        for j in 4..8 {
            w[i * 8 + j] = 1.0;
        }
    }
    let model = model
        .with_param(ParamSlot { node: 2, kind: ParamKind::Weight }, Tensor::new(vec![2, 64], w.clone()).unwrap())
        .unwrap();
    let x = Tensor::new(vec![1, 8, 8], (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { 0.2 }).collect())
        .unwrap();
    let map = AttributionMap::new(Tensor::new(vec![1, 8, 8], w[..64].to_vec()).unwrap(), "w", Target::Logit(0)).unwrap();
    let cfg = OcclusionConfig { blur_kernel: 5, patch: 4, n_steps: 1, ..OcclusionConfig::default() };
    let curve = run_occlusion(&model, &x, &map, &cfg).unwrap();
    assert_eq!((curve.order[0].row, curve.order[0].col), (0, 1));
    let first_drop = curve.scores[0] - curve.scores[1];
    // Every other single region leaves the score untouched.
    for (r, c) in [(0, 0), (1, 0), (1, 1)] {
        let mut m = vec![0.0; 64];
        for i in r * 4..r * 4 + 4 {
            for j in c * 4..c * 4 + 4 {
                m[i * 8 + j] = 1.0;
            }
        }
        let am = AttributionMap::new(Tensor::new(vec![1, 8, 8], m).unwrap(), "cell", Target::Logit(0)).unwrap();
        let other = run_occlusion(&model, &x, &am, &cfg).unwrap();
        assert!(other.scores[0] - other.scores[1] < first_drop);
    }
}

#[test]
fn repeated_occlusion_is_idempotent() {
    let x = Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i as f64).cos()).collect()).unwrap();
    let blurred = blur_image(&x, 3).unwrap();
    let mut once = x.data().to_vec();
    let region = |d: &mut Vec<f64>| {
        for i in 0..3 {
            for j in 0..3 {
                d[i * 6 + j] = blurred.data()[i * 6 + j];
            }
        }
    };
    region(&mut once);
    let mut twice = once.clone();
    region(&mut twice);
    assert_eq!(once, twice);
}
