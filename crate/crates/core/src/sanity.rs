//! Model-randomization sanity checks and logit-preservation diagnostics.
//!
//! Every comparison is between the original model and a randomized stage,
//! never between consecutive stages.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{skip_split, AttributionMap, LrpConfig, Method, Target};
use crate::csvout::fmt_f64;
use crate::engine::logits;
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NodeId};
use crate::seed::{derive_seed, rng_for};
use crate::simmetrics::{compare, pearson, Metric, Preprocessing, SsimParams};
use crate::tensor::Tensor;
use crate::zoo::{randomize, Dataset, RandomizationMode, RandomizationPlan};

/// Seed stream for attributions of the original model.
const ORIGINAL_STREAM: u64 = 0x6f72_6967;

pub const SANITY_HEADER: [&str; 10] =
    ["model", "method", "mode", "stage", "metric", "prep", "seed", "n_images", "mean", "std"];

#[derive(Debug, Clone, PartialEq)]
pub struct SanityRunConfig {
    pub model_name: String,
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    /// Groups to randomize; its own seed is replaced by each run seed.
    pub plan: RandomizationPlan,
    pub mode: RandomizationMode,
    pub seeds: Vec<u64>,
    pub preprocessing: Preprocessing,
    pub ssim: SsimParams,
    pub n_images: usize,
}

impl SanityRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.metrics.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("need at least one method, one metric and one seed"));
        }
        if self.plan.is_empty() {
            return Err(Error::invalid("randomization plan has no stages"));
        }
        if self.n_images == 0 {
            return Err(Error::invalid("need at least one image"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityRow {
    pub model: String,
    pub method: String,
    pub mode: RandomizationMode,
    pub stage: usize,
    pub stage_name: String,
    pub metric: Metric,
    pub prep: String,
    pub seed: u64,
    /// Images with a defined metric value.
    pub n_images: usize,
    /// Missing when no image gave a defined value.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl SanityRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            self.model.clone(),
            self.method.clone(),
            self.mode.as_str().to_string(),
            self.stage_name.clone(),
            self.metric.as_str().to_string(),
            self.prep.clone(),
            self.seed.to_string(),
            self.n_images.to_string(),
            opt(self.mean),
            opt(self.std),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanityResult {
    pub rows: Vec<SanityRow>,
    /// Comparisons skipped because a map was degenerate.
    pub flagged: usize,
}

impl SanityResult {
    /// Mean over seeds of the per-seed means for one grid cell.
    pub fn seed_mean(&self, method: &str, stage: usize, metric: Metric) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.stage == stage && r.metric == metric)
            .filter_map(|r| r.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-seed mean for one grid cell.
    pub fn value(&self, method: &str, stage: usize, metric: Metric, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.stage == stage && r.metric == metric && r.seed == seed)
            .and_then(|r| r.mean)
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(SanityRow::fields).collect()
    }
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (Some(m), Some(s))
}

fn predicted(model: &ModelGraph, x: &Tensor) -> Result<usize> {
    Ok(logits(model, x)?.argmax())
}

/// Compares original-model attributions with those of every randomization
/// stage for every seed. Targets are the classes the original model
/// predicts.
pub fn run_sanity(model: &ModelGraph, data: &Dataset, config: &SanityRunConfig) -> Result<SanityResult> {
    config.validate()?;
    let n = config.n_images.min(data.len());
    if n == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    let images: Vec<Tensor> = (0..n).map(|i| data.image(i)).collect::<Result<_>>()?;
    let targets: Vec<usize> = images.iter().map(|x| predicted(model, x)).collect::<Result<_>>()?;
    let prep = &config.preprocessing;

    let orig_items: Vec<(usize, usize)> =
        (0..config.methods.len()).flat_map(|k| (0..n).map(move |i| (k, i))).collect();
    let originals: Vec<Option<Tensor>> = orig_items
        .par_iter()
        .map(|&(k, i)| {
            let s = derive_seed(ORIGINAL_STREAM, &[i as u64]);
            match prep.apply(&config.methods[k].attribute(model, &images[i], Target::Logit(targets[i]), s)?) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let stages = config.plan.len();
    let runs: Vec<(u64, usize)> = config
        .seeds
        .iter()
        .flat_map(|&s| (0..stages).map(move |st| (s, st)))
        .collect();
    let models: Vec<ModelGraph> = runs
        .par_iter()
        .map(|&(s, st)| randomize(model, &config.plan.with_seed(s), st, config.mode))
        .collect::<Result<_>>()?;

    // values[run][method][metric][image]
    type Cell = Vec<Vec<Option<f64>>>;
    let values: Vec<Vec<Cell>> = runs
        .par_iter()
        .zip(&models)
        .map(|(&(seed, stage), rmodel)| {
            (0..config.methods.len())
                .map(|k| {
                    let per_image: Vec<Vec<Option<f64>>> = (0..n)
                        .into_par_iter()
                        .map(|i| {
                            let s = derive_seed(seed, &[stage as u64, i as u64]);
                            let after = prep.apply(&config.methods[k].attribute(
                                rmodel,
                                &images[i],
                                Target::Logit(targets[i]),
                                s,
                            )?);
                            let after = match after {
                                Ok(t) => t,
                                Err(Error::Degenerate(_)) => return Ok(vec![None; config.metrics.len()]),
                                Err(e) => return Err(e),
                            };
                            let Some(before) = &originals[k * n + i] else {
                                return Ok(vec![None; config.metrics.len()]);
                            };
                            config
                                .metrics
                                .iter()
                                .map(|&m| match compare(m, before, &after, &config.ssim) {
                                    Ok(v) if v.is_finite() => Ok(Some(v)),
                                    Ok(_) | Err(Error::Degenerate(_)) => Ok(None),
                                    Err(e) => Err(e),
                                })
                                .collect()
                        })
                        .collect::<Result<_>>()?;
                    Ok((0..config.metrics.len())
                        .map(|mi| per_image.iter().map(|v| v[mi]).collect())
                        .collect())
                })
                .collect::<Result<Vec<Cell>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut flagged = 0;
    for (r, &(seed, stage)) in runs.iter().enumerate() {
        for (k, method) in config.methods.iter().enumerate() {
            for (mi, &metric) in config.metrics.iter().enumerate() {
                let vals: Vec<f64> = values[r][k][mi].iter().flatten().copied().collect();
                flagged += n - vals.len();
                let (mean, std) = mean_std(&vals);
                rows.push(SanityRow {
                    model: config.model_name.clone(),
                    method: method.name(),
                    mode: config.mode,
                    stage,
                    stage_name: config.plan.group_name(stage).to_string(),
                    metric,
                    prep: prep.id(),
                    seed,
                    n_images: vals.len(),
                    mean,
                    std,
                });
            }
        }
    }
    Ok(SanityResult { rows, flagged })
}

/// Per-image statistics with undefined entries kept as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImage {
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub flagged: usize,
}

impl PerImage {
    fn new(values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&defined);
        Self { flagged: values.len() - defined.len(), values, mean, std }
    }
}

fn first_images(data: &Dataset, n_images: usize) -> Result<Vec<Tensor>> {
    let n = n_images.min(data.len());
    if n == 0 {
        return Err(Error::invalid("need at least one image"));
    }
    (0..n).map(|i| data.image(i)).collect()
}

/// Pearson correlation, per image, of the logit vectors before and after
/// randomizing `stage`.
pub fn logit_correlation(
    model: &ModelGraph,
    plan: &RandomizationPlan,
    stage: usize,
    mode: RandomizationMode,
    data: &Dataset,
    n_images: usize,
) -> Result<PerImage> {
    let images = first_images(data, n_images)?;
    let rmodel = randomize(model, plan, stage, mode)?;
    let values = images
        .par_iter()
        .map(|x| {
            let (a, b) = (logits(model, x)?, logits(&rmodel, x)?);
            Ok(match pearson(a.data(), b.data()) {
                Ok(r) if r.is_finite() => Some(r),
                Ok(_) | Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PerImage::new(values))
}

fn cosine(a: &Tensor, b: &Tensor) -> Option<f64> {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let (a, b) = (a.data(), b.data());
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipStability {
    pub node: NodeId,
    pub skip: PerImage,
    pub weighted: PerImage,
}

/// Cosine similarity of the skip and weighted components of an LRP
/// explanation before and after randomizing `stage`.
#[allow(clippy::too_many_arguments)]
pub fn skip_component_stability(
    model: &ModelGraph,
    plan: &RandomizationPlan,
    stage: usize,
    mode: RandomizationMode,
    data: &Dataset,
    n_images: usize,
    config: &LrpConfig,
    at: Option<NodeId>,
) -> Result<SkipStability> {
    let images = first_images(data, n_images)?;
    let rmodel = randomize(model, plan, stage, mode)?;
    let pairs: Vec<(Option<f64>, Option<f64>, NodeId)> = images
        .par_iter()
        .map(|x| {
            let t = Target::Logit(predicted(model, x)?);
            let a = skip_split(model, x, t, config, at)?;
            let b = skip_split(&rmodel, x, t, config, Some(a.node))?;
            Ok((
                cosine(&a.skip.values, &b.skip.values),
                cosine(&a.weighted.values, &b.weighted.values),
                a.node,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(SkipStability {
        node: pairs[0].2,
        skip: PerImage::new(pairs.iter().map(|p| p.0).collect()),
        weighted: PerImage::new(pairs.iter().map(|p| p.1).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub tau: f64,
    pub overlap: PerImage,
    /// Same statistic with the randomized map's pixels shuffled.
    pub shuffled_baseline: PerImage,
}

/// Second-moment normalization that leaves an all-zero map at zero.
fn normalized_abs(map: &AttributionMap, prep: &Preprocessing) -> Result<Vec<f64>> {
    let plain = Preprocessing { normalization: crate::simmetrics::Normalization::None, ..*prep };
    let t = plain.apply(map)?;
    let rms = (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
    Ok(t.data().iter().map(|v| if rms > 0.0 { (v / rms).abs() } else { 0.0 }).collect())
}

fn overlap(before: &[f64], after: &[f64], tau: f64) -> Option<f64> {
    let low: Vec<usize> = (0..before.len()).filter(|&i| before[i] < tau).collect();
    (!low.is_empty()).then(|| low.iter().filter(|&&i| after[i] < tau).count() as f64 / low.len() as f64)
}

/// Fraction of pixels irrelevant (`|R| < tau` after second-moment
/// normalization) before randomization that stay irrelevant after it.
#[allow(clippy::too_many_arguments)]
pub fn irrelevance_overlap(
    model: &ModelGraph,
    plan: &RandomizationPlan,
    stage: usize,
    mode: RandomizationMode,
    data: &Dataset,
    n_images: usize,
    method: &Method,
    prep: &Preprocessing,
    tau: f64,
) -> Result<OverlapReport> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("threshold must be positive, got {tau}")));
    }
    let images = first_images(data, n_images)?;
    let rmodel = randomize(model, plan, stage, mode)?;
    let pairs: Vec<(Option<f64>, Option<f64>)> = images
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let t = Target::Logit(predicted(model, x)?);
            let s = derive_seed(plan.seed(), &[i as u64]);
            let a = normalized_abs(&method.attribute(model, x, t, s)?, prep)?;
            let mut b = normalized_abs(&method.attribute(&rmodel, x, t, s)?, prep)?;
            let direct = overlap(&a, &b, tau);
            b.shuffle(&mut rng_for(plan.seed(), &[ORIGINAL_STREAM, i as u64]));
            Ok((direct, overlap(&a, &b, tau)))
        })
        .collect::<Result<_>>()?;
    Ok(OverlapReport {
        tau,
        overlap: PerImage::new(pairs.iter().map(|p| p.0).collect()),
        shuffled_baseline: PerImage::new(pairs.iter().map(|p| p.1).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build, synth_dataset, ArchitectureId, SynthSpec};

    fn setup() -> (ModelGraph, Dataset) {
        let arch = ArchitectureId::ConvPlain { channels: 1, size: 16, width: 2, classes: 3 };
        (build(&arch, 2).unwrap(), synth_dataset(&SynthSpec::bars(16, 3), 4, 1).unwrap())
    }

    fn empty_plan() -> RandomizationPlan {
        RandomizationPlan::new(vec![("none".into(), vec![])], 0).unwrap()
    }

    #[test]
    fn empty_stage_is_identity() {
        let (m, d) = setup();
        let cfg = SanityRunConfig {
            model_name: "conv_plain".into(),
            methods: vec![Method::Gradient, Method::Lrp { config: LrpConfig::composite() }],
            metrics: vec![Metric::Ssim, Metric::MseNormalized, Metric::Spearman],
            plan: empty_plan(),
            mode: RandomizationMode::Cascading,
            seeds: vec![1, 2],
            preprocessing: Preprocessing::default(),
            ssim: SsimParams::default(),
            n_images: 3,
        };
        let r = run_sanity(&m, &d, &cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 2 * 3);
        for row in &r.rows {
            assert_eq!(row.mean, Some(row.metric.identity_value()), "{row:?}");
        }
        assert_eq!(run_sanity(&m, &d, &cfg).unwrap(), r);
        let lc = logit_correlation(&m, &empty_plan(), 0, RandomizationMode::Cascading, &d, 3).unwrap();
        assert!(lc.values.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        let ov = irrelevance_overlap(
            &m,
            &empty_plan(),
            0,
            RandomizationMode::Cascading,
            &d,
            3,
            &Method::Gradient,
            &Preprocessing::default(),
            0.1,
        )
        .unwrap();
        assert!(ov.overlap.values.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn config_validation() {
        let (m, d) = setup();
        let cfg = SanityRunConfig {
            model_name: "x".into(),
            methods: vec![],
            metrics: vec![Metric::Ssim],
            plan: empty_plan(),
            mode: RandomizationMode::Single,
            seeds: vec![0],
            preprocessing: Preprocessing::default(),
            ssim: SsimParams::default(),
            n_images: 1,
        };
        assert!(run_sanity(&m, &d, &cfg).is_err());
    }
}
