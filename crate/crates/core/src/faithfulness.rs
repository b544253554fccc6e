//! Blur-occlusion region perturbation.
//!
//! The highest-scoring grid cells of an attribution map are replaced, one
//! after another, by the matching cells of a blurred copy of the image while
//! the softmax score of the originally predicted class is tracked. A faithful
//! map makes the score drop early, so lower AUC is better.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, Method, Target};
use crate::csvout::fmt_f64;
use crate::engine::logits;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::ops::softmax;
use crate::seed::derive_seed;
use crate::simmetrics::pearson;
use crate::tensor::Tensor;
use crate::zoo::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Softmax,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionConfig {
    #[serde(default = "default_blur")]
    pub blur_kernel: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub score: ScoreMode,
}

fn default_blur() -> usize {
    15
}

fn default_patch() -> usize {
    8
}

fn default_steps() -> usize {
    30
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            blur_kernel: default_blur(),
            patch: default_patch(),
            n_steps: default_steps(),
            score: ScoreMode::Softmax,
        }
    }
}

fn as_chw(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::invalid(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

/// Per-channel box filter of odd size `kernel`, zero padded; every output
/// is the window sum divided by `kernel²`.
pub fn blur_image(x: &Tensor, kernel: usize) -> Result<Tensor> {
    let (c, h, w) = as_chw(x)?;
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::invalid(format!("blur kernel must be odd and positive, got {kernel}")));
    }
    let r = (kernel / 2) as isize;
    let norm = (kernel * kernel) as f64;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut s = 0.0;
                for di in -r..=r {
                    let ii = i + di;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in -r..=r {
                        let jj = j + dj;
                        if jj >= 0 && jj < w as isize {
                            s += plane[ii as usize * w + jj as usize];
                        }
                    }
                }
                out[ch * h * w + i as usize * w + j as usize] = s / norm;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Grid row and column of the cell.
    pub row: usize,
    pub col: usize,
    /// Mean attribution over the cell and all channels.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRanking {
    pub patch: usize,
    /// Highest mean first; ties in row-major order.
    pub regions: Vec<Region>,
    /// Pixels per channel in trailing partial cells, never occluded.
    pub excluded_pixels: usize,
}

/// Ranks the non-overlapping `patch × patch` cells of a `[C, H, W]` map.
pub fn rank_regions(map: &Tensor, patch: usize) -> Result<RegionRanking> {
    let (c, h, w) = as_chw(map)?;
    if patch == 0 || patch > h || patch > w {
        return Err(Error::invalid(format!("patch size {patch} does not fit a {h}×{w} map")));
    }
    let (rows, cols) = (h / patch, w / patch);
    let d = map.data();
    let mut regions: Vec<Region> = (0..rows * cols)
        .map(|k| {
            let (row, col) = (k / cols, k % cols);
            let mut s = 0.0;
            for ch in 0..c {
                for i in row * patch..(row + 1) * patch {
                    let base = ch * h * w + i * w;
                    s += d[base + col * patch..base + (col + 1) * patch].iter().sum::<f64>();
                }
            }
            Region { row, col, mean: s / (c * patch * patch) as f64 }
        })
        .collect();
    regions.sort_by(|a, b| b.mean.total_cmp(&a.mean).then((a.row, a.col).cmp(&(b.row, b.col))));
    Ok(RegionRanking {
        patch,
        regions,
        excluded_pixels: h * w - rows * cols * patch * patch,
    })
}

/// Copies one cell of `src` into `dst` for every channel.
fn paste_region(dst: &mut [f64], src: &[f64], shape: (usize, usize, usize), r: &Region, patch: usize) {
    let (c, h, w) = shape;
    for ch in 0..c {
        for i in r.row * patch..(r.row + 1) * patch {
            let base = ch * h * w + i * w;
            let span = base + r.col * patch..base + (r.col + 1) * patch;
            dst[span.clone()].copy_from_slice(&src[span]);
        }
    }
}

fn score_of(model: &ModelGraph, x: &Tensor, class: usize, mode: ScoreMode) -> Result<f64> {
    let z = logits(model, x)?;
    Ok(match mode {
        ScoreMode::Softmax => softmax(z.data())[class],
        ScoreMode::Logit => z.data()[class],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionCurve {
    pub method: String,
    pub class: usize,
    /// `s_0` on the clean image, then one score per occlusion step.
    pub scores: Vec<f64>,
    pub auc: f64,
    /// Cells in the order they were occluded.
    pub order: Vec<Region>,
}

/// Occludes the `n_steps` best-ranked cells cumulatively, tracking the
/// score of the class predicted on the clean image.
pub fn run_occlusion(model: &ModelGraph, x: &Tensor, map: &AttributionMap, config: &OcclusionConfig) -> Result<OcclusionCurve> {
    let shape = as_chw(x)?;
    x.check_same_shape(&map.values, "attribution map")?;
    let ranking = rank_regions(&map.values, config.patch)?;
    if config.n_steps > ranking.regions.len() {
        return Err(Error::invalid(format!(
            "{} occlusion steps requested but only {} regions exist",
            config.n_steps,
            ranking.regions.len()
        )));
    }
    let class = logits(model, x)?.argmax();
    let blurred = blur_image(x, config.blur_kernel)?;
    let mut cur = x.data().to_vec();
    let mut scores = vec![score_of(model, x, class, config.score)?];
    let order: Vec<Region> = ranking.regions[..config.n_steps].to_vec();
    for r in &order {
        paste_region(&mut cur, blurred.data(), shape, r, config.patch);
        let xt = Tensor::new(x.shape().to_vec(), cur.clone())?;
        scores.push(score_of(model, &xt, class, config.score)?);
    }
    let auc = if config.n_steps == 0 {
        scores[0]
    } else {
        scores[1..].iter().sum::<f64>() / config.n_steps as f64
    };
    Ok(OcclusionCurve {
        method: map.method.clone(),
        class,
        scores,
        auc,
        order,
    })
}

/// Pearson correlation between each cell's mean attribution and the score
/// drop caused by occluding that cell alone.
pub fn occlusion_correlation(
    model: &ModelGraph,
    x: &Tensor,
    map: &AttributionMap,
    config: &OcclusionConfig,
) -> Result<f64> {
    let shape = as_chw(x)?;
    x.check_same_shape(&map.values, "attribution map")?;
    let ranking = rank_regions(&map.values, config.patch)?;
    let class = logits(model, x)?.argmax();
    let s0 = score_of(model, x, class, config.score)?;
    let blurred = blur_image(x, config.blur_kernel)?;
    let mut means = Vec::with_capacity(ranking.regions.len());
    let mut drops = Vec::with_capacity(ranking.regions.len());
    for r in &ranking.regions {
        let mut cur = x.data().to_vec();
        paste_region(&mut cur, blurred.data(), shape, r, config.patch);
        let xt = Tensor::new(x.shape().to_vec(), cur)?;
        means.push(r.mean);
        drops.push(s0 - score_of(model, &xt, class, config.score)?);
    }
    pearson(&means, &drops)
}

pub const CURVE_HEADER: [&str; 8] = ["model", "method", "patch_k", "blur_k", "seed", "image_id", "step", "score"];
pub const AUC_HEADER: [&str; 9] =
    ["model", "method", "patch_k", "blur_k", "seed", "n_images", "mean_auc", "std_auc", "mean_correlation"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub image_id: usize,
    pub curve: OcclusionCurve,
    /// Missing when the correlation is undefined, e.g. for a constant map.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub model: String,
    pub method: String,
    pub images: Vec<ImageOutcome>,
}

impl MethodOutcome {
    pub fn mean_auc(&self) -> f64 {
        self.images.iter().map(|i| i.curve.auc).sum::<f64>() / self.images.len() as f64
    }

    pub fn std_auc(&self) -> f64 {
        let m = self.mean_auc();
        let n = self.images.len() as f64;
        (self.images.iter().map(|i| (i.curve.auc - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn mean_correlation(&self) -> Option<f64> {
        let v: Vec<f64> = self.images.iter().filter_map(|i| i.correlation).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessResult {
    pub config: OcclusionConfig,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

impl FaithfulnessResult {
    pub fn curve_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for o in &self.outcomes {
            for img in &o.images {
                for (step, s) in img.curve.scores.iter().enumerate() {
                    rows.push(vec![
                        o.model.clone(),
                        o.method.clone(),
                        self.config.patch.to_string(),
                        self.config.blur_kernel.to_string(),
                        self.seed.to_string(),
                        img.image_id.to_string(),
                        step.to_string(),
                        fmt_f64(*s),
                    ]);
                }
            }
        }
        rows
    }

    pub fn auc_rows(&self) -> Vec<Vec<String>> {
        self.outcomes
            .iter()
            .map(|o| {
                vec![
                    o.model.clone(),
                    o.method.clone(),
                    self.config.patch.to_string(),
                    self.config.blur_kernel.to_string(),
                    self.seed.to_string(),
                    o.images.len().to_string(),
                    fmt_f64(o.mean_auc()),
                    fmt_f64(o.std_auc()),
                    o.mean_correlation().map(fmt_f64).unwrap_or_default(),
                ]
            })
            .collect()
    }

    pub fn outcome(&self, model: &str, method: &str) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.model == model && o.method == method)
    }
}

/// Runs every method on the first `n_images` images for every model.
/// Stochastic methods on image `i` are seeded with `derive_seed(seed, [i])`.
pub fn faithfulness_suite(
    models: &[(String, ModelGraph)],
    methods: &[Method],
    data: &Dataset,
    n_images: usize,
    config: &OcclusionConfig,
    seed: u64,
) -> Result<FaithfulnessResult> {
    if models.is_empty() || methods.is_empty() {
        return Err(Error::invalid("need at least one model and one method"));
    }
    let n = n_images.min(data.len());
    if n == 0 {
        return Err(Error::invalid("faithfulness needs at least one image"));
    }
    let items: Vec<(usize, usize, usize)> = (0..models.len())
        .flat_map(|m| (0..methods.len()).flat_map(move |k| (0..n).map(move |i| (m, k, i))))
        .collect();
    let results: Vec<ImageOutcome> = items
        .par_iter()
        .map(|&(m, k, i)| {
            let model = &models[m].1;
            let x = data.image(i)?;
            let class = logits(model, &x)?.argmax();
            let map = methods[k].attribute(model, &x, Target::Logit(class), derive_seed(seed, &[i as u64]))?;
            let curve = run_occlusion(model, &x, &map, config)?;
            let correlation = match occlusion_correlation(model, &x, &map, config) {
                Ok(r) if r.is_finite() => Some(r),
                Ok(_) | Err(Error::Degenerate(_)) | Err(Error::InvalidArgument(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ImageOutcome { image_id: i, curve, correlation })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = results.into_iter();
    let mut outcomes = Vec::new();
    for (name, _) in models {
        for method in methods {
            outcomes.push(MethodOutcome {
                model: name.clone(),
                method: method.name(),
                images: it.by_ref().take(n).collect(),
            });
        }
    }
    Ok(FaithfulnessResult { config: *config, seed, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_arithmetic() {
        let mut d = vec![0.0; 25];
        d[12] = 9.0;
        let x = Tensor::new(vec![1, 5, 5], d).unwrap();
        let b = blur_image(&x, 3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
                assert_eq!(b.data()[i * 5 + j], if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(blur_image(&x, 1).unwrap(), x);
        let c = blur_image(&Tensor::filled(&[2, 6, 6], 2.0), 3).unwrap();
        assert_eq!(c.data()[7], 2.0);
        assert_eq!(c.data()[36 + 14], 2.0);
        assert!(blur_image(&x, 4).is_err());
    }

    #[test]
    fn ranking_ties_and_hot_cell() {
        let u = rank_regions(&Tensor::filled(&[1, 4, 6], 1.0), 2).unwrap();
        let order: Vec<(usize, usize)> = u.regions.iter().map(|r| (r.row, r.col)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        let mut d = vec![0.0; 24];
        d[6 + 5] = 1.0;
        let hot = rank_regions(&Tensor::new(vec![1, 4, 6], d).unwrap(), 2).unwrap();
        assert_eq!((hot.regions[0].row, hot.regions[0].col), (0, 2));
        let partial = rank_regions(&Tensor::zeros(&[1, 5, 5]), 2).unwrap();
        assert_eq!(partial.regions.len(), 4);
        assert_eq!(partial.excluded_pixels, 9);
        assert!(rank_regions(&Tensor::zeros(&[1, 4, 4]), 5).is_err());
    }
}
