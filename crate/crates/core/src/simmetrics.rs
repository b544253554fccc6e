//! Similarity and distance between attribution maps, and the map
//! normalizations they depend on.

use serde::{Deserialize, Serialize};

use crate::attribution::{reduce_channels, AttributionMap, ChannelReduction};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Ssim,
    Spearman,
    MseNormalized,
    MseRaw,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Spearman => "spearman",
            Metric::MseNormalized => "mse-normalized",
            Metric::MseRaw => "mse-raw",
        }
    }

    /// Value the metric takes for two identical maps.
    pub fn identity_value(&self) -> f64 {
        match self {
            Metric::Ssim | Metric::Spearman => 1.0,
            Metric::MseNormalized | Metric::MseRaw => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// One window covering the whole map.
    Whole,
    /// Square windows over the last two axes, per leading channel.
    Square { size: usize, stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: Window,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    /// 7×7 windows with stride 1 and constants for a dynamic range of 2.
    fn default() -> Self {
        Self {
            window: Window::Square { size: 7, stride: 1 },
            c1: (0.01f64 * 2.0).powi(2),
            c2: (0.03f64 * 2.0).powi(2),
        }
    }
}

impl SsimParams {
    pub fn whole(c1: f64, c2: f64) -> Self {
        Self {
            window: Window::Whole,
            c1,
            c2,
        }
    }
}

/// Population statistics of one pair of windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStats {
    pub mu_a: f64,
    pub mu_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
    pub c1: f64,
    pub c2: f64,
}

impl PatchStats {
    pub fn from_slices(a: &[f64], b: &[f64], c1: f64, c2: f64) -> Self {
        let n = a.len() as f64;
        let mu_a = a.iter().sum::<f64>() / n;
        let mu_b = b.iter().sum::<f64>() / n;
        let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (x - mu_a, y - mu_b);
            var_a += dx * dx;
            var_b += dy * dy;
            cov += dx * dy;
        }
        Self {
            mu_a,
            mu_b,
            var_a: var_a / n,
            var_b: var_b / n,
            cov: cov / n,
            c1,
            c2,
        }
    }

    /// `(2 μ_A μ_B + C1) / (μ_A² + μ_B² + C1)`.
    pub fn luminance(&self) -> f64 {
        (2.0 * self.mu_a * self.mu_b + self.c1) / (self.mu_a.powi(2) + self.mu_b.powi(2) + self.c1)
    }

    /// `(2 σ_AB + C2) / (σ_A² + σ_B² + C2)`.
    pub fn contrast_structure(&self) -> f64 {
        (2.0 * self.cov + self.c2) / (self.var_a + self.var_b + self.c2)
    }

    pub fn ssim(&self) -> Result<f64> {
        let den = (self.mu_a.powi(2) + self.mu_b.powi(2) + self.c1) * (self.var_a + self.var_b + self.c2);
        if den == 0.0 {
            return Err(Error::Degenerate("SSIM of constant zero windows with zero constants".into()));
        }
        let num = (2.0 * self.mu_a * self.mu_b + self.c1) * (2.0 * self.cov + self.c2);
        Ok(num / den)
    }

    /// `C2 / (σ_A² + σ_B² + C2)`, the SSIM a zero-covariance pair cannot
    /// exceed in magnitude when the luminance term is at most one.
    pub fn zero_covariance_bound(&self) -> f64 {
        self.c2 / (self.var_a + self.var_b + self.c2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_patch: Option<Vec<f64>>,
    pub normalization: String,
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    a.check_same_shape(b, "map comparison")?;
    if a.is_empty() {
        return Err(Error::invalid("cannot compare empty maps"));
    }
    Ok(())
}

fn report(metric: Metric, value: f64, normalization: &str) -> SimilarityReport {
    SimilarityReport {
        metric,
        value,
        per_patch: None,
        normalization: normalization.into(),
    }
}

/// Divides by the root mean square, so the mean of squares becomes one.
pub fn normalize_second_moment(map: &Tensor) -> Result<Tensor> {
    if map.is_empty() {
        return Err(Error::invalid("cannot normalize an empty map"));
    }
    let m2 = map.data().iter().map(|v| v * v).sum::<f64>() / map.len() as f64;
    if m2 == 0.0 {
        return Err(Error::Degenerate("all-zero map has no second moment".into()));
    }
    let s = m2.sqrt();
    Ok(map.map(|v| v / s))
}

/// Divides by the largest absolute value.
pub fn normalize_max_abs(map: &Tensor) -> Result<Tensor> {
    let m = map.max_abs();
    if m == 0.0 {
        return Err(Error::Degenerate("all-zero map has no maximum".into()));
    }
    Ok(map.map(|v| v / m))
}

/// Windowed SSIM averaged over all windows.
pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<SimilarityReport> {
    check_pair(a, b)?;
    let per = match params.window {
        Window::Whole => vec![PatchStats::from_slices(a.data(), b.data(), params.c1, params.c2).ssim()?],
        Window::Square { size, stride } => {
            let shape = a.shape();
            if shape.len() < 2 {
                return Err(Error::invalid("windowed SSIM needs at least two axes"));
            }
            let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            if size == 0 || stride == 0 || size > h || size > w {
                return Err(Error::invalid(format!(
                    "SSIM window {size} (stride {stride}) does not fit a {h}×{w} map"
                )));
            }
            let planes = a.len() / (h * w);
            let mut per = Vec::new();
            let (mut wa, mut wb) = (Vec::with_capacity(size * size), Vec::with_capacity(size * size));
            for p in 0..planes {
                let (pa, pb) = (&a.data()[p * h * w..][..h * w], &b.data()[p * h * w..][..h * w]);
                for y in (0..=h - size).step_by(stride) {
                    for x in (0..=w - size).step_by(stride) {
                        wa.clear();
                        wb.clear();
                        for dy in 0..size {
                            let row = (y + dy) * w + x;
                            wa.extend_from_slice(&pa[row..row + size]);
                            wb.extend_from_slice(&pb[row..row + size]);
                        }
                        per.push(PatchStats::from_slices(&wa, &wb, params.c1, params.c2).ssim()?);
                    }
                }
            }
            per
        }
    };
    let value = per.iter().sum::<f64>() / per.len() as f64;
    Ok(SimilarityReport {
        metric: Metric::Ssim,
        value,
        per_patch: (per.len() > 1).then_some(per),
        normalization: "none".into(),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation with population statistics.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("correlation needs two equally long vectors of length ≥ 2"));
    }
    let s = PatchStats::from_slices(a, b, 0.0, 0.0);
    if s.var_a == 0.0 || s.var_b == 0.0 {
        return Err(Error::Degenerate("correlation of a constant vector".into()));
    }
    Ok(s.cov / (s.var_a * s.var_b).sqrt())
}

/// Spearman rank correlation.
pub fn spearman(a: &Tensor, b: &Tensor) -> Result<SimilarityReport> {
    check_pair(a, b)?;
    let value = pearson(&average_ranks(a.data()), &average_ranks(b.data()))?;
    Ok(report(Metric::Spearman, value, "none"))
}

pub fn mse_raw(a: &Tensor, b: &Tensor) -> Result<SimilarityReport> {
    check_pair(a, b)?;
    let value = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(report(Metric::MseRaw, value, "none"))
}

/// Mean squared difference after second-moment normalization of both maps.
pub fn mse_normalized(a: &Tensor, b: &Tensor) -> Result<SimilarityReport> {
    check_pair(a, b)?;
    let (na, nb) = (normalize_second_moment(a)?, normalize_second_moment(b)?);
    let mut r = mse_raw(&na, &nb)?;
    r.metric = Metric::MseNormalized;
    r.normalization = "second-moment".into();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    SecondMoment,
    MaxAbs,
}

/// How a raw attribution map is turned into the map that gets compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub reduction: ChannelReduction,
    /// Compare absolute values instead of signed ones.
    #[serde(default)]
    pub absolute: bool,
    pub normalization: Normalization,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            reduction: ChannelReduction::Sum,
            absolute: false,
            normalization: Normalization::SecondMoment,
        }
    }
}

impl Preprocessing {
    /// Short identifier, e.g. `signed-sum-m2`.
    pub fn id(&self) -> String {
        let sign = if self.absolute { "abs" } else { "signed" };
        let norm = match self.normalization {
            Normalization::None => "raw",
            Normalization::SecondMoment => "m2",
            Normalization::MaxAbs => "maxabs",
        };
        format!("{sign}-{}-{norm}", self.reduction.as_str())
    }

    pub fn apply(&self, map: &AttributionMap) -> Result<Tensor> {
        let reduced = if map.values.shape().len() == 3 {
            reduce_channels(map, self.reduction)?.values
        } else {
            map.values.clone()
        };
        let signed = if self.absolute { reduced.map(f64::abs) } else { reduced };
        match self.normalization {
            Normalization::None => Ok(signed),
            Normalization::SecondMoment => normalize_second_moment(&signed),
            Normalization::MaxAbs => normalize_max_abs(&signed),
        }
    }
}

/// Scalar value of `metric` between two already preprocessed maps.
pub fn compare(metric: Metric, a: &Tensor, b: &Tensor, ssim_params: &SsimParams) -> Result<f64> {
    Ok(match metric {
        Metric::Ssim => ssim(a, b, ssim_params)?.value,
        Metric::Spearman => spearman(a, b)?.value,
        Metric::MseNormalized => mse_normalized(a, b)?.value,
        Metric::MseRaw => mse_raw(a, b)?.value,
    })
}
