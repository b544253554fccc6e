use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::simmetrics::{average_ranks, pearson, PatchStats};

/// Trials per Monte Carlo work item. Chunk `c` draws from `rng_for(seed,
/// [c])`, so estimates do not depend on the thread count.
const CHUNK: usize = 1 << 15;

/// `P(Z ≥ k)` for `Z` Cauchy with location 0 and scale `gamma`.
pub fn cauchy_tail(k: f64, gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::invalid(format!("Cauchy scale must be positive, got {gamma}")));
    }
    Ok(tail(k, gamma))
}

/// Tail with the `gamma → 0` limit allowed.
fn tail(k: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return if k > 0.0 { 0.0 } else if k == 0.0 { 0.5 } else { 1.0 };
    }
    0.5 - (k / gamma).atan() / std::f64::consts::PI
}

/// Two sets of non-negative activations: large ones and small ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSplit {
    pub large: Vec<f64>,
    pub small: Vec<f64>,
    /// Standard deviation of the zero-mean normal weights.
    #[serde(default = "unit")]
    pub sigma: f64,
}

fn unit() -> f64 {
    1.0
}

impl ActivationSplit {
    pub fn new(large: Vec<f64>, small: Vec<f64>, sigma: f64) -> Result<Self> {
        let s = Self { large, small, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.large.is_empty() || self.small.is_empty() {
            return Err(Error::invalid("both activation sets must be non-empty"));
        }
        if self.large.iter().chain(&self.small).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("activations must be finite and non-negative"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("weight standard deviation must be positive"));
        }
        if self.k() < 1.0 {
            return Err(Error::invalid(format!(
                "min of the large set must be at least max of the small set (K = {})",
                self.k()
            )));
        }
        if self.large.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("the large set must contain a positive activation"));
        }
        Ok(())
    }

    /// Separation factor `K = min(X_L) / max(X_S)`.
    pub fn k(&self) -> f64 {
        let min_l = self.large.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_s = self.small.iter().cloned().fold(0.0, f64::max);
        if max_s == 0.0 {
            f64::INFINITY
        } else {
            min_l / max_s
        }
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Scale of the Cauchy ratio of small to large weighted sums.
    pub fn exact_gamma(&self, averaged: bool) -> f64 {
        let g = Self::norm(&self.small) / Self::norm(&self.large);
        if averaged {
            g * self.large.len() as f64 / self.small.len() as f64
        } else {
            g
        }
    }

    /// Scale used by the bound: `sqrt(|X_S| / |X_L|)`, inverted for the
    /// averaged variant.
    pub fn bound_gamma(&self, averaged: bool) -> f64 {
        let r = self.small.len() as f64 / self.large.len() as f64;
        if averaged {
            r.recip().sqrt()
        } else {
            r.sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvertakingEstimate {
    /// `P(S ≥ L | L > 0)` from the draws.
    pub empirical: f64,
    pub std_error: f64,
    /// `P(0 < L ≤ S)`, half the conditional value in expectation.
    pub unconditional: f64,
    /// Cauchy tail at 1 with the exact scale.
    pub exact: f64,
    /// Cauchy tail at `K` with the set-size scale.
    pub bound: f64,
    pub trials: usize,
    pub conditioned: usize,
}

fn overtaking(split: &ActivationSplit, n_trials: usize, seed: u64, averaged: bool) -> Result<OvertakingEstimate> {
    split.validate()?;
    if n_trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let normal = Normal::new(0.0, split.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let (sl, ss) = if averaged {
        (1.0 / split.large.len() as f64, 1.0 / split.small.len() as f64)
    } else {
        (1.0, 1.0)
    };
    let chunks = n_trials.div_ceil(CHUNK);
    let counts: Vec<(usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, &[c as u64]);
            let n = CHUNK.min(n_trials - c * CHUNK);
            let (mut cond, mut ev) = (0, 0);
            for _ in 0..n {
                let l: f64 = split.large.iter().map(|x| normal.sample(&mut rng) * x).sum::<f64>() * sl;
                let s: f64 = split.small.iter().map(|x| normal.sample(&mut rng) * x).sum::<f64>() * ss;
                if l > 0.0 {
                    cond += 1;
                    if s >= l {
                        ev += 1;
                    }
                }
            }
            (cond, ev)
        })
        .collect();
    let (cond, ev) = counts.iter().fold((0, 0), |(a, b), (c, e)| (a + c, b + e));
    let p = if cond > 0 { ev as f64 / cond as f64 } else { 0.0 };
    Ok(OvertakingEstimate {
        empirical: p,
        std_error: (p * (1.0 - p) / cond.max(1) as f64).sqrt(),
        unconditional: ev as f64 / n_trials as f64,
        exact: tail(1.0, split.exact_gamma(averaged)),
        bound: tail(split.k(), split.bound_gamma(averaged)),
        trials: n_trials,
        conditioned: cond,
    })
}

/// Probability that small activations overtake large ones under i.i.d.
/// zero-mean normal weights, for weighted sums.
pub fn overtaking_probability_mc(split: &ActivationSplit, n_trials: usize, seed: u64) -> Result<OvertakingEstimate> {
    overtaking(split, n_trials, seed, false)
}

/// As [`overtaking_probability_mc`] for weighted means of each set.
pub fn overtaking_probability_avg(split: &ActivationSplit, n_trials: usize, seed: u64) -> Result<OvertakingEstimate> {
    overtaking(split, n_trials, seed, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapDistribution {
    Normal { mean: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
}

impl MapDistribution {
    pub fn standard_normal() -> Self {
        MapDistribution::Normal { mean: 0.0, sigma: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MapDistribution::Normal { mean, sigma } if mean.is_finite() && sigma > 0.0 && sigma.is_finite() => Ok(()),
            MapDistribution::Uniform { low, high } if low.is_finite() && high.is_finite() && low < high => Ok(()),
            _ => Err(Error::invalid(format!("invalid map distribution {self:?}"))),
        }
    }

    fn sample_vec(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        match *self {
            MapDistribution::Normal { mean, sigma } => (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut *rng);
                    mean + sigma * e
                })
                .collect(),
            MapDistribution::Uniform { low, high } => (0..n).map(|_| rng.random_range(low..high)).collect(),
        }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimNoiseEstimate {
    pub mean_abs_ssim: f64,
    pub std_error: f64,
    pub abs_mean_ssim: f64,
    /// `C2 / (σ_A² + σ_B² + C2)` with the mean empirical variances.
    pub bound: f64,
    pub mean_abs_contrast_structure: f64,
    pub mean_luminance: f64,
    /// Mean SSIM of each map with itself.
    pub control_ssim: f64,
    pub trials: usize,
}

/// Single-window SSIM between independent `side × side` maps.
pub fn thm1_mc(
    side: usize,
    dist: MapDistribution,
    n_trials: usize,
    c1: f64,
    c2: f64,
    seed: u64,
) -> Result<SsimNoiseEstimate> {
    dist.validate()?;
    if side == 0 || n_trials == 0 {
        return Err(Error::invalid("patch side and trial count must be positive"));
    }
    if !(c1 >= 0.0 && c2 > 0.0) {
        return Err(Error::invalid("need C1 ≥ 0 and C2 > 0"));
    }
    let n = side * side;
    let per: Vec<Result<[f64; 6]>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let a = dist.sample_vec(&mut rng, n);
            let b = dist.sample_vec(&mut rng, n);
            let s = PatchStats::from_slices(&a, &b, c1, c2);
            let own = PatchStats::from_slices(&a, &a, c1, c2).ssim()?;
            Ok([s.ssim()?, s.contrast_structure(), s.luminance(), s.var_a, s.var_b, own])
        })
        .collect();
    let mut cols: [Vec<f64>; 6] = Default::default();
    for r in per {
        for (c, v) in cols.iter_mut().zip(r?) {
            c.push(v);
        }
    }
    let abs: Vec<f64> = cols[0].iter().map(|v| v.abs()).collect();
    let (mean_abs, se) = mean_se(&abs);
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SsimNoiseEstimate {
        mean_abs_ssim: mean_abs,
        std_error: se,
        abs_mean_ssim: avg(&cols[0]).abs(),
        bound: c2 / (avg(&cols[3]) + avg(&cols[4]) + c2),
        mean_abs_contrast_structure: cols[1].iter().map(|v| v.abs()).sum::<f64>() / n_trials as f64,
        mean_luminance: avg(&cols[2]),
        control_ssim: avg(&cols[5]),
        trials: n_trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankNoiseEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Mean for `B = A + 0.5·noise`.
    pub control_mean: f64,
    pub control_std_error: f64,
    /// Spearman of a map with itself.
    pub identical: f64,
    pub trials: usize,
}

/// Spearman correlation between independent standard-normal maps of `n`
/// elements, plus a positively correlated control.
pub fn thm3_mc(n: usize, n_trials: usize, seed: u64) -> Result<RankNoiseEstimate> {
    if n < 2 || n_trials == 0 {
        return Err(Error::invalid("need n ≥ 2 and at least one trial"));
    }
    let dist = MapDistribution::standard_normal();
    let per: Vec<Result<[f64; 3]>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let a = dist.sample_vec(&mut rng, n);
            let b = dist.sample_vec(&mut rng, n);
            let noise = dist.sample_vec(&mut rng, n);
            let c: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + 0.5 * e).collect();
            let ra = average_ranks(&a);
            Ok([
                pearson(&ra, &average_ranks(&b))?,
                pearson(&ra, &average_ranks(&c))?,
                pearson(&ra, &ra)?,
            ])
        })
        .collect();
    let mut cols: [Vec<f64>; 3] = Default::default();
    for r in per {
        for (c, v) in cols.iter_mut().zip(r?) {
            c.push(v);
        }
    }
    let (mean, se) = mean_se(&cols[0]);
    let (cm, cse) = mean_se(&cols[1]);
    Ok(RankNoiseEstimate {
        mean,
        std_error: se,
        control_mean: cm,
        control_std_error: cse,
        identical: cols[2].iter().sum::<f64>() / n_trials as f64,
        trials: n_trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseNoiseEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `2 − 2 μ_Â μ_B̂` averaged over trials, the zero-covariance value.
    pub zero_covariance_value: f64,
    /// Mean normalized MSE between a map and its negation.
    pub negated: f64,
    /// Mean normalized MSE between a map and itself.
    pub identical: f64,
    pub trials: usize,
}

fn second_moment_normalized(v: &[f64]) -> Vec<f64> {
    let s = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    v.iter().map(|x| x / s).collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Normalized MSE between independent standard-normal maps of `n` elements.
pub fn mse_mc(n: usize, n_trials: usize, seed: u64) -> Result<MseNoiseEstimate> {
    if n == 0 || n_trials == 0 {
        return Err(Error::invalid("need n ≥ 1 and at least one trial"));
    }
    let dist = MapDistribution::standard_normal();
    let per: Vec<[f64; 4]> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let a = second_moment_normalized(&dist.sample_vec(&mut rng, n));
            let b = second_moment_normalized(&dist.sample_vec(&mut rng, n));
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            let mu = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            [mse(&a, &b), 2.0 - 2.0 * mu(&a) * mu(&b), mse(&a, &neg), mse(&a, &a)]
        })
        .collect();
    let col = |i: usize| per.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let (mean, se) = mean_se(&col(0));
    let avg = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MseNoiseEstimate {
        mean,
        std_error: se,
        zero_covariance_value: avg(col(1)),
        negated: avg(col(2)),
        identical: avg(col(3)),
        trials: n_trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSpread {
    /// Sample variance of `max |x|` across resamples.
    pub max_abs_variance: f64,
    /// Sample variance of `sqrt(mean x²)` across resamples.
    pub second_moment_variance: f64,
    pub resamples: usize,
}

/// Compares the resampling variance of the two normalizing statistics on
/// standard-normal maps of `n` elements.
pub fn normalizer_spread(n: usize, resamples: usize, seed: u64) -> Result<NormalizerSpread> {
    if n == 0 || resamples < 2 {
        return Err(Error::invalid("need n ≥ 1 and at least two resamples"));
    }
    let dist = MapDistribution::standard_normal();
    let per: Vec<(f64, f64)> = (0..resamples)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let v = dist.sample_vec(&mut rng, n);
            let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let rms = (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            (max_abs, rms)
        })
        .collect();
    let var = |v: Vec<f64>| {
        let (m, se) = mean_se(&v);
        let _ = m;
        se * se * v.len() as f64
    };
    Ok(NormalizerSpread {
        max_abs_variance: var(per.iter().map(|p| p.0).collect()),
        second_moment_variance: var(per.iter().map(|p| p.1).collect()),
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_values() {
        assert_eq!(cauchy_tail(0.0, 1.0).unwrap(), 0.5);
        assert!((cauchy_tail(1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((cauchy_tail(3f64.sqrt(), 1.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(cauchy_tail(1.0, 0.0).is_err());
        assert!(cauchy_tail(1.0, -1.0).is_err());
    }

    #[test]
    fn split_validation_and_gammas() {
        assert!(ActivationSplit::new(vec![1.0], vec![2.0], 1.0).is_err());
        assert!(ActivationSplit::new(vec![], vec![1.0], 1.0).is_err());
        assert!(ActivationSplit::new(vec![2.0], vec![-1.0], 1.0).is_err());
        let s = ActivationSplit::new(vec![4.0], vec![1.0; 4], 1.0).unwrap();
        assert_eq!(s.k(), 4.0);
        assert_eq!(s.exact_gamma(false), 0.5);
        assert_eq!(s.bound_gamma(false), 2.0);
        assert_eq!(s.bound_gamma(true), 0.5);
        assert_eq!(s.exact_gamma(true), 0.125);
    }

    #[test]
    fn overtaking_is_thread_count_independent() {
        let s = ActivationSplit::new(vec![2.0], vec![1.0; 4], 1.0).unwrap();
        let a = overtaking_probability_mc(&s, 40_000, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| overtaking_probability_mc(&s, 40_000, 3).unwrap());
        assert_eq!(a, b);
    }
}
