//! Monte Carlo and analytic checks of the noise-similarity, overtaking,
//! monotonicity and dominance results.

mod mc;
mod neuron;
mod quantiles;

use serde::{Deserialize, Serialize};

pub use mc::{
    cauchy_tail, mse_mc, normalizer_spread, overtaking_probability_avg, overtaking_probability_mc, thm1_mc, thm3_mc,
    ActivationSplit, MapDistribution, MseNoiseEstimate, NormalizerSpread, OvertakingEstimate, RankNoiseEstimate,
    SsimNoiseEstimate,
};
pub use neuron::{
    monotonicity_test, positive_dominance_check, shapley_exact, shapley_values, Activation, DominanceReport,
    DominanceRule, MonotonicityMethod, MonotonicityReport, MAX_SHAPLEY_FEATURES,
};
pub use quantiles::{
    activation_stats, low_levels, quantile_levels, quantile_overtaking, quantile_overtaking_grid, quantile_sorted,
    LayerQuantiles, OvertakingCell, QuantileTable, HIGH_LEVELS, VANISHED,
};

use crate::csvout::fmt_f64;
use crate::error::Result;

pub const THEORY_HEADER: [&str; 7] = ["experiment", "param_json", "seed", "trials", "value", "analytic", "bound"];
pub const QUANTILE_HEADER: [&str; 5] = ["layer", "node", "quantile", "value", "nonpositive_fraction"];
pub const OVERTAKING_HEADER: [&str; 7] = ["layer", "node", "q_high", "q_low", "k", "gamma", "probability"];

/// One line of a theory CSV. Absent numbers are written as empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub experiment: String,
    pub param_json: String,
    pub seed: u64,
    pub trials: usize,
    pub value: f64,
    pub analytic: Option<f64>,
    pub bound: Option<f64>,
}

impl TheoryRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        vec![
            self.experiment.clone(),
            self.param_json.clone(),
            self.seed.to_string(),
            self.trials.to_string(),
            fmt_f64(self.value),
            opt(self.analytic),
            opt(self.bound),
        ]
    }
}

fn unit() -> f64 {
    1.0
}

fn small_constant() -> f64 {
    0.01
}

/// A self-contained theory experiment, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case", deny_unknown_fields)]
pub enum TheoryExperiment {
    CauchyTail {
        k: f64,
        gamma: f64,
    },
    Overtaking {
        large: Vec<f64>,
        small: Vec<f64>,
        #[serde(default = "unit")]
        sigma: f64,
        trials: usize,
        #[serde(default)]
        averaged: bool,
    },
    SsimNoise {
        side: usize,
        trials: usize,
        #[serde(default = "small_constant")]
        c1: f64,
        #[serde(default = "small_constant")]
        c2: f64,
        #[serde(default = "MapDistribution::standard_normal")]
        distribution: MapDistribution,
    },
    RankNoise {
        n: usize,
        trials: usize,
    },
    MseNoise {
        n: usize,
        trials: usize,
    },
    NormalizerSpread {
        n: usize,
        resamples: usize,
    },
    Monotonicity {
        method: MonotonicityMethod,
        instances: usize,
    },
}

impl TheoryExperiment {
    pub fn name(&self) -> &'static str {
        match self {
            TheoryExperiment::CauchyTail { .. } => "cauchy_tail",
            TheoryExperiment::Overtaking { averaged: false, .. } => "overtaking",
            TheoryExperiment::Overtaking { averaged: true, .. } => "overtaking_avg",
            TheoryExperiment::SsimNoise { .. } => "ssim_noise",
            TheoryExperiment::RankNoise { .. } => "rank_noise",
            TheoryExperiment::MseNoise { .. } => "mse_noise",
            TheoryExperiment::NormalizerSpread { .. } => "normalizer_spread",
            TheoryExperiment::Monotonicity { .. } => "monotonicity",
        }
    }

    /// Runs the experiment and returns its CSV rows.
    pub fn run(&self, seed: u64) -> Result<Vec<TheoryRow>> {
        let params = serde_json::to_string(self)?;
        let row = |suffix: &str, trials: usize, value: f64, analytic: Option<f64>, bound: Option<f64>| TheoryRow {
            experiment: if suffix.is_empty() {
                self.name().to_string()
            } else {
                format!("{}.{suffix}", self.name())
            },
            param_json: params.clone(),
            seed,
            trials,
            value,
            analytic,
            bound,
        };
        Ok(match self {
            TheoryExperiment::CauchyTail { k, gamma } => {
                let p = cauchy_tail(*k, *gamma)?;
                vec![row("", 0, p, Some(p), None)]
            }
            TheoryExperiment::Overtaking { large, small, sigma, trials, averaged } => {
                let split = ActivationSplit::new(large.clone(), small.clone(), *sigma)?;
                let e = if *averaged {
                    overtaking_probability_avg(&split, *trials, seed)?
                } else {
                    overtaking_probability_mc(&split, *trials, seed)?
                };
                vec![
                    row("", *trials, e.empirical, Some(e.exact), Some(e.bound)),
                    row("std_error", *trials, e.std_error, None, None),
                    row("unconditional", *trials, e.unconditional, Some(e.exact / 2.0), Some(e.bound / 2.0)),
                ]
            }
            TheoryExperiment::SsimNoise { side, trials, c1, c2, distribution } => {
                let e = thm1_mc(*side, *distribution, *trials, *c1, *c2, seed)?;
                vec![
                    row("", *trials, e.mean_abs_ssim, None, Some(e.bound)),
                    row("std_error", *trials, e.std_error, None, None),
                    row("abs_mean", *trials, e.abs_mean_ssim, Some(0.0), None),
                    row("contrast_structure", *trials, e.mean_abs_contrast_structure, None, None),
                    row("luminance", *trials, e.mean_luminance, None, None),
                    row("control", *trials, e.control_ssim, Some(1.0), None),
                ]
            }
            TheoryExperiment::RankNoise { n, trials } => {
                let e = thm3_mc(*n, *trials, seed)?;
                vec![
                    row("", *trials, e.mean, Some(0.0), None),
                    row("std_error", *trials, e.std_error, None, None),
                    row("control", *trials, e.control_mean, None, None),
                    row("identical", *trials, e.identical, Some(1.0), None),
                ]
            }
            TheoryExperiment::MseNoise { n, trials } => {
                let e = mse_mc(*n, *trials, seed)?;
                vec![
                    row("", *trials, e.mean, Some(e.zero_covariance_value), None),
                    row("std_error", *trials, e.std_error, None, None),
                    row("negated", *trials, e.negated, Some(4.0), None),
                    row("identical", *trials, e.identical, Some(0.0), None),
                ]
            }
            TheoryExperiment::NormalizerSpread { n, resamples } => {
                let e = normalizer_spread(*n, *resamples, seed)?;
                vec![
                    row("max_abs", *resamples, e.max_abs_variance, None, None),
                    row("second_moment", *resamples, e.second_moment_variance, None, None),
                ]
            }
            TheoryExperiment::Monotonicity { method, instances } => {
                let r = monotonicity_test(*method, *instances, seed)?;
                vec![
                    row(&method.name(), *instances, r.violations as f64, Some(0.0), None),
                    row(&format!("{}.pairs", method.name()), *instances, r.pairs as f64, None, None),
                ]
            }
        })
    }
}

pub fn quantile_rows(table: &QuantileTable) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for l in &table.layers {
        for (q, v) in table.levels.iter().zip(&l.values) {
            rows.push(vec![
                l.name.clone(),
                l.node.to_string(),
                fmt_f64(*q),
                fmt_f64(*v),
                fmt_f64(l.nonpositive_fraction),
            ]);
        }
    }
    rows
}

pub fn overtaking_rows(cells: &[OvertakingCell]) -> Vec<Vec<String>> {
    cells
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.node.to_string(),
                fmt_f64(c.q_high),
                fmt_f64(c.q_low),
                fmt_f64(c.k),
                fmt_f64(c.gamma),
                fmt_f64(c.probability),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_json() {
        let e: TheoryExperiment =
            serde_json::from_str(r#"{"experiment":"rank_noise","n":16,"trials":3}"#).unwrap();
        assert_eq!(e, TheoryExperiment::RankNoise { n: 16, trials: 3 });
        assert!(serde_json::from_str::<TheoryExperiment>(r#"{"experiment":"rank_noise","n":1,"trials":1,"z":0}"#)
            .is_err());
        let m: TheoryExperiment = serde_json::from_str(
            r#"{"experiment":"monotonicity","method":{"method":"lrp_beta","beta":1.0},"instances":2}"#,
        )
        .unwrap();
        assert_eq!(m.run(0).unwrap()[0].experiment, "monotonicity.lrp_beta");
    }

    #[test]
    fn rows_render() {
        let rows = TheoryExperiment::CauchyTail { k: 1.0, gamma: 1.0 }.run(5).unwrap();
        assert_eq!(
            rows[0].fields(),
            vec!["cauchy_tail", r#"{"experiment":"cauchy_tail","k":1.0,"gamma":1.0}"#, "5", "0", "0.25", "0.25", ""]
        );
    }
}
