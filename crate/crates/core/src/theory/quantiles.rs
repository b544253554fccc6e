use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::cauchy_tail;
use crate::engine::forward;
use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph, NodeId};
use crate::zoo::Dataset;

/// Bottom quantile values at or below this count as vanished.
pub const VANISHED: f64 = 1e-9;

/// The 18 levels `0.10, 0.15, …, 0.95`.
pub fn quantile_levels() -> Vec<f64> {
    (0..18).map(|k| (10 + 5 * k) as f64 / 100.0).collect()
}

/// Upper levels of the overtaking grid.
pub const HIGH_LEVELS: [f64; 3] = [0.95, 0.9, 0.85];

/// Lower levels of the overtaking grid.
pub fn low_levels() -> Vec<f64> {
    (0..9).map(|k| (10 + 5 * k) as f64 / 100.0).collect()
}

/// Linear interpolation between order statistics at `h = (n − 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerQuantiles {
    pub node: NodeId,
    pub name: String,
    /// Mean over images of `V(q)`, one per level.
    pub values: Vec<f64>,
    /// Mean over images of the fraction of activations `≤ 0`.
    pub nonpositive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    pub layers: Vec<LayerQuantiles>,
    pub n_images: usize,
}

fn sample_stats(values: &[f64], levels: &[f64]) -> Result<(Vec<f64>, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: values.iter().position(|v| !v.is_finite()).unwrap_or(0) });
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let qs = levels.iter().map(|&q| quantile_sorted(&s, q)).collect::<Result<Vec<_>>>()?;
    let nonpos = s.iter().filter(|&&v| v <= 0.0).count() as f64 / s.len() as f64;
    Ok((qs, nonpos))
}

impl QuantileTable {
    /// Builds a table from pooled per-image samples: `per_image[i][l]` holds
    /// every activation of layer `l` in image `i`.
    pub fn from_samples(layers: &[(NodeId, String)], per_image: &[Vec<Vec<f64>>]) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::invalid("quantile table needs at least one image"));
        }
        let levels = quantile_levels();
        let stats: Vec<Vec<(Vec<f64>, f64)>> = per_image
            .par_iter()
            .map(|img| {
                if img.len() != layers.len() {
                    return Err(Error::invalid("sample layer count differs from layer list"));
                }
                img.iter().map(|v| sample_stats(v, &levels)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_image.len() as f64;
        let layers = layers
            .iter()
            .enumerate()
            .map(|(l, (node, name))| {
                let mut values = vec![0.0; levels.len()];
                let mut frac = 0.0;
                for img in &stats {
                    values.iter_mut().zip(&img[l].0).for_each(|(a, v)| *a += v);
                    frac += img[l].1;
                }
                LayerQuantiles {
                    node: *node,
                    name: name.clone(),
                    values: values.into_iter().map(|v| v / n).collect(),
                    nonpositive_fraction: frac / n,
                }
            })
            .collect();
        Ok(Self { levels, layers, n_images: per_image.len() })
    }

    fn level_index(&self, q: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| (l - q).abs() < 1e-9)
            .ok_or_else(|| Error::invalid(format!("{q} is not a tabulated quantile level")))
    }

    pub fn value(&self, layer: usize, q: f64) -> Result<f64> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("no layer {layer} in the table")))?;
        Ok(l.values[self.level_index(q)?])
    }
}

/// Quantiles of post-activation values at every ReLU node over the first
/// `n_images` images (all when `None`).
pub fn activation_stats(model: &ModelGraph, data: &Dataset, n_images: Option<usize>) -> Result<QuantileTable> {
    let n = n_images.unwrap_or(data.len()).min(data.len());
    if n == 0 {
        return Err(Error::invalid("activation statistics need a non-empty dataset"));
    }
    let layers: Vec<(NodeId, String)> = model
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, nd)| matches!(nd.kind(), LayerKind::ReLU))
        .map(|(i, nd)| (i, nd.name().to_string()))
        .collect();
    if layers.is_empty() {
        return Err(Error::invalid("model has no ReLU layers"));
    }
    let per_image = (0..n)
        .into_par_iter()
        .map(|i| {
            let acts = forward(model, &data.image(i)?)?;
            Ok(layers.iter().map(|(id, _)| acts.get(*id).data().to_vec()).collect())
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;
    QuantileTable::from_samples(&layers, &per_image)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertakingCell {
    pub node: NodeId,
    pub name: String,
    pub q_high: f64,
    pub q_low: f64,
    /// `V(q_h) / V(q_l)`, infinite when the bottom quantile vanished.
    pub k: f64,
    pub gamma: f64,
    pub probability: f64,
}

/// Per-layer overtaking probability with `K = V(q_h)/V(q_l)` and
/// `γ = sqrt(q_l / (1 − q_h))`.
pub fn quantile_overtaking(table: &QuantileTable, q_high: f64, q_low: f64) -> Result<Vec<OvertakingCell>> {
    if q_high <= q_low {
        return Err(Error::invalid(format!("need q_h > q_l, got {q_high} ≤ {q_low}")));
    }
    if q_high >= 1.0 || q_low <= 0.0 {
        return Err(Error::invalid("quantile levels must lie strictly inside (0, 1)"));
    }
    let (ih, il) = (table.level_index(q_high)?, table.level_index(q_low)?);
    let gamma = (q_low / (1.0 - q_high)).sqrt();
    table
        .layers
        .iter()
        .map(|l| {
            let (vh, vl) = (l.values[ih], l.values[il]);
            let (k, probability) = if vl <= VANISHED {
                (f64::INFINITY, 0.0)
            } else {
                let k = vh / vl;
                (k, cauchy_tail(k, gamma)?)
            };
            Ok(OvertakingCell {
                node: l.node,
                name: l.name.clone(),
                q_high,
                q_low,
                k,
                gamma,
                probability,
            })
        })
        .collect()
}

/// Every cell of the `q_h × q_l` grid.
pub fn quantile_overtaking_grid(table: &QuantileTable) -> Result<Vec<OvertakingCell>> {
    let mut out = Vec::new();
    for qh in HIGH_LEVELS {
        for ql in low_levels() {
            out.extend(quantile_overtaking(table, qh, ql)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5).unwrap(), 3.0);
        assert_eq!(quantile_sorted(&s, 0.1).unwrap(), 1.4);
        assert_eq!(quantile_sorted(&s, 1.0).unwrap(), 5.0);
        assert!(quantile_sorted(&[], 0.5).is_err());
    }

    #[test]
    fn levels_and_grid() {
        let l = quantile_levels();
        assert_eq!(l.len(), 18);
        assert_eq!(l[0], 0.1);
        assert_eq!(l[17], 0.95);
        assert_eq!(low_levels().last(), Some(&0.5));
    }

    #[test]
    fn constant_and_vanished_layers() {
        let layers = vec![(1, "c".to_string()), (2, "z".to_string())];
        let img = vec![vec![2.0; 10], vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0]];
        let t = QuantileTable::from_samples(&layers, &[img.clone(), img]).unwrap();
        assert!(t.layers[0].values.iter().all(|&v| v == 2.0));
        assert_eq!(t.layers[0].nonpositive_fraction, 0.0);
        assert_eq!(t.layers[1].nonpositive_fraction, 0.6);
        let cells = quantile_overtaking(&t, 0.9, 0.2).unwrap();
        assert_eq!(cells[0].k, 1.0);
        let expect = cauchy_tail(1.0, (0.2f64 / 0.1).sqrt()).unwrap();
        assert!((cells[0].probability - expect).abs() < 1e-15);
        assert_eq!(cells[1].probability, 0.0);
        assert!(quantile_overtaking(&t, 0.2, 0.2).is_err());
        assert!(quantile_overtaking(&t, 0.93, 0.2).is_err());
        assert_eq!(quantile_overtaking_grid(&t).unwrap().len(), 3 * 9 * 2);
    }
}
