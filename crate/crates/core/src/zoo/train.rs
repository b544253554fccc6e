//! Plain minibatch SGD on softmax cross-entropy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::engine::{backward_from, forward, ReluRule};
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, ParamKind};
use crate::ops::softmax;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_batch() -> usize {
    16
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            batch_size: default_batch(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss, correctness and flattened parameter gradient for one sample.
fn sample_grad(model: &ModelGraph, data: &Dataset, i: usize) -> Result<(f64, bool, Vec<f64>)> {
    let x = data.image(i)?;
    let label = data.labels()[i];
    let acts = forward(model, &x)?;
    let z = acts.logits().data();
    let p = softmax(z);
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let loss = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[label];
    let correct = acts.logits().argmax() == label;
    let mut seed: Vec<f64> = p;
    seed[label] -= 1.0;
    let (_, pg) = backward_from(model, &acts, model.output_id(), seed, ReluRule::Standard, true);
    let pg = pg.expect("parameter gradients requested");
    let mut flat = Vec::with_capacity(model.param_count());
    for slot in model.param_slots() {
        let g = match slot.kind {
            ParamKind::Weight => pg.weight[slot.node].as_ref(),
            ParamKind::Bias => pg.bias[slot.node].as_ref(),
        };
        match g {
            Some(g) => flat.extend_from_slice(g),
            None => {
                let n = model.param(slot).map_or(0, |t| t.len());
                flat.extend(std::iter::repeat_n(0.0, n));
            }
        }
    }
    Ok((loss, correct, flat))
}

/// Trains a copy of `model`. Per-sample gradients may be computed in
/// parallel but are summed in a fixed order, so the result depends only on
/// the inputs and `config.seed`.
pub fn train(model: &ModelGraph, data: &Dataset, config: &TrainConfig) -> Result<(ModelGraph, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !config.lr.is_finite() || config.lr < 0.0 {
        return Err(Error::invalid(format!("learning rate {} is not valid", config.lr)));
    }
    let mut params = model.flat_params();
    let mut current = model.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(config.seed, &[epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, bool, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| sample_grad(&current, data, i))
                .collect();
            let mut grad = vec![0.0; params.len()];
            for r in results {
                let (loss, ok, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
                }
                loss_sum += loss;
                correct += usize::from(ok);
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let step = config.lr / batch.len() as f64;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Training(format!("parameters diverged in epoch {epoch}")));
            }
            current = current.with_flat_params(&params)?;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((current, log))
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    let hits: Vec<Result<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(forward(model, &data.image(i)?)?.logits().argmax() == data.labels()[i]))
        .collect();
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build, synth_dataset, ArchitectureId, SynthSpec};

    fn setup() -> (ModelGraph, Dataset) {
        let data = synth_dataset(&SynthSpec::blobs(8, 2), 64, 3).unwrap();
        let arch = ArchitectureId::MlpSmall {
            input: vec![1, 8, 8],
            hidden: vec![16],
            classes: 2,
        };
        (build(&arch, 7).unwrap(), data)
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let (m, data) = setup();
        let (trained, log) = train(&m, &data, &TrainConfig::new(50, 0.1, 1)).unwrap();
        let acc = accuracy(&trained, &data).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}, log {:?}", log.last());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (m, data) = setup();
        let (trained, _) = train(&m, &data, &TrainConfig::new(2, 0.0, 1)).unwrap();
        assert_eq!(trained.flat_params(), m.flat_params());
    }

    #[test]
    fn same_seed_same_result() {
        let (m, data) = setup();
        let cfg = TrainConfig::new(3, 0.05, 4);
        let (a, la) = train(&m, &data, &cfg).unwrap();
        let (b, lb) = train(&m, &data, &cfg).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(la, lb);
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let (m, data) = setup();
        let err = train(&m, &data, &TrainConfig::new(20, 1e300, 1)).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err}");
    }
}
