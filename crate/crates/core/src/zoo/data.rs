use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    IdxFile,
}

/// Images `N×C×H×W` in `[0, 1]` with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, provenance: Provenance) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::invalid(format!(
                "dataset images must be N×C×H×W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {l} >= class count {classes}")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of a single image, `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.images.index_axis0(i)
    }

    /// The first `n` samples (or all of them, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per: usize = self.image_shape().iter().product();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Self {
            images: Tensor::from_parts(shape, self.images.data()[..n * per].to_vec()),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            provenance: self.provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// A bright Gaussian blob at a class-specific position over noise.
    Blobs,
    /// A class-specific oriented bar on a textured background.
    BarShapes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub size: usize,
    pub classes: usize,
}

impl SynthSpec {
    pub fn blobs(size: usize, classes: usize) -> Self {
        Self {
            kind: SynthKind::Blobs,
            size,
            classes,
        }
    }

    pub fn bars(size: usize, classes: usize) -> Self {
        Self {
            kind: SynthKind::BarShapes,
            size,
            classes,
        }
    }
}

/// Bar orientations indexed by class: horizontal, vertical, diagonal,
/// anti-diagonal.
const BAR_DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Generates `n` single-channel images; labels cycle through the classes so
/// the class counts differ by at most one.
pub fn synth_dataset(spec: &SynthSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let max_classes = match spec.kind {
        SynthKind::Blobs => 8,
        SynthKind::BarShapes => BAR_DIRECTIONS.len(),
    };
    if spec.classes < 2 || spec.classes > max_classes {
        return Err(Error::invalid(format!(
            "{:?} supports 2..={max_classes} classes, got {}",
            spec.kind, spec.classes
        )));
    }
    if spec.size < 8 {
        return Err(Error::invalid("synthetic images must be at least 8 pixels wide"));
    }
    let s = spec.size;
    let mut data = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        let mut rng = rng_for(seed, &[i as u64]);
        let img = match spec.kind {
            SynthKind::Blobs => blob_image(s, label, spec.classes, &mut rng),
            SynthKind::BarShapes => bar_image(s, label, &mut rng),
        };
        data.extend(img.into_iter().map(|v| v.clamp(0.0, 1.0)));
        labels.push(label);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, s, s], data)?,
        labels,
        spec.classes,
        Provenance::Synthetic,
    )
}

fn blob_image(s: usize, label: usize, classes: usize, rng: &mut impl Rng) -> Vec<f64> {
    let angle = std::f64::consts::TAU * label as f64 / classes as f64;
    let r = s as f64 / 4.0;
    let c = (s as f64 - 1.0) / 2.0;
    let cy = c + r * angle.sin() + rng.random_range(-0.5..0.5);
    let cx = c + r * angle.cos() + rng.random_range(-0.5..0.5);
    let width = s as f64 / 8.0;
    let mut img = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let blob = 0.8 * (-d2 / (2.0 * width * width)).exp();
            img.push(0.1 + blob + 0.1 * rng.random::<f64>());
        }
    }
    img
}

fn bar_image(s: usize, label: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Texture: coarse 4×4 cells of random gray plus fine pixel noise.
    let cells = s.div_ceil(4);
    let coarse: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(0.1..0.35)).collect();
    let mut img: Vec<f64> = (0..s * s)
        .map(|i| {
            let (y, x) = (i / s, i % s);
            coarse[(y / 4) * cells + x / 4] + rng.random_range(-0.05..0.05)
        })
        .collect();
    let (dy, dx) = BAR_DIRECTIONS[label];
    let len = (s / 2) as isize;
    let margin = 2isize;
    // Pick a start point so the whole bar (with its thickness) fits.
    let lo_y = margin;
    let hi_y = s as isize - margin - 1 - dy * (len - 1);
    let (lo_x, hi_x) = if dx >= 0 {
        (margin, s as isize - margin - 1 - dx * (len - 1))
    } else {
        (margin + len - 1, s as isize - margin - 1)
    };
    let y0 = rng.random_range(lo_y as i64..=hi_y as i64) as isize;
    let x0 = rng.random_range(lo_x as i64..=hi_x as i64) as isize;
    let intensity = rng.random_range(0.85..1.0);
    for t in 0..len {
        let (y, x) = (y0 + dy * t, x0 + dx * t);
        // Thickness of 3 pixels across the bar.
        for off in -1..=1isize {
            let (py, px) = if dy == 0 {
                (y + off, x)
            } else {
                (y, x + off)
            };
            if (0..s as isize).contains(&py) && (0..s as isize).contains(&px) {
                img[py as usize * s + px as usize] = intensity;
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_samples_is_an_error() {
        assert!(synth_dataset(&SynthSpec::bars(16, 2), 0, 0).is_err());
    }

    #[test]
    fn deterministic_bounded_and_balanced() {
        let spec = SynthSpec::bars(24, 3);
        let a = synth_dataset(&spec, 31, 9).unwrap();
        let b = synth_dataset(&spec, 31, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut counts = [0usize; 3];
        for &l in a.labels() {
            counts[l] += 1;
        }
        let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(mx - mn <= 1);
    }

    #[test]
    fn bar_pixels_are_brighter_than_background() {
        let spec = SynthSpec::bars(24, 4);
        let ds = synth_dataset(&spec, 40, 1).unwrap();
        let (mut bar, mut nb, mut bg, mut ng) = (0.0, 0, 0.0, 0);
        for v in ds.images().data() {
            // Background never exceeds 0.4; bars start at 0.85.
            if *v >= 0.85 {
                bar += v;
                nb += 1;
            } else {
                bg += v;
                ng += 1;
            }
        }
        assert!(nb > 0 && ng > 0);
        assert!(bar / nb as f64 > bg / ng as f64 + 0.4);
    }

    #[test]
    fn blob_classes_have_distinct_means() {
        let ds = synth_dataset(&SynthSpec::blobs(8, 2), 20, 4).unwrap();
        let per = 64;
        let mut means = [vec![0.0; per], vec![0.0; per]];
        for i in 0..ds.len() {
            let img = ds.image(i).unwrap();
            for (m, v) in means[ds.labels()[i]].iter_mut().zip(img.data()) {
                *m += v / 10.0;
            }
        }
        let diff: f64 = means[0].iter().zip(&means[1]).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 5.0);
    }
}
