use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LearnError, Shape};
use crate::rng;

/// Labelled 8-bit images, channels-last. Pixels scale to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub shape: Shape,
    pub n_classes: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(shape: Shape, n_classes: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Dataset, LearnError> {
        if pixels.len() != labels.len() * shape.len() {
            return Err(LearnError::Dataset(format!(
                "{} pixels for {} images of {} values",
                pixels.len(),
                labels.len(),
                shape.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(LearnError::Dataset(format!("label {l} with {n_classes} classes")));
        }
        Ok(Dataset {
            shape,
            n_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Scaled pixels of the given samples, one row each.
    pub fn batch(&self, idx: &[usize]) -> Vec<f64> {
        let mut v = Vec::with_capacity(idx.len() * self.shape.len());
        for &i in idx {
            v.extend(self.image(i).iter().map(|&p| p as f64 / 255.0));
        }
        v
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            shape: self.shape,
            n_classes: self.n_classes,
            pixels: self.pixels[..n * self.shape.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Noisy prototype images, one prototype per class: class `c` lights
    /// pixels whose index is congruent to `c` modulo `n_classes`.
    pub fn synthetic(shape: Shape, n_classes: usize, n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, &[0xDA7A]);
        let mut pixels = Vec::with_capacity(n * shape.len());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = r.gen_range(0..n_classes);
            labels.push(c as u8);
            for p in 0..shape.len() {
                let base: u8 = if p % n_classes == c { 170 } else { 20 };
                pixels.push(base.saturating_add(r.gen_range(0..60)));
            }
        }
        Dataset {
            shape,
            n_classes,
            pixels,
            labels,
        }
    }
}
