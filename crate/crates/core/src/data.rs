//! Synthetic classification task and the prototype-based zero-shot head.

use crate::embedding::{dot, Embedding};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::head::ZeroShotHead;
use crate::image::ImageTensor;
use crate::rng::{tags, PrngStream};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Head rows at or above this pairwise cosine are rejected as duplicates.
pub const DUPLICATE_COSINE: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub k: usize,
    pub per_class: usize,
    pub shape: (usize, usize, usize),
    pub noise_sigma: f64,
    /// Largest spatial frequency of the prototype cosines, in cycles per image.
    pub max_frequency: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            k: 8,
            per_class: 64,
            shape: (3, 32, 32),
            noise_sigma: 0.06,
            max_frequency: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub prototypes: Vec<ImageTensor>,
    pub samples: Vec<ImageTensor>,
    /// `labels[i]` is the class of `samples[i]`.
    pub labels: Vec<usize>,
}

impl SyntheticTask {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(sample_id, label)` pairs in sample order.
    pub fn label_pairs(&self) -> Vec<(u64, usize)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as u64, l))
            .collect()
    }
}

/// Sum of four random 2-D cosines per channel, min-max scaled into `[0.2, 0.8]`.
pub fn prototype(
    shape: (usize, usize, usize),
    max_frequency: f64,
    rng: &mut PrngStream,
) -> ImageTensor {
    let (c, h, w) = shape;
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for _ in 0..4 {
            let fx = rng.uniform(-max_frequency, max_frequency);
            let fy = rng.uniform(-max_frequency, max_frequency);
            let phase = rng.uniform(0.0, TAU);
            let amp = rng.next_f64();
            for y in 0..h {
                for x in 0..w {
                    let arg = TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64) + phase;
                    data[(ch * h + y) * w + x] += amp * arg.cos();
                }
            }
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in data.iter_mut() {
        *v = 0.2 + 0.6 * (*v - lo) / span;
    }
    ImageTensor::from_raw(c, h, w, data)
}

/// Generates prototypes and `k * per_class` noisy samples. Sample `i` has
/// label `i % k`, so every prefix of length `m * k` is class-balanced.
pub fn gen_task(config: &TaskConfig) -> Result<SyntheticTask> {
    let (c, h, w) = config.shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidGeometry(c, h, w));
    }
    if config.k < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {}",
            config.k
        )));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {}",
            config.noise_sigma
        )));
    }
    let prototypes: Vec<ImageTensor> = (0..config.k)
        .map(|class| {
            let mut rng = PrngStream::tagged(config.seed, tags::DATA, class as u64);
            prototype(config.shape, config.max_frequency, &mut rng)
        })
        .collect();
    let n = config.k * config.per_class;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % config.k;
        let proto = &prototypes[label];
        let sample = if config.noise_sigma == 0.0 {
            proto.clone()
        } else {
            let mut rng = PrngStream::tagged(config.seed, tags::DATA, (1 << 32) + i as u64);
            let data = proto
                .data()
                .iter()
                .map(|&p| p + config.noise_sigma * rng.normal())
                .collect();
            ImageTensor::new(c, h, w, data)?
        };
        samples.push(sample);
        labels.push(label);
    }
    Ok(SyntheticTask {
        config: config.clone(),
        prototypes,
        samples,
        labels,
    })
}

/// Head whose class embeddings are the encoded prototypes.
pub fn build_head<E: Encoder + ?Sized>(
    encoder: &E,
    prototypes: &[ImageTensor],
    temperature: f64,
) -> Result<ZeroShotHead> {
    let rows: Vec<Embedding> = prototypes
        .iter()
        .map(|p| encoder.encode(p).map(|r| r.embedding))
        .collect::<Result<_>>()?;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = dot(rows[i].as_slice(), rows[j].as_slice());
            if c >= DUPLICATE_COSINE {
                return Err(Error::DegenerateHead(i, j, c));
            }
        }
    }
    ZeroShotHead::unlabeled(rows, temperature)
}

/// Largest off-diagonal cosine between head rows.
pub fn max_head_cosine(head: &ZeroShotHead) -> f64 {
    let rows = head.class_embeddings();
    let mut best = f64::NEG_INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            best = best.max(dot(rows[i].as_slice(), rows[j].as_slice()));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Architecture, EncoderParams};

    fn small(noise: f64) -> TaskConfig {
        TaskConfig {
            k: 3,
            per_class: 4,
            shape: (3, 8, 8),
            noise_sigma: noise,
            max_frequency: 2.0,
            seed: 5,
        }
    }

    #[test]
    fn zero_noise_samples_equal_prototypes() {
        let t = gen_task(&small(0.0)).unwrap();
        for (s, &l) in t.samples.iter().zip(&t.labels) {
            assert_eq!(s, &t.prototypes[l]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_task(&small(0.06)).unwrap();
        let b = gen_task(&small(0.06)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn prototypes_in_band_and_distinct() {
        let t = gen_task(&small(0.0)).unwrap();
        for p in &t.prototypes {
            let lo = p.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((lo - 0.2).abs() < 1e-12 && (hi - 0.8).abs() < 1e-12);
        }
        assert_ne!(t.prototypes[0], t.prototypes[1]);
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut c = small(0.0);
        c.shape = (3, 0, 8);
        assert!(matches!(gen_task(&c), Err(Error::InvalidGeometry(3, 0, 8))));
    }

    #[test]
    fn duplicate_prototypes_rejected() {
        let t = gen_task(&small(0.0)).unwrap();
        let enc = EncoderParams::random(Architecture::Mlp1, (3, 8, 8), 8, 16, 1).unwrap();
        let protos = vec![t.prototypes[0].clone(), t.prototypes[0].clone()];
        assert!(matches!(
            build_head(&enc, &protos, 0.01),
            Err(Error::DegenerateHead(0, 1, _))
        ));
        let head = build_head(&enc, &t.prototypes, 0.01).unwrap();
        assert_eq!(head.num_classes(), 3);
    }
}
