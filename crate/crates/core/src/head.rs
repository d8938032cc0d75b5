//! Cosine-similarity softmax classifier over a fixed set of class embeddings.

use crate::embedding::{dot, norm, normalize_vjp, Embedding, NORM_FLOOR};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Maximum tolerated deviation from unit norm for inputs to [`predict`].
pub const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotHead {
    class_embeddings: Vec<Embedding>,
    temperature: f64,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_index: usize,
    pub probabilities: Vec<f64>,
}

impl ZeroShotHead {
    pub fn new(
        class_embeddings: Vec<Embedding>,
        temperature: f64,
        labels: Vec<String>,
    ) -> Result<Self> {
        if class_embeddings.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a head needs at least 2 classes, got {}",
                class_embeddings.len()
            )));
        }
        if labels.len() != class_embeddings.len() {
            return Err(Error::InvalidParameter(
                "one label per class embedding".into(),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature {temperature}"
            )));
        }
        let dim = class_embeddings[0].dim();
        for t in &class_embeddings {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.dim(),
                });
            }
            let n = t.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::NonUnitEmbedding(n));
            }
        }
        Ok(Self {
            class_embeddings,
            temperature,
            labels,
        })
    }

    /// Head with labels `class_0 .. class_{k-1}`.
    pub fn unlabeled(class_embeddings: Vec<Embedding>, temperature: f64) -> Result<Self> {
        let labels = (0..class_embeddings.len())
            .map(|i| format!("class_{i}"))
            .collect();
        Self::new(class_embeddings, temperature, labels)
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings[0].dim()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_embeddings(&self) -> &[Embedding] {
        &self.class_embeddings
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        Self::new(
            self.class_embeddings.clone(),
            temperature,
            self.labels.clone(),
        )
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `cos(f, t_i) / T` for every class. `f` need not be unit-norm.
    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        let n = norm(f);
        if n < NORM_FLOOR {
            return Err(Error::ZeroVector(n));
        }
        Ok(self
            .class_embeddings
            .iter()
            .map(|t| (dot(f, t.as_slice()) / n).clamp(-1.0, 1.0) / self.temperature)
            .collect())
    }

    /// Cross-entropy of the head's logits against `label`, and its gradient
    /// w.r.t. the (possibly unnormalized) feature `f`.
    pub fn cross_entropy_with_grad(&self, f: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        let logits = self.logits(f)?;
        let (loss, dlogits) = cross_entropy(&logits, label)?;
        Ok((loss, self.logits_vjp(f, &dlogits)))
    }

    /// Pulls a gradient on the logits back to the feature `f`.
    pub fn logits_vjp(&self, f: &[f64], dlogits: &[f64]) -> Vec<f64> {
        let mut g_unit = vec![0.0; f.len()];
        for (t, &w) in self.class_embeddings.iter().zip(dlogits) {
            let s = w / self.temperature;
            for (gi, ti) in g_unit.iter_mut().zip(t.as_slice()) {
                *gi += s * ti;
            }
        }
        normalize_vjp(f, &g_unit)
    }
}

/// Numerically safe softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidParameter(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax over `cos(f, t_i) / T`.
pub fn class_probabilities(f: &[f64], head: &ZeroShotHead) -> Result<Vec<f64>> {
    Ok(softmax(&head.logits(f)?))
}

/// Classifies a unit-norm embedding. Non-unit inputs are rejected rather than
/// silently normalized.
pub fn predict(f: &[f64], head: &ZeroShotHead) -> Result<Prediction> {
    head.check_dim(f)?;
    let n = norm(f);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitEmbedding(n));
    }
    let probabilities = class_probabilities(f, head)?;
    Ok(Prediction {
        label_index: argmax(&probabilities),
        probabilities,
    })
}
