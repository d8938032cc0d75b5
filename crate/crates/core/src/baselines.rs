//! Comparison defenses: prediction ensembling over views and the gated
//! embedding-drift counterattack.

use crate::augment::AugmentationSuite;
use crate::embedding::{norm, Embedding};
use crate::encoder::{EncodeResult, Encoder};
use crate::error::{Error, Result};
use crate::head::{argmax, class_probabilities, Prediction, ZeroShotHead};
use crate::image::ImageTensor;
use crate::rng::{sign_noise, PrngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsemblePrediction {
    pub prediction: Prediction,
    pub encoder_calls: usize,
}

/// Averages class probabilities over `x` and every view of `suite`.
pub fn tte_predict<E: Encoder + ?Sized>(
    x: &ImageTensor,
    encoder: &E,
    head: &ZeroShotHead,
    suite: &AugmentationSuite,
    rng: &mut PrngStream,
) -> Result<EnsemblePrediction> {
    let realized = suite.realize(rng)?;
    let mut inputs = Vec::with_capacity(realized.len() + 1);
    inputs.push(x.clone());
    for r in &realized {
        inputs.push(r.apply(x)?);
    }
    let mut mean = vec![0.0; head.num_classes()];
    for input in &inputs {
        let f = encoder.encode(input)?.embedding;
        for (m, p) in mean
            .iter_mut()
            .zip(class_probabilities(f.as_slice(), head)?)
        {
            *m += p;
        }
    }
    for m in mean.iter_mut() {
        *m /= inputs.len() as f64;
    }
    Ok(EnsemblePrediction {
        prediction: Prediction {
            label_index: argmax(&mean),
            probabilities: mean,
        },
        encoder_calls: inputs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcParams {
    pub epsilon_ttc: f64,
    pub steps: usize,
    pub eta: f64,
    pub tau_thresh: f64,
    pub epsilon_tau: f64,
    pub probe_count: usize,
}

impl Default for TtcParams {
    /// Defense-side settings; the step size is `2 * epsilon_ttc / steps`.
    fn default() -> Self {
        let epsilon_ttc = 4.0 / 255.0;
        let steps = 5;
        Self {
            epsilon_ttc,
            steps,
            eta: 2.0 * epsilon_ttc / steps as f64,
            tau_thresh: 0.2,
            epsilon_tau: 4.0 / 255.0,
            probe_count: 8,
        }
    }
}

impl TtcParams {
    /// Surrogate settings used by the adaptive attack.
    pub fn attack_surrogate() -> Self {
        Self {
            epsilon_ttc: 2.0 / 255.0,
            steps: 1,
            eta: 1.0 / 255.0,
            tau_thresh: 0.2,
            epsilon_tau: 2.0 / 255.0,
            probe_count: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !finite_nonneg(self.epsilon_ttc)
            || !finite_nonneg(self.epsilon_tau)
            || !finite_nonneg(self.eta)
        {
            return Err(Error::InvalidParameter(
                "counterattack budgets must be finite and >= 0".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter(
                "counterattack needs at least one step".into(),
            ));
        }
        if self.probe_count == 0 {
            return Err(Error::InvalidParameter(
                "probe_count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtcOutcome {
    pub x_defended: ImageTensor,
    pub tau_hat: f64,
    pub fired: bool,
    pub encoder_calls: usize,
}

/// `clamp(x + delta, 0, 1)`.
pub(crate) fn perturbed(x: &ImageTensor, delta: &ImageTensor) -> ImageTensor {
    let mut out = x.clone();
    out.add_assign(delta);
    out.clamp_unit();
    out
}

/// Sign that maps both zeros to 0.
#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `x + delta` onto the `eps` box around `x` and `[0, 1]`; returns the
/// feasible perturbation.
pub(crate) fn project(x: &ImageTensor, delta: &mut ImageTensor, eps: f64) {
    for (d, &xi) in delta.data_mut().iter_mut().zip(x.data()) {
        let clipped = d.clamp(-eps, eps);
        *d = (xi + clipped).clamp(0.0, 1.0) - xi;
    }
}

/// Gradient of `|f - anchor|` w.r.t. the unit embedding `f`; zero at the anchor.
pub(crate) fn distance_grad(f: &[f64], anchor: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = f.iter().zip(anchor).map(|(a, b)| a - b).collect();
    let dist = norm(&diff);
    if dist == 0.0 {
        return (0.0, vec![0.0; f.len()]);
    }
    (dist, diff.into_iter().map(|d| d / dist).collect())
}

/// Relative embedding drift under `probe_count` uniform noise draws, with the
/// probe encodings kept for gradient use.
pub(crate) fn probe_drift<E: Encoder + ?Sized>(
    x: &ImageTensor,
    anchor: &Embedding,
    encoder: &E,
    epsilon_tau: f64,
    probe_count: usize,
    rng: &mut PrngStream,
) -> Result<(f64, Vec<EncodeResult>)> {
    let mut total = 0.0;
    let mut probes = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        let noise = sign_noise(rng, x.shape(), epsilon_tau);
        let r = encoder.encode(&perturbed(x, &noise))?;
        total += distance_grad(r.embedding.as_slice(), anchor.as_slice()).0;
        probes.push(r);
    }
    // The anchor is unit-norm, so the relative drift equals the absolute one.
    Ok((total / (probe_count as f64 * anchor.norm()), probes))
}

/// Gated counterattack: if the noise-probe drift is below the threshold, push
/// the input to maximize its embedding distance from the original.
pub fn ttc_defend<E: Encoder + ?Sized>(
    x: &ImageTensor,
    encoder: &E,
    params: &TtcParams,
    rng: &mut PrngStream,
) -> Result<TtcOutcome> {
    params.validate()?;
    let anchor = encoder.encode(x)?.embedding;
    let (tau_hat, _) = probe_drift(
        x,
        &anchor,
        encoder,
        params.epsilon_tau,
        params.probe_count,
        rng,
    )?;
    let mut calls = 1 + params.probe_count;
    if tau_hat >= params.tau_thresh {
        return Ok(TtcOutcome {
            x_defended: x.clone(),
            tau_hat,
            fired: false,
            encoder_calls: calls,
        });
    }
    let mut delta = sign_noise(rng, x.shape(), params.epsilon_ttc);
    project(x, &mut delta, params.epsilon_ttc);
    for _ in 0..params.steps {
        let current = encoder.encode(&perturbed(x, &delta))?;
        let (_, g) = distance_grad(current.embedding.as_slice(), anchor.as_slice());
        let grad = encoder.backprop(&current, &g)?;
        calls += 1;
        for (d, gi) in delta.data_mut().iter_mut().zip(grad.data()) {
            *d += params.eta * sign(*gi);
        }
        project(x, &mut delta, params.epsilon_ttc);
    }
    Ok(TtcOutcome {
        x_defended: perturbed(x, &delta),
        tau_hat,
        fired: true,
        encoder_calls: calls,
    })
}
