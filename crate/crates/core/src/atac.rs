//! Drift-consistency gated embedding correction.
//!
//! Views of an input are encoded, their drifts relative to the original
//! embedding are averaged, and if the drifts agree in direction (`tau` above
//! the threshold) the embedding is moved along the mean drift.

use crate::augment::{suite, AugmentationSuite};
use crate::embedding::{drift_stats, normalize, DriftStats, Embedding};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::head::{predict, Prediction, ZeroShotHead};
use crate::image::ImageTensor;
use crate::rng::PrngStream;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TAU_STAR: f64 = 0.85;
pub const DEFAULT_ALPHA: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtacParams {
    pub tau_star: f64,
    pub alpha: f64,
    pub suite: AugmentationSuite,
}

impl Default for AtacParams {
    fn default() -> Self {
        Self {
            tau_star: DEFAULT_TAU_STAR,
            alpha: DEFAULT_ALPHA,
            suite: suite("default").expect("built-in suite"),
        }
    }
}

impl AtacParams {
    /// `tau_star = 1` is accepted and disables the gate, since `tau <= 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_star > -1.0 && self.tau_star <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau_star {}",
                self.tau_star
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha {}", self.alpha)));
        }
        if self.suite.len() < 2 {
            return Err(Error::TooFewViews(self.suite.len()));
        }
        Ok(())
    }

    pub fn with_tau_star(&self, tau_star: f64) -> Self {
        Self {
            tau_star,
            ..self.clone()
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionOutcome {
    pub corrected: Embedding,
    pub tau: f64,
    pub fired: bool,
    pub drift: DriftStats,
}

/// Applies the gated correction given precomputed view embeddings.
pub fn correct(
    f_x: &Embedding,
    views: &[Embedding],
    params: &AtacParams,
) -> Result<CorrectionOutcome> {
    params.validate()?;
    if views.len() != params.suite.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} view embeddings, got {}",
            params.suite.len(),
            views.len()
        )));
    }
    let drift = drift_stats(f_x.as_slice(), views)?;
    let fired = !drift.degenerate && drift.tau > params.tau_star;
    let corrected = if fired {
        let moved: Vec<f64> = f_x
            .as_slice()
            .iter()
            .zip(&drift.mean_drift)
            .map(|(f, d)| f + params.alpha * d)
            .collect();
        normalize(&moved)?
    } else {
        f_x.clone()
    };
    Ok(CorrectionOutcome {
        corrected,
        tau: drift.tau,
        fired,
        drift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtacPrediction {
    pub prediction: Prediction,
    pub outcome: CorrectionOutcome,
    pub encoder_calls: usize,
}

/// Encodes `x` and its views, corrects, and classifies.
pub fn atac_predict<E: Encoder + ?Sized>(
    x: &ImageTensor,
    encoder: &E,
    head: &ZeroShotHead,
    params: &AtacParams,
    rng: &mut PrngStream,
) -> Result<AtacPrediction> {
    if encoder.dim() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: encoder.dim(),
        });
    }
    let f_x = encoder.encode(x)?.embedding;
    let realized = params.suite.realize(rng)?;
    let views = realized
        .iter()
        .map(|r| Ok(encoder.encode(&r.apply(x)?)?.embedding))
        .collect::<Result<Vec<_>>>()?;
    let outcome = correct(&f_x, &views, params)?;
    let prediction = predict(outcome.corrected.as_slice(), head)?;
    Ok(AtacPrediction {
        prediction,
        outcome,
        encoder_calls: 1 + views.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Architecture, EncoderParams};

    fn unit(v: &[f64]) -> Embedding {
        normalize(v).unwrap()
    }

    fn params_n(n: usize) -> AtacParams {
        let mut p = AtacParams::default();
        p.suite.specs.truncate(n);
        p
    }

    #[test]
    fn identical_views_leave_embedding_alone() {
        let f = unit(&[0.3, 0.4, 0.5]);
        let out = correct(&f, &vec![f.clone(); 5], &AtacParams::default()).unwrap();
        assert!(out.drift.degenerate && !out.fired);
        assert_eq!(out.corrected, f);
    }

    #[test]
    fn consistent_views_fire_hand_example() {
        let f = unit(&[1.0, 0.0]);
        let g = unit(&[0.0, 1.0]);
        let out = correct(&f, &[g.clone(), g], &params_n(2)).unwrap();
        assert!(out.fired);
        assert!((out.tau - 1.0).abs() < 1e-12);
        let expect = [8.0 / 113f64.sqrt(), -7.0 / 113f64.sqrt()];
        assert!((out.corrected.as_slice()[0] - 0.7525).abs() < 1e-4);
        assert!((out.corrected.as_slice()[1] + 0.6585).abs() < 1e-4);
        assert!((out.corrected.as_slice()[0] - expect[0]).abs() < 1e-12);
        assert!((out.corrected.as_slice()[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn gate_is_strict() {
        let f = unit(&[1.0, 0.0]);
        let views = [unit(&[0.0, 1.0]), unit(&[0.6, 0.8])];
        let tau = drift_stats(f.as_slice(), &views).unwrap().tau;
        let at = correct(&f, &views, &params_n(2).with_tau_star(tau)).unwrap();
        assert!(!at.fired);
        assert_eq!(at.corrected, f);
        let below = correct(&f, &views, &params_n(2).with_tau_star(tau - 1e-9)).unwrap();
        assert!(below.fired);
    }

    #[test]
    fn tau_star_one_never_fires() {
        let f = unit(&[1.0, 0.0]);
        let g = unit(&[0.0, 1.0]);
        let out = correct(&f, &[g.clone(), g], &params_n(2).with_tau_star(1.0)).unwrap();
        assert!(!out.fired);
    }

    #[test]
    fn view_count_must_match_suite() {
        let f = unit(&[1.0, 0.0]);
        assert!(correct(&f, &[f.clone(), f.clone()], &AtacParams::default()).is_err());
        assert!(AtacParams::default().with_alpha(0.0).validate().is_err());
        assert!(AtacParams::default()
            .with_tau_star(-1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn predict_counts_encoder_calls() {
        let enc = EncoderParams::random(Architecture::Mlp1, (3, 8, 8), 8, 16, 4).unwrap();
        let rows = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 8];
                v[i] = 1.0;
                Embedding::from_unit(v, 1e-12).unwrap()
            })
            .collect();
        let head = ZeroShotHead::unlabeled(rows, 0.01).unwrap();
        let x = ImageTensor::filled(3, 8, 8, 0.4);
        let out = atac_predict(
            &x,
            &enc,
            &head,
            &AtacParams::default(),
            &mut PrngStream::derive(0, 0),
        )
        .unwrap();
        assert_eq!(out.encoder_calls, 6);
        // A constant image is unchanged by flips and rotations.
        assert!(out.outcome.drift.degenerate && !out.outcome.fired);
    }
}
