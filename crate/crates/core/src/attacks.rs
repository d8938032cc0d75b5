//! L-infinity sign-gradient attacks, including adaptive attacks that
//! differentiate through the defenses.

use crate::atac::AtacParams;
use crate::augment::{AugmentationSuite, RealizedAug};
use crate::baselines::{distance_grad, perturbed, probe_drift, project, sign, TtcParams};
use crate::embedding::{drift_stats, tau_vjp};
use crate::encoder::{EncodeResult, Encoder};
use crate::error::{Error, Result};
use crate::head::{argmax, cross_entropy, ZeroShotHead};
use crate::image::ImageTensor;
use crate::rng::{sign_noise, PrngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub steps: usize,
    pub random_start: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 4.0 / 255.0,
            gamma: 1.0 / 255.0,
            steps: 10,
            random_start: true,
        }
    }
}

impl PgdConfig {
    /// Half-range budget with step `2 * epsilon / steps`.
    pub fn large_eps() -> Self {
        let epsilon = 127.5 / 255.0;
        let steps = 10;
        Self {
            epsilon,
            gamma: 2.0 * epsilon / steps as f64,
            steps,
            random_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma {}", self.gamma)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter(
                "attack needs at least one step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Keep the defense inactive and attack the raw pipeline.
    Avoid,
    /// Force the defense active and attack through it.
    Lure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub base: PgdConfig,
    pub gate_temp: f64,
    pub lambda: f64,
    pub strategy: Strategy,
}

impl AdaptiveConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            base: PgdConfig::default(),
            gate_temp: 40.0,
            lambda: 1.0,
            strategy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.gate_temp > 0.0 && self.gate_temp.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gate temperature {}",
                self.gate_temp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: ImageTensor,
    /// Misclassified by the undefended pipeline.
    pub success: bool,
    pub steps_used: usize,
    pub loss_trace: Vec<f64>,
    pub encoder_calls: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn undefended_label<E: Encoder + ?Sized>(
    encoder: &E,
    head: &ZeroShotHead,
    x: &ImageTensor,
) -> Result<usize> {
    let f = encoder.encode(x)?.embedding;
    Ok(argmax(&head.logits(f.as_slice())?))
}

/// Cross-entropy of the undefended pipeline at `x` and its input gradient.
pub fn ce_loss_grad<E: Encoder + ?Sized>(
    encoder: &E,
    head: &ZeroShotHead,
    x: &ImageTensor,
    label: usize,
) -> Result<(f64, ImageTensor)> {
    let r = encoder.encode(x)?;
    let (loss, g) = head.cross_entropy_with_grad(r.embedding.as_slice(), label)?;
    Ok((loss, encoder.backprop(&r, &g)?))
}

fn start_delta(x: &ImageTensor, cfg: &PgdConfig, rng: &mut PrngStream) -> ImageTensor {
    let mut delta = if cfg.random_start {
        sign_noise(rng, x.shape(), cfg.epsilon)
    } else {
        ImageTensor::zeros_like(x)
    };
    project(x, &mut delta, cfg.epsilon);
    delta
}

fn step(x: &ImageTensor, delta: &mut ImageTensor, grad: &ImageTensor, step: f64, eps: f64) {
    for (d, g) in delta.data_mut().iter_mut().zip(grad.data()) {
        *d += step * sign(*g);
    }
    project(x, delta, eps);
}

struct Objective {
    loss: f64,
    grad: ImageTensor,
    encoder_calls: usize,
}

/// Shared sign-gradient loop. `ascend` selects the step direction; `stop` is
/// checked at the starting point and after every step.
fn sign_gradient_loop<F, S>(
    x: &ImageTensor,
    cfg: &PgdConfig,
    rng: &mut PrngStream,
    ascend: bool,
    mut objective: F,
    mut stop: Option<S>,
) -> Result<(ImageTensor, usize, Vec<f64>, usize)>
where
    F: FnMut(&ImageTensor, &mut PrngStream) -> Result<Objective>,
    S: FnMut(&ImageTensor) -> Result<bool>,
{
    cfg.validate()?;
    let mut delta = start_delta(x, cfg, rng);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut calls = 0;
    let direction = if ascend { cfg.gamma } else { -cfg.gamma };
    if let Some(s) = stop.as_mut() {
        calls += 1;
        if s(&perturbed(x, &delta))? {
            return Ok((perturbed(x, &delta), 0, trace, calls));
        }
    }
    for t in 1..=cfg.steps {
        let obj = objective(&perturbed(x, &delta), rng)?;
        calls += obj.encoder_calls;
        trace.push(obj.loss);
        step(x, &mut delta, &obj.grad, direction, cfg.epsilon);
        if let Some(s) = stop.as_mut() {
            calls += 1;
            if s(&perturbed(x, &delta))? {
                return Ok((perturbed(x, &delta), t, trace, calls));
            }
        }
    }
    Ok((perturbed(x, &delta), cfg.steps, trace, calls))
}

fn finish<E: Encoder + ?Sized>(
    encoder: &E,
    head: &ZeroShotHead,
    y_true: usize,
    (x_adv, steps_used, loss_trace, calls): (ImageTensor, usize, Vec<f64>, usize),
) -> Result<AttackResult> {
    let success = undefended_label(encoder, head, &x_adv)? != y_true;
    Ok(AttackResult {
        x_adv,
        success,
        steps_used,
        loss_trace,
        encoder_calls: calls + 1,
    })
}

type NoStop = fn(&ImageTensor) -> Result<bool>;

/// Untargeted PGD on the cross-entropy of the undefended pipeline.
pub fn pgd_untargeted<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    cfg: &PgdConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    let out = sign_gradient_loop(
        x,
        cfg,
        rng,
        true,
        |xa, _| {
            let (loss, grad) = ce_loss_grad(encoder, head, xa, y_true)?;
            Ok(Objective {
                loss,
                grad,
                encoder_calls: 1,
            })
        },
        None::<NoStop>,
    )?;
    finish(encoder, head, y_true, out)
}

/// Untargeted PGD with the half-range budget.
pub fn pgd_large_eps<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    pgd_untargeted(x, y_true, encoder, head, &PgdConfig::large_eps(), rng)
}

/// Untargeted PGD that stops at the first misclassified iterate. An input
/// that is already misclassified is returned unchanged.
pub fn pgd_early_stop<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    cfg: &PgdConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    cfg.validate()?;
    if undefended_label(encoder, head, x)? != y_true {
        return Ok(AttackResult {
            x_adv: x.clone(),
            success: true,
            steps_used: 0,
            loss_trace: Vec::new(),
            encoder_calls: 1,
        });
    }
    let misclassified = |xa: &ImageTensor| Ok(undefended_label(encoder, head, xa)? != y_true);
    let out = sign_gradient_loop(
        x,
        cfg,
        rng,
        true,
        |xa, _| {
            let (loss, grad) = ce_loss_grad(encoder, head, xa, y_true)?;
            Ok(Objective {
                loss,
                grad,
                encoder_calls: 1,
            })
        },
        Some(misclassified),
    )?;
    let mut res = finish(encoder, head, y_true, out)?;
    res.encoder_calls += 1;
    Ok(res)
}

/// Label-free attack maximizing the embedding distance from the clean input.
/// `y_true` is only used to score success.
pub fn pgd_unsupervised<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    cfg: &PgdConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    let anchor = encoder.encode(x)?.embedding;
    let mut out = sign_gradient_loop(
        x,
        cfg,
        rng,
        true,
        |xa, _| {
            let r = encoder.encode(xa)?;
            let (loss, g) = distance_grad(r.embedding.as_slice(), anchor.as_slice());
            Ok(Objective {
                loss,
                grad: encoder.backprop(&r, &g)?,
                encoder_calls: 1,
            })
        },
        None::<NoStop>,
    )?;
    out.3 += 1;
    finish(encoder, head, y_true, out)
}

/// Uniform draw among the labels other than `y_true`.
pub fn draw_target(y_true: usize, k: usize, rng: &mut PrngStream) -> usize {
    let t = rng.below((k - 1) as u64) as usize;
    if t >= y_true {
        t + 1
    } else {
        t
    }
}

/// Sign descent on the cross-entropy towards `y_target` (drawn from `rng`
/// when `None`). Success is still judged against `y_true`.
pub fn pgd_targeted<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    y_target: Option<usize>,
    encoder: &E,
    head: &ZeroShotHead,
    cfg: &PgdConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    let k = head.num_classes();
    let target = match y_target {
        Some(t) if t == y_true || t >= k => {
            return Err(Error::InvalidParameter(format!(
                "target {t} for true label {y_true}"
            )))
        }
        Some(t) => t,
        None => draw_target(y_true, k, rng),
    };
    let out = sign_gradient_loop(
        x,
        cfg,
        rng,
        false,
        |xa, _| {
            let (loss, grad) = ce_loss_grad(encoder, head, xa, target)?;
            Ok(Objective {
                loss,
                grad,
                encoder_calls: 1,
            })
        },
        None::<NoStop>,
    )?;
    finish(encoder, head, y_true, out)
}

/// Loss and input gradient of the soft-gated drift-correction pipeline.
pub fn adaptive_atac_objective<E: Encoder + ?Sized>(
    xa: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    atac: &AtacParams,
    cfg: &AdaptiveConfig,
    realized: &[RealizedAug],
) -> Result<(f64, ImageTensor)> {
    let fx = encoder.encode(xa)?;
    let views: Vec<ImageTensor> = realized
        .iter()
        .map(|r| r.apply(xa))
        .collect::<Result<_>>()?;
    let view_enc: Vec<EncodeResult> = views
        .iter()
        .map(|v| encoder.encode(v))
        .collect::<Result<_>>()?;
    let view_emb: Vec<&[f64]> = view_enc.iter().map(|r| r.embedding.as_slice()).collect();
    let stats = drift_stats(fx.embedding.as_slice(), &view_emb)?;
    let tau = stats.tau;
    let gate = sigmoid(cfg.gate_temp * (tau - atac.tau_star));
    let n = realized.len() as f64;
    let dim = encoder.dim();

    let (loss, g_fx_direct, g_mean, g_tau) = match cfg.strategy {
        Strategy::Avoid => {
            let (ce, g) = head.cross_entropy_with_grad(fx.embedding.as_slice(), y_true)?;
            (ce - cfg.lambda * tau, g, vec![0.0; dim], -cfg.lambda)
        }
        Strategy::Lure => {
            let corrected: Vec<f64> = fx
                .embedding
                .as_slice()
                .iter()
                .zip(&stats.mean_drift)
                .map(|(f, d)| f + atac.alpha * gate * d)
                .collect();
            // The head normalizes its input, so this is CE at normalize(f*).
            let logits = head.logits(&corrected)?;
            let (ce, dlogits) = cross_entropy(&logits, y_true)?;
            let g = head.logits_vjp(&corrected, &dlogits);
            let dgate = cfg.gate_temp * gate * (1.0 - gate);
            let along: f64 = g.iter().zip(&stats.mean_drift).map(|(a, b)| a * b).sum();
            let g_mean = g.iter().map(|v| atac.alpha * gate * v).collect();
            (
                ce + cfg.lambda * tau,
                g,
                g_mean,
                cfg.lambda + atac.alpha * along * dgate,
            )
        }
    };

    // Gradients w.r.t. each drift d_i = f_x - f_i.
    let mut g_drifts = tau_vjp(&stats, g_tau);
    for gd in g_drifts.iter_mut() {
        for (a, m) in gd.iter_mut().zip(&g_mean) {
            *a += m / n;
        }
    }
    let mut g_fx = g_fx_direct;
    for gd in &g_drifts {
        for (a, b) in g_fx.iter_mut().zip(gd) {
            *a += b;
        }
    }
    let mut grad = encoder.backprop(&fx, &g_fx)?;
    for ((r, enc), gd) in realized.iter().zip(&view_enc).zip(&g_drifts) {
        let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
        let gv = encoder.backprop(enc, &neg)?;
        grad.add_assign(&r.vjp(xa, &gv)?);
    }
    Ok((loss, grad))
}

/// Adaptive attack against the drift-correction defense. The gate is
/// replaced by `sigmoid(gate_temp * (tau - tau_star))`; random suites are
/// re-realized every step.
pub fn adaptive_atac_attack<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    atac: &AtacParams,
    cfg: &AdaptiveConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    cfg.validate()?;
    atac.validate()?;
    let base = PgdConfig {
        random_start: true,
        ..cfg.base
    };
    let calls_per_step = 1 + atac.suite.len();
    let out = sign_gradient_loop(
        x,
        &base,
        rng,
        true,
        |xa, rng| {
            let realized = atac.suite.realize(rng)?;
            let (loss, grad) =
                adaptive_atac_objective(xa, y_true, encoder, head, atac, cfg, &realized)?;
            Ok(Objective {
                loss,
                grad,
                encoder_calls: calls_per_step,
            })
        },
        None::<NoStop>,
    )?;
    finish(encoder, head, y_true, out)
}

/// Loss and input gradient of the soft-gated counterattack pipeline.
/// `ttc_delta` is the inner counterattack perturbation, treated as constant.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_ttc_objective<E: Encoder + ?Sized>(
    xa: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    ttc: &TtcParams,
    cfg: &AdaptiveConfig,
    ttc_delta: &ImageTensor,
    rng: &mut PrngStream,
) -> Result<(f64, ImageTensor)> {
    let fa = encoder.encode(xa)?;
    let (tau_hat, probes) = probe_drift(
        xa,
        &fa.embedding,
        encoder,
        ttc.epsilon_tau,
        ttc.probe_count,
        rng,
    )?;
    let gate = sigmoid(cfg.gate_temp * (ttc.tau_thresh - tau_hat));

    // d tau_hat / d x through both the probes and the anchor.
    let tau_grad = |scale: f64| -> Result<ImageTensor> {
        let mut acc = ImageTensor::zeros_like(xa);
        let mut g_anchor = vec![0.0; encoder.dim()];
        let w = scale / probes.len() as f64;
        for p in &probes {
            let (_, u) = distance_grad(p.embedding.as_slice(), fa.embedding.as_slice());
            let gu: Vec<f64> = u.iter().map(|v| w * v).collect();
            acc.add_assign(&encoder.backprop(p, &gu)?);
            for (a, b) in g_anchor.iter_mut().zip(&gu) {
                *a -= b;
            }
        }
        acc.add_assign(&encoder.backprop(&fa, &g_anchor)?);
        Ok(acc)
    };

    match cfg.strategy {
        Strategy::Avoid => {
            let (ce, g) = head.cross_entropy_with_grad(fa.embedding.as_slice(), y_true)?;
            let mut grad = encoder.backprop(&fa, &g)?;
            grad.add_assign(&tau_grad(cfg.lambda)?);
            Ok((ce + cfg.lambda * tau_hat, grad))
        }
        Strategy::Lure => {
            let mut shift = ttc_delta.clone();
            shift.scale(gate);
            let x_star = perturbed(xa, &shift);
            let (ce, g_star) = ce_loss_grad(encoder, head, &x_star, y_true)?;
            let dgate = -cfg.gate_temp * gate * (1.0 - gate);
            let g_tau = -cfg.lambda + g_star.dot(ttc_delta) * dgate;
            let mut grad = g_star;
            grad.add_assign(&tau_grad(g_tau)?);
            Ok((ce - cfg.lambda * tau_hat, grad))
        }
    }
}

/// One random-start sign step of the counterattack at `xa`.
pub fn inner_counterattack<E: Encoder + ?Sized>(
    xa: &ImageTensor,
    encoder: &E,
    ttc: &TtcParams,
    rng: &mut PrngStream,
) -> Result<ImageTensor> {
    let anchor = encoder.encode(xa)?.embedding;
    let mut delta = sign_noise(rng, xa.shape(), ttc.epsilon_ttc);
    project(xa, &mut delta, ttc.epsilon_ttc);
    let r = encoder.encode(&perturbed(xa, &delta))?;
    let (_, g) = distance_grad(r.embedding.as_slice(), anchor.as_slice());
    let grad = encoder.backprop(&r, &g)?;
    step(xa, &mut delta, &grad, ttc.eta, ttc.epsilon_ttc);
    Ok(delta)
}

/// Adaptive attack against the counterattack defense.
pub fn adaptive_ttc_attack<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y_true: usize,
    encoder: &E,
    head: &ZeroShotHead,
    ttc: &TtcParams,
    cfg: &AdaptiveConfig,
    rng: &mut PrngStream,
) -> Result<AttackResult> {
    cfg.validate()?;
    ttc.validate()?;
    let base = PgdConfig {
        random_start: true,
        ..cfg.base
    };
    let calls_per_step = 4 + ttc.probe_count;
    let out = sign_gradient_loop(
        x,
        &base,
        rng,
        true,
        |xa, rng| {
            let ttc_delta = inner_counterattack(xa, encoder, ttc, rng)?;
            let (loss, grad) =
                adaptive_ttc_objective(xa, y_true, encoder, head, ttc, cfg, &ttc_delta, rng)?;
            Ok(Objective {
                loss,
                grad,
                encoder_calls: calls_per_step,
            })
        },
        None::<NoStop>,
    )?;
    finish(encoder, head, y_true, out)
}

/// Mean cross-entropy over transformed copies of `x`, with its input gradient.
///
/// A deterministic suite is averaged over its full list. A random suite is
/// sampled `probe_count` times: each draw picks a spec uniformly and realizes it.
pub fn eot_loss<E: Encoder + ?Sized>(
    x: &ImageTensor,
    y: usize,
    encoder: &E,
    head: &ZeroShotHead,
    transforms: &AugmentationSuite,
    probe_count: usize,
    rng: &mut PrngStream,
) -> Result<(f64, ImageTensor)> {
    if transforms.is_empty() {
        return Err(Error::InvalidParameter("empty transform list".into()));
    }
    let realized: Vec<RealizedAug> = if transforms.is_deterministic() {
        transforms.realize(rng)?
    } else {
        if probe_count == 0 {
            return Err(Error::InvalidParameter(
                "probe_count must be at least 1".into(),
            ));
        }
        (0..probe_count)
            .map(|_| {
                let i = rng.below(transforms.len() as u64) as usize;
                transforms.specs[i].realize(rng)
            })
            .collect::<Result<_>>()?
    };
    let mut total = 0.0;
    let mut grad = ImageTensor::zeros_like(x);
    for r in &realized {
        let v = r.apply(x)?;
        let (loss, g) = ce_loss_grad(encoder, head, &v, y)?;
        total += loss;
        grad.add_assign(&r.vjp(x, &g)?);
    }
    let m = realized.len() as f64;
    grad.scale(1.0 / m);
    Ok((total / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{suite, AugmentationSpec};
    use crate::embedding::normalize;
    use crate::encoder::{Architecture, EncoderParams};

    fn setup() -> (EncoderParams, ZeroShotHead, ImageTensor) {
        let enc = EncoderParams::random(Architecture::Mlp1, (3, 8, 8), 8, 32, 3).unwrap();
        let mut rng = PrngStream::derive(4, 4);
        let rows = (0..4)
            .map(|_| normalize(&(0..8).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap())
            .collect();
        let head = ZeroShotHead::unlabeled(rows, 0.05).unwrap();
        let x =
            ImageTensor::new(3, 8, 8, (0..192).map(|_| rng.uniform(0.2, 0.8)).collect()).unwrap();
        (enc, head, x)
    }

    #[test]
    fn sigmoid_is_nearly_hard_at_default_temperature() {
        for d in [0.2, 0.5, 1.0] {
            let up = sigmoid(40.0 * d);
            let down = sigmoid(-40.0 * d);
            assert!((up - 1.0).abs() < 1e-3 && down.abs() < 1e-3);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_budget_returns_input() {
        let (enc, head, x) = setup();
        let cfg = PgdConfig {
            epsilon: 0.0,
            ..PgdConfig::default()
        };
        let r = pgd_untargeted(&x, 1, &enc, &head, &cfg, &mut PrngStream::derive(0, 0)).unwrap();
        assert_eq!(r.x_adv, x);
        let label = undefended_label(&enc, &head, &x).unwrap();
        assert_eq!(r.success, label != 1);
    }

    #[test]
    fn every_attack_respects_budget() {
        let (enc, head, x) = setup();
        let cfg = PgdConfig::default();
        let atac = AtacParams::default();
        let ttc = TtcParams::attack_surrogate();
        let mut results = vec![
            pgd_untargeted(&x, 0, &enc, &head, &cfg, &mut PrngStream::derive(0, 1)).unwrap(),
            pgd_early_stop(&x, 0, &enc, &head, &cfg, &mut PrngStream::derive(0, 2)).unwrap(),
            pgd_unsupervised(&x, 0, &enc, &head, &cfg, &mut PrngStream::derive(0, 3)).unwrap(),
            pgd_targeted(
                &x,
                0,
                None,
                &enc,
                &head,
                &cfg,
                &mut PrngStream::derive(0, 4),
            )
            .unwrap(),
        ];
        for s in [Strategy::Avoid, Strategy::Lure] {
            let ac = AdaptiveConfig::new(s);
            results.push(
                adaptive_atac_attack(
                    &x,
                    0,
                    &enc,
                    &head,
                    &atac,
                    &ac,
                    &mut PrngStream::derive(0, 5),
                )
                .unwrap(),
            );
            results.push(
                adaptive_ttc_attack(&x, 0, &enc, &head, &ttc, &ac, &mut PrngStream::derive(0, 6))
                    .unwrap(),
            );
        }
        for r in &results {
            assert!(r.x_adv.max_abs_diff(&x) <= cfg.epsilon + 1e-9);
            assert!(r.x_adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let big = pgd_large_eps(&x, 0, &enc, &head, &mut PrngStream::derive(0, 7)).unwrap();
        assert!(big.x_adv.max_abs_diff(&x) <= 127.5 / 255.0 + 1e-9);
    }

    #[test]
    fn single_step_matches_finite_difference_signs() {
        let enc = EncoderParams::random(Architecture::Linear, (3, 8, 8), 8, 0, 12).unwrap();
        let (_, head, x) = setup();
        let cfg = PgdConfig {
            steps: 1,
            random_start: false,
            ..PgdConfig::default()
        };
        let r = pgd_untargeted(&x, 2, &enc, &head, &cfg, &mut PrngStream::derive(0, 0)).unwrap();
        let h = 1e-6;
        let (mut agree, mut total) = (0, 0);
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = ce_loss_grad(&enc, &head, &p, 2).unwrap().0
                - ce_loss_grad(&enc, &head, &m, 2).unwrap().0;
            let moved = r.x_adv.data()[i] - x.data()[i];
            if fd.abs() < 1e-12 {
                continue;
            }
            total += 1;
            if sign(fd) == sign(moved) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn early_stop_on_misclassified_input_is_a_no_op() {
        let (enc, head, x) = setup();
        let label = undefended_label(&enc, &head, &x).unwrap();
        let wrong = (label + 1) % 4;
        let r = pgd_early_stop(
            &x,
            wrong,
            &enc,
            &head,
            &PgdConfig::default(),
            &mut PrngStream::derive(0, 0),
        )
        .unwrap();
        assert_eq!(r.steps_used, 0);
        assert_eq!(r.x_adv, x);
    }

    #[test]
    fn unsupervised_ignores_label() {
        let (enc, head, x) = setup();
        let a = pgd_unsupervised(
            &x,
            0,
            &enc,
            &head,
            &PgdConfig::default(),
            &mut PrngStream::derive(1, 1),
        )
        .unwrap();
        let b = pgd_unsupervised(
            &x,
            3,
            &enc,
            &head,
            &PgdConfig::default(),
            &mut PrngStream::derive(1, 1),
        )
        .unwrap();
        assert_eq!(a.x_adv, b.x_adv);
    }

    #[test]
    fn two_class_target_is_forced() {
        let mut rng = PrngStream::derive(0, 0);
        for _ in 0..20 {
            assert_eq!(draw_target(0, 2, &mut rng), 1);
            assert_eq!(draw_target(1, 2, &mut rng), 0);
            assert_ne!(draw_target(2, 5, &mut rng), 2);
        }
    }

    #[test]
    fn zero_lambda_avoid_reduces_to_plain_pgd() {
        let (enc, head, x) = setup();
        let plain = pgd_untargeted(
            &x,
            1,
            &enc,
            &head,
            &PgdConfig::default(),
            &mut PrngStream::derive(9, 9),
        )
        .unwrap();
        let cfg = AdaptiveConfig {
            lambda: 0.0,
            ..AdaptiveConfig::new(Strategy::Avoid)
        };
        let a = adaptive_atac_attack(
            &x,
            1,
            &enc,
            &head,
            &AtacParams::default(),
            &cfg,
            &mut PrngStream::derive(9, 9),
        )
        .unwrap();
        let t = adaptive_ttc_attack(
            &x,
            1,
            &enc,
            &head,
            &TtcParams::attack_surrogate(),
            &cfg,
            &mut PrngStream::derive(9, 9),
        )
        .unwrap();
        assert_eq!(a.x_adv, plain.x_adv);
        assert_eq!(t.x_adv, plain.x_adv);
    }

    /// Central-difference check of an objective's gradient at a few pixels.
    fn spot_check<F: Fn(&ImageTensor) -> f64>(
        f: F,
        x: &ImageTensor,
        grad: &ImageTensor,
        pixels: &[usize],
    ) -> f64 {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for &i in pixels {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn adaptive_atac_gradient_matches_finite_differences() {
        let (enc, head, x) = setup();
        let atac = AtacParams {
            tau_star: 0.3,
            ..AtacParams::default()
        };
        let realized = atac.suite.realize(&mut PrngStream::derive(0, 0)).unwrap();
        for strategy in [Strategy::Avoid, Strategy::Lure] {
            let cfg = AdaptiveConfig {
                gate_temp: 4.0,
                ..AdaptiveConfig::new(strategy)
            };
            let (_, grad) =
                adaptive_atac_objective(&x, 1, &enc, &head, &atac, &cfg, &realized).unwrap();
            let f = |z: &ImageTensor| {
                adaptive_atac_objective(z, 1, &enc, &head, &atac, &cfg, &realized)
                    .unwrap()
                    .0
            };
            let err = spot_check(f, &x, &grad, &[3, 50, 77, 130, 191]);
            assert!(err < 1e-2, "{strategy:?}: {err}");
        }
    }

    #[test]
    fn adaptive_ttc_gradient_matches_finite_differences() {
        let (enc, head, x) = setup();
        let ttc = TtcParams {
            tau_thresh: 0.01,
            ..TtcParams::attack_surrogate()
        };
        let delta = inner_counterattack(&x, &enc, &ttc, &mut PrngStream::derive(2, 2)).unwrap();
        for strategy in [Strategy::Avoid, Strategy::Lure] {
            let cfg = AdaptiveConfig {
                gate_temp: 40.0,
                ..AdaptiveConfig::new(strategy)
            };
            let eval = |z: &ImageTensor| {
                adaptive_ttc_objective(
                    z,
                    1,
                    &enc,
                    &head,
                    &ttc,
                    &cfg,
                    &delta,
                    &mut PrngStream::derive(3, 3),
                )
                .unwrap()
            };
            let (_, grad) = eval(&x);
            let err = spot_check(|z| eval(z).0, &x, &grad, &[3, 50, 77, 130, 191]);
            assert!(err < 1e-2, "{strategy:?}: {err}");
        }
    }

    #[test]
    fn eot_with_identity_is_plain_ce() {
        let (enc, head, x) = setup();
        let id = AugmentationSuite {
            name: "id".into(),
            specs: vec![AugmentationSpec::rotate(0.0)],
        };
        let (l, g) = eot_loss(&x, 2, &enc, &head, &id, 1, &mut PrngStream::derive(0, 0)).unwrap();
        let (l0, g0) = ce_loss_grad(&enc, &head, &x, 2).unwrap();
        assert_eq!(l, l0);
        assert_eq!(g, g0);
        let det = suite("default").unwrap();
        let a = eot_loss(&x, 2, &enc, &head, &det, 3, &mut PrngStream::derive(0, 0)).unwrap();
        let b = eot_loss(&x, 2, &enc, &head, &det, 7, &mut PrngStream::derive(5, 1)).unwrap();
        assert_eq!(a.0, b.0);
    }
}
