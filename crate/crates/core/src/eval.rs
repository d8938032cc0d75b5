//! Clean and robust accuracy evaluation, drift-score ROC analysis, parameter
//! sweeps and augmentation-suite ablations.
//!
//! Every sample owns independent attack and defense streams derived from the
//! run seed and the sample index, so results do not depend on the number of
//! worker threads.

use crate::atac::{atac_predict, correct, AtacParams};
use crate::attacks::{
    adaptive_atac_attack, adaptive_ttc_attack, draw_target, pgd_early_stop, pgd_targeted,
    pgd_unsupervised, pgd_untargeted, AdaptiveConfig, AttackResult, PgdConfig, Strategy,
};
use crate::augment::{suite, AugmentationSuite};
use crate::baselines::{ttc_defend, tte_predict, TtcParams};
use crate::encoder::{Encoder, StoreEncoder};
use crate::error::{Error, Result};
use crate::head::{predict, ZeroShotHead};
use crate::image::ImageTensor;
use crate::rng::{tags, PrngStream};
use crate::store::EmbeddingStore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Offset separating adversarial-pass defense streams from clean-pass ones.
const ADV_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    None,
    Atac(AtacParams),
    Tte { suite: AugmentationSuite },
    Ttc(TtcParams),
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::Atac(_) => "atac",
            DefenseSpec::Tte { .. } => "tte",
            DefenseSpec::Ttc(_) => "ttc",
        }
    }

    /// Default settings for a defense named as on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "none" => DefenseSpec::None,
            "atac" => DefenseSpec::Atac(AtacParams::default()),
            "tte" => DefenseSpec::Tte {
                suite: suite("tte9")?,
            },
            "ttc" => DefenseSpec::Ttc(TtcParams::default()),
            other => return Err(Error::Parse(format!("unknown defense `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    None,
    Pgd,
    PgdLarge,
    PgdEarly,
    PgdUnsup,
    PgdTargeted,
    AdaptiveAtacLure,
    AdaptiveAtacAvoid,
    AdaptiveTtcLure,
    AdaptiveTtcAvoid,
}

impl AttackKind {
    pub const ALL: [AttackKind; 10] = [
        AttackKind::None,
        AttackKind::Pgd,
        AttackKind::PgdLarge,
        AttackKind::PgdEarly,
        AttackKind::PgdUnsup,
        AttackKind::PgdTargeted,
        AttackKind::AdaptiveAtacLure,
        AttackKind::AdaptiveAtacAvoid,
        AttackKind::AdaptiveTtcLure,
        AttackKind::AdaptiveTtcAvoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Pgd => "pgd",
            AttackKind::PgdLarge => "pgd-large",
            AttackKind::PgdEarly => "pgd-early",
            AttackKind::PgdUnsup => "pgd-unsup",
            AttackKind::PgdTargeted => "pgd-targeted",
            AttackKind::AdaptiveAtacLure => "adaptive-atac-lure",
            AttackKind::AdaptiveAtacAvoid => "adaptive-atac-avoid",
            AttackKind::AdaptiveTtcLure => "adaptive-ttc-lure",
            AttackKind::AdaptiveTtcAvoid => "adaptive-ttc-avoid",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown attack `{s}`")))
    }
}

/// An attack and all of its settings. Adaptive attacks use `atac` or `ttc` as
/// their model of the defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub pgd: PgdConfig,
    pub gate_temp: f64,
    pub lambda: f64,
    pub atac: AtacParams,
    pub ttc: TtcParams,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        let pgd = if kind == AttackKind::PgdLarge {
            PgdConfig::large_eps()
        } else {
            PgdConfig::default()
        };
        Self {
            kind,
            pgd,
            gate_temp: 40.0,
            lambda: 1.0,
            atac: AtacParams::default(),
            ttc: TtcParams::attack_surrogate(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn adaptive(&self, strategy: Strategy) -> AdaptiveConfig {
        AdaptiveConfig {
            base: self.pgd,
            gate_temp: self.gate_temp,
            lambda: self.lambda,
            strategy,
        }
    }

    /// Attacks one sample with its own stream.
    pub fn run<E: Encoder + ?Sized>(
        &self,
        x: &ImageTensor,
        y: usize,
        encoder: &E,
        head: &ZeroShotHead,
        seed: u64,
        index: u64,
    ) -> Result<AttackResult> {
        let mut rng = PrngStream::tagged(seed, tags::ATTACK, index);
        match self.kind {
            AttackKind::None => {
                let f = encoder.encode(x)?.embedding;
                let label = predict(f.as_slice(), head)?.label_index;
                Ok(AttackResult {
                    x_adv: x.clone(),
                    success: label != y,
                    steps_used: 0,
                    loss_trace: Vec::new(),
                    encoder_calls: 1,
                })
            }
            AttackKind::Pgd | AttackKind::PgdLarge => {
                pgd_untargeted(x, y, encoder, head, &self.pgd, &mut rng)
            }
            AttackKind::PgdEarly => pgd_early_stop(x, y, encoder, head, &self.pgd, &mut rng),
            AttackKind::PgdUnsup => pgd_unsupervised(x, y, encoder, head, &self.pgd, &mut rng),
            AttackKind::PgdTargeted => {
                let mut trng = PrngStream::tagged(seed, tags::TARGET, index);
                let target = draw_target(y, head.num_classes(), &mut trng);
                pgd_targeted(x, y, Some(target), encoder, head, &self.pgd, &mut rng)
            }
            AttackKind::AdaptiveAtacLure | AttackKind::AdaptiveAtacAvoid => {
                let strategy = if self.kind == AttackKind::AdaptiveAtacLure {
                    Strategy::Lure
                } else {
                    Strategy::Avoid
                };
                adaptive_atac_attack(
                    x,
                    y,
                    encoder,
                    head,
                    &self.atac,
                    &self.adaptive(strategy),
                    &mut rng,
                )
            }
            AttackKind::AdaptiveTtcLure | AttackKind::AdaptiveTtcAvoid => {
                let strategy = if self.kind == AttackKind::AdaptiveTtcLure {
                    Strategy::Lure
                } else {
                    Strategy::Avoid
                };
                adaptive_ttc_attack(
                    x,
                    y,
                    encoder,
                    head,
                    &self.ttc,
                    &self.adaptive(strategy),
                    &mut rng,
                )
            }
        }
    }
}

/// Runs `f` over `0..n`, on a dedicated pool when `jobs > 1`. Output order
/// always follows the index.
pub fn par_map<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Adversarial inputs for one (attack, seed) pair, reusable across defenses
/// that the attack does not model.
#[derive(Debug, Clone)]
pub struct AttackedSet {
    pub attack: AttackSpec,
    pub seed: u64,
    pub x_adv: Vec<ImageTensor>,
    pub success: Vec<bool>,
    pub encoder_calls: usize,
}

pub fn run_attack<E: Encoder + ?Sized>(
    samples: &[ImageTensor],
    labels: &[usize],
    encoder: &E,
    head: &ZeroShotHead,
    attack: &AttackSpec,
    seed: u64,
    jobs: usize,
) -> Result<AttackedSet> {
    check_lengths(samples, labels)?;
    let results = par_map(samples.len(), jobs, |i| {
        attack.run(&samples[i], labels[i], encoder, head, seed, i as u64)
    })?;
    let encoder_calls = results.iter().map(|r| r.encoder_calls).sum();
    let success = results.iter().map(|r| r.success).collect();
    let x_adv = results.into_iter().map(|r| r.x_adv).collect();
    Ok(AttackedSet {
        attack: attack.clone(),
        seed,
        x_adv,
        success,
        encoder_calls,
    })
}

fn check_lengths(samples: &[ImageTensor], labels: &[usize]) -> Result<()> {
    if samples.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples to evaluate".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefenseOutcome {
    pub label: usize,
    /// Drift score (ATAC) or probe drift (TTC).
    pub tau: Option<f64>,
    pub fired: Option<bool>,
    pub encoder_calls: usize,
}

/// Classifies `x` under `defense`.
pub fn defend<E: Encoder + ?Sized>(
    x: &ImageTensor,
    encoder: &E,
    head: &ZeroShotHead,
    defense: &DefenseSpec,
    rng: &mut PrngStream,
) -> Result<DefenseOutcome> {
    match defense {
        DefenseSpec::None => {
            let f = encoder.encode(x)?.embedding;
            Ok(DefenseOutcome {
                label: predict(f.as_slice(), head)?.label_index,
                tau: None,
                fired: None,
                encoder_calls: 1,
            })
        }
        DefenseSpec::Atac(params) => {
            let out = atac_predict(x, encoder, head, params, rng)?;
            Ok(DefenseOutcome {
                label: out.prediction.label_index,
                tau: Some(out.outcome.tau),
                fired: Some(out.outcome.fired),
                encoder_calls: out.encoder_calls,
            })
        }
        DefenseSpec::Tte { suite } => {
            let out = tte_predict(x, encoder, head, suite, rng)?;
            Ok(DefenseOutcome {
                label: out.prediction.label_index,
                tau: None,
                fired: None,
                encoder_calls: out.encoder_calls,
            })
        }
        DefenseSpec::Ttc(params) => {
            let out = ttc_defend(x, encoder, params, rng)?;
            let f = encoder.encode(&out.x_defended)?.embedding;
            Ok(DefenseOutcome {
                label: predict(f.as_slice(), head)?.label_index,
                tau: Some(out.tau_hat),
                fired: Some(out.fired),
                encoder_calls: out.encoder_calls + 1,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub defense: String,
    pub attack: String,
    pub seed: u64,
    pub samples: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    /// Fraction of samples the attack pushed off the true label on the
    /// undefended pipeline.
    pub attack_success_rate: f64,
    pub tau_clean: Vec<f64>,
    pub tau_adv: Vec<f64>,
    pub gate_fire_rate_clean: f64,
    pub gate_fire_rate_adv: f64,
    pub encoder_calls_per_sample: f64,
    pub attack_encoder_calls_per_sample: f64,
    pub predictions_clean: Vec<usize>,
    pub predictions_adv: Vec<usize>,
    pub config: serde_json::Value,
    /// Excluded from serialized reports so they stay byte-reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hit += usize::from(f);
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Runs `defense` on the clean samples and on a precomputed attacked set.
pub fn evaluate_attacked<E: Encoder + ?Sized>(
    samples: &[ImageTensor],
    labels: &[usize],
    attacked: &AttackedSet,
    encoder: &E,
    head: &ZeroShotHead,
    defense: &DefenseSpec,
    jobs: usize,
) -> Result<EvalReport> {
    check_lengths(samples, labels)?;
    if attacked.x_adv.len() != samples.len() {
        return Err(Error::InvalidParameter(
            "attacked set does not match the samples".into(),
        ));
    }
    let start = Instant::now();
    let seed = attacked.seed;
    let n = samples.len();
    let clean = par_map(n, jobs, |i| {
        let mut rng = PrngStream::tagged(seed, tags::DEFENSE, i as u64);
        defend(&samples[i], encoder, head, defense, &mut rng)
    })?;
    let adv = if attacked.attack.kind == AttackKind::None {
        clean.clone()
    } else {
        par_map(n, jobs, |i| {
            let mut rng = PrngStream::tagged(seed, tags::DEFENSE, ADV_STREAM_OFFSET + i as u64);
            defend(&attacked.x_adv[i], encoder, head, defense, &mut rng)
        })?
    };
    let accuracy =
        |outs: &[DefenseOutcome]| fraction(outs.iter().zip(labels).map(|(o, &y)| o.label == y));
    let taus = |outs: &[DefenseOutcome]| outs.iter().filter_map(|o| o.tau).collect::<Vec<_>>();
    let fire = |outs: &[DefenseOutcome]| fraction(outs.iter().map(|o| o.fired.unwrap_or(false)));
    let config = serde_json::json!({ "defense": defense, "attack": attacked.attack });
    Ok(EvalReport {
        defense: defense.name().to_string(),
        attack: attacked.attack.name().to_string(),
        seed,
        samples: n,
        clean_accuracy: accuracy(&clean),
        robust_accuracy: accuracy(&adv),
        attack_success_rate: fraction(attacked.success.iter().copied()),
        tau_clean: taus(&clean),
        tau_adv: taus(&adv),
        gate_fire_rate_clean: fire(&clean),
        gate_fire_rate_adv: fire(&adv),
        encoder_calls_per_sample: clean.iter().map(|o| o.encoder_calls).sum::<usize>() as f64
            / n as f64,
        attack_encoder_calls_per_sample: attacked.encoder_calls as f64 / n as f64,
        predictions_clean: clean.iter().map(|o| o.label).collect(),
        predictions_adv: adv.iter().map(|o| o.label).collect(),
        config,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Attacks, then evaluates `defense` on clean and attacked inputs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<E: Encoder + ?Sized>(
    samples: &[ImageTensor],
    labels: &[usize],
    encoder: &E,
    head: &ZeroShotHead,
    defense: &DefenseSpec,
    attack: &AttackSpec,
    seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    let start = Instant::now();
    let attacked = run_attack(samples, labels, encoder, head, attack, seed, jobs)?;
    let mut report = evaluate_attacked(samples, labels, &attacked, encoder, head, defense, jobs)?;
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Area under the ROC curve of "adversarial iff score >= threshold", via the
/// Mann-Whitney statistic with half credit for ties.
pub fn roc_auc(scores_clean: &[f64], scores_adv: &[f64]) -> Result<f64> {
    if scores_clean.is_empty() || scores_adv.is_empty() {
        return Err(Error::InvalidParameter(
            "ROC needs both clean and adversarial scores".into(),
        ));
    }
    if scores_clean.iter().chain(scores_adv).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_clean
        .iter()
        .map(|&s| (s, false))
        .chain(scores_adv.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks of the adversarial scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (n_adv, n_clean) = (scores_adv.len() as f64, scores_clean.len() as f64);
    Ok((rank_sum - n_adv * (n_adv + 1.0) / 2.0) / (n_adv * n_clean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points at every distinct score, plus the `(0, 0)` and `(1, 1)` ends.
pub fn roc_curve(scores_clean: &[f64], scores_adv: &[f64]) -> Result<Vec<RocPoint>> {
    roc_auc(scores_clean, scores_adv)?;
    let mut thresholds: Vec<f64> = scores_clean.iter().chain(scores_adv).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |scores: &[f64], t: f64| {
        scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64
    };
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for t in thresholds {
        points.push(RocPoint {
            threshold: t,
            fpr: rate(scores_clean, t),
            tpr: rate(scores_adv, t),
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    TauStar,
    Alpha,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau_star" | "tau-star" => Ok(Self::TauStar),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::Parse(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: EvalReport,
}

/// Evaluates the correction defense at each grid value, reusing one attacked set.
#[allow(clippy::too_many_arguments)]
pub fn sweep<E: Encoder + ?Sized>(
    parameter: SweepParameter,
    grid: &[f64],
    samples: &[ImageTensor],
    labels: &[usize],
    attacked: &AttackedSet,
    encoder: &E,
    head: &ZeroShotHead,
    base: &AtacParams,
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }
    grid.iter()
        .map(|&value| {
            let params = match parameter {
                SweepParameter::TauStar => base.with_tau_star(value),
                SweepParameter::Alpha => base.with_alpha(value),
            };
            params.validate()?;
            let report = evaluate_attacked(
                samples,
                labels,
                attacked,
                encoder,
                head,
                &DefenseSpec::Atac(params),
                jobs,
            )?;
            Ok(SweepPoint { value, report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub suite: String,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub report: EvalReport,
}

/// Evaluates the correction defense with each named suite against one
/// attacked set.
#[allow(clippy::too_many_arguments)]
pub fn ablate_suites<E: Encoder + ?Sized>(
    names: &[&str],
    samples: &[ImageTensor],
    labels: &[usize],
    attacked: &AttackedSet,
    encoder: &E,
    head: &ZeroShotHead,
    base: &AtacParams,
    jobs: usize,
) -> Result<Vec<SuiteRow>> {
    names
        .iter()
        .map(|&name| {
            let params = AtacParams {
                suite: suite(name)?,
                ..base.clone()
            };
            let report = evaluate_attacked(
                samples,
                labels,
                attacked,
                encoder,
                head,
                &DefenseSpec::Atac(params),
                jobs,
            )?;
            Ok(SuiteRow {
                suite: name.to_string(),
                clean_accuracy: report.clean_accuracy,
                robust_accuracy: report.robust_accuracy,
                report,
            })
        })
        .collect()
}

/// Ordering checks over suite rows: default and asymmetric within
/// `tolerance`, and color < random < default. Missing suites fail.
pub fn suite_orderings(rows: &[SuiteRow], tolerance: f64) -> Vec<(String, bool)> {
    let get = |name: &str| {
        rows.iter()
            .find(|r| r.suite == name)
            .map(|r| r.robust_accuracy)
    };
    let mut checks = Vec::new();
    let gap = match (get("default"), get("asymmetric")) {
        (Some(d), Some(a)) => (d - a).abs() <= tolerance,
        _ => false,
    };
    checks.push(("default ~ asymmetric".to_string(), gap));
    let order = match (get("color"), get("random"), get("default")) {
        (Some(c), Some(r), Some(d)) => c < r && r < d,
        _ => false,
    };
    checks.push(("color < random < default".to_string(), order));
    checks
}

/// Fraction of positions where two prediction lists agree.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    fraction(a.iter().zip(b).map(|(x, y)| x == y))
}

/// View id of the unaugmented input in exported stores.
pub const ORIGINAL_VIEW: &str = "orig";

/// Encodes every sample and its suite views into a store, realizing random
/// suites with the same streams as the clean evaluation pass.
pub fn export_embeddings<E: Encoder + ?Sized>(
    samples: &[ImageTensor],
    encoder: &E,
    suite: &AugmentationSuite,
    seed: u64,
) -> Result<EmbeddingStore> {
    let ids = suite.view_ids();
    let mut store = EmbeddingStore::new(encoder.dim());
    for (i, x) in samples.iter().enumerate() {
        let mut rng = PrngStream::tagged(seed, tags::DEFENSE, i as u64);
        let realized = suite.realize(&mut rng)?;
        store.insert(
            i as u64,
            ORIGINAL_VIEW,
            encoder.encode(x)?.embedding.as_slice(),
        )?;
        for (id, r) in ids.iter().zip(&realized) {
            store.insert(
                i as u64,
                id,
                encoder.encode(&r.apply(x)?)?.embedding.as_slice(),
            )?;
        }
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorePrediction {
    pub label: usize,
    pub tau: f64,
    pub fired: bool,
}

/// Runs the correction on stored embeddings only.
pub fn atac_from_store(
    store: &StoreEncoder,
    sample_ids: &[u64],
    head: &ZeroShotHead,
    params: &AtacParams,
) -> Result<Vec<StorePrediction>> {
    let ids = params.suite.view_ids();
    sample_ids
        .iter()
        .map(|&sid| {
            let f_x = store.lookup(sid, ORIGINAL_VIEW)?.embedding;
            let views = ids
                .iter()
                .map(|id| Ok(store.lookup(sid, id)?.embedding))
                .collect::<Result<Vec<_>>>()?;
            let out = correct(&f_x, &views, params)?;
            Ok(StorePrediction {
                label: predict(out.corrected.as_slice(), head)?.label_index,
                tau: out.tau,
                fired: out.fired,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(clean: &[f64], adv: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in adv {
            for &c in clean {
                s += if a > c {
                    1.0
                } else if a == c {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (clean.len() * adv.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3, 0.5, 0.7], &[0.3, 0.5, 0.7]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.2], &[0.15, 0.9]).unwrap(), 0.75);
        assert!(roc_auc(&[], &[0.1]).is_err());
    }

    #[test]
    fn auc_matches_pair_count_with_ties() {
        let mut rng = PrngStream::derive(3, 3);
        for _ in 0..20 {
            let clean: Vec<f64> = (0..37).map(|_| (rng.below(10) as f64) / 10.0).collect();
            let adv: Vec<f64> = (0..23).map(|_| (rng.below(12) as f64) / 10.0).collect();
            assert!((roc_auc(&clean, &adv).unwrap() - brute_auc(&clean, &adv)).abs() < 1e-12);
        }
    }

    #[test]
    fn roc_curve_shape() {
        let pts = roc_curve(&[0.1, 0.2, 0.2], &[0.2, 0.9]).unwrap();
        // Distinct thresholds {0.9, 0.2, 0.1} plus two endpoints.
        assert_eq!(pts.len(), 5);
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        assert_eq!((pts[1].fpr, pts[1].tpr), (0.0, 0.5));
        assert_eq!((pts[2].fpr, pts[2].tpr), (2.0 / 3.0, 1.0));
        assert_eq!((pts[4].fpr, pts[4].tpr), (1.0, 1.0));
    }

    #[test]
    fn attack_names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert!("pgd-l2".parse::<AttackKind>().is_err());
        assert!(DefenseSpec::from_name("rtpt").is_err());
    }

    #[test]
    fn agreement_counts() {
        assert_eq!(agreement(&[1, 2, 3, 4], &[1, 2, 0, 4]), 0.75);
    }
}
