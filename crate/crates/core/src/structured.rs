//! Structured mlp1 initialization for the synthetic task.
//!
//! Hidden units come in two groups. Template units are random combinations
//! of the centered class prototypes, so they carry class identity and are
//! sensitive to rotations and flips. Ring units are radially symmetric
//! zero-mean patterns that ignore the prototypes and respond the same way to
//! an input and to its rotated or flipped copy. Ring units are paired as
//! `tanh(z + b) + tanh(z - b)` sharing one output column, which gives a dead
//! zone around zero: pixel noise barely moves them, while an
//! `L_inf`-bounded perturbation aligned with the ring saturates them.

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{tags, PrngStream};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuredInit {
    /// Share of hidden units used for ring units (rounded down to pairs).
    pub ring_fraction: f64,
    /// Row norm of ring units.
    pub ring_gain: f64,
    /// Half-width `b` of the ring dead zone.
    pub ring_dead_zone: f64,
    /// Ring units are supported on pixels closer than this to the center.
    pub ring_radius: f64,
    pub period_min: f64,
    pub period_max: f64,
    /// Row norm of template units.
    pub template_gain: f64,
    /// Multiplier on the output weights of ring units.
    pub ring_output_gain: f64,
}

impl Default for StructuredInit {
    fn default() -> Self {
        Self {
            ring_fraction: 0.9,
            ring_gain: 10.0,
            ring_dead_zone: 3.0,
            ring_radius: 16.0,
            period_min: 8.0,
            period_max: 20.0,
            template_gain: 0.25,
            ring_output_gain: 1.0,
        }
    }
}

impl StructuredInit {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(0.0..1.0).contains(&self.ring_fraction) {
            return Err(Error::InvalidParameter(format!(
                "ring_fraction {}",
                self.ring_fraction
            )));
        }
        if ![
            self.ring_gain,
            self.template_gain,
            self.ring_radius,
            self.ring_output_gain,
        ]
        .into_iter()
        .all(positive)
        {
            return Err(Error::InvalidParameter(
                "gains and ring radius must be positive".into(),
            ));
        }
        if !(self.ring_dead_zone >= 0.0 && self.ring_dead_zone.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ring_dead_zone {}",
                self.ring_dead_zone
            )));
        }
        if !positive(self.period_min)
            || self.period_max < self.period_min
            || !self.period_max.is_finite()
        {
            return Err(Error::InvalidParameter(
                "ring periods must satisfy 0 < min <= max".into(),
            ));
        }
        Ok(())
    }

    /// Builds an mlp1 encoder from `prototypes`, drawing from the encoder
    /// stream of `seed`.
    pub fn build(
        &self,
        prototypes: &[ImageTensor],
        dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<EncoderParams> {
        self.validate()?;
        let first = prototypes
            .first()
            .ok_or_else(|| Error::InvalidParameter("structured init needs prototypes".into()))?;
        let shape = first.shape();
        for p in prototypes {
            p.check_shape(shape)?;
        }
        let (c, h, w) = shape;
        let n = c * h * w;
        let pairs = ((hidden as f64 * self.ring_fraction) as usize) / 2;
        let ring_units = 2 * pairs;
        if ring_units >= hidden || dim == 0 {
            return Err(Error::InvalidParameter(
                "structured init needs template units and dim > 0".into(),
            ));
        }
        let mut rng = PrngStream::tagged(seed, tags::ENCODER, 1);

        let bins = radius_bins(h, w, self.ring_radius);
        let nbins = bins.iter().flatten().max().map_or(0, |&b| b + 1);
        let counts: Vec<f64> = (0..nbins)
            .map(|b| bins.iter().filter(|&&x| x == Some(b)).count() as f64)
            .collect();
        let centered: Vec<Vec<f64>> = prototypes.iter().map(|p| centered(p.data())).collect();

        // Ring rows live in the span of per-channel radius-bin indicators, so
        // they stay exactly symmetric. Constraints: orthogonal to every
        // centered prototype and to the constant image.
        let mut constraints: Vec<Vec<f64>> = centered
            .iter()
            .map(|p| {
                let mut a = vec![0.0; c * nbins];
                for ch in 0..c {
                    for (pix, bin) in bins.iter().enumerate() {
                        if let Some(b) = bin {
                            a[ch * nbins + b] += p[ch * h * w + pix];
                        }
                    }
                }
                a
            })
            .collect();
        constraints.push((0..c).flat_map(|_| counts.iter().copied()).collect());
        let basis = orthonormal_basis(constraints);

        let mut w1 = vec![0.0; hidden * n];
        let mut b1 = vec![0.0; hidden];
        for pair in 0..pairs {
            let period = rng.uniform(self.period_min, self.period_max);
            let phase = rng.uniform(0.0, TAU);
            let mix: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let mut profile: Vec<f64> = (0..nbins)
                .map(|b| (TAU * (b as f64 + 0.5) / period + phase).cos())
                .collect();
            let mean = profile.iter().zip(&counts).map(|(p, n)| p * n).sum::<f64>()
                / counts.iter().sum::<f64>();
            profile.iter_mut().for_each(|p| *p -= mean);
            let mut coef: Vec<f64> = mix
                .iter()
                .flat_map(|m| profile.iter().map(move |p| m * p))
                .collect();
            for q in &basis {
                let proj = dot(q, &coef);
                coef.iter_mut().zip(q).for_each(|(v, qi)| *v -= proj * qi);
            }
            let mut row = vec![0.0; n];
            for ch in 0..c {
                for (pix, bin) in bins.iter().enumerate() {
                    if let Some(b) = bin {
                        row[ch * h * w + pix] = coef[ch * nbins + b];
                    }
                }
            }
            scale_to(&mut row, self.ring_gain)?;
            for (unit, bias) in [
                (2 * pair, self.ring_dead_zone),
                (2 * pair + 1, -self.ring_dead_zone),
            ] {
                w1[unit * n..(unit + 1) * n].copy_from_slice(&row);
                b1[unit] = bias;
            }
        }
        for unit in ring_units..hidden {
            let mut row = vec![0.0; n];
            for p in &centered {
                let weight = rng.normal();
                row.iter_mut().zip(p).for_each(|(r, v)| *r += weight * v);
            }
            scale_to(&mut row, self.template_gain)?;
            w1[unit * n..(unit + 1) * n].copy_from_slice(&row);
        }

        let s = 1.0 / (hidden as f64).sqrt();
        let mut w2: Vec<f64> = (0..dim * hidden).map(|_| s * rng.normal()).collect();
        for row in w2.chunks_mut(hidden) {
            for pair in 0..pairs {
                row[2 * pair] *= self.ring_output_gain;
                row[2 * pair + 1] = row[2 * pair];
            }
        }
        EncoderParams::mlp1(shape, w1, b1, w2, vec![0.0; dim])
    }
}

/// Integer radius bin of each pixel measured from the image center, or
/// `None` outside `radius`.
fn radius_bins(h: usize, w: usize, radius: f64) -> Vec<Option<usize>> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    (0..h * w)
        .map(|pix| {
            let r = ((pix / w) as f64 - cy).hypot((pix % w) as f64 - cx);
            (r < radius).then_some(r.floor() as usize)
        })
        .collect()
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scale_to(row: &mut [f64], gain: f64) -> Result<()> {
    let norm = dot(row, row).sqrt();
    if norm < 1e-12 {
        return Err(Error::InvalidParameter("degenerate structured row".into()));
    }
    row.iter_mut().for_each(|v| *v *= gain / norm);
    Ok(())
}

/// Modified Gram-Schmidt; near-dependent vectors are dropped.
fn orthonormal_basis(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in vectors {
        let scale = dot(&v, &v).sqrt();
        for q in &basis {
            let proj = dot(q, &v);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 * scale.max(1.0) {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    basis
}
