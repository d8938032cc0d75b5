//! Image augmentations with exact vector-Jacobian products, and the named
//! augmentation suites.
//!
//! An [`AugmentationSpec`] is turned into a [`RealizedAug`] by drawing whatever
//! randomness it needs from a [`PrngStream`]. The realized transform is then a
//! fixed, piecewise-differentiable map; its forward pass and its VJP always
//! agree because they share the drawn parameters.
//!
//! Geometric transforms use inverse-mapped bilinear sampling with edge-clamped
//! coordinates, so constant images are preserved exactly.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::PrngStream;
use serde::{Deserialize, Serialize};

/// Luma weights shared by contrast, saturation and hue adjustments.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Pre-clamp values within this distance of `[0, 1]` keep their gradient.
const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    fn short(self) -> &'static str {
        match self {
            Corner::Center => "c",
            Corner::TopLeft => "tl",
            Corner::TopRight => "tr",
            Corner::BottomLeft => "bl",
            Corner::BottomRight => "br",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugKind {
    Hflip,
    Vflip,
    Rotate {
        degrees: f64,
    },
    /// Random jitter. Brightness, contrast and saturation factors are drawn
    /// from `1 ± delta`; hue is rotated by `± hue_degrees`.
    ColorJitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue_degrees: f64,
    },
    /// Crop of `scale` times each side at `corner`, resized back to the input
    /// geometry; `mirrored` applies a horizontal flip afterwards.
    CropResize {
        corner: Corner,
        scale: f64,
        mirrored: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    #[serde(flatten)]
    pub kind: AugKind,
    /// Probability of applying the transform; otherwise the view is the
    /// identity. `1.0` is deterministic.
    pub probability: f64,
}

impl AugmentationSpec {
    pub fn new(kind: AugKind) -> Self {
        Self {
            kind,
            probability: 1.0,
        }
    }

    pub fn hflip() -> Self {
        Self::new(AugKind::Hflip)
    }

    pub fn vflip() -> Self {
        Self::new(AugKind::Vflip)
    }

    pub fn rotate(degrees: f64) -> Self {
        Self::new(AugKind::Rotate { degrees })
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.probability = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidParameter(format!(
                "augmentation probability {}",
                self.probability
            )));
        }
        match &self.kind {
            AugKind::Rotate { degrees } if !degrees.is_finite() => Err(Error::InvalidParameter(
                format!("rotation degrees {degrees}"),
            )),
            AugKind::CropResize { scale, .. } if !(*scale > 0.0 && *scale <= 1.0) => {
                Err(Error::InvalidParameter(format!("crop scale {scale}")))
            }
            AugKind::ColorJitter {
                brightness,
                contrast,
                saturation,
                hue_degrees,
            } if [*brightness, *contrast, *saturation]
                .iter()
                .any(|d| !(0.0..1.0).contains(d))
                || !hue_degrees.is_finite() =>
            {
                Err(Error::InvalidParameter("color jitter ranges".into()))
            }
            _ => Ok(()),
        }
    }

    /// True when realizing this spec consumes randomness.
    pub fn is_random(&self) -> bool {
        self.probability < 1.0 || matches!(self.kind, AugKind::ColorJitter { .. })
    }

    /// Short human-readable name, e.g. `rot+15` or `crop_tl_0.9`.
    pub fn name(&self) -> String {
        let base = match &self.kind {
            AugKind::Hflip => "hflip".to_string(),
            AugKind::Vflip => "vflip".to_string(),
            AugKind::Rotate { degrees } => format!("rot{degrees:+}"),
            AugKind::ColorJitter { .. } => "jitter".to_string(),
            AugKind::CropResize {
                corner,
                scale,
                mirrored,
            } => format!(
                "{}crop_{}_{scale}",
                if *mirrored { "hflip_" } else { "" },
                corner.short()
            ),
        };
        if self.probability < 1.0 {
            format!("{base}@p{}", self.probability)
        } else {
            base
        }
    }

    /// Draws this spec's random parameters.
    pub fn realize(&self, rng: &mut PrngStream) -> Result<RealizedAug> {
        self.validate()?;
        if self.probability < 1.0 {
            let u = rng.next_f64();
            if u >= self.probability {
                return Ok(RealizedAug::Identity);
            }
        }
        Ok(match &self.kind {
            AugKind::Hflip => RealizedAug::Hflip,
            AugKind::Vflip => RealizedAug::Vflip,
            AugKind::Rotate { degrees } => RealizedAug::Rotate { degrees: *degrees },
            AugKind::ColorJitter {
                brightness,
                contrast,
                saturation,
                hue_degrees,
            } => RealizedAug::Jitter(JitterParams {
                brightness: rng.uniform(1.0 - brightness, 1.0 + brightness),
                contrast: rng.uniform(1.0 - contrast, 1.0 + contrast),
                saturation: rng.uniform(1.0 - saturation, 1.0 + saturation),
                hue_degrees: rng.uniform(-hue_degrees, *hue_degrees),
            }),
            AugKind::CropResize {
                corner,
                scale,
                mirrored,
            } => RealizedAug::CropResize {
                corner: *corner,
                scale: *scale,
                mirrored: *mirrored,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_degrees: f64,
}

/// A transform with all randomness resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RealizedAug {
    Identity,
    Hflip,
    Vflip,
    Rotate {
        degrees: f64,
    },
    Jitter(JitterParams),
    CropResize {
        corner: Corner,
        scale: f64,
        mirrored: bool,
    },
}

impl RealizedAug {
    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        match self {
            RealizedAug::Identity => Ok(x.clone()),
            RealizedAug::Hflip => Ok(hflip(x)),
            RealizedAug::Vflip => Ok(vflip(x)),
            RealizedAug::Rotate { degrees } => {
                let map = SampleMap::rotation(x.height(), x.width(), *degrees);
                Ok(map.forward(x))
            }
            RealizedAug::CropResize {
                corner,
                scale,
                mirrored,
            } => {
                let map = SampleMap::crop(x.height(), x.width(), *corner, *scale);
                let out = map.forward(x);
                Ok(if *mirrored { hflip(&out) } else { out })
            }
            RealizedAug::Jitter(p) => Ok(jitter_forward(p, x)?.0),
        }
    }

    /// `J^T upstream`, where `J` is the Jacobian of [`RealizedAug::apply`] at `x`.
    pub fn vjp(&self, x: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        upstream.check_shape(x.shape())?;
        match self {
            RealizedAug::Identity => Ok(upstream.clone()),
            RealizedAug::Hflip => Ok(hflip(upstream)),
            RealizedAug::Vflip => Ok(vflip(upstream)),
            RealizedAug::Rotate { degrees } => {
                let map = SampleMap::rotation(x.height(), x.width(), *degrees);
                Ok(map.transpose(upstream))
            }
            RealizedAug::CropResize {
                corner,
                scale,
                mirrored,
            } => {
                let map = SampleMap::crop(x.height(), x.width(), *corner, *scale);
                let g = if *mirrored {
                    hflip(upstream)
                } else {
                    upstream.clone()
                };
                Ok(map.transpose(&g))
            }
            RealizedAug::Jitter(p) => jitter_vjp(p, x, upstream),
        }
    }
}

/// Applies `spec` to `x`, drawing randomness from `rng` when required.
pub fn apply(
    spec: &AugmentationSpec,
    x: &ImageTensor,
    rng: &mut PrngStream,
) -> Result<ImageTensor> {
    spec.realize(rng)?.apply(x)
}

/// VJP of a previously realized transform.
pub fn apply_vjp(
    realized: &RealizedAug,
    x: &ImageTensor,
    upstream: &ImageTensor,
) -> Result<ImageTensor> {
    realized.vjp(x, upstream)
}

pub fn hflip(x: &ImageTensor) -> ImageTensor {
    let (c, h, w) = x.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    let src = x.data();
    let dst = out.data_mut();
    for row in 0..c * h {
        let base = row * w;
        for col in 0..w {
            dst[base + col] = src[base + w - 1 - col];
        }
    }
    out
}

pub fn vflip(x: &ImageTensor) -> ImageTensor {
    let (c, h, w) = x.shape();
    let mut out = ImageTensor::zeros(c, h, w);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for row in 0..h {
            let s = (ch * h + (h - 1 - row)) * w;
            let d = (ch * h + row) * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

/// Bilinear sampling taps for one output pixel.
#[derive(Debug, Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

/// Per-pixel inverse map shared by every channel.
struct SampleMap {
    height: usize,
    width: usize,
    taps: Vec<Tap>,
}

impl SampleMap {
    fn from_fn(height: usize, width: usize, source: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut taps = Vec::with_capacity(height * width);
        let (ymax, xmax) = ((height - 1) as f64, (width - 1) as f64);
        for y in 0..height {
            for x in 0..width {
                let (sy, sx) = source(y as f64, x as f64);
                let sy = sy.clamp(0.0, ymax);
                let sx = sx.clamp(0.0, xmax);
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                taps.push(Tap {
                    x0,
                    x1: (x0 + 1).min(width - 1),
                    y0,
                    y1: (y0 + 1).min(height - 1),
                    fx: sx - x0 as f64,
                    fy: sy - y0 as f64,
                });
            }
        }
        Self {
            height,
            width,
            taps,
        }
    }

    /// Content rotated counter-clockwise by `degrees` about the image center.
    fn rotation(height: usize, width: usize, degrees: f64) -> Self {
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        Self::from_fn(height, width, |y, x| {
            let (dy, dx) = (y - cy, x - cx);
            (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
        })
    }

    fn crop(height: usize, width: usize, corner: Corner, scale: f64) -> Self {
        let ch = scale * height as f64;
        let cw = scale * width as f64;
        let (oy, ox) = match corner {
            Corner::TopLeft => (0.0, 0.0),
            Corner::TopRight => (0.0, width as f64 - cw),
            Corner::BottomLeft => (height as f64 - ch, 0.0),
            Corner::BottomRight => (height as f64 - ch, width as f64 - cw),
            Corner::Center => ((height as f64 - ch) / 2.0, (width as f64 - cw) / 2.0),
        };
        let ky = if height > 1 {
            (ch - 1.0).max(0.0) / (height as f64 - 1.0)
        } else {
            0.0
        };
        let kx = if width > 1 {
            (cw - 1.0).max(0.0) / (width as f64 - 1.0)
        } else {
            0.0
        };
        Self::from_fn(height, width, |y, x| (oy + ky * y, ox + kx * x))
    }

    fn forward(&self, x: &ImageTensor) -> ImageTensor {
        let (c, h, w) = x.shape();
        debug_assert_eq!((h, w), (self.height, self.width));
        let mut out = ImageTensor::zeros(c, h, w);
        let plane = h * w;
        let src = x.data();
        let dst = out.data_mut();
        for ch in 0..c {
            let s = &src[ch * plane..(ch + 1) * plane];
            for (p, t) in self.taps.iter().enumerate() {
                let a = s[t.y0 * w + t.x0];
                let b = s[t.y0 * w + t.x1];
                let cc = s[t.y1 * w + t.x0];
                let d = s[t.y1 * w + t.x1];
                // Lerp form keeps constant fields bit-exact.
                let top = a + t.fx * (b - a);
                let bottom = cc + t.fx * (d - cc);
                dst[ch * plane + p] = (top + t.fy * (bottom - top)).clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Scatters `upstream` back through the sampling weights. Bilinear
    /// combinations of in-range pixels never activate the output clamp beyond
    /// rounding, so the clamp contributes no mask here.
    fn transpose(&self, upstream: &ImageTensor) -> ImageTensor {
        let (c, h, w) = upstream.shape();
        let mut out = ImageTensor::zeros(c, h, w);
        let plane = h * w;
        let g = upstream.data();
        let dst = out.data_mut();
        for ch in 0..c {
            let base = ch * plane;
            for (p, t) in self.taps.iter().enumerate() {
                let gv = g[base + p];
                if gv == 0.0 {
                    continue;
                }
                let (fx, fy) = (t.fx, t.fy);
                dst[base + t.y0 * w + t.x0] += gv * (1.0 - fx) * (1.0 - fy);
                dst[base + t.y0 * w + t.x1] += gv * fx * (1.0 - fy);
                dst[base + t.y1 * w + t.x0] += gv * (1.0 - fx) * fy;
                dst[base + t.y1 * w + t.x1] += gv * fx * fy;
            }
        }
        out
    }
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    // RGB -> YIQ, rotate the chroma plane, YIQ -> RGB.
    const TO_YIQ: [[f64; 3]; 3] = [
        [0.299, 0.587, 0.114],
        [0.595_716, -0.274_453, -0.321_263],
        [0.211_456, -0.522_591, 0.311_135],
    ];
    const TO_RGB: [[f64; 3]; 3] = [
        [1.0, 0.956_3, 0.621_0],
        [1.0, -0.272_1, -0.647_4],
        [1.0, -1.106_9, 1.704_6],
    ];
    let (s, c) = degrees.to_radians().sin_cos();
    let rot = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
    let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    mul(&TO_RGB, &mul(&rot, &TO_YIQ))
}

/// Pixel-wise luma for 3-channel images, the single channel otherwise.
fn luma(x: &ImageTensor) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let plane = h * w;
    if c == 3 {
        (0..plane)
            .map(|p| (0..3).map(|k| LUMA[k] * x.data()[k * plane + p]).sum())
            .collect()
    } else {
        x.data()[..plane].to_vec()
    }
}

fn clamp_with_mask(x: &mut ImageTensor) -> Vec<bool> {
    x.data_mut()
        .iter_mut()
        .map(|v| {
            let keep = (-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(v);
            *v = v.clamp(0.0, 1.0);
            keep
        })
        .collect()
}

/// Input of one jitter stage and its clamp mask.
type JitterStage = (ImageTensor, Vec<bool>);

/// Runs brightness, contrast, saturation and hue in order, clamping after each.
/// Returns the output plus the intermediate inputs and clamp masks.
fn jitter_forward(p: &JitterParams, x: &ImageTensor) -> Result<(ImageTensor, Vec<JitterStage>)> {
    let (c, h, w) = x.shape();
    if c != 1 && c != 3 {
        return Err(Error::UnsupportedKind(format!(
            "color jitter on {c}-channel images"
        )));
    }
    let plane = h * w;
    let mut tape = Vec::with_capacity(4);

    // brightness
    let mut y = x.clone();
    y.scale(p.brightness);
    let m = clamp_with_mask(&mut y);
    tape.push((x.clone(), m));

    // contrast around the mean luma
    let input = y.clone();
    let mean = luma(&input).iter().sum::<f64>() / plane as f64;
    for v in y.data_mut() {
        *v = p.contrast * *v + (1.0 - p.contrast) * mean;
    }
    let m = clamp_with_mask(&mut y);
    tape.push((input, m));

    if c == 3 {
        // saturation: blend with per-pixel luma
        let input = y.clone();
        let gray = luma(&input);
        for k in 0..3 {
            for (px, g) in gray.iter().enumerate() {
                let v = &mut y.data_mut()[k * plane + px];
                *v = p.saturation * *v + (1.0 - p.saturation) * g;
            }
        }
        let m = clamp_with_mask(&mut y);
        tape.push((input, m));

        // hue: chroma rotation in YIQ
        let input = y.clone();
        let hm = hue_matrix(p.hue_degrees);
        for px in 0..plane {
            let rgb = [
                input.data()[px],
                input.data()[plane + px],
                input.data()[2 * plane + px],
            ];
            for (k, row) in hm.iter().enumerate() {
                y.data_mut()[k * plane + px] = row.iter().zip(&rgb).map(|(m, v)| m * v).sum();
            }
        }
        let m = clamp_with_mask(&mut y);
        tape.push((input, m));
    }
    Ok((y, tape))
}

fn jitter_vjp(p: &JitterParams, x: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
    let (c, h, w) = x.shape();
    let plane = h * w;
    let (_, tape) = jitter_forward(p, x)?;
    let mut g = upstream.clone();
    let mask = |g: &mut ImageTensor, m: &[bool]| {
        for (v, keep) in g.data_mut().iter_mut().zip(m) {
            if !keep {
                *v = 0.0;
            }
        }
    };

    if c == 3 {
        // hue
        mask(&mut g, &tape[3].1);
        let hm = hue_matrix(p.hue_degrees);
        let mut ng = ImageTensor::zeros(c, h, w);
        for px in 0..plane {
            let gv = [g.data()[px], g.data()[plane + px], g.data()[2 * plane + px]];
            for j in 0..3 {
                ng.data_mut()[j * plane + px] = hm.iter().zip(&gv).map(|(row, g)| row[j] * g).sum();
            }
        }
        g = ng;

        // saturation
        mask(&mut g, &tape[2].1);
        let mut ng = g.clone();
        ng.scale(p.saturation);
        for px in 0..plane {
            let sum: f64 = (0..3).map(|k| g.data()[k * plane + px]).sum();
            for (j, wj) in LUMA.iter().enumerate() {
                ng.data_mut()[j * plane + px] += (1.0 - p.saturation) * wj * sum;
            }
        }
        g = ng;
    }

    // contrast
    mask(&mut g, &tape[1].1);
    let total: f64 = g.data().iter().sum();
    let mut ng = g.clone();
    ng.scale(p.contrast);
    let spread = (1.0 - p.contrast) * total / plane as f64;
    if c == 3 {
        for (j, wj) in LUMA.iter().enumerate() {
            for v in &mut ng.data_mut()[j * plane..(j + 1) * plane] {
                *v += spread * wj;
            }
        }
    } else {
        for v in ng.data_mut() {
            *v += spread;
        }
    }
    g = ng;

    // brightness
    mask(&mut g, &tape[0].1);
    g.scale(p.brightness);
    Ok(g)
}

/// An ordered list of augmentations used to produce views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSuite {
    pub name: String,
    pub specs: Vec<AugmentationSpec>,
}

impl AugmentationSuite {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn is_deterministic(&self) -> bool {
        self.specs.iter().all(|s| !s.is_random())
    }

    /// Stable per-view identifiers, `"{index}_{name}"`.
    pub fn view_ids(&self) -> Vec<String> {
        self.specs
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{i}_{}", s.name()))
            .collect()
    }

    /// Realizes every spec in order from `rng`.
    pub fn realize(&self, rng: &mut PrngStream) -> Result<Vec<RealizedAug>> {
        self.specs.iter().map(|s| s.realize(rng)).collect()
    }
}

pub const SUITE_NAMES: [&str; 6] = ["default", "asymmetric", "random", "color", "more", "tte9"];

fn rotations(degrees: &[f64]) -> impl Iterator<Item = AugmentationSpec> + '_ {
    degrees.iter().map(|&d| AugmentationSpec::rotate(d))
}

/// Named augmentation suites.
pub fn suite(name: &str) -> Result<AugmentationSuite> {
    let specs: Vec<AugmentationSpec> = match name {
        "default" => std::iter::once(AugmentationSpec::hflip())
            .chain(rotations(&[15.0, -15.0, 30.0, -30.0]))
            .collect(),
        "asymmetric" => std::iter::once(AugmentationSpec::hflip())
            .chain(rotations(&[15.0, -20.0, -25.0, 30.0]))
            .collect(),
        "random" => suite("default")?
            .specs
            .into_iter()
            .map(|s| s.with_probability(0.5))
            .collect(),
        "color" => (0..5)
            .map(|_| {
                AugmentationSpec::new(AugKind::ColorJitter {
                    brightness: 0.4,
                    contrast: 0.4,
                    saturation: 0.4,
                    hue_degrees: 15.0,
                })
            })
            .collect(),
        "more" => [AugmentationSpec::hflip(), AugmentationSpec::vflip()]
            .into_iter()
            .chain(rotations(&[
                15.0, -15.0, 20.0, -20.0, 25.0, -25.0, 30.0, -30.0,
            ]))
            .collect(),
        "tte9" => {
            let corners = [
                Corner::TopLeft,
                Corner::TopRight,
                Corner::BottomLeft,
                Corner::BottomRight,
            ];
            let crop = |corner, mirrored| {
                AugmentationSpec::new(AugKind::CropResize {
                    corner,
                    scale: 0.9,
                    mirrored,
                })
            };
            std::iter::once(AugmentationSpec::hflip())
                .chain(corners.iter().map(|&c| crop(c, false)))
                .chain(corners.iter().map(|&c| crop(c, true)))
                .collect()
        }
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    Ok(AugmentationSuite {
        name: name.to_string(),
        specs,
    })
}
