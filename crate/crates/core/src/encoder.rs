//! Differentiable toy image encoders and the store-backed encoder used for
//! features computed elsewhere.

use crate::embedding::{normalize, normalize_vjp, Embedding};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{tags, PrngStream};
use crate::store::EmbeddingStore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp1,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "mlp1" => Ok(Self::Mlp1),
            other => Err(Error::Parse(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult {
    pub embedding: Embedding,
    /// Feature before normalization.
    pub pre_norm: Vec<f64>,
    /// Post-activation hidden layer; empty for the linear architecture.
    pub hidden: Vec<f64>,
}

/// An image encoder producing unit-norm embeddings.
pub trait Encoder: Sync {
    fn input_shape(&self) -> (usize, usize, usize);

    fn dim(&self) -> usize;

    fn encode(&self, x: &ImageTensor) -> Result<EncodeResult>;

    /// `J^T upstream` at the point that produced `encoded`, where `upstream` is
    /// a gradient w.r.t. the unit embedding.
    fn backprop(&self, _encoded: &EncodeResult, _upstream: &[f64]) -> Result<ImageTensor> {
        Err(Error::GradientUnsupported)
    }

    fn encode_vjp(&self, x: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor> {
        let encoded = self.encode(x)?;
        self.backprop(&encoded, upstream)
    }
}

/// Weights of a linear or one-hidden-layer tanh encoder.
///
/// For the linear architecture `w1`/`b1` hold `W`/`b` and the second layer is
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub architecture: Architecture,
    pub input_shape: (usize, usize, usize),
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_HIDDEN: usize = 256;

impl EncoderParams {
    pub fn linear(input_shape: (usize, usize, usize), w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let p = Self {
            architecture: Architecture::Linear,
            input_shape,
            dim: b.len(),
            hidden: 0,
            w1: w,
            b1: b,
            w2: Vec::new(),
            b2: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn mlp1(
        input_shape: (usize, usize, usize),
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            architecture: Architecture::Mlp1,
            input_shape,
            dim: b2.len(),
            hidden: b1.len(),
            w1,
            b1,
            w2,
            b2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian weights and biases scaled by `1/sqrt(fan_in)`, drawn from the
    /// encoder stream of `seed`.
    pub fn random(
        architecture: Architecture,
        input_shape: (usize, usize, usize),
        dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let (c, h, w) = input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidGeometry(c, h, w));
        }
        let n = c * h * w;
        let mut rng = PrngStream::tagged(seed, tags::ENCODER, 0);
        let mut draw = |len: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| s * rng.normal()).collect()
        };
        match architecture {
            Architecture::Linear => {
                let wm = draw(dim * n, n);
                let b = draw(dim, n);
                Self::linear(input_shape, wm, b)
            }
            Architecture::Mlp1 => {
                let w1 = draw(hidden * n, n);
                let b1 = draw(hidden, n);
                let w2 = draw(dim * hidden, hidden);
                let b2 = draw(dim, hidden);
                Self::mlp1(input_shape, w1, b1, w2, b2)
            }
        }
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidGeometry(c, h, w));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension 0".into()));
        }
        let n = self.input_len();
        let expect = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{what} has {got} entries, expected {want}"
                )))
            }
        };
        match self.architecture {
            Architecture::Linear => {
                expect("W", self.w1.len(), self.dim * n)?;
                expect("b", self.b1.len(), self.dim)?;
            }
            Architecture::Mlp1 => {
                if self.hidden == 0 {
                    return Err(Error::InvalidParameter("hidden width 0".into()));
                }
                expect("W1", self.w1.len(), self.hidden * n)?;
                expect("b1", self.b1.len(), self.hidden)?;
                expect("W2", self.w2.len(), self.dim * self.hidden)?;
                expect("b2", self.b2.len(), self.dim)?;
            }
        }
        let all = [&self.w1, &self.b1, &self.w2, &self.b2];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidParameter(
                "non-finite encoder parameter".into(),
            ));
        }
        Ok(())
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `rows * x + bias` for a row-major matrix.
fn affine(rows: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    rows.chunks_exact(x.len())
        .zip(bias)
        .map(|(r, b)| fast_dot(r, x) + b)
        .collect()
}

/// `rows^T g` for a row-major matrix with `g.len()` rows.
fn affine_transpose(rows: &[f64], g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &gj) in rows.chunks_exact(cols).zip(g) {
        if gj == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(r) {
            *o += gj * w;
        }
    }
    out
}

impl Encoder for EncoderParams {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, x: &ImageTensor) -> Result<EncodeResult> {
        x.check_shape(self.input_shape)?;
        let (pre_norm, hidden) = match self.architecture {
            Architecture::Linear => (affine(&self.w1, &self.b1, x.data()), Vec::new()),
            Architecture::Mlp1 => {
                let mut h = affine(&self.w1, &self.b1, x.data());
                for v in h.iter_mut() {
                    *v = v.tanh();
                }
                (affine(&self.w2, &self.b2, &h), h)
            }
        };
        if pre_norm.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
        let embedding = normalize(&pre_norm)?;
        Ok(EncodeResult {
            embedding,
            pre_norm,
            hidden,
        })
    }

    fn backprop(&self, encoded: &EncodeResult, upstream: &[f64]) -> Result<ImageTensor> {
        if upstream.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: upstream.len(),
            });
        }
        let g_pre = normalize_vjp(&encoded.pre_norm, upstream);
        let n = self.input_len();
        let grad = match self.architecture {
            Architecture::Linear => affine_transpose(&self.w1, &g_pre, n),
            Architecture::Mlp1 => {
                let g_h = affine_transpose(&self.w2, &g_pre, self.hidden);
                let g_z: Vec<f64> = g_h
                    .iter()
                    .zip(&encoded.hidden)
                    .map(|(g, h)| g * (1.0 - h * h))
                    .collect();
                affine_transpose(&self.w1, &g_z, n)
            }
        };
        let (c, h, w) = self.input_shape;
        Ok(ImageTensor::from_raw(c, h, w, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Compares `encode_vjp` against central differences of `<u, E(x + h v)>` on
/// random `(u, v)` pairs.
pub fn grad_check<E: Encoder + ?Sized>(
    encoder: &E,
    x: &ImageTensor,
    trials: usize,
    tol: f64,
    rng: &mut PrngStream,
) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "grad_check needs at least one trial".into(),
        ));
    }
    let (c, h, w) = x.shape();
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..trials {
        let u: Vec<f64> = (0..encoder.dim()).map(|_| rng.normal()).collect();
        let v = ImageTensor::from_raw(c, h, w, (0..x.len()).map(|_| rng.normal()).collect());
        let mut xp = x.clone();
        xp.add_scaled(&v, GRAD_CHECK_STEP);
        let mut xm = x.clone();
        xm.add_scaled(&v, -GRAD_CHECK_STEP);
        let fp = encoder.encode(&xp)?;
        let fm = encoder.encode(&xm)?;
        let fd = (fast_dot(&u, fp.embedding.as_slice()) - fast_dot(&u, fm.embedding.as_slice()))
            / (2.0 * GRAD_CHECK_STEP);
        let an = encoder.encode_vjp(x, &u)?.dot(&v);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_err,
        trials,
        pass: max_rel_err <= tol,
    })
}

/// Serves embeddings from an [`EmbeddingStore`] by `(sample_id, view_id)`.
#[derive(Debug, Clone)]
pub struct StoreEncoder {
    store: EmbeddingStore,
}

/// Stored vectors further than this from unit norm are renormalized on lookup.
pub const STORE_UNIT_TOLERANCE: f64 = 1e-4;

impl StoreEncoder {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn lookup(&self, sample_id: u64, view_id: &str) -> Result<EncodeResult> {
        let v = self
            .store
            .get(sample_id, view_id)
            .ok_or_else(|| Error::MissingKey {
                sample_id,
                view_id: view_id.to_string(),
            })?;
        let pre_norm: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let n = crate::embedding::norm(&pre_norm);
        let embedding = if (n - 1.0).abs() > STORE_UNIT_TOLERANCE {
            normalize(&pre_norm)?
        } else {
            Embedding::from_unit(pre_norm.clone(), STORE_UNIT_TOLERANCE)?
        };
        Ok(EncodeResult {
            pre_norm: embedding.as_slice().to_vec(),
            embedding,
            hidden: Vec::new(),
        })
    }

    /// Stored features carry no gradient information.
    pub fn encode_vjp(
        &self,
        _sample_id: u64,
        _view_id: &str,
        _upstream: &[f64],
    ) -> Result<ImageTensor> {
        Err(Error::GradientUnsupported)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::dot;

    fn random_image(seed: u64, shape: (usize, usize, usize)) -> ImageTensor {
        let mut rng = PrngStream::derive(seed, 5);
        let (c, h, w) = shape;
        ImageTensor::new(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.uniform(0.1, 0.9)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_linear_normalizes_input() {
        let d = 4;
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        let enc = EncoderParams::linear((d, 1, 1), w, vec![0.0; d]).unwrap();
        let x = ImageTensor::new(d, 1, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = enc.encode(&x).unwrap();
        let n = (0.01f64 + 0.04 + 0.09 + 0.16).sqrt();
        for (i, v) in r.embedding.as_slice().iter().enumerate() {
            assert!((v - x.data()[i] / n).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_image_gives_normalized_bias() {
        let enc = EncoderParams::linear((1, 2, 2), vec![0.5; 12], vec![3.0, 0.0, 4.0]).unwrap();
        let r = enc.encode(&ImageTensor::zeros(1, 2, 2)).unwrap();
        assert_eq!(r.embedding.as_slice(), &[0.6, 0.0, 0.8]);
    }

    #[test]
    fn linear_matches_naive_loop() {
        let enc = EncoderParams::random(Architecture::Linear, (3, 8, 8), 16, 0, 3).unwrap();
        let x = random_image(1, (3, 8, 8));
        let r = enc.encode(&x).unwrap();
        let n = 3 * 8 * 8;
        let mut pre = vec![0.0; 16];
        for (i, p) in pre.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += enc.w1[i * n + j] * x.data()[j];
            }
            *p = s + enc.b1[i];
        }
        let norm = pre.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in r.embedding.as_slice().iter().zip(&pre) {
            assert!((a - b / norm).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_vjp_matches_projected_transpose() {
        let enc = EncoderParams::random(Architecture::Linear, (1, 3, 3), 5, 0, 8).unwrap();
        let x = random_image(2, (1, 3, 3));
        let r = enc.encode(&x).unwrap();
        let f = r.embedding.as_slice();
        let npre = crate::embedding::norm(&r.pre_norm);
        let u = [0.3, -0.1, 0.7, 0.2, -0.5];
        let fu = dot(f, &u);
        let proj: Vec<f64> = u
            .iter()
            .zip(f)
            .map(|(ui, fi)| (ui - fu * fi) / npre)
            .collect();
        let g = enc.encode_vjp(&x, &u).unwrap();
        for j in 0..9 {
            let expect: f64 = (0..5).map(|i| enc.w1[i * 9 + j] * proj[i]).sum();
            assert!((g.data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_upstream_has_zero_gradient() {
        let enc = EncoderParams::random(Architecture::Mlp1, (3, 4, 4), 8, 16, 2).unwrap();
        let x = random_image(3, (3, 4, 4));
        let f = enc.encode(&x).unwrap().embedding;
        let g = enc.encode_vjp(&x, f.as_slice()).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_check_passes_for_both_architectures() {
        for arch in [Architecture::Linear, Architecture::Mlp1] {
            let enc = EncoderParams::random(arch, (3, 8, 8), 16, 32, 11).unwrap();
            let x = random_image(4, (3, 8, 8));
            let rep = grad_check(&enc, &x, 20, 1e-3, &mut PrngStream::derive(1, 1)).unwrap();
            assert!(rep.pass, "{arch:?}: {}", rep.max_rel_err);
        }
    }

    struct CorruptedBackprop(EncoderParams);

    impl Encoder for CorruptedBackprop {
        fn input_shape(&self) -> (usize, usize, usize) {
            self.0.input_shape
        }
        fn dim(&self) -> usize {
            self.0.dim
        }
        fn encode(&self, x: &ImageTensor) -> Result<EncodeResult> {
            self.0.encode(x)
        }
        fn backprop(&self, encoded: &EncodeResult, upstream: &[f64]) -> Result<ImageTensor> {
            let mut bad = self.0.clone();
            bad.w2[0] += 1.0;
            bad.w2[7] -= 0.5;
            bad.backprop(encoded, upstream)
        }
    }

    #[test]
    fn grad_check_catches_corrupted_vjp() {
        let enc = CorruptedBackprop(
            EncoderParams::random(Architecture::Mlp1, (1, 4, 4), 4, 8, 5).unwrap(),
        );
        let x = random_image(5, (1, 4, 4));
        let rep = grad_check(&enc, &x, 10, 1e-3, &mut PrngStream::derive(2, 2)).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn shape_and_parameter_validation() {
        let enc = EncoderParams::random(Architecture::Linear, (1, 2, 2), 3, 0, 1).unwrap();
        assert!(matches!(
            enc.encode(&ImageTensor::zeros(1, 2, 3)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(EncoderParams::linear((1, 2, 2), vec![0.0; 5], vec![0.0; 2]).is_err());
        assert!(EncoderParams::linear((1, 1, 1), vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn non_finite_output_reported() {
        let enc = EncoderParams::linear((1, 1, 2), vec![1e308, 1e308], vec![0.0]).unwrap();
        let x = ImageTensor::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(enc.encode(&x), Err(Error::NonFiniteOutput)));
    }

    #[test]
    fn positive_scaling_is_invisible_after_normalization() {
        let enc = EncoderParams::random(Architecture::Linear, (1, 4, 4), 6, 0, 9).unwrap();
        let enc = EncoderParams::linear((1, 4, 4), enc.w1, vec![0.0; 6]).unwrap();
        let x = random_image(6, (1, 4, 4));
        let mut y = x.clone();
        y.scale(0.5);
        let a = enc.encode(&x).unwrap().embedding;
        let b = enc.encode(&y).unwrap().embedding;
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}
