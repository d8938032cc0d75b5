//! Unit-norm vector algebra and augmentation drift statistics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-12;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps values that are already unit-norm within `tol`.
    pub fn from_unit(values: Vec<f64>, tol: f64) -> Result<Self> {
        let n = norm(&values);
        if (n - 1.0).abs() > tol {
            return Err(Error::NonUnitEmbedding(n));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `v / |v|`.
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    let n = norm(v);
    if n < NORM_FLOOR {
        return Err(Error::ZeroVector(n));
    }
    Ok(Embedding(v.iter().map(|x| x / n).collect()))
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR {
        return Err(Error::ZeroVector(na));
    }
    if nb < NORM_FLOOR {
        return Err(Error::ZeroVector(nb));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pulls `upstream` (a gradient w.r.t. `v / |v|`) back to a gradient w.r.t. `v`:
/// `(I - u u^T) upstream / |v|` with `u = v / |v|`.
pub fn normalize_vjp(v: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n < NORM_FLOOR {
        return vec![0.0; v.len()];
    }
    let radial = dot(v, upstream) / n;
    v.iter()
        .zip(upstream)
        .map(|(vi, gi)| (gi - radial * vi / n) / n)
        .collect()
}

/// Partial derivatives of `cos(a, b)` w.r.t. `a` and `b`, scaled by `upstream`.
/// Zero when either argument is degenerate.
pub fn cosine_vjp(a: &[f64], b: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| upstream * (bi / (na * nb) - c * ai / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| upstream * (ai / (na * nb) - c * bi / (nb * nb)))
        .collect();
    (ga, gb)
}

/// Drift vectors between an embedding and its augmented views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    /// `d_i = f_x - f_{x_i}`, unnormalized.
    pub drifts: Vec<Vec<f64>>,
    /// Arithmetic mean of the drifts.
    pub mean_drift: Vec<f64>,
    /// Mean cosine between each drift and the mean drift; 0 when degenerate.
    pub tau: f64,
    /// Set when the mean drift or any single drift has (near) zero norm.
    pub degenerate: bool,
}

/// Drifts of `f_x` relative to each view, their mean, and the directional
/// consistency score `tau`.
pub fn drift_stats<E: AsRef<[f64]>>(f_x: &[f64], views: &[E]) -> Result<DriftStats> {
    if views.len() < 2 {
        return Err(Error::TooFewViews(views.len()));
    }
    let dim = f_x.len();
    let mut drifts = Vec::with_capacity(views.len());
    for v in views {
        let v = v.as_ref();
        check_dims(f_x, v)?;
        drifts.push(f_x.iter().zip(v).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let n = views.len() as f64;
    let mut mean_drift = vec![0.0; dim];
    for d in &drifts {
        for (m, x) in mean_drift.iter_mut().zip(d) {
            *m += x;
        }
    }
    for m in mean_drift.iter_mut() {
        *m /= n;
    }
    let degenerate = norm(&mean_drift) < NORM_FLOOR || drifts.iter().any(|d| norm(d) < NORM_FLOOR);
    let tau = if degenerate {
        0.0
    } else {
        let mut acc = 0.0;
        for d in &drifts {
            acc += cosine(d, &mean_drift)?;
        }
        (acc / n).clamp(-1.0, 1.0)
    };
    Ok(DriftStats {
        drifts,
        mean_drift,
        tau,
        degenerate,
    })
}

/// Gradient of `tau` w.r.t. the drift vectors, scaled by `upstream`.
/// Accounts for each drift's contribution through the mean drift.
pub fn tau_vjp(stats: &DriftStats, upstream: f64) -> Vec<Vec<f64>> {
    let n = stats.drifts.len();
    let dim = stats.mean_drift.len();
    if stats.degenerate {
        return vec![vec![0.0; dim]; n];
    }
    let w = upstream / n as f64;
    let mut grad_mean = vec![0.0; dim];
    let mut grads = Vec::with_capacity(n);
    for d in &stats.drifts {
        let (gd, gm) = cosine_vjp(d, &stats.mean_drift, w);
        for (a, b) in grad_mean.iter_mut().zip(&gm) {
            *a += b;
        }
        grads.push(gd);
    }
    for g in grads.iter_mut() {
        for (gi, gm) in g.iter_mut().zip(&grad_mean) {
            *gi += gm / n as f64;
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_three_four_five() {
        let e = normalize(&[3.0, 4.0]).unwrap();
        assert!(close(e.as_slice()[0], 0.6, 1e-15));
        assert!(close(e.as_slice()[1], 0.8, 1e-15));
    }

    #[test]
    fn normalize_idempotent_on_basis_vector() {
        let e = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0]);
        let again = normalize(e.as_slice()).unwrap();
        assert_eq!(again, e);
    }

    #[test]
    fn normalize_zero_errors() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(close(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-12
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn aligned_drifts_have_unit_tau() {
        let fx = [1.0, 0.0];
        let g = [0.0, 1.0];
        let s = drift_stats(&fx, &[g, g, g]).unwrap();
        assert!(!s.degenerate);
        assert!(close(s.tau, 1.0, 1e-12));
    }

    #[test]
    fn cancelling_drifts_are_degenerate() {
        let fx = [0.0, 1.0];
        let s = drift_stats(&fx, &[[0.6, 0.8], [-0.6, 1.2]]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.tau, 0.0);
    }

    #[test]
    fn hand_computed_tau() {
        // d1 = (1,-1), d2 = (0.4,-0.8), mean = (0.7,-0.9).
        let s = drift_stats(&[1.0, 0.0], &[[0.0, 1.0], [0.6, 0.8]]).unwrap();
        assert!(close(s.mean_drift[0], 0.7, 1e-12));
        assert!(close(s.mean_drift[1], -0.9, 1e-12));
        assert!(close(s.tau, 0.9856, 1e-3), "tau = {}", s.tau);
    }

    #[test]
    fn too_few_views() {
        assert!(matches!(
            drift_stats(&[1.0, 0.0], &[[0.0, 1.0]]),
            Err(Error::TooFewViews(1))
        ));
        assert!(matches!(
            drift_stats(&[1.0, 0.0], &[vec![0.0, 1.0], vec![0.0, 1.0, 0.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_single_drift_is_degenerate() {
        let s = drift_stats(&[1.0, 0.0], &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.tau, 0.0);
    }

    #[test]
    fn normalize_vjp_kills_radial_direction() {
        let v = [0.3, -1.2, 2.0];
        let g = normalize_vjp(&v, &v);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn tau_vjp_matches_finite_differences() {
        let fx = [0.5, -0.2, 0.9];
        let views = [[0.1, 0.4, 0.2], [-0.3, 0.1, 0.5], [0.2, -0.6, 0.3]];
        let stats = drift_stats(&fx, &views).unwrap();
        let grads = tau_vjp(&stats, 1.0);
        let h = 1e-6;
        for i in 0..views.len() {
            for k in 0..3 {
                let mut plus = views;
                let mut minus = views;
                // d_i = fx - view_i, so perturbing the drift by +h moves the view by -h.
                plus[i][k] -= h;
                minus[i][k] += h;
                let fd = (drift_stats(&fx, &plus).unwrap().tau
                    - drift_stats(&fx, &minus).unwrap().tau)
                    / (2.0 * h);
                assert!(close(fd, grads[i][k], 1e-6), "{fd} vs {}", grads[i][k]);
            }
        }
    }
}
