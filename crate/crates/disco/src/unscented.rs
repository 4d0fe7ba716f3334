//! Sigma-point construction over a parameter distribution and weighted
//! summaries of per-sigma-point quantities.
//!
//! The scaled sigma-point set captures the first two moments of an
//! `n`-dimensional distribution with `2n + 1` deterministically chosen
//! points; pushing those points through a nonlinear map and re-weighting
//! approximates the transformed moments without sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Scaling hyperparameters of the sigma-point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtConfig<T> {
    /// Spread of the points around the mean.
    pub alpha: T,
    /// Secondary scaling, usually zero.
    pub kappa: T,
    /// Extra degree of freedom in the zeroth covariance weight.
    pub xi: T,
}

impl<T: Scalar> Default for UtConfig<T> {
    fn default() -> Self {
        UtConfig { alpha: T::of(0.5), kappa: T::zero(), xi: T::of(2.0) }
    }
}

impl<T: Scalar> UtConfig<T> {
    /// Primary scaling factor `nu = alpha^2 (n + kappa) - n`.
    pub fn nu(&self, n: usize) -> T {
        self.alpha * self.alpha * (T::of_usize(n) + self.kappa) - T::of_usize(n)
    }
}

/// `2n + 1` sigma points with their mean and covariance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSet<T> {
    pub points: Vec<Vec<T>>,
    pub mean_weights: Vec<T>,
    pub cov_weights: Vec<T>,
}

impl<T: Scalar> SigmaSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Build the scaled sigma-point set for a distribution with the given mean
/// and covariance.
///
/// The zeroth point is the mean; points `i` and `i + n` sit at
/// `mean ± column_i(sqrt((n + nu) cov))` with the square root taken as the
/// lower-triangular Cholesky factor. Weights:
/// `w_0^m = nu / (n + nu)`, `w_0^c = w_0^m + (1 - alpha^2 + xi)`, and
/// `w_i^m = w_i^c = 1 / (2 (n + nu))` for `i >= 1`.
pub fn sigma_points<T: Scalar>(mean: &[T], cov: &Mat<T>, cfg: &UtConfig<T>) -> Result<SigmaSet<T>> {
    let n = mean.len();
    if n == 0 {
        return Err(Error::invalid("sigma points need at least one dimension"));
    }
    if !cov.is_square() || cov.rows() != n {
        return Err(Error::invalid("covariance shape does not match mean"));
    }
    if mean.iter().any(|x| !x.is_finite()) || !cov.is_finite() {
        return Err(Error::invalid("non-finite mean or covariance"));
    }
    let nu = cfg.nu(n);
    let n_nu = T::of_usize(n) + nu;
    if n_nu <= T::zero() {
        return Err(Error::config(format!(
            "n + nu must be positive (alpha={}, kappa={}, n={})",
            cfg.alpha, cfg.kappa, n
        )));
    }

    // MDN covariances can be near-singular; retry with a little jitter
    // before giving up.
    let jitter = T::of(1e-9) * cov.trace() / T::of_usize(n);
    let mut scaled = cov.scale(n_nu);
    let mut factor = scaled.cholesky_lower();
    for _ in 0..3 {
        if factor.is_some() {
            break;
        }
        scaled = scaled.add_scaled_identity(jitter * n_nu);
        factor = scaled.cholesky_lower();
    }
    let l = factor.ok_or_else(|| {
        Error::numeric("covariance is not positive semi-definite (Cholesky failed after jitter)")
    })?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.to_vec());
    for i in 0..n {
        points.push((0..n).map(|r| mean[r] + l[(r, i)]).collect());
    }
    for i in 0..n {
        points.push((0..n).map(|r| mean[r] - l[(r, i)]).collect());
    }

    let w_rest = T::one() / (T::of(2.0) * n_nu);
    let w0_m = nu / n_nu;
    let w0_c = w0_m + (T::one() - cfg.alpha * cfg.alpha + cfg.xi);
    let mut mean_weights = vec![w_rest; 2 * n + 1];
    let mut cov_weights = vec![w_rest; 2 * n + 1];
    mean_weights[0] = w0_m;
    cov_weights[0] = w0_c;

    Ok(SigmaSet { points, mean_weights, cov_weights })
}

/// Weighted sum of one scalar per sigma point.
pub fn unscented_mean<T: Scalar>(values: &[T], mean_weights: &[T]) -> Result<T> {
    if values.len() != mean_weights.len() {
        return Err(Error::invalid("values/weights length mismatch"));
    }
    Ok(values.iter().zip(mean_weights).map(|(&v, &w)| w * v).sum())
}

/// Weighted mean and covariance of one vector per sigma point.
pub fn unscented_moments<T: Scalar>(
    vectors: &[Vec<T>],
    mean_weights: &[T],
    cov_weights: &[T],
) -> Result<(Vec<T>, Mat<T>)> {
    if vectors.len() != mean_weights.len() || vectors.len() != cov_weights.len() {
        return Err(Error::invalid("vectors/weights length mismatch"));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("ragged sigma-point vectors"));
    }

    let mut mean = vec![T::zero(); dim];
    for (v, &w) in vectors.iter().zip(mean_weights) {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += w * x;
        }
    }
    let mut cov = Mat::zeros(dim, dim);
    for (v, &w) in vectors.iter().zip(cov_weights) {
        for i in 0..dim {
            let di = v[i] - mean[i];
            for j in 0..dim {
                cov[(i, j)] += w * di * (v[j] - mean[j]);
            }
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cfg(alpha: f64, kappa: f64, xi: f64) -> UtConfig<f64> {
        UtConfig { alpha, kappa, xi }
    }

    #[test]
    fn one_dimensional_standard_set() {
        // alpha = 1, kappa = 0, xi = 2 on N(0, 1): nu = 0, points (0, 1, -1),
        // mean weights (0, 1/2, 1/2), covariance weights (2, 1/2, 1/2).
        let set = sigma_points(&[0.0], &Mat::diagonal(&[1.0]), &cfg(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(set.len(), 3);
        assert_abs_diff_eq!(set.points[0][0], 0.0);
        assert_abs_diff_eq!(set.points[1][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(set.points[2][0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(set.mean_weights[0], 0.0);
        assert_abs_diff_eq!(set.mean_weights[1], 0.5);
        assert_abs_diff_eq!(set.mean_weights[2], 0.5);
        assert_abs_diff_eq!(set.cov_weights[0], 2.0);
        assert_abs_diff_eq!(set.cov_weights[1], 0.5);
    }

    #[test]
    fn mean_weights_sum_to_one_and_pairs_are_symmetric() {
        let mut rng = crate::rng::stream_rng(5, &[0]);
        for n in 1..=5usize {
            let mean: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let cov = random_psd(n, &mut rng);
            let set = sigma_points(&mean, &cov, &UtConfig::default()).unwrap();
            let total: f64 = set.mean_weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert_eq!(set.points[0], mean);
            for i in 1..=n {
                for r in 0..n {
                    assert_abs_diff_eq!(
                        set.points[i][r] + set.points[i + n][r],
                        2.0 * mean[r],
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn three_parameters_give_seven_points() {
        let set = sigma_points(&[0.238, 0.061, 0.415], &Mat::identity(3), &UtConfig::default())
            .unwrap();
        assert_eq!(set.len(), 7);
    }

    #[test]
    fn zero_covariance_collapses_to_mean() {
        let mean = [1.5, -0.5];
        let set = sigma_points(&mean, &Mat::zeros(2, 2), &UtConfig::default()).unwrap();
        for p in &set.points {
            assert_eq!(p.as_slice(), mean.as_slice());
        }
        // Any function of the points averages to its value at the mean.
        let vals: Vec<f64> = set.points.iter().map(|p| p[0] * p[0] + p[1]).collect();
        let m = unscented_mean(&vals, &set.mean_weights).unwrap();
        assert_abs_diff_eq!(m, 1.5 * 1.5 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn invalid_scaling_is_a_config_error() {
        // alpha^2 (n + kappa) must exceed zero.
        let err = sigma_points(&[0.0], &Mat::diagonal(&[1.0]), &cfg(1.0, -1.0, 2.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn weighted_mean_hand_example() {
        let m = unscented_mean(&[5.0, 2.0, 4.0], &[0.0, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(m, 3.0);
    }

    #[test]
    fn weighted_mean_of_constant_is_constant() {
        let set =
            sigma_points(&[0.3, 0.7], &Mat::identity(2), &UtConfig::default()).unwrap();
        let vals = vec![4.25; set.len()];
        assert_abs_diff_eq!(
            unscented_mean(&vals, &set.mean_weights).unwrap(),
            4.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weighted_mean_single_point_is_identity() {
        assert_eq!(unscented_mean(&[7.5], &[1.0]).unwrap(), 7.5);
    }

    #[test]
    fn weighted_mean_rejects_length_mismatch() {
        assert!(unscented_mean(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn permuting_plus_minus_pair_leaves_mean_unchanged() {
        let set = sigma_points(&[0.2, -0.1], &random_psd(2, &mut crate::rng::stream_rng(9, &[])),
            &UtConfig::default())
        .unwrap();
        let vals: Vec<f64> = set.points.iter().map(|p| (p[0] - p[1]).powi(2)).collect();
        let base = unscented_mean(&vals, &set.mean_weights).unwrap();
        // Swap the + and - points of axis 0 (indices 1 and 3 for n = 2).
        let mut swapped = vals.clone();
        swapped.swap(1, 3);
        let perm = unscented_mean(&swapped, &set.mean_weights).unwrap();
        assert_abs_diff_eq!(base, perm, epsilon = 1e-12);
    }

    #[test]
    fn squared_map_of_standard_normal_has_unit_mean() {
        let set = sigma_points(&[0.0], &Mat::diagonal(&[1.0]), &cfg(1.0, 0.0, 2.0)).unwrap();
        let vals: Vec<f64> = set.points.iter().map(|p| p[0] * p[0]).collect();
        assert_abs_diff_eq!(unscented_mean(&vals, &set.mean_weights).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_map_recovers_input_moments() {
        let mut rng = crate::rng::stream_rng(21, &[4]);
        let mean: Vec<f64> = vec![0.4, -1.2, 2.0];
        let cov = random_psd(3, &mut rng);
        let set = sigma_points(&mean, &cov, &UtConfig::default()).unwrap();
        let (m, c) = unscented_moments(&set.points, &set.mean_weights, &set.cov_weights).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(m[i], mean[i], epsilon = 1e-10);
            for j in 0..3 {
                assert_abs_diff_eq!(c[(i, j)], cov[(i, j)], epsilon = 1e-10);
            }
        }
    }

    pub(super) fn random_psd(n: usize, rng: &mut impl Rng) -> Mat<f64> {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut psd = a.matmul(&a.transpose());
        for i in 0..n {
            psd[(i, i)] += 1e-3;
        }
        psd
    }

    #[test]
    fn affine_maps_are_reconstructed_exactly() {
        // Module-level version of the exactness property; the acceptance
        // suite runs the full 100-map sweep.
        let mut rng = crate::rng::stream_rng(42, &[7]);
        for _ in 0..20 {
            let n = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=5);
            let mean: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let cov = random_psd(n, &mut rng);
            let mut a = Mat::zeros(k, n);
            for i in 0..k {
                for j in 0..n {
                    a[(i, j)] = rng.gen_range(-2.0..2.0);
                }
            }
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();

            let set = sigma_points(&mean, &cov, &UtConfig::default()).unwrap();
            let mapped: Vec<Vec<f64>> = set
                .points
                .iter()
                .map(|p| {
                    let mut y = a.mul_vec(p);
                    for (yi, bi) in y.iter_mut().zip(&b) {
                        *yi += bi;
                    }
                    y
                })
                .collect();
            let (m, c) =
                unscented_moments(&mapped, &set.mean_weights, &set.cov_weights).unwrap();

            let want_mean = {
                let mut y = a.mul_vec(&mean);
                for (yi, bi) in y.iter_mut().zip(&b) {
                    *yi += bi;
                }
                y
            };
            let want_cov = a.matmul(&cov).matmul(&a.transpose());
            for i in 0..k {
                assert_abs_diff_eq!(m[i], want_mean[i], epsilon = 1e-8);
                for j in 0..k {
                    assert_abs_diff_eq!(c[(i, j)], want_cov[(i, j)], epsilon = 1e-8);
                }
            }
        }
    }
}
