//! Multivariate normal distributions stored in precision form.

use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// `N(mean, precision⁻¹)` with a cached Cholesky factor `L L^T = precision`
/// and the exact log-normalization `½ log det P − (n/2) log 2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionGaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl PrecisionGaussian {
    /// Factors `precision` (after symmetrizing it) and caches the
    /// normalization.
    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if precision.nrows() != n || precision.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "precision matrix",
                expected: n,
                found: if precision.nrows() != n { precision.nrows() } else { precision.ncols() },
            });
        }
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument("precision matrix is not symmetric"));
        }
        if precision.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let precision = (&precision + precision.transpose()) * 0.5;
        let chol = precision
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .unpack();
        let half_log_det: f64 = chol.diagonal().iter().map(|d| libm::log(*d)).sum();
        if !half_log_det.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let log_norm = half_log_det - 0.5 * n as f64 * libm::log(2.0 * PI);
        Ok(Self {
            mean,
            precision,
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Lower-triangular Cholesky factor of the precision.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Exact log-density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "gaussian argument",
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &DVector<f64>) -> f64 {
        let r = self.chol.tr_mul(&(x - &self.mean));
        self.log_norm - 0.5 * r.norm_squared()
    }

    /// Maps i.i.d. standard normals to a draw: `μ + L⁻ᵀ ξ`.
    pub fn sample(&self, std_normals: &DVector<f64>) -> Result<DVector<f64>> {
        if std_normals.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "standard normal draws",
                expected: self.dim(),
                found: std_normals.len(),
            });
        }
        let u = self
            .chol
            .tr_solve_lower_triangular(std_normals)
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(&self.mean + u)
    }

    /// Contracts the distribution toward `center`: mean
    /// `center + γ(μ − center)` and covariance scaled by `γ²`.
    pub fn dilate(&self, center: &DVector<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidDilation(gamma));
        }
        if center.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "dilation center",
                expected: self.dim(),
                found: center.len(),
            });
        }
        let mean = center + (&self.mean - center) * gamma;
        let inv = 1.0 / gamma;
        Ok(Self {
            mean,
            precision: &self.precision * (inv * inv),
            chol: &self.chol * inv,
            log_norm: self.log_norm - self.dim() as f64 * libm::log(gamma),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn one_dimensional_normalization() {
        let g = PrecisionGaussian::from_precision(DVector::zeros(1), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let expected = 0.5 * libm::log(2.0) - 0.5 * libm::log(2.0 * PI);
        assert!(close(g.log_norm(), expected, 1e-15));
        let g = PrecisionGaussian::from_precision(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let peak = g.log_pdf(&DVector::from_element(1, 1.0)).unwrap();
        assert!(close(peak, 0.5 * libm::log(4.0) - 0.5 * libm::log(2.0 * PI), 1e-15));
    }

    #[test]
    fn standard_normal_values() {
        let g = PrecisionGaussian::from_precision(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(close(g.log_pdf(&DVector::zeros(2)).unwrap(), -libm::log(2.0 * PI), 1e-15));
        let g1 = PrecisionGaussian::from_precision(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(close(g1.log_pdf(&DVector::zeros(1)).unwrap(), -0.5 * libm::log(2.0 * PI), 1e-15));
        assert!(g.log_pdf(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn indefinite_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            PrecisionGaussian::from_precision(DVector::zeros(2), p),
            Err(Error::NotPositiveDefinite)
        );
        let zero = DMatrix::zeros(1, 1);
        assert!(PrecisionGaussian::from_precision(DVector::zeros(1), zero).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert!(PrecisionGaussian::from_precision(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn sample_maps_normals() {
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let g = PrecisionGaussian::from_precision(mu.clone(), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.sample(&DVector::zeros(2)).unwrap(), mu);
        let xi = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(g.sample(&xi).unwrap(), &mu + &xi);
        assert!(g.sample(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn empirical_covariance_matches_inverse_precision() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let g = PrecisionGaussian::from_precision(DVector::zeros(2), p).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let xi = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
                g.sample(&xi).unwrap()
            })
            .collect();
        let mean = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n as f64;
        let cov = draws
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, d| acc + (d - &mean) * (d - &mean).transpose())
            / n as f64;
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 1.0]);
        assert!((&cov - &expected).amax() < 5e-2);
        assert!((&cov - &expected).norm() / expected.norm() < 0.05);
        assert!(mean[0].abs() < 3.0 * 0.5 / libm::sqrt(n as f64));
        assert!(mean[1].abs() < 3.0 * 1.0 / libm::sqrt(n as f64));
    }

    #[test]
    fn trapezoid_normalization() {
        let g = PrecisionGaussian::from_precision(DVector::from_element(1, 0.7), DMatrix::from_element(1, 1, 3.0)).unwrap();
        let sd = 1.0 / libm::sqrt(3.0);
        let (lo, hi, k) = (0.7 - 8.0 * sd, 0.7 + 8.0 * sd, 20_001);
        let h = (hi - lo) / (k - 1) as f64;
        let mut total = 0.0;
        for i in 0..k {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
            total += w * libm::exp(g.log_pdf(&DVector::from_element(1, x)).unwrap());
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dilation_examples() {
        let g = PrecisionGaussian::from_precision(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = DVector::zeros(1);
        let d = g.dilate(&c, 0.5).unwrap();
        assert_eq!(d.mean()[0], 1.0);
        assert_eq!(d.precision()[(0, 0)], 4.0);
        let direct = PrecisionGaussian::from_precision(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!(close(d.log_norm(), direct.log_norm(), 1e-14));
        let same = g.dilate(&c, 1.0).unwrap();
        assert_eq!(same.mean(), g.mean());
        assert_eq!(same.precision(), g.precision());
        let tiny = g.dilate(&c, 1e-12).unwrap();
        assert!(tiny.mean()[0].abs() < 1e-11);
        assert_eq!(g.dilate(&c, 0.0), Err(Error::InvalidDilation(0.0)));
        assert!(g.dilate(&c, -0.3).is_err());
    }

    #[test]
    fn dilation_composes() {
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 1.5]);
        let g = PrecisionGaussian::from_precision(DVector::from_vec(vec![0.5, -1.0]), p).unwrap();
        let c = DVector::from_vec(vec![0.1, 0.2]);
        for &(a, b) in &[(0.5, 0.2), (0.9, 0.3), (0.05, 0.7)] {
            let once = g.dilate(&c, a * b).unwrap();
            let twice = g.dilate(&c, a).unwrap().dilate(&c, b).unwrap();
            assert!((once.mean() - twice.mean()).amax() < 1e-12);
            assert!((once.precision() - twice.precision()).amax() <= 1e-12 * once.precision().amax());
            assert!((once.log_norm() - twice.log_norm()).abs() < 1e-12);
            let x = DVector::from_vec(vec![0.3, 0.1]);
            assert!((once.log_pdf(&x).unwrap() - twice.log_pdf(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn mode_is_at_mean() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = PrecisionGaussian::from_precision(DVector::from_vec(vec![1.0, 2.0]), p).unwrap();
        let peak = g.log_pdf(g.mean()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); 5.0 * v });
            assert!(g.log_pdf(&x).unwrap() <= peak);
        }
    }
}
