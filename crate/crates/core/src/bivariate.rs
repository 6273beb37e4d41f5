//! Closed forms for the bivariate case.
//!
//! With two components there are at most three informative patterns:
//! complete pairs, first component only, second component only. The gain
//! system collapses to small explicit expressions, which serve both as
//! user-facing estimators and as analytic cross-checks of the engine in
//! [`crate::estimator`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Second-moment structure and subsample sizes of a bivariate problem.
///
/// `sigma11`/`sigma22` are the component variances, `sigma12` the covariance;
/// `j11`, `j21`, `j22` are the sizes of the complete, first-only, and
/// second-only subsamples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateConfig<T> {
    pub sigma11: T,
    pub sigma12: T,
    pub sigma22: T,
    pub j11: usize,
    pub j21: usize,
    pub j22: usize,
}

impl<T: Scalar> BivariateConfig<T> {
    pub fn new(sigma11: T, sigma12: T, sigma22: T, j11: usize, j21: usize, j22: usize) -> Result<Self> {
        let pd = sigma11 > T::zero()
            && sigma22 > T::zero()
            && sigma11 * sigma22 - sigma12 * sigma12 > T::zero();
        if !pd || !sigma11.is_finite() || !sigma22.is_finite() || !sigma12.is_finite() {
            return Err(Error::InvalidPopulation);
        }
        if j11 == 0 {
            return Err(Error::InvalidConfig(
                "the complete subsample must be non-empty".into(),
            ));
        }
        Ok(Self {
            sigma11,
            sigma12,
            sigma22,
            j11,
            j21,
            j22,
        })
    }

    pub fn sigma(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[self.sigma11, self.sigma12, self.sigma12, self.sigma22])
    }
}

/// The three subsample means of a bivariate dataset.
///
/// `complete_1`/`complete_2` are the component means over complete pairs;
/// `first_only` and `second_only` are the means of the observed component in
/// the two incomplete patterns (ignored by forms that do not use them).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleMeans<T> {
    pub complete_1: T,
    pub complete_2: T,
    pub first_only: T,
    pub second_only: T,
}

/// The 2x2 gain matrix of the bivariate mean-vector estimator:
///
/// ```text
/// lambda0 = Sigma * [Sigma + diag(J11*sigma11/J21, J11*sigma22/J22)]^-1
/// ```
///
/// equal to `K (K*)^-1` of the engine's root system. Needs both incomplete
/// subsamples non-empty.
pub fn lambda0<T: Scalar>(cfg: &BivariateConfig<T>) -> Result<DMatrix<T>> {
    if cfg.j21 == 0 || cfg.j22 == 0 {
        return Err(Error::InvalidConfig(
            "lambda0 needs both incomplete subsamples non-empty".into(),
        ));
    }
    let j11 = T::from_count(cfg.j11);
    let mut bracket = cfg.sigma();
    bracket[(0, 0)] += j11 * cfg.sigma11 / T::from_count(cfg.j21);
    bracket[(1, 1)] += j11 * cfg.sigma22 / T::from_count(cfg.j22);
    let inv = bracket.try_inverse().ok_or(Error::SingularSystem)?;
    Ok(cfg.sigma() * inv)
}

/// Variance-optimal estimate of the bivariate mean vector.
///
/// Corrects the complete-pair means with the two incomplete-pattern means
/// through [`lambda0`]; the returned covariance is
/// `(I - lambda0) * Sigma / J11`, symmetrized.
pub fn mean_vector<T: Scalar>(
    means: &SubsampleMeans<T>,
    cfg: &BivariateConfig<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let gain = lambda0(cfg)?;
    let complete = DVector::from_vec(vec![means.complete_1, means.complete_2]);
    let residual = DVector::from_vec(vec![
        means.complete_1 - means.first_only,
        means.complete_2 - means.second_only,
    ]);
    let estimate = &complete - &gain * residual;

    let j11 = T::from_count(cfg.j11);
    let base = cfg.sigma() / j11;
    let mut cov = &base - &gain * &base;
    let half = T::from_f64(0.5).unwrap();
    let cov_t = cov.transpose();
    cov = (cov + cov_t) * half;
    Ok((estimate, cov))
}

/// Change-score estimate when the second-only subsample is empty.
///
/// The gain on the complete-pair residual is
/// `J21/(J11+J21) * (1 - sigma12/sigma11)`, so perfect proxy correlation
/// (`sigma12 = sigma11`) collapses to the complete-case difference and
/// `sigma12 = 0` to the available-case combination. Returns the estimate and
/// its variance.
pub fn change_score<T: Scalar>(
    means: &SubsampleMeans<T>,
    cfg: &BivariateConfig<T>,
) -> Result<(T, T)> {
    if !cfg.sigma11.is_positive_real() {
        return Err(Error::DegenerateVariance);
    }
    let j11 = T::from_count(cfg.j11);
    let j21 = T::from_count(cfg.j21);
    let fraction = j21 / (j11 + j21);
    let lambda = fraction * (T::one() - cfg.sigma12 / cfg.sigma11);

    let delta_hat = means.complete_1 - means.complete_2;
    let estimate = delta_hat - lambda * (means.complete_1 - means.first_only);

    let a = cfg.sigma11 - (T::one() + T::one()) * cfg.sigma12 + cfg.sigma22;
    let shrink = cfg.sigma11 - cfg.sigma12;
    let variance = (a - fraction * shrink * shrink / cfg.sigma11) / j11;
    Ok((estimate, variance))
}

/// Change score under compound symmetry `Sigma = sigma^2 [[1, rho], [rho, 1]]`.
///
/// Gain `J21/(J11+J21) * (1 - rho)`; variance
/// `sigma^2/J11 * (2(1-rho) - J21/(J11+J21) * (1-rho)^2)`.
pub fn change_score_cs<T: Scalar>(
    means: &SubsampleMeans<T>,
    sigma: T,
    rho: T,
    j11: usize,
    j21: usize,
) -> Result<(T, T)> {
    if !sigma.is_positive_real() {
        return Err(Error::InvalidVariance);
    }
    let rho_ok = rho > -T::one() && rho <= T::one();
    if !rho_ok {
        return Err(Error::InvalidCorrelation);
    }
    if j11 == 0 {
        return Err(Error::InvalidConfig(
            "the complete subsample must be non-empty".into(),
        ));
    }
    let j11_t = T::from_count(j11);
    let fraction = T::from_count(j21) / (j11_t + T::from_count(j21));
    let one_minus_rho = T::one() - rho;
    let lambda = fraction * one_minus_rho;

    let delta_hat = means.complete_1 - means.complete_2;
    let estimate = delta_hat - lambda * (means.complete_1 - means.first_only);
    let two = T::one() + T::one();
    let variance =
        sigma * sigma / j11_t * (two * one_minus_rho - fraction * one_minus_rho * one_minus_rho);
    Ok((estimate, variance))
}

/// Shift-robust change score for non-ignorable missingness.
///
/// When incomplete rows' observed component is offset by an unknown shift,
/// the difference of the two incomplete-pattern means cancels the shift.
/// That difference is pooled with the complete-case difference by inverse
/// variance; the returned variance is
///
/// ```text
/// A/J11 - A^2 / (J11 * (sigma11*(1 + J11/J21) - 2*sigma12 + sigma22*(1 + J11/J22)))
/// ```
///
/// with `A = sigma11 - 2*sigma12 + sigma22`.
pub fn nonignorable_shift<T: Scalar>(
    means: &SubsampleMeans<T>,
    cfg: &BivariateConfig<T>,
) -> Result<(T, T)> {
    if cfg.j21 == 0 || cfg.j22 == 0 {
        return Err(Error::InvalidConfig(
            "the shift adjustment needs both incomplete subsamples non-empty".into(),
        ));
    }
    let two = T::one() + T::one();
    let a = cfg.sigma11 - two * cfg.sigma12 + cfg.sigma22;
    let j11 = T::from_count(cfg.j11);
    let var_complete = a / j11;
    let var_incomplete =
        cfg.sigma11 / T::from_count(cfg.j21) + cfg.sigma22 / T::from_count(cfg.j22);
    if !var_complete.is_positive_real() || !var_incomplete.is_positive_real() {
        return Err(Error::DegenerateVariance);
    }

    let delta_complete = means.complete_1 - means.complete_2;
    let delta_incomplete = means.first_only - means.second_only;
    let gain = var_complete / (var_complete + var_incomplete);
    let estimate = delta_complete - gain * (delta_complete - delta_incomplete);

    let denom = cfg.sigma11 * (T::one() + j11 / T::from_count(cfg.j21)) - two * cfg.sigma12
        + cfg.sigma22 * (T::one() + j11 / T::from_count(cfg.j22));
    let variance = a / j11 - a * a / (j11 * denom);
    Ok((estimate, variance))
}
