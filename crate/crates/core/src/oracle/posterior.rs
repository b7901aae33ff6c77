//! Conjugate posterior `p(y | y~)` for a Gaussian-mixture prior observed
//! through `y~ = A y + s z`.

use nalgebra::Cholesky;

use super::mixture::{log_sum_exp, GaussianMixture};
use super::operator::DegradationOperator;
use crate::error::{check_dim, Error, Result};
use crate::{Matrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Exact posterior mixture. Each component receives the Kalman update and is
/// reweighted by the marginal likelihood `N(y~; A mu_k, A Sigma_k A^T + s^2 I)`.
pub fn linear_gaussian_posterior(
    prior: &GaussianMixture,
    op: &DegradationOperator,
    measured: &Vector,
) -> Result<GaussianMixture> {
    check_dim(op.data_dim(), prior.dim())?;
    check_dim(op.measurement_dim(), measured.len())?;
    let s = op.noise_std();
    if s == 0.0 {
        let why = if is_invertible(op.matrix()) {
            "noise-free measurement through an invertible operator pins y to a point"
        } else {
            "noise-free measurement through a non-invertible operator"
        };
        return Err(Error::DegeneratePosterior(why.into()));
    }
    let a = op.matrix();
    let m = op.measurement_dim();
    let noise = Matrix::identity(m, m) * (s * s);

    let mut log_weights = Vec::with_capacity(prior.components().len());
    let mut updated = Vec::with_capacity(prior.components().len());
    for c in prior.components() {
        let sigma_at = c.cov() * a.transpose();
        let innov_cov = a * &sigma_at + &noise;
        let chol = Cholesky::new(innov_cov)
            .ok_or_else(|| Error::DegeneratePosterior("innovation covariance not SPD".into()))?;
        let innov = measured - a * c.mean();
        // gain K = Sigma A^T S^{-1}
        let gain = chol.solve(&sigma_at.transpose()).transpose();
        let mean = c.mean() + &gain * &innov;
        let cov = c.cov() - &gain * a * c.cov();
        let cov = (&cov + cov.transpose()) * 0.5;

        let white = chol
            .l_dirty()
            .solve_lower_triangular(&innov)
            .expect("Cholesky factor has a positive diagonal");
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_lik = -0.5 * (m as f64 * LN_2PI + log_det + white.norm_squared());
        log_weights.push(c.weight().ln() + log_lik);
        updated.push((mean, cov));
    }

    let lse = log_sum_exp(&log_weights);
    let mut parts: Vec<_> = log_weights
        .iter()
        .zip(updated)
        .map(|(lw, (mean, cov))| ((lw - lse).exp(), mean, cov))
        .filter(|p| p.0 > 0.0)
        .collect();
    let total: f64 = parts.iter().map(|p| p.0).sum();
    for p in &mut parts {
        p.0 /= total;
    }
    GaussianMixture::new(parts)
}

/// Posterior mean `E[y | y~]`, the MMSE estimate. Noise-free measurements are
/// allowed when `A` is invertible, in which case the answer is `A^{-1} y~`.
pub fn posterior_mean(prior: &GaussianMixture, op: &DegradationOperator, measured: &Vector) -> Result<Vector> {
    if op.noise_std() == 0.0 {
        check_dim(op.measurement_dim(), measured.len())?;
        return op
            .matrix()
            .clone()
            .lu()
            .solve(measured)
            .filter(|_| is_invertible(op.matrix()))
            .ok_or_else(|| {
                Error::DegeneratePosterior("noise-free measurement through a non-invertible operator".into())
            });
    }
    Ok(linear_gaussian_posterior(prior, op, measured)?.mean())
}

fn is_invertible(a: &Matrix) -> bool {
    a.is_square() && {
        let svd = a.clone().svd(false, false);
        let max = svd.singular_values.max();
        svd.singular_values.min() > max * 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn scalar_conjugate_update() {
        let prior = GaussianMixture::standard(1).unwrap();
        let op = DegradationOperator::identity(1).with_noise(1.0).unwrap();
        let post = linear_gaussian_posterior(&prior, &op, &v(&[2.0])).unwrap();
        assert_relative_eq!(post.components()[0].mean()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(post.components()[0].cov()[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn huge_noise_returns_the_prior() {
        let prior = GaussianMixture::standard(1).unwrap();
        let op = DegradationOperator::identity(1).with_noise(1e8).unwrap();
        let post = linear_gaussian_posterior(&prior, &op, &v(&[2.0])).unwrap();
        assert!(post.components()[0].mean()[0].abs() < 1e-12);
        assert!((post.components()[0].cov()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_measurement_selects_its_component() {
        let prior = GaussianMixture::symmetric_pair(v(&[2.0]), 1.0).unwrap();
        let op = DegradationOperator::identity(1).with_noise(0.5).unwrap();
        let post = linear_gaussian_posterior(&prior, &op, &v(&[6.0])).unwrap();
        // Marginal likelihoods N(6; +-2, 1.25) written out directly.
        let var: f64 = 1.25;
        let l_plus = (-(6.0f64 - 2.0).powi(2) / (2.0 * var)).exp();
        let l_minus = (-(6.0f64 + 2.0).powi(2) / (2.0 * var)).exp();
        let expect = l_plus / (l_plus + l_minus);
        let w = post.weights();
        let total_mass: f64 = w.iter().sum();
        assert_relative_eq!(total_mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[0], expect, epsilon = 1e-12);
        assert!(w[0] > 1.0 - 1e-8);
    }

    #[test]
    fn single_gaussian_matches_kalman_formula() {
        let cov = Matrix::from_row_slice(3, 3, &[1.0, 0.4, 0.1, 0.4, 1.5, 0.2, 0.1, 0.2, 0.7]);
        let mu = v(&[0.2, -0.5, 1.0]);
        let prior = GaussianMixture::new(vec![(1.0, mu.clone(), cov.clone())]).unwrap();
        let op = DegradationOperator::blur_1d(1.0, 3).unwrap().with_noise(0.3).unwrap();
        let yt = v(&[0.4, 0.1, -0.2]);
        let post = linear_gaussian_posterior(&prior, &op, &yt).unwrap();
        // Information form: P = (Sigma^-1 + A^T A / s^2)^-1, m = P (Sigma^-1 mu + A^T y / s^2)
        let a = op.matrix();
        let prec = cov.clone().try_inverse().unwrap() + a.transpose() * a / 0.09;
        let p = prec.try_inverse().unwrap();
        let m = &p * (cov.try_inverse().unwrap() * &mu + a.transpose() * &yt / 0.09);
        assert!((post.mean() - m).amax() < 1e-10);
        assert!((post.components()[0].cov() - p).amax() < 1e-10);
    }

    #[test]
    fn importance_sampling_cross_check() {
        let prior = GaussianMixture::symmetric_pair(v(&[1.0, -0.5]), 0.8).unwrap();
        let op = DegradationOperator::shrink(0.5, 2).unwrap().with_noise(0.6).unwrap();
        let yt = v(&[0.3, 0.1]);
        let analytic = posterior_mean(&prior, &op, &yt).unwrap();

        let n = 100_000;
        let mut rng = stream(11, 0);
        let draws = prior.sample(n, &mut rng);
        let s2 = 0.36;
        let logw: Vec<f64> = draws
            .iter()
            .map(|y| -(&yt - op.matrix() * y).norm_squared() / (2.0 * s2))
            .collect();
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let est = draws.iter().zip(&w).fold(Vector::zeros(2), |a, (y, wi)| a + y * *wi) / wsum;
        // self-normalized IS standard error via the delta method
        let ess = wsum * wsum / w.iter().map(|x| x * x).sum::<f64>();
        let post = linear_gaussian_posterior(&prior, &op, &yt).unwrap();
        let cov = post.covariance();
        for i in 0..2 {
            let se = (cov[(i, i)] / ess).sqrt();
            assert!(
                (est[i] - analytic[i]).abs() < 3.0 * se,
                "coord {i}: {} vs {}",
                est[i],
                analytic[i]
            );
        }
    }

    #[test]
    fn noise_free_cases() {
        let prior = GaussianMixture::standard(2).unwrap();
        let op = DegradationOperator::shrink(0.5, 2).unwrap();
        assert!(matches!(
            linear_gaussian_posterior(&prior, &op, &v(&[1.0, 1.0])),
            Err(Error::DegeneratePosterior(_))
        ));
        assert_eq!(posterior_mean(&prior, &op, &v(&[1.0, 1.0])).unwrap(), v(&[2.0, 2.0]));
        let masked = DegradationOperator::mask(&[1], 2).unwrap();
        assert!(matches!(
            posterior_mean(&prior, &masked, &v(&[1.0, 0.0])),
            Err(Error::DegeneratePosterior(_))
        ));
    }
}
