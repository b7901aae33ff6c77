//! Analytic ground truth for the sampler.
//!
//! Gaussian mixtures stay Gaussian mixtures under `x_t = alpha_t x_0 + sigma_t eps`,
//! so marginal scores, the exact h-function `grad log p(x_0 = y | x_t)` and
//! linear-Gaussian posteriors are all available in closed form.

mod mixture;
mod operator;
mod posterior;

pub use mixture::{Component, ComponentSpec, GaussianMixture, MixtureSpec};
pub use operator::{DegradationOperator, LiftRule, PairedSample};
pub use posterior::{linear_gaussian_posterior, posterior_mean};

use crate::error::{check_dim, Result};
use crate::schedules::{Coefficients, NoiseSchedule};
use crate::scorenet::ScoreModel;
use crate::Vector;

/// `grad_x log N(x; alpha x0, sigma^2 I) = (alpha x0 - x) / sigma^2`.
pub fn conditional_score_at(x: &Vector, x0: &Vector, c: &Coefficients) -> Result<Vector> {
    c.require_sigma()?;
    check_dim(x.len(), x0.len())?;
    Ok((x0 * c.alpha - x) / (c.sigma * c.sigma))
}

pub fn conditional_score(x: &Vector, x0: &Vector, schedule: &NoiseSchedule, t: f64) -> Result<Vector> {
    conditional_score_at(x, x0, &schedule.at(t)?)
}

/// Exact `h = grad log p_t(x_0 = y | x_t)`: the conditional score minus the
/// marginal score of the pushed-forward data distribution.
pub fn exact_h(x: &Vector, y: &Vector, data: &GaussianMixture, schedule: &NoiseSchedule, t: f64) -> Result<Vector> {
    let c = schedule.at(t)?;
    let cond = conditional_score_at(x, y, &c)?;
    let marginal = data.pushforward_with(c.alpha, c.sigma)?.score(x)?;
    Ok(cond - marginal)
}

/// Score model backed by the exact marginal score of a Gaussian mixture.
#[derive(Debug, Clone)]
pub struct OracleScore {
    data: GaussianMixture,
    schedule: NoiseSchedule,
}

impl OracleScore {
    pub fn new(data: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self { data, schedule }
    }

    pub fn data(&self) -> &GaussianMixture {
        &self.data
    }
}

impl ScoreModel for OracleScore {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        let c = self.schedule.at(t)?;
        self.data.pushforward_with(c.alpha, c.sigma)?.score(x)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};
    use crate::Error;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn coeffs(alpha: f64, sigma: f64) -> Coefficients {
        Coefficients {
            t: 0.5,
            alpha,
            sigma,
            drift_rate: 0.0,
            sigma_dot: 0.0,
            g2: 1.0,
        }
    }

    /// The VP time at which `alpha_t = target`, by bisection.
    pub(crate) fn vp_time_for_alpha(target: f64) -> f64 {
        let s = NoiseSchedule::vp();
        let (mut lo, mut hi) = (s.t_min(), s.t_max());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s.alpha_sigma(mid).unwrap().0 > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn conditional_score_examples() {
        let c = coeffs(0.6, 0.8);
        let s = conditional_score_at(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &c).unwrap();
        assert_relative_eq!(s[0], 0.9375, epsilon = 1e-15);
        assert_eq!(s[1], 0.0);
        let x0 = v(&[0.3, -2.0]);
        assert!(conditional_score_at(&(&x0 * 0.6), &x0, &c).unwrap().amax() < 1e-15);
        let s = conditional_score_at(&v(&[1.0]), &v(&[2.0]), &coeffs(1.0, 1.0)).unwrap();
        assert_eq!(s[0], 1.0);
        assert!(matches!(
            conditional_score_at(&v(&[1.0]), &v(&[2.0]), &coeffs(1.0, 0.0)),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn exact_h_for_standard_normal() {
        let t = vp_time_for_alpha(0.6);
        let vp = NoiseSchedule::vp();
        let (a, s) = vp.alpha_sigma(t).unwrap();
        assert_relative_eq!(a, 0.6, epsilon = 1e-12);
        assert_relative_eq!(s, 0.8, epsilon = 1e-12);
        let gm = GaussianMixture::standard(2).unwrap();
        let x = v(&[0.5, 0.0]);
        let h = exact_h(&x, &v(&[1.0, 0.0]), &gm, &vp, t).unwrap();
        assert_relative_eq!(h[0], 0.65625, epsilon = 1e-10);
        assert!(h[1].abs() < 1e-12);

        // Independent route: log p(x0 = y | x_t) = log N(x_t; a y, s^2) + log p0(y) - log p_t(x_t),
        // differentiated numerically in x_t.
        let y = v(&[1.0, 0.0]);
        let log_post = |xt: &Vector| {
            let cond = GaussianMixture::isotropic(&y * a, s * s).unwrap().logpdf(xt).unwrap();
            let marg = GaussianMixture::standard(2).unwrap().logpdf(xt).unwrap();
            cond - marg
        };
        let hstep = 1e-5;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += hstep;
            xm[i] -= hstep;
            let fd = (log_post(&xp) - log_post(&xm)) / (2.0 * hstep);
            assert_relative_eq!(fd, h[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn exact_h_vanishes_at_the_mode() {
        let vp = NoiseSchedule::vp();
        let t = 0.4;
        let (a, _) = vp.alpha_sigma(t).unwrap();
        let y = v(&[1.2, -0.7]);
        let gm = GaussianMixture::isotropic(y.clone(), 0.3).unwrap();
        let x = &y * a;
        assert!(exact_h(&x, &y, &gm, &vp, t).unwrap().amax() < 1e-12);
    }

    #[test]
    fn bayes_identity_holds_exactly() {
        let gm = GaussianMixture::two_component();
        let mut rng = stream(5, 0);
        for schedule in [NoiseSchedule::vp(), NoiseSchedule::otfm()] {
            for _ in 0..200 {
                let t = rng.random_range(schedule.t_min()..schedule.t_max());
                let x = standard_normal(&mut rng, 2) * 3.0;
                let y = gm.sample_one(&mut rng);
                let h = exact_h(&x, &y, &gm, &schedule, t).unwrap();
                let s = gm.pushforward(&schedule, t).unwrap().score(&x).unwrap();
                let cond = conditional_score(&x, &y, &schedule, t).unwrap();
                let scale = cond.amax().max(1.0);
                assert!((h + s - &cond).amax() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn oracle_score_checks_dimension_and_range() {
        let m = OracleScore::new(GaussianMixture::standard(2).unwrap(), NoiseSchedule::vp());
        assert!(m.score(&v(&[1.0]), 0.5).is_err());
        assert!(matches!(m.score(&v(&[1.0, 0.0]), 1.5), Err(Error::Range { .. })));
        assert_eq!(m.score(&v(&[1.0, 0.0]), 0.5).unwrap(), v(&[-1.0, 0.0]));
    }
}
