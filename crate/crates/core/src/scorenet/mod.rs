//! Score models and the trainable epsilon-prediction network.
//!
//! A score model may be queried in three equivalent parameterizations:
//! the score `s = grad log p_t`, the noise prediction `eps = -sigma_t s`, and the
//! probability-flow velocity `v = f(x, t) - g^2(t) s / 2`.

mod io;
mod mlp;
mod train;

pub use io::{read_weights, write_weights, MAGIC};
pub use mlp::MlpNet;
pub use train::{
    draw_dsm_batch, dsm_loss, dsm_loss_grad, dsm_loss_grad_sampled, residual_loss, train, train_with_monitor, Adam,
    DsmBatch, DsmObjective, LossPoint, LrDecay, TimeDraw, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use crate::schedules::{Coefficients, NoiseSchedule};
use crate::Vector;

/// Anything that can evaluate the marginal score of a diffusion at `(x, t)`.
pub trait ScoreModel: Send + Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn dim(&self) -> usize;

    fn score(&self, x: &Vector, t: f64) -> Result<Vector>;

    fn eps(&self, x: &Vector, t: f64) -> Result<Vector> {
        let c = self.schedule().at(t)?;
        Ok(score_to_eps(&self.score(x, t)?, c.sigma))
    }

    fn velocity(&self, x: &Vector, t: f64) -> Result<Vector> {
        let c = self.schedule().at(t)?;
        Ok(score_to_velocity_at(&self.score(x, t)?, x, &c))
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for std::sync::Arc<M> {
    fn schedule(&self) -> &NoiseSchedule {
        (**self).schedule()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        (**self).score(x, t)
    }
    fn eps(&self, x: &Vector, t: f64) -> Result<Vector> {
        (**self).eps(x, t)
    }
    fn velocity(&self, x: &Vector, t: f64) -> Result<Vector> {
        (**self).velocity(x, t)
    }
}

/// `s = -eps / sigma`.
pub fn eps_to_score(eps: &Vector, sigma: f64) -> Result<Vector> {
    if sigma > 0.0 {
        Ok(eps / -sigma)
    } else {
        Err(Error::Singularity(format!("eps -> score needs sigma > 0, got {sigma}")))
    }
}

/// `eps = -sigma s`.
pub fn score_to_eps(score: &Vector, sigma: f64) -> Vector {
    score * -sigma
}

pub fn score_to_velocity_at(score: &Vector, x: &Vector, c: &Coefficients) -> Vector {
    c.drift(x) - score * (0.5 * c.g2)
}

/// `v = f(x, t) - g^2(t) s / 2`.
pub fn score_to_velocity(score: &Vector, x: &Vector, t: f64, schedule: &NoiseSchedule) -> Result<Vector> {
    Ok(score_to_velocity_at(score, x, &schedule.at(t)?))
}

pub fn velocity_to_score_at(v: &Vector, x: &Vector, c: &Coefficients) -> Result<Vector> {
    if c.g2 > 0.0 {
        Ok((c.drift(x) - v) * (2.0 / c.g2))
    } else {
        Err(Error::Singularity(format!(
            "velocity -> score needs g^2 > 0 at t = {}",
            c.t
        )))
    }
}

/// Inverse of [`score_to_velocity`].
pub fn velocity_to_score(v: &Vector, x: &Vector, t: f64, schedule: &NoiseSchedule) -> Result<Vector> {
    velocity_to_score_at(v, x, &schedule.at(t)?)
}

/// Network input `[x, alpha_t, sigma_t]`.
pub fn net_input(x: &Vector, c: &Coefficients) -> Vector {
    let d = x.len();
    Vector::from_fn(d + 2, |i, _| match i {
        i if i < d => x[i],
        i if i == d => c.alpha,
        _ => c.sigma,
    })
}

/// Epsilon prediction of `net` at `(x, t)`.
pub fn net_forward(net: &MlpNet, x: &Vector, t: f64, schedule: &NoiseSchedule) -> Result<Vector> {
    crate::error::check_dim(net.data_dim(), x.len())?;
    let c = schedule.at(t)?;
    Ok(net.forward(&net_input(x, &c)))
}

/// Score model backed by a trained epsilon network.
#[derive(Debug, Clone)]
pub struct NetScore {
    net: MlpNet,
    schedule: NoiseSchedule,
}

impl NetScore {
    pub fn new(net: MlpNet, schedule: NoiseSchedule) -> Self {
        Self { net, schedule }
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }
}

impl ScoreModel for NetScore {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.net.data_dim()
    }

    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        let c = self.schedule.at(t)?;
        eps_to_score(&self.eps(x, t)?, c.sigma)
    }

    fn eps(&self, x: &Vector, t: f64) -> Result<Vector> {
        net_forward(&self.net, x, t, &self.schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn eps_score_examples() {
        assert_eq!(eps_to_score(&v(&[0.8, 0.0]), 0.8).unwrap(), v(&[-1.0, 0.0]));
        assert_eq!(eps_to_score(&v(&[0.0, 0.0]), 0.3).unwrap(), v(&[0.0, 0.0]));
        assert!(matches!(eps_to_score(&v(&[1.0]), 0.0), Err(Error::Singularity(_))));
    }

    #[test]
    fn velocity_examples() {
        let otfm = NoiseSchedule::otfm();
        let x = v(&[1.0]);
        assert_eq!(
            score_to_velocity(&v(&[0.0]), &x, 0.5, &otfm).unwrap(),
            otfm.drift_f(&x, 0.5).unwrap()
        );
        assert_relative_eq!(score_to_velocity(&v(&[-1.0]), &x, 0.5, &otfm).unwrap()[0], -1.0);
    }

    #[test]
    fn net_score_uses_sigma_scaling() {
        let net = MlpNet::for_data_dim(2, &[8], &mut stream(0, 0)).unwrap();
        let vp = NoiseSchedule::vp();
        let m = NetScore::new(net.clone(), vp);
        let x = v(&[0.3, -0.4]);
        let (_, sigma) = vp.alpha_sigma(0.6).unwrap();
        let eps = net_forward(&net, &x, 0.6, &vp).unwrap();
        assert_eq!(m.eps(&x, 0.6).unwrap(), eps);
        assert_relative_eq!(m.score(&x, 0.6).unwrap(), eps / -sigma, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn parameterization_round_trips(seed in 0u64..1000, t in 0.01f64..0.99, otfm in any::<bool>()) {
            let schedule = if otfm { NoiseSchedule::otfm() } else { NoiseSchedule::vp() };
            let mut rng = stream(seed, 0);
            let eps = standard_normal(&mut rng, 3);
            let x = standard_normal(&mut rng, 3) * 2.0;
            let c = schedule.at(t).unwrap();
            let back = score_to_eps(&eps_to_score(&eps, c.sigma).unwrap(), c.sigma);
            prop_assert!((&back - &eps).amax() <= 1e-15 * eps.amax().max(1.0) * 4.0);
            let s = eps_to_score(&eps, c.sigma).unwrap();
            let vel = score_to_velocity(&s, &x, t, &schedule).unwrap();
            let s2 = velocity_to_score(&vel, &x, t, &schedule).unwrap();
            prop_assert!((&s2 - &s).amax() <= 1e-12 * s.amax().max(1.0));
        }
    }
}
