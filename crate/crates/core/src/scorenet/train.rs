//! Denoising score matching.
//!
//! With `x_t = alpha_t x_0 + sigma_t eps`, the conditional score target is
//! `-eps / sigma_t`, so the score residual of an epsilon network is
//! `(eps - eps_theta) / sigma_t`. Two per-sample losses are offered:
//!
//! - [`DsmObjective::ScoreResidual`]: `|eps_theta - eps|^2 / sigma_t^2`, the score
//!   residual with `t` uniform;
//! - [`DsmObjective::NoiseResidual`]: `|eps_theta - eps|^2`. Its expectation under
//!   uniform `t` equals the score-residual objective under a time density
//!   proportional to `sigma_t^2`, without the `1 / sigma_t^2` spikes near `t_min`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::MlpNet;
use super::net_input;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream};
use crate::schedules::NoiseSchedule;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsmObjective {
    NoiseResidual,
    ScoreResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    Constant,
    /// Linear decay to zero over the run.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub objective: DsmObjective,
    pub lr_decay: LrDecay,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            objective: DsmObjective::NoiseResidual,
            lr_decay: LrDecay::Linear,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.learning_rate > 0.0) || self.log_every == 0 {
            return Err(Error::Config(
                "training needs batch >= 1, learning rate > 0 and log_every >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// How the diffusion time of each training example is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDraw {
    Uniform,
    Fixed(f64),
}

/// A fully drawn DSM minibatch; the loss on it is a deterministic function of
/// the network parameters.
#[derive(Debug, Clone)]
pub struct DsmBatch {
    /// Network inputs `[x_t, alpha_t, sigma_t]`, one column per example.
    pub inputs: Matrix,
    /// The noise that produced each `x_t`.
    pub eps: Matrix,
    pub sigma: Vec<f64>,
}

pub fn draw_dsm_batch<R: Rng + ?Sized>(
    x0: &[&Vector],
    schedule: &NoiseSchedule,
    times: TimeDraw,
    rng: &mut R,
) -> Result<DsmBatch> {
    let d = x0
        .first()
        .map(|x| x.len())
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let b = x0.len();
    let mut inputs = Matrix::zeros(d + 2, b);
    let mut eps = Matrix::zeros(d, b);
    let mut sigma = Vec::with_capacity(b);
    for (j, x) in x0.iter().enumerate() {
        crate::error::check_dim(d, x.len())?;
        let t = match times {
            TimeDraw::Uniform => rng.random_range(schedule.t_min()..=schedule.t_max()),
            TimeDraw::Fixed(t) => t,
        };
        let c = schedule.at(t)?;
        let e = standard_normal(rng, d);
        let xt = *x * c.alpha + &e * c.sigma;
        inputs.set_column(j, &net_input(&xt, &c));
        eps.set_column(j, &e);
        sigma.push(c.sigma);
    }
    Ok(DsmBatch { inputs, eps, sigma })
}

/// Loss and `dL/d(prediction)` for predictions `pred` on `batch`.
pub fn residual_loss(pred: &Matrix, batch: &DsmBatch, objective: DsmObjective) -> (f64, Matrix) {
    let b = batch.sigma.len() as f64;
    let mut grad = pred - &batch.eps;
    let mut loss = 0.0;
    for (j, mut col) in grad.column_iter_mut().enumerate() {
        let w = match objective {
            DsmObjective::NoiseResidual => 1.0,
            DsmObjective::ScoreResidual => 1.0 / (batch.sigma[j] * batch.sigma[j]),
        };
        loss += w * col.norm_squared();
        col *= 2.0 * w / b;
    }
    (loss / b, grad)
}

pub fn dsm_loss(net: &MlpNet, batch: &DsmBatch, objective: DsmObjective) -> f64 {
    residual_loss(&net.forward_batch(&batch.inputs), batch, objective).0
}

/// Loss and exact gradient (backpropagation) in [`MlpNet::params`] order.
pub fn dsm_loss_grad(net: &MlpNet, batch: &DsmBatch, objective: DsmObjective) -> (f64, Vec<f64>) {
    let acts = net.forward_cached(&batch.inputs);
    let (loss, grad_out) = residual_loss(acts.last().expect("output"), batch, objective);
    (loss, net.backward(&acts, &grad_out))
}

/// Draws `t ~ U[t_min, t_max]` and `eps ~ N(0, I)` for each point, then returns
/// the loss and gradient.
pub fn dsm_loss_grad_sampled<R: Rng + ?Sized>(
    net: &MlpNet,
    x0: &[Vector],
    schedule: &NoiseSchedule,
    objective: DsmObjective,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if x0.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let refs: Vec<&Vector> = x0.iter().collect();
    let batch = draw_dsm_batch(&refs, schedule, TimeDraw::Uniform, rng)?;
    Ok(dsm_loss_grad(net, &batch, objective))
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Number of completed steps.
    pub step: usize,
    /// Mean minibatch loss over the window ending at `step`.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<LossPoint>,
}

pub fn train(
    net: MlpNet,
    data: &[Vector],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<(MlpNet, TrainReport)> {
    train_with_monitor(net, data, cfg, schedule, |_, _| {})
}

/// Like [`train`], calling `monitor(step, &net)` at every logging point.
pub fn train_with_monitor(
    mut net: MlpNet,
    data: &[Vector],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    mut monitor: impl FnMut(usize, &MlpNet),
) -> Result<(MlpNet, TrainReport)> {
    cfg.validate()?;
    if data.len() < cfg.batch {
        return Err(Error::Config(format!(
            "need at least {} training points, got {}",
            cfg.batch,
            data.len()
        )));
    }
    if let Some(x) = data.iter().find(|x| x.len() != net.data_dim()) {
        return Err(Error::Dimension {
            expected: net.data_dim(),
            got: x.len(),
        });
    }
    let mut rng = stream(cfg.seed, 0);
    let mut params = net.params();
    let mut adam = Adam::new(params.len(), cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut report = TrainReport::default();
    let mut window = (0.0, 0usize);

    for step in 0..cfg.steps {
        let picks = index::sample(&mut rng, data.len(), cfg.batch);
        let refs: Vec<&Vector> = picks.iter().map(|i| &data[i]).collect();
        let batch = draw_dsm_batch(&refs, schedule, TimeDraw::Uniform, &mut rng)?;
        let (loss, grad) = dsm_loss_grad(&net, &batch, cfg.objective);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        let lr = match cfg.lr_decay {
            LrDecay::Constant => cfg.learning_rate,
            LrDecay::Linear => cfg.learning_rate * (1.0 - step as f64 / cfg.steps as f64),
        };
        adam.update(&mut params, &grad, lr);
        net.set_params(&params)?;

        window.0 += loss;
        window.1 += 1;
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            report.loss_curve.push(LossPoint {
                step: done,
                loss: window.0 / window.1 as f64,
            });
            window = (0.0, 0);
            monitor(done, &net);
        }
    }
    Ok((net, report))
}
