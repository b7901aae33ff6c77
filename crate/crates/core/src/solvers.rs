//! Reverse-time integrators on a uniform time grid.
//!
//! Both solvers step from `start` down to `end` in `M` equal steps of size
//! `dt = (start - end) / M`, evaluating the drift at the left (later) time:
//!
//! - Euler for the probability-flow ODE: `x <- x - drift(x, t) dt`;
//! - Euler-Maruyama for the reverse SDE:
//!   `x <- x - [f - g^2 (s + h)] dt + g sqrt(dt) z`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::guidance::{GuidedDrift, HTerm};
use crate::rng::{standard_normal, stream, StreamRng};
use crate::schedules::NoiseSchedule;
use crate::scorenet::ScoreModel;
use crate::{Matrix, Vector};

/// Recorded times are matched against requested ones with this tolerance.
pub const TIME_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    EulerOde,
    EulerMaruyamaSde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Start time; the schedule's `t_max` when absent.
    pub start: Option<f64>,
    /// End time; the schedule's `t_min` when absent.
    pub end: Option<f64>,
    pub solver: Solver,
    pub seed: u64,
    /// Record every k-th state; 0 keeps only the start and the endpoint.
    pub record_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            start: None,
            end: None,
            solver: Solver::EulerOde,
            seed: 0,
            record_every: 0,
        }
    }
}

impl SamplerConfig {
    pub fn ode(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn sde(steps: usize) -> Self {
        Self {
            steps,
            solver: Solver::EulerMaruyamaSde,
            ..Self::default()
        }
    }

    pub fn with_window(mut self, start: f64, end: f64) -> Self {
        self.start = Some(start);
        self.end = Some(end);
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Concrete `(start, end)` for `schedule`, after validation.
    pub fn window(&self, schedule: &NoiseSchedule) -> Result<(f64, f64)> {
        let start = self.start.unwrap_or(schedule.t_max());
        let end = self.end.unwrap_or(schedule.t_min());
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(start > end) {
            return Err(Error::Config(format!("start time {start} must exceed end time {end}")));
        }
        schedule.check_time(start)?;
        schedule.check_time(end)?;
        Ok((start, end))
    }

    fn expect_solver(&self, solver: Solver) -> Result<()> {
        if self.solver == solver {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "sampler configured for {:?}, called as {solver:?}",
                self.solver
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Strictly decreasing recorded times, starting at `start`.
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub endpoint: Vector,
    pub seed: u64,
}

impl Trajectory {
    /// State recorded at `t`, if any.
    pub fn state_at(&self, t: f64) -> Option<&Vector> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= TIME_MATCH_TOL)
            .map(|k| &self.states[k])
    }

    /// Index of the recorded time closest to `t`.
    pub fn nearest_time(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
    }
}

struct Grid {
    start: f64,
    end: f64,
    dt: f64,
    steps: usize,
}

impl Grid {
    fn new(cfg: &SamplerConfig, schedule: &NoiseSchedule) -> Result<Self> {
        let (start, end) = cfg.window(schedule)?;
        Ok(Self {
            start,
            end,
            dt: (start - end) / cfg.steps as f64,
            steps: cfg.steps,
        })
    }

    fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start - i as f64 * self.dt
        }
    }
}

fn initial_state<R: Rng + ?Sized>(x_start: Option<Vector>, dim: usize, rng: &mut R) -> Result<Vector> {
    match x_start {
        Some(x) => {
            check_dim(dim, x.len())?;
            Ok(x)
        }
        None => Ok(standard_normal(rng, dim)),
    }
}

/// Shared stepping loop. `step(x, t, dt, rng)` returns the increment.
fn integrate<R, F>(grid: &Grid, cfg: &SamplerConfig, mut x: Vector, rng: &mut R, mut step: F) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: FnMut(&Vector, f64, f64, &mut R) -> Result<Vector>,
{
    let mut times = vec![grid.start];
    let mut states = vec![x.clone()];
    for i in 0..grid.steps {
        let t = grid.time(i);
        let dx = step(&x, t, grid.dt, rng)?;
        x += dx;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i });
        }
        let done = i + 1;
        if done == grid.steps || (cfg.record_every > 0 && done % cfg.record_every == 0) {
            times.push(grid.time(done));
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        endpoint: x,
        seed: cfg.seed,
    })
}

/// Euler integration of a reverse-time drift. Draws `x_start ~ N(0, I)` from
/// `rng` when no start is given.
pub fn sample_ode<R: Rng + ?Sized>(
    drift: &GuidedDrift,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_start: Option<Vector>,
    rng: &mut R,
) -> Result<Trajectory> {
    cfg.expect_solver(Solver::EulerOde)?;
    let grid = Grid::new(cfg, schedule)?;
    let x = initial_state(x_start, drift.dim(), rng)?;
    integrate(&grid, cfg, x, rng, |x, t, dt, _| Ok(drift.eval(x, t)? * -dt))
}

/// Euler-Maruyama with an arbitrary SDE drift `b(x, t)` and squared diffusion
/// `g^2(t)`: `x <- x - b dt + g sqrt(dt) z`.
pub fn integrate_sde<R, B, G>(
    sde_drift: B,
    g2: G,
    dim: usize,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_start: Option<Vector>,
    rng: &mut R,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    B: Fn(&Vector, f64) -> Result<Vector>,
    G: Fn(f64) -> Result<f64>,
{
    cfg.expect_solver(Solver::EulerMaruyamaSde)?;
    let grid = Grid::new(cfg, schedule)?;
    let x = initial_state(x_start, dim, rng)?;
    integrate(&grid, cfg, x, rng, |x, t, dt, rng| {
        let b = sde_drift(x, t)?;
        let g = g2(t)?.max(0.0).sqrt();
        let z = standard_normal(rng, x.len());
        Ok(b * -dt + z * (g * dt.sqrt()))
    })
}

/// Reverse SDE `dx = [f - g^2 (s + h)] dt + g dw`, unguided when `h` is absent.
pub fn sample_sde<R: Rng + ?Sized>(
    model: &dyn ScoreModel,
    h: Option<&HTerm>,
    cfg: &SamplerConfig,
    x_start: Option<Vector>,
    rng: &mut R,
) -> Result<Trajectory> {
    let schedule = *model.schedule();
    let drift = |x: &Vector, t: f64| -> Result<Vector> {
        let c = schedule.at(t)?;
        let s = model.score(x, t)?;
        let total = match h {
            Some(h) => {
                let hx = h(x, t, &s)?;
                s + hx
            }
            None => s,
        };
        Ok(c.drift(x) - total * c.g2)
    };
    integrate_sde(
        drift,
        |t| schedule.diffusion_g2(t),
        model.dim(),
        &schedule,
        cfg,
        x_start,
        rng,
    )
}

/// Runs `n` independent jobs in parallel, job `i` owning the stream
/// `(seed, i)`. Results come back in index order.
pub fn run_parallel<T, F>(n: usize, seed: u64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| job(i, &mut stream(seed, i as u64)))
        .collect()
}

/// Sample mean and covariance (denominator `n - 1`, zero for one sample) of the
/// states recorded at `t`.
pub fn marginal_stats(trajectories: &[Trajectory], t: f64) -> Result<(Vector, Matrix)> {
    let xs = states_at(trajectories, t)?;
    let n = xs.len();
    let d = xs[0].len();
    let mean = xs.iter().fold(Vector::zeros(d), |a, x| a + *x) / n as f64;
    let mut cov = Matrix::zeros(d, d);
    if n > 1 {
        for x in &xs {
            let c = *x - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    Ok((mean, cov))
}

/// Per-coordinate moments with standard errors, for Monte-Carlo comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vector,
    pub var: Vector,
    pub mean_se: Vector,
    /// `sqrt((m4 - var^2) / n)`, which does not assume Gaussian marginals.
    pub var_se: Vector,
}

pub fn moment_summary(trajectories: &[Trajectory], t: f64) -> Result<MomentSummary> {
    let xs = states_at(trajectories, t)?;
    let (mean, cov) = marginal_stats(trajectories, t)?;
    let n = xs.len();
    let nf = n as f64;
    let d = mean.len();
    let var = cov.diagonal();
    let mut m4 = Vector::zeros(d);
    for x in &xs {
        for i in 0..d {
            m4[i] += (x[i] - mean[i]).powi(4);
        }
    }
    m4 /= nf;
    Ok(MomentSummary {
        n,
        mean_se: var.map(|v| (v / nf).sqrt()),
        var_se: Vector::from_fn(d, |i, _| ((m4[i] - var[i] * var[i]).max(0.0) / nf).sqrt()),
        mean,
        var,
    })
}

fn states_at(trajectories: &[Trajectory], t: f64) -> Result<Vec<&Vector>> {
    if trajectories.is_empty() {
        return Err(Error::Lookup(t));
    }
    trajectories
        .iter()
        .map(|tr| tr.state_at(t).ok_or(Error::Lookup(t)))
        .collect()
}
