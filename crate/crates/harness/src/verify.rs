//! Named numerical checks of the sampler's guarantees.
//!
//! Each check reports a measured value against a threshold. Failures are
//! recorded, never thrown; only configuration problems surface as errors.

use std::sync::Arc;

use htx_core::guidance::{
    approximation_error, exact_h_drift, exact_h_term, guided_drift, guided_score_drift, unguided_drift, HSign,
};
use htx_core::oracle::conditional_score_at;
use htx_core::rng::{standard_normal, stream, StreamRng};
use htx_core::scorenet::{draw_dsm_batch, dsm_loss, dsm_loss_grad, DsmObjective, MlpNet, TimeDraw};
use htx_core::solvers::{moment_summary, run_parallel, sample_ode, sample_sde};
use htx_core::{
    DegradationOperator, GaussianMixture, GuidanceSpec, NoiseSchedule, OracleScore, Parameterization, SamplerConfig,
    ScheduleKind, ScoreModel, Trajectory, Vector, WeightSchedule,
};
use rand::Rng;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::record::{CheckResult, RunRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trajectories per dynamics in the marginal comparison.
    pub marginal_trajectories: usize,
    /// Random `(x_T, y)` pairs in the endpoint checks.
    pub endpoint_trials: usize,
    /// Euler steps in the endpoint checks.
    pub steps: usize,
    /// Test hook: reverse the exact h term.
    pub flip_h_sign: bool,
    /// Schedule for the two endpoint checks. On VP the state at `t_min`
    /// keeps a residual `sigma(t_min) c` with `sigma(t_min) ~ 0.0105`, the
    /// same size as the endpoint tolerance; OTFM's residual is `1e-3 c`.
    pub endpoint_schedule: ScheduleKind,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            marginal_trajectories: 10_000,
            endpoint_trials: 100,
            steps: 2000,
            flip_h_sign: false,
            endpoint_schedule: ScheduleKind::Otfm,
        }
    }
}

fn schedule_of(kind: ScheduleKind) -> NoiseSchedule {
    match kind {
        ScheduleKind::Vp => NoiseSchedule::vp(),
        ScheduleKind::Otfm => NoiseSchedule::otfm(),
    }
}

fn check(name: &str, measured: f64, threshold: f64, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: passed && measured.is_finite(),
        measured,
        threshold,
        detail,
    }
}

fn failed(name: &str, threshold: f64, err: impl std::fmt::Display) -> CheckResult {
    check(name, f64::NAN, threshold, false, format!("error: {err}"))
}

fn uniform_time(rng: &mut StreamRng, s: &NoiseSchedule) -> f64 {
    rng.random_range(s.t_min()..=s.t_max())
}

/// Largest `| |s(x|y~) - s(x|y)| - J(t) |` over unit-scale random draws on
/// `sched`, both absolute and relative to `max(1, J)`.
pub fn approx_error_deviation(sched: &NoiseSchedule, seed: u64, draws: usize) -> htx_core::Result<(f64, f64)> {
    let mut rng = stream(seed, 100 + sched.kind() as u64);
    let (mut abs, mut rel): (f64, f64) = (0.0, 0.0);
    for _ in 0..draws {
        let t = uniform_time(&mut rng, sched);
        let x = standard_normal(&mut rng, 2);
        let y = standard_normal(&mut rng, 2);
        let yt = standard_normal(&mut rng, 2);
        let c = sched.at(t)?;
        let gap = (conditional_score_at(&x, &yt, &c)? - conditional_score_at(&x, &y, &c)?).norm();
        let j = approximation_error(t, &y, &yt, sched)?;
        abs = abs.max((gap - j).abs());
        rel = rel.max((gap - j).abs() / j.max(1.0));
    }
    Ok((abs, rel))
}

/// Absolute deviation on the VP schedule.
pub fn approx_error_identity(seed: u64, draws: usize) -> CheckResult {
    const TOL: f64 = 1e-12;
    match approx_error_deviation(&NoiseSchedule::vp(), seed, draws) {
        Ok((w, _)) => check(
            "approximation_error_identity",
            w,
            TOL,
            w < TOL,
            format!("{draws} draws, VP"),
        ),
        Err(e) => failed("approximation_error_identity", TOL, e),
    }
}

/// Deviation relative to `max(1, J)` on both schedules. On OTFM `J` reaches
/// `1e6 |y~ - y|` near `t_min`, so only a relative bound is meaningful there.
pub fn approx_error_identity_relative(seed: u64, draws: usize) -> CheckResult {
    const TOL: f64 = 1e-13;
    let run = || -> htx_core::Result<f64> {
        let (_, a) = approx_error_deviation(&NoiseSchedule::vp(), seed, draws)?;
        let (_, b) = approx_error_deviation(&NoiseSchedule::otfm(), seed, draws)?;
        Ok(a.max(b))
    };
    match run() {
        Ok(w) => check(
            "approximation_error_identity_relative",
            w,
            TOL,
            w < TOL,
            format!("{draws} draws per schedule, relative to max(1, J)"),
        ),
        Err(e) => failed("approximation_error_identity_relative", TOL, e),
    }
}

/// Score-form guided drift with `lambda = 0` against the unguided drift on
/// both schedules. The epsilon and velocity forms rebuild the drift from a
/// different arithmetic path, so their agreement is covered by the three-way
/// check instead.
pub fn lambda_zero(seed: u64, points: usize) -> CheckResult {
    const TOL: f64 = 1e-15;
    let gm = GaussianMixture::two_component();
    let run = || -> htx_core::Result<f64> {
        let mut worst: f64 = 0.0;
        let mut rng = stream(seed, 200);
        for sched in [NoiseSchedule::vp(), NoiseSchedule::otfm()] {
            let model: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(gm.clone(), sched));
            let plain = unguided_drift(model.clone());
            for _ in 0..points {
                let t = uniform_time(&mut rng, &sched);
                let x = standard_normal(&mut rng, 2) * 3.0;
                let spec = GuidanceSpec::new(
                    standard_normal(&mut rng, 2) * 3.0,
                    WeightSchedule::Constant { value: 0.0 },
                );
                let g = guided_score_drift(model.clone(), &spec)?.eval(&x, t)?;
                worst = worst.max((g - plain.eval(&x, t)?).amax());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => check(
            "lambda_zero_reduction",
            w,
            TOL,
            w <= TOL,
            format!("{points} points per schedule"),
        ),
        Err(e) => failed("lambda_zero_reduction", TOL, e),
    }
}

/// Worst `|endpoint - target| / (1 + |target|)` over trials.
fn endpoint_ratio(
    seed: u64,
    trials: usize,
    job: impl Fn(&mut StreamRng) -> htx_core::Result<(Vector, Vector)> + Sync,
) -> htx_core::Result<f64> {
    let ratios = run_parallel(trials, seed, |_, rng| {
        let (endpoint, target) = job(rng)?;
        Ok((endpoint - &target).norm() / (1.0 + target.norm()))
    })?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Full-weight guidance (`lambda = 1`) started from `N(0, I)` pins the
/// endpoint to the coarse sample.
pub fn lambda_one(opts: &VerifyOptions) -> CheckResult {
    const TOL: f64 = 1e-2;
    let gm = GaussianMixture::two_component();
    let sched = schedule_of(opts.endpoint_schedule);
    let model: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(gm.clone(), sched));
    let run = || -> htx_core::Result<f64> {
        let op = DegradationOperator::shrink(0.5, 2)?.with_noise(0.2)?;
        let cfg = SamplerConfig::ode(opts.steps);
        endpoint_ratio(opts.seed ^ 0x3, opts.endpoint_trials, |rng| {
            let y = gm.sample_one(rng);
            let paired = op.degrade(&y, rng)?;
            let xt = standard_normal(rng, 2);
            let spec = GuidanceSpec::new(paired.coarse.clone(), WeightSchedule::Constant { value: 1.0 });
            let tr = sample_ode(&guided_score_drift(model.clone(), &spec)?, &sched, &cfg, Some(xt), rng)?;
            Ok((tr.endpoint, paired.coarse))
        })
    };
    match run() {
        Ok(w) => check(
            "lambda_one_endpoint",
            w,
            TOL,
            w < TOL,
            format!(
                "{} trials, M={}, {:?}",
                opts.endpoint_trials, opts.steps, opts.endpoint_schedule
            ),
        ),
        Err(e) => failed("lambda_one_endpoint", TOL, e),
    }
}

/// Score, epsilon (VP) and velocity (OTFM) forms of the guided drift agree.
pub fn three_way(seed: u64, points: usize) -> CheckResult {
    const TOL: f64 = 1e-10;
    let gm = GaussianMixture::two_component();
    let run = || -> htx_core::Result<f64> {
        let mut worst: f64 = 0.0;
        let mut rng = stream(seed, 400);
        for sched in [NoiseSchedule::vp(), NoiseSchedule::otfm()] {
            let model: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(gm.clone(), sched));
            let alt = match sched.kind() {
                ScheduleKind::Vp => Parameterization::Epsilon,
                ScheduleKind::Otfm => Parameterization::Velocity,
            };
            for _ in 0..points {
                let t = uniform_time(&mut rng, &sched);
                let x = standard_normal(&mut rng, 2) * 3.0;
                let lam = rng.random_range(0.0..=1.0);
                let spec = GuidanceSpec::new(
                    standard_normal(&mut rng, 2) * 3.0,
                    WeightSchedule::Constant { value: lam },
                );
                let a = guided_score_drift(model.clone(), &spec)?.eval(&x, t)?;
                let b = guided_drift(model.clone(), &spec.clone().with_parameterization(alt))?.eval(&x, t)?;
                worst = worst.max((a - b).amax());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => check(
            "three_way_equivalence",
            w,
            TOL,
            w < TOL,
            format!("{points} points per schedule"),
        ),
        Err(e) => failed("three_way_equivalence", TOL, e),
    }
}

/// The exact-h probability-flow ODE ends at its target `y`.
pub fn exact_h_endpoint(opts: &VerifyOptions) -> CheckResult {
    const TOL: f64 = 1e-2;
    let gm = GaussianMixture::two_component();
    let sched = schedule_of(opts.endpoint_schedule);
    let sign = if opts.flip_h_sign {
        HSign::Flipped
    } else {
        HSign::Correct
    };
    let run = || -> htx_core::Result<f64> {
        let cfg = SamplerConfig::ode(opts.steps);
        endpoint_ratio(opts.seed ^ 0x5, opts.endpoint_trials, |rng| {
            let y = gm.sample_one(rng);
            let xt = standard_normal(rng, 2);
            let tr = sample_ode(&exact_h_drift(&gm, &y, sched, sign)?, &sched, &cfg, Some(xt), rng)?;
            Ok((tr.endpoint, y))
        })
    };
    match run() {
        Ok(w) => check(
            "exact_h_endpoint",
            w,
            TOL,
            w < TOL,
            format!(
                "{} trials, M={}, {:?}{}",
                opts.endpoint_trials,
                opts.steps,
                opts.endpoint_schedule,
                if opts.flip_h_sign { ", h sign flipped" } else { "" }
            ),
        ),
        Err(e) => failed("exact_h_endpoint", TOL, e),
    }
}

/// Times at which the marginal check compares the two dynamics.
pub const MARGINAL_TIMES: [f64; 3] = [0.75, 0.5, 0.25];

/// Sampler grid for the marginal check: `dt = 1e-3` from 1 to `t_min`, so the
/// comparison times lie exactly on the grid.
pub fn marginal_sampler() -> SamplerConfig {
    SamplerConfig::ode(999).with_record_every(250)
}

/// Exact-h reverse SDE and probability-flow ODE trajectories, each with its
/// own target `y ~ p_0` and bridge start `x_T ~ N(alpha_T y, sigma_T^2 I)`.
pub fn marginal_trajectories(seed: u64, n: usize, sign: HSign) -> htx_core::Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let gm = GaussianMixture::two_component();
    let sched = NoiseSchedule::vp();
    let ode_cfg = marginal_sampler();
    let sde_cfg = SamplerConfig {
        solver: htx_core::Solver::EulerMaruyamaSde,
        ..ode_cfg
    };
    let model = OracleScore::new(gm.clone(), sched);
    let start = |rng: &mut StreamRng| -> htx_core::Result<(Vector, Vector)> {
        let y = gm.sample_one(rng);
        let c = sched.at(sched.t_max())?;
        let x = &y * c.alpha + standard_normal(rng, 2) * c.sigma;
        Ok((y, x))
    };
    let ode = run_parallel(n, seed, |_, rng| {
        let (y, x) = start(rng)?;
        sample_ode(&exact_h_drift(&gm, &y, sched, sign)?, &sched, &ode_cfg, Some(x), rng)
    })?;
    let sde = run_parallel(n, seed ^ 0x9e37_79b9, |_, rng| {
        let (y, x) = start(rng)?;
        let h = exact_h_term(gm.clone(), y, sched, sign)?;
        sample_sde(&model, Some(&h), &sde_cfg, Some(x), rng)
    })?;
    Ok((sde, ode))
}

/// Largest per-coordinate gap between SDE and ODE means and variances, in
/// units of the combined standard error.
pub fn marginal_agreement(opts: &VerifyOptions) -> CheckResult {
    const TOL: f64 = 3.0;
    let sign = if opts.flip_h_sign {
        HSign::Flipped
    } else {
        HSign::Correct
    };
    let run = || -> htx_core::Result<f64> {
        let (sde, ode) = marginal_trajectories(opts.seed ^ 0x7, opts.marginal_trajectories, sign)?;
        let mut worst: f64 = 0.0;
        for t in MARGINAL_TIMES {
            let a = moment_summary(&sde, t)?;
            let b = moment_summary(&ode, t)?;
            for i in 0..a.mean.len() {
                let z_mean = (a.mean[i] - b.mean[i]).abs() / a.mean_se[i].hypot(b.mean_se[i]);
                let z_var = (a.var[i] - b.var[i]).abs() / a.var_se[i].hypot(b.var_se[i]);
                worst = worst.max(z_mean).max(z_var);
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(z) => check(
            "sde_ode_marginals",
            z,
            TOL,
            z <= TOL,
            format!(
                "{} trajectories each, t in {MARGINAL_TIMES:?}, max |gap| / SE",
                opts.marginal_trajectories
            ),
        ),
        Err(e) => failed("sde_ode_marginals", TOL, e),
    }
}

/// Mean endpoint error of the exact-h ODE against an `M = 20000` reference at
/// `M in {250, 500, 1000}`, averaged over `pairs` random `(x_T, y)`.
pub fn euler_errors(seed: u64, pairs: usize) -> htx_core::Result<[f64; 3]> {
    let gm = GaussianMixture::two_component();
    let sched = NoiseSchedule::vp();
    let per_pair = run_parallel(pairs, seed, |_, rng| {
        let y = gm.sample_one(rng);
        let xt = standard_normal(rng, 2);
        let drift = exact_h_drift(&gm, &y, sched, HSign::Correct)?;
        let mut run =
            |m: usize| sample_ode(&drift, &sched, &SamplerConfig::ode(m), Some(xt.clone()), rng).map(|t| t.endpoint);
        let reference = run(20_000)?;
        let mut errs = [0.0; 3];
        for (e, m) in errs.iter_mut().zip([250, 500, 1000]) {
            *e = (run(m)? - &reference).norm();
        }
        Ok(errs)
    })?;
    let mut mean = [0.0; 3];
    for errs in &per_pair {
        for k in 0..3 {
            mean[k] += errs[k] / pairs as f64;
        }
    }
    Ok(mean)
}

pub fn euler_order(seed: u64, pairs: usize) -> CheckResult {
    const LO: f64 = 1.7;
    const HI: f64 = 2.3;
    match euler_errors(seed ^ 0xb, pairs) {
        Ok(e) => {
            let r = [e[0] / e[1], e[1] / e[2]];
            let ok = r.iter().all(|x| (LO..=HI).contains(x));
            let furthest = if (r[0] - 2.0).abs() >= (r[1] - 2.0).abs() {
                r[0]
            } else {
                r[1]
            };
            check(
                "euler_order",
                furthest,
                LO,
                ok,
                format!("error ratios {:.3}, {:.3}; accepted range [{LO}, {HI}]", r[0], r[1]),
            )
        }
        Err(e) => failed("euler_order", LO, e),
    }
}

/// Worst relative gap between backpropagated DSM gradients and fourth-order
/// central differences, over every parameter of a small network.
pub fn dsm_gradient(seed: u64) -> CheckResult {
    const TOL: f64 = 1e-5;
    let run = || -> htx_core::Result<f64> {
        let net = MlpNet::for_data_dim(2, &[8, 8], &mut stream(seed, 600))?;
        let data = GaussianMixture::two_component().sample(24, &mut stream(seed, 601));
        let refs: Vec<&Vector> = data.iter().collect();
        let batch = draw_dsm_batch(&refs, &NoiseSchedule::vp(), TimeDraw::Uniform, &mut stream(seed, 602))?;
        let mut worst: f64 = 0.0;
        for obj in [DsmObjective::NoiseResidual, DsmObjective::ScoreResidual] {
            let (_, grad) = dsm_loss_grad(&net, &batch, obj);
            let p0 = net.params();
            for k in 0..p0.len() {
                let h = 1e-4 * p0[k].abs().max(1.0);
                let at = |d: f64| -> htx_core::Result<f64> {
                    let mut p = p0.clone();
                    p[k] += d;
                    Ok(dsm_loss(&MlpNet::from_params(net.widths(), &p)?, &batch, obj))
                };
                let fd = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
                let gap = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-8);
                worst = worst.max(gap);
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => check(
            "dsm_gradient",
            w,
            TOL,
            w < TOL,
            "all parameters of a [4, 8, 8, 2] network".into(),
        ),
        Err(e) => failed("dsm_gradient", TOL, e),
    }
}

/// Runs every check and collects them in a record.
pub fn run_verify(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<RunRecord> {
    let mut cfg = cfg.clone();
    cfg.experiment.kind = ExperimentKind::Verify;
    cfg.experiment.seed = opts.seed;
    cfg.validate()?;
    let mut record = RunRecord::new(&cfg);
    record.checks = vec![
        approx_error_identity(opts.seed, 500),
        approx_error_identity_relative(opts.seed, 500),
        lambda_zero(opts.seed, 1000),
        lambda_one(opts),
        three_way(opts.seed, 1000),
        exact_h_endpoint(opts),
        marginal_agreement(opts),
        euler_order(opts.seed, 100),
        dsm_gradient(opts.seed),
    ];
    Ok(record)
}
