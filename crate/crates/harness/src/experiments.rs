//! Restoration experiments on analytic toys.
//!
//! Every condition of an experiment replays the same trials: trial `i` draws
//! its fine sample, its measurement noise and its start state from stream
//! `(seed, i)`, so differences between conditions are paired.

use std::sync::Arc;

use htx_core::guidance::{approx_h_term, approximation_error, guided_drift, sdedit_start_with_noise, unguided_drift};
use htx_core::oracle::posterior_mean;
use htx_core::rng::{standard_normal, StreamRng};
use htx_core::solvers::{run_parallel, sample_ode, sample_sde};
use htx_core::Result as CoreResult;
use htx_core::{
    DegradationOperator, GaussianMixture, GuidanceSpec, NoiseSchedule, PairedSample, SamplerConfig, ScoreModel, Solver,
    Vector, WeightSchedule,
};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::metrics::{aggregate, moment_distances, mse, non_decreasing_trend, CurvePoint, Stat, TrialRow};
use crate::record::{CheckResult, RunRecord};

/// Resolved experiment inputs.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub data: GaussianMixture,
    pub op: DegradationOperator,
    pub model: Arc<dyn ScoreModel>,
    pub schedule: NoiseSchedule,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.density.build()?;
        let op = cfg.operator.build(data.dim())?;
        let model = cfg.score_model(&data)?;
        Ok(Self {
            cfg: cfg.clone(),
            data,
            op,
            model,
            schedule: cfg.schedule,
        })
    }

    fn trials(&self) -> usize {
        self.cfg.experiment.trials
    }

    fn seed(&self) -> u64 {
        self.cfg.experiment.seed
    }
}

/// Inputs shared by every condition for one trial index.
pub struct Trial {
    pub paired: PairedSample,
    pub x_start: Vector,
}

pub fn draw_trial(ctx: &Context, rng: &mut StreamRng) -> CoreResult<Trial> {
    let y = ctx.data.sample_one(rng);
    let paired = ctx.op.degrade(&y, rng)?;
    let x_start = standard_normal(rng, ctx.data.dim());
    Ok(Trial { paired, x_start })
}

fn guidance_spec(ctx: &Context, weight: WeightSchedule, paired: &PairedSample) -> CoreResult<GuidanceSpec> {
    let g = &ctx.cfg.guidance;
    let spec = match (g.valid_exponent, g.invalid_exponent, weight.exponent()) {
        (Some(va), Some(ia), Some(_)) if paired.valid.iter().any(|v| !v) => {
            GuidanceSpec::from_mask(paired.coarse.clone(), weight, &paired.valid, va, ia)?
        }
        _ => GuidanceSpec::new(paired.coarse.clone(), weight),
    };
    Ok(spec.with_parameterization(g.parameterization))
}

/// Endpoint of the guided sampler for one trial.
pub fn guided_endpoint(
    ctx: &Context,
    weight: WeightSchedule,
    trial: &Trial,
    rng: &mut StreamRng,
) -> CoreResult<Vector> {
    let spec = guidance_spec(ctx, weight, &trial.paired)?;
    let sampler = ctx.cfg.sampler;
    let tr = match sampler.solver {
        Solver::EulerOde => {
            let drift = guided_drift(ctx.model.clone(), &spec)?;
            sample_ode(&drift, &ctx.schedule, &sampler, Some(trial.x_start.clone()), rng)?
        }
        Solver::EulerMaruyamaSde => {
            let h = approx_h_term(&spec, ctx.schedule)?;
            sample_sde(ctx.model.as_ref(), Some(&h), &sampler, Some(trial.x_start.clone()), rng)?
        }
    };
    Ok(tr.endpoint)
}

/// Endpoint of the noise-and-denoise baseline: noise `y~` to `t0`, reusing the
/// trial's start noise, then integrate the unguided dynamics down to `t_min`.
pub fn sdedit_endpoint(ctx: &Context, t0: f64, trial: &Trial, rng: &mut StreamRng) -> CoreResult<Vector> {
    let (x0, t0) = sdedit_start_with_noise(&trial.paired.coarse, t0, &ctx.schedule, &trial.x_start)?;
    let base = ctx.cfg.sampler;
    let (start, end) = base.window(&ctx.schedule)?;
    let frac = (t0 - end) / (start - end);
    let steps = ((base.steps as f64 * frac).round() as usize).max(1);
    let sampler = SamplerConfig {
        steps,
        start: Some(t0),
        end: Some(end),
        ..base
    };
    let tr = match sampler.solver {
        Solver::EulerOde => sample_ode(
            &unguided_drift(ctx.model.clone()),
            &ctx.schedule,
            &sampler,
            Some(x0),
            rng,
        )?,
        Solver::EulerMaruyamaSde => sample_sde(ctx.model.as_ref(), None, &sampler, Some(x0), rng)?,
    };
    Ok(tr.endpoint)
}

/// How a condition produces its endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Guided(WeightSchedule),
    Sdedit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub label: String,
    pub family: String,
    pub x: Option<f64>,
    pub method: Method,
}

impl Condition {
    pub fn guided(weight: WeightSchedule) -> Self {
        let (family, x) = match weight {
            WeightSchedule::PowerOfSigma { exponent } => ("power_of_sigma", Some(exponent)),
            WeightSchedule::PowerOfTime { exponent } => ("power_of_time", Some(exponent)),
            WeightSchedule::Constant { value } => ("constant", Some(value)),
        };
        let label = match weight {
            WeightSchedule::Constant { value } => format!("constant c={value}"),
            _ => format!("{family} a={}", x.unwrap_or_default()),
        };
        Self {
            label,
            family: family.into(),
            x,
            method: Method::Guided(weight),
        }
    }

    pub fn unguided() -> Self {
        Self {
            label: "unguided".into(),
            family: "unguided".into(),
            x: None,
            method: Method::Guided(WeightSchedule::Constant { value: 0.0 }),
        }
    }

    pub fn sdedit(t0: f64) -> Self {
        Self {
            label: format!("sdedit t0={t0}"),
            family: "sdedit".into(),
            x: Some(t0),
            method: Method::Sdedit(t0),
        }
    }
}

/// Per-trial rows and endpoints of one condition.
pub struct ConditionRun {
    pub rows: Vec<TrialRow>,
    pub endpoints: Vec<Vector>,
}

pub fn run_condition(ctx: &Context, cond: &Condition) -> Result<ConditionRun> {
    let results = run_parallel(ctx.trials(), ctx.seed(), |i, rng| {
        let trial = draw_trial(ctx, rng)?;
        let x = match cond.method {
            Method::Guided(w) => guided_endpoint(ctx, w, &trial, rng)?,
            Method::Sdedit(t0) => sdedit_endpoint(ctx, t0, &trial, rng)?,
        };
        let y = &trial.paired.fine;
        // Noise-free measurements through a singular operator have no finite
        // posterior mean; the column is left empty for those.
        let posterior_mse = if ctx.op.noise_std() > 0.0 {
            Some(mse(&posterior_mean(&ctx.data, &ctx.op, &trial.paired.measurement)?, y))
        } else {
            posterior_mean(&ctx.data, &ctx.op, &trial.paired.measurement)
                .ok()
                .map(|m| mse(&m, y))
        };
        let row = TrialRow {
            condition: cond.label.clone(),
            family: cond.family.clone(),
            x: cond.x,
            trial: i,
            mse_to_y: mse(&x, y),
            mse_to_coarse: mse(&x, &trial.paired.coarse),
            loglik_p0: ctx.data.logpdf(&x)?,
            posterior_mse,
        };
        Ok((row, x))
    });
    let (rows, endpoints) = results?.into_iter().unzip();
    Ok(ConditionRun { rows, endpoints })
}

fn push_condition(record: &mut RunRecord, ctx: &Context, cond: &Condition) -> Result<ConditionRun> {
    let run = run_condition(ctx, cond)?;
    record
        .aggregates
        .push(aggregate(&run.rows, moment_distances(&run.endpoints, &ctx.data)));
    record.trials.extend(run.rows.iter().cloned());
    Ok(run)
}

/// Mean `J(t)` over trials on an 11-point time grid.
fn error_curve(ctx: &Context) -> Result<Vec<CurvePoint>> {
    let (t_lo, t_hi) = (ctx.schedule.t_min(), ctx.schedule.t_max());
    let times: Vec<f64> = (0..=10).map(|k| t_lo + (t_hi - t_lo) * k as f64 / 10.0).collect();
    let per_trial = run_parallel(ctx.trials(), ctx.seed(), |_, rng| {
        let trial = draw_trial(ctx, rng)?;
        times
            .iter()
            .map(|&t| approximation_error(t, &trial.paired.fine, &trial.paired.coarse, &ctx.schedule))
            .collect::<CoreResult<Vec<f64>>>()
    })?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let s = Stat::of(&per_trial.iter().map(|v| v[k]).collect::<Vec<_>>());
            CurvePoint {
                t,
                mean: s.mean,
                se: s.se,
            }
        })
        .collect())
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment.kind = kind;
    c
}

/// Guided restoration with the configured weight, an unguided reference row,
/// and the exact posterior mean as a per-trial reference column. With
/// `average_exponents`, one row per exponent plus an `average` row whose
/// per-trial metrics are averaged over those exponents.
pub fn run_restore(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let cfg = expect_kind(cfg, ExperimentKind::Restore);
    let ctx = Context::new(&cfg)?;
    let mut record = RunRecord::new(&cfg);
    let avg = &cfg.experiment.average_exponents;
    if avg.is_empty() {
        push_condition(&mut record, &ctx, &Condition::guided(cfg.guidance.weight))?;
    } else {
        let mut runs = Vec::new();
        for &a in avg {
            let cond = Condition::guided(cfg.guidance.weight.with_exponent(a)?);
            runs.push(push_condition(&mut record, &ctx, &cond)?);
        }
        let k = runs.len() as f64;
        let rows: Vec<TrialRow> = (0..ctx.trials())
            .map(|i| {
                let mean = |f: fn(&TrialRow) -> f64| runs.iter().map(|r| f(&r.rows[i])).sum::<f64>() / k;
                TrialRow {
                    condition: "average".into(),
                    family: "average".into(),
                    x: None,
                    trial: i,
                    mse_to_y: mean(|r| r.mse_to_y),
                    mse_to_coarse: mean(|r| r.mse_to_coarse),
                    loglik_p0: mean(|r| r.loglik_p0),
                    posterior_mse: runs[0].rows[i].posterior_mse,
                }
            })
            .collect();
        let endpoints: Vec<Vector> = runs.iter().flat_map(|r| r.endpoints.iter().cloned()).collect();
        record
            .aggregates
            .push(aggregate(&rows, moment_distances(&endpoints, &ctx.data)));
        record.trials.extend(rows);
        record
            .notes
            .push(format!("average over exponents {avg:?} is a per-trial metric average"));
    }
    push_condition(&mut record, &ctx, &Condition::unguided())?;
    record.error_curve = error_curve(&ctx)?;
    Ok(record)
}

/// One aggregate row per exponent of the configured weight family.
pub fn run_ablate_exponent(cfg: &ExperimentConfig, exponents: &[f64]) -> Result<RunRecord> {
    let mut cfg = expect_kind(cfg, ExperimentKind::AblateExponent);
    cfg.experiment.exponents = exponents.to_vec();
    let ctx = Context::new(&cfg)?;
    let mut record = RunRecord::new(&cfg);
    for &a in exponents {
        push_condition(
            &mut record,
            &ctx,
            &Condition::guided(cfg.guidance.weight.with_exponent(a)?),
        )?;
    }
    let coarse: Vec<Stat> = record.aggregates.iter().map(|r| r.mse_to_coarse()).collect();
    let trend = non_decreasing_trend(&coarse);
    record.notes.push(format!(
        "mse_to_coarse vs exponent: {} inversion(s), worst drop {:.2} SE",
        trend.inversions, trend.worst_drop_in_se
    ));
    if let Some((best, _)) = record
        .aggregates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mse_to_y_mean.total_cmp(&b.1.mse_to_y_mean))
    {
        record.notes.push(format!(
            "lowest mean mse_to_y at exponent {}",
            record.aggregates[best].x.unwrap_or(f64::NAN)
        ));
    }
    Ok(record)
}

/// Power-of-sigma and power-of-time families at matched exponents, with
/// optional constant-weight and unguided rows.
pub fn run_ablate_weight_family(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let cfg = expect_kind(cfg, ExperimentKind::AblateWeightFamily);
    let ctx = Context::new(&cfg)?;
    let mut record = RunRecord::new(&cfg);
    let exps = cfg.experiment.family_exponents.clone();
    for &a in &exps {
        push_condition(
            &mut record,
            &ctx,
            &Condition::guided(WeightSchedule::PowerOfSigma { exponent: a }),
        )?;
    }
    for &a in &exps {
        push_condition(
            &mut record,
            &ctx,
            &Condition::guided(WeightSchedule::PowerOfTime { exponent: a }),
        )?;
    }
    for &c in &cfg.experiment.constants {
        push_condition(
            &mut record,
            &ctx,
            &Condition::guided(WeightSchedule::Constant { value: c }),
        )?;
    }
    if cfg.experiment.include_unguided {
        push_condition(&mut record, &ctx, &Condition::unguided())?;
    }
    for &a in &exps {
        let find = |fam: &str| {
            record
                .aggregates
                .iter()
                .find(|r| r.family == fam && r.x == Some(a))
                .map(|r| r.mse_to_y_mean)
        };
        if let (Some(s), Some(t)) = (find("power_of_sigma"), find("power_of_time")) {
            let better = if s <= t { "power_of_sigma" } else { "power_of_time" };
            record.notes.push(format!(
                "a={a}: mse_to_y sigma-family {s:.4}, time-family {t:.4}; lower: {better}"
            ));
        }
    }
    Ok(record)
}

/// Noise-and-denoise baseline at each start time, plus the unguided reference.
pub fn run_baseline_sdedit(cfg: &ExperimentConfig, t0_list: &[f64]) -> Result<RunRecord> {
    let mut cfg = expect_kind(cfg, ExperimentKind::BaselineSdedit);
    cfg.experiment.t0 = t0_list.to_vec();
    let ctx = Context::new(&cfg)?;
    let mut record = RunRecord::new(&cfg);
    for &t0 in t0_list {
        push_condition(&mut record, &ctx, &Condition::sdedit(t0))?;
    }
    push_condition(&mut record, &ctx, &Condition::unguided())?;
    let coarse: Vec<Stat> = record
        .aggregates
        .iter()
        .filter(|r| r.family == "sdedit")
        .map(|r| r.mse_to_coarse())
        .collect();
    let trend = non_decreasing_trend(&coarse);
    record.notes.push(format!(
        "mse_to_coarse vs t0: {} inversion(s), worst drop {:.2} SE",
        trend.inversions, trend.worst_drop_in_se
    ));
    Ok(record)
}

/// Unguided sampling from `x_T ~ N(0, I)`; moment distances to `p_0` are in the
/// aggregate row.
pub fn run_sample_unguided(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let cfg = expect_kind(cfg, ExperimentKind::SampleUnguided);
    let ctx = Context::new(&cfg)?;
    let mut record = RunRecord::new(&cfg);
    push_condition(&mut record, &ctx, &Condition::unguided())?;
    Ok(record)
}

/// Paired comparison `b - a` of two conditions' per-trial values.
pub fn paired_difference(a: &[TrialRow], b: &[TrialRow], f: fn(&TrialRow) -> f64) -> Stat {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| f(y) - f(x)).collect();
    Stat::of(&d)
}

/// Check helper used by experiment callers that want a verdict in the record.
pub fn check(name: &str, passed: bool, measured: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        measured,
        threshold,
        detail: detail.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::OperatorConfig;

    fn small(kind: ExperimentKind, trials: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::of_kind(kind);
        cfg.experiment.trials = trials;
        cfg.sampler.steps = 200;
        cfg
    }

    #[test]
    fn conditions_share_trials() {
        let cfg = small(ExperimentKind::Restore, 4);
        let ctx = Context::new(&cfg).unwrap();
        let a = run_condition(&ctx, &Condition::guided(WeightSchedule::PowerOfSigma { exponent: 3.0 })).unwrap();
        let b = run_condition(&ctx, &Condition::unguided()).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.posterior_mse, rb.posterior_mse);
        }
    }

    #[test]
    fn identity_noise_free_full_weight_recovers_y() {
        let mut cfg = small(ExperimentKind::Restore, 8);
        cfg.operator = OperatorConfig::Identity { noise_std: 0.0 };
        cfg.guidance.weight = WeightSchedule::Constant { value: 1.0 };
        cfg.sampler.steps = 1000;
        let rec = run_restore(&cfg).unwrap();
        let guided = rec.aggregate("constant c=1").unwrap();
        assert!(guided.mse_to_y_mean < 1e-3, "{}", guided.mse_to_y_mean);
        // identity with zero noise: the posterior mean is y itself
        assert_eq!(guided.posterior_mse_mean, Some(0.0));
    }

    #[test]
    fn single_exponent_gives_one_row() {
        let cfg = small(ExperimentKind::AblateExponent, 3);
        let rec = run_ablate_exponent(&cfg, &[5.0]).unwrap();
        assert_eq!(rec.aggregates.len(), 1);
        assert_eq!(rec.trials.len(), 3);
    }

    #[test]
    fn weight_family_rows() {
        let mut cfg = small(ExperimentKind::AblateWeightFamily, 3);
        let rec = run_ablate_weight_family(&cfg).unwrap();
        assert_eq!(rec.aggregates.len(), 6);
        assert!(rec
            .aggregates
            .iter()
            .all(|r| r.mse_to_y_mean.is_finite() && r.mse_to_coarse_mean.is_finite() && r.loglik_p0_mean.is_finite()));
        cfg.experiment.constants = vec![0.0];
        cfg.experiment.include_unguided = true;
        let rec = run_ablate_weight_family(&cfg).unwrap();
        assert_eq!(rec.aggregates.len(), 8);
        // c = 0 is the unguided sampler on identical trials
        let c0 = rec.aggregate("constant c=0").unwrap();
        let un = rec.aggregate("unguided").unwrap();
        assert_eq!(c0.mse_to_y_mean, un.mse_to_y_mean);
    }

    #[test]
    fn sdedit_near_t_min_returns_the_coarse_sample() {
        let cfg = small(ExperimentKind::BaselineSdedit, 10);
        let rec = run_baseline_sdedit(&cfg, &[1.5e-3]).unwrap();
        assert!(rec.aggregates[0].mse_to_coarse_mean < 1e-2);
    }

    #[test]
    fn restore_averages_exponents_per_trial() {
        let mut cfg = small(ExperimentKind::Restore, 4);
        cfg.experiment.average_exponents = vec![5.0, 6.0, 7.0];
        let rec = run_restore(&cfg).unwrap();
        let rows: Vec<f64> = ["power_of_sigma a=5", "power_of_sigma a=6", "power_of_sigma a=7"]
            .iter()
            .map(|c| rec.aggregate(c).unwrap().mse_to_y_mean)
            .collect();
        let avg = rec.aggregate("average").unwrap().mse_to_y_mean;
        assert!((avg - rows.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert_eq!(rec.error_curve.len(), 11);
    }

    #[test]
    fn constant_family_cannot_sweep_exponents() {
        let mut cfg = small(ExperimentKind::AblateExponent, 2);
        cfg.guidance.weight = WeightSchedule::Constant { value: 0.5 };
        assert!(run_ablate_exponent(&cfg, &[1.0, 2.0]).unwrap_err().is_config());
    }
}
