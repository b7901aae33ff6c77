//! Diffusion-time geometry.
//!
//! A forward process `x_t = alpha_t x_0 + sigma_t eps` is described by the pair
//! `(alpha_t, sigma_t)`. The drift `f(x, t) = (d alpha_t / dt) / alpha_t * x` and the
//! squared diffusion `g^2(t) = 2 sigma_t sigma_t' - 2 (alpha_t' / alpha_t) sigma_t^2`
//! follow from it. Two families are provided:
//!
//! - variance preserving (VP) with linear `beta(t) = beta_min + t (beta_max - beta_min)`,
//!   `alpha_t = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2)`, `alpha^2 + sigma^2 = 1`;
//! - optimal-transport flow matching (OT-FM) with `alpha_t = 1 - t`, `sigma_t = t`.
//!
//! Time runs on `[0, 1]`; every evaluation is clamped to `[t_min, t_max]` to keep
//! `1 / sigma_t^2` and `1 / alpha_t` finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vector;

/// Diffusion horizon `T`.
pub const HORIZON: f64 = 1.0;

const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Vp,
    Otfm,
}

/// Schedule coefficients evaluated at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    /// `alpha_t' / alpha_t`, the linear drift rate.
    pub drift_rate: f64,
    /// `sigma_t'`.
    pub sigma_dot: f64,
    /// `g^2(t)`.
    pub g2: f64,
}

impl Coefficients {
    /// `f(x, t)`.
    pub fn drift(&self, x: &Vector) -> Vector {
        x * self.drift_rate
    }

    /// The general relation `g^2 = 2 sigma sigma' - 2 (alpha'/alpha) sigma^2`.
    pub fn g2_from_rates(&self) -> f64 {
        2.0 * self.sigma * self.sigma_dot - 2.0 * self.drift_rate * self.sigma * self.sigma
    }

    pub(crate) fn require_sigma(&self) -> Result<()> {
        if self.sigma > 0.0 {
            Ok(())
        } else {
            Err(Error::Singularity(format!("sigma_t = 0 at t = {}", self.t)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    t_min: f64,
    t_max: f64,
}

/// Serialized form; omitted fields take the family defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    #[serde(default = "default_kind")]
    kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
}

fn default_kind() -> ScheduleKind {
    ScheduleKind::Vp
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        let base = match spec.kind {
            ScheduleKind::Vp => NoiseSchedule::vp(),
            ScheduleKind::Otfm => NoiseSchedule::otfm(),
        };
        NoiseSchedule::new(
            spec.kind,
            spec.beta_min.unwrap_or(base.beta_min),
            spec.beta_max.unwrap_or(base.beta_max),
            spec.t_min.unwrap_or(base.t_min),
            spec.t_max.unwrap_or(base.t_max),
        )
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        let vp = s.kind == ScheduleKind::Vp;
        ScheduleSpec {
            kind: s.kind,
            beta_min: vp.then_some(s.beta_min),
            beta_max: vp.then_some(s.beta_max),
            t_min: Some(s.t_min),
            t_max: Some(s.t_max),
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::vp()
    }
}

impl NoiseSchedule {
    pub const DEFAULT_BETA_MIN: f64 = 0.1;
    pub const DEFAULT_BETA_MAX: f64 = 20.0;
    pub const DEFAULT_T_MIN: f64 = 1e-3;

    pub fn new(kind: ScheduleKind, beta_min: f64, beta_max: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && 0.0 <= t_min && t_min < t_max) {
            return Err(Error::Config(format!(
                "need 0 <= t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        match kind {
            ScheduleKind::Vp => {
                if !(beta_min > 0.0 && beta_max >= beta_min && beta_max.is_finite()) {
                    return Err(Error::Config(format!(
                        "need 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
                    )));
                }
                if t_max > HORIZON {
                    return Err(Error::Config(format!("t_max {t_max} exceeds the horizon")));
                }
            }
            ScheduleKind::Otfm => {
                if t_max >= HORIZON {
                    return Err(Error::Config(format!(
                        "OT-FM needs t_max < 1 (alpha_t vanishes at t = 1), got {t_max}"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            beta_min,
            beta_max,
            t_min,
            t_max,
        })
    }

    /// VP with `beta in [0.1, 20]` on `[1e-3, 1]`.
    pub fn vp() -> Self {
        Self {
            kind: ScheduleKind::Vp,
            beta_min: Self::DEFAULT_BETA_MIN,
            beta_max: Self::DEFAULT_BETA_MAX,
            t_min: Self::DEFAULT_T_MIN,
            t_max: HORIZON,
        }
    }

    /// OT-FM on `[1e-3, 1 - 1e-3]`.
    pub fn otfm() -> Self {
        Self {
            kind: ScheduleKind::Otfm,
            beta_min: Self::DEFAULT_BETA_MIN,
            beta_max: Self::DEFAULT_BETA_MAX,
            t_min: Self::DEFAULT_T_MIN,
            t_max: HORIZON - Self::DEFAULT_T_MIN,
        }
    }

    pub fn with_range(self, t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(self.kind, self.beta_min, self.beta_max, t_min, t_max)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }
    pub fn t_min(&self) -> f64 {
        self.t_min
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && t >= self.t_min - RANGE_SLACK && t <= self.t_max + RANGE_SLACK {
            Ok(())
        } else {
            Err(Error::Range {
                t,
                lo: self.t_min,
                hi: self.t_max,
            })
        }
    }

    /// Linear VP rate `beta(t)`.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `(alpha_t, sigma_t)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        Ok(self.alpha_sigma_unchecked(t))
    }

    fn alpha_sigma_unchecked(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::Vp => {
                let log_alpha = -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min;
                let alpha = log_alpha.exp();
                // 1 - alpha^2 = -expm1(2 log alpha) keeps precision near t = 0.
                let sigma = (-(2.0 * log_alpha).exp_m1()).sqrt();
                (alpha, sigma)
            }
            ScheduleKind::Otfm => (1.0 - t, t),
        }
    }

    /// All schedule coefficients at `t`.
    pub fn at(&self, t: f64) -> Result<Coefficients> {
        self.check_time(t)?;
        let (alpha, sigma) = self.alpha_sigma_unchecked(t);
        let (drift_rate, sigma_dot, g2) = match self.kind {
            ScheduleKind::Vp => {
                let beta = self.beta(t);
                let sigma_dot = if sigma > 0.0 {
                    0.5 * beta * alpha * alpha / sigma
                } else {
                    f64::INFINITY
                };
                (-0.5 * beta, sigma_dot, beta)
            }
            ScheduleKind::Otfm => {
                let one_minus = 1.0 - t;
                if one_minus <= 0.0 {
                    return Err(Error::Singularity(format!("alpha_t = 0 at t = {t}")));
                }
                (-1.0 / one_minus, 1.0, 2.0 * t / one_minus)
            }
        };
        Ok(Coefficients {
            t,
            alpha,
            sigma,
            drift_rate,
            sigma_dot,
            g2,
        })
    }

    /// Forward drift `f(x, t) = (alpha_t' / alpha_t) x`.
    pub fn drift_f(&self, x: &Vector, t: f64) -> Result<Vector> {
        Ok(self.at(t)?.drift(x))
    }

    /// Squared diffusion `g^2(t)`.
    pub fn diffusion_g2(&self, t: f64) -> Result<f64> {
        Ok(self.at(t)?.g2)
    }
}

/// Guidance weight `lambda` as a function of noise level or time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSchedule {
    /// `lambda = sigma^a`.
    PowerOfSigma { exponent: f64 },
    /// `lambda = (t / T)^a`.
    PowerOfTime { exponent: f64 },
    /// `lambda = c`.
    Constant { value: f64 },
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule::PowerOfSigma { exponent: 5.0 }
    }
}

impl WeightSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSchedule::PowerOfSigma { exponent } | WeightSchedule::PowerOfTime { exponent } => {
                check_exponent(exponent)
            }
            WeightSchedule::Constant { value } => {
                if (0.0..=1.0).contains(&value) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("constant weight {value} outside [0, 1]")))
                }
            }
        }
    }

    /// The scalar exponent, if the family has one.
    pub fn exponent(&self) -> Option<f64> {
        match *self {
            WeightSchedule::PowerOfSigma { exponent } | WeightSchedule::PowerOfTime { exponent } => Some(exponent),
            WeightSchedule::Constant { .. } => None,
        }
    }

    /// Same family with a different exponent. Constant schedules have no
    /// exponent to replace.
    pub fn with_exponent(&self, exponent: f64) -> Result<Self> {
        check_exponent(exponent)?;
        match *self {
            WeightSchedule::PowerOfSigma { .. } => Ok(WeightSchedule::PowerOfSigma { exponent }),
            WeightSchedule::PowerOfTime { .. } => Ok(WeightSchedule::PowerOfTime { exponent }),
            WeightSchedule::Constant { .. } => Err(Error::Config("constant weight schedule has no exponent".into())),
        }
    }

    /// `lambda` at noise level `sigma` and time `t`, in `[0, 1]`.
    pub fn weight_lambda(&self, sigma: f64, t: f64, horizon: f64) -> Result<f64> {
        self.validate()?;
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&sigma) {
            return Err(Error::Config(format!("sigma {sigma} outside [0, 1]")));
        }
        if !(horizon > 0.0) || !(-RANGE_SLACK..=horizon + RANGE_SLACK).contains(&t) {
            return Err(Error::Range {
                t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let lambda = match *self {
            WeightSchedule::PowerOfSigma { exponent } => sigma.clamp(0.0, 1.0).powf(exponent),
            WeightSchedule::PowerOfTime { exponent } => (t / horizon).clamp(0.0, 1.0).powf(exponent),
            WeightSchedule::Constant { value } => value,
        };
        Ok(lambda.clamp(0.0, 1.0))
    }
}

fn check_exponent(exponent: f64) -> Result<()> {
    if exponent.is_finite() && exponent >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("weight exponent must be >= 0, got {exponent}")))
    }
}
