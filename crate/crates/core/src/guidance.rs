//! Weighted h-transform guidance.
//!
//! The guided probability-flow drift interpolates, coordinate by coordinate,
//! between the model score `s` and the conditional score toward the coarse
//! reference `y~`:
//!
//! ```text
//! drift(x, t) = f(x, t) - g^2(t)/2 * [ s + lambda * ((alpha_t y~ - x)/sigma_t^2 - s) ]
//! ```
//!
//! The same field can be assembled from a velocity model (flow matching) or a
//! noise predictor (variance preserving); the three forms agree algebraically.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::oracle::{conditional_score_at, GaussianMixture};
use crate::rng::standard_normal;
use crate::schedules::{Coefficients, NoiseSchedule, ScheduleKind, WeightSchedule, HORIZON};
use crate::scorenet::ScoreModel;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    Score,
    Velocity,
    Epsilon,
}

/// What to guide toward and how strongly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    /// Coarse reference in data space.
    pub coarse: Vector,
    pub weight: WeightSchedule,
    /// Optional per-coordinate exponents replacing the schedule's scalar one.
    pub exponents: Option<Vec<f64>>,
    pub parameterization: Parameterization,
}

impl GuidanceSpec {
    pub fn new(coarse: Vector, weight: WeightSchedule) -> Self {
        Self {
            coarse,
            weight,
            exponents: None,
            parameterization: Parameterization::Score,
        }
    }

    /// Two-exponent weighting driven by a validity mask: observed coordinates
    /// use `valid_exponent`, filled-in ones `invalid_exponent`.
    pub fn from_mask(
        coarse: Vector,
        weight: WeightSchedule,
        valid: &[bool],
        valid_exponent: f64,
        invalid_exponent: f64,
    ) -> Result<Self> {
        let spec = Self {
            exponents: Some(
                valid
                    .iter()
                    .map(|&ok| if ok { valid_exponent } else { invalid_exponent })
                    .collect(),
            ),
            ..Self::new(coarse, weight)
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_parameterization(mut self, p: Parameterization) -> Self {
        self.parameterization = p;
        self
    }

    pub fn dim(&self) -> usize {
        self.coarse.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.coarse.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("coarse reference has non-finite entries".into()));
        }
        if let Some(exps) = &self.exponents {
            check_dim(self.coarse.len(), exps.len())?;
            for &a in exps {
                self.weight.with_exponent(a)?;
            }
        }
        Ok(())
    }

    /// Per-coordinate guidance weights at the given schedule point.
    pub fn lambda_vector(&self, c: &Coefficients) -> Result<Vector> {
        match &self.exponents {
            None => {
                let l = self.weight.weight_lambda(c.sigma, c.t, HORIZON)?;
                Ok(Vector::from_element(self.coarse.len(), l))
            }
            Some(exps) => {
                let mut out = Vector::zeros(exps.len());
                for (o, &a) in out.iter_mut().zip(exps) {
                    *o = self.weight.with_exponent(a)?.weight_lambda(c.sigma, c.t, HORIZON)?;
                }
                Ok(out)
            }
        }
    }
}

/// `a + lambda * (b - a)`, evaluated as `(1 - lambda) a + lambda b` so that the
/// boundary weights return `a` or `b` exactly.
fn blend(lambda: &Vector, a: &Vector, b: &Vector) -> Vector {
    Vector::from_fn(a.len(), |i, _| (1.0 - lambda[i]) * a[i] + lambda[i] * b[i])
}

type DriftFn = dyn Fn(&Vector, f64) -> Result<Vector> + Send + Sync;

/// A reverse-time drift field `drift(x, t)`, shared read-only between threads.
#[derive(Clone)]
pub struct GuidedDrift {
    f: Arc<DriftFn>,
    dim: usize,
}

impl fmt::Debug for GuidedDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuidedDrift")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl GuidedDrift {
    pub fn new(dim: usize, f: impl Fn(&Vector, f64) -> Result<Vector> + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &Vector, t: f64) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        (self.f)(x, t)
    }
}

/// Tractable h approximation `(alpha_t y~ - x)/sigma_t^2 - s`.
pub fn approx_h(x: &Vector, t: f64, coarse: &Vector, score_at_x: &Vector, schedule: &NoiseSchedule) -> Result<Vector> {
    check_dim(x.len(), score_at_x.len())?;
    Ok(conditional_score_at(x, coarse, &schedule.at(t)?)? - score_at_x)
}

/// Probability-flow drift `f - g^2 s / 2` of the model itself.
pub fn unguided_drift(model: Arc<dyn ScoreModel>) -> GuidedDrift {
    let dim = model.dim();
    GuidedDrift::new(dim, move |x, t| {
        let c = model.schedule().at(t)?;
        let s = model.score(x, t)?;
        Ok(c.drift(x) - s * (0.5 * c.g2))
    })
}

fn require(spec: &GuidanceSpec, model: &dyn ScoreModel, p: Parameterization) -> Result<()> {
    spec.validate()?;
    check_dim(model.dim(), spec.dim())?;
    if spec.parameterization != p {
        return Err(Error::Config(format!(
            "guidance spec asks for {:?} parameterization, builder is {p:?}",
            spec.parameterization
        )));
    }
    Ok(())
}

/// Score-form guided drift.
pub fn guided_score_drift(model: Arc<dyn ScoreModel>, spec: &GuidanceSpec) -> Result<GuidedDrift> {
    require(spec, model.as_ref(), Parameterization::Score)?;
    let spec = spec.clone();
    Ok(GuidedDrift::new(model.dim(), move |x, t| {
        let c = model.schedule().at(t)?;
        let s = model.score(x, t)?;
        let cond = conditional_score_at(x, &spec.coarse, &c)?;
        let lambda = spec.lambda_vector(&c)?;
        Ok(c.drift(x) - blend(&lambda, &s, &cond) * (0.5 * c.g2))
    }))
}

/// Velocity-form guided drift `v + lambda * ((x - y~)/sigma_t - v)`, flow
/// matching schedules only.
pub fn guided_velocity_drift(model: Arc<dyn ScoreModel>, spec: &GuidanceSpec) -> Result<GuidedDrift> {
    require(spec, model.as_ref(), Parameterization::Velocity)?;
    if model.schedule().kind() != ScheduleKind::Otfm {
        return Err(Error::Config(
            "velocity-form guidance needs the flow-matching schedule".into(),
        ));
    }
    let spec = spec.clone();
    Ok(GuidedDrift::new(model.dim(), move |x, t| {
        let c = model.schedule().at(t)?;
        c.require_sigma()?;
        let v = model.velocity(x, t)?;
        let target = (x - &spec.coarse) / c.sigma;
        let lambda = spec.lambda_vector(&c)?;
        Ok(blend(&lambda, &v, &target))
    }))
}

/// Guided noise prediction `eps + lambda * (eps~ - eps)` with the pseudo-target
/// `eps~ = (x - alpha_t y~)/sigma_t`.
pub fn guided_eps(
    eps_pred: &Vector,
    x: &Vector,
    coarse: &Vector,
    t: f64,
    schedule: &NoiseSchedule,
    lambda: &Vector,
) -> Result<Vector> {
    let c = schedule.at(t)?;
    c.require_sigma()?;
    check_dim(x.len(), eps_pred.len())?;
    check_dim(x.len(), coarse.len())?;
    check_dim(x.len(), lambda.len())?;
    let pseudo = (x - coarse * c.alpha) / c.sigma;
    Ok(blend(lambda, eps_pred, &pseudo))
}

/// Epsilon-form guided drift on the variance-preserving schedule:
/// `(alpha_t'/alpha_t) (x - eps^ / sigma_t)`.
pub fn guided_eps_drift(model: Arc<dyn ScoreModel>, spec: &GuidanceSpec) -> Result<GuidedDrift> {
    require(spec, model.as_ref(), Parameterization::Epsilon)?;
    if model.schedule().kind() != ScheduleKind::Vp {
        return Err(Error::Config(
            "epsilon-form guidance needs the variance-preserving schedule".into(),
        ));
    }
    let spec = spec.clone();
    Ok(GuidedDrift::new(model.dim(), move |x, t| {
        let schedule = model.schedule();
        let c = schedule.at(t)?;
        let lambda = spec.lambda_vector(&c)?;
        let eps_hat = guided_eps(&model.eps(x, t)?, x, &spec.coarse, t, schedule, &lambda)?;
        Ok((x - eps_hat / c.sigma) * c.drift_rate)
    }))
}

/// Dispatches on the spec's parameterization.
pub fn guided_drift(model: Arc<dyn ScoreModel>, spec: &GuidanceSpec) -> Result<GuidedDrift> {
    match spec.parameterization {
        Parameterization::Score => guided_score_drift(model, spec),
        Parameterization::Velocity => guided_velocity_drift(model, spec),
        Parameterization::Epsilon => guided_eps_drift(model, spec),
    }
}

/// Sign of the h-term in [`exact_h_drift`]. `Flipped` exists only so tests can
/// confirm that the endpoint check notices a sign error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HSign {
    #[default]
    Correct,
    Flipped,
}

/// Additive correction to the model score, `h(x, t, s)`, used by the SDE solver.
pub type HTerm = Arc<dyn Fn(&Vector, f64, &Vector) -> Result<Vector> + Send + Sync>;

/// Exact h toward the fine target `y`, computed from the analytic mixture.
pub fn exact_h_term(data: GaussianMixture, y: Vector, schedule: NoiseSchedule, sign: HSign) -> Result<HTerm> {
    check_dim(data.dim(), y.len())?;
    let k = match sign {
        HSign::Correct => 1.0,
        HSign::Flipped => -1.0,
    };
    Ok(Arc::new(move |x, t, s| {
        let c = schedule.at(t)?;
        Ok((conditional_score_at(x, &y, &c)? - s) * k)
    }))
}

/// Weighted approximate h, `lambda * h~`.
pub fn approx_h_term(spec: &GuidanceSpec, schedule: NoiseSchedule) -> Result<HTerm> {
    spec.validate()?;
    let spec = spec.clone();
    Ok(Arc::new(move |x, t, s| {
        let c = schedule.at(t)?;
        let h = conditional_score_at(x, &spec.coarse, &c)? - s;
        Ok(spec.lambda_vector(&c)?.component_mul(&h))
    }))
}

/// Probability-flow drift `f - g^2 (s + h)/2` with the exact h toward `y`,
/// where `s` is the analytic marginal score of `data`.
pub fn exact_h_drift(data: &GaussianMixture, y: &Vector, schedule: NoiseSchedule, sign: HSign) -> Result<GuidedDrift> {
    let h = exact_h_term(data.clone(), y.clone(), schedule, sign)?;
    let data = data.clone();
    Ok(GuidedDrift::new(data.dim(), move |x, t| {
        let c = schedule.at(t)?;
        let s = data.pushforward_with(c.alpha, c.sigma)?.score(x)?;
        let hx = h(x, t, &s)?;
        Ok(c.drift(x) - (s + hx) * (0.5 * c.g2))
    }))
}

/// `J(t) = (alpha_t / sigma_t^2) |y~ - y|`, the norm of the difference between
/// exact and approximate h.
pub fn approximation_error(t: f64, y: &Vector, coarse: &Vector, schedule: &NoiseSchedule) -> Result<f64> {
    let c = schedule.at(t)?;
    c.require_sigma()?;
    check_dim(y.len(), coarse.len())?;
    Ok(c.alpha / (c.sigma * c.sigma) * (coarse - y).norm())
}

/// Noised start for the noise-and-denoise baseline: `alpha_t0 y~ + sigma_t0 z`.
pub fn sdedit_start<R: Rng + ?Sized>(
    coarse: &Vector,
    t0: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Vector, f64)> {
    if !(t0 > schedule.t_min() && t0 <= schedule.t_max()) {
        return Err(Error::Range {
            t: t0,
            lo: schedule.t_min(),
            hi: schedule.t_max(),
        });
    }
    let z = standard_normal(rng, coarse.len());
    sdedit_start_with_noise(coarse, t0, schedule, &z)
}

/// [`sdedit_start`] with caller-supplied noise `z`.
pub fn sdedit_start_with_noise(
    coarse: &Vector,
    t0: f64,
    schedule: &NoiseSchedule,
    z: &Vector,
) -> Result<(Vector, f64)> {
    if !(t0 > schedule.t_min() && t0 <= schedule.t_max()) {
        return Err(Error::Range {
            t: t0,
            lo: schedule.t_min(),
            hi: schedule.t_max(),
        });
    }
    check_dim(coarse.len(), z.len())?;
    let c = schedule.at(t0)?;
    Ok((coarse * c.alpha + z * c.sigma, t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_h, OracleScore};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// Score model with a fixed score, for arithmetic examples.
    struct ConstScore(NoiseSchedule, Vector);

    impl ScoreModel for ConstScore {
        fn schedule(&self) -> &NoiseSchedule {
            &self.0
        }
        fn dim(&self) -> usize {
            self.1.len()
        }
        fn score(&self, _x: &Vector, _t: f64) -> Result<Vector> {
            Ok(self.1.clone())
        }
    }

    fn coeffs(alpha: f64, sigma: f64, g2: f64) -> Coefficients {
        Coefficients {
            t: 0.5,
            alpha,
            sigma,
            drift_rate: 0.0,
            sigma_dot: 0.0,
            g2,
        }
    }

    #[test]
    fn approx_h_examples() {
        let c = coeffs(0.6, 0.8, 1.0);
        let h = conditional_score_at(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &c).unwrap() - v(&[0.0, 0.0]);
        assert_relative_eq!(h, v(&[0.9375, 0.0]), epsilon = 1e-15);

        // Single Gaussian whose pushforward mean is alpha y~: the marginal score
        // equals the conditional one, so h~ vanishes.
        let vp = NoiseSchedule::vp();
        let coarse = v(&[0.7, -0.2]);
        let point = GaussianMixture::isotropic(coarse.clone(), 1e-12).unwrap();
        let x = v(&[0.1, 0.4]);
        let s = point.pushforward(&vp, 0.4).unwrap().score(&x).unwrap();
        assert!(approx_h(&x, 0.4, &coarse, &s, &vp).unwrap().amax() < 1e-9);
    }

    #[test]
    fn approx_h_is_exact_at_the_fine_target() {
        let gm = GaussianMixture::two_component();
        let mut rng = stream(21, 0);
        for schedule in [NoiseSchedule::vp(), NoiseSchedule::otfm()] {
            for _ in 0..100 {
                let t = rng.random_range(0.01..0.99);
                let x = standard_normal(&mut rng, 2) * 2.0;
                let y = gm.sample_one(&mut rng);
                let s = gm.pushforward(&schedule, t).unwrap().score(&x).unwrap();
                let a = approx_h(&x, t, &y, &s, &schedule).unwrap();
                let e = exact_h(&x, &y, &gm, &schedule, t).unwrap();
                assert!((&a - &e).amax() <= 1e-12 * e.amax().max(1.0));
            }
        }
    }

    #[test]
    fn score_drift_arithmetic_example() {
        // alpha 0.6, sigma 0.8, g^2 1, f 0 with s = (1, 0), y~ = (1, 0), x = 0, lambda 0.5.
        let c = coeffs(0.6, 0.8, 1.0);
        let x = v(&[0.0, 0.0]);
        let s = v(&[1.0, 0.0]);
        let h = conditional_score_at(&x, &v(&[1.0, 0.0]), &c).unwrap() - &s;
        let drift = c.drift(&x) - (&s + h * 0.5) * (0.5 * c.g2);
        assert_relative_eq!(drift, v(&[-0.484375, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn velocity_examples() {
        let otfm = NoiseSchedule::otfm();
        // sigma = t = 0.5, x = 1, y~ = 0
        let x = v(&[1.0]);
        for (lambda, v_pred, expect) in [(1.0, 7.0, 2.0), (1.0, -3.0, 2.0), (0.5, 1.0, 1.5), (0.0, 4.0, 4.0)] {
            let score = crate::scorenet::velocity_to_score(&v(&[v_pred]), &x, 0.5, &otfm).unwrap();
            let model: Arc<dyn ScoreModel> = Arc::new(ConstScore(otfm, score));
            let spec = GuidanceSpec::new(v(&[0.0]), WeightSchedule::Constant { value: lambda })
                .with_parameterization(Parameterization::Velocity);
            let d = guided_velocity_drift(model, &spec).unwrap().eval(&x, 0.5).unwrap();
            assert_relative_eq!(d[0], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn guided_eps_examples() {
        let vp = NoiseSchedule::vp();
        let t = crate::oracle::tests::vp_time_for_alpha(0.6);
        let (_, sigma) = vp.alpha_sigma(t).unwrap();
        assert_relative_eq!(sigma, 0.8, epsilon = 1e-12);
        let zero = v(&[0.0]);
        let pseudo = guided_eps(&v(&[5.0]), &zero, &v(&[1.0]), t, &vp, &v(&[1.0])).unwrap();
        assert_relative_eq!(pseudo[0], -0.75, epsilon = 1e-12);
        // eps = 1 and eps~ = 0 (x = alpha y~), lambda = 0.25
        let x = v(&[0.6]);
        let e = guided_eps(&v(&[1.0]), &x, &v(&[1.0]), t, &vp, &v(&[0.25])).unwrap();
        assert_relative_eq!(e[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn builders_check_schedule_and_parameterization() {
        let model: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(
            GaussianMixture::standard(2).unwrap(),
            NoiseSchedule::vp(),
        ));
        let spec = GuidanceSpec::new(v(&[0.0, 0.0]), WeightSchedule::default());
        assert!(guided_velocity_drift(
            model.clone(),
            &spec.clone().with_parameterization(Parameterization::Velocity)
        )
        .is_err());
        assert!(guided_score_drift(
            model.clone(),
            &spec.clone().with_parameterization(Parameterization::Epsilon)
        )
        .is_err());
        assert!(guided_drift(
            model.clone(),
            &spec.clone().with_parameterization(Parameterization::Epsilon)
        )
        .is_ok());
        let wrong_dim = GuidanceSpec::new(v(&[0.0]), WeightSchedule::default());
        assert!(matches!(
            guided_score_drift(model, &wrong_dim),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mask_exponents() {
        let coarse = v(&[1.0, 2.0, 3.0]);
        let spec = GuidanceSpec::from_mask(
            coarse.clone(),
            WeightSchedule::default(),
            &[true, false, true],
            2.0,
            8.0,
        )
        .unwrap();
        let c = coeffs(0.6, 0.8, 1.0);
        let l = spec.lambda_vector(&c).unwrap();
        assert_relative_eq!(l, v(&[0.64, 0.8f64.powi(8), 0.64]), epsilon = 1e-15);
        assert!(GuidanceSpec::from_mask(coarse.clone(), WeightSchedule::default(), &[true], 2.0, 8.0).is_err());
        assert!(GuidanceSpec::from_mask(
            coarse,
            WeightSchedule::Constant { value: 0.5 },
            &[true, true, true],
            2.0,
            8.0
        )
        .is_err());
    }

    #[test]
    fn approximation_error_examples() {
        let vp = NoiseSchedule::vp();
        let t = crate::oracle::tests::vp_time_for_alpha(0.6);
        let j = approximation_error(t, &v(&[0.0, 0.0]), &v(&[2.0, 0.0]), &vp).unwrap();
        assert_relative_eq!(j, 1.875, epsilon = 1e-10);
        assert_eq!(approximation_error(0.3, &v(&[1.0]), &v(&[1.0]), &vp).unwrap(), 0.0);
        let far = approximation_error(1.0, &v(&[0.0]), &v(&[1.0]), &vp).unwrap();
        assert!(far < 7e-3);
    }

    #[test]
    fn approximation_error_decreases_with_noise() {
        let vp = NoiseSchedule::vp();
        let (y, yt) = (v(&[0.5, 1.0]), v(&[-0.5, 2.0]));
        let grid: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let js: Vec<f64> = grid
            .iter()
            .map(|&t| approximation_error(t, &y, &yt, &vp).unwrap())
            .collect();
        // sigma is increasing in t, so J must strictly decrease along the grid
        assert!(js.windows(2).all(|w| w[1] < w[0]));
        // closed form for VP: sqrt(1 - sigma^2)/sigma^2 |y~ - y|
        for &t in &[0.1, 0.5, 0.9] {
            let (_, s) = vp.alpha_sigma(t).unwrap();
            let closed = (1.0 - s * s).sqrt() / (s * s) * (&yt - &y).norm();
            assert_relative_eq!(
                approximation_error(t, &y, &yt, &vp).unwrap(),
                closed,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn sdedit_start_cases() {
        let vp = NoiseSchedule::vp();
        let coarse = v(&[1.0, 0.0]);
        let t = crate::oracle::tests::vp_time_for_alpha(0.6);
        // Two draws with the same stream differ only by sigma z; the mean part is alpha y~.
        let (x, t0) = sdedit_start(&coarse, t, &vp, &mut stream(3, 0)).unwrap();
        let z = standard_normal(&mut stream(3, 0), 2);
        assert_eq!(t0, t);
        assert_relative_eq!(x - z * 0.8, v(&[0.6, 0.0]), epsilon = 1e-12);
        let (x1, _) = sdedit_start(&v(&[100.0, 0.0]), 1.0, &vp, &mut stream(4, 0)).unwrap();
        let z1 = standard_normal(&mut stream(4, 0), 2);
        assert!((x1 - z1).amax() < 100.0 * 7e-3);
        assert!(sdedit_start(&coarse, vp.t_min(), &vp, &mut stream(0, 0)).is_err());
        assert!(sdedit_start(&coarse, 1.5, &vp, &mut stream(0, 0)).is_err());
        let (x2, _) = sdedit_start(&coarse, 1.1e-3, &vp, &mut stream(5, 0)).unwrap();
        assert!((x2 - &coarse).amax() < 0.1);
    }

    proptest! {
        #[test]
        fn conditional_score_gap_is_the_approximation_error(seed in 0u64..10_000, otfm in any::<bool>()) {
            let schedule = if otfm { NoiseSchedule::otfm() } else { NoiseSchedule::vp() };
            let mut rng = stream(seed, 7);
            let t = rng.random_range(schedule.t_min()..schedule.t_max());
            let x = standard_normal(&mut rng, 3) * 3.0;
            let y = standard_normal(&mut rng, 3);
            let yt = standard_normal(&mut rng, 3);
            let c = schedule.at(t).unwrap();
            let gap = (conditional_score_at(&x, &yt, &c).unwrap() - conditional_score_at(&x, &y, &c).unwrap()).norm();
            let j = approximation_error(t, &y, &yt, &schedule).unwrap();
            prop_assert!((gap - j).abs() <= 1e-12 * j.max(1.0));
        }

        #[test]
        fn lambda_zero_is_unguided(seed in 0u64..10_000) {
            let schedule = NoiseSchedule::vp();
            let model: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(GaussianMixture::two_component(), schedule));
            let mut rng = stream(seed, 8);
            let t = rng.random_range(schedule.t_min()..=schedule.t_max());
            let x = standard_normal(&mut rng, 2) * 3.0;
            let spec = GuidanceSpec::new(standard_normal(&mut rng, 2), WeightSchedule::Constant { value: 0.0 });
            let g = guided_score_drift(model.clone(), &spec).unwrap().eval(&x, t).unwrap();
            let u = unguided_drift(model).eval(&x, t).unwrap();
            prop_assert!((&g - &u).amax() <= 1e-15 * u.amax().max(1.0));
        }

        #[test]
        fn lambda_one_ignores_the_model(seed in 0u64..10_000) {
            let schedule = NoiseSchedule::vp();
            let a: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(GaussianMixture::two_component(), schedule));
            let b: Arc<dyn ScoreModel> = Arc::new(OracleScore::new(GaussianMixture::standard(2).unwrap(), schedule));
            let mut rng = stream(seed, 9);
            let t = rng.random_range(schedule.t_min()..=schedule.t_max());
            let x = standard_normal(&mut rng, 2) * 3.0;
            let spec = GuidanceSpec::new(standard_normal(&mut rng, 2), WeightSchedule::Constant { value: 1.0 });
            let da = guided_score_drift(a, &spec).unwrap().eval(&x, t).unwrap();
            let db = guided_score_drift(b, &spec).unwrap().eval(&x, t).unwrap();
            let c = schedule.at(t).unwrap();
            let pinned = c.drift(&x) - conditional_score_at(&x, &spec.coarse, &c).unwrap() * (0.5 * c.g2);
            prop_assert!((&da - &db).amax() <= 1e-15 * pinned.amax().max(1.0));
            prop_assert!((&da - &pinned).amax() <= 1e-15 * pinned.amax().max(1.0));
        }
    }
}
