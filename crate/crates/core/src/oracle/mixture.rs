use nalgebra::Cholesky;
use nalgebra::Dyn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal;
use crate::schedules::NoiseSchedule;
use crate::{Matrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct Component {
    weight: f64,
    mean: Vector,
    cov: Matrix,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Component {
    fn new(weight: f64, mean: Vector, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Invariant("covariance is not symmetric".into()));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::Invariant("non-finite mixture parameter".into()));
        }
        let chol =
            Cholesky::new(cov.clone()).ok_or_else(|| Error::Invariant("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Invariant("covariance is not positive definite".into()));
        }
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn mean(&self) -> &Vector {
        &self.mean
    }
    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// `Sigma^{-1} v`.
    pub fn precision_times(&self, v: &Vector) -> Vector {
        self.chol.solve(v)
    }

    /// `log N(x; mean, cov)`.
    pub fn log_density(&self, x: &Vector) -> f64 {
        let diff = x - &self.mean;
        let white = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det + white.norm_squared())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = standard_normal(rng, self.mean.len());
        &self.mean + self.chol.l_dirty().lower_triangle() * z
    }
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    components: Vec<Component>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major rows of the covariance.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        let parts = spec
            .components
            .into_iter()
            .map(|c| {
                let d = c.mean.len();
                if c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension {
                        expected: d,
                        got: c.cov.len(),
                    });
                }
                let cov = Matrix::from_fn(d, d, |i, j| c.cov[i][j]);
                Ok((c.weight, Vector::from_vec(c.mean), cov))
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(parts)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(gm: GaussianMixture) -> Self {
        MixtureSpec {
            components: gm
                .components
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov: c.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

impl GaussianMixture {
    /// Builds a mixture from `(weight, mean, covariance)` triples. Weights must
    /// be positive and sum to one; covariances must be symmetric positive
    /// definite.
    pub fn new(parts: Vec<(f64, Vector, Matrix)>) -> Result<Self> {
        let dim = parts
            .first()
            .map(|p| p.1.len())
            .ok_or_else(|| Error::Invariant("mixture needs at least one component".into()))?;
        if dim == 0 {
            return Err(Error::Invariant("zero-dimensional mixture".into()));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if parts.iter().any(|p| !(p.0 > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "weights must be positive and sum to 1 (sum = {total})"
            )));
        }
        let components = parts
            .into_iter()
            .map(|(w, m, c)| {
                check_dim(dim, m.len())?;
                Component::new(w, m, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, dim })
    }

    /// `N(0, I_d)`.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![(1.0, Vector::zeros(dim), Matrix::identity(dim, dim))])
    }

    /// Single Gaussian `N(mean, var I)`.
    pub fn isotropic(mean: Vector, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![(1.0, mean, Matrix::identity(d, d) * var)])
    }

    /// Equal-weight mixture of `N(+-mean, var I)`.
    pub fn symmetric_pair(mean: Vector, var: f64) -> Result<Self> {
        let d = mean.len();
        let cov = Matrix::identity(d, d) * var;
        Self::new(vec![(0.5, mean.clone(), cov.clone()), (0.5, -mean, cov)])
    }

    /// Default 2-D, two-component test density: `0.5 N((3, 1.5), 0.5 I) + 0.5 N((-3, -1.5), 0.5 I)`.
    pub fn two_component() -> Self {
        Self::symmetric_pair(Vector::from_vec(vec![3.0, 1.5]), 0.5).expect("static mixture is valid")
    }

    /// Zero-mean Gaussian field on a 1-D grid with squared-exponential
    /// covariance `amplitude * exp(-(i - j)^2 / (2 l^2)) + jitter * I`.
    pub fn gaussian_field(dim: usize, length_scale: f64, amplitude: f64, jitter: f64) -> Result<Self> {
        if !(length_scale > 0.0 && amplitude > 0.0 && jitter >= 0.0) {
            return Err(Error::Config(format!(
                "field needs positive length scale and amplitude (got {length_scale}, {amplitude})"
            )));
        }
        let cov = Matrix::from_fn(dim, dim, |i, j| {
            let r = i as f64 - j as f64;
            amplitude * (-0.5 * r * r / (length_scale * length_scale)).exp() + if i == j { jitter } else { 0.0 }
        });
        Self::new(vec![(1.0, Vector::zeros(dim), cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self) -> Vector {
        self.components
            .iter()
            .fold(Vector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn covariance(&self) -> Matrix {
        let mu = self.mean();
        self.components
            .iter()
            .fold(Matrix::zeros(self.dim, self.dim), |acc, c| {
                let dm = &c.mean - &mu;
                acc + (&c.cov + &dm * dm.transpose()) * c.weight
            })
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        if self.components.len() == 1 {
            return self.components[0].sample(rng);
        }
        let pick =
            WeightedIndex::new(self.components.iter().map(|c| c.weight)).expect("weights validated at construction");
        self.components[pick.sample(rng)].sample(rng)
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vector> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Marginal of `x_t = alpha x_0 + sigma eps` for `x_0` drawn from `self`.
    pub fn pushforward_with(&self, alpha: f64, sigma: f64) -> Result<Self> {
        let eye = Matrix::identity(self.dim, self.dim);
        let parts = self
            .components
            .iter()
            .map(|c| {
                (
                    c.weight,
                    &c.mean * alpha,
                    &c.cov * (alpha * alpha) + &eye * (sigma * sigma),
                )
            })
            .collect();
        Self::new(parts)
    }

    /// `p_t` under `schedule`.
    pub fn pushforward(&self, schedule: &NoiseSchedule, t: f64) -> Result<Self> {
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        self.pushforward_with(alpha, sigma)
    }

    fn log_joint(&self, x: &Vector) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect()
    }

    pub fn logpdf(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(log_sum_exp(&self.log_joint(x)))
    }

    /// Posterior component probabilities `r_k(x)`.
    pub fn responsibilities(&self, x: &Vector) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        Ok(lj.into_iter().map(|l| (l - lse).exp()).collect())
    }

    /// `grad log p(x) = sum_k r_k(x) Sigma_k^{-1} (mu_k - x)`.
    pub fn score(&self, x: &Vector) -> Result<Vector> {
        let resp = self.responsibilities(x)?;
        let mut out = Vector::zeros(self.dim);
        for (c, r) in self.components.iter().zip(resp) {
            if r > 0.0 {
                out += c.precision_times(&(&c.mean - x)) * r;
            }
        }
        Ok(out)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn fd_gradient(gm: &GaussianMixture, x: &Vector, h: f64) -> Vector {
        Vector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (gm.logpdf(&xp).unwrap() - gm.logpdf(&xm).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn rejects_bad_weights_and_covariances() {
        let eye = Matrix::identity(2, 2);
        assert!(GaussianMixture::new(vec![(0.7, Vector::zeros(2), eye.clone())]).is_err());
        assert!(GaussianMixture::new(vec![
            (1.2, Vector::zeros(2), eye.clone()),
            (-0.2, Vector::zeros(2), eye.clone())
        ])
        .is_err());
        let degenerate = GaussianMixture::new(vec![(1.0, v(&[1.0, 2.0]), Matrix::zeros(2, 2))]);
        assert!(matches!(degenerate, Err(Error::Invariant(_))));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianMixture::new(vec![(1.0, Vector::zeros(2), asym)]).is_err());
    }

    #[test]
    fn standard_sample_mean() {
        let gm = GaussianMixture::standard(2).unwrap();
        let xs = gm.sample(10_000, &mut stream(1, 0));
        let mean = xs.iter().fold(Vector::zeros(2), |a, x| a + x) / 10_000.0;
        assert!(mean.amax() < 3.0 / 100.0, "{mean}");
    }

    #[test]
    fn symmetric_pair_sample_mean() {
        let gm = GaussianMixture::symmetric_pair(v(&[3.0, 0.0]), 1.0).unwrap();
        let n = 100_000;
        let xs = gm.sample(n, &mut stream(2, 0));
        let mean = xs.iter().fold(Vector::zeros(2), |a, x| a + x) / n as f64;
        // analytic per-coordinate variances: 1 + 9 and 1
        let cov = gm.covariance();
        assert_relative_eq!(cov[(0, 0)], 10.0);
        for i in 0..2 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!(mean[i].abs() < 3.0 * se, "coord {i}: {} vs {}", mean[i], se);
        }
    }

    #[test]
    fn pushforward_examples() {
        let vp = NoiseSchedule::vp();
        let gm = GaussianMixture::standard(3).unwrap();
        for t in [vp.t_min(), 0.3, 0.77, 1.0] {
            let p = gm.pushforward(&vp, t).unwrap();
            assert!((p.components()[0].cov() - Matrix::identity(3, 3)).amax() < 1e-12);
        }
        let otfm = NoiseSchedule::otfm();
        let gm = GaussianMixture::isotropic(v(&[2.0, -4.0]), 1.0).unwrap();
        let p = gm.pushforward(&otfm, 0.5).unwrap();
        assert_eq!(p.components()[0].mean(), &v(&[1.0, -2.0]));
        assert!((p.components()[0].cov() - Matrix::identity(2, 2) * 0.5).amax() < 1e-15);

        let gm = GaussianMixture::two_component();
        let p = gm.pushforward(&vp, 0.4).unwrap();
        assert_eq!(p.weights(), gm.weights());
    }

    #[test]
    fn pushforward_near_data_endpoint_is_close() {
        let vp = NoiseSchedule::vp();
        let gm = GaussianMixture::two_component();
        let p = gm.pushforward(&vp, vp.t_min()).unwrap();
        for (a, b) in p.components().iter().zip(gm.components()) {
            assert!((a.mean() - b.mean()).amax() < 10.0 * vp.t_min());
            assert!((a.cov() - b.cov()).amax() < 10.0 * vp.t_min());
        }
    }

    #[test]
    fn logpdf_examples() {
        let gm = GaussianMixture::standard(1).unwrap();
        assert_relative_eq!(
            gm.logpdf(&v(&[0.0])).unwrap(),
            -0.918_938_533_204_672_8,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            gm.logpdf(&v(&[1.0])).unwrap(),
            -1.418_938_533_204_672_8,
            epsilon = 1e-14
        );

        let pair = GaussianMixture::symmetric_pair(v(&[3.0]), 1.0).unwrap();
        // log(0.5 phi(3) + 0.5 phi(3)) evaluated directly
        let phi3 = (-4.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(
            pair.logpdf(&v(&[0.0])).unwrap(),
            (0.5 * 2.0 * phi3).ln(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn logpdf_far_out_is_finite() {
        let gm = GaussianMixture::two_component();
        let lp = gm.logpdf(&v(&[400.0, -300.0])).unwrap();
        assert!(lp.is_finite());
        let s = gm.score(&v(&[400.0, -300.0])).unwrap();
        assert!(s.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn score_examples() {
        let gm = GaussianMixture::standard(2).unwrap();
        assert_eq!(gm.score(&v(&[2.0, -1.0])).unwrap(), v(&[-2.0, 1.0]));
        let gm = GaussianMixture::isotropic(v(&[0.3, -0.2]), 2.5).unwrap();
        assert!(gm.score(&v(&[0.3, -0.2])).unwrap().amax() < 1e-15);
    }

    #[test]
    fn score_on_symmetry_axis() {
        // components mirrored across the x-axis: the y-components cancel on y = 0
        let gm = GaussianMixture::new(vec![
            (0.5, v(&[1.0, 2.0]), Matrix::identity(2, 2)),
            (0.5, v(&[1.0, -2.0]), Matrix::identity(2, 2)),
        ])
        .unwrap();
        let x = v(&[0.4, 0.0]);
        let s = gm.score(&x).unwrap();
        let fd = fd_gradient(&gm, &x, 1e-5);
        assert!(s[1].abs() < 1e-15);
        assert!((s - fd).amax() < 1e-5);
    }

    #[test]
    fn score_matches_finite_differences_of_pushforward() {
        let gm = GaussianMixture::new(vec![
            (0.3, v(&[2.0, 0.0]), Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])),
            (0.5, v(&[-1.0, 1.0]), Matrix::identity(2, 2) * 0.2),
            (
                0.2,
                v(&[0.0, -2.0]),
                Matrix::from_row_slice(2, 2, &[0.4, -0.1, -0.1, 0.8]),
            ),
        ])
        .unwrap();
        let vp = NoiseSchedule::vp();
        let mut rng = stream(3, 0);
        for _ in 0..200 {
            let t = rng.random_range(vp.t_min()..vp.t_max());
            let x = crate::rng::standard_normal(&mut rng, 2) * 2.0;
            let pt = gm.pushforward(&vp, t).unwrap();
            let s = pt.score(&x).unwrap();
            let scale = x.amax().max(1.0);
            let fd = fd_gradient(&pt, &x, 1e-5 * scale);
            let rel = (&s - &fd).amax() / s.amax().max(1.0);
            assert!(rel < 1e-5, "t={t} x={x} s={s} fd={fd}");
        }
    }

    #[test]
    fn serde_round_trip() {
        let gm = GaussianMixture::two_component();
        let spec: MixtureSpec = gm.clone().into();
        let back = GaussianMixture::try_from(spec).unwrap();
        assert_eq!(back.weights(), gm.weights());
        assert_eq!(back.components()[1].cov(), gm.components()[1].cov());
    }
}
