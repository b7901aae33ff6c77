//! Per-trial metrics, aggregation and trend checks.

use htx_core::{GaussianMixture, Matrix, Vector};
use serde::{Deserialize, Serialize};

/// Mean squared coordinate error `|a - b|^2 / d`.
pub fn mse(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Stat { mean, se }
    }
}

/// One sampled endpoint scored against its fine target and coarse reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub condition: String,
    pub family: String,
    pub x: Option<f64>,
    pub trial: usize,
    pub mse_to_y: f64,
    pub mse_to_coarse: f64,
    pub loglik_p0: f64,
    /// Error of the exact posterior mean for the same trial, when available.
    pub posterior_mse: Option<f64>,
}

/// Aggregate metrics for one condition; also the row layout of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: String,
    pub family: String,
    pub x: Option<f64>,
    pub n: usize,
    pub mse_to_y_mean: f64,
    pub mse_to_y_se: f64,
    pub mse_to_coarse_mean: f64,
    pub mse_to_coarse_se: f64,
    pub loglik_p0_mean: f64,
    pub loglik_p0_se: f64,
    pub posterior_mse_mean: Option<f64>,
    pub posterior_mse_se: Option<f64>,
    /// `|mean(endpoints) - E p_0|`.
    pub mean_distance: f64,
    /// Frobenius norm of `cov(endpoints) - Cov p_0`.
    pub cov_distance: f64,
}

pub const CSV_HEADER: [&str; 14] = [
    "condition",
    "family",
    "x",
    "n",
    "mse_to_y_mean",
    "mse_to_y_se",
    "mse_to_coarse_mean",
    "mse_to_coarse_se",
    "loglik_p0_mean",
    "loglik_p0_se",
    "posterior_mse_mean",
    "posterior_mse_se",
    "mean_distance",
    "cov_distance",
];

impl AggregateRow {
    pub fn mse_to_y(&self) -> Stat {
        Stat {
            mean: self.mse_to_y_mean,
            se: self.mse_to_y_se,
        }
    }

    pub fn mse_to_coarse(&self) -> Stat {
        Stat {
            mean: self.mse_to_coarse_mean,
            se: self.mse_to_coarse_se,
        }
    }

    pub fn posterior_mse(&self) -> Option<Stat> {
        Some(Stat {
            mean: self.posterior_mse_mean?,
            se: self.posterior_mse_se?,
        })
    }
}

/// Distances between the empirical moments of `endpoints` and those of `data`.
pub fn moment_distances(endpoints: &[Vector], data: &GaussianMixture) -> (f64, f64) {
    let n = endpoints.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let d = data.dim();
    let mean = endpoints.iter().fold(Vector::zeros(d), |a, x| a + x) / n as f64;
    let mut cov = Matrix::zeros(d, d);
    if n > 1 {
        for x in endpoints {
            let c = x - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    ((mean - data.mean()).norm(), (cov - data.covariance()).norm())
}

/// Builds the aggregate row of a condition from its trial rows.
pub fn aggregate(rows: &[TrialRow], moments: (f64, f64)) -> AggregateRow {
    let col = |f: fn(&TrialRow) -> f64| -> Stat { Stat::of(&rows.iter().map(f).collect::<Vec<_>>()) };
    let y = col(|r| r.mse_to_y);
    let c = col(|r| r.mse_to_coarse);
    let l = col(|r| r.loglik_p0);
    let post: Option<Vec<f64>> = rows.iter().map(|r| r.posterior_mse).collect();
    let post = post.filter(|p| !p.is_empty()).map(|p| Stat::of(&p));
    let first = rows.first();
    AggregateRow {
        condition: first.map(|r| r.condition.clone()).unwrap_or_default(),
        family: first.map(|r| r.family.clone()).unwrap_or_default(),
        x: first.and_then(|r| r.x),
        n: rows.len(),
        mse_to_y_mean: y.mean,
        mse_to_y_se: y.se,
        mse_to_coarse_mean: c.mean,
        mse_to_coarse_se: c.se,
        loglik_p0_mean: l.mean,
        loglik_p0_se: l.se,
        posterior_mse_mean: post.map(|s| s.mean),
        posterior_mse_se: post.map(|s| s.se),
        mean_distance: moments.0,
        cov_distance: moments.1,
    }
}

/// Outcome of a monotone-trend check on a sequence of means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub inversions: usize,
    /// Largest drop measured in units of the larger neighbouring SE.
    pub worst_drop_in_se: f64,
    pub passed: bool,
}

/// Non-decreasing trend allowing at most one inversion, and only if that drop
/// is within one standard error.
pub fn non_decreasing_trend(stats: &[Stat]) -> TrendReport {
    let mut inversions = 0;
    let mut worst: f64 = 0.0;
    for w in stats.windows(2) {
        let drop = w[0].mean - w[1].mean;
        if drop > 0.0 {
            inversions += 1;
            let se = w[0].se.max(w[1].se);
            worst = worst.max(if se > 0.0 { drop / se } else { f64::INFINITY });
        }
    }
    TrendReport {
        inversions,
        worst_drop_in_se: worst,
        passed: inversions == 0 || (inversions == 1 && worst <= 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mse_to_y: f64, post: Option<f64>) -> TrialRow {
        TrialRow {
            condition: "c".into(),
            family: "f".into(),
            x: Some(5.0),
            trial: 0,
            mse_to_y,
            mse_to_coarse: 2.0 * mse_to_y,
            loglik_p0: -mse_to_y,
            posterior_mse: post,
        }
    }

    #[test]
    fn stat_examples() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/3/4)
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).se, 0.0);
        assert!(Stat::of(&[]).mean.is_nan());
    }

    #[test]
    fn aggregate_recomputes_columns() {
        let rows = vec![row(1.0, Some(0.5)), row(3.0, Some(0.7))];
        let agg = aggregate(&rows, (0.1, 0.2));
        assert_eq!(agg.n, 2);
        assert_eq!(agg.mse_to_y_mean, 2.0);
        assert_eq!(agg.mse_to_coarse_mean, 4.0);
        assert_eq!(agg.posterior_mse_mean, Some(0.6));
        assert_eq!(agg.x, Some(5.0));
        let partial = aggregate(&[row(1.0, None), row(2.0, Some(1.0))], (0.0, 0.0));
        assert_eq!(partial.posterior_mse_mean, None);
    }

    #[test]
    fn trend_rules() {
        let s = |m: f64, se: f64| Stat { mean: m, se };
        assert!(non_decreasing_trend(&[s(1.0, 0.1), s(2.0, 0.1), s(3.0, 0.1)]).passed);
        let one_small = non_decreasing_trend(&[s(1.0, 0.1), s(0.95, 0.1), s(3.0, 0.1)]);
        assert!(one_small.passed && one_small.inversions == 1);
        assert!(!non_decreasing_trend(&[s(1.0, 0.1), s(0.5, 0.1), s(3.0, 0.1)]).passed);
        assert!(!non_decreasing_trend(&[s(1.0, 0.1), s(0.99, 0.1), s(0.98, 0.1)]).passed);
    }

    #[test]
    fn moment_distance_of_exact_moments_is_zero() {
        let gm = GaussianMixture::standard(2).unwrap();
        let pts = vec![
            Vector::from_vec(vec![1.0, 0.0]),
            Vector::from_vec(vec![-1.0, 0.0]),
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![0.0, -1.0]),
        ];
        let (m, c) = moment_distances(&pts, &gm);
        assert_eq!(m, 0.0);
        // sample covariance is (2/3) I, so the Frobenius gap is sqrt(2) / 3
        assert!((c - 2f64.sqrt() / 3.0).abs() < 1e-15);
    }
}
