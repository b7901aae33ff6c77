use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal;
use crate::{Matrix, Vector};

/// How an `m`-dimensional measurement is mapped back to data space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LiftRule {
    /// `m == d`; row `i` measures coordinate `i`. Masked rows are filled from
    /// the nearest valid coordinate.
    Direct,
    /// Each measurement is copied into `factor` adjacent cells.
    Replicate { factor: usize },
}

/// Linear degradation `y~ = A y + s z` with `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorRepr", into = "OperatorRepr")]
pub struct DegradationOperator {
    matrix: Matrix,
    noise_std: f64,
    masked_rows: Vec<bool>,
    lift: LiftRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OperatorRepr {
    rows: Vec<Vec<f64>>,
    noise_std: f64,
    masked_rows: Vec<bool>,
    lift: LiftRule,
}

impl TryFrom<OperatorRepr> for DegradationOperator {
    type Error = Error;
    fn try_from(r: OperatorRepr) -> Result<Self> {
        let m = r.rows.len();
        let d = r.rows.first().map_or(0, |row| row.len());
        if r.rows.iter().any(|row| row.len() != d) {
            return Err(Error::Invariant("ragged operator matrix".into()));
        }
        let matrix = Matrix::from_fn(m, d, |i, j| r.rows[i][j]);
        DegradationOperator::from_parts(matrix, r.masked_rows, r.lift)?.with_noise(r.noise_std)
    }
}

impl From<DegradationOperator> for OperatorRepr {
    fn from(op: DegradationOperator) -> Self {
        OperatorRepr {
            rows: op.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            noise_std: op.noise_std,
            masked_rows: op.masked_rows,
            lift: op.lift,
        }
    }
}

/// A fine sample, its degraded measurement, and the lifted coarse reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub fine: Vector,
    /// Raw measurement `A y + s z` (dimension `m`).
    pub measurement: Vector,
    /// Measurement lifted back to data space (dimension `d`).
    pub coarse: Vector,
    /// `true` for observed coordinates, `false` for filled-in ones.
    pub valid: Vec<bool>,
}

impl DegradationOperator {
    /// General constructor. Zero rows are only allowed when flagged as masked.
    pub fn from_parts(matrix: Matrix, masked_rows: Vec<bool>, lift: LiftRule) -> Result<Self> {
        let (m, d) = matrix.shape();
        if m == 0 || d == 0 {
            return Err(Error::Invariant("empty operator".into()));
        }
        check_dim(m, masked_rows.len())?;
        match lift {
            LiftRule::Direct => check_dim(d, m)?,
            LiftRule::Replicate { factor } => {
                if factor == 0 {
                    return Err(Error::Config("replication factor must be positive".into()));
                }
                check_dim(d, m * factor)?
            }
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("non-finite operator entry".into()));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if !masked_rows[i] && row.iter().all(|&v| v == 0.0) {
                return Err(Error::Invariant(format!("row {i} is zero but not flagged as masked")));
            }
        }
        Ok(Self {
            matrix,
            noise_std: 0.0,
            masked_rows,
            lift,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::shrink(1.0, dim).expect("identity is valid")
    }

    /// `A = factor * I`.
    pub fn shrink(factor: f64, dim: usize) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) || dim == 0 {
            return Err(Error::Config(format!("shrink factor must be positive, got {factor}")));
        }
        Self::from_parts(Matrix::identity(dim, dim) * factor, vec![false; dim], LiftRule::Direct)
    }

    /// Gaussian blur on a 1-D grid; every row is a normalized discrete kernel.
    pub fn blur_1d(kernel_std: f64, grid_size: usize) -> Result<Self> {
        if !(kernel_std > 0.0 && kernel_std.is_finite()) || grid_size == 0 {
            return Err(Error::Config(format!(
                "blur needs positive kernel std and grid size, got ({kernel_std}, {grid_size})"
            )));
        }
        let mut a = Matrix::from_fn(grid_size, grid_size, |i, j| {
            let r = i as f64 - j as f64;
            (-0.5 * r * r / (kernel_std * kernel_std)).exp()
        });
        for mut row in a.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        Self::from_parts(a, vec![false; grid_size], LiftRule::Direct)
    }

    /// Averages `factor` adjacent cells; lifted back by replication.
    pub fn downsample(factor: usize, grid_size: usize) -> Result<Self> {
        if factor == 0 || grid_size == 0 || grid_size % factor != 0 {
            return Err(Error::Config(format!(
                "downsample factor {factor} must be positive and divide grid size {grid_size}"
            )));
        }
        let m = grid_size / factor;
        let a = Matrix::from_fn(
            m,
            grid_size,
            |i, j| {
                if j / factor == i {
                    1.0 / factor as f64
                } else {
                    0.0
                }
            },
        );
        Self::from_parts(a, vec![false; m], LiftRule::Replicate { factor })
    }

    /// Erases the listed coordinates.
    pub fn mask(indices: &[usize], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("mask needs a positive dimension".into()));
        }
        let mut masked = vec![false; dim];
        for &i in indices {
            if i >= dim {
                return Err(Error::Config(format!(
                    "mask index {i} out of range for dimension {dim}"
                )));
            }
            masked[i] = true;
        }
        if masked.iter().all(|&m| m) {
            return Err(Error::Config("mask erases every coordinate".into()));
        }
        let a = Matrix::from_diagonal(&Vector::from_iterator(
            dim,
            masked.iter().map(|&m| if m { 0.0 } else { 1.0 }),
        ));
        Self::from_parts(a, masked, LiftRule::Direct)
    }

    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be >= 0, got {noise_std}")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
    pub fn masked_rows(&self) -> &[bool] {
        &self.masked_rows
    }
    pub fn data_dim(&self) -> usize {
        self.matrix.ncols()
    }
    pub fn measurement_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `A y + s z`.
    pub fn measure<R: Rng + ?Sized>(&self, y: &Vector, rng: &mut R) -> Result<Vector> {
        check_dim(self.data_dim(), y.len())?;
        let clean = &self.matrix * y;
        if self.noise_std == 0.0 {
            return Ok(clean);
        }
        Ok(clean + standard_normal(rng, self.measurement_dim()) * self.noise_std)
    }

    /// Maps a measurement back to data space, returning the coarse vector and
    /// the per-coordinate validity mask.
    pub fn lift(&self, measurement: &Vector) -> Result<(Vector, Vec<bool>)> {
        check_dim(self.measurement_dim(), measurement.len())?;
        match self.lift {
            LiftRule::Direct => {
                let valid: Vec<bool> = self.masked_rows.iter().map(|m| !m).collect();
                let d = valid.len();
                let coarse = Vector::from_fn(d, |i, _| {
                    if valid[i] {
                        return measurement[i];
                    }
                    // nearest valid coordinate, lower index on ties
                    (1..d)
                        .flat_map(|k| [i.checked_sub(k), Some(i + k)])
                        .flatten()
                        .find(|&j| j < d && valid[j])
                        .map_or(0.0, |j| measurement[j])
                });
                Ok((coarse, valid))
            }
            LiftRule::Replicate { factor } => {
                let d = self.data_dim();
                let coarse = Vector::from_fn(d, |i, _| measurement[i / factor]);
                let valid = (0..d).map(|i| !self.masked_rows[i / factor]).collect();
                Ok((coarse, valid))
            }
        }
    }

    /// Degrades `y` into a paired sample.
    pub fn degrade<R: Rng + ?Sized>(&self, y: &Vector, rng: &mut R) -> Result<PairedSample> {
        let measurement = self.measure(y, rng)?;
        let (coarse, valid) = self.lift(&measurement)?;
        Ok(PairedSample {
            fine: y.clone(),
            measurement,
            coarse,
            valid,
        })
    }
}
