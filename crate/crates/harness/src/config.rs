//! JSON experiment configuration.
//!
//! Every field has a default, so `{"experiment": {"kind": "verify"}}` is a
//! complete config.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use htx_core::oracle::ComponentSpec;
use htx_core::scorenet::{read_weights, NetScore};
use htx_core::{
    DegradationOperator, GaussianMixture, NoiseSchedule, OracleScore, Parameterization, SamplerConfig, ScoreModel,
    TrainConfig, WeightSchedule,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Restore,
    AblateExponent,
    AblateWeightFamily,
    BaselineSdedit,
    Verify,
    TrainScore,
    SampleUnguided,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Restore => "restore",
            ExperimentKind::AblateExponent => "ablate_exponent",
            ExperimentKind::AblateWeightFamily => "ablate_weight_family",
            ExperimentKind::BaselineSdedit => "baseline_sdedit",
            ExperimentKind::Verify => "verify",
            ExperimentKind::TrainScore => "train_score",
            ExperimentKind::SampleUnguided => "sample_unguided",
        }
    }
}

fn d16() -> usize {
    16
}
fn l3() -> f64 {
    3.0
}
fn one() -> f64 {
    1.0
}
fn jitter() -> f64 {
    1e-6
}
fn d2() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// `0.5 N((3, 1.5), 0.5 I) + 0.5 N((-3, -1.5), 0.5 I)`.
    #[default]
    TwoComponent,
    Standard {
        #[serde(default = "d2")]
        dim: usize,
    },
    /// Zero-mean Gaussian field on a 1-D grid with a squared-exponential kernel.
    GaussianField {
        #[serde(default = "d16")]
        dim: usize,
        #[serde(default = "l3")]
        length_scale: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "jitter")]
        jitter: f64,
    },
    Mixture {
        components: Vec<ComponentSpec>,
    },
}

impl DensityConfig {
    pub fn build(&self) -> Result<GaussianMixture> {
        Ok(match self {
            DensityConfig::TwoComponent => GaussianMixture::two_component(),
            DensityConfig::Standard { dim } => GaussianMixture::standard(*dim)?,
            DensityConfig::GaussianField {
                dim,
                length_scale,
                amplitude,
                jitter,
            } => GaussianMixture::gaussian_field(*dim, *length_scale, *amplitude, *jitter)?,
            DensityConfig::Mixture { components } => GaussianMixture::try_from(htx_core::oracle::MixtureSpec {
                components: components.clone(),
            })?,
        })
    }
}

fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn blur_noise() -> f64 {
    1.5
}
fn shrink_noise() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Identity {
        #[serde(default)]
        noise_std: f64,
    },
    Shrink {
        #[serde(default = "half")]
        factor: f64,
        #[serde(default = "shrink_noise")]
        noise_std: f64,
    },
    Blur {
        #[serde(default = "two")]
        kernel_std: f64,
        #[serde(default = "blur_noise")]
        noise_std: f64,
    },
    Downsample {
        #[serde(default = "d2")]
        factor: usize,
        #[serde(default)]
        noise_std: f64,
    },
    Mask {
        indices: Vec<usize>,
        #[serde(default)]
        noise_std: f64,
    },
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig::Shrink {
            factor: half(),
            noise_std: shrink_noise(),
        }
    }
}

impl OperatorConfig {
    pub fn blur_toy() -> Self {
        OperatorConfig::Blur {
            kernel_std: two(),
            noise_std: blur_noise(),
        }
    }

    pub fn build(&self, dim: usize) -> Result<DegradationOperator> {
        let (op, noise) = match self {
            OperatorConfig::Identity { noise_std } => (DegradationOperator::identity(dim), *noise_std),
            OperatorConfig::Shrink { factor, noise_std } => (DegradationOperator::shrink(*factor, dim)?, *noise_std),
            OperatorConfig::Blur { kernel_std, noise_std } => {
                (DegradationOperator::blur_1d(*kernel_std, dim)?, *noise_std)
            }
            OperatorConfig::Downsample { factor, noise_std } => {
                (DegradationOperator::downsample(*factor, dim)?, *noise_std)
            }
            OperatorConfig::Mask { indices, noise_std } => (DegradationOperator::mask(indices, dim)?, *noise_std),
        };
        Ok(op.with_noise(noise)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub weight: WeightSchedule,
    pub parameterization: Parameterization,
    /// Exponent for observed coordinates when the operator masks some.
    pub valid_exponent: Option<f64>,
    /// Exponent for filled-in coordinates when the operator masks some.
    pub invalid_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Exact marginal score of the configured density.
    #[default]
    Oracle,
    /// Trained epsilon network read from a weight file.
    Net { path: PathBuf },
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub optimizer: TrainConfig,
    /// Number of training points drawn from the density.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            optimizer: TrainConfig::default(),
            samples: default_samples(),
            hidden: default_hidden(),
        }
    }
}

fn default_exponents() -> Vec<f64> {
    vec![1.0, 3.0, 5.0, 7.0, 9.0]
}
fn default_family_exponents() -> Vec<f64> {
    vec![3.0, 5.0, 7.0]
}
fn default_t0() -> Vec<f64> {
    vec![0.4, 0.5, 0.6]
}
fn default_trials() -> usize {
    200
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Exponent sweep for `ablate_exponent`.
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
    /// Exponents for each family in `ablate_weight_family`.
    #[serde(default = "default_family_exponents")]
    pub family_exponents: Vec<f64>,
    /// Extra constant-weight rows for `ablate_weight_family`.
    pub constants: Vec<f64>,
    /// Add a `lambda = 0` row to `ablate_weight_family`.
    pub include_unguided: bool,
    /// Start times for `baseline_sdedit`, as fractions of the horizon.
    #[serde(default = "default_t0")]
    pub t0: Vec<f64>,
    /// Exponents whose metrics `restore` averages when non-empty.
    pub average_exponents: Vec<f64>,
    /// Weight file written by `train_score`.
    pub weights_out: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            trials: default_trials(),
            seed: 0,
            out: default_out(),
            exponents: default_exponents(),
            family_exponents: default_family_exponents(),
            constants: Vec::new(),
            include_unguided: false,
            t0: default_t0(),
            average_exponents: Vec::new(),
            weights_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub density: DensityConfig,
    pub operator: OperatorConfig,
    pub schedule: NoiseSchedule,
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn of_kind(kind: ExperimentKind) -> Self {
        let mut cfg = Self::default();
        cfg.experiment.kind = kind;
        cfg
    }

    /// The 16-cell blur-restoration toy.
    pub fn blur_toy(kind: ExperimentKind) -> Self {
        let mut cfg = Self::of_kind(kind);
        cfg.density = DensityConfig::GaussianField {
            dim: d16(),
            length_scale: l3(),
            amplitude: one(),
            jitter: jitter(),
        };
        cfg.operator = OperatorConfig::blur_toy();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(HarnessError::Config("trial count must be at least 1".into()));
        }
        self.guidance.weight.validate()?;
        let data = self.density.build()?;
        self.operator.build(data.dim())?;
        self.sampler.window(&self.schedule)?;
        if self.guidance.valid_exponent.is_some() != self.guidance.invalid_exponent.is_some() {
            return Err(HarnessError::Config(
                "valid_exponent and invalid_exponent must be given together".into(),
            ));
        }
        for &a in e
            .exponents
            .iter()
            .chain(&e.family_exponents)
            .chain(&e.average_exponents)
        {
            WeightSchedule::PowerOfSigma { exponent: a }.validate()?;
        }
        for &c in &e.constants {
            WeightSchedule::Constant { value: c }.validate()?;
        }
        if e.kind == ExperimentKind::AblateExponent && e.exponents.is_empty() {
            return Err(HarnessError::Config("exponent sweep is empty".into()));
        }
        if e.kind == ExperimentKind::BaselineSdedit {
            for &t0 in &e.t0 {
                if !(t0 > self.schedule.t_min() && t0 <= self.schedule.t_max()) {
                    return Err(HarnessError::Config(format!(
                        "t0 = {t0} outside ({}, {}]",
                        self.schedule.t_min(),
                        self.schedule.t_max()
                    )));
                }
            }
        }
        self.train.optimizer.validate()?;
        Ok(())
    }

    /// The score model named by the `model` section.
    pub fn score_model(&self, data: &GaussianMixture) -> Result<Arc<dyn ScoreModel>> {
        match &self.model {
            ModelConfig::Oracle => Ok(Arc::new(OracleScore::new(data.clone(), self.schedule))),
            ModelConfig::Net { path } => {
                let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
                let net = read_weights(std::io::BufReader::new(file))?;
                if net.data_dim() != data.dim() {
                    return Err(HarnessError::Config(format!(
                        "network dimension {} does not match density dimension {}",
                        net.data_dim(),
                        data.dim()
                    )));
                }
                Ok(Arc::new(NetScore::new(net, self.schedule)))
            }
        }
    }

    /// Canonical JSON used for the digest. The output directory is excluded so
    /// that relocating a run does not change its identity.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.experiment.out = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
