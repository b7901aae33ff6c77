use std::fs;
use std::path::{Path, PathBuf};

use htx_core::scorenet::LossPoint;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::metrics::{AggregateRow, CurvePoint, TrialRow};
use crate::report;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// A named pass/fail check with the value that decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.3e}, threshold {:.3e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub kind: ExperimentKind,
    pub config_digest: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Mean approximation error `J(t)` across trials.
    pub error_curve: Vec<CurvePoint>,
    pub checks: Vec<CheckResult>,
    pub loss_curve: Vec<LossPoint>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            kind: cfg.experiment.kind,
            config_digest: cfg.digest(),
            seed: cfg.experiment.seed,
            config: cfg.clone(),
            trials: Vec::new(),
            aggregates: Vec::new(),
            error_curve: Vec::new(),
            checks: Vec::new(),
            loss_curve: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn aggregate(&self, condition: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.condition == condition)
    }

    /// `<root>/<digest>`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.config_digest)
    }

    /// Writes `metrics.csv`, the SVG charts and `record.json` under
    /// `<root>/<digest>/`, returning that directory.
    pub fn persist(&mut self, root: &Path) -> Result<PathBuf> {
        let dir = self.run_dir(root);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let mut artifacts = vec![report::emit_csv(self, &dir)?];
        artifacts.extend(report::emit_svgs(self, &dir)?);
        self.artifacts = artifacts
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .chain(
                self.artifacts
                    .iter()
                    .filter(|a| !a.ends_with(".csv") && !a.ends_with(".svg"))
                    .cloned(),
            )
            .collect();
        self.artifacts.dedup();
        let path = dir.join("record.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
