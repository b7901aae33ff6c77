//! Score-network training experiment and the fixed evaluation grid.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use htx_core::rng::stream;
use htx_core::scorenet::{train_with_monitor, write_weights, MlpNet, NetScore};
use htx_core::{GaussianMixture, NoiseSchedule, OracleScore, ScoreModel, Vector};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::record::RunRecord;

/// Grid points `(x, t)`: each coordinate of `x` on 11 points of `[-2.5, 2.5]`
/// (full tensor product in two dimensions, the diagonal otherwise), and
/// `t in {0.1, 0.2, ..., 1.0}` clamped into the schedule's range.
pub fn evaluation_grid(dim: usize, schedule: &NoiseSchedule) -> Vec<(Vector, f64)> {
    let axis: Vec<f64> = (0..11).map(|k| -2.5 + 0.5 * k as f64).collect();
    let xs: Vec<Vector> = if dim == 2 {
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| Vector::from_vec(vec![a, b])))
            .collect()
    } else {
        axis.iter().map(|&a| Vector::from_element(dim, a)).collect()
    };
    let times: Vec<f64> = (1..=10)
        .map(|k| (0.1 * k as f64).clamp(schedule.t_min(), schedule.t_max()))
        .collect();
    times
        .iter()
        .flat_map(|&t| xs.iter().map(move |x| (x.clone(), t)))
        .collect()
}

/// Root mean squared per-coordinate score error of `model` against the exact
/// score of `data` over [`evaluation_grid`].
pub fn score_rmse(model: &dyn ScoreModel, data: &GaussianMixture) -> Result<f64> {
    let schedule = *model.schedule();
    let oracle = OracleScore::new(data.clone(), schedule);
    let grid = evaluation_grid(data.dim(), &schedule);
    let mut total = 0.0;
    for (x, t) in &grid {
        total += (model.score(x, *t)? - oracle.score(x, *t)?).norm_squared();
    }
    Ok((total / (grid.len() * data.dim()) as f64).sqrt())
}

/// Trains an epsilon network on samples of the configured density and writes
/// its weights. The record carries the loss curve and the grid RMSE at every
/// logging point.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(RunRecord, MlpNet)> {
    let mut cfg = cfg.clone();
    cfg.experiment.kind = ExperimentKind::TrainScore;
    cfg.validate()?;
    let data = cfg.density.build()?;
    let schedule = cfg.schedule;
    let seed = cfg.train.optimizer.seed;
    let samples = data.sample(cfg.train.samples, &mut stream(seed, 1));
    let net = MlpNet::for_data_dim(data.dim(), &cfg.train.hidden, &mut stream(seed, 2))?;

    let mut rmse_curve = Vec::new();
    let (net, report) = train_with_monitor(net, &samples, &cfg.train.optimizer, &schedule, |step, net| {
        let model = NetScore::new(net.clone(), schedule);
        rmse_curve.push((step, score_rmse(&model, &data)));
    })?;

    let mut record = RunRecord::new(&cfg);
    record.loss_curve = report.loss_curve;
    for (step, rmse) in rmse_curve {
        record.notes.push(format!("step {step}: grid score rmse {:.4}", rmse?));
    }
    let final_rmse = score_rmse(&NetScore::new(net.clone(), schedule), &data)?;
    record.notes.push(format!("final grid score rmse {final_rmse:.4}"));

    let path = cfg
        .experiment
        .weights_out
        .clone()
        .unwrap_or_else(|| record.run_dir(&cfg.experiment.out).join("weights.htxnet"));
    save_weights(&net, &path)?;
    record.artifacts.push(path.display().to_string());
    Ok((record, net))
}

fn save_weights(net: &MlpNet, path: &PathBuf) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_weights(net, BufWriter::new(file))?;
    Ok(())
}
