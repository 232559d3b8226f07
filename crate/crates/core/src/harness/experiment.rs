//! Trials over many scenes, estimator training, and report emission.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::evaluate_ap50;
use super::config::{ConfigError, ExperimentConfig};
use super::loss::total_loss;
use super::pipeline::{generate_trial_scene, run_disco_iteration, scene_seed, Diagnostics, SceneOutcome};
use crate::error::Error;
use crate::estimation::{self, constant_baseline_loss, softer_nms, standard_nms, LinearEstimator};

/// Offset separating validation scene indices from training scene indices.
const VALIDATION_OFFSET: u64 = 1 << 40;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Aggregated metrics of one trial (one seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub noise_level: f64,
    pub passes: usize,
    pub scenes: usize,
    pub objects: usize,
    pub mean_iou_noisy: f64,
    pub se_iou_noisy: f64,
    pub mean_iou_pass1: f64,
    pub se_iou_pass1: f64,
    pub mean_iou_pass2: f64,
    pub se_iou_pass2: f64,
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_est: f64,
    pub l_aug: f64,
    pub l_all: f64,
    pub ap50_standard_nms: Option<f64>,
    pub ap50_softer_nms: Option<f64>,
    pub est_val_loss: f64,
    /// Validation loss of the constant predictor that outputs the mean
    /// training target.
    pub est_val_baseline: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Interpolation used for average precision.
    pub ap_interpolation: String,
    pub ap_iou_threshold: f64,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialReport>,
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub noise_level: f64,
    pub passes: usize,
    pub mean_iou_noisy: f64,
    pub mean_iou_pass1: f64,
    pub mean_iou_pass2: f64,
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_est: f64,
    pub l_aug: f64,
    pub l_all: f64,
    pub ap50_standard_nms: Option<f64>,
    pub ap50_softer_nms: Option<f64>,
    pub est_val_loss: f64,
    pub seed: u64,
}

impl From<&TrialReport> for MetricsRow {
    fn from(t: &TrialReport) -> Self {
        Self {
            noise_level: t.noise_level,
            passes: t.passes,
            mean_iou_noisy: t.mean_iou_noisy,
            mean_iou_pass1: t.mean_iou_pass1,
            mean_iou_pass2: t.mean_iou_pass2,
            l_cls: t.l_cls,
            l_reg: t.l_reg,
            l_est: t.l_est,
            l_aug: t.l_aug,
            l_all: t.l_all,
            ap50_standard_nms: t.ap50_standard_nms,
            ap50_softer_nms: t.ap50_softer_nms,
            est_val_loss: t.est_val_loss,
            seed: t.seed,
        }
    }
}

/// Mean and standard error of the mean.
fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn simulate(cfg: &ExperimentConfig, seed: u64, index: u64, estimator: &LinearEstimator) -> Result<SceneOutcome, Error> {
    let s = scene_seed(seed, index);
    let scene = generate_trial_scene(cfg, s)?;
    run_disco_iteration(&scene, cfg, estimator, s)
}

/// Scene outcomes of a trial, before estimator training.
pub fn simulate_scenes(
    cfg: &ExperimentConfig,
    seed: u64,
    count: usize,
    offset: u64,
) -> Result<Vec<SceneOutcome>, Error> {
    let init = LinearEstimator::zeros(cfg.estimator.learning_rate);
    (0..count as u64)
        .into_par_iter()
        .map(|i| simulate(cfg, seed, offset + i, &init))
        .collect()
}

/// Runs one trial: simulates every scene in parallel, trains the estimator
/// on the collected groups in scene order, then scores the validation scenes
/// and both suppression variants with the trained estimator.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<(TrialReport, LinearEstimator), Error> {
    cfg.validate()?;
    let outcomes = simulate_scenes(cfg, seed, cfg.scenes, 0)?;
    let validation = simulate_scenes(cfg, seed, cfg.estimator.validation_scenes, VALIDATION_OFFSET)?;

    let batches: Vec<_> = outcomes.iter().map(|o| o.est_groups.clone()).collect();
    let estimator = estimation::train_estimator(
        LinearEstimator::zeros(cfg.estimator.learning_rate),
        &batches,
        cfg.estimator.steps,
    )?;
    let train_groups: Vec<_> = batches.iter().flatten().cloned().collect();
    let val_groups: Vec<_> = validation.iter().flat_map(|o| o.est_groups.iter().cloned()).collect();

    let objects: Vec<(f64, f64, f64)> = outcomes
        .iter()
        .flat_map(|o| {
            o.iou_noisy
                .iter()
                .zip(&o.iou_pass1)
                .zip(&o.iou_final)
                .map(|((a, b), c)| (*a, *b, *c))
        })
        .collect();
    let (mean_iou_noisy, se_iou_noisy) = mean_se(objects.iter().map(|t| t.0));
    let (mean_iou_pass1, se_iou_pass1) = mean_se(objects.iter().map(|t| t.1));
    let (mean_iou_pass2, se_iou_pass2) = mean_se(objects.iter().map(|t| t.2));

    let per_scene_est: Vec<f64> = outcomes.par_iter().map(|o| estimator.loss(&o.est_groups)).collect();
    let n = outcomes.len().max(1) as f64;
    let avg = |f: &dyn Fn(&SceneOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let l_cls = avg(&|o| o.losses.l_cls);
    let l_reg = avg(&|o| o.losses.l_reg);
    let l_aug = avg(&|o| o.losses.l_aug);
    let l_est = per_scene_est.iter().sum::<f64>() / n;

    let (standard, softer): (Vec<_>, Vec<_>) = outcomes
        .par_iter()
        .map(|o| {
            let dets: Vec<_> = o.candidates.iter().map(|c| c.to_detection(&estimator)).collect();
            (
                standard_nms(&dets, cfg.nms_iou),
                softer_nms(&dets, cfg.nms_iou, cfg.nms_score_threshold),
            )
        })
        .unzip();
    let gts: Vec<_> = outcomes.iter().map(|o| o.ground_truths.clone()).collect();

    let mut diagnostics = Diagnostics::default();
    for o in &outcomes {
        diagnostics.absorb(&o.diagnostics);
    }
    let report = TrialReport {
        seed,
        noise_level: cfg.noise_level,
        passes: cfg.passes,
        scenes: outcomes.len(),
        objects: objects.len(),
        mean_iou_noisy,
        se_iou_noisy,
        mean_iou_pass1,
        se_iou_pass1,
        mean_iou_pass2,
        se_iou_pass2,
        l_cls,
        l_reg,
        l_est,
        l_aug,
        l_all: total_loss(l_cls, l_reg, l_est, l_aug, cfg.gamma, cfg.lambda),
        ap50_standard_nms: evaluate_ap50(&standard, &gts),
        ap50_softer_nms: evaluate_ap50(&softer, &gts),
        est_val_loss: estimator.loss(&val_groups),
        est_val_baseline: constant_baseline_loss(&train_groups, &val_groups),
        diagnostics,
    };
    Ok((report, estimator))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    cfg.validate()?;
    let trials = if cfg.scenes == 0 {
        Vec::new()
    } else {
        cfg.seeds
            .iter()
            .map(|&s| run_trial(cfg, s).map(|(r, _)| r))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(ExperimentReport {
        ap_interpolation: "all-point".into(),
        ap_iou_threshold: super::ap::AP_IOU,
        config: cfg.clone(),
        trials,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Results of varying one config key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub vary: String,
    pub values: Vec<String>,
    pub reports: Vec<ExperimentReport>,
}

pub fn run_sweep(cfg: &ExperimentConfig, key: &str, values: &[String]) -> Result<SweepReport, HarnessError> {
    let reports = values
        .iter()
        .map(|v| {
            let c = cfg.with_override(key, v)?;
            Ok(run_experiment(&c)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SweepReport {
        vary: key.to_string(),
        values: values.to_vec(),
        reports,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

const METRICS_HEADER: [&str; 14] = [
    "noise_level",
    "passes",
    "mean_iou_noisy",
    "mean_iou_pass1",
    "mean_iou_pass2",
    "l_cls",
    "l_reg",
    "l_est",
    "l_aug",
    "l_all",
    "ap50_standard_nms",
    "ap50_softer_nms",
    "est_val_loss",
    "seed",
];

/// Writes the metrics table, one row per trial, to any writer.
pub fn write_metrics<'a, W: std::io::Write>(
    out: W,
    trials: impl IntoIterator<Item = &'a TrialReport>,
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for t in trials {
        w.serialize(MetricsRow::from(t))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv<'a>(
    path: &Path,
    trials: impl IntoIterator<Item = &'a TrialReport>,
) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_metrics(std::io::BufWriter::new(file), trials).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })
}

/// Writes `report.json` and `metrics.csv` into `dir`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    write_metrics_csv(&dir.join("metrics.csv"), &report.trials)
}

pub fn write_sweep(dir: &Path, sweep: &SweepReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_json(&dir.join("report.json"), sweep)?;
    write_metrics_csv(
        &dir.join("metrics.csv"),
        sweep.reports.iter().flat_map(|r| r.trials.iter()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            scenes: 12,
            estimator: super::super::config::EstimatorConfig {
                steps: 200,
                validation_scenes: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn empty_experiment() {
        let cfg = ExperimentConfig { scenes: 0, ..tiny() };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.trials.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn report_files() {
        let cfg = ExperimentConfig {
            seeds: vec![0, 1],
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.trials.len(), 2);
        let t = &r.trials[0];
        assert_eq!(t.objects, 12 * cfg.objects_per_scene);
        for v in [t.mean_iou_noisy, t.mean_iou_pass1, t.mean_iou_pass2] {
            assert!((0.0..=1.0).contains(&v));
        }
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "noise_level,passes,mean_iou_noisy,mean_iou_pass1,mean_iou_pass2,l_cls,l_reg,l_est,l_aug,l_all,ap50_standard_nms,ap50_softer_nms,est_val_loss,seed"
        );
        assert_eq!(lines.count(), 2);
        let back: ExperimentReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn sweep_emits_row_per_setting() {
        let values: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        let s = run_sweep(&tiny(), "passes", &values).unwrap();
        let passes: Vec<usize> = s
            .reports
            .iter()
            .flat_map(|r| r.trials.iter().map(|t| t.passes))
            .collect();
        assert_eq!(passes, vec![1, 2, 3]);
        assert!(run_sweep(&tiny(), "passes", &["7".into()]).is_err());
    }

    #[test]
    fn io_errors_carry_path() {
        let r = run_experiment(&ExperimentConfig { scenes: 0, ..tiny() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_report(&blocker.join("sub"), &r).unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
        assert!(err.to_string().contains("file"));
    }
}
