//! Per-border variance estimation and variance-aware suppression.
//!
//! A linear estimator maps the geometric proposal features to a predicted
//! variance for each border and is trained against the squared spread of the
//! group's modeled distribution. Softer-NMS then uses the predicted variances
//! to vote on the coordinates of each kept detection.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BoxCorners;

pub const FEATURES: usize = 8;
/// Smallest variance used as an inverse weight, px².
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Training aborts once the batch loss exceeds this value.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePrediction {
    /// Predicted variance of each border, px².
    pub variance: [f64; 4],
}

/// Features of every proposal in one group together with the group's
/// supervision target (`σ²`, px²) and the size normalizers the features were
/// computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorGroup {
    pub features: Vec<[f64; FEATURES]>,
    pub scale: [f64; 4],
    pub target: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimator {
    /// `weights[k][d]` maps feature `k` to border `d`.
    pub weights: [[f64; 4]; FEATURES],
    pub bias: [f64; 4],
    pub learning_rate: f64,
    pub steps: usize,
}

/// Gradient of the estimator loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: [[f64; 4]; FEATURES],
    pub bias: [f64; 4],
}

impl LinearEstimator {
    pub fn zeros(learning_rate: f64) -> Self {
        Self {
            weights: [[0.0; 4]; FEATURES],
            bias: [0.0; 4],
            learning_rate,
            steps: 0,
        }
    }

    fn pre_activation(&self, f: &[f64; FEATURES]) -> [f64; 4] {
        std::array::from_fn(|d| self.bias[d] + (0..FEATURES).map(|k| self.weights[k][d] * f[k]).sum::<f64>())
    }

    /// Variance in normalized units, `max(z, 0)` per border.
    pub fn predict_normalized(&self, f: &[f64; FEATURES]) -> [f64; 4] {
        self.pre_activation(f).map(|z| z.max(0.0))
    }

    /// Variance in px²: the normalized prediction times the squared normalizer.
    pub fn predict(&self, f: &[f64; FEATURES], scale: &[f64; 4]) -> ConfidencePrediction {
        let v = self.predict_normalized(f);
        ConfidencePrediction {
            variance: std::array::from_fn(|d| v[d] * scale[d] * scale[d]),
        }
    }

    pub fn predict_group(&self, g: &EstimatorGroup) -> Vec<ConfidencePrediction> {
        g.features.iter().map(|f| self.predict(f, &g.scale)).collect()
    }

    /// Loss over a batch of groups: mean over groups of the per-group loss.
    pub fn loss(&self, batch: &[EstimatorGroup]) -> f64 {
        batch_loss(batch, |g| self.predict_group(g))
    }

    /// Loss and analytic (sub)gradient. At `z = 0` the activation slope is
    /// taken as 1 so a zero-initialized estimator can leave the origin.
    pub fn loss_and_gradient(&self, batch: &[EstimatorGroup]) -> (f64, Gradient) {
        let mut grad = Gradient {
            weights: [[0.0; 4]; FEATURES],
            bias: [0.0; 4],
        };
        let groups: Vec<_> = batch.iter().filter(|g| !g.features.is_empty()).collect();
        if groups.is_empty() {
            return (0.0, grad);
        }
        let m = groups.len() as f64;
        let mut loss = 0.0;
        for g in groups {
            let n = g.features.len() as f64;
            for f in &g.features {
                let z = self.pre_activation(f);
                for d in 0..4 {
                    let s2 = g.scale[d] * g.scale[d];
                    let r = z[d].max(0.0) * s2 - g.target[d];
                    loss += r.abs() / (m * n);
                    if z[d] >= 0.0 && r != 0.0 {
                        let dz = r.signum() * s2 / (m * n);
                        grad.bias[d] += dz;
                        for k in 0..FEATURES {
                            grad.weights[k][d] += dz * f[k];
                        }
                    }
                }
            }
        }
        (loss, grad)
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(self.bias.iter()).copied().collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        for (k, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&p[4 * k..4 * k + 4]);
        }
        self.bias.copy_from_slice(&p[4 * FEATURES..4 * FEATURES + 4]);
    }
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(self.bias.iter()).copied().collect()
    }
}

fn batch_loss(batch: &[EstimatorGroup], predict: impl Fn(&EstimatorGroup) -> Vec<ConfidencePrediction>) -> f64 {
    let groups: Vec<_> = batch.iter().filter(|g| !g.features.is_empty()).collect();
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups.iter().map(|g| est_loss_squared(&predict(g), &g.target)).sum();
    total / groups.len() as f64
}

/// Per-group loss `(1/N) Σ_j ‖V_j − σ²‖₁` against the modeled spread `sigma`.
pub fn est_loss(preds: &[ConfidencePrediction], sigma: &[f64; 4]) -> f64 {
    est_loss_squared(preds, &sigma.map(|s| s * s))
}

fn est_loss_squared(preds: &[ConfidencePrediction], target: &[f64; 4]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let total: f64 = preds
        .iter()
        .map(|p| p.variance.iter().zip(target).map(|(v, t)| (v - t).abs()).sum::<f64>())
        .sum();
    total / preds.len() as f64
}

/// Loss of the constant predictor that outputs the mean target of `fit` on
/// every proposal of `eval`.
pub fn constant_baseline_loss(fit: &[EstimatorGroup], eval: &[EstimatorGroup]) -> f64 {
    let n = fit.iter().filter(|g| !g.features.is_empty()).count().max(1) as f64;
    let mut mean = [0.0; 4];
    for g in fit.iter().filter(|g| !g.features.is_empty()) {
        for d in 0..4 {
            mean[d] += g.target[d] / n;
        }
    }
    batch_loss(eval, |g| {
        vec![ConfidencePrediction { variance: mean }; g.features.len()]
    })
}

/// Full-batch subgradient descent on the estimator loss, cycling through
/// `batches`. The step for batch `b` at step `t` is
/// `lr / ((1 + t / 1000) · mean s²)`, which keeps the learning rate free of
/// pixel units.
pub fn train_estimator(
    mut est: LinearEstimator,
    batches: &[Vec<EstimatorGroup>],
    steps: usize,
) -> Result<LinearEstimator> {
    if !(est.learning_rate > 0.0 && est.learning_rate.is_finite()) {
        return Err(invalid("learning_rate", "must be positive"));
    }
    let batches: Vec<&Vec<EstimatorGroup>> = batches
        .iter()
        .filter(|b| b.iter().any(|g| !g.features.is_empty()))
        .collect();
    if batches.is_empty() {
        return Ok(est);
    }
    for g in batches.iter().flat_map(|b| b.iter()) {
        let finite = g
            .features
            .iter()
            .flatten()
            .chain(&g.scale)
            .chain(&g.target)
            .all(|x| x.is_finite());
        if !finite {
            return Err(invalid("training batch", "non-finite value"));
        }
    }
    let norms: Vec<f64> = batches
        .iter()
        .map(|b| {
            let live: Vec<_> = b.iter().filter(|g| !g.features.is_empty()).collect();
            let total: f64 = live
                .iter()
                .map(|g| g.scale.iter().map(|s| s * s).sum::<f64>() / 4.0)
                .sum();
            (total / live.len() as f64).max(f64::MIN_POSITIVE)
        })
        .collect();
    for t in 0..steps {
        let b = t % batches.len();
        let (loss, grad) = est.loss_and_gradient(batches[b]);
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step: est.steps, loss });
        }
        let step = est.learning_rate / ((1.0 + t as f64 / 1000.0) * norms[b]);
        for k in 0..FEATURES {
            for d in 0..4 {
                est.weights[k][d] -= step * grad.weights[k][d];
            }
        }
        for d in 0..4 {
            est.bias[d] -= step * grad.bias[d];
        }
        est.steps += 1;
    }
    Ok(est)
}

/// Input record for suppression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoxCorners,
    pub score: f64,
    #[serde(default = "default_category")]
    pub category: usize,
    #[serde(rename = "var")]
    pub variance: [f64; 4],
}

fn default_category() -> usize {
    1
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy suppression. Returns, for each kept detection in score order, the
/// indices of its cluster (itself first, then the detections it suppressed).
fn greedy_clusters(dets: &[Detection], iou_threshold: f64) -> Vec<Vec<usize>> {
    let order = score_order(dets);
    let mut removed = vec![false; dets.len()];
    let mut clusters = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if removed[i] {
            continue;
        }
        removed[i] = true;
        let mut cluster = vec![i];
        for &j in &order[pos + 1..] {
            if !removed[j] && dets[j].category == dets[i].category && dets[i].bbox.iou(&dets[j].bbox) > iou_threshold {
                removed[j] = true;
                cluster.push(j);
            }
        }
        clusters.push(cluster);
    }
    clusters
}

/// Classic per-category greedy NMS.
pub fn standard_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    greedy_clusters(dets, iou_threshold)
        .into_iter()
        .map(|c| dets[c[0]])
        .collect()
}

/// Greedy NMS with variance voting: each kept box takes the inverse-variance
/// weighted mean of itself and the detections it suppresses, per border.
/// Detections scoring below `score_threshold` are dropped first.
pub fn softer_nms(dets: &[Detection], iou_threshold: f64, score_threshold: f64) -> Vec<Detection> {
    let live: Vec<Detection> = dets.iter().filter(|d| d.score >= score_threshold).copied().collect();
    greedy_clusters(&live, iou_threshold)
        .into_iter()
        .map(|cluster| {
            let mut num = [0.0; 4];
            let mut den = [0.0; 4];
            for &j in &cluster {
                let coords = live[j].bbox.to_array();
                for d in 0..4 {
                    let inv = 1.0 / live[j].variance[d].max(VARIANCE_FLOOR);
                    num[d] += coords[d] * inv;
                    den[d] += inv;
                }
            }
            let head = live[cluster[0]];
            let merged = std::array::from_fn(|d| num[d] / den[d]);
            // a convex combination of ordered boxes stays ordered
            let bbox = BoxCorners::from_array_repaired(merged)
                .map(|(b, _)| b)
                .unwrap_or(head.bbox);
            Detection { bbox, ..head }
        })
        .collect()
}
