//! Spatial distribution modeling over a proposal group.
//!
//! The true-category scores of a group are turned into temperature-softmax
//! weights, and the group is summarized by a weighted diagonal Gaussian over
//! the four corner coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BoxCorners;

/// Proposals assigned to one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGroup {
    /// Proposals before regression.
    pub proposals: Vec<BoxCorners>,
    /// Proposals after applying the regressor offsets.
    pub updated: Vec<BoxCorners>,
    /// True-category score of each updated proposal.
    pub scores: Vec<f64>,
    pub category: usize,
    /// Position of the ground-truth box inside `proposals`.
    pub gt_index: usize,
}

impl ProposalGroup {
    pub fn new(
        proposals: Vec<BoxCorners>,
        updated: Vec<BoxCorners>,
        scores: Vec<f64>,
        category: usize,
        gt_index: usize,
    ) -> Result<Self> {
        let g = Self {
            proposals,
            updated,
            scores,
            category,
            gt_index,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.proposals.is_empty() {
            return Err(Error::Empty("proposal group"));
        }
        for len in [self.updated.len(), self.scores.len()] {
            if len != self.proposals.len() {
                return Err(Error::LengthMismatch {
                    expected: self.proposals.len(),
                    actual: len,
                });
            }
        }
        if self.gt_index >= self.proposals.len() {
            return Err(invalid(
                "gt_index",
                format!("{} >= {}", self.gt_index, self.proposals.len()),
            ));
        }
        if self.category == 0 {
            return Err(Error::CategoryOutOfRange {
                category: 0,
                max: usize::MAX,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn ground_truth(&self) -> BoxCorners {
        self.proposals[self.gt_index]
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Which proposal set the spread is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    /// Regressed proposals, the same set the mean is taken over.
    #[default]
    Updated,
    /// Proposals before regression.
    Original,
}

/// Normalized non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps weights that are already non-negative and sum to one.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Empty("weights"));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("weights", "entries must be finite and non-negative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("weights", format!("sum {total} != 1")));
        }
        Ok(Self(w))
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(invalid("index", format!("{index} >= {len}")));
        }
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        Ok(Self(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Diagonal 4-D Gaussian over `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDistribution {
    pub mu: [f64; 4],
    pub sigma: [f64; 4],
}

impl SpatialDistribution {
    /// The mean as a box; inverted corners are swapped back into order and
    /// reported through the flag.
    pub fn mu_box(&self) -> Result<(BoxCorners, bool)> {
        BoxCorners::from_array_repaired(self.mu)
    }

    pub fn variance(&self) -> [f64; 4] {
        self.sigma.map(|s| s * s)
    }
}

/// `w_j = exp(s_j / T) / Σ_k exp(s_k / T)`, evaluated with max subtraction.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Result<WeightVector> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid("temperature", format!("{temperature} must be positive")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(WeightVector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn weighted_mean(boxes: &[BoxCorners], w: &WeightVector) -> Result<[f64; 4]> {
    if boxes.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: boxes.len(),
        });
    }
    let Some(anchor) = boxes.first().map(|b| b.to_array()) else {
        return Err(Error::Empty("boxes"));
    };
    // Accumulating offsets from the first box keeps identical inputs exact.
    let mut offset = [0.0; 4];
    for (b, &wj) in boxes.iter().zip(w.as_slice()) {
        for ((o, x), a) in offset.iter_mut().zip(b.to_array()).zip(anchor) {
            *o += wj * (x - a);
        }
    }
    Ok(std::array::from_fn(|d| anchor[d] + offset[d]))
}

/// Per-coordinate `sqrt(Σ_j w_j (b_jd - μ_d)²)`.
pub fn weighted_std(boxes: &[BoxCorners], mu: &[f64; 4], w: &WeightVector) -> Result<[f64; 4]> {
    if boxes.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: boxes.len(),
        });
    }
    let mut var = [0.0; 4];
    for (b, &wj) in boxes.iter().zip(w.as_slice()) {
        for ((v, x), m) in var.iter_mut().zip(b.to_array()).zip(mu) {
            *v += wj * (x - m) * (x - m);
        }
    }
    Ok(var.map(f64::sqrt))
}

pub fn model_distribution(group: &ProposalGroup, temperature: f64) -> Result<SpatialDistribution> {
    model_distribution_with(group, temperature, SigmaSource::Updated)
}

pub fn model_distribution_with(
    group: &ProposalGroup,
    temperature: f64,
    sigma_source: SigmaSource,
) -> Result<SpatialDistribution> {
    group.validate()?;
    let w = softmax_weights(&group.scores, temperature)?;
    let mu = weighted_mean(&group.updated, &w)?;
    let spread_over = match sigma_source {
        SigmaSource::Updated => &group.updated,
        SigmaSource::Original => &group.proposals,
    };
    let sigma = weighted_std(spread_over, &mu, &w)?;
    Ok(SpatialDistribution { mu, sigma })
}
