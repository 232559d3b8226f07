//! Distribution-aware augmentation and box refinement.
//!
//! Augmentation samples extra proposals from a group's modeled Gaussian and
//! scores the group by its best proposal. Refinement fuses the noisy box
//! with the distribution mean, weighted by a capped power of the mean's
//! classification score.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::{ProposalGroup, SpatialDistribution};
use crate::error::{invalid, Error, Result};
use crate::geometry::BoxCorners;

/// Floor applied to scores inside logarithms.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Number of sampled proposals per group.
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl FusionConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("{} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("{} not in (0, 1]", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedGroundTruth {
    pub bbox: BoxCorners,
    /// Fusion weight given to the distribution mean.
    pub phi: f64,
    /// Classification score of the mean box.
    pub source_score: f64,
    /// Whether the fused corners had to be swapped back into order.
    pub repaired: bool,
}

/// Sampled proposals and how many of them needed a corner swap.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub boxes: Vec<BoxCorners>,
    pub repaired: usize,
}

/// `μ + g ⊙ σ` for each row `g` of `draws`.
pub fn augment_with_draws(dist: &SpatialDistribution, draws: &[[f64; 4]]) -> Result<Augmented> {
    let mut repaired = 0;
    let boxes = draws
        .iter()
        .map(|g| {
            let coords = std::array::from_fn(|k| dist.mu[k] + g[k] * dist.sigma[k]);
            let (b, swapped) = BoxCorners::from_array_repaired(coords)?;
            repaired += usize::from(swapped);
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Augmented { boxes, repaired })
}

/// Samples `cfg.count` proposals with fresh standard-normal draws.
pub fn augment_proposals<R: Rng + ?Sized>(
    dist: &SpatialDistribution,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Augmented> {
    let draws: Vec<[f64; 4]> = (0..cfg.count)
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect();
    augment_with_draws(dist, &draws)
}

/// Appends augmented proposals and their scores to a group. Sampled boxes
/// stand in as both the original and the updated proposal.
pub fn merge_augmented(group: &ProposalGroup, boxes: &[BoxCorners], scores: &[f64]) -> Result<ProposalGroup> {
    group.validate()?;
    if boxes.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: boxes.len(),
            actual: scores.len(),
        });
    }
    let mut merged = group.clone();
    merged.proposals.extend_from_slice(boxes);
    merged.updated.extend_from_slice(boxes);
    merged.scores.extend_from_slice(scores);
    Ok(merged)
}

/// Mean over groups of `-ln(max score)`.
pub fn aug_loss(groups: &[ProposalGroup]) -> Result<f64> {
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in groups {
        if g.is_empty() {
            return Err(Error::Empty("proposal group"));
        }
        total -= g.max_score().max(SCORE_FLOOR).ln();
    }
    Ok(total / groups.len() as f64)
}

/// `min(s^α, β)`; `s` is clamped into `[0, 1]` first.
pub fn phi(s: f64, cfg: &FusionConfig) -> f64 {
    s.clamp(0.0, 1.0).powf(cfg.alpha).min(cfg.beta)
}

/// `φ·μ + (1 − φ)·B` with an explicit fusion weight, evaluated as
/// `B + φ·(μ − B)` so that `φ = 0` and `μ = B` return `B` bit-exact.
pub fn fuse(mu: &[f64; 4], noisy: &BoxCorners, weight: f64) -> Result<(BoxCorners, bool)> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(invalid("fusion weight", format!("{weight} not in [0, 1]")));
    }
    let b = noisy.to_array();
    BoxCorners::from_array_repaired(std::array::from_fn(|k| b[k] + weight * (mu[k] - b[k])))
}

pub fn refine_box(mu: &[f64; 4], s_mu: f64, noisy: &BoxCorners, cfg: &FusionConfig) -> Result<RefinedGroundTruth> {
    cfg.validate()?;
    let weight = phi(s_mu, cfg);
    let (bbox, repaired) = fuse(mu, noisy, weight)?;
    Ok(RefinedGroundTruth {
        bbox,
        phi: weight,
        source_score: s_mu,
        repaired,
    })
}

/// Smooth-L1 with unit transition point, summed over the four offsets.
pub fn smooth_l1(delta: &[f64; 4]) -> f64 {
    delta
        .iter()
        .map(|x| {
            let a = x.abs();
            if a < 1.0 {
                0.5 * a * a
            } else {
                a - 0.5
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegLoss {
    pub value: f64,
    /// Proposals without positive width and height, left out of the mean.
    pub skipped: usize,
}

/// Mean smooth-L1 distance between each original proposal and the refined box,
/// measured in anchor-relative offsets.
pub fn reg_loss(group: &ProposalGroup, refined: &RefinedGroundTruth) -> Result<RegLoss> {
    group.validate()?;
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for p in &group.proposals {
        if !p.has_positive_area() {
            skipped += 1;
            continue;
        }
        total += smooth_l1(&p.encode_delta(&refined.bbox)?.to_array());
        counted += 1;
    }
    let value = if counted == 0 { 0.0 } else { total / counted as f64 };
    Ok(RegLoss { value, skipped })
}
