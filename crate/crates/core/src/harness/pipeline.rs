//! One training iteration over a scene: refinement passes that reassign
//! proposals to refined boxes, followed by a supervision pass that augments,
//! refines and forms every loss term.

use serde::{Deserialize, Serialize};

use super::ap::GroundTruth;
use super::assign::{assign_proposals, Assignment};
use super::config::ExperimentConfig;
use super::loss::{cls_loss, total_loss};
use crate::calibration::{self, AugmentationConfig, RefinedGroundTruth};
use crate::distribution::{model_distribution_with, ProposalGroup, SpatialDistribution};
use crate::error::Result;
use crate::estimation::{est_loss, Detection, EstimatorGroup, LinearEstimator, FEATURES};
use crate::geometry::BoxCorners;
use crate::rng;
use crate::surrogate::{self, Scene};

const SCENE_STREAM: u64 = 1;
const PROPOSAL_STREAM: u64 = 2;
const SCORE_STREAM: u64 = 3;
const AUG_STREAM: u64 = 4;

/// Counters for repairs and skipped work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean boxes whose corners had to be swapped.
    pub mu_repairs: usize,
    /// Augmented samples whose corners had to be swapped.
    pub aug_repairs: usize,
    /// Fused boxes whose corners had to be swapped.
    pub fusion_repairs: usize,
    /// Zero-size proposals left out of the regression loss.
    pub reg_skipped: usize,
    /// Objects whose mean box degenerated; their annotation is kept as is.
    pub skipped_objects: usize,
}

impl Diagnostics {
    pub fn absorb(&mut self, other: &Diagnostics) {
        self.mu_repairs += other.mu_repairs;
        self.aug_repairs += other.aug_repairs;
        self.fusion_repairs += other.fusion_repairs;
        self.reg_skipped += other.reg_skipped;
        self.skipped_objects += other.skipped_objects;
    }
}

/// A regressed proposal from the supervision pass, kept for inference-time
/// suppression once the estimator is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCandidate {
    pub bbox: BoxCorners,
    pub score: f64,
    pub category: usize,
    pub features: [f64; FEATURES],
    pub scale: [f64; 4],
}

impl DetectionCandidate {
    pub fn to_detection(&self, estimator: &LinearEstimator) -> Detection {
        Detection {
            bbox: self.bbox,
            score: self.score,
            category: self.category,
            variance: estimator.predict(&self.features, &self.scale).variance,
        }
    }
}

/// Loss terms of one batch (one scene).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_est: f64,
    pub l_aug: f64,
    pub l_all: f64,
}

/// Everything one scene contributes to a trial report.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutcome {
    pub iou_noisy: Vec<f64>,
    /// IoU of the first pass's refined box with the clean box, per object.
    pub iou_pass1: Vec<f64>,
    /// IoU of the supervision pass's refined box with the clean box, per object.
    pub iou_final: Vec<f64>,
    /// Refined boxes of every pass.
    pub refined: Vec<Vec<BoxCorners>>,
    /// Assignment used by every pass.
    pub assignments: Vec<Assignment>,
    pub losses: LossTerms,
    pub est_groups: Vec<EstimatorGroup>,
    pub candidates: Vec<DetectionCandidate>,
    pub ground_truths: Vec<GroundTruth>,
    pub proposals: Vec<Vec<BoxCorners>>,
    pub diagnostics: Diagnostics,
}

/// Seed of scene `index` in the trial keyed by `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    rng::derive_seed(seed, &[SCENE_STREAM, index])
}

pub fn generate_trial_scene(cfg: &ExperimentConfig, seed: u64) -> Result<Scene> {
    surrogate::generate_scene(
        cfg.objects_per_scene,
        (cfg.image_width, cfg.image_height),
        cfg.num_categories,
        &cfg.noise(seed)?,
        seed,
    )
}

struct PassOutput {
    refined: Vec<BoxCorners>,
    plain: Vec<ProposalGroup>,
    merged: Vec<ProposalGroup>,
    reg: Vec<f64>,
    est: Vec<f64>,
    est_groups: Vec<EstimatorGroup>,
    candidates: Vec<DetectionCandidate>,
}

fn run_pass(
    scene: &Scene,
    assignment: &Assignment,
    flat: &[BoxCorners],
    gts: &[BoxCorners],
    cfg: &ExperimentConfig,
    estimator: &LinearEstimator,
    seed: u64,
    round: u64,
    supervise: bool,
    diag: &mut Diagnostics,
) -> Result<PassOutput> {
    let fusion = cfg.fusion()?;
    let head = &cfg.surrogate;
    let mut out = PassOutput {
        refined: Vec::with_capacity(scene.len()),
        plain: Vec::new(),
        merged: Vec::new(),
        reg: Vec::new(),
        est: Vec::new(),
        est_groups: Vec::new(),
        candidates: Vec::new(),
    };
    for (o, obj) in scene.objects.iter().enumerate() {
        let noisy = scene.noisy[o];
        let mut score_rng = rng::stream(seed, &[SCORE_STREAM, round, o as u64]);
        let boxes = assignment.group_boxes(o, flat, gts);
        let (_, updated) = surrogate::regress_proposals(&boxes, scene, o, head)?;
        let scores =
            surrogate::score_proposals(&updated, scene, o, head, &mut score_rng)?.lookup_column(obj.category)?;
        let group = ProposalGroup::new(boxes, updated, scores, obj.category, 0)?;
        let mut dist = model_distribution_with(&group, cfg.temperature, cfg.sigma_source)?;

        let mut merged = None;
        if supervise {
            let mut aug_rng = rng::stream(seed, &[AUG_STREAM, round, o as u64]);
            let aug = calibration::augment_proposals(
                &dist,
                &AugmentationConfig {
                    count: cfg.num_augmented,
                },
                &mut aug_rng,
            )?;
            diag.aug_repairs += aug.repaired;
            let aug_scores =
                surrogate::score_proposals(&aug.boxes, scene, o, head, &mut score_rng)?.lookup_column(obj.category)?;
            let m = calibration::merge_augmented(&group, &aug.boxes, &aug_scores)?;
            dist = model_distribution_with(&m, cfg.temperature, cfg.sigma_source)?;
            merged = Some(m);
        }

        let (mu_box, repaired) = dist.mu_box()?;
        diag.mu_repairs += usize::from(repaired);
        if !mu_box.has_positive_area() {
            diag.skipped_objects += 1;
            out.refined.push(noisy);
            continue;
        }
        let dist = SpatialDistribution {
            mu: mu_box.to_array(),
            ..dist
        };
        let s_mu =
            surrogate::score_proposals(&[mu_box], scene, o, head, &mut score_rng)?.lookup_column(obj.category)?[0];
        let refined = match cfg.fixed_phi {
            Some(weight) => {
                let (bbox, repaired) = calibration::fuse(&dist.mu, &noisy, weight)?;
                RefinedGroundTruth {
                    bbox,
                    phi: weight,
                    source_score: s_mu,
                    repaired,
                }
            }
            None => calibration::refine_box(&dist.mu, s_mu, &noisy, &fusion)?,
        };
        diag.fusion_repairs += usize::from(refined.repaired);
        out.refined.push(refined.bbox);

        if supervise {
            let reg = calibration::reg_loss(&group, &refined)?;
            diag.reg_skipped += reg.skipped;
            out.reg.push(reg.value);

            let scale = surrogate::feature_scale(&dist)?;
            let features = group
                .proposals
                .iter()
                .map(|p| surrogate::proposal_features(p, &dist))
                .collect::<Result<Vec<_>>>()?;
            let eg = EstimatorGroup {
                features,
                scale,
                target: dist.variance(),
            };
            out.est.push(est_loss(&estimator.predict_group(&eg), &dist.sigma));
            for (j, p) in group.updated.iter().enumerate() {
                out.candidates.push(DetectionCandidate {
                    bbox: *p,
                    score: group.scores[j],
                    category: obj.category,
                    features: eg.features[j],
                    scale,
                });
            }
            out.est_groups.push(eg);
            out.plain.push(group);
            out.merged.extend(merged);
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs all calibration passes for one scene.
///
/// Every pass regresses and scores the proposals assigned to the current
/// ground truths, models their distribution and fuses its mean with the
/// noisy annotation. The refined boxes of one pass become the assignment
/// targets of the next. Only the last pass augments the groups and forms
/// the loss terms.
pub fn run_disco_iteration(
    scene: &Scene,
    cfg: &ExperimentConfig,
    estimator: &LinearEstimator,
    seed: u64,
) -> Result<SceneOutcome> {
    cfg.validate()?;
    let proposals = (0..scene.len())
        .map(|o| {
            let mut r = rng::stream(seed, &[PROPOSAL_STREAM, o as u64]);
            surrogate::generate_proposals(scene, o, cfg.proposals_per_object, cfg.jitter, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<BoxCorners> = proposals.iter().flatten().copied().collect();

    let mut diag = Diagnostics::default();
    let mut gts = scene.noisy.clone();
    let mut refined = Vec::with_capacity(cfg.passes);
    let mut assignments = Vec::with_capacity(cfg.passes);
    let mut last = None;
    for round in 1..=cfg.passes {
        let supervise = round == cfg.passes;
        let assignment = assign_proposals(&flat, &gts, cfg.assignment_iou);
        let out = run_pass(
            scene,
            &assignment,
            &flat,
            &gts,
            cfg,
            estimator,
            seed,
            round as u64,
            supervise,
            &mut diag,
        )?;
        gts = out.refined.clone();
        refined.push(out.refined.clone());
        assignments.push(assignment);
        last = Some(out);
    }
    let out = last.expect("at least one pass");

    let ious =
        |boxes: &[BoxCorners]| -> Vec<f64> { boxes.iter().zip(&scene.objects).map(|(b, o)| b.iou(&o.real)).collect() };
    let l_cls = cls_loss(&out.plain);
    let l_reg = mean(&out.reg);
    let l_est = mean(&out.est);
    let l_aug = calibration::aug_loss(&out.merged)?;
    Ok(SceneOutcome {
        iou_noisy: ious(&scene.noisy),
        iou_pass1: ious(&refined[0]),
        iou_final: ious(refined.last().expect("at least one pass")),
        refined,
        assignments,
        losses: LossTerms {
            l_cls,
            l_reg,
            l_est,
            l_aug,
            l_all: total_loss(l_cls, l_reg, l_est, l_aug, cfg.gamma, cfg.lambda),
        },
        est_groups: out.est_groups,
        candidates: out.candidates,
        ground_truths: scene
            .objects
            .iter()
            .map(|o| GroundTruth {
                bbox: o.real,
                category: o.category,
            })
            .collect(),
        proposals,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cfg: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig { scenes: 4, ..cfg }
    }

    #[test]
    fn clean_scene_refines_to_itself() {
        let mut cfg = small(ExperimentConfig::default());
        cfg.noise_level = 0.0;
        cfg.jitter = 0.0;
        cfg.surrogate.score_noise = 0.0;
        cfg.surrogate.regressor_pull = 0.0;
        let seed = scene_seed(0, 0);
        let scene = generate_trial_scene(&cfg, seed).unwrap();
        let out = run_disco_iteration(&scene, &cfg, &LinearEstimator::zeros(0.1), seed).unwrap();
        assert!(out.iou_pass1.iter().all(|v| *v == 1.0));
        assert!(out.iou_final.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn iteration_is_deterministic() {
        let cfg = small(ExperimentConfig::default());
        let seed = scene_seed(3, 1);
        let scene = generate_trial_scene(&cfg, seed).unwrap();
        let est = LinearEstimator::zeros(0.1);
        let a = run_disco_iteration(&scene, &cfg, &est, seed).unwrap();
        let b = run_disco_iteration(&scene, &cfg, &est, seed).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.refined.len(), 2);
        assert_eq!(a.est_groups.len(), scene.len());
    }

    #[test]
    fn zero_fusion_is_a_no_op() {
        let mut cfg = small(ExperimentConfig::default());
        cfg.fixed_phi = Some(0.0);
        cfg.passes = 3;
        for i in 0..5 {
            let seed = scene_seed(9, i);
            let scene = generate_trial_scene(&cfg, seed).unwrap();
            let out = run_disco_iteration(&scene, &cfg, &LinearEstimator::zeros(0.1), seed).unwrap();
            for pass in &out.refined {
                assert_eq!(pass, &scene.noisy);
            }
            assert_eq!(out.assignments[0], out.assignments[1]);
            assert_eq!(out.assignments[1], out.assignments[2]);
            assert_eq!(out.iou_final, out.iou_noisy);
        }
    }

    #[test]
    fn single_pass_has_one_round() {
        let mut cfg = small(ExperimentConfig::default());
        cfg.passes = 1;
        let seed = scene_seed(1, 0);
        let scene = generate_trial_scene(&cfg, seed).unwrap();
        let out = run_disco_iteration(&scene, &cfg, &LinearEstimator::zeros(0.1), seed).unwrap();
        assert_eq!(out.refined.len(), 1);
        assert_eq!(out.iou_pass1, out.iou_final);
        assert!(out.losses.l_aug >= 0.0 && out.losses.l_cls >= 0.0);
    }

    #[test]
    fn no_augmentation_when_count_is_zero() {
        let mut cfg = small(ExperimentConfig::default());
        cfg.num_augmented = 0;
        let seed = scene_seed(2, 0);
        let scene = generate_trial_scene(&cfg, seed).unwrap();
        let out = run_disco_iteration(&scene, &cfg, &LinearEstimator::zeros(0.1), seed).unwrap();
        let n: usize = out.est_groups.iter().map(|g| g.features.len()).sum();
        assert_eq!(out.candidates.len(), n);
    }
}
