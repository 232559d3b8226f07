//! Analytic stand-in for a detector head.
//!
//! Scenes hold clean objects and their noisy annotations. Proposals are
//! jittered copies of the noisy box, the classifier scores a proposal by a
//! power of its IoU with the clean box plus Gaussian noise, and the regressor
//! moves each proposal a fixed fraction of the way toward the clean box.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distribution::SpatialDistribution;
use crate::error::{invalid, Error, Result};
use crate::geometry::{BoxCenterSize, BoxCorners, BoxDelta};
use crate::noise_sim::{self, NoiseConfig};
use crate::rng::{self, StreamRng};

/// Object size range as a fraction of the image side.
const MIN_OBJECT_FRACTION: f64 = 0.08;
const MAX_OBJECT_FRACTION: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub real: BoxCorners,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    pub num_categories: usize,
    pub objects: Vec<SceneObject>,
    /// Noisy annotation of each object, aligned with `objects`.
    pub noisy: Vec<BoxCorners>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    fn object(&self, index: usize) -> Result<&SceneObject> {
        self.objects
            .get(index)
            .ok_or_else(|| invalid("object index", format!("{index} >= {}", self.objects.len())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateHeadConfig {
    /// Sharpness `k` of the score-vs-IoU curve.
    pub score_exponent: f64,
    /// Standard deviation of the additive score noise.
    pub score_noise: f64,
    /// Fraction of the way each proposal is moved toward the clean box.
    pub regressor_pull: f64,
    /// Score given to foreground categories other than the object's own.
    pub background_floor: f64,
    pub seed: u64,
}

impl Default for SurrogateHeadConfig {
    fn default() -> Self {
        Self {
            score_exponent: 2.0,
            score_noise: 0.05,
            regressor_pull: 0.25,
            background_floor: 0.01,
            seed: 0,
        }
    }
}

impl SurrogateHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.score_exponent > 0.0 && self.score_exponent.is_finite()) {
            return Err(invalid("score_exponent", "must be positive"));
        }
        if !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(invalid("score_noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.regressor_pull) {
            return Err(invalid("regressor_pull", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.background_floor) {
            return Err(invalid("background_floor", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-proposal scores; column 0 is background, columns `1..=L` are categories.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<Vec<f64>>,
    num_categories: usize,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<Vec<f64>>, num_categories: usize) -> Result<Self> {
        for row in &rows {
            if row.len() != num_categories + 1 {
                return Err(Error::LengthMismatch {
                    expected: num_categories + 1,
                    actual: row.len(),
                });
            }
            if row.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(invalid("scores", "entries must lie in [0, 1]"));
            }
        }
        Ok(Self { rows, num_categories })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Scores of foreground category `category` for every proposal.
    pub fn lookup_column(&self, category: usize) -> Result<Vec<f64>> {
        if category == 0 || category > self.num_categories {
            return Err(Error::CategoryOutOfRange {
                category,
                max: self.num_categories,
            });
        }
        Ok(self.rows.iter().map(|r| r[category]).collect())
    }
}

/// Builds a scene whose objects fit inside the image, with noisy
/// annotations drawn from the perturbation model.
pub fn generate_scene(
    num_objects: usize,
    size: (f64, f64),
    num_categories: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Scene> {
    if num_objects == 0 {
        return Err(invalid("num_objects", "must be at least 1"));
    }
    if num_categories == 0 {
        return Err(invalid("num_categories", "must be at least 1"));
    }
    let (width, height) = size;
    if !(width > 0.0 && height > 0.0) {
        return Err(invalid("image size", format!("{width}x{height}")));
    }
    noise.validate()?;
    let mut rng = rng::stream(seed, &[0x5c3e]);
    let mut objects = Vec::with_capacity(num_objects);
    let mut noisy = Vec::with_capacity(num_objects);
    for _ in 0..num_objects {
        let w = width * rng.random_range(MIN_OBJECT_FRACTION..MAX_OBJECT_FRACTION);
        let h = height * rng.random_range(MIN_OBJECT_FRACTION..MAX_OBJECT_FRACTION);
        let cx = rng.random_range(0.5 * w..width - 0.5 * w);
        let cy = rng.random_range(0.5 * h..height - 0.5 * h);
        let real = BoxCenterSize::new(cx, cy, w, h)?.to_corners()?;
        let category = rng.random_range(1..=num_categories);
        let n = noise_sim::perturb_corners(&real, noise, &mut rng)?;
        objects.push(SceneObject { real, category });
        noisy.push(n);
    }
    Ok(Scene {
        width,
        height,
        num_categories,
        objects,
        noisy,
    })
}

/// The noisy box of `object` followed by `count - 1` jittered copies of it.
pub fn generate_proposals(
    scene: &Scene,
    object: usize,
    count: usize,
    jitter: f64,
    rng: &mut StreamRng,
) -> Result<Vec<BoxCorners>> {
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    scene.object(object)?;
    let anchor = scene.noisy[object];
    let cfg = NoiseConfig::new(jitter, 0)?;
    let mut out = Vec::with_capacity(count);
    out.push(anchor);
    for _ in 1..count {
        out.push(noise_sim::perturb_corners(&anchor, &cfg, rng)?);
    }
    Ok(out)
}

/// Score of the object's own category: `clamp(IoU(p, real)^k + η, 0, 1)`.
pub fn true_category_score(p: &BoxCorners, real: &BoxCorners, cfg: &SurrogateHeadConfig, rng: &mut StreamRng) -> f64 {
    let base = p.iou(real).powf(cfg.score_exponent);
    let eta = if cfg.score_noise > 0.0 {
        Normal::new(0.0, cfg.score_noise).expect("validated std").sample(rng)
    } else {
        0.0
    };
    (base + eta).clamp(0.0, 1.0)
}

pub fn score_proposals(
    proposals: &[BoxCorners],
    scene: &Scene,
    object: usize,
    cfg: &SurrogateHeadConfig,
    rng: &mut StreamRng,
) -> Result<ScoreMatrix> {
    cfg.validate()?;
    let obj = scene.object(object)?;
    let rows = proposals
        .iter()
        .map(|p| {
            let s = true_category_score(p, &obj.real, cfg, rng);
            let mut row = vec![cfg.background_floor; scene.num_categories + 1];
            row[0] = 1.0 - s;
            row[obj.category] = s;
            row
        })
        .collect();
    ScoreMatrix::new(rows, scene.num_categories)
}

/// Offsets that move each proposal a fraction `ρ` toward the clean box, and
/// the resulting updated proposals. Interpolating corners is the same map as
/// interpolating centers and sizes.
pub fn regress_proposals(
    proposals: &[BoxCorners],
    scene: &Scene,
    object: usize,
    cfg: &SurrogateHeadConfig,
) -> Result<(Vec<BoxDelta>, Vec<BoxCorners>)> {
    cfg.validate()?;
    let real = scene.object(object)?.real.to_array();
    let rho = cfg.regressor_pull;
    let mut deltas = Vec::with_capacity(proposals.len());
    let mut updated = Vec::with_capacity(proposals.len());
    for p in proposals {
        let pa = p.to_array();
        let target = BoxCorners::from_array(std::array::from_fn(|k| (1.0 - rho) * pa[k] + rho * real[k]))?;
        deltas.push(p.encode_delta(&target)?);
        updated.push(target);
    }
    Ok((deltas, updated))
}

/// Normalizers `(w̄, h̄, w̄, h̄)` taken from the size of the mean box.
pub fn feature_scale(context: &SpatialDistribution) -> Result<[f64; 4]> {
    let (mu, _) = context.mu_box()?;
    if !mu.has_positive_area() {
        return Err(Error::DegenerateBox(format!("mean box {:?}", context.mu)));
    }
    let (w, h) = (mu.width(), mu.height());
    Ok([w, h, w, h])
}

/// `|p - μ|` and `σ`, both divided by the mean box's width/height.
pub fn proposal_features(p: &BoxCorners, context: &SpatialDistribution) -> Result<[f64; 8]> {
    let scale = feature_scale(context)?;
    let pa = p.to_array();
    Ok(std::array::from_fn(|k| {
        if k < 4 {
            (pa[k] - context.mu[k]).abs() / scale[k]
        } else {
            context.sigma[k - 4] / scale[k - 4]
        }
    }))
}

/// One object of a scene dump: the annotation record plus its proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDumpRecord {
    pub image_id: String,
    pub category: usize,
    pub bbox: BoxCorners,
    pub real_bbox: Option<BoxCorners>,
    pub proposals: Vec<BoxCorners>,
}

pub fn dump_scene(image_id: &str, scene: &Scene, proposals: &[Vec<BoxCorners>]) -> Result<Vec<SceneDumpRecord>> {
    if proposals.len() != scene.len() {
        return Err(Error::LengthMismatch {
            expected: scene.len(),
            actual: proposals.len(),
        });
    }
    Ok(scene
        .objects
        .iter()
        .zip(&scene.noisy)
        .zip(proposals)
        .map(|((obj, noisy), props)| SceneDumpRecord {
            image_id: image_id.to_string(),
            category: obj.category,
            bbox: *noisy,
            real_bbox: Some(obj.real),
            proposals: props.clone(),
        })
        .collect())
}
