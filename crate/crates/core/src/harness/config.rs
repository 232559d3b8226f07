use serde::{Deserialize, Serialize};

use crate::calibration::FusionConfig;
use crate::distribution::SigmaSource;
use crate::error::{invalid, Result};
use crate::noise_sim::NoiseConfig;
use crate::surrogate::SurrogateHeadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Extra scenes, disjoint from the training scenes, used for the
    /// validation loss.
    pub validation_scenes: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            steps: 5000,
            validation_scenes: 200,
        }
    }
}

/// Full set of knobs for one simulated experiment. Defaults follow the
/// 40%-noise hyperparameter row and the acceptance surrogate settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub temperature: f64,
    pub num_augmented: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub noise_level: f64,
    pub scenes: usize,
    pub objects_per_scene: usize,
    pub num_categories: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub proposals_per_object: usize,
    pub jitter: f64,
    pub surrogate: SurrogateHeadConfig,
    /// Number of calibration passes per iteration (1, 2 or 3); all but the
    /// last are refinement/reassignment passes.
    pub passes: usize,
    pub assignment_iou: f64,
    /// One trial is run per seed.
    pub seeds: Vec<u64>,
    pub sigma_source: SigmaSource,
    /// Replaces the score-driven fusion weight when set.
    pub fixed_phi: Option<f64>,
    pub estimator: EstimatorConfig,
    pub nms_iou: f64,
    pub nms_score_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            num_augmented: 10,
            alpha: 5.0,
            beta: 0.8,
            gamma: 0.3,
            lambda: 0.1,
            noise_level: 0.4,
            scenes: 1000,
            objects_per_scene: 3,
            num_categories: 3,
            image_width: 512.0,
            image_height: 512.0,
            proposals_per_object: 32,
            jitter: 0.3,
            surrogate: SurrogateHeadConfig::default(),
            passes: 2,
            assignment_iou: 0.5,
            seeds: vec![0],
            sigma_source: SigmaSource::Updated,
            fixed_phi: None,
            estimator: EstimatorConfig::default(),
            nms_iou: 0.5,
            nms_score_threshold: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be positive"));
        }
        self.fusion()?;
        self.noise(0)?;
        self.surrogate.validate()?;
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if !(1..=3).contains(&self.passes) {
            return Err(invalid("passes", format!("{} not in {{1, 2, 3}}", self.passes)));
        }
        if self.objects_per_scene == 0 {
            return Err(invalid("objects_per_scene", "must be at least 1"));
        }
        if self.num_categories == 0 {
            return Err(invalid("num_categories", "must be at least 1"));
        }
        if self.proposals_per_object == 0 {
            return Err(invalid("proposals_per_object", "must be at least 1"));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(invalid("image size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(invalid("jitter", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.assignment_iou) {
            return Err(invalid("assignment_iou", "must lie in [0, 1]"));
        }
        if let Some(p) = self.fixed_phi {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("fixed_phi", "must lie in [0, 1]"));
            }
        }
        if !(self.estimator.learning_rate > 0.0) {
            return Err(invalid("estimator.learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(invalid("nms_iou", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        FusionConfig::new(self.alpha, self.beta)
    }

    pub fn noise(&self, seed: u64) -> Result<NoiseConfig> {
        NoiseConfig::new(self.noise_level, seed)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Sets one field from a sweep key such as `noise` or `passes`.
    pub fn with_override(&self, key: &str, value: &str) -> std::result::Result<Self, ConfigError> {
        let mut cfg = self.clone();
        let num = || -> std::result::Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .map_err(|_| ConfigError::Invalid(format!("`{value}` is not a number for `{key}`")))
        };
        match key {
            "noise" | "noise_level" => cfg.noise_level = num()?,
            "passes" => cfg.passes = num()? as usize,
            "temperature" | "t" => cfg.temperature = num()?,
            "num_augmented" => cfg.num_augmented = num()? as usize,
            "alpha" => cfg.alpha = num()?,
            "beta" => cfg.beta = num()?,
            "gamma" => cfg.gamma = num()?,
            "lambda" => cfg.lambda = num()?,
            "jitter" => cfg.jitter = num()?,
            "scenes" => cfg.scenes = num()? as usize,
            "proposals_per_object" => cfg.proposals_per_object = num()? as usize,
            "score_exponent" => cfg.surrogate.score_exponent = num()?,
            "score_noise" => cfg.surrogate.score_noise = num()?,
            "regressor_pull" => cfg.surrogate.regressor_pull = num()?,
            "fixed_phi" => cfg.fixed_phi = Some(num()?),
            other => return Err(ConfigError::Invalid(format!("unknown sweep key `{other}`"))),
        }
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hyperparameter_row() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.temperature, c.num_augmented, c.alpha, c.beta, c.gamma, c.lambda),
            (0.1, 10, 5.0, 0.8, 0.3, 0.1)
        );
        assert_eq!(c.passes, 2);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"bogus": 1}"#),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(
                r#"{"surrogate": {"score_exponent": 2, "score_noise": 0, "regressor_pull": 0, "background_floor": 0, "seed": 0, "x": 1}}"#
            ),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"passes": 4}"#),
            Err(ConfigError::Invalid(_))
        ));
        let partial = ExperimentConfig::from_json(r#"{"scenes": 3}"#).unwrap();
        assert_eq!(partial.scenes, 3);
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::default();
        assert_eq!(c.with_override("noise", "0.2").unwrap().noise_level, 0.2);
        assert_eq!(c.with_override("passes", "3").unwrap().passes, 3);
        assert!(c.with_override("passes", "5").is_err());
        assert!(c.with_override("nope", "1").is_err());
        assert!(c.with_override("alpha", "abc").is_err());
    }
}
