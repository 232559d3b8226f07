//! Annotation-noise model: each clean box is shifted and rescaled by four
//! independent `U(-n, n)` draws relative to its own width and height.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoxCenterSize, BoxCorners};
use crate::rng;

const NOISE_STREAM: u64 = 0x6e_6f69_7365;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub level: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        let cfg = Self { level, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.level) {
            return Err(invalid("noise level", format!("{} not in [0, 1)", self.level)));
        }
        Ok(())
    }
}

/// One annotated box. `real_bbox` carries the clean box once noise has been
/// simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub category: usize,
    pub bbox: BoxCorners,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_bbox: Option<BoxCorners>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.category == 0 {
            return Err(Error::CategoryOutOfRange {
                category: 0,
                max: usize::MAX,
            });
        }
        if !self.bbox.is_valid() {
            return Err(Error::InvalidBox(format!("{:?}", self.bbox.to_array())));
        }
        Ok(())
    }
}

/// Draws the four relative offsets `(Δx, Δy, Δw, Δh)` from the open interval `(-n, n)`.
pub fn sample_draws<R: Rng + ?Sized>(level: f64, rng: &mut R) -> [f64; 4] {
    if level == 0.0 {
        return [0.0; 4];
    }
    std::array::from_fn(|_| loop {
        let d = rng.random_range(-level..level);
        if d > -level {
            break d;
        }
    })
}

fn check_draw(draw: f64, level: f64) -> Result<()> {
    let ok = if level == 0.0 { draw == 0.0 } else { draw.abs() < level };
    if ok {
        Ok(())
    } else {
        Err(Error::DrawOutOfRange { draw, level })
    }
}

/// Applies one set of draws: `cx + Δx·w, cy + Δy·h, (1 + Δw)·w, (1 + Δh)·h`.
pub fn perturb_box(clean: &BoxCenterSize, cfg: &NoiseConfig, draws: [f64; 4]) -> Result<BoxCenterSize> {
    cfg.validate()?;
    if !clean.is_valid() {
        return Err(Error::InvalidBox(format!("center-size {clean:?}")));
    }
    for d in draws {
        check_draw(d, cfg.level)?;
    }
    let [dx, dy, dw, dh] = draws;
    BoxCenterSize::new(
        clean.cx + dx * clean.w,
        clean.cy + dy * clean.h,
        (1.0 + dw) * clean.w,
        (1.0 + dh) * clean.h,
    )
}

/// Perturbs a corner-form box with fresh draws from `rng`.
pub fn perturb_corners<R: Rng + ?Sized>(clean: &BoxCorners, cfg: &NoiseConfig, rng: &mut R) -> Result<BoxCorners> {
    let draws = sample_draws(cfg.level, rng);
    if draws == [0.0; 4] {
        return Ok(*clean);
    }
    perturb_box(&clean.to_center_size()?, cfg, draws)?.to_corners()
}

/// Perturbs every record with its own stream keyed by `(seed, index)`.
///
/// Records that already carry `real_bbox` keep it; otherwise the clean box is
/// stored there. Output order equals input order.
pub fn perturb_dataset(records: &[AnnotationRecord], cfg: &NoiseConfig) -> Result<Vec<AnnotationRecord>> {
    cfg.validate()?;
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            rec.validate()?;
            let mut rng = rng::stream(cfg.seed, &[NOISE_STREAM, i as u64]);
            let bbox = if cfg.level == 0.0 {
                rec.bbox
            } else {
                perturb_corners(&rec.bbox, cfg, &mut rng)?
            };
            Ok(AnnotationRecord {
                image_id: rec.image_id.clone(),
                category: rec.category,
                bbox,
                real_bbox: Some(rec.real_bbox.unwrap_or(rec.bbox)),
            })
        })
        .collect()
}

pub fn read_annotations(path: &Path) -> anyhow::Result<Vec<AnnotationRecord>> {
    use anyhow::Context;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<AnnotationRecord> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(records)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> anyhow::Result<()> {
    use anyhow::Context;
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, b: [f64; 4]) -> AnnotationRecord {
        AnnotationRecord {
            image_id: id.into(),
            category: 1,
            bbox: BoxCorners::from_array(b).unwrap(),
            real_bbox: None,
        }
    }

    #[test]
    fn zero_draws_leave_box_unchanged() {
        let clean = BoxCenterSize::new(50., 40., 10., 20.).unwrap();
        let cfg = NoiseConfig::new(0.4, 0).unwrap();
        assert_eq!(perturb_box(&clean, &cfg, [0.0; 4]).unwrap(), clean);
    }

    #[test]
    fn shift_by_width_fraction() {
        let clean = BoxCenterSize::new(50., 40., 10., 20.).unwrap();
        let cfg = NoiseConfig::new(0.5, 0).unwrap();
        let out = perturb_box(&clean, &cfg, [0.4, 0., 0., 0.]).unwrap();
        assert!((out.cx - 54.0).abs() < 1e-12);
    }

    #[test]
    fn draws_outside_interval_rejected() {
        let clean = BoxCenterSize::new(50., 40., 10., 20.).unwrap();
        let cfg = NoiseConfig::new(0.4, 0).unwrap();
        assert!(matches!(
            perturb_box(&clean, &cfg, [0.4, 0., 0., 0.]),
            Err(Error::DrawOutOfRange { .. })
        ));
        assert!(perturb_box(&clean, &cfg, [0., 0., -0.5, 0.]).is_err());
        assert!(NoiseConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn sampled_widths_stay_in_bounds() {
        let cfg = NoiseConfig::new(0.4, 3).unwrap();
        let clean = BoxCenterSize::new(0., 0., 10., 10.).unwrap();
        let mut r = rng::stream(3, &[]);
        for _ in 0..10_000 {
            let out = perturb_box(&clean, &cfg, sample_draws(cfg.level, &mut r)).unwrap();
            assert!(out.w > 6.0 && out.w < 14.0);
        }
    }

    #[test]
    fn dataset_zero_noise_is_identity() {
        let mut recs = vec![record("a", [0., 0., 10., 10.]), record("b", [5., 5., 9., 30.])];
        for r in &mut recs {
            r.real_bbox = Some(r.bbox);
        }
        let out = perturb_dataset(&recs, &NoiseConfig::new(0.0, 1).unwrap()).unwrap();
        assert_eq!(out, recs);
    }

    #[test]
    fn dataset_is_deterministic_and_keeps_real_boxes() {
        let recs: Vec<_> = (0..50)
            .map(|i| record(&i.to_string(), [0., 0., 10. + i as f64, 10.]))
            .collect();
        let cfg = NoiseConfig::new(0.3, 11).unwrap();
        let a = perturb_dataset(&recs, &cfg).unwrap();
        let b = perturb_dataset(&recs, &cfg).unwrap();
        assert_eq!(a, b);
        for (o, r) in a.iter().zip(&recs) {
            assert_eq!(o.real_bbox, Some(r.bbox));
            assert_ne!(o.bbox, r.bbox);
        }
    }

    #[test]
    fn annotation_json_format() {
        let text = r#"[{"image_id":"img0","category":2,"bbox":[1,2,3,4],"real_bbox":[0,0,5,5]}]"#;
        let recs: Vec<AnnotationRecord> = serde_json::from_str(text).unwrap();
        assert_eq!(recs[0].bbox.to_array(), [1., 2., 3., 4.]);
        let back = serde_json::to_string(&recs).unwrap();
        assert_eq!(
            back,
            r#"[{"image_id":"img0","category":2,"bbox":[1.0,2.0,3.0,4.0],"real_bbox":[0.0,0.0,5.0,5.0]}]"#
        );
        assert!(
            serde_json::from_str::<Vec<AnnotationRecord>>(r#"[{"image_id":"x","category":1,"bbox":[3,0,1,1]}]"#)
                .is_err()
        );
    }
}
