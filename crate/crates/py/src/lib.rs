//! Python bindings: box geometry, noise simulation, distribution modeling,
//! refinement, suppression and the experiment runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use disco_core::calibration::{self, FusionConfig};
use disco_core::distribution::{self, ProposalGroup, SigmaSource};
use disco_core::estimation::{self, Detection};
use disco_core::geometry::{self, BoxCenterSize, BoxDelta};
use disco_core::harness::{self, ExperimentConfig, GroundTruth};
use disco_core::noise_sim::{self, AnnotationRecord, NoiseConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Axis-aligned box `(x1, y1, x2, y2)`.
#[pyclass(name = "BoxCorners", frozen, eq, skip_from_py_object, module = "disco")]
#[derive(Clone, Copy, PartialEq)]
struct PyBox {
    inner: geometry::BoxCorners,
}

#[pymethods]
impl PyBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        let inner = geometry::BoxCorners::new(x1, y1, x2, y2).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn x1(&self) -> f64 {
        self.inner.x1
    }

    #[getter]
    fn y1(&self) -> f64 {
        self.inner.y1
    }

    #[getter]
    fn x2(&self) -> f64 {
        self.inner.x2
    }

    #[getter]
    fn y2(&self) -> f64 {
        self.inner.y2
    }

    fn to_list(&self) -> [f64; 4] {
        self.inner.to_array()
    }

    fn width(&self) -> f64 {
        self.inner.width()
    }

    fn height(&self) -> f64 {
        self.inner.height()
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn iou(&self, other: &PyBox) -> f64 {
        self.inner.iou(&other.inner)
    }

    /// `(cx, cy, w, h)`.
    fn to_center_size(&self) -> PyResult<[f64; 4]> {
        Ok(self.inner.to_center_size().map_err(value_err)?.to_array())
    }

    fn apply_delta(&self, delta: [f64; 4]) -> PyResult<PyBox> {
        let d = BoxDelta::new(delta[0], delta[1], delta[2], delta[3]);
        Ok(PyBox {
            inner: self.inner.apply_delta(&d).map_err(value_err)?,
        })
    }

    fn encode_delta(&self, target: &PyBox) -> PyResult<[f64; 4]> {
        Ok(self.inner.encode_delta(&target.inner).map_err(value_err)?.to_array())
    }

    /// Clipped box and whether it keeps a positive area.
    fn clip_to_image(&self, width: f64, height: f64) -> PyResult<(PyBox, bool)> {
        let c = self.inner.clip_to_image(width, height).map_err(value_err)?;
        Ok((PyBox { inner: c.bbox }, c.valid))
    }

    fn __repr__(&self) -> String {
        let b = self.inner;
        format!("BoxCorners({}, {}, {}, {})", b.x1, b.y1, b.x2, b.y2)
    }
}

fn corners(a: [f64; 4]) -> PyResult<geometry::BoxCorners> {
    geometry::BoxCorners::from_array(a).map_err(value_err)
}

fn corners_all(v: &[[f64; 4]]) -> PyResult<Vec<geometry::BoxCorners>> {
    v.iter().map(|a| corners(*a)).collect()
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    Ok(geometry::iou(&corners(a)?, &corners(b)?))
}

/// Perturbs a center/size box with explicit draws in `(-level, level)`.
#[pyfunction]
fn perturb_box(clean: [f64; 4], level: f64, draws: [f64; 4]) -> PyResult<[f64; 4]> {
    let cfg = NoiseConfig::new(level, 0).map_err(value_err)?;
    let c = BoxCenterSize::new(clean[0], clean[1], clean[2], clean[3]).map_err(value_err)?;
    Ok(noise_sim::perturb_box(&c, &cfg, draws).map_err(value_err)?.to_array())
}

/// Perturbs an annotation JSON document and returns the noisy document.
#[pyfunction]
fn perturb_annotations(annotations_json: &str, level: f64, seed: u64) -> PyResult<String> {
    let records: Vec<AnnotationRecord> = serde_json::from_str(annotations_json).map_err(value_err)?;
    let cfg = NoiseConfig::new(level, seed).map_err(value_err)?;
    let noisy = noise_sim::perturb_dataset(&records, &cfg).map_err(value_err)?;
    serde_json::to_string(&noisy).map_err(value_err)
}

#[pyfunction]
fn softmax_weights(scores: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    Ok(distribution::softmax_weights(&scores, temperature)
        .map_err(value_err)?
        .as_slice()
        .to_vec())
}

/// `(mu, sigma)` of a proposal group. `updated` defaults to `proposals`; the
/// first proposal is taken as the ground-truth box.
#[pyfunction]
#[pyo3(signature = (proposals, scores, temperature=0.1, updated=None, sigma_source="updated"))]
fn model_distribution(
    proposals: Vec<[f64; 4]>,
    scores: Vec<f64>,
    temperature: f64,
    updated: Option<Vec<[f64; 4]>>,
    sigma_source: &str,
) -> PyResult<([f64; 4], [f64; 4])> {
    let source = match sigma_source {
        "updated" => SigmaSource::Updated,
        "original" => SigmaSource::Original,
        other => return Err(value_err(format!("unknown sigma source {other:?}"))),
    };
    let props = corners_all(&proposals)?;
    let upd = match updated {
        Some(u) => corners_all(&u)?,
        None => props.clone(),
    };
    let group = ProposalGroup::new(props, upd, scores, 1, 0).map_err(value_err)?;
    let d = distribution::model_distribution_with(&group, temperature, source).map_err(value_err)?;
    Ok((d.mu, d.sigma))
}

#[pyfunction]
#[pyo3(signature = (s, alpha=5.0, beta=0.8))]
fn phi(s: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    Ok(calibration::phi(s, &FusionConfig::new(alpha, beta).map_err(value_err)?))
}

/// Fuses the distribution mean with the noisy box; returns `(box, phi)`.
#[pyfunction]
#[pyo3(signature = (mu, s_mu, noisy, alpha=5.0, beta=0.8))]
fn refine_box(mu: [f64; 4], s_mu: f64, noisy: [f64; 4], alpha: f64, beta: f64) -> PyResult<([f64; 4], f64)> {
    let cfg = FusionConfig::new(alpha, beta).map_err(value_err)?;
    let r = calibration::refine_box(&mu, s_mu, &corners(noisy)?, &cfg).map_err(value_err)?;
    Ok((r.bbox.to_array(), r.phi))
}

type DetectionTuple = ([f64; 4], f64, [f64; 4]);

fn detections(boxes: &[[f64; 4]], scores: &[f64], variances: &[[f64; 4]]) -> PyResult<Vec<Detection>> {
    if boxes.len() != scores.len() || boxes.len() != variances.len() {
        return Err(value_err("boxes, scores and variances must have equal lengths"));
    }
    boxes
        .iter()
        .zip(scores)
        .zip(variances)
        .map(|((b, &score), &variance)| {
            Ok(Detection {
                bbox: corners(*b)?,
                score,
                category: 1,
                variance,
            })
        })
        .collect()
}

fn tuples(dets: Vec<Detection>) -> Vec<DetectionTuple> {
    dets.into_iter()
        .map(|d| (d.bbox.to_array(), d.score, d.variance))
        .collect()
}

/// Greedy NMS; returns the kept `(box, score, variance)` triples.
#[pyfunction]
#[pyo3(signature = (boxes, scores, variances, iou_threshold=0.5))]
fn standard_nms(
    boxes: Vec<[f64; 4]>,
    scores: Vec<f64>,
    variances: Vec<[f64; 4]>,
    iou_threshold: f64,
) -> PyResult<Vec<DetectionTuple>> {
    let dets = detections(&boxes, &scores, &variances)?;
    Ok(tuples(estimation::standard_nms(&dets, iou_threshold)))
}

/// NMS with inverse-variance voting over each suppressed cluster.
#[pyfunction]
#[pyo3(signature = (boxes, scores, variances, iou_threshold=0.5, score_threshold=0.0))]
fn softer_nms(
    boxes: Vec<[f64; 4]>,
    scores: Vec<f64>,
    variances: Vec<[f64; 4]>,
    iou_threshold: f64,
    score_threshold: f64,
) -> PyResult<Vec<DetectionTuple>> {
    let dets = detections(&boxes, &scores, &variances)?;
    Ok(tuples(estimation::softer_nms(&dets, iou_threshold, score_threshold)))
}

type ImageInput = (Vec<([f64; 4], f64)>, Vec<[f64; 4]>);

/// AP at IoU 0.5 for a single category. Each image is a pair of
/// `(detections as (box, score), ground-truth boxes)`.
#[pyfunction]
fn evaluate_ap50(images: Vec<ImageInput>) -> PyResult<Option<f64>> {
    let mut dets = Vec::with_capacity(images.len());
    let mut gts = Vec::with_capacity(images.len());
    for (d, g) in &images {
        dets.push(
            d.iter()
                .map(|(b, s)| {
                    Ok(Detection {
                        bbox: corners(*b)?,
                        score: *s,
                        category: 1,
                        variance: [1.0; 4],
                    })
                })
                .collect::<PyResult<Vec<_>>>()?,
        );
        gts.push(
            g.iter()
                .map(|b| {
                    Ok(GroundTruth {
                        bbox: corners(*b)?,
                        category: 1,
                    })
                })
                .collect::<PyResult<Vec<_>>>()?,
        );
    }
    Ok(harness::evaluate_ap50(&dets, &gts))
}

/// Runs an experiment from a JSON config and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json="{}"))]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    let report = py.detach(|| harness::run_experiment(&cfg)).map_err(value_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

#[pymodule]
pub fn disco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_box, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_weights, m)?)?;
    m.add_function(wrap_pyfunction!(model_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(refine_box, m)?)?;
    m.add_function(wrap_pyfunction!(standard_nms, m)?)?;
    m.add_function(wrap_pyfunction!(softer_nms, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_ap50, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
