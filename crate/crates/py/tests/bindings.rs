use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(&Bound<'_, PyModule>) -> PyResult<()>>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(disco::disco)(py);
        f(m.bind(py)).unwrap();
    });
}

#[test]
fn geometry_and_refinement() {
    with_module(|m| {
        let iou: f64 = m
            .getattr("iou")?
            .call1(([0., 0., 10., 10.], [5., 0., 15., 10.]))?
            .extract()?;
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
        let b = m.getattr("BoxCorners")?.call1((0., 0., 10., 20.))?;
        let cs: [f64; 4] = b.call_method0("to_center_size")?.extract()?;
        assert_eq!(cs, [5., 10., 10., 20.]);
        assert!(m.getattr("BoxCorners")?.call1((5., 0., 1., 10.)).is_err());
        let (refined, phi): ([f64; 4], f64) = m
            .getattr("refine_box")?
            .call1(([0., 0., 10., 10.], 1.0, [0., 0., 20., 10.]))?
            .extract()?;
        assert_eq!(phi, 0.8);
        assert_eq!(refined, [0., 0., 12., 10.]);
        Ok(())
    });
}

#[test]
fn suppression_and_experiment() {
    with_module(|m| {
        let kept: Vec<([f64; 4], f64, [f64; 4])> = m
            .getattr("softer_nms")?
            .call1((
                vec![[0., 0., 20., 10.], [8., 0., 20., 10.]],
                vec![0.9, 0.8],
                vec![[1.; 4], [4., 1., 1., 1.]],
            ))?
            .extract()?;
        assert_eq!(kept.len(), 1);
        assert!((kept[0].0[0] - 1.6).abs() < 1e-12);
        let kwargs = PyDict::new(m.py());
        kwargs.set_item(
            "config_json",
            r#"{"scenes": 2, "estimator": {"steps": 5, "validation_scenes": 1}}"#,
        )?;
        let report: String = m.getattr("run_experiment")?.call((), Some(&kwargs))?.extract()?;
        let v: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert_eq!(v["trials"].as_array().unwrap().len(), 1);
        assert!(m.getattr("run_experiment")?.call1(("{\"passes\": 0}",)).is_err());
        Ok(())
    });
}
