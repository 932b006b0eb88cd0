use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(fleetwatch);
        Python::initialize();
    });
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals
            .set_item("fw", py.import("fleetwatch").unwrap())
            .unwrap();
        f(py, &globals)
    })
}

fn eval<'py>(py: Python<'py>, globals: &Bound<'py, PyDict>, code: &str) -> Bound<'py, PyAny> {
    let code = std::ffi::CString::new(code).unwrap();
    py.eval(&code, Some(globals), None).unwrap()
}

use fleetwatch::fleetwatch;

#[test]
fn put_lines_round_trip_through_python() {
    with_module(|py, g| {
        let line: String = eval(py, g, "fw.encode_put('m', 3600, 0.5, [('k', 'v')])")
            .extract()
            .unwrap();
        assert_eq!(line, "put m 3600 0.5 k=v");
        let same: bool = eval(
            py,
            g,
            &format!("fw.parse_put({line:?}) == ('m', 3600, 0.5, [('k', 'v')])"),
        )
        .extract()
        .unwrap();
        assert!(same);
    });
}

#[test]
fn detector_labels_a_drop_as_anomaly() {
    with_module(|py, g| {
        let label: String = eval(
            py,
            g,
            "fw.Detector([float(i % 5) for i in range(200)]).step(-100.0)[0]",
        )
        .extract()
        .unwrap();
        assert_eq!(label, "anomaly");
    });
}

#[test]
fn bad_config_raises_value_error() {
    with_module(|py, g| {
        let code = std::ffi::CString::new("fw.PipelineConfig(alpha=2.0)").unwrap();
        let err = py.eval(&code, Some(g), None).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
