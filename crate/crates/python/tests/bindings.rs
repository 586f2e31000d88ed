use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::ffi::CString;

fn run(code: &str) -> PyResult<()> {
    Python::attach(|py| {
        let module = PyModule::new(py, "pysasaki")?;
        pysasaki::pysasaki(&module)?;
        let globals = PyDict::new(py);
        globals.set_item("ps", module)?;
        py.run(&CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn canonical_model_round_trip() {
    run(r#"
import math
m = ps.Model(12)
assert abs(m.volume - 2 * math.pi ** 2) < 1e-10
s = m.state()
assert s.residual(0.3, "s1") < 1e-12
assert abs(s.spectrum(4)[1] - 4.0) < 1e-8
"#)
    .unwrap();
}

#[test]
fn solve_returns_family() {
    run(r#"
m = ps.Model(12, "even", [(2, 0, 0.05)])
f = ps.solve(m, dt=0.25)
assert f.reached_target
assert len(f.potentials()) == len(f.t_values) == 5
"#)
    .unwrap();
}

#[test]
fn bad_inputs_raise() {
    let err = run("ps.Model(12, 'sideways')").unwrap_err();
    Python::attach(|py| assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py)));
    assert!(run("ps.Model(12).state().residual(0.5, 's3')").is_err());
}
