use std::ffi::CString;

use pyo3::prelude::*;

use emac::emac as emac_module;

/// Runs python/smoke_test.py against the module compiled from this tree.
#[test]
fn python_smoke_script_passes() {
    pyo3::append_to_inittab!(emac_module);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py");
    let source = std::fs::read_to_string(path).expect("smoke script present");
    Python::attach(|py| {
        let code = CString::new(source).unwrap();
        let module = PyModule::from_code(py, &code, c"smoke_test.py", c"smoke_test")
            .unwrap_or_else(|e| panic!("{e}"));
        module
            .getattr("main")
            .and_then(|main| main.call0())
            .unwrap_or_else(|e| {
                e.display(py);
                panic!("smoke test failed: {e}")
            });
    });
}
