use pyo3::ffi::c_str;
use pyo3::prelude::*;

use stochgradadam_py::stochgradadam_py;

#[test]
fn module_works_inside_an_embedded_interpreter() {
    pyo3::append_to_inittab!(stochgradadam_py);
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import stochgradadam_py as sga
rng = sga.RngStream(42)
assert rng.next_u64() == 0xBDD732262FEB6E95
assert sga.gen_mask(sga.RngStream(42), [8], 0.5) == [0, 1, 1, 1, 1, 0, 1, 0]
opt = sga.Optimizer("stochgradadam", [2], s=0.0)
assert opt.step([[1.0, 2.0]], [[0.5, -0.5]], rng) == [[1.0, 2.0]]
try:
    sga.Optimizer("nadam", [1])
    raise AssertionError("unknown optimizer accepted")
except ValueError:
    pass
assert abs(sga.entropy([0.5, 0.5]) - 0.6931471805599453) < 1e-15
"#
            ),
            None,
            None,
        )
        .map_err(|e| e.print(py))
        .unwrap();
    });
}
