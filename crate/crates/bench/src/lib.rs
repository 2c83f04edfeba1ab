//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use distspec_core::linalg::{eye, from_real_rows, real_diag};
use distspec_core::{BoundaryConditions, MatrixMeasure, SpectralProblem, SystemSpec};

fn dirichlet() -> BoundaryConditions {
    BoundaryConditions::new(
        from_real_rows(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        from_real_rows(2, 2, &[0.0, 0.0, 1.0, 0.0]),
    )
    .expect("boundary conditions")
}

/// `w = I` on `[0, π]`, optional `q` point mass `diag(alpha, 0)` at `π/2`.
pub fn free_problem(alpha: Option<f64>) -> SpectralProblem {
    let q = match alpha {
        Some(a) => MatrixMeasure::point_mass(PI / 2.0, real_diag(&[a, 0.0])),
        None => MatrixMeasure::zero(2),
    };
    let sys = SystemSpec::new(
        from_real_rows(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        q,
        MatrixMeasure::lebesgue(0.0, PI, eye(2)),
        0.0,
        PI,
    )
    .expect("system")
    .with_anchors(vec![0.0]);
    SpectralProblem::new(sys, dirichlet()).expect("problem")
}
