//! End-to-end checks on small problems with independently computed answers.

use std::f64::consts::PI;

use distspec_core::fatou::{fatou_convergence_scan, ScalarFn, ScalarMeasureModel};
use distspec_core::linalg::{c, eye, frob, from_real_rows, real_diag};
use distspec_core::spectral::{
    atom_weight, eigen_scan, spectral_measure_model, ModelOptions, ScanOptions, DEFAULT_EPS,
};
use distspec_core::transform::{forward, tau_norm, AtomBasis};
use distspec_core::weyl::m_matrix;
use distspec_core::{BoundaryConditions, MatrixMeasure, PiecewiseFn, SpectralProblem, SystemSpec, Vect};

fn jstd() -> distspec_core::Mat {
    from_real_rows(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

fn dirichlet() -> BoundaryConditions {
    BoundaryConditions::new(
        from_real_rows(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        from_real_rows(2, 2, &[0.0, 0.0, 1.0, 0.0]),
    )
    .unwrap()
}

/// `-u'' = λ(1 + δ_{0.3})u` on `[0, 1]`, Dirichlet ends.
fn string() -> SpectralProblem {
    let q = MatrixMeasure::lebesgue(0.0, 1.0, real_diag(&[0.0, -1.0]));
    let w = MatrixMeasure::lebesgue(0.0, 1.0, real_diag(&[1.0, 0.0]))
        .sum(&MatrixMeasure::point_mass(0.3, real_diag(&[1.0, 0.0])))
        .unwrap();
    let sys = SystemSpec::new(jstd(), q, w, 0.0, 1.0).unwrap().with_anchors(vec![0.5]);
    SpectralProblem::new(sys, dirichlet()).unwrap()
}

/// `u = sin kx` left of the bead, `u'` drops by `λu(0.3)` across it.
fn string_secular(k: f64) -> f64 {
    let lambda = k * k;
    let (s3, c3) = (0.3 * k).sin_cos();
    let (s7, c7) = (0.7 * k).sin_cos();
    k * s3 * c7 + s7 * (k * c3 - lambda * s3)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

fn string_oracle(k_max: f64) -> Vec<f64> {
    let n = 4000;
    let ks: Vec<f64> = (1..=n).map(|i| k_max * i as f64 / n as f64).collect();
    ks.windows(2)
        .filter(|w| string_secular(w[0]) * string_secular(w[1]) < 0.0)
        .map(|w| bisect(string_secular, w[0], w[1]).powi(2))
        .collect()
}

/// `(u(½)² + u'(½)²) / (∫u² + u(0.3)²)` for the eigenfunction at `λ`.
fn string_weight_trace(lambda: f64) -> f64 {
    let k = lambda.sqrt();
    let (s3, c3) = (0.3 * k).sin_cos();
    let slope = k * c3 - lambda * s3;
    let u = |x: f64| {
        if x <= 0.3 {
            ((k * x).sin(), k * (k * x).cos())
        } else {
            let t = k * (x - 0.3);
            (s3 * t.cos() + slope / k * t.sin(), -s3 * k * t.sin() + slope * t.cos())
        }
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let norm: f64 = (0..n).map(|i| u((i as f64 + 0.5) * h).0.powi(2) * h).sum::<f64>() + s3 * s3;
    let (a, b) = u(0.5);
    (a * a + b * b) / norm
}

#[test]
fn string_eigenvalues_match_secular_equation() {
    let p = string();
    let eigs = eigen_scan(&p, -1.0, 60.0, &ScanOptions::default()).unwrap();
    let oracle = string_oracle(60f64.sqrt());
    assert_eq!(eigs.len(), oracle.len());
    for (e, o) in eigs.iter().zip(&oracle) {
        assert!((e.lambda - o).abs() < 1e-8 * o.max(1.0), "{} vs {o}", e.lambda);
        let tr: f64 = (0..e.weight.nrows()).map(|i| e.weight[(i, i)].re).sum();
        let want = string_weight_trace(*o);
        assert!((tr - want).abs() < 1e-6 * want, "{tr} vs {want}");
    }
}

#[test]
fn string_atom_weight_agrees_with_eigen_weight() {
    let p = string();
    let eigs = eigen_scan(&p, -1.0, 10.0, &ScanOptions::default()).unwrap();
    let w = atom_weight(&p, eigs[0].lambda, &DEFAULT_EPS).unwrap();
    assert!(frob(&(&w.value - &eigs[0].weight)) < 1e-4 * frob(&eigs[0].weight));
}

#[test]
fn free_weyl_matrix_closed_form() {
    let sys = SystemSpec::new(
        jstd(),
        MatrixMeasure::zero(2),
        MatrixMeasure::lebesgue(0.0, PI, eye(2)),
        0.0,
        PI,
    )
    .unwrap()
    .with_anchors(vec![0.0]);
    let p = SpectralProblem::new(sys, dirichlet()).unwrap();
    for lambda in [c(0.3, 1.0), c(-2.2, 0.1), c(4.0, 2.0)] {
        let cot = (lambda * PI).cos() / (lambda * PI).sin();
        let want = distspec_core::Mat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), -cot]);
        assert!(frob(&(m_matrix(&p, lambda).unwrap() - want)) < 1e-9);
    }
}

#[test]
fn bead_mass_is_seen_by_the_transform_norm() {
    let p = string();
    let model = spectral_measure_model(&p, -1.0, 400.0, &ModelOptions::default()).unwrap();
    let basis = AtomBasis::new(&p, &model).unwrap();
    let f = PiecewiseFn::constant(Vect::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]), 0.0, 1.0);
    let n = tau_norm(&model, &forward(&p, &basis, &f).unwrap()).unwrap();
    // ‖f‖²_w = ∫1 + bead mass 1 = 2; the truncated sum stays below it
    assert!(n * n <= 2.0 + 1e-9 && n * n > 1.9, "{}", n * n);
}

#[test]
fn fatou_step_function_at_jump_and_interior() {
    let mu = ScalarMeasureModel::lebesgue(-1.0, 1.0).unwrap();
    let f = ScalarFn::new(|t| if t < 0.0 { -1.0 } else { 1.0 }, vec![0.0], 1.0);
    let rs = [1e-2, 1e-3, 1e-4];
    // symmetric Poisson kernel averages the jump to 0
    let at_jump = fatou_convergence_scan(&mu, &f, 0.0, &rs, 0.5).unwrap();
    assert!(at_jump.limit.abs() < 1e-9);
    let inside = fatou_convergence_scan(&mu, &f, 0.5, &rs, 0.25).unwrap();
    assert!((inside.limit - 1.0).abs() < 1e-6 && inside.monotone);
    assert!(inside.caveat.is_none());
}
