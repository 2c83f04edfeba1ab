//! Matrix-valued measures of order 0: a piecewise-smooth density plus finitely
//! many point atoms, and integration of balanced BV functions against them.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{frob, max_abs, min_eig_hermitian, zeros, Mat, C64};
use crate::quadrature::{integrate_extended, MatValue, QuadOptions};

pub type DensityFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

/// Absolutely continuous piece of a measure on `[lower, upper]`.
#[derive(Clone)]
pub struct Segment {
    pub lower: f64,
    pub upper: f64,
    pub density: DensityFn,
    /// Polynomial degree of the density, used to size validation samples.
    pub degree_hint: usize,
    /// Set when the density is known to be constant on the segment.
    pub constant: bool,
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Segment")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("degree_hint", &self.degree_hint)
            .field("constant", &self.constant)
            .finish()
    }
}

impl Segment {
    pub fn new(lower: f64, upper: f64, degree_hint: usize, density: DensityFn) -> Self {
        Segment {
            lower,
            upper,
            density,
            degree_hint,
            constant: false,
        }
    }

    pub fn constant(lower: f64, upper: f64, value: Mat) -> Self {
        let mut s = Segment::new(lower, upper, 0, Arc::new(move |_| value.clone()));
        s.constant = true;
        s
    }

    /// Entry-wise polynomial density: `coeffs[i][j]` holds the ascending
    /// coefficients of entry `(i, j)`.
    pub fn polynomial(lower: f64, upper: f64, coeffs: Vec<Vec<Vec<C64>>>) -> Self {
        let n = coeffs.len();
        let degree = coeffs
            .iter()
            .flat_map(|row| row.iter().map(|p| p.len().saturating_sub(1)))
            .max()
            .unwrap_or(0);
        let density: DensityFn = Arc::new(move |x| {
            Mat::from_fn(n, n, |i, j| {
                coeffs[i][j].iter().rev().fold(C64::default(), |acc, &a| acc * x + a)
            })
        });
        let mut s = Segment::new(lower, upper, degree, density);
        s.constant = degree == 0;
        s
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lower && x < self.upper
    }
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub x: f64,
    pub weight: Mat,
}

/// `n × n` matrix measure: density on ordered, non-overlapping segments plus
/// atoms at strictly increasing locations.
#[derive(Clone, Debug)]
pub struct MatrixMeasure {
    pub dim: usize,
    pub segments: Vec<Segment>,
    pub atoms: Vec<Atom>,
}

impl MatrixMeasure {
    pub fn new(dim: usize, segments: Vec<Segment>, atoms: Vec<Atom>) -> Result<Self> {
        let m = MatrixMeasure { dim, segments, atoms };
        m.check_structure()?;
        Ok(m)
    }

    pub fn zero(dim: usize) -> Self {
        MatrixMeasure {
            dim,
            segments: vec![],
            atoms: vec![],
        }
    }

    /// Constant density `value` on `[lower, upper]`.
    pub fn lebesgue(lower: f64, upper: f64, value: Mat) -> Self {
        MatrixMeasure {
            dim: value.nrows(),
            segments: vec![Segment::constant(lower, upper, value)],
            atoms: vec![],
        }
    }

    pub fn point_mass(x: f64, weight: Mat) -> Self {
        MatrixMeasure {
            dim: weight.nrows(),
            segments: vec![],
            atoms: vec![Atom { x, weight }],
        }
    }

    pub fn check_structure(&self) -> Result<()> {
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.lower < s.upper) {
                return Err(Error::structural(format!(
                    "segment {k}: lower {} not below upper {}",
                    s.lower, s.upper
                )));
            }
            if k > 0 && self.segments[k - 1].upper > s.lower {
                return Err(Error::structural(format!(
                    "segment {k} overlaps or precedes segment {}",
                    k - 1
                )));
            }
        }
        for (k, a) in self.atoms.iter().enumerate() {
            if !a.x.is_finite() {
                return Err(Error::structural(format!("atom {k} at non-finite location")));
            }
            if a.weight.shape() != (self.dim, self.dim) {
                return Err(Error::structural(format!(
                    "atom {k} weight has shape {:?}, expected {}x{}",
                    a.weight.shape(),
                    self.dim,
                    self.dim
                )));
            }
            if k > 0 && self.atoms[k - 1].x >= a.x {
                return Err(Error::structural(format!(
                    "atom locations not strictly increasing at index {k}"
                )));
            }
        }
        Ok(())
    }

    /// `Δ_m(x) = m({x})`; the zero matrix away from atoms.
    pub fn atom_at(&self, x: f64) -> Mat {
        self.atoms
            .iter()
            .find(|a| a.x == x)
            .map(|a| a.weight.clone())
            .unwrap_or_else(|| zeros(self.dim, self.dim))
    }

    pub fn has_atom(&self, x: f64) -> bool {
        self.atoms.iter().any(|a| a.x == x)
    }

    pub fn atom_locations(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.x).collect()
    }

    /// Density value at `x` (zero outside all segments).
    pub fn density_at(&self, x: f64) -> Mat {
        self.segments
            .iter()
            .find(|s| s.contains(x))
            .map(|s| (s.density)(x))
            .unwrap_or_else(|| zeros(self.dim, self.dim))
    }

    /// Whether the density is constant on `(lo, hi)` (zero counts).
    pub fn is_constant_on(&self, lo: f64, hi: f64) -> bool {
        self.segments
            .iter()
            .filter(|s| s.lower < hi && s.upper > lo)
            .all(|s| s.constant && s.lower <= lo && s.upper >= hi)
    }

    pub fn has_density(&self) -> bool {
        !self.segments.is_empty()
    }

    /// Segment edges and atom locations.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .segments
            .iter()
            .flat_map(|s| [s.lower, s.upper])
            .chain(self.atoms.iter().map(|a| a.x))
            .filter(|x| x.is_finite())
            .collect();
        sort_dedup(&mut pts);
        pts
    }

    /// Sum of two measures; segments are refined onto the common partition.
    pub fn sum(&self, other: &MatrixMeasure) -> Result<MatrixMeasure> {
        if self.dim != other.dim {
            return Err(Error::structural("measure dimensions differ"));
        }
        let mut edges: Vec<f64> = self
            .segments
            .iter()
            .chain(other.segments.iter())
            .flat_map(|s| [s.lower, s.upper])
            .collect();
        sort_dedup(&mut edges);
        let mut segments = Vec::new();
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let covering: Vec<Segment> = self
                .segments
                .iter()
                .chain(other.segments.iter())
                .filter(|s| s.lower <= lo && s.upper >= hi)
                .cloned()
                .collect();
            if covering.is_empty() {
                continue;
            }
            let degree = covering.iter().map(|s| s.degree_hint).max().unwrap_or(0);
            let constant = covering.iter().all(|s| s.constant);
            let dim = self.dim;
            let density: DensityFn =
                Arc::new(move |x| covering.iter().fold(zeros(dim, dim), |acc, s| acc + (s.density)(x)));
            let mut seg = Segment::new(lo, hi, degree, density);
            seg.constant = constant;
            segments.push(seg);
        }
        let mut atoms: Vec<Atom> = self.atoms.clone();
        for a in &other.atoms {
            match atoms.iter_mut().find(|b| b.x == a.x) {
                Some(b) => b.weight += &a.weight,
                None => atoms.push(a.clone()),
            }
        }
        atoms.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal));
        MatrixMeasure::new(self.dim, segments, atoms)
    }

    /// Sample points used to probe density properties.
    fn density_samples(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        for s in &self.segments {
            let count = s.degree_hint + 3;
            let (lo, hi) = finite_window(s.lower, s.upper);
            for k in 0..=count {
                // Chebyshev–Lobatto nodes
                let t = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / count as f64).cos();
                pts.push(lo + (hi - lo) * t);
            }
        }
        pts
    }
}

fn finite_window(lo: f64, hi: f64) -> (f64, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (lo, hi),
        (true, false) => (lo, lo + 100.0),
        (false, true) => (hi - 100.0, hi),
        (false, false) => (-100.0, 100.0),
    }
}

pub(crate) fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup();
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Hermitian,
    Nonnegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "where", content = "x", rename_all = "lowercase")]
pub enum Location {
    Atom(f64),
    Density(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotHermitian,
    NotPositiveSemidefinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Location,
    /// `‖W - W*‖` for hermiticity, `-min eig` for positivity.
    pub magnitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check hermiticity (and for `Nonnegative` also positive semidefiniteness)
/// of every atom weight and of the density at sample points.
pub fn validate_measure(m: &MatrixMeasure, kind: MeasureKind, tol: f64) -> Result<ValidationReport> {
    m.check_structure()?;
    let mut report = ValidationReport::default();
    let mut check = |w: &Mat, location: Location| {
        let asym = max_abs(&(w - w.adjoint()));
        if asym > tol {
            report.violations.push(Violation {
                kind: ViolationKind::NotHermitian,
                location,
                magnitude: asym,
            });
        }
        if kind == MeasureKind::Nonnegative {
            let lo = min_eig_hermitian(w);
            if lo < -tol {
                report.violations.push(Violation {
                    kind: ViolationKind::NotPositiveSemidefinite,
                    location,
                    magnitude: -lo,
                });
            }
        }
    };
    for a in &m.atoms {
        check(&a.weight, Location::Atom(a.x));
    }
    for x in m.density_samples() {
        check(&m.density_at(x), Location::Density(x));
    }
    Ok(report)
}

/// Integration range with extended-real bounds and explicit endpoint
/// inclusion, which decides whether atoms sitting on an endpoint count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalSpec {
    pub lower: f64,
    pub upper: f64,
    pub include_lower: bool,
    pub include_upper: bool,
}

impl IntervalSpec {
    pub fn new(lower: f64, upper: f64, include_lower: bool, include_upper: bool) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::structural(format!(
                "interval lower {lower} must be below upper {upper}"
            )));
        }
        Ok(IntervalSpec {
            lower,
            upper,
            include_lower,
            include_upper,
        })
    }

    pub fn closed(lower: f64, upper: f64) -> Self {
        IntervalSpec {
            lower,
            upper,
            include_lower: true,
            include_upper: true,
        }
    }

    pub fn open(lower: f64, upper: f64) -> Self {
        IntervalSpec {
            lower,
            upper,
            include_lower: false,
            include_upper: false,
        }
    }

    /// `[lower, upper)`
    pub fn left_closed(lower: f64, upper: f64) -> Self {
        IntervalSpec {
            lower,
            upper,
            include_lower: true,
            include_upper: false,
        }
    }

    /// `(lower, upper]`
    pub fn right_closed(lower: f64, upper: f64) -> Self {
        IntervalSpec {
            lower,
            upper,
            include_lower: false,
            include_upper: true,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = x > self.lower || (self.include_lower && x == self.lower);
        let below = x < self.upper || (self.include_upper && x == self.upper);
        above && below
    }
}

/// `∫ left(x) dm(x) right(x)` over `iv`. Both functions must return balanced
/// values when evaluated at an atom; `breaks` lists their discontinuities.
pub fn integrate_sandwich<L, R>(
    left: L,
    m: &MatrixMeasure,
    right: R,
    iv: &IntervalSpec,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<Mat>
where
    L: Fn(f64) -> Mat,
    R: Fn(f64) -> Mat,
{
    let mut total: Option<Mat> = None;
    let mut accumulate = |v: Mat| {
        total = Some(match total.take() {
            Some(t) => t + v,
            None => v,
        });
    };
    let mut cuts: Vec<f64> = breaks.to_vec();
    cuts.extend(m.atom_locations());
    for s in &m.segments {
        let lo = s.lower.max(iv.lower);
        let hi = s.upper.min(iv.upper);
        if !(lo < hi) {
            continue;
        }
        let res = integrate_extended(|x| MatValue(left(x) * (s.density)(x) * right(x)), lo, hi, &cuts, opts)?;
        accumulate(res.value.0);
    }
    for a in m.atoms.iter().filter(|a| iv.contains(a.x)) {
        accumulate(left(a.x) * &a.weight * right(a.x));
    }
    match total {
        Some(t) => Ok(t),
        None => {
            // nothing to integrate: shape comes from a probe evaluation
            let probe_x = if iv.lower.is_finite() {
                iv.lower
            } else {
                iv.upper.min(0.0)
            };
            let shape = (left(probe_x) * zeros(m.dim, m.dim) * right(probe_x)).shape();
            Ok(zeros(shape.0, shape.1))
        }
    }
}

/// `∫ g dm` over `iv` for a balanced matrix-valued `g`.
pub fn integrate_bv<G: Fn(f64) -> Mat>(
    g: G,
    m: &MatrixMeasure,
    iv: &IntervalSpec,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<Mat> {
    let n = m.dim;
    integrate_sandwich(g, m, |_| Mat::identity(n, n), iv, breaks, opts)
}

/// Hermitian part mismatch of a matrix, for quick checks.
pub fn asymmetry(w: &Mat) -> f64 {
    frob(&(w - w.adjoint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, from_real_rows, r, real_diag};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn opts() -> QuadOptions {
        QuadOptions::default()
    }

    #[test]
    fn footnote_weight_is_valid_nonnegative() {
        let w = MatrixMeasure::point_mass(0.0, real_diag(&[2.0, 0.0]));
        let rep = validate_measure(&w, MeasureKind::Nonnegative, 1e-10).unwrap();
        assert!(rep.is_valid());
    }

    #[test]
    fn non_symmetric_atom_flags_hermiticity() {
        let q = MatrixMeasure::point_mass(0.0, from_real_rows(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let rep = validate_measure(&q, MeasureKind::Hermitian, 1e-10).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::NotHermitian);
        assert!((rep.violations[0].magnitude - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_diagonal_flags_psd() {
        let w = MatrixMeasure::point_mass(0.0, real_diag(&[-1.0, 0.0]));
        let rep = validate_measure(&w, MeasureKind::Nonnegative, 1e-10).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::NotPositiveSemidefinite);
        assert!((rep.violations[0].magnitude - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_density_is_reported_at_a_sample() {
        let w = MatrixMeasure::lebesgue(0.0, 1.0, real_diag(&[1.0, -0.5]));
        let rep = validate_measure(&w, MeasureKind::Nonnegative, 1e-10).unwrap();
        assert!(rep
            .violations
            .iter()
            .all(|v| matches!(v.location, Location::Density(_))));
        assert!(!rep.is_valid());
    }

    #[test]
    fn malformed_ordering_is_structural() {
        let mut m = MatrixMeasure::zero(1);
        m.atoms = vec![Atom { x: 1.0, weight: eye(1) }, Atom { x: 0.0, weight: eye(1) }];
        assert!(matches!(
            validate_measure(&m, MeasureKind::Hermitian, 1e-10),
            Err(Error::Structural(_))
        ));
        let bad = MatrixMeasure::new(
            1,
            vec![Segment::constant(0.0, 2.0, eye(1)), Segment::constant(1.0, 3.0, eye(1))],
            vec![],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn atom_lookup() {
        let q = MatrixMeasure::point_mass(0.0, real_diag(&[0.0, 2.0]));
        assert_eq!(q.atom_at(0.0), real_diag(&[0.0, 2.0]));
        assert_eq!(q.atom_at(0.5), zeros(2, 2));
        let q2 = MatrixMeasure::point_mass(0.0, real_diag(&[1.0, 1.0]));
        let s = q.sum(&q2).unwrap();
        assert_eq!(s.atom_at(0.0), real_diag(&[1.0, 3.0]));
    }

    #[test]
    fn constant_integrand_over_lebesgue() {
        let m = MatrixMeasure::lebesgue(0.0, PI, eye(2));
        let v = integrate_bv(|_| eye(2), &m, &IntervalSpec::closed(0.0, PI), &[], &opts()).unwrap();
        assert!(frob(&(v - eye(2) * r(PI))) < 1e-12);
    }

    #[test]
    fn balanced_step_against_atom() {
        let m = MatrixMeasure::point_mass(0.0, real_diag(&[2.0, 0.0]));
        let step = |x: f64| {
            if x < 0.0 {
                eye(2)
            } else if x > 0.0 {
                zeros(2, 2)
            } else {
                eye(2) * r(0.5)
            }
        };
        let v = integrate_bv(step, &m, &IntervalSpec::closed(-1.0, 1.0), &[0.0], &opts()).unwrap();
        assert!(frob(&(v - real_diag(&[1.0, 0.0]))) < 1e-15);
        let v = integrate_bv(step, &m, &IntervalSpec::right_closed(0.0, 1.0), &[0.0], &opts()).unwrap();
        assert!(frob(&v) < 1e-15);
    }

    #[test]
    fn polynomial_segment_density() {
        // density diag(x, 1 + x²) on [0, 2]
        let z = vec![C64::default()];
        let seg = Segment::polynomial(
            0.0,
            2.0,
            vec![
                vec![vec![r(0.0), r(1.0)], z.clone()],
                vec![z, vec![r(1.0), r(0.0), r(1.0)]],
            ],
        );
        assert_eq!(seg.degree_hint, 2);
        let m = MatrixMeasure::new(2, vec![seg], vec![]).unwrap();
        let v = integrate_bv(|_| eye(2), &m, &IntervalSpec::closed(0.0, 2.0), &[], &opts()).unwrap();
        assert!((v[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((v[(1, 1)].re - (2.0 + 8.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn adjoint_of_integral_matches_integral_of_adjoint() {
        let w = MatrixMeasure::lebesgue(0.0, 1.0, from_real_rows(2, 2, &[2.0, 1.0, 1.0, 3.0]))
            .sum(&MatrixMeasure::point_mass(0.4, real_diag(&[1.0, 0.5])))
            .unwrap();
        let g = |x: f64| from_real_rows(2, 2, &[x, 1.0, x * x, -x]).map(|z| z * C64::new(1.0, 0.3 * x));
        let iv = IntervalSpec::closed(0.0, 1.0);
        let lhs = integrate_sandwich(g, &w, |_| eye(2), &iv, &[], &opts())
            .unwrap()
            .adjoint();
        let rhs = integrate_sandwich(|_| eye(2), &w, |x| g(x).adjoint(), &iv, &[], &opts()).unwrap();
        assert!(frob(&(lhs - rhs)) < 1e-12);
    }

    proptest! {
        #[test]
        fn additivity_across_a_cut(c in 0.05f64..0.95, slope in -2.0f64..2.0) {
            let w = MatrixMeasure::lebesgue(0.0, 1.0, eye(1))
                .sum(&MatrixMeasure::point_mass(0.5, eye(1) * r(0.7)))
                .unwrap();
            let g = move |x: f64| eye(1) * r(1.0 + slope * x);
            let left = integrate_bv(g, &w, &IntervalSpec::right_closed(0.0, c), &[], &opts()).unwrap();
            let right = integrate_bv(g, &w, &IntervalSpec::open(c, 1.0), &[], &opts()).unwrap();
            let whole = integrate_bv(g, &w, &IntervalSpec::open(0.0, 1.0), &[], &opts()).unwrap();
            prop_assert!(frob(&(left + right - whole)) < 1e-12);
        }

        #[test]
        fn atom_inclusion_follows_flags(x in -0.9f64..0.9, lo_in: bool, hi_in: bool, at_lower: bool) {
            let m = MatrixMeasure::point_mass(x, eye(1));
            let iv = if at_lower {
                IntervalSpec::new(x, 1.0, lo_in, hi_in).unwrap()
            } else {
                IntervalSpec::new(-1.0, x, lo_in, hi_in).unwrap()
            };
            let v = integrate_bv(|_| eye(1), &m, &iv, &[], &opts()).unwrap()[(0, 0)].re;
            let expected = if at_lower { lo_in } else { hi_in };
            prop_assert_eq!(v == 1.0, expected);
        }
    }
}
