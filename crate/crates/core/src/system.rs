//! The spectral problem `Ju' + (q - λw)u = wf` on `(a, b)`: coefficients,
//! endpoint data, boundary conditions and the exceptional sets attached to
//! the atoms of `q` and `w`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, cond, frob, max_abs, poly_roots, rank, Mat, C64};
use crate::measures::{sort_dedup, validate_measure, MatrixMeasure, MeasureKind, ValidationReport};

/// Numerical tolerances shared by the whole pipeline.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    /// Hermiticity / PSD / skew-hermiticity checks.
    pub structural: f64,
    pub quad_rel: f64,
    pub ode_rel: f64,
    pub ode_abs: f64,
    /// Condition number above which a jump matrix counts as singular.
    pub transfer_cond_cap: f64,
    /// Relative singular value threshold for pseudoinverses.
    pub pinv_rel: f64,
    /// Relative singular value threshold for ranks and kernels.
    pub rank_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            structural: 1e-10,
            quad_rel: 1e-10,
            ode_rel: 1e-10,
            ode_abs: 1e-12,
            transfer_cond_cap: 1e12,
            pinv_rel: 1e-12,
            rank_rel: 1e-10,
        }
    }
}

pub type LambdaMatFn = Arc<dyn Fn(C64) -> Mat + Send + Sync>;

/// Data the user supplies for an endpoint where the coefficients are not
/// finite measures.
#[derive(Clone)]
pub struct SingularEndpoint {
    /// Columns spanning the coefficients `η` for which `U(·, λ)η` is square
    /// integrable near the endpoint.
    pub span: LambdaMatFn,
    /// Limit of `g* J U(·, λ)` at the endpoint (`n_± × n`).
    pub boundary_limit: LambdaMatFn,
    /// Finite point where solutions stop being integrated.
    pub cutoff: f64,
}

#[derive(Clone)]
pub enum Endpoint {
    Regular,
    Singular(SingularEndpoint),
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Regular => write!(f, "Regular"),
            Endpoint::Singular(s) => write!(f, "Singular {{ cutoff: {} }}", s.cutoff),
        }
    }
}

impl Endpoint {
    pub fn is_regular(&self) -> bool {
        matches!(self, Endpoint::Regular)
    }
}

/// Boundary conditions `G_b u(b) - G_a u(a) = 0`, where the rows of `G_a`
/// and `G_b` are the endpoint values of `g* J`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConditions {
    pub g_a: Mat,
    pub g_b: Mat,
}

impl BoundaryConditions {
    pub fn new(g_a: Mat, g_b: Mat) -> Result<Self> {
        if g_a.shape() != g_b.shape() {
            return Err(Error::structural(format!(
                "boundary matrices have shapes {:?} and {:?}",
                g_a.shape(),
                g_b.shape()
            )));
        }
        Ok(BoundaryConditions { g_a, g_b })
    }

    pub fn count(&self) -> usize {
        self.g_a.nrows()
    }

    /// `‖G_b J⁻¹ G_b* - G_a J⁻¹ G_a*‖`
    pub fn self_adjointness_residual(&self, j: &Mat) -> f64 {
        let jinv = j.clone().try_inverse().unwrap_or_else(|| j.map(|_| c(f64::NAN, 0.0)));
        let form = &self.g_b * &jinv * self.g_b.adjoint() - &self.g_a * &jinv * self.g_a.adjoint();
        max_abs(&form)
    }

    /// Rank of the stacked pair `(G_a, G_b)`; must equal the row count.
    pub fn independent_rows(&self, rel_tol: f64) -> usize {
        let both = crate::linalg::hstack(&[&self.g_a, &self.g_b]);
        rank(&both, rel_tol)
    }
}

#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub n: usize,
    pub j: Mat,
    pub q: MatrixMeasure,
    pub w: MatrixMeasure,
    pub a: f64,
    pub b: f64,
    pub left: Endpoint,
    pub right: Endpoint,
    /// Explicit anchors, one per subinterval; `None` uses [`choose_anchors`].
    pub anchors: Option<Vec<f64>>,
    pub tol: Tolerances,
    jinv: Mat,
}

impl SystemSpec {
    pub fn new(j: Mat, q: MatrixMeasure, w: MatrixMeasure, a: f64, b: f64) -> Result<Self> {
        SystemSpec::with_endpoints(j, q, w, a, b, Endpoint::Regular, Endpoint::Regular)
    }

    pub fn with_endpoints(
        j: Mat,
        q: MatrixMeasure,
        w: MatrixMeasure,
        a: f64,
        b: f64,
        left: Endpoint,
        right: Endpoint,
    ) -> Result<Self> {
        let n = j.nrows();
        if j.ncols() != n || n == 0 {
            return Err(Error::structural(format!("J has shape {:?}", j.shape())));
        }
        if q.dim != n || w.dim != n {
            return Err(Error::structural(format!(
                "coefficient dimensions q: {}, w: {} differ from J: {n}",
                q.dim, w.dim
            )));
        }
        if !(a < b) {
            return Err(Error::structural(format!("interval ({a}, {b}) is empty")));
        }
        q.check_structure()?;
        w.check_structure()?;
        for (name, ep, end) in [("left", &left, a), ("right", &right, b)] {
            match ep {
                Endpoint::Regular if !end.is_finite() => {
                    return Err(Error::structural(format!(
                        "{name} endpoint {end} is infinite but marked regular"
                    )))
                }
                Endpoint::Singular(s) if !(s.cutoff > a && s.cutoff < b) => {
                    return Err(Error::structural(format!(
                        "{name} cutoff {} outside ({a}, {b})",
                        s.cutoff
                    )))
                }
                _ => {}
            }
        }
        let jinv = j
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::structural("J is not invertible"))?;
        let sys = SystemSpec {
            n,
            j,
            q,
            w,
            a,
            b,
            left,
            right,
            anchors: None,
            tol: Tolerances::default(),
            jinv,
        };
        let (lo, hi) = sys.window();
        if lo >= hi {
            return Err(Error::structural("endpoint cutoffs leave an empty window"));
        }
        for x in sys.atom_locations() {
            if !(x > lo && x < hi) {
                return Err(Error::structural(format!(
                    "atom at {x} not strictly inside the working interval ({lo}, {hi})"
                )));
            }
        }
        for (name, m) in [("q", &sys.q), ("w", &sys.w)] {
            for s in &m.segments {
                if s.lower < a || s.upper > b {
                    return Err(Error::structural(format!(
                        "{name} segment [{}, {}] leaves ({a}, {b})",
                        s.lower, s.upper
                    )));
                }
            }
        }
        Ok(sys)
    }

    pub fn with_anchors(mut self, anchors: Vec<f64>) -> Self {
        self.anchors = Some(anchors);
        self
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn j_inv(&self) -> &Mat {
        &self.jinv
    }

    /// Finite range on which solutions are integrated: the interval itself
    /// for regular endpoints, the user cutoffs for singular ones.
    pub fn window(&self) -> (f64, f64) {
        let lo = match &self.left {
            Endpoint::Regular => self.a,
            Endpoint::Singular(s) => s.cutoff,
        };
        let hi = match &self.right {
            Endpoint::Regular => self.b,
            Endpoint::Singular(s) => s.cutoff,
        };
        (lo, hi)
    }

    pub fn is_regular(&self) -> bool {
        self.left.is_regular() && self.right.is_regular()
    }

    /// Locations of atoms of `q` or `w`, ascending.
    pub fn atom_locations(&self) -> Vec<f64> {
        let mut xs = self.q.atom_locations();
        xs.extend(self.w.atom_locations());
        sort_dedup(&mut xs);
        xs
    }

    pub fn is_atom(&self, x: f64) -> bool {
        self.q.has_atom(x) || self.w.has_atom(x)
    }

    /// Atoms and segment edges of both coefficients, ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut xs = self.q.breakpoints();
        xs.extend(self.w.breakpoints());
        sort_dedup(&mut xs);
        xs
    }

    /// `J⁻¹(λ w(x) - q(x))` for the densities.
    pub fn density_generator(&self, x: f64, lambda: C64) -> Mat {
        &self.jinv * (self.w.density_at(x) * lambda - self.q.density_at(x))
    }

    pub fn validate(&self) -> SystemValidation {
        let j_skew = max_abs(&(&self.j + self.j.adjoint()));
        let j_det = self.j.clone().determinant().norm();
        let tol = self.tol.structural;
        SystemValidation {
            j_skew_residual: j_skew,
            j_det_abs: j_det,
            j_ok: j_skew <= tol && j_det > tol,
            q: validate_measure(&self.q, MeasureKind::Hermitian, tol).unwrap_or_default(),
            w: validate_measure(&self.w, MeasureKind::Nonnegative, tol).unwrap_or_default(),
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(v.summary()))
        }
    }

    pub fn check_boundary_conditions(&self, bc: &BoundaryConditions) -> Result<f64> {
        if bc.g_a.ncols() != self.n {
            return Err(Error::structural(format!(
                "boundary matrices have {} columns, expected {}",
                bc.g_a.ncols(),
                self.n
            )));
        }
        if self.is_regular() && bc.count() != self.n {
            return Err(Error::Validation(format!(
                "regular problem needs {} boundary conditions, got {}",
                self.n,
                bc.count()
            )));
        }
        if bc.independent_rows(self.tol.rank_rel) != bc.count() {
            return Err(Error::Validation("boundary conditions are linearly dependent".into()));
        }
        let res = bc.self_adjointness_residual(&self.j);
        if res > self.tol.structural {
            return Err(Error::Validation(format!(
                "boundary conditions are not self-adjoint: residual {res:.3e}"
            )));
        }
        Ok(res)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemValidation {
    pub j_skew_residual: f64,
    pub j_det_abs: f64,
    pub j_ok: bool,
    pub q: ValidationReport,
    pub w: ValidationReport,
}

impl SystemValidation {
    pub fn is_valid(&self) -> bool {
        self.j_ok && self.q.is_valid() && self.w.is_valid()
    }

    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.j_ok {
            parts.push(format!(
                "J: skew residual {:.3e}, |det| {:.3e}",
                self.j_skew_residual, self.j_det_abs
            ));
        }
        for (name, rep) in [("q", &self.q), ("w", &self.w)] {
            for v in &rep.violations {
                parts.push(format!(
                    "{name}: {:?} at {:?}, magnitude {:.3e}",
                    v.kind, v.location, v.magnitude
                ));
            }
        }
        parts.join("; ")
    }
}

/// `(B₋(x, λ), B₊(x, λ))` with `B± = J ± (Δq - λΔw)/2`.
pub fn jump_matrices(sys: &SystemSpec, x: f64, lambda: C64) -> (Mat, Mat) {
    let half = (sys.q.atom_at(x) - sys.w.atom_at(x) * lambda) * c(0.5, 0.0);
    (&sys.j - &half, &sys.j + half)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "roots", rename_all = "snake_case")]
pub enum LambdaSet {
    Empty,
    #[serde(serialize_with = "ser_complex_list")]
    Finite(Vec<C64>),
    AllOfC,
}

impl LambdaSet {
    pub fn meets_real_axis(&self) -> bool {
        match self {
            LambdaSet::Empty => false,
            LambdaSet::AllOfC => true,
            LambdaSet::Finite(r) => r.iter().any(|z| z.im == 0.0),
        }
    }
}

fn ser_complex_list<S: serde::Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// Coefficients (ascending) of `det B₊(x, λ)` as a polynomial in `λ`, by
/// interpolation on `n + 1` points of the unit circle.
pub fn det_polynomial(sys: &SystemSpec, x: f64) -> Vec<C64> {
    let m = sys.n + 1;
    let values: Vec<C64> = (0..m)
        .map(|k| {
            let z = C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64);
            jump_matrices(sys, x, z).1.determinant()
        })
        .collect();
    (0..m)
        .map(|p| {
            values
                .iter()
                .enumerate()
                .map(|(k, v)| v * C64::from_polar(1.0, -2.0 * PI * (k * p) as f64 / m as f64))
                .sum::<C64>()
                / m as f64
        })
        .collect()
}

const ROOT_TOL: f64 = 1e-8;

/// `Λ_x`: the `λ` for which `B₊(x, λ)` or `B₋(x, λ)` is singular.
pub fn singular_lambdas_at(sys: &SystemSpec, x: f64) -> LambdaSet {
    if !sys.is_atom(x) {
        return LambdaSet::Empty;
    }
    let coeffs = det_polynomial(sys, x);
    let jscale = frob(&sys.j).max(1.0).powi(sys.n as i32);
    let biggest = coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if biggest <= 1e-12 * jscale {
        return LambdaSet::AllOfC;
    }
    let roots_plus = poly_roots(&coeffs, 1e-12 * biggest);
    if roots_plus.is_empty() {
        return LambdaSet::Empty;
    }
    // B₋(λ) = -B₊(λ̄)*, so the roots for B₋ are the conjugates
    let mut all: Vec<C64> = Vec::new();
    for z in roots_plus.iter().flat_map(|z| [*z, z.conj()]) {
        let scale = z.norm().max(1.0);
        let z = if z.im.abs() <= ROOT_TOL * scale {
            C64::new(z.re, 0.0)
        } else {
            z
        };
        if let Some(existing) = all.iter_mut().find(|e| (**e - z).norm() <= ROOT_TOL * scale) {
            *existing = (*existing + z) * 0.5;
        } else {
            all.push(z);
        }
    }
    // exact conjugate pairing
    let snapshot = all.clone();
    for z in all.iter_mut() {
        if z.im != 0.0 {
            if let Some(p) = snapshot
                .iter()
                .find(|p| (p.conj() - *z).norm() <= ROOT_TOL * z.norm().max(1.0))
            {
                let avg = (*z + p.conj()) * 0.5;
                *z = avg;
            }
        }
    }
    all.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    LambdaSet::Finite(all)
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomRecord {
    pub x: f64,
    pub lambdas: LambdaSet,
}

#[derive(Clone, Debug, Serialize)]
pub struct SingularitySet {
    pub atoms: Vec<AtomRecord>,
    pub partition: Vec<f64>,
    #[serde(serialize_with = "ser_complex_list")]
    pub tilde_lambda: Vec<C64>,
    /// Finitely many atoms make the nonreal exceptional set finite, hence a
    /// closed set of isolated points.
    pub tilde_lambda_isolated: bool,
}

impl SingularitySet {
    pub fn count(&self) -> usize {
        self.partition.len()
    }

    /// Subinterval ends `a = x₀ < x₁ < … < x_N < x_{N+1} = b` (window ends
    /// for singular endpoints).
    pub fn edges(&self, sys: &SystemSpec) -> Vec<f64> {
        let (lo, hi) = sys.window();
        let mut e = vec![lo];
        e.extend(self.partition.iter().copied());
        e.push(hi);
        e
    }

    /// Whether `λ` is within `tol` of the nonreal exceptional set.
    pub fn near_tilde(&self, lambda: C64, tol: f64) -> bool {
        self.tilde_lambda
            .iter()
            .any(|z| (z - lambda).norm() <= tol * z.norm().max(1.0))
    }
}

pub fn partition_points(sys: &SystemSpec) -> SingularitySet {
    let mut atoms = Vec::new();
    let mut partition = Vec::new();
    let mut tilde = Vec::new();
    for x in sys.atom_locations() {
        let lambdas = singular_lambdas_at(sys, x);
        if lambdas.meets_real_axis() {
            partition.push(x);
        } else if let LambdaSet::Finite(roots) = &lambdas {
            tilde.extend(roots.iter().copied());
        }
        atoms.push(AtomRecord { x, lambdas });
    }
    SingularitySet {
        atoms,
        partition,
        tilde_lambda: tilde,
        tilde_lambda_isolated: true,
    }
}

/// One anchor per subinterval: the midpoint, moved off atoms by dyadic
/// fractions of the length; unbounded pieces get a point at unit distance
/// from the finite end.
pub fn choose_anchors(sys: &SystemSpec, s: &SingularitySet) -> Result<Vec<f64>> {
    let mut edges = vec![sys.a];
    edges.extend(s.partition.iter().copied());
    edges.push(sys.b);
    let mut out = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !(lo < hi) {
            return Err(Error::structural(format!("empty subinterval ({lo}, {hi})")));
        }
        let mid = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        };
        let len = if lo.is_finite() && hi.is_finite() { hi - lo } else { 1.0 };
        let mut anchor = mid;
        if sys.is_atom(mid) {
            let mut found = None;
            'search: for p in 2..52 {
                let step = len * 0.5f64.powi(p);
                for cand in [mid + step, mid - step] {
                    if cand > lo && cand < hi && !sys.is_atom(cand) {
                        found = Some(cand);
                        break 'search;
                    }
                }
            }
            anchor = found.ok_or_else(|| Error::structural("no non-atom anchor found"))?;
        }
        out.push(anchor);
    }
    Ok(out)
}

/// Anchors actually used: explicit ones when given (validated), otherwise
/// [`choose_anchors`].
pub fn anchors(sys: &SystemSpec, s: &SingularitySet) -> Result<Vec<f64>> {
    let Some(given) = &sys.anchors else {
        return choose_anchors(sys, s);
    };
    let edges = s.edges(sys);
    if given.len() != edges.len() - 1 {
        return Err(Error::config(format!(
            "{} anchors given, {} subintervals",
            given.len(),
            edges.len() - 1
        )));
    }
    for (j, &xi) in given.iter().enumerate() {
        let (lo, hi) = (edges[j], edges[j + 1]);
        let at_regular_end = (j == 0 && xi == lo && sys.left.is_regular())
            || (j + 1 == given.len() && xi == hi && sys.right.is_regular());
        if !((xi > lo && xi < hi) || at_regular_end) || sys.is_atom(xi) {
            return Err(Error::config(format!(
                "anchor {xi} not admissible for subinterval ({lo}, {hi})"
            )));
        }
    }
    Ok(given.clone())
}

/// Transfer `B₊⁻¹B₋` across an atom, or a singular-transfer error when the
/// condition number of either factor exceeds the cap.
pub fn transfer_matrix(sys: &SystemSpec, x: f64, lambda: C64) -> Result<Mat> {
    let (bm, bp) = jump_matrices(sys, x, lambda);
    let k = cond(&bp).max(cond(&bm));
    if k > sys.tol.transfer_cond_cap {
        return Err(Error::SingularTransfer { x, lambda, cond: k });
    }
    let inv = bp.try_inverse().ok_or(Error::SingularTransfer {
        x,
        lambda,
        cond: f64::INFINITY,
    })?;
    Ok(inv * bm)
}
