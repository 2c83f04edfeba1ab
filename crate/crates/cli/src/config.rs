//! JSON problem configuration.
//!
//! Complex numbers are `[re, im]` pairs, matrices are arrays of rows,
//! polynomials list coefficients in ascending degree. Infinite interval
//! ends are written `"-inf"` / `"inf"`.

use std::path::Path;
use std::sync::Arc;

use distspec_core::fatou::{DensityPiece, ScalarFn, ScalarMeasureModel};
use distspec_core::linalg::{Mat, Vect, C64};
use distspec_core::measures::{Atom, MatrixMeasure, Segment};
use distspec_core::system::{BoundaryConditions, Endpoint, SingularEndpoint, SystemSpec, Tolerances};
use distspec_core::{PiecewiseFn, SpectralProblem};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub type Complex = [f64; 2];
pub type MatrixCfg = Vec<Vec<Complex>>;

/// Real number or `"inf"` / `"-inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Num(f64),
    Named(String),
}

impl Bound {
    pub fn value(&self, path: &str) -> Result<f64, CliError> {
        match self {
            Bound::Num(x) => Ok(*x),
            Bound::Named(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(CliError::field(
                    path,
                    format!("expected a number or \"inf\"/\"-inf\", got {s:?}"),
                )),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[Bound; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<MatrixCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MeasureCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MeasureCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<EndpointsCfg>,
    /// One per subinterval between partition points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<GridCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    /// Spectral window for `tau`, `eigen`, `expand` and `verify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatou: Option<FatouCfg>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureCfg {
    #[serde(default)]
    pub segments: Vec<SegmentCfg>,
    #[serde(default)]
    pub atoms: Vec<AtomCfg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentCfg {
    pub interval: [f64; 2],
    /// `density[i][j]`: ascending coefficients of entry `(i, j)`.
    pub density: Vec<Vec<Vec<Complex>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomCfg {
    pub x: f64,
    pub weight: MatrixCfg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryCfg {
    pub g_a: MatrixCfg,
    pub g_b: MatrixCfg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsCfg {
    pub left: EndpointCfg,
    pub right: EndpointCfg,
}

/// A singular end carries `λ`-independent data: the span of square
/// integrable coefficients and the limit of `g* J U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointCfg {
    Regular,
    Singular {
        cutoff: f64,
        span: MatrixCfg,
        boundary_limit: MatrixCfg,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_abs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_cond_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinv_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_rel: Option<f64>,
}

impl TolerancesCfg {
    pub fn apply(&self, mut t: Tolerances) -> Tolerances {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut t.structural, self.structural);
        set(&mut t.quad_rel, self.quad_rel);
        set(&mut t.ode_rel, self.ode_rel);
        set(&mut t.ode_abs, self.ode_abs);
        set(&mut t.transfer_cond_cap, self.transfer_cond_cap);
        set(&mut t.pinv_rel, self.pinv_rel);
        set(&mut t.rank_rel, self.rank_rel);
        t
    }

    /// `key=value,key=value`
    pub fn parse_override(s: &str) -> Result<Self, CliError> {
        let mut out = TolerancesCfg::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::field("--tol-override", format!("expected key=value, got {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::field("--tol-override", format!("{v:?} is not a number")))?;
            let slot = match k.trim() {
                "structural" => &mut out.structural,
                "quad_rel" => &mut out.quad_rel,
                "ode_rel" => &mut out.ode_rel,
                "ode_abs" => &mut out.ode_abs,
                "transfer_cond_cap" => &mut out.transfer_cond_cap,
                "pinv_rel" => &mut out.pinv_rel,
                "rank_rel" => &mut out.rank_rel,
                other => {
                    return Err(CliError::field(
                        "--tol-override",
                        format!("unknown tolerance {other:?}"),
                    ))
                }
            };
            *slot = Some(v);
        }
        Ok(out)
    }
}

/// `{s + iε : s = lo, lo + step, …, hi; ε ∈ eps}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub eps: Vec<f64>,
}

impl GridCfg {
    /// `lo,hi,step,eps1[,eps2…]`
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let v = parse_list(s, "--lambda-grid")?;
        if v.len() < 4 {
            return Err(CliError::field("--lambda-grid", "expected lo,hi,step,eps1[,eps2...]"));
        }
        Ok(GridCfg {
            lo: v[0],
            hi: v[1],
            step: v[2],
            eps: v[3..].to_vec(),
        })
    }

    pub fn check(&self) -> Result<(), CliError> {
        if !(self.lo <= self.hi) || !(self.step > 0.0) || self.eps.is_empty() || self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(CliError::field(
                "lambda_grid",
                "needs lo <= hi, step > 0 and positive eps",
            ));
        }
        Ok(())
    }
}

pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::field(what, format!("{:?} is not a number", p.trim())))
        })
        .collect()
}

/// Vector function as a sum of polynomial pieces; values at piece ends are
/// balanced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorFnCfg {
    pub pieces: Vec<VectorPieceCfg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorPieceCfg {
    pub interval: [f64; 2],
    /// Ascending coefficients per component.
    pub components: Vec<Vec<Complex>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandCfg {
    pub f: VectorFnCfg,
    pub truncation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatouCfg {
    pub measure: ScalarMeasureCfg,
    pub f: ScalarFnCfg,
    pub points: Vec<f64>,
    pub r: Vec<f64>,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarMeasureCfg {
    #[serde(default)]
    pub pieces: Vec<ScalarPieceCfg>,
    /// `[x, mass]`
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarPieceCfg {
    pub interval: [Bound; 2],
    pub coeffs: Vec<f64>,
}

/// Polynomial pieces on half-open `[a, b)`, overridden at `points`,
/// zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarFnCfg {
    #[serde(default)]
    pub pieces: Vec<ScalarPieceCfg>,
    /// `[x, value]`
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

pub fn load(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ProblemConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ProblemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        CliError::Config(format!(
            "line {} column {}, field {}: {inner}",
            inner.line(),
            inner.column(),
            e.path()
        ))
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::field(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
        ));
    }
    Ok(cfg)
}

fn complex(z: &Complex) -> C64 {
    C64::new(z[0], z[1])
}

pub fn matrix(m: &MatrixCfg, path: &str) -> Result<Mat, CliError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if let Some(k) = m.iter().position(|r| r.len() != cols) {
        return Err(CliError::field(
            &format!("{path}[{k}]"),
            format!("row length differs from {cols}"),
        ));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| complex(&m[i][j])))
}

pub fn matrix_cfg(m: &Mat) -> MatrixCfg {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn square(m: &MatrixCfg, n: usize, path: &str) -> Result<Mat, CliError> {
    let out = matrix(m, path)?;
    if out.shape() != (n, n) {
        return Err(CliError::field(
            path,
            format!("expected {n}x{n}, got {}x{}", out.nrows(), out.ncols()),
        ));
    }
    Ok(out)
}

fn measure(cfg: &MeasureCfg, n: usize, path: &str) -> Result<MatrixMeasure, CliError> {
    let mut segments = Vec::with_capacity(cfg.segments.len());
    for (k, s) in cfg.segments.iter().enumerate() {
        let p = format!("{path}.segments[{k}].density");
        if s.density.len() != n || s.density.iter().any(|r| r.len() != n) {
            return Err(CliError::field(&p, format!("expected {n}x{n} entries")));
        }
        let coeffs = s
            .density
            .iter()
            .map(|row| row.iter().map(|e| e.iter().map(complex).collect()).collect())
            .collect();
        segments.push(Segment::polynomial(s.interval[0], s.interval[1], coeffs));
    }
    let mut atoms = Vec::with_capacity(cfg.atoms.len());
    for (k, a) in cfg.atoms.iter().enumerate() {
        atoms.push(Atom {
            x: a.x,
            weight: square(&a.weight, n, &format!("{path}.atoms[{k}].weight"))?,
        });
    }
    MatrixMeasure::new(n, segments, atoms).map_err(|e| CliError::field(path, e.to_string()))
}

fn endpoint(cfg: &EndpointCfg, n: usize, path: &str) -> Result<Endpoint, CliError> {
    Ok(match cfg {
        EndpointCfg::Regular => Endpoint::Regular,
        EndpointCfg::Singular {
            cutoff,
            span,
            boundary_limit,
        } => {
            let span = matrix(span, &format!("{path}.span"))?;
            let limit = matrix(boundary_limit, &format!("{path}.boundary_limit"))?;
            if span.nrows() != n || limit.ncols() != n {
                return Err(CliError::field(
                    path,
                    format!("span needs {n} rows and boundary_limit {n} columns"),
                ));
            }
            Endpoint::Singular(SingularEndpoint {
                span: Arc::new(move |_| span.clone()),
                boundary_limit: Arc::new(move |_| limit.clone()),
                cutoff: *cutoff,
            })
        }
    })
}

fn required<'a, T>(v: &'a Option<T>, field: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::field(field, "missing"))
}

impl ProblemConfig {
    pub fn system(&self, tol_override: Option<&TolerancesCfg>) -> Result<SystemSpec, CliError> {
        let j = matrix(required(&self.j, "j")?, "j")?;
        let n = j.nrows();
        if j.ncols() != n {
            return Err(CliError::field("j", "must be square"));
        }
        let interval = required(&self.interval, "interval")?;
        let a = interval[0].value("interval[0]")?;
        let b = interval[1].value("interval[1]")?;
        let q = measure(required(&self.q, "q")?, n, "q")?;
        let w = measure(required(&self.w, "w")?, n, "w")?;
        let (left, right) = match &self.endpoints {
            None => (Endpoint::Regular, Endpoint::Regular),
            Some(e) => (
                endpoint(&e.left, n, "endpoints.left")?,
                endpoint(&e.right, n, "endpoints.right")?,
            ),
        };
        let mut sys = SystemSpec::with_endpoints(j, q, w, a, b, left, right)?;
        let mut tol = Tolerances::default();
        if let Some(t) = &self.tolerances {
            tol = t.apply(tol);
        }
        if let Some(t) = tol_override {
            tol = t.apply(tol);
        }
        sys = sys.with_tolerances(tol);
        if let Some(anchors) = &self.anchors {
            sys = sys.with_anchors(anchors.clone());
        }
        Ok(sys)
    }

    pub fn boundary(&self, n: usize) -> Result<BoundaryConditions, CliError> {
        let b = required(&self.boundary, "boundary")?;
        let g_a = matrix(&b.g_a, "boundary.g_a")?;
        let g_b = matrix(&b.g_b, "boundary.g_b")?;
        if g_a.ncols() != n {
            return Err(CliError::field("boundary.g_a", format!("expected {n} columns")));
        }
        BoundaryConditions::new(g_a, g_b).map_err(|e| CliError::field("boundary", e.to_string()))
    }

    pub fn problem(&self, tol_override: Option<&TolerancesCfg>) -> Result<SpectralProblem, CliError> {
        let sys = self.system(tol_override)?;
        let bc = self.boundary(sys.n)?;
        Ok(SpectralProblem::new(sys, bc)?)
    }
}

impl VectorFnCfg {
    pub fn build(&self, n: usize, path: &str) -> Result<PiecewiseFn, CliError> {
        if self.pieces.is_empty() {
            return Ok(PiecewiseFn::zero(n));
        }
        let mut pieces = Vec::new();
        for (k, p) in self.pieces.iter().enumerate() {
            let pp = format!("{path}.pieces[{k}]");
            if !(p.interval[0] < p.interval[1]) {
                return Err(CliError::field(&pp, "empty interval"));
            }
            if p.components.len() != n {
                return Err(CliError::field(&pp, format!("expected {n} components")));
            }
            let comps: Vec<Vec<C64>> = p.components.iter().map(|c| c.iter().map(complex).collect()).collect();
            pieces.push((p.interval[0], p.interval[1], comps));
        }
        let lo = pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let breaks: Vec<f64> = pieces.iter().flat_map(|p| [p.0, p.1]).collect();
        let eval = move |x: f64| {
            let mut v = Vect::zeros(n);
            for (a, b, comps) in &pieces {
                let weight = if x > *a && x < *b {
                    1.0
                } else if x == *a || x == *b {
                    0.5
                } else {
                    continue;
                };
                for (i, c) in comps.iter().enumerate() {
                    v[i] += poly(c, x) * weight;
                }
            }
            v
        };
        Ok(PiecewiseFn::new(n, (lo, hi), breaks, Arc::new(eval)))
    }
}

fn poly(c: &[C64], x: f64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &a| acc * x + a)
}

fn poly_real(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl ScalarMeasureCfg {
    pub fn build(&self) -> Result<ScalarMeasureModel, CliError> {
        let mut pieces = Vec::new();
        for (k, p) in self.pieces.iter().enumerate() {
            let path = format!("fatou.measure.pieces[{k}]");
            let lo = p.interval[0].value(&format!("{path}.interval[0]"))?;
            let hi = p.interval[1].value(&format!("{path}.interval[1]"))?;
            let c = p.coeffs.clone();
            pieces.push(DensityPiece {
                lo,
                hi,
                density: Arc::new(move |t| poly_real(&c, t)),
                breaks: vec![],
            });
        }
        let atoms = self.atoms.iter().map(|a| (a[0], a[1])).collect();
        ScalarMeasureModel::new(pieces, atoms).map_err(|e| CliError::field("fatou.measure", e.to_string()))
    }
}

impl ScalarFnCfg {
    /// The evaluator plus a sampled bound on `|f|`.
    pub fn build(&self) -> Result<ScalarFn, CliError> {
        let mut pieces = Vec::new();
        for (k, p) in self.pieces.iter().enumerate() {
            let path = format!("fatou.f.pieces[{k}]");
            let lo = p.interval[0].value(&format!("{path}.interval[0]"))?;
            let hi = p.interval[1].value(&format!("{path}.interval[1]"))?;
            pieces.push((lo, hi, p.coeffs.clone()));
        }
        let points: Vec<(f64, f64)> = self.points.iter().map(|p| (p[0], p[1])).collect();
        let mut sup = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        for (lo, hi, c) in &pieces {
            if c.len() > 1 && !(lo.is_finite() && hi.is_finite()) {
                return Err(CliError::field("fatou.f", "non-constant pieces must be bounded"));
            }
            if c.len() <= 1 {
                sup = sup.max(c.first().copied().unwrap_or(0.0).abs());
                continue;
            }
            for k in 0..=1000 {
                sup = sup.max(poly_real(c, lo + (hi - lo) * k as f64 / 1000.0).abs());
            }
        }
        let breaks: Vec<f64> = pieces
            .iter()
            .flat_map(|p| [p.0, p.1])
            .chain(points.iter().map(|p| p.0))
            .filter(|x| x.is_finite())
            .collect();
        let eval = move |t: f64| {
            if let Some(p) = points.iter().find(|p| p.0 == t) {
                return p.1;
            }
            pieces
                .iter()
                .find(|p| t >= p.0 && t < p.1)
                .map_or(0.0, |p| poly_real(&p.2, t))
        };
        Ok(ScalarFn::new(eval, breaks, sup))
    }
}
