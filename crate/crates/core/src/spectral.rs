//! Resolvent, spectral measure and an eigenvalue oracle for regular
//! problems.

use std::cell::RefCell;
use std::sync::Arc;

use serde::Serialize;

use crate::assembly::{assemble_f_h, gram, SpectralProblem};
use crate::error::{Error, Result};
use crate::func::PiecewiseFn;
use crate::linalg::{
    c, fix_phase, frob, full_svd, hermitian_eigen, hermitian_part, psd_project, r, range_basis, zeros, Mat, Vect, C64,
};
use crate::measures::{integrate_sandwich, sort_dedup, IntervalSpec};
use crate::propagation::{forward_transform_with, solve_ivp, transform_breaks, FundamentalSystem, Side};
use crate::quadrature::{integrate, MatValue, QuadOptions};
use crate::weyl::m_matrix;

pub const DEFAULT_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn quad_opts(problem: &SpectralProblem) -> QuadOptions {
    QuadOptions {
        rel_tol: problem.sys.tol.quad_rel,
        ..QuadOptions::default()
    }
}

/// `R_λ f` for one `λ` and `f`, with running integrals of
/// `𝒰(·, λ̄)* w f` cached on a grid so that evaluation is cheap.
#[derive(Clone)]
pub struct Resolvent {
    pub lambda: C64,
    problem: SpectralProblem,
    fs: FundamentalSystem,
    conj: FundamentalSystem,
    f: PiecewiseFn,
    breaks: Vec<f64>,
    /// `(ℱf)(λ)`
    pub transform: Vect,
    /// `M(λ)(ℱf)(λ)`
    pub coefficients: Vect,
    nodes: Vec<f64>,
    /// `∫_{[lo, nodes[i])} 𝒰(·, λ̄)* w f`
    running: Vec<Vect>,
}

impl std::fmt::Debug for Resolvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolvent")
            .field("lambda", &self.lambda)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

const CACHE_PANELS: usize = 32;

impl Resolvent {
    pub fn new(problem: &SpectralProblem, lambda: C64, f: &PiecewiseFn) -> Result<Self> {
        if lambda.im == 0.0 {
            return Err(Error::config("the resolvent needs a nonreal spectral parameter"));
        }
        let sys = &problem.sys;
        let fs = problem.fundamental(lambda)?;
        let conj = problem.fundamental(lambda.conj())?;
        let m = m_matrix(problem, lambda)?;
        let transform = forward_transform_with(sys, &problem.layout, &conj, f)?;
        let coefficients = &m * &transform;

        let mut breaks = transform_breaks(sys, &problem.layout);
        breaks.extend(f.breaks.iter().copied());
        breaks.extend([f.support.0, f.support.1]);
        sort_dedup(&mut breaks);
        let (wlo, whi) = sys.window();
        let lo = f.support.0.max(wlo);
        let hi = f.support.1.min(whi);
        let mut nodes: Vec<f64> = vec![];
        let mut running: Vec<Vect> = vec![];
        let mut res = Resolvent {
            lambda,
            problem: problem.clone(),
            fs,
            conj,
            f: f.clone(),
            breaks,
            transform,
            coefficients,
            nodes: vec![],
            running: vec![],
        };
        if lo < hi {
            let mut cuts: Vec<f64> = res.breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
            cuts.push(lo);
            cuts.push(hi);
            sort_dedup(&mut cuts);
            let panel = (hi - lo) / CACHE_PANELS as f64;
            for w in cuts.windows(2) {
                let k = ((w[1] - w[0]) / panel).ceil().max(1.0) as usize;
                for i in 0..k {
                    nodes.push(w[0] + (w[1] - w[0]) * i as f64 / k as f64);
                }
            }
            nodes.push(hi);
            let size = res.transform.len();
            running.push(Vect::zeros(size));
            for w in nodes.windows(2) {
                let part = res.partial(w[0], w[1])?;
                let next = running.last().expect("seeded") + part;
                running.push(next);
            }
        }
        res.nodes = nodes;
        res.running = running;
        Ok(res)
    }

    fn size(&self) -> usize {
        self.transform.len()
    }

    /// `∫_{[x0, x1)} 𝒰(·, λ̄)* w f`
    fn partial(&self, x0: f64, x1: f64) -> Result<Vect> {
        if !(x1 > x0) {
            return Ok(Vect::zeros(self.size()));
        }
        let v = integrate_sandwich(
            |t| self.conj.script_u(t, Side::Balanced).adjoint(),
            &self.problem.sys.w,
            |t| self.f.eval_mat(t),
            &IntervalSpec::new(x0, x1, true, false)?,
            &self.breaks,
            &quad_opts(&self.problem),
        )?;
        Ok(v.column(0).into_owned())
    }

    /// `∫_{(a, x)} 𝒰(·, λ̄)* w f`
    fn below(&self, x: f64) -> Result<Vect> {
        if self.nodes.is_empty() || x <= self.nodes[0] {
            return Ok(Vect::zeros(self.size()));
        }
        let last = self.nodes.len() - 1;
        if x > self.nodes[last] {
            return Ok(self.transform.clone());
        }
        let i = self.nodes.partition_point(|&p| p < x) - 1;
        Ok(&self.running[i] + self.partial(self.nodes[i], x)?)
    }

    /// `(R_λ f)(x)`, balanced.
    pub fn eval(&self, x: f64) -> Result<Vect> {
        let sys = &self.problem.sys;
        let jinv = self.problem.jinv_blocks();
        let below = self.below(x)?;
        let n = sys.n;
        let atom = if sys.w.has_atom(x) {
            self.conj.script_u(x, Side::Balanced).adjoint() * sys.w.atom_at(x) * self.f.eval(x)
        } else {
            Vect::zeros(self.size())
        };
        let above = &self.transform - &below - &atom;
        let core = &self.coefficients + &jinv * (below - above) * c(0.5, 0.0);
        let mut u = self.fs.script_u(x, Side::Balanced) * core;
        if sys.w.has_atom(x) {
            let jump = self.fs.script_u(x, Side::Right) - self.fs.script_u(x, Side::Left);
            u += jump * (&jinv * atom) * c(0.25, 0.0);
        }
        debug_assert_eq!(u.len(), n);
        Ok(u)
    }

    /// The resolvent output as a function; evaluation failures give NaN.
    pub fn to_fn(&self) -> PiecewiseFn {
        let me = Arc::new(self.clone());
        let n = self.problem.sys.n;
        PiecewiseFn::new(
            n,
            self.problem.sys.window(),
            self.breaks.clone(),
            Arc::new(move |x| {
                me.eval(x)
                    .unwrap_or_else(|_| Vect::from_element(n, c(f64::NAN, f64::NAN)))
            }),
        )
    }
}

/// `(R_λ f)(x)`
pub fn resolvent_apply(problem: &SpectralProblem, lambda: C64, f: &PiecewiseFn, x: f64) -> Result<Vect> {
    Resolvent::new(problem, lambda, f)?.eval(x)
}

pub fn resolvent_on_grid(problem: &SpectralProblem, lambda: C64, f: &PiecewiseFn, xs: &[f64]) -> Result<Vec<Vect>> {
    let res = Resolvent::new(problem, lambda, f)?;
    xs.iter().map(|&x| res.eval(x)).collect()
}

/// `⟨g, h⟩_w = ∫ g* w h` over the window.
pub fn w_inner(problem: &SpectralProblem, g: &PiecewiseFn, h: &PiecewiseFn) -> Result<C64> {
    let sys = &problem.sys;
    let (lo, hi) = sys.window();
    let mut breaks = transform_breaks(sys, &problem.layout);
    breaks.extend(g.breaks.iter().copied());
    breaks.extend(h.breaks.iter().copied());
    breaks.extend([g.support.0, g.support.1, h.support.0, h.support.1]);
    let v = integrate_sandwich(
        |x| g.eval_mat(x).adjoint(),
        &sys.w,
        |x| h.eval_mat(x),
        &IntervalSpec::closed(lo, hi),
        &breaks,
        &quad_opts(problem),
    )?;
    Ok(v[(0, 0)])
}

pub fn w_norm(problem: &SpectralProblem, g: &PiecewiseFn) -> Result<f64> {
    Ok(w_inner(problem, g, g)?.re.max(0.0).sqrt())
}

/// Integrated form of `Ju' + (q - λw)u = wf` between consecutive grid
/// points: the largest gap between `u(x_{i+1})` and the solution started
/// from `u(x_i)`, relative to `max(1, max |u|)`. Pairs that touch or
/// straddle a partition point are skipped.
pub fn equation_defect(problem: &SpectralProblem, res: &Resolvent, grid: &[f64]) -> Result<f64> {
    let sys = &problem.sys;
    let edges = &problem.layout.edges;
    let values = grid.iter().map(|&x| res.eval(x)).collect::<Result<Vec<_>>>()?;
    let scale = values.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let mut worst: f64 = 0.0;
    for i in 0..grid.len().saturating_sub(1) {
        let (x0, x1) = (grid[i], grid[i + 1]);
        let Some(j) = (0..problem.layout.blocks()).find(|&j| edges[j] <= x0 && x1 <= edges[j + 1]) else {
            continue;
        };
        let interior = |x: f64| (j == 0 || x > edges[j]) && (j + 1 == problem.layout.blocks() || x < edges[j + 1]);
        if !(interior(x0) && interior(x1)) {
            continue;
        }
        let sol = solve_ivp(sys, &problem.layout, j, res.lambda, x0, &values[i], Some(&res.f))?;
        let gap = (sol.value(x1, Side::Balanced).column(0).into_owned() - &values[i + 1]).norm();
        worst = worst.max(gap / scale);
    }
    Ok(worst)
}

/// `‖R_λ f - R_μ f - (λ - μ) R_λ R_μ f‖_w`
pub fn resolvent_identity_residual(problem: &SpectralProblem, lambda: C64, mu: C64, f: &PiecewiseFn) -> Result<f64> {
    let rl = Resolvent::new(problem, lambda, f)?.to_fn();
    let rm = Resolvent::new(problem, mu, f)?.to_fn();
    let rlm = Resolvent::new(problem, lambda, &rm)?.to_fn();
    let diff = rl.add_scaled(&rm, c(-1.0, 0.0)).add_scaled(&rlm, -(lambda - mu));
    w_norm(problem, &diff)
}

/// Extrapolated limit of a sequence sampled at decreasing `ε`.
#[derive(Clone, Debug, Serialize)]
pub struct Extrapolation {
    #[serde(skip)]
    pub value: Mat,
    pub eps: Vec<f64>,
    /// Raw estimates per `ε`.
    #[serde(skip)]
    pub raw: Vec<Mat>,
    /// Gap between the last two extrapolants (or raw values).
    pub spread: f64,
    pub converged: bool,
}

/// Richardson extrapolation assuming an error `~ ε^order`.
fn richardson(eps: &[f64], raw: Vec<Mat>, order: i32) -> Extrapolation {
    let pairs: Vec<Mat> = (1..raw.len())
        .map(|k| {
            let (e0, e1) = (eps[k - 1].powi(order), eps[k].powi(order));
            (&raw[k] * r(e0) - &raw[k - 1] * r(e1)) / r(e0 - e1)
        })
        .collect();
    let value = pairs
        .last()
        .cloned()
        .unwrap_or_else(|| raw.last().expect("one sample").clone());
    let spread = if pairs.len() >= 2 {
        frob(&(&pairs[pairs.len() - 1] - &pairs[pairs.len() - 2]))
    } else if raw.len() >= 2 {
        frob(&(&raw[raw.len() - 1] - &raw[raw.len() - 2]))
    } else {
        f64::INFINITY
    };
    let diffs: Vec<f64> = raw.windows(2).map(|w| frob(&(&w[1] - &w[0]))).collect();
    let scale = raw.iter().map(frob).fold(0.0, f64::max);
    let converged = diffs.windows(2).all(|d| d[1] < d[0] || d[1] <= 1e-12 * scale.max(1.0));
    Extrapolation {
        value,
        eps: eps.to_vec(),
        raw,
        spread,
        converged,
    }
}

fn check_eps(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config(
            "epsilon schedule must be positive and strictly decreasing",
        ));
    }
    Ok(())
}

/// `(M - M*)/(2i)`
pub fn nevanlinna_im(m: &Mat) -> Mat {
    (m - m.adjoint()) * c(0.0, -0.5)
}

/// `τ([c, d))` from `(1/π)∫_c^d Im M(s + iε) ds`, extrapolated in `ε`.
/// `hints` are known eigenvalues used as quadrature breakpoints; for
/// regular problems the eigenvalue scan supplies them and also rejects
/// ends that are atoms.
pub fn stieltjes_inversion(
    problem: &SpectralProblem,
    lo: f64,
    hi: f64,
    eps: &[f64],
    hints: &[f64],
) -> Result<Extrapolation> {
    check_eps(eps)?;
    if !(lo < hi) {
        return Err(Error::config("inversion interval needs c < d"));
    }
    let mut breaks: Vec<f64> = hints.to_vec();
    if problem.sys.is_regular() {
        let span = hi - lo;
        let eigs = eigen_scan(problem, lo - 0.01 * span, hi + 0.01 * span, &ScanOptions::default())?;
        for e in &eigs {
            let tol = 1e-9 * e.lambda.abs().max(1.0);
            if (e.lambda - lo).abs() < tol || (e.lambda - hi).abs() < tol {
                return Err(Error::config(format!(
                    "inversion end point {} is an eigenvalue",
                    e.lambda
                )));
            }
            breaks.push(e.lambda);
        }
    }
    let size = problem.size();
    let opts = QuadOptions {
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        max_subdivisions: 4000,
    };
    let mut raw = Vec::new();
    for &e in eps {
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let val = integrate(
            |s| match m_matrix(problem, c(s, e)) {
                Ok(m) => MatValue(nevanlinna_im(&m)),
                Err(err) => {
                    failure.borrow_mut().get_or_insert(err);
                    MatValue(zeros(size, size))
                }
            },
            lo,
            hi,
            &breaks,
            &opts,
        )?;
        if let Some(err) = failure.into_inner() {
            return Err(err);
        }
        raw.push(val.value.0 / r(std::f64::consts::PI));
    }
    Ok(richardson(eps, raw, 1))
}

/// `τ({s}) = lim ε Im M(s + iε)`, extrapolated in `ε` and projected onto
/// the PSD cone.
pub fn atom_weight(problem: &SpectralProblem, s: f64, eps: &[f64]) -> Result<Extrapolation> {
    check_eps(eps)?;
    let raw = eps
        .iter()
        .map(|&e| Ok(nevanlinna_im(&m_matrix(problem, c(s, e))?) * r(e)))
        .collect::<Result<Vec<_>>>()?;
    // the hermitian part removes the first-order term
    let mut ex = richardson(eps, raw, 2);
    let h = hermitian_part(&ex.value);
    let scale = frob(&h).max(1.0);
    let (p, most_negative) = psd_project(&h, 1e-8 * scale);
    if most_negative < -1e-8 * scale {
        return Err(Error::accuracy(
            format!("atom weight at {s} is not positive semidefinite"),
            most_negative,
        ));
    }
    ex.value = p;
    Ok(ex)
}

#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    /// Grid spacing of the coarse scan.
    pub step: f64,
    /// Relative smallest singular value below which a minimum is a root.
    pub accept: f64,
    /// Bracket width at which refinement stops, relative to `max(1, |λ|)`.
    pub x_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            step: 0.05,
            accept: 1e-7,
            x_tol: 1e-13,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Eigenpair {
    pub lambda: f64,
    pub multiplicity: usize,
    /// Coefficient vectors orthonormal in `L²(w)` (columns).
    #[serde(skip)]
    pub vectors: Mat,
    /// `Σ η η*`
    #[serde(skip)]
    pub weight: Mat,
    /// `σ_min / σ_max` of the kernel matrix at the root.
    pub residual: f64,
}

/// Kernel matrix `𝔽(λ) Q` with `Q` an orthonormal basis of `ran ℙ`.
fn kernel_svd(problem: &SpectralProblem, q: &Mat, lambda: f64) -> Result<(Vec<f64>, Mat)> {
    let asm = assemble_f_h(problem, c(lambda, 0.0))?;
    let k = &asm.f * q;
    let svd = full_svd(&k);
    Ok((svd.s, svd.v))
}

fn relative_min(s: &[f64]) -> f64 {
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

/// Eigenvalues in `[lo, hi]` of a problem with regular endpoints, from the
/// minima of the smallest singular value of the homogeneous block system.
pub fn eigen_scan(problem: &SpectralProblem, lo: f64, hi: f64, opts: &ScanOptions) -> Result<Vec<Eigenpair>> {
    if !problem.sys.is_regular() {
        return Err(Error::config("the eigenvalue scan needs regular endpoints"));
    }
    if !(lo < hi) || !(opts.step > 0.0) {
        return Err(Error::config("eigenvalue scan needs lo < hi and a positive step"));
    }
    let q = range_basis(&problem.p, 1e-8);
    if q.ncols() == 0 {
        return Ok(vec![]);
    }
    let g = |x: f64| -> Result<f64> { Ok(relative_min(&kernel_svd(problem, &q, x)?.0)) };
    let count = ((hi - lo) / opts.step).ceil().max(1.0) as usize;
    let xs: Vec<f64> = (0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect();
    let gs = xs.iter().map(|&x| g(x)).collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Eigenpair> = Vec::new();
    for i in 0..xs.len() {
        let left = if i == 0 { f64::INFINITY } else { gs[i - 1] };
        let right = if i + 1 == xs.len() { f64::INFINITY } else { gs[i + 1] };
        if !(gs[i] < left && gs[i] <= right) {
            continue;
        }
        let a = if i == 0 { xs[0] } else { xs[i - 1] };
        let b = if i + 1 == xs.len() { xs[i] } else { xs[i + 1] };
        let (x, gx) = golden_min(&g, a, b, opts.x_tol)?;
        if gx > opts.accept {
            continue;
        }
        if out
            .last()
            .is_some_and(|e| (e.lambda - x).abs() < 10.0 * opts.x_tol * x.abs().max(1.0))
        {
            continue;
        }
        out.push(eigenpair(problem, &q, x, opts)?);
    }
    Ok(out)
}

fn golden_min(g: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, x_tol: f64) -> Result<(f64, f64)> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut g1 = g(x1)?;
    let mut g2 = g(x2)?;
    for _ in 0..200 {
        if (b - a) <= x_tol * a.abs().max(b.abs()).max(1.0) {
            break;
        }
        if g1 <= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - phi * (b - a);
            g1 = g(x1)?;
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + phi * (b - a);
            g2 = g(x2)?;
        }
    }
    Ok(if g1 <= g2 { (x1, g1) } else { (x2, g2) })
}

fn eigenpair(problem: &SpectralProblem, q: &Mat, lambda: f64, opts: &ScanOptions) -> Result<Eigenpair> {
    let (s, v) = kernel_svd(problem, q, lambda)?;
    let smin = relative_min(&s);
    let smax = s[0];
    let mult = s
        .iter()
        .filter(|&&x| x <= (1e3 * smin * smax).max(opts.accept * smax))
        .count()
        .max(1);
    let k = s.len();
    let z = v.columns(k - mult, mult).into_owned();
    let y = q * z;
    let fs = problem.fundamental(c(lambda, 0.0))?;
    let g = gram(&problem.sys, &problem.layout, &fs, &fs)?;
    let sg = hermitian_part(&(y.adjoint() * g * &y));
    let (vals, vecs) = hermitian_eigen(&sg);
    if vals.first().is_none_or(|&v| v <= 0.0) {
        return Err(Error::theory(format!("eigenvector at {lambda} has zero norm")));
    }
    // η = Y S^{-1/2}
    let mut inv_sqrt = zeros(mult, mult);
    for (i, &val) in vals.iter().enumerate() {
        let col = vecs.column(i);
        inv_sqrt += (col * col.adjoint()) * r(1.0 / val.sqrt());
    }
    let mut eta = &y * inv_sqrt;
    for mut col in eta.column_iter_mut() {
        let mut v = col.clone_owned();
        fix_phase(&mut v);
        col.copy_from(&v);
    }
    let weight = &eta * eta.adjoint();
    Ok(Eigenpair {
        lambda,
        multiplicity: mult,
        vectors: eta,
        weight,
        residual: smin,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TauAtom {
    pub s: f64,
    #[serde(skip)]
    pub weight: Mat,
    /// Gap to the inversion estimate when cross-validated.
    pub cross_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Atoms from the eigenvalue scan, checked against inversion.
    Oracle,
    /// Sampled `Im M` only.
    Inversion,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralMeasureModel {
    pub source: ModelSource,
    pub atoms: Vec<TauAtom>,
    /// `(s, (1/π) Im M(s + iε))` samples.
    #[serde(skip)]
    pub density: Vec<(f64, Mat)>,
    #[serde(skip)]
    pub a_const: Option<Mat>,
    #[serde(skip)]
    pub b_const: Option<Mat>,
}

impl SpectralMeasureModel {
    pub fn empty(source: ModelSource) -> Self {
        SpectralMeasureModel {
            source,
            atoms: vec![],
            density: vec![],
            a_const: None,
            b_const: None,
        }
    }

    pub fn support(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.s).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ModelOptions {
    pub eps: Vec<f64>,
    pub scan: ScanOptions,
    /// Largest allowed gap between oracle and inversion weights.
    pub cross_tol: f64,
    pub density_step: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            eps: DEFAULT_EPS.to_vec(),
            scan: ScanOptions::default(),
            cross_tol: 1e-4,
            density_step: 0.05,
        }
    }
}

/// `τ` restricted to `[lo, hi]`: eigenvalue oracle plus inversion cross-check
/// for regular problems, sampled `Im M` otherwise.
pub fn spectral_measure_model(
    problem: &SpectralProblem,
    lo: f64,
    hi: f64,
    opts: &ModelOptions,
) -> Result<SpectralMeasureModel> {
    if !(lo < hi) {
        return Ok(SpectralMeasureModel::empty(if problem.sys.is_regular() {
            ModelSource::Oracle
        } else {
            ModelSource::Inversion
        }));
    }
    if problem.sys.is_regular() {
        let eigs = eigen_scan(problem, lo, hi, &opts.scan)?;
        let mut atoms = Vec::with_capacity(eigs.len());
        for e in eigs {
            let inv = atom_weight(problem, e.lambda, &opts.eps)?;
            let gap = frob(&(&inv.value - &e.weight));
            if gap > opts.cross_tol {
                return Err(Error::theory(format!(
                    "spectral weight at {} disagrees with its inversion estimate by {gap:.3e}",
                    e.lambda
                )));
            }
            atoms.push(TauAtom {
                s: e.lambda,
                weight: e.weight,
                cross_gap: Some(gap),
            });
        }
        return Ok(SpectralMeasureModel {
            source: ModelSource::Oracle,
            atoms,
            density: vec![],
            a_const: None,
            b_const: None,
        });
    }
    check_eps(&opts.eps)?;
    let e = *opts.eps.last().expect("non-empty");
    let count = ((hi - lo) / opts.density_step).ceil().max(1.0) as usize;
    let density = (0..=count)
        .map(|k| {
            let s = lo + (hi - lo) * k as f64 / count as f64;
            Ok((s, nevanlinna_im(&m_matrix(problem, c(s, e))?) / r(std::f64::consts::PI)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralMeasureModel {
        source: ModelSource::Inversion,
        atoms: vec![],
        density,
        a_const: None,
        b_const: None,
    })
}

/// Constants of `M(λ) = A + Bλ + ∫ (1/(t-λ) - t/(1+t²)) dτ(t)`: `A` is the
/// hermitian part of `M(i)`, `B` the extrapolated `Im M(iy)/y`
/// from two moderate heights.
pub fn fit_constants(problem: &SpectralProblem, model: &mut SpectralMeasureModel) -> Result<()> {
    let a = hermitian_part(&m_matrix(problem, c(0.0, 1.0))?);
    // fundamental solutions grow like exp(|Im λ| length), so stay low
    let ys = [3.0, 4.0];
    let b: Vec<Mat> = ys
        .iter()
        .map(|&y| Ok(nevanlinna_im(&m_matrix(problem, c(0.0, y))?) / r(y)))
        .collect::<Result<Vec<_>>>()?;
    let b_lim = (&b[1] * r(ys[1]) - &b[0] * r(ys[0])) / r(ys[1] - ys[0]);
    model.a_const = Some(a);
    model.b_const = Some(psd_project(&hermitian_part(&b_lim), f64::INFINITY).0);
    Ok(())
}

/// `(‖𝔹(s) T‖ / ‖T‖, ‖(I - ℙ) T‖)` for an atom weight `T`.
pub fn atom_invariants(problem: &SpectralProblem, s: f64, weight: &Mat) -> Result<(f64, f64)> {
    let asm = assemble_f_h(problem, c(s, 0.0))?;
    let scale = frob(weight).max(f64::MIN_POSITIVE);
    let ip = crate::linalg::eye(problem.size()) - &problem.p;
    Ok((frob(&(&asm.b * weight)) / scale, frob(&(ip * weight))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, from_real_rows, real_diag, I};
    use crate::measures::MatrixMeasure;
    use crate::ode::{integrate_dp45, OdeOptions};
    use crate::system::{BoundaryConditions, SystemSpec};
    use std::f64::consts::PI;

    fn jstd() -> Mat {
        from_real_rows(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    fn dirichlet() -> BoundaryConditions {
        BoundaryConditions::new(
            from_real_rows(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            from_real_rows(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        )
        .unwrap()
    }

    fn p1() -> SpectralProblem {
        let sys = SystemSpec::new(
            jstd(),
            MatrixMeasure::zero(2),
            MatrixMeasure::lebesgue(0.0, PI, eye(2)),
            0.0,
            PI,
        )
        .unwrap()
        .with_anchors(vec![0.0]);
        SpectralProblem::new(sys, dirichlet()).unwrap()
    }

    fn p2(alpha: f64) -> SpectralProblem {
        let sys = SystemSpec::new(
            jstd(),
            MatrixMeasure::point_mass(PI / 2.0, real_diag(&[alpha, 0.0])),
            MatrixMeasure::lebesgue(0.0, PI, eye(2)),
            0.0,
            PI,
        )
        .unwrap()
        .with_anchors(vec![0.0]);
        SpectralProblem::new(sys, dirichlet()).unwrap()
    }

    fn p4() -> SpectralProblem {
        let sys = SystemSpec::new(
            jstd(),
            MatrixMeasure::point_mass(0.0, real_diag(&[0.0, 2.0])),
            MatrixMeasure::point_mass(0.0, real_diag(&[2.0, 0.0])),
            -1.0,
            1.0,
        )
        .unwrap();
        let bc = BoundaryConditions::new(from_real_rows(2, 2, &[0.0, -1.0, 1.0, 0.0]), eye(2)).unwrap();
        SpectralProblem::new(sys, bc).unwrap()
    }

    fn v2(a: f64, b: f64) -> Vect {
        Vect::from_vec(vec![c(a, 0.0), c(b, 0.0)])
    }

    /// Shooting oracle for P1: `u' = J⁻¹(λu + f)` from `u(0) = (0, t)`,
    /// with `t` fixed by `u₁(π) = 0` (the map `t ↦ u₁(π)` is affine).
    fn p1_shooting(lambda: C64, f: impl Fn(f64) -> Vect + Copy, xs: &[f64]) -> Vec<Vect> {
        let jinv = from_real_rows(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let rhs = move |x: f64, y: &Mat| &jinv * (y * lambda + Mat::from_column_slice(2, 1, f(x).as_slice()));
        let opts = OdeOptions {
            rtol: 1e-12,
            atol: 1e-14,
            ..OdeOptions::default()
        };
        let shoot = |t: C64, x: f64| -> Vect {
            if x == 0.0 {
                return Vect::from_vec(vec![c(0.0, 0.0), t]);
            }
            let y0 = Mat::from_column_slice(2, 1, &[c(0.0, 0.0), t]);
            let tr = integrate_dp45(&rhs, 0.0, y0, x, &opts).unwrap();
            tr.ys.last().unwrap().column(0).into_owned()
        };
        let e0 = shoot(c(0.0, 0.0), PI)[0];
        let e1 = shoot(c(1.0, 0.0), PI)[0];
        let t = -e0 / (e1 - e0);
        xs.iter().map(|&x| shoot(t, x)).collect()
    }

    #[test]
    fn p1_resolvent_matches_shooting() {
        let p = p1();
        let f = PiecewiseFn::from_fn(2, (0.0, PI), |x| v2(x.cos(), 1.0 + x));
        let xs: Vec<f64> = (0..=12).map(|k| PI * k as f64 / 12.0).collect();
        for lam in [I, c(0.4, 2.0)] {
            let got = resolvent_on_grid(&p, lam, &f, &xs).unwrap();
            let want = p1_shooting(lam, |x| v2(x.cos(), 1.0 + x), &xs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-7, "{lam}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn resolvent_below_support_is_boundary_formula() {
        let p = p1();
        let f = PiecewiseFn::constant(v2(1.0, -1.0), 1.0, 2.0);
        let res = Resolvent::new(&p, I, &f).unwrap();
        let x = 0.5;
        let expect = p.fundamental(I).unwrap().script_u(x, Side::Balanced)
            * (m_matrix(&p, I).unwrap() - p.jinv_blocks() * c(0.5, 0.0))
            * &res.transform;
        assert!((res.eval(x).unwrap() - expect).norm() < 1e-12);
    }

    #[test]
    fn equation_defect_small_for_p1_and_p2() {
        let f = PiecewiseFn::from_fn(2, (0.0, PI), |x| v2(1.0, x.sin()));
        let grid: Vec<f64> = (0..=40).map(|k| PI * k as f64 / 40.0).collect();
        for p in [p1(), p2(2.0)] {
            let res = Resolvent::new(&p, I, &f).unwrap();
            let d = equation_defect(&p, &res, &grid).unwrap();
            assert!(d < 1e-7, "{d}");
        }
    }

    #[test]
    fn resolvent_identity_p1() {
        let p = p1();
        let f = PiecewiseFn::constant(v2(1.0, 0.0), 0.0, PI);
        let res = resolvent_identity_residual(&p, I, c(0.5, 1.5), &f).unwrap();
        assert!(res < 1e-6, "{res}");
    }

    #[test]
    fn p1_eigenvalues_are_integers() {
        let p = p1();
        let eigs = eigen_scan(&p, -5.5, 5.5, &ScanOptions::default()).unwrap();
        let vals: Vec<f64> = eigs.iter().map(|e| e.lambda).collect();
        assert_eq!(vals.len(), 11, "{vals:?}");
        for (k, e) in eigs.iter().enumerate() {
            assert!((e.lambda - (k as f64 - 5.0)).abs() < 1e-8, "{}", e.lambda);
            assert_eq!(e.multiplicity, 1);
            let eta = e.vectors.column(0);
            assert!(eta[0].norm() < 1e-8);
            assert!((eta[1] - c(1.0 / PI.sqrt(), 0.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn p2_eigenvalues_match_transcendental_equation() {
        // s (2c + α s) = 0 with s = sin(λπ/2), c = cos(λπ/2), α = 2
        let p = p2(2.0);
        let eigs = eigen_scan(&p, -3.0, 3.0, &ScanOptions::default()).unwrap();
        let mut want = vec![-2.0, 0.0, 2.0, -2.5, -0.5, 1.5];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<f64> = eigs.iter().map(|e| e.lambda).collect();
        assert_eq!(got.len(), want.len(), "{got:?}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "{g} vs {w}");
        }
    }

    #[test]
    fn p4_single_eigenvalue() {
        let p = p4();
        let eigs = eigen_scan(&p, -3.0, 3.0, &ScanOptions::default()).unwrap();
        assert_eq!(eigs.len(), 1);
        assert!((eigs[0].lambda + 1.0).abs() < 1e-10);
        let e = Vect::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        let tau = &e * e.adjoint() * c(0.5, 0.0);
        assert!(frob(&(&eigs[0].weight - &tau)) < 1e-10);
        let (b_res, p_res) = atom_invariants(&p, eigs[0].lambda, &eigs[0].weight).unwrap();
        assert!(b_res < 1e-6 && p_res < 1e-8);
    }

    #[test]
    fn p1_atom_weights() {
        let p = p1();
        let tau = from_real_rows(2, 2, &[0.0, 0.0, 0.0, 1.0 / PI]);
        for s in [0.0, 1.0, -2.0] {
            let w = atom_weight(&p, s, &DEFAULT_EPS).unwrap();
            assert!(frob(&(&w.value - &tau)) < 1e-4, "{s}: {}", w.value);
        }
        let w = atom_weight(&p, 0.5, &DEFAULT_EPS).unwrap();
        assert!(frob(&w.value) < 1e-6);
    }

    #[test]
    fn p1_stieltjes() {
        let p = p1();
        let tau = from_real_rows(2, 2, &[0.0, 0.0, 0.0, 1.0 / PI]);
        let one = stieltjes_inversion(&p, 0.5, 1.5, &DEFAULT_EPS, &[]).unwrap();
        assert!(frob(&(&one.value - &tau)) < 1e-4, "{}", one.value);
        let none = stieltjes_inversion(&p, 0.2, 0.8, &DEFAULT_EPS, &[]).unwrap();
        assert!(frob(&none.value) < 1e-4);
        let three = stieltjes_inversion(&p, -1.5, 1.5, &DEFAULT_EPS, &[]).unwrap();
        assert!(frob(&(&three.value - &tau * r(3.0))) < 1e-4);
        assert!(stieltjes_inversion(&p, 1.0, 1.5, &DEFAULT_EPS, &[]).is_err());
    }

    #[test]
    fn model_cross_validates() {
        let p = p1();
        let m = spectral_measure_model(&p, -2.5, 2.5, &ModelOptions::default()).unwrap();
        assert_eq!(m.source, ModelSource::Oracle);
        assert_eq!(m.atoms.len(), 5);
        for a in &m.atoms {
            assert!(a.cross_gap.unwrap() < 1e-4);
            assert!((a.weight.trace().re - 1.0 / PI).abs() < 1e-9);
        }
        assert!(spectral_measure_model(&p, 1.0, 1.0, &ModelOptions::default())
            .unwrap()
            .atoms
            .is_empty());
        let p4 = p4();
        let m4 = spectral_measure_model(&p4, -3.0, 3.0, &ModelOptions::default()).unwrap();
        for a in &m4.atoms {
            assert!(frob(&(&p4.p * &a.weight * &p4.p - &a.weight)) < 1e-10);
        }
    }

    #[test]
    fn p1_constants() {
        let p = p1();
        let mut m = SpectralMeasureModel::empty(ModelSource::Oracle);
        fit_constants(&p, &mut m).unwrap();
        let a = m.a_const.unwrap();
        assert!(frob(&(a - from_real_rows(2, 2, &[0.0, 0.5, 0.5, 0.0]))) < 1e-8);
        let b = m.b_const.unwrap();
        assert!(frob(&b) < 1e-6, "{b}");
    }
}
