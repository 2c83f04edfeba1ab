//! Forward and inverse spectral transforms against a discrete `τ` model.

use std::sync::Arc;

use serde::Serialize;

use crate::assembly::SpectralProblem;
use crate::error::{Error, Result};
use crate::func::PiecewiseFn;
use crate::linalg::{c, hermitian_part, r, Mat, Vect, C64};
use crate::propagation::{forward_transform_with, FundamentalSystem, Side};
use crate::spectral::{w_inner, w_norm, Eigenpair, Resolvent, SpectralMeasureModel};

/// A function on the atoms of a `τ` model.
#[derive(Clone, Debug)]
pub struct TauVector {
    pub points: Vec<f64>,
    pub values: Vec<Vect>,
}

impl TauVector {
    pub fn zeros(model: &SpectralMeasureModel, size: usize) -> Self {
        TauVector {
            points: model.support(),
            values: vec![Vect::zeros(size); model.atoms.len()],
        }
    }

    pub fn sub(&self, other: &TauVector) -> TauVector {
        TauVector {
            points: self.points.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }
}

fn check_aligned(model: &SpectralMeasureModel, v: &TauVector) -> Result<()> {
    if v.points.len() != model.atoms.len() || v.points.iter().zip(&model.atoms).any(|(p, a)| *p != a.s) {
        return Err(Error::config("tau vector does not live on the model's atoms"));
    }
    Ok(())
}

/// `⟨a, b⟩_τ = Σ a(s)* τ({s}) b(s)`
pub fn tau_inner(model: &SpectralMeasureModel, a: &TauVector, b: &TauVector) -> Result<C64> {
    check_aligned(model, a)?;
    check_aligned(model, b)?;
    Ok(model
        .atoms
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(at, (x, y))| (x.adjoint() * &at.weight * y)[(0, 0)])
        .sum())
}

pub fn tau_norm(model: &SpectralMeasureModel, a: &TauVector) -> Result<f64> {
    Ok(tau_inner(model, a, a)?.re.max(0.0).sqrt())
}

/// Largest per-atom seminorm `(d* τ({s}) d)^{1/2}`.
pub fn tau_sup(model: &SpectralMeasureModel, a: &TauVector) -> Result<f64> {
    check_aligned(model, a)?;
    Ok(model
        .atoms
        .iter()
        .zip(&a.values)
        .map(|(at, d)| (d.adjoint() * &at.weight * d)[(0, 0)].re.max(0.0).sqrt())
        .fold(0.0, f64::max))
}

/// Real-`t` fundamental systems at every atom of a model.
#[derive(Clone, Debug)]
pub struct AtomBasis {
    pub points: Vec<f64>,
    pub systems: Vec<FundamentalSystem>,
}

impl AtomBasis {
    pub fn new(problem: &SpectralProblem, model: &SpectralMeasureModel) -> Result<Self> {
        let systems = model
            .atoms
            .iter()
            .map(|a| problem.fundamental(c(a.s, 0.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AtomBasis {
            points: model.support(),
            systems,
        })
    }
}

/// `(ℱf)(t)` at every atom, for `f` supported inside the window.
pub fn forward(problem: &SpectralProblem, basis: &AtomBasis, f: &PiecewiseFn) -> Result<TauVector> {
    let values = basis
        .systems
        .iter()
        .map(|fs| forward_transform_with(&problem.sys, &problem.layout, fs, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(TauVector {
        points: basis.points.clone(),
        values,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Exhaustion {
    /// `‖ℱ(f 1_n) - ℱ(f 1_{n-1})‖_τ` per truncation.
    pub increments: Vec<f64>,
    pub converged: bool,
}

/// `ℱf` at the atoms. When `f` reaches past the computational window the
/// transform is exhausted over windows shrinking geometrically toward the
/// window ends until the increment drops below `tol`.
pub fn extend_forward(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    f: &PiecewiseFn,
    tol: f64,
) -> Result<(TauVector, Exhaustion)> {
    let basis = AtomBasis::new(problem, model)?;
    let (wlo, whi) = problem.sys.window();
    let inside = f.support.0 >= wlo && f.support.1 <= whi;
    if inside {
        return Ok((
            forward(problem, &basis, f)?,
            Exhaustion {
                increments: vec![],
                converged: true,
            },
        ));
    }
    let lo = f.support.0.max(wlo);
    let hi = f.support.1.min(whi);
    let mid = 0.5 * (lo + hi);
    let mut prev: Option<TauVector> = None;
    let mut increments = Vec::new();
    for k in 1..=40 {
        let shrink = 0.5f64.powi(k);
        let (a, b) = (lo + (mid - lo) * shrink, hi - (hi - mid) * shrink);
        let cut = truncate(f, a, b);
        let cur = forward(problem, &basis, &cut)?;
        if let Some(p) = &prev {
            let inc = tau_norm(model, &cur.sub(p))?;
            increments.push(inc);
            if inc <= tol {
                return Ok((
                    cur,
                    Exhaustion {
                        increments,
                        converged: true,
                    },
                ));
            }
            let n = increments.len();
            if n >= 3 && increments[n - 1] >= increments[n - 2] && increments[n - 2] >= increments[n - 3] {
                return Err(Error::accuracy("truncated transforms are not Cauchy", inc));
            }
        }
        prev = Some(cur);
    }
    let last = increments.last().copied().unwrap_or(f64::INFINITY);
    Err(Error::accuracy("transform exhaustion did not reach tolerance", last))
}

/// `f` restricted to `[a, b]`.
pub fn truncate(f: &PiecewiseFn, a: f64, b: f64) -> PiecewiseFn {
    let g = f.clone();
    let lo = f.support.0.max(a);
    let hi = f.support.1.min(b);
    let mut breaks = f.breaks.clone();
    breaks.extend([lo, hi]);
    PiecewiseFn::new(f.dim, (lo, hi), breaks, Arc::new(move |x| g.eval(x)))
}

/// `(𝒢ĝ)(x) = Σ_s 𝒰(x, s) τ({s}) ĝ(s)`
pub fn inverse_transform(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    basis: &AtomBasis,
    g: &TauVector,
) -> Result<PiecewiseFn> {
    check_aligned(model, g)?;
    let terms: Vec<(FundamentalSystem, Vect)> = basis
        .systems
        .iter()
        .zip(model.atoms.iter().zip(&g.values))
        .map(|(fs, (a, v))| (fs.clone(), &a.weight * v))
        .collect();
    let n = problem.sys.n;
    let mut breaks = crate::propagation::transform_breaks(&problem.sys, &problem.layout);
    breaks.retain(|x| x.is_finite());
    Ok(PiecewiseFn::new(
        n,
        problem.sys.window(),
        breaks,
        Arc::new(move |x| {
            let mut acc = Vect::zeros(n);
            for (fs, coef) in &terms {
                acc += fs.script_u(x, Side::Balanced) * coef;
            }
            acc
        }),
    ))
}

/// The eigenfunctions `x ↦ 𝒰(x, λ) η` of an eigenpair.
pub fn eigenfunctions(problem: &SpectralProblem, e: &Eigenpair) -> Result<Vec<PiecewiseFn>> {
    let fs = Arc::new(problem.fundamental(c(e.lambda, 0.0))?);
    let breaks = crate::propagation::transform_breaks(&problem.sys, &problem.layout);
    Ok(e.vectors
        .column_iter()
        .map(|eta| {
            let eta = eta.into_owned();
            let fs = fs.clone();
            PiecewiseFn::new(
                problem.sys.n,
                problem.sys.window(),
                breaks.clone(),
                Arc::new(move |x| fs.script_u(x, Side::Balanced) * &eta),
            )
        })
        .collect())
}

/// `Σ_k u_k ⟨u_k, f⟩_w` over the given eigenpairs.
pub fn eigen_projection(problem: &SpectralProblem, eigs: &[Eigenpair], f: &PiecewiseFn) -> Result<PiecewiseFn> {
    let mut acc = PiecewiseFn::zero(problem.sys.n);
    acc.support = problem.sys.window();
    for e in eigs {
        for u in eigenfunctions(problem, e)? {
            let coef = w_inner(problem, &u, f)?;
            acc = acc.add_scaled(&u, coef);
        }
    }
    Ok(acc)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParsevalReport {
    pub truncation: f64,
    /// `‖ℱf‖²_τ` over atoms with `|s| ≤ K`
    pub tau_norm_sq: f64,
    /// `Σ_{|λ_k| ≤ K} |⟨u_k, f⟩_w|²`
    pub projection_norm_sq: f64,
    pub f_norm_sq: f64,
    /// `|‖ℱf‖²_τ - ‖f‖²_w|`
    pub gap: f64,
    /// `S(K) - S(K/2)`, the missing tail when increments decay like `1/K`.
    pub tail_estimate: f64,
}

/// Parseval check with truncation `K`. `eigs` must cover `[-K, K]` and
/// match the model atoms there.
pub fn parseval_check(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    eigs: &[Eigenpair],
    f: &PiecewiseFn,
    k: f64,
) -> Result<ParsevalReport> {
    let basis = AtomBasis::new(problem, model)?;
    let fhat = forward(problem, &basis, f)?;
    let per_atom: Vec<(f64, f64)> = model
        .atoms
        .iter()
        .zip(&fhat.values)
        .map(|(a, v)| (a.s, (v.adjoint() * &a.weight * v)[(0, 0)].re))
        .collect();
    let partial = |cut: f64| {
        per_atom
            .iter()
            .filter(|(s, _)| s.abs() <= cut * (1.0 + 1e-9))
            .map(|(_, v)| v)
            .sum::<f64>()
    };
    let tau_norm_sq = partial(k);
    let tail_estimate = tau_norm_sq - partial(k / 2.0);
    let mut projection_norm_sq = 0.0;
    for e in eigs.iter().filter(|e| e.lambda.abs() <= k * (1.0 + 1e-9)) {
        for u in eigenfunctions(problem, e)? {
            projection_norm_sq += w_inner(problem, &u, f)?.norm_sqr();
        }
    }
    let f_norm_sq = w_norm(problem, f)?.powi(2);
    Ok(ParsevalReport {
        truncation: k,
        tau_norm_sq,
        projection_norm_sq,
        f_norm_sq,
        gap: (tau_norm_sq - f_norm_sq).abs(),
        tail_estimate,
    })
}

/// `max_s ‖(ℱf)(s) - s (ℱu)(s)‖_{τ({s})}` for a pair with `Ju' + qu = wf`.
pub fn multiplication_check(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    u: &PiecewiseFn,
    f: &PiecewiseFn,
) -> Result<f64> {
    let basis = AtomBasis::new(problem, model)?;
    let uh = forward(problem, &basis, u)?;
    let fh = forward(problem, &basis, f)?;
    let d = TauVector {
        points: uh.points.clone(),
        values: fh
            .values
            .iter()
            .zip(&uh.values)
            .zip(&uh.points)
            .map(|((a, b), &s)| a - b * r(s))
            .collect(),
    };
    tau_sup(model, &d)
}

/// `max_s ‖ℱ(R_λ g)(s) - (ℱg)(s)/(s - λ)‖_{τ({s})}`
pub fn resolvent_transform_residual(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    lambda: C64,
    g: &PiecewiseFn,
) -> Result<f64> {
    let basis = AtomBasis::new(problem, model)?;
    let u = Resolvent::new(problem, lambda, g)?.to_fn();
    let uh = forward(problem, &basis, &u)?;
    let gh = forward(problem, &basis, g)?;
    let d = TauVector {
        points: uh.points.clone(),
        values: uh
            .values
            .iter()
            .zip(&gh.values)
            .zip(&uh.points)
            .map(|((a, b), &s)| a - b / (c(s, 0.0) - lambda))
            .collect(),
    };
    tau_sup(model, &d)
}

/// `‖ℱ𝒢ĝ - ĝ‖_τ`
pub fn round_trip_residual(
    problem: &SpectralProblem,
    model: &SpectralMeasureModel,
    basis: &AtomBasis,
    g: &TauVector,
) -> Result<f64> {
    let h = inverse_transform(problem, model, basis, g)?;
    let back = forward(problem, basis, &h)?;
    tau_norm(model, &back.sub(g))
}

/// Gram matrix `[⟨ℱ𝒢e_i, e_j⟩]` restricted to `ran τ`; its smallest
/// eigenvalue bounds `‖𝒢ĝ‖_w / ‖ĝ‖_τ` from below.
pub fn inverse_gram_min(problem: &SpectralProblem, model: &SpectralMeasureModel, basis: &AtomBasis) -> Result<f64> {
    let mut funcs = Vec::new();
    let size = problem.size();
    for (i, a) in model.atoms.iter().enumerate() {
        let q = crate::linalg::range_basis(&a.weight, 1e-10);
        let w = hermitian_part(&(q.adjoint() * &a.weight * &q));
        let (vals, vecs) = crate::linalg::hermitian_eigen(&w);
        for (k, &v) in vals.iter().enumerate() {
            // ĝ with unit τ-norm supported on atom i
            let coef = &q * vecs.column(k) / r(v.sqrt());
            let mut g = TauVector::zeros(model, size);
            g.values[i] = coef;
            funcs.push(inverse_transform(problem, model, basis, &g)?);
        }
    }
    let m = funcs.len();
    if m == 0 {
        return Ok(1.0);
    }
    let mut gram = Mat::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = w_inner(problem, &funcs[i], &funcs[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v.conj();
        }
    }
    Ok(crate::linalg::min_eig_hermitian(&gram))
}
