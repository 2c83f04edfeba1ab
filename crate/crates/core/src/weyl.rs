//! The matrix-valued Nevanlinna function of the block system and its
//! diagnostics.

use serde::Serialize;

use crate::assembly::{assemble_f_h, BlockAssembly, SpectralProblem};
use crate::error::Result;
use crate::linalg::{c, frob, min_eig_hermitian, pinv, singular_values, Mat, C64};

#[derive(Clone, Debug)]
pub struct WeylSample {
    pub lambda: C64,
    pub m: Mat,
    pub m_left: Mat,
    pub m_right: Mat,
    /// `‖Ω(λ)‖_F`, `None` if not computed.
    pub omega_norm: Option<f64>,
    /// `‖(I - 𝔽𝔽†)ℍ𝒥⁻¹ℙ‖_F`
    pub range_residual: f64,
    pub f_sigma_max: f64,
    pub f_sigma_min: f64,
}

impl WeylSample {
    pub fn f_condition(&self) -> f64 {
        self.f_sigma_max / self.f_sigma_min
    }
}

fn weyl_from(problem: &SpectralProblem, asm: &BlockAssembly) -> WeylSample {
    let jinv = problem.jinv_blocks();
    let p = &problem.p;
    let fp = pinv(&asm.f, problem.sys.tol.pinv_rel);
    let right = &jinv * p;
    let m_left = p * &fp * &asm.h_left * &right;
    let m_right = p * &fp * &asm.h_right * &right;
    let m = (&m_left + &m_right) * c(0.5, 0.0);
    let hjp = &asm.h * &right;
    let range_residual = frob(&(&hjp - &asm.f * (&fp * &hjp)));
    let s = singular_values(&asm.f);
    WeylSample {
        lambda: asm.lambda,
        m,
        m_left,
        m_right,
        omega_norm: None,
        range_residual,
        f_sigma_max: s.first().copied().unwrap_or(0.0),
        f_sigma_min: s.last().copied().unwrap_or(0.0),
    }
}

/// `M(λ) = ℙ𝔽†ℍ𝒥⁻¹ℙ` together with its left/right parts. Requires a
/// nonreal `λ`.
pub fn m_function(problem: &SpectralProblem, lambda: C64) -> Result<WeylSample> {
    let asm = assemble_f_h(problem, lambda)?;
    let conj = assemble_f_h(problem, lambda.conj())?;
    let mut sample = weyl_from(problem, &asm);
    sample.omega_norm = Some(frob(&omega_from(problem, &asm, &conj)));
    Ok(sample)
}

/// `M(λ)` only, skipping the symmetry witness. Also accepts real `λ`
/// off the spectrum.
pub fn m_matrix(problem: &SpectralProblem, lambda: C64) -> Result<Mat> {
    Ok(weyl_from(problem, &assemble_f_h(problem, lambda)?).m)
}

fn omega_from(problem: &SpectralProblem, asm: &BlockAssembly, conj: &BlockAssembly) -> Mat {
    let jp = problem.jinv_blocks() * &problem.p;
    &asm.h * &jp * conj.f.adjoint() + &asm.f * (problem.p.clone() * problem.jinv_blocks()) * conj.h.adjoint()
}

#[derive(Clone, Debug, Serialize)]
pub struct OmegaReport {
    pub lambda: C64,
    pub norm: f64,
    /// Frobenius norms of the 5 × 5 row/column blocks (interface,
    /// `𝒬₋`, `𝒬₊`, boundary, null).
    pub block_norms: [[f64; 5]; 5],
    #[serde(skip)]
    pub omega: Mat,
}

impl OmegaReport {
    /// Norm of the first block row and column (the interface rows).
    pub fn interface_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for k in 0..5 {
            s = s.max(self.block_norms[0][k]).max(self.block_norms[k][0]);
        }
        s
    }
}

/// `Ω(λ) = ℍ(λ)𝒥⁻¹ℙ𝔽(λ̄)* + 𝔽(λ)ℙ𝒥⁻¹ℍ(λ̄)*`
pub fn omega(problem: &SpectralProblem, lambda: C64) -> Result<OmegaReport> {
    let asm = assemble_f_h(problem, lambda)?;
    let conj = assemble_f_h(problem, lambda.conj())?;
    let om = omega_from(problem, &asm, &conj);
    let o = asm.rows.offsets();
    let mut block_norms = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            let blk = om.view((o[i], o[j]), (o[i + 1] - o[i], o[j + 1] - o[j])).into_owned();
            block_norms[i][j] = frob(&blk);
        }
    }
    Ok(OmegaReport {
        lambda,
        norm: frob(&om),
        block_norms,
        omega: om,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NevanlinnaPoint {
    pub lambda: C64,
    /// `‖M(λ) - M(λ̄)*‖_F`
    pub symmetry: f64,
    /// Smallest eigenvalue of `(M - M*)/(2i)`.
    pub min_im_eig: f64,
    pub omega_norm: f64,
    pub projector_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NevanlinnaReport {
    pub points: Vec<NevanlinnaPoint>,
    pub max_symmetry: f64,
    pub min_im_eig: f64,
    pub max_omega: f64,
}

impl NevanlinnaReport {
    pub fn passes(&self, sym_tol: f64, eig_tol: f64, omega_tol: f64) -> bool {
        self.max_symmetry <= sym_tol && self.min_im_eig >= -eig_tol && self.max_omega <= omega_tol
    }
}

pub fn im_part_min_eig(m: &Mat) -> f64 {
    let im = (m - m.adjoint()) * c(0.0, -0.5);
    min_eig_hermitian(&im)
}

pub fn nevanlinna_point(problem: &SpectralProblem, lambda: C64) -> Result<NevanlinnaPoint> {
    let up = m_function(problem, lambda)?;
    let down = m_matrix(problem, lambda.conj())?;
    let p = &problem.p;
    let projector_defect = frob(&(p * &up.m - &up.m)).max(frob(&(&up.m * p - &up.m)));
    Ok(NevanlinnaPoint {
        lambda,
        symmetry: frob(&(&up.m - down.adjoint())),
        min_im_eig: im_part_min_eig(&up.m),
        omega_norm: up.omega_norm.unwrap_or(f64::NAN),
        projector_defect,
    })
}

/// Symmetry, positivity and `Ω` over a grid in the upper half-plane.
pub fn nevanlinna_diagnostics(problem: &SpectralProblem, grid: &[C64]) -> Result<NevanlinnaReport> {
    let points = grid
        .iter()
        .map(|&l| nevanlinna_point(problem, l))
        .collect::<Result<Vec<_>>>()?;
    let max_symmetry = points.iter().map(|p| p.symmetry).fold(0.0, f64::max);
    let min_im_eig = points.iter().map(|p| p.min_im_eig).fold(f64::INFINITY, f64::min);
    let max_omega = points.iter().map(|p| p.omega_norm).fold(0.0, f64::max);
    Ok(NevanlinnaReport {
        points,
        max_symmetry,
        min_im_eig,
        max_omega,
    })
}

/// `{s + iε}` for `s` from `lo` to `hi` in steps of `step`.
pub fn upper_grid(lo: f64, hi: f64, step: f64, eps: &[f64]) -> Vec<C64> {
    let count = ((hi - lo) / step).round() as usize;
    let mut out = Vec::new();
    for &e in eps {
        for k in 0..=count {
            out.push(c(lo + k as f64 * step, e));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyticityProbe {
    pub lambda: C64,
    pub steps: Vec<f64>,
    /// Relative gap between the horizontal and vertical central
    /// difference quotients, per step.
    pub cauchy_riemann: Vec<f64>,
    /// Relative gap between derivative estimates at consecutive steps.
    pub step_consistency: Vec<f64>,
}

impl AnalyticityProbe {
    pub fn worst(&self) -> f64 {
        self.cauchy_riemann
            .iter()
            .chain(self.step_consistency.iter())
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Compare `(M(λ+h) - M(λ-h))/2h` with `(M(λ+ih) - M(λ-ih))/2ih`.
pub fn analyticity_probe(problem: &SpectralProblem, lambda: C64, steps: &[f64]) -> Result<AnalyticityProbe> {
    let mut cr = Vec::new();
    let mut derivs: Vec<Mat> = Vec::new();
    for &h in steps {
        let dx = (m_matrix(problem, lambda + h)? - m_matrix(problem, lambda - h)?) / c(2.0 * h, 0.0);
        let dy = (m_matrix(problem, lambda + c(0.0, h))? - m_matrix(problem, lambda - c(0.0, h))?) / c(0.0, 2.0 * h);
        let scale = frob(&dx).max(1e-300);
        cr.push(frob(&(&dx - &dy)) / scale);
        derivs.push((dx + dy) * c(0.5, 0.0));
    }
    let step_consistency = derivs
        .windows(2)
        .map(|w| frob(&(&w[0] - &w[1])) / frob(&w[1]).max(1e-300))
        .collect();
    Ok(AnalyticityProbe {
        lambda,
        steps: steps.to_vec(),
        cauchy_riemann: cr,
        step_consistency,
    })
}

/// `‖ℙM - M‖ + ‖Mℙ - M‖ + ‖M - (Mℓ+Mr)/2‖` for a sample.
pub fn sample_invariants(problem: &SpectralProblem, s: &WeylSample) -> f64 {
    let p = &problem.p;
    let half = (&s.m_left + &s.m_right) * c(0.5, 0.0);
    frob(&(p * &s.m - &s.m)) + frob(&(&s.m * p - &s.m)) + frob(&(&s.m - half))
}
