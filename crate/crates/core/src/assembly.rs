//! Block system for the coefficient vector of a resolvent representative:
//! interface conditions at partition points, integrability, boundary
//! conditions and the removal of norm-zero solutions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::linalg::{
    block_diag, c, eye, hermitian_eigen, projector, range_basis, rank, singular_values, vstack, zeros, Mat,
};
use crate::measures::{integrate_sandwich, IntervalSpec};
use crate::propagation::{transform_breaks, FundamentalSystem, Layout, Side};
use crate::quadrature::QuadOptions;
use crate::system::{jump_matrices, BoundaryConditions, Endpoint, SystemSpec};

/// A validated system with boundary conditions and its λ-independent data.
#[derive(Clone, Debug)]
pub struct SpectralProblem {
    pub sys: SystemSpec,
    pub bc: BoundaryConditions,
    pub layout: Layout,
    /// `∫ 𝒰(·, 0)* w 𝒰(·, 0)`
    pub gram0: Mat,
    /// Orthonormal basis (columns) of `N₀`.
    pub n0: Mat,
    /// Orthogonal projector onto `N₀^⊥`.
    pub p: Mat,
}

impl SpectralProblem {
    pub fn new(sys: SystemSpec, bc: BoundaryConditions) -> Result<Self> {
        sys.ensure_valid()?;
        sys.check_boundary_conditions(&bc)?;
        let layout = Layout::new(&sys)?;
        let (n0, p, gram0) = null_space_n0(&sys, &layout)?;
        if n0.ncols() > 0 {
            // norm-zero solutions satisfy every admissible self-adjoint condition
            let fs = FundamentalSystem::new(&sys, &layout, c(0.0, 0.0))?;
            let bb = boundary_blocks(&sys, &bc, &fs);
            let res = crate::linalg::max_abs(&((&bb.script_a_plus + &bb.script_a_minus) * &n0));
            if res > 1e-8 {
                return Err(Error::Validation(format!(
                    "boundary conditions do not annihilate norm-zero solutions: residual {res:.3e}"
                )));
            }
        }
        Ok(SpectralProblem {
            sys,
            bc,
            layout,
            gram0,
            n0,
            p,
        })
    }

    /// `n(N+1)`
    pub fn size(&self) -> usize {
        self.sys.n * self.layout.blocks()
    }

    /// `𝒥⁻¹ = diag(J⁻¹, …, J⁻¹)` with `N + 1` blocks.
    pub fn jinv_blocks(&self) -> Mat {
        block_diag(&vec![self.sys.j_inv().clone(); self.layout.blocks()])
    }

    pub fn fundamental(&self, lambda: C64) -> Result<FundamentalSystem> {
        FundamentalSystem::new(&self.sys, &self.layout, lambda)
    }

    pub fn transform_range_dim(&self) -> (usize, bool) {
        let dim_b = rank(&self.gram0, self.sys.tol.rank_rel);
        (dim_b, dim_b == rank(&self.p, 1e-8))
    }
}

/// `(𝔹(λ), 𝔹̃(λ))`, both `nN × n(N+1)`.
pub fn block_b(sys: &SystemSpec, fs: &FundamentalSystem) -> (Mat, Mat) {
    let n = sys.n;
    let nb = fs.blocks.len();
    let npart = nb - 1;
    let mut b = zeros(n * npart, n * nb);
    let mut bt = zeros(n * npart, n * nb);
    for k in 1..nb {
        let x = fs.edges[k];
        let (bm, bp) = jump_matrices(sys, x, fs.lambda);
        // 𝓑(λ)𝓤⁺ on block k, 𝓑(λ̄)*𝓤⁻ = -B₋(λ)𝓤⁻ on block k-1
        let right = bp * fs.blocks[k].at_lower();
        let left = -(bm * fs.blocks[k - 1].at_upper());
        let rows = (k - 1) * n;
        b.view_mut((rows, k * n), (n, n)).copy_from(&right);
        b.view_mut((rows, (k - 1) * n), (n, n)).copy_from(&left);
        bt.view_mut((rows, k * n), (n, n)).copy_from(&right);
        bt.view_mut((rows, (k - 1) * n), (n, n)).copy_from(&(-left));
    }
    (b, bt)
}

/// Gram matrix `∫ 𝒰(·, λ̄)* w 𝒰(·, λ)`.
pub fn gram(sys: &SystemSpec, layout: &Layout, fs: &FundamentalSystem, conj: &FundamentalSystem) -> Result<Mat> {
    let (lo, hi) = sys.window();
    let opts = QuadOptions {
        rel_tol: sys.tol.quad_rel,
        ..QuadOptions::default()
    };
    integrate_sandwich(
        |x| conj.script_u(x, Side::Balanced).adjoint(),
        &sys.w,
        |x| fs.script_u(x, Side::Balanced),
        &IntervalSpec::closed(lo, hi),
        &transform_breaks(sys, layout),
        &opts,
    )
}

/// `N₀ = ker 𝔹(0) ∩ ker G(0)`: returns (orthonormal basis, `ℙ`, `G(0)`).
pub fn null_space_n0(sys: &SystemSpec, layout: &Layout) -> Result<(Mat, Mat, Mat)> {
    let zero = c(0.0, 0.0);
    let fs = FundamentalSystem::new(sys, layout, zero)?;
    let g = gram(sys, layout, &fs, &fs)?;
    let g = (&g + g.adjoint()) * c(0.5, 0.0);
    let (b0, _) = block_b(sys, &fs);
    let size = g.nrows();
    let kb = crate::linalg::null_space(&b0, sys.tol.rank_rel);
    // restrict the Gram form to ker 𝔹(0) and keep its (numerically) zero modes
    let gk = kb.adjoint() * &g * &kb;
    let (vals, vecs) = hermitian_eigen(&gk);
    let gmax = hermitian_eigen(&g).0.last().copied().unwrap_or(0.0).max(0.0);
    let cutoff = sys.tol.rank_rel * gmax.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= cutoff).collect();
    let mut n0 = zeros(size, keep.len());
    for (dst, &i) in keep.iter().enumerate() {
        n0.set_column(dst, &(&kb * vecs.column(i)));
    }
    let p = eye(size) - projector(&n0);
    Ok((n0, p, g))
}

/// `(dim 𝐁, dim 𝐁 == rank ℙ)`
pub fn transform_range_dim(problem: &SpectralProblem) -> (usize, bool) {
    problem.transform_range_dim()
}

fn endpoint_projector(ep: &Endpoint, n: usize, lambda: C64) -> Mat {
    match ep {
        Endpoint::Regular => eye(n),
        Endpoint::Singular(s) => {
            let span = (s.span)(lambda);
            if span.ncols() == 0 {
                return zeros(n, n);
            }
            projector(&range_basis(&span, 1e-12))
        }
    }
}

/// `(P₋(λ), P₊(λ))`
pub fn deficiency_projectors(sys: &SystemSpec, lambda: C64) -> (Mat, Mat) {
    (
        endpoint_projector(&sys.left, sys.n, lambda),
        endpoint_projector(&sys.right, sys.n, lambda),
    )
}

#[derive(Clone, Debug)]
pub struct BoundaryBlocks {
    pub a_minus: Mat,
    pub a_plus: Mat,
    /// `(A₋, 0, …, 0)`
    pub script_a_minus: Mat,
    /// `(0, …, 0, A₊)`
    pub script_a_plus: Mat,
}

/// `A₋ = -G_a U₀⁺(a) P₋`, `A₊ = G_b U_N⁻(b) P₊` and their block rows.
pub fn boundary_blocks(sys: &SystemSpec, bc: &BoundaryConditions, fs: &FundamentalSystem) -> BoundaryBlocks {
    let n = sys.n;
    let nb = fs.blocks.len();
    let (pm, pp) = deficiency_projectors(sys, fs.lambda);
    let left_form = match &sys.left {
        Endpoint::Regular => &bc.g_a * fs.blocks[0].at_lower(),
        Endpoint::Singular(s) => (s.boundary_limit)(fs.lambda),
    };
    let right_form = match &sys.right {
        Endpoint::Regular => &bc.g_b * fs.blocks[nb - 1].at_upper(),
        Endpoint::Singular(s) => (s.boundary_limit)(fs.lambda),
    };
    let a_minus = -(left_form * pm);
    let a_plus = right_form * pp;
    let rows = bc.count();
    let mut script_a_minus = zeros(rows, n * nb);
    script_a_minus.view_mut((0, 0), (rows, n)).copy_from(&a_minus);
    let mut script_a_plus = zeros(rows, n * nb);
    script_a_plus.view_mut((0, (nb - 1) * n), (rows, n)).copy_from(&a_plus);
    BoundaryBlocks {
        a_minus,
        a_plus,
        script_a_minus,
        script_a_plus,
    }
}

/// Row counts of the five stacked blocks of `𝔽` and `ℍ`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct RowLayout {
    pub interface: usize,
    pub q_minus: usize,
    pub q_plus: usize,
    pub boundary: usize,
    pub null: usize,
}

impl RowLayout {
    pub fn offsets(&self) -> [usize; 6] {
        let mut o = [0; 6];
        let sizes = [self.interface, self.q_minus, self.q_plus, self.boundary, self.null];
        for k in 0..5 {
            o[k + 1] = o[k] + sizes[k];
        }
        o
    }

    pub fn total(&self) -> usize {
        self.offsets()[5]
    }
}

/// Per-λ snapshot of the block system.
#[derive(Clone, Debug)]
pub struct BlockAssembly {
    pub lambda: C64,
    pub b: Mat,
    pub b_tilde: Mat,
    pub f: Mat,
    pub h_left: Mat,
    pub h_right: Mat,
    pub h: Mat,
    pub p: Mat,
    pub p_minus: Mat,
    pub p_plus: Mat,
    pub a_minus: Mat,
    pub a_plus: Mat,
    pub rows: RowLayout,
}

/// Build `𝔽`, `ℍℓ`, `ℍr` and `ℍ` from a fundamental system at `λ`.
pub fn assemble_with(problem: &SpectralProblem, fs: &FundamentalSystem) -> Result<BlockAssembly> {
    let sys = &problem.sys;
    let n = sys.n;
    let nb = fs.blocks.len();
    let size = n * nb;
    let lambda = fs.lambda;
    let (b, b_tilde) = block_b(sys, fs);
    // the two halves of 𝔹: 𝓑(λ)𝓤⁺𝔼⊤ and 𝓑(λ̄)*𝓤⁻𝔼⊥
    let b_top = (&b + &b_tilde) * c(0.5, 0.0);
    let b_bot = (&b - &b_tilde) * c(0.5, 0.0);
    let (pm, pp) = deficiency_projectors(sys, lambda);
    let mut q_minus = zeros(n, size);
    q_minus.view_mut((0, 0), (n, n)).copy_from(&(eye(n) - &pm));
    let mut q_plus = zeros(n, size);
    q_plus.view_mut((0, (nb - 1) * n), (n, n)).copy_from(&(eye(n) - &pp));
    let bb = boundary_blocks(sys, &problem.bc, fs);
    let null = eye(size) - &problem.p;
    let zq = zeros(n, size);
    let zn = zeros(size, size);

    let f = vstack(&[&b, &q_minus, &q_plus, &(&bb.script_a_plus + &bb.script_a_minus), &null]);
    let h_left = -vstack(&[&b_bot, &zq, &q_plus, &bb.script_a_plus, &zn]);
    let h_right = vstack(&[&b_top, &q_minus, &zq, &bb.script_a_minus, &zn]);
    let h = (&h_left + &h_right) * c(0.5, 0.0);
    let rows = RowLayout {
        interface: b.nrows(),
        q_minus: n,
        q_plus: n,
        boundary: problem.bc.count(),
        null: size,
    };
    if lambda.im != 0.0 {
        let s = singular_values(&f);
        let smin = s.last().copied().unwrap_or(0.0);
        let smax = s.first().copied().unwrap_or(0.0);
        if s.len() < size || !(smin > sys.tol.rank_rel * smax) {
            return Err(Error::theory(format!(
                "block matrix F({lambda}) lost column rank (smallest singular value {smin:.3e})"
            )));
        }
    }
    Ok(BlockAssembly {
        lambda,
        b,
        b_tilde,
        f,
        h_left,
        h_right,
        h,
        p: problem.p.clone(),
        p_minus: pm,
        p_plus: pp,
        a_minus: bb.a_minus,
        a_plus: bb.a_plus,
        rows,
    })
}

pub fn assemble_f_h(problem: &SpectralProblem, lambda: C64) -> Result<BlockAssembly> {
    let fs = problem.fundamental(lambda)?;
    assemble_with(problem, &fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob, from_real_rows, max_abs, null_space, real_diag, I};
    use crate::measures::MatrixMeasure;
    use crate::system::SingularEndpoint;
    use std::f64::consts::PI;
    use std::sync::Arc;

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

    fn p4() -> SpectralProblem {
        let sys = SystemSpec::new(
            jstd(),
            MatrixMeasure::point_mass(0.0, real_diag(&[0.0, 2.0])),
            MatrixMeasure::point_mass(0.0, real_diag(&[2.0, 0.0])),
            -1.0,
            1.0,
        )
        .unwrap();
        // u(1) = S u(-1) with S a quarter turn
        let bc = BoundaryConditions::new(from_real_rows(2, 2, &[0.0, -1.0, 1.0, 0.0]), eye(2)).unwrap();
        SpectralProblem::new(sys, bc).unwrap()
    }

    #[test]
    fn empty_partition_gives_rowless_b() {
        let p = p1();
        let (b, bt) = block_b(&p.sys, &p.fundamental(I).unwrap());
        assert_eq!(b.shape(), (0, 2));
        assert_eq!(bt.shape(), (0, 2));
    }

    #[test]
    fn p4_b_at_zero() {
        let p = p4();
        let (b, _) = block_b(&p.sys, &p.fundamental(c(0.0, 0.0)).unwrap());
        let expect = from_real_rows(2, 4, &[0.0, 1.0, 0.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        assert!(frob(&(b.clone() - expect)) < 1e-14);
        assert_eq!(null_space(&b, 1e-10).ncols(), 2);
    }

    #[test]
    fn p4_b_matches_piecewise_constant_matching() {
        // brute force: ũ solves 𝔹ũ = 0 iff u = ũ₀ on (-1,0), ũ₁ on (0,1)
        // satisfies the jump relation B₊u⁺ - B₋u⁻ = 0
        let p = p4();
        let lam = c(0.3, 0.7);
        let (b, _) = block_b(&p.sys, &p.fundamental(lam).unwrap());
        let (bm, bp) = jump_matrices(&p.sys, 0.0, lam);
        for k in 0..4 {
            let mut e = crate::linalg::Vect::zeros(4);
            e[k] = c(1.0, 0.0);
            let lhs = &b * &e;
            let um = e.rows(0, 2).into_owned();
            let up = e.rows(2, 2).into_owned();
            let rhs = &bp * up - &bm * um;
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn p4_null_space_and_dimensions() {
        let p = p4();
        assert_eq!(p.n0.ncols(), 1);
        assert_eq!(rank(&p.p, 1e-8), 3);
        assert_eq!(p.transform_range_dim(), (1, false));
        // N₀ is spanned by (1, 1, -1, 1)
        let v = crate::linalg::Vect::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)]) * c(0.5, 0.0);
        assert!((&p.p * v).norm() < 1e-10);
    }

    #[test]
    fn p1_projector_is_identity() {
        let p = p1();
        assert_eq!(p.n0.ncols(), 0);
        assert!(frob(&(p.p.clone() - eye(2))) < 1e-14);
        assert_eq!(p.transform_range_dim(), (2, true));
    }

    #[test]
    fn boundary_conditions_must_annihilate_norm_zero_solutions() {
        let p = p4();
        let bad = BoundaryConditions::new(
            from_real_rows(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            from_real_rows(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            SpectralProblem::new(p.sys.clone(), bad),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_weight_kills_everything() {
        let sys = SystemSpec::new(jstd(), MatrixMeasure::zero(2), MatrixMeasure::zero(2), 0.0, 1.0).unwrap();
        let layout = Layout::new(&sys).unwrap();
        let (n0, p, g) = null_space_n0(&sys, &layout).unwrap();
        assert_eq!(n0.ncols(), 2);
        assert!(max_abs(&p) < 1e-14);
        assert_eq!(rank(&g, 1e-10), 0);
        // no self-adjoint condition survives: Dirichlet is rejected
        assert!(SpectralProblem::new(sys, dirichlet()).is_err());
    }

    #[test]
    fn projector_properties() {
        let p = p4();
        let pp = &p.p;
        assert!(frob(&(pp * pp - pp)) < 1e-12);
        assert!(frob(&(pp.adjoint() - pp)) < 1e-14);
    }

    #[test]
    fn deficiency_projectors_from_spans() {
        let p = p1();
        assert_eq!(deficiency_projectors(&p.sys, I), (eye(2), eye(2)));
        let span = SingularEndpoint {
            span: Arc::new(|_| from_real_rows(2, 1, &[1.0, 0.0])),
            boundary_limit: Arc::new(|_| zeros(1, 2)),
            cutoff: 5.0,
        };
        let sys = SystemSpec::with_endpoints(
            jstd(),
            MatrixMeasure::zero(2),
            MatrixMeasure::lebesgue(0.0, 10.0, eye(2)),
            0.0,
            f64::INFINITY,
            Endpoint::Regular,
            Endpoint::Singular(span),
        )
        .unwrap();
        let (pm, pp) = deficiency_projectors(&sys, I);
        assert_eq!(pm, eye(2));
        assert!(frob(&(pp - real_diag(&[1.0, 0.0]))) < 1e-14);
        let empty = SingularEndpoint {
            span: Arc::new(|_| zeros(2, 0)),
            boundary_limit: Arc::new(|_| zeros(1, 2)),
            cutoff: 5.0,
        };
        let sys0 = SystemSpec::with_endpoints(
            jstd(),
            MatrixMeasure::zero(2),
            MatrixMeasure::lebesgue(0.0, 10.0, eye(2)),
            0.0,
            f64::INFINITY,
            Endpoint::Regular,
            Endpoint::Singular(empty),
        )
        .unwrap();
        assert_eq!(deficiency_projectors(&sys0, I).1, zeros(2, 2));
    }

    #[test]
    fn p1_boundary_blocks_at_zero() {
        let p = p1();
        let bb = boundary_blocks(&p.sys, &p.bc, &p.fundamental(c(0.0, 0.0)).unwrap());
        assert!(frob(&(bb.a_minus - from_real_rows(2, 2, &[-1.0, 0.0, 0.0, 0.0]))) < 1e-12);
        assert!(frob(&(bb.a_plus - from_real_rows(2, 2, &[0.0, 0.0, 1.0, 0.0]))) < 1e-9);
    }

    #[test]
    fn p1_f_at_i_has_invertible_core() {
        let p = p1();
        let asm = assemble_f_h(&p, I).unwrap();
        assert_eq!(asm.f.nrows(), 8);
        let o = asm.rows.offsets();
        assert!(max_abs(&asm.f.rows(0, o[3]).into_owned()) == 0.0);
        assert!(max_abs(&asm.f.rows(o[4], o[5] - o[4]).into_owned()) < 1e-14);
        let core = asm.f.rows(o[3], 2).into_owned();
        assert!(core.determinant().norm() > 1e-3);
    }

    #[test]
    fn p4_f_at_i_full_rank() {
        let p = p4();
        let asm = assemble_f_h(&p, I).unwrap();
        assert_eq!(asm.f.shape(), (12, 4));
        assert_eq!(rank(&asm.f, 1e-10), 4);
    }

    #[test]
    fn lemma_identities_and_structure() {
        for p in [p1(), p4()] {
            for lam in [I, c(0.0, 2.0), c(1.0, 1.0), c(-0.7, 0.0)] {
                let asm = assemble_f_h(&p, lam).unwrap();
                let ip = eye(p.size()) - &p.p;
                let o = asm.rows.offsets();
                for k in 0..4 {
                    let block = asm.f.rows(o[k], o[k + 1] - o[k]).into_owned();
                    assert!(frob(&(block * &ip)) < 1e-9, "block {k} at {lam}");
                }
                let s = &asm.h_left - &asm.h_right + &asm.f;
                assert!(max_abs(&s.rows(0, o[4]).into_owned()) < 1e-12);
                assert!(frob(&(s.rows(o[4], o[5] - o[4]).into_owned() - &ip)) < 1e-12);
                assert!(max_abs(&asm.h.rows(o[4], o[5] - o[4]).into_owned()) == 0.0);
            }
        }
    }
}
