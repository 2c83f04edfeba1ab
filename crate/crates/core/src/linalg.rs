//! Dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;
pub type Vect = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> Mat {
    Mat::zeros(rows, cols)
}

/// Build a complex matrix from real row-major data.
pub fn from_real_rows(rows: usize, cols: usize, data: &[f64]) -> Mat {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| r(data[i * cols + j]))
}

pub fn from_rows(rows: usize, cols: usize, data: &[C64]) -> Mat {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

pub fn real_diag(d: &[f64]) -> Mat {
    let n = d.len();
    Mat::from_fn(n, n, |i, j| if i == j { r(d[i]) } else { C64::default() })
}

/// Stack matrices vertically. All blocks must share the column count.
pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(*b);
        at += b.nrows();
    }
    out
}

/// Stack matrices horizontally. All blocks must share the row count.
pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut ri, mut ci) = (0, 0);
    for b in blocks {
        out.view_mut((ri, ci), (b.nrows(), b.ncols())).copy_from(b);
        ri += b.nrows();
        ci += b.ncols();
    }
    out
}

pub fn hermitian_part(m: &Mat) -> Mat {
    (m + m.adjoint()) * r(0.5)
}

/// `(M - M*) / 2i`, the hermitian "imaginary part".
pub fn im_part(m: &Mat) -> Mat {
    (m - m.adjoint()) * c(0.0, -0.5)
}

pub fn frob(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Singular value decomposition with descending singular values and a full
/// right factor (`v` is `ncols × ncols`).
pub struct FullSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

pub fn full_svd(m: &Mat) -> FullSvd {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return FullSvd {
            u: zeros(rows, 0),
            s: vec![],
            v: zeros(0, 0),
        };
    }
    // pad with zero rows so the right factor is square
    let padded = if rows < cols {
        let mut p = zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut u_sorted = zeros(rows, k);
    let mut v_sorted = zeros(cols, k);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..rows {
            u_sorted[(i, dst)] = u[(i, src)];
        }
        for j in 0..cols {
            v_sorted[(j, dst)] = vt[(src, j)].conj();
        }
    }
    FullSvd {
        u: u_sorted,
        s,
        v: v_sorted,
    }
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

fn cutoff(s: &[f64], rel_tol: f64) -> f64 {
    rel_tol * s.first().copied().unwrap_or(0.0)
}

/// Numerical rank with threshold `rel_tol · σ_max`.
pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let tol = cutoff(&s, rel_tol);
    s.iter().filter(|&&x| x > tol && x > 0.0).count()
}

/// Orthonormal basis (as columns) of the kernel of `m`.
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return eye(cols);
    }
    let svd = full_svd(m);
    let tol = cutoff(&svd.s, rel_tol);
    let keep: Vec<usize> = (0..cols)
        .filter(|&j| svd.s.get(j).is_none_or(|&x| x <= tol || x == 0.0))
        .collect();
    let mut out = zeros(cols, keep.len());
    for (dst, &j) in keep.iter().enumerate() {
        out.set_column(dst, &svd.v.column(j));
    }
    out
}

/// Orthonormal basis (as columns) of the range of `m`.
pub fn range_basis(m: &Mat, rel_tol: f64) -> Mat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return zeros(m.nrows(), 0);
    }
    let svd = full_svd(m);
    let tol = cutoff(&svd.s, rel_tol);
    let keep: Vec<usize> = (0..svd.s.len())
        .filter(|&j| svd.s[j] > tol && svd.s[j] > 0.0 && j < m.nrows())
        .collect();
    let mut out = zeros(m.nrows(), keep.len());
    for (dst, &j) in keep.iter().enumerate() {
        out.set_column(dst, &svd.u.column(j));
    }
    out
}

/// Orthogonal projector `Q Q*` onto the span of orthonormal columns `q`.
pub fn projector(q: &Mat) -> Mat {
    q * q.adjoint()
}

/// Moore–Penrose pseudoinverse, singular values below `rel_tol · σ_max`
/// treated as zero.
pub fn pinv(m: &Mat, rel_tol: f64) -> Mat {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u");
    let vt = svd.v_t.expect("v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax;
    let mut out = zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            let vk = vt.row(k).adjoint();
            let uk = u.column(k).adjoint();
            out += (vk * uk) * r(1.0 / s);
        }
    }
    out
}

/// Condition number in the 2-norm (infinite for singular matrices).
pub fn cond(m: &Mat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Eigen-decomposition of a hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], zeros(0, 0));
    }
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of the hermitian part of `m` (`+∞` when empty).
pub fn min_eig_hermitian(m: &Mat) -> f64 {
    hermitian_eigen(m).0.first().copied().unwrap_or(f64::INFINITY)
}

/// Hermitian PSD clip: symmetrize, then zero eigenvalues in `[-clip, 0)`.
/// Returns the projected matrix and the most negative eigenvalue seen.
pub fn psd_project(m: &Mat, clip: f64) -> (Mat, f64) {
    let (vals, vecs) = hermitian_eigen(m);
    let most_negative = vals.first().copied().unwrap_or(0.0);
    let n = vals.len();
    let mut out = zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let lam = if lam < 0.0 && lam >= -clip { 0.0 } else { lam };
        if lam != 0.0 {
            let v = vecs.column(k);
            out += (v * v.adjoint()) * r(lam);
        }
    }
    (out, most_negative)
}

/// Roots of `Σ coeffs[k] λ^k` via companion-matrix eigenvalues. Leading
/// coefficients below `zero_tol` are dropped first.
pub fn poly_roots(coeffs: &[C64], zero_tol: f64) -> Vec<C64> {
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1].norm() <= zero_tol {
        deg -= 1;
    }
    if deg <= 1 {
        return vec![];
    }
    let d = deg - 1;
    let lead = coeffs[d];
    let mut comp = zeros(d, d);
    for i in 1..d {
        comp[(i, i - 1)] = r(1.0);
    }
    for i in 0..d {
        comp[(i, d - 1)] = -coeffs[i] / lead;
    }
    comp.schur()
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default()
}

/// Evaluate a polynomial with ascending complex coefficients.
pub fn poly_eval(coeffs: &[C64], x: C64) -> C64 {
    coeffs.iter().rev().fold(C64::default(), |acc, &a| acc * x + a)
}

/// Rescale so the entry with the largest modulus is real and positive.
pub fn fix_phase(v: &mut Vect) {
    let mut best = 0;
    let mut mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison with a small slack keeps the choice stable under rounding
        if z.norm() > mag * (1.0 + 1e-9) {
            mag = z.norm();
            best = i;
        }
    }
    if mag > 0.0 {
        let phase = v[best] / v[best].norm();
        *v /= phase;
    }
}
