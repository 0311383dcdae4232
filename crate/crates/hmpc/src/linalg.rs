//! Dense linear-algebra helpers shared across the crate: spectral
//! quantities, rank tests, and transmission-zero computation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Eigenvalue of largest modulus, for diagnostics.
pub fn dominant_eigenvalue(a: &DMatrix<f64>) -> Complex64 {
    let eig = a.complex_eigenvalues();
    let mut best = Complex64::new(0.0, 0.0);
    for l in eig.iter() {
        if l.norm() > best.norm() {
            best = *l;
        }
    }
    best
}

/// Induced 2-norm (largest singular value). Zero-sized matrices have norm 0.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values().iter().fold(0.0_f64, |m, &s| m.max(s))
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn symmetric_eig_bounds(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = symmetrize(a).symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in ev.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// True when the symmetric part of `a` is positive semidefinite down to `-tol`.
pub fn is_psd_within(a: &DMatrix<f64>, tol: f64) -> bool {
    symmetric_eig_bounds(a).0 >= -tol
}

/// Numerical rank via singular values, relative cutoff on the largest one.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Rank of a complex matrix given as real and imaginary parts, via the
/// realification [[X, -Y], [Y, X]] whose real rank is exactly twice the
/// complex rank.
pub fn complex_rank(re: &DMatrix<f64>, im: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (m, n) = (re.nrows(), re.ncols());
    assert_eq!((m, n), (im.nrows(), im.ncols()));
    let mut r = DMatrix::<f64>::zeros(2 * m, 2 * n);
    r.view_mut((0, 0), (m, n)).copy_from(re);
    r.view_mut((0, n), (m, n)).copy_from(&(-im));
    r.view_mut((m, 0), (m, n)).copy_from(im);
    r.view_mut((m, n), (m, n)).copy_from(re);
    rank(&r, rel_tol) / 2
}

/// PBH test: rank [A - λI, B] = n at the complex point λ.
pub fn pbh_full_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: Complex64) -> bool {
    let n = a.nrows();
    let p = b.ncols();
    let mut re = DMatrix::<f64>::zeros(n, n + p);
    let mut im = DMatrix::<f64>::zeros(n, n + p);
    re.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        re[(i, i)] -= lambda.re;
        im[(i, i)] = -lambda.im;
    }
    re.view_mut((0, n), (n, p)).copy_from(b);
    complex_rank(&re, &im, 1e-9) == n
}

/// Controllability matrix [B, AB, ..., A^{n-1}B].
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = b.ncols();
    let mut ctrb = DMatrix::<f64>::zeros(n, n * p);
    let mut block = b.clone();
    for j in 0..n {
        ctrb.view_mut((0, j * p), (n, p)).copy_from(&block);
        block = a * block;
    }
    ctrb
}

/// Partial sum Σ_{j=0}^{n_terms-1} ‖AʲB‖₂ in the induced 2-norm.
pub fn power_impulse_norm_sum(a: &DMatrix<f64>, b: &DMatrix<f64>, n_terms: usize) -> f64 {
    let mut total = 0.0;
    let mut block = b.clone();
    for _ in 0..n_terms {
        total += spectral_norm(&block);
        block = a * &block;
    }
    total
}

/// Finite transmission zeros of the square system (A, B, C) with D = 0,
/// computed from the generalized eigenvalues of the system pencil
/// [[A, B], [C, 0]] - z·diag(I, 0) via a shift-and-invert reduction to an
/// ordinary eigenproblem.
///
/// Eigenvalues mapping to |z| > 1e6 are treated as zeros at infinity and
/// dropped.
pub fn transmission_zeros(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Option<Vec<Complex64>> {
    let n = a.nrows();
    let q = b.ncols();
    if c.nrows() != q {
        return None; // pencil trick below needs a square rosenbrock matrix
    }
    let dim = n + q;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, q)).copy_from(b);
    m.view_mut((n, 0), (q, n)).copy_from(c);
    let mut nmat = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        nmat[(i, i)] = 1.0;
    }
    // deterministic shift candidates; any value that is not itself a zero works
    for &sigma in &[
        0.123456789,
        -0.87654321,
        1.51937842,
        -2.46813579,
        3.57913468,
    ] {
        let shifted = &m - &nmat * sigma;
        let Some(lu) = shifted.clone().lu().try_inverse() else {
            continue;
        };
        let w = lu * &nmat;
        let eig = w.complex_eigenvalues();
        let mut zeros = Vec::new();
        for mu in eig.iter() {
            if mu.norm() < 1e-12 {
                continue; // zero at infinity
            }
            let z = Complex64::new(sigma, 0.0) + mu.inv();
            if z.norm() <= 1e6 {
                zeros.push(z);
            }
        }
        return Some(zeros);
    }
    None
}

/// Euclidean norm of the stacked vector pair.
pub fn stacked_norm(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.norm_squared() + b.norm_squared()).sqrt()
}
