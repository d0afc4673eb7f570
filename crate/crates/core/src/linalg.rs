use nalgebra::DMatrix;
use num_complex::Complex64 as C;

pub(crate) type CMat = DMatrix<C>;

pub(crate) fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == C::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub(crate) fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let h = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Square root of a positive semidefinite Hermitian matrix; negative
/// eigenvalues from rounding are clipped to zero.
pub(crate) fn psd_sqrt(m: &CMat) -> CMat {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = C::new(eig.eigenvalues[i].max(0.0).sqrt(), 0.0);
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

pub(crate) fn nuclear_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

pub(crate) fn trace(m: &CMat) -> C {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// `tr(a·b)` without forming the product.
pub(crate) fn trace_product(a: &CMat, b: &CMat) -> C {
    let mut s = C::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}
