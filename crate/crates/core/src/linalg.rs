//! Dense complex linear algebra helpers shared by every module.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

/// Projector |v⟩⟨v|.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().copied().sum()
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// ½(M + M†)
pub fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let h = symmetrize(m);
    let (eigenvalues, eigenvectors) = if h.iter().all(|z| z.im == 0.0) {
        let eig = h.map(|z| z.re).symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors.map(re))
    } else {
        let eig = h.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]));
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eigenvectors.column(i));
    }
    (values, vectors)
}

/// Whether the Hermitian part of `m` has no eigenvalue below `-tol`
/// (Cholesky factorization of `m + tol·I`).
pub fn is_psd(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    let shifted = symmetrize(m) + identity(n).map(|z| z * tol);
    if shifted.iter().all(|z| z.im == 0.0) {
        shifted.map(|z| z.re).cholesky().is_some()
    } else {
        shifted.cholesky().is_some()
    }
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.first().copied().unwrap_or(0.0)
}

/// Rebuilds `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (k, &lambda) in values.iter().enumerate() {
        let s = f(lambda);
        for i in 0..n {
            scaled[(i, k)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

/// Square root of a positive semidefinite operator; negative drift is clipped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    spectral_map(&values, &vectors, |l| if l > 0.0 { l.sqrt() } else { 0.0 })
}

/// Deviation ‖U†U − I‖_max.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

/// Deviation ‖V†V − I‖_max for a (possibly rectangular) isometry.
pub fn isometry_defect(v: &CMatrix) -> f64 {
    if v.nrows() < v.ncols() {
        return f64::INFINITY;
    }
    max_abs_diff(&(v.adjoint() * v), &identity(v.ncols()))
}

/// Orthonormal basis of the span of `vectors` (modified Gram–Schmidt with one
/// re-orthogonalisation pass). Vectors whose residual norm falls below `tol`
/// relative to their original norm are dropped.
pub fn orthonormal_basis(vectors: &[CVector], tol: f64) -> Vec<CVector> {
    let mut basis: Vec<CVector> = Vec::new();
    for v in vectors {
        let norm0 = v.norm();
        if norm0 <= tol {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&w);
                w -= b * proj;
            }
        }
        let n = w.norm();
        if n > tol * norm0.max(1.0) {
            basis.push(w / re(n));
        }
    }
    basis
}

/// Extends an orthonormal family in `C^dim` to a full orthonormal basis by
/// sweeping over computational basis vectors.
pub fn complete_basis(family: &[CVector], dim: usize) -> Vec<CVector> {
    let mut all: Vec<CVector> = family.to_vec();
    for k in 0..dim {
        if all.len() == dim {
            break;
        }
        let mut e = CVector::zeros(dim);
        e[k] = re(1.0);
        let mut w = e;
        for _ in 0..2 {
            for b in &all {
                let proj = b.dotc(&w);
                w -= b * proj;
            }
        }
        let n = w.norm();
        if n > 1e-6 {
            all.push(w / re(n));
        }
    }
    all
}

/// Dimension as a power of two exponent, if it is one.
pub fn log2_exact(dim: usize) -> Option<u32> {
    if dim.is_power_of_two() {
        Some(dim.trailing_zeros())
    } else {
        None
    }
}

/// Smallest power of two that is at least `k` (1 for k = 0).
pub fn pow2_ceil(k: usize) -> usize {
    k.max(1).next_power_of_two()
}

pub fn log2(x: f64) -> f64 {
    x.log2()
}

/// Vector of independent standard complex Gaussians.
pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    CVector::from_fn(d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Haar-random unitary via QR of a complex Ginibre matrix with phase fix.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        let phase = r[(j, j)] / re(r[(j, j)].norm());
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}
