//! Dense complex linear algebra helpers shared by the channel model, the
//! rate functions and the barrier solver.
//!
//! Hermitian matrix variables are handled through a fixed real coordinate
//! system of dimension `n * n`:
//!
//! ```text
//! [ X_00, X_11, .., X_{n-1,n-1},  Re X_01, Im X_01,  Re X_02, Im X_02, .. ]
//! ```
//!
//! i.e. the diagonal first, then the strictly upper triangle row by row with
//! the real and imaginary parts interleaved. With this basis `B_p`,
//! `X = sum_p x_p B_p` and the linear functional `X -> tr(G X)` has
//! coefficients given by [`trace_functional`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type RMat = DMatrix<f64>;

pub const LN_2: f64 = std::f64::consts::LN_2;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn zeros(rows: usize, cols: usize) -> CMat {
    CMat::zeros(rows, cols)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, c(s, 0.0))
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn real_trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Real part of `tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let x = a[(i, k)] * b[(k, i)];
            acc += x.re;
        }
    }
    acc
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
/// Reads the lower triangle; `None` unless every pivot is real, positive and
/// finite.
pub fn cholesky_lower(a: &CMat) -> Option<CMat> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = zeros(n, n);
    for k in 0..n {
        let mut pivot = a[(k, k)].re;
        for j in 0..k {
            pivot -= l[(k, j)].norm_sqr();
        }
        if !(pivot > 0.0 && pivot.is_finite()) {
            return None;
        }
        let d = pivot.sqrt();
        l[(k, k)] = c(d, 0.0);
        for i in (k + 1)..n {
            let mut z = a[(i, k)];
            for j in 0..k {
                z -= l[(i, j)] * l[(k, j)].conj();
            }
            l[(i, k)] = z / d;
        }
    }
    Some(l)
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn ln_det_pd(a: &CMat) -> Result<f64> {
    let l = cholesky_lower(a).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} log-determinant", a.nrows(), a.ncols()))
    })?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

pub fn log2_det_pd(a: &CMat) -> Result<f64> {
    Ok(ln_det_pd(a)? / LN_2)
}

/// Inverse of a Hermitian positive definite matrix, Hermitian-symmetrized.
pub fn inverse_pd(a: &CMat) -> Result<CMat> {
    let ch = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse".into()))?;
    Ok(hermitian_part(&ch.inverse()))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in descending
/// order. Each eigenvector is rotated so that its first entry with magnitude
/// above `1e-12` is real and positive.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), zeros(0, 0));
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        values.push(eig.eigenvalues[k]);
        let v = eig.eigenvectors.column(k);
        let phase = v
            .iter()
            .find(|z| z.norm() > 1e-12)
            .map(|z| z.conj() / z.norm())
            .unwrap_or(c(1.0, 0.0));
        for r in 0..n {
            vectors[(r, col)] = v[r] * phase;
        }
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigen(a).0.last().copied().unwrap_or(0.0)
}

/// Hermitian square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(a: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(a);
    let scaled = scale_columns(&vecs, vals.iter().map(|v| v.max(0.0).sqrt()));
    hermitian_part(&(&scaled * vecs.adjoint()))
}

/// Projection onto the PSD cone (negative eigenvalues set to zero).
pub fn psd_clamp(a: &CMat) -> CMat {
    let (vals, vecs) = hermitian_eigen(a);
    let scaled = scale_columns(&vecs, vals.iter().map(|v| v.max(0.0)));
    hermitian_part(&(&scaled * vecs.adjoint()))
}

fn scale_columns(m: &CMat, scales: impl Iterator<Item = f64>) -> CMat {
    let mut out = m.clone();
    for (j, s) in scales.enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    out
}

/// `total x len` 0/1 matrix whose rows `offset..offset+len` hold an identity.
pub fn selector(total: usize, offset: usize, len: usize) -> CMat {
    let mut d = zeros(total, len);
    for k in 0..len {
        d[(offset + k, k)] = c(1.0, 0.0);
    }
    d
}

/// Matrix with i.i.d. circularly-symmetric complex Gaussian entries of unit
/// variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(s * re, s * im)
    })
}

/// Random Hermitian PSD matrix `G G^H / cols` (test and benchmark helper).
pub fn random_psd<R: Rng + ?Sized>(n: usize, cols: usize, rng: &mut R) -> CMat {
    let g = complex_gaussian(n, cols, rng);
    hermitian_part(&(&g * g.adjoint())) * c(1.0 / cols.max(1) as f64, 0.0)
}

/// Number of real coordinates of an `n x n` Hermitian matrix.
pub const fn herm_dim(n: usize) -> usize {
    n * n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coord {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

pub(crate) fn coord_list(n: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity(herm_dim(n));
    out.extend((0..n).map(Coord::Diag));
    for a in 0..n {
        for b in (a + 1)..n {
            out.push(Coord::Re(a, b));
            out.push(Coord::Im(a, b));
        }
    }
    out
}

pub fn coords_of(x: &CMat) -> Vec<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(herm_dim(n));
    out.extend((0..n).map(|a| x[(a, a)].re));
    for a in 0..n {
        for b in (a + 1)..n {
            let z = 0.5 * (x[(a, b)] + x[(b, a)].conj());
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

pub fn from_coords(x: &[f64], n: usize) -> CMat {
    debug_assert_eq!(x.len(), herm_dim(n));
    let mut m = zeros(n, n);
    for a in 0..n {
        m[(a, a)] = c(x[a], 0.0);
    }
    let mut k = n;
    for a in 0..n {
        for b in (a + 1)..n {
            let z = c(x[k], x[k + 1]);
            m[(a, b)] = z;
            m[(b, a)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Coefficients `g_p = tr(G B_p)` so that `tr(G X) = sum_p g_p x_p` for
/// Hermitian `G`.
pub fn trace_functional(g: &CMat, out: &mut [f64]) {
    let n = g.nrows();
    debug_assert_eq!(out.len(), herm_dim(n));
    for a in 0..n {
        out[a] = g[(a, a)].re;
    }
    let mut k = n;
    for a in 0..n {
        for b in (a + 1)..n {
            let z = 0.5 * (g[(a, b)] + g[(b, a)].conj());
            out[k] = 2.0 * z.re;
            out[k + 1] = 2.0 * z.im;
            k += 2;
        }
    }
}

/// Isometric real vectorization of a Hermitian `m x m` matrix:
/// `dot(hvec(F), hvec(E)) = tr(F E)`.
pub fn hvec(f: &CMat, out: &mut [f64]) {
    let m = f.nrows();
    debug_assert_eq!(out.len(), herm_dim(m));
    for a in 0..m {
        out[a] = f[(a, a)].re;
    }
    let mut k = m;
    for a in 0..m {
        for b in (a + 1)..m {
            let z = f[(a, b)];
            out[k] = SQRT_2 * z.re;
            out[k + 1] = SQRT_2 * z.im;
            k += 2;
        }
    }
}

/// Writes `hvec(U B_p U^H)` for every coordinate `p` of the inner dimension
/// of `U` (an `m x n` matrix) into consecutive columns of `out`, starting at
/// column `col0`. Used for Hessians of `ln det(C + K X K^H)` with
/// `U = L^{-1} K`.
pub(crate) fn push_congruence_columns(u: &CMat, coords: &[Coord], out: &mut RMat, col0: usize) {
    let m = u.nrows();
    for (p, coord) in coords.iter().enumerate() {
        let col = col0 + p;
        // entry (r, s) of U B_p U^H
        let entry = |r: usize, s: usize| -> Complex64 {
            match *coord {
                Coord::Diag(a) => u[(r, a)] * u[(s, a)].conj(),
                Coord::Re(a, b) => u[(r, a)] * u[(s, b)].conj() + u[(r, b)] * u[(s, a)].conj(),
                Coord::Im(a, b) => {
                    let d = u[(r, a)] * u[(s, b)].conj() - u[(r, b)] * u[(s, a)].conj();
                    c(-d.im, d.re)
                }
            }
        };
        for r in 0..m {
            out[(r, col)] += entry(r, r).re;
        }
        let mut k = m;
        for r in 0..m {
            for s in (r + 1)..m {
                let z = entry(r, s);
                out[(k, col)] += SQRT_2 * z.re;
                out[(k + 1, col)] += SQRT_2 * z.im;
                k += 2;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coordinates_round_trip_and_trace_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..5 {
            let x = random_psd(n, 3, &mut rng) - random_psd(n, 2, &mut rng);
            let g = random_psd(n, 2, &mut rng);
            let xc = coords_of(&x);
            assert!(max_abs_diff(&from_coords(&xc, n), &x) < 1e-14);
            let mut gc = vec![0.0; herm_dim(n)];
            trace_functional(&g, &mut gc);
            let dot: f64 = xc.iter().zip(&gc).map(|(a, b)| a * b).sum();
            assert!((dot - trace_of_product(&g, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn hvec_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_psd(3, 3, &mut rng);
        let b = random_psd(3, 1, &mut rng);
        let (mut va, mut vb) = (vec![0.0; 9], vec![0.0; 9]);
        hvec(&a, &mut va);
        hvec(&b, &mut vb);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert!((dot - trace_of_product(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn congruence_columns_match_explicit_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = complex_gaussian(2, 3, &mut rng);
        let coords = coord_list(3);
        let mut out = RMat::zeros(4, 9);
        push_congruence_columns(&u, &coords, &mut out, 0);
        for (p, _) in coords.iter().enumerate() {
            let mut e = vec![0.0; 9];
            e[p] = 1.0;
            let b = from_coords(&e, 3);
            let f = &u * b * u.adjoint();
            let mut expect = vec![0.0; 4];
            hvec(&f, &mut expect);
            for r in 0..4 {
                assert!((out[(r, p)] - expect[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_psd(4, 4, &mut rng);
        let (vals, vecs) = hermitian_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            vals.iter().map(|v| c(*v, 0.0)),
        ));
        assert!(max_abs_diff(&(&vecs * d * vecs.adjoint()), &a) < 1e-10);
        let s = psd_sqrt(&a);
        assert!(max_abs_diff(&(&s * &s), &a) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite_complex_matrices() {
        // negative pivot with round-off in the imaginary part of the diagonal
        let mut a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 2.0), c(0.0, -2.0), c(1.0, 1e-17)]);
        assert!(cholesky_lower(&a).is_none());
        a[(1, 1)] = c(5.0, 0.0);
        let l = cholesky_lower(&a).unwrap();
        assert!(max_abs_diff(&(&l * l.adjoint()), &a) < 1e-12);
        assert!(cholesky_lower(&scaled_identity(3, -1e-300)).is_none());
    }

    #[test]
    fn log_det_of_scaled_identity() {
        let a = scaled_identity(3, 2.0);
        assert!((log2_det_pd(&a).unwrap() - 3.0).abs() < 1e-14);
        assert!(log2_det_pd(&zeros(2, 2)).is_err());
    }
}
