//! Dense complex linear algebra used throughout the crate.
//!
//! [`ComplexMatrix`] wraps an `nalgebra` dynamic matrix of `Complex64`.
//! The decompositions here fix the conventions the rest of the crate relies
//! on: singular values and Hermitian eigenvalues come back sorted in
//! descending order, and the phase of orthonormal factors is left
//! unconstrained, so callers only ever compare spans, ranks and norms.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest one are numerical zeros
/// for decisions made inside the library (not the experiment threshold).
pub const RANK_RTOL: f64 = 1e-12;

const HERMITIAN_RTOL: f64 = 1e-9;
const SVD_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<Complex64>);

impl ComplexMatrix {
    /// Builds a matrix from row-major entries. Every entry must be finite.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::contract(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Self::try_from_dmatrix(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn try_from_dmatrix(m: DMatrix<Complex64>) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite entry in {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    /// Wraps results of internal arithmetic, which are finite whenever the
    /// operands are.
    pub(crate) fn wrap(m: DMatrix<Complex64>) -> Self {
        Self(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// First `cols` columns of the `rows`-dimensional identity.
    pub fn eye(rows: usize, cols: usize) -> Self {
        Self(DMatrix::identity(rows, cols))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self(DMatrix::from_fn(rows, cols, |i, j| f(i, j)))
    }

    pub fn from_real_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self(DMatrix::from_fn(rows, cols, |i, j| Complex64::new(f(i, j), 0.0)))
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_real_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.0[(i, j)] = value;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<Complex64> {
        self.0
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn column(&self, j: usize) -> Self {
        Self(self.0.columns(j, 1).into_owned())
    }

    pub fn columns(&self, start: usize, count: usize) -> Self {
        Self(self.0.columns(start, count).into_owned())
    }

    pub fn rows_range(&self, start: usize, count: usize) -> Self {
        Self(self.0.rows(start, count).into_owned())
    }

    pub fn set_column(&mut self, j: usize, col: &ComplexMatrix) {
        self.0.set_column(j, &col.0.column(0));
    }

    /// Squared Euclidean norm of each column.
    pub fn column_norms_sqr(&self) -> Vec<f64> {
        self.0
            .column_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        (0..self.rows()).all(|i| (0..self.cols()).all(|j| i == j || self.0[(i, j)].norm() <= tol))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn hcat(rows: usize, parts: &[&ComplexMatrix]) -> Self {
        let cols = parts.iter().map(|p| p.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            assert_eq!(p.rows(), rows, "hcat row mismatch");
            out.columns_mut(at, p.cols()).copy_from(&p.0);
            at += p.cols();
        }
        Self(out)
    }

    pub fn vcat(cols: usize, parts: &[&ComplexMatrix]) -> Self {
        let rows = parts.iter().map(|p| p.rows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            assert_eq!(p.cols(), cols, "vcat column mismatch");
            out.rows_mut(at, p.rows()).copy_from(&p.0);
            at += p.rows();
        }
        Self(out)
    }

    pub fn blkdiag(parts: &[&ComplexMatrix]) -> Self {
        let rows = parts.iter().map(|p| p.rows()).sum();
        let cols = parts.iter().map(|p| p.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for p in parts {
            out.view_mut((r, c), (p.rows(), p.cols())).copy_from(&p.0);
            r += p.rows();
            c += p.cols();
        }
        Self(out)
    }

    /// Orthogonal projector onto the column span of an orthonormal basis.
    pub fn projector(&self) -> Self {
        Self(&self.0 * self.0.adjoint())
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix(-&self.0)
    }
}

/// Serialized as `{rows, cols, data}` with `data` a row-major list of `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixDoc {
            rows: self.rows(),
            cols: self.cols(),
            data: self.row_major().iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = MatrixDoc::deserialize(d)?;
        let entries: Vec<Complex64> = doc.data.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        ComplexMatrix::from_row_major(doc.rows, doc.cols, &entries).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x p` with orthonormal columns, `p = min(rows, cols)`.
    pub left: ComplexMatrix,
    /// Descending, nonnegative.
    pub singular_values: Vec<f64>,
    /// `cols x p` with orthonormal columns.
    pub right: ComplexMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let p = self.singular_values.len();
        let mut scaled = self.left.clone();
        for j in 0..p {
            let s = self.singular_values[j];
            for i in 0..scaled.rows() {
                let z = scaled.get(i, j);
                scaled.set(i, j, z * s);
            }
        }
        &scaled * &self.right.adjoint()
    }
}

/// Full thin SVD, `m = left * diag(s) * right^H`.
pub fn svd(m: &ComplexMatrix) -> Result<Svd> {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return Ok(Svd {
            left: ComplexMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            right: ComplexMatrix::zeros(cols, 0),
        });
    }
    let dec = m
        .0
        .clone()
        .try_svd(true, true, SVD_EPS, 0)
        .ok_or(Error::Numerical { op: "svd", rows, cols })?;
    let u = dec.u.expect("left vectors requested");
    let v = dec.v_t.expect("right vectors requested").adjoint();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let mut left = DMatrix::zeros(rows, p);
    let mut right = DMatrix::zeros(cols, p);
    let mut values = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &v.column(src));
        values.push(dec.singular_values[src].max(0.0));
    }
    Ok(Svd {
        left: ComplexMatrix(left),
        singular_values: values,
        right: ComplexMatrix(right),
    })
}

/// Singular values only, descending.
pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let (rows, cols) = m.shape();
    if rows.min(cols) == 0 {
        return Ok(Vec::new());
    }
    let mut s: Vec<f64> = m
        .0
        .clone()
        .try_svd(false, false, SVD_EPS, 0)
        .ok_or(Error::Numerical { op: "svd", rows, cols })?
        .singular_values
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct HermEig {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: ComplexMatrix,
}

/// Eigendecomposition of a Hermitian matrix. Inputs within a relative
/// `1e-9` of Hermitian are symmetrized first.
pub fn herm_eig(m: &ComplexMatrix) -> Result<HermEig> {
    let h = checked_hermitian(m)?;
    let n = h.rows();
    let dec = SymmetricEigen::try_new(h.0, SVD_EPS, 0).ok_or(Error::Numerical {
        op: "hermitian eigendecomposition",
        rows: n,
        cols: n,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[b].total_cmp(&dec.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &dec.eigenvectors.column(src));
        values.push(dec.eigenvalues[src]);
    }
    Ok(HermEig {
        eigenvalues: values,
        eigenvectors: ComplexMatrix(vectors),
    })
}

fn checked_hermitian(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    if m.rows() != m.cols() {
        return Err(Error::contract(format!(
            "hermitian eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let skew = (&m.0 - m.0.adjoint()).norm();
    let scale = m.frobenius_norm();
    if skew > HERMITIAN_RTOL * scale {
        return Err(Error::contract(format!(
            "matrix is not hermitian (skew norm {skew:.3e}, norm {scale:.3e})"
        )));
    }
    Ok(m.hermitian_part())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig_herm(m: &ComplexMatrix) -> Result<f64> {
    let eig = herm_eig(m)?;
    Ok(eig.eigenvalues.last().copied().unwrap_or(f64::INFINITY))
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn qr_orthonormalize(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::contract(format!(
            "cannot orthonormalize {cols} columns in dimension {rows}"
        )));
    }
    if cols == 0 {
        return Ok(m.clone());
    }
    let s = singular_values(m)?;
    if !(s[cols - 1] > RANK_RTOL * s[0]) {
        return Err(Error::Degenerate {
            what: format!("{rows}x{cols} matrix is not full column rank"),
            user: None,
        });
    }
    Ok(ComplexMatrix(m.0.clone().qr().q()))
}

/// Number of singular values strictly greater than `tau`.
pub fn rank_tol(m: &ComplexMatrix, tau: f64) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!("rank threshold must be positive, got {tau}")));
    }
    Ok(singular_values(m)?.iter().filter(|&&s| s > tau).count())
}

/// Rank decided with the library-internal relative threshold.
pub fn numerical_rank(m: &ComplexMatrix) -> Result<usize> {
    let s = singular_values(m)?;
    let Some(&top) = s.first() else { return Ok(0) };
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > RANK_RTOL * top).count())
}

/// Rank with singular values compared against `RANK_RTOL * scale`, for
/// matrices whose natural magnitude is known from their factors.
pub fn numerical_rank_scaled(m: &ComplexMatrix, scale: f64) -> Result<usize> {
    let s = singular_values(m)?;
    Ok(s.iter().filter(|&&v| v > RANK_RTOL * scale).count())
}

pub fn nuclear_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        })
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&ComplexMatrix::identity(2)).unwrap();
        assert!(close(s.singular_values[0], 1.0, 1e-14) && close(s.singular_values[1], 1.0, 1e-14));
        let s = svd(&ComplexMatrix::diag_real(&[3.0, 4.0])).unwrap();
        assert!(close(s.singular_values[0], 4.0, 1e-13));
        assert!(close(s.singular_values[1], 3.0, 1e-13));
    }

    #[test]
    fn svd_reconstructs_wide_matrix() {
        let m = random(4, 8, 1);
        let s = svd(&m).unwrap();
        let err = (&s.reconstruct() - &m).max_abs();
        assert!(err <= 1e-10 * m.max_abs(), "reconstruction error {err}");
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let gram = &s.left.adjoint() * &s.left;
        assert!((&gram - &ComplexMatrix::identity(4)).max_abs() < 1e-12);
        let gram = &s.right.adjoint() * &s.right;
        assert!((&gram - &ComplexMatrix::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn herm_eig_basic_cases() {
        let e = herm_eig(&ComplexMatrix::identity(3)).unwrap();
        assert!(e.eigenvalues.iter().all(|&v| close(v, 1.0, 1e-14)));
        let e = herm_eig(&ComplexMatrix::diag_real(&[5.0, -2.0])).unwrap();
        assert!(close(e.eigenvalues[0], 5.0, 1e-14) && close(e.eigenvalues[1], -2.0, 1e-14));
    }

    #[test]
    fn herm_eig_matches_squared_singular_values() {
        let a = random(6, 4, 2);
        let m = &a.adjoint() * &a;
        let e = herm_eig(&m).unwrap();
        let s = singular_values(&a).unwrap();
        for (lam, sv) in e.eigenvalues.iter().zip(&s) {
            assert!(*lam >= -1e-12);
            assert!((lam - sv * sv).abs() <= 1e-8 * (1.0 + sv * sv));
        }
        for i in 0..4 {
            let v = e.eigenvectors.column(i);
            let r = &(&m * &v) - &v.scale(e.eigenvalues[i]);
            assert!(r.frobenius_norm() <= 1e-9 * m.frobenius_norm());
        }
    }

    #[test]
    fn herm_eig_rejects_bad_input() {
        assert!(matches!(herm_eig(&random(2, 3, 3)), Err(Error::Contract(_))));
        assert!(matches!(herm_eig(&random(3, 3, 3)), Err(Error::Contract(_))));
    }

    #[test]
    fn qr_cases() {
        let mut m = ComplexMatrix::zeros(3, 1);
        m.set(0, 0, Complex64::new(2.0, 0.0));
        let q = qr_orthonormalize(&m).unwrap();
        assert!(close(q.get(0, 0).norm(), 1.0, 1e-14));

        let m = random(8, 3, 4);
        let q = qr_orthonormalize(&m).unwrap();
        assert!((&(&q.adjoint() * &q) - &ComplexMatrix::identity(3)).max_abs() < 1e-10);
        let q_ref = svd(&m).unwrap().left;
        assert!((&q.projector() - &q_ref.projector()).frobenius_norm() < 1e-9);

        let qq = qr_orthonormalize(&q).unwrap();
        assert!((&qq.projector() - &q.projector()).frobenius_norm() < 1e-9);
    }

    #[test]
    fn qr_rejects_rank_deficient() {
        let c = random(5, 1, 5);
        let m = ComplexMatrix::hcat(5, &[&c, &c.scale(2.0)]);
        assert!(matches!(qr_orthonormalize(&m), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn rank_and_nuclear() {
        assert_eq!(rank_tol(&ComplexMatrix::zeros(3, 3), 1e-6).unwrap(), 0);
        assert_eq!(rank_tol(&ComplexMatrix::identity(3), 1e-6).unwrap(), 3);
        assert_eq!(rank_tol(&ComplexMatrix::diag_real(&[1.0, 1e-9]), 1e-6).unwrap(), 1);
        assert!(rank_tol(&ComplexMatrix::identity(2), 0.0).is_err());

        assert!(close(nuclear_norm(&ComplexMatrix::identity(4)).unwrap(), 4.0, 1e-13));
        assert!(close(nuclear_norm(&ComplexMatrix::diag_real(&[3.0, 4.0])).unwrap(), 7.0, 1e-13));
        let u = random(4, 1, 6);
        let u = u.scale(1.0 / u.frobenius_norm());
        let v = random(3, 1, 7);
        let v = v.scale(1.0 / v.frobenius_norm());
        let r1 = (&u * &v.adjoint()).scale(5.0);
        assert!(close(nuclear_norm(&r1).unwrap(), 5.0, 1e-12));
    }

    #[test]
    fn min_eig_cases() {
        assert!(close(min_eig_herm(&ComplexMatrix::identity(2)).unwrap(), 1.0, 1e-14));
        assert!(close(min_eig_herm(&ComplexMatrix::diag_real(&[0.1, 7.0])).unwrap(), 0.1, 1e-14));
        let a = random(7, 3, 8);
        let m = &a.adjoint() * &a;
        let lam = min_eig_herm(&m).unwrap();
        let smin = *singular_values(&a).unwrap().last().unwrap();
        assert!(lam > 0.0);
        assert!((lam - smin * smin).abs() <= 1e-9 * lam.max(1.0));
    }

    #[test]
    fn empty_matrices() {
        let e = ComplexMatrix::zeros(2, 0);
        assert_eq!(nuclear_norm(&e).unwrap(), 0.0);
        assert_eq!(rank_tol(&e, 1e-6).unwrap(), 0);
    }

    #[test]
    fn rejects_non_finite() {
        let bad = [Complex64::new(f64::NAN, 0.0)];
        assert!(ComplexMatrix::from_row_major(1, 1, &bad).is_err());
    }
}
