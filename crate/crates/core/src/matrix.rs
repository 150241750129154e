//! Hermitian positive definite matrix algebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance on `||A - A*||` accepted before symmetrizing.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues below `EIG_FLOOR * lambda_max` are rejected.
pub const EIG_FLOOR: f64 = 1e-12;

/// Hermitian positive definite `m x m` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianPd {
    mat: CMatrix,
}

impl HermitianPd {
    /// Symmetrizes `a` if it is Hermitian within tolerance, then checks
    /// positive definiteness.
    pub fn new(a: CMatrix) -> Result<Self> {
        let h = symmetrize(a)?;
        let (vals, _) = hermitian_eigen(&h);
        check_spectrum(&vals)?;
        Ok(Self { mat: h })
    }

    /// Skips the definiteness check; the caller guarantees it.
    pub(crate) fn new_unchecked(mat: CMatrix) -> Self {
        Self { mat }
    }

    pub fn identity(m: usize) -> Self {
        Self {
            mat: CMatrix::identity(m, m),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        let m = d.len();
        let mut a = CMatrix::zeros(m, m);
        for (i, &v) in d.iter().enumerate() {
            a[(i, i)] = Complex64::new(v, 0.0);
        }
        Self::new(a)
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let mut a = CMatrix::zeros(m, m);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::ShapeMismatch("matrix is not square".into()));
            }
            for (j, &v) in r.iter().enumerate() {
                a[(i, j)] = Complex64::new(v, 0.0);
            }
        }
        Self::new(a)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    #[inline]
    pub fn as_matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// Ascending eigenvalues and matching orthonormal eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        hermitian_eigen(&self.mat)
    }

    pub fn power(&self, alpha: f64) -> Result<HermitianPd> {
        matrix_power(self, alpha)
    }

    pub fn inverse(&self) -> Result<HermitianPd> {
        matrix_power(self, -1.0)
    }

    /// Scalar multiple; `c` must be positive.
    pub fn scaled(&self, c: f64) -> HermitianPd {
        assert!(c > 0.0);
        Self {
            mat: self.mat.map(|z| z * c),
        }
    }

    /// `U* A U` for unitary `U`.
    pub fn conjugated(&self, u: &CMatrix) -> Result<HermitianPd> {
        HermitianPd::new(u.adjoint() * &self.mat * u)
    }
}

fn symmetrize(a: CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::ShapeMismatch("matrix is not square".into()));
    }
    let adj = a.adjoint();
    let scale = frobenius(&a).max(f64::MIN_POSITIVE);
    let asym = frobenius(&(&a - &adj));
    if asym > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(asym / scale));
    }
    Ok((&a + adj).map(|z| z * 0.5))
}

fn check_spectrum(vals: &[f64]) -> Result<()> {
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() || top <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    if vals.iter().any(|&v| !(v > EIG_FLOOR * top)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigendecomposition of a Hermitian matrix, ascending eigenvalues.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let m = a.nrows();
    if m == 1 {
        return (vec![a[(0, 0)].re], CMatrix::identity(1, 1));
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Rebuild `P diag(f(lambda)) P*` from an eigendecomposition.
fn spectral_map(vals: &[f64], vecs: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let m = vals.len();
    let mut scaled = vecs.clone();
    for (c, &v) in vals.iter().enumerate() {
        let s = f(v);
        for r in 0..m {
            scaled[(r, c)] *= s;
        }
    }
    let out = scaled * vecs.adjoint();
    // exact Hermitian symmetry
    (&out + out.adjoint()).map(|z| z * 0.5)
}

/// Spectral power `A^alpha` of a positive definite matrix.
pub fn matrix_power(a: &HermitianPd, alpha: f64) -> Result<HermitianPd> {
    let (vals, vecs) = a.eigen();
    check_spectrum(&vals)?;
    if a.dim() == 1 {
        let v = vals[0].powf(alpha);
        return Ok(HermitianPd::new_unchecked(CMatrix::from_element(
            1,
            1,
            Complex64::new(v, 0.0),
        )));
    }
    let out = spectral_map(&vals, &vecs, |l| l.powf(alpha));
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(HermitianPd::new_unchecked(out))
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> f64 {
    let (r, c) = a.shape();
    if r == 1 && c == 1 {
        return a[(0, 0)].norm();
    }
    if r == 2 && c == 2 {
        return op_norm_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    }
    let gram = a.adjoint() * a;
    let (vals, _) = hermitian_eigen(&gram);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Closed-form spectral norm of a 2x2 complex matrix.
#[inline]
pub fn op_norm_2x2(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> f64 {
    let fro2 = a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr();
    let det = (a * d - b * c).norm();
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    ((fro2 + disc) * 0.5).sqrt()
}

/// `|A v|` without allocating.
#[inline]
pub fn apply_norm(a: &CMatrix, v: &[Complex64]) -> f64 {
    let m = v.len();
    let mut s = 0.0;
    for r in 0..m {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..m {
            acc += a[(r, c)] * v[c];
        }
        s += acc.norm_sqr();
    }
    s.sqrt()
}

/// `|v|` Euclidean.
#[inline]
pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||A B||` using a scratch buffer for `m > 2`.
#[inline]
pub fn product_norm(a: &CMatrix, b: &CMatrix, scratch: &mut CMatrix) -> f64 {
    match a.nrows() {
        1 => (a[(0, 0)] * b[(0, 0)]).norm(),
        2 => {
            let p00 = a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)];
            let p01 = a[(0, 0)] * b[(0, 1)] + a[(0, 1)] * b[(1, 1)];
            let p10 = a[(1, 0)] * b[(0, 0)] + a[(1, 1)] * b[(1, 0)];
            let p11 = a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)];
            op_norm_2x2(p00, p01, p10, p11)
        }
        _ => {
            a.mul_to(b, scratch);
            operator_norm(scratch)
        }
    }
}

/// Arithmetic mean of Hermitian matrices.
pub fn mean_matrix<'a>(mats: impl Iterator<Item = &'a CMatrix>, m: usize) -> CMatrix {
    let mut acc = CMatrix::zeros(m, m);
    let mut count = 0usize;
    for a in mats {
        acc += a;
        count += 1;
    }
    acc / Complex64::new(count.max(1) as f64, 0.0)
}
