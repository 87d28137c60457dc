//! Dense complex matrices at small sizes (r ≤ 16).
//!
//! Arithmetic is hand-written on an inline buffer so that pointwise field
//! updates do not allocate for ranks up to 4. Decompositions (Schur, SVD,
//! Hermitian eigen) delegate to `nalgebra`.
//!
//! Hermitian structure is always taken relative to a [`BackgroundMetric`]
//! `K`: vectors pair as `<x, y>_K = y^† K x`, the `K`-adjoint of a matrix is
//! `K^{-1} M^† K`, and endomorphisms pair as `tr(φ1 φ2^{*K})`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MAX_RANK: usize = 16;

/// Condition-number ceiling above which a matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: SmallVec<[C64; 16]>,
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: SmallVec::from_elem(C64::new(0.0, 0.0), rows * cols) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from complex rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        let m = Self::from_fn(r, c, |i, j| rows[i][j]);
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(m)
    }

    /// Real matrix from row slices; panics on ragged input (test and literal use).
    pub fn real(rows: &[&[f64]]) -> Self {
        let c = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == c), "ragged rows");
        Self::from_fn(rows.len(), c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    pub fn diag_real(entries: &[f64]) -> Self {
        let z: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::diag(&z)
    }

    /// Stacks column vectors (each `r x 1`) into an `r x k` matrix.
    pub fn from_columns(cols: &[CMat]) -> Result<Self> {
        let r = cols.first().map_or(0, |c| c.rows);
        if cols.iter().any(|c| c.cols != 1 || c.rows != r) {
            return Err(Error::Dimension("columns must be r x 1 vectors".into()));
        }
        Ok(Self::from_fn(r, cols.len(), |i, j| cols[j][(i, 0)]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)]).collect()).collect()
    }

    pub fn column(&self, j: usize) -> CMat {
        Self::from_fn(self.rows, 1, |i, _| self[(i, j)])
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, start: usize, count: usize) -> CMat {
        Self::from_fn(self.rows, count, |i, j| self[(i, start + j)])
    }

    pub fn hstack(&self, other: &CMat) -> Result<CMat> {
        if self.rows != other.rows {
            return Err(Error::Dimension("hstack row mismatch".into()));
        }
        Ok(Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> CMat {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMat {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: f64) -> CMat {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|z| *z *= s);
        m
    }

    pub fn scale_c(&self, s: C64) -> CMat {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|z| *z *= s);
        m
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &CMat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }

    pub fn commutator(&self, other: &CMat) -> CMat {
        &(self * other) - &(other * self)
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖M − M^†‖_F ≤ tol·max(1, ‖M‖_F)`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && (self - &self.dagger()).frob_norm() <= tol * self.frob_norm().max(1.0)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> CMat {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// LU factorisation with partial pivoting. Returns the packed factors,
    /// the row permutation, and the permutation sign.
    fn lu(&self) -> Result<(CMat, Vec<usize>, f64)> {
        if !self.is_square() {
            return Err(Error::Dimension("LU of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = self.max_abs();
        for k in 0..n {
            let (p, pmax) = (k..n).map(|i| (i, a[(i, k)].norm())).fold((k, -1.0), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
            if pmax <= f64::MIN_POSITIVE || pmax <= 1e-300 * scale.max(1e-300) {
                return Err(Error::Singular { cond: f64::INFINITY });
            }
            if p != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] / pivot;
                a[(i, k)] = f;
                for j in (k + 1)..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= f * akj;
                }
            }
        }
        Ok((a, perm, sign))
    }

    /// Solves `self · X = rhs` for square `self`.
    pub fn solve(&self, rhs: &CMat) -> Result<CMat> {
        let n = self.rows;
        if rhs.rows != n {
            return Err(Error::Dimension("solve: rhs row mismatch".into()));
        }
        let (lu, perm, _) = self.lu()?;
        let mut x = CMat::from_fn(n, rhs.cols, |i, j| rhs[(perm[i], j)]);
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / lu[(i, i)];
            }
        }
        if !x.is_finite() {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMat> {
        self.solve(&CMat::identity(self.rows))
    }

    pub fn det(&self) -> C64 {
        match self.lu() {
            Ok((lu, _, sign)) => (0..self.rows).map(|i| lu[(i, i)]).product::<C64>() * sign,
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Cheap condition estimate `‖M‖_F ‖M^{-1}‖_F` (an upper bound for the
    /// 2-norm condition number up to a factor `r`).
    pub fn cond_estimate(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => self.frob_norm() * inv.frob_norm(),
            Err(_) => f64::INFINITY,
        }
    }

    /// Inverse, rejecting matrices whose condition estimate exceeds `limit`.
    pub fn inverse_checked(&self, limit: f64) -> Result<CMat> {
        let inv = self.inverse()?;
        let cond = self.frob_norm() * inv.frob_norm();
        if cond.is_nan() || cond > limit {
            return Err(Error::Singular { cond });
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<'a> Mul<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn mul(self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Mul<CMat> for CMat {
    type Output = CMat;
    fn mul(self, rhs: CMat) -> CMat {
        &self * &rhs
    }
}

impl<'a> Add<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn add(self, rhs: &CMat) -> CMat {
        let mut m = self.clone();
        m += rhs;
        m
    }
}

impl<'a> Sub<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn sub(self, rhs: &CMat) -> CMat {
        let mut m = self.clone();
        m -= rhs;
        m
    }
}

impl Add for CMat {
    type Output = CMat;
    fn add(mut self, rhs: CMat) -> CMat {
        self += &rhs;
        self
    }
}

impl Sub for CMat {
    type Output = CMat;
    fn sub(mut self, rhs: CMat) -> CMat {
        self -= &rhs;
        self
    }
}

impl AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&CMat> for CMat {
    fn sub_assign(&mut self, rhs: &CMat) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl Neg for &CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        self.scale(-1.0)
    }
}

impl Neg for CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        self.scale(-1.0)
    }
}

/// The fixed Hermitian positive-definite metric `K` on the fibre.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundMetric {
    k: CMat,
    k_inv: CMat,
    is_identity: bool,
}

impl BackgroundMetric {
    pub fn new(k: CMat) -> Result<Self> {
        if !k.is_square() || k.rows() == 0 {
            return Err(Error::NotPositiveDefinite("metric must be square".into()));
        }
        if !k.is_finite() {
            return Err(Error::NonFinite);
        }
        if !k.is_hermitian(1e-12) {
            return Err(Error::NotPositiveDefinite("metric is not Hermitian".into()));
        }
        let evals = hermitian_eigen(&k)?.0;
        let (lo, hi) =
            evals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if lo.is_nan() || lo <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {lo:.3e}")));
        }
        if hi / lo > COND_LIMIT {
            return Err(Error::Singular { cond: hi / lo });
        }
        let k_inv = k.inverse()?;
        let is_identity = (&k - &CMat::identity(k.rows())).max_abs() == 0.0;
        Ok(BackgroundMetric { k, k_inv, is_identity })
    }

    pub fn identity(r: usize) -> Self {
        BackgroundMetric { k: CMat::identity(r), k_inv: CMat::identity(r), is_identity: true }
    }

    pub fn matrix(&self) -> &CMat {
        &self.k
    }

    pub fn inverse(&self) -> &CMat {
        &self.k_inv
    }

    pub fn dim(&self) -> usize {
        self.k.rows()
    }

    pub fn is_identity(&self) -> bool {
        self.is_identity
    }

    /// `<x, y>_K = y^† K x` for column vectors (or the Gram matrix `Y^† K X`).
    pub fn pair(&self, x: &CMat, y: &CMat) -> CMat {
        if self.is_identity {
            &y.dagger() * x
        } else {
            &(&y.dagger() * &self.k) * x
        }
    }

    /// `K`-orthonormalises the columns of `basis` (modified Gram–Schmidt,
    /// two passes). Fails when the columns are numerically dependent.
    pub fn orthonormalize(&self, basis: &CMat) -> Result<CMat> {
        let r = basis.rows();
        let mut out: Vec<CMat> = Vec::with_capacity(basis.cols());
        let scale = basis.frob_norm().max(f64::MIN_POSITIVE);
        for j in 0..basis.cols() {
            let mut v = basis.column(j);
            let orig = self.pair(&v, &v)[(0, 0)].re.sqrt();
            for _ in 0..2 {
                for q in &out {
                    let c = self.pair(&v, q)[(0, 0)];
                    v.axpy_c(-c, q);
                }
            }
            let nrm = self.pair(&v, &v)[(0, 0)].re.max(0.0).sqrt();
            if nrm <= 1e-10 * orig.max(scale * 1e-3) || nrm == 0.0 {
                return Err(Error::RankDeficient);
            }
            out.push(v.scale(1.0 / nrm));
        }
        if out.is_empty() {
            return Ok(CMat::zeros(r, 0));
        }
        CMat::from_columns(&out)
    }
}

impl CMat {
    /// `self += s * other` with complex `s`.
    pub fn axpy_c(&mut self, s: C64, other: &CMat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }
}

/// `M^{*K} = K^{-1} M^† K`.
pub fn adjoint_wrt(m: &CMat, k: &BackgroundMetric) -> CMat {
    if k.is_identity() {
        m.dagger()
    } else {
        &(k.inverse() * &m.dagger()) * k.matrix()
    }
}

/// Splits `M` into its `K`-skew and `K`-self-adjoint parts.
pub fn herm_split(m: &CMat, k: &BackgroundMetric) -> (CMat, CMat) {
    let adj = adjoint_wrt(m, k);
    let skew = (m - &adj).scale(0.5);
    let sa = (m + &adj).scale(0.5);
    (skew, sa)
}

/// Fibre inner product `tr(φ1 φ2^{*K})`.
pub fn inner_k(phi1: &CMat, phi2: &CMat, k: &BackgroundMetric) -> C64 {
    if k.is_identity() {
        // tr(φ1 φ2^†) = Σ φ1_ij conj(φ2_ij)
        phi1.as_slice().iter().zip(phi2.as_slice()).map(|(a, b)| a * b.conj()).sum()
    } else {
        (phi1 * &adjoint_wrt(phi2, k)).trace()
    }
}

/// `|φ|²_K`, real and non-negative.
pub fn norm_sq_k(phi: &CMat, k: &BackgroundMetric) -> f64 {
    if k.is_identity() {
        phi.frob_norm_sq()
    } else {
        inner_k(phi, phi, k).re.max(0.0)
    }
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring around a [13/13] Padé core.
pub fn expm(m: &CMat) -> CMat {
    assert!(m.is_square(), "expm of non-square matrix");
    let n = m.rows();
    let norm = m.norm1();
    if norm == 0.0 {
        return CMat::identity(n);
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil().max(0.0) as i32 } else { 0 };
    let a = m.scale(0.5f64.powi(s));
    let id = CMat::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let mut inner_u = a6.scale(b[13]);
    inner_u.axpy(b[11], &a4);
    inner_u.axpy(b[9], &a2);
    let mut u = &a6 * &inner_u;
    u.axpy(b[7], &a6);
    u.axpy(b[5], &a4);
    u.axpy(b[3], &a2);
    u.axpy(b[1], &id);
    let u = &a * &u;

    let mut inner_v = a6.scale(b[12]);
    inner_v.axpy(b[10], &a4);
    inner_v.axpy(b[8], &a2);
    let mut v = &a6 * &inner_v;
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &id);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigenvalues and eigenvectors of a Hermitian matrix (ascending).
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !m.is_square() {
        return Err(Error::Dimension("Hermitian eigen of non-square matrix".into()));
    }
    let herm = (m + &m.dagger()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::try_new(herm.to_nalgebra(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoConvergence("Hermitian eigensolver".into()))?;
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(m.rows(), m.rows(), |i, j| eig.eigenvectors[(i, idx[j])]);
    Ok((vals, vecs))
}

/// Complex Schur form `M = Q T Q^†` with `T` upper triangular.
pub fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    if !m.is_square() {
        return Err(Error::Dimension("Schur form of non-square matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    // The shifted QR in nalgebra can stall at a machine-epsilon deflation
    // test on exactly repeated eigenvalues; a slightly looser test is still
    // backward stable.
    let s = [1.0, 8.0, 64.0]
        .iter()
        .find_map(|f| nalgebra::Schur::try_new(m.to_nalgebra(), f * f64::EPSILON, 2_000))
        .ok_or_else(|| Error::NoConvergence("complex Schur decomposition".into()))?;
    let (q, t) = s.unpack();
    let n = m.rows();
    let mut t = CMat::from_nalgebra(&t);
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok((CMat::from_nalgebra(&q), t))
}

/// Principal square root of an upper-triangular matrix (Björck–Hammarling).
fn sqrtm_upper(t: &CMat) -> CMat {
    let n = t.rows();
    let mut r = CMat::zeros(n, n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = C64::new(0.0, 0.0);
            for k in (i + 1)..j {
                s += r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = (t[(i, j)] - s) / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

/// Principal logarithm. For Hermitian positive-definite input the result
/// is Hermitian; otherwise inverse scaling and squaring on the Schur form.
pub fn logm_principal(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::Dimension("logm of non-square matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = m.rows();
    let scale = m.frob_norm();
    if scale == 0.0 {
        return Err(Error::Singular { cond: f64::INFINITY });
    }

    if m.is_hermitian(1e-14) {
        let (vals, vecs) = hermitian_eigen(m)?;
        for &v in &vals {
            if v.abs() <= 1e-14 * scale {
                return Err(Error::Singular { cond: f64::INFINITY });
            }
            if v < 0.0 {
                return Err(Error::BranchCut { re: v, im: 0.0 });
            }
        }
        let logs: Vec<C64> = vals.iter().map(|&v| C64::new(v.ln(), 0.0)).collect();
        let out = &(&vecs * &CMat::diag(&logs)) * &vecs.dagger();
        return Ok((&out + &out.dagger()).scale(0.5));
    }

    let (q, mut t) = schur(m)?;
    for i in 0..n {
        let z = t[(i, i)];
        if z.norm() <= 1e-14 * scale {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        if z.re < 0.0 && z.im.abs() <= 1e-14 * z.norm() {
            return Err(Error::BranchCut { re: z.re, im: z.im });
        }
    }

    let id = CMat::identity(n);
    let mut k = 0;
    while (&t - &id).norm1() > 0.25 {
        t = sqrtm_upper(&t);
        k += 1;
        if k > 64 {
            return Err(Error::NoConvergence("logm square-root ladder".into()));
        }
    }
    // log(I + Y) by its Mercator series; ‖Y‖₁ ≤ 1/4 gives 1e-17 after ~26 terms.
    let y = &t - &id;
    let mut term = y.clone();
    let mut acc = y.clone();
    for j in 2..60 {
        term = &term * &y;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        acc.axpy(sign / j as f64, &term);
        if term.norm1() / (j as f64) < 1e-18 * acc.norm1().max(1e-300) {
            break;
        }
    }
    let l = acc.scale(2f64.powi(k));
    Ok(&(&q * &l) * &q.dagger())
}

/// Singular values (descending) and right singular vectors (as columns,
/// matched to the values).
pub fn svd_right(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let svd = nalgebra::SVD::try_new(m.to_nalgebra(), false, true, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NoConvergence("SVD".into()))?;
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let vals = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let vecs = CMat::from_fn(m.cols(), k, |i, j| v_t[(idx[j], i)].conj());
    Ok((vals, vecs))
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    let mut sv: Vec<f64> = m.to_nalgebra().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Orthonormal basis (standard inner product) of the numerical kernel of a
/// square matrix: right singular vectors whose singular value is at most
/// `threshold`. At least one vector is always returned.
pub fn null_space(m: &CMat, threshold: f64) -> Result<(CMat, Vec<f64>)> {
    if !m.is_square() {
        return Err(Error::Dimension("null space of non-square matrix".into()));
    }
    let (vals, vecs) = svd_right(m)?;
    let n = vals.len();
    let dim = vals.iter().filter(|&&s| s <= threshold).count().max(1);
    Ok((vecs.columns(n - dim, dim), vals))
}

/// Geometric multiplicity of `lambda`: number of singular values of
/// `M − λI` at most `rel_threshold · ‖M‖_F`.
pub fn geometric_multiplicity(m: &CMat, lambda: C64, rel_threshold: f64) -> Result<usize> {
    let shifted = m - &CMat::identity(m.rows()).scale_c(lambda);
    let thr = rel_threshold * m.frob_norm().max(f64::MIN_POSITIVE);
    Ok(singular_values(&shifted).iter().filter(|&&s| s <= thr).count())
}

/// Lexicographic order on `(Re, Im)`.
pub fn lex_cmp(a: &C64, b: &C64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// A group of numerically coincident eigenvalues.
#[derive(Clone, Debug)]
pub struct EigenCluster {
    /// Mean of the member eigenvalues; the well-conditioned representative
    /// for defective clusters.
    pub value: C64,
    pub algebraic: usize,
    pub geometric: usize,
    /// Orthonormal basis of the geometric eigenspace (`r × geometric`,
    /// at least one column).
    pub eigenspace: CMat,
}

#[derive(Clone, Debug)]
pub struct EigTolerances {
    /// Eigenvalues closer than `cluster_rel · ‖M‖_F` are grouped.
    pub cluster_rel: f64,
    /// Singular values of `M − λI` below `kernel_rel · ‖M‖_F` count as kernel.
    pub kernel_rel: f64,
}

impl Default for EigTolerances {
    fn default() -> Self {
        EigTolerances { cluster_rel: 1e-7, kernel_rel: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Eigenvalues with algebraic multiplicity, sorted lexicographically.
    /// Members of a cluster are reported as the cluster mean.
    pub values: Vec<C64>,
    /// Column `j` is an eigenvector for `values[j]`. Defective clusters
    /// repeat their last independent eigenvector.
    pub vectors: CMat,
    pub clusters: Vec<EigenCluster>,
}

impl EigenDecomposition {
    pub fn is_diagonalizable(&self) -> bool {
        self.clusters.iter().all(|c| c.geometric == c.algebraic)
    }
}

/// Raw eigenvalues from the Schur form.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    let (_, t) = schur(m)?;
    Ok((0..m.rows()).map(|i| t[(i, i)]).collect())
}

/// Single-linkage clustering of points in the complex plane.
pub fn cluster_values(values: &[C64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        let mut c = i;
        while label[c] != r {
            let next = label[c];
            label[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= tol {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of_group: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = find(&mut label, i);
        match root_of_group.iter().position(|&g| g == r) {
            Some(pos) => groups[pos].push(i),
            None => {
                root_of_group.push(r);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

pub fn eig(m: &CMat) -> Result<EigenDecomposition> {
    eig_with(m, &EigTolerances::default())
}

pub fn eig_with(m: &CMat, tol: &EigTolerances) -> Result<EigenDecomposition> {
    let n = m.rows();
    let raw = eigenvalues(m)?;
    let norm = m.frob_norm();
    let groups = cluster_values(&raw, tol.cluster_rel * norm);
    let mut clusters: Vec<EigenCluster> = Vec::with_capacity(groups.len());
    for g in groups {
        let value = if g.iter().all(|&i| raw[i] == raw[g[0]]) {
            raw[g[0]]
        } else {
            g.iter().map(|&i| raw[i]).sum::<C64>() / g.len() as f64
        };
        let shifted = m - &CMat::identity(n).scale_c(value);
        let thr = tol.kernel_rel * norm.max(f64::MIN_POSITIVE);
        let (space, sv) = null_space(&shifted, thr)?;
        let geometric = sv.iter().filter(|&&s| s <= thr).count();
        clusters.push(EigenCluster { value, algebraic: g.len(), geometric, eigenspace: space });
    }
    clusters.sort_by(|a, b| lex_cmp(&a.value, &b.value));

    let mut values = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(n);
    for c in &clusters {
        for j in 0..c.algebraic {
            values.push(c.value);
            let col = j.min(c.eigenspace.cols() - 1);
            cols.push(c.eigenspace.column(col));
        }
    }
    let vectors = if n == 0 { CMat::zeros(0, 0) } else { CMat::from_columns(&cols)? };
    Ok(EigenDecomposition { values, vectors, clusters })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    fn n2() -> CMat {
        CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    #[test]
    fn adjoint_examples() {
        let id = BackgroundMetric::identity(2);
        assert_eq!(adjoint_wrt(&n2(), &id), CMat::real(&[&[0.0, 0.0], &[1.0, 0.0]]));
        let k = BackgroundMetric::new(CMat::diag_real(&[1.0, 4.0])).unwrap();
        assert_eq!(adjoint_wrt(&CMat::identity(2), &k), CMat::identity(2));
        let adj = adjoint_wrt(&n2(), &k);
        assert!(close(&adj, &CMat::real(&[&[0.0, 0.0], &[0.25, 0.0]]), 1e-15));
    }

    #[test]
    fn metric_rejects_bad_input() {
        assert!(BackgroundMetric::new(CMat::diag_real(&[1.0, -1.0])).is_err());
        assert!(BackgroundMetric::new(CMat::real(&[&[1.0, 2.0], &[0.0, 1.0]])).is_err());
        assert!(BackgroundMetric::new(CMat::diag_real(&[1.0, 1e-14])).is_err());
    }

    #[test]
    fn herm_split_examples() {
        let id = BackgroundMetric::identity(2);
        let (u, p) = herm_split(&n2(), &id);
        assert!(close(&u, &CMat::real(&[&[0.0, 0.5], &[-0.5, 0.0]]), 0.0));
        assert!(close(&p, &CMat::real(&[&[0.0, 0.5], &[0.5, 0.0]]), 0.0));

        let h = CMat::real(&[&[2.0, 1.0], &[1.0, -3.0]]);
        let (u, p) = herm_split(&h, &id);
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(p, h);

        let s = CMat::diag(&[c64(0.0, 1.0), c64(0.0, 0.0)]);
        let (u, p) = herm_split(&s, &id);
        assert_eq!(u, s);
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn expm_examples() {
        assert_eq!(expm(&CMat::zeros(3, 3)), CMat::identity(3));
        let l2 = 2f64.ln();
        let e = expm(&CMat::diag_real(&[l2, -l2]));
        assert!(close(&e, &CMat::diag_real(&[2.0, 0.5]), 1e-14));
        let e = expm(&n2());
        assert!(close(&e, &CMat::real(&[&[1.0, 1.0], &[0.0, 1.0]]), 1e-15));
    }

    #[test]
    fn expm_rotation_generator() {
        // exp(θ J) with J = [[0,-1],[1,0]] is a rotation; large θ exercises squaring.
        let theta = 7.3;
        let j = CMat::real(&[&[0.0, -theta], &[theta, 0.0]]);
        let e = expm(&j);
        let want = CMat::real(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]);
        assert!(close(&e, &want, 1e-13));
    }

    #[test]
    fn logm_examples() {
        assert!(logm_principal(&CMat::identity(2)).unwrap().max_abs() < 1e-15);
        let l2 = 2f64.ln();
        let l = logm_principal(&CMat::diag_real(&[2.0, 0.5])).unwrap();
        assert!(close(&l, &CMat::diag_real(&[l2, -l2]), 1e-14));
        // Jordan block: log(2I + N) = ln2 I + N/2.
        let j = CMat::real(&[&[2.0, 1.0], &[0.0, 2.0]]);
        let l = logm_principal(&j).unwrap();
        assert!(close(&l, &CMat::real(&[&[l2, 0.5], &[0.0, l2]]), 1e-13));
        assert!(close(&expm(&l), &j, 1e-12));
    }

    #[test]
    fn logm_errors() {
        let neg = CMat::diag_real(&[-1.0, 1.0]);
        assert!(matches!(logm_principal(&neg), Err(Error::BranchCut { .. })));
        let nonherm_neg = CMat::real(&[&[-2.0, 1.0], &[0.0, 3.0]]);
        assert!(matches!(logm_principal(&nonherm_neg), Err(Error::BranchCut { .. })));
        let sing = CMat::real(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(logm_principal(&sing), Err(Error::Singular { .. })));
    }

    #[test]
    fn eig_examples() {
        let e = eig(&CMat::diag_real(&[1.0, 2.0])).unwrap();
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] - 1.0).norm() < 1e-14 && (e.values[1] - 2.0).norm() < 1e-14);
        assert!((e.vectors[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((e.vectors[(1, 1)].norm() - 1.0).abs() < 1e-14);

        let j = CMat::real(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let e = eig(&j).unwrap();
        assert_eq!(e.clusters.len(), 1);
        assert_eq!(e.clusters[0].algebraic, 2);
        assert_eq!(e.clusters[0].geometric, 1);
        assert!(!e.is_diagonalizable());
        let v = e.vectors.column(0);
        assert!((v[(0, 0)].norm() - 1.0).abs() < 1e-14 && v[(1, 0)].norm() < 1e-14);

        let swap = CMat::real(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = eig(&swap).unwrap();
        assert!((e.values[0] + 1.0).norm() < 1e-14 && (e.values[1] - 1.0).norm() < 1e-14);
    }

    #[test]
    fn eig_residuals() {
        let m = CMat::from_fn(4, 4, |i, j| c64((i * 3 + j) as f64 * 0.1 - 0.4, (i as f64 - j as f64) * 0.2));
        let e = eig(&m).unwrap();
        for j in 0..4 {
            let v = e.vectors.column(j);
            let r = (&(&m * &v) - &v.scale_c(e.values[j])).frob_norm();
            assert!(r <= 1e-9 * m.frob_norm() * v.frob_norm(), "residual {r}");
        }
    }

    #[test]
    fn inner_k_examples() {
        let id = BackgroundMetric::identity(2);
        assert_eq!(inner_k(&CMat::identity(2), &CMat::identity(2), &id), c64(2.0, 0.0));
        assert_eq!(inner_k(&n2(), &n2(), &id), c64(1.0, 0.0));
        // In the K-orthonormal frame (e1, e2/2) the map N has entry 1/2.
        let k = BackgroundMetric::new(CMat::diag_real(&[1.0, 4.0])).unwrap();
        assert!((inner_k(&n2(), &n2(), &k) - 0.25).norm() < 1e-15);
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let k = BackgroundMetric::identity(2);
        let b = CMat::real(&[&[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(k.orthonormalize(&b), Err(Error::RankDeficient)));
    }

    #[test]
    fn solve_and_det() {
        let a = CMat::real(&[&[0.0, 2.0], &[1.0, 1.0]]);
        assert!((a.det() - c64(-2.0, 0.0)).norm() < 1e-15);
        let inv = a.inverse().unwrap();
        assert!(close(&(&a * &inv), &CMat::identity(2), 1e-15));
        assert!(CMat::real(&[&[1.0, 1.0], &[1.0, 1.0]]).inverse().is_err());
    }
}
