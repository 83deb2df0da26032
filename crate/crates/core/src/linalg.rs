//! Dense matrix kernels: exponential, Gram integrals, eigenvalues and the
//! Kalman rank test.
//!
//! Storage and the factorizations (LU, SVD, Schur) come from `nalgebra`; the
//! exponential and the Gram integral are implemented here.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default relative threshold for numerical rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

const SCHUR_MAX_ITER: usize = 10_000;

/// Square matrix with finite entries and dimension at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T: Real>(DMatrix<T>);

impl<T: Real> SquareMatrix<T> {
    pub fn from_row_slice(n: usize, entries: &[T]) -> Result<Self> {
        if n == 0 {
            return Err(Error::ShapeMismatch("matrix dimension must be at least 1".into()));
        }
        if entries.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_dmatrix(m: DMatrix<T>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scalar(x: T) -> Self {
        Self(DMatrix::from_element(1, 1, x))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.0[(i, j)] = v;
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<T> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scale(&self, s: T) -> Self {
        Self(&self.0 * s)
    }

    pub fn trace(&self) -> T {
        self.0.trace()
    }

    pub fn norm1(&self) -> T {
        norm1(&self.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (&self.0 - &other.0).amax()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.max_abs_diff(&self.transpose()) <= tol
    }

    pub fn symmetrized(&self) -> Self {
        Self((&self.0 + self.0.transpose()) * T::lit(0.5))
    }

    pub fn determinant(&self) -> T {
        self.0.determinant()
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.clone().try_inverse().map(Self)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (&self.0 * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    /// Extracts the square block `rows × rows`.
    pub fn block(&self, start: usize, len: usize) -> Self {
        Self(self.0.view((start, start), (len, len)).into_owned())
    }
}

impl<'a, T: Real> Mul<&'a SquareMatrix<T>> for &'a SquareMatrix<T> {
    type Output = SquareMatrix<T>;
    fn mul(self, rhs: &'a SquareMatrix<T>) -> SquareMatrix<T> {
        SquareMatrix(&self.0 * &rhs.0)
    }
}

impl<'a, T: Real> Add<&'a SquareMatrix<T>> for &'a SquareMatrix<T> {
    type Output = SquareMatrix<T>;
    fn add(self, rhs: &'a SquareMatrix<T>) -> SquareMatrix<T> {
        SquareMatrix(&self.0 + &rhs.0)
    }
}

impl<'a, T: Real> Sub<&'a SquareMatrix<T>> for &'a SquareMatrix<T> {
    type Output = SquareMatrix<T>;
    fn sub(self, rhs: &'a SquareMatrix<T>) -> SquareMatrix<T> {
        SquareMatrix(&self.0 - &rhs.0)
    }
}

fn norm1<T: Real>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, x| acc + x.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

// Padé coefficients and backward-error thresholds (Higham 2005).
const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
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
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn pade_low<T: Real>(a: &DMatrix<T>, coeffs: &[f64]) -> (DMatrix<T>, DMatrix<T>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut pow = DMatrix::<T>::identity(n, n);
    let mut u = DMatrix::<T>::zeros(n, n);
    let mut v = DMatrix::<T>::zeros(n, n);
    for k in (0..coeffs.len()).step_by(2) {
        v += &pow * T::lit(coeffs[k]);
        u += &pow * T::lit(coeffs[k + 1]);
        pow = &pow * &a2;
    }
    (a * u, v)
}

fn pade13<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = a.nrows();
    let b = |k: usize| T::lit(B13[k]);
    let id = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    (u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm<T: Real>(m: &SquareMatrix<T>) -> Result<SquareMatrix<T>> {
    let a = m.as_matrix();
    let norm = norm1(a).as_f64();
    if !norm.is_finite() {
        return Err(Error::Overflow);
    }
    let fixed = |(u, v): (DMatrix<T>, DMatrix<T>)| -> Result<DMatrix<T>> {
        let p = &v + &u;
        let q = &v - &u;
        q.lu().solve(&p).ok_or(Error::Overflow)
    };
    for &(order, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match order {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let r = fixed(pade_low(a, coeffs))?;
            return finite(r);
        }
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a * T::lit(0.5f64.powi(s));
    let mut r = fixed(pade13(&scaled))?;
    for _ in 0..s {
        r = &r * &r;
    }
    finite(r)
}

fn finite<T: Real>(r: DMatrix<T>) -> Result<SquareMatrix<T>> {
    if r.iter().all(|x| x.is_finite()) {
        Ok(SquareMatrix(r))
    } else {
        Err(Error::Overflow)
    }
}

/// `D_t = ∫₀ᵗ e^{sB} D e^{sBᵀ} ds`.
///
/// The block exponential of `[[B, D], [0, -Bᵀ]]` is only evaluated on a short
/// interval `τ = t / 2^k` with `‖B‖₁ τ ≤ 1/2`; the result is then extended with
/// `D_{2τ} = D_τ + e^{τB} D_τ e^{τBᵀ}`, which never forms the growing
/// `e^{-τBᵀ}` block over long horizons.
pub fn gram_integral<T: Real>(b: &SquareMatrix<T>, d: &SquareMatrix<T>, t: T) -> Result<SquareMatrix<T>> {
    let n = b.n();
    if d.n() != n {
        return Err(Error::ShapeMismatch(format!("B is {n}x{n} but D is {0}x{0}", d.n())));
    }
    if t < T::zero() || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("gram_integral needs t >= 0, got {t}")));
    }
    if t == T::zero() {
        return Ok(SquareMatrix::zeros(n));
    }
    let bnorm = b.norm1().as_f64();
    let tf = t.as_f64();
    let mut k = 0u32;
    while bnorm * tf / 2f64.powi(k as i32) > 0.5 && k < 200 {
        k += 1;
    }
    let tau = t * T::lit(0.5f64.powi(k as i32));

    let mut c = DMatrix::<T>::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&(b.as_matrix() * tau));
    c.view_mut((0, n), (n, n)).copy_from(&(d.as_matrix() * tau));
    c.view_mut((n, n), (n, n)).copy_from(&(b.as_matrix().transpose() * (-tau)));
    let e = expm(&SquareMatrix(c))?.into_inner();
    let mut f = e.view((0, 0), (n, n)).into_owned();
    let f12 = e.view((0, n), (n, n)).into_owned();
    let mut g = &f12 * f.transpose();
    for _ in 0..k {
        g = &g + &f * &g * f.transpose();
        f = &f * &f;
    }
    let g = (&g + g.transpose()) * T::lit(0.5);
    finite(g)
}

/// `∫₀^∞ e^{sB} D e^{sBᵀ} ds` for stable `B`, i.e. the solution of
/// `B X + X Bᵀ + D = 0`.
pub fn stationary_gram<T: Real>(b: &SquareMatrix<T>, d: &SquareMatrix<T>) -> Result<SquareMatrix<T>> {
    let n = b.n();
    if d.n() != n {
        return Err(Error::ShapeMismatch("B and D dimensions differ".into()));
    }
    if eig(b)?.iter().any(|z| z.re >= T::zero()) {
        return Err(Error::InvalidParameter("stationary Gram integral needs a stable drift".into()));
    }
    let id = DMatrix::<T>::identity(n, n);
    let bm = b.as_matrix();
    // vec(BX + XBᵀ) = (I ⊗ B + B ⊗ I) vec(X) with column-major vec.
    let op = id.kronecker(bm) + bm.kronecker(&id);
    let rhs = DVector::from_column_slice(d.as_matrix().as_slice()) * (-T::one());
    let x = op.lu().solve(&rhs).ok_or_else(|| Error::SingularCovariance("Lyapunov operator singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok(SquareMatrix((&x + x.transpose()) * T::lit(0.5)))
}

/// Eigenvalues with multiplicity, sorted by (real part, imaginary part).
pub fn eig<T: Real>(m: &SquareMatrix<T>) -> Result<Vec<Complex<T>>> {
    // The QR sweep can stall on exactly repeated blocks; a diagonal shift
    // breaks the symmetry and is undone afterwards.
    let scale = m.norm1().max(T::one());
    for c in [0.0, 0.37, 1.3, 0.11] {
        let shift = scale * T::from_f64(c).unwrap();
        let shifted = m.as_matrix() + DMatrix::<T>::identity(m.n(), m.n()) * shift;
        if let Some(schur) = nalgebra::linalg::Schur::try_new(shifted, T::eps(), SCHUR_MAX_ITER) {
            let mut vals: Vec<Complex<T>> =
                schur.complex_eigenvalues().iter().map(|z| Complex::new(z.re - shift, z.im)).collect();
            sort_complex(&mut vals);
            return Ok(vals);
        }
    }
    Err(Error::ConvergenceFailure)
}

pub fn sort_complex<T: Real>(vals: &mut [Complex<T>]) {
    vals.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Eigen-decomposition of a symmetric matrix (values ascending).
pub fn symmetric_eigen<T: Real>(m: &SquareMatrix<T>) -> (Vec<T>, SquareMatrix<T>) {
    let se = SymmetricEigen::new(m.symmetrized().into_inner());
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap_or(std::cmp::Ordering::Equal));
    let n = m.n();
    let vals = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::<T>::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, SquareMatrix(vecs))
}

/// Symmetric square root of a positive semidefinite matrix; tiny negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt<T: Real>(m: &SquareMatrix<T>) -> SquareMatrix<T> {
    let (vals, vecs) = symmetric_eigen(m);
    let root: Vec<T> = vals.iter().map(|&v| if v > T::zero() { v.sqrt() } else { T::zero() }).collect();
    let v = vecs.as_matrix();
    SquareMatrix(v * DMatrix::from_diagonal(&DVector::from_vec(root)) * v.transpose())
}

/// Rank of `[D, B D, …, B^{n-1} D]` (same range as with `D^{1/2}`) and
/// whether it is full.
pub fn kalman_rank<T: Real>(b: &SquareMatrix<T>, d: &SquareMatrix<T>) -> Result<(usize, bool)> {
    kalman_rank_with_tol(b, d, T::lit(RANK_TOLERANCE))
}

pub fn kalman_rank_with_tol<T: Real>(
    b: &SquareMatrix<T>,
    d: &SquareMatrix<T>,
    rel_tol: T,
) -> Result<(usize, bool)> {
    let n = b.n();
    if d.n() != n {
        return Err(Error::ShapeMismatch("B and D dimensions differ".into()));
    }
    let mut ctrb = DMatrix::<T>::zeros(n, n * n);
    let mut block = d.as_matrix().clone();
    for j in 0..n {
        ctrb.view_mut((0, j * n), (n, n)).copy_from(&block);
        block = b.as_matrix() * block;
    }
    let rank = numerical_rank(&ctrb, rel_tol);
    Ok((rank, rank == n))
}

pub(crate) fn numerical_rank<T: Real>(m: &DMatrix<T>, rel_tol: T) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    if smax == T::zero() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Condition (i) of hypoellipticity: `D_t` nonsingular, judged with the same
/// relative threshold as the rank test.
pub fn gram_nonsingular<T: Real>(b: &SquareMatrix<T>, d: &SquareMatrix<T>, t: T) -> Result<bool> {
    let g = gram_integral(b, d, t)?;
    let (vals, _) = symmetric_eigen(&g);
    let max = vals.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let min = vals.iter().fold(T::max_value().unwrap(), |a, &v| a.min(v));
    Ok(max > T::zero() && min > T::lit(RANK_TOLERANCE) * max)
}
