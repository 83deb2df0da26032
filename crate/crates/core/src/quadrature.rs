//! One-dimensional quadrature: adaptive Gauss–Kronrod (7/15) and the
//! composite trapezoid rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Tolerances for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-13, max_intervals: 2000 }
    }
}

struct Piece<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Piece<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T: Real> Eq for Piece<T> {}
impl<T: Real> PartialOrd for Piece<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Piece<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = (b - a) * T::lit(0.5);
    let center = (a + b) * T::lit(0.5);
    let fc = f(center);
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half * T::lit(XGK[j]);
        let s = f(center - dx) + f(center + dx);
        k += s * T::lit(WGK[j]);
        if j % 2 == 1 {
            g += s * T::lit(WG[j / 2]);
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`, always splitting
/// the piece with the largest error estimate.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, opts: &QuadOptions) -> Result<T> {
    integrate_partitioned(f, &[a, b], opts)
}

/// As [`integrate`], starting from the pieces between consecutive
/// `breakpoints` (useful for narrow peaks the first 15 nodes could miss).
pub fn integrate_partitioned<T: Real, F: Fn(T) -> T>(f: F, breakpoints: &[T], opts: &QuadOptions) -> Result<T> {
    if breakpoints.len() < 2 {
        return Err(Error::QuadratureFailure("need at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = T::zero();
    let mut err = T::zero();
    for w in breakpoints.windows(2) {
        let (v, e) = kronrod(&f, w[0], w[1]);
        heap.push(Piece { a: w[0], b: w[1], value: v, error: e });
        total += v;
        err += e;
    }
    loop {
        let target = T::lit(opts.abs_tol).max(T::lit(opts.rel_tol) * total.abs());
        if err <= target {
            return Ok(total);
        }
        if heap.len() >= opts.max_intervals.max(breakpoints.len() + 1) {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {err} above target {target} after {} intervals",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap never empty");
        let mid = (worst.a + worst.b) * T::lit(0.5);
        let (v1, e1) = kronrod(&f, worst.a, mid);
        let (v2, e2) = kronrod(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Piece { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, error: e2 });
        if !total.is_finite() {
            return Err(Error::QuadratureFailure("non-finite integrand".into()));
        }
        // Re-sum occasionally so cancellation in the running totals cannot stall progress.
        if heap.len() % 64 == 0 {
            total = heap.iter().fold(T::zero(), |s, p| s + p.value);
            err = heap.iter().fold(T::zero(), |s, p| s + p.error);
        }
    }
}

/// Composite trapezoid rule on `n` equal panels.
pub fn trapezoid<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, n: usize) -> T {
    let h = (b - a) / T::from_usize(n).unwrap();
    let mut s = (f(a) + f(b)) * T::lit(0.5);
    for i in 1..n {
        s += f(a + h * T::from_usize(i).unwrap());
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_integral() {
        let v = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, &QuadOptions::default()).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x: f64| x.powi(5) - 3.0 * x * x, 0.0, 2.0, &QuadOptions::default()).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_converges() {
        let v = trapezoid(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1000);
        assert!((v - 2.0).abs() < 1e-5);
    }

    #[test]
    fn failure_is_reported() {
        let opts = QuadOptions { abs_tol: 1e-30, rel_tol: 1e-30, max_intervals: 8 };
        assert!(integrate(|x: f64| x.abs().sqrt(), -1.0, 1.0, &opts).is_err());
    }
}
