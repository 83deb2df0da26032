//! Closed-form analytics for quadratic confinement with Curie–Weiss
//! interaction: drift/diffusion matrices, Fokker–Planck spectra, the OU
//! fundamental solution and the mean-field Gaussian law.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{eig, expm, gram_integral, psd_sqrt, sort_complex, SquareMatrix};
use crate::model::{DynamicsKind, ValidatedModel};
use crate::rng::Philox;

type Matrix = SquareMatrix<f64>;
type C64 = Complex<f64>;

/// Linear SDE `dY = B Y dt + √(2 β⁻¹ D) dW` (β kept outside `D`).
#[derive(Clone, Debug)]
pub struct DriftDiffusion {
    pub b: Matrix,
    pub d: Matrix,
    pub dim: usize,
    pub labels: Vec<String>,
}

/// Multivariate normal law.
#[derive(Clone, Debug)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if mean.len() != cov.n() {
            return Err(Error::ShapeMismatch(format!("mean has {} entries, cov is {1}x{1}", mean.len(), cov.n())));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        let n = self.dim();
        let chol = self
            .cov
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("covariance not positive definite".into()))?;
        let r = DVector::from_iterator(n, x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let y = chol.solve(&r);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let two_pi = 2.0 * std::f64::consts::PI;
        Ok((-0.5 * r.dot(&y) - 0.5 * logdet - 0.5 * n as f64 * two_pi.ln()).exp())
    }
}

fn quadratic_coefficients(model: &ValidatedModel) -> Result<(f64, f64)> {
    let omega2 = model
        .potential()
        .omega2()
        .ok_or_else(|| Error::UnsupportedPotential("closed-form analytics need a quadratic potential".into()))?;
    let eta2 = model
        .interaction()
        .eta2()
        .ok_or_else(|| Error::UnsupportedPotential("closed-form analytics need a Curie-Weiss interaction".into()))?;
    Ok((omega2, eta2))
}

fn state_labels(model: &ValidatedModel, n: usize) -> Vec<String> {
    let single = model.state_labels();
    if n == 1 {
        return single;
    }
    let d = model.d();
    let mut out = Vec::new();
    let blocks: Vec<(&[String], usize)> = {
        let q = &single[..d];
        let mut v = vec![(q, d)];
        if model.has_momentum() {
            v.push((&single[d..2 * d], d));
        }
        let off = if model.has_momentum() { 2 * d } else { d };
        if single.len() > off {
            v.push((&single[off..], single.len() - off));
        }
        v
    };
    for (names, _) in blocks {
        for i in 0..n {
            for name in names {
                out.push(format!("{name}_{i}"));
            }
        }
    }
    out
}

/// Single-particle drift with confining force coefficient `c` (no interaction).
fn single_particle_drift(model: &ValidatedModel, c: f64) -> DMatrix<f64> {
    let d = model.d();
    let id = DMatrix::<f64>::identity(d, d);
    match model.kind() {
        DynamicsKind::Overdamped => &id * (-c),
        DynamicsKind::Underdamped => {
            let g = model.gamma().expect("validated");
            let mut b = DMatrix::zeros(2 * d, 2 * d);
            b.view_mut((0, d), (d, d)).copy_from(&id);
            b.view_mut((d, 0), (d, d)).copy_from(&(&id * (-c)));
            b.view_mut((d, d), (d, d)).copy_from(&(&id * (-g)));
            b
        }
        DynamicsKind::Generalized => {
            let mem = model.memory().expect("validated");
            let dm = d * mem.m;
            let mut b = DMatrix::zeros(2 * d + dm, 2 * d + dm);
            b.view_mut((0, d), (d, d)).copy_from(&id);
            b.view_mut((d, 0), (d, d)).copy_from(&(&id * (-c)));
            b.view_mut((d, 2 * d), (d, dm)).copy_from(&mem.lambda.transpose());
            b.view_mut((2 * d, d), (dm, d)).copy_from(&(-&mem.lambda));
            b.view_mut((2 * d, 2 * d), (dm, dm)).copy_from(&(-mem.a.as_matrix()));
            b
        }
    }
}

/// Diffusion pattern of one particle without the β⁻¹ factor.
fn single_particle_diffusion(model: &ValidatedModel) -> DMatrix<f64> {
    let d = model.d();
    match model.kind() {
        DynamicsKind::Overdamped => DMatrix::identity(d, d),
        DynamicsKind::Underdamped => {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            m.view_mut((d, d), (d, d)).fill_with_identity();
            m.view_mut((d, d), (d, d)).scale_mut(model.gamma().expect("validated"));
            m
        }
        DynamicsKind::Generalized => {
            let a = &model.memory().expect("validated").a;
            let n = 2 * d + a.n();
            let mut m = DMatrix::zeros(n, n);
            m.view_mut((2 * d, 2 * d), (a.n(), a.n())).copy_from(a.as_matrix());
            m
        }
    }
}

/// Drift and diffusion of the `N`-particle system, ordered as all positions,
/// then all momenta, then all auxiliary variables (particle-major inside
/// each block). The diffusion matrix excludes β⁻¹.
pub fn assemble(model: &ValidatedModel, n: usize) -> Result<DriftDiffusion> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    let (omega2, eta2) = quadratic_coefficients(model)?;
    let d = model.d();
    let nf = n as f64;
    // Interaction block acting on all positions.
    let nd = n * d;
    let mut force = DMatrix::<f64>::zeros(nd, nd);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j { -omega2 - eta2 * (nf - 1.0) / nf } else { eta2 / nf };
            for k in 0..d {
                force[(i * d + k, j * d + k)] = v;
            }
        }
    }
    let single_b = single_particle_drift(model, 0.0);
    let single_d = single_particle_diffusion(model);
    let s = single_b.nrows();
    let dim = n * s;
    let mut b = DMatrix::<f64>::zeros(dim, dim);
    let mut dd = DMatrix::<f64>::zeros(dim, dim);
    // Map single-particle coordinate r of particle i to its global index.
    let dm = s.saturating_sub(2 * d);
    let global = |i: usize, r: usize| -> usize {
        if r < d {
            i * d + r
        } else if r < 2 * d {
            nd + i * d + r - d
        } else {
            2 * nd + i * dm + r - 2 * d
        }
    };
    for i in 0..n {
        for r in 0..s {
            for c in 0..s {
                let gr = global(i, r);
                let gc = global(i, c);
                b[(gr, gc)] += single_b[(r, c)];
                dd[(gr, gc)] += single_d[(r, c)];
            }
        }
    }
    let force_row = if model.has_momentum() { nd } else { 0 };
    let mut fb = b.view_mut((force_row, 0), (nd, nd));
    fb += &force;
    Ok(DriftDiffusion {
        b: SquareMatrix::from_dmatrix(b)?,
        d: SquareMatrix::from_dmatrix(dd)?,
        dim,
        labels: state_labels(model, n),
    })
}

/// Mean-field splitting `dX = BX dt + K(X − ⟨X⟩) dt + √(2D) dW` for one
/// particle. Here `D` carries the β⁻¹ factor.
pub fn split_bk(model: &ValidatedModel) -> Result<(Matrix, Matrix, Matrix)> {
    let (omega2, eta2) = quadratic_coefficients(model)?;
    let d = model.d();
    let b = single_particle_drift(model, omega2);
    let s = b.nrows();
    let mut k = DMatrix::<f64>::zeros(s, s);
    let row = if model.has_momentum() { d } else { 0 };
    for j in 0..d {
        k[(row + j, j)] = -eta2;
    }
    let dm = single_particle_diffusion(model) / model.beta();
    Ok((SquareMatrix::from_dmatrix(b)?, SquareMatrix::from_dmatrix(k)?, SquareMatrix::from_dmatrix(dm)?))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &mut Vec<f64>, b: &[f64], scale: f64) {
    if a.len() < b.len() {
        a.resize(b.len(), 0.0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += scale * y;
    }
}

/// Characteristic polynomial (ascending coefficients) whose roots are the
/// base eigenvalues of the generalized dynamics for force coefficient `c`.
pub fn memory_polynomial(lambdas: &[f64], alphas: &[f64], c: f64) -> Vec<f64> {
    let prod = |skip: Option<usize>| {
        alphas.iter().enumerate().filter(|(k, _)| Some(*k) != skip).fold(vec![1.0], |acc, (_, &a)| poly_mul(&acc, &[a, 1.0]))
    };
    let full = prod(None);
    let mut p = poly_mul(&[0.0, 0.0, 1.0], &full);
    for (j, l) in lambdas.iter().enumerate() {
        poly_add(&mut p, &poly_mul(&[0.0, 1.0], &prod(Some(j))), l * l);
    }
    poly_add(&mut p, &full, c);
    p
}

fn horner(p: &[f64], z: C64) -> (C64, C64) {
    let mut v = C64::new(0.0, 0.0);
    let mut dv = C64::new(0.0, 0.0);
    for &a in p.iter().rev() {
        dv = dv * z + v;
        v = v * z + a;
    }
    (v, dv)
}

/// Complex roots of a real polynomial with ascending coefficients, via
/// companion-matrix eigenvalues polished by Newton steps.
pub fn poly_roots(p: &[f64]) -> Result<Vec<C64>> {
    let mut p = p.to_vec();
    while p.len() > 1 && *p.last().unwrap() == 0.0 {
        p.pop();
    }
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / lead;
    }
    let mut roots = eig(&SquareMatrix::from_dmatrix(comp)?).map_err(|e| Error::RootFindingFailure(e.to_string()))?;
    for z in roots.iter_mut() {
        let mut best = *z;
        let mut best_res = horner(&p, best).0.norm();
        for _ in 0..8 {
            let (v, dv) = horner(&p, best);
            if dv.norm() == 0.0 {
                break;
            }
            let cand = best - v / dv;
            let r = horner(&p, cand).0.norm();
            if !(r < best_res) {
                break;
            }
            best = cand;
            best_res = r;
        }
        let scale: f64 = p.iter().enumerate().map(|(i, a)| a.abs() * best.norm().powi(i as i32)).sum();
        if !best.re.is_finite() || !best.im.is_finite() || best_res > 1e-8 * scale.max(1.0) {
            return Err(Error::RootFindingFailure(format!("residual {best_res} at {best}")));
        }
        // Real polynomials: snap roundoff-sized imaginary parts.
        if best.im.abs() <= 1e-14 * best.norm().max(1.0) {
            best.im = 0.0;
        }
        *z = best;
    }
    sort_complex(&mut roots);
    Ok(roots)
}

fn branch(model: &ValidatedModel, c: f64) -> Result<Vec<C64>> {
    let d = model.d();
    let mut out = match model.kind() {
        DynamicsKind::Overdamped => vec![C64::new(-c, 0.0); d],
        DynamicsKind::Underdamped => {
            let g = model.gamma().expect("validated");
            let disc = g * g - 4.0 * c;
            let pair = if disc >= 0.0 {
                [C64::new((-g - disc.sqrt()) / 2.0, 0.0), C64::new((-g + disc.sqrt()) / 2.0, 0.0)]
            } else {
                [C64::new(-g / 2.0, -(-disc).sqrt() / 2.0), C64::new(-g / 2.0, (-disc).sqrt() / 2.0)]
            };
            pair.iter().flat_map(|&z| std::iter::repeat_n(z, d)).collect()
        }
        DynamicsKind::Generalized => {
            let mem = model.memory().expect("validated");
            if d == 1 {
                // Rotate into the eigenbasis of A so the polynomial form applies.
                let u = model.a_eigenvectors().expect("validated").as_matrix();
                let lam: Vec<f64> = (u.transpose() * &mem.lambda).column(0).iter().copied().collect();
                poly_roots(&memory_polynomial(&lam, model.a_eigenvalues(), c))?
            } else {
                eig(&SquareMatrix::from_dmatrix(single_particle_drift(model, c))?)?
            }
        }
    };
    sort_complex(&mut out);
    Ok(out)
}

/// Base eigenvalues split into the `ω²` branch (mean mode) and the
/// `ω² + η²` branch (fluctuation modes).
pub fn spectrum_branches(model: &ValidatedModel) -> Result<(Vec<C64>, Vec<C64>)> {
    let (omega2, eta2) = quadratic_coefficients(model)?;
    Ok((branch(model, omega2)?, branch(model, omega2 + eta2)?))
}

/// All base eigenvalues: both branches, sorted.
pub fn base_spectrum(model: &ValidatedModel) -> Result<Vec<C64>> {
    let (mut a, b) = spectrum_branches(model)?;
    a.extend(b);
    sort_complex(&mut a);
    Ok(a)
}

/// Whether two lists agree as multisets up to `tol` (greedy nearest match).
pub fn same_multiset(a: &[C64], b: &[C64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for x in a {
        let best = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by(|(_, u), (_, v)| (*u - x).norm().partial_cmp(&(*v - x).norm()).unwrap());
        match best {
            Some((j, y)) if (y - x).norm() <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct LatticePoint {
    pub re: f64,
    pub im: f64,
    /// Multiplicities `k_λ` over the base list.
    pub k: Vec<u32>,
}

impl LatticePoint {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SpectrumReport {
    pub base: Vec<(f64, f64)>,
    pub lattice: Vec<LatticePoint>,
    pub cap: u32,
    pub kind: Option<DynamicsKind>,
    /// Largest real part among nonzero lattice points.
    pub gap_rate: Option<f64>,
}

pub const DEFAULT_LATTICE_CAP: u32 = 4;

/// Sums `Σ k_λ λ` with `Σ k_λ ≤ cap`, deduplicated to 1e-12.
pub fn spectrum_lattice(base: &[C64], cap: u32) -> Result<SpectrumReport> {
    if base.is_empty() {
        return Err(Error::InvalidParameter("empty base spectrum".into()));
    }
    let mut points: Vec<LatticePoint> = Vec::new();
    let mut k = vec![0u32; base.len()];
    fn rec(base: &[C64], pos: usize, left: u32, k: &mut Vec<u32>, out: &mut Vec<LatticePoint>) {
        if pos == base.len() {
            let v = k.iter().zip(base).fold(C64::new(0.0, 0.0), |s, (&n, z)| s + z * n as f64);
            if !out.iter().any(|p| (p.value() - v).norm() <= 1e-12) {
                out.push(LatticePoint { re: v.re, im: v.im, k: k.clone() });
            }
            return;
        }
        for n in 0..=left {
            k[pos] = n;
            rec(base, pos + 1, left - n, k, out);
        }
        k[pos] = 0;
    }
    rec(base, 0, cap, &mut k, &mut points);
    points.sort_by(|a, b| {
        b.re.partial_cmp(&a.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap())
    });
    let gap_rate = points.iter().filter(|p| p.value().norm() > 1e-12).map(|p| p.re).fold(None, |acc: Option<f64>, r| {
        Some(acc.map_or(r, |a| a.max(r)))
    });
    Ok(SpectrumReport { base: base.iter().map(|z| (z.re, z.im)).collect(), lattice: points, cap, kind: None, gap_rate })
}

/// Lattice of the model's base spectrum.
pub fn model_spectrum(model: &ValidatedModel, cap: u32) -> Result<SpectrumReport> {
    let mut r = spectrum_lattice(&base_spectrum(model)?, cap)?;
    r.kind = Some(model.kind());
    Ok(r)
}

/// Fundamental solution
/// `Γ(t,x,y) = (4π)^{-n/2} det(D_t)^{-1/2} exp(−¼ (x − e^{−tB}y)ᵀ D_t⁻¹ (x − e^{−tB}y))`
/// with `D_t` the Gram integral of `(B, D)`.
pub fn ou_fundamental(b: &Matrix, d: &Matrix, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = b.n();
    if x.len() != n || y.len() != n {
        return Err(Error::ShapeMismatch(format!("points must have {n} coordinates")));
    }
    if !(t > 0.0) {
        return Err(Error::SingularCovariance(format!("D_t is singular at t = {t}")));
    }
    let dt = gram_integral(b, d, t)?;
    let det = dt.determinant();
    let chol = dt.as_matrix().clone().cholesky();
    let chol = match chol {
        Some(c) if det > 0.0 => c,
        _ => return Err(Error::SingularCovariance(format!("det D_t = {det}"))),
    };
    let shifted = expm(&b.scale(-t))?.mul_vec(y);
    let r = DVector::from_iterator(n, x.iter().zip(&shifted).map(|(a, s)| a - s));
    let quad = r.dot(&chol.solve(&r));
    let four_pi = 4.0 * std::f64::consts::PI;
    Ok(four_pi.powf(-(n as f64) / 2.0) * det.powf(-0.5) * (-0.25 * quad).exp())
}

/// Monte Carlo comparison of the kernel's centring against a simulation of
/// `dX = BX dt + √(2D) dW` started at `y`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct KernelCentreCheck {
    pub empirical_mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// `e^{−tB} y`, the centring used by [`ou_fundamental`].
    pub printed_centre: Vec<f64>,
    /// `e^{tB} y`.
    pub forward_centre: Vec<f64>,
    /// Max over coordinates of |empirical − centre| / SE.
    pub printed_z: f64,
    pub forward_z: f64,
}

pub fn ou_kernel_check(
    b: &Matrix,
    d: &Matrix,
    t: f64,
    y: &[f64],
    samples: usize,
    steps: usize,
    seed: u64,
) -> Result<KernelCentreCheck> {
    let n = b.n();
    if y.len() != n || d.n() != n {
        return Err(Error::ShapeMismatch("dimensions of B, D and y differ".into()));
    }
    let h = t / steps as f64;
    let noise = psd_sqrt(&d.scale(2.0 * h)).into_inner();
    let bm = b.as_matrix();
    let mut sum = vec![0.0; n];
    let mut sum2 = vec![0.0; n];
    for s in 0..samples {
        let mut rng = Philox::new(seed, s as u32, 0);
        let mut x = DVector::from_column_slice(y);
        for _ in 0..steps {
            let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            x = &x + bm * &x * h + &noise * w;
        }
        for k in 0..n {
            sum[k] += x[k];
            sum2[k] += x[k] * x[k];
        }
    }
    let ns = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / ns).collect();
    let se: Vec<f64> = (0..n).map(|k| ((sum2[k] / ns - mean[k] * mean[k]).max(0.0) * ns / (ns - 1.0) / ns).sqrt()).collect();
    let printed = expm(&b.scale(-t))?.mul_vec(y);
    let forward = expm(&b.scale(t))?.mul_vec(y);
    let z = |c: &[f64]| (0..n).map(|k| (mean[k] - c[k]).abs() / se[k].max(1e-300)).fold(0.0, f64::max);
    Ok(KernelCentreCheck {
        printed_z: z(&printed),
        forward_z: z(&forward),
        empirical_mean: mean,
        standard_error: se,
        printed_centre: printed,
        forward_centre: forward,
    })
}

/// Law at time `t` of the mean-field linear dynamics started at `x0`:
/// mean `e^{tB} x0`, covariance `2 ∫₀ᵗ e^{s(B+K)} D e^{s(B+K)ᵀ} ds`.
pub fn meanfield_green(b: &Matrix, k: &Matrix, d: &Matrix, t: f64, x0: &[f64]) -> Result<GaussianLaw> {
    let n = b.n();
    if k.n() != n || d.n() != n || x0.len() != n {
        return Err(Error::ShapeMismatch("B, K, D and x0 must share one dimension".into()));
    }
    let mean = expm(&b.scale(t))?.mul_vec(x0);
    let cov = gram_integral(&(b + k), d, t)?.scale(2.0);
    GaussianLaw::new(mean, cov)
}

/// The one-sided closed form `(B+K)⁻¹ (e^{2t(B+K)} − I) D`, falling back to
/// integrating `dQ/dt = 2[D + (B+K)Q]` when `B+K` is singular. Not symmetric
/// in general once the dimension exceeds one.
pub fn one_sided_covariance(b: &Matrix, k: &Matrix, d: &Matrix, t: f64) -> Result<Matrix> {
    let m = b + k;
    let n = m.n();
    let cond_ok = {
        let lu = m.as_matrix().clone().lu();
        let det = lu.determinant().abs();
        det > 1e-12 * m.norm1().powi(n as i32).max(1e-300)
    };
    if cond_ok {
        let inv = m.inverse().ok_or_else(|| Error::SingularCovariance("B+K singular".into()))?;
        let e = expm(&m.scale(2.0 * t))?;
        let diff = &e - &SquareMatrix::identity(n);
        return Ok(&(&inv * &diff) * d);
    }
    let steps = ((t * m.norm1().max(1.0)) / 1e-3).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mm = m.as_matrix();
    let dm = d.as_matrix();
    let f = |q: &DMatrix<f64>| (dm + mm * q) * 2.0;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for _ in 0..steps {
        let k1 = f(&q);
        let k2 = f(&(&q + &k1 * (h / 2.0)));
        let k3 = f(&(&q + &k2 * (h / 2.0)));
        let k4 = f(&(&q + &k3 * h));
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    SquareMatrix::from_dmatrix(q)
}
