//! Stationary states under Curie–Weiss interaction: the scalar
//! self-consistency map for the mean, its fixed points and bifurcation
//! diagram, the product-form stationary density and a finite-difference
//! residual of the stationary Fokker–Planck operator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::model::{DynamicsKind, PotentialSpec, ValidatedModel};
use crate::quadrature::{integrate_partitioned, QuadOptions};

type Matrix = SquareMatrix<f64>;

/// Exponent gap `β(Φ(±L) − min Φ)` required at the window edges.
const TAIL_GAP: f64 = 40.0;
const WINDOW_PIECES: usize = 32;

/// `R(m) = E[q]` under the density `∝ exp(−β(V(q) + ½η²(q − m)²))`.
#[derive(Clone, Debug)]
pub struct SelfConsistencyProblem {
    pub potential: PotentialSpec<f64>,
    pub eta2: f64,
    pub beta: f64,
    pub quad: QuadOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl Stability {
    pub fn from_slope(slope: f64) -> Self {
        let s = slope.abs();
        if (s - 1.0).abs() <= 1e-8 {
            Stability::Marginal
        } else if s < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Marginal => "marginal",
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct FixedPoint {
    pub m: f64,
    /// `R′(m)`.
    pub slope: f64,
    pub stability: Stability,
    /// `|R(m) − m|`.
    pub residual: f64,
}

/// Mean and variance of the tilted q-density at a given `m`.
#[derive(Clone, Copy, Debug)]
pub struct TiltedMoments {
    pub mean: f64,
    pub var: f64,
    /// Window half-width used for the integrals.
    pub half_width: f64,
}

impl SelfConsistencyProblem {
    pub fn new(potential: PotentialSpec<f64>, eta2: f64, beta: f64) -> Result<Self> {
        potential.check()?;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        if !(eta2 >= 0.0) || !eta2.is_finite() {
            return Err(Error::InvalidParameter(format!("eta2 must be nonnegative, got {eta2}")));
        }
        Ok(Self { potential, eta2, beta, quad: QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, max_intervals: 4000 } })
    }

    /// Only (V, η², β) enter, whatever the dynamics kind.
    pub fn from_model(model: &ValidatedModel) -> Result<Self> {
        if model.d() != 1 {
            return Err(Error::UnsupportedDimension("the self-consistency map is scalar (d = 1)".into()));
        }
        let eta2 = model
            .interaction()
            .eta2()
            .ok_or_else(|| Error::UnsupportedPotential("self-consistency needs a Curie-Weiss interaction".into()))?;
        Self::new(model.potential().clone(), eta2, model.beta())
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    fn phi(&self, q: f64, m: f64) -> f64 {
        self.potential.energy1(q) + 0.5 * self.eta2 * (q - m) * (q - m)
    }

    /// Window `[−L, L]` with `β(Φ(±L) − min Φ) ≥ 40`, and the approximate
    /// minimum of `Φ` used to shift exponents.
    pub fn window(&self, m: f64) -> Result<(f64, f64)> {
        let mut l = 2.0f64.max(2.0 * m.abs());
        for _ in 0..80 {
            let n = 801;
            let phi_min = (0..n)
                .map(|k| self.phi(-l + 2.0 * l * k as f64 / (n - 1) as f64, m))
                .fold(f64::INFINITY, f64::min);
            let gap = |q: f64| self.beta * (self.phi(q, m) - phi_min);
            if gap(l) >= TAIL_GAP && gap(-l) >= TAIL_GAP && phi_min.is_finite() {
                return Ok((l, phi_min));
            }
            l *= 1.5;
        }
        Err(Error::QuadratureFailure("potential does not confine: no integration window found".into()))
    }

    /// Mean and variance of `q` under `exp(−β Φ_m)`.
    pub fn tilted_moments(&self, m: f64) -> Result<TiltedMoments> {
        let (l, phi_min) = self.window(m)?;
        let w = |q: f64| (-self.beta * (self.phi(q, m) - phi_min)).exp();
        let pts: Vec<f64> = (0..=WINDOW_PIECES).map(|k| -l + 2.0 * l * k as f64 / WINDOW_PIECES as f64).collect();
        let z = integrate_partitioned(w, &pts, &QuadOptions { abs_tol: 1e-300, ..self.quad })?;
        let opts = QuadOptions { abs_tol: 1e-13 * z, ..self.quad };
        let mean = integrate_partitioned(|q| q * w(q), &pts, &opts)? / z;
        let var = integrate_partitioned(|q| (q - mean) * (q - mean) * w(q), &pts, &QuadOptions { abs_tol: 1e-13 * z, ..self.quad })? / z;
        Ok(TiltedMoments { mean, var, half_width: l })
    }

    /// Odd potentials aside, `R(0) = 0` is exact for even V; the quadrature
    /// is symmetric, so enforce it instead of returning roundoff.
    fn symmetric_zero(&self, m: f64) -> bool {
        m == 0.0 && self.potential.is_even()
    }
}

pub fn self_consistency_map(prob: &SelfConsistencyProblem, m: f64) -> Result<f64> {
    if prob.symmetric_zero(m) {
        return Ok(0.0);
    }
    Ok(prob.tilted_moments(m)?.mean)
}

/// `R′(m) = βη² Var_m(q)`, from differentiating under the integral.
pub fn map_slope(prob: &SelfConsistencyProblem, m: f64) -> Result<f64> {
    Ok(prob.beta * prob.eta2 * prob.tilted_moments(m)?.var)
}

/// Centred difference of `R` with step `h`.
pub fn centred_slope(prob: &SelfConsistencyProblem, m: f64, h: f64) -> Result<f64> {
    Ok((self_consistency_map(prob, m + h)? - self_consistency_map(prob, m - h)?) / (2.0 * h))
}

/// Uniform scan over the window of `R` at `m = 0`.
pub fn default_scan(prob: &SelfConsistencyProblem, points: usize) -> Result<Vec<f64>> {
    let (l, _) = prob.window(0.0)?;
    let n = points.max(3) | 1;
    Ok((0..n).map(|k| -l + 2.0 * l * k as f64 / (n - 1) as f64).collect())
}

fn make_fixed_point(prob: &SelfConsistencyProblem, m: f64) -> Result<FixedPoint> {
    let r = self_consistency_map(prob, m)?;
    let slope = map_slope(prob, m)?;
    Ok(FixedPoint { m, slope, stability: Stability::from_slope(slope), residual: (r - m).abs() })
}

/// Roots of `R(m) − m` located by sign changes on `scan` and refined by
/// bisection.
pub fn fixed_points(prob: &SelfConsistencyProblem, scan: &[f64]) -> Result<Vec<FixedPoint>> {
    let g = |m: f64| self_consistency_map(prob, m).map(|r| r - m);
    let vals: Vec<f64> = scan.iter().map(|&m| g(m)).collect::<Result<_>>()?;
    let is_root = |m: f64, v: f64| v.abs() <= 1e-12 * (1.0 + m.abs());
    let mut roots: Vec<f64> = scan.iter().zip(&vals).filter(|(m, v)| is_root(**m, **v)).map(|(m, _)| *m).collect();
    for i in 0..scan.len().saturating_sub(1) {
        let (mut a, mut ga) = (scan[i], vals[i]);
        let (mut b, mut gb) = (scan[i + 1], vals[i + 1]);
        // Probe just inside the cell when an endpoint is itself a root, so a
        // further root in the same cell is still bracketed.
        let probe = (b - a) * 1e-3;
        if is_root(a, ga) {
            a += probe;
            ga = g(a)?;
        }
        if is_root(b, gb) {
            b -= probe;
            gb = g(b)?;
        }
        if ga * gb >= 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let gm = g(mid)?;
            if gm == 0.0 || (b - a) < 1e-14 * (1.0 + mid.abs()) {
                a = mid;
                b = mid;
                break;
            }
            if (gm < 0.0) == (ga < 0.0) {
                a = mid;
                ga = gm;
            } else {
                b = mid;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots.into_iter().map(|m| make_fixed_point(prob, m)).collect()
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BifurcationDiagram {
    pub betas: Vec<f64>,
    pub branches: Vec<Vec<FixedPoint>>,
    pub beta_critical: Option<f64>,
}

impl BifurcationDiagram {
    /// Rows `(beta, m_star, stability, residual)`.
    pub fn rows(&self) -> Vec<(f64, f64, Stability, f64)> {
        self.betas
            .iter()
            .zip(&self.branches)
            .flat_map(|(&b, fps)| fps.iter().map(move |f| (b, f.m, f.stability, f.residual)))
            .collect()
    }
}

/// `R′(0; β) − 1`.
fn critical_gap(template: &SelfConsistencyProblem, beta: f64) -> Result<f64> {
    Ok(map_slope(&template.with_beta(beta), 0.0)? - 1.0)
}

/// Bisection for `R′(0; β) = 1` on `[lo, hi]`, assuming a sign change.
pub fn beta_critical(template: &SelfConsistencyProblem, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let ga = critical_gap(template, a)?;
    let gb = critical_gap(template, b)?;
    if ga * gb > 0.0 {
        return Err(Error::InvalidParameter(format!("no sign change of R'(0) - 1 on [{lo}, {hi}]")));
    }
    let neg_low = ga < 0.0;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if (critical_gap(template, mid)? < 0.0) == neg_low {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

pub fn bifurcation_diagram(template: &SelfConsistencyProblem, betas: &[f64], scan_points: usize) -> Result<BifurcationDiagram> {
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("beta grid must be increasing".into()));
    }
    let branches: Vec<Vec<FixedPoint>> = betas
        .par_iter()
        .map(|&b| {
            let prob = template.with_beta(b);
            fixed_points(&prob, &default_scan(&prob, scan_points)?)
        })
        .collect::<Result<_>>()?;
    let mut critical = None;
    if template.potential.is_even() && template.eta2 > 0.0 && betas.len() >= 2 {
        let gaps: Vec<f64> = betas.par_iter().map(|&b| critical_gap(template, b)).collect::<Result<_>>()?;
        if let Some(i) = (0..betas.len() - 1).find(|&i| gaps[i] * gaps[i + 1] <= 0.0 && gaps[i] != gaps[i + 1]) {
            critical = Some(beta_critical(template, betas[i], betas[i + 1], 1e-9)?);
        }
    }
    Ok(BifurcationDiagram { betas: betas.to_vec(), branches, beta_critical: critical })
}

/// Product-form stationary density for a fixed point `m*`:
/// `ρ(q,p,z) ∝ exp(−β(V(q) + ½η²(q − m*)²)) · exp(−β|p|²/2) · exp(−β|z|²/2)`.
#[derive(Clone, Debug)]
pub struct StationaryDensity {
    pub m_star: f64,
    pub beta: f64,
    pub kind: DynamicsKind,
    /// Number of auxiliary coordinates.
    pub m: usize,
    /// Variance of the p-factor (β⁻¹ unless perturbed).
    pub p_var: f64,
    /// Variance of each z-factor.
    pub z_var: f64,
    prob: SelfConsistencyProblem,
    phi_min: f64,
    log_norm_q: f64,
}

pub fn extend_to_full_state(m_star: f64, model: &ValidatedModel) -> Result<StationaryDensity> {
    let prob = SelfConsistencyProblem::from_model(model)?;
    let (l, phi_min) = prob.window(m_star)?;
    let pts: Vec<f64> = (0..=WINDOW_PIECES).map(|k| -l + 2.0 * l * k as f64 / WINDOW_PIECES as f64).collect();
    let z = integrate_partitioned(|q| (-prob.beta * (prob.phi(q, m_star) - phi_min)).exp(), &pts, &QuadOptions { abs_tol: 1e-300, ..prob.quad })?;
    Ok(StationaryDensity {
        m_star,
        beta: prob.beta,
        kind: model.kind(),
        m: model.m(),
        p_var: 1.0 / prob.beta,
        z_var: 1.0 / prob.beta,
        prob,
        phi_min,
        log_norm_q: z.ln(),
    })
}

fn gauss_density(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

impl StationaryDensity {
    pub fn q_density(&self, q: f64) -> f64 {
        (-self.beta * (self.prob.phi(q, self.m_star) - self.phi_min) - self.log_norm_q).exp()
    }
    pub fn p_density(&self, p: f64) -> f64 {
        gauss_density(p, self.p_var)
    }
    pub fn z_density(&self, z: f64) -> f64 {
        gauss_density(z, self.z_var)
    }

    /// Copy with a different p-factor variance.
    pub fn with_p_variance(&self, var: f64) -> Self {
        Self { p_var: var, ..self.clone() }
    }

    /// Number of state coordinates: q, then p, then z.
    pub fn dim(&self) -> usize {
        match self.kind {
            DynamicsKind::Overdamped => 1,
            DynamicsKind::Underdamped => 2,
            DynamicsKind::Generalized => 2 + self.m,
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let mut v = self.q_density(x[0]);
        if self.dim() > 1 {
            v *= self.p_density(x[1]);
        }
        for &z in x.iter().skip(2) {
            v *= self.z_density(z);
        }
        v
    }
}

/// Regular axis `{k·h : |k| ≤ n}`.
#[derive(Clone, Copy, Debug)]
pub struct Axis {
    pub h: f64,
    pub n: usize,
}

impl Axis {
    pub fn symmetric(half_width: f64, n: usize) -> Self {
        Self { h: half_width / n as f64, n }
    }
    pub fn len(&self) -> usize {
        2 * self.n + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 - self.n as f64) * self.h
    }
}

/// Tensor grid with row-major values (first axis slowest).
#[derive(Clone, Debug)]
pub struct GridDensity {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn sample(axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let shape: Vec<usize> = axes.iter().map(|a| a.len()).collect();
        let total: usize = shape.iter().product();
        let values = (0..total)
            .into_par_iter()
            .map(|flat| {
                let idx = unravel(flat, &shape);
                let x: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a.node(i)).collect();
                f(&x)
            })
            .collect();
        Self { axes, values }
    }

    /// Default box `[−5, 5]` per axis scaled by `β^{−1/2}`, `2n + 1` nodes each.
    pub fn default_axes(dim: usize, beta: f64, n: usize) -> Vec<Axis> {
        vec![Axis::symmetric(5.0 / beta.sqrt(), n); dim]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.h).product()
    }

    /// Trapezoid-free Riemann mass (nodes weigh `∏h`); boundary values are
    /// negligible on the boxes used here.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Mean of the first coordinate.
    pub fn q_mean(&self) -> f64 {
        let shape = self.shape();
        let inner: usize = shape[1..].iter().product();
        let ax = self.axes[0];
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..shape[0] {
            let s: f64 = self.values[i * inner..(i + 1) * inner].iter().sum();
            num += ax.node(i) * s;
            den += s;
        }
        num / den
    }
}

pub(crate) fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Single-particle drift and (β⁻¹-weighted) diffusion for `d = 1`, with the
/// interaction evaluated against the mean `m1`.
pub(crate) fn linear_parts(model: &ValidatedModel) -> Result<(Matrix, Vec<f64>)> {
    if model.d() != 1 {
        return Err(Error::UnsupportedDimension("grid operators are implemented for d = 1".into()));
    }
    let temp = 1.0 / model.beta();
    let dim = model.state_dim();
    let mut diff = Matrix::zeros(dim);
    let mut coupling = Matrix::zeros(dim);
    match model.kind() {
        DynamicsKind::Overdamped => diff.set(0, 0, temp),
        DynamicsKind::Underdamped => {
            let g = model.gamma().expect("validated");
            coupling.set(0, 1, 1.0);
            coupling.set(1, 1, -g);
            diff.set(1, 1, g * temp);
        }
        DynamicsKind::Generalized => {
            let mem = model.memory().expect("validated");
            coupling.set(0, 1, 1.0);
            for j in 0..mem.m {
                let l = mem.lambda[(j, 0)];
                coupling.set(1, 2 + j, l);
                coupling.set(2 + j, 1, -l);
                for k in 0..mem.m {
                    coupling.set(2 + j, 2 + k, -mem.a.get(j, k));
                    diff.set(2 + j, 2 + k, temp * mem.a.get(j, k));
                }
            }
        }
    }
    Ok((coupling, diff.to_row_major()))
}

/// Discrete L² norm of `K[ρ]ρ = −div(bρ) + Σ D_{jk} ∂_j∂_k ρ` over interior
/// nodes, with second-order central differences. The drift `b` uses
/// `∇V`, the Curie–Weiss force against the grid mean of `q`, and the linear
/// couplings of the model.
pub fn kfp_residual(rho: &GridDensity, model: &ValidatedModel) -> Result<f64> {
    let eta2 = model
        .interaction()
        .eta2()
        .ok_or_else(|| Error::UnsupportedPotential("grid residual needs a Curie-Weiss interaction".into()))?;
    let (coupling, diff) = linear_parts(model)?;
    let dim = model.state_dim();
    if rho.axes.len() != dim {
        return Err(Error::ShapeMismatch(format!("grid has {} axes, state has {dim}", rho.axes.len())));
    }
    if rho.axes.iter().any(|a| a.n < 2 || !(a.h > 0.0)) {
        return Err(Error::GridTooCoarse("need at least 5 nodes and positive spacing per axis".into()));
    }
    let shape = rho.shape();
    let st = strides(&shape);
    let total = rho.values.len();
    let m1 = rho.q_mean();
    let force_row = if dim == 1 { 0 } else { 1 };
    let potential = model.potential();
    let c = coupling.as_matrix();

    // Drift components at every node.
    let drift: Vec<Vec<f64>> = (0..dim)
        .map(|k| {
            (0..total)
                .into_par_iter()
                .map(|flat| {
                    let idx = unravel(flat, &shape);
                    let x: Vec<f64> = idx.iter().zip(&rho.axes).map(|(&i, a)| a.node(i)).collect();
                    let mut b: f64 = (0..dim).map(|j| c[(k, j)] * x[j]).sum();
                    if k == force_row {
                        b -= potential.gradient1(x[0]) + eta2 * (x[0] - m1);
                    }
                    b
                })
                .collect()
        })
        .collect();

    let v = &rho.values;
    let sum: f64 = (0..total)
        .into_par_iter()
        .filter_map(|flat| {
            let idx = unravel(flat, &shape);
            if idx.iter().zip(&shape).any(|(&i, &n)| i == 0 || i + 1 == n) {
                return None;
            }
            let mut k_val = 0.0;
            for k in 0..dim {
                let h = rho.axes[k].h;
                let (up, dn) = (flat + st[k], flat - st[k]);
                k_val -= (drift[k][up] * v[up] - drift[k][dn] * v[dn]) / (2.0 * h);
                for j in 0..dim {
                    let djk = diff[j * dim + k];
                    if djk == 0.0 {
                        continue;
                    }
                    if j == k {
                        k_val += djk * (v[up] - 2.0 * v[flat] + v[dn]) / (h * h);
                    } else {
                        let hj = rho.axes[j].h;
                        let pp = v[flat + st[j] + st[k]];
                        let pm = v[flat + st[j] - st[k]];
                        let mp = v[flat - st[j] + st[k]];
                        let mm = v[flat - st[j] - st[k]];
                        k_val += djk * (pp - pm - mp + mm) / (4.0 * h * hj);
                    }
                }
            }
            Some(k_val * k_val)
        })
        .sum();
    Ok((sum * rho.cell_volume()).sqrt())
}

/// Structure matrix of the Hamiltonian part, `[[0, −I, 0], [I, 0, −λᵀ], [0, λ, 0]]`,
/// so that the conservative drift is `−J∇H`.
pub fn j_matrix(model: &ValidatedModel) -> Result<Matrix> {
    let d = model.d();
    let dim = model.state_dim();
    let mut j = Matrix::zeros(dim);
    if !model.has_momentum() {
        return Ok(j);
    }
    for k in 0..d {
        j.set(k, d + k, -1.0);
        j.set(d + k, k, 1.0);
    }
    if let (DynamicsKind::Generalized, Some(mem)) = (model.kind(), model.memory()) {
        for r in 0..mem.lambda.nrows() {
            for k in 0..d {
                let l = mem.lambda[(r, k)];
                j.set(d + k, 2 * d + r, -l);
                j.set(2 * d + r, d + k, l);
            }
        }
    }
    Ok(j)
}
