//! Free energy, dissipation and the energy/entropy pair of the coupled
//! `(ρ, e)` system. Closed forms in the Gaussian regime; grid quadrature and
//! finite-difference residuals otherwise.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{stationary_gram, SquareMatrix};
use crate::model::{DynamicsKind, ValidatedModel};
use crate::quadratic::{split_bk, GaussianLaw};
use crate::quadrature::trapezoid;
use crate::stationary::{
    extend_to_full_state, fixed_points, default_scan, strides, unravel, GridDensity, SelfConsistencyProblem,
    StationaryDensity,
};

/// Gaussian law over the single-particle state of a quadratic model.
#[derive(Clone, Debug)]
pub struct GaussianEnsembleLaw {
    pub law: GaussianLaw,
    pub model: ValidatedModel,
}

struct Layout {
    d: usize,
    q: std::ops::Range<usize>,
    p: Option<std::ops::Range<usize>>,
    z: Option<std::ops::Range<usize>>,
}

fn layout(model: &ValidatedModel) -> Layout {
    let d = model.d();
    let p = model.has_momentum().then(|| d..2 * d);
    let z = (model.m() > 0).then(|| 2 * d..model.state_dim());
    Layout { d, q: 0..d, p, z }
}

fn block_second_moment(law: &GaussianLaw, r: &std::ops::Range<usize>) -> f64 {
    r.clone().map(|i| law.cov.get(i, i) + law.mean[i] * law.mean[i]).sum()
}

impl GaussianEnsembleLaw {
    pub fn new(law: GaussianLaw, model: &ValidatedModel) -> Result<Self> {
        if model.potential().omega2().is_none() || model.interaction().eta2().is_none() {
            return Err(Error::UnsupportedPotential("Gaussian thermodynamics needs quadratic V and Curie-Weiss U".into()));
        }
        if law.dim() != model.state_dim() {
            return Err(Error::ShapeMismatch(format!("law has dimension {}, state has {}", law.dim(), model.state_dim())));
        }
        Ok(Self { law, model: model.clone() })
    }

    /// Stationary law of the linear mean-field dynamics centred at zero.
    pub fn stationary(model: &ValidatedModel) -> Result<Self> {
        let (b, k, d) = split_bk(model)?;
        let cov = stationary_gram(&(&b + &k), &d)?.scale(2.0);
        Self::new(GaussianLaw::new(vec![0.0; model.state_dim()], cov)?, model)
    }

    fn omega2(&self) -> f64 {
        self.model.potential().omega2().expect("checked")
    }
    fn eta2(&self) -> f64 {
        self.model.interaction().eta2().expect("checked")
    }

    /// `ℋ(ρ) = ∫(½|p|² + V + ½U∗ρ + ½‖z‖²) ρ`.
    pub fn hamiltonian(&self) -> f64 {
        let lay = layout(&self.model);
        let law = &self.law;
        let trq: f64 = lay.q.clone().map(|i| law.cov.get(i, i)).sum();
        let mut h = 0.5 * self.omega2() * block_second_moment(law, &lay.q) + self.model.potential().offset;
        h += 0.5 * self.eta2() * trq;
        if let Some(p) = &lay.p {
            h += 0.5 * block_second_moment(law, p);
        }
        if let Some(z) = &lay.z {
            h += 0.5 * block_second_moment(law, z);
        }
        h
    }

    /// Differential entropy `½ log((2πe)ⁿ det Σ)`.
    pub fn entropy(&self) -> Result<f64> {
        let n = self.law.dim() as f64;
        let chol = self
            .law
            .cov
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("covariance not positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(0.5 * (n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet))
    }

    fn precision(&self) -> Result<DMatrix<f64>> {
        self.law
            .cov
            .as_matrix()
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::SingularCovariance("covariance not positive definite".into()))
    }
}

/// `F(ρ) = ℋ(ρ) − β⁻¹ Ent(ρ)`.
pub fn free_energy(state: &GaussianEnsembleLaw) -> Result<f64> {
    Ok(state.hamiltonian() - state.entropy()? / state.model.beta())
}

/// Friction block of the dynamics: its index range, the matrix `G` acting
/// there, and the linear map `x ↦ ∇_block δF/δρ` without the entropy part.
fn friction_block(state: &GaussianEnsembleLaw) -> (std::ops::Range<usize>, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let model = &state.model;
    let lay = layout(model);
    let n = model.state_dim();
    let d = lay.d;
    match model.kind() {
        DynamicsKind::Overdamped => {
            let c = state.omega2() + state.eta2();
            let lin = DMatrix::identity(d, n) * c;
            // The interaction part is centred, so only ω² survives in the mean.
            let centre: Vec<f64> = lay.q.clone().map(|i| state.eta2() * state.law.mean[i]).collect();
            (lay.q, DMatrix::identity(d, d), lin, centre)
        }
        DynamicsKind::Underdamped => {
            let r = lay.p.expect("momentum");
            let mut lin = DMatrix::zeros(d, n);
            lin.view_mut((0, r.start), (d, d)).fill_with_identity();
            let g = model.gamma().expect("validated");
            (r, DMatrix::identity(d, d) * g, lin, vec![0.0; d])
        }
        DynamicsKind::Generalized => {
            let r = lay.z.expect("memory");
            let dm = r.len();
            let mut lin = DMatrix::zeros(dm, n);
            lin.view_mut((0, r.start), (dm, dm)).fill_with_identity();
            let a = model.memory().expect("validated").a.as_matrix().clone();
            (r, a, lin, vec![0.0; dm])
        }
    }
}

/// `−dF/dt = ∫ ρ wᵀ G w` with `w = ∇_b(δF/δρ)` on the friction block `b`
/// (`z` with `G = A` for the generalized kind).
pub fn dissipation(state: &GaussianEnsembleLaw) -> Result<f64> {
    let (r, g, lin, centre) = friction_block(state);
    let beta = state.model.beta();
    let prec = state.precision()?;
    let sigma = state.law.cov.as_matrix();
    let l = &lin - prec.rows(r.start, r.len()) / beta;
    let cov_w = &l * sigma * l.transpose();
    let mean_w = nalgebra::DVector::from_iterator(r.len(), (&lin * nalgebra::DVector::from_column_slice(&state.law.mean)).iter().zip(&centre).map(|(a, c)| a - c));
    let val = (mean_w.transpose() * &g * &mean_w)[(0, 0)] + (&g * cov_w).trace();
    Ok(val.max(0.0))
}

/// Density for the `(E, S)` pair.
#[derive(Clone, Debug)]
pub enum RhoState {
    Gaussian(GaussianEnsembleLaw),
    Grid(GridDensity, ValidatedModel),
}

#[derive(Clone, Debug)]
pub struct GenericState {
    pub rho: RhoState,
    pub e: f64,
}

/// `E = ℋ(ρ) + e`, `S = −β⁻¹∫ρ log ρ + e`.
pub fn generic_functionals(state: &GenericState) -> Result<(f64, f64)> {
    match &state.rho {
        RhoState::Gaussian(g) => {
            let ent = g.entropy()?;
            Ok((g.hamiltonian() + state.e, ent / g.model.beta() + state.e))
        }
        RhoState::Grid(rho, model) => {
            let (h, ent) = grid_functionals(rho, model)?;
            Ok((h + state.e, ent / model.beta() + state.e))
        }
    }
}

/// `(ℋ, −∫ρ log ρ)` by Riemann sums on the grid (`d = 1`).
fn grid_functionals(rho: &GridDensity, model: &ValidatedModel) -> Result<(f64, f64)> {
    if model.d() != 1 || rho.axes.len() != model.state_dim() {
        return Err(Error::ShapeMismatch("grid axes must match the d = 1 state".into()));
    }
    if rho.axes.iter().any(|a| a.n < 2) {
        return Err(Error::GridTooCoarse("need at least 5 nodes per axis".into()));
    }
    let eta2 = model.interaction().eta2().unwrap_or(0.0);
    let shape = rho.shape();
    let vol = rho.cell_volume();
    let mass = rho.mass();
    let mq = rho.q_mean();
    let pot = model.potential();
    let (mut h, mut ent, mut var_q) = (0.0, 0.0, 0.0);
    for (flat, &v) in rho.values.iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        let idx = unravel(flat, &shape);
        let x: Vec<f64> = idx.iter().zip(&rho.axes).map(|(&i, a)| a.node(i)).collect();
        let kin: f64 = x[1..].iter().map(|y| 0.5 * y * y).sum();
        h += v * (pot.energy1(x[0]) + kin);
        var_q += v * (x[0] - mq) * (x[0] - mq);
        ent -= v * (v / mass).ln();
    }
    let h = h * vol / mass + 0.5 * eta2 * var_q * vol / mass;
    Ok((h, ent * vol / mass))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ThermoRow {
    pub t: f64,
    pub energy: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub e: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ThermoSeries {
    pub rows: Vec<ThermoRow>,
}

impl ThermoSeries {
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.rows[0].energy;
        self.rows.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max)
    }
}

/// Heun (second order) march of `dμ = Bμ`, `dΣ = MΣ + ΣMᵀ + 2D` with
/// `M = B + K`, and `de/dt = tr(GΣ_bb) + μ_bᵀGμ_b − β⁻¹ tr G` on the friction
/// block, recording every `record_every` steps.
pub fn evolve_coupled(state: &GenericState, dt: f64, t_end: f64, record_every: usize) -> Result<ThermoSeries> {
    let g0 = match &state.rho {
        RhoState::Gaussian(g) => g,
        RhoState::Grid(..) => return Err(Error::InvalidParameter("coupled evolution needs a Gaussian state".into())),
    };
    let model = &g0.model;
    if model.kind() == DynamicsKind::Overdamped {
        return Err(Error::InvalidParameter("the coupled (rho, e) system needs momentum".into()));
    }
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidParameter("need dt > 0 and T > 0".into()));
    }
    let (b, k, dd) = split_bk(model)?;
    let bm = b.as_matrix().clone();
    let mm = (&b + &k).into_inner();
    let dm2 = dd.as_matrix() * 2.0;
    let (r, gmat, _, _) = friction_block(g0);
    let temp = 1.0 / model.beta();
    let tr_g = gmat.trace();
    let rhs = |mu: &nalgebra::DVector<f64>, sig: &DMatrix<f64>| {
        let dmu = &bm * mu;
        let dsig = &mm * sig + sig * mm.transpose() + &dm2;
        let sb = sig.view((r.start, r.start), (r.len(), r.len()));
        let mb = mu.rows(r.start, r.len());
        let de = (&gmat * sb).trace() + (mb.transpose() * &gmat * mb)[(0, 0)] - temp * tr_g;
        (dmu, dsig, de)
    };
    let mut mu = nalgebra::DVector::from_column_slice(&g0.law.mean);
    let mut sig = g0.law.cov.as_matrix().clone();
    let mut e = state.e;
    let steps = crate::sim::step_count(t_end, dt);
    let record_every = record_every.max(1) as u64;
    let mut rows = Vec::new();
    let mut record = |t: f64, mu: &nalgebra::DVector<f64>, sig: &DMatrix<f64>, e: f64| -> Result<()> {
        let law = GaussianEnsembleLaw::new(
            GaussianLaw::new(mu.iter().copied().collect(), SquareMatrix::from_dmatrix((sig + sig.transpose()) * 0.5)?)?,
            model,
        )?;
        let (en, s) = generic_functionals(&GenericState { rho: RhoState::Gaussian(law.clone()), e })?;
        rows.push(ThermoRow { t, energy: en, entropy: s, free_energy: free_energy(&law)?, dissipation: dissipation(&law)?, e });
        Ok(())
    };
    record(0.0, &mu, &sig, e)?;
    for n in 1..=steps {
        let (k1m, k1s, k1e) = rhs(&mu, &sig);
        let mu_p = &mu + &k1m * dt;
        let sig_p = &sig + &k1s * dt;
        let (k2m, k2s, k2e) = rhs(&mu_p, &sig_p);
        mu += (k1m + k2m) * (0.5 * dt);
        sig += (k1s + k2s) * (0.5 * dt);
        e += 0.5 * dt * (k1e + k2e);
        if n % record_every == 0 || n == steps {
            record(n as f64 * dt, &mu, &sig, e)?;
        }
    }
    Ok(ThermoSeries { rows })
}

fn grid_drift_check(rho: &GridDensity, model: &ValidatedModel) -> Result<()> {
    if model.d() != 1 || model.kind() != DynamicsKind::Generalized {
        return Err(Error::UnsupportedDimension("degeneracy residuals are defined for the generalized kind with d = 1".into()));
    }
    if rho.axes.len() != model.state_dim() {
        return Err(Error::ShapeMismatch(format!("grid has {} axes, state has {}", rho.axes.len(), model.state_dim())));
    }
    if rho.axes.iter().any(|a| a.n < 2 || !(a.h > 0.0)) {
        return Err(Error::GridTooCoarse("need at least 5 nodes and positive spacing per axis".into()));
    }
    if rho.values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("density must be positive on the grid".into()));
    }
    Ok(())
}

/// Central first difference along axis `k` of a node field; `None` at the
/// boundary.
fn central(values: &[f64], flat: usize, stride: usize, h: f64) -> f64 {
    (values[flat + stride] - values[flat - stride]) / (2.0 * h)
}

fn interior(idx: &[usize], shape: &[usize], margin: usize) -> bool {
    idx.iter().zip(shape).all(|(&i, &n)| i >= margin && i + margin < n)
}

/// `(r1, r2)`: discrete L² norms of `div(ρ J ∇ξ)` with `ξ = −β⁻¹(log ρ + 1)`,
/// and of `−div_z(ρ A ∇_z H) + div_z(ρ A z)` with `H = ½p² + V + ½η²(q − m₁)² + ½‖z‖²`.
pub fn degeneracy_residual(rho: &GridDensity, model: &ValidatedModel) -> Result<(f64, f64)> {
    grid_drift_check(rho, model)?;
    let beta = model.beta();
    let dim = model.state_dim();
    let shape = rho.shape();
    let st = strides(&shape);
    let total = rho.values.len();
    let j = crate::stationary::j_matrix(model)?;
    let a = model.memory().expect("validated").a.as_matrix().clone();
    let eta2 = model.interaction().eta2().unwrap_or(0.0);
    let m1 = rho.q_mean();
    let pot = model.potential();
    let v = &rho.values;
    let node = |flat: usize| -> Vec<f64> { unravel(flat, &shape).iter().zip(&rho.axes).map(|(&i, ax)| ax.node(i)).collect() };

    let xi: Vec<f64> = v.iter().map(|&r| -(r.ln() + 1.0) / beta).collect();
    let ham: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|f| {
            let x = node(f);
            let zz: f64 = x[2..].iter().map(|z| 0.5 * z * z).sum();
            0.5 * x[1] * x[1] + pot.energy1(x[0]) + 0.5 * eta2 * (x[0] - m1) * (x[0] - m1) + zz
        })
        .collect();

    // Fluxes at nodes one layer in from the boundary.
    let flux = |f: usize| -> Option<(Vec<f64>, Vec<f64>)> {
        if !interior(&unravel(f, &shape), &shape, 1) {
            return None;
        }
        let grad_xi: Vec<f64> = (0..dim).map(|k| central(&xi, f, st[k], rho.axes[k].h)).collect();
        let f1: Vec<f64> = (0..dim).map(|r| v[f] * (0..dim).map(|c| j.get(r, c) * grad_xi[c]).sum::<f64>()).collect();
        let x = node(f);
        let nz = dim - 2;
        let f2: Vec<f64> = (0..nz)
            .map(|r| {
                let mut s = 0.0;
                for c in 0..nz {
                    let dh = central(&ham, f, st[2 + c], rho.axes[2 + c].h);
                    s += a[(r, c)] * (x[2 + c] - dh);
                }
                v[f] * s
            })
            .collect();
        Some((f1, f2))
    };
    let fluxes: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..total).into_par_iter().map(flux).collect();
    let (s1, s2) = (0..total)
        .into_par_iter()
        .filter_map(|f| {
            if !interior(&unravel(f, &shape), &shape, 2) {
                return None;
            }
            let mut d1 = 0.0;
            for k in 0..dim {
                let up = fluxes[f + st[k]].as_ref().expect("interior");
                let dn = fluxes[f - st[k]].as_ref().expect("interior");
                d1 += (up.0[k] - dn.0[k]) / (2.0 * rho.axes[k].h);
            }
            let mut d2 = 0.0;
            for k in 0..dim - 2 {
                let up = fluxes[f + st[2 + k]].as_ref().expect("interior");
                let dn = fluxes[f - st[2 + k]].as_ref().expect("interior");
                d2 += (up.1[k] - dn.1[k]) / (2.0 * rho.axes[2 + k].h);
            }
            Some((d1 * d1, d2 * d2))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let vol = rho.cell_volume();
    Ok(((s1 * vol).sqrt(), (s2 * vol).sqrt()))
}

/// `⟨ξ, M ξ⟩ = ∫ ρ (∇_z ξ)ᵀ A ∇_z ξ` for a node field `xi`.
pub fn friction_form(rho: &GridDensity, model: &ValidatedModel, xi: &[f64]) -> Result<f64> {
    grid_drift_check(rho, model)?;
    if xi.len() != rho.values.len() {
        return Err(Error::ShapeMismatch("test function must live on the grid".into()));
    }
    let shape = rho.shape();
    let st = strides(&shape);
    let a = model.memory().expect("validated").a.as_matrix().clone();
    let nz = shape.len() - 2;
    let sum: f64 = (0..xi.len())
        .into_par_iter()
        .filter_map(|f| {
            if !interior(&unravel(f, &shape), &shape, 1) {
                return None;
            }
            let g: Vec<f64> = (0..nz).map(|k| central(xi, f, st[2 + k], rho.axes[2 + k].h)).collect();
            let mut s = 0.0;
            for r in 0..nz {
                for c in 0..nz {
                    s += g[r] * a[(r, c)] * g[c];
                }
            }
            Some(rho.values[f] * s)
        })
        .sum();
    Ok(sum * rho.cell_volume())
}

/// One maximiser of `S` subject to `E = E₀`.
#[derive(Clone, Debug)]
pub struct MaxEntropyState {
    pub m_star: f64,
    pub density: StationaryDensity,
    /// Multiplier of the energy constraint; `δS/δe = λ₁ δE/δe` forces 1.
    pub lagrange_energy: f64,
    /// `e∞ = E₀ − ℋ(ρ∞)`.
    pub e_inf: f64,
    /// `ℋ(ρ∞)`.
    pub hamiltonian: f64,
    /// Spread of `δS/δρ − λ₁ δE/δρ` over the probe grid (must be constant).
    pub first_order_residual: f64,
    /// Max relative gap between `exp(−βH_ρ)/Z` and the product-form density.
    pub pointwise_gap: f64,
}

/// Maximum-entropy stationary states at energy `E₀`, one per fixed point of
/// the self-consistency map.
pub fn max_entropy_stationary(model: &ValidatedModel, e0: f64) -> Result<Vec<MaxEntropyState>> {
    let prob = SelfConsistencyProblem::from_model(model)?;
    let fps = fixed_points(&prob, &default_scan(&prob, 801)?)?;
    let beta = model.beta();
    let eta2 = prob.eta2;
    let pot = model.potential();
    let nkin = model.state_dim() - 1;
    fps.iter()
        .map(|fp| {
            let density = extend_to_full_state(fp.m, model)?;
            let (l, _) = prob.window(fp.m)?;
            // Independent normalisation: dense trapezoid over q.
            let hq = |q: f64| pot.energy1(q) + 0.5 * eta2 * (q - fp.m) * (q - fp.m);
            let hmin = (0..4001).map(|i| hq(-l + 2.0 * l * i as f64 / 4000.0)).fold(f64::INFINITY, f64::min);
            let w = |q: f64| (-beta * (hq(q) - hmin)).exp();
            let nodes = 200_000;
            let zq = trapezoid(w, -l, l, nodes);
            let mean_q = trapezoid(|q| q * w(q), -l, l, nodes) / zq;
            let var_q = trapezoid(|q| (q - mean_q).powi(2) * w(q), -l, l, nodes) / zq;
            let ev = trapezoid(|q| pot.energy1(q) * w(q), -l, l, nodes) / zq;
            let log_z = zq.ln() - beta * hmin + 0.5 * nkin as f64 * (2.0 * std::f64::consts::PI / beta).ln();
            let hamiltonian = ev + 0.5 * eta2 * var_q + 0.5 * nkin as f64 / beta;

            // H_ρ with U∗ρ(q) = ½η²((q − m)² + Var ρ_q), evaluated with the self-consistent mean.
            let h_rho = |x: &[f64]| {
                let kin: f64 = x[1..].iter().map(|y| 0.5 * y * y).sum();
                pot.energy1(x[0]) + 0.5 * eta2 * ((x[0] - mean_q).powi(2) + var_q) + kin
            };
            let mut gap: f64 = 0.0;
            let mut stationarity = Vec::new();
            let probes = [-1.5, -0.7, -0.2, 0.0, 0.4, 1.1, 1.6];
            for &q in &probes {
                for &p in &probes[1..6] {
                    let mut x = vec![q];
                    if nkin > 0 {
                        x.push(p);
                    }
                    for k in 1..nkin {
                        x.push(probes[(k + 2) % probes.len()] * 0.5);
                    }
                    let kin: f64 = x[1..].iter().map(|y| 0.5 * y * y).sum();
                    let me = (-beta * (hq(x[0]) + kin) - log_z).exp();
                    let prod = density.density(&x);
                    gap = gap.max((me - prod).abs() / prod.max(1e-300));
                    stationarity.push(-(me.ln() + 1.0) / beta - h_rho(&x));
                }
            }
            let c = stationarity[0];
            let first_order_residual = stationarity.iter().map(|s| (s - c).abs()).fold(0.0, f64::max);
            Ok(MaxEntropyState {
                m_star: fp.m,
                density,
                lagrange_energy: 1.0,
                e_inf: e0 - hamiltonian,
                hamiltonian,
                first_order_residual,
                pointwise_gap: gap,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, InteractionSpec, MemorySpec, ModelSpec, PotentialSpec};

    fn gle(eta2: f64, beta: f64) -> ValidatedModel {
        validate(ModelSpec {
            d: 1,
            beta,
            potential: PotentialSpec::quadratic(1.0),
            interaction: InteractionSpec::CurieWeiss { eta2 },
            memory: Some(MemorySpec::diagonal(&[1.0], &[1.0]).unwrap()),
            gamma: None,
            kind: DynamicsKind::Generalized,
        })
        .unwrap()
    }

    #[test]
    fn stationary_has_no_dissipation() {
        let s = GaussianEnsembleLaw::stationary(&gle(1.0, 2.0)).unwrap();
        assert!(dissipation(&s).unwrap() < 1e-10);
    }

    #[test]
    fn offset_shifts_free_energy() {
        let m = gle(0.5, 1.0);
        let mut spec = m.spec().clone();
        spec.potential = spec.potential.with_offset(3.25);
        let shifted = validate(spec).unwrap();
        let a = free_energy(&GaussianEnsembleLaw::stationary(&m).unwrap()).unwrap();
        let b = free_energy(&GaussianEnsembleLaw::stationary(&shifted).unwrap()).unwrap();
        assert!((b - a - 3.25).abs() < 1e-12);
    }

    #[test]
    fn e_shift_moves_both() {
        let g = GaussianEnsembleLaw::stationary(&gle(1.0, 1.0)).unwrap();
        let (e0, s0) = generic_functionals(&GenericState { rho: RhoState::Gaussian(g.clone()), e: 0.0 }).unwrap();
        let (e1, s1) = generic_functionals(&GenericState { rho: RhoState::Gaussian(g), e: 2.5 }).unwrap();
        assert!((e1 - e0 - 2.5).abs() < 1e-14 && (s1 - s0 - 2.5).abs() < 1e-14);
    }

    #[test]
    fn coupled_from_stationary_is_still() {
        let g = GaussianEnsembleLaw::stationary(&gle(1.0, 1.0)).unwrap();
        let s = evolve_coupled(&GenericState { rho: RhoState::Gaussian(g), e: 0.0 }, 1e-2, 1.0, 10).unwrap();
        let r0 = &s.rows[0];
        for r in &s.rows {
            assert!((r.energy - r0.energy).abs() < 1e-12);
            assert!((r.entropy - r0.entropy).abs() < 1e-12);
        }
    }

    #[test]
    fn overdamped_dissipation_matches_free_energy_rate() {
        let m = validate(ModelSpec {
            d: 1,
            beta: 1.0,
            potential: PotentialSpec::quadratic(1.0),
            interaction: InteractionSpec::CurieWeiss { eta2: 1.0 },
            memory: None,
            gamma: None,
            kind: DynamicsKind::Overdamped,
        })
        .unwrap();
        let law = GaussianEnsembleLaw::new(GaussianLaw::new(vec![0.3], SquareMatrix::scalar(0.2)).unwrap(), &m).unwrap();
        // dF/dt along dμ = −ω²μ, dΣ = 2(−cΣ + β⁻¹):
        let h = 1e-6;
        let adv = |s: f64| {
            let mu = 0.3 - s * 0.3;
            let var = 0.2 + s * 2.0 * (-2.0 * 0.2 + 1.0);
            free_energy(&GaussianEnsembleLaw::new(GaussianLaw::new(vec![mu], SquareMatrix::scalar(var)).unwrap(), &m).unwrap()).unwrap()
        };
        let rate = (adv(h) - adv(-h)) / (2.0 * h);
        assert!((rate + dissipation(&law).unwrap()).abs() < 1e-6);
    }
}
