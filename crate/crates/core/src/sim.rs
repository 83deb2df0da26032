//! Interacting particle systems: ensemble state, splitting integrators and
//! moment observables.
//!
//! Randomness is drawn from a counter-based stream keyed by
//! `(seed, particle, step)` and the empirical mean is reduced over fixed
//! chunks in a fixed order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SquareMatrix};
use crate::model::{DynamicsKind, InteractionSpec, ValidatedModel};
use crate::quadratic::GaussianLaw;
use crate::rng::Philox;

type Matrix = SquareMatrix<f64>;

const REDUCE_CHUNK: usize = 4096;
const INIT_STEP: u64 = u64::MAX;

/// Initial law of each particle's state `(q, p, z)`.
#[derive(Clone, Debug)]
pub enum InitLaw {
    /// Every particle at the same state.
    Point(Vec<f64>),
    /// Joint Gaussian over the full single-particle state.
    Gaussian(GaussianLaw),
    /// Independent blocks; `p` is ignored for overdamped and `z` unless
    /// generalized.
    Product { q: GaussianLaw, p: GaussianLaw, z: GaussianLaw },
}

impl InitLaw {
    /// Point start from block values; absent blocks default to zero.
    pub fn point(model: &ValidatedModel, q: &[f64], p: &[f64], z: &[f64]) -> Result<Self> {
        let d = model.d();
        let dm = d * model.m();
        let fill = |v: &[f64], len: usize, name: &str| -> Result<Vec<f64>> {
            match v.len() {
                0 => Ok(vec![0.0; len]),
                1 => Ok(vec![v[0]; len]),
                n if n == len => Ok(v.to_vec()),
                n => Err(Error::ShapeMismatch(format!("{name} needs {len} entries, got {n}"))),
            }
        };
        let mut x = fill(q, d, "q0")?;
        if model.has_momentum() {
            x.extend(fill(p, d, "p0")?);
        }
        if dm > 0 {
            x.extend(fill(z, dm, "z0")?);
        }
        Ok(InitLaw::Point(x))
    }
}

/// State of `N` particles, stored particle-major as `[q | p | z]` rows.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    n: usize,
    d: usize,
    stride: usize,
    state: Vec<f64>,
    pub time: f64,
    seed: u64,
    step_index: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn steps_taken(&self) -> u64 {
        self.step_index
    }
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.state[i * self.stride..(i + 1) * self.stride]
    }
    pub fn particle_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.state[i * self.stride..(i + 1) * self.stride]
    }
    pub fn q(&self, i: usize) -> &[f64] {
        &self.particle(i)[..self.d]
    }
    /// Raw particle-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.state
    }

    /// `m₁ = (1/N) Σ qᵢ`, summed per fixed chunk and then across chunks in order.
    pub fn magnetization(&self) -> Vec<f64> {
        let (d, s) = (self.d, self.stride);
        let partial: Vec<Vec<f64>> = self
            .state
            .par_chunks(REDUCE_CHUNK * s)
            .map(|chunk| {
                let mut acc = vec![0.0; d];
                for row in chunk.chunks_exact(s) {
                    for k in 0..d {
                        acc[k] += row[k];
                    }
                }
                acc
            })
            .collect();
        let mut m = vec![0.0; d];
        for p in partial {
            for k in 0..d {
                m[k] += p[k];
            }
        }
        m.iter().map(|v| v / self.n as f64).collect()
    }
}

fn sample_gaussian(law: &GaussianLaw, root: &DMatrix<f64>, rng: &mut Philox, out: &mut [f64]) {
    let n = law.dim();
    let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = root * w;
    for k in 0..n {
        out[k] = law.mean[k] + x[k];
    }
}

pub fn init_ensemble(model: &ValidatedModel, n: usize, seed: u64, init: &InitLaw) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    let d = model.d();
    let stride = model.state_dim();
    let mut state = vec![0.0; n * stride];
    match init {
        InitLaw::Point(x) => {
            if x.len() != stride {
                return Err(Error::ShapeMismatch(format!("point start needs {stride} coordinates, got {}", x.len())));
            }
            for row in state.chunks_exact_mut(stride) {
                row.copy_from_slice(x);
            }
        }
        InitLaw::Gaussian(law) => {
            if law.dim() != stride {
                return Err(Error::ShapeMismatch(format!("initial law must have dimension {stride}")));
            }
            let root = psd_sqrt(&law.cov).into_inner();
            state.par_chunks_exact_mut(stride).enumerate().for_each(|(i, row)| {
                let mut rng = Philox::new(seed, i as u32, INIT_STEP);
                sample_gaussian(law, &root, &mut rng, row);
            });
        }
        InitLaw::Product { q, p, z } => {
            let mut blocks = vec![(q, 0usize, d)];
            if model.has_momentum() {
                blocks.push((p, d, d));
            }
            let dm = d * model.m();
            if dm > 0 {
                blocks.push((z, 2 * d, dm));
            }
            let mut roots = Vec::new();
            for (law, _, len) in &blocks {
                if law.dim() != *len {
                    return Err(Error::ShapeMismatch(format!("block law must have dimension {len}")));
                }
                roots.push(psd_sqrt(&law.cov).into_inner());
            }
            state.par_chunks_exact_mut(stride).enumerate().for_each(|(i, row)| {
                let mut rng = Philox::new(seed, i as u32, INIT_STEP);
                for ((law, off, len), root) in blocks.iter().zip(&roots) {
                    sample_gaussian(law, root, &mut rng, &mut row[*off..off + len]);
                }
            });
        }
    }
    Ok(ParticleEnsemble { n, d, stride, state, time: 0.0, seed, step_index: 0 })
}

/// `1e-3 · min(1, 1/‖A‖)`.
pub fn default_dt(model: &ValidatedModel) -> f64 {
    let a_norm = model.a_eigenvalues().last().copied().unwrap_or(0.0);
    if model.kind() == DynamicsKind::Generalized && a_norm > 1.0 {
        1e-3 / a_norm
    } else {
        1e-3
    }
}

/// Precomputed one-step maps for a fixed `dt`.
///
/// * overdamped: Euler–Maruyama;
/// * underdamped: exact OU substep for friction and noise on `p`, then
///   `p += dt·F(q)`, `q += dt·p`;
/// * generalized: `p += dt·(F(q) + λᵀz)`, `q += dt·p`, then the exact OU
///   transition of `z` with `p` held fixed over the step:
///   `z ← e^{−A dt} z − A⁻¹(I − e^{−A dt}) λ p + ξ`,
///   `ξ ~ N(0, β⁻¹(I − e^{−2A dt}))`.
#[derive(Clone, Debug)]
pub struct Stepper {
    model: ValidatedModel,
    dt: f64,
    noise: bool,
    // Scalar factors for the p-block OU substep (underdamped).
    p_decay: f64,
    p_noise: f64,
    // z-block maps (generalized).
    z_decay: DMatrix<f64>,
    z_forcing: DMatrix<f64>,
    z_noise: DMatrix<f64>,
}

impl Stepper {
    pub fn new(model: &ValidatedModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let temp = 1.0 / model.beta();
        let (mut p_decay, mut p_noise) = (1.0, 0.0);
        if let (DynamicsKind::Underdamped, Some(g)) = (model.kind(), model.gamma()) {
            p_decay = (-g * dt).exp();
            p_noise = (temp * -(-2.0 * g * dt).exp_m1()).sqrt();
        }
        let (mut z_decay, mut z_forcing, mut z_noise) = (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
        if model.kind() == DynamicsKind::Generalized {
            let mem = model.memory().expect("validated");
            let u = model.a_eigenvectors().expect("validated").as_matrix();
            let vals = model.a_eigenvalues();
            let diag = |f: &dyn Fn(f64) -> f64| {
                let dvec = DVector::from_iterator(vals.len(), vals.iter().map(|&a| f(a)));
                u * DMatrix::from_diagonal(&dvec) * u.transpose()
            };
            z_decay = diag(&|a| (-a * dt).exp());
            z_forcing = diag(&|a| -(-a * dt).exp_m1() / a) * &mem.lambda;
            z_noise = diag(&|a| (temp * -(-2.0 * a * dt).exp_m1()).sqrt());
        }
        Ok(Self { model: model.clone(), dt, noise: true, p_decay, p_noise, z_decay, z_forcing, z_noise })
    }

    /// Deterministic variant: all stochastic forcing switched off.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }

    /// Advances the ensemble by one step.
    pub fn step(&self, ens: &mut ParticleEnsemble) -> Result<()> {
        let model = &self.model;
        if ens.stride != model.state_dim() || ens.d != model.d() {
            return Err(Error::ShapeMismatch("ensemble does not match the model".into()));
        }
        let d = ens.d;
        let s = ens.stride;
        let n = ens.n;
        let dt = self.dt;
        let temp = 1.0 / model.beta();
        let noise = self.noise;
        let (seed, step) = (ens.seed, ens.step_index);

        // Phase 1: collective quantities.
        enum Field {
            Mean(Vec<f64>, f64),
            Pairwise(Vec<f64>),
        }
        let field = match model.interaction() {
            InteractionSpec::Custom(_) => Field::Pairwise(ens.state.chunks_exact(s).flat_map(|r| r[..d].to_vec()).collect()),
            other => Field::Mean(ens.magnetization(), other.eta2().unwrap_or(0.0)),
        };
        let interaction = model.interaction();
        let potential = model.potential();
        let kind = model.kind();
        let dm = s.saturating_sub(2 * d);

        // Phase 2: independent particle updates.
        ens.state.par_chunks_exact_mut(s).enumerate().for_each(|(i, row)| {
            let mut rng = Philox::new(seed, i as u32, step);
            let mut force = vec![0.0; d];
            potential.gradient(&row[..d], &mut force);
            for f in force.iter_mut() {
                *f = -*f;
            }
            match &field {
                Field::Mean(m, eta2) => {
                    for k in 0..d {
                        force[k] -= eta2 * (row[k] - m[k]);
                    }
                }
                Field::Pairwise(all) => {
                    if let InteractionSpec::Custom(u) = interaction {
                        let mut xi = vec![0.0; d];
                        let mut g = vec![0.0; d];
                        for j in 0..n {
                            for k in 0..d {
                                xi[k] = row[k] - all[j * d + k];
                            }
                            (u.gradient)(&xi, &mut g);
                            for k in 0..d {
                                force[k] -= g[k] / n as f64;
                            }
                        }
                    }
                }
            }
            let mut gauss = || if noise { rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            match kind {
                DynamicsKind::Overdamped => {
                    let amp = (2.0 * temp * dt).sqrt();
                    for k in 0..d {
                        row[k] += dt * force[k] + amp * gauss();
                    }
                }
                DynamicsKind::Underdamped => {
                    for k in 0..d {
                        row[d + k] = self.p_decay * row[d + k] + self.p_noise * gauss();
                    }
                    for k in 0..d {
                        row[d + k] += dt * force[k];
                        row[k] += dt * row[d + k];
                    }
                }
                DynamicsKind::Generalized => {
                    let (qp, z) = row.split_at_mut(2 * d);
                    // λᵀz
                    let forcing = &self.z_forcing;
                    let mem_lambda = &model.memory().expect("validated").lambda;
                    for k in 0..d {
                        let mut acc = 0.0;
                        for j in 0..dm {
                            acc += mem_lambda[(j, k)] * z[j];
                        }
                        qp[d + k] += dt * (force[k] + acc);
                        qp[k] += dt * qp[d + k];
                    }
                    let w: Vec<f64> = (0..dm).map(|_| gauss()).collect();
                    let mut znew = vec![0.0; dm];
                    for j in 0..dm {
                        let mut acc = 0.0;
                        for l in 0..dm {
                            acc += self.z_decay[(j, l)] * z[l] + self.z_noise[(j, l)] * w[l];
                        }
                        for k in 0..d {
                            acc -= forcing[(j, k)] * qp[d + k];
                        }
                        znew[j] = acc;
                    }
                    z.copy_from_slice(&znew);
                }
            }
        });
        ens.step_index += 1;
        ens.time = ens.step_index as f64 * dt;
        if ens.state.par_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { time: ens.time });
        }
        Ok(())
    }
}

pub fn step(ens: &mut ParticleEnsemble, model: &ValidatedModel, dt: f64) -> Result<()> {
    Stepper::new(model, dt)?.step(ens)
}

/// Sample mean, unbiased covariance (`N − 1`) and standard errors of the
/// mean for the full single-particle state.
pub fn empirical_moments(ens: &ParticleEnsemble) -> Result<(Vec<f64>, Matrix, Vec<f64>)> {
    if ens.n < 2 {
        return Err(Error::InsufficientParticles(ens.n));
    }
    let s = ens.stride;
    let nf = ens.n as f64;
    let mut mean = vec![0.0; s];
    for row in ens.state.chunks_exact(s) {
        for k in 0..s {
            mean[k] += row[k];
        }
    }
    for v in mean.iter_mut() {
        *v /= nf;
    }
    let mut cov = DMatrix::<f64>::zeros(s, s);
    for row in ens.state.chunks_exact(s) {
        for a in 0..s {
            let da = row[a] - mean[a];
            for b in a..s {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..s {
        for b in a..s {
            cov[(a, b)] /= nf - 1.0;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let se = (0..s).map(|k| (cov[(k, k)] / nf).sqrt()).collect();
    Ok((mean, SquareMatrix::from_dmatrix(cov)?, se))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ObservableRow {
    pub t: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub magnetization: Vec<f64>,
}

impl ObservableRow {
    pub fn cov_matrix(&self) -> Matrix {
        let s = self.mean.len();
        SquareMatrix::from_row_slice(s, &self.cov).expect("square")
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ObservableSeries {
    pub labels: Vec<String>,
    pub rows: Vec<ObservableRow>,
}

impl ObservableSeries {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let l = &self.labels;
        let mut h = vec!["t".to_string()];
        h.extend(l.iter().map(|x| format!("mean_{x}")));
        h.extend(l.iter().map(|x| format!("var_{x}")));
        for a in 0..l.len() {
            for b in a + 1..l.len() {
                h.push(format!("cov_{}{}", l[a], l[b]));
            }
        }
        let dims = self.rows.first().map_or(1, |r| r.magnetization.len());
        if dims == 1 {
            h.push("magnetization".into());
        } else {
            h.extend((0..dims).map(|k| format!("magnetization{k}")));
        }
        h.extend(l.iter().map(|x| format!("se_mean_{x}")));
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let s = r.mean.len();
                let mut v = vec![r.t];
                v.extend(&r.mean);
                v.extend((0..s).map(|k| r.cov[k * s + k]));
                for a in 0..s {
                    for b in a + 1..s {
                        v.push(r.cov[a * s + b]);
                    }
                }
                v.extend(&r.magnetization);
                v.extend(&r.se_mean);
                v
            })
            .collect()
    }
}

pub fn observe(ens: &ParticleEnsemble) -> ObservableRow {
    let s = ens.stride;
    let (mean, cov, se) = match empirical_moments(ens) {
        Ok((m, c, se)) => (m, c.to_row_major(), se),
        // A single particle has no spread estimate.
        Err(_) => (ens.particle(0).to_vec(), vec![0.0; s * s], vec![f64::NAN; s]),
    };
    ObservableRow { t: ens.time, mean, cov, se_mean: se, magnetization: ens.magnetization() }
}

/// Runs `steps` steps, recording at the start, every `record_every` steps
/// and at the end.
pub fn run(ens: &mut ParticleEnsemble, stepper: &Stepper, steps: u64, record_every: u64) -> Result<ObservableSeries> {
    let record_every = record_every.max(1);
    let mut rows = vec![observe(ens)];
    for k in 1..=steps {
        stepper.step(ens)?;
        if k % record_every == 0 || k == steps {
            rows.push(observe(ens));
        }
    }
    Ok(ObservableSeries { labels: stepper.model().state_labels(), rows })
}

/// Number of steps so that the final time lies within `dt` of `t_end`.
pub fn step_count(t_end: f64, dt: f64) -> u64 {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as u64
}

pub fn simulate(
    model: &ValidatedModel,
    n: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
    init: &InitLaw,
    record_every: u64,
) -> Result<ObservableSeries> {
    if !(t_end > 0.0) || !(dt > 0.0) || dt > t_end {
        return Err(Error::InvalidParameter(format!("need 0 < dt <= T, got dt = {dt}, T = {t_end}")));
    }
    let stepper = Stepper::new(model, dt)?;
    let mut ens = init_ensemble(model, n, seed, init)?;
    run(&mut ens, &stepper, step_count(t_end, dt), record_every)
}
