//! White-noise limit: `λ ↦ λ/ε`, `A ↦ A/ε²` drives the generalized dynamics
//! to the underdamped one with friction `γ = λᵀA⁻¹λ`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::model::{validate, DynamicsKind, MemorySpec, ValidatedModel};
use crate::quadratic::{meanfield_green, split_bk, GaussianLaw};
use crate::sim::{empirical_moments, init_ensemble, step_count, InitLaw, Stepper};

type Matrix = SquareMatrix<f64>;

/// `λᵀA⁻¹λ` through a Cholesky solve.
pub fn effective_gamma(lambda: &DMatrix<f64>, a: &Matrix) -> Result<Matrix> {
    if lambda.nrows() != a.n() {
        return Err(Error::ShapeMismatch(format!("lambda has {} rows, A is {1}x{1}", lambda.nrows(), a.n())));
    }
    let chol = a
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonSpdMatrix("A has no Cholesky factor".into()))?;
    let x = chol.solve(lambda);
    let g = lambda.transpose() * x;
    SquareMatrix::from_dmatrix((&g + g.transpose()) * 0.5)
}

/// Generalized model with `λ/ε` and `A/ε²`.
pub fn scaled_spec(model: &ValidatedModel, epsilon: f64) -> Result<ValidatedModel> {
    if model.kind() != DynamicsKind::Generalized {
        return Err(Error::InvalidParameter("white-noise scaling applies to the generalized kind".into()));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut spec = model.spec().clone();
    let mem = spec.memory.take().expect("validated");
    spec.memory = Some(MemorySpec::new(mem.m, &mem.lambda / epsilon, mem.a.scale(1.0 / (epsilon * epsilon))));
    validate(spec)
}

/// Underdamped model with the effective friction of the memory (`d = 1`).
pub fn reference_model(model: &ValidatedModel) -> Result<ValidatedModel> {
    let mem = model.memory().ok_or_else(|| Error::MissingField("memory".into()))?;
    if model.d() != 1 {
        return Err(Error::UnsupportedDimension("the underdamped reference takes a scalar friction (d = 1)".into()));
    }
    let gamma = effective_gamma(&mem.lambda, &mem.a)?.get(0, 0);
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("effective friction is zero: no noise reaches the momentum".into()));
    }
    let mut spec = model.spec().clone();
    spec.kind = DynamicsKind::Underdamped;
    spec.gamma = Some(gamma);
    validate(spec)
}

/// `base_dt · min(1, ε)`: resolves the explicit `λ/ε` coupling; the
/// auxiliary block is integrated exactly.
pub fn stiffness_dt(epsilon: f64, base_dt: f64) -> f64 {
    base_dt * epsilon.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Metric {
    QpCovariance,
    QpMeanAndCov,
}

#[derive(Clone, Debug)]
pub struct ScalingStudy {
    pub epsilons: Vec<f64>,
    pub base: ValidatedModel,
    pub n: usize,
    pub t_end: f64,
    pub base_dt: f64,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
    pub metric: Metric,
    /// Budget on particle-steps (`N × steps`) per ε.
    pub work_cap: u64,
    pub init_q: f64,
}

impl ScalingStudy {
    pub fn new(base: ValidatedModel, epsilons: Vec<f64>, n: usize, t_end: f64, seed: u64) -> Self {
        Self {
            epsilons,
            base,
            n,
            t_end,
            base_dt: 1e-3,
            seed,
            checkpoints: [0.125, 0.25, 0.5, 1.0].iter().map(|f| f * t_end).collect(),
            metric: Metric::QpMeanAndCov,
            work_cap: 2_000_000_000,
            init_q: 1.0,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct StudyRow {
    pub epsilon: f64,
    pub error: f64,
    /// Standard error of the moment estimate attaining `error`.
    pub se: f64,
    pub steps: u64,
    pub wallclock_s: f64,
}

/// `(q, p)` moments: mean (2) and covariance entries `qq, qp, pp`.
#[derive(Clone, Copy, Debug)]
pub struct QpMoments {
    pub mean: [f64; 2],
    pub cov: [f64; 3],
}

impl QpMoments {
    pub fn from_law(law: &GaussianLaw) -> Self {
        Self { mean: [law.mean[0], law.mean[1]], cov: [law.cov.get(0, 0), law.cov.get(0, 1), law.cov.get(1, 1)] }
    }

    /// Standard errors of the sample moments under a Gaussian approximation.
    pub fn standard_errors(&self, n: usize) -> ([f64; 2], [f64; 3]) {
        let nf = n as f64;
        let [a, b, c] = self.cov;
        (
            [(a / nf).sqrt(), (c / nf).sqrt()],
            [(2.0 * a * a / nf).sqrt(), ((a * c + b * b) / nf).sqrt(), (2.0 * c * c / nf).sqrt()],
        )
    }
}

/// Largest moment difference and the standard error attached to it.
pub fn moment_error(sim: &QpMoments, reference: &QpMoments, n: usize, metric: Metric) -> (f64, f64) {
    let (se_m, se_c) = sim.standard_errors(n);
    let mut best = (0.0, 0.0);
    let mut consider = |diff: f64, se: f64| {
        if diff > best.0 {
            best = (diff, se);
        }
    };
    if metric == Metric::QpMeanAndCov {
        for k in 0..2 {
            consider((sim.mean[k] - reference.mean[k]).abs(), se_m[k]);
        }
    }
    for k in 0..3 {
        consider((sim.cov[k] - reference.cov[k]).abs(), se_c[k]);
    }
    best
}

fn quadratic_reference(reference: &ValidatedModel, x0: &[f64], t: f64) -> Result<QpMoments> {
    let (b, k, d) = split_bk(reference)?;
    Ok(QpMoments::from_law(&meanfield_green(&b, &k, &d, t, x0)?))
}

/// Empirical `(q, p)` moments of a simulation at each checkpoint.
pub fn simulate_checkpoints(
    model: &ValidatedModel,
    n: usize,
    dt: f64,
    seed: u64,
    init: &InitLaw,
    checkpoints: &[f64],
) -> Result<Vec<QpMoments>> {
    let stepper = Stepper::new(model, dt)?;
    let mut ens = init_ensemble(model, n, seed, init)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let target = (t / dt).round() as u64;
        while ens.steps_taken() < target {
            stepper.step(&mut ens)?;
        }
        let (mean, cov, _) = empirical_moments(&ens)?;
        out.push(QpMoments { mean: [mean[0], mean[1]], cov: [cov.get(0, 0), cov.get(0, 1), cov.get(1, 1)] });
    }
    Ok(out)
}

/// Error table over ε. Quadratic models use the exact underdamped law as
/// reference; otherwise the underdamped system is simulated with the same
/// `N` and seed at `base_dt`, and both standard errors are combined.
pub fn run_study(study: &ScalingStudy) -> Result<Vec<StudyRow>> {
    let reference = reference_model(&study.base)?;
    if study.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("epsilons must be decreasing".into()));
    }
    if study.checkpoints.iter().any(|&t| !(t > 0.0) || t > study.t_end * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter("checkpoints must lie in (0, T]".into()));
    }
    // Budget check up front so nothing runs when any ε is out of reach.
    for &eps in &study.epsilons {
        let steps = step_count(study.t_end, stiffness_dt(eps, study.base_dt));
        let work = steps.saturating_mul(study.n as u64);
        if work > study.work_cap {
            return Err(Error::StiffnessBudgetExceeded { steps: work, cap: study.work_cap });
        }
    }
    let quadratic = study.base.potential().omega2().is_some() && study.base.interaction().eta2().is_some();
    let x0_ref = vec![study.init_q, 0.0];
    let ref_moments: Vec<(QpMoments, Option<QpMoments>)> = if quadratic {
        study
            .checkpoints
            .iter()
            .map(|&t| Ok((quadratic_reference(&reference, &x0_ref, t)?, None)))
            .collect::<Result<_>>()?
    } else {
        let init = InitLaw::point(&reference, &[study.init_q], &[0.0], &[])?;
        simulate_checkpoints(&reference, study.n, study.base_dt, study.seed, &init, &study.checkpoints)?
            .into_iter()
            .map(|m| (m, Some(m)))
            .collect()
    };
    study
        .epsilons
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let model = scaled_spec(&study.base, eps)?;
            let dt = stiffness_dt(eps, study.base_dt);
            let init = InitLaw::point(&model, &[study.init_q], &[0.0], &[0.0])?;
            let sims = simulate_checkpoints(&model, study.n, dt, study.seed, &init, &study.checkpoints)?;
            let (mut error, mut se) = (0.0, 0.0);
            for (sim, (r, simulated_ref)) in sims.iter().zip(&ref_moments) {
                let (e, s) = moment_error(sim, r, study.n, study.metric);
                let s = match simulated_ref {
                    Some(_) => (2.0f64).sqrt() * s,
                    None => s,
                };
                if e > error {
                    error = e;
                    se = s;
                }
            }
            Ok(StudyRow {
                epsilon: eps,
                error,
                se,
                steps: step_count(study.t_end, dt),
                wallclock_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
