//! Model specification: confining and interaction potentials, memory
//! structure, temperature and dynamics kind.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SquareMatrix};
use crate::scalar::Real;

type EnergyFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradientFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// User-supplied energy with its gradient.
#[derive(Clone)]
pub struct CustomFn<T> {
    pub name: String,
    pub energy: EnergyFn<T>,
    pub gradient: GradientFn<T>,
}

impl<T> fmt::Debug for CustomFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFn").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum PotentialKind<T> {
    /// `V(q) = ½ ω² |q|²`
    Quadratic { omega2: T },
    /// `V(q) = a |q|⁴ / 4 − b |q|² / 2`
    DoubleWell { a: T, b: T },
    Custom(CustomFn<T>),
}

/// Confining potential `V` plus a constant energy offset.
#[derive(Clone, Debug)]
pub struct PotentialSpec<T> {
    pub kind: PotentialKind<T>,
    pub offset: T,
}

impl<T: Real> PotentialSpec<T> {
    pub fn quadratic(omega2: T) -> Self {
        Self { kind: PotentialKind::Quadratic { omega2 }, offset: T::zero() }
    }

    pub fn double_well(a: T, b: T) -> Self {
        Self { kind: PotentialKind::DoubleWell { a, b }, offset: T::zero() }
    }

    pub fn custom(
        name: impl Into<String>,
        energy: impl Fn(&[T]) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: PotentialKind::Custom(CustomFn {
                name: name.into(),
                energy: Arc::new(energy),
                gradient: Arc::new(gradient),
            }),
            offset: T::zero(),
        }
    }

    pub fn with_offset(mut self, offset: T) -> Self {
        self.offset = offset;
        self
    }

    pub fn check(&self) -> Result<()> {
        match &self.kind {
            PotentialKind::Quadratic { omega2 } if !(*omega2 > T::zero()) => {
                Err(Error::InvalidParameter(format!("quadratic potential needs omega2 > 0, got {omega2}")))
            }
            PotentialKind::DoubleWell { a, b } if !(*a > T::zero()) || !b.is_finite() => {
                Err(Error::InvalidParameter(format!("double well needs a > 0, got a = {a}, b = {b}")))
            }
            _ if !self.offset.is_finite() => Err(Error::InvalidParameter("potential offset not finite".into())),
            _ => Ok(()),
        }
    }

    /// `ω²` when the potential is quadratic.
    pub fn omega2(&self) -> Option<T> {
        match self.kind {
            PotentialKind::Quadratic { omega2 } => Some(omega2),
            _ => None,
        }
    }

    /// Built-in kinds are even in `q`.
    pub fn is_even(&self) -> bool {
        !matches!(self.kind, PotentialKind::Custom(_))
    }

    pub fn energy(&self, q: &[T]) -> T {
        let r2 = q.iter().fold(T::zero(), |s, &x| s + x * x);
        let half = T::lit(0.5);
        self.offset
            + match &self.kind {
                PotentialKind::Quadratic { omega2 } => half * *omega2 * r2,
                PotentialKind::DoubleWell { a, b } => *a * r2 * r2 * T::lit(0.25) - half * *b * r2,
                PotentialKind::Custom(c) => (c.energy)(q),
            }
    }

    pub fn gradient(&self, q: &[T], out: &mut [T]) {
        match &self.kind {
            PotentialKind::Quadratic { omega2 } => {
                for (o, &x) in out.iter_mut().zip(q) {
                    *o = *omega2 * x;
                }
            }
            PotentialKind::DoubleWell { a, b } => {
                let r2 = q.iter().fold(T::zero(), |s, &x| s + x * x);
                let f = *a * r2 - *b;
                for (o, &x) in out.iter_mut().zip(q) {
                    *o = f * x;
                }
            }
            PotentialKind::Custom(c) => (c.gradient)(q, out),
        }
    }

    /// Scalar shortcut for `d = 1`.
    pub fn energy1(&self, q: T) -> T {
        self.energy(&[q])
    }

    pub fn gradient1(&self, q: T) -> T {
        let mut g = [T::zero()];
        self.gradient(&[q], &mut g);
        g[0]
    }
}

#[derive(Clone, Debug)]
pub enum InteractionSpec<T> {
    None,
    /// `U(ξ) = ½ η² |ξ|²`
    CurieWeiss { eta2: T },
    /// Pairwise potential of the separation `ξ = qᵢ − qⱼ`; only the particle
    /// simulator accepts it (O(N²) force evaluation).
    Custom(CustomFn<T>),
}

impl<T: Real> InteractionSpec<T> {
    /// `η²` for the Curie–Weiss family (`None` counts as `η² = 0`).
    pub fn eta2(&self) -> Option<T> {
        match self {
            InteractionSpec::None => Some(T::zero()),
            InteractionSpec::CurieWeiss { eta2 } => Some(*eta2),
            InteractionSpec::Custom(_) => None,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            InteractionSpec::CurieWeiss { eta2 } if !(*eta2 >= T::zero()) || !eta2.is_finite() => {
                Err(Error::InvalidParameter(format!("Curie-Weiss needs eta2 >= 0, got {eta2}")))
            }
            _ => Ok(()),
        }
    }
}

/// Auxiliary Ornstein–Uhlenbeck variables encoding the memory kernel.
#[derive(Clone, Debug)]
pub struct MemorySpec {
    pub m: usize,
    /// Coupling, shape `(d·m) × d`.
    pub lambda: DMatrix<f64>,
    /// Symmetric positive definite, shape `(d·m) × (d·m)`.
    pub a: SquareMatrix<f64>,
}

impl MemorySpec {
    /// One spatial dimension with `A = diag(α₁..α_m)` and `λ = (λ₁..λ_m)ᵀ`.
    pub fn diagonal(lambdas: &[f64], alphas: &[f64]) -> Result<Self> {
        if lambdas.len() != alphas.len() || lambdas.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "need as many lambda_j as alpha_j (got {} and {})",
                lambdas.len(),
                alphas.len()
            )));
        }
        Ok(Self {
            m: lambdas.len(),
            lambda: DMatrix::from_column_slice(lambdas.len(), 1, lambdas),
            a: SquareMatrix::from_diagonal(alphas),
        })
    }

    pub fn new(m: usize, lambda: DMatrix<f64>, a: SquareMatrix<f64>) -> Self {
        Self { m, lambda, a }
    }

    /// Scalar coefficients `(λ_j, α_j)` when `d = 1` and `A` is diagonal.
    pub fn diagonal_coefficients(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.lambda.ncols() != 1 {
            return None;
        }
        let n = self.a.n();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.a.get(i, j) != 0.0 {
                    return None;
                }
            }
        }
        Some((self.lambda.column(0).iter().copied().collect(), (0..n).map(|i| self.a.get(i, i)).collect()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Overdamped,
    Underdamped,
    Generalized,
}

impl DynamicsKind {
    pub fn short_name(self) -> &'static str {
        match self {
            DynamicsKind::Overdamped => "oMV",
            DynamicsKind::Underdamped => "uMV",
            DynamicsKind::Generalized => "gMV",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub d: usize,
    pub beta: f64,
    pub potential: PotentialSpec<f64>,
    pub interaction: InteractionSpec<f64>,
    pub memory: Option<MemorySpec>,
    pub gamma: Option<f64>,
    pub kind: DynamicsKind,
}

/// A checked [`ModelSpec`] with cached spectral data of `A`. Immutable and
/// cheap to clone.
#[derive(Clone, Debug)]
pub struct ValidatedModel {
    inner: Arc<Validated>,
}

#[derive(Debug)]
struct Validated {
    spec: ModelSpec,
    /// Eigenvalues of `A`, ascending.
    a_eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors of `A` (columns).
    a_eigenvectors: Option<SquareMatrix<f64>>,
}

pub fn validate(spec: ModelSpec) -> Result<ValidatedModel> {
    if spec.d == 0 {
        return Err(Error::ShapeMismatch("spatial dimension d must be positive".into()));
    }
    if !(spec.beta > 0.0) || !spec.beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {}", spec.beta)));
    }
    spec.potential.check()?;
    spec.interaction.check()?;
    match spec.kind {
        DynamicsKind::Generalized if spec.memory.is_none() => {
            return Err(Error::MissingField("memory (required by the generalized kind)".into()))
        }
        DynamicsKind::Underdamped if spec.gamma.is_none() => {
            return Err(Error::MissingField("gamma (required by the underdamped kind)".into()))
        }
        _ => {}
    }
    if let Some(g) = spec.gamma {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
        }
    }
    if let Some(mem) = &spec.memory {
        check_memory(mem, spec.d)?;
    }
    Ok(ValidatedModel::build(spec))
}

fn check_memory(mem: &MemorySpec, d: usize) -> Result<()> {
    let dm = d * mem.m;
    if mem.m == 0 {
        return Err(Error::ShapeMismatch("memory needs m >= 1".into()));
    }
    if mem.lambda.nrows() != dm || mem.lambda.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "lambda must be {dm}x{d}, got {}x{}",
            mem.lambda.nrows(),
            mem.lambda.ncols()
        )));
    }
    if mem.a.n() != dm {
        return Err(Error::ShapeMismatch(format!("A must be {dm}x{dm}, got {0}x{0}", mem.a.n())));
    }
    if mem.lambda.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("lambda has non-finite entries".into()));
    }
    let scale = mem.a.as_matrix().amax().max(1.0);
    if !mem.a.is_symmetric(1e-12 * scale) {
        return Err(Error::NonSpdMatrix("A is not symmetric".into()));
    }
    let (vals, _) = symmetric_eigen(&mem.a);
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NonSpdMatrix(format!("A has a non-positive eigenvalue {}", vals[0])));
    }
    Ok(())
}

impl ValidatedModel {
    fn build(spec: ModelSpec) -> Self {
        let (a_eigenvalues, a_eigenvectors) = match &spec.memory {
            Some(mem) => {
                let (v, w) = symmetric_eigen(&mem.a);
                (v, Some(w))
            }
            None => (Vec::new(), None),
        };
        Self { inner: Arc::new(Validated { spec, a_eigenvalues, a_eigenvectors }) }
    }

    /// Skips every check. Only for exercising operator identities on specs
    /// that [`validate`] would reject.
    #[doc(hidden)]
    pub fn unchecked(spec: ModelSpec) -> Self {
        Self::build(spec)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.inner.spec
    }
    pub fn d(&self) -> usize {
        self.inner.spec.d
    }
    pub fn beta(&self) -> f64 {
        self.inner.spec.beta
    }
    pub fn kind(&self) -> DynamicsKind {
        self.inner.spec.kind
    }
    pub fn potential(&self) -> &PotentialSpec<f64> {
        &self.inner.spec.potential
    }
    pub fn interaction(&self) -> &InteractionSpec<f64> {
        &self.inner.spec.interaction
    }
    pub fn memory(&self) -> Option<&MemorySpec> {
        self.inner.spec.memory.as_ref()
    }
    pub fn gamma(&self) -> Option<f64> {
        self.inner.spec.gamma
    }

    /// Number of auxiliary processes per dimension, 0 unless generalized.
    pub fn m(&self) -> usize {
        match self.kind() {
            DynamicsKind::Generalized => self.memory().map_or(0, |m| m.m),
            _ => 0,
        }
    }

    pub fn a_eigenvalues(&self) -> &[f64] {
        &self.inner.a_eigenvalues
    }

    pub fn a_eigenvectors(&self) -> Option<&SquareMatrix<f64>> {
        self.inner.a_eigenvectors.as_ref()
    }

    pub fn has_momentum(&self) -> bool {
        self.kind() != DynamicsKind::Overdamped
    }

    /// Single-particle state dimension: `d`, `2d` or `d(2+m)`.
    pub fn state_dim(&self) -> usize {
        let d = self.d();
        match self.kind() {
            DynamicsKind::Overdamped => d,
            DynamicsKind::Underdamped => 2 * d,
            DynamicsKind::Generalized => d * (2 + self.m()),
        }
    }

    /// Labels of the single-particle state coordinates.
    pub fn state_labels(&self) -> Vec<String> {
        let d = self.d();
        let idx = |name: &str, k: usize| if d == 1 { name.to_string() } else { format!("{name}{k}") };
        let mut out: Vec<String> = (0..d).map(|k| idx("q", k)).collect();
        if self.has_momentum() {
            out.extend((0..d).map(|k| idx("p", k)));
        }
        for j in 0..d * self.m() {
            out.push(format!("z{j}"));
        }
        out
    }

    /// Same model with another dynamics kind; memory/friction must be present
    /// in the spec when the target kind needs them.
    pub fn with_kind(&self, kind: DynamicsKind) -> Result<Self> {
        let mut spec = self.spec().clone();
        spec.kind = kind;
        validate(spec)
    }
}

/// `(V(q), ∇V(q))` for the configured confining potential.
pub fn eval_potential(model: &ValidatedModel, q: &[f64]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; q.len()];
    model.potential().gradient(q, &mut g);
    (model.potential().energy(q), g)
}
