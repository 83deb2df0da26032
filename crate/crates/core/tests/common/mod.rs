// Independent reference computations shared by the integration tests. Nothing
// here calls into the library's numerics.
#![allow(dead_code)]

use glmv::model::{InteractionSpec, MemorySpec, ModelSpec, PotentialSpec};
use glmv::rng::Philox;
use glmv::{validate, DynamicsKind, ValidatedModel};
use nalgebra::DMatrix;
use rand::Rng;

pub fn rng(seed: u64) -> Philox {
    Philox::new(seed, 0xFFFF_FFFF, 0)
}

pub fn uniform(r: &mut Philox, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

pub fn gaussian_matrix(r: &mut Philox, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(r, -1.0, 1.0))
}

/// Taylor series with scaling and squaring.
pub fn expm_taylor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    let s = (norm.log2().ceil().max(0.0) as i32) + 1;
    let a = m / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// RK4 on `dG/ds = BG + GBᵀ + D`, `G(0) = 0`, giving `∫₀ᵗ e^{sB} D e^{sBᵀ} ds`.
pub fn gram_rk4(b: &DMatrix<f64>, d: &DMatrix<f64>, t: f64, steps: usize) -> DMatrix<f64> {
    let n = b.nrows();
    let f = |g: &DMatrix<f64>| b * g + g * b.transpose() + d;
    let h = t / steps as f64;
    let mut g = DMatrix::zeros(n, n);
    for _ in 0..steps {
        let k1 = f(&g);
        let k2 = f(&(&g + &k1 * (h / 2.0)));
        let k3 = f(&(&g + &k2 * (h / 2.0)));
        let k4 = f(&(&g + &k3 * h));
        g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    g
}

/// Mean and covariance of `dX = MX dt + √(2D) dW` (mean uses `B`) by RK4.
pub fn moments_rk4(
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x0: &[f64],
    t: f64,
    steps: usize,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = b.nrows();
    let h = t / steps as f64;
    let mut mu = nalgebra::DVector::from_column_slice(x0);
    let mut s = DMatrix::zeros(n, n);
    let fs = |s: &DMatrix<f64>| m * s + s * m.transpose() + d * 2.0;
    for _ in 0..steps {
        let k1 = b * &mu;
        let k2 = b * (&mu + &k1 * (h / 2.0));
        let k3 = b * (&mu + &k2 * (h / 2.0));
        let k4 = b * (&mu + &k3 * h);
        mu += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let l1 = fs(&s);
        let l2 = fs(&(&s + &l1 * (h / 2.0)));
        let l3 = fs(&(&s + &l2 * (h / 2.0)));
        let l4 = fs(&(&s + &l3 * h));
        s += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    (mu.iter().copied().collect(), s)
}

/// Composite trapezoid on `[a, b]` with `n` intervals.
pub fn trap(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + i as f64 * h);
    }
    s * h
}

/// `V(q) = a q⁴/4 − b q²/2`.
pub fn double_well(a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |q| 0.25 * a * q.powi(4) - 0.5 * b * q * q
}

/// Dense-trapezoid self-consistency map and its tilted variance.
pub fn trapezoid_map(v: &dyn Fn(f64) -> f64, eta2: f64, beta: f64, m: f64, nodes: usize, l: f64) -> (f64, f64) {
    let e = |q: f64| v(q) + 0.5 * eta2 * (q - m) * (q - m);
    let emin = (0..=2000).map(|i| e(-l + 2.0 * l * i as f64 / 2000.0)).fold(f64::INFINITY, f64::min);
    let w = |q: f64| (-beta * (e(q) - emin)).exp();
    let z = trap(&w, -l, l, nodes);
    let mean = trap(|q| q * w(q), -l, l, nodes) / z;
    let var = trap(|q| (q - mean) * (q - mean) * w(q), -l, l, nodes) / z;
    (mean, var)
}

/// `β` with `βη² Var₀ = 1` by bisection on the trapezoid map.
pub fn trapezoid_beta_critical(v: &dyn Fn(f64) -> f64, eta2: f64, lo: f64, hi: f64) -> f64 {
    let g = |beta: f64| beta * eta2 * trapezoid_map(v, eta2, beta, 0.0, 200_000, 10.0).1 - 1.0;
    let (mut a, mut b) = (lo, hi);
    let ga = g(a);
    assert!(ga * g(b) < 0.0, "no crossing in the bracket");
    while b - a > 1e-11 {
        let mid = 0.5 * (a + b);
        if (g(mid) < 0.0) == (ga < 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Quadratic model with `V = ω²q²/2`, Curie-Weiss `η²` and the given kind.
pub fn quadratic_model(kind: DynamicsKind, omega2: f64, eta2: f64, beta: f64, lambdas: &[f64], alphas: &[f64], gamma: f64) -> ValidatedModel {
    let memory = (kind == DynamicsKind::Generalized).then(|| MemorySpec::diagonal(lambdas, alphas).unwrap());
    validate(ModelSpec {
        d: 1,
        beta,
        potential: PotentialSpec::quadratic(omega2),
        interaction: InteractionSpec::CurieWeiss { eta2 },
        memory,
        gamma: (kind == DynamicsKind::Underdamped).then_some(gamma),
        kind,
    })
    .unwrap()
}

pub fn double_well_gle(beta: f64, eta2: f64) -> ValidatedModel {
    validate(ModelSpec {
        d: 1,
        beta,
        potential: PotentialSpec::double_well(1.0, 1.0),
        interaction: InteractionSpec::CurieWeiss { eta2 },
        memory: Some(MemorySpec::diagonal(&[1.0], &[1.0]).unwrap()),
        gamma: None,
        kind: DynamicsKind::Generalized,
    })
    .unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub const QUADRATIC_GLE_TOML: &str = r#"[model]
kind = "generalized"
beta = 1.0
potential.kind = "quadratic"
potential.params = [1.0]
interaction.eta2 = 1.0

[memory]
m = 1
lambda = [1.0]
diag = [1.0]

[run]
N = 2000
T = 1.0
dt = 0.001
seed = 11
record_every = 100
"#;

/// Double-well configs sharing `(V, η², β)` across the three kinds.
pub fn double_well_toml(kind: &str) -> String {
    let extra = match kind {
        "underdamped" => "gamma = 1.0\n",
        _ => "",
    };
    let memory = match kind {
        "generalized" => "\n[memory]\nm = 1\nlambda = [1.0]\ndiag = [1.0]\n",
        _ => "",
    };
    format!(
        "[model]\nkind = \"{kind}\"\nbeta = 3.0\n{extra}potential.kind = \"double_well\"\npotential.params = [1.0, 1.0]\ninteraction.eta2 = 1.0\n{memory}\n[run]\nseed = 3\n"
    )
}
