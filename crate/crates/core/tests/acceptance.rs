// Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use glmv::linalg::{eig, kalman_rank};
use glmv::limits::{effective_gamma, reference_model, run_study, scaled_spec, ScalingStudy};
use glmv::quadratic::{assemble, base_spectrum, meanfield_green, one_sided_covariance, same_multiset, spectrum_branches, split_bk};
use glmv::sim::{empirical_moments, init_ensemble, InitLaw, Stepper};
use glmv::stationary::{
    beta_critical, bifurcation_diagram, extend_to_full_state, fixed_points, kfp_residual, default_scan, Axis,
    GridDensity, SelfConsistencyProblem, Stability,
};
use glmv::thermo::{degeneracy_residual, dissipation, evolve_coupled, free_energy, GaussianEnsembleLaw, GenericState, RhoState};
use glmv::{DynamicsKind, Matrix};
use nalgebra::DMatrix;
use nalgebra::Complex;

type Outcome = Result<(bool, String), String>;

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match res {
        Ok((ok, d)) => (ok, d),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {id:>2} {}: {name} [{secs:.1}s] {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn gle_quadratic() -> glmv::ValidatedModel {
    quadratic_model(DynamicsKind::Generalized, 1.0, 1.0, 1.0, &[1.0], &[1.0], 1.0)
}

fn criterion_1() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for kind in [DynamicsKind::Overdamped, DynamicsKind::Underdamped, DynamicsKind::Generalized] {
        for i in 0..20 {
            let m = 1 + i % 3;
            let lambdas: Vec<f64> = (0..m).map(|_| uniform(&mut r, 0.3, 2.0)).collect();
            let alphas: Vec<f64> = (0..m).map(|_| uniform(&mut r, 0.3, 3.0)).collect();
            let model = quadratic_model(
                kind,
                uniform(&mut r, 0.5, 2.0),
                uniform(&mut r, 0.2, 2.0),
                uniform(&mut r, 0.5, 3.0),
                &lambdas,
                &alphas,
                uniform(&mut r, 0.3, 2.0),
            );
            let single = eig(&assemble(&model, 1).map_err(e)?.b).map_err(e)?;
            let pair = eig(&assemble(&model, 2).map_err(e)?.b).map_err(e)?;
            let (branch, _) = spectrum_branches(&model).map_err(e)?;
            let base = base_spectrum(&model).map_err(e)?;
            if !same_multiset(&single, &branch, 1e-10) || !same_multiset(&pair, &base, 1e-10) {
                fails += 1;
            }
            for (a, b) in [(&single, &branch), (&pair, &base)] {
                for x in a.iter() {
                    let d = b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min);
                    worst = worst.max(d);
                }
            }
        }
    }
    Ok((fails == 0, format!("60 specs, mismatches {fails}, worst nearest-eigenvalue gap {worst:.2e} (tol 1e-10)")))
}

fn criterion_2() -> Outcome {
    let model = gle_quadratic();
    let n = 10_000;
    let dt = 1e-3;
    let x0 = vec![1.0, 0.0, 0.0];
    let (b, k, d) = split_bk(&model).map_err(e)?;
    let stepper = Stepper::new(&model, dt).map_err(e)?;
    let mut ens = init_ensemble(&model, n, 2024, &InitLaw::Point(x0.clone())).map_err(e)?;
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let target = (t / dt as f64).round() as u64;
        while ens.steps_taken() < target {
            stepper.step(&mut ens).map_err(e)?;
        }
        let (mean, cov, _) = empirical_moments(&ens).map_err(e)?;
        let law = meanfield_green(&b, &k, &d, t, &x0).map_err(e)?;
        let s = &law.cov;
        for i in 0..3 {
            let se = (s.get(i, i) / n as f64).sqrt();
            worst = worst.max((mean[i] - law.mean[i]).abs() / se);
            for j in i..3 {
                let se = ((s.get(i, i) * s.get(j, j) + s.get(i, j).powi(2)) / n as f64).sqrt();
                worst = worst.max((cov.get(i, j) - s.get(i, j)).abs() / se);
            }
        }
    }
    Ok((worst <= 4.0, format!("largest deviation {worst:.2} SE over 27 moments (limit 4)")))
}

fn criterion_3() -> Outcome {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let n = 2 + trial % 3;
        let g = gaussian_matrix(&mut r, n, n);
        let s = gaussian_matrix(&mut r, n, n);
        let h = gaussian_matrix(&mut r, n, n);
        let l = gaussian_matrix(&mut r, n, n);
        let b = -(&g * g.transpose()) / n as f64 - DMatrix::identity(n, n) * 0.3 + (&s - s.transpose()) * 0.5;
        let k = -(&h * h.transpose()) * (0.5 / n as f64);
        let d = &l * l.transpose() / n as f64;
        let (bm, km, dm) = (
            Matrix::from_dmatrix(b.clone()).map_err(e)?,
            Matrix::from_dmatrix(k.clone()).map_err(e)?,
            Matrix::from_dmatrix(d.clone()).map_err(e)?,
        );
        let hstep = 1e-4;
        for i in 1..=10 {
            let t = 0.2 * i as f64;
            let q = one_sided_covariance(&bm, &km, &dm, t).map_err(e)?.into_inner();
            let qp = one_sided_covariance(&bm, &km, &dm, t + hstep).map_err(e)?.into_inner();
            let qm = one_sided_covariance(&bm, &km, &dm, t - hstep).map_err(e)?.into_inner();
            let lhs = (qp - qm) / (2.0 * hstep);
            let rhs = (&d + (&b + &k) * q) * 2.0;
            worst = worst.max(max_abs(&(&lhs - &rhs)) / max_abs(&rhs));
        }
    }
    Ok((worst <= 1e-6, format!("max relative ODE residual {worst:.2e} over 100 points (limit 1e-6)")))
}

fn paper_pairs() -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let mut out = Vec::new();
    for kind in [DynamicsKind::Overdamped, DynamicsKind::Underdamped, DynamicsKind::Generalized] {
        let model = quadratic_model(kind, 1.0, 1.0, 1.0, &[1.0], &[1.0], 1.0);
        let (b, _, d) = split_bk(&model).unwrap();
        out.push((b.into_inner(), d.into_inner()));
    }
    out
}

fn random_pair(r: &mut glmv::rng::Philox, i: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 2 + i % 3;
    let rank = 1 + (i / 3) % (n - 1).max(1);
    let v = gaussian_matrix(r, n, rank);
    let mut b = gaussian_matrix(r, n, n);
    let mut d = &v * v.transpose();
    if i % 2 == 1 {
        // Range of D inside an invariant subspace of B: uncontrollable.
        let k = rank;
        let small = gaussian_matrix(r, k, k);
        let mut dd = DMatrix::zeros(n, n);
        dd.view_mut((0, 0), (k, k)).copy_from(&(&small * small.transpose() + DMatrix::identity(k, k) * 0.1));
        for row in k..n {
            for col in 0..k {
                b[(row, col)] = 0.0;
            }
        }
        let qr = gaussian_matrix(r, n, n).qr();
        let q = qr.q();
        b = &q * b * q.transpose();
        d = &q * dd * q.transpose();
    }
    (b, d)
}

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let mut pairs = paper_pairs();
    let mut i = 0;
    while pairs.len() < 50 {
        pairs.push(random_pair(&mut r, i));
        i += 1;
    }
    let mut disagree = 0;
    let (mut full, mut deficient) = (0, 0);
    for (b, d) in &pairs {
        let (_, ok) = kalman_rank(&Matrix::from_dmatrix(b.clone()).map_err(e)?, &Matrix::from_dmatrix(d.clone()).map_err(e)?)
            .map_err(e)?;
        let gram = gram_rk4(b, d, 1.0, 4000);
        let ev = gram.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x.abs())));
        let oracle = lo > 1e-9 * hi;
        if oracle {
            full += 1;
        } else {
            deficient += 1;
        }
        if ok != oracle {
            disagree += 1;
            if std::env::var("ACCEPTANCE_DEBUG").is_ok() {
                eprintln!("n={} kalman={ok} gram lo/hi={:.3e}", b.nrows(), lo / hi);
            }
        }
    }
    Ok((
        disagree == 0,
        format!("50 pairs ({full} nonsingular, {deficient} singular by Gram oracle), disagreements {disagree}"),
    ))
}

fn criterion_5() -> Outcome {
    let model = double_well_gle(3.0, 1.0);
    let n = 20_000;
    let dt = 2e-3;
    let stepper = Stepper::new(&model, dt).map_err(e)?;
    let mut ens = init_ensemble(&model, n, 55, &InitLaw::Point(vec![1.0, 0.0, 0.0])).map_err(e)?;
    let steps = (50.0 / dt).round() as u64;
    for _ in 0..steps {
        stepper.step(&mut ens).map_err(e)?;
    }
    let (mean, cov, _) = empirical_moments(&ens).map_err(e)?;
    let nf = n as f64;
    let tv = 1.0 / model.beta();
    let mut worst: f64 = 0.0;
    for i in [1, 2] {
        worst = worst.max(mean[i].abs() / (cov.get(i, i) / nf).sqrt());
        worst = worst.max((cov.get(i, i) - tv).abs() / (2.0 * tv * tv / nf).sqrt());
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        worst = worst.max(cov.get(i, j).abs() / (cov.get(i, i) * cov.get(j, j) / nf).sqrt());
    }
    let prob = SelfConsistencyProblem::from_model(&model).map_err(e)?;
    let fps = fixed_points(&prob, &default_scan(&prob, 801).map_err(e)?).map_err(e)?;
    let mag = mean[0];
    let gap = fps.iter().map(|f| (f.m - mag).abs()).fold(f64::INFINITY, f64::min);
    Ok((
        worst <= 4.0 && gap <= 0.02,
        format!("p/z moments within {worst:.2} SE (limit 4); magnetization {mag:.4}, distance to fixed point {gap:.4} (limit 0.02)"),
    ))
}

fn glmv_bin() -> &'static str {
    env!("CARGO_BIN_EXE_glmv")
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(glmv_bin()).args(args).current_dir(dir).output().map_err(e)?;
    if !out.status.success() {
        return Err(format!("glmv {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let v = double_well(1.0, 1.0);
    let oracle = trapezoid_beta_critical(&v, 1.0, 1.0, 5.0);
    let prob = SelfConsistencyProblem::new(glmv::PotentialSpec::double_well(1.0, 1.0), 1.0, 1.0).map_err(e)?;
    let solver = beta_critical(&prob, 1.0, 5.0, 1e-9).map_err(e)?;
    let betas: Vec<f64> = (0..46).map(|i| 0.5 + 0.1 * i as f64).collect();
    let diag = bifurcation_diagram(&prob, &betas, 801).map_err(e)?;
    let counts_ok = betas.iter().zip(&diag.branches).all(|(&b, br)| {
        if (b - oracle).abs() < 1e-3 {
            true
        } else if b < oracle {
            br.len() == 1
        } else {
            br.len() == 3
                && br.iter().filter(|f| f.stability == Stability::Stable).count() == 2
                && br.iter().any(|f| f.m == 0.0 && f.stability == Stability::Unstable)
        }
    });
    let dir = tempfile::tempdir().map_err(e)?;
    let mut outputs = Vec::new();
    for kind in ["overdamped", "underdamped", "generalized"] {
        let sub = dir.path().join(kind);
        std::fs::create_dir_all(&sub).map_err(e)?;
        std::fs::write(sub.join("dw.toml"), double_well_toml(kind)).map_err(e)?;
        run_cli(&["bifurcation", "--config", "dw.toml", "--beta-min", "1", "--beta-max", "10", "--beta-steps", "64", "--out", "."], &sub)?;
        let csv = std::fs::read(sub.join("bifurcation.csv")).map_err(e)?;
        let json = std::fs::read(sub.join("bifurcation_summary.json")).map_err(e)?;
        outputs.push((csv, json));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let diff = (solver - oracle).abs();
    let dc = diag.beta_critical.map(|b| (b - oracle).abs()).unwrap_or(f64::INFINITY);
    Ok((
        diff <= 1e-4 && dc <= 1e-4 && counts_ok && identical,
        format!(
            "oracle beta_c {oracle:.10}, solver {solver:.10} (|diff| {diff:.1e}, diagram {dc:.1e}); branch counts 1->3 {counts_ok}; CLI diagrams identical across kinds {identical}"
        ),
    ))
}

fn grid_for(h: f64) -> Vec<Axis> {
    let n = (5.0 / h + 1e-9).floor() as usize;
    vec![Axis { h, n }; 3]
}

fn criterion_7() -> Outcome {
    let model = double_well_gle(3.0, 1.0);
    let prob = SelfConsistencyProblem::from_model(&model).map_err(e)?;
    let fps = fixed_points(&prob, &default_scan(&prob, 801).map_err(e)?).map_err(e)?;
    let m_star = fps.iter().filter(|f| f.stability == Stability::Stable).map(|f| f.m).fold(f64::NEG_INFINITY, f64::max);
    let dens = extend_to_full_state(m_star, &model).map_err(e)?;
    let hs = [0.3, 0.15, 0.075];
    let mut res = Vec::new();
    for &h in &hs {
        let rho = GridDensity::sample(grid_for(h), |x| dens.density(x));
        res.push(kfp_residual(&rho, &model).map_err(e)?);
    }
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let perturbed = dens.with_p_variance(1.2 / model.beta());
    let rho = GridDensity::sample(grid_for(0.075), |x| perturbed.density(x));
    let pr = kfp_residual(&rho, &model).map_err(e)?;
    let ratio = pr / res[2];
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        min_order >= 1.8 && ratio >= 10.0,
        format!(
            "residuals {:.3e} {:.3e} {:.3e}, orders {:.2} {:.2} (limit 1.8); perturbed/unperturbed {ratio:.1} (limit 10)",
            res[0], res[1], res[2], orders[0], orders[1]
        ),
    ))
}

fn criterion_8() -> Outcome {
    let model = gle_quadratic();
    let beta = model.beta();
    let mut law = GaussianEnsembleLaw::stationary(&model).map_err(e)?;
    law.law.cov.set(2, 2, 2.0 / beta);
    law.law.mean[0] = 1.0;
    let series = evolve_coupled(&GenericState { rho: RhoState::Gaussian(law), e: 0.0 }, 1e-3, 5.0, 10).map_err(e)?;
    let rows = &series.rows;
    let e0 = rows[0].energy;
    let drift = series.max_energy_drift() / e0.abs().max(1.0);
    let f_up = rows.windows(2).map(|w| w[1].free_energy - w[0].free_energy).fold(f64::NEG_INFINITY, f64::max);
    let s_down = rows.windows(2).map(|w| w[0].entropy - w[1].entropy).fold(f64::NEG_INFINITY, f64::max);

    // -dF/dt against the dissipation along the mean-field law from a point start.
    let (b, k, d) = split_bk(&model).map_err(e)?;
    let x0 = [1.0, 0.0, 0.0];
    let f_at = |t: f64| -> Result<f64, String> {
        let g = GaussianEnsembleLaw::new(meanfield_green(&b, &k, &d, t, &x0).map_err(e)?, &model).map_err(e)?;
        free_energy(&g).map_err(e)
    };
    let mut consist: f64 = 0.0;
    for i in 1..=10 {
        let t = 0.5 * i as f64;
        let h = 1e-4;
        let dfdt = (f_at(t + h)? - f_at(t - h)?) / (2.0 * h);
        let g = GaussianEnsembleLaw::new(meanfield_green(&b, &k, &d, t, &x0).map_err(e)?, &model).map_err(e)?;
        let diss = dissipation(&g).map_err(e)?;
        consist = consist.max((diss + dfdt).abs() / diss.abs().max(1e-12));
    }

    // Degeneracy residuals on refined grids.
    let dw = double_well_gle(3.0, 1.0);
    let prob = SelfConsistencyProblem::from_model(&dw).map_err(e)?;
    let m_star = fixed_points(&prob, &default_scan(&prob, 801).map_err(e)?).map_err(e)?.last().map(|f| f.m).unwrap_or(0.0);
    let dens = extend_to_full_state(m_star, &dw).map_err(e)?;
    let mut r1 = Vec::new();
    let mut r2max: f64 = 0.0;
    for h in [0.3, 0.15, 0.075] {
        let rho = GridDensity::sample(grid_for(h), |x| dens.density(x));
        let (a, b2) = degeneracy_residual(&rho, &dw).map_err(e)?;
        r1.push(a);
        r2max = r2max.max(b2);
    }
    let orders: Vec<f64> = r1.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = f_up <= 1e-8 && drift <= 1e-6 && s_down <= 1e-8 && consist <= 1e-4 && min_order >= 1.8 && r2max <= 1e-10;
    Ok((
        ok,
        format!(
            "max F increase {f_up:.1e}, energy drift {drift:.1e}, max S decrease {s_down:.1e}, |diss + dF/dt|/diss {consist:.1e}; r1 orders {:.2} {:.2}, r2 max {r2max:.1e}",
            orders[0], orders[1]
        ),
    ))
}

/// Exact max moment error between the scaled generalized law and the
/// underdamped reference at the study checkpoints, from RK4 moment ODEs.
fn oracle_white_noise_error(eps: f64, t_end: f64) -> f64 {
    let (w2, eta2, beta, lam, alpha, gamma) = (1.0, 1.0, 1.0, 1.0 / eps, 1.0 / (eps * eps), 1.0);
    let bg = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -w2, 0.0, lam, 0.0, -lam, -alpha]);
    let mut mg = bg.clone();
    mg[(1, 0)] -= eta2;
    let dg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.0, alpha / beta]));
    let bu = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w2, -gamma]);
    let mut mu = bu.clone();
    mu[(1, 0)] -= eta2;
    let du = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, gamma / beta]));
    let mut worst: f64 = 0.0;
    for frac in [0.125, 0.25, 0.5, 1.0] {
        let t = frac * t_end;
        let steps = (t / (0.05 * eps * eps)).ceil() as usize;
        let (xg, sg) = moments_rk4(&bg, &mg, &dg, &[1.0, 0.0, 0.0], t, steps);
        let (xu, su) = moments_rk4(&bu, &mu, &du, &[1.0, 0.0], t, steps);
        for k in 0..2 {
            worst = worst.max((xg[k] - xu[k]).abs());
        }
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            worst = worst.max((sg[(i, j)] - su[(i, j)]).abs());
        }
    }
    worst
}

fn criterion_9() -> Outcome {
    let base = gle_quadratic();
    let eps = vec![0.5, 0.25, 0.125];
    let study = ScalingStudy::new(base.clone(), eps.clone(), 10_000, 2.0, 909);
    let rows = run_study(&study).map_err(e)?;
    let monotone = rows.windows(2).all(|w| w[0].error - w[1].error > 2.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt());
    let oracle: Vec<f64> = eps.iter().map(|&x| oracle_white_noise_error(x, 2.0)).collect();
    let last = rows.last().expect("rows");
    let cap = oracle[2] + 4.0 * last.se;
    let below = last.error < cap;

    let mem = base.memory().expect("memory");
    let g0 = effective_gamma(&mem.lambda, &mem.a).map_err(e)?;
    let mut inv: f64 = 0.0;
    for x in [0.5, 0.25, 0.125, 0.05, 0.01] {
        let s = scaled_spec(&base, x).map_err(e)?;
        let sm = s.memory().expect("memory");
        inv = inv.max(effective_gamma(&sm.lambda, &sm.a).map_err(e)?.max_abs_diff(&g0));
    }

    let scaled = scaled_spec(&base, 0.05).map_err(e)?;
    let mut gle = eig(&assemble(&scaled, 1).map_err(e)?.b).map_err(e)?;
    gle.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    let slow: Vec<Complex<f64>> = gle.into_iter().take(2).collect();
    let reference = reference_model(&base).map_err(e)?;
    let ule = eig(&assemble(&reference, 1).map_err(e)?.b).map_err(e)?;
    let track = same_multiset(&slow, &ule, 1e-2);
    let gap = slow.iter().map(|x| ule.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);

    let table: Vec<String> = rows.iter().zip(&oracle).map(|(r, o)| format!("eps {} err {:.4}±{:.4} (exact {:.4})", r.epsilon, r.error, r.se, o)).collect();
    Ok((
        monotone && below && inv <= 1e-14 && track,
        format!(
            "{}; monotone beyond 2 SE {monotone}; final {:.4} < cap {cap:.4} {below}; gamma invariance {inv:.1e}; slow eigenvalue gap {gap:.1e}",
            table.join(", "),
            last.error
        ),
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let root = dir.path();
    std::fs::write(root.join("gle.toml"), QUADRATIC_GLE_TOML).map_err(e)?;
    std::fs::write(root.join("dw.toml"), double_well_toml("generalized")).map_err(e)?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--config", "gle.toml"],
        vec!["spectrum", "--config", "gle.toml"],
        vec!["greens", "--config", "gle.toml"],
        vec!["stationary", "--config", "dw.toml"],
        vec!["bifurcation", "--config", "dw.toml", "--beta-steps", "24"],
        vec!["thermo", "--config", "gle.toml"],
        vec!["whitenoise", "--config", "gle.toml", "--n", "2000", "--t", "0.5"],
        vec!["validate", "--config", "gle.toml"],
        vec!["simulate", "--config", "gle.toml", "--format", "json"],
    ];
    let mut mismatched = Vec::new();
    for (ci, cmd) in commands.iter().enumerate() {
        let mut snapshots = Vec::new();
        for threads in ["1", "2", "8"] {
            let out = root.join(format!("c{ci}_t{threads}"));
            let outs = out.to_string_lossy().into_owned();
            let mut args = cmd.clone();
            args.extend(["--threads", threads, "--out", &outs]);
            run_cli(&args, root)?;
            snapshots.push(read_outputs(&out)?);
        }
        // Rerun from the manifest's config echo and seed.
        let manifest: serde_json::Value = serde_json::from_slice(
            &std::fs::read(root.join(format!("c{ci}_t1")).join(format!("{}.manifest.json", cmd[0]))).map_err(e)?,
        )
        .map_err(e)?;
        let echo = root.join(format!("c{ci}_echo.toml"));
        std::fs::write(&echo, manifest["config"].as_str().unwrap_or_default()).map_err(e)?;
        let seed = manifest["seed"].to_string();
        let out = root.join(format!("c{ci}_rerun"));
        let (outs, echos) = (out.to_string_lossy().into_owned(), echo.to_string_lossy().into_owned());
        let mut args = cmd.clone();
        args[2] = &echos;
        args.extend(["--seed", &seed, "--out", &outs]);
        run_cli(&args, root)?;
        snapshots.push(read_outputs(&out)?);
        if snapshots.iter().any(|s| s != &snapshots[0]) || snapshots[0].is_empty() {
            mismatched.push(cmd[0].to_string());
        }
    }
    Ok((
        mismatched.is_empty(),
        format!("{} invocations x (threads 1, 2, 8 + manifest rerun); differing: {:?}", commands.len(), mismatched),
    ))
}

fn read_outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(e)?
        .filter_map(|f| f.ok())
        .map(|f| f.file_name().to_string_lossy().into_owned())
        .filter(|name| !name.ends_with(".manifest.json"))
        .map(|name| {
            let bytes = std::fs::read(dir.join(&name)).unwrap_or_default();
            (name, bytes)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "spectrum oracle equivalence", criterion_1),
        (2, "Green's function vs Monte Carlo", criterion_2),
        (3, "covariance ODE consistency", criterion_3),
        (4, "Kalman rank vs Gram determinant", criterion_4),
        (5, "stationary product structure", criterion_5),
        (6, "bifurcation diagram", criterion_6),
        (7, "stationary residual convergence", criterion_7),
        (8, "H-theorem and GENERIC laws", criterion_8),
        (9, "white-noise limit", criterion_9),
        (10, "CLI reproducibility", criterion_10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        if !report(id, name, f) {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
