//! Command-line front end. [`dispatch`] returns the process exit code:
//! 0 on success, 1 on a domain error (error name on stderr), 2 on a usage
//! error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::limits::{effective_gamma, run_study, ScalingStudy};
use crate::model::{DynamicsKind, ValidatedModel};
use crate::quadratic::{base_spectrum, meanfield_green, model_spectrum, split_bk, GaussianLaw, DEFAULT_LATTICE_CAP};
use crate::sim::{default_dt, simulate, InitLaw};
use crate::stationary::{bifurcation_diagram, default_scan, fixed_points, SelfConsistencyProblem};
use crate::thermo::{evolve_coupled, GaussianEnsembleLaw, GenericState, RhoState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_DESCRIBE: &str = env!("GLMV_GIT_DESCRIBE");

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "glmv", version, about = "Generalized McKean-Vlasov dynamics with memory")]
struct Cli {
    /// Model/run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct InitArgs {
    /// Initial position (one value broadcasts over all coordinates).
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![1.0])]
    q0: Vec<f64>,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![0.0])]
    p0: Vec<f64>,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![0.0])]
    z0: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Particle simulation; writes moment time series.
    Simulate {
        #[arg(long = "n")]
        n: Option<usize>,
        #[arg(long = "t")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        record_every: Option<u64>,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Base eigenvalues and the spectral lattice.
    Spectrum {
        #[arg(long, default_value_t = DEFAULT_LATTICE_CAP)]
        cap: u32,
    },
    /// Mean-field Gaussian law on a time grid.
    Greens {
        #[arg(long = "t", default_value_t = 2.0)]
        t: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Fixed points of the self-consistency map.
    Stationary {
        #[arg(long, default_value_t = 2001)]
        scan_points: usize,
    },
    /// Fixed points over a β grid.
    Bifurcation {
        #[arg(long, default_value_t = 0.5)]
        beta_min: f64,
        #[arg(long, default_value_t = 5.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 46)]
        beta_steps: usize,
        #[arg(long, default_value_t = 801)]
        scan_points: usize,
    },
    /// Energy, entropy, free energy and dissipation of the coupled system.
    Thermo {
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long = "t", default_value_t = 5.0)]
        t: f64,
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        /// Initial auxiliary variance as a multiple of the stationary one.
        #[arg(long, default_value_t = 2.0)]
        z_var_factor: f64,
    },
    /// Error table of the white-noise limit.
    Whitenoise {
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![0.5, 0.25, 0.125])]
        epsilons: Vec<f64>,
        #[arg(long = "n")]
        n: Option<usize>,
        #[arg(long = "t")]
        t: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        base_dt: f64,
    },
    /// Checks the configuration and prints derived quantities.
    Validate,
}

struct Ctx {
    config: Config,
    config_text: String,
    seed: u64,
    out: PathBuf,
    format: Format,
    outputs: Vec<PathBuf>,
    extra: serde_json::Value,
}

impl Ctx {
    fn model(&self) -> Result<ValidatedModel> {
        self.config.model()
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_table(&mut self, stem: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut s = header.join(",");
                s.push('\n');
                for r in rows {
                    s.push_str(&r.join(","));
                    s.push('\n');
                }
                self.write(&format!("{stem}.csv"), s.as_bytes())
            }
            Format::Json => {
                let objs: Vec<serde_json::Value> = rows
                    .iter()
                    .map(|r| {
                        let m: serde_json::Map<String, serde_json::Value> = header
                            .iter()
                            .zip(r)
                            .map(|(h, v)| (h.clone(), v.parse::<f64>().map(|x| json!(x)).unwrap_or_else(|_| json!(v))))
                            .collect();
                        serde_json::Value::Object(m)
                    })
                    .collect();
                let text = serde_json::to_string_pretty(&objs).expect("json");
                self.write(&format!("{stem}.json"), format!("{text}\n").as_bytes())
            }
        }
    }

    fn write_json(&mut self, name: &str, v: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(v).expect("json");
        self.write(name, format!("{text}\n").as_bytes())
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.config.is_none() {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let err = cmd.error(clap::error::ErrorKind::MissingRequiredArgument, "--config <path> is required");
        let _ = err.print();
        return 2;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("InvalidParameter: {e}");
            return 1;
        }
    };
    let argv_text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match pool.install(|| execute(cli, &argv_text)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            1
        }
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn execute(cli: Cli, argv: &[String]) -> Result<()> {
    let started = unix_seconds();
    let path = cli.config.clone().expect("checked in dispatch");
    let config_text = fs::read_to_string(&path)?;
    let config = Config::parse(&config_text)?;
    let seed = cli.seed.or(config.run().seed).unwrap_or(0);
    fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx {
        config,
        config_text,
        seed,
        out: cli.out.clone(),
        format: cli.format,
        outputs: Vec::new(),
        extra: json!({}),
    };
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Spectrum { .. } => "spectrum",
        Command::Greens { .. } => "greens",
        Command::Stationary { .. } => "stationary",
        Command::Bifurcation { .. } => "bifurcation",
        Command::Thermo { .. } => "thermo",
        Command::Whitenoise { .. } => "whitenoise",
        Command::Validate => "validate",
    };
    match cli.command {
        Command::Simulate { n, t, dt, record_every, init } => cmd_simulate(&mut ctx, n, t, dt, record_every, &init)?,
        Command::Spectrum { cap } => cmd_spectrum(&mut ctx, cap)?,
        Command::Greens { t, steps, init } => cmd_greens(&mut ctx, t, steps, &init)?,
        Command::Stationary { scan_points } => cmd_stationary(&mut ctx, scan_points)?,
        Command::Bifurcation { beta_min, beta_max, beta_steps, scan_points } => {
            cmd_bifurcation(&mut ctx, beta_min, beta_max, beta_steps, scan_points)?
        }
        Command::Thermo { dt, t, record_every, z_var_factor } => cmd_thermo(&mut ctx, dt, t, record_every, z_var_factor)?,
        Command::Whitenoise { epsilons, n, t, base_dt } => cmd_whitenoise(&mut ctx, epsilons, n, t, base_dt)?,
        Command::Validate => cmd_validate(&mut ctx)?,
    }
    let outputs: Vec<serde_json::Value> = ctx
        .outputs
        .iter()
        .map(|p| Ok(json!({ "path": p.to_string_lossy(), "sha256": sha256_hex(p)? })))
        .collect::<Result<_>>()?;
    let manifest = json!({
        "tool": "glmv",
        "version": VERSION,
        "git_describe": GIT_DESCRIBE,
        "command": name,
        "argv": argv,
        "config": ctx.config_text,
        "seed": ctx.seed,
        "threads": rayon::current_num_threads(),
        "started_unix_s": started,
        "finished_unix_s": unix_seconds(),
        "outputs": outputs,
        "details": ctx.extra,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("json");
    let mut file = fs::File::create(ctx.out.join(format!("{name}.manifest.json")))?;
    writeln!(file, "{text}")?;
    Ok(())
}

fn init_law(model: &ValidatedModel, init: &InitArgs) -> Result<InitLaw> {
    InitLaw::point(model, &init.q0, &init.p0, &init.z0)
}

fn point_vector(model: &ValidatedModel, init: &InitArgs) -> Result<Vec<f64>> {
    match init_law(model, init)? {
        InitLaw::Point(x) => Ok(x),
        _ => unreachable!("point constructor"),
    }
}

fn cmd_simulate(
    ctx: &mut Ctx,
    n: Option<usize>,
    t: Option<f64>,
    dt: Option<f64>,
    record_every: Option<u64>,
    init: &InitArgs,
) -> Result<()> {
    let model = ctx.model()?;
    let run = ctx.config.run();
    let n = n.or(run.n).unwrap_or(1000);
    let t = t.or(run.t).unwrap_or(1.0);
    let dt = dt.or(run.dt).unwrap_or_else(|| default_dt(&model));
    let record_every = record_every.or(run.record_every).unwrap_or(100);
    let series = simulate(&model, n, t, dt, ctx.seed, &init_law(&model, init)?, record_every)?;
    let rows: Vec<Vec<String>> = series.csv_rows().iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect();
    ctx.extra = json!({ "N": n, "T": t, "dt": dt, "record_every": record_every });
    ctx.write_table("simulate", &series.csv_header(), &rows)
}

fn cmd_spectrum(ctx: &mut Ctx, cap: u32) -> Result<()> {
    let model = ctx.model()?;
    let report = model_spectrum(&model, cap)?;
    let rows: Vec<Vec<String>> = report
        .lattice
        .iter()
        .map(|p| vec![f(p.re), f(p.im), p.k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";")])
        .collect();
    ctx.write_table("spectrum", &header(&["re", "im", "k"]), &rows)?;
    let summary = json!({
        "kind": model.kind(),
        "base": report.base.iter().map(|(re, im)| json!({"re": re, "im": im})).collect::<Vec<_>>(),
        "cap": cap,
        "gap_rate": report.gap_rate,
    });
    ctx.write_json("spectrum_summary.json", &summary)
}

fn cmd_greens(ctx: &mut Ctx, t_end: f64, steps: usize, init: &InitArgs) -> Result<()> {
    let model = ctx.model()?;
    let (b, k, d) = split_bk(&model)?;
    let x0 = point_vector(&model, init)?;
    let labels = model.state_labels();
    let s = labels.len();
    let mut head = vec!["t".to_string()];
    head.extend(labels.iter().map(|l| format!("mean_{l}")));
    for a in 0..s {
        for c in a..s {
            head.push(format!("cov_{}{}", labels[a], labels[c]));
        }
    }
    let steps = steps.max(1);
    let mut rows = Vec::new();
    for i in 0..=steps {
        let t = t_end * i as f64 / steps as f64;
        let law: GaussianLaw = meanfield_green(&b, &k, &d, t, &x0)?;
        let mut r = vec![f(t)];
        r.extend(law.mean.iter().map(|&x| f(x)));
        for a in 0..s {
            for c in a..s {
                r.push(f(law.cov.get(a, c)));
            }
        }
        rows.push(r);
    }
    ctx.write_table("greens", &head, &rows)
}

fn cmd_stationary(ctx: &mut Ctx, scan_points: usize) -> Result<()> {
    let model = ctx.model()?;
    let prob = SelfConsistencyProblem::from_model(&model)?;
    let fps = fixed_points(&prob, &default_scan(&prob, scan_points)?)?;
    let rows: Vec<Vec<String>> = fps
        .iter()
        .map(|p| vec![f(p.m), f(p.slope), p.stability.as_str().to_string(), f(p.residual)])
        .collect();
    ctx.write_table("stationary", &header(&["m_star", "slope", "stability", "residual"]), &rows)
}

fn cmd_bifurcation(ctx: &mut Ctx, lo: f64, hi: f64, steps: usize, scan_points: usize) -> Result<()> {
    if !(hi > lo) || steps < 2 || !(lo > 0.0) {
        return Err(Error::InvalidParameter("need 0 < beta-min < beta-max and at least 2 steps".into()));
    }
    let model = ctx.model()?;
    let prob = SelfConsistencyProblem::from_model(&model)?;
    let betas: Vec<f64> = (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect();
    let diag = bifurcation_diagram(&prob, &betas, scan_points)?;
    let rows: Vec<Vec<String>> = diag
        .rows()
        .iter()
        .map(|(b, m, s, r)| vec![f(*b), f(*m), s.as_str().to_string(), f(*r)])
        .collect();
    ctx.write_table("bifurcation", &header(&["beta", "m_star", "stable", "residual"]), &rows)?;
    let counts: Vec<usize> = diag.branches.iter().map(|b| b.len()).collect();
    ctx.write_json("bifurcation_summary.json", &json!({ "beta_critical": diag.beta_critical, "branch_counts": counts }))
}

fn cmd_thermo(ctx: &mut Ctx, dt: f64, t: f64, record_every: usize, z_var_factor: f64) -> Result<()> {
    let model = ctx.model()?;
    let mut law = GaussianEnsembleLaw::stationary(&model)?;
    if model.kind() == DynamicsKind::Generalized {
        let z0 = 2 * model.d();
        for i in z0..model.state_dim() {
            for j in z0..model.state_dim() {
                law.law.cov.set(i, j, law.law.cov.get(i, j) * z_var_factor);
            }
        }
    } else if model.kind() == DynamicsKind::Underdamped {
        let d = model.d();
        for i in d..2 * d {
            law.law.cov.set(i, i, law.law.cov.get(i, i) * z_var_factor);
        }
    }
    let series = evolve_coupled(&GenericState { rho: RhoState::Gaussian(law), e: 0.0 }, dt, t, record_every)?;
    let rows: Vec<Vec<String>> = series
        .rows
        .iter()
        .map(|r| vec![f(r.t), f(r.energy), f(r.entropy), f(r.free_energy), f(r.dissipation)])
        .collect();
    ctx.extra = json!({ "max_energy_drift": series.max_energy_drift() });
    ctx.write_table("thermo", &header(&["t", "E", "S", "F", "dissipation"]), &rows)
}

fn cmd_whitenoise(ctx: &mut Ctx, epsilons: Vec<f64>, n: Option<usize>, t: Option<f64>, base_dt: f64) -> Result<()> {
    let model = ctx.model()?;
    let run = ctx.config.run();
    let mut study = ScalingStudy::new(model, epsilons, n.or(run.n).unwrap_or(10_000), t.or(run.t).unwrap_or(2.0), ctx.seed);
    study.base_dt = base_dt;
    let start = Instant::now();
    let rows = run_study(&study)?;
    let table: Vec<Vec<String>> =
        rows.iter().map(|r| vec![f(r.epsilon), f(r.error), f(r.se), r.steps.to_string()]).collect();
    ctx.extra = json!({
        "wallclock_s": rows.iter().map(|r| json!({"epsilon": r.epsilon, "wallclock_s": r.wallclock_s})).collect::<Vec<_>>(),
        "total_wallclock_s": start.elapsed().as_secs_f64(),
    });
    ctx.write_table("whitenoise", &header(&["epsilon", "error", "se", "steps"]), &table)
}

fn cmd_validate(ctx: &mut Ctx) -> Result<()> {
    let model = ctx.model()?;
    let mut summary = json!({
        "valid": true,
        "kind": model.kind(),
        "d": model.d(),
        "state_dim": model.state_dim(),
        "labels": model.state_labels(),
    });
    if let Some(mem) = model.memory() {
        let g = effective_gamma(&mem.lambda, &mem.a)?;
        summary["effective_gamma"] = json!(g.to_row_major());
    }
    if let Ok(spec) = base_spectrum(&model) {
        summary["base_spectrum"] = json!(spec.iter().map(|z| json!({"re": z.re, "im": z.im})).collect::<Vec<_>>());
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    ctx.write_json("validate.json", &summary)
}
