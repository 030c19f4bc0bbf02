//! The `damc` command-line surface.
//!
//! Subcommands take a JSON config file plus dotted-path `--set key=value`
//! overrides, and write CSV/JSON artifacts. All randomness flows from the
//! config's seed fields; nothing is wall-clock seeded, so reruns are
//! byte-identical. Verbosity is controlled by the `DAMC_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`).
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime or
//! numerical failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    assumption_constants, render_report, theorem_bound_explicit, AssumptionConstants, BoundForm,
    BoundReport,
};
use crate::error::{Error, Result};
use crate::experiments::{
    correlation_report, grid_csv, real_csv_row, run_grid_with_jobs, run_real, scatter_csv,
    GridSolver, GridSpec, RealDataConfig, RealMethod, ScatterPoint, REAL_CSV_HEADER,
};
use crate::imc::{fit_factored, fit_projected, LossSpec, SolverConfig};
use crate::linalg;
use crate::subspace::{spectral_diagnostics, truncated_svd_auto, EmpiricalPmf, SideInfo};
use crate::synthgen::{draw_labeled, draw_unlabeled, make_world, SynthConfig, SynthWorld};

#[derive(Parser)]
#[command(name = "damc", version, about = "Semi-supervised matrix completion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic (M, N) grid and emit grid/scatter CSVs plus a JSON summary
    SynthGrid {
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for grid cells (0 = default pool)
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Dotted-path config overrides, e.g. --set world.seed=3
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate assumption constants and the generalization-bound terms
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Optional directory for the JSON report
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fit a single core matrix against a serialized world and write the result
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run masked-label comparisons on a ratings dataset, appending result rows
    Real {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Re-validate a serialized world and print its diagnostics
    Replay {
        #[arg(long)]
        world: PathBuf,
    },
}

/// Entry point used by the binary; never panics on user error.
pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("DAMC_LOG", "warn"))
        .is_test(false)
        .try_init();

    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };

    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Argument(_)
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::UnboundedLoss(_) => 2,
        Error::Numerical(_) | Error::DegenerateEigengap { .. } | Error::Io(_) => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGrid { config, out, jobs, set } => cmd_synth_grid(&config, &out, jobs, &set),
        Command::Bounds { config, out, set } => cmd_bounds(&config, out.as_deref(), &set),
        Command::Fit { config, out, set } => cmd_fit(&config, out.as_deref(), &set),
        Command::Real { config, out, set } => cmd_real(&config, &out, &set),
        Command::Replay { world } => cmd_replay(&world),
    }
}

// ---------------------------------------------------------------------------
// Config loading with overrides
// ---------------------------------------------------------------------------

fn load_config<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!("config file {} not found", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    Ok(serde_json::from_value(value)?)
}

/// Apply one `dotted.path=value` override; the value is parsed as JSON when
/// possible and kept as a string otherwise.
fn apply_override(root: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{entry}` is not KEY=VALUE")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(Error::Config(format!("override `{entry}` has an empty path segment")));
        }
        if i + 1 == segments.len() {
            match cursor {
                serde_json::Value::Object(map) => {
                    map.insert(segment.to_string(), parsed);
                    return Ok(());
                }
                _ => {
                    return Err(Error::Config(format!(
                        "override `{entry}`: `{segment}` is not addressable"
                    )))
                }
            }
        }
        cursor = match cursor {
            serde_json::Value::Object(map) => map
                .entry(segment.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default())),
            _ => {
                return Err(Error::Config(format!(
                    "override `{entry}`: `{segment}` is not an object"
                )))
            }
        };
    }
    unreachable!("split never yields an empty iterator")
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// synth-grid
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GridSummary<'a> {
    pearson_r: Option<f64>,
    points: &'a [ScatterPoint],
    failures: usize,
    records: usize,
}

fn cmd_synth_grid(config: &Path, out: &Path, jobs: usize, overrides: &[String]) -> Result<()> {
    let spec: GridSpec = load_config(config, overrides)?;
    let outcome = run_grid_with_jobs(&spec, jobs)?;

    let m_max = spec.unlabeled_counts.iter().copied().max().unwrap_or(0);
    let n_max = spec.labeled_counts.iter().copied().max().unwrap_or(0);
    let (points, pearson_r) = match correlation_report(&outcome.records, m_max, n_max) {
        Ok(report) => (report.points, Some(report.pearson_r)),
        Err(e) => {
            log::warn!("correlation unavailable: {e}");
            (Vec::new(), None)
        }
    };

    let grid_path = write_text(out, "grid.csv", &grid_csv(&outcome.records))?;
    let scatter_path = write_text(out, "scatter.csv", &scatter_csv(&points))?;
    let summary = GridSummary {
        pearson_r,
        points: &points,
        failures: outcome.failures.len(),
        records: outcome.records.len(),
    };
    let summary_path = write_text(out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;

    println!("wrote {}", grid_path.display());
    println!("wrote {}", scatter_path.display());
    println!("wrote {}", summary_path.display());
    if let Some(r) = pearson_r {
        println!("pearson_r {r:.6}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsConfig {
    /// Serialized world to measure constants from...
    world: Option<PathBuf>,
    /// ...or a world generated in-process...
    synth: Option<SynthConfig>,
    /// ...with this nuclear budget (defaults to the world core's norm).
    nuclear_budget: Option<f64>,
    /// ...or explicit constants plus dimensions.
    constants: Option<AssumptionConstants>,
    m: Option<usize>,
    n: Option<usize>,
    unlabeled_count: usize,
    labeled_count: usize,
    delta: f64,
    /// Loss whose Lipschitz/bound constants feed the formulas.
    loss: Option<LossSpec>,
    /// Explicit loss constants (assumed mode); both must be given together.
    lipschitz: Option<f64>,
    loss_bound: Option<f64>,
    #[serde(default)]
    appendix_form: bool,
}

fn load_world(path: &Path) -> Result<SynthWorld> {
    if !path.exists() {
        return Err(Error::Config(format!("world file {} not found", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct BoundsArtifact {
    constants: AssumptionConstants,
    report: BoundReport,
}

fn cmd_bounds(config: &Path, out: Option<&Path>, overrides: &[String]) -> Result<()> {
    let cfg: BoundsConfig = load_config(config, overrides)?;

    let world = match (&cfg.world, &cfg.synth, &cfg.constants) {
        (Some(path), None, None) => Some(load_world(path)?),
        (None, Some(synth), None) => Some(make_world(synth)?),
        (None, None, Some(_)) => None,
        _ => {
            return Err(Error::Config(
                "give exactly one of `world`, `synth` or `constants`".into(),
            ))
        }
    };
    let (constants, m, n) = match (world, &cfg.constants) {
        (Some(world), _) => {
            let budget = match cfg.nuclear_budget {
                Some(b) => b,
                None => linalg::nuclear_norm(&world.core_star)?,
            };
            let factors = world.true_subspace()?;
            let side = SideInfo::from_factors(&factors);
            let constants =
                assumption_constants(&world.pmf, side.x(), side.y(), budget, world.d())?;
            (constants, world.m(), world.n())
        }
        (None, Some(constants)) => {
            let (Some(m), Some(n)) = (cfg.m, cfg.n) else {
                return Err(Error::Config(
                    "explicit constants need `m` and `n` dimensions".into(),
                ));
            };
            (*constants, m, n)
        }
        (None, None) => unreachable!("validated above"),
    };

    let (lip, bound) = match (cfg.lipschitz, cfg.loss_bound, cfg.loss) {
        (Some(l), Some(b), _) => (l, b),
        (None, None, Some(loss)) => match (loss.lipschitz(), loss.bound()) {
            (Some(l), Some(b)) => (l, b),
            _ => return Err(Error::UnboundedLoss(loss.name())),
        },
        _ => {
            return Err(Error::Config(
                "give either `loss` or both `lipschitz` and `loss_bound`".into(),
            ))
        }
    };

    let form = if cfg.appendix_form { BoundForm::Appendix } else { BoundForm::MainText };
    let report = theorem_bound_explicit(
        &constants,
        m,
        n,
        cfg.unlabeled_count,
        cfg.labeled_count,
        cfg.delta,
        lip,
        bound,
        form,
    )?;

    print!("{}", render_report(&constants, &report));
    if let Some(dir) = out {
        let artifact = BoundsArtifact { constants, report };
        let path = write_text(dir, "bounds.json", &serde_json::to_string_pretty(&artifact)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn default_loss() -> LossSpec {
    LossSpec::Squared
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    /// Serialized world to draw from...
    world: Option<PathBuf>,
    /// ...or a world generated in-process (also written to the output
    /// directory for later replay).
    synth: Option<SynthConfig>,
    /// Unlabeled draws for subspace estimation; omit to use the exact
    /// subspace of the world's sampling distribution.
    unlabeled_count: Option<usize>,
    labeled_count: usize,
    #[serde(default)]
    noise_sd: f64,
    solver: GridSolver,
    #[serde(default)]
    solver_config: SolverConfig,
    #[serde(default = "default_loss")]
    loss: LossSpec,
    seed: u64,
}

fn cmd_fit(config: &Path, out: Option<&Path>, overrides: &[String]) -> Result<()> {
    let cfg: FitConfig = load_config(config, overrides)?;
    let dir = out.unwrap_or_else(|| Path::new("."));
    let world = match (&cfg.world, &cfg.synth) {
        (Some(path), None) => load_world(path)?,
        (None, Some(synth)) => {
            let world = make_world(synth)?;
            let path = write_text(dir, "world.json", &serde_json::to_string(&world)?)?;
            println!("wrote {}", path.display());
            world
        }
        _ => return Err(Error::Config("give exactly one of `world` or `synth`".into())),
    };
    let d = world.d();

    let factors = match cfg.unlabeled_count {
        Some(count) => {
            let draws = draw_unlabeled(&world, count, crate::rng::derive(cfg.seed, &[1]));
            let pmf = EmpiricalPmf::from_samples(&draws.unlabeled, world.m(), world.n())?;
            truncated_svd_auto(&pmf.to_dense(), d, crate::rng::derive(cfg.seed, &[2]))?
        }
        None => world.true_subspace()?,
    };
    let side = SideInfo::from_factors(&factors);
    let labeled = draw_labeled(&world, cfg.labeled_count, cfg.noise_sd, crate::rng::derive(cfg.seed, &[3]))?;

    let solver_cfg = SolverConfig { seed: crate::rng::derive(cfg.seed, &[4]), ..cfg.solver_config };
    let fit = match cfg.solver {
        GridSolver::Factored { lambda, inner_rank } => fit_factored(
            &side,
            &labeled.labeled,
            lambda,
            inner_rank.unwrap_or(d),
            cfg.loss,
            &solver_cfg,
        )?,
        GridSolver::Projected { budget } => {
            fit_projected(&side, &labeled.labeled, budget, cfg.loss, &solver_cfg)?
        }
    };

    println!(
        "fit: train_risk {:.6e}, nuclear_norm {:.6e}, iterations {}, converged {}",
        fit.train_risk, fit.nuclear_norm, fit.iterations, fit.converged
    );
    let path = write_text(dir, "fit.json", &serde_json::to_string_pretty(&fit)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// real
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RealRunConfig {
    dataset_path: PathBuf,
    #[serde(default = "default_dataset_name")]
    dataset_name: String,
    #[serde(default = "default_train_fraction")]
    train_fraction: f64,
    methods: Vec<RealMethod>,
    p_values: Vec<f64>,
    seed: u64,
}

fn default_dataset_name() -> String {
    "ml-100k".into()
}

fn default_train_fraction() -> f64 {
    0.8
}

fn cmd_real(config: &Path, out: &Path, overrides: &[String]) -> Result<()> {
    let cfg: RealRunConfig = load_config(config, overrides)?;
    if !cfg.dataset_path.exists() {
        return Err(Error::Config(format!(
            "dataset {} not found",
            cfg.dataset_path.display()
        )));
    }
    for &p in &cfg.p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("p value {p} outside [0, 1]")));
        }
    }
    if cfg.methods.is_empty() || cfg.p_values.is_empty() {
        return Err(Error::Config("methods and p_values must be nonempty".into()));
    }

    std::fs::create_dir_all(out)?;
    let csv_path = out.join("real.csv");
    let mut body = if csv_path.exists() {
        std::fs::read_to_string(&csv_path)?
    } else {
        format!("{REAL_CSV_HEADER}\n")
    };

    for method in &cfg.methods {
        for &p in &cfg.p_values {
            let run_cfg = RealDataConfig {
                dataset_path: cfg.dataset_path.clone(),
                dataset_name: cfg.dataset_name.clone(),
                label_removal_p: p,
                train_fraction: cfg.train_fraction,
                method: method.clone(),
                seed: cfg.seed,
            };
            let row = run_real(&run_cfg)?;
            println!("{} p={} rmse={:.4}", row.method, row.p, row.rmse);
            body.push_str(&real_csv_row(&row));
        }
    }
    std::fs::write(&csv_path, body)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

fn cmd_replay(world_path: &Path) -> Result<()> {
    let world = load_world(world_path)?;
    let (m, n, d) = (world.m(), world.n(), world.d());
    println!("world: {m}x{n}, d = {d}");

    let mass: f64 = world.pmf.iter().sum();
    if (mass - 1.0).abs() > 1e-12 || world.pmf.iter().any(|&v| v < 0.0) {
        return Err(Error::Numerical(format!(
            "sampling distribution violated: mass {mass:.15}, min {:.3e}",
            world.pmf.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    println!("pmf: mass {mass:.15}, all entries nonnegative");

    let rebuilt = &world.x_star * &world.core_star * world.y_star.transpose();
    let drift = (&rebuilt - &world.ground_truth).amax();
    if drift > 1e-12 {
        return Err(Error::Numerical(format!(
            "ground truth no longer equals x_star * core * y_star^T (max drift {drift:.3e})"
        )));
    }
    println!("ground truth: realizable (max drift {drift:.3e})");

    let diag = spectral_diagnostics(&world.pmf, d)?;
    println!(
        "pmf spectrum: norm {:.6e}, eigengap {:.6e}, condition {:.6e}",
        diag.spectral_norm, diag.eigengap, diag.condition
    );

    let factors = world.true_subspace()?;
    let proj = factors.u() * (factors.u().transpose() * &world.ground_truth);
    let residual = (&world.ground_truth - proj).norm() / world.ground_truth.norm().max(1e-300);
    if residual > 1e-8 {
        return Err(Error::Numerical(format!(
            "ground-truth column space leaks out of the sampling subspace (relative residual {residual:.3e})"
        )));
    }
    println!("shared subspace: relative residual {residual:.3e}");
    println!("ok");
    Ok(())
}
