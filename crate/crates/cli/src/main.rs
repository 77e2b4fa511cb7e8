//! Command-line front end: training runs, closed-form optimum tables, snapshot scoring,
//! and the exact best-response dynamics.
//!
//! Exit codes are stable so scripts can branch without parsing messages:
//! 0 success, 1 runtime abort (non-finite loss / diverged dynamics), 2 invalid
//! config or input data, 3 I/O failure, 4 inconsistent world, 5 checkpoint mismatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use duet::checkpoint::{Checkpoint, CheckpointError, Restored};
use duet::metrics::{
    encoder_rmse, encoder_rmse_gap, encoder_tv, encoder_tv_gap, table_tv, table_tv_gap,
    write_jsonl, MetricRecord,
};
use duet::oracle::{
    best_response_gradient_norm, encoder_optimum, generator_optimum, tabular_best_response_train,
    OracleError, TabularInit,
};
use duet::trainer::{train_rounds, RawSchedule, TrainState, DEFAULT_EVAL_GRID};
use duet::worlds::{World, WorldError};

/// Directory that receives run outputs when a config does not name one.
const OUTPUT_ROOT_ENV: &str = "DUET_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "duet", version, about = "Two-game adversarial training laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a training experiment from a JSON config file
    Train {
        /// config file: {"world": ..., "schedule": {...}, "output-dir": ..., "run-id": ...}
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the closed-form optimum tables and consistency report for a finite world
    Oracle {
        /// world file path or fixture name (demo-discrete, demo-gaussian)
        #[arg(long)]
        world: String,
    },
    /// Score a saved checkpoint against a world's closed-form optimum
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// world file path or fixture name
        #[arg(long)]
        world: String,
        /// seed for the noise draws behind stochastic-encoder evaluation
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the exact best-response dynamics on a finite world
    Tabular {
        /// world file path or fixture name
        #[arg(long)]
        world: String,
        #[arg(long, default_value_t = 5000)]
        steps: u64,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        /// start from uniform tables or from the closed-form optimum (stationarity probe)
        #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
        init: InitArg,
        /// output directory for trajectory.jsonl and tables.json (default: under the
        /// output root)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Uniform,
    AtOptimum,
}

/// Failure with a fixed exit code; messages go to stderr, structured reports to stdout.
struct Failure {
    code: u8,
    message: String,
    /// JSON document to print on stdout before exiting (per-row mass reports, last
    /// trajectory rows)
    report: Option<Value>,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure { code, message: message.into(), report: None }
    }

    fn config(message: impl Into<String>) -> Failure {
        Failure::new(2, message)
    }

    fn io(path: &Path, err: std::io::Error) -> Failure {
        Failure::new(3, format!("{}: {err}", path.display()))
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Train { config } => cmd_train(&config),
        Cmd::Oracle { world } => cmd_oracle(&world),
        Cmd::Eval { checkpoint, world, seed } => cmd_eval(&checkpoint, &world, seed),
        Cmd::Tabular { world, steps, lr, init, out } => cmd_tabular(&world, steps, lr, init, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(report) = &f.report {
                println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

// ---- world resolution ----

fn resolve_world(spec: &str) -> Result<World> {
    match spec {
        "demo-discrete" => Ok(World::demo_discrete()),
        "demo-gaussian" => Ok(World::demo_gaussian()),
        path_str => {
            let path = Path::new(path_str);
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            World::from_json(&text)
                .map_err(|e| Failure::config(format!("world file `{path_str}`: {e}")))
        }
    }
}

fn require_discrete(world: World, cmd: &str) -> Result<duet::worlds::DiscreteWorld> {
    match world {
        World::Discrete(w) => Ok(w),
        World::LinearGaussian(_) => {
            Err(Failure::config(format!("{cmd} requires a finite world")))
        }
    }
}

// ---- train ----

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct RawExperimentConfig {
    /// fixture name, world file path, or inline world object
    world: Value,
    #[serde(default)]
    schedule: RawSchedule,
    output_dir: Option<PathBuf>,
    run_id: Option<String>,
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path).map_err(|e| Failure::io(config_path, e))?;
    let raw: RawExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("config file `{}`: {e}", config_path.display())))?;
    let schedule = raw
        .schedule
        .validated()
        .map_err(|e| Failure::config(format!("config file `{}`: {e}", config_path.display())))?;
    let world = match &raw.world {
        Value::String(s) => resolve_world(s)?,
        inline @ Value::Object(_) => World::from_json(&inline.to_string())
            .map_err(|e| Failure::config(format!("inline world: {e}")))?,
        other => {
            return Err(Failure::config(format!(
                "invalid config field `world`: expected a name, path, or object, got {other}"
            )))
        }
    };

    let output_dir = raw
        .output_dir
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let run_id = raw.run_id.unwrap_or_else(|| "run".into());
    let run_dir = output_dir.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Failure::io(&run_dir, e))?;

    let resolved = json!({
        "world": parse_own_json(&world.to_json()),
        "schedule": serde_json::to_value(&schedule).expect("schedule serializes"),
        "output-dir": output_dir,
        "run-id": run_id,
    });
    write_file(
        &run_dir.join("resolved-config.json"),
        &serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;

    let mut state = TrainState::new(&world, &schedule);
    let run_result = train_rounds(&mut state, &world, &schedule);

    // the metric stream is written even when the run aborts: those rows are the evidence
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&state.history, &mut buf)
        .map_err(|e| Failure::io(&metrics_path, e))?;
    fs::write(&metrics_path, &buf).map_err(|e| Failure::io(&metrics_path, e))?;

    if let Err(e) = run_result {
        return Err(Failure::new(1, format!("training aborted: {e}")));
    }

    write_file(&run_dir.join("checkpoint.json"), &Checkpoint::of_bundle(&state.bundle).to_json())?;
    println!(
        "{}",
        json!({
            "run-id": run_id,
            "rounds": state.round,
            "records": state.history.len(),
        })
    );
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    file.write_all(content.as_bytes()).map_err(|e| Failure::io(path, e))?;
    if !content.ends_with('\n') {
        file.write_all(b"\n").map_err(|e| Failure::io(path, e))?;
    }
    Ok(())
}

/// Re-parse JSON this process produced; infallible by construction.
fn parse_own_json(s: &str) -> Value {
    serde_json::from_str(s).expect("own serialization parses")
}

// ---- oracle ----

fn mass_report(row_masses: &[f64]) -> Value {
    let max_residual =
        row_masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    json!({ "row-masses": row_masses, "max-residual": max_residual })
}

fn cmd_oracle(world_spec: &str) -> Result<()> {
    let world = require_discrete(resolve_world(world_spec)?, "oracle")?;
    let masses = world
        .posterior_row_masses()
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    if let Err(e) = world.check_consistent() {
        return Err(Failure {
            code: 4,
            message: format!("world `{world_spec}`: {e}"),
            report: Some(mass_report(&masses)),
        });
    }
    let encoder = encoder_optimum(&world)
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    let generator = generator_optimum(&world)
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    let mut doc = json!({
        "encoder-optimum": encoder.rows(),
        "generator-optimum": generator.rows(),
    });
    let report = mass_report(&masses);
    doc.as_object_mut()
        .expect("doc is an object")
        .extend(report.as_object().expect("report is an object").clone());
    println!("{}", serde_json::to_string_pretty(&doc).expect("doc serializes"));
    Ok(())
}

// ---- eval ----

fn checkpoint_failure(e: CheckpointError) -> Failure {
    Failure::new(5, e.to_string())
}

fn cmd_eval(checkpoint_path: &Path, world_spec: &str, seed: u64) -> Result<()> {
    let text =
        fs::read_to_string(checkpoint_path).map_err(|e| Failure::io(checkpoint_path, e))?;
    let restored = Checkpoint::from_json(&text)
        .and_then(|c| c.restore())
        .map_err(checkpoint_failure)?;
    let world = resolve_world(world_spec)?;

    let mismatch = |why: String| Failure::new(5, format!("checkpoint mismatch: {why}"));
    let metric_err = |e: duet::metrics::MetricsError| {
        Failure::new(5, format!("checkpoint incompatible with world: {e}"))
    };
    let (tv, rmse, margin) = match (&restored, &world) {
        (Restored::Neural(bundle), World::Discrete(w)) => {
            if bundle.x_dim != w.x_arity() || bundle.z_dim != w.z_arity() {
                return Err(mismatch(format!(
                    "network is {}x{}, world is {}x{}",
                    bundle.x_dim,
                    bundle.z_dim,
                    w.x_arity(),
                    w.z_arity()
                )));
            }
            let tv = encoder_tv(bundle, w, seed).map_err(metric_err)?;
            let gap = encoder_tv_gap(bundle, w, seed).map_err(metric_err)?;
            (Some(tv), None, gap.gap)
        }
        (Restored::Neural(bundle), World::LinearGaussian(w)) => {
            if bundle.x_dim != 1 || bundle.z_dim != 1 {
                return Err(mismatch(format!(
                    "network is {}x{}, world is scalar",
                    bundle.x_dim, bundle.z_dim
                )));
            }
            let r = encoder_rmse(bundle, w, &DEFAULT_EVAL_GRID, seed).map_err(metric_err)?;
            let g = encoder_rmse_gap(bundle, w, &DEFAULT_EVAL_GRID, seed).map_err(metric_err)?;
            (None, Some(r), g)
        }
        (Restored::Tabular { encoder, .. }, World::Discrete(w)) => {
            if encoder.n_rows() != w.x_arity() || encoder.n_cols() != w.z_arity() {
                return Err(mismatch(format!(
                    "encoder table is {}x{}, world is {}x{}",
                    encoder.n_rows(),
                    encoder.n_cols(),
                    w.x_arity(),
                    w.z_arity()
                )));
            }
            let tv = table_tv(encoder, w).map_err(metric_err)?;
            let gap = table_tv_gap(encoder, w).map_err(metric_err)?;
            (Some(tv), None, gap.gap)
        }
        (Restored::Tabular { .. }, World::LinearGaussian(_)) => {
            return Err(mismatch("tabular checkpoint cannot be scored on a continuous world".into()))
        }
    };
    let record = MetricRecord {
        round: 0,
        source_disc: 0.0,
        source_gen: 0.0,
        target_disc: 0.0,
        target_gen: 0.0,
        encoder_tv: tv,
        encoder_rmse: rmse,
        label_shift_margin: margin,
        wall_clock_ms: 0,
        seed,
    };
    println!("{}", serde_json::to_string(&record).expect("record serializes"));
    Ok(())
}

// ---- tabular ----

fn cmd_tabular(
    world_spec: &str,
    steps: u64,
    lr: f64,
    init: InitArg,
    out: Option<PathBuf>,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Failure::config(format!("invalid option `lr`: must be positive, got {lr}")));
    }
    let world = require_discrete(resolve_world(world_spec)?, "tabular")?;
    let init = match init {
        InitArg::Uniform => TabularInit::Uniform,
        InitArg::AtOptimum => TabularInit::AtOptimum,
    };
    let run = match tabular_best_response_train(&world, steps, lr, init) {
        Ok(run) => run,
        Err(OracleError::World(WorldError::Inconsistent { row_masses, .. })) => {
            return Err(Failure {
                code: 4,
                message: format!("world `{world_spec}` is inconsistent"),
                report: Some(mass_report(&row_masses)),
            });
        }
        Err(OracleError::Diverged { step, last }) => {
            return Err(Failure {
                code: 1,
                message: format!("dynamics diverged at step {step}"),
                report: Some(json!({
                    "diverged-at-step": step,
                    "last-finite-row": last.map(|r| serde_json::to_value(*r).expect("row serializes")),
                })),
            });
        }
        Err(e) => return Err(Failure::config(format!("world `{world_spec}`: {e}"))),
    };

    let out_dir = out.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        let stem = Path::new(world_spec)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "world".into());
        root.join(format!("tabular-{stem}"))
    });
    fs::create_dir_all(&out_dir).map_err(|e| Failure::io(&out_dir, e))?;
    let mut lines = String::new();
    for row in &run.trajectory {
        lines.push_str(&serde_json::to_string(row).expect("row serializes"));
        lines.push('\n');
    }
    let traj_path = out_dir.join("trajectory.jsonl");
    fs::write(&traj_path, lines).map_err(|e| Failure::io(&traj_path, e))?;
    write_file(
        &out_dir.join("tables.json"),
        &Checkpoint::of_tables(&run.generator, &run.encoder).to_json(),
    )?;

    let enc_star = encoder_optimum(&world)
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    let gen_star = generator_optimum(&world)
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    let grad_norm = best_response_gradient_norm(&world, &run.generator, &run.encoder)
        .map_err(|e| Failure::config(format!("world `{world_spec}`: {e}")))?;
    println!(
        "{}",
        json!({
            "steps": steps,
            "encoder-max-abs-err": run.encoder.max_abs_diff(&enc_star),
            "generator-max-abs-err": run.generator.max_abs_diff(&gen_star),
            "gradient-norm": grad_norm,
        })
    );
    Ok(())
}
