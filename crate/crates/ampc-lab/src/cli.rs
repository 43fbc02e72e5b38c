//! Command-line front end: single episodes, batches, payload sweeps, solver
//! benchmarks, and plot regeneration.
//!
//! Every experiment starts from the shipped `defaults.json`, merged with an
//! optional scenario file and `--set` overrides, so the effective config is
//! always an auditable delta on the defaults.

use crate::ampc::{
    build_and_solve, build_reference, Command, MpcStatus, GRAVITY, NUM_FEET,
};
use crate::linearize::OperatingPoint;
use crate::output::{parse_telemetry_csv, write_batch_outputs, write_episode_outputs};
use crate::regressor::build_h_stack;
use crate::sim::{max_sustained_payload, run_batch, run_episode, EpisodeResult, Mode, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DVector, Matrix3, Vector3};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Paper-scale defaults every experiment is a delta on.
pub const DEFAULTS_JSON: &str = include_str!("../defaults.json");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EPISODE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ampc-lab",
    version,
    about = "Adaptive MPC lab for single-rigid-body legged locomotion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Run one episode per selected mode and write telemetry plus plots.
    Run(RunArgs),
    /// Run one episode per seed and aggregate success statistics.
    Batch(BatchArgs),
    /// Sweep static payload mass and report the largest sustained mass.
    SweepPayload(SweepArgs),
    /// Benchmark the QP solver on the standing problem.
    BenchQp(BenchArgs),
    /// Regenerate plots from an existing telemetry CSV.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ampc,
    Baseline,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Ampc => vec![Mode::Ampc],
            ModeArg::Baseline => vec![Mode::Baseline],
            ModeArg::Both => vec![Mode::Ampc, Mode::Baseline],
        }
    }
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Ampc => "ampc",
        Mode::Baseline => "baseline",
    }
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Scenario JSON file, merged over the shipped defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory for CSVs, SVGs, and the effective config.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override a scenario field by dotted path, e.g. --set mpc.lambda=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Controller mode(s) to run.
    #[arg(long, value_enum, default_value_t = ModeArg::Ampc)]
    pub mode: ModeArg,
    /// Exit with status 3 when any episode fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seed count (e.g. 100) or explicit comma-separated list (e.g. 3,5,8).
    #[arg(long, default_value = "10")]
    pub seeds: String,
    /// Worker threads; capped by the AMPC_LAB_THREADS environment variable.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Smallest payload mass in kg.
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    /// Largest payload mass in kg.
    #[arg(long, default_value_t = 18.0)]
    pub to: f64,
    /// Sweep step in kg.
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of timed solves.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Telemetry CSV produced by a previous run.
    #[arg(long)]
    pub telemetry: PathBuf,
}

/// Recursively merge `patch` into `base`: objects merge key-wise, everything
/// else replaces.
fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `key=value` override. The dotted path must already exist in the
/// config tree; unknown keys are rejected with the list of valid keys.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not of the form key=value"))?;
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            format!("override path '{}' does not address an object", parts[..i].join("."))
        })?;
        if !obj.contains_key(*part) {
            let mut valid: Vec<&str> = obj.keys().map(|s| s.as_str()).collect();
            valid.sort_unstable();
            return Err(format!(
                "unknown override key '{}' at '{}'; valid keys: {}",
                part,
                parts[..i].join("."),
                valid.join(", ")
            ));
        }
        node = obj.get_mut(*part).unwrap();
        if i + 1 == parts.len() {
            *node = value;
            return Ok(());
        }
    }
    Err(format!("empty override path in '{spec}'"))
}

/// Build the effective scenario: defaults, then scenario file, then --set.
pub fn load_scenario(common: &CommonArgs) -> Result<Scenario, String> {
    let mut root: Value =
        serde_json::from_str(DEFAULTS_JSON).map_err(|e| format!("defaults.json: {e}"))?;
    if let Some(path) = &common.scenario {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read scenario {}: {e}", path.display()))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| format!("scenario {}: {e}", path.display()))?;
        merge_json(&mut root, patch);
    }
    for spec in &common.set {
        apply_override(&mut root, spec)?;
    }
    let scenario: Scenario =
        serde_json::from_value(root).map_err(|e| format!("effective config invalid: {e}"))?;
    scenario.validate().map_err(|e| format!("scenario invalid: {e}"))?;
    Ok(scenario)
}

/// Echo the effective config to the output directory as reloadable JSON.
fn write_effective_config(dir: &Path, scenario: &Scenario) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join("effective_config.json");
    let text = serde_json::to_string_pretty(scenario).map_err(|e| e.to_string())?;
    std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(path)
}

fn summary_line(label: &str, r: &EpisodeResult) -> String {
    format!(
        "{label}: success={} mean_speed={:.3} mean_height={:.3} final_mass_error={:.4}{}",
        r.success,
        r.mean_speed,
        r.mean_height,
        r.final_mass_error,
        r.fall_time.map_or(String::new(), |t| format!(" fall_time={t:.3}"))
    )
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    if spec.contains(',') {
        spec.split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed '{s}': {e}")))
            .collect()
    } else {
        let n: u64 = spec.parse().map_err(|e| format!("bad seed count '{spec}': {e}"))?;
        if n == 0 {
            return Err("seed count must be positive".into());
        }
        Ok((0..n).collect())
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32, String> {
    let scenario = load_scenario(&args.common)?;
    write_effective_config(&args.common.out, &scenario)?;
    let mut any_failure = false;
    for mode in args.common.mode.modes() {
        let mut s = scenario.clone();
        s.mode = mode;
        let (rows, result) = run_episode(&s).map_err(|e| format!("episode failed: {e}"))?;
        println!("{}", summary_line(mode_label(mode), &result));
        let prefix = format!("{}_{}", s.name, mode_label(mode));
        write_episode_outputs(&args.common.out, &prefix, &s, &rows)
            .map_err(|e| format!("writing outputs: {e}"))?;
        any_failure |= !result.success;
    }
    Ok(if any_failure && args.common.strict { EXIT_EPISODE } else { EXIT_OK })
}

fn cmd_batch(args: &BatchArgs) -> Result<i32, String> {
    let scenario = load_scenario(&args.common)?;
    write_effective_config(&args.common.out, &scenario)?;
    let seeds = parse_seeds(&args.seeds)?;
    let mut any_failure = false;
    let mut batches = Vec::new();
    for mode in args.common.mode.modes() {
        let mut s = scenario.clone();
        s.mode = mode;
        let batch =
            run_batch(&s, &seeds, args.parallel).map_err(|e| format!("batch failed: {e}"))?;
        println!(
            "{}: episodes={} success_rate={:.3}",
            mode_label(mode),
            batch.per_seed.len(),
            batch.overall_success_rate()
        );
        any_failure |= batch.overall_success_rate() < 1.0;
        batches.push((mode_label(mode), batch));
    }
    let refs: Vec<(&str, &crate::sim::BatchResult)> =
        batches.iter().map(|(l, b)| (*l, b)).collect();
    write_batch_outputs(&args.common.out, &scenario.name, &refs)
        .map_err(|e| format!("writing outputs: {e}"))?;
    Ok(if any_failure && args.common.strict { EXIT_EPISODE } else { EXIT_OK })
}

/// Largest mass sustained before the first failure in the sweep.
pub fn sustained_prefix(results: &[(f64, bool)]) -> Option<f64> {
    let mut best = None;
    for &(mass, ok) in results {
        if !ok {
            break;
        }
        best = Some(mass);
    }
    best
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, String> {
    if !(args.step > 0.0) || args.to < args.from {
        return Err("sweep requires from <= to and step > 0".into());
    }
    let scenario = load_scenario(&args.common)?;
    write_effective_config(&args.common.out, &scenario)?;
    let mut csv = String::from("mode,mass,sustained\n");
    for mode in args.common.mode.modes() {
        let results = max_sustained_payload(&scenario, mode, args.from, args.to, args.step)
            .map_err(|e| format!("sweep failed: {e}"))?;
        for (mass, ok) in &results {
            csv.push_str(&format!("{},{mass},{}\n", mode_label(mode), *ok as u8));
        }
        match sustained_prefix(&results) {
            Some(m) => println!("{}: max_sustained_payload={m} kg", mode_label(mode)),
            None => println!("{}: max_sustained_payload=none", mode_label(mode)),
        }
    }
    let path = args.common.out.join("payload_sweep.csv");
    std::fs::write(&path, csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(EXIT_OK)
}

/// Time repeated cold-start solves of the standing problem and report
/// latency percentiles in milliseconds.
pub fn bench_standing_qp(scenario: &Scenario, reps: usize) -> Result<Vec<(String, f64)>, String> {
    let cfg = &scenario.mpc;
    let params = scenario.robot.params().map_err(|e| e.to_string())?;
    let theta = crate::regressor::theta_from_params(&params).map_err(|e| e.to_string())?;
    let fz = params.mass * GRAVITY / NUM_FEET as f64;
    let mut feet = [Vector3::zeros(); NUM_FEET];
    for (j, f) in feet.iter_mut().enumerate() {
        let hip = scenario.robot.hip_offset(j);
        *f = Vector3::new(hip.x, hip.y, -0.26);
    }
    let op = OperatingPoint::new(
        Matrix3::identity(),
        Vector3::zeros(),
        [Vector3::new(0.0, 0.0, fz); NUM_FEET],
        feet,
        [true; NUM_FEET],
    );
    let h = build_h_stack(&op, cfg.ts, &Vector3::new(0.0, 0.0, GRAVITY))
        .map_err(|e| e.to_string())?;
    let mut x0 = DVector::zeros(13);
    x0[12] = 1.0;
    let refs = build_reference(&Command::stand(0.26), 0.26, cfg.horizon, cfg.ts);

    let mut times_ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let sol = build_and_solve(&x0, &theta, &h, &[true; NUM_FEET], &refs, cfg, None)
            .map_err(|e| e.to_string())?;
        if sol.status != MpcStatus::Optimal {
            return Err(format!("standing solve not optimal: {:?}", sol.status));
        }
        times_ms.push(sol.solve_time.as_secs_f64() * 1e3);
    }
    times_ms.sort_by(|a, b| a.total_cmp(b));
    let pct = |p: f64| times_ms[((p * (times_ms.len() - 1) as f64).round()) as usize];
    let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
    Ok(vec![
        ("p50_ms".into(), pct(0.50)),
        ("p90_ms".into(), pct(0.90)),
        ("p99_ms".into(), pct(0.99)),
        ("max_ms".into(), *times_ms.last().unwrap()),
        ("mean_ms".into(), mean),
    ])
}

fn cmd_bench(args: &BenchArgs) -> Result<i32, String> {
    if args.reps == 0 {
        return Err("reps must be positive".into());
    }
    let scenario = load_scenario(&args.common)?;
    write_effective_config(&args.common.out, &scenario)?;
    let stats = bench_standing_qp(&scenario, args.reps)?;
    let mut csv = String::from("metric,value\n");
    for (name, value) in &stats {
        println!("{name}={value:.4}");
        csv.push_str(&format!("{name},{value}\n"));
    }
    let path = args.common.out.join("bench_qp.csv");
    std::fs::write(&path, csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(EXIT_OK)
}

fn cmd_plot(args: &PlotArgs) -> Result<i32, String> {
    let scenario = load_scenario(&args.common)?;
    let text = std::fs::read_to_string(&args.telemetry)
        .map_err(|e| format!("cannot read {}: {e}", args.telemetry.display()))?;
    let rows = parse_telemetry_csv(&text).map_err(|e| format!("telemetry: {e}"))?;
    let files = write_episode_outputs(&args.common.out, &scenario.name, &scenario, &rows)
        .map_err(|e| format!("writing outputs: {e}"))?;
    println!("wrote {} files to {}", files.len(), args.common.out.display());
    Ok(EXIT_OK)
}

/// Dispatch a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Batch(a) => cmd_batch(a),
        Cmd::SweepPayload(a) => cmd_sweep(a),
        Cmd::BenchQp(a) => cmd_bench(a),
        Cmd::Plot(a) => cmd_plot(a),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}
