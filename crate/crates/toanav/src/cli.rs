//! Command-line front end. Each subcommand writes its artifacts together
//! with a `manifest.json` into one output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use toanav_core::linalg::v3;
use toanav_core::policy::Policy;
use toanav_core::scene::generate::{generate_scene, SceneGenConfig};
use toanav_core::scene::suite::{build, Scenario, SuiteKind};
use toanav_core::scene::{Arena, Scene};
use toanav_core::toa::{build_speed_grid, solve_fmm, GridSpec, SpeedParams, ToAField, ToaError};
use toanav_core::training::{Supervision, TrainConfig};

use crate::evaluate::{evaluate_suite, trial_episode, SuiteRequest};
use crate::formats::{self, Checkpoint, FormatError, RunManifest};
use crate::train::{mix, train, ScenePool, TrainError, TrainOptions};

pub const OUT_ENV: &str = "TOANAV_OUT";

#[derive(Debug, Parser)]
#[command(name = "toanav", version, about = "Time-of-arrival guided navigation: scenes, fields, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenes and their time-of-arrival caches.
    GenScenes(GenScenesArgs),
    /// Query or export a time-of-arrival field.
    Toa(ToaArgs),
    /// Train a policy on a generated scene pool.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the procedural suite or on scene files.
    Eval(EvalArgs),
    /// Fly one episode and write its trajectory.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Obstacles per 100 m² of arena floor.
    #[arg(long, default_value_t = 4.0)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid spacing of the cached fields, m.
    #[arg(long, default_value_t = 0.25)]
    pub grid_h: f64,
    /// Output directory; defaults to `$TOANAV_OUT/scenes`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToaArgs {
    /// Scene file; mutually exclusive with --suite.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    pub scene: Option<PathBuf>,
    /// Built-in suite scene name.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 0.25)]
    pub grid_h: f64,
    /// Query point `x,y,z`.
    #[arg(long, value_parser = parse_point)]
    pub query: Option<[f64; 3]>,
    /// Export the horizontal slice nearest this height.
    #[arg(long)]
    pub slice_z: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by gen-scenes.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Supervise with the straight line to the goal instead of the field.
    #[arg(long)]
    pub ablate_toa: bool,
    /// Stop when the warmup phase ends.
    #[arg(long)]
    pub warmup_only: bool,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated suite scene names.
    #[arg(long, default_value = "empty,scattered,wall-gap,l-corner,dead-end")]
    pub suite: String,
    /// Evaluate on the scene files in this directory instead of the suite.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub thrust_scale: f64,
    #[arg(long, default_value_t = 30.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 2.0)]
    pub target_speed: f64,
    /// Also write one trajectory file per episode.
    #[arg(long)]
    pub traces: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub thrust_scale: f64,
    #[arg(long, default_value_t = 30.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 2.0)]
    pub target_speed: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three comma-separated numbers".into())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged(..) | TrainError::Rollout(_) => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn out_dir(flag: &Option<PathBuf>, command: &str) -> Result<PathBuf, CliError> {
    let dir = match flag {
        Some(d) => d.clone(),
        None => match std::env::var_os(OUT_ENV) {
            Some(root) => PathBuf::from(root).join(command),
            None => return Err(CliError::Usage(format!("--out not given and {OUT_ENV} is not set"))),
        },
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn scene_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("scene_{i:03}.toml"))
}

pub fn toa_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("toa_{i:03}.bin"))
}

fn solve(scene: &Scene, h: f64) -> Result<ToAField, ToaError> {
    let grid = GridSpec::covering(&scene.arena, h);
    solve_fmm(&build_speed_grid(scene, grid, &SpeedParams::default())?, scene.goal)
}

fn suite_scenario(name: &str, seed: u64) -> Result<Scenario, CliError> {
    let kind = SuiteKind::from_name(name).ok_or_else(|| {
        let known: Vec<_> = SuiteKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Usage(format!("unknown suite scene {name:?}; known: {}", known.join(", ")))
    })?;
    Ok(build(kind, Arena::default(), seed))
}

/// Scene files in `dir` in index order, each paired with its cache path.
pub fn list_scenes(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("scene_") && n.ends_with(".toml"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Data(format!("{}: no scene_*.toml files", dir.display())));
    }
    Ok(names
        .into_iter()
        .map(|n| {
            let stem = &n["scene_".len()..n.len() - ".toml".len()];
            (dir.join(&n), dir.join(format!("toa_{stem}.bin")))
        })
        .collect())
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenScenes(a) => cmd_gen_scenes(&a, stdout),
        Command::Toa(a) => cmd_toa(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Eval(a) => cmd_eval(&a, stdout),
        Command::Export(a) => cmd_export(&a, stdout),
    }
}

fn say(stdout: &mut dyn Write, line: impl std::fmt::Display) {
    // A closed stdout is not worth failing a finished command over.
    let _ = writeln!(stdout, "{line}");
}

pub fn cmd_gen_scenes(a: &GenScenesArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(&a.out, "scenes")?;
    let cfg = SceneGenConfig {
        density: a.density,
        ..SceneGenConfig::default()
    };
    let mut outputs = Vec::new();
    let mut failures = 0;
    for i in 0..a.count {
        let scene = match generate_scene(&cfg, mix(a.seed, i as u64)) {
            Ok(s) => s,
            Err(e) => {
                failures += 1;
                log::warn!("scene {i}: {e}");
                say(stdout, format_args!("scene {i}: generation failed: {e}"));
                continue;
            }
        };
        let field = solve(&scene, a.grid_h).map_err(data)?;
        formats::write_scene(&scene_file(&dir, i), &scene)?;
        formats::write_toa(&toa_file(&dir, i), &field)?;
        outputs.push(format!("scene_{i:03}.toml"));
        outputs.push(format!("toa_{i:03}.bin"));
    }
    if a.count > 0 && failures == a.count {
        return Err(CliError::Data("every scene failed to generate".into()));
    }
    let mut m = RunManifest::new(
        "gen-scenes",
        json!({ "count": a.count, "grid_h": a.grid_h, "generator": cfg, "speed": SpeedParams::default() }),
        a.seed,
        &[],
    )
    .map_err(data)?;
    m.outputs = outputs;
    m.write(&dir)?;
    say(stdout, format_args!("wrote {} scenes to {}", a.count - failures, dir.display()));
    Ok(())
}

pub fn cmd_toa(a: &ToaArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (scene, inputs) = match (&a.scene, &a.suite) {
        (Some(p), _) => (formats::read_scene(p)?, vec![p.clone()]),
        (None, Some(name)) => (suite_scenario(name, a.seed)?.scene, Vec::new()),
        (None, None) => return Err(CliError::Usage("--scene or --suite is required".into())),
    };
    let field = solve(&scene, a.grid_h).map_err(data)?;
    if let Some(q) = a.query {
        let p = v3(q[0], q[1], q[2]);
        if scene.collision(p, SpeedParams::default().robot_radius) {
            return Err(CliError::Data(format!(
                "query point ({}, {}, {}) lies inside an obstacle or outside the arena",
                q[0], q[1], q[2]
            )));
        }
        let t = field
            .time_at(p)
            .ok_or_else(|| CliError::Data("query point has no reachable neighbours".into()))?;
        let d = field.sample_gradient(p).map_err(data)?;
        say(stdout, format_args!("T = {t:.6} s"));
        say(stdout, format_args!("direction = ({:.6}, {:.6}, {:.6})", d.x, d.y, d.z));
    }
    if let Some(z) = a.slice_z {
        let dir = out_dir(&a.out, "toa")?;
        let g = field.grid;
        let k = ((z - g.origin.z) / g.h).round();
        if !(k >= 0.0 && (k as usize) < g.dims[2]) {
            return Err(CliError::Data(format!("slice height {z} is outside the grid")));
        }
        let k = k as usize;
        let mut text = String::new();
        for j in 0..g.dims[1] {
            let row: Vec<String> = (0..g.dims[0]).map(|i| field.time_at_cell([i, j, k]).to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        write_file(&dir.join("slice.csv"), text)?;
        let mut m = RunManifest::new(
            "toa",
            json!({ "grid_h": a.grid_h, "slice_z": z, "slice_k": k, "suite": a.suite, "speed": SpeedParams::default() }),
            a.seed,
            &inputs,
        )
        .map_err(data)?;
        m.outputs = vec!["slice.csv".into()];
        m.write(&dir)?;
        say(
            stdout,
            format_args!("slice k={k}: {} rows x {} columns -> {}", g.dims[1], g.dims[0], dir.display()),
        );
    }
    Ok(())
}

pub fn load_pool(dir: &Path) -> Result<(ScenePool, Vec<PathBuf>), CliError> {
    let mut scenes = Vec::new();
    let mut fields = Vec::new();
    let mut inputs = Vec::new();
    for (s, t) in list_scenes(dir)? {
        if !t.exists() {
            return Err(CliError::Data(format!("missing ToA cache {}", t.display())));
        }
        let scene = formats::read_scene(&s)?;
        let field = formats::read_toa(&t)?;
        if field.goal != scene.goal {
            return Err(CliError::Data(format!("{} was solved for a different goal", t.display())));
        }
        scenes.push(scene);
        fields.push(field);
        inputs.push(s);
        inputs.push(t);
    }
    Ok((ScenePool::new(scenes, fields)?, inputs))
}

pub fn read_train_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut tc = match &a.config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(n) = a.iterations {
        tc.iterations = n;
        if tc.warmup >= n {
            log::warn!("warmup {} clamped to {} for a {n}-iteration run", tc.warmup, n.saturating_sub(1));
            tc.warmup = n.saturating_sub(1);
        }
    }
    if a.ablate_toa {
        tc.rollout.supervision = Supervision::StraightToGoal;
    }
    tc.validate().map_err(|e| CliError::Usage(e.into()))?;
    let (pool, mut inputs) = load_pool(&a.scenes)?;
    let dir = out_dir(&a.out, "train")?;
    let resume = match &a.resume {
        Some(p) => {
            inputs.push(p.clone());
            Some(Checkpoint::read(p)?)
        }
        None => None,
    };
    if let Some(p) = &a.config {
        inputs.insert(0, p.clone());
    }
    let opts = TrainOptions {
        out_dir: Some(dir.clone()),
        resume,
        stop_at: a.warmup_only.then_some(tc.warmup),
    };
    let out = train(&tc, &pool, &opts, |r| {
        if r.iteration % 50 == 0 {
            log::info!("iteration {} loss {:.4} |g| {:.3e}", r.iteration, r.loss, r.grad_norm);
        }
    })?;
    let mut m = RunManifest::new(
        "train",
        json!({
            "train": tc,
            "supervision": tc.rollout.supervision,
            "warmup_only": a.warmup_only,
            "scenes": a.scenes,
        }),
        tc.seed,
        &inputs,
    )
    .map_err(data)?;
    let mut outputs = vec!["metrics.jsonl".to_string(), "final.bin".to_string()];
    let mut ckpts: Vec<String> = fs::read_dir(&dir)
        .map_err(data)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("checkpoint_"))
        .collect();
    ckpts.sort();
    outputs.extend(ckpts);
    m.outputs = outputs;
    m.write(&dir)?;
    let last = out.records.last();
    say(
        stdout,
        format_args!(
            "trained {} iterations, final loss {}",
            out.checkpoint.iteration,
            last.map_or(f64::NAN, |r| r.loss)
        ),
    );
    Ok(())
}

struct Loaded {
    checkpoint: Checkpoint,
    policy: Policy,
}

fn load_checkpoint(path: &Path) -> Result<Loaded, CliError> {
    let checkpoint = Checkpoint::read(path)?;
    let policy = Policy::new(checkpoint.config.policy).map_err(data)?;
    Ok(Loaded { checkpoint, policy })
}

fn request(c: &TrainConfig, trials: usize, seed: u64, thrust_scale: f64, time_limit: f64, speed: f64) -> SuiteRequest {
    let mut req = SuiteRequest {
        trials,
        seed,
        thrust_scale,
        target_speed: speed,
        ..SuiteRequest::default()
    };
    req.eval.time_limit = time_limit;
    req.eval.camera = c.rollout.camera;
    req.eval.depth_pool = c.rollout.depth_pool;
    req.eval.robot_radius = c.rollout.loss.robot_radius;
    req
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let l = load_checkpoint(&a.checkpoint)?;
    let mut inputs = vec![a.checkpoint.clone()];
    let scenarios: Vec<Scenario> = match &a.scenes {
        Some(dir) => list_scenes(dir)?
            .into_iter()
            .map(|(s, _)| {
                let name = s.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                inputs.push(s.clone());
                formats::read_scene(&s).map(|scene| Scenario::around(&name, scene))
            })
            .collect::<Result<_, _>>()?,
        None => a
            .suite
            .split(',')
            .map(|n| suite_scenario(n.trim(), a.seed))
            .collect::<Result<_, _>>()?,
    };
    let req = request(&l.checkpoint.config, a.trials, a.seed, a.thrust_scale, a.time_limit, a.target_speed);
    let dir = out_dir(&a.out, "eval")?;
    let result = evaluate_suite(&l.policy, &l.checkpoint.params, &scenarios, &req).map_err(data)?;
    let table = result.table.to_csv();
    write_file(&dir.join("metrics.csv"), &table)?;
    let mut outputs = vec!["metrics.csv".to_string()];
    if a.traces {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces).map_err(data)?;
        for (name, runs) in &result.outcomes {
            for (i, o) in runs.iter().enumerate() {
                if o.trace.is_empty() {
                    continue;
                }
                let file = format!("{name}_{i:03}.csv");
                formats::export_trajectory(&o.trace, &traces.join(&file))?;
                outputs.push(format!("traces/{file}"));
            }
        }
    }
    let mut m = RunManifest::new(
        "eval",
        json!({ "request": req, "scenes": scenarios.iter().map(|s| &s.name).collect::<Vec<_>>() }),
        a.seed,
        &inputs,
    )
    .map_err(data)?;
    m.outputs = outputs;
    m.write(&dir)?;
    say(stdout, table.trim_end());
    Ok(())
}

pub fn cmd_export(a: &ExportArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let l = load_checkpoint(&a.checkpoint)?;
    let mut inputs = vec![a.checkpoint.clone()];
    let scenario = match (&a.scene, &a.suite) {
        (Some(p), _) => {
            inputs.push(p.clone());
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Scenario::around(&name, formats::read_scene(p)?)
        }
        (None, Some(n)) => suite_scenario(n, a.seed)?,
        (None, None) => return Err(CliError::Usage("--scene or --suite is required".into())),
    };
    let req = request(&l.checkpoint.config, a.trial + 1, a.seed, a.thrust_scale, a.time_limit, a.target_speed);
    let ep = trial_episode(&scenario, &req, a.trial);
    let out = toanav_core::eval::run_episode(&l.policy, &l.checkpoint.params, &scenario.scene, &ep, &req.eval)
        .map_err(data)?;
    let dir = out_dir(&a.out, "export")?;
    formats::export_trajectory(&out.trace, &dir.join("trajectory.csv"))?;
    let mut m = RunManifest::new(
        "export",
        json!({ "request": req, "scene": scenario.name, "trial": a.trial }),
        a.seed,
        &inputs,
    )
    .map_err(data)?;
    m.outputs = vec!["trajectory.csv".into()];
    m.write(&dir)?;
    say(
        stdout,
        format_args!(
            "{}: {} after {:.2} s, {} rows",
            scenario.name,
            out.verdict.name(),
            out.flight_time,
            out.trace.len()
        ),
    );
    Ok(())
}
