//! Batched training with per-iteration seeding, parallel rollouts and a
//! fixed-order gradient reduction.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use toanav_core::losses::LossTerms;
use toanav_core::policy::Policy;
use toanav_core::scene::Scene;
use toanav_core::toa::{build_speed_grid, solve_fmm, GridSpec, SpeedParams, ToAField, ToaError};
use toanav_core::training::{
    curriculum_phase, episode_gradient, sample_episode, Adam, EpisodeConfig, Environment, Phase, RolloutError,
    SampleError, TrainConfig,
};

use crate::formats::{Checkpoint, FormatError};

/// Scenes with their solved fields, plus the empty arena used for warmup.
#[derive(Clone, Debug)]
pub struct ScenePool {
    pub scenes: Vec<Scene>,
    pub fields: Vec<ToAField>,
    pub empty: Scene,
    pub empty_field: ToAField,
}

impl ScenePool {
    /// Builds the warmup scene from the first scene's arena and goal, solved
    /// on the first field's grid.
    pub fn new(scenes: Vec<Scene>, fields: Vec<ToAField>) -> Result<Self, TrainError> {
        if scenes.is_empty() || scenes.len() != fields.len() {
            return Err(TrainError::Config("scene pool needs one field per scene and at least one scene".into()));
        }
        let empty = Scene::empty(scenes[0].arena, scenes[0].goal);
        let empty_field = solve_empty(&empty, fields[0].grid)?;
        Ok(ScenePool {
            scenes,
            fields,
            empty,
            empty_field,
        })
    }

    /// Solves every scene on a grid covering its arena.
    pub fn solve(scenes: Vec<Scene>, h: f64, params: &SpeedParams) -> Result<Self, TrainError> {
        let fields = scenes
            .iter()
            .map(|s| solve_fmm(&build_speed_grid(s, GridSpec::covering(&s.arena, h), params)?, s.goal))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(scenes, fields)
    }

    fn phase_scenes(&self, phase: Phase) -> (&[Scene], &[ToAField]) {
        match phase {
            Phase::Warmup => (std::slice::from_ref(&self.empty), std::slice::from_ref(&self.empty_field)),
            Phase::Full => (&self.scenes, &self.fields),
        }
    }
}

fn solve_empty(scene: &Scene, grid: GridSpec) -> Result<ToAField, ToaError> {
    solve_fmm(&build_speed_grid(scene, grid, &SpeedParams::default())?, scene.goal)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("time-of-arrival: {0}")]
    Toa(#[from] ToaError),
    #[error("no collision-free start in any scene at iteration {0}")]
    NoStart(usize),
    #[error("{0} consecutive skipped updates, last at iteration {1}: {2}")]
    Diverged(usize, usize, String),
    #[error("rollout: {0}")]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Halt after this many consecutive non-finite batches.
pub const MAX_CONSECUTIVE_SKIPS: usize = 3;
/// Bound on episode redraws when scenes have no free start.
const MAX_REDRAWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: f64,
    pub terms: Terms,
    pub grad_norm: f64,
    pub collisions: usize,
    pub skipped: bool,
    pub wall_time_s: f64,
}

/// Per-term batch means under their loss names.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Terms {
    pub acc: f64,
    pub jerk: f64,
    pub omega: f64,
    pub v: f64,
    pub vmax: f64,
    pub clearance: f64,
    pub collision: f64,
    pub yaw: f64,
}

impl From<LossTerms> for Terms {
    fn from(t: LossTerms) -> Self {
        Terms {
            acc: t.acc,
            jerk: t.jerk,
            omega: t.omega,
            v: t.v,
            vmax: t.vmax,
            clearance: t.clearance,
            collision: t.collision,
            yaw: t.yaw,
        }
    }
}

/// SplitMix64 finaliser; derives independent seeds from a base seed.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn init_seed(seed: u64) -> u64 {
    mix(seed, u64::MAX)
}

/// Draws the batch for `iteration`; depends only on the seed and iteration.
pub fn sample_batch(tc: &TrainConfig, pool: &ScenePool, iteration: usize) -> Result<Vec<EpisodeConfig>, TrainError> {
    let phase = curriculum_phase(iteration, tc.warmup);
    let (scenes, _) = pool.phase_scenes(phase);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(tc.seed, iteration as u64));
    let mut batch = Vec::with_capacity(tc.batch_size);
    for _ in 0..tc.batch_size {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            match sample_episode(&tc.randomization, scenes, tc.rollout.loss.robot_radius, &mut rng) {
                Ok(e) => {
                    drawn = Some(e);
                    break;
                }
                Err(SampleError::NoFreeStart(id)) => log::warn!("iteration {iteration}: no free start in scene {id}, redrawing"),
                Err(e) => return Err(TrainError::Config(e.to_string())),
            }
        }
        batch.push(drawn.ok_or(TrainError::NoStart(iteration))?);
    }
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub terms: LossTerms,
    /// Sum of the per-episode gradients.
    pub grad: Vec<f64>,
    pub collisions: usize,
}

/// Episode gradients computed in parallel and summed in batch order.
pub fn batch_gradient(
    tc: &TrainConfig,
    policy: &Policy,
    params: &[f64],
    pool: &ScenePool,
    phase: Phase,
    batch: &[EpisodeConfig],
) -> Result<BatchGradient, RolloutError> {
    let (scenes, fields) = pool.phase_scenes(phase);
    let results: Vec<_> = batch
        .par_iter()
        .map(|ep| {
            let env = Environment {
                scene: &scenes[ep.scene_id],
                field: Some(&fields[ep.scene_id]),
            };
            episode_gradient(policy, params, &env, ep, phase, &tc.rollout, tc.decay)
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut terms = [0.0; 8];
    let mut collisions = 0;
    for r in results {
        let r = r?;
        for (g, x) in grad.iter_mut().zip(&r.grad) {
            *g += x;
        }
        loss += r.loss;
        for (t, x) in terms.iter_mut().zip(r.terms.to_array()) {
            *t += x;
        }
        collisions += r.collided as usize;
    }
    let n = batch.len().max(1) as f64;
    Ok(BatchGradient {
        loss: loss / n,
        terms: LossTerms::from_array(terms.map(|t| t / n)),
        grad,
        collisions,
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives metrics, checkpoints and the final checkpoint.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// Stop before this iteration even if the config runs longer.
    pub stop_at: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<IterationRecord>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration:06}.bin")
}

pub fn train(
    tc: &TrainConfig,
    pool: &ScenePool,
    opts: &TrainOptions,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome, TrainError> {
    tc.validate().map_err(|e| TrainError::Config(e.into()))?;
    let policy = Policy::new(tc.policy).map_err(|e| TrainError::Config(e.to_string()))?;
    let want = policy.config.depth_dim();
    let have = (tc.rollout.camera.width / tc.rollout.depth_pool) * (tc.rollout.camera.height / tc.rollout.depth_pool);
    if want != have {
        return Err(TrainError::Config(format!(
            "policy expects {want} depth values, camera and pooling give {have}"
        )));
    }
    let (start, mut params, mut adam) = match &opts.resume {
        Some(c) => {
            if c.params.len() != policy.num_params() {
                return Err(TrainError::Config("checkpoint does not match the policy config".into()));
            }
            let adam = c
                .adam
                .clone()
                .unwrap_or_else(|| Adam::new(tc.optimizer, c.params.len()));
            (c.iteration as usize, c.params.clone(), adam)
        }
        None => {
            let p = policy.init_params(init_seed(tc.seed));
            let n = p.len();
            (0, p, Adam::new(tc.optimizer, n))
        }
    };
    adam.config = tc.optimizer;
    let mut metrics = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io(dir))?;
            let path = dir.join("metrics.jsonl");
            let f = fs::OpenOptions::new()
                .create(true)
                .append(start > 0)
                .write(true)
                .truncate(start == 0)
                .open(&path)
                .map_err(io(&path))?;
            Some((path, std::io::BufWriter::new(f)))
        }
        None => None,
    };
    let end = opts.stop_at.map_or(tc.iterations, |s| s.min(tc.iterations));
    let mut records = Vec::with_capacity(end.saturating_sub(start));
    let mut skips = 0;
    let clock = Instant::now();
    let snapshot = |it: usize, params: &[f64], adam: &Adam| Checkpoint {
        iteration: it as u64,
        config: *tc,
        params: params.to_vec(),
        adam: Some(adam.clone()),
    };
    for it in start..end {
        let phase = curriculum_phase(it, tc.warmup);
        let batch = sample_batch(tc, pool, it)?;
        let result = batch_gradient(tc, &policy, &params, pool, phase, &batch);
        let (record, failure) = match result {
            Ok(mut b) => {
                let norm = b.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let finite = norm.is_finite() && b.loss.is_finite();
                if finite {
                    if let Some(c) = tc.grad_clip {
                        if norm > c {
                            let s = c / norm;
                            b.grad.iter_mut().for_each(|g| *g *= s);
                        }
                    }
                    adam.step(&mut params, &b.grad);
                }
                let rec = IterationRecord {
                    iteration: it,
                    phase,
                    loss: b.loss,
                    terms: b.terms.into(),
                    grad_norm: norm,
                    collisions: b.collisions,
                    skipped: !finite,
                    wall_time_s: clock.elapsed().as_secs_f64(),
                };
                (rec, (!finite).then(|| "non-finite gradient".to_string()))
            }
            Err(e @ RolloutError::NonFiniteLoss { .. }) => {
                let rec = IterationRecord {
                    iteration: it,
                    phase,
                    loss: f64::NAN,
                    terms: LossTerms::splat(f64::NAN).into(),
                    grad_norm: f64::NAN,
                    collisions: 0,
                    skipped: true,
                    wall_time_s: clock.elapsed().as_secs_f64(),
                };
                (rec, Some(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if let Some((path, w)) = metrics.as_mut() {
            // serde_json writes non-finite numbers as null.
            let line = serde_json::to_string(&record).expect("record serialises");
            writeln!(w, "{line}").map_err(io(path))?;
        }
        on_iteration(&record);
        records.push(record);
        match failure {
            Some(msg) => {
                skips += 1;
                log::warn!("iteration {it}: skipped update ({msg})");
                if skips >= MAX_CONSECUTIVE_SKIPS {
                    return Err(TrainError::Diverged(skips, it, msg));
                }
            }
            None => skips = 0,
        }
        let done = it + 1;
        if let Some(dir) = &opts.out_dir {
            if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 && done < end {
                snapshot(done, &params, &adam).write(&dir.join(checkpoint_name(done as u64)))?;
            }
        }
    }
    if let Some((path, w)) = metrics.as_mut() {
        w.flush().map_err(io(path))?;
    }
    let checkpoint = snapshot(end.max(start), &params, &adam);
    if let Some(dir) = &opts.out_dir {
        checkpoint.write(&dir.join(checkpoint_name(checkpoint.iteration)))?;
        checkpoint.write(&dir.join("final.bin"))?;
    }
    Ok(TrainOutcome { checkpoint, records })
}
