//! Episode sampling, differentiable rollouts, per-episode gradients and the
//! optimiser. The batching loop lives in the std crate.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::control::body_rates;
use crate::dynamics::{body_frame, step_point_mass, Action, PointState};
use crate::linalg::{v3, M3, V3};
use crate::losses::{all_terms, total_loss, LossParams, LossTerms, LossWeights, StepContext, TermMask};
use crate::math;
use crate::policy::{Observation, Policy, PolicyConfig, PolicyError, STATE_DIM, TARGET_DIM};
use crate::real::Real;
use crate::scene::{Camera, Scene};
use crate::toa::ToAField;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RandomizationConfig {
    pub gravity_mean: f64,
    pub gravity_std: f64,
    /// Lower clamp on sampled gravity.
    pub gravity_min: f64,
    pub height: [f64; 2],
    pub start_radius: f64,
    pub speed: [f64; 2],
    pub vel_noise_std: f64,
    pub rot_noise_std: f64,
    pub start_retries: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            gravity_mean: 9.81,
            gravity_std: 1.5,
            gravity_min: 1.0,
            height: [0.5, 2.5],
            start_radius: 12.5,
            speed: [1.0, 5.0],
            vel_noise_std: 0.05,
            rot_noise_std: 0.02,
            start_retries: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeConfig {
    /// Index into the scene pool; the ToA field shares the index.
    pub scene_id: usize,
    pub gravity: f64,
    pub start_angle: f64,
    pub start: V3,
    pub target_speed: f64,
    pub vel_noise_std: f64,
    pub rot_noise_std: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("scene pool is empty")]
    EmptyPool,
    #[error("no collision-free start found in scene {0}")]
    NoFreeStart(usize),
    #[error("invalid randomization config: {0}")]
    Invalid(&'static str),
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.gravity_std >= 0.0 && self.vel_noise_std >= 0.0 && self.rot_noise_std >= 0.0) {
            return Err(SampleError::Invalid("standard deviations must be non-negative"));
        }
        if !(self.height[0] <= self.height[1] && self.speed[0] <= self.speed[1] && self.speed[0] >= 0.0) {
            return Err(SampleError::Invalid("ranges must be ordered"));
        }
        if !(self.start_radius >= 0.0) {
            return Err(SampleError::Invalid("start radius must be non-negative"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws one episode from `scenes`. Fails for the drawn scene when no start
/// is collision-free after the configured retries.
pub fn sample_episode(
    rc: &RandomizationConfig,
    scenes: &[Scene],
    robot_radius: f64,
    rng: &mut impl Rng,
) -> Result<EpisodeConfig, SampleError> {
    rc.validate()?;
    if scenes.is_empty() {
        return Err(SampleError::EmptyPool);
    }
    let scene_id = rng.random_range(0..scenes.len());
    let gravity = Normal::new(rc.gravity_mean, rc.gravity_std)
        .map_err(|_| SampleError::Invalid("gravity distribution"))?
        .sample(rng)
        .max(rc.gravity_min);
    let target_speed = uniform(rng, rc.speed);
    let noise_seed = rng.random();
    let scene = &scenes[scene_id];
    for _ in 0..rc.start_retries.max(1) {
        let angle = rng.random_range(0.0..math::TAU);
        let z = uniform(rng, rc.height);
        let start = v3(rc.start_radius * math::cos(angle), rc.start_radius * math::sin(angle), z);
        if !scene.collision(start, robot_radius) {
            return Ok(EpisodeConfig {
                scene_id,
                gravity,
                start_angle: angle,
                start,
                target_speed,
                vel_noise_std: rc.vel_noise_std,
                rot_noise_std: rc.rot_noise_std,
                noise_seed,
            });
        }
    }
    Err(SampleError::NoFreeStart(scene_id))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    /// Empty scene, no clearance or collision terms.
    Warmup,
    Full,
}

pub fn curriculum_phase(iteration: usize, warmup: usize) -> Phase {
    if iteration < warmup {
        Phase::Warmup
    } else {
        Phase::Full
    }
}

/// Where the velocity setpoint direction comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Supervision {
    /// Descent direction of the time-of-arrival field.
    Toa,
    /// Straight line to the goal.
    StraightToGoal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RolloutConfig {
    pub dt: f64,
    pub horizon: usize,
    pub weights: LossWeights,
    pub loss: LossParams,
    pub camera: Camera,
    pub depth_pool: usize,
    /// Moving-average window for the tracked velocity, in steps.
    pub avg_window: usize,
    pub ewma_alpha: f64,
    pub supervision: Supervision,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            dt: 0.1,
            horizon: 150,
            weights: LossWeights::default(),
            loss: LossParams::default(),
            camera: Camera::default(),
            depth_pool: 2,
            avg_window: 20,
            ewma_alpha: 0.9,
            supervision: Supervision::Toa,
        }
    }
}

impl RolloutConfig {
    /// Policy configuration whose depth input matches this camera.
    pub fn fit_policy(&self, mut p: PolicyConfig) -> PolicyConfig {
        p.depth_width = self.camera.width / self.depth_pool;
        p.depth_height = self.camera.height / self.depth_pool;
        p
    }
}

pub struct Environment<'a> {
    pub scene: &'a Scene,
    pub field: Option<&'a ToAField>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("frozen inputs cover {got} steps, rollout needs at least {want}")]
    FrozenMismatch { got: usize, want: usize },
}

/// Inputs that enter the rollout as constants. Recording them lets a
/// finite-difference oracle evaluate exactly the function the tape
/// differentiates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frozen {
    pub depth: Vec<Vec<f64>>,
    pub v_set: Vec<V3>,
    pub obstacle_dir: Vec<V3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutOutput<S> {
    pub loss: S,
    pub terms: LossTerms,
    pub contexts: Vec<StepContext>,
    pub positions: Vec<V3>,
    pub collided: bool,
    /// Steps simulated before termination.
    pub steps: usize,
    pub frozen: Frozen,
}

/// Constant rotation applied to a vector of `S`.
fn rotate<S: Real>(m: &M3, v: V3<S>) -> V3<S> {
    V3::new(v.dot_f(m.row(0)), v.dot_f(m.row(1)), v.dot_f(m.row(2)))
}

fn normal3(rng: &mut ChaCha8Rng, std: f64) -> V3 {
    let mut n = || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    };
    v3(n(), n(), n())
}

/// Initial heading from the start toward the goal.
pub fn start_yaw(start: V3, goal: V3) -> f64 {
    let d = goal - start;
    if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        math::atan2(d.y, d.x)
    }
}

/// Target input: velocity toward the goal capped at the remaining distance,
/// and the goal importance `1 / max(dist, 0.1)`.
pub fn target_input<S: Real>(p: V3<S>, goal: V3, speed: f64) -> (V3<S>, S) {
    let to_goal = V3::cst(goal) - p;
    let dist = to_goal.norm();
    let v = if dist.val() > 0.0 {
        to_goal.scale(dist.min_c(speed) / dist)
    } else {
        V3::zero()
    };
    (v, S::cst(1.0) / dist.max_c(0.1))
}

/// Builds the network state input from velocity and attitude, both rotated
/// into the start frame `r0`.
pub fn state_input<S: Real>(r0: &M3, v: V3<S>, r: &M3<S>) -> [S; STATE_DIM] {
    let r0t = r0.transpose();
    let vs = rotate(&r0t, v);
    let rs = r.transpose().mul_f(r0).transpose();
    let flat = rs.flatten_rows();
    core::array::from_fn(|i| if i < 3 { vs.to_array()[i] } else { flat[i - 3] })
}

pub fn rollout<S: Real>(
    policy: &Policy,
    params: &[S],
    env: &Environment<'_>,
    ep: &EpisodeConfig,
    phase: Phase,
    cfg: &RolloutConfig,
    frozen: Option<&Frozen>,
) -> Result<RolloutOutput<S>, RolloutError> {
    if cfg.horizon == 0 {
        return Err(RolloutError::ZeroHorizon);
    }
    policy.check_len(params.len())?;
    let scene = env.scene;
    let goal = scene.goal;
    let g = ep.gravity;
    let r = cfg.loss.robot_radius;
    let yaw0 = start_yaw(ep.start, goal);
    let r0 = M3::rot_z(yaw0);
    let mut state = PointState::<S>::cst(&PointState {
        p: ep.start,
        v: V3::ZERO,
        a: V3::ZERO,
        yaw: yaw0,
    });
    let mut frame: M3<S> = M3::cst(r0);
    let mut h = policy.initial_hidden::<S>();
    let mut rng = ChaCha8Rng::seed_from_u64(ep.noise_seed);
    let mut window: VecDeque<V3<S>> = VecDeque::with_capacity(cfg.avg_window);
    let mut ewma = V3::<S>::zero();
    let mut contexts: Vec<StepContext<S>> = Vec::with_capacity(cfg.horizon);
    let mut positions = Vec::with_capacity(cfg.horizon + 1);
    let mut record = Frozen::default();
    let mut collided = false;
    positions.push(ep.start);
    for k in 0..cfg.horizon {
        if let Some(f) = frozen {
            let got = f.v_set.len().min(f.depth.len()).min(f.obstacle_dir.len());
            if got <= k {
                return Err(RolloutError::FrozenMismatch { got, want: k + 1 });
            }
        }
        let p = state.p.val();
        let depth = match frozen {
            Some(f) => f.depth[k].clone(),
            None => scene
                .render_depth(p, &frame.val(), &cfg.camera)
                .min_pool(cfg.depth_pool)
                .inverted(cfg.camera.d_min),
        };
        let nv = normal3(&mut rng, ep.vel_noise_std);
        let nr = normal3(&mut rng, ep.rot_noise_std);
        let noisy_frame = frame.mul_f(&M3::exp_so3(nr));
        let (v_des, importance) = target_input(state.p, goal, ep.target_speed);
        let v_des = rotate(&r0.transpose(), v_des);
        let obs = Observation {
            depth: depth.clone(),
            state: state_input(&r0, state.v.add_f(nv), &noisy_frame),
            target: core::array::from_fn::<S, TARGET_DIM, _>(|i| {
                if i < 3 {
                    v_des.to_array()[i]
                } else {
                    importance
                }
            }),
        };
        record.depth.push(depth);
        let (u, h1) = policy.act(params, &obs, &h)?;
        let action = Action {
            thrust: rotate(&r0, u.thrust),
            yaw: u.yaw + yaw0,
        };
        let next = step_point_mass(&state, &action, cfg.dt, g);
        let new_frame = body_frame(action.thrust, next.yaw).unwrap_or(frame);
        let omega = body_rates(&frame, &new_frame, cfg.dt).unwrap_or_else(|_| V3::zero());

        let pn = next.p.val();
        let near = scene.nearest_obstacle(pn);
        let d = S::custom(&next.p.to_array(), near.distance, &near.gradient.to_array());
        let dir = frozen.map_or(near.direction, |f| f.obstacle_dir[k]);
        let v_c = next.v.dot_f(dir).max_c(0.0);
        let v_set = match frozen {
            Some(f) => f.v_set[k],
            None => {
                let dir = match (cfg.supervision, env.field) {
                    (Supervision::Toa, Some(field)) => field.direction_or_straight(pn),
                    _ => (goal - pn).normalize(),
                };
                dir.scale(ep.target_speed.min((goal - pn).norm()))
            }
        };
        record.v_set.push(v_set);
        record.obstacle_dir.push(dir);
        if window.len() == cfg.avg_window.max(1) {
            window.pop_front();
        }
        window.push_back(next.v);
        let n = window.len() as f64;
        let v_avg = V3::new(
            S::sum(&window.iter().map(|v| v.x).collect::<Vec<_>>()) / n,
            S::sum(&window.iter().map(|v| v.y).collect::<Vec<_>>()) / n,
            S::sum(&window.iter().map(|v| v.z).collect::<Vec<_>>()) / n,
        );
        ewma = ewma.scale_f(cfg.ewma_alpha) + next.v.scale_f(1.0 - cfg.ewma_alpha);
        let ctx = StepContext {
            d,
            v_c,
            v_set: V3::cst(v_set),
            v_avg,
            v_ewma: ewma,
            x_body: new_frame.cols[0],
            omega,
            a: next.a,
            v: next.v,
        };
        contexts.push(ctx);
        positions.push(pn);
        if !pn.is_finite() || scene.collision(pn, r) {
            collided = true;
            while contexts.len() < cfg.horizon {
                contexts.push(ctx);
            }
            break;
        }
        state = next.boundary();
        frame = M3::from_cols(
            new_frame.cols[0].map(S::boundary),
            new_frame.cols[1].map(S::boundary),
            new_frame.cols[2].map(S::boundary),
        );
        h = h1.into_iter().map(S::boundary).collect();
    }
    let steps = positions.len() - 1;
    let terms = all_terms(&contexts, &cfg.weights, &cfg.loss);
    let mask = match phase {
        Phase::Warmup => TermMask::NO_OBSTACLES,
        Phase::Full => TermMask::ALL,
    };
    let loss = total_loss(&cfg.weights, &terms, mask);
    if !loss.val().is_finite() {
        return Err(RolloutError::NonFiniteLoss { step: steps });
    }
    Ok(RolloutOutput {
        loss,
        terms: terms.val(),
        contexts: contexts.iter().map(StepContext::val).collect(),
        positions,
        collided,
        steps,
        frozen: record,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeGradient {
    pub loss: f64,
    pub terms: LossTerms,
    pub grad: Vec<f64>,
    pub collided: bool,
    pub steps: usize,
}

/// Loss and parameter gradient of one episode, with temporal decay `gamma`
/// applied at every step boundary.
pub fn episode_gradient(
    policy: &Policy,
    params: &[f64],
    env: &Environment<'_>,
    ep: &EpisodeConfig,
    phase: Phase,
    cfg: &RolloutConfig,
    gamma: f64,
) -> Result<EpisodeGradient, RolloutError> {
    let tape = Tape::new();
    let vars = tape.leaves(params);
    let out = rollout::<Var>(policy, &vars, env, ep, phase, cfg, None)?;
    let grads = tape.backward(out.loss, Some(gamma));
    Ok(EpisodeGradient {
        loss: out.loss.value(),
        terms: out.terms,
        grad: grads.as_slice()[..params.len()].to_vec(),
        collided: out.collided,
        steps: out.steps,
    })
}

/// Central differences of `f` at `x` along the coordinates in `indices`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], indices: &[usize], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let x0 = xs[i];
            xs[i] = x0 + h;
            let fp = f(&xs);
            xs[i] = x0 - h;
            let fm = f(&xs);
            xs[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| math::abs(a - n) / math::abs(*n).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam {
            config,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.lr * mh / (math::sqrt(vh) + c.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub optimizer: AdamConfig,
    /// Gradient decay per step boundary.
    pub decay: f64,
    /// Global-norm clip applied to the batch gradient; `None` disables.
    pub grad_clip: Option<f64>,
    /// Drives parameter initialisation and every episode draw.
    pub seed: u64,
    pub checkpoint_every: usize,
    pub rollout: RolloutConfig,
    pub policy: PolicyConfig,
    pub randomization: RandomizationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            iterations: 10_000,
            warmup: 500,
            optimizer: AdamConfig::default(),
            decay: 0.9,
            grad_clip: None,
            seed: 0,
            checkpoint_every: 500,
            rollout: RolloutConfig::default(),
            policy: PolicyConfig::default(),
            randomization: RandomizationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.batch_size == 0 {
            return Err("batch size must be positive");
        }
        if self.iterations > 0 && self.warmup >= self.iterations && self.warmup > 0 {
            return Err("warmup must be shorter than the run");
        }
        if self.rollout.horizon == 0 {
            return Err("horizon must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err("decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Arena;

    fn small_policy(cfg: &RolloutConfig) -> Policy {
        Policy::new(cfg.fit_policy(PolicyConfig {
            feature_dim: 6,
            depth_hidden: 4,
            state_hidden: 4,
            target_hidden: 3,
            ..PolicyConfig::default()
        }))
        .unwrap()
    }

    fn small_rollout() -> RolloutConfig {
        RolloutConfig {
            horizon: 12,
            camera: Camera {
                width: 8,
                height: 6,
                ..Camera::default()
            },
            ..RolloutConfig::default()
        }
    }

    fn episode() -> EpisodeConfig {
        EpisodeConfig {
            scene_id: 0,
            gravity: 9.81,
            start_angle: 0.0,
            start: v3(6.0, 0.0, 1.5),
            target_speed: 2.0,
            vel_noise_std: 0.05,
            rot_noise_std: 0.02,
            noise_seed: 7,
        }
    }

    #[test]
    fn degenerate_randomization() {
        let rc = RandomizationConfig {
            gravity_std: 0.0,
            ..RandomizationConfig::default()
        };
        let scenes = [Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5))];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let e = sample_episode(&rc, &scenes, 0.2, &mut rng).unwrap();
            assert_eq!(e.gravity, 9.81);
            assert!((math::hypot(e.start.x, e.start.y) - 12.5).abs() < 1e-12);
            assert!((0.5..=2.5).contains(&e.start.z));
            assert!((1.0..=5.0).contains(&e.target_speed));
        }
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            sample_episode(&rc, &scenes, 0.2, &mut a),
            sample_episode(&rc, &scenes, 0.2, &mut b)
        );
        assert_eq!(sample_episode(&rc, &[], 0.2, &mut a), Err(SampleError::EmptyPool));
    }

    #[test]
    fn curriculum_boundaries() {
        assert_eq!(curriculum_phase(0, 500), Phase::Warmup);
        assert_eq!(curriculum_phase(499, 500), Phase::Warmup);
        assert_eq!(curriculum_phase(500, 500), Phase::Full);
        assert_eq!(curriculum_phase(0, 0), Phase::Full);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let cfg = RolloutConfig {
            horizon: 0,
            ..small_rollout()
        };
        let p = small_policy(&cfg);
        let scene = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
        let env = Environment { scene: &scene, field: None };
        let r = rollout(&p, &p.init_params(0), &env, &episode(), Phase::Full, &cfg, None);
        assert_eq!(r.unwrap_err(), RolloutError::ZeroHorizon);
    }

    #[test]
    fn rollout_is_deterministic_and_matches_on_tape() {
        let cfg = small_rollout();
        let p = small_policy(&cfg);
        let params = p.init_params(1);
        let scene = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
        let env = Environment { scene: &scene, field: None };
        let a = rollout(&p, &params, &env, &episode(), Phase::Warmup, &cfg, None).unwrap();
        let b = rollout(&p, &params, &env, &episode(), Phase::Warmup, &cfg, None).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        let g = episode_gradient(&p, &params, &env, &episode(), Phase::Warmup, &cfg, 0.9).unwrap();
        assert_eq!(g.loss.to_bits(), a.loss.to_bits());
        assert_eq!(g.grad.len(), params.len());
        assert!(g.grad.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn warmup_excludes_obstacle_terms() {
        let cfg = small_rollout();
        let p = small_policy(&cfg);
        let params = p.init_params(2);
        let scene = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
        let env = Environment { scene: &scene, field: None };
        let ep = EpisodeConfig {
            start: v3(6.0, 0.0, 0.5),
            ..episode()
        };
        let w = rollout(&p, &params, &env, &ep, Phase::Warmup, &cfg, None).unwrap();
        let f = rollout(&p, &params, &env, &ep, Phase::Full, &cfg, None).unwrap();
        assert_eq!(w.terms, f.terms);
        assert!(w.terms.clearance > 0.0);
        let wt = &cfg.weights;
        let diff = f.loss - w.loss;
        let expect = wt.clearance * f.terms.clearance + wt.collision * f.terms.collision;
        assert!((diff - expect).abs() < 1e-9);
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let mut params = alloc::vec![0.3, -1.2, 5.0];
        let before = params.clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            3,
        );
        opt.step(&mut params, &[1.0, -2.0, 0.5]);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = alloc::vec![0.0, 0.0];
        let mut opt = Adam::new(AdamConfig::default(), 2);
        opt.step(&mut params, &[4.0, -0.5]);
        assert!((params[0] + 1e-3).abs() < 1e-9);
        assert!((params[1] - 1e-3).abs() < 1e-9);
    }
}
