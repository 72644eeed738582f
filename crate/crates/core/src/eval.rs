//! Closed-loop episodes under rigid-body dynamics with the attitude
//! controller in the loop.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::{attitude_pd, body_rates, desired_rotation, AttitudeGains, AttitudeSetpoint};
use crate::dynamics::{step_rigid_body, RigidParams, RigidState};
use crate::linalg::{v3, M3, V3};
use crate::math;
use crate::policy::{Observation, Policy, PolicyError};
use crate::scene::{Camera, Scene};
use crate::training::{start_yaw, state_input, target_input};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EvalConfig {
    pub policy_dt: f64,
    pub sim_dt: f64,
    pub time_limit: f64,
    pub goal_radius: f64,
    /// End the episode on entering the goal radius.
    pub stop_at_goal: bool,
    pub robot_radius: f64,
    pub camera: Camera,
    pub depth_pool: usize,
    pub gains: AttitudeGains,
    pub plant: RigidParams,
    pub vel_noise_std: f64,
    pub rot_noise_std: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            policy_dt: 0.1,
            sim_dt: 0.01,
            time_limit: 30.0,
            goal_radius: 1.0,
            stop_at_goal: true,
            robot_radius: 0.2,
            camera: Camera::default(),
            depth_pool: 2,
            gains: AttitudeGains::default(),
            plant: RigidParams::default(),
            vel_noise_std: 0.05,
            rot_noise_std: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalEpisode {
    pub start: V3,
    pub gravity: f64,
    pub thrust_scale: f64,
    pub target_speed: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    Success,
    Collision,
    Timeout,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::Collision => "collision",
            Verdict::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub p: V3,
    pub v: V3,
    /// Attitude quaternion `[w, x, y, z]`.
    pub q: [f64; 4],
    pub thrust: V3,
    pub yaw_setpoint: f64,
    /// Distance to the nearest surface minus the robot radius.
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub verdict: Verdict,
    pub path_length: f64,
    pub flight_time: f64,
    pub max_speed: f64,
    pub avg_speed: f64,
    pub min_clearance: f64,
    /// The state became non-finite; reported as a collision.
    pub non_finite: bool,
    pub final_position: V3,
    pub trace: Vec<TraceRow>,
}

pub fn run_episode(
    policy: &Policy,
    params: &[f64],
    scene: &Scene,
    ep: &EvalEpisode,
    cfg: &EvalConfig,
) -> Result<EpisodeOutcome, PolicyError> {
    policy.check_len(params.len())?;
    let goal = scene.goal;
    let yaw0 = start_yaw(ep.start, goal);
    let r0 = M3::rot_z(yaw0);
    let mut state = RigidState::at_rest(ep.start, yaw0, ep.thrust_scale);
    let mut h = policy.initial_hidden::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(ep.noise_seed);
    let mut noise = |std: f64| {
        let mut n = || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        };
        v3(n(), n(), n())
    };
    let substeps = math::round(cfg.policy_dt / cfg.sim_dt).max(1.0) as usize;
    let total = math::round(cfg.time_limit.max(0.0) / cfg.sim_dt) as usize;
    let mut prev_rd = r0;
    let mut trace = Vec::with_capacity(total);
    let mut path_length = 0.0;
    let mut max_speed: f64 = 0.0;
    let mut min_clearance = scene.nearest_obstacle(ep.start).distance - cfg.robot_radius;
    let mut verdict = Verdict::Timeout;
    let mut non_finite = false;
    let mut k = 0;
    'outer: while k < total {
        let depth = scene
            .render_depth(state.p, &state.r, &cfg.camera)
            .min_pool(cfg.depth_pool)
            .inverted(cfg.camera.d_min);
        let nv = noise(cfg.vel_noise_std);
        let nr = noise(cfg.rot_noise_std);
        let (v_des, importance) = target_input(state.p, goal, ep.target_speed);
        let v_des = r0.transpose().mul_vec(v_des);
        let obs = Observation {
            depth,
            state: state_input(&r0, state.v + nv, &state.r.mul(&M3::exp_so3(nr))),
            target: [v_des.x, v_des.y, v_des.z, importance],
        };
        let (u, h1) = match policy.act(params, &obs, &h) {
            Ok(x) => x,
            Err(PolicyError::NonFiniteInput) => {
                non_finite = true;
                verdict = Verdict::Collision;
                break;
            }
            Err(e) => return Err(e),
        };
        h = h1;
        let thrust = r0.mul_vec(u.thrust);
        let yaw = math::wrap_angle(u.yaw + yaw0);
        let r_d = desired_rotation(thrust, yaw).unwrap_or(prev_rd);
        let omega_d = body_rates(&prev_rd, &r_d, cfg.policy_dt).unwrap_or(V3::ZERO);
        let sp = AttitudeSetpoint {
            thrust,
            r_d,
            omega_d,
        };
        prev_rd = r_d;
        for _ in 0..substeps {
            if k >= total {
                break 'outer;
            }
            let cmd = attitude_pd(&state.r, state.omega, &sp, &cfg.gains);
            let collective = thrust.dot(state.r.cols[2]);
            let next = step_rigid_body(&state, collective, cmd, cfg.sim_dt, ep.gravity, &cfg.plant);
            k += 1;
            if !next.is_finite() {
                non_finite = true;
                verdict = Verdict::Collision;
                break 'outer;
            }
            path_length += next.p.dist(state.p);
            state = next;
            let speed = state.v.norm();
            max_speed = max_speed.max(speed);
            let clearance = scene.nearest_obstacle(state.p).distance - cfg.robot_radius;
            min_clearance = min_clearance.min(clearance);
            trace.push(TraceRow {
                t: k as f64 * cfg.sim_dt,
                p: state.p,
                v: state.v,
                q: state.r.to_quaternion(),
                thrust,
                yaw_setpoint: yaw,
                clearance,
            });
            if scene.collision(state.p, cfg.robot_radius) {
                verdict = Verdict::Collision;
                break 'outer;
            }
            if cfg.stop_at_goal && state.p.dist(goal) <= cfg.goal_radius {
                verdict = Verdict::Success;
                break 'outer;
            }
        }
    }
    let flight_time = k as f64 * cfg.sim_dt;
    Ok(EpisodeOutcome {
        verdict,
        path_length,
        flight_time,
        max_speed,
        avg_speed: if flight_time > 0.0 { path_length / flight_time } else { 0.0 },
        min_clearance,
        non_finite,
        final_position: state.p,
        trace,
    })
}
