//! Attitude setpoints from thrust and yaw, Euler-rate feedforward and a
//! rotation-error rate controller.

use alloc::vec::Vec;

use crate::dynamics::{body_frame, step_rigid_body, DegenerateFrame, RigidParams, RigidState};
use crate::linalg::{vee_skew_part, M3, V3};
use crate::math;
use crate::real::Real;

/// Pitch angles closer than this to +-pi/2 are treated as gimbal lock.
pub const GIMBAL_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttitudeSetpoint {
    pub thrust: V3,
    pub r_d: M3,
    pub omega_d: V3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AttitudeGains {
    /// Rotation-error gain, 1/s.
    pub k_p: f64,
}

impl Default for AttitudeGains {
    fn default() -> Self {
        AttitudeGains { k_p: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("pitch within {GIMBAL_MARGIN} rad of +-pi/2")]
pub struct GimbalLock;

pub fn desired_rotation(thrust: V3, yaw: f64) -> Result<M3, DegenerateFrame> {
    body_frame(thrust, yaw)
}

/// ZYX Euler angles `[roll, pitch, yaw]` of `r = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_zyx<S: Real>(r: &M3<S>) -> [S; 3] {
    let yaw = r.at(1, 0).atan2(r.at(0, 0));
    let pitch = -r.at(2, 0).asin();
    let roll = r.at(2, 1).atan2(r.at(2, 2));
    [roll, pitch, yaw]
}

/// Body rates taking `r1` to `r2` over `dt`, via finite-differenced Euler
/// angles and the Euler-rate Jacobian at `r1`.
pub fn body_rates<S: Real>(r1: &M3<S>, r2: &M3<S>, dt: f64) -> Result<V3<S>, GimbalLock> {
    let e1 = euler_zyx(r1);
    let e2 = euler_zyx(r2);
    let near_lock = |p: S| math::abs(p.val()) > math::FRAC_PI_2 - GIMBAL_MARGIN;
    if near_lock(e1[1]) || near_lock(e2[1]) {
        return Err(GimbalLock);
    }
    let rate = |i: usize| crate::dynamics::wrap(e2[i] - e1[i]) / dt;
    let (droll, dpitch, dyaw) = (rate(0), rate(1), rate(2));
    let (sr, cr) = (e1[0].sin(), e1[0].cos());
    let (sp, cp) = (e1[1].sin(), e1[1].cos());
    Ok(V3::new(
        droll - sp * dyaw,
        cr * dpitch + sr * cp * dyaw,
        -(sr * dpitch) + cr * cp * dyaw,
    ))
}

/// Commanded body rates: proportional action on the rotation error plus the
/// setpoint rates mapped into the current body frame.
pub fn attitude_pd(r: &M3, _omega: V3, sp: &AttitudeSetpoint, gains: &AttitudeGains) -> V3 {
    let rel = sp.r_d.transpose().mul(r);
    let err = vee_skew_part(&rel);
    let ff = r.transpose().mul(&sp.r_d).mul_vec(sp.omega_d);
    ff - err.scale(gains.k_p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YawStepConfig {
    pub step: f64,
    pub feedforward: bool,
    pub control_dt: f64,
    pub sim_dt: f64,
    pub duration: f64,
    pub gains: AttitudeGains,
    pub plant: RigidParams,
    pub g: f64,
}

impl Default for YawStepConfig {
    fn default() -> Self {
        YawStepConfig {
            step: math::FRAC_PI_2,
            feedforward: true,
            control_dt: 0.02,
            sim_dt: 0.001,
            duration: 1.0,
            gains: AttitudeGains::default(),
            plant: RigidParams::default(),
            g: 9.81,
        }
    }
}

/// Hovering vehicle given a yaw step at `t = 0`; returns `(t, yaw)` samples
/// at every simulation step.
pub fn simulate_yaw_step(cfg: &YawStepConfig) -> Vec<(f64, f64)> {
    let hover = V3::Z.scale(cfg.g);
    let mut state = RigidState::at_rest(V3::ZERO, 0.0, 1.0);
    let mut prev_rd = M3::IDENTITY;
    let substeps = math::round(cfg.control_dt / cfg.sim_dt).max(1.0) as usize;
    let ticks = math::round(cfg.duration / cfg.control_dt) as usize;
    let mut out = Vec::with_capacity(ticks * substeps + 1);
    out.push((0.0, 0.0));
    let mut t = 0.0;
    for _ in 0..ticks {
        let r_d = desired_rotation(hover, cfg.step).unwrap_or(prev_rd);
        let omega_d = if cfg.feedforward {
            body_rates(&prev_rd, &r_d, cfg.control_dt).unwrap_or(V3::ZERO)
        } else {
            V3::ZERO
        };
        let sp = AttitudeSetpoint {
            thrust: hover,
            r_d,
            omega_d,
        };
        for _ in 0..substeps {
            let cmd = attitude_pd(&state.r, state.omega, &sp, &cfg.gains);
            let collective = hover.dot(state.r.cols[2]);
            state = step_rigid_body(&state, collective, cmd, cfg.sim_dt, cfg.g, &cfg.plant);
            t += cfg.sim_dt;
            out.push((t, euler_zyx(&state.r)[2]));
        }
        prev_rd = r_d;
    }
    out
}

/// First time the response reaches `fraction` of `target`.
pub fn rise_time(trace: &[(f64, f64)], target: f64, fraction: f64) -> Option<f64> {
    trace
        .iter()
        .find(|(_, y)| *y / target >= fraction)
        .map(|(t, _)| *t)
}
