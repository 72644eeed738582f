//! Point-mass training dynamics and a rigid-body model for evaluation.

use crate::linalg::{M3, V3};
use crate::math;
use crate::real::Real;

/// Thrust norms at or below this fall back to a level frame.
pub const THRUST_EPS: f64 = 1e-6;
/// Smallest admissible length of the projected heading.
pub const HEADING_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointState<S = f64> {
    pub p: V3<S>,
    pub v: V3<S>,
    pub a: V3<S>,
    pub yaw: S,
}

impl PointState {
    /// At rest at `p` with the acceleration a zero-thrust command would give.
    pub fn at_rest(p: V3, yaw: f64, g: f64) -> Self {
        PointState {
            p,
            v: V3::ZERO,
            a: V3::Z.scale(-g),
            yaw,
        }
    }
}

impl<S: Real> PointState<S> {
    pub fn cst(s: &PointState) -> Self {
        PointState {
            p: V3::cst(s.p),
            v: V3::cst(s.v),
            a: V3::cst(s.a),
            yaw: S::cst(s.yaw),
        }
    }

    pub fn val(&self) -> PointState {
        PointState {
            p: self.p.val(),
            v: self.v.val(),
            a: self.a.val(),
            yaw: self.yaw.val(),
        }
    }

    /// Passes every component through a step boundary.
    pub fn boundary(&self) -> Self {
        let b = |v: V3<S>| v.map(|x| x.boundary());
        PointState {
            p: b(self.p),
            v: b(self.v),
            a: b(self.a),
            yaw: self.yaw.boundary(),
        }
    }
}

/// Mass-normalised thrust vector and yaw setpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action<S = f64> {
    pub thrust: V3<S>,
    pub yaw: S,
}

/// Shifts `a` by a constant multiple of 2 pi into `(-pi, pi]`.
pub fn wrap<S: Real>(a: S) -> S {
    let v = a.val();
    let w = math::wrap_angle(v);
    if w == v {
        a
    } else {
        a + (w - v)
    }
}

/// One velocity Verlet step; `u.thrust` is the thrust at the new step.
pub fn step_point_mass<S: Real>(s: &PointState<S>, u: &Action<S>, dt: f64, g: f64) -> PointState<S> {
    let a1 = u.thrust - V3::cst(V3::Z.scale(g));
    let p1 = s.p + s.v.scale_f(dt) + s.a.scale_f(0.5 * dt * dt);
    let v1 = s.v + (s.a + a1).scale_f(0.5 * dt);
    PointState {
        p: p1,
        v: v1,
        a: a1,
        yaw: wrap(u.yaw),
    }
}

/// Yaw rotation about world z.
pub fn yaw_frame<S: Real>(yaw: S) -> M3<S> {
    let (c, s) = (yaw.cos(), yaw.sin());
    let (o, z) = (S::cst(1.0), S::cst(0.0));
    M3::from_cols(V3::new(c, s, z), V3::new(-s, c, z), V3::new(z, z, o))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("heading is parallel to the thrust axis")]
pub struct DegenerateFrame;

/// Body frame with z along the thrust and x along the yaw heading projected
/// onto the plane normal to the thrust.
pub fn body_frame<S: Real>(t: V3<S>, yaw: S) -> Result<M3<S>, DegenerateFrame> {
    let n = t.norm();
    if n.val() <= THRUST_EPS {
        return Ok(yaw_frame(yaw));
    }
    let z = t.scale(S::cst(1.0) / n);
    let zero = S::cst(0.0);
    let heading = V3::new(yaw.cos(), yaw.sin(), zero);
    let proj = heading - z.scale(heading.dot(z));
    let m = proj.norm();
    if m.val() < HEADING_EPS {
        return Err(DegenerateFrame);
    }
    let x = proj.scale(S::cst(1.0) / m);
    let y = z.cross(x);
    Ok(M3::from_cols(x, y, z))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidState {
    pub p: V3,
    pub v: V3,
    pub r: M3,
    /// Body rates, rad/s.
    pub omega: V3,
    /// Multiplier on commanded collective thrust.
    pub thrust_scale: f64,
}

impl RigidState {
    pub fn at_rest(p: V3, yaw: f64, thrust_scale: f64) -> Self {
        RigidState {
            p,
            v: V3::ZERO,
            r: M3::rot_z(yaw),
            omega: V3::ZERO,
            thrust_scale,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite()
            && self.v.is_finite()
            && self.omega.is_finite()
            && self.r.cols.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RigidParams {
    /// Time constant of the body-rate response, seconds.
    pub tau_att: f64,
}

impl Default for RigidParams {
    fn default() -> Self {
        RigidParams { tau_att: 0.05 }
    }
}

/// Advances the rigid body by `dt` under a collective thrust (m/s²) and a
/// commanded body rate.
pub fn step_rigid_body(
    s: &RigidState,
    collective: f64,
    rate_cmd: V3,
    dt: f64,
    g: f64,
    params: &RigidParams,
) -> RigidState {
    let alpha = 1.0 - math::exp(-dt / params.tau_att);
    let omega = s.omega + (rate_cmd - s.omega).scale(alpha);
    let r = s.r.mul(&M3::exp_so3(omega.scale(dt))).orthonormalize();
    let a = r.cols[2].scale(s.thrust_scale * collective) - V3::Z.scale(g);
    RigidState {
        p: s.p + s.v.scale(dt) + a.scale(0.5 * dt * dt),
        v: s.v + a.scale(dt),
        r,
        omega,
        thrust_scale: s.thrust_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::linalg::v3;

    const G: f64 = 9.81;

    #[test]
    fn hover_is_stationary() {
        let s = PointState {
            p: v3(1.0, 2.0, 3.0),
            v: V3::ZERO,
            a: V3::ZERO,
            yaw: 0.0,
        };
        let u = Action {
            thrust: v3(0.0, 0.0, G),
            yaw: 0.7,
        };
        let n = step_point_mass(&s, &u, 0.1, G);
        assert_eq!(n.p, s.p);
        assert_eq!(n.v, V3::ZERO);
        assert_eq!(n.a, V3::ZERO);
        assert_eq!(n.yaw, 0.7);
    }

    #[test]
    fn free_fall_ten_steps() {
        let mut s = PointState::at_rest(V3::ZERO, 0.0, G);
        let u = Action {
            thrust: V3::ZERO,
            yaw: 0.0,
        };
        for _ in 0..10 {
            s = step_point_mass(&s, &u, 0.1, G);
        }
        assert!((s.p.z + 4.905).abs() < 1e-12);
        assert!((s.v.z + 9.81).abs() < 1e-12);
    }

    #[test]
    fn yaw_is_wrapped() {
        let s = PointState::at_rest(V3::ZERO, 0.0, G);
        let u = Action {
            thrust: V3::ZERO,
            yaw: 3.0 * math::PI / 2.0,
        };
        let n = step_point_mass(&s, &u, 0.1, G);
        assert!((n.yaw + math::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn thrust_gradient_matches_central_differences() {
        let final_z = |tz: f64| {
            let mut s = PointState::at_rest(V3::ZERO, 0.0, G);
            for _ in 0..20 {
                s = step_point_mass(&s, &Action { thrust: v3(0.0, 0.0, tz), yaw: 0.0 }, 0.05, G);
            }
            s.p.z
        };
        let tape = Tape::new();
        let tz = tape.leaf(12.0);
        let mut s = PointState::cst(&PointState::at_rest(V3::ZERO, 0.0, G));
        let zero = crate::autodiff::Var::constant(0.0);
        for _ in 0..20 {
            let u = Action {
                thrust: V3::new(zero, zero, tz),
                yaw: zero,
            };
            s = step_point_mass(&s, &u, 0.05, G);
        }
        assert!((s.p.z.value() - final_z(12.0)).abs() < 1e-15);
        let g = tape.backward(s.p.z, None).wrt(&tz);
        let h = 1e-5;
        let fd = (final_z(12.0 + h) - final_z(12.0 - h)) / (2.0 * h);
        assert!(((g - fd) / fd).abs() < 1e-6, "{g} vs {fd}");
    }

    #[test]
    fn body_frame_cases() {
        let id = body_frame(v3(0.0, 0.0, G), 0.0).unwrap();
        assert!(id.sub_m(&M3::IDENTITY).cols.iter().all(|c| c.max_abs() < 1e-15));
        let q = body_frame(v3(0.0, 0.0, G), math::FRAC_PI_2).unwrap();
        assert!(q.sub_m(&M3::rot_z(math::FRAC_PI_2)).cols.iter().all(|c| c.max_abs() < 1e-15));
        assert_eq!(body_frame(v3(1.0, 0.0, 0.0), 0.0), Err(DegenerateFrame));
        let level = body_frame(V3::ZERO, 0.3).unwrap();
        assert_eq!(level, M3::rot_z(0.3));
    }

    #[test]
    fn rigid_hover_and_underthrust() {
        let p = RigidParams::default();
        let mut s = RigidState::at_rest(v3(0.0, 0.0, 1.0), 0.0, 1.0);
        for _ in 0..1000 {
            s = step_rigid_body(&s, G, V3::ZERO, 0.001, G, &p);
        }
        assert!((s.p.z - 1.0).abs() < 1e-6);
        let mut w = RigidState::at_rest(v3(0.0, 0.0, 1.0), 0.0, 0.87);
        for _ in 0..100 {
            w = step_rigid_body(&w, G, V3::ZERO, 0.01, G, &p);
        }
        assert!(w.v.z < 0.0 && w.p.z < 1.0);
    }

    #[test]
    fn ballistic_parabola() {
        let p = RigidParams::default();
        let mut s = RigidState::at_rest(V3::ZERO, 0.0, 1.0);
        s.v = v3(1.0, -2.0, 5.0);
        let dt = 0.01;
        for _ in 0..100 {
            s = step_rigid_body(&s, 0.0, V3::ZERO, dt, G, &p);
        }
        let t = 1.0;
        let expect = v3(t, -2.0 * t, 5.0 * t - 0.5 * G * t * t);
        assert!((s.p - expect).max_abs() < 1e-9);
    }

    #[test]
    fn rate_lag_reaches_command() {
        let p = RigidParams::default();
        let mut s = RigidState::at_rest(V3::ZERO, 0.0, 1.0);
        let dt = 0.001;
        for _ in 0..50 {
            s = step_rigid_body(&s, G, v3(0.0, 0.0, 1.0), dt, G, &p);
        }
        // One time constant: 1 - 1/e of the command.
        assert!((s.omega.z - (1.0 - math::exp(-1.0))).abs() < 1e-9);
        assert!(s.r.orthonormality_error() < 1e-9);
    }
}
