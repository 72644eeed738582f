//! Per-step loss terms and their weighted sum.

use crate::linalg::V3;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub acc: f64,
    pub jerk: f64,
    pub omega: f64,
    pub v: f64,
    pub vmax: f64,
    pub clearance: f64,
    pub collision: f64,
    pub yaw: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            acc: 0.01,
            jerk: 0.001,
            omega: 0.3,
            v: 4.0,
            vmax: 1.0,
            clearance: 6.0,
            collision: 6.0,
            yaw: 1.0,
            beta1: 2.5,
            beta2: -6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossParams {
    pub dt: f64,
    pub robot_radius: f64,
    pub v_max: f64,
    /// Transition point of the smooth-L1 velocity penalty.
    pub huber_beta: f64,
    /// Below this EWMA speed a step contributes nothing to the yaw loss.
    pub yaw_speed_threshold: f64,
    /// Normalise the EWMA velocity before the alignment product.
    pub normalize_yaw_velocity: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            dt: 0.1,
            robot_radius: 0.2,
            v_max: 5.0,
            huber_beta: 1.0,
            yaw_speed_threshold: 0.1,
            normalize_yaw_velocity: true,
        }
    }
}

/// Quantities one step contributes to the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepContext<S = f64> {
    /// Distance to the nearest obstacle surface.
    pub d: S,
    /// Closing speed toward the nearest obstacle.
    pub v_c: S,
    pub v_set: V3<S>,
    pub v_avg: V3<S>,
    pub v_ewma: V3<S>,
    pub x_body: V3<S>,
    pub omega: V3<S>,
    pub a: V3<S>,
    pub v: V3<S>,
}

impl<S: Real> StepContext<S> {
    pub fn val(&self) -> StepContext {
        StepContext {
            d: self.d.val(),
            v_c: self.v_c.val(),
            v_set: self.v_set.val(),
            v_avg: self.v_avg.val(),
            v_ewma: self.v_ewma.val(),
            x_body: self.x_body.val(),
            omega: self.omega.val(),
            a: self.a.val(),
            v: self.v.val(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossTerms<S = f64> {
    pub acc: S,
    pub jerk: S,
    pub omega: S,
    pub v: S,
    pub vmax: S,
    pub clearance: S,
    pub collision: S,
    pub yaw: S,
}

impl<S: Real> LossTerms<S> {
    pub fn val(&self) -> LossTerms {
        LossTerms {
            acc: self.acc.val(),
            jerk: self.jerk.val(),
            omega: self.omega.val(),
            v: self.v.val(),
            vmax: self.vmax.val(),
            clearance: self.clearance.val(),
            collision: self.collision.val(),
            yaw: self.yaw.val(),
        }
    }
}

impl LossTerms {
    pub const NAMES: [&'static str; 8] =
        ["acc", "jerk", "omega", "v", "vmax", "clearance", "collision", "yaw"];

    pub fn zero() -> Self {
        Self::splat(0.0)
    }

    pub fn splat(x: f64) -> Self {
        LossTerms {
            acc: x,
            jerk: x,
            omega: x,
            v: x,
            vmax: x,
            clearance: x,
            collision: x,
            yaw: x,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.acc,
            self.jerk,
            self.omega,
            self.v,
            self.vmax,
            self.clearance,
            self.collision,
            self.yaw,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        LossTerms {
            acc: a[0],
            jerk: a[1],
            omega: a[2],
            v: a[3],
            vmax: a[4],
            clearance: a[5],
            collision: a[6],
            yaw: a[7],
        }
    }
}

/// Which terms enter the total. Warmup drops the obstacle terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TermMask {
    pub clearance: bool,
    pub collision: bool,
}

impl TermMask {
    pub const ALL: TermMask = TermMask {
        clearance: true,
        collision: true,
    };
    pub const NO_OBSTACLES: TermMask = TermMask {
        clearance: false,
        collision: false,
    };
}

fn mean<S: Real>(xs: impl Iterator<Item = S>, n: usize) -> S {
    let v: alloc::vec::Vec<S> = xs.collect();
    if n == 0 {
        S::cst(0.0)
    } else {
        S::sum(&v) / n as f64
    }
}

pub fn clearance_loss<S: Real>(ctx: &[StepContext<S>], w: &LossWeights, p: &LossParams) -> S {
    mean(
        ctx.iter()
            .map(|c| ((c.d - p.robot_radius) * w.beta2).softplus() * w.beta1),
        ctx.len(),
    )
}

pub fn collision_loss<S: Real>(ctx: &[StepContext<S>], p: &LossParams) -> S {
    mean(
        ctx.iter().map(|c| {
            let gap = (-(c.d - p.robot_radius) + 1.0).max_c(0.0);
            c.v_c * gap * gap
        }),
        ctx.len(),
    )
}

/// `(acc, jerk, omega)` smoothness terms.
pub fn smoothness_losses<S: Real>(ctx: &[StepContext<S>], p: &LossParams) -> (S, S, S) {
    let acc = mean(ctx.iter().map(|c| c.a.norm_sq()), ctx.len());
    let omega = mean(ctx.iter().map(|c| c.omega.norm_sq()), ctx.len());
    let jerk = mean(
        ctx.windows(2)
            .map(|w| (w[1].a - w[0].a).scale_f(1.0 / p.dt).norm_sq()),
        ctx.len().saturating_sub(1),
    );
    (acc, jerk, omega)
}

/// `(v, vmax)` velocity tracking terms.
pub fn target_velocity_losses<S: Real>(ctx: &[StepContext<S>], p: &LossParams) -> (S, S) {
    let v = mean(
        ctx.iter()
            .map(|c| (c.v_set - c.v_avg).norm().smooth_l1(p.huber_beta)),
        ctx.len(),
    );
    let vmax = mean(
        ctx.iter().map(|c| {
            let over = (c.v.norm() - p.v_max).max_c(0.0);
            over * over
        }),
        ctx.len(),
    );
    (v, vmax)
}

pub fn yaw_loss<S: Real>(ctx: &[StepContext<S>], p: &LossParams) -> S {
    let terms = ctx.iter().map(|c| {
        if p.normalize_yaw_velocity {
            let n = c.v_ewma.norm();
            if n.val() > p.yaw_speed_threshold {
                -(c.x_body.dot(c.v_ewma) / n)
            } else {
                S::cst(0.0)
            }
        } else {
            -c.x_body.dot(c.v_ewma)
        }
    });
    mean(terms, ctx.len())
}

pub fn all_terms<S: Real>(ctx: &[StepContext<S>], w: &LossWeights, p: &LossParams) -> LossTerms<S> {
    let (acc, jerk, omega) = smoothness_losses(ctx, p);
    let (v, vmax) = target_velocity_losses(ctx, p);
    LossTerms {
        acc,
        jerk,
        omega,
        v,
        vmax,
        clearance: clearance_loss(ctx, w, p),
        collision: collision_loss(ctx, p),
        yaw: yaw_loss(ctx, p),
    }
}

pub fn total_loss<S: Real>(w: &LossWeights, t: &LossTerms<S>, mask: TermMask) -> S {
    let mut parts = alloc::vec![
        t.acc * w.acc,
        t.jerk * w.jerk,
        t.omega * w.omega,
        t.v * w.v,
        t.vmax * w.vmax,
        t.yaw * w.yaw,
    ];
    if mask.clearance {
        parts.push(t.clearance * w.clearance);
    }
    if mask.collision {
        parts.push(t.collision * w.collision);
    }
    S::sum(&parts)
}
