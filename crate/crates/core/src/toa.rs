//! Time-of-arrival fields: a safety-biased speed function, a first-order
//! fast marching solver on a regular grid, gradient sampling and path
//! extraction.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::linalg::{v3, V3};
use crate::math;
use crate::scene::{Arena, Scene};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToaError {
    #[error("invalid speed parameters: need 0 < r < d_safe and 0 < v_slow < 1")]
    InvalidParams,
    #[error("invalid grid: spacing must be positive and every dimension at least 2")]
    InvalidGrid,
    #[error("goal {0:?} lies outside the grid")]
    GoalOutsideGrid(V3),
    #[error("goal cell is inside an obstacle")]
    GoalBlocked,
    #[error("no finite travel times around {0:?}")]
    NoGuidance(V3),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("path extraction stopped after {} vertices: {reason}", partial.len())]
pub struct PathError {
    pub partial: Vec<V3>,
    pub reason: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SpeedParams {
    pub robot_radius: f64,
    pub d_safe: f64,
    pub v_slow: f64,
    /// Use `(1 - v_slow) / (d_safe - r)` as the ramp slope so that the ramp
    /// meets 1 at `d_safe` for any `d_safe`.
    pub continuous_slope: bool,
}

impl Default for SpeedParams {
    fn default() -> Self {
        SpeedParams {
            robot_radius: 0.2,
            d_safe: 1.0,
            v_slow: 0.2,
            continuous_slope: false,
        }
    }
}

impl SpeedParams {
    pub fn validate(&self) -> Result<(), ToaError> {
        let ok = self.robot_radius > 0.0
            && self.robot_radius < self.d_safe
            && self.v_slow > 0.0
            && self.v_slow < 1.0
            && self.d_safe.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ToaError::InvalidParams)
        }
    }

    pub fn slope(&self) -> f64 {
        let num = if self.continuous_slope {
            1.0 - self.v_slow
        } else {
            self.d_safe - self.v_slow
        };
        num / (self.d_safe - self.robot_radius)
    }
}

/// Wavefront speed at obstacle distance `d`.
pub fn speed_at(params: &SpeedParams, d: f64) -> f64 {
    let r = params.robot_radius;
    if d <= r {
        params.v_slow
    } else if d <= params.d_safe {
        let m = params.slope();
        m * d + (params.v_slow - m * r)
    } else {
        1.0
    }
}

/// Regular grid of cell centres `origin + (i, j, k) h`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub origin: V3,
    pub h: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: V3, h: f64, dims: [usize; 3]) -> Result<Self, ToaError> {
        if !(h > 0.0 && h.is_finite()) || dims.iter().any(|&n| n < 2) || !origin.is_finite() {
            return Err(ToaError::InvalidGrid);
        }
        Ok(GridSpec { origin, h, dims })
    }

    /// Smallest grid with spacing `h` whose cells cover the arena volume,
    /// including the radial margin.
    pub fn covering(arena: &Arena, h: f64) -> Self {
        let half = arena.bound_radius();
        let nxy = (math::floor(2.0 * half / h) as usize + 1).max(2);
        let nz = (math::floor(arena.height / h) as usize + 1).max(2);
        let span = (nxy - 1) as f64 * h;
        GridSpec {
            origin: v3(-0.5 * span, -0.5 * span, 0.0),
            h,
            dims: [nxy, nxy, nz],
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    pub fn center(&self, c: [usize; 3]) -> V3 {
        self.origin + v3(c[0] as f64, c[1] as f64, c[2] as f64).scale(self.h)
    }

    /// Continuous grid coordinates of `p`.
    pub fn local(&self, p: V3) -> V3 {
        (p - self.origin).scale(1.0 / self.h)
    }

    /// Cell whose centre is nearest to `p`, if `p` lies within the grid's
    /// cell volumes.
    pub fn cell_of(&self, p: V3) -> Option<[usize; 3]> {
        let l = self.local(p);
        let mut c = [0usize; 3];
        for a in 0..3 {
            let x = math::round(l.get(a));
            if !(x >= 0.0 && x < self.dims[a] as f64) {
                return None;
            }
            c[a] = x as usize;
        }
        Some(c)
    }

    /// Indices of the up to six face neighbours of a cell, paired with the
    /// axis they lie along.
    fn neighbours(&self, c: [usize; 3], mut f: impl FnMut(usize, usize)) {
        for a in 0..3 {
            if c[a] > 0 {
                let mut n = c;
                n[a] -= 1;
                f(a, self.index(n));
            }
            if c[a] + 1 < self.dims[a] {
                let mut n = c;
                n[a] += 1;
                f(a, self.index(n));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedGrid {
    pub grid: GridSpec,
    /// Per-cell wavefront speed, zero inside obstacles.
    pub speed: Vec<f64>,
}

impl SpeedGrid {
    pub fn uniform(grid: GridSpec, speed: f64) -> Self {
        SpeedGrid {
            grid,
            speed: alloc::vec![speed; grid.len()],
        }
    }
}

/// Speed grid for `scene`. Cells closer than the robot radius to an
/// obstacle, or outside the arena, get speed zero.
pub fn build_speed_grid(
    scene: &Scene,
    grid: GridSpec,
    params: &SpeedParams,
) -> Result<SpeedGrid, ToaError> {
    params.validate()?;
    let mut speed = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let n = scene.nearest_obstacle(grid.center(grid.coords(idx)));
        let f = if n.out_of_bounds || n.distance < params.robot_radius {
            0.0
        } else {
            speed_at(params, n.distance)
        };
        speed.push(f);
    }
    let goal = grid
        .cell_of(scene.goal)
        .ok_or(ToaError::GoalOutsideGrid(scene.goal))?;
    if speed[grid.index(goal)] == 0.0 {
        return Err(ToaError::GoalBlocked);
    }
    Ok(SpeedGrid { grid, speed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToAField {
    pub grid: GridSpec,
    /// Travel time per cell in seconds, `+inf` where unreachable.
    pub times: Vec<f64>,
    pub goal: V3,
}

/// Radius, in cells, of the ball around the goal initialised exactly.
const SEED_RADIUS: usize = 3;

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves `|grad T| F = 1` with `T = 0` at the goal cell.
pub fn solve_fmm(speed: &SpeedGrid, goal: V3) -> Result<ToAField, ToaError> {
    solve(speed, goal, None)
}

/// As [`solve_fmm`], also returning the travel times in the order cells were
/// accepted.
pub fn solve_fmm_audited(speed: &SpeedGrid, goal: V3) -> Result<(ToAField, Vec<f64>), ToaError> {
    let mut order = Vec::new();
    let field = solve(speed, goal, Some(&mut order))?;
    Ok((field, order))
}

fn solve(speed: &SpeedGrid, goal: V3, mut audit: Option<&mut Vec<f64>>) -> Result<ToAField, ToaError> {
    let grid = speed.grid;
    let start = grid.cell_of(goal).ok_or(ToaError::GoalOutsideGrid(goal))?;
    let start = grid.index(start);
    if speed.speed[start] <= 0.0 {
        return Err(ToaError::GoalBlocked);
    }
    let n = grid.len();
    let mut times = alloc::vec![f64::INFINITY; n];
    let mut known = alloc::vec![false; n];
    let mut seeded = alloc::vec![false; n];
    let mut heap = BinaryHeap::new();
    // Free cells near the goal, connected to it inside a small ball, get
    // straight-line travel times: the first-order stencil is least accurate
    // close to a point source.
    let gc = grid.coords(start);
    let centre = grid.center(gc);
    let f0 = speed.speed[start];
    let reach = (SEED_RADIUS * SEED_RADIUS) as f64 * grid.h * grid.h * (1.0 + 1e-9);
    let mut queue = alloc::collections::VecDeque::new();
    seeded[start] = true;
    queue.push_back(start);
    while let Some(idx) = queue.pop_front() {
        let f = speed.speed[idx];
        let d = (grid.center(grid.coords(idx)) - centre).norm();
        let t = 0.5 * d * (1.0 / f0 + 1.0 / f);
        times[idx] = t;
        heap.push(Reverse(Entry(t, idx as u32)));
        grid.neighbours(grid.coords(idx), |_, nb| {
            if !seeded[nb]
                && speed.speed[nb] > 0.0
                && (grid.center(grid.coords(nb)) - centre).norm_sq() <= reach
            {
                seeded[nb] = true;
                queue.push_back(nb);
            }
        });
    }
    while let Some(Reverse(Entry(t, idx))) = heap.pop() {
        let idx = idx as usize;
        if known[idx] || t > times[idx] {
            continue;
        }
        known[idx] = true;
        if let Some(a) = audit.as_deref_mut() {
            a.push(t);
        }
        grid.neighbours(grid.coords(idx), |_, nb| {
            if known[nb] || seeded[nb] || speed.speed[nb] <= 0.0 {
                return;
            }
            let cand = local_update(&grid, &times, &known, nb, speed.speed[nb]);
            if cand < times[nb] {
                times[nb] = cand;
                heap.push(Reverse(Entry(cand, nb as u32)));
            }
        });
    }
    Ok(ToAField { grid, times, goal })
}

/// First-order upwind update from the accepted neighbours of `idx`.
fn local_update(grid: &GridSpec, times: &[f64], known: &[bool], idx: usize, f: f64) -> f64 {
    let mut upwind = [f64::INFINITY; 3];
    grid.neighbours(grid.coords(idx), |axis, nb| {
        if known[nb] && times[nb] < upwind[axis] {
            upwind[axis] = times[nb];
        }
    });
    upwind.sort_by(f64::total_cmp);
    let s = grid.h / f;
    let mut t = upwind[0] + s;
    if t > upwind[1] {
        let (a, b) = (upwind[0], upwind[1]);
        t = 0.5 * (a + b + math::sqrt(2.0 * s * s - (a - b) * (a - b)));
        if t > upwind[2] {
            let sum = a + b + upwind[2];
            let sq = a * a + b * b + upwind[2] * upwind[2];
            let disc = sum * sum - 3.0 * (sq - s * s);
            t = (sum + math::sqrt(disc.max(0.0))) / 3.0;
        }
    }
    t
}

impl ToAField {
    pub fn time_at_cell(&self, c: [usize; 3]) -> f64 {
        self.times[self.grid.index(c)]
    }

    /// Base cell and fractional offsets for trilinear interpolation.
    fn stencil(&self, p: V3) -> Option<([usize; 3], [f64; 3])> {
        let l = self.grid.local(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = l.get(a);
            let hi = (self.grid.dims[a] - 1) as f64;
            if !(x >= -0.5 && x <= hi + 0.5) {
                return None;
            }
            let x = x.clamp(0.0, hi);
            let b = (math::floor(x) as usize).min(self.grid.dims[a] - 2);
            base[a] = b;
            frac[a] = x - b as f64;
        }
        Some((base, frac))
    }

    fn corners(&self, p: V3, mut f: impl FnMut([usize; 3], f64)) -> bool {
        let Some((base, frac)) = self.stencil(p) else {
            return false;
        };
        for corner in 0..8 {
            let mut c = base;
            let mut w = 1.0;
            for (a, cell) in c.iter_mut().enumerate() {
                if corner >> a & 1 == 1 {
                    *cell += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            f(c, w);
        }
        true
    }

    /// Trilinear travel time at `p` over the finite corners, or `None` when
    /// every surrounding cell is unreachable.
    pub fn time_at(&self, p: V3) -> Option<f64> {
        let (mut acc, mut wsum) = (0.0, 0.0);
        self.corners(p, |c, w| {
            let t = self.time_at_cell(c);
            if t.is_finite() && w > 0.0 {
                acc += w * t;
                wsum += w;
            }
        });
        (wsum > 0.0).then(|| acc / wsum)
    }

    /// Finite-difference gradient of `T` at a cell centre. Central where
    /// both neighbours are finite, one-sided otherwise, zero if neither.
    pub fn cell_gradient(&self, c: [usize; 3]) -> V3 {
        let t0 = self.time_at_cell(c);
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let lo = (c[a] > 0).then(|| {
                let mut n = c;
                n[a] -= 1;
                self.time_at_cell(n)
            });
            let hi = (c[a] + 1 < self.grid.dims[a]).then(|| {
                let mut n = c;
                n[a] += 1;
                self.time_at_cell(n)
            });
            let lo = lo.filter(|t| t.is_finite());
            let hi = hi.filter(|t| t.is_finite());
            *ga = match (lo, hi) {
                (Some(l), Some(h)) => (h - l) / (2.0 * self.grid.h),
                (Some(l), None) => (t0 - l) / self.grid.h,
                (None, Some(h)) => (h - t0) / self.grid.h,
                (None, None) => 0.0,
            };
        }
        V3::from_array(g)
    }

    /// Unit descent direction `-grad T / |grad T|` at `p`.
    pub fn sample_gradient(&self, p: V3) -> Result<V3, ToaError> {
        let mut g = V3::ZERO;
        let mut wsum = 0.0;
        self.corners(p, |c, w| {
            if w > 0.0 && self.time_at_cell(c).is_finite() {
                g = g + self.cell_gradient(c).scale(w);
                wsum += w;
            }
        });
        if wsum == 0.0 {
            return Err(ToaError::NoGuidance(p));
        }
        let g = g.scale(1.0 / wsum);
        let n = g.norm();
        if n < 1e-9 {
            Ok((self.goal - p).normalize())
        } else {
            Ok(g.scale(-1.0 / n))
        }
    }

    /// Descent direction, or the straight line to the goal when the field
    /// has no guidance at `p`.
    pub fn direction_or_straight(&self, p: V3) -> V3 {
        self.sample_gradient(p)
            .unwrap_or_else(|_| (self.goal - p).normalize())
    }

    /// Follows the descent direction from `start` in steps of `step` until
    /// within one cell of the goal. Every vertex has strictly smaller
    /// interpolated travel time than its predecessor.
    pub fn extract_path(&self, start: V3, step: f64) -> Result<Vec<V3>, PathError> {
        let h = self.grid.h;
        let mut path = Vec::new();
        if (start - self.goal).norm() <= h {
            return Ok(path);
        }
        let fail = |path: Vec<V3>, reason| Err(PathError { partial: path, reason });
        let Some(mut t) = self.time_at(start) else {
            return fail(path, "start is unreachable");
        };
        let mut p = start;
        path.push(p);
        let extent = self.grid.dims.iter().map(|&n| n as f64 * h).sum::<f64>();
        let cap = (4.0 * extent / step) as usize + 100;
        while (p - self.goal).norm() > h {
            if path.len() > cap {
                return fail(path, "step cap exceeded");
            }
            let dir = match self.sample_gradient(p) {
                Ok(d) => d,
                Err(_) => return fail(path, "no guidance"),
            };
            let mut s = step;
            let mut next = None;
            for _ in 0..8 {
                let q = p + dir.scale(s);
                if let Some(tq) = self.time_at(q) {
                    if tq < t {
                        next = Some((q, tq));
                        break;
                    }
                }
                s *= 0.5;
            }
            let Some((q, tq)) = next else {
                return fail(path, "travel time stopped decreasing");
            };
            p = q;
            t = tq;
            path.push(p);
        }
        Ok(path)
    }
}
