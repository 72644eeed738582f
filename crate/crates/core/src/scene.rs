//! Primitive obstacle worlds: exact distance queries, collision checks and
//! raycast depth images.

use alloc::vec::Vec;

use crate::linalg::{v3, M3, V3};
use crate::math;

pub mod generate;
pub mod suite;

pub use generate::{generate_scene, GenerateError, SceneGenConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Shape {
    Sphere { radius: f64 },
    /// Vertical cylinder, `height` measured along world z and centred on
    /// the primitive centre.
    Cylinder { radius: f64, height: f64 },
    /// Axis-aligned box given by its half extents.
    Cuboid { half_extents: V3 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Primitive {
    pub center: V3,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub shape: Shape,
}

impl Primitive {
    pub fn sphere(center: V3, radius: f64) -> Self {
        Primitive {
            center,
            shape: Shape::Sphere { radius },
        }
    }

    pub fn cylinder(center: V3, radius: f64, height: f64) -> Self {
        Primitive {
            center,
            shape: Shape::Cylinder { radius, height },
        }
    }

    pub fn cuboid(center: V3, half_extents: V3) -> Self {
        Primitive {
            center,
            shape: Shape::Cuboid { half_extents },
        }
    }

    /// Box spanning `[min, max]`.
    pub fn aabb(min: V3, max: V3) -> Self {
        Self::cuboid((min + max).scale(0.5), (max - min).scale(0.5))
    }

    pub fn is_valid(&self) -> bool {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        self.center.is_finite()
            && match self.shape {
                Shape::Sphere { radius } => pos(radius),
                Shape::Cylinder { radius, height } => pos(radius) && pos(height),
                Shape::Cuboid { half_extents: h } => pos(h.x) && pos(h.y) && pos(h.z),
            }
    }

    /// Signed distance (negative inside) and its gradient, the outward
    /// unit normal of the closest surface point.
    pub fn sdf(&self, p: V3) -> (f64, V3) {
        let q = p - self.center;
        match self.shape {
            Shape::Sphere { radius } => {
                let n = q.norm();
                let g = if n > 0.0 { q.scale(1.0 / n) } else { V3::X };
                (n - radius, g)
            }
            Shape::Cuboid { half_extents: b } => box_sdf(q, b),
            Shape::Cylinder { radius, height } => cylinder_sdf(q, radius, 0.5 * height),
        }
    }

    /// Smallest `t >= 0` with `origin + t dir` on the surface.
    pub fn ray_hit(&self, origin: V3, dir: V3) -> Option<f64> {
        let o = origin - self.center;
        match self.shape {
            Shape::Sphere { radius } => ray_sphere(o, dir, radius),
            Shape::Cuboid { half_extents } => ray_box(o, dir, half_extents),
            Shape::Cylinder { radius, height } => ray_cylinder(o, dir, radius, 0.5 * height),
        }
    }

    /// Conservative bounding radius around the centre.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { radius, height } => math::hypot(radius, 0.5 * height),
            Shape::Cuboid { half_extents } => half_extents.norm(),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn box_sdf(q: V3, b: V3) -> (f64, V3) {
    let d = v3(math::abs(q.x) - b.x, math::abs(q.y) - b.y, math::abs(q.z) - b.z);
    if d.x > 0.0 || d.y > 0.0 || d.z > 0.0 {
        let o = v3(d.x.max(0.0) * sign(q.x), d.y.max(0.0) * sign(q.y), d.z.max(0.0) * sign(q.z));
        let n = o.norm();
        (n, o.scale(1.0 / n))
    } else {
        let mut axis = 0;
        let mut best = d.x;
        if d.y > best {
            axis = 1;
            best = d.y;
        }
        if d.z > best {
            axis = 2;
            best = d.z;
        }
        let g = match axis {
            0 => v3(sign(q.x), 0.0, 0.0),
            1 => v3(0.0, sign(q.y), 0.0),
            _ => v3(0.0, 0.0, sign(q.z)),
        };
        (best, g)
    }
}

fn cylinder_sdf(q: V3, radius: f64, half_h: f64) -> (f64, V3) {
    let rho = math::hypot(q.x, q.y);
    let radial = if rho > 0.0 { v3(q.x / rho, q.y / rho, 0.0) } else { V3::X };
    let dr = rho - radius;
    let dz = math::abs(q.z) - half_h;
    let axial = v3(0.0, 0.0, sign(q.z));
    match (dr > 0.0, dz > 0.0) {
        (true, true) => {
            let n = math::hypot(dr, dz);
            (n, radial.scale(dr / n) + axial.scale(dz / n))
        }
        (true, false) => (dr, radial),
        (false, true) => (dz, axial),
        (false, false) => {
            if dr >= dz {
                (dr, radial)
            } else {
                (dz, axial)
            }
        }
    }
}

fn ray_sphere(o: V3, d: V3, r: f64) -> Option<f64> {
    let b = o.dot(d);
    let c = o.dot(o) - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = math::sqrt(disc);
    let t0 = -b - s;
    let t1 = -b + s;
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        Some(t1)
    } else {
        None
    }
}

fn ray_box(o: V3, d: V3, b: V3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        let (oi, di, bi) = (o.get(i), d.get(i), b.get(i));
        if di == 0.0 {
            if oi < -bi || oi > bi {
                return None;
            }
        } else {
            let t1 = (-bi - oi) / di;
            let t2 = (bi - oi) / di;
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
    }
    if t_near > t_far || t_far < 0.0 {
        None
    } else if t_near >= 0.0 {
        Some(t_near)
    } else {
        Some(t_far)
    }
}

fn ray_cylinder(o: V3, d: V3, r: f64, half_h: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t >= 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 0.0 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = math::sqrt(disc);
            for t in [(-b - s) / a, (-b + s) / a] {
                let z = o.z + t * d.z;
                if (-half_h..=half_h).contains(&z) {
                    consider(t);
                }
            }
        }
    }
    if d.z != 0.0 {
        for zc in [-half_h, half_h] {
            let t = (zc - o.z) / d.z;
            let x = o.x + t * d.x;
            let y = o.y + t * d.y;
            if x * x + y * y <= r * r {
                consider(t);
            }
        }
    }
    best
}

/// Cylindrical flight volume with a floor at `z = 0` and a ceiling at
/// `z = height`. Floor and ceiling are obstacles; the side is an
/// out-of-bounds limit at `radius + radial_margin`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Arena {
    pub radius: f64,
    pub height: f64,
    pub radial_margin: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            radius: 12.5,
            height: 4.0,
            radial_margin: 1.0,
        }
    }
}

impl Arena {
    pub fn bound_radius(&self) -> f64 {
        self.radius + self.radial_margin
    }

    /// Signed distance to the arena boundary, positive inside.
    pub fn clearance(&self, p: V3) -> f64 {
        let radial = self.bound_radius() - math::hypot(p.x, p.y);
        p.z.min(self.height - p.z).min(radial)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub arena: Arena,
    pub goal: V3,
    pub primitives: Vec<Primitive>,
}

/// Which surface a distance query ended on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Primitive(usize),
    Floor,
    Ceiling,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    /// Signed Euclidean distance to the closest surface, negative inside.
    pub distance: f64,
    /// Unit vector from the query point toward the closest surface point.
    pub direction: V3,
    /// Gradient of `distance` with respect to the query point.
    pub gradient: V3,
    pub surface: Surface,
    /// Signed distance to the arena boundary (negative when outside).
    pub bounds_clearance: f64,
    pub out_of_bounds: bool,
}

impl Scene {
    pub fn empty(arena: Arena, goal: V3) -> Self {
        Scene {
            arena,
            goal,
            primitives: Vec::new(),
        }
    }

    pub fn nearest_obstacle(&self, p: V3) -> Nearest {
        let mut best_d = p.z;
        let mut best_g = V3::Z;
        let mut surface = Surface::Floor;
        for (i, prim) in self.primitives.iter().enumerate() {
            let (d, g) = prim.sdf(p);
            if d < best_d || (d == best_d && surface_rank(surface) > i) {
                best_d = d;
                best_g = g;
                surface = Surface::Primitive(i);
            }
        }
        let ceiling = self.arena.height - p.z;
        if ceiling < best_d {
            best_d = ceiling;
            best_g = -V3::Z;
            surface = Surface::Ceiling;
        }
        let direction = if best_d >= 0.0 { -best_g } else { best_g };
        let bounds_clearance = self.arena.clearance(p);
        Nearest {
            distance: best_d,
            direction,
            gradient: best_g,
            surface,
            bounds_clearance,
            out_of_bounds: bounds_clearance < 0.0,
        }
    }

    /// Closing speed toward the nearest obstacle, `max(0, v . dir)`.
    pub fn approach_speed(&self, p: V3, v: V3) -> f64 {
        v.dot(self.nearest_obstacle(p).direction).max(0.0)
    }

    /// True when a sphere of radius `r` at `p` touches an obstacle or `p`
    /// leaves the arena.
    pub fn collision(&self, p: V3, r: f64) -> bool {
        let n = self.nearest_obstacle(p);
        !p.is_finite() || n.distance < r || n.out_of_bounds
    }

    /// Nearest primitive hit along a unit ray. Floor and ceiling are not
    /// rendered.
    pub fn raycast(&self, origin: V3, dir: V3, max_t: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            // Cull primitives that cannot be hit closer than the current best.
            let oc = prim.center - origin;
            let along = oc.dot(dir);
            let br = prim.bounding_radius();
            let limit = best.map_or(max_t, |b| b.0);
            if along + br < 0.0 || along - br > limit {
                continue;
            }
            let perp2 = oc.dot(oc) - along * along;
            if perp2 > br * br {
                continue;
            }
            if let Some(t) = prim.ray_hit(origin, dir) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    pub fn render_depth(&self, position: V3, body: &M3, camera: &Camera) -> DepthImage {
        let forward = body.cols[0];
        let mut values = Vec::with_capacity(camera.width * camera.height);
        for row in 0..camera.height {
            for col in 0..camera.width {
                let dir = body.mul_vec(camera.ray(col, row));
                let depth = match self.raycast(position, dir, camera.d_max * 2.0) {
                    Some((t, _)) => t * dir.dot(forward),
                    None => camera.d_max,
                };
                values.push(depth.clamp(camera.d_min, camera.d_max));
            }
        }
        DepthImage {
            width: camera.width,
            height: camera.height,
            fov_h: camera.fov_h,
            values,
        }
    }
}

fn surface_rank(s: Surface) -> usize {
    match s {
        Surface::Primitive(i) => i,
        // Floor is checked first but loses ties to any primitive.
        Surface::Floor | Surface::Ceiling => usize::MAX,
    }
}

/// Pinhole depth camera looking along the body x-axis, image rows top to
/// bottom (body -z) and columns left to right (body -y).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov_h: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            width: 64,
            height: 48,
            fov_h: math::FRAC_PI_2,
            d_min: 0.1,
            d_max: 20.0,
        }
    }
}

impl Camera {
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / math::tan(0.5 * self.fov_h)
    }

    /// Unit ray through the centre of pixel `(col, row)` in body coordinates.
    pub fn ray(&self, col: usize, row: usize) -> V3 {
        let u = col as f64 + 0.5 - 0.5 * self.width as f64;
        let w = row as f64 + 0.5 - 0.5 * self.height as f64;
        v3(self.focal(), -u, -w).normalize()
    }
}

/// Row-major z-depth image in metres.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub fov_h: f64,
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// `k x k` minimum pooling; trailing rows/columns that do not fill a
    /// window are dropped.
    pub fn min_pool(&self, k: usize) -> DepthImage {
        let (w, h) = (self.width / k, self.height / k);
        let mut values = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let mut m = f64::INFINITY;
                for dr in 0..k {
                    for dc in 0..k {
                        m = m.min(self.at(c * k + dc, r * k + dr));
                    }
                }
                values.push(m);
            }
        }
        DepthImage {
            width: w,
            height: h,
            fov_h: self.fov_h,
            values,
        }
    }

    /// Network input: `1 / max(d, d_min)` of the pooled image.
    pub fn inverted(&self, d_min: f64) -> Vec<f64> {
        self.values.iter().map(|&d| 1.0 / d.max(d_min)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_with(prims: Vec<Primitive>) -> Scene {
        Scene {
            arena: Arena {
                radius: 20.0,
                height: 20.0,
                radial_margin: 0.0,
            },
            goal: v3(0.0, 0.0, 10.0),
            primitives: prims,
        }
    }

    #[test]
    fn sphere_distance_and_direction() {
        let s = scene_with(alloc::vec![Primitive::sphere(v3(0.0, 0.0, 10.0), 1.0)]);
        let n = s.nearest_obstacle(v3(3.0, 0.0, 10.0));
        assert_eq!(n.distance, 2.0);
        assert_eq!(n.direction, v3(-1.0, 0.0, 0.0));
        assert_eq!(n.surface, Surface::Primitive(0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let s = scene_with(alloc::vec![
            Primitive::sphere(v3(2.0, 0.0, 10.0), 1.0),
            Primitive::sphere(v3(-2.0, 0.0, 10.0), 1.0),
        ]);
        let n = s.nearest_obstacle(v3(0.0, 0.0, 10.0));
        assert_eq!(n.surface, Surface::Primitive(0));
        assert_eq!(n.direction, v3(1.0, 0.0, 0.0));
    }

    #[test]
    fn approach_speed_projection() {
        let s = scene_with(alloc::vec![Primitive::sphere(v3(0.0, 0.0, 10.0), 1.0)]);
        let p = v3(3.0, 0.0, 10.0);
        assert_eq!(s.approach_speed(p, v3(-2.0, 0.0, 0.0)), 2.0);
        assert_eq!(s.approach_speed(p, v3(2.0, 0.0, 0.0)), 0.0);
        let a = math::PI / 3.0;
        let v = v3(-2.0 * math::cos(a), 2.0 * math::sin(a), 0.0);
        assert!((s.approach_speed(p, v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collision_cases() {
        let s = scene_with(alloc::vec![Primitive::sphere(v3(0.0, 0.0, 10.0), 1.0)]);
        assert!(!s.collision(v3(8.0, 0.0, 10.0), 0.2));
        assert!(s.collision(v3(1.0, 0.0, 10.0), 0.2));
        assert!(s.collision(v3(0.0, 0.0, 10.0), 0.2));
        assert!(s.collision(v3(30.0, 0.0, 10.0), 0.2));
        assert!(s.collision(v3(5.0, 0.0, 0.1), 0.2));
    }

    #[test]
    fn out_of_bounds_flag() {
        let s = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
        let n = s.nearest_obstacle(v3(20.0, 0.0, 1.0));
        assert!(n.out_of_bounds);
        assert!((n.bounds_clearance + 6.5).abs() < 1e-12);
        assert!(!s.nearest_obstacle(v3(12.5, 0.0, 1.0)).out_of_bounds);
    }

    #[test]
    fn box_and_cylinder_sdf_inside_and_out() {
        let b = Primitive::cuboid(V3::ZERO, v3(1.0, 2.0, 3.0));
        assert_eq!(b.sdf(v3(3.0, 0.0, 0.0)), (2.0, V3::X));
        assert_eq!(b.sdf(v3(0.0, 1.5, 0.0)), (-0.5, V3::Y));
        let (d, _) = b.sdf(v3(2.0, 3.0, 0.0));
        assert!((d - math::sqrt(2.0)).abs() < 1e-15);
        let c = Primitive::cylinder(V3::ZERO, 1.0, 2.0);
        assert_eq!(c.sdf(v3(0.0, 3.0, 0.0)).0, 2.0);
        assert_eq!(c.sdf(v3(0.0, 0.0, 4.0)), (3.0, V3::Z));
        assert_eq!(c.sdf(v3(0.0, 0.0, 0.0)).0, -1.0);
        let (d, g) = c.sdf(v3(4.0, 0.0, 5.0));
        assert!((d - 5.0).abs() < 1e-15);
        assert!((g - v3(0.6, 0.0, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn empty_scene_renders_far_plane() {
        let s = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
        let img = s.render_depth(v3(0.0, 0.0, 1.5), &M3::IDENTITY, &Camera::default());
        assert_eq!(img.values.len(), 64 * 48);
        assert!(img.values.iter().all(|&d| d == 20.0));
    }

    #[test]
    fn fronto_parallel_wall_center_pixel() {
        let wall = Primitive::aabb(v3(5.0, -10.0, -10.0), v3(6.0, 10.0, 10.0));
        let s = scene_with(alloc::vec![wall]);
        let cam = Camera::default();
        let img = s.render_depth(V3::ZERO, &M3::IDENTITY, &cam);
        assert!((img.at(cam.width / 2, cam.height / 2) - 5.0).abs() < 1e-6);
        // z-depth: the whole wall reads 5 m.
        assert!(img.values.iter().all(|&d| (d - 5.0).abs() < 1e-9));
        // Yawed camera sees the wall on its side.
        let yawed = s.render_depth(V3::ZERO, &M3::rot_z(math::PI), &cam);
        assert!(yawed.values.iter().all(|&d| d == cam.d_max));
    }

    #[test]
    fn min_pool_and_invert() {
        let img = DepthImage {
            width: 4,
            height: 2,
            fov_h: 1.0,
            values: alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.5, 7.0, 8.0],
        };
        let p = img.min_pool(2);
        assert_eq!(p.values, alloc::vec![0.5, 3.0]);
        assert_eq!(p.inverted(0.1), alloc::vec![2.0, 1.0 / 3.0]);
    }

    #[test]
    fn cylinder_ray_hits_side_and_cap() {
        let c = Primitive::cylinder(v3(5.0, 0.0, 0.0), 1.0, 2.0);
        assert!((c.ray_hit(V3::ZERO, V3::X).unwrap() - 4.0).abs() < 1e-12);
        let down = c.ray_hit(v3(5.0, 0.0, 5.0), -V3::Z).unwrap();
        assert!((down - 4.0).abs() < 1e-12);
        assert!(c.ray_hit(V3::ZERO, V3::Y).is_none());
    }
}
