//! Seeded random obstacle fields with a reachability check.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arena, Primitive, Scene};
use crate::linalg::{v3, V3};
use crate::math;
use crate::toa::{self, GridSpec, SpeedGrid, SpeedParams};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneGenConfig {
    pub arena: Arena,
    pub goal: V3,
    /// Obstacles per 100 m² of arena floor.
    pub density: f64,
    pub sphere_radius: [f64; 2],
    pub cylinder_radius: [f64; 2],
    pub cylinder_height: [f64; 2],
    pub cuboid_half_extent: [f64; 2],
    /// Minimum distance between the goal and any primitive surface.
    pub goal_clearance: f64,
    pub robot_radius: f64,
    /// Grid spacing of the reachability check.
    pub check_spacing: f64,
    /// Probe heights on the start circle.
    pub probe_heights: [f64; 3],
    pub probes_per_height: usize,
    pub max_rejections: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            arena: Arena::default(),
            goal: v3(0.0, 0.0, 1.5),
            density: 4.0,
            sphere_radius: [0.4, 1.2],
            cylinder_radius: [0.2, 0.8],
            cylinder_height: [1.5, 4.0],
            cuboid_half_extent: [0.2, 1.2],
            goal_clearance: 1.5,
            robot_radius: 0.2,
            check_spacing: 0.5,
            probe_heights: [0.5, 1.5, 2.5],
            probes_per_height: 24,
            max_rejections: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(&'static str),
    #[error("gave up after {0} rejected obstacles")]
    TooManyRejections(usize),
}

impl SceneGenConfig {
    pub fn obstacle_count(&self) -> usize {
        let area = math::PI * self.arena.radius * self.arena.radius;
        math::round(self.density.max(0.0) * area / 100.0) as usize
    }

    fn validate(&self) -> Result<(), GenerateError> {
        let range = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(GenerateError::InvalidConfig("density must be finite and non-negative"));
        }
        if !(range(self.sphere_radius)
            && range(self.cylinder_radius)
            && range(self.cylinder_height)
            && range(self.cuboid_half_extent))
        {
            return Err(GenerateError::InvalidConfig("size ranges must be positive and ordered"));
        }
        if !(self.arena.radius > 1.0 && self.arena.height > 0.0 && self.arena.radial_margin >= 0.0) {
            return Err(GenerateError::InvalidConfig("arena too small"));
        }
        if !(self.check_spacing > 0.0 && self.robot_radius > 0.0) {
            return Err(GenerateError::InvalidConfig("spacing and radius must be positive"));
        }
        let empty = Scene::empty(self.arena, self.goal);
        if empty.collision(self.goal, self.robot_radius.max(self.goal_clearance.min(0.5))) {
            return Err(GenerateError::InvalidConfig("goal too close to the arena boundary"));
        }
        Ok(())
    }

    fn sample_primitive(&self, rng: &mut ChaCha8Rng) -> Primitive {
        let u = |rng: &mut ChaCha8Rng, r: [f64; 2]| rng.random_range(r[0]..=r[1]);
        let reach = self.arena.radius - 1.0;
        let rho = reach * math::sqrt(rng.random::<f64>());
        let phi = rng.random_range(0.0..math::TAU);
        let (x, y) = (rho * math::cos(phi), rho * math::sin(phi));
        match rng.random_range(0..3u8) {
            0 => {
                let z = rng.random_range(0.0..=self.arena.height);
                Primitive::sphere(v3(x, y, z), u(rng, self.sphere_radius))
            }
            1 => {
                let h = u(rng, self.cylinder_height);
                Primitive::cylinder(v3(x, y, 0.5 * h), u(rng, self.cylinder_radius), h)
            }
            _ => {
                let z = rng.random_range(0.0..=self.arena.height);
                let he = v3(
                    u(rng, self.cuboid_half_extent),
                    u(rng, self.cuboid_half_extent),
                    u(rng, self.cuboid_half_extent),
                );
                Primitive::cuboid(v3(x, y, z), he)
            }
        }
    }

    /// Points on the start circle the goal must be reachable from.
    pub fn probes(&self) -> Vec<V3> {
        let mut out = Vec::new();
        for &z in &self.probe_heights {
            for i in 0..self.probes_per_height {
                let a = math::TAU * i as f64 / self.probes_per_height as f64;
                out.push(v3(self.arena.radius * math::cos(a), self.arena.radius * math::sin(a), z));
            }
        }
        out
    }
}

/// True when every collision-free probe reaches the goal on a coarse grid,
/// and at least one probe is collision-free.
pub fn is_connected(scene: &Scene, config: &SceneGenConfig) -> bool {
    let grid = GridSpec::covering(&scene.arena, config.check_spacing);
    let params = SpeedParams {
        robot_radius: config.robot_radius,
        d_safe: config.robot_radius * 2.0,
        ..SpeedParams::default()
    };
    let speed = match toa::build_speed_grid(scene, grid, &params) {
        Ok(s) => SpeedGrid {
            speed: s.speed.iter().map(|&f| if f > 0.0 { 1.0 } else { 0.0 }).collect(),
            grid,
        },
        Err(_) => return false,
    };
    let Ok(field) = toa::solve_fmm(&speed, scene.goal) else {
        return false;
    };
    let mut any_free = false;
    for p in config.probes() {
        if scene.collision(p, config.robot_radius) {
            continue;
        }
        any_free = true;
        match grid.cell_of(p) {
            Some(c) if field.time_at_cell(c).is_finite() => {}
            _ => return false,
        }
    }
    any_free
}

/// Deterministic scene for `seed`. Obstacles are placed one at a time and
/// dropped again if they cut the start circle off from the goal.
pub fn generate_scene(config: &SceneGenConfig, seed: u64) -> Result<Scene, GenerateError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::empty(config.arena, config.goal);
    let target = config.obstacle_count();
    let mut rejections = 0;
    while scene.primitives.len() < target {
        let prim = config.sample_primitive(&mut rng);
        if prim.sdf(config.goal).0 < config.goal_clearance {
            rejections += 1;
            if rejections > config.max_rejections {
                return Err(GenerateError::TooManyRejections(rejections));
            }
            continue;
        }
        scene.primitives.push(prim);
        if !is_connected(&scene, config) {
            scene.primitives.pop();
            rejections += 1;
            if rejections > config.max_rejections {
                return Err(GenerateError::TooManyRejections(rejections));
            }
        }
    }
    Ok(scene)
}
