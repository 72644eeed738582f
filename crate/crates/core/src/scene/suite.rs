//! Hand-built evaluation scenes that stress turning around large obstacles.

use alloc::string::String;
use alloc::vec::Vec;

use super::{generate_scene, Arena, Primitive, Scene, SceneGenConfig};
use crate::linalg::{v3, V3};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SuiteKind {
    Empty,
    Scattered,
    WallGap,
    LCorner,
    DeadEnd,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 5] = [
        SuiteKind::Empty,
        SuiteKind::Scattered,
        SuiteKind::WallGap,
        SuiteKind::LCorner,
        SuiteKind::DeadEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Empty => "empty",
            SuiteKind::Scattered => "scattered",
            SuiteKind::WallGap => "wall-gap",
            SuiteKind::LCorner => "l-corner",
            SuiteKind::DeadEnd => "dead-end",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A scene together with the heading the episodes start from.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    /// Start bearing from the goal, radians.
    pub start_bearing: f64,
    /// Half-width of the bearing jitter, radians.
    pub bearing_jitter: f64,
    pub start_distance: f64,
    pub height_range: [f64; 2],
}

impl Scenario {
    /// Default start geometry: approach from the -x side of the goal.
    pub fn around(name: &str, scene: Scene) -> Self {
        let start_distance = scene.arena.radius.min(11.0);
        Scenario {
            name: String::from(name),
            scene,
            start_bearing: math::PI,
            bearing_jitter: 0.3,
            start_distance,
            height_range: [1.0, 2.0],
        }
    }

    /// Start position for a unit-interval draw `(u_bearing, u_height)`.
    pub fn start(&self, u_bearing: f64, u_height: f64) -> V3 {
        let b = self.start_bearing + self.bearing_jitter * (2.0 * u_bearing - 1.0);
        let z = self.height_range[0] + (self.height_range[1] - self.height_range[0]) * u_height;
        let g = self.scene.goal;
        v3(
            g.x + self.start_distance * math::cos(b),
            g.y + self.start_distance * math::sin(b),
            z,
        )
    }
}

/// Floor-to-ceiling slab between two points in the xy-plane.
pub fn wall(arena: &Arena, from: [f64; 2], to: [f64; 2], thickness: f64) -> Primitive {
    let t = 0.5 * thickness;
    let min = v3(from[0].min(to[0]) - t, from[1].min(to[1]) - t, 0.0);
    let max = v3(from[0].max(to[0]) + t, from[1].max(to[1]) + t, arena.height);
    Primitive::aabb(min, max)
}

pub fn build(kind: SuiteKind, arena: Arena, seed: u64) -> Scenario {
    let goal = v3(0.0, 0.0, 1.5);
    let th = 0.3;
    let primitives = match kind {
        SuiteKind::Empty => Vec::new(),
        SuiteKind::Scattered => {
            let config = SceneGenConfig {
                arena,
                goal,
                ..SceneGenConfig::default()
            };
            generate_scene(&config, seed)
                .map(|s| s.primitives)
                .unwrap_or_default()
        }
        // Wall across the direct line with one opening off to the side.
        SuiteKind::WallGap => alloc::vec![
            wall(&arena, [-4.0, -9.0], [-4.0, 3.2], th),
            wall(&arena, [-4.0, 4.8], [-4.0, 9.0], th),
        ],
        // Goal tucked inside the corner of an L that faces away from the start.
        SuiteKind::LCorner => alloc::vec![
            wall(&arena, [-4.0, -8.0], [-4.0, 2.5], th),
            wall(&arena, [-4.0, 2.5], [4.0, 2.5], th),
        ],
        // Pocket opening toward the start with the goal behind its back wall.
        SuiteKind::DeadEnd => alloc::vec![
            wall(&arena, [-3.0, -3.0], [-3.0, 3.0], th),
            wall(&arena, [-8.0, -3.0], [-3.0, -3.0], th),
            wall(&arena, [-8.0, 3.0], [-3.0, 3.0], th),
        ],
    };
    Scenario::around(
        kind.name(),
        Scene {
            arena,
            goal,
            primitives,
        },
    )
}
