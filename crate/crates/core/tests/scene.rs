use std::sync::OnceLock;

use proptest::prelude::*;
use toanav_core::linalg::{v3, M3, V3};
use toanav_core::scene::generate::{generate_scene, is_connected, SceneGenConfig};
use toanav_core::scene::suite::{build, SuiteKind};
use toanav_core::scene::{Arena, Camera, Primitive, Scene};

fn generated(seed: u64) -> Scene {
    generate_scene(&SceneGenConfig::default(), seed).unwrap()
}

fn cached(seed: u64) -> &'static Scene {
    static SCENES: OnceLock<Vec<Scene>> = OnceLock::new();
    &SCENES.get_or_init(|| (0..8).map(generated).collect())[seed as usize]
}

fn point() -> impl Strategy<Value = V3> {
    (-12.0..12.0f64, -12.0..12.0f64, 0.1..3.9f64).prop_map(|(x, y, z)| v3(x, y, z))
}

// Sphere tracing on the primitive distances alone: an oracle for the
// analytic ray intersections.
// `None` when a grazing ray exhausts the step budget.
fn sphere_trace(scene: &Scene, origin: V3, dir: V3, max_t: f64) -> Option<Option<f64>> {
    let mut t = 0.0;
    for _ in 0..100_000 {
        if t >= max_t {
            return Some(None);
        }
        let p = origin + dir.scale(t);
        let d = scene.primitives.iter().map(|q| q.sdf(p).0).fold(f64::INFINITY, f64::min);
        if d < 1e-10 {
            return Some(Some(t));
        }
        t += d;
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn nearest_distance_is_one_lipschitz(seed in 0..8u64, p in point(), q in point()) {
        let s = cached(seed);
        let (dp, dq) = (s.nearest_obstacle(p).distance, s.nearest_obstacle(q).distance);
        prop_assert!((dp - dq).abs() <= (p - q).norm() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn depth_never_undercuts_clearance(seed in 0..8u64, p in point(), yaw in -3.2..3.2f64, pitch in -0.3..0.3f64) {
        let s = cached(seed);
        prop_assume!(s.nearest_obstacle(p).distance > 0.0);
        let camera = Camera { width: 16, height: 12, ..Camera::default() };
        let body = M3::from_euler_zyx(0.0, pitch, yaw);
        let img = s.render_depth(p, &body, &camera);
        let d = s.nearest_obstacle(p).distance;
        for row in 0..camera.height {
            for col in 0..camera.width {
                let cos = camera.ray(col, row).x;
                let bound = (d * cos).clamp(camera.d_min, camera.d_max);
                let z = img.at(col, row);
                prop_assert!(z.is_finite() && z >= camera.d_min && z <= camera.d_max);
                prop_assert!(z >= bound - 1e-9, "pixel ({col}, {row}): {z} < {bound}");
            }
        }
    }

    #[test]
    fn raycast_agrees_with_sphere_tracing(seed in 0..8u64, p in point(), yaw in -3.2..3.2f64, elev in -0.4..0.4f64) {
        let s = cached(seed);
        prop_assume!(s.primitives.iter().all(|q| q.sdf(p).0 > 0.05));
        let dir = v3(yaw.cos() * elev.cos(), yaw.sin() * elev.cos(), elev.sin());
        let analytic = s.raycast(p, dir, 40.0).map(|(t, _)| t);
        let traced = sphere_trace(&s, p, dir, 40.0);
        prop_assume!(traced.is_some());
        match (analytic, traced.unwrap()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}"),
            (None, None) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }
}

#[test]
fn surface_samples_have_zero_distance() {
    let prims = [
        Primitive::sphere(v3(1.0, 2.0, 1.5), 0.7),
        Primitive::cylinder(v3(-3.0, 1.0, 0.0), 0.5, 2.5),
        Primitive::cuboid(v3(2.0, -2.0, 1.0), v3(0.4, 0.9, 1.0)),
    ];
    let mut rng = 0x2545_f491_4f6c_dd1du64;
    let mut unit = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let (a, b) = (unit() * std::f64::consts::TAU, unit() * 2.0 - 1.0);
        let on_sphere = v3(1.0, 2.0, 1.5) + v3(a.cos() * (1.0 - b * b).sqrt(), a.sin() * (1.0 - b * b).sqrt(), b).scale(0.7);
        assert!(prims[0].sdf(on_sphere).0.abs() < 1e-12);
        let on_side = v3(-3.0 + 0.5 * a.cos(), 1.0 + 0.5 * a.sin(), 1.25 * (2.0 * unit() - 1.0));
        assert!(prims[1].sdf(on_side).0.abs() < 1e-12);
        let on_face = v3(2.4, -2.0 + 0.9 * (2.0 * unit() - 1.0), 1.0 + (2.0 * unit() - 1.0));
        assert!(prims[2].sdf(on_face).0.abs() < 1e-12);
        let (d, g) = prims[0].sdf(on_sphere + (on_sphere - v3(1.0, 2.0, 1.5)).scale(0.5));
        assert!((d - 0.35).abs() < 1e-12 && (g.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn generation_is_reproducible_and_valid() {
    let cfg = SceneGenConfig::default();
    for seed in 0..5 {
        let (a, b) = (generated(seed), generated(seed));
        assert_eq!(a, b);
        assert!(a.primitives.iter().all(Primitive::is_valid));
        assert!(a.nearest_obstacle(a.goal).distance >= cfg.robot_radius);
        assert_eq!(a.arena.radius, Arena::default().radius);
    }
}

#[test]
fn hundred_seeds_are_connected() {
    let cfg = SceneGenConfig::default();
    for seed in 0..100 {
        let s = generate_scene(&cfg, seed).unwrap();
        assert!(is_connected(&s, &cfg), "seed {seed}");
    }
}

#[test]
fn suite_scenes_are_connected() {
    let cfg = SceneGenConfig::default();
    for kind in SuiteKind::ALL {
        let s = build(kind, Arena::default(), 2);
        assert!(is_connected(&s.scene, &cfg), "{}", s.name);
    }
}
