use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toanav_core::autodiff::smooth_l1;
use toanav_core::linalg::{v3, V3};
use toanav_core::losses::{all_terms, LossParams, LossWeights, StepContext};
use toanav_core::policy::{Observation, Policy, PolicyConfig};
use toanav_core::scene::suite::{build, SuiteKind};
use toanav_core::scene::{Arena, Camera, Scene};
use toanav_core::toa::{build_speed_grid, solve_fmm, GridSpec, SpeedParams};
use toanav_core::training::{
    rollout, sample_episode, EpisodeConfig, Environment, Phase, RandomizationConfig, RolloutConfig, Supervision,
};

fn small_rollout(horizon: usize) -> (RolloutConfig, Policy) {
    let cfg = RolloutConfig {
        horizon,
        camera: Camera {
            width: 8,
            height: 6,
            ..Camera::default()
        },
        ..RolloutConfig::default()
    };
    let pc = cfg.fit_policy(PolicyConfig {
        feature_dim: 8,
        depth_hidden: 6,
        state_hidden: 6,
        target_hidden: 4,
        ..PolicyConfig::default()
    });
    (cfg, Policy::new(pc).unwrap())
}

fn unit_vec() -> impl Strategy<Value = V3> {
    (-3.2..3.2f64, -1.0..1.0f64).prop_map(|(a, z)| {
        let r = (1.0 - z * z).sqrt();
        v3(r * a.cos(), r * a.sin(), z)
    })
}

fn vec3(m: f64) -> impl Strategy<Value = V3> {
    (-m..m, -m..m, -m..m).prop_map(|(x, y, z)| v3(x, y, z))
}

fn context() -> impl Strategy<Value = StepContext> {
    (0.0..5.0f64, 0.0..6.0f64, vec3(5.0), vec3(6.0), vec3(6.0), unit_vec(), vec3(3.0), vec3(20.0), vec3(8.0)).prop_map(
        |(d, v_c, v_set, v_avg, v_ewma, x_body, omega, a, v)| StepContext {
            d,
            v_c,
            v_set,
            v_avg,
            v_ewma,
            x_body,
            omega,
            a,
            v,
        },
    )
}

proptest! {
    #[test]
    fn loss_terms_have_their_ranges(ctx in prop::collection::vec(context(), 1..40)) {
        let t = all_terms(&ctx, &LossWeights::default(), &LossParams::default());
        for (name, value) in ["acc", "jerk", "omega", "v", "vmax", "clearance", "collision"].iter().zip(t.to_array()) {
            prop_assert!(value >= 0.0, "{name} = {value}");
        }
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t.yaw));
    }

    #[test]
    fn at_rest_velocity_term_is_setpoint_penalty(v_sets in prop::collection::vec(vec3(4.0), 1..30)) {
        let ctx: Vec<StepContext> = v_sets
            .iter()
            .map(|&v_set| StepContext {
                d: 3.0,
                v_c: 0.0,
                v_set,
                v_avg: V3::ZERO,
                v_ewma: V3::ZERO,
                x_body: V3::X,
                omega: V3::ZERO,
                a: V3::ZERO,
                v: V3::ZERO,
            })
            .collect();
        let p = LossParams::default();
        let t = all_terms(&ctx, &LossWeights::default(), &p);
        let want = v_sets.iter().map(|v| smooth_l1(v.norm(), p.huber_beta).0).sum::<f64>() / v_sets.len() as f64;
        prop_assert!((t.v - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn hidden_state_stays_in_the_unit_cube(seed in 0..u64::MAX, steps in 1..80usize) {
        let (_, policy) = small_rollout(1);
        let params = policy.init_params(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = policy.initial_hidden::<f64>();
        let n = h.len();
        for _ in 0..steps {
            let obs = Observation {
                depth: (0..policy.config.depth_dim()).map(|_| rand::Rng::random_range(&mut rng, 0.0..10.0)).collect(),
                state: std::array::from_fn(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)),
                target: std::array::from_fn(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)),
            };
            let x = policy.encode(&params, &obs);
            h = policy.gru_step(&params, &h, &x);
            prop_assert!(h.iter().all(|v| v.abs() < 1.0));
            prop_assert!(h.iter().map(|v| v * v).sum::<f64>().sqrt() <= (n as f64).sqrt());
        }
    }
}

#[test]
fn gravity_samples_match_the_configured_normal() {
    let rc = RandomizationConfig::default();
    let scenes = [Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5))];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_episode(&rc, &scenes, 0.2, &mut rng).unwrap().gravity)
        .collect();
    assert!(draws.iter().all(|&g| g >= rc.gravity_min));
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - rc.gravity_mean).abs() <= 3.0 * rc.gravity_std / (n as f64).sqrt(), "{mean}");
    assert!((var.sqrt() - rc.gravity_std).abs() < 0.05, "{}", var.sqrt());
}

#[test]
fn ablation_only_changes_the_setpoint() {
    let (cfg, policy) = small_rollout(60);
    let scenario = build(SuiteKind::WallGap, Arena::default(), 0);
    let scene = &scenario.scene;
    let field = solve_fmm(
        &build_speed_grid(scene, GridSpec::covering(&scene.arena, 0.5), &SpeedParams::default()).unwrap(),
        scene.goal,
    )
    .unwrap();
    let env = Environment {
        scene,
        field: Some(&field),
    };
    let ep = EpisodeConfig {
        scene_id: 0,
        gravity: 9.81,
        start_angle: 0.0,
        start: scenario.start(0.5, 0.5),
        target_speed: 2.0,
        vel_noise_std: 0.05,
        rot_noise_std: 0.02,
        noise_seed: 3,
    };
    let params = policy.init_params(1);
    let run = |supervision| {
        let c = RolloutConfig { supervision, ..cfg };
        rollout(&policy, &params, &env, &ep, Phase::Full, &c, None).unwrap()
    };
    let (toa, straight) = (run(Supervision::Toa), run(Supervision::StraightToGoal));
    assert_eq!(toa.positions, straight.positions);
    assert_eq!(toa.frozen.depth, straight.frozen.depth);
    assert_eq!(toa.frozen.obstacle_dir, straight.frozen.obstacle_dir);
    assert_eq!(toa.contexts.len(), straight.contexts.len());
    let mut differs = 0;
    for (k, (a, b)) in toa.contexts.iter().zip(&straight.contexts).enumerate() {
        assert_eq!(StepContext { v_set: V3::ZERO, ..*a }, StepContext { v_set: V3::ZERO, ..*b });
        let p = straight.positions[(k + 1).min(straight.steps)];
        let want = (scene.goal - p).normalize().scale(ep.target_speed.min((scene.goal - p).norm()));
        assert!((b.v_set - want).max_abs() < 1e-12);
        differs += usize::from((a.v_set - b.v_set).norm() > 1e-3);
    }
    assert!(differs > 0, "the wall should bend the field's setpoints");
}

#[test]
fn repeated_episodes_act_identically() {
    let (cfg, policy) = small_rollout(5);
    let scene = Scene::empty(Arena::default(), v3(0.0, 0.0, 1.5));
    let env = Environment {
        scene: &scene,
        field: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ep = sample_episode(&RandomizationConfig::default(), std::slice::from_ref(&scene), 0.2, &mut rng).unwrap();
    let params = policy.init_params(4);
    let a = rollout(&policy, &params, &env, &ep, Phase::Warmup, &cfg, None).unwrap();
    let b = rollout(&policy, &params, &env, &ep, Phase::Warmup, &cfg, None).unwrap();
    assert_eq!(a.contexts[0], b.contexts[0]);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
}
