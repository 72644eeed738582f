//! Suite evaluation and the metrics table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toanav_core::eval::{run_episode, EpisodeOutcome, EvalConfig, EvalEpisode, Verdict};
use toanav_core::policy::{Policy, PolicyError};
use toanav_core::scene::suite::Scenario;

use crate::train::mix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteRequest {
    pub trials: usize,
    pub seed: u64,
    pub thrust_scale: f64,
    pub gravity: f64,
    pub target_speed: f64,
    pub eval: EvalConfig,
}

impl Default for SuiteRequest {
    fn default() -> Self {
        SuiteRequest {
            trials: 50,
            seed: 0,
            thrust_scale: 1.0,
            gravity: 9.81,
            target_speed: 2.0,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: String,
    pub trials: usize,
    pub success: usize,
    pub collision: usize,
    pub timeout: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_path_length_m: f64,
    pub mean_flight_time_s: f64,
    pub min_clearance_m: f64,
}

impl SceneRow {
    pub fn from_outcomes(scene: &str, outcomes: &[EpisodeOutcome]) -> Self {
        let n = outcomes.len();
        let count = |v: Verdict| outcomes.iter().filter(|o| o.verdict == v).count();
        let (s, c, t) = (count(Verdict::Success), count(Verdict::Collision), count(Verdict::Timeout));
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let mean = |f: fn(&EpisodeOutcome) -> f64| {
            if n == 0 {
                0.0
            } else {
                outcomes.iter().map(f).sum::<f64>() / n as f64
            }
        };
        SceneRow {
            scene: scene.into(),
            trials: n,
            success: s,
            collision: c,
            timeout: t,
            success_rate: rate(s),
            collision_rate: rate(c),
            timeout_rate: rate(t),
            mean_path_length_m: mean(|o| o.path_length),
            mean_flight_time_s: mean(|o| o.flight_time),
            min_clearance_m: outcomes.iter().map(|o| o.min_clearance).fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteTable {
    pub rows: Vec<SceneRow>,
    pub aggregate: SceneRow,
}

impl SuiteTable {
    pub fn from_outcomes(named: &[(String, Vec<EpisodeOutcome>)]) -> Self {
        let rows = named.iter().map(|(n, o)| SceneRow::from_outcomes(n, o)).collect();
        let all: Vec<EpisodeOutcome> = named.iter().flat_map(|(_, o)| o.iter().cloned()).collect();
        SuiteTable {
            rows,
            aggregate: SceneRow::from_outcomes("all", &all),
        }
    }

    pub fn row(&self, scene: &str) -> Option<&SceneRow> {
        self.rows.iter().find(|r| r.scene == scene)
    }

    /// Per-scene rows followed by the aggregate row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            w.serialize(r).expect("row serialises");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }
}

/// FNV-1a over the scenario name, so trials depend on the scene and not on
/// its position in a list.
fn name_stream(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Start, noise seed and episode parameters of trial `i` on `scenario`.
pub fn trial_episode(scenario: &Scenario, req: &SuiteRequest, i: usize) -> EvalEpisode {
    let stream = mix(req.seed, name_stream(&scenario.name));
    let mut rng = ChaCha8Rng::seed_from_u64(mix(stream, i as u64));
    let start = scenario.start(rng.random(), rng.random());
    EvalEpisode {
        start,
        gravity: req.gravity,
        thrust_scale: req.thrust_scale,
        target_speed: req.target_speed,
        noise_seed: rng.random(),
    }
}

pub struct SuiteResult {
    pub table: SuiteTable,
    /// Outcomes per scenario, in trial order.
    pub outcomes: Vec<(String, Vec<EpisodeOutcome>)>,
}

pub fn evaluate_suite(
    policy: &Policy,
    params: &[f64],
    scenarios: &[Scenario],
    req: &SuiteRequest,
) -> Result<SuiteResult, PolicyError> {
    policy.check_len(params.len())?;
    let mut outcomes = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let runs: Vec<EpisodeOutcome> = (0..req.trials)
            .into_par_iter()
            .map(|i| run_episode(policy, params, &sc.scene, &trial_episode(sc, req, i), &req.eval))
            .collect::<Result<_, _>>()?;
        outcomes.push((sc.name.clone(), runs));
    }
    Ok(SuiteResult {
        table: SuiteTable::from_outcomes(&outcomes),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use toanav_core::linalg::V3;

    fn outcome(v: Verdict, len: f64) -> EpisodeOutcome {
        EpisodeOutcome {
            verdict: v,
            path_length: len,
            flight_time: len / 2.0,
            max_speed: 2.0,
            avg_speed: 2.0,
            min_clearance: len / 10.0,
            non_finite: false,
            final_position: V3::ZERO,
            trace: Vec::new(),
        }
    }

    #[test]
    fn all_success_rate_is_one() {
        let t = SuiteTable::from_outcomes(&[("a".into(), vec![outcome(Verdict::Success, 1.0); 4])]);
        assert_eq!(t.rows[0].success_rate, 1.0);
        assert_eq!(t.aggregate.success_rate, 1.0);
    }

    #[test]
    fn rates_partition_and_aggregate_is_trial_weighted() {
        let a = vec![
            outcome(Verdict::Success, 1.0),
            outcome(Verdict::Collision, 2.0),
            outcome(Verdict::Timeout, 3.0),
        ];
        let b = vec![outcome(Verdict::Success, 4.0); 7];
        let t = SuiteTable::from_outcomes(&[("a".into(), a), ("b".into(), b)]);
        for r in &t.rows {
            assert!((r.success_rate + r.collision_rate + r.timeout_rate - 1.0).abs() < 1e-15);
        }
        let weighted: f64 = t.rows.iter().map(|r| r.success_rate * r.trials as f64).sum::<f64>() / 10.0;
        assert!((t.aggregate.success_rate - weighted).abs() < 1e-15);
        assert_eq!(t.aggregate.trials, 10);
        assert_eq!(t.aggregate.min_clearance_m, 0.1);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("all,10,8,1,1,"));
    }
}
