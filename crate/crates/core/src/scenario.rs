//! Synthetic two-vehicle car-following scenes.
//!
//! Each scene has a `lead` vehicle (the prediction target) driving along a
//! straight or gently curving lane at constant speed, and an `ego` vehicle
//! following it at a fixed arc-length gap. The image map carries two cues:
//! channel 1 draws the lane centerline (its bend encodes the curvature) and
//! channel 0 holds a signal block that is lit when the lead halts at its
//! current position for the whole horizon. A fraction of scenes
//! (`stop_probability`) are such halting scenes, so the image is genuinely
//! informative to a predictor trained on this data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::types::{normalize_angle, Agent, AgentState, Edge, ImageMap, Point, SceneGraph, SceneInput, Trajectory};

pub const TARGET_ID: &str = "lead";
pub const EGO_ID: &str = "ego";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of past steps before the current one (history length is this plus one).
    pub history_steps: usize,
    /// Prediction horizon in steps.
    pub horizon: usize,
    pub dt: f64,
    /// Nominal lead speed, m/s.
    pub lead_speed: f64,
    /// Lead speed is drawn uniformly from `lead_speed ± speed_jitter`.
    pub speed_jitter: f64,
    /// Arc-length gap between the vehicles at the current step, meters.
    pub gap: f64,
    pub gap_jitter: f64,
    /// Lane curvature is drawn uniformly from `±max_curvature`, 1/m.
    pub max_curvature: f64,
    /// Std-dev of the noise on ground-truth positions, meters.
    pub position_noise: f64,
    pub stop_probability: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub image_channels: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            history_steps: 4,
            horizon: 4,
            dt: 0.5,
            lead_speed: 20.0,
            speed_jitter: 15.0,
            gap: 20.0,
            gap_jitter: 5.0,
            max_curvature: 0.002,
            position_noise: 0.05,
            stop_probability: 0.2,
            image_width: 16,
            image_height: 16,
            image_channels: 3,
        }
    }
}

impl ScenarioConfig {
    /// Deterministic straight-lane following: the lead covers one default
    /// planner step bound per step and the ego trails just beyond the
    /// default separation.
    pub fn following() -> Self {
        Self {
            lead_speed: 33.0,
            speed_jitter: 0.0,
            gap: 15.2,
            gap_jitter: 0.0,
            max_curvature: 0.0,
            position_noise: 0.0,
            stop_probability: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.history_steps < 1 {
            return bad("history_steps must be at least 1".into());
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        for (name, v) in [
            ("lead_speed", self.lead_speed),
            ("speed_jitter", self.speed_jitter),
            ("gap", self.gap),
            ("gap_jitter", self.gap_jitter),
            ("max_curvature", self.max_curvature),
            ("position_noise", self.position_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return bad(format!("stop_probability {} outside [0, 1]", self.stop_probability));
        }
        if self.image_width < 4 || self.image_height < 4 || self.image_channels < 1 {
            return bad("image must be at least 4x4 with one channel".into());
        }
        Ok(())
    }
}

/// Point and heading at arc length `s` along a constant-curvature lane that
/// starts at the origin heading along +x.
fn lane_pose(s: f64, curvature: f64) -> (Point, f64) {
    if curvature.abs() < 1e-12 {
        ([s, 0.0], 0.0)
    } else {
        let th = curvature * s;
        ([th.sin() / curvature, (1.0 - th.cos()) / curvature], th)
    }
}

fn lane_state(origin: Point, s: f64, speed: f64, curvature: f64) -> AgentState {
    let (p, th) = lane_pose(s, curvature);
    let (sin, cos) = th.sin_cos();
    let centripetal = speed * speed * curvature;
    AgentState {
        x: origin[0] + p[0],
        y: origin[1] + p[1],
        vx: speed * cos,
        vy: speed * sin,
        ax: -centripetal * sin,
        ay: centripetal * cos,
        heading: normalize_angle(th),
        angular_velocity: speed * curvature,
    }
}

fn draw_image(cfg: &ScenarioConfig, curvature: f64, halting: bool, rng: &mut ChaCha8Rng) -> ImageMap {
    let (w, h, l) = (cfg.image_width, cfg.image_height, cfg.image_channels);
    let mut img = ImageMap::zeros(w, h, l);
    for p in img.pixels.iter_mut() {
        *p = rng.random_range(0.0..0.1);
    }
    // Signal block: top quarter rows, third quarter columns.
    if halting {
        for row in 0..h / 4 {
            for col in w / 2..3 * w / 4 {
                let i = img.index(col, row, 0);
                img.pixels[i] = 0.9 + rng.random_range(0.0..0.1);
            }
        }
    }
    if l > 1 {
        let bend = if cfg.max_curvature > 0.0 {
            curvature / cfg.max_curvature
        } else {
            0.0
        };
        let half = w as f64 / 2.0;
        for col in 0..w {
            let u = (col as f64 - half) / half;
            let row = h as f64 / 2.0 - 3.0 * bend * u * u;
            let row = row.round().clamp(0.0, (h - 1) as f64) as usize;
            let i = img.index(col, row, 1);
            img.pixels[i] = 0.8 + rng.random_range(0.0..0.2);
        }
    }
    img
}

/// Generates one scene; a pure function of `(seed, config)`.
pub fn generate_scene(seed: u64, cfg: &ScenarioConfig) -> Result<SceneInput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng, half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };

    let speed = (cfg.lead_speed + jitter(&mut rng, cfg.speed_jitter)).max(0.0);
    let gap = (cfg.gap + jitter(&mut rng, cfg.gap_jitter)).max(0.0);
    let curvature = jitter(&mut rng, cfg.max_curvature);
    let ego_speed = speed * (1.0 + jitter(&mut rng, 0.05));
    let origin = [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)];
    let halting = rng.random_bool(cfg.stop_probability);

    let steps = cfg.history_steps as i64;
    let lead: Vec<AgentState> = (-steps..=0)
        .map(|k| lane_state(origin, speed * cfg.dt * k as f64, speed, curvature))
        .collect();
    let ego: Vec<AgentState> = (-steps..=0)
        .map(|k| lane_state(origin, -gap + ego_speed * cfg.dt * k as f64, ego_speed, curvature))
        .collect();

    let noise =
        Normal::new(0.0, cfg.position_noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;
    let current = lead[lead.len() - 1].position();
    let ground_truth: Vec<Point> = (1..=cfg.horizon)
        .map(|k| {
            let p = if halting {
                current
            } else {
                lane_state(origin, speed * cfg.dt * k as f64, speed, curvature).position()
            };
            [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
        })
        .collect();

    let image = draw_image(cfg, curvature, halting, &mut rng);
    let graph = SceneGraph {
        nodes: vec![EGO_ID.to_string(), TARGET_ID.to_string()],
        edges: vec![
            Edge {
                source: EGO_ID.into(),
                target: TARGET_ID.into(),
                weight: rng.random_range(1.0..5.0),
            },
            Edge {
                source: TARGET_ID.into(),
                target: EGO_ID.into(),
                weight: rng.random_range(1.0..5.0),
            },
        ],
        presence: vec![1.0, 1.0],
    };

    SceneInput::new(
        vec![
            Agent {
                id: TARGET_ID.into(),
                history: Trajectory::new(cfg.dt, lead)?,
            },
            Agent {
                id: EGO_ID.into(),
                history: Trajectory::new(cfg.dt, ego)?,
            },
        ],
        image,
        graph,
        TARGET_ID.into(),
        ground_truth,
    )
}

/// `count` scenes; scene `i` uses a seed derived from `(seed, i)`.
pub fn generate_dataset(seed: u64, count: usize, cfg: &ScenarioConfig) -> Result<Vec<SceneInput>> {
    (0..count)
        .map(|i| generate_scene(derive_seed(seed, "scene", i as u64), cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(speed: f64, gap: f64) -> ScenarioConfig {
        ScenarioConfig {
            lead_speed: speed,
            speed_jitter: 0.0,
            gap,
            gap_jitter: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn lead_is_gap_ahead_at_current_step() {
        let s = generate_scene(0, &fixed(10.0, 20.0)).unwrap();
        let lead = s.agents[s.agent_index(TARGET_ID).unwrap()].history.current().x;
        let ego = s.agents[s.agent_index(EGO_ID).unwrap()].history.current().x;
        assert!((lead - ego - 20.0).abs() < 0.1, "{}", lead - ego);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scene(3, &cfg).unwrap(), generate_scene(3, &cfg).unwrap());
    }

    #[test]
    fn seeds_differ() {
        let cfg = ScenarioConfig::default();
        let a = generate_scene(0, &cfg).unwrap();
        let b = generate_scene(1, &cfg).unwrap();
        assert_ne!(a.agents, b.agents);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = ScenarioConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate_scene(0, &c), Err(Error::Config(_))));
        let c = ScenarioConfig {
            history_steps: 0,
            ..Default::default()
        };
        assert!(generate_scene(0, &c).is_err());
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = ScenarioConfig::default();
        let s = generate_scene(5, &cfg).unwrap();
        assert_eq!(s.history_len(), cfg.history_steps + 1);
        assert_eq!(s.horizon(), cfg.horizon);
        assert_eq!(s.image.pixels.len(), 16 * 16 * 3);
        assert_eq!(s.agents.len(), 2);
    }

    #[test]
    fn halting_scenes_stay_put() {
        let cfg = ScenarioConfig {
            stop_probability: 1.0,
            position_noise: 0.0,
            ..Default::default()
        };
        let s = generate_scene(9, &cfg).unwrap();
        let cur = s.target().history.current().position();
        for p in &s.ground_truth {
            assert!((p[0] - cur[0]).abs() < 1e-9 && (p[1] - cur[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn cruising_ground_truth_is_constant_velocity() {
        let cfg = ScenarioConfig {
            stop_probability: 0.0,
            position_noise: 0.0,
            max_curvature: 0.0,
            ..Default::default()
        };
        let s = generate_scene(2, &cfg).unwrap();
        let cur = *s.target().history.current();
        for (k, p) in s.ground_truth.iter().enumerate() {
            let t = cfg.dt * (k + 1) as f64;
            assert!((p[0] - (cur.x + cur.vx * t)).abs() < 1e-9);
            assert!((p[1] - (cur.y + cur.vy * t)).abs() < 1e-9);
        }
    }
}
