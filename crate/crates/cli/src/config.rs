//! Experiment configuration: a TOML file, `--set key=value` overrides and a
//! few dedicated flags, resolved into one [`ExperimentConfig`].
//!
//! All randomness derives from `seed`:
//!
//! | stream                  | seed                                  |
//! |-------------------------|---------------------------------------|
//! | training scenes         | `derive_seed(seed, "train-data", 0)`  |
//! | evaluation scenes       | `derive_seed(seed, "eval-data", 0)`   |
//! | parameter init          | `derive_seed(seed, "init", 0)`        |
//! | training noise, shuffle | `derive_seed(seed, "train", 0)`       |
//! | analysis noise/gradient | `derive_seed(seed, "analysis", 0)`    |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajsens_core::perturb::{Magnitude, PerturbKind, PerturbSpec};
use trajsens_core::planner::SolverOptions;
use trajsens_core::predictor::{ModeSelection, PredictorConfig, TrainConfig};
use trajsens_core::scenario::{ScenarioConfig, TARGET_ID};
use trajsens_core::types::{dim, FeatureId};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads for parallel stages; 0 uses every core.
    pub workers: usize,
    pub data: DataConfig,
    pub predictor: PredictorConfig,
    pub training: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            workers: 0,
            data: DataConfig::default(),
            predictor: PredictorConfig::default(),
            training: TrainConfig::reference(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub eval_count: usize,
    /// Load scenes from `dir/train` and `dir/eval` instead of generating.
    pub dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 400,
            eval_count: 200,
            dir: None,
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    /// The fixed physical ranges.
    Fixed,
    /// Max minus min over the evaluation scenes.
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Aggregate,
    Depth,
    Sweep,
    ModeSwitch,
    PlanDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub selection: ModeSelection,
    pub ranges: RangeSource,
    /// What `analyze` runs; the other subcommands run one analysis each.
    pub run: Vec<Analysis>,
    pub specs: Vec<PerturbSpec>,
    pub depth: DepthConfig,
    pub sweep: SweepConfig,
    pub mode_switch: ModeSwitchConfig,
    pub plan_demo: PlanDemoConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            selection: ModeSelection::MostLikely,
            ranges: RangeSource::Fixed,
            run: vec![Analysis::Aggregate],
            specs: default_specs(),
            depth: DepthConfig::default(),
            sweep: SweepConfig::default(),
            mode_switch: ModeSwitchConfig::default(),
            plan_demo: PlanDemoConfig::default(),
        }
    }
}

/// Every perturbation kind on every input family, at half the feature range.
pub fn default_specs() -> Vec<PerturbSpec> {
    let features = [
        FeatureId::StateHistoryAll,
        FeatureId::Image,
        FeatureId::GraphNodes,
        FeatureId::GraphWeights,
    ];
    let kinds = [
        PerturbKind::Noise,
        PerturbKind::Occlusion,
        PerturbKind::Constant,
        PerturbKind::Gradient,
        PerturbKind::Fgsm,
    ];
    features
        .iter()
        .flat_map(|f| {
            kinds
                .iter()
                .map(move |&k| PerturbSpec::new(k, f.clone(), Magnitude::Fraction(0.5)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub kind: PerturbKind,
    pub magnitude: Magnitude,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            kind: PerturbKind::Constant,
            magnitude: Magnitude::Fraction(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub feature: FeatureId,
    pub epsilons: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            feature: FeatureId::Image,
            epsilons: vec![0.01, 0.025, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSwitchConfig {
    /// Index into the evaluation scenes.
    pub scene: usize,
    pub feature: FeatureId,
    pub epsilons: Vec<f64>,
}

impl Default for ModeSwitchConfig {
    fn default() -> Self {
        Self {
            scene: 0,
            feature: FeatureId::Image,
            epsilons: (0..20).map(|i| i as f64 / 19.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanDemoConfig {
    /// Seed of the following scene; generated from `scenario`.
    pub scene_seed: u64,
    pub scenario: ScenarioConfig,
    pub planning_agent: String,
    /// Goal distance ahead of the planning agent, meters.
    pub goal_distance: f64,
    /// Half-width of the lane corridor forming the free space, meters.
    pub lane_half_width: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub solver: SolverOptions,
    pub attacks: Vec<PerturbSpec>,
}

impl Default for PlanDemoConfig {
    fn default() -> Self {
        Self {
            scene_seed: 0,
            scenario: ScenarioConfig::following(),
            planning_agent: trajsens_core::scenario::EGO_ID.into(),
            goal_distance: 1000.0,
            lane_half_width: 0.1,
            epsilon: trajsens_core::planner::DEFAULT_EPSILON,
            kappa: trajsens_core::planner::DEFAULT_KAPPA,
            solver: SolverOptions::default(),
            attacks: default_attacks(4),
        }
    }
}

/// Image FGSM at absolute epsilon 20 and occlusion of the lead's current
/// velocity (`current_step` is the last history index).
pub fn default_attacks(current_step: usize) -> Vec<PerturbSpec> {
    vec![
        PerturbSpec::new(PerturbKind::Fgsm, FeatureId::Image, Magnitude::Absolute(20.0)),
        PerturbSpec::new(
            PerturbKind::Occlusion,
            FeatureId::StateCell {
                agent: TARGET_ID.into(),
                dim: dim::VX,
                step: current_step,
            },
            Magnitude::Absolute(0.0),
        ),
    ]
}

/// Flags that override config fields after `--set`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn set_path(doc: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid --set key `{key}`")));
    }
    // A value that does not parse as TOML is taken as a bare string.
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `text` (TOML), applies `--set` overrides, then the flag overrides.
pub fn resolve(text: &str, overrides: &Overrides) -> CliResult<ExperimentConfig> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    for s in &overrides.sets {
        set_path(&mut doc, s)?;
    }
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(doc))
        .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(w) = overrides.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    resolve(&text, overrides)
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let cfg = |e: trajsens_core::Error| CliError::Config(e.to_string());
        self.predictor.validate().map_err(cfg)?;
        self.training.validate().map_err(cfg)?;
        self.data.scenario.validate().map_err(cfg)?;
        self.analysis.plan_demo.scenario.validate().map_err(cfg)?;
        let p = &self.predictor;
        let s = &self.data.scenario;
        if (
            p.history_steps,
            p.horizon,
            p.image_width,
            p.image_height,
            p.image_channels,
        ) != (
            s.history_steps,
            s.horizon,
            s.image_width,
            s.image_height,
            s.image_channels,
        ) {
            return Err(CliError::Config(
                "data.scenario and predictor disagree on history, horizon or image shape".into(),
            ));
        }
        if self.out.as_os_str().is_empty() {
            return Err(CliError::Config("out must not be empty".into()));
        }
        if let Some(dir) = &self.data.dir {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("data.dir {} does not exist", dir.display())));
            }
        }
        for spec in self.analysis.specs.iter().chain(&self.analysis.plan_demo.attacks) {
            spec.validate().map_err(cfg)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `out` and `workers`,
    /// which do not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
