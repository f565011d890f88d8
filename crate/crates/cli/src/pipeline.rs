//! One function per subcommand. Each writes its files under a directory of
//! `cfg.out` together with a manifest:
//!
//! | command      | directory      | files                                                    |
//! |--------------|----------------|----------------------------------------------------------|
//! | `gen-data`   | `data/`        | `train/scene_NNNNN.json`, `eval/scene_NNNNN.json`        |
//! | `train`      | `train/`       | `model.json`, `loss_curve.csv`                           |
//! | aggregate    | `analyze/`     | `result.json`, `summary.csv`, `summary_transformed.csv`  |
//! | depth        | `depth/`       | the same plus `dominance.json`                           |
//! | sweep        | `sweep/`       | the same as aggregate                                    |
//! | mode switch  | `mode_switch/` | `mode_switch.json`                                       |
//! | `plan-demo`  | `plan_demo/`   | `result.json`, `attack_N_KIND.csv`                       |
//! | `report`     | `*/report/`    | tables, `plotdata.json`, `boxplot_KIND.svg`              |

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use trajsens_core::attribution::{
    aggregate, depth_analysis, depth_label, dominant_feature, epsilon_sweep, group_dominates, mode_switch_count,
    AnalysisOptions, AnalysisResult, ModeSwitchReport,
};
use trajsens_core::perturb::PerturbSpec;
use trajsens_core::planner::{demo_attack, DemoResult, PlanResult, PlanTemplate};
use trajsens_core::predictor::{train, PredictorParams, TrainOutcome};
use trajsens_core::ranges::compute_ranges;
use trajsens_core::report::{emit_report, plot_data, render_table, ReportFormat, Scale};
use trajsens_core::scenario::{generate_dataset, generate_scene};
use trajsens_core::scene_io::{load_scene, save_scene};
use trajsens_core::seeding::derive_seed;
use trajsens_core::types::{dim, PredictionOutput, SceneInput};

use crate::config::{Analysis, ExperimentConfig, RangeSource};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

pub const RESULT_FILE: &str = "result.json";
pub const CHECKPOINT_FILE: &str = "model.json";

/// Runs `f` on a pool of `workers` threads (0: one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_text(path: PathBuf, text: &str) -> CliResult<PathBuf> {
    std::fs::write(&path, text).map_err(CliError::io(&path))?;
    Ok(path)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("result serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn scene_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("cannot read scene directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no scene files in {}", dir.display())));
    }
    Ok(files)
}

/// Scenes for one split plus the files they came from (empty when
/// generated).
pub struct Split {
    pub scenes: Vec<SceneInput>,
    pub files: Vec<PathBuf>,
}

/// `data.dir`, else the `data/` directory written by `gen-data` when it
/// exists.
pub fn data_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.data.dir.clone().or_else(|| {
        let d = cfg.out.join("data");
        d.join("train").is_dir().then_some(d)
    })
}

fn split(cfg: &ExperimentConfig, name: &str, count: usize) -> CliResult<Split> {
    match data_dir(cfg) {
        Some(dir) => {
            let files = scene_files(&dir.join(name))?;
            let scenes = files.iter().map(load_scene).collect::<Result<_, _>>()?;
            Ok(Split { scenes, files })
        }
        None => Ok(Split {
            scenes: generate_dataset(
                derive_seed(cfg.seed, &format!("{name}-data"), 0),
                count,
                &cfg.data.scenario,
            )?,
            files: Vec::new(),
        }),
    }
}

pub fn train_split(cfg: &ExperimentConfig) -> CliResult<Split> {
    split(cfg, "train", cfg.data.train_count)
}

pub fn eval_split(cfg: &ExperimentConfig) -> CliResult<Split> {
    split(cfg, "eval", cfg.data.eval_count)
}

pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let start = Instant::now();
    let dir = cfg.out.join("data");
    let mut outputs = Vec::new();
    for (name, count) in [("train", cfg.data.train_count), ("eval", cfg.data.eval_count)] {
        let sub = dir.join(name);
        create_dir(&sub)?;
        let scenes = generate_dataset(
            derive_seed(cfg.seed, &format!("{name}-data"), 0),
            count,
            &cfg.data.scenario,
        )?;
        for (i, s) in scenes.iter().enumerate() {
            let path = sub.join(format!("scene_{i:05}.json"));
            save_scene(s, &path)?;
            outputs.push(path);
        }
    }
    Manifest::new("gen-data", cfg, &[], &outputs, start.elapsed().as_secs_f64())?.write(&dir)?;
    Ok(dir)
}

/// Trains from the configured initialization; no files are written.
pub fn train_model(cfg: &ExperimentConfig, scenes: &[SceneInput]) -> CliResult<TrainOutcome> {
    let init = PredictorParams::init(cfg.predictor.clone(), derive_seed(cfg.seed, "init", 0))?;
    Ok(train(scenes, &init, &cfg.training, derive_seed(cfg.seed, "train", 0))?)
}

pub fn default_checkpoint(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("train").join(CHECKPOINT_FILE)
}

pub fn train_command(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let start = Instant::now();
    let data = train_split(cfg)?;
    let outcome = with_workers(cfg.workers, || train_model(cfg, &data.scenes))??;
    let dir = cfg.out.join("train");
    create_dir(&dir)?;
    let model = dir.join(CHECKPOINT_FILE);
    outcome.params.save(&model)?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{e},{l}\n"));
    }
    let curve = write_text(dir.join("loss_curve.csv"), &curve)?;
    Manifest::new(
        "train",
        cfg,
        &data.files,
        &[model.clone(), curve],
        start.elapsed().as_secs_f64(),
    )?
    .write(&dir)?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> CliResult<PredictorParams> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    let params = PredictorParams::load(path)?;
    Ok(params)
}

pub fn analysis_options(cfg: &ExperimentConfig, eval: &[SceneInput]) -> CliResult<AnalysisOptions> {
    Ok(AnalysisOptions {
        selection: cfg.analysis.selection,
        ranges: compute_ranges(eval, cfg.analysis.ranges == RangeSource::Fixed)?,
        seed: derive_seed(cfg.seed, "analysis", 0),
    })
}

/// Everything an analysis needs, loaded once.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub checkpoint: PathBuf,
    pub params: PredictorParams,
    pub eval: Split,
    pub opts: AnalysisOptions,
}

impl<'a> Context<'a> {
    pub fn load(cfg: &'a ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<Self> {
        let checkpoint = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| default_checkpoint(cfg));
        let params = load_checkpoint(&checkpoint)?;
        if params.config != cfg.predictor {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with a different predictor config",
                checkpoint.display()
            )));
        }
        let eval = eval_split(cfg)?;
        let opts = analysis_options(cfg, &eval.scenes)?;
        Ok(Self {
            cfg,
            checkpoint,
            params,
            eval,
            opts,
        })
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.checkpoint.clone()];
        v.extend(self.eval.files.iter().cloned());
        v
    }

    fn finish(&self, command: &str, dir: &Path, outputs: &[PathBuf], start: Instant) -> CliResult<()> {
        Manifest::new(
            command,
            self.cfg,
            &self.inputs(),
            outputs,
            start.elapsed().as_secs_f64(),
        )?
        .write(dir)?;
        Ok(())
    }
}

/// `result.json` and both summary tables.
fn write_result(dir: &Path, result: &AnalysisResult) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut out = vec![write_json(dir.join(RESULT_FILE), result)?];
    out.extend(emit_report(result, dir, ReportFormat::Table)?);
    Ok(out)
}

pub fn run_aggregate(ctx: &Context) -> CliResult<PathBuf> {
    let start = Instant::now();
    let result = with_workers(ctx.cfg.workers, || {
        aggregate(&ctx.eval.scenes, &ctx.params, &ctx.cfg.analysis.specs, &ctx.opts)
    })??;
    let dir = ctx.cfg.out.join("analyze");
    let outputs = write_result(&dir, &result)?;
    ctx.finish("analyze", &dir, &outputs, start)?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// The one set strictly dominating all others, if any.
    pub dominant: Option<String>,
    /// Current position and velocity groups.
    pub current_group: Vec<String>,
    pub current_group_dominates: bool,
}

pub fn dominance(result: &AnalysisResult, current_step: usize) -> CliResult<Dominance> {
    let summaries = result.sets.iter().map(|s| s.summary()).collect::<Result<Vec<_>, _>>()?;
    let current_group: Vec<String> = [dim::X, dim::Y, dim::VX, dim::VY]
        .iter()
        .map(|&d| depth_label(d, current_step))
        .collect();
    let group: Vec<usize> = result
        .sets
        .iter()
        .enumerate()
        .filter(|(_, s)| current_group.contains(&s.feature))
        .map(|(i, _)| i)
        .collect();
    Ok(Dominance {
        dominant: dominant_feature(&summaries).map(|i| result.sets[i].feature.clone()),
        current_group_dominates: group.len() == current_group.len() && group_dominates(&summaries, &group),
        current_group,
    })
}

pub fn run_depth(ctx: &Context) -> CliResult<PathBuf> {
    let start = Instant::now();
    let d = &ctx.cfg.analysis.depth;
    let result = with_workers(ctx.cfg.workers, || {
        depth_analysis(&ctx.eval.scenes, &ctx.params, d.kind, d.magnitude, &ctx.opts)
    })??;
    let dir = ctx.cfg.out.join("depth");
    let mut outputs = write_result(&dir, &result)?;
    let dom = dominance(&result, ctx.cfg.predictor.history_steps)?;
    outputs.push(write_json(dir.join("dominance.json"), &dom)?);
    ctx.finish("depth", &dir, &outputs, start)?;
    Ok(dir)
}

pub fn run_sweep(ctx: &Context) -> CliResult<PathBuf> {
    let start = Instant::now();
    let s = &ctx.cfg.analysis.sweep;
    let result = with_workers(ctx.cfg.workers, || {
        epsilon_sweep(&ctx.eval.scenes, &ctx.params, &s.feature, &s.epsilons, &ctx.opts)
    })??;
    let dir = ctx.cfg.out.join("sweep");
    let outputs = write_result(&dir, &result)?;
    ctx.finish("sweep", &dir, &outputs, start)?;
    Ok(dir)
}

pub fn run_mode_switch(ctx: &Context) -> CliResult<ModeSwitchReport> {
    let start = Instant::now();
    let m = &ctx.cfg.analysis.mode_switch;
    let scene = ctx.eval.scenes.get(m.scene).ok_or_else(|| {
        CliError::Config(format!(
            "analysis.mode_switch.scene {} is beyond the {} evaluation scenes",
            m.scene,
            ctx.eval.scenes.len()
        ))
    })?;
    let report = mode_switch_count(scene, &ctx.params, &m.feature, &m.epsilons, &ctx.opts)?;
    let dir = ctx.cfg.out.join("mode_switch");
    create_dir(&dir)?;
    let out = write_json(dir.join("mode_switch.json"), &report)?;
    ctx.finish("mode-switch", &dir, &[out], start)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub attack: PerturbSpec,
    pub baseline_prediction: PredictionOutput,
    pub attacked_prediction: PredictionOutput,
    pub baseline: PlanResult,
    pub attacked: PlanResult,
    pub baseline_displacements: Vec<f64>,
    pub attacked_displacements: Vec<f64>,
}

impl DemoRecord {
    fn new(attack: &PerturbSpec, r: DemoResult) -> Self {
        Self {
            attack: attack.clone(),
            baseline_displacements: DemoResult::displacements(&r.baseline),
            attacked_displacements: DemoResult::displacements(&r.attacked),
            baseline_prediction: r.baseline_prediction,
            attacked_prediction: r.attacked_prediction,
            baseline: r.baseline,
            attacked: r.attacked,
        }
    }
}

/// The demo scene, its planning template and one record per attack.
pub fn plan_demo(
    cfg: &ExperimentConfig,
    params: &PredictorParams,
    opts: &AnalysisOptions,
) -> CliResult<Vec<(DemoRecord, String)>> {
    let d = &cfg.analysis.plan_demo;
    let scene = generate_scene(d.scene_seed, &d.scenario)?;
    let mut template = PlanTemplate::lane(&scene, &d.planning_agent, d.goal_distance, d.lane_half_width)?;
    template.epsilon = d.epsilon;
    template.kappa = d.kappa;
    template.solver = d.solver.clone();
    d.attacks
        .iter()
        .map(|a| {
            let r = demo_attack(&scene, params, a, &template, opts)?;
            let table = r.table();
            Ok((DemoRecord::new(a, r), table))
        })
        .collect()
}

pub fn run_plan_demo(ctx: &Context) -> CliResult<PathBuf> {
    let start = Instant::now();
    let records = with_workers(ctx.cfg.workers, || plan_demo(ctx.cfg, &ctx.params, &ctx.opts))??;
    let dir = ctx.cfg.out.join("plan_demo");
    create_dir(&dir)?;
    let mut outputs = Vec::new();
    for (i, (rec, table)) in records.iter().enumerate() {
        outputs.push(write_text(
            dir.join(format!("attack_{i}_{}.csv", rec.attack.kind.name())),
            table,
        )?);
    }
    let recs: Vec<&DemoRecord> = records.iter().map(|(r, _)| r).collect();
    outputs.push(write_json(dir.join(RESULT_FILE), &recs)?);
    ctx.finish("plan-demo", &dir, &outputs, start)?;
    Ok(dir)
}

/// Runs every analysis listed in `analysis.run`.
pub fn analyze(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let ctx = Context::load(cfg, checkpoint)?;
    let mut dirs = Vec::new();
    for a in &cfg.analysis.run {
        dirs.push(match a {
            Analysis::Aggregate => run_aggregate(&ctx)?,
            Analysis::Depth => run_depth(&ctx)?,
            Analysis::Sweep => run_sweep(&ctx)?,
            Analysis::ModeSwitch => {
                run_mode_switch(&ctx)?;
                cfg.out.join("mode_switch")
            }
            Analysis::PlanDemo => run_plan_demo(&ctx)?,
        });
    }
    Ok(dirs)
}

/// Emits `formats` for every analysis directory under `cfg.out` that holds
/// a result.
pub fn report(cfg: &ExperimentConfig, formats: &[ReportFormat]) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let mut written = Vec::new();
    let mut inputs = Vec::new();
    for name in ["analyze", "depth", "sweep"] {
        let path = cfg.out.join(name).join(RESULT_FILE);
        if !path.is_file() {
            continue;
        }
        let result: AnalysisResult = read_json(&path)?;
        let dir = cfg.out.join(name).join("report");
        for &f in formats {
            written.extend(emit_report(&result, &dir, f)?);
        }
        inputs.push(path);
    }
    if inputs.is_empty() {
        return Err(CliError::Config(format!(
            "no analysis results under {}; run `analyze`, `depth` or `sweep` first",
            cfg.out.display()
        )));
    }
    let dir = cfg.out.join("report");
    create_dir(&dir)?;
    Manifest::new("report", cfg, &inputs, &written, start.elapsed().as_secs_f64())?.write(&dir)?;
    Ok(written)
}

/// The raw summary table of `result`, as written to `summary.csv`.
pub fn summary_table(result: &AnalysisResult) -> CliResult<String> {
    Ok(render_table(&plot_data(result)?, Scale::Raw)?)
}
