//! Sensitivity attribution: ADE, percent-increase scores, quartile
//! summaries, strict dominance, and the dataset-level analyses built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{apply, build_perturbation, Magnitude, PerturbKind, PerturbSpec};
use crate::predictor::{input_gradient, predict, ModeSelection, PredictorParams, SceneGradient};
use crate::ranges::FeatureRanges;
use crate::seeding::{derive_seed, fingerprint};
use crate::types::{dim, FeatureId, Point, SceneInput, STATE_DIM};

/// Mean Euclidean distance between matching steps.
pub fn ade(pred: &[Point], truth: &[Point]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} steps, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `(pert - base) / base`, or `None` when the baseline error is zero (such
/// scenes are counted separately and never scored).
pub fn percent_increase(base_ade: f64, pert_ade: f64) -> Result<Option<f64>> {
    if !(base_ade >= 0.0) || !(pert_ade >= 0.0) {
        return Err(Error::Validation(format!(
            "ADE values must be nonnegative, got {base_ade} and {pert_ade}"
        )));
    }
    if base_ade == 0.0 {
        return Ok(None);
    }
    Ok(Some((pert_ade - base_ade) / base_ade))
}

/// Percent-increase scores of one perturbation over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySet {
    /// Feature or feature-group label.
    pub feature: String,
    pub kind: PerturbKind,
    /// Absolute epsilon for sweeps.
    pub epsilon: Option<f64>,
    pub scores: Vec<f64>,
    pub zero_baseline_count: usize,
}

impl SensitivitySet {
    pub fn summary(&self) -> Result<QuartileSummary> {
        quartiles(&self.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub mean: f64,
    pub n: usize,
}

/// Quantile of sorted data by linear interpolation between order
/// statistics: position `p * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(scores: &[f64]) -> Result<QuartileSummary> {
    if scores.is_empty() {
        return Err(Error::Empty("score set"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(QuartileSummary {
        q1: quantile_sorted(&s, 0.25),
        q2: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        n: s.len(),
    })
}

fn strictly_above(a: &QuartileSummary, b: &QuartileSummary) -> bool {
    a.q1 > b.q1 && a.q2 > b.q2 && a.q3 > b.q3
}

/// Index of the one summary whose Q1, Q2 and Q3 all strictly exceed those
/// of every other summary; `None` if there is none or fewer than two.
pub fn dominant_feature(summaries: &[QuartileSummary]) -> Option<usize> {
    if summaries.len() < 2 {
        return None;
    }
    (0..summaries.len()).find(|&i| {
        summaries
            .iter()
            .enumerate()
            .all(|(j, s)| j == i || strictly_above(&summaries[i], s))
    })
}

/// True when every summary in `group` strictly dominates every summary
/// outside it.
pub fn group_dominates(summaries: &[QuartileSummary], group: &[usize]) -> bool {
    group.iter().all(|&i| {
        summaries
            .iter()
            .enumerate()
            .all(|(j, s)| group.contains(&j) || strictly_above(&summaries[i], s))
    })
}

/// Settings shared by the analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub selection: ModeSelection,
    pub ranges: FeatureRanges,
    /// Base seed for loss-gradient latent noise and for noise perturbations.
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            selection: ModeSelection::MostLikely,
            ranges: FeatureRanges::fixed(),
            seed: 0,
        }
    }
}

/// Content hash of a scene; per-scene seeds derive from it so results do not
/// depend on dataset order.
pub fn scene_fingerprint(scene: &SceneInput) -> u64 {
    let states = scene
        .agents
        .iter()
        .flat_map(|a| a.history.states.iter().flat_map(|s| s.to_array()));
    let rest = scene
        .image
        .pixels
        .iter()
        .copied()
        .chain(scene.graph.edges.iter().map(|e| e.weight))
        .chain(scene.graph.presence.iter().copied())
        .chain(scene.ground_truth.iter().flatten().copied());
    fingerprint(states.chain(rest))
}

/// Seed of the latent noise used when taking the loss gradient of `scene`.
pub fn gradient_seed(scene: &SceneInput, opts: &AnalysisOptions) -> u64 {
    derive_seed(opts.seed, "gradient", scene_fingerprint(scene))
}

fn label(spec: &PerturbSpec) -> String {
    spec.target.to_string()
}

/// Baseline ADE once, then one perturbed prediction per spec. Each entry is
/// the score, or `None` for a zero baseline.
pub fn attribute_scene(
    scene: &SceneInput,
    params: &PredictorParams,
    specs: &[PerturbSpec],
    opts: &AnalysisOptions,
) -> Result<Vec<Option<f64>>> {
    let base = predict(scene, params, opts.selection)?;
    let base_ade = ade(base.selected(), &scene.ground_truth)?;
    let fp = scene_fingerprint(scene);
    let mut gradient: Option<SceneGradient> = None;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut run = || -> Result<Option<f64>> {
            if spec.kind.needs_gradient() && gradient.is_none() {
                gradient = Some(input_gradient(scene, params, derive_seed(opts.seed, "gradient", fp))?);
            }
            let mut spec = spec.clone();
            spec.seed = derive_seed(spec.seed, "noise", fp);
            let p = build_perturbation(&spec, scene, &opts.ranges, gradient.as_ref())?;
            let pert = predict(&apply(scene, &p)?, params, opts.selection)?;
            percent_increase(base_ade, ade(pert.selected(), &scene.ground_truth)?)
        };
        out.push(run().map_err(|e| e.context(format!("{} perturbation of {}", spec.kind.name(), spec.target)))?);
    }
    Ok(out)
}

/// Sets produced by an analysis, plus specs skipped because a range they
/// scale by is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub sets: Vec<SensitivitySet>,
    pub excluded: Vec<Excluded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub feature: String,
    pub kind: PerturbKind,
    pub degenerate_ranges: Vec<String>,
}

/// Runs [`attribute_scene`] on every scene in parallel and collects one
/// set per spec, with scores in dataset order.
pub fn aggregate(
    dataset: &[SceneInput],
    params: &PredictorParams,
    specs: &[PerturbSpec],
    opts: &AnalysisOptions,
) -> Result<AnalysisResult> {
    aggregate_labeled(dataset, params, specs, opts, |s| (label(s), None))
}

fn aggregate_labeled(
    dataset: &[SceneInput],
    params: &PredictorParams,
    specs: &[PerturbSpec],
    opts: &AnalysisOptions,
    name: impl Fn(&PerturbSpec) -> (String, Option<f64>),
) -> Result<AnalysisResult> {
    let first = dataset.first().ok_or(Error::Empty("dataset"))?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for spec in specs {
        spec.validate()?;
        let degenerate = spec.degenerate_ranges(first, &opts.ranges)?;
        if degenerate.is_empty() {
            kept.push(spec.clone());
        } else {
            excluded.push(Excluded {
                feature: name(spec).0,
                kind: spec.kind,
                degenerate_ranges: degenerate,
            });
        }
    }
    let per_scene = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| attribute_scene(s, params, &kept, opts).map_err(|e| e.context(format!("scene {i}"))))
        .collect::<Result<Vec<_>>>()?;
    let sets = kept
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let (feature, epsilon) = name(spec);
            let mut set = SensitivitySet {
                feature,
                kind: spec.kind,
                epsilon,
                scores: Vec::with_capacity(dataset.len()),
                zero_baseline_count: 0,
            };
            for row in &per_scene {
                match row[k] {
                    Some(c) => set.scores.push(c),
                    None => set.zero_baseline_count += 1,
                }
            }
            set
        })
        .collect();
    Ok(AnalysisResult { sets, excluded })
}

/// Label of a depth-analysis group, e.g. `vx@4`.
pub fn depth_label(d: usize, step: usize) -> String {
    format!("{}@{step}", dim::NAMES[d])
}

/// One set per (state dimension, history step) of the target agent, in
/// step-major order.
pub fn depth_analysis(
    dataset: &[SceneInput],
    params: &PredictorParams,
    kind: PerturbKind,
    magnitude: Magnitude,
    opts: &AnalysisOptions,
) -> Result<AnalysisResult> {
    let first = dataset.first().ok_or(Error::Empty("dataset"))?;
    let target = first.target_agent.clone();
    let specs: Vec<PerturbSpec> = (0..first.history_len())
        .flat_map(|step| {
            let target = target.clone();
            (0..STATE_DIM).map(move |d| {
                PerturbSpec::new(
                    kind,
                    FeatureId::StateCell {
                        agent: target.clone(),
                        dim: d,
                        step,
                    },
                    magnitude,
                )
            })
        })
        .collect();
    aggregate_labeled(dataset, params, &specs, opts, |s| match &s.target {
        FeatureId::StateCell { dim, step, .. } => (depth_label(*dim, *step), None),
        other => (other.to_string(), None),
    })
}

fn check_epsilons(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::Empty("epsilon list"));
    }
    if epsilons.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::Validation("epsilons must be finite and nonnegative".into()));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("epsilons must be strictly ascending".into()));
    }
    Ok(())
}

/// FGSM on `feature` at each absolute epsilon; one set per epsilon.
pub fn epsilon_sweep(
    dataset: &[SceneInput],
    params: &PredictorParams,
    feature: &FeatureId,
    epsilons: &[f64],
    opts: &AnalysisOptions,
) -> Result<AnalysisResult> {
    check_epsilons(epsilons)?;
    let specs: Vec<PerturbSpec> = epsilons
        .iter()
        .map(|&e| PerturbSpec::new(PerturbKind::Fgsm, feature.clone(), Magnitude::Absolute(e)))
        .collect();
    aggregate_labeled(dataset, params, &specs, opts, |s| {
        (s.target.to_string(), Some(s.magnitude.value()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSwitchReport {
    pub epsilons: Vec<f64>,
    pub selected: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    /// Number of epsilons whose selected mode differs from the previous one.
    pub switches: usize,
}

/// Selected mode under FGSM on `feature` at each absolute epsilon.
pub fn mode_switch_count(
    scene: &SceneInput,
    params: &PredictorParams,
    feature: &FeatureId,
    epsilons: &[f64],
    opts: &AnalysisOptions,
) -> Result<ModeSwitchReport> {
    check_epsilons(epsilons)?;
    let g = input_gradient(scene, params, gradient_seed(scene, opts))?;
    let mut selected = Vec::with_capacity(epsilons.len());
    let mut weights = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        let spec = PerturbSpec::new(PerturbKind::Fgsm, feature.clone(), Magnitude::Absolute(e));
        let p = build_perturbation(&spec, scene, &opts.ranges, Some(&g))?;
        let out = predict(&apply(scene, &p)?, params, opts.selection)?;
        selected.push(out.selected_mode);
        weights.push(out.mode_weights);
    }
    let switches = selected.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(ModeSwitchReport {
        epsilons: epsilons.to_vec(),
        selected,
        weights,
        switches,
    })
}
