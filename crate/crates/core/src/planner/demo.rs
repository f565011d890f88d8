//! Baseline versus attacked planning on one scene.

use serde::{Deserialize, Serialize};

use crate::attribution::{gradient_seed, AnalysisOptions};
use crate::error::{Error, Result};
use crate::perturb::{apply, build_perturbation, PerturbSpec};
use crate::predictor::{input_gradient, predict, PredictorParams};
use crate::types::{PredictionOutput, SceneInput};

use super::{plan_with, PlanProblem, PlanResult, Rect, SolverOptions, DEFAULT_EPSILON, DEFAULT_KAPPA};

/// Everything about the planning problem except the obstacle predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanTemplate {
    /// Agent whose current position is the plan start.
    pub planning_agent: String,
    pub goal: [f64; 2],
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub free_space: Vec<Rect>,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl PlanTemplate {
    /// Single-lane template for `agent`: goal `distance` ahead along +x,
    /// free space a corridor of the given half-width around its lane.
    pub fn lane(scene: &SceneInput, agent: &str, distance: f64, half_width: f64) -> Result<Self> {
        let a = scene
            .agent_index(agent)
            .ok_or_else(|| Error::Validation(format!("no planning agent `{agent}`")))?;
        let p = scene.agents[a].history.current().position();
        Ok(Self {
            planning_agent: agent.to_string(),
            goal: [p[0] + distance, p[1]],
            epsilon: DEFAULT_EPSILON,
            kappa: DEFAULT_KAPPA,
            free_space: vec![Rect::new(
                [p[0] - distance, p[1] - half_width],
                [p[0] + 2.0 * distance, p[1] + half_width],
            )],
            solver: SolverOptions::default(),
        })
    }

    pub fn problem(&self, scene: &SceneInput, prediction: &PredictionOutput) -> Result<PlanProblem> {
        let agent = scene
            .agent_index(&self.planning_agent)
            .ok_or_else(|| Error::Validation(format!("no planning agent `{}`", self.planning_agent)))?;
        Ok(PlanProblem {
            start: scene.agents[agent].history.current().position(),
            goal: self.goal,
            predictions: prediction.selected().to_vec(),
            epsilon: self.epsilon,
            kappa: self.kappa,
            free_space: self.free_space.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoResult {
    pub baseline_prediction: PredictionOutput,
    pub attacked_prediction: PredictionOutput,
    pub baseline: PlanResult,
    pub attacked: PlanResult,
}

impl DemoResult {
    /// Delimited table: one row per plan, one `x y` column per step.
    pub fn table(&self) -> String {
        let steps = self.baseline.states.len();
        let mut out = String::from("plan");
        for t in 0..steps {
            out.push_str(&format!(",t={t}"));
        }
        out.push('\n');
        for (name, r) in [("baseline", &self.baseline), ("attacked", &self.attacked)] {
            out.push_str(name);
            for s in &r.states {
                out.push_str(&format!(",{:.2} {:.2}", s[0], s[1]));
            }
            out.push('\n');
        }
        out
    }

    /// Distance moved at each planned step.
    pub fn displacements(r: &PlanResult) -> Vec<f64> {
        r.states
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .collect()
    }
}

/// Plans against the unperturbed prediction and against the prediction for
/// the scene perturbed by `attack`.
pub fn demo_attack(
    scene: &SceneInput,
    params: &PredictorParams,
    attack: &PerturbSpec,
    template: &PlanTemplate,
    opts: &AnalysisOptions,
) -> Result<DemoResult> {
    let baseline_prediction = predict(scene, params, opts.selection)?;
    let gradient = if attack.kind.needs_gradient() {
        Some(input_gradient(scene, params, gradient_seed(scene, opts))?)
    } else {
        None
    };
    let p = build_perturbation(attack, scene, &opts.ranges, gradient.as_ref())?;
    let attacked_scene = apply(scene, &p)?;
    let attacked_prediction = predict(&attacked_scene, params, opts.selection)?;
    let baseline = plan_with(&template.problem(scene, &baseline_prediction)?, &template.solver)?;
    let attacked = plan_with(&template.problem(scene, &attacked_prediction)?, &template.solver)?;
    Ok(DemoResult {
        baseline_prediction,
        attacked_prediction,
        baseline,
        attacked,
    })
}
