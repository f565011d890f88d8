//! Domain types shared by every module: agent states, scene inputs,
//! predictions, and the feature addressing scheme used by perturbations.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalars in an [`AgentState`].
pub const STATE_DIM: usize = 8;

/// Dimension indices into an [`AgentState`] viewed as an array.
pub mod dim {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const VX: usize = 2;
    pub const VY: usize = 3;
    pub const AX: usize = 4;
    pub const AY: usize = 5;
    pub const HEADING: usize = 6;
    pub const ANGULAR_VELOCITY: usize = 7;

    pub const NAMES: [&str; super::STATE_DIM] = ["x", "y", "vx", "vy", "ax", "ay", "heading", "angular_velocity"];
}

pub type Point = [f64; 2];

/// Kinematic state of one agent at one time step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    /// Radians, normalized to (-pi, pi].
    pub heading: f64,
    pub angular_velocity: f64,
}

impl AgentState {
    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            vx: a[2],
            vy: a[3],
            ax: a[4],
            ay: a[5],
            heading: a[6],
            angular_velocity: a[7],
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.x,
            self.y,
            self.vx,
            self.vy,
            self.ax,
            self.ay,
            self.heading,
            self.angular_velocity,
        ]
    }

    pub fn get(&self, d: usize) -> f64 {
        self.to_array()[d]
    }

    pub fn set(&mut self, d: usize, value: f64) {
        let mut a = self.to_array();
        a[d] = value;
        *self = Self::from_array(a);
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> Point {
        [self.vx, self.vy]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Uniformly sampled state sequence, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<AgentState>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<AgentState>) -> Result<Self> {
        let t = Self { dt, states };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(true)
    }

    fn check(&self, heading_range: bool) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if self.states.is_empty() {
            return Err(Error::Validation("trajectory must contain at least one state".into()));
        }
        for (i, s) in self.states.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Validation(format!("non-finite state at step {i}")));
            }
            if heading_range && !(s.heading > -PI && s.heading <= PI) {
                return Err(Error::Validation(format!(
                    "heading {} at step {i} outside (-pi, pi]",
                    s.heading
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Most recent state.
    pub fn current(&self) -> &AgentState {
        self.states.last().expect("validated trajectories are nonempty")
    }
}

/// W x H x L raster. Pixel `(col, row, channel)` lives at
/// `(row * width + col) * channels + channel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![0.0; width * height * channels],
        }
    }

    pub fn index(&self, col: usize, row: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::Validation("image dimensions must be at least 1".into()));
        }
        let expected = self.width * self.height * self.channels;
        if self.pixels.len() != expected {
            return Err(Error::Validation(format!(
                "image has {} pixels, expected w*h*l = {expected}",
                self.pixels.len()
            )));
        }
        if let Some(i) = self.pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(format!("non-finite pixel at index {i}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Directed interaction graph. `presence` holds one scalar per node (nominally
/// 1.0) that scales every edge leaving that node; it is the numeric handle
/// used to perturb or occlude nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub presence: Vec<f64>,
}

impl SceneGraph {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.presence.len() != self.nodes.len() {
            return Err(Error::Validation(format!(
                "graph has {} nodes but {} presence values",
                self.nodes.len(),
                self.presence.len()
            )));
        }
        for (i, e) in self.edges.iter().enumerate() {
            for end in [&e.source, &e.target] {
                if self.node_index(end).is_none() {
                    return Err(Error::Validation(format!(
                        "edge {i} endpoint `{end}` is not a graph node"
                    )));
                }
            }
            if !e.weight.is_finite() {
                return Err(Error::Validation(format!("edge {i} has non-finite weight")));
            }
        }
        if self.presence.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite node presence".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub history: Trajectory,
}

/// Everything the predictor consumes for one scene, plus the target agent's
/// ground-truth future positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    /// Sorted by id; every history has the same length and `dt`.
    pub agents: Vec<Agent>,
    pub image: ImageMap,
    pub graph: SceneGraph,
    pub target_agent: String,
    pub ground_truth: Vec<Point>,
}

impl SceneInput {
    /// Builds a validated scene. Agents are sorted by id.
    pub fn new(
        mut agents: Vec<Agent>,
        image: ImageMap,
        graph: SceneGraph,
        target_agent: String,
        ground_truth: Vec<Point>,
    ) -> Result<Self> {
        agents.sort_by(|a, b| a.id.cmp(&b.id));
        let scene = Self {
            agents,
            image,
            graph,
            target_agent,
            ground_truth,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(true)
    }

    /// Like [`SceneInput::validate`] but accepts headings outside (-pi, pi],
    /// which additive perturbations may produce.
    pub fn validate_perturbed(&self) -> Result<()> {
        self.check(false)
    }

    fn check(&self, heading_range: bool) -> Result<()> {
        let first = self
            .agents
            .first()
            .ok_or_else(|| Error::Validation("scene has no agents".into()))?;
        for w in self.agents.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::Validation(format!(
                    "agent ids must be unique and sorted (`{}`, `{}`)",
                    w[0].id, w[1].id
                )));
            }
        }
        for a in &self.agents {
            a.history
                .check(heading_range)
                .map_err(|e| e.context(format!("agent `{}`", a.id)))?;
            if a.history.dt != first.history.dt || a.history.len() != first.history.len() {
                return Err(Error::Validation(format!(
                    "agent `{}` history does not share dt and length with `{}`",
                    a.id, first.id
                )));
            }
        }
        self.image.validate()?;
        self.graph.validate()?;
        if self.target_index().is_none() {
            return Err(Error::Validation(format!(
                "target agent `{}` has no history",
                self.target_agent
            )));
        }
        if self.graph.node_index(&self.target_agent).is_none() {
            return Err(Error::Validation(format!(
                "target agent `{}` is not a graph node",
                self.target_agent
            )));
        }
        if self.ground_truth.is_empty() {
            return Err(Error::Validation("ground_truth must be nonempty".into()));
        }
        if self.ground_truth.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite ground_truth".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.agents[0].history.dt
    }

    /// Number of history steps, i.e. the history length including the current state.
    pub fn history_len(&self) -> usize {
        self.agents[0].history.len()
    }

    pub fn horizon(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn target_index(&self) -> Option<usize> {
        self.agent_index(&self.target_agent)
    }

    pub fn target(&self) -> &Agent {
        &self.agents[self.target_index().expect("validated scene has its target")]
    }

    pub fn get(&self, r: ScalarRef) -> f64 {
        match r {
            ScalarRef::State { agent, step, dim } => self.agents[agent].history.states[step].get(dim),
            ScalarRef::Pixel(i) => self.image.pixels[i],
            ScalarRef::Weight(e) => self.graph.edges[e].weight,
            ScalarRef::Presence(n) => self.graph.presence[n],
        }
    }

    pub fn set(&mut self, r: ScalarRef, value: f64) {
        match r {
            ScalarRef::State { agent, step, dim } => self.agents[agent].history.states[step].set(dim, value),
            ScalarRef::Pixel(i) => self.image.pixels[i] = value,
            ScalarRef::Weight(e) => self.graph.edges[e].weight = value,
            ScalarRef::Presence(n) => self.graph.presence[n] = value,
        }
    }
}

/// Address of one perturbable scalar inside a [`SceneInput`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarRef {
    State { agent: usize, step: usize, dim: usize },
    Pixel(usize),
    Weight(usize),
    Presence(usize),
}

/// A perturbable slice of a scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureId {
    /// Every state cell of the target agent's history.
    StateHistoryAll,
    /// One scalar of one agent's history.
    StateCell {
        agent: String,
        dim: usize,
        step: usize,
    },
    Image,
    /// Presence of every non-target node.
    GraphNodes,
    /// Every edge weight.
    GraphWeights,
}

impl FeatureId {
    /// Resolves the feature to its scalars, in a fixed order.
    pub fn scalars(&self, scene: &SceneInput) -> Result<Vec<ScalarRef>> {
        match self {
            FeatureId::StateHistoryAll => {
                let agent = scene
                    .target_index()
                    .ok_or_else(|| Error::Validation("scene has no target".into()))?;
                Ok((0..scene.history_len())
                    .flat_map(|step| (0..STATE_DIM).map(move |dim| ScalarRef::State { agent, step, dim }))
                    .collect())
            }
            FeatureId::StateCell { agent, dim, step } => {
                let a = scene
                    .agent_index(agent)
                    .ok_or_else(|| Error::OutOfBounds(format!("no agent `{agent}`")))?;
                if *dim >= STATE_DIM {
                    return Err(Error::OutOfBounds(format!("state dim {dim} >= {STATE_DIM}")));
                }
                if *step >= scene.history_len() {
                    return Err(Error::OutOfBounds(format!(
                        "history step {step} beyond the {} recorded steps",
                        scene.history_len()
                    )));
                }
                Ok(vec![ScalarRef::State {
                    agent: a,
                    step: *step,
                    dim: *dim,
                }])
            }
            FeatureId::Image => Ok((0..scene.image.pixels.len()).map(ScalarRef::Pixel).collect()),
            FeatureId::GraphNodes => Ok(scene
                .graph
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| **n != scene.target_agent)
                .map(|(i, _)| ScalarRef::Presence(i))
                .collect()),
            FeatureId::GraphWeights => Ok((0..scene.graph.edges.len()).map(ScalarRef::Weight).collect()),
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureId::StateHistoryAll => write!(f, "state_history"),
            FeatureId::StateCell { agent, dim, step } => {
                let name = dim::NAMES.get(*dim).copied().unwrap_or("?");
                write!(f, "state[{agent}].{name}@{step}")
            }
            FeatureId::Image => write!(f, "image"),
            FeatureId::GraphNodes => write!(f, "graph_nodes"),
            FeatureId::GraphWeights => write!(f, "graph_weights"),
        }
    }
}

/// Multi-modal prediction for the target agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    /// One predicted position track per mixture component, each of length
    /// equal to the prediction horizon.
    pub modes: Vec<Vec<Point>>,
    pub mode_weights: Vec<f64>,
    pub selected_mode: usize,
}

impl PredictionOutput {
    pub fn selected(&self) -> &[Point] {
        &self.modes[self.selected_mode]
    }
}
