//! Scene file format.
//!
//! One scene per JSON document:
//!
//! ```text
//! {
//!   "format": "trajsens-scene",
//!   "version": 1,
//!   "dt": 0.5,
//!   "agents": { "<id>": [[x, y, vx, vy, ax, ay, heading, angular_velocity], ...], ... },
//!   "image": { "w": 16, "h": 16, "l": 3, "pixels": [ ... ] },
//!   "graph": {
//!     "nodes": ["<id>", ...],
//!     "edges": [["<src>", "<dst>", weight], ...],
//!     "presence": [1.0, ...]
//!   },
//!   "target_agent": "<id>",
//!   "ground_truth": [[x, y], ...]
//! }
//! ```
//!
//! Agent histories are oldest first; the last entry is the current state.
//! `pixels` is row-major with channels innermost: pixel `(col, row, c)` is at
//! `(row * w + col) * l + c`. `presence` is optional and defaults to 1.0 per
//! node. Numbers are written in shortest round-trip decimal form, so
//! `load(save(scene)) == scene` exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Agent, AgentState, Edge, ImageMap, Point, SceneGraph, SceneInput, Trajectory, STATE_DIM};

pub const SCENE_FORMAT: &str = "trajsens-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    format: String,
    version: u32,
    dt: f64,
    agents: BTreeMap<String, Vec<[f64; STATE_DIM]>>,
    image: ImageFile,
    graph: GraphFile,
    target_agent: String,
    ground_truth: Option<Vec<Point>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageFile {
    w: usize,
    h: usize,
    l: usize,
    pixels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<(String, String, f64)>,
    #[serde(default)]
    presence: Option<Vec<f64>>,
}

pub fn scene_to_string(scene: &SceneInput) -> Result<String> {
    let file = SceneFile {
        format: SCENE_FORMAT.into(),
        version: SCENE_VERSION,
        dt: scene.dt(),
        agents: scene
            .agents
            .iter()
            .map(|a| (a.id.clone(), a.history.states.iter().map(|s| s.to_array()).collect()))
            .collect(),
        image: ImageFile {
            w: scene.image.width,
            h: scene.image.height,
            l: scene.image.channels,
            pixels: scene.image.pixels.clone(),
        },
        graph: GraphFile {
            nodes: scene.graph.nodes.clone(),
            edges: scene
                .graph
                .edges
                .iter()
                .map(|e| (e.source.clone(), e.target.clone(), e.weight))
                .collect(),
            presence: Some(scene.graph.presence.clone()),
        },
        target_agent: scene.target_agent.clone(),
        ground_truth: Some(scene.ground_truth.clone()),
    };
    serde_json::to_string(&file).map_err(|e| Error::Parse {
        field: "<scene>".into(),
        message: e.to_string(),
    })
}

/// Names the offending field: the JSON path serde stopped at, extended with
/// the field name for "missing field" errors.
fn parse_error(err: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = err.path().to_string();
    let message = err.inner().to_string();
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    let field = match (missing, path.as_str()) {
        (Some(f), ".") => f.to_string(),
        (Some(f), p) => format!("{p}.{f}"),
        (None, p) => p.to_string(),
    };
    Error::Parse { field, message }
}

pub fn scene_from_str(text: &str) -> Result<SceneInput> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: SceneFile = serde_path_to_error::deserialize(&mut de).map_err(parse_error)?;
    if file.format != SCENE_FORMAT {
        return Err(Error::Validation(format!("unexpected format tag `{}`", file.format)));
    }
    if file.version != SCENE_VERSION {
        return Err(Error::Validation(format!("unsupported scene version {}", file.version)));
    }
    let ground_truth = file
        .ground_truth
        .ok_or_else(|| Error::Validation("missing field `ground_truth`".into()))?;
    let agents = file
        .agents
        .into_iter()
        .map(|(id, rows)| {
            let states = rows.into_iter().map(AgentState::from_array).collect();
            Ok(Agent {
                history: Trajectory::new(file.dt, states).map_err(|e| e.context(format!("agent `{id}`")))?,
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let presence = file.graph.presence.unwrap_or_else(|| vec![1.0; file.graph.nodes.len()]);
    let graph = SceneGraph {
        nodes: file.graph.nodes,
        edges: file
            .graph
            .edges
            .into_iter()
            .map(|(source, target, weight)| Edge { source, target, weight })
            .collect(),
        presence,
    };
    let image = ImageMap {
        width: file.image.w,
        height: file.image.h,
        channels: file.image.l,
        pixels: file.image.pixels,
    };
    SceneInput::new(agents, image, graph, file.target_agent, ground_truth)
}

pub fn save_scene(scene: &SceneInput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = scene_to_string(scene)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneInput> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scene_from_str(&text).map_err(|e| e.context(path.display().to_string()))
}
