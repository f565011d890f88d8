//! Per-feature value ranges used to normalize perturbation magnitudes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dim, ScalarRef, SceneInput, STATE_DIM};

/// Fixed ranges for position, velocity, acceleration, heading, angular
/// velocity, image intensity and edge weight.
pub const FIXED_POSITION_RANGE: f64 = 80.0;
pub const FIXED_VELOCITY_RANGE: f64 = 30.0;
pub const FIXED_ACCELERATION_RANGE: f64 = 35.0;
pub const FIXED_HEADING_RANGE: f64 = 7.0;
pub const FIXED_ANGULAR_VELOCITY_RANGE: f64 = 5.0;
pub const FIXED_IMAGE_RANGE: f64 = 1.0;
pub const FIXED_WEIGHT_RANGE: f64 = 10.0;
/// Node presence is an indicator in [0, 1].
pub const NODE_RANGE: f64 = 1.0;

/// Ranges below this are treated as zero.
const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanges {
    pub state: [f64; STATE_DIM],
    pub image: f64,
    pub weight: f64,
    pub node: f64,
}

impl FeatureRanges {
    pub fn fixed() -> Self {
        let mut state = [0.0; STATE_DIM];
        state[dim::X] = FIXED_POSITION_RANGE;
        state[dim::Y] = FIXED_POSITION_RANGE;
        state[dim::VX] = FIXED_VELOCITY_RANGE;
        state[dim::VY] = FIXED_VELOCITY_RANGE;
        state[dim::AX] = FIXED_ACCELERATION_RANGE;
        state[dim::AY] = FIXED_ACCELERATION_RANGE;
        state[dim::HEADING] = FIXED_HEADING_RANGE;
        state[dim::ANGULAR_VELOCITY] = FIXED_ANGULAR_VELOCITY_RANGE;
        Self {
            state,
            image: FIXED_IMAGE_RANGE,
            weight: FIXED_WEIGHT_RANGE,
            node: NODE_RANGE,
        }
    }

    pub fn of(&self, r: ScalarRef) -> f64 {
        match r {
            ScalarRef::State { dim, .. } => self.state[dim],
            ScalarRef::Pixel(_) => self.image,
            ScalarRef::Weight(_) => self.weight,
            ScalarRef::Presence(_) => self.node,
        }
    }

    pub fn is_degenerate(&self, r: ScalarRef) -> bool {
        self.of(r) < DEGENERATE_EPS
    }

    /// Names of every zero-width range.
    pub fn degenerate(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..STATE_DIM)
            .filter(|&d| self.state[d] < DEGENERATE_EPS)
            .map(|d| dim::NAMES[d].to_string())
            .collect();
        for (name, v) in [("image", self.image), ("weight", self.weight), ("node", self.node)] {
            if v < DEGENERATE_EPS {
                out.push(name.into());
            }
        }
        out
    }
}

fn span(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() && hi.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Max minus min over the dataset, per state dimension (all agents and
/// steps), over all pixels, and over all edge weights. With `use_fixed` the
/// fixed ranges are returned instead (the dataset is still required to be
/// nonempty).
pub fn compute_ranges(dataset: &[SceneInput], use_fixed: bool) -> Result<FeatureRanges> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if use_fixed {
        return Ok(FeatureRanges::fixed());
    }
    let mut state = [0.0; STATE_DIM];
    for (d, slot) in state.iter_mut().enumerate() {
        *slot = span(
            dataset
                .iter()
                .flat_map(|s| s.agents.iter())
                .flat_map(|a| a.history.states.iter())
                .map(|st| st.get(d)),
        );
    }
    Ok(FeatureRanges {
        state,
        image: span(dataset.iter().flat_map(|s| s.image.pixels.iter().copied())),
        weight: span(dataset.iter().flat_map(|s| s.graph.edges.iter().map(|e| e.weight))),
        node: NODE_RANGE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_dataset, generate_scene, ScenarioConfig};

    #[test]
    fn fixed_position_range() {
        let d = generate_dataset(0, 2, &ScenarioConfig::default()).unwrap();
        let r = compute_ranges(&d, true).unwrap();
        assert_eq!(r.state[dim::X], 80.0);
        assert_eq!(r.state[dim::VX], 30.0);
        assert_eq!(r.weight, 10.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(compute_ranges(&[], false), Err(Error::Empty(_))));
    }

    fn with_x(base: &SceneInput, x: f64) -> SceneInput {
        let mut s = base.clone();
        for a in &mut s.agents {
            for st in &mut a.history.states {
                st.x = x;
            }
        }
        s
    }

    #[test]
    fn constant_positions_are_degenerate() {
        let base = generate_scene(0, &ScenarioConfig::default()).unwrap();
        let r = compute_ranges(&[with_x(&base, 3.0)], false).unwrap();
        assert_eq!(r.state[dim::X], 0.0);
        assert!(r.degenerate().contains(&"x".to_string()));
    }

    #[test]
    fn two_scene_span() {
        let base = generate_scene(0, &ScenarioConfig::default()).unwrap();
        let r = compute_ranges(&[with_x(&base, 0.0), with_x(&base, 50.0)], false).unwrap();
        assert_eq!(r.state[dim::X], 50.0);
    }

    #[test]
    fn permutation_invariant() {
        let mut d = generate_dataset(4, 5, &ScenarioConfig::default()).unwrap();
        let a = compute_ranges(&d, false).unwrap();
        d.reverse();
        d.swap(0, 2);
        assert_eq!(compute_ranges(&d, false).unwrap(), a);
    }
}
