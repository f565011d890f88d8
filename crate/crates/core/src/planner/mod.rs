//! Goal-seeking planner that keeps a minimum distance from a predicted
//! obstacle track.
//!
//! With `s_0 = start` fixed, the planner chooses `s_1..s_T` to minimize
//! `sum_t |goal - s_t|^2` subject to, for every `t` in `1..=T`:
//! `|prediction_t - s_t| >= epsilon + SEPARATION_MARGIN`,
//! `|s_t - s_{t-1}|` at most `kappa` per coordinate, and `s_t` inside one of
//! the free-space rectangles.

mod demo;
mod oracle;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Point;

pub use demo::{demo_attack, DemoResult, PlanTemplate};
pub use oracle::{brute_force_plan, oracle_tolerance, MAX_ORACLE_CELLS};
pub use solver::{plan, plan_with, SolverOptions};

pub const DEFAULT_EPSILON: f64 = 15.0;
pub const DEFAULT_KAPPA: f64 = 16.5;
/// The separation constraint is strict; it is enforced with this margin.
pub const SEPARATION_MARGIN: f64 = 1e-6;
/// Slack for floating-point round-off in the step and free-space checks.
pub const CHECK_TOLERANCE: f64 = 1e-9;

/// Axis-aligned rectangle, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.contains_within(p, 0.0)
    }

    fn contains_within(&self, p: Point, tol: f64) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub start: Point,
    pub goal: Point,
    /// Predicted obstacle position at steps `1..=T`.
    pub predictions: Vec<Point>,
    pub epsilon: f64,
    pub kappa: f64,
    pub free_space: Vec<Rect>,
}

impl PlanProblem {
    pub fn horizon(&self) -> usize {
        self.predictions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::Validation(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.predictions.is_empty() {
            return Err(Error::Validation("plan horizon must be at least 1".into()));
        }
        let finite = |p: &Point| p.iter().all(|v| v.is_finite());
        if !finite(&self.start) || !finite(&self.goal) || !self.predictions.iter().all(finite) {
            return Err(Error::Validation("non-finite plan coordinates".into()));
        }
        if self.free_space.is_empty() {
            return Err(Error::Validation("free space is empty".into()));
        }
        for r in &self.free_space {
            if !finite(&r.min) || !finite(&r.max) || r.min[0] > r.max[0] || r.min[1] > r.max[1] {
                return Err(Error::Validation(format!("invalid free-space rectangle {r:?}")));
            }
        }
        if !self.in_free_space(self.start) {
            return Err(Error::Validation("start lies outside the free space".into()));
        }
        Ok(())
    }

    pub fn in_free_space(&self, p: Point) -> bool {
        self.free_space.iter().any(|r| r.contains(p))
    }

    /// `sum_t |goal - s_t|^2` over `states[1..]`.
    pub fn objective(&self, states: &[Point]) -> f64 {
        states
            .iter()
            .skip(1)
            .map(|s| (self.goal[0] - s[0]).powi(2) + (self.goal[1] - s[1]).powi(2))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// `s_0..s_T`; the first entry is the start.
    pub states: Vec<Point>,
    pub objective: f64,
    pub feasible: bool,
    /// For infeasible problems, the first step no search could satisfy.
    pub most_constrained_step: Option<usize>,
    pub iterations: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Length { expected: usize, got: usize },
    Start,
    Separation { step: usize, distance: f64 },
    StepBound { step: usize, delta: f64 },
    FreeSpace { step: usize },
    NonFinite { step: usize },
}

/// Every constraint `states` breaks, checked directly from the problem
/// definition: separation strictly greater than epsilon, per-coordinate
/// steps at most kappa, positions inside the free space.
pub fn check_plan(problem: &PlanProblem, states: &[Point]) -> Vec<Violation> {
    let t_max = problem.horizon();
    if states.len() != t_max + 1 {
        return vec![Violation::Length {
            expected: t_max + 1,
            got: states.len(),
        }];
    }
    let mut out = Vec::new();
    if states[0] != problem.start {
        out.push(Violation::Start);
    }
    for t in 1..=t_max {
        let s = states[t];
        if !s.iter().all(|v| v.is_finite()) {
            out.push(Violation::NonFinite { step: t });
            continue;
        }
        let o = problem.predictions[t - 1];
        let distance = (s[0] - o[0]).hypot(s[1] - o[1]);
        if !(distance > problem.epsilon) {
            out.push(Violation::Separation { step: t, distance });
        }
        let prev = states[t - 1];
        let delta = (s[0] - prev[0]).abs().max((s[1] - prev[1]).abs());
        if delta > problem.kappa + CHECK_TOLERANCE {
            out.push(Violation::StepBound { step: t, delta });
        }
        if !problem.free_space.iter().any(|r| r.contains_within(s, CHECK_TOLERANCE)) {
            out.push(Violation::FreeSpace { step: t });
        }
    }
    out
}
