//! Multi-start local search. Each step's position is re-optimized exactly
//! with its neighbors held fixed (block coordinate descent); starts come
//! from a greedy pass toward the goal and greedy passes toward jittered
//! targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::seeding::derive_seed;
use crate::types::Point;

use super::{PlanProblem, PlanResult, Rect, SEPARATION_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Jittered starts in addition to the plain greedy one.
    pub restarts: usize,
    /// Standard deviation of target jitter, in units of kappa.
    pub jitter: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            jitter: 1.5,
            max_sweeps: 200,
            seed: 0,
        }
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn clamp(p: Point, lo: Point, hi: Point) -> Point {
    [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
}

/// Closest point to `target` within `boxes` (intersection, as min/max),
/// inside some free-space rectangle, and at least `radius` from `center`.
fn best_point(target: Point, lo: Point, hi: Point, free: &[Rect], center: Point, radius: f64) -> Option<Point> {
    // Candidates are accepted with a slightly larger radius so round-off
    // never lands them inside the forbidden disk.
    let r = radius * (1.0 + 1e-12) + 1e-9;
    let ok = |p: Point, a: Point, b: Point| {
        p[0] >= a[0] && p[0] <= b[0] && p[1] >= a[1] && p[1] <= b[1] && dist2(p, center) >= radius * radius
    };
    let mut best: Option<(f64, Point)> = None;
    let mut consider = |p: Point, a: Point, b: Point| {
        if ok(p, a, b) {
            let d = dist2(p, target);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
    };
    for rect in free {
        let a = [lo[0].max(rect.min[0]), lo[1].max(rect.min[1])];
        let b = [hi[0].min(rect.max[0]), hi[1].min(rect.max[1])];
        if a[0] > b[0] || a[1] > b[1] {
            continue;
        }
        consider(clamp(target, a, b), a, b);
        let (dx, dy) = (target[0] - center[0], target[1] - center[1]);
        let n = dx.hypot(dy);
        if n > 0.0 {
            consider([center[0] + r * dx / n, center[1] + r * dy / n], a, b);
        } else {
            for k in 0..8 {
                let th = k as f64 * std::f64::consts::FRAC_PI_4;
                consider([center[0] + r * th.cos(), center[1] + r * th.sin()], a, b);
            }
        }
        let corners = [[a[0], a[1]], [b[0], a[1]], [b[0], b[1]], [a[0], b[1]]];
        for c in corners {
            consider(c, a, b);
        }
        for axis in 0..2 {
            let other = 1 - axis;
            for fixed in [a[axis], b[axis]] {
                // Edge: coordinate `axis` fixed, `other` ranging over [a, b].
                let mut on_edge = |v: f64| {
                    let mut p = [0.0; 2];
                    p[axis] = fixed;
                    p[other] = v.clamp(a[other], b[other]);
                    consider(p, a, b);
                };
                on_edge(target[other]);
                let off = fixed - center[axis];
                let h2 = r * r - off * off;
                if h2 >= 0.0 {
                    let h = h2.sqrt();
                    on_edge(center[other] + h);
                    on_edge(center[other] - h);
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Feasible region of step `t` (1-based) given its neighbors.
fn step_box(p: &PlanProblem, prev: Point, next: Option<Point>) -> (Point, Point) {
    let mut lo = [prev[0] - p.kappa, prev[1] - p.kappa];
    let mut hi = [prev[0] + p.kappa, prev[1] + p.kappa];
    if let Some(n) = next {
        for i in 0..2 {
            lo[i] = lo[i].max(n[i] - p.kappa);
            hi[i] = hi[i].min(n[i] + p.kappa);
        }
    }
    (lo, hi)
}

fn radius(p: &PlanProblem) -> f64 {
    p.epsilon + SEPARATION_MARGIN
}

/// Greedy pass toward per-step targets; `Err(t)` if step `t` has no
/// feasible position.
fn greedy(p: &PlanProblem, targets: &[Point]) -> std::result::Result<Vec<Point>, usize> {
    let mut states = vec![p.start];
    for t in 1..=p.horizon() {
        let (lo, hi) = step_box(p, states[t - 1], None);
        match best_point(targets[t - 1], lo, hi, &p.free_space, p.predictions[t - 1], radius(p)) {
            Some(s) => states.push(s),
            None => return Err(t),
        }
    }
    Ok(states)
}

/// Re-optimizes each step with its neighbors fixed until no step moves.
fn descend(p: &PlanProblem, states: &mut [Point], max_sweeps: usize) -> usize {
    let t_max = p.horizon();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for t in 1..=t_max {
            let next = (t < t_max).then(|| states[t + 1]);
            let (lo, hi) = step_box(p, states[t - 1], next);
            if let Some(s) = best_point(p.goal, lo, hi, &p.free_space, p.predictions[t - 1], radius(p)) {
                if dist2(s, p.goal) < dist2(states[t], p.goal) - 1e-12 {
                    states[t] = s;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    sweeps
}

pub fn plan(problem: &PlanProblem) -> Result<PlanResult> {
    plan_with(problem, &SolverOptions::default())
}

struct Attempt {
    states: std::result::Result<Vec<Point>, usize>,
    sweeps: usize,
}

pub fn plan_with(problem: &PlanProblem, opts: &SolverOptions) -> Result<PlanResult> {
    problem.validate()?;
    let t_max = problem.horizon();
    let attempts: Vec<Attempt> = (0..=opts.restarts)
        .into_par_iter()
        .map(|r| {
            let targets: Vec<Point> = if r == 0 {
                vec![problem.goal; t_max]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "restart", r as u64));
                let n = Normal::new(0.0, opts.jitter * problem.kappa).expect("finite jitter");
                (0..t_max)
                    .map(|_| {
                        [
                            problem.goal[0] + n.sample(&mut rng),
                            problem.goal[1] + n.sample(&mut rng),
                        ]
                    })
                    .collect()
            };
            match greedy(problem, &targets) {
                Ok(mut s) => {
                    let sweeps = descend(problem, &mut s, opts.max_sweeps);
                    Attempt { states: Ok(s), sweeps }
                }
                Err(t) => Attempt {
                    states: Err(t),
                    sweeps: 0,
                },
            }
        })
        .collect();
    let iterations = attempts.iter().map(|a| a.sweeps).sum();
    let best = attempts
        .iter()
        .filter_map(|a| a.states.as_ref().ok())
        .map(|s| (problem.objective(s), s))
        .fold(None::<(f64, &Vec<Point>)>, |acc, (o, s)| match acc {
            Some((bo, _)) if bo <= o => acc,
            _ => Some((o, s)),
        });
    Ok(match best {
        Some((objective, states)) => PlanResult {
            states: states.clone(),
            objective,
            feasible: true,
            most_constrained_step: None,
            iterations,
            restarts: opts.restarts,
        },
        None => {
            let step = attempts
                .iter()
                .filter_map(|a| a.states.as_ref().err().copied())
                .max()
                .unwrap_or(1);
            let states = vec![problem.start; t_max + 1];
            PlanResult {
                objective: problem.objective(&states),
                states,
                feasible: false,
                most_constrained_step: Some(step),
                iterations,
                restarts: opts.restarts,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::check_plan;

    fn road() -> Vec<Rect> {
        vec![Rect::new([-50.0, -2.0], [500.0, 2.0])]
    }

    #[test]
    fn free_road_advances_kappa_per_step() {
        let p = PlanProblem {
            start: [0.0, 0.0],
            goal: [100.0, 0.0],
            predictions: vec![[1000.0, 0.0]; 4],
            epsilon: 15.0,
            kappa: 16.5,
            free_space: road(),
        };
        let r = plan(&p).unwrap();
        assert!(r.feasible);
        for (t, s) in r.states.iter().enumerate() {
            assert!((s[0] - 16.5 * t as f64).abs() < 1e-9 && s[1].abs() < 1e-9, "{s:?}");
        }
        let expected: f64 = (1..=4).map(|t| (100.0 - 16.5 * t as f64).powi(2)).sum();
        assert!((r.objective - expected).abs() < 1e-6);
    }

    #[test]
    fn goal_at_start_stays() {
        let p = PlanProblem {
            start: [3.0, 1.0],
            goal: [3.0, 1.0],
            predictions: vec![[300.0, 0.0]; 3],
            epsilon: 15.0,
            kappa: 16.5,
            free_space: road(),
        };
        let r = plan(&p).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!(r.states.iter().all(|s| *s == [3.0, 1.0]));
    }

    #[test]
    fn blocked_lane_holds_position() {
        let p = PlanProblem {
            start: [0.0, 0.0],
            goal: [300.0, 0.0],
            predictions: vec![[15.2, 0.0]; 4],
            epsilon: 15.0,
            kappa: 16.5,
            free_space: vec![Rect::new([-50.0, -0.25], [500.0, 0.25])],
        };
        let r = plan(&p).unwrap();
        assert!(r.feasible);
        assert!(check_plan(&p, &r.states).is_empty());
        for w in r.states.windows(2) {
            assert!(dist2(w[0], w[1]).sqrt() < 0.5, "{:?}", r.states);
        }
    }

    #[test]
    fn enclosed_start_is_infeasible() {
        let p = PlanProblem {
            start: [0.0, 0.0],
            goal: [300.0, 0.0],
            predictions: vec![[0.0, 0.0]; 2],
            epsilon: 15.0,
            kappa: 16.5,
            free_space: vec![Rect::new([-10.0, -2.0], [10.0, 2.0])],
        };
        let r = plan(&p).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.most_constrained_step, Some(1));
    }
}
