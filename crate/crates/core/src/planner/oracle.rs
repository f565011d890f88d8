//! Exhaustive search over a lattice, used to check the continuous solver.
//!
//! Positions are restricted to `start + grid_step * (i, j)` for integers
//! `i, j`, and each step moves at most `floor(kappa / grid_step)` cells per
//! coordinate. Dynamic programming over steps finds the exact optimum of
//! this discretized problem.

use crate::error::{Error, Result};
use crate::types::Point;

use super::{PlanProblem, PlanResult, SEPARATION_MARGIN};

/// Upper bound on `T * cells * (2M + 1)`, the work of one search.
pub const MAX_ORACLE_CELLS: u128 = 2_000_000_000;

/// For each index, the minimum of `values` over `[k - m, k + m]` and its
/// first position.
fn window_min(values: &[f64], stride: usize, len: usize, m: usize, out: &mut [(f64, usize)], offset: usize) {
    for (k, slot) in out.iter_mut().enumerate().take(len) {
        let lo = k.saturating_sub(m);
        let hi = (k + m).min(len - 1);
        let mut best = (f64::INFINITY, usize::MAX);
        for q in lo..=hi {
            let v = values[offset + q * stride];
            if v < best.0 {
                best = (v, q);
            }
        }
        *slot = best;
    }
}

pub fn brute_force_plan(problem: &PlanProblem, grid_step: f64) -> Result<PlanResult> {
    problem.validate()?;
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return Err(Error::Validation(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let t_max = problem.horizon();
    let m = (problem.kappa / grid_step + 1e-9).floor() as usize;
    let reach = t_max * m;
    let n = 2 * reach + 1;
    let work = t_max as u128 * (n as u128).pow(2) * (2 * m as u128 + 1) * 2;
    if work > MAX_ORACLE_CELLS {
        return Err(Error::SearchSpace {
            states: work,
            bound: MAX_ORACLE_CELLS,
        });
    }
    let pos = |i: usize, j: usize| -> Point {
        [
            problem.start[0] + grid_step * (i as f64 - reach as f64),
            problem.start[1] + grid_step * (j as f64 - reach as f64),
        ]
    };
    let min_sep = problem.epsilon + SEPARATION_MARGIN;
    let mut cost = vec![f64::INFINITY; n * n];
    cost[reach * n + reach] = 0.0;
    // parents[t][cell] = predecessor cell of `cell` at step t.
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(t_max);
    let mut rows = vec![(f64::INFINITY, 0usize); n * n];
    let mut col = vec![(f64::INFINITY, 0usize); n];
    let mut first_dead = None;
    for t in 1..=t_max {
        // Minimum along j within each row i.
        for i in 0..n {
            window_min(&cost, 1, n, m, &mut rows[i * n..(i + 1) * n], i * n);
        }
        let row_vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let obstacle = problem.predictions[t - 1];
        let mut next = vec![f64::INFINITY; n * n];
        let mut parent = vec![usize::MAX; n * n];
        for j in 0..n {
            window_min(&row_vals, n, n, m, &mut col, j);
            for i in 0..n {
                let (v, pi) = col[i];
                if !v.is_finite() {
                    continue;
                }
                let p = pos(i, j);
                if (p[0] - obstacle[0]).hypot(p[1] - obstacle[1]) < min_sep || !problem.in_free_space(p) {
                    continue;
                }
                let pj = rows[pi * n + j].1;
                next[i * n + j] = v + (problem.goal[0] - p[0]).powi(2) + (problem.goal[1] - p[1]).powi(2);
                parent[i * n + j] = pi * n + pj;
            }
        }
        if first_dead.is_none() && next.iter().all(|v| !v.is_finite()) {
            first_dead = Some(t);
        }
        cost = next;
        parents.push(parent);
    }
    let best = cost
        .iter()
        .enumerate()
        .fold(None::<(f64, usize)>, |acc, (k, &v)| match acc {
            Some((bv, _)) if bv <= v => acc,
            _ if v.is_finite() => Some((v, k)),
            _ => acc,
        });
    Ok(match best {
        Some((_, mut cell)) => {
            let mut states = vec![problem.start; t_max + 1];
            for t in (1..=t_max).rev() {
                states[t] = pos(cell / n, cell % n);
                cell = parents[t - 1][cell];
            }
            PlanResult {
                objective: problem.objective(&states),
                states,
                feasible: true,
                most_constrained_step: None,
                iterations: t_max,
                restarts: 0,
            }
        }
        None => {
            let states = vec![problem.start; t_max + 1];
            PlanResult {
                objective: problem.objective(&states),
                states,
                feasible: false,
                most_constrained_step: first_dead,
                iterations: t_max,
                restarts: 0,
            }
        }
    })
}

/// Objective slack for comparing a continuous plan with a lattice optimum:
/// moving each planned point by up to one cell diagonal changes its squared
/// goal distance by at most `2 d h + h^2` with `h = grid_step * sqrt(2)`.
pub fn oracle_tolerance(problem: &PlanProblem, oracle: &PlanResult, grid_step: f64) -> f64 {
    let h = grid_step * std::f64::consts::SQRT_2;
    oracle
        .states
        .iter()
        .skip(1)
        .map(|s| {
            let d = (problem.goal[0] - s[0]).hypot(problem.goal[1] - s[1]);
            2.0 * d * h + h * h
        })
        .sum()
}
