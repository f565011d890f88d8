//! Acceptance suite: nine criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no test harness). A reference model is trained
//! once with the default experiment config and shared by the criteria that
//! need it; its training time is reported separately from the criterion
//! runtimes. Exits nonzero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajsens_cli::config::{ExperimentConfig, Overrides};
use trajsens_cli::pipeline::{self, dominance};
use trajsens_core::attribution::{
    ade, depth_analysis, dominant_feature, epsilon_sweep, gradient_seed, group_dominates, percent_increase, quartiles,
    AnalysisOptions, QuartileSummary,
};
use trajsens_core::autodiff::{Real, Tape};
use trajsens_core::perturb::{apply, build_perturbation, Magnitude, PerturbKind, PerturbSpec};
use trajsens_core::planner::{brute_force_plan, check_plan, oracle_tolerance, plan, PlanProblem, Rect};
use trajsens_core::predictor::{elbo_loss, input_gradient, predict, ModeSelection, PredictorParams};
use trajsens_core::stats::{boxplot_summary, yeo_johnson, yeo_johnson_inverse};
use trajsens_core::types::{FeatureId, ScalarRef, SceneInput};

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; runtime {took:.1?} exceeds {limit:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            self.failures += 1;
        }
        println!(
            "{} criterion {n}: {name} ({detail}; {:.2}s)",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err < 1e-7 || err / analytic.abs().max(numeric.abs()) < 1e-3
}

/// Random expression over `inputs`, built from a seeded op stream so the
/// same expression evaluates on plain floats and on the tape.
fn expression<R: Real>(inputs: &[R], seed: u64) -> R {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = inputs.to_vec();
    for _ in 0..25 {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let c: f64 = rng.random_range(-2.0..2.0);
        pool.push(match rng.random_range(0..10) {
            0 => a + b,
            1 => a - b,
            2 => a * b,
            3 => a.tanh(),
            4 => (a * 0.4).exp(),
            5 => (a.square() + 0.1).ln().expect("positive"),
            6 => (a.square() + b.square() + 0.2).sqrt().expect("positive"),
            7 => a.div(b.square() + 0.5).expect("nonzero"),
            8 => R::affine(&[a, b], &[b, a], a.constant(c)),
            _ => -(a * c) + 0.3,
        });
    }
    R::sum(&pool[pool.len() - 5..])
}

fn gradient_correctness(params: &PredictorParams, scenes: &[SceneInput]) -> Outcome {
    let mut checked = 0;
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let tape = Tape::new();
        let xs = tape.vars(&x0);
        let g = tape.backward(expression(&xs, seed)).map_err(|e| e.to_string())?;
        for i in 0..x0.len() {
            let h = 1e-6;
            let (mut p, mut m) = (x0.clone(), x0.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (expression(&p, seed) - expression(&m, seed)) / (2.0 * h);
            check(
                close(g.wrt(xs[i]), fd),
                format!("expression {seed} input {i}: {} vs {fd}", g.wrt(xs[i])),
            )?;
        }
        checked += 1;
    }
    let mut scalars_checked = 0;
    for (k, scene) in scenes.iter().take(4).enumerate() {
        let seed = 1000 + k as u64;
        let grad = input_gradient(scene, params, seed).map_err(|e| e.to_string())?;
        let target = scene.target_index().expect("target");
        let mut refs: Vec<ScalarRef> = Vec::new();
        for step in 0..scene.history_len() {
            for d in 0..8 {
                refs.push(ScalarRef::State {
                    agent: target,
                    step,
                    dim: d,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            refs.push(ScalarRef::Pixel(rng.random_range(0..scene.image.pixels.len())));
        }
        refs.extend((0..scene.graph.edges.len()).map(ScalarRef::Weight));
        refs.extend((0..scene.graph.nodes.len()).map(ScalarRef::Presence));
        for r in refs {
            let x = scene.get(r);
            let h = 1e-5 * x.abs().max(1.0);
            let loss_at = |v: f64| {
                let mut s = scene.clone();
                s.set(r, v);
                elbo_loss(&s, params, seed).map(|l| l.total)
            };
            let fd =
                (loss_at(x + h).map_err(|e| e.to_string())? - loss_at(x - h).map_err(|e| e.to_string())?) / (2.0 * h);
            check(
                close(grad.get(r), fd),
                format!("scene {k} {r:?}: {} vs {fd}", grad.get(r)),
            )?;
            scalars_checked += 1;
        }
    }
    Ok(format!(
        "{checked} expressions, {scalars_checked} predictor scalars over 4 scenes"
    ))
}

fn fgsm_ascent(params: &PredictorParams, scenes: &[SceneInput], opts: &AnalysisOptions) -> Outcome {
    let mut ascended = 0;
    for s in scenes {
        let seed = gradient_seed(s, opts);
        let g = input_gradient(s, params, seed).map_err(|e| e.to_string())?;
        let spec = PerturbSpec::new(PerturbKind::Fgsm, FeatureId::Image, Magnitude::Absolute(1e-3));
        let p = build_perturbation(&spec, s, &opts.ranges, Some(&g)).map_err(|e| e.to_string())?;
        let attacked = apply(s, &p).map_err(|e| e.to_string())?;
        let before = elbo_loss(s, params, seed).map_err(|e| e.to_string())?.total;
        let after = elbo_loss(&attacked, params, seed).map_err(|e| e.to_string())?.total;
        if after >= before - 1e-6 {
            ascended += 1;
        }
    }
    let rate = ascended as f64 / scenes.len() as f64;
    check(
        scenes.len() >= 100 && rate >= 0.9,
        format!("loss did not decrease on {ascended}/{} scenes", scenes.len()),
    )?;
    Ok(format!(
        "loss did not decrease on {ascended}/{} scenes at epsilon 1e-3",
        scenes.len()
    ))
}

fn current_state_dominance(
    params: &PredictorParams,
    scenes: &[SceneInput],
    opts: &AnalysisOptions,
    step: usize,
) -> Outcome {
    let r = depth_analysis(scenes, params, PerturbKind::Constant, Magnitude::Fraction(0.5), opts)
        .map_err(|e| e.to_string())?;
    let d = dominance(&r, step).map_err(|e| e.to_string())?;
    let medians: Vec<String> = r
        .sets
        .iter()
        .filter(|s| d.current_group.contains(&s.feature))
        .map(|s| format!("{} {:.1}", s.feature, s.summary().map(|q| q.q2).unwrap_or(f64::NAN)))
        .collect();
    let next_best = r
        .sets
        .iter()
        .filter(|s| !d.current_group.contains(&s.feature))
        .filter_map(|s| s.summary().ok().map(|q| q.q3))
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        d.current_group_dominates,
        format!("group does not dominate; medians {medians:?}"),
    )?;
    Ok(format!(
        "{} scenes; group medians [{}]; largest other Q3 {next_best:.1}",
        scenes.len(),
        medians.join(", ")
    ))
}

fn image_susceptibility(params: &PredictorParams, scenes: &[SceneInput], opts: &AnalysisOptions) -> Outcome {
    let r = epsilon_sweep(scenes, params, &FeatureId::Image, &[0.01, 0.1], opts).map_err(|e| e.to_string())?;
    let m: Vec<f64> = r
        .sets
        .iter()
        .map(|s| s.summary().map(|q| q.q2))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    check(m[1] > m[0] && m[0] > 0.0, format!("medians {m:?}"))?;
    Ok(format!("median at 0.01 = {:.3}, at 0.1 = {:.3}", m[0], m[1]))
}

fn translation_equivariance(params: &PredictorParams, scenes: &[SceneInput]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let scene = &scenes[i % scenes.len()];
        let t = scene.target_index().expect("target");
        let last = scene.history_len() - 1;
        let (dx, dy) = (rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0));
        let mut shifted = scene.clone();
        let cur = &mut shifted.agents[t].history.states[last];
        cur.x += dx;
        cur.y += dy;
        let base = predict(scene, params, ModeSelection::MostLikely).map_err(|e| e.to_string())?;
        let moved = predict(&shifted, params, ModeSelection::MostLikely).map_err(|e| e.to_string())?;
        // The exact shift is what adding (dx, dy) to the unshifted output
        // gives after rounding the shifted input the same way.
        let (ex, ey) = (
            scene.agents[t].history.states[last].x,
            scene.agents[t].history.states[last].y,
        );
        let (sx, sy) = ((ex + dx) - ex, (ey + dy) - ey);
        check(
            base.selected_mode == moved.selected_mode,
            format!("shift {i}: selected mode changed"),
        )?;
        for (a, b) in base.modes.iter().flatten().zip(moved.modes.iter().flatten()) {
            worst = worst.max((b[0] - a[0] - sx).abs()).max((b[1] - a[1] - sy).abs());
        }
    }
    check(worst < 1e-9, format!("largest deviation {worst:e}"))?;
    Ok(format!("1000 shifts, largest deviation {worst:.1e} m"))
}

fn random_problem(rng: &mut ChaCha8Rng) -> PlanProblem {
    let t = rng.random_range(1..=4);
    let goal = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
    let predictions = (0..t)
        .map(|_| [rng.random_range(-35.0..35.0), rng.random_range(-35.0..35.0)])
        .collect();
    let mut free_space = vec![Rect::new(
        [rng.random_range(-70.0..-1.0), rng.random_range(-70.0..-1.0)],
        [rng.random_range(1.0..70.0), rng.random_range(1.0..70.0)],
    )];
    if rng.random_bool(0.5) {
        let a = [rng.random_range(-70.0..40.0), rng.random_range(-70.0..40.0)];
        free_space.push(Rect::new(
            a,
            [a[0] + rng.random_range(5.0..40.0), a[1] + rng.random_range(5.0..40.0)],
        ));
    }
    PlanProblem {
        start: [0.0, 0.0],
        goal,
        predictions,
        epsilon: 15.0,
        kappa: 16.5,
        free_space,
    }
}

fn planner_vs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut feasible, mut worst_gap) = (0, f64::NEG_INFINITY);
    for i in 0..25 {
        let p = random_problem(&mut rng);
        let oracle = brute_force_plan(&p, 1.0).map_err(|e| e.to_string())?;
        let solved = plan(&p).map_err(|e| e.to_string())?;
        if solved.feasible {
            let v = check_plan(&p, &solved.states);
            check(v.is_empty(), format!("problem {i}: constraint violations {v:?}"))?;
        }
        if oracle.feasible {
            check(solved.feasible, format!("problem {i}: oracle feasible, solver not"))?;
            let tol = oracle_tolerance(&p, &oracle, 1.0);
            let gap = solved.objective - oracle.objective;
            check(
                gap <= tol,
                format!(
                    "problem {i}: objective {} vs oracle {} (tolerance {tol})",
                    solved.objective, oracle.objective
                ),
            )?;
            worst_gap = worst_gap.max(gap);
            feasible += 1;
        }
    }
    Ok(format!(
        "25 problems, {feasible} feasible; largest solver-minus-oracle objective {worst_gap:.3}"
    ))
}

fn stop_pattern(cfg: &ExperimentConfig, params: &PredictorParams, opts: &AnalysisOptions) -> Outcome {
    let kappa = cfg.analysis.plan_demo.kappa;
    let records = pipeline::plan_demo(cfg, params, opts).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for (rec, _) in &records {
        let name = rec.attack.kind.name();
        check(
            rec.baseline.feasible && rec.baseline_displacements.iter().all(|d| *d >= 0.9 * kappa),
            format!("{name}: baseline displacements {:?}", rec.baseline_displacements),
        )?;
        check(
            rec.attacked.feasible
                && rec.attacked_displacements.len() >= 3
                && rec.attacked_displacements[..3].iter().all(|d| *d < 0.5),
            format!("{name}: attacked displacements {:?}", rec.attacked_displacements),
        )?;
        let max = rec.attacked_displacements[..3].iter().cloned().fold(0.0, f64::max);
        lines.push(format!("{name} attacked max {max:.3} m"));
    }
    check(records.len() == 2, "expected two attacks")?;
    Ok(format!("baseline {kappa} m per step; {}", lines.join(", ")))
}

fn statistics_suite() -> Outcome {
    let e = |x: trajsens_core::Error| x.to_string();
    check(
        ade(&[[0.0, 0.0], [3.0, 4.0]], &[[0.0, 0.0], [0.0, 0.0]]).map_err(e)? == 2.5,
        "ade",
    )?;
    check(percent_increase(2.0, 3.0).map_err(e)? == Some(0.5), "percent increase")?;
    check(
        percent_increase(2.0, 2.0).map_err(e)? == Some(0.0),
        "percent increase unchanged",
    )?;
    check(
        percent_increase(0.0, 1.0).map_err(e)?.is_none(),
        "zero baseline excluded",
    )?;
    check(percent_increase(-1.0, 1.0).is_err(), "negative ADE rejected")?;
    let q = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(e)?;
    check((q.q1, q.q2, q.q3) == (2.0, 3.0, 4.0), "quartiles of 1..5")?;
    check(quartiles(&[0.0, 10.0]).map_err(e)?.q2 == 5.0, "midpoint median")?;
    let s = |q1, q2, q3| QuartileSummary {
        q1,
        q2,
        q3,
        mean: q2,
        n: 3,
    };
    check(
        dominant_feature(&[s(2.0, 3.0, 4.0), s(1.0, 2.0, 3.0)]) == Some(0),
        "strict dominance",
    )?;
    check(
        dominant_feature(&[s(2.0, 3.0, 4.0), s(1.0, 3.0, 5.0)]).is_none(),
        "tie breaks dominance",
    )?;
    check(
        group_dominates(&[s(5.0, 6.0, 7.0), s(4.0, 5.0, 6.0), s(1.0, 2.0, 3.0)], &[0, 1]),
        "group dominance",
    )?;
    for x in [-5.0, -0.3, 0.0, 2.0, 1e6] {
        check(yeo_johnson(x, 1.0) == x, "lambda 1 is the identity")?;
    }
    check(
        (yeo_johnson(std::f64::consts::E - 1.0, 0.0) - 1.0).abs() < 1e-15,
        "log branch",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let l = rng.random_range(-2.0..=2.0);
        let (a, b) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo < hi {
            check(
                yeo_johnson(lo, l) < yeo_johnson(hi, l),
                format!("not increasing at {lo}, {hi}, {l}"),
            )?;
        }
        let x = rng.random_range(-100.0..100.0);
        let back = yeo_johnson_inverse(yeo_johnson(x, l), l);
        check((back - x).abs() < 1e-9, format!("round trip {x} at {l}: {back}"))?;
    }
    let b = boxplot_summary(&[1.0, 2.0, 3.0, 4.0, 1000.0]).map_err(e)?;
    check(b.outliers == vec![1000.0], "outlier retained")?;
    let b = boxplot_summary(&(1..=100).map(f64::from).collect::<Vec<_>>()).map_err(e)?;
    check(b.q2 == 50.5 && b.outliers.is_empty(), "uniform spread")?;
    Ok("ADE, percent increase, quartiles, dominance, Yeo-Johnson, outliers".into())
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism(checkpoint: &Path) -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    let mut tables: Vec<Vec<Vec<u8>>> = Vec::new();
    for (run, workers) in [1usize, 4, 4].into_iter().enumerate() {
        let cfg = trajsens_cli::config::resolve(
            "",
            &Overrides {
                out: Some(root.path().join(format!("run{run}"))),
                workers: Some(workers),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let dirs = pipeline::analyze(&cfg, Some(checkpoint)).map_err(|e| e.to_string())?;
        let dir = &dirs[0];
        tables.push(vec![
            read(&dir.join("summary.csv"))?,
            read(&dir.join("summary_transformed.csv"))?,
            read(&dir.join("result.json"))?,
        ]);
        let m = trajsens_cli::manifest::Manifest::read(&dir.join("manifest.json")).map_err(|e| e.to_string())?;
        hashes.push(m.config_hash);
    }
    check(
        tables.windows(2).all(|w| w[0] == w[1]),
        "result tables differ between runs",
    )?;
    check(hashes.windows(2).all(|w| w[0] == w[1]), "config hashes differ")?;
    Ok(format!(
        "3 analyze runs at 1, 4 and 4 workers, {} table bytes identical",
        tables[0][0].len()
    ))
}

fn main() {
    let cfg = ExperimentConfig::default();
    let setup = Instant::now();
    let train = pipeline::train_split(&cfg).expect("training scenes");
    let outcome = pipeline::train_model(&cfg, &train.scenes).expect("reference model trains");
    let eval = pipeline::eval_split(&cfg).expect("evaluation scenes").scenes;
    let opts = pipeline::analysis_options(&cfg, &eval).expect("analysis options");
    let params = outcome.params;
    let dir = tempfile::tempdir().expect("temp dir");
    let checkpoint = dir.path().join("model.json");
    params.save(&checkpoint).expect("checkpoint saved");
    let curve = &outcome.loss_curve;
    println!(
        "reference model: {} training scenes, loss {:.2} -> {:.2}, trained in {:.1}s",
        train.scenes.len(),
        curve[0],
        curve[curve.len() - 1],
        setup.elapsed().as_secs_f64()
    );

    let mut r = Report { failures: 0 };
    let secs = Duration::from_secs;
    r.run(1, "gradient correctness", secs(60), || {
        gradient_correctness(&params, &eval)
    });
    r.run(2, "FGSM ascent", secs(120), || fgsm_ascent(&params, &eval, &opts));
    r.run(3, "current-state dominance", secs(300), || {
        current_state_dominance(&params, &eval, &opts, cfg.predictor.history_steps)
    });
    r.run(4, "image susceptibility", secs(300), || {
        image_susceptibility(&params, &eval, &opts)
    });
    r.run(5, "translation equivariance", secs(60), || {
        translation_equivariance(&params, &eval)
    });
    r.run(6, "planner vs oracle", secs(120), planner_vs_oracle);
    r.run(7, "stop pattern", secs(60), || stop_pattern(&cfg, &params, &opts));
    r.run(8, "statistics suite", secs(10), statistics_suite);
    r.run(9, "determinism", secs(300), || determinism(&checkpoint));
    if r.failures > 0 {
        println!("{} of 9 criteria failed", r.failures);
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
