use proptest::prelude::*;
use trajsens_core::attribution::{attribute_scene, AnalysisOptions};
use trajsens_core::perturb::{apply, build_perturbation, Magnitude, PerturbKind, PerturbSpec, Perturbation};
use trajsens_core::predictor::{predict, ModeSelection, PredictorConfig, PredictorParams};
use trajsens_core::ranges::FeatureRanges;
use trajsens_core::scenario::{generate_scene, ScenarioConfig};
use trajsens_core::stats::{fit_lambda, yeo_johnson, yeo_johnson_inverse};
use trajsens_core::types::{FeatureId, SceneInput};

fn scene(seed: u64) -> SceneInput {
    generate_scene(seed, &ScenarioConfig::default()).unwrap()
}

fn model(seed: u64) -> PredictorParams {
    PredictorParams::init(PredictorConfig::default(), seed).unwrap()
}

fn features() -> impl Strategy<Value = FeatureId> {
    prop_oneof![
        Just(FeatureId::StateHistoryAll),
        Just(FeatureId::Image),
        Just(FeatureId::GraphNodes),
        Just(FeatureId::GraphWeights),
    ]
}

/// Multiples of 1/64 in [-8, 8], whose sums are exact in f64.
fn dyadic_perturbation(s: &SceneInput, target: &FeatureId, seed: u64) -> Perturbation {
    let mut p = Perturbation::zeros(s, target.clone()).unwrap();
    let mut state = seed | 1;
    for v in &mut p.values {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        *v = f64::from((state % 1025) as i32 - 512) / 64.0;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbations_compose_additively(scene_seed in 0u64..50, target in features(), a in 1u64..1000, b in 1u64..1000) {
        let s = scene(scene_seed);
        let p1 = dyadic_perturbation(&s, &target, a);
        let p2 = dyadic_perturbation(&s, &target, b);
        let sum = Perturbation {
            target: target.clone(),
            values: p1.values.iter().zip(&p2.values).map(|(x, y)| x + y).collect(),
        };
        // Zero the feature first so every intermediate value is dyadic and
        // both paths are exact.
        let neg = target.scalars(&s).unwrap().iter().map(|r| -s.get(*r)).collect();
        let zeroed = apply(&s, &Perturbation { target: target.clone(), values: neg }).unwrap();
        let twice = apply(&apply(&zeroed, &p1).unwrap(), &p2).unwrap();
        prop_assert_eq!(twice, apply(&zeroed, &sum).unwrap());
    }

    #[test]
    fn predictions_follow_position_shifts(scene_seed in 0u64..50, model_seed in 0u64..8, dx in -500.0f64..500.0, dy in -500.0f64..500.0) {
        let s = scene(scene_seed);
        let params = model(model_seed);
        let t = s.target_index().unwrap();
        let mut shifted = s.clone();
        for st in &mut shifted.agents[t].history.states {
            st.x += dx;
            st.y += dy;
        }
        let last = s.history_len() - 1;
        let cur = s.agents[t].history.states[last];
        let (sx, sy) = ((cur.x + dx) - cur.x, (cur.y + dy) - cur.y);
        let a = predict(&s, &params, ModeSelection::MostLikely).unwrap();
        let b = predict(&shifted, &params, ModeSelection::MostLikely).unwrap();
        prop_assert_eq!(a.selected_mode, b.selected_mode);
        for (p, q) in a.modes.iter().flatten().zip(b.modes.iter().flatten()) {
            prop_assert!((q[0] - p[0] - sx).abs() < 1e-9 && (q[1] - p[1] - sy).abs() < 1e-9);
        }
    }

    #[test]
    fn yeo_johnson_is_increasing(lambda in -2.0f64..=2.0, a in -1e4f64..1e4, b in -1e4f64..1e4) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(yeo_johnson(lo, lambda) < yeo_johnson(hi, lambda));
    }

    #[test]
    fn yeo_johnson_round_trips(lambda in -2.0f64..=2.0, x in -1e3f64..1e3) {
        let y = yeo_johnson(x, lambda);
        let back = yeo_johnson_inverse(y, lambda);
        // Where the transform flattens, one ulp of y spans many ulps of x.
        let slope = if x >= 0.0 { (x + 1.0).powf(lambda - 1.0) } else { (1.0 - x).powf(1.0 - lambda) };
        let tol = 1e-9_f64.max(16.0 * f64::EPSILON * y.abs().max(1.0) / slope);
        prop_assert!((back - x).abs() <= tol, "x {} back {} tol {}", x, back, tol);
    }

    #[test]
    fn fitted_transform_preserves_ranks(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let fit = fit_lambda(&values).unwrap();
        let t: Vec<f64> = values.iter().map(|v| yeo_johnson(*v, fit.lambda)).collect();
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(t[i] < t[j]);
                }
            }
        }
    }

    #[test]
    fn deterministic_scores_ignore_the_analysis_seed(scene_seed in 0u64..50, a in any::<u64>(), b in any::<u64>()) {
        let s = scene(scene_seed);
        let params = model(1);
        let specs: Vec<PerturbSpec> = [PerturbKind::Occlusion, PerturbKind::Constant]
            .into_iter()
            .flat_map(|k| [FeatureId::StateHistoryAll, FeatureId::Image].map(|f| PerturbSpec::new(k, f, Magnitude::Fraction(0.5))))
            .collect();
        let with_seed = |seed| attribute_scene(&s, &params, &specs, &AnalysisOptions { seed, ..Default::default() }).unwrap();
        prop_assert_eq!(with_seed(a), with_seed(b));
    }
}

#[test]
fn node_occlusion_matches_weight_occlusion() {
    let params = model(3);
    let ranges = FeatureRanges::fixed();
    for seed in 0..20 {
        let s = scene(seed);
        let occluded = |target: FeatureId| {
            let spec = PerturbSpec::new(PerturbKind::Occlusion, target, Magnitude::Fraction(0.5));
            let p = build_perturbation(&spec, &s, &ranges, None).unwrap();
            predict(&apply(&s, &p).unwrap(), &params, ModeSelection::MostLikely).unwrap()
        };
        assert_eq!(occluded(FeatureId::GraphNodes), occluded(FeatureId::GraphWeights));
    }
}

#[test]
fn sampled_prediction_depends_only_on_its_seed() {
    let s = scene(4);
    let params = model(2);
    let a = predict(&s, &params, ModeSelection::Sample(7)).unwrap();
    let b = predict(&s, &params, ModeSelection::Sample(7)).unwrap();
    let c = predict(&s, &params, ModeSelection::Sample(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.modes, c.modes);
}
