//! Reference latent-variable trajectory predictor.
//!
//! The encoder sees the target agent's velocity, acceleration, heading and
//! angular-velocity history (never positions), 4x4 patch averages of the
//! image, and the weighted current states of agents with edges into the
//! target. It outputs a diagonal Gaussian over the latent `z`. The decoder
//! maps `z` and the current velocity to `K` modes, each with per-step
//! actions, log-variances and a logit; actions are integrated from the
//! current position and velocity, so predictions shift exactly with the
//! current position.

mod model;
mod params;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::types::{dim, AgentState, PredictionOutput, ScalarRef, SceneInput, STATE_DIM};

pub use model::VARIANCE_FLOOR;
use model::{Net, SceneVars};
pub use params::{DynamicsMode, PredictorConfig, PredictorParams, PARAMS_FORMAT, PARAMS_VERSION};
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    /// Latent mean, highest-weight mode.
    MostLikely,
    /// Latent sampled with the given seed, highest-weight mode.
    Sample(u64),
}

/// Diagonal Gaussian over the latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Negative ELBO: `reconstruction + kl_weight * kl`.
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    /// Some decoded variance fell below [`VARIANCE_FLOOR`] and was clamped.
    pub variance_floored: bool,
}

/// Gradient of the total loss with respect to every scene scalar, laid out
/// like the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradient {
    pub states: Vec<Vec<[f64; STATE_DIM]>>,
    pub pixels: Vec<f64>,
    pub weights: Vec<f64>,
    pub presence: Vec<f64>,
}

impl SceneGradient {
    pub fn get(&self, r: ScalarRef) -> f64 {
        match r {
            ScalarRef::State { agent, step, dim } => self.states[agent][step][dim],
            ScalarRef::Pixel(i) => self.pixels[i],
            ScalarRef::Weight(e) => self.weights[e],
            ScalarRef::Presence(n) => self.presence[n],
        }
    }
}

impl PredictorParams {
    fn net<'a, R>(&'a self, w: &'a [R]) -> Net<'a, R> {
        Net {
            cfg: &self.config,
            layout: &self.layout,
            w,
        }
    }

    fn check_scene(&self, scene: &SceneInput, need_truth: bool) -> Result<()> {
        scene.validate_perturbed()?;
        let c = &self.config;
        if scene.history_len() != c.history_steps + 1 {
            return Err(Error::DimensionMismatch(format!(
                "scene history has {} steps, model expects {}",
                scene.history_len(),
                c.history_steps + 1
            )));
        }
        let img = &scene.image;
        if (img.width, img.height, img.channels) != (c.image_width, c.image_height, c.image_channels) {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{}x{}, model expects {}x{}x{}",
                img.width, img.height, img.channels, c.image_width, c.image_height, c.image_channels
            )));
        }
        if need_truth && scene.horizon() != c.horizon {
            return Err(Error::DimensionMismatch(format!(
                "ground truth has {} steps, model horizon is {}",
                scene.horizon(),
                c.horizon
            )));
        }
        Ok(())
    }

    fn sample_noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.config.latent)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

fn current_of<R: Copy>(states: &[[R; STATE_DIM]]) -> [R; 4] {
    let s = states[states.len() - 1];
    [s[dim::X], s[dim::Y], s[dim::VX], s[dim::VY]]
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub fn encode(scene: &SceneInput, params: &PredictorParams) -> Result<LatentDistribution> {
    params.check_scene(scene, false)?;
    let vars = SceneVars::lift(scene, |v| v);
    let (mean, log_var) = params.net(&params.values).encode(scene, &vars);
    check_finite(&mean, "latent mean")?;
    check_finite(&log_var, "latent log-variance")?;
    Ok(LatentDistribution { mean, log_var })
}

fn to_output(d: model::Decoded<f64>) -> Result<PredictionOutput> {
    let modes: Vec<Vec<[f64; 2]>> = d.positions;
    for m in &modes {
        check_finite(&m.iter().flatten().copied().collect::<Vec<_>>(), "decoder output")?;
    }
    for l in &d.logits {
        check_finite(l, "decoder logits")?;
    }
    let mode_weights = model::mode_weights(&d.logits);
    let selected_mode = mode_weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > mode_weights[best] { i } else { best });
    Ok(PredictionOutput {
        modes,
        mode_weights,
        selected_mode,
    })
}

/// Decodes `z` into `K` position tracks starting from `current`.
pub fn decode_and_integrate(
    current: &AgentState,
    z: &[f64],
    dt: f64,
    params: &PredictorParams,
) -> Result<PredictionOutput> {
    if z.len() != params.config.latent {
        return Err(Error::DimensionMismatch(format!(
            "latent has {} entries, model expects {}",
            z.len(),
            params.config.latent
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    check_finite(z, "latent sample")?;
    let cur = [current.x, current.y, current.vx, current.vy];
    to_output(params.net(&params.values).decode(z, cur, dt))
}

pub fn predict(scene: &SceneInput, params: &PredictorParams, selection: ModeSelection) -> Result<PredictionOutput> {
    let latent = encode(scene, params)?;
    let z = match selection {
        ModeSelection::MostLikely => latent.mean,
        ModeSelection::Sample(seed) => latent
            .mean
            .iter()
            .zip(&latent.log_var)
            .zip(params.sample_noise(seed))
            .map(|((mu, lv), xi)| mu + (0.5 * lv).exp() * xi)
            .collect(),
    };
    decode_and_integrate(scene.target().history.current(), &z, scene.dt(), params)
}

/// Loss terms for generic weights and scene scalars; `z = mean + exp(lv/2) * noise`.
fn loss_generic<R: Real>(
    params: &PredictorParams,
    w: &[R],
    scene: &SceneInput,
    vars: &SceneVars<R>,
    noise: &[f64],
) -> Result<model::LossTerms<R>> {
    let net = params.net(w);
    let (mean, log_var) = net.encode(scene, vars);
    let z: Vec<R> = mean
        .iter()
        .zip(&log_var)
        .zip(noise)
        .map(|((&mu, &lv), &xi)| mu + (lv * 0.5).exp() * xi)
        .collect();
    let target = scene.target_index().expect("validated scene has its target");
    let decoded = net.decode(&z, current_of(&vars.states[target]), scene.dt());
    model::loss(&decoded, &scene.ground_truth, &mean, &log_var, params.config.kl_weight)
}

/// Negative ELBO with the latent sampled by reparameterization from `seed`.
pub fn elbo_loss(scene: &SceneInput, params: &PredictorParams, seed: u64) -> Result<LossBreakdown> {
    params.check_scene(scene, true)?;
    let vars = SceneVars::lift(scene, |v| v);
    let t = loss_generic(params, &params.values, scene, &vars, &params.sample_noise(seed))?;
    if !t.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossBreakdown {
        total: t.total,
        reconstruction: t.reconstruction,
        kl: t.kl,
        variance_floored: t.variance_floored,
    })
}

/// Gradient of [`elbo_loss`] with respect to every scene scalar.
pub fn input_gradient(scene: &SceneInput, params: &PredictorParams, seed: u64) -> Result<SceneGradient> {
    params.check_scene(scene, true)?;
    let tape = Tape::with_capacity(4 * params.len() + 4 * scene.image.pixels.len());
    let w = tape.vars(&params.values);
    let vars = SceneVars::lift(scene, |v| tape.var(v));
    let t = loss_generic(params, &w, scene, &vars, &params.sample_noise(seed))?;
    let grads = tape.backward(t.total)?;
    Ok(SceneGradient {
        states: vars
            .states
            .iter()
            .map(|a| a.iter().map(|s| s.map(|v| grads.wrt(v))).collect())
            .collect(),
        pixels: grads.wrt_all(&vars.pixels),
        weights: grads.wrt_all(&vars.weights),
        presence: grads.wrt_all(&vars.presence),
    })
}

/// Loss and gradient with respect to the weights.
pub(crate) fn param_gradient(scene: &SceneInput, params: &PredictorParams, seed: u64) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::with_capacity(4 * params.len() + 4 * scene.image.pixels.len());
    let w = tape.vars(&params.values);
    let vars = SceneVars::lift(scene, |v| tape.var(v));
    let t = loss_generic(params, &w, scene, &vars, &params.sample_noise(seed))?;
    let grads = tape.backward(t.total)?;
    Ok((t.total.value(), grads.wrt_all(&w)))
}
