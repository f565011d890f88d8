//! Forward pass written once over [`Real`], so the same code evaluates plain
//! predictions and records gradients on a tape.

use std::f64::consts::PI;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::ranges::{FIXED_ACCELERATION_RANGE, FIXED_ANGULAR_VELOCITY_RANGE, FIXED_VELOCITY_RANGE, FIXED_WEIGHT_RANGE};
use crate::types::{dim, Point, SceneInput, STATE_DIM};

use super::params::{Block, DynamicsMode, Layout, PredictorConfig, OUTPUTS_PER_MODE};

/// Variance floor applied to decoded mixture variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Every perturbable scene scalar, in the scene's own layout.
#[derive(Debug, Clone)]
pub(crate) struct SceneVars<R> {
    pub states: Vec<Vec<[R; STATE_DIM]>>,
    pub pixels: Vec<R>,
    pub weights: Vec<R>,
    pub presence: Vec<R>,
}

impl<R: Copy> SceneVars<R> {
    pub fn lift(scene: &SceneInput, mut f: impl FnMut(f64) -> R) -> Self {
        Self {
            states: scene
                .agents
                .iter()
                .map(|a| a.history.states.iter().map(|s| s.to_array().map(&mut f)).collect())
                .collect(),
            pixels: scene.image.pixels.iter().map(|&v| f(v)).collect(),
            weights: scene.graph.edges.iter().map(|e| f(e.weight)).collect(),
            presence: scene.graph.presence.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Raw decoder outputs, indexed `[mode][step]`.
pub(crate) struct Decoded<R> {
    pub positions: Vec<Vec<[R; 2]>>,
    pub log_vars: Vec<Vec<[R; 2]>>,
    /// Indexed `[step][mode]`.
    pub logits: Vec<Vec<R>>,
}

pub(crate) struct Net<'a, R> {
    pub cfg: &'a PredictorConfig,
    pub layout: &'a Layout,
    pub w: &'a [R],
}

impl<'a, R: Real> Net<'a, R> {
    fn dense(&self, w: Block, b: Block, x: &[R]) -> Vec<R> {
        (0..w.rows)
            .map(|r| R::affine(&self.w[w.row(r)], x, self.w[b.offset + r]))
            .collect()
    }

    fn zero(&self) -> R {
        self.w[0].constant(0.0)
    }

    fn history_features(&self, states: &[[R; STATE_DIM]]) -> Vec<R> {
        let mut out = Vec::with_capacity(self.cfg.history_inputs());
        for s in states {
            out.push(s[dim::VX] * (1.0 / FIXED_VELOCITY_RANGE));
            out.push(s[dim::VY] * (1.0 / FIXED_VELOCITY_RANGE));
            out.push(s[dim::AX] * (1.0 / FIXED_ACCELERATION_RANGE));
            out.push(s[dim::AY] * (1.0 / FIXED_ACCELERATION_RANGE));
            out.push(s[dim::HEADING] * (1.0 / PI));
            out.push(s[dim::ANGULAR_VELOCITY] * (1.0 / FIXED_ANGULAR_VELOCITY_RANGE));
        }
        out
    }

    fn image_features(&self, pixels: &[R]) -> Vec<R> {
        let c = self.cfg;
        let (pw, ph) = c.patches();
        let mut out = Vec::with_capacity(c.image_inputs());
        let mut members = Vec::with_capacity(c.patch * c.patch);
        for pr in 0..ph {
            for pc in 0..pw {
                for ch in 0..c.image_channels {
                    members.clear();
                    for row in pr * c.patch..((pr + 1) * c.patch).min(c.image_height) {
                        for col in pc * c.patch..((pc + 1) * c.patch).min(c.image_width) {
                            members.push(pixels[(row * c.image_width + col) * c.image_channels + ch]);
                        }
                    }
                    out.push(R::sum(&members) * (1.0 / members.len() as f64));
                }
            }
        }
        out
    }

    /// Sum over edges into the target of `weight * presence(source)` times the
    /// source's current non-position state.
    fn graph_features(&self, scene: &SceneInput, v: &SceneVars<R>, target: usize) -> Vec<R> {
        let mut coefs = Vec::new();
        let mut sources = Vec::new();
        for (e, edge) in scene.graph.edges.iter().enumerate() {
            if edge.target != scene.target_agent || edge.source == scene.target_agent {
                continue;
            }
            let (Some(agent), Some(node)) = (scene.agent_index(&edge.source), scene.graph.node_index(&edge.source))
            else {
                continue;
            };
            debug_assert_ne!(agent, target);
            coefs.push(v.weights[e] * v.presence[node] * (1.0 / FIXED_WEIGHT_RANGE));
            sources.push(self.history_features(&v.states[agent][v.states[agent].len() - 1..]));
        }
        let zero = self.zero();
        (0..super::params::NEIGHBOR_FEATURES)
            .map(|f| {
                let feats: Vec<R> = sources.iter().map(|s| s[f]).collect();
                R::affine(&coefs, &feats, zero)
            })
            .collect()
    }

    /// Latent mean and log-variance.
    pub fn encode(&self, scene: &SceneInput, v: &SceneVars<R>) -> (Vec<R>, Vec<R>) {
        let l = self.layout;
        let target = scene.target_index().expect("validated scene has its target");
        let hist = self.history_features(&v.states[target]);
        let mut h: Vec<R> = self
            .dense(l.history_w, l.history_b, &hist)
            .into_iter()
            .map(R::tanh)
            .collect();
        let img = self.image_features(&v.pixels);
        h.extend(self.dense(l.image_w, l.image_b, &img).into_iter().map(R::tanh));
        let graph = self.graph_features(scene, v, target);
        h.extend(self.dense(l.graph_w, l.graph_b, &graph).into_iter().map(R::tanh));
        let mut out = self.dense(l.latent_w, l.latent_b, &h);
        let log_var = out.split_off(self.cfg.latent);
        (out, log_var)
    }

    /// `current` is `[x, y, vx, vy]` of the target's most recent state.
    pub fn decode(&self, z: &[R], current: [R; 4], dt: f64) -> Decoded<R> {
        let c = self.cfg;
        let l = self.layout;
        let [x, y, vx, vy] = current;
        let mut input = z.to_vec();
        input.push(vx * (1.0 / FIXED_VELOCITY_RANGE));
        input.push(vy * (1.0 / FIXED_VELOCITY_RANGE));
        let hidden: Vec<R> = self
            .dense(l.decoder_w, l.decoder_b, &input)
            .into_iter()
            .map(R::tanh)
            .collect();
        let out = self.dense(l.output_w, l.output_b, &hidden);
        let at = |k: usize, m: usize, j: usize| out[(k * c.modes + m) * OUTPUTS_PER_MODE + j];
        let bound = c.output_bound;

        let mut positions = Vec::with_capacity(c.modes);
        let mut log_vars = Vec::with_capacity(c.modes);
        for m in 0..c.modes {
            let (mut px, mut py) = (x, y);
            let (mut cvx, mut cvy) = (vx, vy);
            let mut track = Vec::with_capacity(c.horizon);
            let mut lv = Vec::with_capacity(c.horizon);
            for k in 0..c.horizon {
                let g = self.w[l.gain.offset + k * c.modes + m];
                let ux = at(k, m, 0).tanh() * bound + g * vx;
                let uy = at(k, m, 1).tanh() * bound + g * vy;
                match c.dynamics {
                    DynamicsMode::IntegrateActions => {
                        cvx = cvx + ux;
                        cvy = cvy + uy;
                        px = px + cvx * dt;
                        py = py + cvy * dt;
                    }
                    DynamicsMode::RelativeOffsets => {
                        px = x + ux;
                        py = y + uy;
                    }
                }
                track.push([px, py]);
                lv.push([at(k, m, 2), at(k, m, 3)]);
            }
            positions.push(track);
            log_vars.push(lv);
        }
        let logits = (0..c.horizon)
            .map(|k| (0..c.modes).map(|m| at(k, m, 4)).collect())
            .collect();
        Decoded {
            positions,
            log_vars,
            logits,
        }
    }
}

/// `ln sum exp(xs)`, shifted by the (constant) maximum for stability.
pub(crate) fn log_sum_exp<R: Real>(xs: &[R]) -> Result<R> {
    let max = xs.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("mixture log-likelihood".into()));
    }
    let shifted: Vec<R> = xs.iter().map(|&x| (x - max).exp()).collect();
    Ok(R::sum(&shifted).ln()? + max)
}

pub(crate) struct LossTerms<R> {
    pub total: R,
    pub reconstruction: R,
    pub kl: R,
    pub variance_floored: bool,
}

/// Negative log-likelihood of `truth` under the per-step mixture plus the
/// closed-form KL of `N(mean, exp(log_var))` from the standard normal.
pub(crate) fn loss<R: Real>(
    decoded: &Decoded<R>,
    truth: &[Point],
    mean: &[R],
    log_var: &[R],
    kl_weight: f64,
) -> Result<LossTerms<R>> {
    let modes = decoded.positions.len();
    let mut floored = false;
    let mut step_nll = Vec::with_capacity(truth.len());
    for (k, gt) in truth.iter().enumerate() {
        let mut terms = Vec::with_capacity(modes);
        for m in 0..modes {
            let p = decoded.positions[m][k];
            let mut log_density = None;
            for j in 0..2 {
                let lv = decoded.log_vars[m][k][j];
                let (inv_var, ln_var) = if lv.value().exp() < VARIANCE_FLOOR {
                    floored = true;
                    (lv.constant(1.0 / VARIANCE_FLOOR), lv.constant(VARIANCE_FLOOR.ln()))
                } else {
                    ((-lv).exp(), lv)
                };
                let term = ((p[j] - gt[j]).square() * inv_var + ln_var) * -0.5;
                log_density = Some(match log_density {
                    None => term,
                    Some(acc) => acc + term,
                });
            }
            let log_density = log_density.expect("two coordinates") - LN_2PI;
            terms.push(decoded.logits[k][m] + log_density);
        }
        step_nll.push(log_sum_exp(&decoded.logits[k])? - log_sum_exp(&terms)?);
    }
    let reconstruction = R::sum(&step_nll);
    let kl_terms: Vec<R> = mean
        .iter()
        .zip(log_var)
        .map(|(&mu, &lv)| (mu.square() + lv.exp() - lv - 1.0) * 0.5)
        .collect();
    let kl = R::sum(&kl_terms);
    Ok(LossTerms {
        total: reconstruction + kl * kl_weight,
        reconstruction,
        kl,
        variance_floored: floored,
    })
}

/// Mean over steps of the per-step softmax of the mode logits.
pub(crate) fn mode_weights(logits: &[Vec<f64>]) -> Vec<f64> {
    let modes = logits.first().map_or(0, Vec::len);
    let mut w = vec![0.0; modes];
    for step in logits {
        let max = step.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = step.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for (acc, v) in w.iter_mut().zip(e) {
            *acc += v / z;
        }
    }
    let n = logits.len() as f64;
    w.iter_mut().for_each(|v| *v /= n);
    w
}
