//! Predictor dimensions, flat parameter storage and the checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How decoded outputs become positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    /// Decoded per-step velocity changes are accumulated onto the current
    /// velocity and integrated from the current position.
    IntegrateActions,
    /// Decoded outputs are offsets added to the current position.
    RelativeOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Past steps before the current one.
    pub history_steps: usize,
    pub horizon: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub image_channels: usize,
    /// Side of the square pixel patches averaged by the image encoder.
    pub patch: usize,
    pub history_hidden: usize,
    pub image_hidden: usize,
    pub graph_hidden: usize,
    pub latent: usize,
    pub decoder_hidden: usize,
    /// Mixture components.
    pub modes: usize,
    pub dynamics: DynamicsMode,
    /// Bound on the learned part of each decoded output
    /// (m/s per step for actions, meters for offsets).
    pub output_bound: f64,
    /// KL weight in the loss.
    pub kl_weight: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            history_steps: 4,
            horizon: 4,
            image_width: 16,
            image_height: 16,
            image_channels: 3,
            patch: 4,
            history_hidden: 16,
            image_hidden: 16,
            graph_hidden: 8,
            latent: 4,
            decoder_hidden: 32,
            modes: 3,
            dynamics: DynamicsMode::IntegrateActions,
            output_bound: 2.0,
            kl_weight: 1.0,
        }
    }
}

/// Per-step decoder outputs for one mode: two action/offset components,
/// two log-variances, one mixture logit.
pub(crate) const OUTPUTS_PER_MODE: usize = 5;
/// Non-position state features per history step seen by the encoder.
pub(crate) const HISTORY_FEATURES: usize = 6;
/// Features of each neighbor's current state seen by the graph encoder.
pub(crate) const NEIGHBOR_FEATURES: usize = 6;

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("history_steps", self.history_steps),
            ("horizon", self.horizon),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("image_channels", self.image_channels),
            ("patch", self.patch),
            ("history_hidden", self.history_hidden),
            ("image_hidden", self.image_hidden),
            ("graph_hidden", self.graph_hidden),
            ("latent", self.latent),
            ("decoder_hidden", self.decoder_hidden),
            ("modes", self.modes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.output_bound > 0.0) || !self.output_bound.is_finite() {
            return Err(Error::Config("output_bound must be positive".into()));
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::Config("kl_weight must be nonnegative".into()));
        }
        Ok(())
    }

    pub(crate) fn patches(&self) -> (usize, usize) {
        (
            self.image_width.div_ceil(self.patch),
            self.image_height.div_ceil(self.patch),
        )
    }

    pub(crate) fn history_inputs(&self) -> usize {
        HISTORY_FEATURES * (self.history_steps + 1)
    }

    pub(crate) fn image_inputs(&self) -> usize {
        let (pw, ph) = self.patches();
        pw * ph * self.image_channels
    }

    pub(crate) fn encoder_width(&self) -> usize {
        self.history_hidden + self.image_hidden + self.graph_hidden
    }

    pub(crate) fn decoder_outputs(&self) -> usize {
        self.horizon * self.modes * OUTPUTS_PER_MODE
    }
}

/// A dense block `rows x cols` stored row-major in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        let s = self.offset + r * self.cols;
        s..s + self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every named block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub history_w: Block,
    pub history_b: Block,
    pub image_w: Block,
    pub image_b: Block,
    pub graph_w: Block,
    pub graph_b: Block,
    pub latent_w: Block,
    pub latent_b: Block,
    pub decoder_w: Block,
    pub decoder_b: Block,
    pub output_w: Block,
    pub output_b: Block,
    /// One velocity gain per (step, mode).
    pub gain: Block,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &PredictorConfig) -> Self {
        let mut offset = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let history_w = block(cfg.history_hidden, cfg.history_inputs());
        let history_b = block(cfg.history_hidden, 1);
        let image_w = block(cfg.image_hidden, cfg.image_inputs());
        let image_b = block(cfg.image_hidden, 1);
        let graph_w = block(cfg.graph_hidden, NEIGHBOR_FEATURES);
        let graph_b = block(cfg.graph_hidden, 1);
        let latent_w = block(2 * cfg.latent, cfg.encoder_width());
        let latent_b = block(2 * cfg.latent, 1);
        let decoder_w = block(cfg.decoder_hidden, cfg.latent + 2);
        let decoder_b = block(cfg.decoder_hidden, 1);
        let output_w = block(cfg.decoder_outputs(), cfg.decoder_hidden);
        let output_b = block(cfg.decoder_outputs(), 1);
        let gain = block(cfg.horizon, cfg.modes);
        Self {
            history_w,
            history_b,
            image_w,
            image_b,
            graph_w,
            graph_b,
            latent_w,
            latent_b,
            decoder_w,
            decoder_b,
            output_w,
            output_b,
            gain,
            total: offset,
        }
    }

    pub fn named(&self) -> [(&'static str, Block); 13] {
        [
            ("history_w", self.history_w),
            ("history_b", self.history_b),
            ("image_w", self.image_w),
            ("image_b", self.image_b),
            ("graph_w", self.graph_w),
            ("graph_b", self.graph_b),
            ("latent_w", self.latent_w),
            ("latent_b", self.latent_b),
            ("decoder_w", self.decoder_w),
            ("decoder_b", self.decoder_b),
            ("output_w", self.output_w),
            ("output_b", self.output_b),
            ("gain", self.gain),
        ]
    }
}

/// Predictor weights. Immutable once built; training returns new values.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub config: PredictorConfig,
    pub(crate) values: Vec<f64>,
    pub(crate) layout: Layout,
}

impl PredictorParams {
    /// Glorot-uniform weights, zero biases. Velocity gains start spread
    /// across modes so mode `m` of `K` keeps `1 - m/(K-1)` of the current
    /// speed from the first step on; this breaks the symmetry between
    /// mixture components.
    pub fn init(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in [
            layout.history_w,
            layout.image_w,
            layout.graph_w,
            layout.latent_w,
            layout.decoder_w,
            layout.output_w,
        ] {
            let a = (6.0 / (w.rows + w.cols) as f64).sqrt();
            for v in &mut values[w.range()] {
                *v = rng.random_range(-a..a);
            }
        }
        if config.dynamics == DynamicsMode::IntegrateActions && config.modes > 1 {
            for m in 0..config.modes {
                values[layout.gain.offset + m] = -(m as f64) / (config.modes - 1) as f64;
            }
        }
        Ok(Self { config, values, layout })
    }

    /// All-zero weights.
    pub fn zeros(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            values: vec![0.0; layout.total],
            config,
            layout,
        })
    }

    pub fn from_values(config: PredictorConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter values".into()));
        }
        Ok(Self { config, values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values of one named block, e.g. `"gain"` or `"image_w"`.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, b)| &self.values[b.range()])
    }

    /// Mutable access to one named block; for building hand-set models in tests.
    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.layout.named().into_iter().find(|(n, _)| *n == name)?.1;
        Some(&mut self.values[b.range()])
    }
}

pub const PARAMS_FORMAT: &str = "trajsens-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    format: String,
    version: u32,
    config: PredictorConfig,
    blocks: BTreeMap<String, Vec<f64>>,
}

impl PredictorParams {
    /// Checkpoint text: a versioned JSON document holding the dimensions and
    /// one flat list per weight block.
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let file = ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            config: self.config.clone(),
            blocks: self
                .layout
                .named()
                .into_iter()
                .map(|(n, b)| (n.to_string(), self.values[b.range()].to_vec()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Parse {
            field: "<params>".into(),
            message: e.to_string(),
        })
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            field: "<params>".into(),
            message: e.to_string(),
        })?;
        if file.format != PARAMS_FORMAT || file.version != PARAMS_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let layout = Layout::new(&file.config);
        let mut values = vec![0.0; layout.total];
        for (name, block) in layout.named() {
            let data = file
                .blocks
                .get(name)
                .ok_or_else(|| Error::Validation(format!("checkpoint is missing block `{name}`")))?;
            if data.len() != block.len() {
                return Err(Error::DimensionMismatch(format!(
                    "block `{name}` has {} values, expected {}",
                    data.len(),
                    block.len()
                )));
            }
            values[block.range()].copy_from_slice(data);
        }
        Self::from_values(file.config, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text).map_err(|e| e.context(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(&PredictorConfig::default());
        let mut next = 0;
        for (_, b) in l.named() {
            assert_eq!(b.offset, next);
            next += b.len();
        }
        assert_eq!(next, l.total);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = PredictorParams::init(PredictorConfig::default(), 3).unwrap();
        let text = p.to_checkpoint_string().unwrap();
        assert_eq!(PredictorParams::from_checkpoint_str(&text).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_wrong_block_size() {
        let p = PredictorParams::init(PredictorConfig::default(), 3).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&p.to_checkpoint_string().unwrap()).unwrap();
        v["blocks"]["gain"].as_array_mut().unwrap().pop();
        assert!(matches!(
            PredictorParams::from_checkpoint_str(&v.to_string()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_modes_rejected() {
        let cfg = PredictorConfig {
            modes: 0,
            ..Default::default()
        };
        assert!(PredictorParams::init(cfg, 0).is_err());
    }
}
