//! Additive perturbations of one scene feature.
//!
//! A perturbation `P` is a vector with one entry per scalar of the target
//! feature (in [`FeatureId::scalars`] order); applying it adds `P`
//! elementwise. Nothing is clipped or re-wrapped afterwards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::SceneGradient;
use crate::ranges::FeatureRanges;
use crate::types::{dim, FeatureId, ScalarRef, SceneInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Gaussian noise with standard deviation equal to the magnitude.
    Noise,
    /// Sets the feature to zero; the magnitude is ignored.
    Occlusion,
    /// Adds the magnitude to every scalar.
    Constant,
    /// Loss gradient, scaled so its largest entry relative to each scalar's
    /// magnitude reaches exactly that magnitude.
    Gradient,
    /// Magnitude times the sign of the loss gradient.
    Fgsm,
}

impl PerturbKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Noise => "noise",
            PerturbKind::Occlusion => "occlusion",
            PerturbKind::Constant => "constant",
            PerturbKind::Gradient => "gradient",
            PerturbKind::Fgsm => "fgsm",
        }
    }

    pub fn needs_gradient(self) -> bool {
        matches!(self, PerturbKind::Gradient | PerturbKind::Fgsm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Magnitude {
    /// Fraction of each scalar's feature range.
    Fraction(f64),
    /// The same absolute epsilon for every scalar.
    Absolute(f64),
}

impl Default for Magnitude {
    fn default() -> Self {
        Magnitude::Fraction(0.5)
    }
}

impl Magnitude {
    pub fn value(self) -> f64 {
        match self {
            Magnitude::Fraction(v) | Magnitude::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub target: FeatureId,
    #[serde(default)]
    pub magnitude: Magnitude,
    /// Noise seed.
    #[serde(default)]
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, target: FeatureId, magnitude: Magnitude) -> Self {
        Self {
            kind,
            target,
            magnitude,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude.value();
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::Validation(format!(
                "perturbation magnitude must be >= 0, got {m}"
            )));
        }
        Ok(())
    }

    /// Ranges this spec would divide by that are zero, by name.
    pub fn degenerate_ranges(&self, scene: &SceneInput, ranges: &FeatureRanges) -> Result<Vec<String>> {
        if !matches!(self.magnitude, Magnitude::Fraction(_)) || self.kind == PerturbKind::Occlusion {
            return Ok(Vec::new());
        }
        let mut names: Vec<String> = self
            .target
            .scalars(scene)?
            .into_iter()
            .filter(|&r| ranges.is_degenerate(r))
            .map(range_name)
            .collect();
        names.sort();
        names.dedup();
        Ok(names)
    }
}

fn range_name(r: ScalarRef) -> String {
    match r {
        ScalarRef::State { dim: d, .. } => dim::NAMES[d].to_string(),
        ScalarRef::Pixel(_) => "image".into(),
        ScalarRef::Weight(_) => "weight".into(),
        ScalarRef::Presence(_) => "node".into(),
    }
}

/// A concrete additive perturbation of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub target: FeatureId,
    pub values: Vec<f64>,
}

impl Perturbation {
    pub fn zeros(scene: &SceneInput, target: FeatureId) -> Result<Self> {
        let n = target.scalars(scene)?.len();
        Ok(Self {
            target,
            values: vec![0.0; n],
        })
    }

    pub fn negated(&self) -> Self {
        Self {
            target: self.target.clone(),
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

pub fn build_perturbation(
    spec: &PerturbSpec,
    scene: &SceneInput,
    ranges: &FeatureRanges,
    gradient: Option<&SceneGradient>,
) -> Result<Perturbation> {
    spec.validate()?;
    let scalars = spec.target.scalars(scene)?;
    let scales = || -> Result<Vec<f64>> {
        scalars
            .iter()
            .map(|&r| match spec.magnitude {
                Magnitude::Absolute(e) => Ok(e),
                Magnitude::Fraction(f) => {
                    if ranges.is_degenerate(r) {
                        Err(Error::DegenerateRange(range_name(r)))
                    } else {
                        Ok(f * ranges.of(r))
                    }
                }
            })
            .collect()
    };
    let grad = || -> Result<Vec<f64>> {
        let g = gradient.ok_or(Error::MissingGradient(spec.kind.name()))?;
        Ok(scalars.iter().map(|&r| g.get(r)).collect())
    };
    let values = match spec.kind {
        PerturbKind::Occlusion => scalars.iter().map(|&r| -scene.get(r)).collect(),
        PerturbKind::Constant => scales()?,
        PerturbKind::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            scales()?
                .into_iter()
                .map(|sigma| {
                    let n = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
                    Ok(n.sample(&mut rng))
                })
                .collect::<Result<_>>()?
        }
        PerturbKind::Fgsm => {
            let g = grad()?;
            scales()?
                .into_iter()
                .zip(g)
                .map(|(s, g)| {
                    if g > 0.0 {
                        s
                    } else if g < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        PerturbKind::Gradient => {
            let g = grad()?;
            let s = scales()?;
            let eps = s
                .iter()
                .zip(&g)
                .filter(|(_, g)| **g != 0.0)
                .map(|(s, g)| s / g.abs())
                .fold(f64::INFINITY, f64::min);
            if eps.is_finite() {
                g.iter().map(|g| eps * g).collect()
            } else {
                vec![0.0; g.len()]
            }
        }
    };
    Ok(Perturbation {
        target: spec.target.clone(),
        values,
    })
}

/// Returns a copy of `scene` with `p` added to its target feature.
pub fn apply(scene: &SceneInput, p: &Perturbation) -> Result<SceneInput> {
    let scalars = p.target.scalars(scene)?;
    if scalars.len() != p.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "perturbation of `{}` has {} values, feature has {}",
            p.target,
            p.values.len(),
            scalars.len()
        )));
    }
    let mut out = scene.clone();
    for (r, v) in scalars.into_iter().zip(&p.values) {
        out.set(r, out.get(r) + v);
    }
    Ok(out)
}
