//! Per-detection scalar uncertainties and their weighted combination.
//!
//! A detection contributes up to three channels, always in this order:
//! classification (softmax entropy or max per-class uncertainty), aleatoric
//! localization, epistemic localization. Localization channels go through
//! calibration, then box-size normalization, then the four-coordinate mean.

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibratorSet, Coordinate};
use crate::error::{Error, Result};
use crate::model::{BoundingBox, Dataset, DetectionRecord};

/// Lower clamp applied to each channel before taking powers in product mode.
pub const PRODUCT_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidLogits("empty logit vector".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidLogits(format!("non-finite entry in {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Shannon entropy in bits; zero-probability terms contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum();
    h.max(0.0)
}

/// Mean of the four per-coordinate localization uncertainties.
pub fn aggregate_loc(sigma4: &[f64; 4]) -> f64 {
    sigma4.iter().sum::<f64>() / 4.0
}

/// Max over the per-class uncertainties; 0 for an empty vector.
pub fn aggregate_cls(sigma_per_class: &[f64]) -> f64 {
    sigma_per_class.iter().copied().fold(0.0, f64::max)
}

/// Divides x-coordinate sigmas by the box width and y-coordinate sigmas by its height.
pub fn normalize_loc(sigma4: &[f64; 4], bbox: &BoundingBox) -> [f64; 4] {
    let (w, h) = (bbox.width(), bbox.height());
    [sigma4[0] / w, sigma4[1] / h, sigma4[2] / w, sigma4[3] / h]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// `Σ w_k σ_k`
    #[default]
    Sum,
    /// `Π max(σ_k, 1e-12)^w_k`
    Product,
}

/// Combination weights, one per enabled channel, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Config("weight vector must not be empty".into()));
        }
        if let Some(x) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Config(format!("weight {x} outside [0, 1]")));
        }
        Ok(Self(w))
    }

    pub fn ones(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Scalar uncertainties of one detection. Disabled channels are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyVector {
    pub sigma_cls: Option<f64>,
    pub sigma_loc: Option<f64>,
    pub sigma_ep_loc: Option<f64>,
}

impl UncertaintyVector {
    pub fn new(sigma_cls: f64, sigma_loc: f64) -> Self {
        Self {
            sigma_cls: Some(sigma_cls),
            sigma_loc: Some(sigma_loc),
            sigma_ep_loc: None,
        }
    }

    pub fn with_ep_loc(mut self, sigma_ep_loc: f64) -> Self {
        self.sigma_ep_loc = Some(sigma_ep_loc);
        self
    }

    /// Enabled channels in canonical order.
    pub fn channels(&self) -> Vec<f64> {
        [self.sigma_cls, self.sigma_loc, self.sigma_ep_loc]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Combines channel values under the given weights.
pub fn combine_values(weights: &[f64], sigmas: &[f64], mode: CombineMode) -> Result<f64> {
    if weights.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            expected: sigmas.len(),
            got: weights.len(),
        });
    }
    Ok(match mode {
        CombineMode::Sum => weights.iter().zip(sigmas).map(|(w, s)| w * s).sum(),
        CombineMode::Product => weights
            .iter()
            .zip(sigmas)
            .map(|(w, s)| s.max(PRODUCT_FLOOR).powf(*w))
            .product(),
    })
}

pub fn combine(weights: &WeightVector, u: &UncertaintyVector, mode: CombineMode) -> Result<f64> {
    combine_values(weights.as_slice(), &u.channels(), mode)
}

/// Source of the classification channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsChannel {
    /// Entropy (bits) of the class-score vector.
    #[default]
    Entropy,
    /// Max of the per-class epistemic uncertainties.
    MaxClass,
    None,
}

/// Which channels to compute and how to post-process them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub cls: ClsChannel,
    pub aleatoric_loc: bool,
    pub epistemic_loc: bool,
    pub normalize: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            cls: ClsChannel::Entropy,
            aleatoric_loc: true,
            epistemic_loc: false,
            normalize: true,
        }
    }
}

impl ChannelConfig {
    pub fn dim(&self) -> usize {
        usize::from(self.cls != ClsChannel::None)
            + usize::from(self.aleatoric_loc)
            + usize::from(self.epistemic_loc)
    }

    pub fn channel_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        match self.cls {
            ClsChannel::Entropy => names.push("sigma_ent"),
            ClsChannel::MaxClass => names.push("sigma_cls"),
            ClsChannel::None => {}
        }
        if self.aleatoric_loc {
            names.push("sigma_al_loc");
        }
        if self.epistemic_loc {
            names.push("sigma_ep_loc");
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Config("no uncertainty channel enabled".into()));
        }
        Ok(())
    }
}

/// Raw (uncalibrated) classification uncertainty of a detection.
pub(crate) fn raw_cls(det: &DetectionRecord, channel: ClsChannel) -> Result<Option<f64>> {
    match channel {
        ClsChannel::None => Ok(None),
        ClsChannel::Entropy => det
            .class_scores
            .as_deref()
            .map(|p| Some(entropy(p)))
            .ok_or_else(|| Error::DegenerateData("entropy channel requires class_scores or class_logits".into())),
        ClsChannel::MaxClass => det
            .sigma_ep_cls
            .as_deref()
            .map(|s| Some(aggregate_cls(s)))
            .ok_or_else(|| Error::DegenerateData("max-class channel requires sigma_ep_cls".into())),
    }
}

fn loc_channel(
    det: &DetectionRecord,
    sigma4: &[f64; 4],
    normalize: bool,
    calibrate: impl Fn(Coordinate, f64) -> f64,
) -> f64 {
    let mut s = [0.0; 4];
    for (k, coord) in Coordinate::ALL.into_iter().enumerate() {
        s[k] = calibrate(coord, sigma4[k]);
    }
    if normalize {
        s = normalize_loc(&s, &det.bbox);
    }
    aggregate_loc(&s)
}

/// Computes the enabled channels for one detection, calibrating when a calibrator set is given.
pub fn detection_uncertainty(
    det: &DetectionRecord,
    config: &ChannelConfig,
    calibrators: Option<&CalibratorSet>,
) -> Result<UncertaintyVector> {
    let class = det.class_id;
    let sigma_cls = match (config.cls, calibrators) {
        (ClsChannel::MaxClass, Some(cal)) => {
            let per_class = det
                .sigma_ep_cls
                .as_deref()
                .ok_or_else(|| Error::DegenerateData("max-class channel requires sigma_ep_cls".into()))?;
            let calibrated: Vec<f64> = per_class
                .iter()
                .enumerate()
                .map(|(l, s)| cal.apply_cls(l, *s))
                .collect();
            Some(aggregate_cls(&calibrated))
        }
        (channel, cal) => raw_cls(det, channel)?.map(|raw| match cal {
            Some(cal) => cal.apply_cls(class, raw),
            None => raw,
        }),
    };

    let sigma_loc = config.aleatoric_loc.then(|| {
        loc_channel(det, &det.sigma_al_loc, config.normalize, |coord, s| match calibrators {
            Some(cal) => cal.apply_loc(class, coord, s),
            None => s,
        })
    });

    let sigma_ep_loc = if config.epistemic_loc {
        let raw = det
            .sigma_ep_loc
            .ok_or_else(|| Error::DegenerateData("epistemic localization channel requires sigma_ep_loc".into()))?;
        Some(loc_channel(det, &raw, config.normalize, |coord, s| match calibrators {
            Some(cal) => cal.apply_ep_loc(class, coord, s),
            None => s,
        }))
    } else {
        None
    };

    Ok(UncertaintyVector {
        sigma_cls,
        sigma_loc,
        sigma_ep_loc,
    })
}

/// Channel matrix for a whole dataset: one row per detection, `config.dim()` columns.
pub fn compute_uncertainties(
    dataset: &Dataset,
    config: &ChannelConfig,
    calibrators: Option<&CalibratorSet>,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    dataset
        .detections
        .iter()
        .enumerate()
        .map(|(idx, det)| {
            detection_uncertainty(det, config, calibrators)
                .map(|u| u.channels())
                .map_err(|e| match e {
                    Error::DegenerateData(msg) => Error::DegenerateData(format!("detection {idx}: {msg}")),
                    other => other,
                })
        })
        .collect()
}
