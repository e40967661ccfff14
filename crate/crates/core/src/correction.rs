//! Label correction and the joint loss.
//!
//! A suspect annotation is replaced (as a supervision target, never on
//! disk) by the sharpened average of the peer networks' predictions,
//! recomputed fresh every iteration. The joint loss blends cross-entropy
//! against the original mask with cross-entropy against the corrected
//! label.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::selection::{per_sample_loss, PROB_CLAMP_EPS};

/// Per-pixel class distribution over `L` classes, stored H×W×L.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Array3<f64>,
}

/// Max tolerated deviation of a pixel's probability sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-6;

impl SoftLabel {
    /// Wraps a probability grid, checking every pixel is a simplex vector:
    /// non-negative entries summing to 1 within `1e-6`.
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (h, w, l) = probs.dim();
        if h == 0 || w == 0 || l < 2 {
            return Err(Error::InvalidConfig(format!(
                "soft label needs h,w >= 1 and l >= 2, got {h}x{w}x{l}"
            )));
        }
        for r in 0..h {
            for c in 0..w {
                let mut sum = 0.0;
                for j in 0..l {
                    let p = probs[(r, c, j)];
                    if !(0.0..=1.0 + SIMPLEX_TOL).contains(&p) || !p.is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "probability out of range at ({r},{c},{j}): {p}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "pixel ({r},{c}) sums to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(Self { probs })
    }

    /// One-hot soft label from a binary mask (L = 2).
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let (h, w) = mask.dim();
        let mut probs = Array3::zeros((h, w, 2));
        for r in 0..h {
            for c in 0..w {
                probs[(r, c, mask.get(r, c) as usize)] = 1.0;
            }
        }
        Self { probs }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }

    pub fn grid(&self) -> &Array3<f64> {
        &self.probs
    }

    /// Per-pixel argmax as a binary mask (foreground = class 1). Requires
    /// L = 2; ties resolve to background.
    pub fn argmax_mask(&self) -> Result<BinaryMask> {
        let (h, w, l) = self.dim();
        if l != 2 {
            return Err(Error::InvalidConfig(format!(
                "argmax_mask needs exactly 2 classes, got {l}"
            )));
        }
        Ok(BinaryMask::from_fn(h, w, |r, c| {
            self.probs[(r, c, 1)] > self.probs[(r, c, 0)]
        }))
    }

    /// Mean per-pixel Shannon entropy in nats.
    pub fn mean_entropy(&self) -> f64 {
        let (h, w, l) = self.dim();
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                for j in 0..l {
                    let p = self.probs[(r, c, j)];
                    if p > 0.0 {
                        total -= p * p.ln();
                    }
                }
            }
        }
        total / (h * w) as f64
    }

    fn same_shape(&self, other: &SoftLabel) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape_mismatch(
                format!("{:?}", self.dim()),
                format!("{:?}", other.dim()),
            ));
        }
        Ok(())
    }
}

/// Whether the joint loss applies to every sample or only those the
/// selection stage did not pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JoScope {
    #[default]
    UnselectedOnly,
    AllSamples,
}

/// How many peer predictions are averaged into the corrected label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeerCount {
    /// The two peers of the target network. The default.
    #[default]
    Two,
    /// All three committee members, target included.
    Three,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// Sharpening temperature T.
    pub temperature: f64,
    /// Weight of the original-label term in the joint loss.
    pub alpha: f64,
    pub jo_scope: JoScope,
    /// Epoch at which joint optimization starts.
    pub jo_start_epoch: usize,
    pub peer_count: PeerCount,
    /// Replace the corrected distribution by its per-pixel argmax one-hot.
    pub hard_corrected_targets: bool,
}

impl Default for CorrectionConfig {
    /// T = 0.5, α = 0.5, unselected-only scope, two-peer averaging.
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 0.5,
            jo_scope: JoScope::default(),
            jo_start_epoch: 0,
            peer_count: PeerCount::default(),
            hard_corrected_targets: false,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-pixel arithmetic mean of two peer probability maps.
pub fn average_peer_prediction(p1: &SoftLabel, p2: &SoftLabel) -> Result<SoftLabel> {
    p1.same_shape(p2)?;
    Ok(SoftLabel {
        probs: (p1.grid() + p2.grid()) / 2.0,
    })
}

/// Per-pixel arithmetic mean of any number of probability maps.
pub fn average_predictions(maps: &[&SoftLabel]) -> Result<SoftLabel> {
    let first = maps
        .first()
        .ok_or_else(|| Error::EmptyDataset("average_predictions needs at least one map".into()))?;
    let mut acc = first.grid().clone();
    for m in &maps[1..] {
        first.same_shape(m)?;
        acc += m.grid();
    }
    acc /= maps.len() as f64;
    Ok(SoftLabel { probs: acc })
}

/// Temperature sharpening: per pixel, `q_i^(1/T) / sum_j q_j^(1/T)`.
///
/// `T = 1` is the identity; `T -> 0` approaches a one-hot distribution on
/// the argmax. Zero-probability classes stay exactly zero. Computed
/// relative to the pixel maximum so extreme temperatures stay finite.
pub fn sharpen(q: &SoftLabel, temperature: f64) -> Result<SoftLabel> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let (h, w, l) = q.dim();
    let inv_t = 1.0 / temperature;
    let mut out = Array3::zeros((h, w, l));
    for r in 0..h {
        for c in 0..w {
            let mut maxp = 0.0f64;
            for j in 0..l {
                maxp = maxp.max(q.probs[(r, c, j)]);
            }
            // A valid simplex has maxp >= 1/L > 0.
            let mut denom = 0.0f64;
            for j in 0..l {
                let v = (q.probs[(r, c, j)] / maxp).powf(inv_t);
                out[(r, c, j)] = v;
                denom += v;
            }
            for j in 0..l {
                out[(r, c, j)] /= denom;
            }
        }
    }
    Ok(SoftLabel { probs: out })
}

/// Mean per-pixel cross-entropy against a soft target:
/// `-(1/HW) * sum_px sum_j t_j ln p_j`, probabilities clamped to
/// `[1e-7, 1 - 1e-7]` inside the logarithm.
pub fn cross_entropy_soft(pred: &SoftLabel, target: &SoftLabel) -> Result<f64> {
    pred.same_shape(target)?;
    let (h, w, l) = pred.dim();
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            for j in 0..l {
                let t = target.probs[(r, c, j)];
                if t > 0.0 {
                    let p = pred.probs[(r, c, j)].clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
                    total -= t * p.ln();
                }
            }
        }
    }
    Ok(total / (h * w) as f64)
}

/// Joint supervision: `alpha * CE(pred, noisy) + (1 - alpha) * CE(pred, corrected)`.
pub fn joint_loss(
    pred: &SoftLabel,
    noisy: &BinaryMask,
    corrected: &SoftLabel,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let noisy_term = per_sample_loss(pred, noisy)?;
    let corrected_term = cross_entropy_soft(pred, corrected)?;
    Ok(alpha * noisy_term + (1.0 - alpha) * corrected_term)
}

/// Builds the corrected label for one sample from its peer predictions:
/// sharpened average, optionally hardened to a one-hot argmax.
pub fn corrected_from_peers(peer_probs: &[&SoftLabel], config: &CorrectionConfig) -> Result<SoftLabel> {
    config.validate()?;
    let avg = average_predictions(peer_probs)?;
    let sharpened = sharpen(&avg, config.temperature)?;
    if config.hard_corrected_targets {
        let mask = sharpened.argmax_mask()?;
        Ok(SoftLabel::from_mask(&mask))
    } else {
        Ok(sharpened)
    }
}
