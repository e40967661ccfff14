//! Morphological corruption of binary masks.
//!
//! Synthesizes imperfect annotations by eroding or dilating clean masks a
//! random number of iterations. Out-of-bounds pixels count as background,
//! so erosion shrinks foreground touching the border and dilation never
//! wraps.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::dice;
use crate::rng::{stream_rng, Stream};

/// Neighborhood used by one erosion/dilation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StructuringElement {
    /// 3×3 square (8-connectivity). The default.
    #[default]
    Square3,
    /// 3×3 cross (4-connectivity).
    Cross3,
}

impl StructuringElement {
    fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            StructuringElement::Square3 => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 0),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
            StructuringElement::Cross3 => &[(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)],
        }
    }
}

/// Which morphological operation corrupts a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Erode,
    Dilate,
}

impl std::fmt::Display for MorphOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MorphOp::Erode => write!(f, "erode"),
            MorphOp::Dilate => write!(f, "dilate"),
        }
    }
}

/// Operation choice policy for [`corrupt_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpMode {
    Erode,
    Dilate,
    /// Fair coin per corrupted sample.
    #[default]
    RandomChoice,
}

/// Parameters of one corruption pass over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Fraction of samples to corrupt, in [0, 1].
    pub ratio: f64,
    /// Inclusive lower bound on morphological iterations.
    pub iter_min: u32,
    /// Inclusive upper bound on morphological iterations.
    pub iter_max: u32,
    pub op_mode: OpMode,
    pub element: StructuringElement,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(ratio: f64, iter_min: u32, iter_max: u32, op_mode: OpMode, seed: u64) -> Result<Self> {
        let spec = Self {
            ratio,
            iter_min,
            iter_max,
            op_mode,
            element: StructuringElement::default(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) || !self.ratio.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise ratio must be in [0, 1], got {}",
                self.ratio
            )));
        }
        if self.iter_min < 1 || self.iter_min > self.iter_max {
            return Err(Error::InvalidConfig(format!(
                "iteration bounds must satisfy 1 <= min <= max, got [{}, {}]",
                self.iter_min, self.iter_max
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    /// `ratio` 0.5, iterations in [5, 15], random op choice.
    fn default() -> Self {
        Self {
            ratio: 0.5,
            iter_min: 5,
            iter_max: 15,
            op_mode: OpMode::default(),
            element: StructuringElement::default(),
            seed: 0,
        }
    }
}

/// One corrupted sample in a [`CorruptionLog`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionRecord {
    /// Index of the sample in the dataset order given to [`corrupt_dataset`].
    pub index: usize,
    pub op: MorphOp,
    pub iterations: u32,
    /// Dice of the mask against the clean mask before corruption (1.0 unless
    /// the input was already imperfect).
    pub dice_before: f64,
    /// Dice of the corrupted mask against the clean mask.
    pub dice_after: f64,
}

/// Per-sample record of what a corruption pass did.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorruptionLog {
    pub entries: Vec<CorruptionRecord>,
}

impl CorruptionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean Dice of corrupted masks vs their clean originals.
    pub fn mean_dice_after(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.dice_after).sum::<f64>() / self.entries.len() as f64)
    }
}

fn morph_step(mask: &BinaryMask, op: MorphOp, element: StructuringElement) -> BinaryMask {
    let (h, w) = mask.dim();
    let offsets = element.offsets();
    BinaryMask::from_fn(h, w, |r, c| {
        let mut all = true;
        let mut any = false;
        for &(dr, dc) in offsets {
            let nr = r as i32 + dr;
            let nc = c as i32 + dc;
            let v = nr >= 0
                && nc >= 0
                && nr < h as i32
                && nc < w as i32
                && mask.get(nr as usize, nc as usize) == 1;
            all &= v;
            any |= v;
        }
        match op {
            MorphOp::Erode => all,
            MorphOp::Dilate => any,
        }
    })
}

fn morph_n(mask: &BinaryMask, op: MorphOp, element: StructuringElement, iterations: u32) -> BinaryMask {
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = morph_step(&out, op, element);
    }
    out
}

/// Binary erosion with the default 3×3 square element, applied `iterations`
/// times. Zero iterations is the identity.
pub fn erode(mask: &BinaryMask, iterations: u32) -> BinaryMask {
    morph_n(mask, MorphOp::Erode, StructuringElement::default(), iterations)
}

/// Binary dilation with the default 3×3 square element, applied `iterations`
/// times. Zero iterations is the identity.
pub fn dilate(mask: &BinaryMask, iterations: u32) -> BinaryMask {
    morph_n(mask, MorphOp::Dilate, StructuringElement::default(), iterations)
}

/// Erosion/dilation with an explicit structuring element.
pub fn morph_with(
    mask: &BinaryMask,
    op: MorphOp,
    element: StructuringElement,
    iterations: u32,
) -> BinaryMask {
    morph_n(mask, op, element, iterations)
}

/// Number of corrupted samples for a dataset of `n` at `ratio`: round
/// half-up of `ratio * n`.
pub fn corrupted_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Corrupts `round(ratio * N)` randomly chosen masks by eroding or dilating
/// them with an iteration count drawn uniformly from
/// `[iter_min, iter_max]`. The remaining masks are returned bit-identical.
/// Deterministic given `spec.seed`.
pub fn corrupt_dataset(masks: &[BinaryMask], spec: &NoiseSpec) -> Result<(Vec<BinaryMask>, CorruptionLog)> {
    spec.validate()?;
    if masks.is_empty() {
        return Err(Error::EmptyDataset("corrupt_dataset needs at least one mask".into()));
    }
    let n = masks.len();
    let k = corrupted_count(spec.ratio, n);

    let mut rng = stream_rng(spec.seed, Stream::Corruption);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(k).collect();
    chosen.sort_unstable();

    let mut out: Vec<BinaryMask> = masks.to_vec();
    let mut log = CorruptionLog::default();
    for &i in &chosen {
        let op = match spec.op_mode {
            OpMode::Erode => MorphOp::Erode,
            OpMode::Dilate => MorphOp::Dilate,
            OpMode::RandomChoice => {
                if rng.gen::<bool>() {
                    MorphOp::Erode
                } else {
                    MorphOp::Dilate
                }
            }
        };
        let iterations = rng.gen_range(spec.iter_min..=spec.iter_max);
        let corrupted = morph_n(&masks[i], op, spec.element, iterations);
        log.entries.push(CorruptionRecord {
            index: i,
            op,
            iterations,
            dice_before: dice(&masks[i], &masks[i])?,
            dice_after: dice(&corrupted, &masks[i])?,
        });
        out[i] = corrupted;
    }
    Ok((out, log))
}
