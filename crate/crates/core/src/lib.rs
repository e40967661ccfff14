//! Robust learning for binary segmentation under imperfect (noisy) masks.
//!
//! The library trains a committee of three independently initialized U-Nets
//! in two stages:
//!
//! 1. **Sample selection** — for each network, its two peers score every
//!    batch sample by cross-entropy loss; samples with low peer disagreement
//!    (uncertainty) and small peer loss are treated as cleanly annotated and
//!    are the only ones that contribute gradients.
//! 2. **Joint optimization with label correction** — from a configurable
//!    epoch onward, suspect samples are additionally supervised by a
//!    corrected label: the sharpened average of the peer networks'
//!    predictions, blended with the original annotation.
//!
//! Around the committee sit the pieces needed to run controlled experiments:
//! morphological mask corruption ([`morphology`]), a paired image/mask data
//! pipeline with a synthetic generator ([`data`]), Dice metrics and result
//! tables ([`metrics`]), SVG plot emission ([`plots`]), and run-directory
//! bookkeeping ([`experiment`]).

pub mod correction;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod nn;
pub mod plots;
pub mod rng;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use mask::BinaryMask;
