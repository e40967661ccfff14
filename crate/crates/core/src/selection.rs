//! Committee-based sample selection.
//!
//! Each network in the three-network committee is updated only on samples
//! its two peers agree look clean: rank batch samples by peer disagreement
//! (uncertainty), keep the low-uncertainty pool, then keep the small-loss
//! samples inside it. `loss_only` skips the uncertainty filter and realizes
//! the plain small-loss baseline.

use serde::{Deserialize, Serialize};

use crate::correction::SoftLabel;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside every logarithm.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

/// Identity of a committee member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetId {
    A,
    B,
    C,
}

impl NetId {
    pub const ALL: [NetId; 3] = [NetId::A, NetId::B, NetId::C];

    /// The two peers scoring samples for this network, in cyclic order:
    /// A is scored by (B, C), B by (C, A), C by (A, B).
    pub fn peers(self) -> (NetId, NetId) {
        match self {
            NetId::A => (NetId::B, NetId::C),
            NetId::B => (NetId::C, NetId::A),
            NetId::C => (NetId::A, NetId::B),
        }
    }

    pub fn index(self) -> usize {
        match self {
            NetId::A => 0,
            NetId::B => 1,
            NetId::C => 2,
        }
    }
}

impl std::fmt::Display for NetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetId::A => write!(f, "A"),
            NetId::B => write!(f, "B"),
            NetId::C => write!(f, "C"),
        }
    }
}

/// Mean per-pixel cross-entropy of each committee member on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLossRecord {
    /// Sample index; also the deterministic tie-break key.
    pub index: usize,
    pub loss_a: f64,
    pub loss_b: f64,
    pub loss_c: f64,
}

impl SampleLossRecord {
    pub fn loss_of(&self, net: NetId) -> f64 {
        match net {
            NetId::A => self.loss_a,
            NetId::B => self.loss_b,
            NetId::C => self.loss_c,
        }
    }

    fn validate(&self) -> Result<()> {
        for net in NetId::ALL {
            let l = self.loss_of(net);
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "loss for net {net} on sample {} must be finite and >= 0, got {l}",
                    self.index
                )));
            }
        }
        Ok(())
    }
}

/// Which ranking defines a "useful" sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCriterion {
    /// Drop the high-uncertainty fraction first, then keep small-loss
    /// samples. The default.
    #[default]
    UncertaintyThenLoss,
    /// Keep small-loss samples outright (co-teaching style baseline).
    LossOnly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Fraction R of the batch each network keeps for its update.
    pub keep_fraction: f64,
    /// Fraction τ of the batch surviving the uncertainty filter.
    pub uncertainty_keep_fraction: f64,
    pub criterion: SelectionCriterion,
}

impl Default for SelectionConfig {
    /// R = 0.5 (keep half the batch), τ = 0.75.
    fn default() -> Self {
        Self {
            keep_fraction: 0.5,
            uncertainty_keep_fraction: 0.75,
            criterion: SelectionCriterion::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.keep_fraction;
        let tau = self.uncertainty_keep_fraction;
        if !(r > 0.0 && r <= tau && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection fractions must satisfy 0 < R <= tau <= 1, got R={r}, tau={tau}"
            )));
        }
        Ok(())
    }
}

/// Mean per-pixel cross-entropy of a probability map against a binary
/// label, with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn per_sample_loss(probs: &SoftLabel, label: &BinaryMask) -> Result<f64> {
    let (h, w, l) = probs.dim();
    if l != 2 || (h, w) != label.dim() {
        return Err(Error::shape_mismatch(
            format!("probs {h}x{w}x2 vs mask {h}x{w}"),
            format!("probs {:?} vs mask {:?}", probs.dim(), label.dim()),
        ));
    }
    let grid = probs.grid();
    let mut total = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let class = label.get(r, c) as usize;
            let p = grid[(r, c, class)].clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
            total -= p.ln();
        }
    }
    Ok(total / (h * w) as f64)
}

/// Uncertainty of a sample: absolute difference of the two peer losses.
pub fn uncertainty(peer_loss_1: f64, peer_loss_2: f64) -> f64 {
    (peer_loss_1 - peer_loss_2).abs()
}

/// Sorts `(key, index)` pairs ascending with index as the tie-break, and
/// returns the first `k` indices.
fn smallest_k(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Selects the useful-sample index set for `target`'s update from a batch
/// of loss records. Only the two peer losses are consulted; the peer-loss
/// score of a record is the mean of the two. Returned indices are the
/// records' `index` fields, sorted ascending; the set size is always
/// `floor(R * B)`.
pub fn select_for(
    target: NetId,
    records: &[SampleLossRecord],
    config: &SelectionConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset("select_for needs a nonempty batch".into()));
    }
    for r in records {
        r.validate()?;
    }
    let batch = records.len();
    let keep = (config.keep_fraction * batch as f64).floor() as usize;
    if keep == 0 {
        return Err(Error::EmptySelection {
            keep_fraction: config.keep_fraction,
            batch,
        });
    }

    let (p1, p2) = target.peers();
    let score = |r: &SampleLossRecord| (r.loss_of(p1) + r.loss_of(p2)) / 2.0;

    let pool: Vec<&SampleLossRecord> = match config.criterion {
        SelectionCriterion::LossOnly => records.iter().collect(),
        SelectionCriterion::UncertaintyThenLoss => {
            let pool_size = (config.uncertainty_keep_fraction * batch as f64).floor() as usize;
            let by_mu: Vec<(f64, usize)> = records
                .iter()
                .map(|r| (uncertainty(r.loss_of(p1), r.loss_of(p2)), r.index))
                .collect();
            let keep_idx: std::collections::HashSet<usize> =
                smallest_k(by_mu, pool_size).into_iter().collect();
            records.iter().filter(|r| keep_idx.contains(&r.index)).collect()
        }
    };

    let by_score: Vec<(f64, usize)> = pool.iter().map(|r| (score(r), r.index)).collect();
    let mut selected = smallest_k(by_score, keep);
    selected.sort_unstable();
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::SoftLabel;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_probs(h: usize, w: usize) -> SoftLabel {
        SoftLabel::new(Array3::from_elem((h, w, 2), 0.5)).unwrap()
    }

    #[test]
    fn loss_of_uniform_prediction_is_ln2() {
        let probs = uniform_probs(4, 4);
        let mask = BinaryMask::from_fn(4, 4, |r, _| r % 2 == 0);
        let loss = per_sample_loss(&probs, &mask).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn loss_of_constant_point_eight_on_true_class() {
        let mask = BinaryMask::from_fn(3, 5, |r, c| (r + c) % 2 == 0);
        let mut arr = Array3::zeros((3, 5, 2));
        for r in 0..3 {
            for c in 0..5 {
                let t = mask.get(r, c) as usize;
                arr[(r, c, t)] = 0.8;
                arr[(r, c, 1 - t)] = 0.2;
            }
        }
        let probs = SoftLabel::new(arr).unwrap();
        let loss = per_sample_loss(&probs, &mask).unwrap();
        assert_abs_diff_eq!(loss, -(0.8f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn perfect_prediction_loss_is_clamp_epsilon() {
        let mask = BinaryMask::from_fn(4, 4, |r, c| r == c);
        let mut arr = Array3::zeros((4, 4, 2));
        for r in 0..4 {
            for c in 0..4 {
                arr[(r, c, mask.get(r, c) as usize)] = 1.0;
            }
        }
        let probs = SoftLabel::new(arr).unwrap();
        let loss = per_sample_loss(&probs, &mask).unwrap();
        assert_abs_diff_eq!(loss, -(1.0 - PROB_CLAMP_EPS).ln(), epsilon = 1e-15);
        assert!(loss > 0.0 && loss < 2e-7);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let probs = uniform_probs(4, 4);
        let mask = BinaryMask::zeros(4, 5);
        assert!(per_sample_loss(&probs, &mask).is_err());
    }

    #[test]
    fn uncertainty_is_absolute_difference() {
        assert_eq!(uncertainty(0.9, 0.4), 0.5);
        assert_eq!(uncertainty(0.4, 0.9), 0.5);
        assert_eq!(uncertainty(0.7, 0.7), 0.0);
    }

    fn rec(index: usize, a: f64, b: f64, c: f64) -> SampleLossRecord {
        SampleLossRecord {
            index,
            loss_a: a,
            loss_b: b,
            loss_c: c,
        }
    }

    fn random_records(rng: &mut impl Rng, n: usize) -> Vec<SampleLossRecord> {
        (0..n)
            .map(|i| rec(i, rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect()
    }

    /// Independent oracle: materialize the spec of the procedure with plain
    /// sorts over (value, index) pairs.
    fn oracle_select(
        target: NetId,
        records: &[SampleLossRecord],
        config: &SelectionConfig,
    ) -> Vec<usize> {
        let (p1, p2) = target.peers();
        let b = records.len();
        let pool_size = match config.criterion {
            SelectionCriterion::LossOnly => b,
            SelectionCriterion::UncertaintyThenLoss => {
                (config.uncertainty_keep_fraction * b as f64).floor() as usize
            }
        };
        let mut by_mu: Vec<&SampleLossRecord> = records.iter().collect();
        by_mu.sort_by(|x, y| {
            let mx = (x.loss_of(p1) - x.loss_of(p2)).abs();
            let my = (y.loss_of(p1) - y.loss_of(p2)).abs();
            mx.total_cmp(&my).then(x.index.cmp(&y.index))
        });
        let mut pool: Vec<&SampleLossRecord> = if config.criterion == SelectionCriterion::LossOnly {
            records.iter().collect()
        } else {
            by_mu.into_iter().take(pool_size).collect()
        };
        pool.sort_by(|x, y| {
            let sx = (x.loss_of(p1) + x.loss_of(p2)) / 2.0;
            let sy = (y.loss_of(p1) + y.loss_of(p2)) / 2.0;
            sx.total_cmp(&sy).then(x.index.cmp(&y.index))
        });
        let keep = (config.keep_fraction * b as f64).floor() as usize;
        let mut out: Vec<usize> = pool.into_iter().take(keep).map(|r| r.index).collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn eight_records_tau_075_keeps_4_of_low_mu_6() {
        // mu for target A = |b - c|; give indices 6 and 7 the largest mu so
        // they fall out of the pool, then check the 4 smallest mean losses
        // among the remaining 6 are returned.
        let records = vec![
            rec(0, 9.0, 0.30, 0.32), // mu 0.02 score 0.31
            rec(1, 9.0, 0.10, 0.14), // mu 0.04 score 0.12
            rec(2, 9.0, 0.50, 0.55), // mu 0.05 score 0.525
            rec(3, 9.0, 0.20, 0.26), // mu 0.06 score 0.23
            rec(4, 9.0, 0.40, 0.47), // mu 0.07 score 0.435
            rec(5, 9.0, 0.60, 0.68), // mu 0.08 score 0.64
            rec(6, 9.0, 0.05, 0.95), // mu 0.90 (filtered)
            rec(7, 9.0, 0.01, 0.99), // mu 0.98 (filtered)
        ];
        let cfg = SelectionConfig::default();
        let got = select_for(NetId::A, &records, &cfg).unwrap();
        assert_eq!(got, vec![0, 1, 3, 4]);
        assert_eq!(got, oracle_select(NetId::A, &records, &cfg));
    }

    #[test]
    fn identical_records_select_lowest_indices() {
        let records: Vec<_> = (0..8).map(|i| rec(i, 0.5, 0.5, 0.5)).collect();
        let cfg = SelectionConfig::default();
        assert_eq!(select_for(NetId::B, &records, &cfg).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn loss_only_ignores_uncertainty() {
        // Spreading the two peer losses apart symmetrically changes mu while
        // keeping the small-loss score (their mean) fixed; loss_only output
        // must not move. Peers of C are (A, B).
        let mut rng = crate::rng::seeded_rng(2);
        let cfg = SelectionConfig {
            criterion: SelectionCriterion::LossOnly,
            ..SelectionConfig::default()
        };
        for _ in 0..50 {
            let records: Vec<_> = (0..10)
                .map(|i| rec(i, 1.0 + rng.gen::<f64>(), 1.0 + rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let base = select_for(NetId::C, &records, &cfg).unwrap();
            let perturbed: Vec<_> = records
                .iter()
                .map(|r| {
                    let d = rng.gen::<f64>() * 0.9;
                    rec(r.index, r.loss_a + d, r.loss_b - d, r.loss_c)
                })
                .collect();
            assert_eq!(select_for(NetId::C, &perturbed, &cfg).unwrap(), base);
        }
    }

    #[test]
    fn peer_only_dependence() {
        let mut rng = crate::rng::seeded_rng(3);
        for _ in 0..100 {
            let records = random_records(&mut rng, 9);
            let cfg = SelectionConfig::default();
            let base = select_for(NetId::A, &records, &cfg).unwrap();
            let fuzzed: Vec<_> = records
                .iter()
                .map(|r| rec(r.index, rng.gen::<f64>() * 10.0, r.loss_b, r.loss_c))
                .collect();
            assert_eq!(select_for(NetId::A, &fuzzed, &cfg).unwrap(), base);
        }
    }

    #[test]
    fn selection_size_is_floor_r_b() {
        let mut rng = crate::rng::seeded_rng(4);
        for b in 2..20 {
            let records = random_records(&mut rng, b);
            let cfg = SelectionConfig::default();
            let sel = select_for(NetId::B, &records, &cfg).unwrap();
            assert_eq!(sel.len(), (0.5 * b as f64).floor() as usize);
        }
    }

    #[test]
    fn batch_of_one_with_half_keep_is_error() {
        let records = vec![rec(0, 0.1, 0.2, 0.3)];
        let err = select_for(NetId::A, &records, &SelectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySelection { .. }));
    }

    #[test]
    fn selected_indices_lie_in_low_mu_pool() {
        let mut rng = crate::rng::seeded_rng(5);
        for _ in 0..100 {
            let records = random_records(&mut rng, 12);
            let cfg = SelectionConfig::default();
            let sel = select_for(NetId::A, &records, &cfg).unwrap();
            let pool_size = (cfg.uncertainty_keep_fraction * 12.0).floor() as usize;
            let by_mu: Vec<(f64, usize)> = records
                .iter()
                .map(|r| (uncertainty(r.loss_b, r.loss_c), r.index))
                .collect();
            let pool: std::collections::HashSet<usize> =
                smallest_k(by_mu, pool_size).into_iter().collect();
            assert!(sel.iter().all(|i| pool.contains(i)));
        }
    }

    #[test]
    fn raised_uncertainty_excludes_a_record() {
        // All equal except one record whose peer losses disagree wildly;
        // it must never be selected under the default criterion.
        for victim in 0..8 {
            let records: Vec<_> = (0..8)
                .map(|i| {
                    if i == victim {
                        rec(i, 0.5, 0.1, 0.9)
                    } else {
                        rec(i, 0.5, 0.5, 0.5)
                    }
                })
                .collect();
            let sel = select_for(NetId::A, &records, &SelectionConfig::default()).unwrap();
            assert!(!sel.contains(&victim));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn matches_oracle_on_random_batches(seed in 0u64..100_000, b in 2usize..13) {
            let mut rng = crate::rng::seeded_rng(seed);
            let records = random_records(&mut rng, b);
            for criterion in [SelectionCriterion::UncertaintyThenLoss, SelectionCriterion::LossOnly] {
                let cfg = SelectionConfig { criterion, ..SelectionConfig::default() };
                for target in NetId::ALL {
                    let got = select_for(target, &records, &cfg).unwrap();
                    prop_assert_eq!(got, oracle_select(target, &records, &cfg));
                }
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..100_000) {
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::seeded_rng(seed);
            let records = random_records(&mut rng, 10);
            let cfg = SelectionConfig::default();
            let base = select_for(NetId::A, &records, &cfg).unwrap();
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rng);
            // Records carry their original indices, so the selected set is
            // invariant to storage order.
            prop_assert_eq!(select_for(NetId::A, &shuffled, &cfg).unwrap(), base);
        }
    }
}
