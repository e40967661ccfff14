//! Two-stage training loop: selection epochs, then joint optimization with
//! label correction from epoch `k` onward.

use serde::{Deserialize, Serialize};

use crate::correction::{CorrectionConfig, JoScope, PeerCount};
use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{Committee, ModelConfig};
use crate::nn::{softmax_2class, GradBuf, LossHead, Sgd, TargetSpec};
use crate::rng::{stream_rng, Stream};
use crate::selection::{select_for, NetId, SampleLossRecord, SelectionConfig, SelectionCriterion};

/// Training strategy, one per results-table row family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One network, plain cross-entropy on every sample.
    Vanilla,
    /// Committee with small-loss selection only (no uncertainty filter).
    CoteachSmallLoss,
    /// Committee with uncertainty-then-loss sample selection.
    Ss,
    /// Selection epochs followed by joint optimization with label
    /// correction from epoch `k`.
    SsJo,
}

impl Strategy {
    pub fn uses_committee(self) -> bool {
        !matches!(self, Strategy::Vanilla)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::CoteachSmallLoss => "coteach_small_loss",
            Strategy::Ss => "ss",
            Strategy::SsJo => "ss_jo",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Strategy::Vanilla),
            "coteach_small_loss" => Ok(Strategy::CoteachSmallLoss),
            "ss" => Ok(Strategy::Ss),
            "ss_jo" => Ok(Strategy::SsJo),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Full specification of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; epoch `e` uses `lr * gamma^e`.
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_gamma: f64,
    pub selection: SelectionConfig,
    pub correction: CorrectionConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// Paper-scale protocol: 100 epochs, batch 32, SGD(lr 1e-3, momentum
    /// 0.9, weight decay 1e-3), exponential decay 0.97.
    pub fn new(model: ModelConfig, strategy: Strategy) -> Self {
        Self {
            model,
            strategy,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-3,
            lr_decay_gamma: 0.97,
            selection: SelectionConfig::default(),
            correction: CorrectionConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.selection.validate()?;
        self.correction.validate()?;
        self.augment.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight decay must be >= 0".into()));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr decay gamma must be in (0, 1], got {}",
                self.lr_decay_gamma
            )));
        }
        let keep = (self.selection.keep_fraction * self.batch_size as f64).floor();
        if self.strategy.uses_committee() && keep < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "batch size {} too small for keep fraction {}",
                self.batch_size, self.selection.keep_fraction
            )));
        }
        Ok(())
    }

    /// The selection config actually used: the co-teaching baseline forces
    /// the loss-only criterion.
    pub fn effective_selection(&self) -> SelectionConfig {
        let mut sel = self.selection;
        if self.strategy == Strategy::CoteachSmallLoss {
            sel.criterion = SelectionCriterion::LossOnly;
        }
        sel
    }

    /// Joint optimization runs in epoch `e` under this config.
    pub fn jo_active(&self, epoch: usize) -> bool {
        self.strategy == Strategy::SsJo && epoch >= self.correction.jo_start_epoch
    }
}

/// Per-epoch bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss per committee member.
    pub train_loss: Vec<f64>,
    /// Mean over batches of |S_A ∩ S_B ∩ S_C| / floor(R·B); committee
    /// strategies only.
    pub selection_overlap: Option<f64>,
    /// Mean Dice of corrected labels against clean masks over the epoch's
    /// batches; joint-optimization epochs only.
    pub corrected_label_dice: Option<f64>,
    pub test_dice: f64,
    pub jo_active: bool,
}

/// Result of [`run`]: the trained committee and the epoch history.
pub struct TrainOutcome {
    pub committee: Committee,
    pub history: Vec<EpochMetrics>,
}

/// Mean Dice of the committee's ensembled argmax predictions against the
/// clean masks.
pub fn evaluate(committee: &Committee, test: &[Sample]) -> Result<f64> {
    evaluate_batched(committee, test, 16)
}

fn evaluate_batched(committee: &Committee, test: &[Sample], chunk: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("evaluate needs a nonempty test set".into()));
    }
    let n_nets = committee.len() as f64;
    let mut total = 0.0;
    for group in test.chunks(chunk) {
        let imgs: Vec<&[f32]> = group.iter().map(|s| s.image_flat()).collect();
        let hw = imgs[0].len();
        // mean foreground probability over members, f64 accumulation
        let mut acc: Vec<Vec<f64>> = vec![vec![0.0; hw]; group.len()];
        for net in committee.nets() {
            let logits = net.forward_infer(&imgs);
            for (a, lg) in acc.iter_mut().zip(&logits) {
                let probs = softmax_2class(lg);
                for (v, &p1) in a.iter_mut().zip(&probs[hw..]) {
                    *v += p1 as f64;
                }
            }
        }
        for (a, sample) in acc.iter().zip(group) {
            let (h, w) = sample.clean_mask.dim();
            let mut inter = 0usize;
            let mut pred_count = 0usize;
            let mut clean_count = 0usize;
            for r in 0..h {
                for c in 0..w {
                    let fg = a[r * w + c] / n_nets > 0.5;
                    let cl = sample.clean_mask.get(r, c) == 1;
                    inter += usize::from(fg && cl);
                    pred_count += usize::from(fg);
                    clean_count += usize::from(cl);
                }
            }
            total += if pred_count + clean_count == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (pred_count + clean_count) as f64
            };
        }
    }
    Ok(total / test.len() as f64)
}

/// A prepared mini-batch: augmented flat images and flat masks.
struct Batch {
    imgs: Vec<Vec<f32>>,
    noisy: Vec<Vec<u8>>,
    clean: Vec<BinaryMask>,
}

fn mask_flat(mask: &BinaryMask) -> Vec<u8> {
    let (h, w) = mask.dim();
    let mut v = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            v.push(mask.get(r, c));
        }
    }
    v
}

fn build_batch(
    train: &[Sample],
    indices: &[usize],
    aug: &AugmentConfig,
    seed: u64,
    epoch: usize,
) -> Result<Batch> {
    let mut imgs = Vec::with_capacity(indices.len());
    let mut noisy = Vec::with_capacity(indices.len());
    let mut clean = Vec::with_capacity(indices.len());
    for &idx in indices {
        let mut rng = stream_rng(
            seed,
            Stream::Augment {
                epoch: epoch as u64,
                sample: idx as u64,
            },
        );
        let sample = augment(&train[idx], aug, &mut rng)?;
        imgs.push(sample.image_flat().to_vec());
        noisy.push(mask_flat(&sample.train_mask));
        clean.push(sample.clean_mask);
    }
    Ok(Batch {
        imgs,
        noisy,
        clean,
    })
}

/// Stats produced by one committee batch step.
struct BatchStats {
    /// Per-net mean loss of the contributing samples.
    losses: Vec<f64>,
    overlap: f64,
    corrected_dice: Option<f64>,
}

/// Forward all members, select per member, update each member on its own
/// selected (or jointly supervised) samples. All forwards happen before any
/// update, so every member sees frozen peer outputs.
#[allow(clippy::too_many_arguments)]
fn committee_batch_step(
    committee: &mut Committee,
    optimizers: &mut [Sgd],
    grads: &mut [GradBuf],
    batch: &Batch,
    selection: &SelectionConfig,
    correction: &CorrectionConfig,
    jo: bool,
    lr: f64,
) -> Result<BatchStats> {
    let b = batch.imgs.len();
    let hw = batch.imgs[0].len();
    let head = LossHead::new(hw);
    let img_refs: Vec<&[f32]> = batch.imgs.iter().map(|v| v.as_slice()).collect();

    // frozen forwards for all members
    let mut probs_all = Vec::with_capacity(committee.len());
    let mut caches = Vec::with_capacity(committee.len());
    for net in committee.nets() {
        let (logits, cache) = net.forward_batch(&img_refs);
        let probs: Vec<Vec<f32>> = logits.iter().map(|lg| softmax_2class(lg)).collect();
        probs_all.push(probs);
        caches.push(cache);
    }

    // per-sample per-net losses against the (noisy) training labels
    let records: Vec<SampleLossRecord> = (0..b)
        .map(|i| SampleLossRecord {
            index: i,
            loss_a: head.sample_loss(&probs_all[0][i], &TargetSpec::Hard(&batch.noisy[i])),
            loss_b: head.sample_loss(&probs_all[1][i], &TargetSpec::Hard(&batch.noisy[i])),
            loss_c: head.sample_loss(&probs_all[2][i], &TargetSpec::Hard(&batch.noisy[i])),
        })
        .collect();

    let selections: Vec<Vec<usize>> = NetId::ALL
        .iter()
        .map(|&net| select_for(net, &records, selection))
        .collect::<Result<_>>()?;

    let keep = selections[0].len();
    let overlap = {
        let s: Vec<std::collections::HashSet<usize>> = selections
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        let inter = s[0].iter().filter(|i| s[1].contains(i) && s[2].contains(i)).count();
        inter as f64 / keep as f64
    };

    let mut losses = Vec::with_capacity(3);
    let mut corrected_dice_sum = 0.0;
    let mut corrected_dice_n = 0usize;

    for (t, &net_id) in NetId::ALL.iter().enumerate() {
        let selected: std::collections::HashSet<usize> = selections[t].iter().copied().collect();
        let mut dlogits: Vec<Vec<f32>> = vec![Vec::new(); b];
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;

        // soft corrected targets for the jo-scope samples, from frozen peers
        let mut soft_targets: Vec<Option<Vec<f32>>> = vec![None; b];
        if jo {
            let (p1, p2) = net_id.peers();
            for i in 0..b {
                let in_scope = match correction.jo_scope {
                    JoScope::AllSamples => true,
                    JoScope::UnselectedOnly => !selected.contains(&i),
                };
                if !in_scope {
                    continue;
                }
                let peer_maps: Vec<&[f32]> = match correction.peer_count {
                    PeerCount::Two => vec![
                        &probs_all[p1.index()][i][..],
                        &probs_all[p2.index()][i][..],
                    ],
                    PeerCount::Three => {
                        vec![&probs_all[0][i][..], &probs_all[1][i][..], &probs_all[2][i][..]]
                    }
                };
                let (corrected, cd) = corrected_target_flat(&peer_maps, hw, correction, &batch.clean[i]);
                corrected_dice_sum += cd;
                corrected_dice_n += 1;
                soft_targets[i] = Some(corrected);
            }
        }

        for i in 0..b {
            let is_selected = selected.contains(&i);
            if jo {
                // joint epochs: every sample contributes with weight 1/B
                let weight = 1.0 / b as f32;
                let target = match &soft_targets[i] {
                    Some(soft) => TargetSpec::Mixed {
                        hard: &batch.noisy[i],
                        soft,
                        alpha: correction.alpha as f32,
                    },
                    None => TargetSpec::Hard(&batch.noisy[i]),
                };
                loss_sum += head.sample_loss(&probs_all[t][i], &target);
                loss_n += 1;
                dlogits[i] = head.dlogits(&probs_all[t][i], &target, weight);
            } else if is_selected {
                // selection epochs: mean over the selected samples
                let weight = 1.0 / keep as f32;
                let target = TargetSpec::Hard(&batch.noisy[i]);
                loss_sum += head.sample_loss(&probs_all[t][i], &target);
                loss_n += 1;
                dlogits[i] = head.dlogits(&probs_all[t][i], &target, weight);
            }
        }

        grads[t].reset();
        committee.nets()[t].backward_batch(&caches[t], &dlogits, &mut grads[t]);
        losses.push(loss_sum / loss_n.max(1) as f64);
    }

    // apply updates only after all members computed their gradients
    for t in 0..3 {
        optimizers[t].step(&mut committee.nets_mut()[t], &grads[t], lr as f32);
    }

    Ok(BatchStats {
        losses,
        overlap,
        corrected_dice: if corrected_dice_n > 0 {
            Some(corrected_dice_sum / corrected_dice_n as f64)
        } else {
            None
        },
    })
}

/// Average-then-sharpen label correction on flat (2, HW) f32 probability
/// maps, plus the Dice of its argmax against the clean mask. Per-pixel math
/// runs in f64 and mirrors [`corrected_from_peers`] exactly (the trainer's
/// reconstruction test pins the equivalence).
fn corrected_target_flat(
    peers: &[&[f32]],
    hw: usize,
    correction: &CorrectionConfig,
    clean: &BinaryMask,
) -> (Vec<f32>, f64) {
    let inv_t = 1.0 / correction.temperature;
    let n = peers.len() as f64;
    let (h, w) = clean.dim();
    let mut flat = vec![0.0f32; 2 * hw];
    let mut inter = 0usize;
    let mut pred_count = 0usize;
    let mut clean_count = 0usize;
    for px in 0..hw {
        let mut q0 = 0.0f64;
        let mut q1 = 0.0f64;
        for p in peers {
            let p1 = (p[hw + px] as f64).clamp(0.0, 1.0);
            q0 += 1.0 - p1;
            q1 += p1;
        }
        q0 /= n;
        q1 /= n;
        let maxp = q0.max(q1);
        let v0 = (q0 / maxp).powf(inv_t);
        let v1 = (q1 / maxp).powf(inv_t);
        let denom = v0 + v1;
        let (mut s0, mut s1) = (v0 / denom, v1 / denom);
        if correction.hard_corrected_targets {
            (s0, s1) = if s1 > s0 { (0.0, 1.0) } else { (1.0, 0.0) };
        }
        flat[px] = s0 as f32;
        flat[hw + px] = s1 as f32;
        let fg = s1 > s0;
        let cl = clean.get(px / w, px % w) == 1;
        inter += usize::from(fg && cl);
        pred_count += usize::from(fg);
        clean_count += usize::from(cl);
    }
    debug_assert_eq!(hw, h * w);
    let cd = if pred_count + clean_count == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (pred_count + clean_count) as f64
    };
    (flat, cd)
}

fn vanilla_batch_step(
    committee: &mut Committee,
    optimizer: &mut Sgd,
    grads: &mut GradBuf,
    batch: &Batch,
    lr: f64,
) -> Result<f64> {
    let b = batch.imgs.len();
    let hw = batch.imgs[0].len();
    let head = LossHead::new(hw);
    let img_refs: Vec<&[f32]> = batch.imgs.iter().map(|v| v.as_slice()).collect();
    let (logits, cache) = committee.nets()[0].forward_batch(&img_refs);
    let mut loss_sum = 0.0;
    let dlogits: Vec<Vec<f32>> = logits
        .iter()
        .enumerate()
        .map(|(i, lg)| {
            let probs = softmax_2class(lg);
            let target = TargetSpec::Hard(&batch.noisy[i]);
            loss_sum += head.sample_loss(&probs, &target);
            head.dlogits(&probs, &target, 1.0 / b as f32)
        })
        .collect();
    grads.reset();
    committee.nets()[0].backward_batch(&cache, &dlogits, grads);
    optimizer.step(&mut committee.nets_mut()[0], grads, lr as f32);
    Ok(loss_sum / b as f64)
}

/// Runs the full schedule and returns the trained committee plus per-epoch
/// history. Deterministic given the config (single-threaded math, all
/// randomness derived from `config.seed`).
pub fn run(config: &TrainConfig, train: &[Sample], test: &[Sample]) -> Result<TrainOutcome> {
    run_observed(config, train, test, &mut |_, _| Ok(()))
}

/// [`run`] with a per-epoch callback (checkpointing, progress logs).
pub fn run_observed(
    config: &TrainConfig,
    train: &[Sample],
    test: &[Sample],
    observer: &mut dyn FnMut(&Committee, &EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    for s in train.iter().chain(test) {
        s.validate()?;
        if s.dim() != config.model.input_hw {
            return Err(Error::shape_mismatch(
                format!("{:?}", config.model.input_hw),
                format!("sample {} is {:?}", s.id, s.dim()),
            ));
        }
    }
    let selection = config.effective_selection();

    let mut committee = if config.strategy.uses_committee() {
        Committee::trio(&config.model, config.seed)?
    } else {
        Committee::single(&config.model, config.seed)?
    };
    let mut optimizers: Vec<Sgd> = committee
        .nets()
        .iter()
        .map(|n| Sgd::new(n, config.momentum as f32, config.weight_decay as f32))
        .collect();
    let mut grads: Vec<GradBuf> = committee.nets().iter().map(GradBuf::zeros_like).collect();

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.lr_decay_gamma.powi(epoch as i32);
        let jo = config.jo_active(epoch);

        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(config.seed, Stream::EpochShuffle(epoch as u64)));

        let mut loss_acc = vec![0.0; committee.len()];
        let mut overlap_acc = 0.0;
        let mut corrected_acc = 0.0;
        let mut corrected_batches = 0usize;
        let mut batches = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let batch = build_batch(train, chunk, &config.augment, config.seed, epoch)?;
            if config.strategy.uses_committee() {
                let stats = committee_batch_step(
                    &mut committee,
                    &mut optimizers,
                    &mut grads,
                    &batch,
                    &selection,
                    &config.correction,
                    jo,
                    lr,
                )?;
                for (acc, l) in loss_acc.iter_mut().zip(&stats.losses) {
                    *acc += l;
                }
                overlap_acc += stats.overlap;
                if let Some(cd) = stats.corrected_dice {
                    corrected_acc += cd;
                    corrected_batches += 1;
                }
            } else {
                loss_acc[0] +=
                    vanilla_batch_step(&mut committee, &mut optimizers[0], &mut grads[0], &batch, lr)?;
            }
            batches += 1;
        }

        let test_dice = evaluate_batched(&committee, test, config.batch_size.max(1))?;
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_acc.iter().map(|l| l / batches as f64).collect(),
            selection_overlap: config
                .strategy
                .uses_committee()
                .then_some(overlap_acc / batches as f64),
            corrected_label_dice: (corrected_batches > 0)
                .then_some(corrected_acc / corrected_batches as f64),
            test_dice,
            jo_active: jo,
        };
        observer(&committee, &metrics)?;
        history.push(metrics);
    }

    Ok(TrainOutcome { committee, history })
}

/// End-of-training corrected labels for a sample set: the sharpened
/// ensemble prediction of the committee, evaluated without augmentation.
pub fn corrected_labels_final(
    committee: &Committee,
    samples: &[Sample],
    correction: &CorrectionConfig,
) -> Result<Vec<crate::correction::SoftLabel>> {
    let mut out = Vec::with_capacity(samples.len());
    for group in samples.chunks(16) {
        let imgs: Vec<&[f32]> = group.iter().map(|s| s.image_flat()).collect();
        for soft in committee.ensemble_predict(&imgs)? {
            out.push(crate::correction::sharpen(&soft, correction.temperature)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::SoftLabel;
    use crate::data::synth_shapes;
    use crate::model::predict_proba;
    use crate::selection::per_sample_loss;

    fn tiny_model(size: usize) -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 2,
            base_channels: 4,
            input_hw: (size, size),
        }
    }

    fn tiny_config(strategy: Strategy, epochs: usize, batch: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(tiny_model(32), strategy);
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.learning_rate = 0.05;
        cfg.augment = AugmentConfig::none();
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = tiny_config(Strategy::Ss, 1, 4, 0);
        cfg.batch_size = 1; // floor(0.5 * 1) = 0
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(Strategy::Vanilla, 1, 4, 0);
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(Strategy::Ss, 1, 4, 0);
        cfg.lr_decay_gamma = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn coteach_forces_loss_only() {
        let cfg = tiny_config(Strategy::CoteachSmallLoss, 1, 4, 0);
        assert_eq!(cfg.effective_selection().criterion, SelectionCriterion::LossOnly);
        let cfg = tiny_config(Strategy::Ss, 1, 4, 0);
        assert_eq!(
            cfg.effective_selection().criterion,
            SelectionCriterion::UncertaintyThenLoss
        );
    }

    #[test]
    fn vanilla_learns_the_synthetic_task() {
        let samples = synth_shapes(40, 32, 40).unwrap();
        let (train, test) = samples.split_at(32);
        let mut cfg = tiny_config(Strategy::Vanilla, 14, 8, 7);
        cfg.learning_rate = 0.03;
        let outcome = run(&cfg, train, test).unwrap();
        assert_eq!(outcome.history.len(), 14);
        let first = outcome.history.first().unwrap();
        let last = outcome.history.last().unwrap();
        assert!(last.train_loss[0] < first.train_loss[0], "loss did not decrease");
        assert!(last.test_dice > 0.3, "test dice stuck at {}", last.test_dice);
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let samples = synth_shapes(12, 32, 41).unwrap();
        let (train, test) = samples.split_at(8);
        let mut cfg = tiny_config(Strategy::SsJo, 2, 4, 9);
        cfg.correction.jo_start_epoch = 1;
        let a = run(&cfg, train, test).unwrap();
        let b = run(&cfg, train, test).unwrap();
        assert_eq!(a.history, b.history);
        for (na, nb) in a.committee.nets().iter().zip(b.committee.nets()) {
            for (pa, pb) in na.param_slices().iter().zip(nb.param_slices()) {
                assert_eq!(*pa, pb);
            }
        }
    }

    /// Non-selected samples contribute nothing: scrambling their labels
    /// must not change the update, as long as they stay unselected.
    #[test]
    fn unselected_samples_never_touch_gradients() {
        let mut samples = synth_shapes(4, 32, 42).unwrap();
        // samples 2 and 3 get absurd labels (all foreground), which carry a
        // clearly higher loss than the true blobs at initialization
        for s in &mut samples[2..] {
            s.train_mask = crate::mask::BinaryMask::ones(32, 32);
        }
        let mut scrambled = samples.clone();
        let mut rng = crate::rng::seeded_rng(5);
        use rand::Rng;
        for s in &mut scrambled[2..] {
            let mut m = s.train_mask.clone();
            for _ in 0..25 {
                let r = rng.gen_range(0..32);
                let c = rng.gen_range(0..32);
                m.set(r, c, false);
            }
            s.train_mask = m;
        }
        let test = synth_shapes(2, 32, 43).unwrap();
        let mut cfg = tiny_config(Strategy::Ss, 1, 4, 11);
        cfg.selection.uncertainty_keep_fraction = 1.0;
        let a = run(&cfg, &samples, &test).unwrap();
        let b = run(&cfg, &scrambled, &test).unwrap();
        // identical selections (0, 1) -> identical updates and metrics
        for (na, nb) in a.committee.nets().iter().zip(b.committee.nets()) {
            for (pa, pb) in na.param_slices().iter().zip(nb.param_slices()) {
                assert_eq!(*pa, pb);
            }
        }
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn learning_rate_follows_exponential_schedule() {
        let samples = synth_shapes(6, 32, 44).unwrap();
        let (train, test) = samples.split_at(4);
        let mut cfg = tiny_config(Strategy::Vanilla, 3, 4, 1);
        cfg.learning_rate = 0.01;
        cfg.lr_decay_gamma = 0.9;
        let outcome = run(&cfg, train, test).unwrap();
        for (e, m) in outcome.history.iter().enumerate() {
            assert_eq!(m.lr, 0.01 * 0.9f64.powi(e as i32));
        }
    }

    #[test]
    fn jo_schedule_flags_and_degeneracies() {
        let samples = synth_shapes(8, 32, 45).unwrap();
        let (train, test) = samples.split_at(6);
        let mut cfg = tiny_config(Strategy::SsJo, 4, 6, 3);
        cfg.correction.jo_start_epoch = 2;
        let outcome = run(&cfg, train, test).unwrap();
        let flags: Vec<bool> = outcome.history.iter().map(|m| m.jo_active).collect();
        assert_eq!(flags, vec![false, false, true, true]);
        for m in &outcome.history {
            assert_eq!(m.corrected_label_dice.is_some(), m.jo_active);
            assert!(m.selection_overlap.is_some());
        }

        // k >= epochs: identical to plain sample selection
        let mut late = tiny_config(Strategy::SsJo, 2, 6, 3);
        late.correction.jo_start_epoch = 99;
        let mut ss = tiny_config(Strategy::Ss, 2, 6, 3);
        ss.correction.jo_start_epoch = 99;
        let a = run(&late, train, test).unwrap();
        let b = run(&ss, train, test).unwrap();
        assert_eq!(a.history, b.history);

        // k = 0: joint optimization from the first epoch
        let mut immediate = tiny_config(Strategy::SsJo, 2, 6, 3);
        immediate.correction.jo_start_epoch = 0;
        let c = run(&immediate, train, test).unwrap();
        assert!(c.history.iter().all(|m| m.jo_active));
    }

    /// With R = tau = 1 every sample is selected, so selection-stage
    /// training equals joint training with alpha = 1 over all samples.
    #[test]
    fn degenerate_selection_equals_noisy_joint_training() {
        let samples = synth_shapes(8, 32, 46).unwrap();
        let (train, test) = samples.split_at(6);
        let mut ss = tiny_config(Strategy::Ss, 2, 6, 13);
        ss.selection.keep_fraction = 1.0;
        ss.selection.uncertainty_keep_fraction = 1.0;
        let mut jo = tiny_config(Strategy::SsJo, 2, 6, 13);
        jo.selection.keep_fraction = 1.0;
        jo.selection.uncertainty_keep_fraction = 1.0;
        jo.correction.jo_start_epoch = 0;
        jo.correction.alpha = 1.0;
        jo.correction.jo_scope = crate::correction::JoScope::AllSamples;
        let a = run(&ss, train, test).unwrap();
        let b = run(&jo, train, test).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ma, mb) in a.history.iter().zip(&b.history) {
            assert_eq!(ma.train_loss, mb.train_loss);
            assert_eq!(ma.test_dice, mb.test_dice);
        }
    }

    /// White-box oracle for one joint-optimization batch: the recorded
    /// epoch loss must equal the mean of per-sample losses reconstructed
    /// with the public selection/correction operations.
    #[test]
    fn jo_epoch_loss_matches_public_op_reconstruction() {
        let mut samples = synth_shapes(6, 32, 47).unwrap();
        // corrupt two training masks so selection has something to avoid
        for s in &mut samples[..2] {
            s.train_mask = crate::morphology::dilate(&s.train_mask, 3);
        }
        let test = synth_shapes(2, 32, 48).unwrap();
        let mut cfg = tiny_config(Strategy::SsJo, 1, 6, 21);
        cfg.correction.jo_start_epoch = 0;
        cfg.correction.alpha = 0.5;

        let outcome = run(&cfg, &samples, &test).unwrap();
        let recorded = &outcome.history[0].train_loss;

        // reconstruct the single batch: same shuffle stream as the trainer
        let mut order: Vec<usize> = (0..samples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(cfg.seed, Stream::EpochShuffle(0)));
        let batch: Vec<&Sample> = order.iter().map(|&i| &samples[i]).collect();

        // same initial committee
        let committee = Committee::trio(&cfg.model, cfg.seed).unwrap();
        let imgs: Vec<&[f32]> = batch.iter().map(|s| s.image_flat()).collect();
        let probs: Vec<Vec<SoftLabel>> = committee
            .nets()
            .iter()
            .map(|n| predict_proba(n, &imgs).unwrap())
            .collect();
        let records: Vec<SampleLossRecord> = (0..batch.len())
            .map(|i| SampleLossRecord {
                index: i,
                loss_a: per_sample_loss(&probs[0][i], &batch[i].train_mask).unwrap(),
                loss_b: per_sample_loss(&probs[1][i], &batch[i].train_mask).unwrap(),
                loss_c: per_sample_loss(&probs[2][i], &batch[i].train_mask).unwrap(),
            })
            .collect();

        for (t, net_id) in NetId::ALL.iter().enumerate() {
            let selected = select_for(*net_id, &records, &cfg.selection).unwrap();
            let selected: std::collections::HashSet<usize> = selected.into_iter().collect();
            let (p1, p2) = net_id.peers();
            let mut expected = 0.0;
            for i in 0..batch.len() {
                if selected.contains(&i) {
                    expected += per_sample_loss(&probs[t][i], &batch[i].train_mask).unwrap();
                } else {
                    let corrected = crate::correction::corrected_from_peers(
                        &[&probs[p1.index()][i], &probs[p2.index()][i]],
                        &cfg.correction,
                    )
                    .unwrap();
                    expected += crate::correction::joint_loss(
                        &probs[t][i],
                        &batch[i].train_mask,
                        &corrected,
                        cfg.correction.alpha,
                    )
                    .unwrap();
                }
            }
            expected /= batch.len() as f64;
            assert!(
                (recorded[t] - expected).abs() < 1e-6,
                "net {net_id}: recorded {} vs reconstructed {expected}",
                recorded[t]
            );
        }
    }

    #[test]
    fn evaluate_rejects_empty_test_set() {
        let committee = Committee::single(&tiny_model(32), 1).unwrap();
        assert!(evaluate(&committee, &[]).is_err());
    }

    #[test]
    fn shape_mismatch_between_config_and_samples_is_rejected() {
        let samples = synth_shapes(4, 64, 50).unwrap();
        let cfg = tiny_config(Strategy::Vanilla, 1, 4, 1);
        assert!(run(&cfg, &samples, &samples).is_err());
    }
}
