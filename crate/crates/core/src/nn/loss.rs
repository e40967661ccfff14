//! Softmax + cross-entropy head over two-class per-pixel logits.

use crate::selection::PROB_CLAMP_EPS;

/// Converts (2, HW) logits to (2, HW) probabilities. Two-class softmax is
/// a numerically-stable sigmoid of the logit difference.
pub fn softmax_2class(logits: &[f32]) -> Vec<f32> {
    let hw = logits.len() / 2;
    let mut probs = vec![0.0f32; logits.len()];
    for i in 0..hw {
        let d = logits[hw + i] - logits[i];
        let p1 = if d >= 0.0 {
            1.0 / (1.0 + (-d).exp())
        } else {
            let e = d.exp();
            e / (1.0 + e)
        };
        probs[i] = 1.0 - p1;
        probs[hw + i] = p1;
    }
    probs
}

/// Per-sample supervision target.
pub enum TargetSpec<'a> {
    /// Per-pixel class indices (the annotation mask).
    Hard(&'a [u8]),
    /// Per-pixel distribution, (2, HW).
    Soft(&'a [f32]),
    /// `alpha * Hard + (1 - alpha) * Soft` (the joint supervision).
    Mixed {
        hard: &'a [u8],
        soft: &'a [f32],
        alpha: f32,
    },
}

/// Loss and logit-gradient computations for one sample at a fixed pixel
/// count. Losses are accumulated in f64 with the same probability clamp as
/// the public loss functions.
pub struct LossHead {
    hw: usize,
}

impl LossHead {
    pub fn new(hw: usize) -> Self {
        Self { hw }
    }

    fn ce_hard(&self, probs: &[f32], hard: &[u8]) -> f64 {
        let mut total = 0.0f64;
        for i in 0..self.hw {
            let p = probs[hard[i] as usize * self.hw + i] as f64;
            total -= p.clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS).ln();
        }
        total / self.hw as f64
    }

    fn ce_soft(&self, probs: &[f32], soft: &[f32]) -> f64 {
        let mut total = 0.0f64;
        for cls in 0..2 {
            for i in 0..self.hw {
                let t = soft[cls * self.hw + i] as f64;
                if t > 0.0 {
                    let p = (probs[cls * self.hw + i] as f64)
                        .clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
                    total -= t * p.ln();
                }
            }
        }
        total / self.hw as f64
    }

    /// Mean per-pixel cross-entropy of `probs` against the target.
    pub fn sample_loss(&self, probs: &[f32], target: &TargetSpec) -> f64 {
        match target {
            TargetSpec::Hard(hard) => self.ce_hard(probs, hard),
            TargetSpec::Soft(soft) => self.ce_soft(probs, soft),
            TargetSpec::Mixed { hard, soft, alpha } => {
                *alpha as f64 * self.ce_hard(probs, hard)
                    + (1.0 - *alpha as f64) * self.ce_soft(probs, soft)
            }
        }
    }

    /// Gradient of `weight * sample_loss` with respect to the logits:
    /// `weight * (p - t_eff) / HW`, where `t_eff` is the (blended) target
    /// distribution.
    pub fn dlogits(&self, probs: &[f32], target: &TargetSpec, weight: f32) -> Vec<f32> {
        let scale = weight / self.hw as f32;
        let mut d = vec![0.0f32; 2 * self.hw];
        match target {
            TargetSpec::Hard(hard) => {
                for i in 0..self.hw {
                    let t1 = hard[i] as f32;
                    d[i] = scale * (probs[i] - (1.0 - t1));
                    d[self.hw + i] = scale * (probs[self.hw + i] - t1);
                }
            }
            TargetSpec::Soft(soft) => {
                for j in 0..2 * self.hw {
                    d[j] = scale * (probs[j] - soft[j]);
                }
            }
            TargetSpec::Mixed { hard, soft, alpha } => {
                let a = *alpha;
                for i in 0..self.hw {
                    let t1 = a * hard[i] as f32 + (1.0 - a) * soft[self.hw + i];
                    let t0 = a * (1.0 - hard[i] as f32) + (1.0 - a) * soft[i];
                    d[i] = scale * (probs[i] - t0);
                    d[self.hw + i] = scale * (probs[self.hw + i] - t1);
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_sums_to_one() {
        let logits = vec![0.5, -1.0, 3.0, 0.5, 1.0, -3.0];
        let probs = softmax_2class(&logits);
        for i in 0..3 {
            assert_abs_diff_eq!(probs[i] + probs[3 + i], 1.0, epsilon = 1e-6);
        }
        // larger logit gets larger probability (pixel 1: l1=1.0 vs l0=-1.0)
        assert!(probs[4] > probs[1]);
    }

    #[test]
    fn softmax_extreme_logits_are_finite() {
        let logits = vec![100.0, -100.0, -100.0, 100.0];
        let probs = softmax_2class(&logits);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(probs[3], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn hard_loss_matches_uniform_ln2() {
        let hw = 4;
        let probs = vec![0.5f32; 8];
        let hard = vec![0u8, 1, 0, 1];
        let head = LossHead::new(hw);
        let loss = head.sample_loss(&probs, &TargetSpec::Hard(&hard));
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-6);
    }

    #[test]
    fn mixed_loss_interpolates() {
        let hw = 2;
        let probs = vec![0.3, 0.6, 0.7, 0.4];
        let hard = vec![1u8, 0];
        let soft = vec![0.2, 0.9, 0.8, 0.1];
        let head = LossHead::new(hw);
        let l_hard = head.sample_loss(&probs, &TargetSpec::Hard(&hard));
        let l_soft = head.sample_loss(&probs, &TargetSpec::Soft(&soft));
        let l_mixed = head.sample_loss(
            &probs,
            &TargetSpec::Mixed {
                hard: &hard,
                soft: &soft,
                alpha: 0.25,
            },
        );
        assert_abs_diff_eq!(l_mixed, 0.25 * l_hard + 0.75 * l_soft, epsilon = 1e-9);
    }

    #[test]
    fn dlogits_matches_loss_finite_difference() {
        let hw = 3;
        let mut logits = vec![0.2f32, -0.4, 0.9, -0.1, 0.3, 0.5];
        let hard = vec![1u8, 0, 1];
        let soft = vec![0.6, 0.3, 0.2, 0.4, 0.7, 0.8];
        let head = LossHead::new(hw);
        for target in [
            TargetSpec::Hard(&hard),
            TargetSpec::Soft(&soft),
            TargetSpec::Mixed {
                hard: &hard,
                soft: &soft,
                alpha: 0.5,
            },
        ] {
            let probs = softmax_2class(&logits);
            let grad = head.dlogits(&probs, &target, 1.0);
            for j in 0..logits.len() {
                let h = 1e-3f32;
                let orig = logits[j];
                logits[j] = orig + h;
                let lp = head.sample_loss(&softmax_2class(&logits), &target);
                logits[j] = orig - h;
                let lm = head.sample_loss(&softmax_2class(&logits), &target);
                logits[j] = orig;
                let fd = (lp - lm) / (2.0 * h as f64);
                assert!(
                    (fd - grad[j] as f64).abs() < 1e-4,
                    "entry {j}: fd={fd} analytic={}",
                    grad[j]
                );
            }
        }
    }
}
