//! SGD with momentum and L2 weight decay.

use super::unet::{GradBuf, UNet};

/// Momentum SGD. Weight decay is added to the gradient before the momentum
/// update, and the velocity is applied as `w -= lr * v`.
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(net: &UNet, momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: net.param_slices().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut UNet, grads: &GradBuf, lr: f32) {
        let params = net.param_slices_mut();
        assert_eq!(params.len(), self.velocity.len());
        for ((param, vel), grad) in params.into_iter().zip(&mut self.velocity).zip(grads.slices()) {
            for ((w, v), &g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                let g = g + self.weight_decay * *w;
                *v = self.momentum * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::seeded_rng;

    #[test]
    fn step_moves_parameters_against_gradient() {
        let cfg = ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 1,
            base_channels: 2,
            input_hw: (4, 4),
        };
        let mut net = UNet::new(&cfg, &mut seeded_rng(1)).unwrap();
        let mut sgd = Sgd::new(&net, 0.9, 0.0);
        let mut g = GradBuf::zeros_like(&net);
        for buf in &mut g.bufs {
            buf.fill(1.0);
        }
        let before: Vec<f32> = net.param_slices().iter().flat_map(|p| p.iter().copied()).collect();
        sgd.step(&mut net, &g, 0.1);
        let after: Vec<f32> = net.param_slices().iter().flat_map(|p| p.iter().copied()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a - 0.1).abs() < 1e-6);
        }
        // momentum compounds on the second step with the same gradient
        sgd.step(&mut net, &g, 0.1);
        let after2: Vec<f32> = net.param_slices().iter().flat_map(|p| p.iter().copied()).collect();
        for (a, a2) in after.iter().zip(&after2) {
            assert!((a - a2 - 0.19).abs() < 1e-5);
        }
    }

    #[test]
    fn weight_decay_shrinks_weights_without_gradient() {
        let cfg = ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 1,
            base_channels: 2,
            input_hw: (4, 4),
        };
        let mut net = UNet::new(&cfg, &mut seeded_rng(2)).unwrap();
        let mut sgd = Sgd::new(&net, 0.0, 0.01);
        let g = GradBuf::zeros_like(&net);
        let before: Vec<f32> = net.param_slices().iter().flat_map(|p| p.iter().copied()).collect();
        sgd.step(&mut net, &g, 1.0);
        let after: Vec<f32> = net.param_slices().iter().flat_map(|p| p.iter().copied()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - b * 0.99).abs() < 1e-6);
        }
    }
}
