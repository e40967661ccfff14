//! Model configuration, the three-network committee, and checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::correction::SoftLabel;
use crate::error::{Error, Result};
use crate::nn::{softmax_2class, UNet};
use crate::rng::{derive_seed, Stream};

/// Architecture of one segmentation network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output classes L (background, foreground).
    pub num_classes: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels at the first level; doubled per level.
    pub base_channels: usize,
    /// Expected input size (H, W); must be divisible by 2^depth.
    pub input_hw: (usize, usize),
}

impl ModelConfig {
    /// Small preset that trains in seconds per epoch on one CPU core:
    /// depth 3, base 8, 64×64 inputs.
    pub fn desk() -> Self {
        Self {
            in_channels: 1,
            num_classes: 2,
            depth: 3,
            base_channels: 8,
            input_hw: (64, 64),
        }
    }

    /// Full-size preset: depth 4, base 64, 256×256 inputs.
    pub fn full() -> Self {
        Self {
            in_channels: 1,
            num_classes: 2,
            depth: 4,
            base_channels: 64,
            input_hw: (256, 256),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(
                "in_channels, base_channels and depth must be >= 1".into(),
            ));
        }
        if self.num_classes != 2 {
            return Err(Error::InvalidConfig(format!(
                "only binary segmentation (2 classes) is supported, got {}",
                self.num_classes
            )));
        }
        let div = 1usize << self.depth;
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input {h}x{w} must be divisible by 2^depth = {div}"
            )));
        }
        Ok(())
    }
}

/// Builds one U-Net with weights seeded by `seed`.
pub fn build_unet(config: &ModelConfig, seed: u64) -> Result<UNet> {
    UNet::new(config, &mut crate::rng::seeded_rng(seed))
}

/// A committee of structurally identical, independently initialized
/// networks: three for the robust strategies, one for the plain baseline.
pub struct Committee {
    nets: Vec<UNet>,
    seeds: Vec<u64>,
}

impl Committee {
    /// Three networks with distinct init streams derived from `root_seed`.
    pub fn trio(config: &ModelConfig, root_seed: u64) -> Result<Self> {
        let seeds: Vec<u64> = (0..3).map(|i| derive_seed(root_seed, Stream::NetInit(i))).collect();
        let nets = seeds
            .iter()
            .map(|&s| build_unet(config, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nets, seeds })
    }

    /// Single-network committee (the vanilla baseline).
    pub fn single(config: &ModelConfig, root_seed: u64) -> Result<Self> {
        let seed = derive_seed(root_seed, Stream::NetInit(0));
        Ok(Self {
            nets: vec![build_unet(config, seed)?],
            seeds: vec![seed],
        })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn nets(&self) -> &[UNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [UNet] {
        &mut self.nets
    }

    pub fn net(&self, idx: usize) -> &UNet {
        &self.nets[idx]
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn config(&self) -> &ModelConfig {
        self.nets[0].config()
    }

    /// Per-pixel mean of the member networks' probability maps.
    pub fn ensemble_predict(&self, images: &[&[f32]]) -> Result<Vec<SoftLabel>> {
        let maps: Vec<Vec<SoftLabel>> = self
            .nets
            .iter()
            .map(|net| predict_proba(net, images))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(images.len());
        for i in 0..images.len() {
            let refs: Vec<&SoftLabel> = maps.iter().map(|m| &m[i]).collect();
            out.push(crate::correction::average_predictions(&refs)?);
        }
        Ok(out)
    }
}

/// Softmax probabilities of one network on a batch of flat images, as
/// per-pixel distributions. Each pixel sums to 1 within 1e-6.
pub fn predict_proba(net: &UNet, images: &[&[f32]]) -> Result<Vec<SoftLabel>> {
    let cfg = net.config();
    let (h, w) = cfg.input_hw;
    for (i, img) in images.iter().enumerate() {
        if img.len() != cfg.in_channels * h * w {
            return Err(Error::shape_mismatch(
                format!("image of {} values", cfg.in_channels * h * w),
                format!("image {i} with {}", img.len()),
            ));
        }
    }
    let logits = net.forward_infer(images);
    Ok(logits.iter().map(|lg| probs_to_soft_label(&softmax_2class(lg), h, w)).collect())
}

/// Converts a flat (2, HW) f32 probability map to an H×W×2 soft label.
pub fn probs_to_soft_label(probs: &[f32], h: usize, w: usize) -> SoftLabel {
    let hw = h * w;
    let mut arr = Array3::zeros((h, w, 2));
    for r in 0..h {
        for c in 0..w {
            let p1 = probs[hw + r * w + c] as f64;
            // clean up f32 rounding so each pixel is an exact simplex
            let p1 = p1.clamp(0.0, 1.0);
            arr[(r, c, 0)] = 1.0 - p1;
            arr[(r, c, 1)] = p1;
        }
    }
    SoftLabel::new(arr).expect("softmax output is a valid simplex")
}

/// Checkpoint manifest stored next to the weight blobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub epoch: usize,
    pub seeds: Vec<u64>,
}

const CKPT_MAGIC: &[u8; 4] = b"NSG1";

fn write_weights(net: &UNet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(CKPT_MAGIC).map_err(|e| Error::io(path, e))?;
    let count: u64 = net.num_params() as u64;
    file.write_all(&count.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    for slice in net.param_slices() {
        let mut buf = Vec::with_capacity(slice.len() * 4);
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_weights(net: &mut UNet, path: &Path) -> Result<()> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::BadArtifact {
            path: path.into(),
            reason: "bad magic".into(),
        });
    }
    let mut count_bytes = [0u8; 8];
    file.read_exact(&mut count_bytes).map_err(|e| Error::io(path, e))?;
    let count = u64::from_le_bytes(count_bytes) as usize;
    if count != net.num_params() {
        return Err(Error::BadArtifact {
            path: path.into(),
            reason: format!("expected {} params, file has {count}", net.num_params()),
        });
    }
    for slice in net.param_slices_mut() {
        let mut buf = vec![0u8; slice.len() * 4];
        file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        for (i, v) in slice.iter_mut().enumerate() {
            *v = f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap());
        }
    }
    Ok(())
}

/// Writes per-network weight blobs plus a JSON manifest into `dir`.
pub fn save_checkpoint(committee: &Committee, epoch: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, net) in committee.nets.iter().enumerate() {
        write_weights(net, &dir.join(format!("net_{i}.bin")))?;
    }
    let manifest = CheckpointManifest {
        config: committee.config().clone(),
        epoch,
        seeds: committee.seeds.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Restores a committee from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(Committee, CheckpointManifest)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let mut nets = Vec::new();
    for i in 0..manifest.seeds.len() {
        let mut net = build_unet(&manifest.config, manifest.seeds[i])?;
        read_weights(&mut net, &dir.join(format!("net_{i}.bin")))?;
        nets.push(net);
    }
    if nets.is_empty() {
        return Err(Error::BadArtifact {
            path: dir.into(),
            reason: "checkpoint has no networks".into(),
        });
    }
    Ok((
        Committee {
            nets,
            seeds: manifest.seeds.clone(),
        },
        manifest,
    ))
}
