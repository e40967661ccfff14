//! Dataset ingestion, synthetic data generation, and augmentation.
//!
//! On-disk layout: `images/<id>.png` and `masks/<id>.png`, both 8-bit
//! grayscale; masks are thresholded at 128 on load. A JSON manifest pins
//! the train/test split.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, ImageReader, Luma};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::rng::{stream_rng, Stream};

/// One training/evaluation sample. The clean mask is held out for
/// evaluation; the train mask is what the optimizer sees and may be
/// corrupted.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// Normalized intensities (zero mean, unit variance per image).
    pub image: Array2<f32>,
    pub clean_mask: BinaryMask,
    pub train_mask: BinaryMask,
}

impl Sample {
    pub fn dim(&self) -> (usize, usize) {
        self.image.dim()
    }

    /// Flat row-major view of the image for the network.
    pub fn image_flat(&self) -> &[f32] {
        self.image.as_slice().expect("image arrays are standard layout")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.dim() != self.clean_mask.dim() || self.image.dim() != self.train_mask.dim() {
            return Err(Error::shape_mismatch(
                format!("{:?}", self.image.dim()),
                format!(
                    "clean {:?} / train {:?}",
                    self.clean_mask.dim(),
                    self.train_mask.dim()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Shenzhen,
    Synthetic,
}

/// Pinned train/test split of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub source: DataSource,
    pub image_size: usize,
    pub split_seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.train_ids.is_empty() || self.test_ids.is_empty() {
            return Err(Error::InvalidConfig("manifest needs nonempty train and test ids".into()));
        }
        let train: std::collections::HashSet<&String> = self.train_ids.iter().collect();
        for id in &self.test_ids {
            if train.contains(id) {
                return Err(Error::InvalidConfig(format!(
                    "id {id} appears in both train and test"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Scans `root/images`, shuffles ids deterministically by `split_seed`, and
/// assigns the first `train_count` to train and the next `test_count` to
/// test.
pub fn build_manifest(
    root: &Path,
    train_count: usize,
    test_count: usize,
    image_size: usize,
    split_seed: u64,
    source: DataSource,
) -> Result<DatasetManifest> {
    let images_dir = root.join("images");
    let mut ids: Vec<String> = std::fs::read_dir(&images_dir)
        .map_err(|e| Error::io(&images_dir, e))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().into_string().ok()?;
            name.strip_suffix(".png").map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.len() < train_count + test_count {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} images, split needs {}",
            ids.len(),
            train_count + test_count
        )));
    }
    use rand::seq::SliceRandom;
    ids.shuffle(&mut stream_rng(split_seed, Stream::Split));
    let manifest = DatasetManifest {
        train_ids: ids[..train_count].to_vec(),
        test_ids: ids[train_count..train_count + test_count].to_vec(),
        source,
        image_size,
        split_seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Normalizes intensities to zero mean and unit variance (population
/// statistics, f64 accumulation). Constant images are rejected.
pub fn normalize_image(raw: &Array2<f32>, id: &str) -> Result<Array2<f32>> {
    let n = raw.len() as f64;
    let mean = raw.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = raw.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var < 1e-16 {
        return Err(Error::ZeroVariance { id: id.to_string() });
    }
    let std = var.sqrt();
    Ok(raw.map(|&v| ((v as f64 - mean) / std) as f32))
}

fn read_gray(path: &Path, id: &str) -> Result<GrayImage> {
    if !path.exists() {
        return Err(Error::MissingFile {
            id: id.to_string(),
            path: path.into(),
        });
    }
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::UnreadableFile {
            id: id.to_string(),
            path: path.into(),
            reason: e.to_string(),
        })?;
    Ok(img.into_luma8())
}

fn gray_to_array(img: &GrayImage) -> Array2<f32> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32).0[0] as f32 / 255.0
    })
}

/// Loads the samples named by `ids` from the standard directory layout,
/// resizing images bilinearly and masks with nearest-neighbor, thresholding
/// masks at 128, then normalizing each image.
pub fn load_samples(root: &Path, ids: &[String], size: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let img_path = root.join("images").join(format!("{id}.png"));
        let mask_path = root.join("masks").join(format!("{id}.png"));
        let img = read_gray(&img_path, id)?;
        let mask_img = read_gray(&mask_path, id)?;

        let (w, h) = (size as u32, size as u32);
        let img = if img.dimensions() == (w, h) {
            img
        } else {
            image::imageops::resize(&img, w, h, FilterType::Triangle)
        };
        let mask_img = if mask_img.dimensions() == (w, h) {
            mask_img
        } else {
            image::imageops::resize(&mask_img, w, h, FilterType::Nearest)
        };

        let raw = gray_to_array(&img);
        let image = normalize_image(&raw, id)?;
        let mask = BinaryMask::from_fn(size, size, |r, c| {
            mask_img.get_pixel(c as u32, r as u32).0[0] >= 128
        });
        let sample = Sample {
            id: id.clone(),
            image,
            clean_mask: mask.clone(),
            train_mask: mask,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Loads the train and test partitions of a manifest.
pub fn load_split(root: &Path, manifest: &DatasetManifest) -> Result<(Vec<Sample>, Vec<Sample>)> {
    manifest.validate()?;
    Ok((
        load_samples(root, &manifest.train_ids, manifest.image_size)?,
        load_samples(root, &manifest.test_ids, manifest.image_size)?,
    ))
}

/// A generated sample before normalization: raw intensities in [0, 1],
/// ready for 8-bit export.
pub struct RawSynthSample {
    pub id: String,
    pub raw_image: Array2<f32>,
    pub mask: BinaryMask,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Quadratic-form value: < 1 inside, 1 on the boundary.
    fn level(&self, r: f64, c: f64) -> f64 {
        let dy = r - self.cy;
        let dx = c - self.cx;
        let (sin, cos) = self.theta.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / self.b).powi(2) + (v / self.a).powi(2)
    }

    fn contains(&self, r: f64, c: f64) -> bool {
        self.level(r, c) <= 1.0
    }
}

struct Bump {
    cy: f64,
    cx: f64,
    sigma: f64,
    amplitude: f64,
}

impl Bump {
    fn value(&self, r: f64, c: f64) -> f64 {
        let d2 = (r - self.cy).powi(2) + (c - self.cx).powi(2);
        self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Generates the raw (unnormalized) synthetic samples: two darker ellipse
/// blobs with soft edges over a noisy background with distractor bumps and
/// an illumination gradient; the clean mask is the blob union. The
/// appearance is deliberately ambiguous (weak, variable contrast) so that
/// annotation quality matters for learning.
pub fn synth_shapes_raw(count: usize, size: usize, seed: u64) -> Result<Vec<RawSynthSample>> {
    if count < 1 {
        return Err(Error::InvalidConfig("synth count must be >= 1".into()));
    }
    if size < 32 {
        return Err(Error::InvalidConfig(format!("synth size must be >= 32, got {size}")));
    }
    let s = size as f64;
    // ambiguity scales with resolution: big blobs tolerate more pixel
    // noise before the task stops being learnable from ~200 samples
    let difficulty = (s / 64.0).clamp(0.5, 1.0);
    let noise = Normal::new(0.0f64, 0.20 * difficulty).unwrap();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = stream_rng(seed, Stream::SynthSample(i as u64));
        let mut blob = |cx_lo: f64, cx_hi: f64| Ellipse {
            cy: s * rng.gen_range(0.35..0.65),
            cx: s * rng.gen_range(cx_lo..cx_hi),
            a: s * rng.gen_range(0.15..0.30),
            b: s * rng.gen_range(0.08..0.22),
            theta: rng.gen_range(-0.5..0.5),
        };
        let blobs = [blob(0.25, 0.38), blob(0.62, 0.75)];
        let contrast = rng.gen_range(0.12..0.30);
        let (gx, gy) = (rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12));
        let bumps: Vec<Bump> = (0..rng.gen_range(4..=8))
            .map(|_| Bump {
                cy: s * rng.gen_range(0.05..0.95),
                cx: s * rng.gen_range(0.05..0.95),
                sigma: s * rng.gen_range(0.05..0.14),
                amplitude: rng.gen_range(0.05..0.18)
                    * difficulty
                    * if rng.gen::<bool>() { -1.0 } else { 1.0 },
            })
            .collect();

        let mask = BinaryMask::from_fn(size, size, |r, c| {
            let (rf, cf) = (r as f64, c as f64);
            blobs.iter().any(|b| b.contains(rf, cf))
        });
        let mut raw = Array2::zeros((size, size));
        for r in 0..size {
            for c in 0..size {
                let (rf, cf) = (r as f64, c as f64);
                // soft blob edge: full contrast inside, fading near the
                // boundary of the closest ellipse
                let level = blobs.iter().map(|b| b.level(rf, cf)).fold(f64::INFINITY, f64::min);
                let inside = ((1.0 - level) * 5.0).clamp(0.0, 1.0);
                let mut v = 0.62 - contrast * inside;
                v += gx * (cf / s - 0.5) + gy * (rf / s - 0.5);
                for b in &bumps {
                    v += b.value(rf, cf);
                }
                v += noise.sample(&mut rng);
                raw[(r, c)] = v.clamp(0.02, 0.98) as f32;
            }
        }
        out.push(RawSynthSample {
            id: format!("synth-{i:05}"),
            raw_image: raw,
            mask,
        });
    }
    Ok(out)
}

/// Synthetic dataset with normalized images; the train mask starts equal to
/// the clean mask. Deterministic given `seed`.
pub fn synth_shapes(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    synth_shapes_raw(count, size, seed)?
        .into_iter()
        .map(|raw| {
            let image = normalize_image(&raw.raw_image, &raw.id)?;
            Ok(Sample {
                id: raw.id,
                image,
                clean_mask: raw.mask.clone(),
                train_mask: raw.mask,
            })
        })
        .collect()
}

/// Writes raw samples to the standard directory layout (8-bit PNGs; masks
/// stored as 0/255).
pub fn write_dataset(dir: &Path, samples: &[RawSynthSample]) -> Result<()> {
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    for s in samples {
        let (h, w) = s.raw_image.dim();
        let mut img = GrayImage::new(w as u32, h as u32);
        let mut mask = GrayImage::new(w as u32, h as u32);
        for r in 0..h {
            for c in 0..w {
                let v = (s.raw_image[(r, c)].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(c as u32, r as u32, Luma([v]));
                mask.put_pixel(c as u32, r as u32, Luma([s.mask.get(r, c) * 255]));
            }
        }
        let ip = images.join(format!("{}.png", s.id));
        img.save(&ip).map_err(|e| Error::UnreadableFile {
            id: s.id.clone(),
            path: ip.clone(),
            reason: e.to_string(),
        })?;
        let mp = masks.join(format!("{}.png", s.id));
        mask.save(&mp).map_err(|e| Error::UnreadableFile {
            id: s.id.clone(),
            path: mp.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Loads a mask PNG at its native size, thresholding at 128.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let img = read_gray(path, &id)?;
    let (w, h) = img.dimensions();
    Ok(BinaryMask::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] >= 128
    }))
}

/// Writes a mask as an 8-bit PNG (0/255).
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            img.put_pixel(c as u32, r as u32, Luma([mask.get(r, c) * 255]));
        }
    }
    img.save(path).map_err(|e| Error::UnreadableFile {
        id: path.display().to_string(),
        path: path.into(),
        reason: e.to_string(),
    })
}

/// Random-rotation and horizontal-flip augmentation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Max rotation magnitude in degrees; the angle is uniform in
    /// [-rotation_deg, rotation_deg].
    pub rotation_deg: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_deg) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidConfig(format!(
                "augment config out of range: rotation {} deg, flip prob {}",
                self.rotation_deg, self.flip_prob
            )));
        }
        Ok(())
    }
}

/// The sampled transform of one augmentation draw; the same instance is
/// applied to the image and every mask of a sample.
struct Transform {
    theta: f64,
    flip: bool,
    h: usize,
    w: usize,
}

impl Transform {
    /// Maps an output pixel center back to source coordinates.
    fn source(&self, r: usize, c: usize) -> (f64, f64) {
        let cy = (self.h as f64 - 1.0) / 2.0;
        let cx = (self.w as f64 - 1.0) / 2.0;
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let (sin, cos) = self.theta.sin_cos();
        // inverse rotation
        let sx = dx * cos - dy * sin + cx;
        let sy = dx * sin + dy * cos + cy;
        let sx = if self.flip { self.w as f64 - 1.0 - sx } else { sx };
        (sy, sx)
    }
}

fn bilinear(img: &Array2<f32>, sy: f64, sx: f64) -> f32 {
    let (h, w) = img.dim();
    if sy < -1.0 || sx < -1.0 || sy > h as f64 || sx > w as f64 {
        return 0.0;
    }
    let y0 = sy.floor();
    let x0 = sx.floor();
    let wy = (sy - y0) as f32;
    let wx = (sx - x0) as f32;
    let at = |y: f64, x: f64| -> f32 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            img[(y as usize, x as usize)]
        }
    };
    let v00 = at(y0, x0);
    let v01 = at(y0, x0 + 1.0);
    let v10 = at(y0 + 1.0, x0);
    let v11 = at(y0 + 1.0, x0 + 1.0);
    v00 * (1.0 - wy) * (1.0 - wx) + v01 * (1.0 - wy) * wx + v10 * wy * (1.0 - wx) + v11 * wy * wx
}

fn nearest_mask(mask: &BinaryMask, sy: f64, sx: f64) -> bool {
    let (h, w) = mask.dim();
    let r = sy.round();
    let c = sx.round();
    r >= 0.0 && c >= 0.0 && r < h as f64 && c < w as f64 && mask.get(r as usize, c as usize) == 1
}

/// Applies one random rotation + flip draw to a sample. The identical
/// transform instance is applied to the image (bilinear) and both masks
/// (nearest-neighbor), so their geometry stays aligned and masks stay
/// binary. Out-of-frame pixels fill with 0 (the image mean after
/// normalization, and background for masks).
pub fn augment(sample: &Sample, config: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    config.validate()?;
    let (h, w) = sample.dim();
    let theta = if config.rotation_deg > 0.0 {
        rng.gen_range(-config.rotation_deg..=config.rotation_deg).to_radians()
    } else {
        0.0
    };
    let flip = config.flip_prob > 0.0 && rng.gen::<f64>() < config.flip_prob;
    let t = Transform { theta, flip, h, w };

    let mut image = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let (sy, sx) = t.source(r, c);
            image[(r, c)] = bilinear(&sample.image, sy, sx);
        }
    }
    let warp_mask = |m: &BinaryMask| {
        BinaryMask::from_fn(h, w, |r, c| {
            let (sy, sx) = t.source(r, c);
            nearest_mask(m, sy, sx)
        })
    };
    Ok(Sample {
        id: sample.id.clone(),
        image,
        clean_mask: warp_mask(&sample.clean_mask),
        train_mask: warp_mask(&sample.train_mask),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn synth_is_deterministic_and_counted() {
        let a = synth_shapes(10, 32, 7).unwrap();
        let b = synth_shapes(10, 32, 7).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.image, y.image);
            assert_eq!(x.clean_mask, y.clean_mask);
            x.validate().unwrap();
        }
        let c = synth_shapes(10, 32, 8).unwrap();
        assert_ne!(a[0].clean_mask, c[0].clean_mask);
    }

    #[test]
    fn synth_rejects_bad_args() {
        assert!(synth_shapes(0, 64, 1).is_err());
        assert!(synth_shapes(5, 16, 1).is_err());
    }

    #[test]
    fn synth_foreground_fraction_in_bounds() {
        // spot-check here; the acceptance suite sweeps 1000 seeds
        for seed in 0..20 {
            for s in synth_shapes(5, 64, seed).unwrap() {
                let f = s.clean_mask.foreground_fraction();
                assert!((0.05..=0.5).contains(&f), "seed {seed} sample {} fraction {f}", s.id);
            }
        }
    }

    #[test]
    fn synth_images_are_normalized() {
        for s in synth_shapes(5, 64, 3).unwrap() {
            let n = s.image.len() as f64;
            let mean = s.image.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = s.image.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn normalize_rejects_constant_images() {
        let raw = Array2::from_elem((8, 8), 0.5f32);
        assert!(matches!(
            normalize_image(&raw, "flat"),
            Err(Error::ZeroVariance { .. })
        ));
    }

    #[test]
    fn augment_identity_when_disabled() {
        let sample = synth_shapes(1, 32, 5).unwrap().remove(0);
        let out = augment(&sample, &AugmentConfig::none(), &mut seeded_rng(1)).unwrap();
        assert_eq!(out.image, sample.image);
        assert_eq!(out.train_mask, sample.train_mask);
        assert_eq!(out.clean_mask, sample.clean_mask);
    }

    #[test]
    fn flip_reverses_columns_consistently() {
        let sample = synth_shapes(1, 32, 6).unwrap().remove(0);
        let cfg = AugmentConfig {
            rotation_deg: 0.0,
            flip_prob: 1.0,
        };
        let out = augment(&sample, &cfg, &mut seeded_rng(2)).unwrap();
        let (h, w) = sample.dim();
        for r in 0..h {
            for c in 0..w {
                assert_eq!(out.image[(r, c)], sample.image[(r, w - 1 - c)]);
                assert_eq!(out.train_mask.get(r, c), sample.train_mask.get(r, w - 1 - c));
            }
        }
    }

    #[test]
    fn rotated_masks_stay_binary_and_aligned() {
        let sample = synth_shapes(1, 32, 9).unwrap().remove(0);
        let cfg = AugmentConfig::default();
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            let out = augment(&sample, &cfg, &mut rng).unwrap();
            out.validate().unwrap();
            // train == clean before corruption, so they must warp identically
            assert_eq!(out.train_mask, out.clean_mask);
        }
    }

    #[test]
    fn augment_is_deterministic_given_rng_state() {
        let sample = synth_shapes(1, 32, 10).unwrap().remove(0);
        let cfg = AugmentConfig::default();
        let a = augment(&sample, &cfg, &mut seeded_rng(11)).unwrap();
        let b = augment(&sample, &cfg, &mut seeded_rng(11)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.train_mask, b.train_mask);
    }

    #[test]
    fn dataset_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synth_shapes_raw(6, 32, 42).unwrap();
        write_dataset(dir.path(), &raw).unwrap();
        let manifest = build_manifest(dir.path(), 4, 2, 32, 1, DataSource::Synthetic).unwrap();
        assert_eq!(manifest.train_ids.len(), 4);
        assert_eq!(manifest.test_ids.len(), 2);
        let (train, test) = load_split(dir.path(), &manifest).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 2);
        // masks survive the 0/255 round trip exactly
        for s in train.iter().chain(&test) {
            let original = raw.iter().find(|r| r.id == s.id).unwrap();
            assert_eq!(&s.clean_mask, &original.mask);
            s.validate().unwrap();
        }
    }

    #[test]
    fn loader_reports_missing_mask_id() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synth_shapes_raw(2, 32, 1).unwrap();
        write_dataset(dir.path(), &raw).unwrap();
        std::fs::remove_file(dir.path().join("masks/synth-00001.png")).unwrap();
        let err = load_samples(dir.path(), &[raw[1].id.clone()], 32).unwrap_err();
        match err {
            Error::MissingFile { id, .. } => assert_eq!(id, "synth-00001"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn loader_resizes_and_keeps_masks_binary() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synth_shapes_raw(2, 48, 1).unwrap();
        write_dataset(dir.path(), &raw).unwrap();
        let ids: Vec<String> = raw.iter().map(|r| r.id.clone()).collect();
        let samples = load_samples(dir.path(), &ids, 32).unwrap();
        for s in &samples {
            assert_eq!(s.dim(), (32, 32));
            s.validate().unwrap();
        }
    }

    #[test]
    fn manifest_rejects_split_overlap() {
        let m = DatasetManifest {
            train_ids: vec!["a".into(), "b".into()],
            test_ids: vec!["b".into()],
            source: DataSource::Synthetic,
            image_size: 32,
            split_seed: 0,
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synth_shapes_raw(10, 32, 3).unwrap();
        write_dataset(dir.path(), &raw).unwrap();
        let a = build_manifest(dir.path(), 6, 4, 32, 5, DataSource::Synthetic).unwrap();
        let b = build_manifest(dir.path(), 6, 4, 32, 5, DataSource::Synthetic).unwrap();
        assert_eq!(a.train_ids, b.train_ids);
        assert_eq!(a.test_ids, b.test_ids);
        let c = build_manifest(dir.path(), 6, 4, 32, 6, DataSource::Synthetic).unwrap();
        assert_ne!(a.train_ids, c.train_ids);
    }
}
