//! The U-Net: encoder/decoder with skip connections, hand-rolled backward.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops;
use crate::error::Result;
use crate::model::ModelConfig;

/// Plain dense convolution parameters. `w` is (cout, k*k*cin) row-major
/// with column index `tap * cin + ci`; `k` is 1 or 3.
struct Conv {
    w: Vec<f32>,
    b: Vec<f32>,
    cin: usize,
    cout: usize,
    k: usize,
}

impl Conv {
    fn new(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        // He-normal, fan_in = cin * k * k
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let w = (0..cout * k * k * cin)
            .map(|_| dist.sample(rng) as f32)
            .collect();
        Self {
            w,
            b: vec![0.0; cout],
            cin,
            cout,
            k,
        }
    }
}

/// 2×2 stride-2 transposed convolution. `w[tap]` is (cout, cin) for taps
/// in row-major (dh, dw) order.
struct UpConv {
    w: [Vec<f32>; 4],
    b: Vec<f32>,
    cin: usize,
    cout: usize,
}

impl UpConv {
    fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (cin * 4) as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let mut make = || (0..cout * cin).map(|_| dist.sample(rng) as f32).collect::<Vec<f32>>();
        Self {
            w: [make(), make(), make(), make()],
            b: vec![0.0; cout],
            cin,
            cout,
        }
    }
}

/// Two 3×3 convs, each followed by ReLU.
struct DoubleConv {
    c1: Conv,
    c2: Conv,
}

impl DoubleConv {
    fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            c1: Conv::new(cin, cout, 3, rng),
            c2: Conv::new(cout, cout, 3, rng),
        }
    }
}

/// Per-image forward artifacts of one double conv: im2col patches and
/// post-ReLU activations, kept for the backward pass.
struct BlockCache {
    col1: Vec<f32>,
    a1: Vec<f32>,
    col2: Vec<f32>,
    /// Post-ReLU output; for encoder blocks this is the skip tensor.
    a2: Vec<f32>,
}

struct ImgCache {
    enc: Vec<BlockCache>,
    pool_idx: Vec<Vec<u8>>,
    bott: BlockCache,
    /// Indexed by level (0 = full resolution).
    dec: Vec<BlockCache>,
}

/// Forward cache for a batch; consumed by [`UNet::backward_batch`].
pub struct UNetCache {
    imgs: Vec<ImgCache>,
}

/// Gradient accumulator aligned with [`UNet::param_slices`].
pub struct GradBuf {
    pub(crate) bufs: Vec<Vec<f32>>,
}

impl GradBuf {
    pub fn zeros_like(net: &UNet) -> Self {
        Self {
            bufs: net.param_slices().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for b in &mut self.bufs {
            b.fill(0.0);
        }
    }

    pub fn slices(&self) -> Vec<&[f32]> {
        self.bufs.iter().map(|b| b.as_slice()).collect()
    }
}

/// Vanilla U-Net: `depth` pooling levels, channel width doubling per level,
/// ReLU activations, 2×2 transposed-conv upsampling, skip concatenation
/// ([skip, up]), 1×1 classifier head emitting per-pixel class logits.
pub struct UNet {
    cfg: ModelConfig,
    enc: Vec<DoubleConv>,
    bott: DoubleConv,
    /// Indexed by level, used in deep-to-shallow order.
    ups: Vec<UpConv>,
    decs: Vec<DoubleConv>,
    head: Conv,
}

impl UNet {
    /// Builds a network with weights drawn from the given generator.
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.depth;
        let base = cfg.base_channels;
        let ch = |lvl: usize| base << lvl;

        let mut enc = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { cfg.in_channels } else { ch(i - 1) };
            enc.push(DoubleConv::new(cin, ch(i), rng));
        }
        let bott = DoubleConv::new(ch(d - 1), ch(d), rng);
        // construction order mirrors execution: deepest decoder first
        let mut ups_rev = Vec::with_capacity(d);
        let mut decs_rev = Vec::with_capacity(d);
        for i in (0..d).rev() {
            ups_rev.push(UpConv::new(ch(i + 1), ch(i), rng));
            decs_rev.push(DoubleConv::new(2 * ch(i), ch(i), rng));
        }
        ups_rev.reverse();
        decs_rev.reverse();
        let head = Conv::new(base, cfg.num_classes, 1, rng);
        Ok(Self {
            cfg: cfg.clone(),
            enc,
            bott,
            ups: ups_rev,
            decs: decs_rev,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|p| p.len()).sum()
    }

    /// Every parameter tensor as a flat slice, in the canonical order used
    /// by gradients, the optimizer, and checkpoints: encoder blocks shallow
    /// to deep, bottleneck, then per decoder level deep to shallow (4 up
    /// taps, up bias, double conv), head last. Each conv contributes
    /// (w1, b1, w2, b2).
    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut v: Vec<&[f32]> = Vec::new();
        for block in &self.enc {
            v.push(&block.c1.w);
            v.push(&block.c1.b);
            v.push(&block.c2.w);
            v.push(&block.c2.b);
        }
        v.push(&self.bott.c1.w);
        v.push(&self.bott.c1.b);
        v.push(&self.bott.c2.w);
        v.push(&self.bott.c2.b);
        for (u, dcv) in self.ups.iter().rev().zip(self.decs.iter().rev()) {
            for t in 0..4 {
                v.push(&u.w[t]);
            }
            v.push(&u.b);
            v.push(&dcv.c1.w);
            v.push(&dcv.c1.b);
            v.push(&dcv.c2.w);
            v.push(&dcv.c2.b);
        }
        v.push(&self.head.w);
        v.push(&self.head.b);
        v
    }

    /// Mutable view of every parameter tensor, same order as
    /// [`UNet::param_slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut v: Vec<&mut [f32]> = Vec::new();
        for block in &mut self.enc {
            v.push(&mut block.c1.w);
            v.push(&mut block.c1.b);
            v.push(&mut block.c2.w);
            v.push(&mut block.c2.b);
        }
        v.push(&mut self.bott.c1.w);
        v.push(&mut self.bott.c1.b);
        v.push(&mut self.bott.c2.w);
        v.push(&mut self.bott.c2.b);
        for (u, dcv) in self.ups.iter_mut().rev().zip(self.decs.iter_mut().rev()) {
            let [w0, w1, w2, w3] = &mut u.w;
            v.push(w0);
            v.push(w1);
            v.push(w2);
            v.push(w3);
            v.push(&mut u.b);
            v.push(&mut dcv.c1.w);
            v.push(&mut dcv.c1.b);
            v.push(&mut dcv.c2.w);
            v.push(&mut dcv.c2.b);
        }
        v.push(&mut self.head.w);
        v.push(&mut self.head.b);
        v
    }

    fn double_conv_forward(block: &DoubleConv, x: &[f32], h: usize, w: usize) -> BlockCache {
        let hw = h * w;
        let (cin, cmid) = (block.c1.cin, block.c1.cout);
        let mut col1 = vec![0.0f32; 9 * cin * hw];
        ops::im2col_3x3(x, cin, h, w, &mut col1);
        let mut a1 = vec![0.0f32; cmid * hw];
        ops::sgemm(cmid, 9 * cin, hw, 1.0, &block.c1.w, false, &col1, false, 0.0, &mut a1);
        bias_relu(&mut a1, &block.c1.b, hw);

        let cout = block.c2.cout;
        let mut col2 = vec![0.0f32; 9 * cmid * hw];
        ops::im2col_3x3(&a1, cmid, h, w, &mut col2);
        let mut a2 = vec![0.0f32; cout * hw];
        ops::sgemm(cout, 9 * cmid, hw, 1.0, &block.c2.w, false, &col2, false, 0.0, &mut a2);
        bias_relu(&mut a2, &block.c2.b, hw);
        BlockCache { col1, a1, col2, a2 }
    }

    /// Backward through a double conv. `dy` is the gradient at the post-ReLU
    /// output (consumed). Gradients accumulate into `g` starting at index
    /// `gi` (sub-order w1, b1, w2, b2); returns the input gradient when
    /// `need_dx`.
    #[allow(clippy::too_many_arguments)]
    fn double_conv_backward(
        block: &DoubleConv,
        cache: &BlockCache,
        mut dy: Vec<f32>,
        h: usize,
        w: usize,
        g: &mut GradBuf,
        gi: usize,
        need_dx: bool,
    ) -> Option<Vec<f32>> {
        let hw = h * w;
        let (cin, cmid, cout) = (block.c1.cin, block.c1.cout, block.c2.cout);
        relu_mask(&mut dy, &cache.a2);
        // conv2
        ops::sgemm(cout, hw, 9 * cmid, 1.0, &dy, false, &cache.col2, true, 1.0, &mut g.bufs[gi + 2]);
        bias_grad(&dy, hw, &mut g.bufs[gi + 3]);
        let mut dcol2 = vec![0.0f32; 9 * cmid * hw];
        ops::sgemm(9 * cmid, cout, hw, 1.0, &block.c2.w, true, &dy, false, 0.0, &mut dcol2);
        let mut da1 = vec![0.0f32; cmid * hw];
        ops::col2im_3x3_add(&dcol2, cmid, h, w, &mut da1);
        relu_mask(&mut da1, &cache.a1);
        // conv1
        ops::sgemm(cmid, hw, 9 * cin, 1.0, &da1, false, &cache.col1, true, 1.0, &mut g.bufs[gi]);
        bias_grad(&da1, hw, &mut g.bufs[gi + 1]);
        if !need_dx {
            return None;
        }
        let mut dcol1 = vec![0.0f32; 9 * cin * hw];
        ops::sgemm(9 * cin, cmid, hw, 1.0, &block.c1.w, true, &da1, false, 0.0, &mut dcol1);
        let mut dx = vec![0.0f32; cin * hw];
        ops::col2im_3x3_add(&dcol1, cin, h, w, &mut dx);
        Some(dx)
    }

    fn forward_img(&self, img: &[f32]) -> ImgCache {
        let d = self.cfg.depth;
        let (mut h, mut w) = self.cfg.input_hw;
        let mut enc = Vec::with_capacity(d);
        let mut pool_idx = Vec::with_capacity(d);
        let mut x = img.to_vec();
        for i in 0..d {
            let cache = Self::double_conv_forward(&self.enc[i], &x, h, w);
            let ch = self.enc[i].c2.cout;
            let (oh, ow) = (h / 2, w / 2);
            let mut pooled = vec![0.0f32; ch * oh * ow];
            let mut idx = vec![0u8; ch * oh * ow];
            ops::maxpool2_forward(&cache.a2, ch, h, w, &mut pooled, &mut idx);
            enc.push(cache);
            pool_idx.push(idx);
            x = pooled;
            h = oh;
            w = ow;
        }
        let bott = Self::double_conv_forward(&self.bott, &x, h, w);

        let mut dec: Vec<Option<BlockCache>> = (0..d).map(|_| None).collect();
        let mut deep_level: Option<usize> = None; // None = bottleneck output
        for i in (0..d).rev() {
            let deep: &[f32] = match deep_level {
                None => &bott.a2,
                Some(j) => &dec[j].as_ref().unwrap().a2,
            };
            let up = &self.ups[i];
            let (oh, ow) = (2 * h, 2 * w);
            let mut upped = vec![0.0f32; up.cout * oh * ow];
            let mut tmp = vec![0.0f32; up.cout * h * w];
            for tap in 0..4 {
                ops::sgemm(up.cout, up.cin, h * w, 1.0, &up.w[tap], false, deep, false, 0.0, &mut tmp);
                ops::upconv_scatter(&tmp, up.cout, h, w, tap / 2, tap % 2, &mut upped);
            }
            add_bias(&mut upped, &up.b, oh * ow);
            // concat [skip, up]
            let skip = &enc[i].a2;
            let mut cat = Vec::with_capacity(skip.len() + upped.len());
            cat.extend_from_slice(skip);
            cat.extend_from_slice(&upped);
            h = oh;
            w = ow;
            let block = Self::double_conv_forward(&self.decs[i], &cat, h, w);
            dec[i] = Some(block);
            deep_level = Some(i);
        }
        ImgCache {
            enc,
            pool_idx,
            bott,
            dec: dec.into_iter().map(Option::unwrap).collect(),
        }
    }

    /// Inference-only forward pass: no backward cache, scratch buffers are
    /// allocated once per call and reused across the batch.
    pub fn forward_infer(&self, imgs: &[&[f32]]) -> Vec<Vec<f32>> {
        let d = self.cfg.depth;
        let (h0, w0) = self.cfg.input_hw;
        let ch = |lvl: usize| self.cfg.base_channels << lvl;
        let hw_at = |lvl: usize| (h0 >> lvl) * (w0 >> lvl);

        // per-level persistent skip activations plus reusable work buffers
        let mut skip: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i)]).collect();
        let mut a1: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i)]).collect();
        let mut pooled: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i + 1)]).collect();
        let mut pool_idx: Vec<Vec<u8>> = (0..d).map(|i| vec![0; ch(i) * hw_at(i + 1)]).collect();
        let mut bott_a1 = vec![0.0f32; ch(d) * hw_at(d)];
        let mut bott_a2 = vec![0.0f32; ch(d) * hw_at(d)];
        let mut up_buf: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i)]).collect();
        let mut up_tmp: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i + 1)]).collect();
        let mut cat: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; 2 * ch(i) * hw_at(i)]).collect();
        let mut dec_a1: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i)]).collect();
        let mut dec_a2: Vec<Vec<f32>> = (0..d).map(|i| vec![0.0; ch(i) * hw_at(i)]).collect();
        let max_col = (0..=d)
            .map(|i| {
                let cin = if i == 0 {
                    self.cfg.in_channels.max(2 * ch(0))
                } else {
                    2 * ch(i)
                };
                9 * cin * hw_at(i)
            })
            .max()
            .unwrap();
        let mut col = vec![0.0f32; max_col];

        let conv =
            |cvv: &Conv, x: &[f32], h: usize, w: usize, y: &mut [f32], col: &mut [f32]| {
                let hw = h * w;
                if cvv.k == 1 {
                    ops::sgemm(cvv.cout, cvv.cin, hw, 1.0, &cvv.w, false, x, false, 0.0, y);
                } else {
                    let cb = &mut col[..9 * cvv.cin * hw];
                    ops::im2col_3x3(x, cvv.cin, h, w, cb);
                    ops::sgemm(cvv.cout, 9 * cvv.cin, hw, 1.0, &cvv.w, false, cb, false, 0.0, y);
                }
            };

        let mut logits = Vec::with_capacity(imgs.len());
        for img in imgs {
            let (mut h, mut w) = (h0, w0);
            for i in 0..d {
                let x: &[f32] = if i == 0 { img } else { &pooled[i - 1] };
                conv(&self.enc[i].c1, x, h, w, &mut a1[i], &mut col);
                bias_relu(&mut a1[i], &self.enc[i].c1.b, h * w);
                conv(&self.enc[i].c2, &a1[i], h, w, &mut skip[i], &mut col);
                bias_relu(&mut skip[i], &self.enc[i].c2.b, h * w);
                ops::maxpool2_forward(&skip[i], ch(i), h, w, &mut pooled[i], &mut pool_idx[i]);
                h /= 2;
                w /= 2;
            }
            conv(&self.bott.c1, &pooled[d - 1], h, w, &mut bott_a1, &mut col);
            bias_relu(&mut bott_a1, &self.bott.c1.b, h * w);
            conv(&self.bott.c2, &bott_a1, h, w, &mut bott_a2, &mut col);
            bias_relu(&mut bott_a2, &self.bott.c2.b, h * w);

            for i in (0..d).rev() {
                let up = &self.ups[i];
                let deep: &[f32] = if i == d - 1 { &bott_a2 } else { &dec_a2[i + 1] };
                for tap in 0..4 {
                    ops::sgemm(up.cout, up.cin, h * w, 1.0, &up.w[tap], false, deep, false, 0.0, &mut up_tmp[i]);
                    ops::upconv_scatter(&up_tmp[i], up.cout, h, w, tap / 2, tap % 2, &mut up_buf[i]);
                }
                h *= 2;
                w *= 2;
                add_bias(&mut up_buf[i], &up.b, h * w);
                let skip_len = skip[i].len();
                cat[i][..skip_len].copy_from_slice(&skip[i]);
                cat[i][skip_len..].copy_from_slice(&up_buf[i]);
                conv(&self.decs[i].c1, &cat[i], h, w, &mut dec_a1[i], &mut col);
                bias_relu(&mut dec_a1[i], &self.decs[i].c1.b, h * w);
                conv(&self.decs[i].c2, &dec_a1[i], h, w, &mut dec_a2[i], &mut col);
                bias_relu(&mut dec_a2[i], &self.decs[i].c2.b, h * w);
            }

            let hw = h0 * w0;
            let mut out = vec![0.0f32; self.cfg.num_classes * hw];
            ops::sgemm(
                self.cfg.num_classes,
                self.head.cin,
                hw,
                1.0,
                &self.head.w,
                false,
                &dec_a2[0],
                false,
                0.0,
                &mut out,
            );
            add_bias(&mut out, &self.head.b, hw);
            logits.push(out);
        }
        logits
    }

    /// Forward pass for a batch of images (each `in_channels * H * W`).
    /// Returns per-image logits (`num_classes * H * W`) and the cache for
    /// [`UNet::backward_batch`].
    pub fn forward_batch(&self, imgs: &[&[f32]]) -> (Vec<Vec<f32>>, UNetCache) {
        let (h, w) = self.cfg.input_hw;
        let hw = h * w;
        let mut logits = Vec::with_capacity(imgs.len());
        let mut caches = Vec::with_capacity(imgs.len());
        for img in imgs {
            debug_assert_eq!(img.len(), self.cfg.in_channels * hw);
            let cache = self.forward_img(img);
            let mut out = vec![0.0f32; self.cfg.num_classes * hw];
            ops::sgemm(
                self.cfg.num_classes,
                self.head.cin,
                hw,
                1.0,
                &self.head.w,
                false,
                &cache.dec[0].a2,
                false,
                0.0,
                &mut out,
            );
            add_bias(&mut out, &self.head.b, hw);
            logits.push(out);
            caches.push(cache);
        }
        (logits, UNetCache { imgs: caches })
    }

    /// Accumulates parameter gradients for a batch given per-image logit
    /// gradients. An empty gradient slot means the image contributes no
    /// gradient and its backward pass is skipped entirely. Gradient scaling
    /// (sample weights, pixel normalization) is the caller's concern.
    pub fn backward_batch(&self, cache: &UNetCache, dlogits: &[Vec<f32>], g: &mut GradBuf) {
        assert_eq!(cache.imgs.len(), dlogits.len());
        let d = self.cfg.depth;
        let (h0, w0) = self.cfg.input_hw;
        let hw0 = h0 * w0;
        // canonical gradient indices (see param_slices order)
        let enc_gi = |i: usize| 4 * i;
        let bott_gi = 4 * d;
        // per decoder level: 4 up taps + up bias + 4 conv tensors = 9
        let dec_group = |i: usize| bott_gi + 4 + (d - 1 - i) * 9;
        let head_gi = bott_gi + 4 + d * 9;

        for (img, dlog) in cache.imgs.iter().zip(dlogits) {
            if dlog.is_empty() {
                continue;
            }
            // head (1x1 conv, no relu)
            ops::sgemm(
                self.cfg.num_classes,
                hw0,
                self.head.cin,
                1.0,
                dlog,
                false,
                &img.dec[0].a2,
                true,
                1.0,
                &mut g.bufs[head_gi],
            );
            bias_grad(dlog, hw0, &mut g.bufs[head_gi + 1]);
            let mut dy = vec![0.0f32; self.head.cin * hw0];
            ops::sgemm(
                self.head.cin,
                self.cfg.num_classes,
                hw0,
                1.0,
                &self.head.w,
                true,
                dlog,
                false,
                0.0,
                &mut dy,
            );

            // decoder levels shallow -> deep
            let mut dskip: Vec<Option<Vec<f32>>> = (0..d).map(|_| None).collect();
            let (mut h, mut w) = (h0, w0);
            for i in 0..d {
                let gi = dec_group(i);
                let dcat =
                    Self::double_conv_backward(&self.decs[i], &img.dec[i], dy, h, w, g, gi + 5, true)
                        .unwrap();
                let skip_ch = self.enc[i].c2.cout;
                let up = &self.ups[i];
                let (dskip_part, dup) = dcat.split_at(skip_ch * h * w);
                dskip[i] = Some(dskip_part.to_vec());
                // upconv backward at the coarser resolution
                let (ih, iw) = (h / 2, w / 2);
                let deep: &[f32] = if i == d - 1 { &img.bott.a2 } else { &img.dec[i + 1].a2 };
                let mut dx_deep = vec![0.0f32; up.cin * ih * iw];
                let mut tmp = vec![0.0f32; up.cout * ih * iw];
                for tap in 0..4 {
                    ops::upconv_gather(dup, up.cout, ih, iw, tap / 2, tap % 2, &mut tmp);
                    ops::sgemm(up.cout, ih * iw, up.cin, 1.0, &tmp, false, deep, true, 1.0, &mut g.bufs[gi + tap]);
                    ops::sgemm(up.cin, up.cout, ih * iw, 1.0, &up.w[tap], true, &tmp, false, 1.0, &mut dx_deep);
                }
                bias_grad(dup, h * w, &mut g.bufs[gi + 4]);
                dy = dx_deep;
                h = ih;
                w = iw;
            }

            // bottleneck
            let dx = Self::double_conv_backward(&self.bott, &img.bott, dy, h, w, g, bott_gi, true).unwrap();
            let mut dpooled = dx;

            // encoder levels deep -> shallow
            for i in (0..d).rev() {
                let (eh, ew) = (h * 2, w * 2);
                let ch = self.enc[i].c2.cout;
                let mut de = vec![0.0f32; ch * eh * ew];
                ops::maxpool2_backward(&dpooled, &img.pool_idx[i], ch, eh, ew, &mut de);
                if let Some(ds) = &dskip[i] {
                    for (a, b) in de.iter_mut().zip(ds) {
                        *a += b;
                    }
                }
                let need_dx = i > 0;
                let dx =
                    Self::double_conv_backward(&self.enc[i], &img.enc[i], de, eh, ew, g, enc_gi(i), need_dx);
                if let Some(dx) = dx {
                    dpooled = dx;
                }
                h = eh;
                w = ew;
            }
        }
    }
}

fn bias_relu(y: &mut [f32], b: &[f32], hw: usize) {
    for (co, &bias) in b.iter().enumerate() {
        for v in &mut y[co * hw..(co + 1) * hw] {
            *v = (*v + bias).max(0.0);
        }
    }
}

fn add_bias(y: &mut [f32], b: &[f32], hw: usize) {
    for (co, &bias) in b.iter().enumerate() {
        for v in &mut y[co * hw..(co + 1) * hw] {
            *v += bias;
        }
    }
}

/// Zeroes gradient entries where the stored post-ReLU activation is zero.
fn relu_mask(dy: &mut [f32], post: &[f32]) {
    for (d, &a) in dy.iter_mut().zip(post) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

fn bias_grad(dy: &[f32], hw: usize, db: &mut [f32]) {
    for (co, acc) in db.iter_mut().enumerate() {
        let mut s = 0.0f32;
        for &v in &dy[co * hw..(co + 1) * hw] {
            s += v;
        }
        *acc += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::{softmax_2class, LossHead, TargetSpec};
    use crate::rng::seeded_rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 2,
            base_channels: 2,
            input_hw: (8, 8),
        }
    }

    #[test]
    fn forward_shapes_match() {
        let cfg = tiny_cfg();
        let net = UNet::new(&cfg, &mut seeded_rng(1)).unwrap();
        let img = vec![0.3f32; 64];
        let (logits, _) = net.forward_batch(&[&img]);
        assert_eq!(logits.len(), 1);
        assert_eq!(logits[0].len(), 2 * 64);
    }

    #[test]
    fn infer_path_matches_cached_forward_exactly() {
        let cfg = ModelConfig {
            in_channels: 1,
            num_classes: 2,
            depth: 3,
            base_channels: 3,
            input_hw: (16, 16),
        };
        let net = UNet::new(&cfg, &mut seeded_rng(9)).unwrap();
        let mut rng = seeded_rng(31);
        use rand::Rng;
        let imgs: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..256).map(|_| rng.gen::<f32>() - 0.5).collect())
            .collect();
        let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (cached, _) = net.forward_batch(&refs);
        let inferred = net.forward_infer(&refs);
        assert_eq!(cached, inferred);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let net = UNet::new(&cfg, &mut seeded_rng(5)).unwrap();
        let img: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin()).collect();
        let (a, _) = net.forward_batch(&[&img]);
        let (b, _) = net.forward_batch(&[&img]);
        assert_eq!(a, b);
    }

    #[test]
    fn param_views_are_aligned() {
        let cfg = tiny_cfg();
        let mut net = UNet::new(&cfg, &mut seeded_rng(2)).unwrap();
        let lens: Vec<usize> = net.param_slices().iter().map(|p| p.len()).collect();
        let lens_mut: Vec<usize> = net.param_slices_mut().iter().map(|p| p.len()).collect();
        assert_eq!(lens, lens_mut);
        assert!(net.num_params() > 0);
    }

    /// Central finite differences over a sample of parameters must match
    /// the analytic gradient of the mean cross-entropy loss.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut net = UNet::new(&cfg, &mut seeded_rng(3)).unwrap();
        let mut rng = seeded_rng(17);
        use rand::Rng;
        let imgs: Vec<Vec<f32>> = (0..2)
            .map(|_| (0..64).map(|_| rng.gen::<f32>() - 0.5).collect())
            .collect();
        let targets: Vec<Vec<u8>> = (0..2)
            .map(|_| (0..64).map(|_| u8::from(rng.gen::<bool>())).collect())
            .collect();

        let loss_of = |net: &UNet| -> f64 {
            let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
            let (logits, _) = net.forward_batch(&refs);
            let mut total = 0.0;
            for (lg, t) in logits.iter().zip(&targets) {
                let probs = softmax_2class(lg);
                let head = LossHead::new(64);
                total += head.sample_loss(&probs, &TargetSpec::Hard(t));
            }
            total / imgs.len() as f64
        };

        // analytic gradients
        let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (logits, cache) = net.forward_batch(&refs);
        let mut g = GradBuf::zeros_like(&net);
        let head = LossHead::new(64);
        let dlogits: Vec<Vec<f32>> = logits
            .iter()
            .zip(&targets)
            .map(|(lg, t)| {
                let probs = softmax_2class(lg);
                head.dlogits(&probs, &TargetSpec::Hard(t), 1.0 / imgs.len() as f32)
            })
            .collect();
        net.backward_batch(&cache, &dlogits, &mut g);
        let analytic: Vec<Vec<f32>> = g.bufs.clone();

        // probe a few entries of every tensor; ReLU and max-pool make the
        // loss piecewise smooth, so probes where two step sizes disagree
        // (a kink inside the stencil) are skipped
        let fd_at = |net: &mut UNet, ti: usize, pi: usize, h: f32| -> f64 {
            let orig = net.param_slices()[ti][pi];
            net.param_slices_mut()[ti][pi] = orig + h;
            let lp = loss_of(net);
            net.param_slices_mut()[ti][pi] = orig - h;
            let lm = loss_of(net);
            net.param_slices_mut()[ti][pi] = orig;
            (lp - lm) / (2.0 * h as f64)
        };
        let n_tensors = analytic.len();
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for ti in 0..n_tensors {
            let len = analytic[ti].len();
            let probes: Vec<usize> = if len <= 3 {
                (0..len).collect()
            } else {
                vec![0, len / 2, len - 1]
            };
            for pi in probes {
                let fd1 = fd_at(&mut net, ti, pi, 1e-2);
                let fd2 = fd_at(&mut net, ti, pi, 2.5e-3);
                if (fd1 - fd2).abs() > 0.02 * fd2.abs().max(1e-3) {
                    skipped += 1;
                    continue;
                }
                let an = analytic[ti][pi] as f64;
                let tol = 1e-3 + 0.05 * fd2.abs().max(an.abs());
                assert!(
                    (fd2 - an).abs() < tol,
                    "tensor {ti} entry {pi}: fd={fd2:.6} analytic={an:.6}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30, "only {checked} smooth probes ({skipped} skipped)");
        assert!(skipped < checked, "too many kink skips: {skipped} vs {checked}");
    }
}
