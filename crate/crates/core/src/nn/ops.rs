//! Low-level kernels: im2col/col2im, sgemm wrappers, pooling, upsampling.

/// C = alpha * A(m,k) * B(k,n) + beta * C. All matrices dense row-major
/// unless a transposed view is requested via the `a_t`/`b_t` flags.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fills `col` (9*c rows, h*w cols) with 3×3 pad-1 patches of `x` (c, h, w).
/// Out-of-bounds taps are zero.
pub fn im2col_3x3(x: &[f32], c: usize, h: usize, w: usize, col: &mut [f32]) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), 9 * c * h * w);
    let hw = h * w;
    for tap in 0..9 {
        let dy = (tap / 3) as isize - 1;
        let dx = (tap % 3) as isize - 1;
        // output col cc reads source column cc+dx
        let c0 = (-dx).max(0) as usize;
        let c1 = (w as isize - dx.max(0)) as usize;
        for ci in 0..c {
            let dst_base = (tap * c + ci) * hw;
            let src_base = ci * hw;
            for hh in 0..h {
                let dst = dst_base + hh * w;
                let sy = hh as isize + dy;
                if sy < 0 || sy >= h as isize {
                    col[dst..dst + w].fill(0.0);
                    continue;
                }
                let src = src_base + sy as usize * w;
                col[dst..dst + c0].fill(0.0);
                let s0 = (c0 as isize + dx) as usize;
                let s1 = (c1 as isize + dx) as usize;
                col[dst + c0..dst + c1].copy_from_slice(&x[src + s0..src + s1]);
                col[dst + c1..dst + w].fill(0.0);
            }
        }
    }
}

/// Scatter-adds patch gradients `dcol` (9*c, h*w) back into `dx` (c, h, w).
/// Inverse of [`im2col_3x3`]; `dx` must be pre-zeroed by the caller.
pub fn col2im_3x3_add(dcol: &[f32], c: usize, h: usize, w: usize, dx: &mut [f32]) {
    debug_assert_eq!(dx.len(), c * h * w);
    debug_assert_eq!(dcol.len(), 9 * c * h * w);
    let hw = h * w;
    for tap in 0..9 {
        let dy = (tap / 3) as isize - 1;
        let dx_off = (tap % 3) as isize - 1;
        let c0 = (-dx_off).max(0) as usize;
        let c1 = (w as isize - dx_off.max(0)) as usize;
        for ci in 0..c {
            let src_base = (tap * c + ci) * hw;
            let dst_base = ci * hw;
            for hh in 0..h {
                let sy = hh as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src = src_base + hh * w;
                let d0 = (c0 as isize + dx_off) as usize;
                let dst = dst_base + sy as usize * w + d0;
                let len = c1 - c0;
                for i in 0..len {
                    dx[dst + i] += dcol[src + c0 + i];
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2. Writes pooled values into `y`
/// (c, h/2, w/2) and the within-window argmax (0..4) into `idx`.
pub fn maxpool2_forward(x: &[f32], c: usize, h: usize, w: usize, y: &mut [f32], idx: &mut [u8]) {
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!(y.len(), c * oh * ow);
    debug_assert_eq!(idx.len(), c * oh * ow);
    for ci in 0..c {
        let xp = ci * h * w;
        let yp = ci * oh * ow;
        for hh in 0..oh {
            for cc in 0..ow {
                let base = xp + (2 * hh) * w + 2 * cc;
                let cand = [x[base], x[base + 1], x[base + w], x[base + w + 1]];
                let mut best = 0u8;
                for j in 1..4 {
                    if cand[j as usize] > cand[best as usize] {
                        best = j;
                    }
                }
                y[yp + hh * ow + cc] = cand[best as usize];
                idx[yp + hh * ow + cc] = best;
            }
        }
    }
}

/// Routes pooled gradients back to the argmax positions. `dx` must be
/// pre-zeroed.
pub fn maxpool2_backward(dy: &[f32], idx: &[u8], c: usize, h: usize, w: usize, dx: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let xp = ci * h * w;
        let yp = ci * oh * ow;
        for hh in 0..oh {
            for cc in 0..ow {
                let o = yp + hh * ow + cc;
                let which = idx[o] as usize;
                let (dr, dc) = (which / 2, which % 2);
                dx[xp + (2 * hh + dr) * w + 2 * cc + dc] += dy[o];
            }
        }
    }
}

/// Scatters per-tap outputs of a 2×2 stride-2 transposed convolution.
/// `tmp` is (cout, h*w) for the tap at offset (dh, dw); `y` is
/// (cout, 2h, 2w).
pub fn upconv_scatter(tmp: &[f32], cout: usize, h: usize, w: usize, dh: usize, dw: usize, y: &mut [f32]) {
    let (oh, ow) = (2 * h, 2 * w);
    for co in 0..cout {
        let tp = co * h * w;
        let yp = co * oh * ow;
        for hh in 0..h {
            let src = tp + hh * w;
            let dst = yp + (2 * hh + dh) * ow + dw;
            for cc in 0..w {
                y[dst + 2 * cc] = tmp[src + cc];
            }
        }
    }
}

/// Gathers the tap-(dh, dw) entries of `dy` (cout, 2h, 2w) into `tmp`
/// (cout, h*w). Inverse of [`upconv_scatter`].
pub fn upconv_gather(dy: &[f32], cout: usize, h: usize, w: usize, dh: usize, dw: usize, tmp: &mut [f32]) {
    let (oh, ow) = (2 * h, 2 * w);
    for co in 0..cout {
        let tp = co * h * w;
        let yp = co * oh * ow;
        for hh in 0..h {
            let dst = tp + hh * w;
            let src = yp + (2 * hh + dh) * ow + dw;
            for cc in 0..w {
                tmp[dst + cc] = dy[src + 2 * cc];
            }
        }
    }
}
