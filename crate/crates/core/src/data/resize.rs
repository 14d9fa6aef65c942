//! Separable bicubic resampling with optional anti-aliasing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keys cubic convolution parameter (Catmull-Rom family).
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic kernel with parameter [`CUBIC_A`]; support `[-2, 2]`.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Per output index: `(clamped input index, normalised weight)` taps.
fn axis_weights(n_in: usize, n_out: usize, antialias: bool) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let stretch = if antialias && scale > 1.0 { scale } else { 1.0 };
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).ceil() as i64;
            let hi = (center + support).floor() as i64;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let w = cubic_kernel((j as f64 - center) / stretch);
                    (w != 0.0).then(|| (j.clamp(0, n_in as i64 - 1) as usize, w))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resizes the last two axes of `image` (`[..., h, w]`) to `out_h x out_w`.
///
/// Sample centres are aligned (half-pixel convention); out-of-range taps reuse
/// the nearest edge pixel. With `antialias`, a downscaling kernel is widened by
/// the scale factor so it also low-pass filters.
pub fn bicubic_resize(image: &Tensor, out_h: usize, out_w: usize, antialias: bool) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() < 2 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize shape {shape:?} to {out_h}x{out_w}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = image.numel() / (h * w);
    let wx = axis_weights(w, out_w, antialias);
    let wy = axis_weights(h, out_h, antialias);
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    let mut rows = vec![0.0; h * out_w];
    for p in 0..planes {
        let src = &image.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for (x, taps) in wx.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(j, wt)| wt * line[j]).sum();
            }
        }
        for taps in &wy {
            for x in 0..out_w {
                out.push(taps.iter().map(|&(j, wt)| wt * rows[j * out_w + x]).sum());
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = out_h;
    out_shape[n - 1] = out_w;
    Tensor::new(&out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Non-separable reference: every output pixel sums kernel products over
    /// the whole input with edge replication, then normalises.
    fn reference_resize(img: &[f64], h: usize, w: usize, oh: usize, ow: usize, antialias: bool) -> Vec<f64> {
        fn keys(x: f64) -> f64 {
            let x = x.abs();
            if x < 1.0 {
                1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0
            } else if x < 2.0 {
                -0.5 * x.powi(3) + 2.5 * x.powi(2) - 4.0 * x + 2.0
            } else {
                0.0
            }
        }
        let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
        let (ky, kx) = (
            if antialias && sy > 1.0 { sy } else { 1.0 },
            if antialias && sx > 1.0 { sx } else { 1.0 },
        );
        let mut out = vec![0.0; oh * ow];
        for i in 0..oh {
            let cy = (i as f64 + 0.5) * sy - 0.5;
            for j in 0..ow {
                let cx = (j as f64 + 0.5) * sx - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                // walk virtual positions far past the edges
                for vy in -20i64..(h as i64 + 20) {
                    let wy = keys((vy as f64 - cy) / ky);
                    if wy == 0.0 {
                        continue;
                    }
                    for vx in -20i64..(w as i64 + 20) {
                        let wx = keys((vx as f64 - cx) / kx);
                        if wx == 0.0 {
                            continue;
                        }
                        let py = vy.clamp(0, h as i64 - 1) as usize;
                        let px = vx.clamp(0, w as i64 - 1) as usize;
                        acc += wy * wx * img[py * w + px];
                        norm += wy * wx;
                    }
                }
                out[i * ow + j] = acc / norm;
            }
        }
        out
    }

    #[test]
    fn kernel_shape() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn identity_and_constant() {
        let img = Tensor::from_fn(&[2, 6, 5], |i| (i as f64 * 0.37).sin());
        let same = bicubic_resize(&img, 6, 5, true).unwrap();
        assert!(same.max_abs_diff(&img) <= 1e-12);
        let c = Tensor::full(&[3, 8, 8], 0.42);
        for (h, w) in [(2, 2), (3, 5), (17, 9), (32, 32)] {
            for aa in [true, false] {
                let r = bicubic_resize(&c, h, w, aa).unwrap();
                assert!(r.data().iter().all(|&v| (v - 0.42).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn matches_reference_on_ramp() {
        let (h, w) = (32, 32);
        let img: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                0.2 + 0.6 * (x / 31.0) * 0.7 + 0.3 * (y / 31.0) * 0.5 + 0.05 * (0.2 * x + 0.1 * y).sin()
            })
            .collect();
        let t = Tensor::new(&[1, h, w], img.clone()).unwrap();
        let lr = bicubic_resize(&t, 8, 8, true).unwrap();
        let up = bicubic_resize(&lr, 32, 32, true).unwrap();
        let ref_lr = reference_resize(&img, h, w, 8, 8, true);
        let ref_up = reference_resize(&ref_lr, 8, 8, 32, 32, true);
        for (a, b) in lr.data().iter().zip(&ref_lr) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in up.data().iter().zip(&ref_up) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn rejects_zero_target() {
        assert!(bicubic_resize(&Tensor::zeros(&[1, 4, 4]), 0, 4, true).is_err());
    }
}
