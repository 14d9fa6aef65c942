//! Single-level orthonormal 2D Haar transform.
//!
//! For each non-overlapping 2x2 block `[[a, b], [c, d]]` (row-major) of an
//! image channel:
//!
//! ```text
//! A = (a + b + c + d) / 2     average
//! V = (a - b + c - d) / 2     differences between columns
//! H = (a + b - c - d) / 2     differences between rows
//! D = (a - b - c + d) / 2     diagonal
//! ```
//!
//! Sub-bands are stored channel-concatenated as `[B, 4C, h/2, w/2]` in the
//! order A, V, H, D, each block holding the image's `C` channels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four sub-bands of a `[B, C, h, w]` image, stored as `[B, 4C, h/2, w/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletSubbands(Tensor);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Average,
    Vertical,
    Horizontal,
    Diagonal,
}

impl WaveletSubbands {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let [_, c4, _, _] = t.dims4("subbands")?;
        if c4 % 4 != 0 {
            return Err(Error::InvalidShape {
                op: "subbands",
                msg: format!("channel count {c4} is not divisible by 4"),
            });
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Channels of the source image.
    pub fn image_channels(&self) -> usize {
        self.0.shape()[1] / 4
    }

    /// Extracts one band as `[B, C, h/2, w/2]`.
    pub fn band(&self, band: Band) -> Tensor {
        let [b, c4, h, w] = self.0.dims4("band").expect("validated on construction");
        let c = c4 / 4;
        let k = band as usize;
        let plane = h * w;
        let mut data = Vec::with_capacity(b * c * plane);
        for bi in 0..b {
            let start = (bi * c4 + k * c) * plane;
            data.extend_from_slice(&self.0.data()[start..start + c * plane]);
        }
        Tensor::new(&[b, c, h, w], data).expect("band shape")
    }
}

/// Raw analysis over `[b, c, h, w]`; caller guarantees even `h`, `w`.
pub(crate) fn haar_analysis(x: &[f64], [b, c, h, w]: [usize; 4]) -> Vec<f64> {
    let (hh, hw) = (h / 2, w / 2);
    let plane = hh * hw;
    let mut out = vec![0.0; b * 4 * c * plane];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * h * w..][..h * w];
            let base = |k: usize| ((bi * 4 + k) * c + ci) * plane;
            let (oa, ov, oh, od) = (base(0), base(1), base(2), base(3));
            for y in 0..hh {
                for xx in 0..hw {
                    let i = 2 * y * w + 2 * xx;
                    let (p, q, r, s) = (src[i], src[i + 1], src[i + w], src[i + w + 1]);
                    let o = y * hw + xx;
                    out[oa + o] = (p + q + r + s) * 0.5;
                    out[ov + o] = (p - q + r - s) * 0.5;
                    out[oh + o] = (p + q - r - s) * 0.5;
                    out[od + o] = (p - q - r + s) * 0.5;
                }
            }
        }
    }
    out
}

/// Raw synthesis from `[b, 4c, h2, w2]` sub-bands to `[b, c, 2*h2, 2*w2]`.
pub(crate) fn haar_synthesis(bands: &[f64], [b, c4, hh, hw]: [usize; 4]) -> Vec<f64> {
    let c = c4 / 4;
    let (h, w) = (2 * hh, 2 * hw);
    let plane = hh * hw;
    let mut out = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            let base = |k: usize| ((bi * 4 + k) * c + ci) * plane;
            let (ia, iv, ih, id) = (base(0), base(1), base(2), base(3));
            let dst = &mut out[(bi * c + ci) * h * w..][..h * w];
            for y in 0..hh {
                for xx in 0..hw {
                    let o = y * hw + xx;
                    let (a, v, hz, d) = (bands[ia + o], bands[iv + o], bands[ih + o], bands[id + o]);
                    let i = 2 * y * w + 2 * xx;
                    dst[i] = (a + v + hz + d) * 0.5;
                    dst[i + 1] = (a - v + hz - d) * 0.5;
                    dst[i + w] = (a + v - hz - d) * 0.5;
                    dst[i + w + 1] = (a - v - hz + d) * 0.5;
                }
            }
        }
    }
    out
}

/// Forward transform of a `[B, C, h, w]` image with even `h` and `w`.
pub fn dwt2d(image: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = image.dims4("dwt2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "dwt2d",
            msg: format!("spatial size {h}x{w} must be even"),
        });
    }
    Tensor::new(&[b, 4 * c, h / 2, w / 2], haar_analysis(image.data(), [b, c, h, w]))
}

/// Exact inverse of [`dwt2d`].
pub fn idwt2d(bands: &Tensor) -> Result<Tensor> {
    let [b, c4, hh, hw] = bands.dims4("idwt2d")?;
    if c4 % 4 != 0 {
        return Err(Error::InvalidShape {
            op: "idwt2d",
            msg: format!("channel count {c4} is not divisible by 4"),
        });
    }
    Tensor::new(
        &[b, c4 / 4, 2 * hh, 2 * hw],
        haar_synthesis(bands.data(), [b, c4, hh, hw]),
    )
}

pub fn decompose(image: &Tensor) -> Result<WaveletSubbands> {
    dwt2d(image).map(WaveletSubbands)
}

pub fn reconstruct(bands: &WaveletSubbands) -> Result<Tensor> {
    idwt2d(&bands.0)
}
