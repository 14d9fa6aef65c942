//! PSNR and single-scale SSIM on images in `[0, max_val]`, plus the per-image
//! evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Tensor, b: &Tensor, max_val: f64, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidShape {
            op,
            msg: format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        });
    }
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{op}: max_val must be positive, got {max_val}"
        )));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    let d = a.zip_map(b, |x, y| (x - y) * (x - y))?;
    Ok(d.sum() / d.numel() as f64)
}

/// `10 log10(max_val^2 / MSE)` over all elements; `+inf` when the images are equal.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    check_pair(a, b, max_val, "psnr")?;
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / m).log10()
    })
}

/// [`psnr`] limited to [`PSNR_CAP_DB`], as written to reports.
pub fn psnr_capped(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    psnr(a, b, max_val).map(|v| v.min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering over valid window positions.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, max_val: f64) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * max_val).powi(2);
    let c2 = (SSIM_K2 * max_val).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let e_aa = filter_valid(&prod(a, a), h, w, &win);
    let e_bb = filter_valid(&prod(b, b), h, w, &win);
    let e_ab = filter_valid(&prod(a, b), h, w, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    total / n as f64
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over valid positions,
/// computed per channel (every plane over the last two axes) and averaged.
pub fn ssim(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    check_pair(a, b, max_val, "ssim")?;
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            op: "ssim",
            msg: format!("need at least two spatial axes, got {shape:?}"),
        });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            op: "ssim",
            msg: format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let plane = h * w;
    let planes = a.numel() / plane;
    let total: f64 = (0..planes)
        .map(|p| {
            let r = p * plane..(p + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, max_val)
        })
        .sum();
    Ok(total / planes as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    /// Capped at [`PSNR_CAP_DB`].
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub config_id: String,
    pub scores: Vec<ImageScore>,
}

impl EvalReport {
    pub fn new(config_id: impl Into<String>) -> Self {
        Self {
            config_id: config_id.into(),
            scores: Vec::new(),
        }
    }

    /// Scores `output` against `reference` (both in `[0, 1]`) and appends the row.
    pub fn add(&mut self, image_id: impl Into<String>, output: &Tensor, reference: &Tensor) -> Result<&ImageScore> {
        let score = ImageScore {
            image_id: image_id.into(),
            psnr_db: psnr_capped(output, reference, 1.0)?,
            ssim: ssim(output, reference, 1.0)?,
        };
        self.scores.push(score);
        Ok(self.scores.last().expect("just pushed"))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn mean_of(&self, f: impl Fn(&ImageScore) -> f64) -> f64 {
        if self.scores.is_empty() {
            return f64::NAN;
        }
        self.scores.iter().map(f).sum::<f64>() / self.scores.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean_of(|s| s.psnr_db)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean_of(|s| s.ssim)
    }

    /// `image_id,psnr_db,ssim` with one row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,psnr_db,ssim\n");
        for s in &self.scores {
            writeln!(out, "{},{:.6},{:.6}", s.image_id, s.psnr_db, s.ssim).expect("write to String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}
