//! LR/HR pair construction, the procedural training corpus, augmentation and
//! on-disk dataset layout.

mod pnm;
mod resize;

use std::fs;
use std::path::{Path, PathBuf};

pub use pnm::{decode_pnm, encode_pnm, quantize, quantize_tensor, read_pnm, write_pnm};
pub use resize::{bicubic_resize, cubic_kernel, CUBIC_A};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// One training or evaluation pair. Images are `[C, h, w]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub hr: Tensor,
    /// The degraded image at `h/scale x w/scale`.
    pub lr: Tensor,
    /// `lr` bicubic-upsampled back to `h x w`; the network's conditioning input.
    pub lr_up: Tensor,
    pub scale: usize,
}

fn image_dims(image: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape {
            op,
            msg: format!("expected [C, h, w], got {s:?}"),
        }),
    }
}

/// Bicubic upsampling of an LR image by `scale`, clamped to `[0, 1]`.
pub fn upsample_lr(lr: &Tensor, scale: usize) -> Result<Tensor> {
    let (_, h, w) = image_dims(lr, "upsample_lr")?;
    Ok(bicubic_resize(lr, h * scale, w * scale, false)?.clamp(0.0, 1.0))
}

pub fn make_lr_hr_pair(hr: &Tensor, scale: usize) -> Result<ImageSample> {
    let (_, h, w) = image_dims(hr, "make_lr_hr_pair")?;
    if scale == 0 || h % (2 * scale) != 0 || w % (2 * scale) != 0 {
        return Err(Error::InvalidArgument(format!(
            "image size {h}x{w} is not divisible by 2*scale (scale {scale})"
        )));
    }
    let lr = bicubic_resize(hr, h / scale, w / scale, true)?.clamp(0.0, 1.0);
    let lr_up = upsample_lr(&lr, scale)?;
    Ok(ImageSample {
        hr: hr.clamp(0.0, 1.0),
        lr,
        lr_up,
        scale,
    })
}

/// Mirrors the last axis.
pub fn hflip(image: &Tensor) -> Tensor {
    let w = *image.shape().last().expect("non-empty shape");
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

impl ImageSample {
    pub fn flipped(&self) -> Self {
        Self {
            hr: hflip(&self.hr),
            lr: hflip(&self.lr),
            lr_up: hflip(&self.lr_up),
            scale: self.scale,
        }
    }
}

/// Flips all images of the pair together with probability 0.5. Draws exactly
/// one value from `rng`.
pub fn augment_hflip(sample: &ImageSample, rng: &mut Rng) -> ImageSample {
    if rng.bernoulli(0.5) {
        sample.flipped()
    } else {
        sample.clone()
    }
}

fn smooth_edge(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

/// One procedural RGB image: a smooth gradient, a few anti-aliased shapes and
/// oriented sinusoidal textures.
pub fn synth_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut img = vec![0.0; 3 * plane];
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let theta = rng.uniform() * std::f64::consts::TAU;
    let (gx, gy) = (theta.cos(), theta.sin());
    let diag = ((h * h + w * w) as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64 - w as f64 / 2.0, y as f64 - h as f64 / 2.0);
            let t = ((xf * gx + yf * gy) / diag + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * plane + y * w + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    let side = h.min(w) as f64;
    for _ in 0..3 + rng.below(3) {
        let color = random_color(&mut rng);
        let (cx, cy) = (rng.uniform() * w as f64, rng.uniform() * h as f64);
        let (a, b) = (
            side * (0.12 + 0.25 * rng.uniform()),
            side * (0.12 + 0.25 * rng.uniform()),
        );
        let ellipse = rng.bernoulli(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let dist = if ellipse {
                    let q = ((dx / a).powi(2) + (dy / b).powi(2)).sqrt();
                    (q - 1.0) * a.min(b)
                } else {
                    (dx.abs() - a).max(dy.abs() - b)
                };
                let cover = smooth_edge(dist);
                if cover > 0.0 {
                    for c in 0..3 {
                        let px = &mut img[c * plane + y * w + x];
                        *px = *px * (1.0 - cover) + color[c] * cover;
                    }
                }
            }
        }
    }

    // periods of 3/8 to 3/4 of the image side, coarse enough to survive degradation
    let angle = rng.uniform() * std::f64::consts::PI;
    let freq = std::f64::consts::TAU / (side * (0.375 + 0.375 * rng.uniform()));
    let phase = rng.uniform() * std::f64::consts::TAU;
    let amp = 0.04 + 0.08 * rng.uniform();
    let tint = random_color(&mut rng);
    let (kx, ky) = (angle.cos() * freq, angle.sin() * freq);
    for y in 0..h {
        for x in 0..w {
            let s = amp * (kx * x as f64 + ky * y as f64 + phase).sin();
            for c in 0..3 {
                img[c * plane + y * w + x] += s * (0.5 + 0.5 * tint[c]);
            }
        }
    }

    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(&[3, h, w], img).expect("shape matches buffer")
}

/// `n` images of size `h x w`; image `i` depends only on `(seed, i)`.
pub fn synth_dataset(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<Tensor>> {
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "synth_dataset needs n, h, w >= 1 (got {n}, {h}, {w})"
        )));
    }
    Ok((0..n).map(|i| synth_image(h, w, derive_seed(seed, i as u64))).collect())
}

fn extension(image: &Tensor) -> &'static str {
    if image.shape().first() == Some(&1) {
        "pgm"
    } else {
        "ppm"
    }
}

/// Writes `<root>/hr/NNNN.ppm` for each image.
pub fn write_hr_dir(root: &Path, images: &[Tensor]) -> Result<()> {
    let dir = root.join("hr");
    fs::create_dir_all(&dir)?;
    for (i, img) in images.iter().enumerate() {
        write_pnm(dir.join(format!("{i:04}.{}", extension(img))), img)?;
    }
    Ok(())
}

/// `.ppm`/`.pgm` files directly under `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")));
    paths.sort();
    Ok(paths)
}

/// Reads every image under `<root>/hr`, sorted by file name.
pub fn read_hr_dir(root: &Path) -> Result<Vec<Tensor>> {
    let dir = root.join("hr");
    let paths = list_images(&dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ppm/.pgm images in {}",
            dir.display()
        )));
    }
    paths.iter().map(read_pnm).collect()
}

/// Degrades every HR image and writes the LR cache `<root>/lr_x<scale>/`.
pub fn write_lr_cache(root: &Path, samples: &[ImageSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let dir = root.join(format!("lr_x{}", first.scale));
    fs::create_dir_all(&dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_pnm(dir.join(format!("{i:04}.{}", extension(&s.lr))), &s.lr)?;
    }
    Ok(())
}

/// Loads `<root>/hr` and builds the pairs. Degradation is recomputed from the
/// HR files, so the LR cache is informational only.
pub fn load_dataset(root: &Path, scale: usize) -> Result<Vec<ImageSample>> {
    read_hr_dir(root)?.iter().map(|hr| make_lr_hr_pair(hr, scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{decompose, Band};
    use std::time::Instant;

    #[test]
    fn constant_hr_is_preserved() {
        let hr = Tensor::full(&[3, 16, 16], 0.37);
        let s = make_lr_hr_pair(&hr, 4).unwrap();
        assert_eq!(s.lr.shape(), &[3, 4, 4]);
        assert!(s.lr_up.max_abs_diff(&hr) < 1e-12);
    }

    #[test]
    fn nyquist_checkerboard_is_removed() {
        let hr = Tensor::from_fn(&[1, 32, 32], |i| ((i / 32 + i % 32) % 2) as f64);
        let s = make_lr_hr_pair(&hr, 4).unwrap();
        let dev = s.lr_up.data().iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
        assert!(dev <= 0.1, "deviation {dev}");
    }

    #[test]
    fn pair_shapes_and_range() {
        let hr = synth_image(32, 32, 5);
        let s = make_lr_hr_pair(&hr, 4).unwrap();
        assert_eq!(s.lr.shape(), &[3, 8, 8]);
        assert_eq!(s.lr_up.shape(), &[3, 32, 32]);
        for t in [&s.lr, &s.lr_up] {
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(make_lr_hr_pair(&hr, 4).unwrap(), s);
        assert!(make_lr_hr_pair(&Tensor::zeros(&[3, 12, 12]), 4).is_err());
        assert!(make_lr_hr_pair(&Tensor::zeros(&[3, 16, 16]), 0).is_err());
    }

    #[test]
    fn flips() {
        let s = make_lr_hr_pair(&synth_image(16, 16, 1), 2).unwrap();
        assert_eq!(s.flipped().flipped(), s);
        let mut rng = Rng::seed_from_u64(3);
        let mut flips = 0;
        for _ in 0..10_000 {
            let a = augment_hflip(&s, &mut rng);
            let hr_flipped = a.hr != s.hr;
            assert_eq!(hr_flipped, a.lr_up != s.lr_up);
            assert_eq!(hr_flipped, a.lr != s.lr);
            flips += hr_flipped as usize;
        }
        let rate = flips as f64 / 1e4;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn corpus_is_deterministic_with_detail() {
        let start = Instant::now();
        let a = synth_dataset(200, 32, 32, 9).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 5.0, "took {elapsed} s");
        assert_eq!(a, synth_dataset(200, 32, 32, 9).unwrap());
        assert_ne!(a[0], synth_dataset(1, 32, 32, 10).unwrap()[0]);
        for img in &a {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let bands = decompose(&img.clone().reshape(&[1, 3, 32, 32]).unwrap()).unwrap();
            let detail: f64 = [Band::Vertical, Band::Horizontal, Band::Diagonal]
                .iter()
                .map(|&b| bands.band(b).norm_sq())
                .sum();
            assert!(detail > 1e-3, "detail energy {detail}");
        }
        assert!(synth_dataset(0, 8, 8, 0).is_err());
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = synth_dataset(3, 16, 16, 2).unwrap();
        write_hr_dir(dir.path(), &imgs).unwrap();
        let back = read_hr_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in imgs.iter().zip(&back) {
            assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-12);
        }
        let samples = load_dataset(dir.path(), 2).unwrap();
        write_lr_cache(dir.path(), &samples).unwrap();
        assert!(dir.path().join("lr_x2/0002.ppm").exists());
        assert!(read_hr_dir(&dir.path().join("missing")).is_err());
    }
}
