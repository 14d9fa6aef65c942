//! Binary PGM (P5) and PPM (P6) with 8-bit samples.
//!
//! Images are `[C, h, w]` tensors with `C = 1` (P5) or `C = 3` (P6) and
//! values in `[0, 1]`. Writing clamps and quantises with round-half-up.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("expected magic P5 or P6".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| format!("bad header number: {e}"))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after maxval".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("degenerate size {width}x{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!(
            "unsupported maxval {maxval} (only 8-bit samples are supported)"
        ));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        offset: pos,
    })
}

/// Decodes an in-memory P5/P6 image.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let h = parse_header(bytes).map_err(|m| format_err(path, m))?;
    let n = h.channels * h.width * h.height;
    let payload = &bytes[h.offset..];
    if payload.len() < n {
        return Err(format_err(
            path,
            format!("truncated payload: expected {n} bytes, found {}", payload.len()),
        ));
    }
    let plane = h.width * h.height;
    let mut data = vec![0.0; n];
    let maxval = h.maxval as f64;
    for (i, &byte) in payload[..n].iter().enumerate() {
        if byte as usize > h.maxval {
            return Err(format_err(path, format!("sample {byte} exceeds maxval {}", h.maxval)));
        }
        // interleaved RGB -> planar
        let (pix, c) = (i / h.channels, i % h.channels);
        data[c * plane + pix] = byte as f64 / maxval;
    }
    Tensor::new(&[h.channels, h.height, h.width], data)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_pnm(&bytes, path)
}

/// `round_half_up(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => {
            return Err(Error::InvalidShape {
                op: "encode_pnm",
                msg: format!("expected [1|3, h, w], got {s:?}"),
            })
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(c * plane);
    for pix in 0..plane {
        for ch in 0..c {
            out.push(quantize(image.data()[ch * plane + pix]));
        }
    }
    Ok(out)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

/// Rounds every value to the nearest representable 8-bit level.
pub fn quantize_tensor(image: &Tensor) -> Tensor {
    image.map(|v| quantize(v) as f64 / 255.0)
}
