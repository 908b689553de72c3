//! PNG / binary PPM reading and writing, plus resize and crop helpers.
//!
//! Images are `1 x 3 x h x w` tensors with values in `[0, 1]`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes PNG (8-bit gray, gray+alpha, RGB, RGBA, palette) or binary PPM.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::UnsupportedFormat("expected PNG or binary PPM (P6)".into()))
    }
}

pub fn save_image(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => encode_ppm(image)?,
        _ => encode_png(image)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_rgb8(image: &Tensor<f32>) -> Result<(u32, u32, Vec<u8>)> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(format!("expected a 1x3xHxW image, got {s}")));
    }
    let plane = s.plane();
    let d = image.data();
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        out.extend([quantize(d[i]), quantize(d[plane + i]), quantize(d[2 * plane + i])]);
    }
    Ok((s.w as u32, s.h as u32, out))
}

fn from_interleaved(w: usize, h: usize, channels: usize, bytes: &[u8]) -> Result<Tensor<f32>> {
    let plane = w * h;
    if bytes.len() < plane * channels {
        return Err(Error::Corrupt("image data is truncated".into()));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let px = &bytes[i * channels..(i + 1) * channels];
        let rgb = match channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        };
        for (c, v) in rgb.into_iter().enumerate() {
            data[c * plane + i] = f32::from(v) / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb8(image)?;
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, w, h);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Corrupt(format!("png encode: {e}")))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Corrupt(format!("png encode: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Corrupt(format!("png encode: {e}")))?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // palette and sub-byte gray expand to 8 bits; 16-bit stays 16-bit
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Corrupt(format!("png: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!("{depth:?}-bit PNG; only 8-bit is supported")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat("unexpanded palette PNG".into()));
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Corrupt("png: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Corrupt(format!("png: {e}")))?;
    from_interleaved(info.width as usize, info.height as usize, channels, &buf[..info.buffer_size()])
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (w, h, rgb) = to_rgb8(image)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb);
    Ok(out)
}

fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    // header: magic, width, height, maxval separated by whitespace, with
    // optional # comments, then exactly one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Corrupt("ppm header is truncated".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Corrupt(format!("ppm header field `{s}` is not a number")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PPM maxval {maxval}; only 8-bit is supported")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Corrupt("ppm has zero size".into()));
    }
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < w * h * 3 {
        return Err(Error::Corrupt(format!(
            "ppm payload is truncated: {} of {} bytes",
            body.len(),
            w * h * 3
        )));
    }
    from_interleaved(w, h, 3, body)
}

/// Nearest integer, ties rounding up.
fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Bilinear resize (half-pixel centres) so that the smaller side becomes
/// `target`, preserving aspect ratio.
pub fn resize_smaller_side(image: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    if target == 0 {
        return Err(Error::shape("resize target must be >= 1"));
    }
    let s = image.shape();
    let smaller = s.h.min(s.w);
    if smaller == target {
        return Ok(image.clone());
    }
    let scale = target as f64 / smaller as f64;
    let (oh, ow) = if s.h <= s.w {
        (target, round_half_up(s.w as f64 * scale).max(1))
    } else {
        (round_half_up(s.h as f64 * scale).max(1), target)
    };
    resize_bilinear(image, oh, ow)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(image: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if oh == 0 || ow == 0 {
        return Err(Error::shape("resize output must be non-empty"));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let ratio = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(oh, s.h);
    let xs = taps(ow, s.w);
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in image.data().chunks_exact(s.plane()) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * s.w + x0] * (1.0 - fx) + plane[y0 * s.w + x1] * fx;
                let bottom = plane[y1 * s.w + x0] * (1.0 - fx) + plane[y1 * s.w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(Shape::new(s.n, s.c, oh, ow), out)
}

/// Crops an `h x w` window whose top-left corner is `(top, left)`.
pub fn crop(image: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
        return Err(Error::shape(format!(
            "crop {h}x{w} at ({top},{left}) does not fit in {}x{}",
            s.h, s.w
        )));
    }
    let mut out = Vec::with_capacity(s.n * s.c * h * w);
    for plane in image.data().chunks_exact(s.plane()) {
        for y in top..top + h {
            out.extend_from_slice(&plane[y * s.w + left..y * s.w + left + w]);
        }
    }
    Tensor::new(Shape::new(s.n, s.c, h, w), out)
}

/// Centred `size x size` window; odd remainders favour the upper-left.
pub fn center_crop(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if size > s.h || size > s.w {
        return Err(Error::shape(format!("crop {size} larger than image {}x{}", s.h, s.w)));
    }
    crop(image, (s.h - size) / 2, (s.w - size) / 2, size, size)
}
