use std::io::Cursor;

use png::{BitDepth, ColorType, Decoder, Encoder, Limits, Transformations};

use crate::error::{Error, Result};
use crate::labels::BinaryMask;
use crate::tensor::Tensor;

/// Largest side accepted from disk; generated scenes are far smaller.
pub const MAX_SIDE: u32 = 8192;
const DECODE_BYTES: usize = 256 << 20;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode(width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(data).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decoded 8-bit pixels plus channel count (1..=4).
fn decode(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut dec = Decoder::new_with_limits(Cursor::new(bytes), Limits { bytes: DECODE_BYTES });
    dec.set_transformations(Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(png_err)?;
    let (w, h) = (reader.info().width, reader.info().height);
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(Error::Png(format!("unsupported image size {w}x{h}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::Png("palette was not expanded".into())),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut px = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(stride).take(h) {
        px.extend_from_slice(&row[..w * channels]);
    }
    Ok((h, w, channels, px))
}

/// `[3, H, W]` image in `[0, 1]` to 8-bit RGB PNG bytes.
pub fn encode_rgb(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    if *c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let (h, w) = (*h, *w);
    let d = image.data();
    let mut px = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            px.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    encode(w, h, ColorType::Rgb, &px)
}

/// Any 8-bit PNG to a `[3, H, W]` tensor in `[0, 1]`; grey is replicated,
/// alpha dropped.
pub fn decode_rgb(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (h, w, ch, px) = decode(bytes)?;
    let mut out = vec![0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            let src = if ch >= 3 { c } else { 0 };
            out[c * h * w + i] = px[i * ch + src] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    encode(mask.width(), mask.height(), ColorType::Grayscale, &mask.to_u8())
}

/// Single-channel PNG whose pixels are all 0 or 255.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let (h, w, ch, px) = decode(bytes)?;
    if ch != 1 {
        return Err(Error::Png(format!("mask must be single-channel, got {ch} channels")));
    }
    BinaryMask::from_u8(h, w, &px)
}
