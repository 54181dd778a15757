//! Middlebury `.flo` flow files and 8-bit RGB PNG frames.
//!
//! Frames are `[1, 3, H, W]` tensors in `[0, 1]`; flows are `[1, 2, H, W]`
//! tensors in pixels with the horizontal component first.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use blurwarp_tensor::Tensor;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Largest pixel count accepted when decoding untrusted headers.
pub const MAX_PIXELS: usize = 1 << 24;

pub fn encode_flo(flow: &Tensor) -> Result<Vec<u8>> {
    let [b, c, h, w] = flow.dims4("encode_flo")?;
    if b != 1 || c != 2 {
        return Err(Error::Data(format!("flow must be [1, 2, H, W], got {:?}", flow.shape())));
    }
    let plane = h * w;
    let d = flow.data();
    let mut out = Vec::with_capacity(12 + 8 * plane);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for p in 0..plane {
        out.extend_from_slice(&d[p].to_le_bytes());
        out.extend_from_slice(&d[plane + p].to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Tensor> {
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(4 * i..4 * i + 4)?.try_into().ok() };
    let header = (|| Some((f32::from_le_bytes(word(0)?), i32::from_le_bytes(word(1)?), i32::from_le_bytes(word(2)?))))();
    let Some((magic, w, h)) = header else {
        return Err(Error::Data("flo: truncated header".into()));
    };
    if magic != FLO_MAGIC {
        return Err(Error::Data(format!("flo: bad magic {magic}")));
    }
    if w <= 0 || h <= 0 {
        return Err(Error::Data(format!("flo: non-positive size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let plane = w.checked_mul(h).filter(|p| *p <= MAX_PIXELS).ok_or_else(|| Error::Data(format!("flo: size {w}x{h} too large")))?;
    if bytes.len() != 12 + 8 * plane {
        return Err(Error::Data(format!("flo: expected {} bytes for {w}x{h}, got {}", 12 + 8 * plane, bytes.len())));
    }
    let mut data = vec![0.0f32; 2 * plane];
    for (p, pair) in bytes[12..].chunks_exact(8).enumerate() {
        data[p] = f32::from_le_bytes(pair[..4].try_into().unwrap());
        data[plane + p] = f32::from_le_bytes(pair[4..].try_into().unwrap());
    }
    Ok(Tensor::new(&[1, 2, h, w], data)?)
}

pub fn write_flo(path: &Path, flow: &Tensor) -> Result<()> {
    fs::write(path, encode_flo(flow)?).map_err(|e| Error::io_at(path, e))
}

pub fn read_flo(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_flo(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[1, 3, H, W]` image as 8-bit RGB.
pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let [b, c, h, w] = img.dims4("encode_png")?;
    if b != 1 || c != 3 {
        return Err(Error::Data(format!("image must be [1, 3, H, W], got {:?}", img.shape())));
    }
    encode_rgb8(&interleave(img.data(), h * w), w, h)
}

pub(crate) fn encode_rgb8(rgb: &[u8], w: usize, h: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Io(format!("png: {e}")))?;
        writer.write_image_data(rgb).map_err(|e| Error::Io(format!("png: {e}")))?;
        writer.finish().map_err(|e| Error::Io(format!("png: {e}")))?;
    }
    Ok(out)
}

fn interleave(planar: &[f32], plane: usize) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            rgb.push(to_u8(planar[c * plane + p]));
        }
    }
    rgb
}

/// Decodes any 8-bit or 16-bit gray/RGB(A) PNG to a `[1, 3, H, W]` tensor.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Data(format!("png: {e}")))?;
    let (hw, hh) = (reader.info().width as usize, reader.info().height as usize);
    if hw.saturating_mul(hh) > MAX_PIXELS {
        return Err(Error::Data(format!("png: size {hw}x{hh} too large")));
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::Data("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Data(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Data("png: unexpanded palette".into())),
    };
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        let px = &buf[p * stride..p * stride + stride];
        for c in 0..3 {
            let v = if stride >= 3 { px[c] } else { px[0] };
            data[c * plane + p] = v as f32 / 255.0;
        }
    }
    Ok(Tensor::new(&[1, 3, h, w], data)?)
}

pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_png(img)?).map_err(|e| Error::io_at(path, e))
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_png(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// The value an image takes after an 8-bit write and read.
pub fn quantize(img: &Tensor) -> Tensor {
    let data = img.data().iter().map(|v| to_u8(*v) as f32 / 255.0).collect();
    Tensor::new(img.shape(), data).expect("same shape")
}
