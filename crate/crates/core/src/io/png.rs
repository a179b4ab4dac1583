//! 8-bit PNG reading and writing. Values map linearly to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{HgsError, Result};
use crate::image::Image;

fn decode_error(path: &Path, e: impl std::fmt::Display) -> HgsError {
    HgsError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads gray, gray+alpha, RGB, RGBA or palette images; alpha is dropped.
/// Low bit depths are expanded; 16-bit images are rejected.
pub fn read_image(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| HgsError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| decode_error(path, e))?;
    if reader.info().bit_depth == BitDepth::Sixteen {
        return Err(HgsError::UnsupportedBitDepth(16));
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| decode_error(path, "image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_error(path, e))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let channels = match frame.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(decode_error(path, "palette was not expanded")),
    };
    let mut img = Image::new(w, h);
    for y in 0..h {
        let row = &buf[y * frame.line_size..];
        for x in 0..w {
            let px = &row[x * channels..];
            let v = |c: usize| px[c] as f64 / 255.0;
            let rgb = if channels < 3 { [v(0); 3] } else { [v(0), v(1), v(2)] };
            img.set(x, y, rgb);
        }
    }
    Ok(img)
}

/// Quantizes to 8 bits, rounding half to even after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round_ties_even() as u8
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HgsError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    let io_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => HgsError::io(path, e),
        other => decode_error(path, other),
    };
    let mut w = enc.write_header().map_err(io_err)?;
    w.write_image_data(&bytes).map_err(io_err)?;
    w.finish().map_err(io_err)
}
