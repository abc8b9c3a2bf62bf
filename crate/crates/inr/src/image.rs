//! 8-bit PNG reading and writing.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use sobolev_core::metrics::to_luma;
use sobolev_core::Grid2D;

use crate::error::{FormatError, Result};

/// A decoded image with values in `[0, 1]`: 3 channels for colour input,
/// 1 for grayscale.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub image: Grid2D,
    pub dropped_alpha: bool,
}

pub fn decode_png(bytes: &[u8]) -> Result<LoadedImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::Unsupported {
            what: "png",
            detail: "image too large".into(),
        })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(FormatError::Unsupported {
            what: "png bit depth",
            detail: format!("{:?}", info.bit_depth),
        });
    }
    let (stride, keep, dropped_alpha) = match info.color_type {
        ColorType::Grayscale => (1, 1, false),
        ColorType::GrayscaleAlpha => (2, 1, true),
        ColorType::Rgb => (3, 3, false),
        ColorType::Rgba => (4, 3, true),
        other => {
            return Err(FormatError::Unsupported {
                what: "png colour type",
                detail: format!("{other:?}"),
            })
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * keep);
    for row in buf[..info.line_size * h].chunks_exact(info.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            data.extend(px[..keep].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Ok(LoadedImage {
        image: Grid2D::from_vec(h, w, keep, data)?,
        dropped_alpha,
    })
}

pub fn read_png(path: &Path) -> Result<LoadedImage> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_png(&bytes)
}

/// `round(255 v)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Replicates a single channel to RGB; RGB passes through.
pub fn to_rgb(img: &Grid2D) -> Result<Grid2D> {
    match img.channels() {
        3 => Ok(img.clone()),
        1 => {
            let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
            Ok(Grid2D::from_vec(img.rows(), img.cols(), 3, data)?)
        }
        c => Err(FormatError::Unsupported {
            what: "channel count",
            detail: c.to_string(),
        }),
    }
}

/// Luma of an RGB image; grayscale passes through.
pub fn to_gray(img: &Grid2D) -> Result<Grid2D> {
    match img.channels() {
        1 => Ok(img.clone()),
        _ => Ok(to_luma(img)?),
    }
}

/// Encodes an image as 8-bit RGB.
pub fn encode_png(img: &Grid2D) -> Result<Vec<u8>> {
    let rgb = to_rgb(img)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, rgb.cols() as u32, rgb.rows() as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let bytes: Vec<u8> = rgb.data().iter().map(|&v| quantize(v)).collect();
        writer.write_image_data(&bytes)?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &Grid2D) -> Result<()> {
    let bytes = encode_png(img)?;
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| FormatError::io(path, e))
}

/// Scales a non-negative single-channel field so its maximum maps to 1.
pub fn normalize_for_display(field: &Grid2D) -> Grid2D {
    let max = field.data().iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        field.scale(1.0 / max)
    } else {
        field.clone()
    }
}
