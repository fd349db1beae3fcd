use std::fs;
use std::io::Cursor;
use std::path::Path;

use ::image::codecs::png::PngEncoder;
use ::image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::ImageGray;
use crate::error::{Error, Result};

/// Bit depth of a decoded source file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

const SCALE_16: f64 = 65535.0 / 255.0;

/// Decode PNG bytes. 16-bit samples map linearly from `[0, 65535]` to
/// `[0, 255]`; 8-bit samples keep their value. Colour input is converted to luma.
pub fn decode_png(bytes: &[u8]) -> Result<(ImageGray, BitDepth)> {
    let img = ImageReader::with_format(Cursor::new(bytes), ::image::ImageFormat::Png).decode()?;
    let depth = match img.color() {
        ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16 => BitDepth::Sixteen,
        _ => BitDepth::Eight,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match depth {
        BitDepth::Sixteen => DynamicImage::to_luma16(&img)
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / SCALE_16)
            .collect(),
        BitDepth::Eight => DynamicImage::to_luma8(&img)
            .into_raw()
            .into_iter()
            .map(f64::from)
            .collect(),
    };
    Ok((ImageGray::new(w, h, data)?, depth))
}

pub fn read_png(path: &Path) -> Result<(ImageGray, BitDepth)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Encode as 16-bit grayscale PNG, clamping to `[0, 255]` and rounding half to even.
pub fn encode_png16(img: &ImageGray) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(img.len() * 2);
    for &v in img.data() {
        let q = (v.clamp(0.0, 255.0) * SCALE_16).round_ties_even() as u16;
        raw.extend_from_slice(&q.to_ne_bytes());
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(&raw, img.width() as u32, img.height() as u32, ExtendedColorType::L16)?;
    Ok(out)
}

pub fn write_png16(path: &Path, img: &ImageGray) -> Result<()> {
    let bytes = encode_png16(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
