//! PNG codecs for scene images and label maps. Label maps are 8-bit
//! grayscale holding class indices, with IGNORE stored as 255.

use std::io::Cursor;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader, Limits};

use crate::error::{Error, Result};
use crate::seg::{LabelMap, RgbImage};

/// Largest side accepted when decoding.
pub const MAX_SIDE: u32 = 4096;

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    let mut limits = Limits::default();
    limits.max_image_width = Some(MAX_SIDE);
    limits.max_image_height = Some(MAX_SIDE);
    limits.max_alloc = Some(256 << 20);
    let mut reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    reader.limits(limits);
    Ok(reader.decode()?)
}

fn encode(data: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(data, width as u32, height as u32, color)?;
    Ok(out)
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    encode(image.data(), image.width(), image.height(), ExtendedColorType::Rgb8)
}

/// Any PNG colour type; converted to 8-bit RGB.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode(bytes)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw())
}

pub fn encode_label_png(labels: &LabelMap) -> Result<Vec<u8>> {
    encode(labels.labels(), labels.width(), labels.height(), ExtendedColorType::L8)
}

/// Only 8-bit grayscale is accepted: any conversion would change class ids.
pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    match decode(bytes)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            LabelMap::new(w, h, img.into_raw())
        }
        other => Err(Error::Config(format!("label PNG must be 8-bit grayscale, got {:?}", other.color()))),
    }
}
