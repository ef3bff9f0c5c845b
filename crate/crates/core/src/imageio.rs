//! Grayscale PNG encoding for rendered observations.
//!
//! Display images in [0, 1] are stored as 16-bit grayscale with
//! `round(value * 65535)`. Reading accepts 8- and 16-bit grayscale.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major grayscale image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
            .collect()
    }
}

pub fn encode_png16(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_png16_to(img, &mut out)?;
    Ok(out)
}

pub fn write_png16(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_png16_to(img, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_png16_to<W: Write>(img: &GrayImage, w: W) -> Result<()> {
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    let data: Vec<u8> = img.to_u16().iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&data).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Png(format!("expected grayscale, got {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h].iter().map(|&b| b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..w * h * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        d => return Err(Error::Png(format!("unsupported bit depth {d:?}"))),
    };
    GrayImage::new(w, h, pixels)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}
