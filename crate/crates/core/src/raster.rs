//! Planar float images and PNG export.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use glam::DVec3;

use crate::{Error, Result};

/// Row-major image of `channels` f64 values per pixel, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, &mut [f64])) -> Self {
        let mut img = Image::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                f(x, y, img.pixel_mut(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let at = (y * self.width + x) * self.channels;
        &self.data[at..at + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let at = (y * self.width + x) * self.channels;
        &mut self.data[at..at + self.channels]
    }

    /// First three channels (or the single channel replicated).
    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> DVec3 {
        let p = self.pixel(x, y);
        if self.channels >= 3 {
            DVec3::new(p[0], p[1], p[2])
        } else {
            DVec3::splat(p[0])
        }
    }

    #[inline]
    pub fn set_rgb(&mut self, x: usize, y: usize, v: DVec3) {
        let p = self.pixel_mut(x, y);
        p[..3].copy_from_slice(&v.to_array());
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 8-bit bytes after clamp to [0, 1] and gamma 1/2.2.
    pub fn to_ldr_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| encode_gamma_u8(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::invalid(format!("cannot export {c}-channel image as PNG"))),
        };
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&self.to_ldr_bytes())
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }
}

/// Clamp to [0, 1], apply gamma 1/2.2 and quantize.
#[inline]
pub fn encode_gamma_u8(v: f64) -> u8 {
    let g = v.clamp(0.0, 1.0).powf(1.0 / 2.2);
    (g * 255.0 + 0.5).floor() as u8
}

/// Clamp to [0, 1] then gamma 1/2.2, without quantization.
#[inline]
pub fn encode_gamma(v: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(1.0 / 2.2)
}

#[inline]
pub fn decode_gamma(v: f64) -> f64 {
    v.clamp(0.0, 1.0).powf(2.2)
}

/// Reads an 8- or 16-bit gray/RGB(A) PNG as RGB values in [0, 1]. The
/// stored values are returned as-is (no gamma decoding).
pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Image> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let sample = |k: usize| -> f64 {
        if sixteen {
            u16::from_be_bytes([buf[2 * k], buf[2 * k + 1]]) as f64 / 65535.0
        } else {
            buf[k] as f64 / 255.0
        }
    };
    let mut img = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * src_channels;
            let rgb = match src_channels {
                1 | 2 => DVec3::splat(sample(base)),
                _ => DVec3::new(sample(base), sample(base + 1), sample(base + 2)),
            };
            img.set_rgb(x, y, rgb);
        }
    }
    Ok(img)
}

/// Writes RGB values in [0, 1] as a 16-bit PNG without gamma.
pub fn save_png16_rgb(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    let mut bytes = Vec::with_capacity(img.width() * img.height() * 6);
    for y in 0..img.height() {
        for x in 0..img.width() {
            for v in img.rgb(x, y).to_array() {
                let q = (v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}
