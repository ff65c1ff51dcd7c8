//! RGB images stored as `f64` in row-major, channel-last order.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3`, index `(y * width + x) * 3 + c`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Horizontal concatenation of equally tall images.
    pub fn hstack(images: &[Image]) -> Result<Image> {
        let Some(first) = images.first() else {
            return Ok(Image::new(0, 0));
        };
        let h = first.height;
        if images.iter().any(|im| im.height != h) {
            return Err(Error::InvalidInput("hstack needs equal heights".into()));
        }
        let w: usize = images.iter().map(|im| im.width).sum();
        let mut out = Image::new(w, h);
        let mut x0 = 0;
        for im in images {
            for y in 0..h {
                let src = &im.data[y * im.width * 3..(y + 1) * im.width * 3];
                out.data[(y * w + x0) * 3..(y * w + x0 + im.width) * 3].copy_from_slice(src);
            }
            x0 += im.width;
        }
        Ok(out)
    }

    /// Vertical concatenation of equally wide images.
    pub fn vstack(images: &[Image]) -> Result<Image> {
        let Some(first) = images.first() else {
            return Ok(Image::new(0, 0));
        };
        if images.iter().any(|im| im.width != first.width) {
            return Err(Error::InvalidInput("vstack needs equal widths".into()));
        }
        let height = images.iter().map(|im| im.height).sum();
        let data = images.iter().flat_map(|im| im.data.iter().copied()).collect();
        Image::from_data(first.width, height, data)
    }
}

/// PNG sample depth used when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

/// Writes an RGB PNG, clamping values to `[0, 1]`.
pub fn save_png(image: &Image, path: &Path, depth: PngDepth) -> Result<()> {
    let png_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Rgb);
        let bytes: Vec<u8> = match depth {
            PngDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                image
                    .data
                    .iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect()
            }
            PngDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                image
                    .data
                    .iter()
                    .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                    .collect()
            }
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&bytes).map_err(png_err)?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB or RGBA; alpha dropped).
pub fn load_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| img_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| img_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(img_err("unexpanded palette image".into())),
    };
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect(),
        other => return Err(img_err(format!("unsupported bit depth {other:?}"))),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in samples.chunks_exact(channels) {
        match channels {
            1 | 2 => data.extend_from_slice(&[px[0]; 3]),
            _ => data.extend_from_slice(&px[..3]),
        }
    }
    Image::from_data(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut im = Image::new(5, 3);
        for (i, v) in im.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.037) % 1.0;
        }
        let p8 = dir.path().join("a8.png");
        save_png(&im, &p8, PngDepth::Eight).unwrap();
        let back = load_png(&p8).unwrap();
        assert!(back.data.iter().zip(&im.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));

        let p16 = dir.path().join("a16.png");
        save_png(&im, &p16, PngDepth::Sixteen).unwrap();
        let back = load_png(&p16).unwrap();
        assert!(back.data.iter().zip(&im.data).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-12));
        assert_eq!((back.width, back.height), (5, 3));
    }

    #[test]
    fn hstack_places_columns() {
        let a = Image::filled(2, 2, [1.0, 0.0, 0.0]);
        let b = Image::filled(1, 2, [0.0, 1.0, 0.0]);
        let s = Image::hstack(&[a, b]).unwrap();
        assert_eq!(s.width, 3);
        assert_eq!(s.get(1, 1, 0), 1.0);
        assert_eq!(s.get(2, 1, 1), 1.0);
        let v = Image::vstack(&[Image::filled(2, 1, [0.5; 3]), Image::new(2, 2)]).unwrap();
        assert_eq!((v.width, v.height), (2, 3));
        assert_eq!(v.get(1, 0, 2), 0.5);
        assert_eq!(v.get(1, 2, 2), 0.0);
        assert!(Image::vstack(&[Image::new(2, 1), Image::new(3, 1)]).is_err());
    }
}
