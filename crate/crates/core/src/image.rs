//! RGB / grayscale float images and the PNG codec.

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Snap every channel to the 8-bit grid so that a PNG round trip is exact.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = quantize(*v) as f64 / 255.0;
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Format("rgb8 buffer length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.to_rgb8())
    }

    /// Decode an 8-bit RGB or RGBA PNG (alpha is dropped).
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format("only 8-bit PNG is supported".into()));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let buf = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf.to_vec(),
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(Error::Format(format!("unsupported PNG color type {other:?}"))),
        };
        Self::from_rgb8(w, h, &rgb)
    }
}

/// Single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &bytes)
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_image_survives_png_round_trip() {
        let mut img = Image::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.037).fract();
        }
        img.quantize_u8();
        let decoded = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(decoded, img);
    }

    #[test]
    fn gray_png_decodes_as_replicated_rgb() {
        let mut g = GrayImage::new(2, 2);
        g.data = vec![0.0, 1.0, 0.5, 0.25];
        let img = Image::decode_png(&g.encode_png().unwrap()).unwrap();
        assert_eq!(img.pixel(1, 0), [1.0, 1.0, 1.0]);
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
    }
}
