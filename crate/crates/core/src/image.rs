//! Pixel containers and PNG input/output.
//!
//! [`Image`] stores interleaved RGB (row-major, three values per pixel) and
//! [`Field`] stores one value per pixel. Both hold `f64` intensities in
//! `[0, 1]`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParams(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} RGB image needs {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidParams(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        for (c, v) in rgb.iter().enumerate() {
            self.data[i + c] = clamp_unit(*v);
        }
    }

    /// Rec. 601 luma of every pixel.
    pub fn luminance(&self) -> Field {
        let data = self.data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Field { height: self.height, width: self.width, data }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in top..top + height {
            let start = (r * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Image { height, width, data })
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantize8(&self) -> Image {
        let data = self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect();
        Image { height: self.height, width: self.width, data }
    }

    /// Bilinear resampling to a new size (pixel-center aligned).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        let mut out = vec![0.0; height * width * 3];
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for r in 0..height {
            let (y0, y1, ly) = bilinear_coord(r, sy, self.height);
            for c in 0..width {
                let (x0, x1, lx) = bilinear_coord(c, sx, self.width);
                for ch in 0..3 {
                    let at = |y: usize, x: usize| self.data[(y * self.width + x) * 3 + ch];
                    let top = at(y0, x0) * (1.0 - lx) + at(y0, x1) * lx;
                    let bottom = at(y1, x0) * (1.0 - lx) + at(y1, x1) * lx;
                    out[(r * width + c) * 3 + ch] = top * (1.0 - ly) + bottom * ly;
                }
            }
        }
        Image { height, width, data: out }
    }
}

/// Source coordinate for bilinear sampling with half-pixel centers.
pub(crate) fn bilinear_coord(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, src - i0 as f64)
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Single-channel per-pixel field: transmission maps, streak layers, vapor densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Per-pixel transmission in `[0, 1]`.
pub type TransmissionMap = Field;

impl Field {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParams(format!("field must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} field needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidParams(format!("field value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![clamp_unit(value); height * width] }
    }

    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let data = self.data.iter().map(|&v| clamp_unit(f(v))).collect();
        Field { height: self.height, width: self.width, data }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Field> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{} field",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Field { height, width, data })
    }
}

/// Boolean per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Mask> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::DimensionMismatch("mask crop out of bounds".into()));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Mask { height, width, data })
    }
}

/// Per-image constant RGB atmosphere light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct AtmosphereLight([f64; 3]);

impl AtmosphereLight {
    pub fn new(rgb: [f64; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParams(format!("atmosphere light {rgb:?} outside [0, 1]")));
        }
        Ok(Self(rgb))
    }

    pub fn gray(v: f64) -> Result<Self> {
        Self::new([v; 3])
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.0
    }
}

impl TryFrom<[f64; 3]> for AtmosphereLight {
    type Error = Error;

    fn try_from(rgb: [f64; 3]) -> Result<Self> {
        Self::new(rgb)
    }
}

impl From<AtmosphereLight> for [f64; 3] {
    fn from(a: AtmosphereLight) -> Self {
        a.0
    }
}

pub(crate) fn ensure_same_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode { path: path.into(), msg: e.to_string() })?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode { path: path.into(), msg: e.to_string() })?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Reads samples as normalized values, `samples` per pixel.
fn normalized_samples(info: &png::OutputInfo, buf: &[u8]) -> Vec<f64> {
    match info.bit_depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        _ => buf.iter().map(|&b| b as f64 / 255.0).collect(),
    }
}

/// Reads any 8/16-bit gray, gray-alpha, RGB or RGBA PNG as RGB (alpha dropped).
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let (info, buf) = decode_png(path)?;
    let samples = normalized_samples(&info, &buf);
    let (h, w) = (info.height as usize, info.width as usize);
    let mut data = Vec::with_capacity(h * w * 3);
    match info.color_type {
        png::ColorType::Rgb => data = samples,
        png::ColorType::Rgba => samples.chunks_exact(4).for_each(|p| data.extend_from_slice(&p[..3])),
        png::ColorType::Grayscale => samples.iter().for_each(|&v| data.extend_from_slice(&[v; 3])),
        png::ColorType::GrayscaleAlpha => samples.chunks_exact(2).for_each(|p| data.extend_from_slice(&[p[0]; 3])),
        other => {
            return Err(Error::Decode { path: path.into(), msg: format!("unsupported color type {other:?}") })
        }
    }
    Image::new(h, w, data).map_err(|e| Error::Decode { path: path.into(), msg: e.to_string() })
}

/// Reads a grayscale PNG (8 or 16 bit) as a field; RGB inputs use their luma.
pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let (info, buf) = decode_png(path)?;
    let samples = normalized_samples(&info, &buf);
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<f64> = match info.color_type {
        png::ColorType::Grayscale => samples,
        png::ColorType::GrayscaleAlpha => samples.chunks_exact(2).map(|p| p[0]).collect(),
        png::ColorType::Rgb => samples.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
        png::ColorType::Rgba => samples.chunks_exact(4).map(|p| luma(p[0], p[1], p[2])).collect(),
        other => {
            return Err(Error::Decode { path: path.into(), msg: format!("unsupported color type {other:?}") })
        }
    };
    Field::from_clamped(h, w, data).map_err(|e| Error::Decode { path: path.into(), msg: e.to_string() })
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let field = read_field(path)?;
    let data = field.data().iter().map(|&v| v >= 0.5).collect();
    Mask::new(field.height(), field.width(), data)
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode { path: path.into(), msg: other.to_string() },
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    fsutil::write_file(path, &out)
}

fn to_u8(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

fn to_u16(v: f64) -> u16 {
    (clamp_unit(v) * 65535.0).round() as u16
}

/// Writes an 8-bit RGB PNG.
pub fn write_rgb8(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    encode_png(path.as_ref(), img.width(), img.height(), png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// Writes a 16-bit grayscale PNG (transmission maps).
pub fn write_gray16(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let bytes: Vec<u8> = field.data().iter().flat_map(|&v| to_u16(v).to_be_bytes()).collect();
    encode_png(path.as_ref(), field.width(), field.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Writes a mask as an 8-bit grayscale PNG with values 0 / 255.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_png(path.as_ref(), mask.width(), mask.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}
