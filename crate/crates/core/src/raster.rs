//! Raster types shared by every stage, PNG input and the PMAP probability-map format.
//!
//! PMAP layout (all little-endian):
//!
//! ```text
//! "PMAP" | width u32 | height u32 | channels u32 | channels * height * width f32
//! ```
//!
//! Samples are channel-planar and row-major inside each plane.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const PMAP_MAGIC: &[u8; 4] = b"PMAP";
const PMAP_HEADER_LEN: usize = 16;

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "raster data length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}

/// Fixed channel order of the main segmentation output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Background = 0,
    Grid = 1,
    Signal = 2,
    Text = 3,
}

pub const MAIN_CHANNELS: usize = 4;

/// Per-pixel probability field, channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let map = Self {
            width,
            height,
            channels,
            data,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    /// Builds a map from individual planes; every plane must be `width * height` long.
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        let channels = planes.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for (c, plane) in planes.into_iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::InvalidInput(format!(
                    "plane {c} has {} samples, expected {}",
                    plane.len(),
                    width * height
                )));
            }
            data.extend(plane);
        }
        Self::new(width, height, channels, data)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::InvalidInput(format!(
                "probability map dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.channels
            )));
        }
        let expected = self
            .width
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.channels))
            .ok_or_else(|| Error::InvalidInput("probability map too large".into()))?;
        if self.data.len() != expected {
            return Err(Error::InvalidInput(format!(
                "probability map holds {} samples, expected {expected}",
                self.data.len()
            )));
        }
        if let Some(i) = self
            .data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "probability {} at sample {i} outside [0, 1]",
                self.data[i]
            )));
        }
        Ok(())
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> Plane<'_> {
        let n = self.width * self.height;
        Plane {
            width: self.width,
            height: self.height,
            data: &self.data[channel * n..(channel + 1) * n],
        }
    }

    pub fn channel(&self, channel: Channel) -> Plane<'_> {
        self.plane(channel as usize)
    }
}

/// Borrowed single-channel view of a [`ProbMap`].
#[derive(Clone, Copy, Debug)]
pub struct Plane<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> Plane<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f32]) -> Self {
        assert_eq!(data.len(), width * height, "plane size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Bilinear sample at continuous pixel-centre coordinates; `None` outside the plane.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        bilinear(self.width, self.height, x, y, |xi, yi| self.get(xi, yi) as f64)
            .map(|v| v as f32)
    }
}

/// Shared bilinear interpolation; coordinates refer to pixel centres.
pub(crate) fn bilinear(
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    fetch: impl Fn(usize, usize) -> f64,
) -> Option<f64> {
    if !(x > -0.5 && y > -0.5 && x < width as f64 - 0.5 && y < height as f64 - 0.5) {
        return None;
    }
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x1, y0) * fx;
    let bottom = fetch(x0, y1) * (1.0 - fx) + fetch(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Uniformly sampled series; `NaN` marks samples without a value.
#[derive(Clone, Debug, PartialEq)]
pub struct Series1D {
    pub values: Vec<f64>,
    pub sample_rate: f64,
}

impl Series1D {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidInput("series contains infinite values".into()));
        }
        Ok(Self {
            values,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    pub fn nan_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|v| v.is_nan()).count() as f64 / self.values.len() as f64
    }
}

/// Loads a PNG; grayscale and alpha variants are flattened to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbRaster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbRaster::new(w as usize, h as usize, rgb.into_raw())
}

pub fn save_png(raster: &RgbRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_png(raster)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn encode_png(raster: &RgbRaster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        raster.data(),
        raster.width() as u32,
        raster.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

pub fn encode_probmap(map: &ProbMap) -> Result<Vec<u8>> {
    map.validate()?;
    let dims = [map.width, map.height, map.channels];
    let mut out = Vec::with_capacity(PMAP_HEADER_LEN + map.data.len() * 4);
    out.extend_from_slice(PMAP_MAGIC);
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_probmap(bytes: &[u8]) -> Result<ProbMap> {
    if bytes.len() < PMAP_HEADER_LEN {
        return Err(Error::Format("file shorter than header".into()));
    }
    if &bytes[..4] != PMAP_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (w, h, c) = (word(0) as usize, word(1) as usize, word(2) as usize);
    let count = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format(format!("dimension overflow {w}x{h}x{c}")))?;
    let body = &bytes[PMAP_HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header implies {}",
            body.len(),
            count * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ProbMap::new(w, h, c, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_probmap(map: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_probmap(map)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_probmap(&bytes)
}
