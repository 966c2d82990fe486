//! Four-channel segmentation: a colour-model segmenter for clean inputs, or
//! ingestion of an externally computed PMAP file.

use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::raster::{read_probmap, ProbMap, RgbRaster, MAIN_CHANNELS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    #[default]
    Classical,
    External,
}

impl std::str::FromStr for SegmentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "external" => Ok(Self::External),
            _ => Err(Error::Config(format!("unknown segmentation mode {s:?}"))),
        }
    }
}

/// The `[segmentation]` config section.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub mode: SegmentationMode,
    pub paper_color: [u8; 3],
    pub grid_color: [u8; 3],
    pub text_color: [u8; 3],
    /// Colour distance from the paper–ink segment: full membership up to the
    /// first value, fading to zero at the second.
    pub grid_hue_window: [f64; 2],
    pub trace_darkness_threshold: f64,
    pub external_path: Option<PathBuf>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            mode: SegmentationMode::Classical,
            paper_color: [255, 255, 255],
            grid_color: [240, 140, 140],
            text_color: [30, 60, 200],
            grid_hue_window: [40.0, 80.0],
            trace_darkness_threshold: 0.5,
            external_path: None,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.grid_hue_window;
        if !(a >= 0.0 && b > a) {
            return Err(Error::Config(format!(
                "grid_hue_window must satisfy 0 <= full < zero, got [{a}, {b}]"
            )));
        }
        let t = self.trace_darkness_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!(
                "trace_darkness_threshold must lie in (0, 1), got {t}"
            )));
        }
        if self.mode == SegmentationMode::External && self.external_path.is_none() {
            return Err(Error::Config("external segmentation needs a PMAP path".into()));
        }
        Ok(())
    }
}

/// Membership of `p` in the mixing segment between `paper` and `ink`:
/// the mixing fraction, damped by the distance of `p` from the segment.
fn ink_membership(p: [f64; 3], paper: [f64; 3], ink: [f64; 3], window: [f64; 2]) -> f64 {
    let v = [ink[0] - paper[0], ink[1] - paper[1], ink[2] - paper[2]];
    let q = [p[0] - paper[0], p[1] - paper[1], p[2] - paper[2]];
    let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if vv <= 0.0 {
        return 0.0;
    }
    let alpha = ((q[0] * v[0] + q[1] * v[1] + q[2] * v[2]) / vv).clamp(0.0, 1.0);
    let dist = ((q[0] - alpha * v[0]).powi(2) + (q[1] - alpha * v[1]).powi(2) + (q[2] - alpha * v[2]).powi(2)).sqrt();
    let gate = ((window[1] - dist) / (window[1] - window[0])).clamp(0.0, 1.0);
    alpha * gate
}

fn classical(image: &RgbRaster, cfg: &SegmenterConfig) -> Result<ProbMap> {
    let n = image.width() * image.height();
    let f = |c: [u8; 3]| [c[0] as f64, c[1] as f64, c[2] as f64];
    let (paper, grid_c, text_c) = (f(cfg.paper_color), f(cfg.grid_color), f(cfg.text_color));
    let t = cfg.trace_darkness_threshold;
    let half_band = 2.0 * t.min(1.0 - t);
    let mut data = vec![0.0f32; n * MAIN_CHANNELS];
    let (bg, rest) = data.split_at_mut(n);
    let (grid, rest) = rest.split_at_mut(n);
    let (signal, text) = rest.split_at_mut(n);
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        let p = f([px[0], px[1], px[2]]);
        let g = ink_membership(p, paper, grid_c, cfg.grid_hue_window);
        let tx = ink_membership(p, paper, text_c, cfg.grid_hue_window);
        let luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        let dark = 1.0 - luma / 255.0;
        let s = (0.5 + (dark - t) / half_band).clamp(0.0, 1.0) * (1.0 - g) * (1.0 - tx);
        grid[i] = g as f32;
        text[i] = tx as f32;
        signal[i] = s as f32;
        bg[i] = (1.0 - g.max(s).max(tx)) as f32;
    }
    ProbMap::new(image.width(), image.height(), MAIN_CHANNELS, data)
}

/// Produces the background/grid/signal/text map for `image`.
pub fn segment(image: &RgbRaster, cfg: &SegmenterConfig) -> Result<ProbMap> {
    cfg.validate()?;
    match cfg.mode {
        SegmentationMode::Classical => classical(image, cfg),
        SegmentationMode::External => {
            let path = cfg.external_path.as_ref().expect("validated");
            let map = read_probmap(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
            if map.width() != image.width() || map.height() != image.height() {
                return Err(Error::Ingestion(format!(
                    "{}: map is {}x{}, image is {}x{}",
                    path.display(),
                    map.width(),
                    map.height(),
                    image.width(),
                    image.height()
                )));
            }
            if map.channels() < MAIN_CHANNELS {
                return Err(Error::Ingestion(format!(
                    "{}: {} channels, need {MAIN_CHANNELS}",
                    path.display(),
                    map.channels()
                )));
            }
            Ok(map)
        }
    }
}
