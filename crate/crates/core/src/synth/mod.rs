//! Synthetic paper-ECG pages with known ground truth.

mod render;
mod signals;
mod truth;

pub use render::{
    render, PaperGeometry, RenderLayers, RenderSpec, Rendered, DEFAULT_GRID_COLOR,
    DEFAULT_MARKER_COLOR, DEFAULT_TRACE_COLOR, PAPER_WHITE,
};
pub use signals::{synthesize_signals, MAX_AMPLITUDE_MV};
pub use truth::{GroundTruth, MarkerTruth, PanelOffset};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::layout::{LayoutSpec, LeadName};
use crate::raster::Series1D;

/// Randomization ranges for a batch of synthetic pages (the `synthesize` spec file).
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    pub layouts: Vec<String>,
    /// Minor grid spacing range, px/mm.
    pub d_range: [f64; 2],
    pub paper_speed: f64,
    pub gain: f64,
    pub fs: f64,
    /// Maximum absolute rotation, degrees.
    pub max_rotation_deg: f64,
    /// Maximum corner displacement as a fraction of the paper width.
    pub max_corner_shift: f64,
    pub noise_level: f64,
    /// Pen width range, mm.
    pub line_width_mm: [f64; 2],
    pub draw_markers: bool,
    /// Up to this many markers are deleted per page.
    pub max_deleted_markers: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layouts: vec!["3x4".into(), "6x2".into(), "12x1".into()],
            d_range: [8.0, 20.0],
            paper_speed: 25.0,
            gain: 10.0,
            fs: 500.0,
            max_rotation_deg: 0.0,
            max_corner_shift: 0.0,
            noise_level: 0.0,
            line_width_mm: [0.2, 0.35],
            draw_markers: true,
            max_deleted_markers: 0,
        }
    }
}

/// One page's full description: what to draw and the signals to draw.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: RenderSpec,
    pub signals: Vec<(LeadName, Series1D)>,
}

impl Scene {
    pub fn render(&self) -> Result<Rendered> {
        render(&self.spec, &self.signals)
    }
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene spec: {m}")));
        if self.layouts.is_empty() {
            return bad("no layouts");
        }
        if !(self.d_range[0] > 2.0 && self.d_range[1] >= self.d_range[0]) {
            return bad("d_range must satisfy 2 < min <= max");
        }
        if self.paper_speed != 25.0 && self.paper_speed != 50.0 {
            return bad("paper_speed must be 25 or 50");
        }
        if !(self.gain > 0.0) || !(self.fs >= 100.0) {
            return bad("gain must be positive and fs at least 100");
        }
        if !(0.0..=45.0).contains(&self.max_rotation_deg) || !(0.0..0.2).contains(&self.max_corner_shift) {
            return bad("rotation must be in [0, 45] degrees and corner shift below 0.2");
        }
        if !(self.line_width_mm[0] > 0.0 && self.line_width_mm[1] >= self.line_width_mm[0]) {
            return bad("line_width_mm must be positive and ordered");
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be non-negative");
        }
        Ok(())
    }

    /// Draws page `index` of the batch; a pure function of `(self, index)`.
    pub fn scene(&self, index: u64, layouts: &[LayoutSpec]) -> Result<Scene> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)),
        );
        let name = &self.layouts[rng.random_range(0..self.layouts.len())];
        let layout = layouts
            .iter()
            .find(|l| &l.name == name)
            .ok_or_else(|| Error::Config(format!("scene spec: unknown layout {name}")))?
            .clone();
        let d = if self.d_range[1] > self.d_range[0] {
            rng.random_range(self.d_range[0]..self.d_range[1])
        } else {
            self.d_range[0]
        };
        let mut spec = RenderSpec::new(layout.clone(), d);
        spec.paper_speed = self.paper_speed;
        spec.gain = self.gain;
        let lw = if self.line_width_mm[1] > self.line_width_mm[0] {
            rng.random_range(self.line_width_mm[0]..self.line_width_mm[1])
        } else {
            self.line_width_mm[0]
        };
        spec.line_width_px = (lw * d).max(1.5);
        spec.noise_level = self.noise_level;
        spec.rng_seed = rng.random();
        spec.draw_markers = self.draw_markers;
        if self.max_deleted_markers > 0 {
            let k = rng.random_range(0..=self.max_deleted_markers.min(layout.panels.len()));
            let mut idx: Vec<usize> = (0..layout.panels.len()).collect();
            idx.shuffle(&mut rng);
            spec.omit_markers = idx[..k].to_vec();
            spec.omit_markers.sort_unstable();
        }
        if self.max_rotation_deg > 0.0 || self.max_corner_shift > 0.0 {
            let geo = spec.geometry();
            spec.homography = random_pull_warp(
                &mut rng,
                geo.width_px as f64,
                geo.height_px as f64,
                self.max_rotation_deg.to_radians(),
                self.max_corner_shift,
            )?;
        }
        let leads = layout.leads();
        let all = synthesize_signals(rng.random(), 12, layout.duration, self.fs)?;
        let signals = LeadName::ALL
            .iter()
            .copied()
            .zip(all)
            .filter(|(l, _)| leads.contains(l))
            .collect();
        Ok(Scene { spec, signals })
    }
}

/// A paper→photo map made of a rotation about the page centre followed by
/// independent corner displacements; returned as its inverse (photo→paper pull).
pub fn random_pull_warp(
    rng: &mut impl Rng,
    width: f64,
    height: f64,
    max_rotation: f64,
    max_corner_shift: f64,
) -> Result<Homography> {
    let angle = if max_rotation > 0.0 {
        rng.random_range(-max_rotation..=max_rotation)
    } else {
        0.0
    };
    let rot = Homography::rotation_about(width / 2.0, height / 2.0, angle);
    let corners = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)];
    let src = corners.map(|(x, y)| rot.apply(x, y).expect("affine"));
    let lim = max_corner_shift * width;
    let dst = src.map(|(x, y)| {
        if lim > 0.0 {
            (x + rng.random_range(-lim..=lim), y + rng.random_range(-lim..=lim))
        } else {
            (x, y)
        }
    });
    let tilt = Homography::from_correspondences(&src, &dst)?;
    tilt.then_after(&rot).inverse()
}
