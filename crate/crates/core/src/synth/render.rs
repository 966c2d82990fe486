//! Rasterization of synthetic ECG paper: grid, lead markers, anti-aliased traces
//! and a final projective pull-warp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::truth::{GroundTruth, MarkerTruth, PanelOffset};
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::glyph::{Glyph, GlyphLibrary};
use crate::layout::{LayoutSpec, LeadName};
use crate::raster::{bilinear, RgbRaster, Series1D};

pub const PAPER_WHITE: [u8; 3] = [255, 255, 255];
pub const DEFAULT_GRID_COLOR: [u8; 3] = [240, 140, 140];
pub const DEFAULT_TRACE_COLOR: [u8; 3] = [20, 20, 20];
pub const DEFAULT_MARKER_COLOR: [u8; 3] = [30, 60, 200];

/// Everything that determines one rendered page.
#[derive(Clone, Debug)]
pub struct RenderSpec {
    /// Pixels per 1 mm minor cell.
    pub grid_minor_px: f64,
    /// mm/s.
    pub paper_speed: f64,
    /// mm/mV.
    pub gain: f64,
    pub layout: LayoutSpec,
    pub line_width_px: f64,
    pub trace_color: [u8; 3],
    pub grid_color: [u8; 3],
    pub marker_color: [u8; 3],
    /// Pull map from output pixels to paper pixels; the output canvas is then
    /// re-fitted to the bounding box of the warped paper.
    pub homography: Homography,
    /// Standard deviation of additive pixel noise as a fraction of full scale.
    pub noise_level: f64,
    pub rng_seed: u64,
    pub margin_mm: f64,
    pub draw_markers: bool,
    /// Panel indices whose markers are left out.
    pub omit_markers: Vec<usize>,
}

impl RenderSpec {
    pub fn new(layout: LayoutSpec, grid_minor_px: f64) -> Self {
        Self {
            grid_minor_px,
            paper_speed: 25.0,
            gain: 10.0,
            layout,
            line_width_px: (0.25 * grid_minor_px).max(1.5),
            trace_color: DEFAULT_TRACE_COLOR,
            grid_color: DEFAULT_GRID_COLOR,
            marker_color: DEFAULT_MARKER_COLOR,
            homography: Homography::identity(),
            noise_level: 0.0,
            rng_seed: 0,
            margin_mm: 10.0,
            draw_markers: true,
            omit_markers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.grid_minor_px > 2.0 && self.grid_minor_px.is_finite()) {
            return bad(format!("grid_minor_px must exceed 2, got {}", self.grid_minor_px));
        }
        if self.paper_speed != 25.0 && self.paper_speed != 50.0 {
            return bad(format!("paper speed must be 25 or 50, got {}", self.paper_speed));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if !(self.line_width_px > 0.0) || !(self.noise_level >= 0.0) || !(self.margin_mm >= 0.0) {
            return bad("line width, noise and margin must be non-negative".into());
        }
        let m = &self.homography.0;
        let det2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        if !(det2.abs() > 1e-6) || self.homography.inverse().is_err() {
            return bad("homography is not invertible".into());
        }
        if let Some(&k) = self.omit_markers.iter().find(|&&k| k >= self.layout.panels.len()) {
            return bad(format!("omitted marker {k} does not exist"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> PaperGeometry {
        PaperGeometry::new(self)
    }
}

/// Millimetre layout of the page and its pixel mapping.
#[derive(Clone, Copy, Debug)]
pub struct PaperGeometry {
    pub d: f64,
    pub margin_mm: f64,
    pub speed: f64,
    pub gain: f64,
    pub row_pitch_mm: f64,
    pub n_rows: usize,
    pub width_px: usize,
    pub height_px: usize,
}

impl PaperGeometry {
    fn new(spec: &RenderSpec) -> Self {
        let n_rows = spec.layout.n_rows();
        let w_mm = 2.0 * spec.margin_mm + spec.layout.duration * spec.paper_speed;
        let h_mm = 2.0 * spec.margin_mm + n_rows as f64 * spec.layout.row_pitch_mm;
        Self {
            d: spec.grid_minor_px,
            margin_mm: spec.margin_mm,
            speed: spec.paper_speed,
            gain: spec.gain,
            row_pitch_mm: spec.layout.row_pitch_mm,
            n_rows,
            width_px: (w_mm * spec.grid_minor_px).ceil() as usize,
            height_px: (h_mm * spec.grid_minor_px).ceil() as usize,
        }
    }

    /// Paper x in pixels at recording time `t`.
    pub fn x_px(&self, t: f64) -> f64 {
        (self.margin_mm + t * self.speed) * self.d
    }

    pub fn baseline_px(&self, row: usize) -> f64 {
        (self.margin_mm + (row as f64 + 0.5) * self.row_pitch_mm) * self.d
    }

    pub fn y_px(&self, row: usize, mv: f64) -> f64 {
        self.baseline_px(row) - mv * self.gain * self.d
    }
}

/// Per-pixel coverage planes on the unwarped paper.
#[derive(Clone, Debug)]
pub struct RenderLayers {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<f32>,
    pub trace: Vec<f32>,
    pub text: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: RgbRaster,
    pub truth: GroundTruth,
    pub layers: RenderLayers,
}

/// Box-filter coverage of the band `[c - w/2, c + w/2]` over the pixel centred at `i`.
fn band_coverage(i: f64, c: f64, w: f64) -> f64 {
    let lo = (c - w / 2.0).max(i - 0.5);
    let hi = (c + w / 2.0).min(i + 0.5);
    (hi - lo).max(0.0)
}

fn grid_profile(len: usize, d: f64) -> Vec<f32> {
    let minor_w = (0.1 * d).max(0.8);
    let mut cov = vec![0.0f32; len];
    let mut k = 0usize;
    loop {
        let c = k as f64 * d;
        if c > len as f64 + d {
            break;
        }
        let w = if k % 5 == 0 { 2.0 * minor_w } else { minor_w };
        let lo = (c - w / 2.0 - 1.0).floor().max(0.0) as usize;
        let hi = ((c + w / 2.0 + 1.0).ceil() as usize).min(len.saturating_sub(1));
        for (i, v) in cov.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v = v.max(band_coverage(i as f64, c, w) as f32);
        }
        k += 1;
    }
    cov
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

/// Accumulates the anti-aliased coverage of a polyline into `cov` (max-composited).
fn draw_polyline(cov: &mut [f32], w: usize, h: usize, pts: &[(f64, f64)], width: f64) {
    let r = width / 2.0 + 0.5;
    let mut draw = |a: (f64, f64), b: (f64, f64)| {
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((a.1.max(b.1) + r).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dist = segment_distance(x as f64, y as f64, a, b);
                let c = (r - dist).clamp(0.0, 1.0) as f32;
                let slot = &mut cov[y * w + x];
                if c > *slot {
                    *slot = c;
                }
            }
        }
    };
    match pts {
        [] => {}
        [p] => draw(*p, *p),
        _ => {
            for s in pts.windows(2) {
                draw(s[0], s[1]);
            }
        }
    }
}

struct PanelPolyline {
    points: Vec<(f64, f64)>,
}

fn lerp(a: u8, b: u8, t: f32) -> u8 {
    (a as f32 + (b as f32 - a as f32) * t).round().clamp(0.0, 255.0) as u8
}

/// Chooses the marker box top-left (paper px) for a panel, preferring spots free of ink.
fn place_marker(
    geo: &PaperGeometry,
    glyph: &Glyph,
    cell: usize,
    x_left: f64,
    row: usize,
    polylines: &[PanelPolyline],
    pen: f64,
) -> (usize, usize) {
    let bw = (glyph.width * cell) as f64;
    let bh = (glyph.height * cell) as f64;
    let pitch = geo.row_pitch_mm;
    let candidates = [7.0, -7.0, 0.5 * pitch, -0.5 * pitch];
    let pad = 0.5 * geo.d + pen / 2.0;
    let mut best = None;
    for &up_mm in &candidates {
        let cy = geo.baseline_px(row) - up_mm * geo.d;
        let top = (cy - bh / 2.0).clamp(0.0, (geo.height_px as f64 - bh).max(0.0));
        let (x0, x1) = (x_left - pad, x_left + bw + pad);
        let (y0, y1) = (top - pad, top + bh + pad);
        let hits = polylines
            .iter()
            .flat_map(|p| p.points.iter())
            .filter(|&&(x, y)| x >= x0 && x <= x1 && y >= y0 && y <= y1)
            .count();
        if best.is_none_or(|(h, _)| hits < h) {
            best = Some((hits, top));
        }
        if hits == 0 {
            break;
        }
    }
    let top = best.map(|b| b.1).unwrap_or(0.0);
    (x_left.round().max(0.0) as usize, top.round() as usize)
}

/// Renders `signals` onto paper according to `spec`. Every lead of the layout
/// must be supplied, and every supplied lead must appear in the layout.
pub fn render(spec: &RenderSpec, signals: &[(LeadName, Series1D)]) -> Result<Rendered> {
    spec.validate()?;
    let layout = &spec.layout;
    for lead in layout.leads() {
        if !signals.iter().any(|(l, _)| *l == lead) {
            return Err(Error::InvalidInput(format!("no signal for lead {lead}")));
        }
    }
    if let Some((l, _)) = signals.iter().find(|(l, _)| !layout.leads().contains(l)) {
        return Err(Error::InvalidInput(format!("layout has no position for lead {l}")));
    }
    let fs = signals[0].1.sample_rate;
    if signals.iter().any(|(_, s)| s.sample_rate != fs) {
        return Err(Error::InvalidInput("signals must share one sample rate".into()));
    }

    let geo = spec.geometry();
    let (pw, ph) = (geo.width_px, geo.height_px);
    let d = geo.d;
    let pen = spec.line_width_px;

    // Trace polylines, clipped to the paper.
    let mut polylines = Vec::new();
    let mut clipped = Vec::new();
    let mut offsets = Vec::new();
    for panel in &layout.panels {
        let series = &signals.iter().find(|(l, _)| *l == panel.lead).unwrap().1;
        let i0 = (panel.start * fs).ceil() as usize;
        let i1 = (((panel.start + panel.span) * fs).ceil() as usize).min(series.len());
        let mut points = Vec::with_capacity(i1.saturating_sub(i0));
        for i in i0..i1 {
            let v = series.values[i];
            if v.is_nan() {
                continue;
            }
            let x = geo.x_px(i as f64 / fs);
            let y = geo.y_px(panel.row, v);
            let yc = y.clamp(0.0, (ph - 1) as f64);
            if yc != y {
                clipped.push((panel.lead, i));
            }
            points.push((x, yc));
        }
        offsets.push(PanelOffset {
            lead: panel.lead,
            rhythm: panel.rhythm,
            start: panel.start,
            span: panel.span,
        });
        polylines.push(PanelPolyline { points });
    }
    clipped.sort_unstable();
    clipped.dedup();

    // Grid.
    let gx = grid_profile(pw, d);
    let gy = grid_profile(ph, d);
    let mut grid = vec![0.0f32; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            grid[y * pw + x] = gx[x].max(gy[y]);
        }
    }
    let mut paper = vec![0u8; pw * ph * 3];
    for (i, &g) in grid.iter().enumerate() {
        for c in 0..3 {
            paper[3 * i + c] = lerp(PAPER_WHITE[c], spec.grid_color[c], g);
        }
    }

    // Lead markers.
    let mut text = vec![false; pw * ph];
    let mut markers = Vec::new();
    if spec.draw_markers {
        let library = GlyphLibrary::standard();
        let cell = ((0.35 * d).round() as usize).max(3);
        for (k, panel) in layout.panels.iter().enumerate() {
            if spec.omit_markers.contains(&k) {
                continue;
            }
            let glyph = library.get(panel.lead).expect("glyph for every lead");
            let x_left = geo.x_px(panel.start) + d;
            let (ox, oy) = place_marker(&geo, glyph, cell, x_left, panel.row, &polylines, pen);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            for gy_ in 0..glyph.height {
                for gx_ in 0..glyph.width {
                    if !glyph.get(gx_, gy_) {
                        continue;
                    }
                    for dy in 0..cell {
                        for dx in 0..cell {
                            let (x, y) = (ox + gx_ * cell + dx, oy + gy_ * cell + dy);
                            if x >= pw || y >= ph {
                                continue;
                            }
                            let i = y * pw + x;
                            text[i] = true;
                            paper[3 * i..3 * i + 3].copy_from_slice(&spec.marker_color);
                            sx += x as f64;
                            sy += y as f64;
                            n += 1;
                        }
                    }
                }
            }
            if n > 0 {
                markers.push(MarkerTruth {
                    lead: panel.lead,
                    x: sx / n as f64,
                    y: sy / n as f64,
                });
            }
        }
    }

    // Traces on top.
    let mut trace = vec![0.0f32; pw * ph];
    for p in &polylines {
        draw_polyline(&mut trace, pw, ph, &p.points, pen);
    }
    for (i, &t) in trace.iter().enumerate() {
        if t > 0.0 {
            for c in 0..3 {
                paper[3 * i + c] = lerp(paper[3 * i + c], spec.trace_color[c], t);
            }
        }
    }

    // Warp.
    let (image, homography) = if spec.homography.is_identity(1e-12) {
        (RgbRaster::new(pw, ph, paper)?, Homography::identity())
    } else {
        warp(&paper, pw, ph, &spec.homography)?
    };

    let mut image = image;
    if spec.noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, spec.noise_level * 255.0)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in image.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }

    let mut truth_signals: Vec<(LeadName, Series1D)> = signals.to_vec();
    truth_signals.sort_by_key(|(l, _)| l.index());
    let truth = GroundTruth {
        layout: layout.name.clone(),
        grid_minor_px: d,
        paper_speed: spec.paper_speed,
        gain: spec.gain,
        fs,
        width: image.width(),
        height: image.height(),
        paper_width: pw,
        paper_height: ph,
        margin_mm: spec.margin_mm,
        homography,
        signals: truth_signals,
        lead_time_offsets: offsets,
        markers,
        clipped,
    };
    Ok(Rendered {
        image,
        truth,
        layers: RenderLayers {
            width: pw,
            height: ph,
            grid,
            trace,
            text,
        },
    })
}

/// Pull-warps the paper raster; returns the image and the effective
/// output-to-paper homography including the canvas translation.
fn warp(paper: &[u8], pw: usize, ph: usize, pull: &Homography) -> Result<(RgbRaster, Homography)> {
    let push = pull.inverse()?;
    let corners = [
        (-0.5, -0.5),
        (pw as f64 - 0.5, -0.5),
        (pw as f64 - 0.5, ph as f64 - 0.5),
        (-0.5, ph as f64 - 0.5),
    ];
    let mapped: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(x, y)| push.apply(x, y))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidInput("paper corner maps to infinity".into()))?;
    let min_x = mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_y = mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_x = mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_y = mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let ow = (max_x - min_x).ceil() as usize;
    let oh = (max_y - min_y).ceil() as usize;
    if ow == 0 || oh == 0 || ow * oh > 16 * pw * ph {
        return Err(Error::InvalidInput("warped canvas is degenerate".into()));
    }
    let h = pull.then_after(&Homography::translation(min_x + 0.5, min_y + 0.5));
    let mut out = vec![0u8; ow * oh * 3];
    for v in 0..oh {
        for u in 0..ow {
            let o = 3 * (v * ow + u);
            match h.apply(u as f64, v as f64) {
                Some((x, y)) => {
                    for c in 0..3 {
                        let s = bilinear(pw, ph, x, y, |xi, yi| paper[3 * (yi * pw + xi) + c] as f64);
                        out[o + c] = s.map_or(PAPER_WHITE[c], |s| s.round().clamp(0.0, 255.0) as u8);
                    }
                }
                None => out[o..o + 3].copy_from_slice(&PAPER_WHITE),
            }
        }
    }
    Ok((RgbRaster::new(ow, oh, out)?, h))
}
