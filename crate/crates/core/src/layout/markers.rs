//! Lead-marker detection on the text channel by glyph-box correlation.

use super::LeadMarker;
use crate::glyph::{Glyph, GlyphLibrary};
use crate::label::components_8;
use crate::raster::Plane;

#[derive(Clone, Debug)]
pub struct MarkerDetector {
    /// Text probability treated as foreground.
    pub threshold: f32,
    /// Minimum normalized correlation for a region to be accepted.
    pub min_score: f64,
    /// Relative aspect-ratio tolerance when comparing a region to a glyph.
    pub aspect_tolerance: f64,
    pub min_pixels: usize,
}

impl Default for MarkerDetector {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_score: 0.7,
            aspect_tolerance: 0.15,
            min_pixels: 20,
        }
    }
}

/// Average text probability over the region bbox resampled onto the glyph's cell grid.
fn resample(plane: &Plane<'_>, bbox: (usize, usize, usize, usize), glyph: &Glyph) -> Vec<f64> {
    let (x0, y0, x1, y1) = bbox;
    let bw = (x1 - x0 + 1) as f64;
    let bh = (y1 - y0 + 1) as f64;
    let mut sum = vec![0.0; glyph.width * glyph.height];
    let mut cnt = vec![0usize; glyph.width * glyph.height];
    for y in y0..=y1 {
        let cy = (((y - y0) as f64 + 0.5) / bh * glyph.height as f64) as usize;
        let cy = cy.min(glyph.height - 1);
        for x in x0..=x1 {
            let cx = (((x - x0) as f64 + 0.5) / bw * glyph.width as f64) as usize;
            let cx = cx.min(glyph.width - 1);
            sum[cy * glyph.width + cx] += plane.get(x, y) as f64;
            cnt[cy * glyph.width + cx] += 1;
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

fn correlation(a: &[f64], glyph: &Glyph) -> f64 {
    let n = a.len() as f64;
    let b: Vec<f64> = glyph.cells.iter().map(|&c| c as u8 as f64).collect();
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

type BBox = (usize, usize, usize, usize);

fn bbox(w: usize, pixels: &[usize]) -> BBox {
    pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(x0, y0, x1, y1), &i| {
        let (x, y) = (i % w, i / w);
        (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
    })
}

/// Merges every component lying inside another component's bounding box into
/// the smallest such enclosing component, so a framed label forms one region.
fn framed_regions(w: usize, comps: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let boxes: Vec<BBox> = comps.iter().map(|c| bbox(w, c)).collect();
    let area = |b: &BBox| (b.2 - b.0 + 1) * (b.3 - b.1 + 1);
    let inside = |a: &BBox, b: &BBox| a.0 > b.0 && a.1 > b.1 && a.2 < b.2 && a.3 < b.3;
    let parent: Vec<Option<usize>> = (0..comps.len())
        .map(|i| {
            (0..comps.len())
                .filter(|&j| j != i && inside(&boxes[i], &boxes[j]))
                .min_by_key(|&j| (area(&boxes[j]), j))
        })
        .collect();
    let root = |mut i: usize| {
        while let Some(p) = parent[i] {
            i = p;
        }
        i
    };
    let mut merged: Vec<Vec<usize>> = vec![Vec::new(); comps.len()];
    for (i, c) in comps.into_iter().enumerate() {
        merged[root(i)].extend(c);
    }
    merged
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

impl MarkerDetector {
    pub fn detect(&self, text: &Plane<'_>, library: &GlyphLibrary) -> Vec<LeadMarker> {
        let (w, h) = (text.width, text.height);
        let mask: Vec<bool> = text.data.iter().map(|&p| p >= self.threshold).collect();
        let mut out = Vec::new();
        for region in framed_regions(w, components_8(w, h, &mask)) {
            if region.len() < self.min_pixels {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let (mut sx, mut sy, mut sp) = (0.0, 0.0, 0.0);
            for &i in &region {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
                let p = text.data[i] as f64;
                sx += p * x as f64;
                sy += p * y as f64;
                sp += p;
            }
            let aspect = (x1 - x0 + 1) as f64 / (y1 - y0 + 1) as f64;
            let mut best: Option<(f64, &Glyph)> = None;
            for glyph in &library.glyphs {
                if (aspect / glyph.aspect() - 1.0).abs() > self.aspect_tolerance {
                    continue;
                }
                if x1 - x0 + 1 < glyph.width || y1 - y0 + 1 < glyph.height {
                    continue;
                }
                let score = correlation(&resample(text, (x0, y0, x1, y1), glyph), glyph);
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, glyph));
                }
            }
            let Some((score, glyph)) = best else { continue };
            if score < self.min_score {
                continue;
            }
            out.push(LeadMarker {
                name: glyph.lead,
                x: ((sx / sp + 0.5) / w as f64).clamp(0.0, 1.0),
                y: ((sy / sp + 0.5) / h as f64).clamp(0.0, 1.0),
                confidence: score.clamp(0.0, 1.0),
            });
        }
        out
    }
}

/// Detects lead markers with the default detector settings.
pub fn markers_from_text_channel(text: &Plane<'_>, library: &GlyphLibrary) -> Vec<LeadMarker> {
    MarkerDetector::default().detect(text, library)
}
