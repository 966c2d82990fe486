//! Lead arrangements and layout identification from detected lead markers.

mod config;
mod markers;

pub use config::{default_layouts, parse_layouts, read_layouts, shipped_layouts, DEFAULT_LAYOUTS, LAYOUTS_TOML};
pub use markers::{markers_from_text_channel, MarkerDetector};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Cost charged per template slot without a matching marker.
pub const MISSING_MARKER_COST: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeadName {
    I,
    II,
    III,
    AVR,
    AVL,
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl LeadName {
    /// Canonical ordering used for outputs.
    pub const ALL: [LeadName; 12] = [
        LeadName::I,
        LeadName::II,
        LeadName::III,
        LeadName::AVR,
        LeadName::AVL,
        LeadName::AVF,
        LeadName::V1,
        LeadName::V2,
        LeadName::V3,
        LeadName::V4,
        LeadName::V5,
        LeadName::V6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LeadName::I => "I",
            LeadName::II => "II",
            LeadName::III => "III",
            LeadName::AVR => "aVR",
            LeadName::AVL => "aVL",
            LeadName::AVF => "aVF",
            LeadName::V1 => "V1",
            LeadName::V2 => "V2",
            LeadName::V3 => "V3",
            LeadName::V4 => "V4",
            LeadName::V5 => "V5",
            LeadName::V6 => "V6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LeadName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LeadName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LeadName::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown lead name {s:?}")))
    }
}

/// A detected lead label. Coordinates are normalized to the dewarped image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeadMarker {
    pub name: LeadName,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl LeadMarker {
    pub fn new(name: LeadName, x: f64, y: f64, confidence: f64) -> Result<Self> {
        let unit = 0.0..=1.0;
        if !unit.contains(&x) || !unit.contains(&y) || !unit.contains(&confidence) {
            return Err(Error::InvalidInput(format!(
                "marker {name} at ({x}, {y}) conf {confidence} outside unit range"
            )));
        }
        Ok(Self {
            name,
            x,
            y,
            confidence,
        })
    }
}

/// One printed strip: a lead shown in a given row and column for a time span.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub lead: LeadName,
    pub row: usize,
    pub col: usize,
    /// Seconds from the start of the recording.
    pub start: f64,
    pub span: f64,
    pub rhythm: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutSpec {
    pub name: String,
    /// Total recording length shown on the page, seconds.
    pub duration: f64,
    /// Vertical distance between neighbouring row baselines, used when rendering.
    pub row_pitch_mm: f64,
    pub panels: Vec<Panel>,
    /// Template marker position per panel, normalized to `[0, 1]²`.
    pub marker_positions: Vec<(f64, f64)>,
}

impl LayoutSpec {
    /// Builds a layout from rows of leads; each row splits `duration` evenly
    /// between its leads. Rows listed in `rhythm_rows` are rhythm strips.
    pub fn from_rows(
        name: impl Into<String>,
        duration: f64,
        row_pitch_mm: f64,
        rows: &[Vec<LeadName>],
        rhythm_rows: &[usize],
    ) -> Result<Self> {
        let name = name.into();
        if !(duration > 0.0) || !(row_pitch_mm > 0.0) {
            return Err(Error::Config(format!(
                "layout {name}: duration and row pitch must be positive"
            )));
        }
        if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
            return Err(Error::Config(format!("layout {name}: empty row")));
        }
        if let Some(&r) = rhythm_rows.iter().find(|&&r| r >= rows.len()) {
            return Err(Error::Config(format!(
                "layout {name}: rhythm row {r} out of range"
            )));
        }
        let mut panels = Vec::new();
        for (row, leads) in rows.iter().enumerate() {
            let span = duration / leads.len() as f64;
            for (col, &lead) in leads.iter().enumerate() {
                panels.push(Panel {
                    lead,
                    row,
                    col,
                    start: col as f64 * span,
                    span,
                    rhythm: rhythm_rows.contains(&row),
                });
            }
        }
        let n_rows = rows.len() as f64;
        let marker_positions = panels
            .iter()
            .map(|p| (p.start / duration, (p.row as f64 + 0.5) / n_rows))
            .collect();
        let spec = Self {
            name,
            duration,
            row_pitch_mm,
            panels,
            marker_positions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_marker_positions(mut self, positions: Vec<(f64, f64)>) -> Result<Self> {
        self.marker_positions = positions;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let name = &self.name;
        if self.marker_positions.len() != self.panels.len() {
            return Err(Error::Config(format!(
                "layout {name}: {} marker positions for {} panels",
                self.marker_positions.len(),
                self.panels.len()
            )));
        }
        if self
            .marker_positions
            .iter()
            .any(|&(x, y)| !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y))
        {
            return Err(Error::Config(format!(
                "layout {name}: marker position outside unit square"
            )));
        }
        for (i, a) in self.panels.iter().enumerate() {
            if self.panels[..i]
                .iter()
                .any(|b| b.lead == a.lead && b.rhythm == a.rhythm)
            {
                return Err(Error::Config(format!(
                    "layout {name}: lead {} repeated in the same role",
                    a.lead
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.panels.iter().map(|p| p.row + 1).max().unwrap_or(0)
    }

    pub fn rhythm_leads(&self) -> Vec<LeadName> {
        self.panels
            .iter()
            .filter(|p| p.rhythm)
            .map(|p| p.lead)
            .collect()
    }

    /// Distinct leads in canonical order.
    pub fn leads(&self) -> Vec<LeadName> {
        LeadName::ALL
            .iter()
            .copied()
            .filter(|l| self.panels.iter().any(|p| p.lead == *l))
            .collect()
    }

    pub fn row_panels(&self, row: usize) -> impl Iterator<Item = &Panel> {
        self.panels.iter().filter(move |p| p.row == row)
    }
}

/// Per-axis scale and translation taking marker coordinates onto template coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisTransform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AxisTransform {
    pub const IDENTITY: AxisTransform = AxisTransform {
        scale_x: 1.0,
        scale_y: 1.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.scale_x * x + self.shift_x,
            self.scale_y * y + self.shift_y,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub layout: LayoutSpec,
    pub cost: f64,
    /// `(marker index, panel index)` pairs.
    pub matched: Vec<(usize, usize)>,
    /// Panel indices without a marker.
    pub missing: Vec<usize>,
    pub transform: AxisTransform,
}

fn fit_axis(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mp = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mg = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - mp).powi(2)).sum::<f64>();
    let cov = pairs.iter().map(|p| (p.0 - mp) * (p.1 - mg)).sum::<f64>();
    let scale = if var > 1e-12 && cov / var > 1e-6 {
        cov / var
    } else {
        1.0
    };
    (scale, mg - scale * mp)
}

/// Least-squares anisotropic scale plus translation, solved independently per axis.
/// An axis with no spread (or a non-positive fitted scale) falls back to pure translation.
pub fn estimate_transform(pairs: &[((f64, f64), (f64, f64))]) -> AxisTransform {
    if pairs.is_empty() {
        return AxisTransform::IDENTITY;
    }
    let xs: Vec<_> = pairs.iter().map(|(p, g)| (p.0, g.0)).collect();
    let ys: Vec<_> = pairs.iter().map(|(p, g)| (p.1, g.1)).collect();
    let (scale_x, shift_x) = fit_axis(&xs);
    let (scale_y, shift_y) = fit_axis(&ys);
    AxisTransform {
        scale_x,
        scale_y,
        shift_x,
        shift_y,
    }
}

fn pair_markers(markers: &[LeadMarker], layout: &LayoutSpec) -> Vec<(usize, usize)> {
    let slots = &layout.marker_positions;
    let mut pairs = Vec::new();
    let mut ambiguous = Vec::new();
    for lead in LeadName::ALL {
        let ms: Vec<usize> = (0..markers.len())
            .filter(|&i| markers[i].name == lead)
            .collect();
        let ss: Vec<usize> = (0..layout.panels.len())
            .filter(|&k| layout.panels[k].lead == lead)
            .collect();
        match (ms.len(), ss.len()) {
            (0, _) | (_, 0) => {}
            (1, 1) => pairs.push((ms[0], ss[0])),
            _ => ambiguous.push((ms, ss)),
        }
    }
    if ambiguous.is_empty() {
        return pairs;
    }
    let provisional = estimate_transform(
        &pairs
            .iter()
            .map(|&(m, k)| ((markers[m].x, markers[m].y), slots[k]))
            .collect::<Vec<_>>(),
    );
    for (ms, ss) in ambiguous {
        let mut cands = Vec::new();
        for &m in &ms {
            let (px, py) = provisional.apply(markers[m].x, markers[m].y);
            for &k in &ss {
                let d = (px - slots[k].0).hypot(py - slots[k].1);
                cands.push((d, layout.panels[k].row, k, m));
            }
        }
        cands.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut used_m = Vec::new();
        let mut used_k = Vec::new();
        for (_, _, k, m) in cands {
            if !used_m.contains(&m) && !used_k.contains(&k) {
                used_m.push(m);
                used_k.push(k);
                pairs.push((m, k));
            }
        }
    }
    pairs.sort_unstable_by_key(|&(m, k)| (k, m));
    pairs
}

/// Scores one candidate layout against the detected markers.
pub fn score_layout(markers: &[LeadMarker], layout: &LayoutSpec) -> MatchResult {
    let matched = pair_markers(markers, layout);
    let slots = &layout.marker_positions;
    let transform = estimate_transform(
        &matched
            .iter()
            .map(|&(m, k)| ((markers[m].x, markers[m].y), slots[k]))
            .collect::<Vec<_>>(),
    );
    let missing: Vec<usize> = (0..layout.panels.len())
        .filter(|k| !matched.iter().any(|&(_, mk)| mk == *k))
        .collect();
    let residual: f64 = matched
        .iter()
        .map(|&(m, k)| {
            let (x, y) = transform.apply(markers[m].x, markers[m].y);
            (x - slots[k].0).hypot(y - slots[k].1)
        })
        .sum();
    let cost =
        (MISSING_MARKER_COST * missing.len() as f64 + residual) / layout.panels.len() as f64;
    MatchResult {
        layout: layout.clone(),
        cost,
        matched,
        missing,
        transform,
    }
}

/// Picks the candidate layout with the lowest matching cost; exact ties keep
/// the earlier declaration.
pub fn match_layout(markers: &[LeadMarker], layouts: &[LayoutSpec]) -> Result<MatchResult> {
    if markers.len() < 2 {
        return Err(Error::Layout(format!(
            "need at least 2 lead markers, found {}",
            markers.len()
        )));
    }
    if layouts.is_empty() {
        return Err(Error::Layout("no candidate layouts".into()));
    }
    let mut best: Option<MatchResult> = None;
    for layout in layouts {
        let result = score_layout(markers, layout);
        log::debug!("layout {} cost {:.4}", layout.name, result.cost);
        if best.as_ref().is_none_or(|b| result.cost < b.cost) {
            best = Some(result);
        }
    }
    Ok(best.expect("non-empty candidate list"))
}
