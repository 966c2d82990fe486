//! Ground truth of a rendered page and its plain-text sidecar.
//!
//! ```text
//! layout = 3x4
//! grid_minor_px = 12.5
//! ...
//! homography = h00 h01 h02 h10 h11 h12 h20 h21 h22
//!
//! [lead_time_offsets]
//! lead,rhythm,start_s,span_s
//! [markers]
//! lead,x_px,y_px
//! [clipped]
//! lead,sample
//! ```
//!
//! Reference signals live in a separate `time_s,<lead>,...` CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::layout::LeadName;
use crate::raster::Series1D;
use crate::signal_csv::SignalTable;

#[derive(Clone, Debug, PartialEq)]
pub struct PanelOffset {
    pub lead: LeadName,
    pub rhythm: bool,
    /// Start of the printed excerpt within the recording, s.
    pub start: f64,
    pub span: f64,
}

/// Marker centroid in unwarped paper pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerTruth {
    pub lead: LeadName,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub layout: String,
    pub grid_minor_px: f64,
    pub paper_speed: f64,
    pub gain: f64,
    pub fs: f64,
    /// Output image size.
    pub width: usize,
    pub height: usize,
    pub paper_width: usize,
    pub paper_height: usize,
    pub margin_mm: f64,
    /// Output pixel → paper pixel.
    pub homography: Homography,
    pub signals: Vec<(LeadName, Series1D)>,
    pub lead_time_offsets: Vec<PanelOffset>,
    pub markers: Vec<MarkerTruth>,
    /// `(lead, sample index)` of samples drawn clamped to the paper edge.
    pub clipped: Vec<(LeadName, usize)>,
}

impl GroundTruth {
    pub fn signal(&self, lead: LeadName) -> Option<&Series1D> {
        self.signals.iter().find(|(l, _)| *l == lead).map(|(_, s)| s)
    }

    /// Full-length reference table of every lead.
    pub fn reference_table(&self) -> SignalTable {
        let len = self.signals.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
        let mut t = SignalTable::new(self.fs, len);
        for (lead, s) in &self.signals {
            let mut col: Vec<Option<f64>> = s.values.iter().map(|&v| Some(v)).collect();
            col.resize(len, None);
            t.columns.push((*lead, col));
        }
        t
    }

    pub fn sidecar_text(&self) -> String {
        let mut s = String::new();
        let h = self.homography.rows().concat();
        let hs: Vec<String> = h.iter().map(|v| format!("{v:e}")).collect();
        writeln!(s, "layout = {}", self.layout).unwrap();
        writeln!(s, "grid_minor_px = {}", self.grid_minor_px).unwrap();
        writeln!(s, "paper_speed = {}", self.paper_speed).unwrap();
        writeln!(s, "gain = {}", self.gain).unwrap();
        writeln!(s, "fs = {}", self.fs).unwrap();
        writeln!(s, "width = {}", self.width).unwrap();
        writeln!(s, "height = {}", self.height).unwrap();
        writeln!(s, "paper_width = {}", self.paper_width).unwrap();
        writeln!(s, "paper_height = {}", self.paper_height).unwrap();
        writeln!(s, "margin_mm = {}", self.margin_mm).unwrap();
        writeln!(s, "homography = {}", hs.join(" ")).unwrap();
        s.push_str("\n[lead_time_offsets]\nlead,rhythm,start_s,span_s\n");
        for p in &self.lead_time_offsets {
            writeln!(s, "{},{},{},{}", p.lead, p.rhythm as u8, p.start, p.span).unwrap();
        }
        s.push_str("\n[markers]\nlead,x_px,y_px\n");
        for m in &self.markers {
            writeln!(s, "{},{},{}", m.lead, m.x, m.y).unwrap();
        }
        s.push_str("\n[clipped]\nlead,sample\n");
        for (lead, i) in &self.clipped {
            writeln!(s, "{lead},{i}").unwrap();
        }
        s
    }

    /// Parses a sidecar; `signals` are attached from the reference CSV.
    pub fn parse_sidecar(text: &str, reference: &SignalTable) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("sidecar: {m}"));
        let mut keys = std::collections::HashMap::new();
        let mut section = String::new();
        let mut rows: std::collections::HashMap<String, Vec<Vec<String>>> = Default::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                rows.entry(section.clone()).or_default();
                continue;
            }
            if section.is_empty() {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
                keys.insert(k.trim().to_string(), v.trim().to_string());
            } else {
                rows.get_mut(&section)
                    .unwrap()
                    .push(line.split(',').map(str::to_string).collect());
            }
        }
        let get = |k: &str| keys.get(k).ok_or_else(|| bad(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| bad(format!("bad number for {k}")))
        };
        let h: Vec<f64> = get("homography")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad homography".into())))
            .collect::<Result<_>>()?;
        if h.len() != 9 {
            return Err(bad("homography needs 9 entries".into()));
        }
        let section_rows = |name: &str| rows.get(name).map(|r| &r[1..]).unwrap_or(&[]);
        let f = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad number {s:?}"))) };
        let lead_time_offsets = section_rows("lead_time_offsets")
            .iter()
            .map(|r| {
                Ok(PanelOffset {
                    lead: r[0].parse()?,
                    rhythm: r[1] == "1",
                    start: f(&r[2])?,
                    span: f(&r[3])?,
                })
            })
            .collect::<Result<_>>()?;
        let markers = section_rows("markers")
            .iter()
            .map(|r| {
                Ok(MarkerTruth {
                    lead: r[0].parse()?,
                    x: f(&r[1])?,
                    y: f(&r[2])?,
                })
            })
            .collect::<Result<_>>()?;
        let clipped = section_rows("clipped")
            .iter()
            .map(|r| Ok((r[0].parse()?, f(&r[1])? as usize)))
            .collect::<Result<_>>()?;
        let signals = reference
            .columns
            .iter()
            .map(|(l, col)| {
                let v = col.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
                Ok((*l, Series1D::new(v, reference.fs)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layout: get("layout")?.clone(),
            grid_minor_px: num("grid_minor_px")?,
            paper_speed: num("paper_speed")?,
            gain: num("gain")?,
            fs: num("fs")?,
            width: num("width")? as usize,
            height: num("height")? as usize,
            paper_width: num("paper_width")? as usize,
            paper_height: num("paper_height")? as usize,
            margin_mm: num("margin_mm")?,
            homography: Homography::from_rows([
                [h[0], h[1], h[2]],
                [h[3], h[4], h[5]],
                [h[6], h[7], h[8]],
            ]),
            signals,
            lead_time_offsets,
            markers,
            clipped,
        })
    }

    /// Writes `<stem>.truth.txt` and `<stem>.ref.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let side = dir.join(format!("{stem}.truth.txt"));
        std::fs::write(&side, self.sidecar_text()).map_err(|e| Error::io(&side, e))?;
        self.reference_table().write(dir.join(format!("{stem}.ref.csv")))
    }

    pub fn read(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let reference = SignalTable::read(dir.join(format!("{stem}.ref.csv")))?;
        let side = dir.join(format!("{stem}.truth.txt"));
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Self::parse_sidecar(&text, &reference)
    }
}
