//! Layout configuration files.
//!
//! ```toml
//! [[layout]]
//! name = "6x2"
//! duration_s = 10.0
//! row_pitch_mm = 22.0
//! rows = [["I", "V1"], ["II", "V2"]]
//! rhythm_rows = []            # optional
//! markers = [[0.0, 0.25], ...] # optional, one per panel in row-major order
//! ```

use std::path::Path;

use serde::Deserialize;

use super::{LayoutSpec, LeadName};
use crate::error::{Error, Result};

/// The layouts shipped with the crate, in the file format accepted by `--layouts`.
pub const LAYOUTS_TOML: &str = r#"
[[layout]]
name = "3x4"
duration_s = 10.0
row_pitch_mm = 25.0
rows = [
    ["I", "aVR", "V1", "V4"],
    ["II", "aVL", "V2", "V5"],
    ["III", "aVF", "V3", "V6"],
    ["II"],
]
rhythm_rows = [3]

[[layout]]
name = "6x2"
duration_s = 10.0
row_pitch_mm = 22.0
rows = [["I", "V1"], ["II", "V2"], ["III", "V3"], ["aVR", "V4"], ["aVL", "V5"], ["aVF", "V6"]]

[[layout]]
name = "12x1"
duration_s = 10.0
row_pitch_mm = 21.0
rows = [["I"], ["II"], ["III"], ["aVR"], ["aVL"], ["aVF"], ["V1"], ["V2"], ["V3"], ["V4"], ["V5"], ["V6"]]

[[layout]]
name = "ahus-limb"
duration_s = 5.0
row_pitch_mm = 25.0
rows = [["I"], ["II"], ["III"], ["aVR"], ["aVL"], ["aVF"]]

[[layout]]
name = "ahus-precordial"
duration_s = 5.0
row_pitch_mm = 25.0
rows = [["V1"], ["V2"], ["V3"], ["V4"], ["V5"], ["V6"]]
"#;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    layout: Vec<LayoutEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutEntry {
    name: String,
    duration_s: f64,
    row_pitch_mm: f64,
    rows: Vec<Vec<String>>,
    #[serde(default)]
    rhythm_rows: Vec<usize>,
    markers: Option<Vec<[f64; 2]>>,
}

impl LayoutEntry {
    fn into_spec(self) -> Result<LayoutSpec> {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|s| s.parse::<LeadName>()).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let spec = LayoutSpec::from_rows(
            self.name,
            self.duration_s,
            self.row_pitch_mm,
            &rows,
            &self.rhythm_rows,
        )?;
        match self.markers {
            Some(m) => spec.with_marker_positions(m.into_iter().map(|[x, y]| (x, y)).collect()),
            None => Ok(spec),
        }
    }
}

pub fn parse_layouts(text: &str) -> Result<Vec<LayoutSpec>> {
    let file: LayoutFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("layout file: {e}")))?;
    let specs = file
        .layout
        .into_iter()
        .map(LayoutEntry::into_spec)
        .collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::Config("layout file defines no layouts".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if specs[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::Config(format!("duplicate layout name {}", s.name)));
        }
    }
    Ok(specs)
}

pub fn read_layouts(path: impl AsRef<Path>) -> Result<Vec<LayoutSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layouts(&text)
}

pub fn shipped_layouts() -> Vec<LayoutSpec> {
    parse_layouts(LAYOUTS_TOML).expect("shipped layouts are valid")
}

/// Names of the layouts matched by default. The single-panel 5 s layouts
/// cover a subset of the leads of `6x2`, so a page carrying all twelve
/// markers would match them as well as `6x2`; they are opt-in.
pub const DEFAULT_LAYOUTS: [&str; 3] = ["3x4", "6x2", "12x1"];

pub fn default_layouts() -> Vec<LayoutSpec> {
    shipped_layouts()
        .into_iter()
        .filter(|l| DEFAULT_LAYOUTS.contains(&l.name.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_layouts_parse() {
        let l = shipped_layouts();
        let names: Vec<_> = l.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["3x4", "6x2", "12x1", "ahus-limb", "ahus-precordial"]);
        let l34 = &l[0];
        assert_eq!(l34.n_rows(), 4);
        assert_eq!(l34.rhythm_leads(), vec![LeadName::II]);
        assert_eq!(l34.leads().len(), 12);
        let v4 = l34.panels.iter().find(|p| p.lead == LeadName::V4).unwrap();
        assert_eq!((v4.start, v4.span), (7.5, 2.5));
    }

    #[test]
    fn rejects_repeated_lead_in_same_role() {
        let text = r#"
[[layout]]
name = "bad"
duration_s = 10.0
row_pitch_mm = 20.0
rows = [["I", "I"]]
"#;
        assert!(matches!(parse_layouts(text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_markers_outside_unit_square() {
        let text = r#"
[[layout]]
name = "bad"
duration_s = 10.0
row_pitch_mm = 20.0
rows = [["I"], ["II"]]
markers = [[0.0, 0.2], [1.5, 0.7]]
"#;
        assert!(parse_layouts(text).is_err());
    }

    #[test]
    fn rejects_unknown_lead() {
        let text = r#"
[[layout]]
name = "bad"
duration_s = 10.0
row_pitch_mm = 20.0
rows = [["V9"]]
"#;
        assert!(parse_layouts(text).is_err());
    }
}
