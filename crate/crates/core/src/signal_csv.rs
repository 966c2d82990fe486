//! Multi-lead CSV tables: `time_s,<lead>,...`.
//!
//! A cell is either a number, the literal `nan` (an error code inside the
//! lead's span) or empty (the lead was not recorded at that time).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::LeadName;

#[derive(Clone, Debug, PartialEq)]
pub struct SignalTable {
    pub fs: f64,
    pub len: usize,
    /// `None` = empty cell, `Some(NaN)` = error code.
    pub columns: Vec<(LeadName, Vec<Option<f64>>)>,
}

impl SignalTable {
    pub fn new(fs: f64, len: usize) -> Self {
        Self {
            fs,
            len,
            columns: Vec::new(),
        }
    }

    pub fn column(&self, lead: LeadName) -> Option<&[Option<f64>]> {
        self.columns
            .iter()
            .find(|(l, _)| *l == lead)
            .map(|(_, v)| v.as_slice())
    }

    pub fn leads(&self) -> Vec<LeadName> {
        self.columns.iter().map(|(l, _)| *l).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s");
        for (lead, _) in &self.columns {
            s.push(',');
            s.push_str(lead.as_str());
        }
        s.push('\n');
        for i in 0..self.len {
            write!(s, "{:.6}", i as f64 / self.fs).unwrap();
            for (_, col) in &self.columns {
                s.push(',');
                match col[i] {
                    None => {}
                    Some(v) if v.is_nan() => s.push_str("nan"),
                    Some(v) => write!(s, "{v:.6}").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("signal csv: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut names = header.split(',');
        if names.next() != Some("time_s") {
            return Err(bad("first column must be time_s".into()));
        }
        let leads = names
            .map(|n| n.trim().parse::<LeadName>())
            .collect::<Result<Vec<_>>>()?;
        let mut times = Vec::new();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); leads.len()];
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let t: f64 = cells
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad time", ln + 2)))?;
            times.push(t);
            for col in cols.iter_mut() {
                let cell = cells
                    .next()
                    .ok_or_else(|| bad(format!("line {}: missing cells", ln + 2)))?
                    .trim();
                col.push(match cell {
                    "" => None,
                    "nan" | "NaN" => Some(f64::NAN),
                    v => Some(v.parse().map_err(|_| bad(format!("line {}: bad value {v:?}", ln + 2)))?),
                });
            }
        }
        let fs = if times.len() >= 2 {
            let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
            if !(dt > 0.0) {
                return Err(bad("time column not increasing".into()));
            }
            // Times are printed with 6 decimals; snap to a whole rate.
            (1.0 / dt).round()
        } else {
            return Err(bad("need at least two samples".into()));
        };
        Ok(Self {
            fs,
            len: times.len(),
            columns: leads.into_iter().zip(cols).collect(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
