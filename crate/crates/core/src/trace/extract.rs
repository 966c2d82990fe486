//! Per-column reduction of chains into lead traces and calibration to millivolts.

use super::chain::Chain;
use super::components::Component;
use crate::error::{Error, Result};
use crate::grid_scale::GridSpacing;
use crate::layout::{LayoutSpec, LeadName};
use crate::raster::Series1D;
use crate::signal_csv::SignalTable;

/// Rows per column above which a column counts as steep when fitting the pen radius.
const STEEP_SLOPE: f64 = 3.0;
const MIN_STEEP_COLUMNS: usize = 50;

/// Longest gap, in output samples, bridged by interpolation.
pub const MAX_BRIDGED_SAMPLES: f64 = 2.0;

/// Pixel trace of one panel.
#[derive(Clone, Debug, PartialEq)]
pub struct LeadTrace {
    pub lead: LeadName,
    pub rhythm: bool,
    pub start_s: f64,
    pub span_s: f64,
    /// Column of `y_px[0]`.
    pub first_col: usize,
    /// Fractional column at which recording time 0 falls.
    pub x_origin: f64,
    /// Row per column, `NaN` where the chain has no pixels.
    pub y_px: Vec<f64>,
    /// Columns whose stroke touches the top or bottom image edge.
    pub clipped: Vec<bool>,
    pub baseline_y: f64,
}

/// Accumulated `Σp`, `Σp·y`, extreme rows and edge contact per column.
#[derive(Clone, Debug)]
pub struct ColumnSums {
    pub weight: Vec<f64>,
    pub moment: Vec<f64>,
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
    pub edge: Vec<bool>,
}

impl ColumnSums {
    pub fn new(width: usize) -> Self {
        Self {
            weight: vec![0.0; width],
            moment: vec![0.0; width],
            top: vec![usize::MAX; width],
            bottom: vec![0; width],
            edge: vec![false; width],
        }
    }

    pub fn add(&mut self, c: &Component, height: usize) {
        for &(x, y, p) in &c.pixels {
            let p = (p as f64).max(1e-6);
            self.weight[x] += p;
            self.moment[x] += p * y as f64;
            self.top[x] = self.top[x].min(y);
            self.bottom[x] = self.bottom[x].max(y);
            if y == 0 || y + 1 == height {
                self.edge[x] = true;
            }
        }
    }

    /// Leftmost occupied column.
    pub fn first(&self) -> Option<usize> {
        self.weight.iter().position(|&w| w > 0.0)
    }

    pub fn y(&self, x: usize) -> f64 {
        if self.weight[x] > 0.0 {
            self.moment[x] / self.weight[x]
        } else {
            f64::NAN
        }
    }
}

/// Bounds on the pen centre in every column, from the upper and lower ink
/// edges of a stroke drawn with a round pen of radius `r`:
/// `(from_top, from_bottom)`. The upper bound is exact at peaks and on
/// straight stretches, the lower one at troughs and on straight stretches.
pub fn edge_bounds(sums: &ColumnSums, r: f64) -> (Vec<f64>, Vec<f64>) {
    let n = sums.weight.len();
    let reach = r.max(0.0).floor() as usize;
    let mut from_top = vec![f64::NAN; n];
    let mut from_bottom = vec![f64::NAN; n];
    for x in 0..n {
        if sums.weight[x] <= 0.0 {
            continue;
        }
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for u in x.saturating_sub(reach)..=(x + reach).min(n - 1) {
            if sums.weight[u] <= 0.0 {
                continue;
            }
            let dx = u.abs_diff(x) as f64;
            let h = (r * r - dx * dx).max(0.0).sqrt();
            a = a.max(sums.top[u] as f64 - 0.5 + h);
            b = b.min(sums.bottom[u] as f64 + 0.5 - h);
        }
        from_top[x] = a;
        from_bottom[x] = b;
    }
    (from_top, from_bottom)
}

/// Pen radius that makes the two edge bounds agree best (median absolute
/// disagreement), searched in 0.05 px steps up to the given stroke width.
/// Steep columns are used when there are enough of them: there the
/// disagreement grows with the slope, which pins the radius down.
pub fn fit_pen_radius(rows: &[ColumnSums], stroke_px: f64) -> f64 {
    let hi = stroke_px.max(1.0);
    let steep: Vec<Vec<bool>> = rows
        .iter()
        .map(|s| {
            let n = s.weight.len();
            let mid = |x: usize| 0.5 * (s.top[x] as f64 + s.bottom[x] as f64);
            (0..n)
                .map(|x| {
                    x > 0
                        && x + 1 < n
                        && s.weight[x - 1] > 0.0
                        && s.weight[x] > 0.0
                        && s.weight[x + 1] > 0.0
                        && (mid(x + 1) - mid(x - 1)).abs() > 2.0 * STEEP_SLOPE
                })
                .collect()
        })
        .collect();
    let use_steep = steep.iter().flatten().filter(|&&b| b).count() >= MIN_STEEP_COLUMNS;
    let mut best = (0.5 * hi, f64::INFINITY);
    let mut r = 0.5;
    while r <= hi + 1e-9 {
        let mut gaps = Vec::new();
        for (s, st) in rows.iter().zip(&steep) {
            let (a, b) = edge_bounds(s, r);
            for x in 0..a.len() {
                if !a[x].is_nan() && (!use_steep || st[x]) {
                    gaps.push((b[x] - a[x]).abs());
                }
            }
        }
        let m = median(gaps);
        if m < best.1 {
            best = (r, m);
        }
        r += 0.05;
    }
    best.0
}

/// Second differences of the midline below this are pixel rounding on a
/// straight stroke, not a turn.
const BEND_DEAD_ZONE: f64 = 1.0;

/// Pen centre per column (`NaN` without ink). Where the edge bounds agree
/// their midpoint is used; where they part, the local bend of the midpoint
/// trace tells a peak from a trough and the bound exact there is taken.
pub fn envelope_centre(sums: &ColumnSums, r: f64) -> Vec<f64> {
    let (top, bottom) = edge_bounds(sums, r);
    let n = top.len();
    let mid: Vec<f64> = top.iter().zip(&bottom).map(|(a, b)| 0.5 * (a + b)).collect();
    let tol = (0.5 * r).max(1.0);
    let k = 1;
    (0..n)
        .map(|x| {
            if mid[x].is_nan() || bottom[x] - top[x] <= tol || x < k || x + k >= n {
                return mid[x];
            }
            let bend = mid[x - k] + mid[x + k] - 2.0 * mid[x];
            // Rows grow downwards: a peak sits above both neighbours.
            if bend > BEND_DEAD_ZONE {
                top[x]
            } else if bend < -BEND_DEAD_ZONE {
                bottom[x]
            } else {
                mid[x]
            }
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-column probability-weighted mean row of `components` over columns
/// `first..=last`, with the median as baseline.
pub fn extract_trace(components: &[&Component], width: usize, height: usize, first: usize, last: usize) -> (Vec<f64>, f64) {
    let mut sums = ColumnSums::new(width);
    for c in components {
        sums.add(c, height);
    }
    let y: Vec<f64> = (first..=last.min(width - 1)).map(|x| sums.y(x)).collect();
    let baseline = median(y.iter().copied().filter(|v| !v.is_nan()).collect());
    (y, baseline)
}

/// Baseline rows of `n_rows` equally spaced strips: the offset maximizing the
/// smoothed horizontal ink profile summed over all anchors.
pub fn fit_row_anchors(components: &[Component], height: usize, n_rows: usize, pitch_px: f64) -> Result<Vec<f64>> {
    if n_rows == 0 || !(pitch_px > 0.0) {
        return Err(Error::InvalidInput("row anchors need rows and a positive pitch".into()));
    }
    let mut profile = vec![0.0f64; height];
    for c in components {
        for &(_, y, p) in &c.pixels {
            profile[y] += p as f64;
        }
    }
    // Tent smoothing keeps a single maximum at the centre of each stroke.
    let r = ((0.05 * pitch_px).round() as usize).max(1);
    let smooth: Vec<f64> = (0..height)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(height - 1);
            (lo..=hi).map(|j| profile[j] * (r + 1 - i.abs_diff(j)) as f64).sum()
        })
        .collect();
    let sample = |y: f64| -> f64 {
        if y < 0.0 || y > (height - 1) as f64 {
            return 0.0;
        }
        let i = y.floor() as usize;
        let f = y - i as f64;
        smooth[i] * (1.0 - f) + smooth[(i + 1).min(height - 1)] * f
    };
    let span = (n_rows - 1) as f64 * pitch_px;
    let last = ((height - 1) as f64 - span).max(0.0);
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut y0 = 0.0;
    while y0 <= last + 1e-9 {
        let s: f64 = (0..n_rows).map(|k| sample(y0 + k as f64 * pitch_px)).sum();
        if s > best.1 {
            best = (y0, s);
        }
        y0 += 0.5;
    }
    Ok((0..n_rows).map(|k| best.0 + k as f64 * pitch_px).collect())
}

/// Splits each row's chains into the layout's panels, locating the pen
/// centre per column from the ink edges. Recording time 0 sits at the median
/// left end of the rows, corrected by the pen radius.
pub fn lead_traces(
    components: &[Component],
    chains: &[Chain],
    layout: &LayoutSpec,
    width: usize,
    height: usize,
    px_per_s: f64,
    stroke_px: f64,
) -> Result<Vec<LeadTrace>> {
    let n_rows = layout.n_rows();
    let mut rows: Vec<ColumnSums> = (0..n_rows).map(|_| ColumnSums::new(width)).collect();
    for ch in chains {
        if ch.row < n_rows {
            for &m in &ch.members {
                rows[ch.row].add(&components[m], height);
            }
        }
    }
    let lefts: Vec<f64> = rows.iter().filter_map(|r| r.first()).map(|x| x as f64).collect();
    if lefts.is_empty() {
        return Err(Error::Trace("no chain reached any row".into()));
    }
    let r = fit_pen_radius(&rows, stroke_px);
    let x_origin = median(lefts) + (r - 0.5).max(0.0);
    let centres: Vec<Vec<f64>> = rows.iter().map(|s| envelope_centre(s, r)).collect();
    let mut out = Vec::new();
    for p in &layout.panels {
        let sums = &rows[p.row];
        let centre = &centres[p.row];
        let xa = x_origin + p.start * px_per_s;
        let xb = x_origin + (p.start + p.span) * px_per_s;
        let first = xa.floor().max(0.0) as usize;
        let last = (xb.ceil().max(0.0) as usize).min(width - 1);
        if first > last {
            out.push(LeadTrace {
                lead: p.lead,
                rhythm: p.rhythm,
                start_s: p.start,
                span_s: p.span,
                first_col: first.min(width - 1),
                x_origin,
                y_px: Vec::new(),
                clipped: Vec::new(),
                baseline_y: f64::NAN,
            });
            continue;
        }
        let mut y_px = Vec::with_capacity(last - first + 1);
        let mut clipped = Vec::with_capacity(last - first + 1);
        for x in first..=last {
            let edge = sums.edge[x];
            clipped.push(edge);
            y_px.push(if edge { f64::NAN } else { centre[x] });
        }
        let baseline_y = median(y_px.iter().copied().filter(|v| !v.is_nan()).collect());
        out.push(LeadTrace {
            lead: p.lead,
            rhythm: p.rhythm,
            start_s: p.start,
            span_s: p.span,
            first_col: first,
            x_origin,
            y_px,
            clipped,
            baseline_y,
        });
    }
    Ok(out)
}

/// Why a sample has no value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NanCause {
    /// No chain pixels near the sample's column.
    NoPixels,
    /// The stroke ran into the image edge.
    Clipped,
    /// The whole image failed upstream.
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DigitizedLead {
    pub lead: LeadName,
    pub rhythm: bool,
    pub start_s: f64,
    /// Global sample index of `signal.values[0]`.
    pub first_sample: usize,
    /// Millivolts.
    pub signal: Series1D,
    /// Reason for every `NaN` in `signal`, `None` elsewhere.
    pub causes: Vec<Option<NanCause>>,
}

impl DigitizedLead {
    pub fn nan_mask(&self) -> Vec<bool> {
        self.signal.values.iter().map(|v| v.is_nan()).collect()
    }

    /// Every `NaN` carries a cause and no finite sample does.
    pub fn nan_accounted(&self) -> bool {
        self.signal.values.len() == self.causes.len()
            && self.signal.values.iter().zip(&self.causes).all(|(v, c)| v.is_nan() == c.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DigitizedECG {
    pub fs: f64,
    pub duration: f64,
    pub layout: String,
    pub paper_speed: f64,
    pub gain: f64,
    pub spacing: Option<GridSpacing>,
    pub leads: Vec<DigitizedLead>,
}

fn sample_range(start: f64, span: f64, fs: f64) -> (usize, usize) {
    ((start * fs).ceil() as usize, ((start + span) * fs).ceil() as usize)
}

impl DigitizedECG {
    /// All-`NaN` output for an image that failed before tracing.
    pub fn failed(layout: &LayoutSpec, fs: f64, paper_speed: f64, gain: f64) -> Self {
        let leads = layout
            .panels
            .iter()
            .map(|p| {
                let (k0, k1) = sample_range(p.start, p.span, fs);
                let n = k1 - k0;
                DigitizedLead {
                    lead: p.lead,
                    rhythm: p.rhythm,
                    start_s: p.start,
                    first_sample: k0,
                    signal: Series1D::new(vec![f64::NAN; n], fs).expect("valid rate"),
                    causes: vec![Some(NanCause::Failure); n],
                }
            })
            .collect();
        Self {
            fs,
            duration: layout.duration,
            layout: layout.name.clone(),
            paper_speed,
            gain,
            spacing: None,
            leads,
        }
    }

    pub fn nan_fraction(&self) -> f64 {
        let n: usize = self.leads.iter().map(|l| l.signal.len()).sum();
        if n == 0 {
            return 0.0;
        }
        let k: usize = self.leads.iter().map(|l| l.signal.values.iter().filter(|v| v.is_nan()).count()).sum();
        k as f64 / n as f64
    }

    /// One column per lead in canonical order; rhythm strips take precedence
    /// over short panels of the same lead.
    pub fn to_table(&self) -> SignalTable {
        let len = (self.duration * self.fs).round() as usize;
        let mut t = SignalTable::new(self.fs, len);
        for lead in LeadName::ALL {
            let pick = self
                .leads
                .iter()
                .filter(|l| l.lead == lead)
                .max_by_key(|l| (l.rhythm, l.signal.len()));
            if let Some(l) = pick {
                let mut col = vec![None; len];
                for (k, &v) in l.signal.values.iter().enumerate() {
                    if let Some(c) = col.get_mut(l.first_sample + k) {
                        *c = Some(v);
                    }
                }
                t.columns.push((lead, col));
            }
        }
        t
    }
}

/// Fills interior `NaN` runs of at most `max_len` entries by linear
/// interpolation, skipping clipped columns.
fn bridge_gaps(y: &mut [f64], clipped: &[bool], max_len: usize) {
    let n = y.len();
    let mut i = 0;
    while i < n {
        if !y[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && y[i].is_nan() {
            i += 1;
        }
        let end = i;
        if start == 0 || end == n || end - start > max_len || clipped[start..end].iter().any(|&c| c) {
            continue;
        }
        let (a, b) = (y[start - 1], y[end]);
        let len = (end - start + 1) as f64;
        for (k, v) in y[start..end].iter_mut().enumerate() {
            let f = (k + 1) as f64 / len;
            *v = a + (b - a) * f;
        }
    }
}

/// Converts pixel traces to millivolt series at `target_fs`.
pub fn to_physical(
    traces: &[LeadTrace],
    spacing: &GridSpacing,
    paper_speed: f64,
    gain: f64,
    layout: &LayoutSpec,
    target_fs: f64,
) -> Result<DigitizedECG> {
    if !(spacing.d_x > 0.0 && spacing.d_y > 0.0) {
        return Err(Error::InvalidInput("grid spacing must be positive".into()));
    }
    if paper_speed != 25.0 && paper_speed != 50.0 {
        return Err(Error::InvalidInput(format!("paper speed must be 25 or 50 mm/s, got {paper_speed}")));
    }
    if !(gain > 0.0) || !(target_fs > 0.0) {
        return Err(Error::InvalidInput("gain and sample rate must be positive".into()));
    }
    let px_per_s = paper_speed * spacing.d_x;
    let px_per_mv = gain * spacing.d_y;
    let max_gap = (MAX_BRIDGED_SAMPLES * px_per_s / target_fs).floor() as usize;
    let mut leads = Vec::with_capacity(traces.len());
    for tr in traces {
        let (k0, k1) = sample_range(tr.start_s, tr.span_s, target_fs);
        let mut y = tr.y_px.clone();
        bridge_gaps(&mut y, &tr.clipped, max_gap);
        let mut values = Vec::with_capacity(k1 - k0);
        let mut causes = Vec::with_capacity(k1 - k0);
        for k in k0..k1 {
            let c = tr.x_origin + k as f64 / target_fs * px_per_s - tr.first_col as f64;
            let i = c.floor();
            let f = c - i;
            let at = |j: f64| -> (f64, bool) {
                if j < 0.0 || j >= y.len() as f64 {
                    (f64::NAN, false)
                } else {
                    (y[j as usize], tr.clipped[j as usize])
                }
            };
            let (a, ca) = at(i);
            let (b, cb) = if f > 0.0 { at(i + 1.0) } else { (a, ca) };
            let v = a * (1.0 - f) + b * f;
            if v.is_nan() || tr.baseline_y.is_nan() {
                values.push(f64::NAN);
                causes.push(Some(if ca || cb { NanCause::Clipped } else { NanCause::NoPixels }));
            } else {
                values.push((tr.baseline_y - v) / px_per_mv);
                causes.push(None);
            }
        }
        leads.push(DigitizedLead {
            lead: tr.lead,
            rhythm: tr.rhythm,
            start_s: tr.start_s,
            first_sample: k0,
            signal: Series1D::new(values, target_fs)?,
            causes,
        });
    }
    Ok(DigitizedECG {
        fs: target_fs,
        duration: layout.duration,
        layout: layout.name.clone(),
        paper_speed,
        gain,
        spacing: Some(*spacing),
        leads,
    })
}
