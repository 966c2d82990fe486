//! Connected components of the signal channel and snipping of merged strokes.

use crate::error::{Error, Result};
use crate::label::components_8;
use crate::raster::Plane;

pub const TRACE_THRESHOLD: f32 = 0.5;
/// Components smaller than this are treated as noise.
pub const MIN_COMPONENT_PIXELS: usize = 10;
pub const MAX_ITERATIONS: usize = 10;
/// A column is thick when it holds more than this many median stroke thicknesses.
const THICK_FACTOR: f64 = 3.0;
/// Fraction of a component's span that must be thick to flag it.
const THICK_FRACTION: f64 = 0.10;
/// Fraction of a component's span with stacked strokes that flags it.
const STACKED_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub id: usize,
    /// `(x, y, probability)` in row-major order.
    pub pixels: Vec<(usize, usize, f32)>,
    /// Leftmost pixel, smaller `y` on ties.
    pub left_end: (usize, usize),
    /// Rightmost pixel, smaller `y` on ties.
    pub right_end: (usize, usize),
    /// Inclusive column range.
    pub x_span: (usize, usize),
}

impl Component {
    /// Builds a component from a non-empty pixel list.
    pub fn new(id: usize, mut pixels: Vec<(usize, usize, f32)>) -> Self {
        assert!(!pixels.is_empty(), "component without pixels");
        pixels.sort_by_key(|&(x, y, _)| (y, x));
        let left_end = pixels.iter().map(|&(x, y, _)| (x, y)).min_by_key(|&(x, y)| (x, y)).unwrap();
        let right_end = pixels
            .iter()
            .map(|&(x, y, _)| (x, y))
            .min_by_key(|&(x, y)| (std::cmp::Reverse(x), y))
            .unwrap();
        Self {
            id,
            pixels,
            left_end,
            right_end,
            x_span: (left_end.0, right_end.0),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x_span.1 - self.x_span.0 + 1
    }

    pub fn y_span(&self) -> (usize, usize) {
        let lo = self.pixels.first().unwrap().1;
        let hi = self.pixels.last().unwrap().1;
        (lo, hi)
    }

    /// Probability-weighted mean row.
    pub fn mean_y(&self) -> f64 {
        let (mut s, mut sy) = (0.0, 0.0);
        for &(_, y, p) in &self.pixels {
            s += p as f64;
            sy += p as f64 * y as f64;
        }
        if s > 0.0 {
            sy / s
        } else {
            self.pixels.iter().map(|p| p.1 as f64).sum::<f64>() / self.len() as f64
        }
    }

    pub fn mass(&self) -> f64 {
        self.pixels.iter().map(|p| p.2 as f64).sum()
    }

    /// Vertical runs `(y_lo, y_hi)` of each column, top to bottom.
    pub fn column_runs(&self) -> Vec<Vec<(usize, usize)>> {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); self.width()];
        for &(x, y, _) in &self.pixels {
            cols[x - self.x_span.0].push(y);
        }
        cols.into_iter()
            .map(|ys| {
                let mut runs: Vec<(usize, usize)> = Vec::new();
                for y in ys {
                    match runs.last_mut() {
                        Some(r) if r.1 + 1 == y => r.1 = y,
                        _ => runs.push((y, y)),
                    }
                }
                runs
            })
            .collect()
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.width()];
        for &(x, _, _) in &self.pixels {
            c[x - self.x_span.0] += 1;
        }
        c
    }
}

fn from_mask(plane: &Plane<'_>, mask: &[bool]) -> Vec<Component> {
    components_8(plane.width, plane.height, mask)
        .into_iter()
        .filter(|c| c.len() >= MIN_COMPONENT_PIXELS)
        .enumerate()
        .map(|(id, idx)| {
            let px = idx
                .into_iter()
                .map(|i| (i % plane.width, i / plane.width, plane.data[i]))
                .collect();
            Component::new(id, px)
        })
        .collect()
}

/// 8-connected components of pixels with probability `>= threshold`,
/// dropping those under [`MIN_COMPONENT_PIXELS`].
pub fn connected_components(signal: &Plane<'_>, threshold: f32) -> Result<Vec<Component>> {
    let mask: Vec<bool> = signal.data.iter().map(|&p| p >= threshold).collect();
    let comps = from_mask(signal, &mask);
    if comps.is_empty() {
        return Err(Error::Trace("no signal components".into()));
    }
    Ok(comps)
}

/// Median number of pixels per occupied column over all components.
pub fn median_thickness(components: &[Component]) -> f64 {
    thickness_quantile(components, 0.5)
}

/// Quantile `q` of the per-column pixel counts over all components.
pub fn thickness_quantile(components: &[Component], q: f64) -> f64 {
    let mut counts: Vec<usize> = components
        .iter()
        .flat_map(|c| c.column_counts())
        .filter(|&n| n > 0)
        .collect();
    if counts.is_empty() {
        return 0.0;
    }
    counts.sort_unstable();
    let k = ((counts.len() as f64 * q) as usize).min(counts.len() - 1);
    counts[k] as f64
}

/// Thick over more than a tenth of its span, or holding vertically stacked
/// strokes over more than a twentieth of it.
pub fn is_problematic(c: &Component, median_thickness: f64) -> bool {
    let runs = c.column_runs();
    let n = runs.len() as f64;
    let thick = runs
        .iter()
        .filter(|r| r.iter().map(|(a, b)| b - a + 1).sum::<usize>() as f64 > THICK_FACTOR * median_thickness)
        .count() as f64;
    let stacked = runs.iter().filter(|r| r.len() >= 2).count() as f64;
    thick > THICK_FRACTION * n || stacked > STACKED_FRACTION * n
}

/// Flags every component when there are fewer than `expected` of them,
/// otherwise only the individually problematic ones.
pub fn flag_problematic(components: &[Component], expected: usize) -> Vec<bool> {
    if components.len() < expected {
        return vec![true; components.len()];
    }
    let t = median_thickness(components);
    components.iter().map(|c| is_problematic(c, t)).collect()
}

/// Left-to-right cut through `c` following the least signal probability,
/// one pixel per column. Starts inside the widest gap between stacked strokes,
/// or across the thickest column when no column holds two strokes. `None` for a
/// component one pixel high.
pub fn separating_path(c: &Component, signal: &Plane<'_>) -> Option<Vec<(usize, usize)>> {
    let (y0, y1) = c.y_span();
    if y0 == y1 {
        return None;
    }
    let ylo = y0.saturating_sub(1);
    let yhi = (y1 + 1).min(signal.height - 1);
    let (x0, x1) = c.x_span;
    let gh = yhi - ylo + 1;
    let gw = x1 - x0 + 1;
    let mut p = vec![0.0f32; gw * gh];
    for &(x, y, v) in &c.pixels {
        p[(x - x0) * gh + (y - ylo)] = v.max(f32::MIN_POSITIVE);
    }
    let runs = c.column_runs();
    let mut seed: Option<(usize, usize, usize)> = None; // (gap, column, y)
    for (i, r) in runs.iter().enumerate() {
        for w in r.windows(2) {
            let gap = w[1].0 - w[0].1 - 1;
            if seed.is_none_or(|s| gap > s.0) {
                seed = Some((gap, i, w[0].1 + 1 + gap / 2));
            }
        }
    }
    let (sc, sy) = match seed {
        Some((_, col, y)) => (col, y),
        None => {
            let (col, r) = runs
                .iter()
                .enumerate()
                .max_by_key(|(i, r)| (r.iter().map(|(a, b)| b - a + 1).max().unwrap_or(0), std::cmp::Reverse(*i)))?;
            let longest = r.iter().max_by_key(|(a, b)| b - a)?;
            (col, (longest.0 + longest.1) / 2)
        }
    };
    let at = |col: usize, y: usize| p[col * gh + (y - ylo)] as f64;
    let neighbours = |y: usize| y.saturating_sub(1).max(ylo)..=(y + 1).min(yhi);
    let step = |next: usize, after: Option<usize>, y: usize| -> usize {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for cand in neighbours(y) {
            let look = after.map_or(0.0, |a| neighbours(cand).map(|yy| at(a, yy)).fold(f64::INFINITY, f64::min));
            let cost = at(next, cand) + look;
            let key = (cost, (cand != y) as usize, cand.abs_diff(sy), cand);
            let better = match best {
                None => true,
                Some(b) => (key.0, key.1, key.2, key.3) < (b.0, b.1, b.2, b.3),
            };
            if better {
                best = Some(key);
            }
        }
        best.unwrap().3
    };
    let mut ys = vec![0usize; gw];
    ys[sc] = sy;
    let mut y = sy;
    for col in sc + 1..gw {
        let after = (col + 1 < gw).then_some(col + 1);
        y = step(col, after, y);
        ys[col] = y;
    }
    let mut y = sy;
    for col in (0..sc).rev() {
        let after = col.checked_sub(1);
        y = step(col, after, y);
        ys[col] = y;
    }
    Some(ys.into_iter().enumerate().map(|(i, y)| (x0 + i, y)).collect())
}

/// Removes the pixels of `path` from `c` and relabels what is left.
fn split(c: &Component, path: &[(usize, usize)]) -> Vec<Component> {
    let (x0, _) = c.x_span;
    let (y0, y1) = c.y_span();
    let (gw, gh) = (c.width(), y1 - y0 + 1);
    let mut mask = vec![false; gw * gh];
    let mut prob = vec![0.0f32; gw * gh];
    for &(x, y, p) in &c.pixels {
        mask[(y - y0) * gw + (x - x0)] = true;
        prob[(y - y0) * gw + (x - x0)] = p;
    }
    for &(x, y) in path {
        if (y0..=y1).contains(&y) {
            mask[(y - y0) * gw + (x - x0)] = false;
        }
    }
    components_8(gw, gh, &mask)
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            Component::new(
                id,
                idx.into_iter().map(|i| (x0 + i % gw, y0 + i / gw, prob[i])).collect(),
            )
        })
        .collect()
}

/// Cuts `c` along its separating path. Returns the pieces when the cut
/// disconnects the component and `c` unchanged otherwise.
pub fn snip(c: &Component, signal: &Plane<'_>) -> Vec<Component> {
    if let Some(path) = separating_path(c, signal) {
        let pieces = split(c, &path);
        if pieces.len() >= 2 {
            return pieces;
        }
    }
    vec![c.clone()]
}

#[derive(Clone, Debug)]
pub struct Iterated {
    pub components: Vec<Component>,
    /// Detection passes run; the last one found nothing left to snip unless
    /// the cap was reached.
    pub iterations: usize,
    /// Pixels removed by snipping.
    pub removed: Vec<(usize, usize)>,
}

/// Repeats detect → flag → snip until nothing changes or [`MAX_ITERATIONS`]
/// snipping passes have run.
pub fn iterate_components(signal: &Plane<'_>, threshold: f32, expected: usize) -> Result<Iterated> {
    if expected == 0 {
        return Err(Error::InvalidInput("expected lead count must be positive".into()));
    }
    let w = signal.width;
    let mut mask: Vec<bool> = signal.data.iter().map(|&p| p >= threshold).collect();
    let mut removed = Vec::new();
    for it in 1..=MAX_ITERATIONS {
        let comps = from_mask(signal, &mask);
        if comps.is_empty() {
            return Err(Error::Trace("no signal components".into()));
        }
        let flags = flag_problematic(&comps, expected);
        let mut changed = false;
        for (c, _) in comps.iter().zip(&flags).filter(|(_, &f)| f) {
            if let Some(path) = separating_path(c, signal) {
                if split(c, &path).len() >= 2 {
                    for &(x, y) in &path {
                        if mask[y * w + x] {
                            mask[y * w + x] = false;
                            removed.push((x, y));
                        }
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(Iterated {
                components: comps,
                iterations: it,
                removed,
            });
        }
    }
    let comps = from_mask(signal, &mask);
    if comps.is_empty() {
        return Err(Error::Trace("no signal components".into()));
    }
    Ok(Iterated {
        components: comps,
        iterations: MAX_ITERATIONS,
        removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> Vec<f32> {
        (0..w * h).map(|i| if on(i % w, i / w) { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn two_strokes_two_components() {
        let d = plane(60, 30, |x, y| (y == 5 && (5..40).contains(&x)) || (y == 20 && (10..50).contains(&x)));
        let c = connected_components(&Plane::new(60, 30, &d), 0.5).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].left_end, c[0].right_end), ((5, 5), (39, 5)));
        assert_eq!((c[1].left_end, c[1].right_end), ((10, 20), (49, 20)));
    }

    #[test]
    fn diagonal_stroke_endpoints() {
        let d = plane(40, 40, |x, y| x == y && x >= 3 && x < 33);
        let c = connected_components(&Plane::new(40, 40, &d), 0.5).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].left_end.0 < c[0].right_end.0);
        assert_eq!(c[0].left_end, (3, 3));
    }

    #[test]
    fn specks_are_noise_and_empty_is_failure() {
        let d = plane(20, 20, |x, y| x < 3 && y < 3);
        assert!(matches!(connected_components(&Plane::new(20, 20, &d), 0.5), Err(Error::Trace(_))));
    }

    #[test]
    fn endpoint_ties_prefer_smaller_y() {
        let d = plane(30, 10, |x, y| (2..=6).contains(&y) && (4..20).contains(&x));
        let c = connected_components(&Plane::new(30, 10, &d), 0.5).unwrap();
        assert_eq!(c[0].left_end, (4, 2));
        assert_eq!(c[0].right_end, (19, 2));
    }

    #[test]
    fn bridge_is_snipped() {
        let (w, h) = (60, 20);
        let d = plane(w, h, |x, y| (y == 5 || y == 9) && (5..55).contains(&x) || (x == 30 && (5..=9).contains(&y)));
        let p = Plane::new(w, h, &d);
        let c = connected_components(&p, 0.5).unwrap();
        assert_eq!(c.len(), 1);
        let pieces = snip(&c[0], &p);
        assert_eq!(pieces.len(), 2);
        let ys: Vec<(usize, usize)> = pieces.iter().map(|c| c.y_span()).collect();
        assert!(ys.iter().all(|&(a, b)| b < 7 || a > 7), "{ys:?}");
    }

    #[test]
    fn single_row_is_left_alone() {
        let d = plane(30, 5, |x, y| y == 2 && x < 25);
        let p = Plane::new(30, 5, &d);
        let c = connected_components(&p, 0.5).unwrap();
        assert!(separating_path(&c[0], &p).is_none());
        assert_eq!(snip(&c[0], &p), c);
    }

    #[test]
    fn snip_removes_at_most_one_pixel_per_column() {
        let (w, h) = (50, 40);
        let d = plane(w, h, |x, y| {
            let a = 10.0 + 8.0 * (x as f64 / 6.0).sin();
            let b = 20.0 - 8.0 * (x as f64 / 6.0).sin();
            (y as f64 - a).abs() < 1.0 || (y as f64 - b).abs() < 1.0
        });
        let p = Plane::new(w, h, &d);
        for c in connected_components(&p, 0.5).unwrap() {
            if let Some(path) = separating_path(&c, &p) {
                let mut cols: Vec<usize> = path.iter().map(|q| q.0).collect();
                cols.dedup();
                assert_eq!(cols.len(), path.len());
                let after: usize = split(&c, &path).iter().map(|c| c.len()).sum();
                assert!(c.len() - after <= c.width());
            }
        }
    }

    #[test]
    fn clean_strokes_converge_at_once() {
        let d = plane(80, 40, |x, y| (y == 8 || y == 28) && x > 2 && x < 77);
        let it = iterate_components(&Plane::new(80, 40, &d), 0.5, 2).unwrap();
        assert_eq!((it.components.len(), it.iterations), (2, 1));
    }

    #[test]
    fn one_merge_converges_quickly() {
        let (w, h) = (80, 40);
        let d = plane(w, h, |x, y| (y == 8 || y == 28) && x > 2 && x < 77 || (x == 40 && (8..=28).contains(&y)));
        let it = iterate_components(&Plane::new(w, h, &d), 0.5, 2).unwrap();
        assert!(it.iterations <= 3, "{}", it.iterations);
        assert!(it.components.len() >= 2);
    }

    #[test]
    fn blob_stops_at_cap() {
        let (w, h) = (12, 2100);
        let d = vec![1.0f32; w * h];
        let it = iterate_components(&Plane::new(w, h, &d), 0.5, 100_000).unwrap();
        assert_eq!(it.iterations, MAX_ITERATIONS);
    }
}
