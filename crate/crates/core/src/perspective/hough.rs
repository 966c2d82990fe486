//! Angle-radius accumulation and the angle-angle variance plane.

use crate::error::{Error, Result};
use crate::raster::Plane;

/// Mass accumulated at `(θ, ρ)` with `ρ = x cosθ + y sinθ`, pixel centres at
/// integer coordinates and the origin at the top-left pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct HoughAccumulator {
    pub thetas: Vec<f64>,
    /// Radius of bin 0; bins are 1 px wide and centred on `rho_min + k`.
    pub rho_min: f64,
    pub n_rho: usize,
    /// Row-major `thetas.len() × n_rho`.
    pub bins: Vec<f64>,
}

impl HoughAccumulator {
    pub fn rho(&self, k: usize) -> f64 {
        self.rho_min + k as f64
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_min + (self.n_rho - 1) as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.bins[i * self.n_rho..(i + 1) * self.n_rho]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.bins[i * self.n_rho + k]
    }

    /// Location of the largest bin as `(theta index, rho index)`; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.bins.iter().enumerate() {
            if v > self.bins[best] {
                best = i;
            }
        }
        (best / self.n_rho, best % self.n_rho)
    }
}

/// Length of the line `x cosθ + y sinθ = ρ` inside the `width × height` pixel area.
pub fn chord_length(theta: f64, rho: f64, width: usize, height: usize) -> f64 {
    let (s, c) = theta.sin_cos();
    let (px, py) = (rho * c, rho * s);
    let (dx, dy) = (-s, c);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (p, d, lo, hi) in [(px, dx, -0.5, width as f64 - 0.5), (py, dy, -0.5, height as f64 - 0.5)] {
        if d.abs() < 1e-12 {
            if p < lo || p > hi {
                return 0.0;
            }
            continue;
        }
        let (a, b) = ((lo - p) / d, (hi - p) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 - t0).max(0.0)
}

impl HoughAccumulator {
    /// Bins divided by the length of their line inside the image, so that line
    /// families of different lengths compare by ink density rather than by
    /// total mass. Lines shorter than `min_len` inside the image become NaN
    /// and are left out of the angle-angle statistics.
    pub fn per_unit_length(&self, width: usize, height: usize, min_len: f64) -> HoughAccumulator {
        let mut out = self.clone();
        for (i, &t) in self.thetas.iter().enumerate() {
            for k in 0..self.n_rho {
                let len = chord_length(t, self.rho(k), width, height);
                let b = &mut out.bins[i * self.n_rho + k];
                *b = if len >= min_len { *b / len } else { f64::NAN };
            }
        }
        out
    }
}

/// `n` evenly spaced angles starting at `lo`, excluding `hi` when `open` is set.
pub fn linspace(lo: f64, hi: f64, n: usize, open: bool) -> Vec<f64> {
    let div = if open { n } else { n.saturating_sub(1).max(1) };
    (0..n).map(|i| lo + (hi - lo) * i as f64 / div as f64).collect()
}

/// Extent of `ρ` over the image corners for every angle in `thetas`.
fn rho_range(width: usize, height: usize, thetas: &[f64]) -> (f64, f64) {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in thetas {
        let (s, c) = t.sin_cos();
        for (x, y) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
            let r = x * c + y * s;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// Accumulates every pixel's mass into the two nearest radius bins of each angle.
pub fn hough(plane: &Plane<'_>, thetas: &[f64]) -> Result<HoughAccumulator> {
    if thetas.is_empty() {
        return Err(Error::InvalidInput("no angles for the Hough transform".into()));
    }
    if thetas.windows(2).any(|w| !(w[1] > w[0])) || thetas[thetas.len() - 1] - thetas[0] >= std::f64::consts::PI {
        return Err(Error::InvalidInput("angles must increase within a half turn".into()));
    }
    let pixels: Vec<(f64, f64, f64)> = plane
        .data
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| ((i % plane.width) as f64, (i / plane.width) as f64, p as f64))
        .collect();
    if pixels.is_empty() {
        return Err(Error::DegenerateInput("grid channel is empty".into()));
    }
    let (lo, hi) = rho_range(plane.width, plane.height, thetas);
    let rho_min = lo.floor();
    let n_rho = (hi.ceil() - rho_min) as usize + 2;
    let mut bins = vec![0.0; thetas.len() * n_rho];
    for (i, &t) in thetas.iter().enumerate() {
        let (s, c) = t.sin_cos();
        let row = &mut bins[i * n_rho..(i + 1) * n_rho];
        for &(x, y, p) in &pixels {
            // `f` is non-negative, so truncation is the floor (and much
            // cheaper than `f64::floor` on baseline x86-64).
            let f = x * c + y * s - rho_min;
            let k = f as usize;
            let frac = f - k as f64;
            row[k] += p * (1.0 - frac);
            row[k + 1] += p * frac;
        }
    }
    Ok(HoughAccumulator {
        thetas: thetas.to_vec(),
        rho_min,
        n_rho,
        bins,
    })
}

/// Variance of accumulator values along straight lines of the angle-radius plane.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleAnglePlane {
    /// Angle where a line meets `ρ_min`.
    pub thetas_bottom: Vec<f64>,
    /// Angle where a line meets `ρ_max`.
    pub thetas_top: Vec<f64>,
    /// `variance[i * n + j]` for the line from `(θ_i, ρ_min)` to `(θ_j, ρ_max)`.
    pub variance: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl AngleAnglePlane {
    pub fn n(&self) -> usize {
        self.thetas_bottom.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.variance[i * self.n() + j]
    }

    /// Largest positive entry accepted by `ok`; exact ties prefer the more
    /// parallel pair (smaller `|i - j|`), then row-major order.
    pub fn argmax_where(&self, ok: impl Fn(usize, usize) -> bool) -> Option<(usize, usize)> {
        let n = self.n();
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            for j in 0..n {
                let v = self.get(i, j);
                if !(v > 0.0) || !ok(i, j) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bi, bj, bv)) => v > bv || (v == bv && i.abs_diff(j) < bi.abs_diff(bj)),
                };
                if better {
                    best = Some((i, j, v));
                }
            }
        }
        best.map(|(i, j, _)| (i, j))
    }

    pub fn argmax(&self) -> Option<(usize, usize)> {
        self.argmax_where(|_, _| true)
    }
}

/// Full angle-angle plane.
pub fn angle_angle(acc: &HoughAccumulator) -> AngleAnglePlane {
    angle_angle_banded(acc, acc.thetas.len())
}

/// Paths crossing fewer non-NaN bins than this score 0.
const MIN_SAMPLES: usize = 8;

/// Angle-angle plane restricted to `|i - j| <= band`; entries outside the band
/// are 0. NaN bins are skipped, so each entry is the variance over the bins the
/// path actually crosses.
pub fn angle_angle_banded(acc: &HoughAccumulator, band: usize) -> AngleAnglePlane {
    let n = acc.thetas.len();
    let m = acc.n_rho;
    let mut variance = vec![0.0; n * n];
    let denom = (m - 1).max(1) as f64;
    for i in 0..n {
        let j_lo = i.saturating_sub(band);
        let j_hi = (i + band).min(n - 1);
        for j in j_lo..=j_hi {
            let step = (j as f64 - i as f64) / denom;
            let (mut sum, mut sum2, mut count) = (0.0, 0.0, 0usize);
            for k in 0..m {
                let ti = (i as f64 + step * k as f64 + 0.5) as usize;
                let v = acc.bins[ti * m + k];
                if v.is_nan() {
                    continue;
                }
                sum += v;
                sum2 += v * v;
                count += 1;
            }
            if count >= MIN_SAMPLES {
                let mean = sum / count as f64;
                variance[i * n + j] = (sum2 / count as f64 - mean * mean).max(0.0);
            }
        }
    }
    AngleAnglePlane {
        thetas_bottom: acc.thetas.clone(),
        thetas_top: acc.thetas.clone(),
        variance,
        rho_min: acc.rho_min,
        rho_max: acc.rho_max(),
    }
}
