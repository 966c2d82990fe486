//! Grid pitch estimation by matching the autocorrelation of the grid profile
//! against a minor/major comb template.

use crate::error::{Error, Result};
use crate::raster::{Plane, Series1D};

pub const MAX_LAG: usize = 512;
pub const MIN_AXIS_LEN: usize = 32;
pub const D_MIN: f64 = 4.0;
pub const D_MAX: f64 = 80.0;
pub const MIN_FIT_SCORE: f64 = 0.3;
const MAJOR_WEIGHT: f64 = 4.0;
const FIRST_LAG: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Spacing along x, from column sums.
    Horizontal,
    /// Spacing along y, from row sums.
    Vertical,
}

/// Pixels per minor cell (1 mm by default) on each axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpacing {
    pub d_x: f64,
    pub d_y: f64,
    pub fit_score_x: f64,
    pub fit_score_y: f64,
}

/// Column sums (horizontal) or row sums (vertical) of a plane.
pub fn axis_profile(plane: &Plane<'_>, axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Horizontal => {
            let mut p = vec![0.0; plane.width];
            for row in plane.data.chunks_exact(plane.width) {
                for (acc, &v) in p.iter_mut().zip(row) {
                    *acc += v as f64;
                }
            }
            p
        }
        Axis::Vertical => plane
            .data
            .chunks_exact(plane.width)
            .map(|row| row.iter().map(|&v| v as f64).sum())
            .collect(),
    }
}

/// `R[m] = Σ_n x[n]·x[n+m]` for `m = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag.min(x.len().saturating_sub(1)))
        .map(|m| x.iter().zip(&x[m..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Autocorrelation of the mean-subtracted axis profile over lags `0..=min(L-1, 512)`.
pub fn axis_autocorrelation(plane: &Plane<'_>, axis: Axis) -> Result<Series1D> {
    let mut p = axis_profile(plane, axis);
    if p.len() < MIN_AXIS_LEN {
        return Err(Error::DegenerateInput(format!(
            "axis length {} below {MIN_AXIS_LEN} px",
            p.len()
        )));
    }
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    Series1D::new(autocorrelation(&p, MAX_LAG), 1.0)
}

/// Width of the central autocorrelation lobe: twice the lag at which `r`
/// first falls to half of `r[0]`, linearly interpolated.
pub fn central_lobe_width(r: &[f64]) -> f64 {
    if r.is_empty() || r[0] <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * r[0];
    for m in 1..r.len() {
        if r[m] <= half {
            let f = (r[m - 1] - half) / (r[m - 1] - r[m]);
            return 2.0 * (m as f64 - 1.0 + f);
        }
    }
    0.0
}

/// Comb template value at lag `m` for spacing `d`; peaks are triangles of
/// half-width `max(d/10, lobe, 1)`.
fn template(m: f64, d: f64, lobe: f64) -> f64 {
    let hw = (d / 10.0).max(lobe).max(1.0);
    let k = (m / d).round();
    let mut v = 0.0;
    for kk in [k - 1.0, k, k + 1.0] {
        if kk < 1.0 {
            continue;
        }
        let u = (m - kk * d).abs() / hw;
        if u < 1.0 {
            let h = if (kk as i64) % 5 == 0 { MAJOR_WEIGHT } else { 1.0 };
            v += h * (1.0 - u);
        }
    }
    v
}

/// Normalized cross-correlation of `r[FIRST_LAG..]` with the template for `d`.
pub fn template_score(r: &[f64], d: f64) -> f64 {
    let lobe = central_lobe_width(r);
    let lags = FIRST_LAG..r.len();
    let n = lags.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let t: Vec<f64> = lags.clone().map(|m| template(m as f64, d, lobe)).collect();
    let x = &r[FIRST_LAG..];
    let mx = x.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let (mut sxt, mut sxx, mut stt) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&t) {
        sxt += (a - mx) * (b - mt);
        sxx += (a - mx) * (a - mx);
        stt += (b - mt) * (b - mt);
    }
    if sxx <= 0.0 || stt <= 0.0 {
        return 0.0;
    }
    sxt / (sxx * stt).sqrt()
}

/// Sweep step at spacing `d`: the largest that keeps the template's peak at
/// the longest lag within half a peak width of its neighbouring candidate.
fn sweep_step(d: f64, lobe: f64, max_lag: f64) -> f64 {
    ((d / 10.0).max(lobe).max(1.0) * d / (2.0 * max_lag)).clamp(0.002, 0.5)
}

/// Template-score maximum over `[lo, hi]`: a sweep, then golden-section
/// refinement to 0.01 px.
fn local_max(r: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let lobe = central_lobe_width(r);
    let max_lag = r.len().max(2) as f64;
    let mut best = (lo, f64::NEG_INFINITY, sweep_step(lo, lobe, max_lag));
    let mut d = lo;
    while d <= hi + 1e-9 {
        let s = template_score(r, d);
        let step = sweep_step(d, lobe, max_lag);
        if s > best.1 {
            best = (d, s, step);
        }
        d += step;
    }
    let (mut a, mut b) = ((best.0 - best.2).max(lo), (best.0 + best.2).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (template_score(r, c), template_score(r, e));
    while b - a > 0.01 {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = template_score(r, c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = template_score(r, e);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = template_score(r, mid);
    [(c, fc), (e, fe), (mid, fm)]
        .into_iter()
        .fold((best.0, best.1), |acc, x| if x.1 > acc.1 { x } else { acc })
}

fn sample(r: &[f64], x: f64) -> f64 {
    let i = x.floor() as usize;
    if i + 1 >= r.len() {
        return r[r.len() - 1];
    }
    let f = x - i as f64;
    r[i] * (1.0 - f) + r[i + 1] * f
}

/// Fraction of lags `j·d` at which the autocorrelation stands above the
/// mean of the two half-way lags `(j ± 1/2)·d`. Close to 1 for the true pitch,
/// near or below 1/2 for its multiples and sub-multiples.
pub fn peak_support(r: &[f64], d: f64) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut j = 1.0;
    while (j + 0.5) * d <= (r.len() - 1) as f64 {
        let mid = 0.5 * (sample(r, (j - 0.5) * d) + sample(r, (j + 0.5) * d));
        if sample(r, j * d) > mid {
            hits += 1;
        }
        total += 1;
        j += 1.0;
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

const HARMONIC_RATIOS: [f64; 9] = [1.0, 2.0, 3.0, 4.0, 5.0, 0.5, 1.0 / 3.0, 0.25, 0.2];
const MIN_PEAK_SUPPORT: f64 = 0.75;

/// Best spacing for an autocorrelation: the template-score maximum over
/// `[4, 80]`, checked against its multiples and sub-multiples. Among those whose
/// lags land on autocorrelation peaks, the best-scoring one wins.
pub fn fit_grid_spacing(autocorr: &Series1D) -> Result<(f64, f64)> {
    let r = &autocorr.values;
    if r.len() < 3 {
        return Err(Error::Spacing { score: 0.0 });
    }
    let global = local_max(r, D_MIN, D_MAX);
    let mut chosen: Option<(f64, f64)> = None;
    for k in HARMONIC_RATIOS {
        let c = global.0 * k;
        if !(D_MIN..=D_MAX).contains(&c) {
            continue;
        }
        let cand = if k == 1.0 {
            global
        } else {
            local_max(r, (c * 0.99).max(D_MIN), (c * 1.01).min(D_MAX))
        };
        if peak_support(r, cand.0) >= MIN_PEAK_SUPPORT && chosen.is_none_or(|b| cand.1 > b.1) {
            chosen = Some(cand);
        }
    }
    let (d, score) = chosen.unwrap_or(global);
    let score = score.clamp(0.0, 1.0);
    if score < MIN_FIT_SCORE {
        return Err(Error::Spacing { score });
    }
    Ok((d, score))
}

/// Sharpens `d0` using every grid line of the full profile: line centres are
/// located near the comb predicted by `d0` and a straight line is fitted to
/// centre position versus line index. Returns `d0` when too few lines are found
/// or the refit strays more than 1% from it.
pub fn refine_spacing(profile: &[f64], d0: f64) -> f64 {
    let n = profile.len();
    if n < 4 * d0 as usize + 4 {
        return d0;
    }
    let mean = profile.iter().sum::<f64>() / n as f64;
    let p: Vec<f64> = profile.iter().map(|v| (v - mean).max(0.0)).collect();
    let sample = |x: f64| -> f64 {
        if x < 0.0 || x > (n - 1) as f64 {
            return 0.0;
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        p[i] * (1.0 - f) + p[(i + 1).min(n - 1)] * f
    };
    // Phase of the comb.
    let steps = (d0 * 4.0).ceil() as usize;
    let mut phase = 0.0;
    let mut best = f64::NEG_INFINITY;
    for s in 0..steps {
        let ph = d0 * s as f64 / steps as f64;
        let mut acc = 0.0;
        let mut x = ph;
        while x < n as f64 {
            acc += sample(x);
            x += d0;
        }
        if acc > best {
            best = acc;
            phase = ph;
        }
    }
    let half = (d0 / 3.0).max(1.0);
    let (mut sk, mut sx, mut skk, mut skx, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut k = 0usize;
    loop {
        let c = phase + k as f64 * d0;
        if c > (n - 1) as f64 {
            break;
        }
        let lo = (c - half).ceil().max(0.0) as usize;
        let hi = ((c + half).floor() as usize).min(n - 1);
        let (mut m, mut mx) = (0.0, 0.0);
        for (i, &v) in p.iter().enumerate().take(hi + 1).skip(lo) {
            m += v;
            mx += v * i as f64;
        }
        if m > 0.0 && lo > 0 && hi < n - 1 {
            let x = mx / m;
            let kf = k as f64;
            sk += kf;
            sx += x;
            skk += kf * kf;
            skx += kf * x;
            cnt += 1.0;
        }
        k += 1;
    }
    if cnt < 4.0 {
        return d0;
    }
    let slope = (cnt * skx - sk * sx) / (cnt * skk - sk * sk);
    if slope.is_finite() && ((slope - d0) / d0).abs() <= 0.01 {
        slope
    } else {
        d0
    }
}

/// Spacing along one axis of a dewarped grid channel.
pub fn axis_spacing(plane: &Plane<'_>, axis: Axis) -> Result<(f64, f64)> {
    let r = axis_autocorrelation(plane, axis)?;
    let (d, score) = fit_grid_spacing(&r)?;
    Ok((refine_spacing(&axis_profile(plane, axis), d), score))
}

pub fn estimate_grid_spacing(grid: &Plane<'_>) -> Result<GridSpacing> {
    let (d_x, fit_score_x) = axis_spacing(grid, Axis::Horizontal)?;
    let (d_y, fit_score_y) = axis_spacing(grid, Axis::Vertical)?;
    Ok(GridSpacing {
        d_x,
        d_y,
        fit_score_x,
        fit_score_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Anti-aliased line profile: unit-height minor lines every `d`, doubled every 5th.
    fn comb_profile(len: usize, d: f64, phase: f64) -> Vec<f64> {
        let w = (0.1 * d).max(0.8);
        (0..len)
            .map(|i| {
                let x = i as f64;
                let k0 = ((x - phase) / d).round();
                let mut v: f64 = 0.0;
                for k in [k0 - 1.0, k0, k0 + 1.0] {
                    let c = phase + k * d;
                    let ww = if (k as i64).rem_euclid(5) == 0 { 2.0 * w } else { w };
                    let lo = (c - ww / 2.0).max(x - 0.5);
                    let hi = (c + ww / 2.0).min(x + 0.5);
                    v = v.max((hi - lo).max(0.0));
                }
                v
            })
            .collect()
    }

    fn fit(profile: &[f64]) -> Result<(f64, f64)> {
        let mean = profile.iter().sum::<f64>() / profile.len() as f64;
        let x: Vec<f64> = profile.iter().map(|v| v - mean).collect();
        fit_grid_spacing(&Series1D::new(autocorrelation(&x, MAX_LAG), 1.0).unwrap())
    }

    #[test]
    fn impulse_train_autocorrelation() {
        let x: Vec<f64> = (0..100).map(|i| if i % 10 == 0 { 1.0 } else { 0.0 }).collect();
        let r = autocorrelation(&x, 50);
        assert_eq!(r[0], 10.0);
        assert_eq!(r[10], 9.0);
        assert_eq!(r[20], 8.0);
        assert!(r.iter().all(|&v| v <= r[0]));
    }

    #[test]
    fn short_axis_is_degenerate() {
        let data = vec![0.5f32; 31 * 40];
        let plane = Plane::new(31, 40, &data);
        assert!(matches!(
            axis_autocorrelation(&plane, Axis::Horizontal),
            Err(Error::DegenerateInput(_))
        ));
        assert_eq!(axis_autocorrelation(&plane, Axis::Vertical).unwrap().len(), 40);
    }

    #[test]
    fn recovers_integer_and_fractional_spacing() {
        for (d, tol) in [(10.0, 0.1), (12.5, 0.125)] {
            let (est, score) = fit(&comb_profile(2000, d, 3.0)).unwrap();
            assert!((est - d).abs() <= tol, "d={d} est={est}");
            assert!(score > 0.5);
        }
    }

    #[test]
    fn never_returns_harmonics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.random_range(5.0..40.0);
            let phase = rng.random_range(0.0..d);
            let prof = comb_profile(3000, d, phase);
            let (est, _) = fit(&prof).unwrap();
            let est = refine_spacing(&prof, est);
            assert!(((est - d) / d).abs() <= 0.01, "d={d} est={est}");
        }
    }

    #[test]
    fn refinement_is_sub_pixel_precise() {
        let d = 13.37;
        let prof = comb_profile(4000, d, 2.0);
        let (est, _) = fit(&prof).unwrap();
        let fine = refine_spacing(&prof, est);
        assert!((fine - d).abs() < 0.002, "{est} -> {fine}");
    }

    #[test]
    fn white_noise_fails() {
        let mut failures = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prof: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
            if matches!(fit(&prof), Err(Error::Spacing { .. })) {
                failures += 1;
            }
        }
        assert!(failures >= 95, "{failures}");
    }

    #[test]
    fn stretching_scales_spacing() {
        let d = 12.0;
        for s in [0.5, 2.0] {
            let (est, _) = fit(&comb_profile(3000, d * s, 1.0)).unwrap();
            assert!(((est - d * s) / (d * s)).abs() <= 0.01);
        }
    }
}
