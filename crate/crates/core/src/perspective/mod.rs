//! Grid-direction recovery in the angle-radius / angle-angle domains and
//! projective rectification of the probability map.

mod hough;

pub use hough::{angle_angle, angle_angle_banded, chord_length, hough, linspace, AngleAnglePlane, HoughAccumulator};

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Rect};
use crate::grid_scale::{axis_spacing, Axis};
use crate::raster::{Channel, Plane, ProbMap};

pub const COARSE_BINS: usize = 360;
/// Odd, so that a window centred on a coarse angle samples that angle exactly.
pub const FINE_BINS: usize = 129;
pub const FINE_MARGIN: f64 = 2.0 * PI / 180.0;
/// Largest `|θ_bottom - θ_top|` examined in the coarse pass.
pub const COARSE_BAND: f64 = 30.0 * PI / 180.0;
/// The Hough passes run on a block-averaged copy with at most this many
/// pixels per side; at this size minor grid lines stay about 4 px apart.
pub const HOUGH_MAX_SIDE: usize = 1200;
/// Rectifications that move no image corner by this much are replaced by the identity.
pub const IDENTITY_SNAP_PX: f64 = 1.0;

/// One family of near-parallel grid lines: a straight segment of the
/// angle-radius plane from `(theta_bottom, rho_min)` to `(theta_top, rho_max)`.
/// Radii refer to the analysis grid, which is `scale` times coarser than the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFamily {
    pub theta_bottom: f64,
    pub theta_top: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub scale: usize,
}

impl LineFamily {
    pub fn midline(&self) -> f64 {
        0.5 * (self.theta_bottom + self.theta_top)
    }

    /// Line at fraction `s` along the family as `(θ, ρ)` in full-resolution pixels.
    pub fn line(&self, s: f64) -> (f64, f64) {
        let theta = self.theta_bottom + s * (self.theta_top - self.theta_bottom);
        let rho = self.rho_min + s * (self.rho_max - self.rho_min);
        let k = self.scale as f64;
        let (sn, cs) = theta.sin_cos();
        (theta, k * rho + 0.5 * (k - 1.0) * (cs + sn))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridAxes {
    /// Family of lines that become vertical.
    pub axis_a: LineFamily,
    /// Family of lines that become horizontal.
    pub axis_b: LineFamily,
    pub vanishing_a: Vector3<f64>,
    pub vanishing_b: Vector3<f64>,
    /// Image pixel → rectified pixel.
    pub rectify: Homography,
    pub width: usize,
    pub height: usize,
}

/// Intermediate results kept for debugging.
#[derive(Clone, Debug)]
pub struct AxesDebug {
    pub coarse: HoughAccumulator,
    pub coarse_plane: AngleAnglePlane,
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Block-averages `plane` by an integer factor so that neither side exceeds `max_side`.
fn downsample(plane: &Plane<'_>, max_side: usize) -> (usize, usize, usize, Vec<f32>) {
    let k = plane.width.max(plane.height).div_ceil(max_side).max(1);
    if k == 1 {
        return (1, plane.width, plane.height, plane.data.to_vec());
    }
    let (w, h) = (plane.width / k, plane.height / k);
    let mut out = vec![0.0f32; w * h];
    let norm = 1.0 / (k * k) as f32;
    for y in 0..h * k {
        let row = &plane.data[y * plane.width..y * plane.width + w * k];
        let dst = &mut out[(y / k) * w..(y / k + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            dst[x / k] += v * norm;
        }
    }
    (k, w, h, out)
}

/// Lines shorter than this inside the image are left out of the angle-angle
/// scores, so that lines clipping a corner cannot win on density alone.
fn min_chord(plane: &Plane<'_>) -> f64 {
    0.25 * plane.width.min(plane.height) as f64
}

fn refine_family(plane: &Plane<'_>, lo: f64, hi: f64, scale: usize) -> Result<LineFamily> {
    let thetas = linspace(lo - FINE_MARGIN, hi + FINE_MARGIN, FINE_BINS, false);
    let acc = hough(plane, &thetas)?.per_unit_length(plane.width, plane.height, min_chord(plane));
    let aa = angle_angle(&acc);
    let (i, j) = aa
        .argmax()
        .ok_or_else(|| Error::Perspective("no line family in refinement window".into()))?;
    // Parabolic interpolation between neighbouring bins on each axis.
    let n = aa.n();
    let step = thetas[1] - thetas[0];
    let vertex = |a: f64, b: f64, c: f64| {
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let di = if i > 0 && i + 1 < n { vertex(aa.get(i - 1, j), aa.get(i, j), aa.get(i + 1, j)) } else { 0.0 };
    let dj = if j > 0 && j + 1 < n { vertex(aa.get(i, j - 1), aa.get(i, j), aa.get(i, j + 1)) } else { 0.0 };
    Ok(LineFamily {
        theta_bottom: aa.thetas_bottom[i] + di * step,
        theta_top: aa.thetas_top[j] + dj * step,
        rho_min: aa.rho_min,
        rho_max: aa.rho_max,
        scale,
    })
}

/// Least-squares common point of the family's lines that cross the image.
fn vanishing_point(f: &LineFamily, width: usize, height: usize) -> Result<Vector3<f64>> {
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let s = width.max(height) as f64 / 2.0;
    let corners = [(0.0, 0.0), ((width - 1) as f64, 0.0), (0.0, (height - 1) as f64), ((width - 1) as f64, (height - 1) as f64)];
    let mut m = Matrix3::zeros();
    let mut used = 0;
    for k in 0..=64 {
        let (theta, rho) = f.line(k as f64 / 64.0);
        let (sn, cs) = theta.sin_cos();
        let side = corners.map(|(x, y)| x * cs + y * sn - rho);
        let crosses = side.iter().any(|&v| v <= 0.0) && side.iter().any(|&v| v >= 0.0);
        if !crosses {
            continue;
        }
        let l = Vector3::new(s * cs, s * sn, cx * cs + cy * sn - rho).normalize();
        m += l * l.transpose();
        used += 1;
    }
    if used < 2 {
        return Err(Error::Perspective("line family does not cross the image".into()));
    }
    let eig = SymmetricEigen::new(m);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let v = eig.eigenvectors.column(imin);
    Ok(Vector3::new(s * v[0] + cx * v[2], s * v[1] + cy * v[2], v[2]))
}

/// Homography sending lines through `va` to verticals and lines through `vb` to
/// horizontals, locally isometric at the image centre, with the warped image
/// placed at the origin.
fn rectifier(va: &Vector3<f64>, vb: &Vector3<f64>, width: usize, height: usize) -> Result<(Homography, usize, usize)> {
    let c = Vector3::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0, 1.0);
    let mut r3 = va.cross(vb);
    let w0 = r3.dot(&c);
    if w0.abs() < 1e-12 * r3.norm() {
        return Err(Error::Perspective("horizon passes through the image centre".into()));
    }
    if w0 < 0.0 {
        r3 = -r3;
    }
    let w0 = r3.dot(&c);
    let mut r1 = va.cross(&c);
    let mut r2 = vb.cross(&c);
    let g1 = (r1[0] * r1[0] + r1[1] * r1[1]).sqrt();
    let g2 = (r2[0] * r2[0] + r2[1] * r2[1]).sqrt();
    if g1 < 1e-12 || g2 < 1e-12 {
        return Err(Error::Perspective("degenerate vanishing points".into()));
    }
    r1 *= w0 / g1 * r1[0].signum();
    r2 *= w0 / g2 * r2[1].signum();
    // Keep the output near the input position before the final translation.
    let h = Homography(Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]));
    let h = Homography::translation(c.x, c.y).then_after(&h);
    let corners = [
        (-0.5, -0.5),
        (width as f64 - 0.5, -0.5),
        (width as f64 - 0.5, height as f64 - 0.5),
        (-0.5, height as f64 - 0.5),
    ];
    let mut mapped = Vec::new();
    for &(x, y) in &corners {
        let p = h.0 * Vector3::new(x, y, 1.0);
        if p.z <= 0.0 {
            return Err(Error::Perspective("image crosses the vanishing line".into()));
        }
        mapped.push((p.x / p.z, p.y / p.z));
    }
    let displacement = corners
        .iter()
        .zip(&mapped)
        .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
        .fold(0.0, f64::max);
    if displacement < IDENTITY_SNAP_PX {
        return Ok((Homography::identity(), width, height));
    }
    let min_x = mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_y = mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_x = mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_y = mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (ow, oh) = ((max_x - min_x).ceil() as usize, (max_y - min_y).ceil() as usize);
    if ow == 0 || oh == 0 || ow > 2 * width || oh > 2 * height {
        return Err(Error::Perspective(format!("rectified canvas {ow}x{oh} out of bounds")));
    }
    let h = Homography::translation(-min_x - 0.5, -min_y - 0.5).then_after(&h);
    Ok((h, ow, oh))
}

/// Two-pass search for the two grid line families and the rectifying transform.
pub fn find_grid_axes(grid: &Plane<'_>) -> Result<GridAxes> {
    find_grid_axes_debug(grid).map(|(a, _)| a)
}

pub fn find_grid_axes_debug(grid: &Plane<'_>) -> Result<(GridAxes, AxesDebug)> {
    let (k, w, h, small) = downsample(grid, HOUGH_MAX_SIDE);
    let plane = Plane::new(w, h, &small);
    let thetas = linspace(-FRAC_PI_4, 3.0 * FRAC_PI_4, COARSE_BINS, true);
    let coarse = hough(&plane, &thetas)?;
    let step = PI / COARSE_BINS as f64;
    let band = (COARSE_BAND / step).round() as usize;
    let aa = angle_angle_banded(&coarse.per_unit_length(w, h, min_chord(&plane)), band);
    let mid = |i: usize, j: usize| 0.5 * (aa.thetas_bottom[i] + aa.thetas_top[j]);
    let (i1, j1) = aa
        .argmax()
        .ok_or_else(|| Error::Perspective("no grid direction found".into()))?;
    let m1 = mid(i1, j1);
    let (i2, j2) = aa
        .argmax_where(|i, j| angle_gap(mid(i, j), m1) >= FRAC_PI_4)
        .ok_or_else(|| Error::Perspective("no second grid direction at least 45° from the first".into()))?;
    let span = |i: usize, j: usize| {
        let (a, b) = (aa.thetas_bottom[i], aa.thetas_top[j]);
        (a.min(b), a.max(b))
    };
    let (lo1, hi1) = span(i1, j1);
    let (lo2, hi2) = span(i2, j2);
    let f1 = refine_family(&plane, lo1, hi1, k)?;
    let f2 = refine_family(&plane, lo2, hi2, k)?;
    // The family whose direction is closer to θ = 0 consists of near-vertical lines.
    let (fa, fb) = if angle_gap(f1.midline(), 0.0) <= angle_gap(f2.midline(), 0.0) {
        (f1, f2)
    } else {
        (f2, f1)
    };
    let va = vanishing_point(&fa, grid.width, grid.height)?;
    let vb = vanishing_point(&fb, grid.width, grid.height)?;
    let (rectify, width, height) = rectifier(&va, &vb, grid.width, grid.height)?;
    log::debug!(
        "grid axes: a=({:.3}°, {:.3}°) b=({:.3}°, {:.3}°) -> {width}x{height}",
        fa.theta_bottom.to_degrees(),
        fa.theta_top.to_degrees(),
        fb.theta_bottom.to_degrees(),
        fb.theta_top.to_degrees()
    );
    Ok((
        GridAxes {
            axis_a: fa,
            axis_b: fb,
            vanishing_a: va,
            vanishing_b: vb,
            rectify,
            width,
            height,
        },
        AxesDebug { coarse, coarse_plane: aa },
    ))
}

/// Rectified and cropped probability map.
#[derive(Clone, Debug)]
pub struct Dewarped {
    pub map: ProbMap,
    /// Crop rectangle in rectified coordinates.
    pub crop: Rect,
    /// Input pixel → output pixel.
    pub transform: Homography,
}

/// Resamples `map` under `h` (input → output) into the window `[x0, x0+w) × [y0, y0+h)`
/// of the output frame; samples outside the input are pure background.
fn resample(map: &ProbMap, h: &Homography, x0: usize, y0: usize, w: usize, hgt: usize) -> Result<ProbMap> {
    let inv = h.inverse()?.0;
    let (sw, sh, nc) = (map.width(), map.height(), map.channels());
    let n_in = sw * sh;
    let src = map.data();
    let n = w * hgt;
    let mut out = vec![0.0f32; n * nc];
    for v in 0..hgt {
        for u in 0..w {
            let (ux, vy) = ((u + x0) as f64, (v + y0) as f64);
            let p = inv * Vector3::new(ux, vy, 1.0);
            let o = v * w + u;
            let inside = p.z.abs() > 1e-12 && {
                let (x, y) = (p.x / p.z, p.y / p.z);
                x > -0.5 && y > -0.5 && x < sw as f64 - 0.5 && y < sh as f64 - 0.5
            };
            if !inside {
                out[o] = 1.0;
                continue;
            }
            let x = (p.x / p.z).clamp(0.0, (sw - 1) as f64);
            let y = (p.y / p.z).clamp(0.0, (sh - 1) as f64);
            let (xa, ya) = (x.floor() as usize, y.floor() as usize);
            let (xb, yb) = ((xa + 1).min(sw - 1), (ya + 1).min(sh - 1));
            let (fx, fy) = ((x - xa as f64) as f32, (y - ya as f64) as f32);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w10 = fx * (1.0 - fy);
            let w01 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            let (i00, i10, i01, i11) = (ya * sw + xa, ya * sw + xb, yb * sw + xa, yb * sw + xb);
            for c in 0..nc {
                let b = c * n_in;
                let s = src[b + i00] * w00 + src[b + i10] * w10 + src[b + i01] * w01 + src[b + i11] * w11;
                out[c * n + o] = s.clamp(0.0, 1.0);
            }
        }
    }
    ProbMap::new(w, hgt, nc, out)
}

fn copy_window(map: &ProbMap, x0: usize, y0: usize, w: usize, h: usize) -> Result<ProbMap> {
    let planes = (0..map.channels())
        .map(|c| {
            let p = map.plane(c);
            let mut out = Vec::with_capacity(w * h);
            for y in y0..y0 + h {
                out.extend_from_slice(&p.data[y * p.width + x0..y * p.width + x0 + w]);
            }
            out
        })
        .collect();
    ProbMap::from_planes(w, h, planes)
}

/// Rectifies every channel under `axes.rectify` and crops to the signal
/// extent plus two major grid cells (ten minor cells) on every side.
pub fn dewarp_and_crop(map: &ProbMap, axes: &GridAxes) -> Result<Dewarped> {
    let identity = axes.rectify.is_identity(0.0);
    let (rw, rh) = (axes.width, axes.height);

    // Spacing on the rectified grid channel sets the margin.
    let rect_grid;
    let grid_plane = if identity {
        map.channel(Channel::Grid)
    } else {
        let single = ProbMap::from_planes(map.width(), map.height(), vec![map.channel(Channel::Grid).data.to_vec()])?;
        rect_grid = resample(&single, &axes.rectify, 0, 0, rw, rh)?;
        rect_grid.plane(0)
    };
    let margin = |axis| {
        axis_spacing(&grid_plane, axis)
            .map(|(d, _)| 10.0 * d)
            .unwrap_or(0.05 * rw.min(rh) as f64)
    };
    let (mx, my) = (margin(Axis::Horizontal), margin(Axis::Vertical));

    let signal = map.channel(Channel::Signal);
    let (mut bx0, mut by0, mut bx1, mut by1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, &p) in signal.data.iter().enumerate() {
        if p < 0.5 {
            continue;
        }
        let (x, y) = ((i % signal.width) as f64, (i / signal.width) as f64);
        if let Some((u, v)) = axes.rectify.apply(x, y) {
            bx0 = bx0.min(u);
            by0 = by0.min(v);
            bx1 = bx1.max(u);
            by1 = by1.max(v);
        }
    }
    let full = Rect { x0: 0.0, y0: 0.0, x1: rw as f64, y1: rh as f64 };
    let crop = if bx0.is_finite() {
        Rect {
            x0: (bx0 - mx).floor(),
            y0: (by0 - my).floor(),
            x1: (bx1 + mx).ceil() + 1.0,
            y1: (by1 + my).ceil() + 1.0,
        }
        .intersect(&full)
    } else {
        full
    };
    let (x0, y0) = (crop.x0 as usize, crop.y0 as usize);
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let out = if identity {
        copy_window(map, x0, y0, w, h)?
    } else {
        resample(map, &axes.rectify, x0, y0, w, h)?
    };
    Ok(Dewarped {
        map: out,
        crop,
        transform: Homography::translation(-crop.x0, -crop.y0).then_after(&axes.rectify),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::MAIN_CHANNELS;

    /// Grid channel of a page whose paper pixels are pulled through `pull`.
    fn grid_under(w: usize, h: usize, d: f64, pull: &Homography) -> Vec<f32> {
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = pull.apply(x as f64, y as f64).unwrap();
                let near = |v: f64| {
                    let r = v / d - (v / d).round();
                    (1.0 - (r * d).abs()).max(0.0)
                };
                out[y * w + x] = near(px).max(near(py)) as f32;
            }
        }
        out
    }

    #[test]
    fn axis_aligned_grid_gives_identity() {
        let (w, h) = (300, 200);
        let g = grid_under(w, h, 7.0, &Homography::identity());
        let axes = find_grid_axes(&Plane::new(w, h, &g)).unwrap();
        assert!(axes.axis_a.midline().abs() < 0.1f64.to_radians());
        assert!((axes.axis_b.midline() - PI / 2.0).abs() < 0.1f64.to_radians());
        assert!(axes.rectify.is_identity(0.0));
        assert_eq!((axes.width, axes.height), (w, h));
    }

    #[test]
    fn rotated_grid_axes_within_half_degree() {
        let (w, h) = (400, 300);
        let angle = 10f64.to_radians();
        let pull = Homography::rotation_about(200.0, 150.0, angle);
        let g = grid_under(w, h, 9.0, &pull);
        let axes = find_grid_axes(&Plane::new(w, h, &g)).unwrap();
        // Paper verticals appear rotated by -angle in the image (pull rotates by +angle).
        for f in [axes.axis_a, axes.axis_b] {
            let expect = if angle_gap(f.midline(), 0.0) < FRAC_PI_4 { -angle } else { PI / 2.0 - angle };
            assert!(angle_gap(f.theta_bottom, expect) < 0.5f64.to_radians(), "{}", f.theta_bottom.to_degrees());
            assert!(angle_gap(f.theta_top, expect) < 0.5f64.to_radians());
        }
    }

    #[test]
    fn families_are_separated_and_empty_grid_is_degenerate() {
        let (w, h) = (300, 240);
        let g = grid_under(w, h, 8.0, &Homography::rotation_about(150.0, 120.0, 0.3));
        let axes = find_grid_axes(&Plane::new(w, h, &g)).unwrap();
        assert!(angle_gap(axes.axis_a.midline(), axes.axis_b.midline()) >= FRAC_PI_4);
        let empty = vec![0.0f32; 64 * 64];
        assert!(matches!(find_grid_axes(&Plane::new(64, 64, &empty)), Err(Error::DegenerateInput(_))));
    }

    fn map_with_signal(w: usize, h: usize, signal: impl Fn(usize, usize) -> bool) -> ProbMap {
        let grid: Vec<f32> = (0..w * h)
            .map(|i| if (i % w) % 6 == 0 || (i / w) % 6 == 0 { 1.0 } else { 0.0 })
            .collect();
        let sig: Vec<f32> = (0..w * h).map(|i| if signal(i % w, i / w) { 1.0 } else { 0.0 }).collect();
        let bg: Vec<f32> = grid.iter().zip(&sig).map(|(g, s)| 1.0 - g.max(*s)).collect();
        ProbMap::from_planes(w, h, vec![bg, grid, sig, vec![0.0; w * h]]).unwrap()
    }

    #[test]
    fn identity_dewarp_keeps_pixels_and_crops_to_signal() {
        let (w, h) = (240, 200);
        let map = map_with_signal(w, h, |x, y| y == 150 && (100..140).contains(&x));
        let axes = find_grid_axes(&map.channel(Channel::Grid)).unwrap();
        let out = dewarp_and_crop(&map, &axes).unwrap();
        assert_eq!(out.map.channels(), MAIN_CHANNELS);
        // Margin of ten 6 px cells: rows 90..=199 and columns 40..=199 survive.
        assert_eq!(out.crop, Rect { x0: 40.0, y0: 90.0, x1: 200.0, y1: 200.0 });
        let s = out.map.channel(Channel::Signal);
        assert_eq!(s.get(60, 60), 1.0);
        assert_eq!(out.map.channel(Channel::Grid).get(2, 0), 1.0);
    }

    #[test]
    fn empty_signal_keeps_full_extent() {
        let map = map_with_signal(120, 90, |_, _| false);
        let axes = find_grid_axes(&map.channel(Channel::Grid)).unwrap();
        let out = dewarp_and_crop(&map, &axes).unwrap();
        assert_eq!((out.map.width(), out.map.height()), (120, 90));
    }
}
