//! End-to-end acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ecgscan-cli --test acceptance`. Synthetic pages
//! come from the renderer, so every check has exact ground truth.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecgscan::eval::{align, evaluate_lead, snr_db};
use ecgscan::geometry::Homography;
use ecgscan::layout::{default_layouts, parse_layouts, LayoutSpec};
use ecgscan::perspective::{chord_length, find_grid_axes, GridAxes};
use ecgscan::pipeline::{digitize_image, PageInfo, PipelineConfig};
use ecgscan::raster::{Channel, Series1D};
use ecgscan::segmentation::{segment, SegmenterConfig};
use ecgscan::synth::{synthesize_signals, GroundTruth, SceneConfig};
use ecgscan::trace::{assignment_cost, brute_force_assignment, linear_sum_assignment, DigitizedECG, NanCause};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!("[{}] {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

/// Per-lead SNRs of a reconstruction, `None` for leads that could not be scored.
fn lead_snrs(ecg: &DigitizedECG, truth: &GroundTruth) -> Vec<Option<f64>> {
    let table = ecg.to_table();
    table
        .columns
        .iter()
        .map(|(lead, col)| {
            let y_hat = Series1D::new(col.iter().map(|v| v.unwrap_or(f64::NAN)).collect(), table.fs).ok()?;
            evaluate_lead(truth.signal(*lead)?, &y_hat).ok().map(|m| m.snr_db)
        })
        .collect()
}

struct PageRun {
    truth: GroundTruth,
    result: Result<(DigitizedECG, PageInfo), String>,
    seconds: f64,
    image_size: (usize, usize),
}

fn run_pages(spec: &SceneConfig, count: u64, layouts: &[LayoutSpec], cfg: &PipelineConfig) -> Vec<PageRun> {
    (0..count)
        .map(|i| {
            let rendered = spec.scene(i, layouts).and_then(|s| s.render()).expect("render");
            let t0 = Instant::now();
            let result = digitize_image(&rendered.image, cfg, "page").map_err(|e| e.to_string());
            PageRun {
                seconds: t0.elapsed().as_secs_f64(),
                image_size: (rendered.image.width(), rendered.image.height()),
                truth: rendered.truth,
                result,
            }
        })
        .collect()
}

struct SnrSummary {
    mean: f64,
    min: f64,
    leads: usize,
    unscored: usize,
    failed_pages: usize,
}

fn summarize(runs: &[PageRun]) -> SnrSummary {
    let mut all = Vec::new();
    let mut unscored = 0;
    let mut failed_pages = 0;
    for r in runs {
        match &r.result {
            Ok((ecg, _)) => {
                for s in lead_snrs(ecg, &r.truth) {
                    match s {
                        Some(v) => all.push(v),
                        None => unscored += 1,
                    }
                }
            }
            Err(_) => failed_pages += 1,
        }
    }
    SnrSummary {
        mean: all.iter().sum::<f64>() / all.len().max(1) as f64,
        min: all.iter().copied().fold(f64::INFINITY, f64::min),
        leads: all.len(),
        unscored,
        failed_pages,
    }
}

fn clean_pages(runs: &[PageRun]) -> Outcome {
    let s = summarize(runs);
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    Outcome {
        pass: s.failed_pages == 0 && s.unscored == 0 && s.mean >= 20.0 && s.min >= 12.0 && slowest <= 10.0,
        detail: format!(
            "{} pages, {} leads: mean SNR {:.2} dB, min {:.2} dB, slowest page {:.1} s, {} failed pages, {} unscored leads",
            runs.len(),
            s.leads,
            s.mean,
            s.min,
            slowest,
            s.failed_pages,
            s.unscored
        ),
    }
}

fn warped_pages(runs: &[PageRun]) -> Outcome {
    let s = summarize(runs);
    Outcome {
        pass: s.leads > 0 && s.mean >= 12.0,
        detail: format!(
            "{} pages, {} leads: mean SNR {:.2} dB (min {:.2} dB), {} failed pages, {} unscored leads",
            runs.len(),
            s.leads,
            s.mean,
            s.min,
            s.failed_pages,
            s.unscored
        ),
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Midpoint of the part of line `x cosθ + y sinθ = ρ` inside a `w × h` image.
fn chord_mid(theta: f64, rho: f64, w: usize, h: usize) -> Option<(f64, f64)> {
    let (s, c) = theta.sin_cos();
    let (px, py, dx, dy) = (rho * c, rho * s, -s, c);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (p, d, hi) in [(px, dx, w as f64 - 1.0), (py, dy, h as f64 - 1.0)] {
        if d.abs() < 1e-12 {
            if p < 0.0 || p > hi {
                return None;
            }
            continue;
        }
        let (a, b) = ((0.0 - p) / d, (hi - p) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then(|| {
        let t = 0.5 * (t0 + t1);
        (px + t * dx, py + t * dy)
    })
}

/// Largest angle, in degrees, between a recovered grid line and the true image
/// of the paper grid line through the centre of that recovered line. Checked
/// for the first, middle and last line of each family that crosses at least a
/// quarter of the shorter image side.
fn axis_error_deg(axes: &GridAxes, pull: &Homography, w: usize, h: usize) -> f64 {
    let push = pull.inverse().expect("invertible");
    let min_len = 0.25 * w.min(h) as f64;
    let mut worst: f64 = 0.0;
    for (family, (ux, uy)) in [(axes.axis_a, (0.0, 1.0)), (axes.axis_b, (1.0, 0.0))] {
        let inside: Vec<f64> = (0..=256)
            .map(|k| k as f64 / 256.0)
            .filter(|&s| {
                let (theta, rho) = family.line(s);
                chord_length(theta, rho, w, h) >= min_len
            })
            .collect();
        if inside.is_empty() {
            return f64::INFINITY;
        }
        for s in [inside[0], inside[inside.len() / 2], inside[inside.len() - 1]] {
            let (theta, rho) = family.line(s);
            let Some((x, y)) = chord_mid(theta, rho, w, h) else {
                return f64::INFINITY;
            };
            let (px, py) = pull.apply(x, y).expect("finite");
            let a = push.apply(px - 5.0 * ux, py - 5.0 * uy).expect("finite");
            let b = push.apply(px + 5.0 * ux, py + 5.0 * uy).expect("finite");
            let truth = (b.1 - a.1).atan2(b.0 - a.0);
            worst = worst.max(angle_gap(truth, theta + PI / 2.0).to_degrees());
        }
    }
    worst
}

fn page_axis_error(spec: &SceneConfig, index: u64, layouts: &[LayoutSpec]) -> f64 {
    let rendered = spec.scene(index, layouts).and_then(|s| s.render()).expect("render");
    let map = segment(&rendered.image, &SegmenterConfig::default()).expect("segment");
    match find_grid_axes(&map.channel(Channel::Grid)) {
        Ok(axes) => axis_error_deg(&axes, &rendered.truth.homography, map.width(), map.height()),
        Err(_) => f64::INFINITY,
    }
}

fn perspective(warped: &[PageRun], warped_spec: &SceneConfig, extra: &SceneConfig, extra_count: u64, layouts: &[LayoutSpec]) -> Outcome {
    let mut errors: Vec<f64> = warped
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.result {
            Ok((_, info)) => axis_error_deg(&info.axes, &r.truth.homography, r.image_size.0, r.image_size.1),
            // A later stage failed; score the grid axes of that page directly.
            Err(_) => page_axis_error(warped_spec, i as u64, layouts),
        })
        .collect();
    errors.extend((0..extra_count).map(|i| page_axis_error(extra, i, layouts)));
    let within = errors.iter().filter(|&&e| e <= 0.5).count();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    Outcome {
        pass: errors.len() == 100 && within >= 99,
        detail: format!(
            "{within}/{} homographies within 0.5 deg (median {:.3} deg, worst {:.3} deg)",
            errors.len(),
            sorted[sorted.len() / 2],
            sorted[sorted.len() - 1]
        ),
    }
}

/// A short two-strip page, so that coarse grids stay small enough to render quickly.
const STRIP_LAYOUT: &str = r#"
[[layout]]
name = "strip"
duration_s = 2.0
row_pitch_mm = 25.0
rows = [["II"], ["V1"]]
"#;

fn grid_spacing() -> Outcome {
    let layouts = parse_layouts(STRIP_LAYOUT).expect("layout");
    let cfg = PipelineConfig {
        layouts: layouts.clone(),
        force_layout: Some("strip".into()),
        ..PipelineConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut ok, mut harmonics, mut worst) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for i in 0..100u64 {
        let d: f64 = rng.random_range(5.0..40.0);
        let spec = SceneConfig {
            seed: 4000 + i,
            layouts: vec!["strip".into()],
            d_range: [d, d],
            ..SceneConfig::default()
        };
        let rendered = spec.scene(0, &layouts).and_then(|s| s.render()).expect("render");
        match digitize_image(&rendered.image, &cfg, "grid") {
            Ok((_, info)) => {
                let mut good = true;
                for est in [info.spacing.d_x, info.spacing.d_y] {
                    let rel = (est - d).abs() / d;
                    worst = worst.max(rel);
                    good &= rel <= 0.01;
                    if (est - 5.0 * d).abs() <= 0.05 * d || (est - d / 5.0).abs() <= 0.01 * d {
                        harmonics += 1;
                    }
                }
                if good {
                    ok += 1;
                } else {
                    failures.push(format!("d={d:.2}->({:.3},{:.3})", info.spacing.d_x, info.spacing.d_y));
                }
            }
            Err(e) => failures.push(format!("d={d:.2}: {e}")),
        }
    }
    Outcome {
        pass: ok == 100 && harmonics == 0,
        detail: format!(
            "{ok}/100 within 1% (worst {:.3}%), {harmonics} harmonic estimates{}",
            100.0 * worst,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    }
}

fn layout_identification(layouts: &[LayoutSpec]) -> Outcome {
    let cfg = PipelineConfig::default();
    let (mut correct, mut total, mut with_deletions, mut two_deleted) = (0, 0, 0, 0);
    let mut wrong = Vec::new();
    for (li, name) in ["3x4", "6x2", "12x1"].iter().enumerate() {
        let spec = SceneConfig {
            seed: 500 + li as u64,
            layouts: vec![name.to_string()],
            max_deleted_markers: 2,
            ..SceneConfig::default()
        };
        for i in 0..20 {
            let scene = spec.scene(i, layouts).expect("scene");
            let deleted = scene.spec.omit_markers.len();
            with_deletions += usize::from(deleted > 0);
            two_deleted += usize::from(deleted == 2);
            let rendered = scene.render().expect("render");
            total += 1;
            match digitize_image(&rendered.image, &cfg, "layout") {
                Ok((_, info)) if info.layout == *name && info.layout_cost.is_some() => correct += 1,
                Ok((_, info)) => wrong.push(format!("{name}#{i}->{}", info.layout)),
                Err(e) => wrong.push(format!("{name}#{i}: {e}")),
            }
        }
    }
    Outcome {
        pass: correct == total,
        detail: format!(
            "{correct}/{total} identified ({with_deletions} pages with deleted markers, {two_deleted} with two){}",
            if wrong.is_empty() { String::new() } else { format!("; wrong: {}", wrong.join(", ")) }
        ),
    }
}

fn assignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let rows = rng.random_range(1..=7);
        let cols = rng.random_range(rows..=7);
        let cost: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..100) as f64).collect();
        let solved = linear_sum_assignment(&cost, rows, cols).map(|a| assignment_cost(&cost, cols, &a));
        let (_, best) = brute_force_assignment(&cost, rows, cols).expect("feasible");
        if solved.ok() != Some(best) {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{} of 1000 instances differ from brute force", mismatches),
    }
}

fn metric_fidelity() -> Outcome {
    let fs = 1000.0;
    let y = synthesize_signals(77, 1, 2.5, fs).expect("signal").remove(0);
    let zeros = vec![0.0; y.len()];
    let snr_zero = snr_db(&y.values, &zeros).expect("defined");
    let scaled: Vec<f64> = y.values.iter().map(|v| 0.9 * v).collect();
    let snr_scaled = snr_db(&y.values, &scaled).expect("defined");
    let n = y.len();
    let mut exact = 0;
    for delay in -100i64..=100 {
        // The reconstruction lags by `delay` samples (1 ms each).
        let shifted: Vec<f64> = (0..n as i64)
            .map(|t| {
                let src = t - delay;
                if (0..n as i64).contains(&src) {
                    y.values[src as usize]
                } else {
                    f64::NAN
                }
            })
            .collect();
        let a = align(&y, &Series1D::new(shifted, fs).expect("series")).expect("aligned");
        if a.shift_samples == delay && a.shift_ms == delay as f64 {
            exact += 1;
        }
    }
    Outcome {
        pass: snr_zero == 0.0 && (snr_scaled - 20.0).abs() <= 1e-9 && exact == 201,
        detail: format!(
            "SNR(y, 0) = {snr_zero} dB, SNR(y, 0.9y) = {snr_scaled:.12} dB, {exact}/201 delays in [-100, 100] ms recovered exactly"
        ),
    }
}

fn nan_discipline(runs: &[PageRun]) -> Outcome {
    let (mut nan, mut samples, mut unaccounted, mut failures) = (0usize, 0usize, 0usize, 0usize);
    let mut worst: f64 = 0.0;
    for r in runs {
        let Ok((ecg, _)) = &r.result else {
            failures += 1;
            continue;
        };
        worst = worst.max(ecg.nan_fraction());
        for lead in &ecg.leads {
            samples += lead.signal.len();
            nan += lead.signal.values.iter().filter(|v| v.is_nan()).count();
            unaccounted += usize::from(!lead.nan_accounted());
            failures += lead.causes.iter().filter(|c| **c == Some(NanCause::Failure)).count();
        }
    }
    let overall = nan as f64 / samples.max(1) as f64;
    Outcome {
        pass: worst <= 0.005 && unaccounted == 0 && failures == 0,
        detail: format!(
            "NaN fraction {:.4}% overall, {:.4}% worst page; {unaccounted} leads with unattributed NaN; {failures} failure NaNs",
            100.0 * overall,
            100.0 * worst
        ),
    }
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read"))
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let bin = env!("CARGO_BIN_EXE_ecgscan");
    let spec = tmp.path().join("spec.toml");
    std::fs::write(&spec, "seed = 99\nd_range = [7.0, 9.0]\nmax_rotation_deg = 3.0\nmax_corner_shift = 0.01\n").unwrap();
    let pages = tmp.path().join("pages");
    let run = |args: &[&str]| Command::new(bin).args(args).output().expect("run ecgscan");
    let synth = run(&["synthesize", spec.to_str().unwrap(), "--count", "4", "--out", pages.to_str().unwrap()]);
    if !synth.status.success() {
        return Outcome {
            pass: false,
            detail: format!("synthesize failed: {}", String::from_utf8_lossy(&synth.stderr)),
        };
    }
    let mut outs = Vec::new();
    for workers in ["1", "8"] {
        let out = tmp.path().join(format!("out{workers}"));
        let r = run(&["digitize", pages.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        if !r.status.success() {
            return Outcome {
                pass: false,
                detail: format!("digitize --workers {workers} failed: {}", String::from_utf8_lossy(&r.stderr)),
            };
        }
        outs.push(files_in(&out));
    }
    let same = outs[0] == outs[1];
    Outcome {
        pass: same && outs[0].len() == 5,
        detail: format!(
            "{} files from --workers 1, {} from --workers 8, {}",
            outs[0].len(),
            outs[1].len(),
            if same { "byte-identical" } else { "contents differ" }
        ),
    }
}

fn main() {
    let layouts = default_layouts();
    let cfg = PipelineConfig::default();
    let mut results = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        results.push(o.pass);
    };

    let clean_spec = SceneConfig {
        seed: 101,
        ..SceneConfig::default()
    };
    let clean = run_pages(&clean_spec, 50, &layouts, &cfg);
    record(1, "clean pages", clean_pages(&clean));

    let warped_spec = SceneConfig {
        seed: 202,
        max_rotation_deg: 10.0,
        max_corner_shift: 0.03,
        ..SceneConfig::default()
    };
    let warped = run_pages(&warped_spec, 50, &layouts, &cfg);
    record(2, "warped pages", warped_pages(&warped));

    let extra = SceneConfig {
        seed: 303,
        ..warped_spec.clone()
    };
    record(3, "perspective recovery", perspective(&warped, &warped_spec, &extra, 50, &layouts));
    record(4, "grid spacing", grid_spacing());
    record(5, "layout identification", layout_identification(&layouts));
    record(6, "assignment optimality", assignment_optimality());
    record(7, "metric fidelity", metric_fidelity());
    record(8, "NaN discipline", nan_discipline(&clean));
    record(9, "worker determinism", determinism());

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
