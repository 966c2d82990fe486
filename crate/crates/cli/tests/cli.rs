use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ecgscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgscan")).args(args).output().expect("run ecgscan")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_str().unwrap().ends_with(suffix))
        .collect();
    v.sort();
    v
}

/// Renders `count` small clean pages into `dir/pages`.
fn synth(dir: &Path, count: usize, extra: &str) -> PathBuf {
    let spec = dir.join("scene.toml");
    fs::write(&spec, format!("seed = 17\nd_range = [7.0, 8.0]\n{extra}")).unwrap();
    let pages = dir.join("pages");
    ok(&ecgscan(&["synthesize", s(&spec), "--count", &count.to_string(), "--out", s(&pages)]));
    pages
}

fn report_rows(out: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(out.join("report.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn batch_digitize_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let pages = synth(dir.path(), 5, "");
    let pred = dir.path().join("pred");
    ok(&ecgscan(&["digitize", s(&pages), "--out", s(&pred), "--workers", "2"]));
    assert_eq!(files_with(&pred, ".csv").len(), 6, "5 signal files plus report.csv");
    let rows = report_rows(&pred);
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[1] == "ok"), "{rows:?}");

    let eval = ecgscan(&["evaluate", s(&pred), s(&pages)]);
    ok(&eval);
    let metrics = fs::read_to_string(pred.join("metrics.csv")).unwrap();
    let snrs: Vec<f64> = metrics.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(snrs.len() >= 5 * 12);
    let mean = snrs.iter().sum::<f64>() / snrs.len() as f64;
    assert!(mean > 20.0, "mean SNR {mean}");
    let agg = fs::read_to_string(pred.join("aggregate.csv")).unwrap();
    assert!(agg.lines().any(|l| l.starts_with("all,")), "{agg}");

    // A corrupt file fails on its own; the rest of the batch still succeeds.
    let mixed = dir.path().join("mixed");
    fs::create_dir(&mixed).unwrap();
    for p in files_with(&pages, ".png").iter().take(4) {
        fs::copy(p, mixed.join(p.file_name().unwrap())).unwrap();
    }
    fs::write(mixed.join("broken.png"), b"not a png at all").unwrap();
    let out = dir.path().join("mixed_out");
    ok(&ecgscan(&["digitize", s(&mixed), "--out", s(&out), "--workers", "1"]));
    let rows = report_rows(&out);
    assert_eq!(rows.len(), 5);
    let failed: Vec<_> = rows.iter().filter(|r| r[1] == "failed").collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0][0].ends_with("broken.png"));
    assert_eq!(files_with(&out, ".csv").len(), 5, "4 signal files plus report.csv");
}

#[test]
fn forced_layout_without_markers() {
    let dir = tempfile::tempdir().unwrap();
    let pages = synth(dir.path(), 1, "layouts = [\"6x2\"]\ndraw_markers = false\n");
    let forced = dir.path().join("forced");
    ok(&ecgscan(&["digitize", s(&pages), "--out", s(&forced), "--force-layout", "6x2"]));
    let rows = report_rows(&forced);
    assert_eq!(rows[0][1], "ok", "{rows:?}");
    assert_eq!(rows[0][3], "6x2");

    // Without markers or a forced layout the page fails but still gets a file.
    let plain = dir.path().join("plain");
    ok(&ecgscan(&["digitize", s(&pages), "--out", s(&plain)]));
    let rows = report_rows(&plain);
    assert_eq!(rows[0][1], "failed", "{rows:?}");
    assert_eq!(files_with(&plain, ".csv").len(), 2);
}

#[test]
fn evaluate_reference_against_itself_and_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let pages = synth(dir.path(), 1, "");
    let reference = files_with(&pages, ".ref.csv").remove(0);
    let stem = reference.file_name().unwrap().to_str().unwrap().trim_end_matches(".ref.csv").to_string();

    let same = dir.path().join("same");
    fs::create_dir(&same).unwrap();
    fs::copy(&reference, same.join(format!("{stem}.csv"))).unwrap();
    ok(&ecgscan(&["evaluate", s(&same), s(&pages)]));
    let metrics = fs::read_to_string(same.join("metrics.csv")).unwrap();
    for l in metrics.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[2], "inf", "{l}");
        assert_eq!(f[4].parse::<f64>().unwrap(), 1.0, "{l}");
    }

    let zeros = dir.path().join("zeros");
    fs::create_dir(&zeros).unwrap();
    let text = fs::read_to_string(&reference).unwrap();
    let mut lines = text.lines();
    let mut z = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let mut f = l.split(',');
        let t = f.next().unwrap();
        z.push_str(t);
        for _ in f {
            z.push_str(",0");
        }
        z.push('\n');
    }
    fs::write(zeros.join(format!("{stem}.csv")), z).unwrap();
    ok(&ecgscan(&["evaluate", s(&zeros), s(&pages)]));
    let metrics = fs::read_to_string(zeros.join("metrics.csv")).unwrap();
    for l in metrics.lines().skip(1) {
        let snr: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!(snr.abs() < 1e-3, "{l}");
    }
}

#[test]
fn synthesis_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&ecgscan(&["synthesize", "--count", "2", "--seed", "42", "--out", s(d.path())]));
    }
    let names = files_with(a.path(), "");
    assert_eq!(names.len(), 6);
    for p in names {
        assert_eq!(fs::read(&p).unwrap(), fs::read(b.path().join(p.file_name().unwrap())).unwrap());
    }
    let sidecar = fs::read_to_string(a.path().join("synth_0000.truth.txt")).unwrap();
    let d: f64 = sidecar
        .lines()
        .find_map(|l| l.strip_prefix("grid_minor_px = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((8.0..=20.0).contains(&d));
    let h = sidecar.lines().find_map(|l| l.strip_prefix("homography = ")).unwrap();
    assert_eq!(h.split_whitespace().count(), 9);
}

#[test]
fn configuration_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.png");
    fs::write(&img, b"").unwrap();
    let out = dir.path().join("out");
    let bad_toml = dir.path().join("bad.toml");
    fs::write(&bad_toml, "x").unwrap();
    let bad_fs = dir.path().join("fs.toml");
    fs::write(&bad_fs, "[pipeline]\ntarget_fs = 5\n").unwrap();
    let cases: [&[&str]; 5] = [
        &["--config", s(&bad_toml)],
        &["--config", s(&bad_fs)],
        &["--speed", "30"],
        &["--force-layout", "no-such-layout"],
        &["--workers", "0"],
    ];
    for extra in cases {
        let mut args = vec!["digitize", s(&img), "--out", s(&out)];
        args.extend_from_slice(extra);
        assert_eq!(ecgscan(&args).status.code(), Some(2), "{extra:?}");
    }
    assert!(!out.join("report.csv").exists());
}
