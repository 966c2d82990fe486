//! Per-image orchestration and the batch drivers behind the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{self, MetricsRow};
use crate::glyph::GlyphLibrary;
use crate::grid_scale::{estimate_grid_spacing, GridSpacing};
use crate::layout::{markers_from_text_channel, default_layouts, read_layouts, LayoutSpec, LeadName};
use crate::perspective::{dewarp_and_crop, find_grid_axes_debug, AngleAnglePlane, GridAxes, AxesDebug, HoughAccumulator};
use crate::raster::{load_image, save_png, write_probmap, Channel, ProbMap, RgbRaster, Series1D};
use crate::segmentation::{segment, SegmentationMode, SegmenterConfig};
use crate::signal_csv::SignalTable;
use crate::synth::{GroundTruth, SceneConfig};
use crate::trace::{to_physical, trace_signal, DigitizedECG, TRACE_THRESHOLD};

/// Everything that steers a digitization run.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// mm/s.
    pub paper_speed: f64,
    /// mm/mV.
    pub gain: f64,
    pub target_fs: f64,
    pub layouts: Vec<LayoutSpec>,
    /// Skip marker matching and use this layout.
    pub force_layout: Option<String>,
    /// Layout used when marker matching fails, and for all-NaN outputs.
    pub fallback_layout: Option<String>,
    pub segmentation: SegmenterConfig,
    /// Where `<stem>.pmap` files live in external segmentation mode.
    pub probmap_dir: Option<PathBuf>,
    pub trace_threshold: f32,
    /// Millimetres per minor grid cell.
    pub grid_mm_per_minor: f64,
    /// Minor-cell spacing in pixels assumed when the grid fit fails.
    pub fallback_d_px: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paper_speed: 25.0,
            gain: 10.0,
            target_fs: 500.0,
            layouts: default_layouts(),
            force_layout: None,
            fallback_layout: None,
            segmentation: SegmenterConfig::default(),
            probmap_dir: None,
            trace_threshold: TRACE_THRESHOLD,
            grid_mm_per_minor: 1.0,
            fallback_d_px: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PipelineSection {
    paper_speed: Option<f64>,
    gain: Option<f64>,
    target_fs: Option<f64>,
    layouts: Option<PathBuf>,
    force_layout: Option<String>,
    fallback_layout: Option<String>,
    probmap_dir: Option<PathBuf>,
    trace_threshold: Option<f32>,
    grid_mm_per_minor: Option<f64>,
    fallback_d_px: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    pipeline: PipelineSection,
    segmentation: Option<SegmenterConfig>,
}

impl PipelineConfig {
    /// Reads a TOML file with optional `[pipeline]` and `[segmentation]`
    /// tables; relative paths resolve against the file's directory.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut cfg = Self::default();
        let p = file.pipeline;
        if let Some(v) = p.paper_speed {
            cfg.paper_speed = v;
        }
        if let Some(v) = p.gain {
            cfg.gain = v;
        }
        if let Some(v) = p.target_fs {
            cfg.target_fs = v;
        }
        if let Some(l) = p.layouts {
            cfg.layouts = read_layouts(base.join(l)).map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.force_layout = p.force_layout;
        cfg.fallback_layout = p.fallback_layout;
        cfg.probmap_dir = p.probmap_dir.map(|d| base.join(d));
        if let Some(t) = p.trace_threshold {
            cfg.trace_threshold = t;
        }
        if let Some(v) = p.grid_mm_per_minor {
            cfg.grid_mm_per_minor = v;
        }
        cfg.fallback_d_px = p.fallback_d_px;
        if let Some(s) = file.segmentation {
            cfg.segmentation = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.paper_speed != 25.0 && self.paper_speed != 50.0 {
            return bad(format!("paper speed must be 25 or 50 mm/s, got {}", self.paper_speed));
        }
        if !(self.gain > 0.0) {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if !(100.0..=2000.0).contains(&self.target_fs) {
            return bad(format!("sample rate must be within [100, 2000] Hz, got {}", self.target_fs));
        }
        if self.layouts.is_empty() {
            return bad("no layouts configured".into());
        }
        for name in [&self.force_layout, &self.fallback_layout].into_iter().flatten() {
            if self.layout(name).is_none() {
                return bad(format!("unknown layout {name:?}"));
            }
        }
        if !(self.trace_threshold > 0.0 && self.trace_threshold < 1.0) {
            return bad("trace threshold must lie in (0, 1)".into());
        }
        if !(self.grid_mm_per_minor > 0.0 && self.grid_mm_per_minor.is_finite()) {
            return bad(format!("grid cell size must be positive, got {} mm", self.grid_mm_per_minor));
        }
        if let Some(d) = self.fallback_d_px {
            if !(d > 2.0 && d.is_finite()) {
                return bad(format!("fallback grid spacing must exceed 2 px, got {d}"));
            }
        }
        if self.segmentation.mode == SegmentationMode::External && self.probmap_dir.is_none() {
            return bad("external segmentation needs a probability-map directory".into());
        }
        self.segmentation.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn layout(&self, name: &str) -> Option<&LayoutSpec> {
        self.layouts.iter().find(|l| l.name == name)
    }

    /// Layout assumed for all-NaN output when an image fails.
    pub fn failure_layout(&self) -> &LayoutSpec {
        self.force_layout
            .as_deref()
            .or(self.fallback_layout.as_deref())
            .and_then(|n| self.layout(n))
            .unwrap_or(&self.layouts[0])
    }

    fn segmenter_for(&self, stem: &str) -> SegmenterConfig {
        let mut s = self.segmentation.clone();
        if s.mode == SegmentationMode::External {
            if let Some(dir) = &self.probmap_dir {
                s.external_path = Some(dir.join(format!("{stem}.pmap")));
            }
        }
        s
    }
}

/// Facts about a successfully digitized page.
#[derive(Clone, Debug, PartialEq)]
pub struct PageInfo {
    pub layout: String,
    /// `None` when the layout was forced or fell back.
    pub layout_cost: Option<f64>,
    pub markers: usize,
    pub spacing: GridSpacing,
    /// Recovered grid directions; `axes.rectify` is the identity for flat scans.
    pub axes: GridAxes,
    pub snip_iterations: usize,
}

/// Intermediate products kept for `--debug-dir`.
#[derive(Clone, Debug, Default)]
pub struct DebugDump {
    pub probmap: Option<ProbMap>,
    pub axes: Option<AxesDebug>,
    pub dewarped: Option<ProbMap>,
}

fn choose_layout<'a>(cfg: &'a PipelineConfig, dewarped: &ProbMap) -> Result<(&'a LayoutSpec, Option<f64>, usize)> {
    if let Some(name) = &cfg.force_layout {
        let l = cfg.layout(name).ok_or_else(|| Error::Config(format!("unknown layout {name:?}")))?;
        return Ok((l, None, 0));
    }
    let markers = markers_from_text_channel(&dewarped.channel(Channel::Text), &GlyphLibrary::standard());
    match crate::layout::match_layout(&markers, &cfg.layouts) {
        Ok(m) => {
            let l = cfg.layout(&m.layout.name).expect("matched layout comes from the config");
            Ok((l, Some(m.cost), markers.len()))
        }
        Err(e) => match cfg.fallback_layout.as_deref().and_then(|n| cfg.layout(n)) {
            Some(l) => {
                log::warn!("{e}; falling back to layout {}", l.name);
                Ok((l, None, markers.len()))
            }
            None => Err(e),
        },
    }
}

fn grid_spacing(map: &ProbMap, cfg: &PipelineConfig) -> Result<GridSpacing> {
    match (estimate_grid_spacing(&map.channel(Channel::Grid)), cfg.fallback_d_px) {
        (Err(Error::Spacing { score }), Some(d)) => {
            log::warn!("grid fit failed (score {score:.3}), assuming {d} px per cell");
            Ok(GridSpacing {
                d_x: d,
                d_y: d,
                fit_score_x: 0.0,
                fit_score_y: 0.0,
            })
        }
        (r, _) => r,
    }
}

/// Converts spacing per minor cell into pixels per millimetre.
fn per_mm(s: GridSpacing, mm_per_minor: f64) -> GridSpacing {
    GridSpacing {
        d_x: s.d_x / mm_per_minor,
        d_y: s.d_y / mm_per_minor,
        ..s
    }
}

fn digitize_inner(image: &RgbRaster, cfg: &PipelineConfig, seg: &SegmenterConfig, dump: &mut Option<DebugDump>) -> Result<(DigitizedECG, PageInfo)> {
    let map = segment(image, seg)?;
    let (axes, axes_debug) = find_grid_axes_debug(&map.channel(Channel::Grid))?;
    let dewarped = dewarp_and_crop(&map, &axes)?;
    if let Some(d) = dump.as_mut() {
        d.probmap = Some(map);
        d.axes = Some(axes_debug);
    }
    let spacing = per_mm(grid_spacing(&dewarped.map, cfg)?, cfg.grid_mm_per_minor);
    let (layout, layout_cost, markers) = choose_layout(cfg, &dewarped.map)?;
    log::debug!("spacing {:.3}x{:.3} px/mm, layout {}", spacing.d_x, spacing.d_y, layout.name);
    let traced = trace_signal(
        &dewarped.map.channel(Channel::Signal),
        layout,
        &spacing,
        cfg.paper_speed,
        cfg.trace_threshold,
    )?;
    let ecg = to_physical(&traced.traces, &spacing, cfg.paper_speed, cfg.gain, layout, cfg.target_fs)?;
    if let Some(d) = dump.as_mut() {
        d.dewarped = Some(dewarped.map);
    }
    Ok((
        ecg,
        PageInfo {
            layout: layout.name.clone(),
            layout_cost,
            markers,
            spacing,
            axes,
            snip_iterations: traced.iterations,
        },
    ))
}

/// Runs the whole pipeline on one decoded image. `stem` locates the
/// external probability map when that segmentation mode is configured.
pub fn digitize_image(image: &RgbRaster, cfg: &PipelineConfig, stem: &str) -> Result<(DigitizedECG, PageInfo)> {
    digitize_inner(image, cfg, &cfg.segmenter_for(stem), &mut None)
}

/// As [`digitize_image`], also returning whatever intermediates were produced.
pub fn digitize_image_debug(image: &RgbRaster, cfg: &PipelineConfig, stem: &str) -> (Result<(DigitizedECG, PageInfo)>, DebugDump) {
    let mut dump = Some(DebugDump::default());
    let r = digitize_inner(image, cfg, &cfg.segmenter_for(stem), &mut dump);
    (r, dump.unwrap_or_default())
}

fn gray_png(width: usize, height: usize, values: &[f64], path: &Path) -> Result<()> {
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let data: Vec<u8> = values
        .iter()
        .flat_map(|&v| {
            let g = if max > 0.0 && v.is_finite() { (255.0 * v.max(0.0) / max).round() as u8 } else { 0 };
            [g, g, g]
        })
        .collect();
    save_png(&RgbRaster::new(width, height, data)?, path)
}

fn probmap_pngs(map: &ProbMap, dir: &Path, prefix: &str) -> Result<()> {
    for (c, name) in ["background", "grid", "signal", "text"].iter().enumerate().take(map.channels()) {
        let p = map.plane(c);
        let v: Vec<f64> = p.data.iter().map(|&x| x as f64).collect();
        gray_png(p.width, p.height, &v, &dir.join(format!("{prefix}.{name}.png")))?;
    }
    Ok(())
}

fn accumulator_png(acc: &HoughAccumulator, path: &Path) -> Result<()> {
    gray_png(acc.n_rho, acc.thetas.len(), &acc.bins, path)
}

fn angle_angle_png(aa: &AngleAnglePlane, path: &Path) -> Result<()> {
    gray_png(aa.n(), aa.n(), &aa.variance, path)
}

impl DebugDump {
    /// Writes `<stem>.probmap.pmap` plus channel PNGs, the coarse
    /// accumulator and angle-angle plane, and the dewarped channels.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(m) = &self.probmap {
            write_probmap(m, dir.join(format!("{stem}.probmap.pmap")))?;
            probmap_pngs(m, dir, &format!("{stem}.probmap"))?;
        }
        if let Some(a) = &self.axes {
            accumulator_png(&a.coarse, &dir.join(format!("{stem}.hough.png")))?;
            angle_angle_png(&a.coarse_plane, &dir.join(format!("{stem}.angle_angle.png")))?;
        }
        if let Some(m) = &self.dewarped {
            probmap_pngs(m, dir, &format!("{stem}.dewarped"))?;
        }
        Ok(())
    }
}

/// One line of the run report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub input: PathBuf,
    pub stem: String,
    pub output: Option<PathBuf>,
    /// `None` on success, else the error code and message.
    pub error: Option<(String, String)>,
    pub layout: String,
    pub spacing: Option<GridSpacing>,
    pub nan_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    pub rows: Vec<ReportRow>,
}

impl BatchReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,status,error_code,layout,d_x,d_y,nan_frac,output,message\n");
        for r in &self.rows {
            let (status, code, msg) = match &r.error {
                None => ("ok", "", String::new()),
                Some((c, m)) => ("failed", c.as_str(), m.replace([',', '\n'], ";")),
            };
            let (dx, dy) = r.spacing.map_or((String::new(), String::new()), |s| (format!("{:.4}", s.d_x), format!("{:.4}", s.d_y)));
            let out = r.output.as_ref().and_then(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            writeln!(
                s,
                "{},{status},{code},{},{dx},{dy},{:.6},{out},{msg}",
                r.input.display().to_string().replace(',', ";"),
                r.layout,
                r.nan_fraction
            )
            .unwrap();
        }
        writeln!(s, "# images={} failures={}", self.rows.len(), self.failures()).unwrap();
        s
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn write_table(table: &SignalTable, path: &Path) -> Result<()> {
    table.write(path)
}

fn process_one(input: &Path, cfg: &PipelineConfig, out_dir: &Path, debug_dir: Option<&Path>) -> ReportRow {
    let stem = stem_of(input);
    let mut row = ReportRow {
        input: input.to_path_buf(),
        stem: stem.clone(),
        output: None,
        error: None,
        layout: String::new(),
        spacing: None,
        nan_fraction: 1.0,
    };
    // Undecodable inputs produce no output file, only a report row.
    let image = match load_image(input) {
        Ok(i) => i,
        Err(e) => {
            log::warn!("{}: {e}", input.display());
            row.error = Some((e.code().into(), e.to_string()));
            return row;
        }
    };
    let (result, dump) = if debug_dir.is_some() {
        digitize_image_debug(&image, cfg, &stem)
    } else {
        (digitize_image(&image, cfg, &stem), DebugDump::default())
    };
    if let Some(dir) = debug_dir {
        if let Err(e) = dump.write(dir, &stem) {
            log::warn!("{stem}: debug dump failed: {e}");
        }
    }
    let ecg = match result {
        Ok((ecg, info)) => {
            row.spacing = Some(info.spacing);
            ecg
        }
        Err(e) => {
            log::warn!("{}: {e}", input.display());
            row.error = Some((e.code().into(), e.to_string()));
            DigitizedECG::failed(cfg.failure_layout(), cfg.target_fs, cfg.paper_speed, cfg.gain)
        }
    };
    row.layout = ecg.layout.clone();
    row.nan_fraction = ecg.nan_fraction();
    let path = out_dir.join(format!("{stem}.csv"));
    match write_table(&ecg.to_table(), &path) {
        Ok(()) => row.output = Some(path),
        Err(e) => {
            if row.error.is_none() {
                row.error = Some((e.code().into(), e.to_string()));
            }
        }
    }
    row
}

/// Digitizes `inputs` on a pool of `workers` threads, writing `<stem>.csv`
/// per image and `report.csv` into `out_dir`. Per-image failures are
/// recorded in the report; rows keep input order.
pub fn digitize_batch(
    inputs: &[PathBuf],
    cfg: &PipelineConfig,
    out_dir: &Path,
    workers: usize,
    debug_dir: Option<&Path>,
) -> Result<BatchReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| inputs.par_iter().map(|p| process_one(p, cfg, out_dir, debug_dir)).collect());
    let report = BatchReport { rows };
    let path = out_dir.join("report.csv");
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Writes `synth_NNNN.png`, `.truth.txt` and `.ref.csv` for pages
/// `0..count` of `spec`; output depends only on the spec.
pub fn synthesize_batch(spec: &SceneConfig, count: usize, out_dir: &Path, layouts: &[LayoutSpec]) -> Result<Vec<String>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let stem = format!("synth_{i:04}");
        let rendered = spec.scene(i as u64, layouts)?.render()?;
        save_png(&rendered.image, out_dir.join(format!("{stem}.png")))?;
        rendered.truth.write(out_dir, &stem)?;
        stems.push(stem);
    }
    Ok(stems)
}

/// Per-lead metrics, aggregates and records without a prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Vec<eval::Aggregate>,
    pub unmatched: Vec<String>,
}

fn column_series(table: &SignalTable, lead: LeadName, len: usize) -> Option<Series1D> {
    let col = table.column(lead)?;
    let values = (0..len).map(|i| col.get(i).copied().flatten().unwrap_or(f64::NAN)).collect();
    Series1D::new(values, table.fs).ok()
}

/// Scores every `<stem>.csv` in `pred_dir` against `<stem>.ref.csv` in
/// `truth_dir`, grouping by the layout named in `<stem>.truth.txt`.
pub fn evaluate_dirs(pred_dir: &Path, truth_dir: &Path) -> Result<EvalReport> {
    let entries = std::fs::read_dir(truth_dir).map_err(|e| Error::io(truth_dir, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".ref.csv")).map(str::to_owned))
        .collect();
    stems.sort();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for stem in stems {
        let pred_path = pred_dir.join(format!("{stem}.csv"));
        if !pred_path.is_file() {
            unmatched.push(stem);
            continue;
        }
        let truth = SignalTable::read(truth_dir.join(format!("{stem}.ref.csv")))?;
        let group = GroundTruth::read(truth_dir, &stem).map(|t| t.layout).unwrap_or_else(|_| "unknown".into());
        let pred = match SignalTable::read(&pred_path) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{stem}: {e}");
                unmatched.push(stem);
                continue;
            }
        };
        for lead in pred.leads() {
            let Some(y) = column_series(&truth, lead, truth.len) else { continue };
            let y_hat = column_series(&pred, lead, pred.len).expect("lead listed by the table");
            let col = pred.column(lead).unwrap();
            let present = col.iter().filter(|v| v.is_some()).count();
            let nan = col.iter().filter(|v| v.is_some_and(f64::is_nan)).count();
            let result = eval::evaluate_lead(&y, &y_hat)
                .map(|mut m| {
                    m.nan_fraction = if present > 0 { nan as f64 / present as f64 } else { 1.0 };
                    m
                })
                .map_err(|e| e.to_string());
            rows.push(MetricsRow {
                record: stem.clone(),
                group: group.clone(),
                lead: lead.as_str().into(),
                result,
            });
        }
    }
    let aggregates = eval::aggregate(&rows);
    Ok(EvalReport { rows, aggregates, unmatched })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        let base = Path::new(".");
        assert!(matches!(PipelineConfig::from_toml("[pipeline]\npaper_speed = 30\n", base), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[pipeline]\ntarget_fs = 50\n", base), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[pipeline]\nforce_layout = \"9x9\"\n", base), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("bogus = 1\n", base), Err(Error::Config(_))));
        let c = PipelineConfig::from_toml("[pipeline]\npaper_speed = 50\nforce_layout = \"6x2\"\n", base).unwrap();
        assert_eq!(c.paper_speed, 50.0);
        assert_eq!(c.failure_layout().name, "6x2");
    }

    #[test]
    fn report_counts_failures() {
        let ok = ReportRow {
            input: "a.png".into(),
            stem: "a".into(),
            output: Some("out/a.csv".into()),
            error: None,
            layout: "3x4".into(),
            spacing: None,
            nan_fraction: 0.0,
        };
        let bad = ReportRow {
            error: Some(("decode".into(), "bad, file".into())),
            output: None,
            ..ok.clone()
        };
        let r = BatchReport { rows: vec![ok, bad] };
        assert_eq!(r.failures(), 1);
        let csv = r.to_csv();
        assert!(csv.contains("failed,decode"));
        assert!(csv.ends_with("# images=2 failures=1\n"));
    }
}
