//! `treecount`: file-to-file pipeline stages.
//!
//! ```text
//! treecount simulate scene.toml --out run/a
//! treecount count run/a.detections.jsonl run/a.gpx --out run/a.report.json
//! treecount classify run/a.report.json run/a.gpx --out run/a.geojson --table run/a.table.jsonl
//! treecount density run/a.report.json --out run/a.kdr.asc
//! treecount evaluate --truth truth.table.jsonl --pred run/a.table.jsonl --out eval.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use treecount_core::classify::{classify_segments, parse_summary_table, to_category_geojson, to_summary_table};
use treecount_core::counting::{self, CountReport};
use treecount_core::geo::{segment_route, GeoPoint};
use treecount_core::ingest::{parse_detections_str, parse_gpx, ImageGeometry};
use treecount_core::kdr::{export_raster, kde_grid, kdr_grid, parse_raster, to_point_geojson};
use treecount_core::metrics::{evaluate, parse_evals, RouteEval};
use treecount_core::simulate::{generate, validity_check, SceneSpec};
use treecount_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "treecount", version, about = "Roadside tree counting, density categories and density rasters")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seconds between the first trackpoint and video frame 0.
    #[arg(long, global = true, allow_negative_numbers = true)]
    offset_s: Option<f64>,
    #[arg(long, global = true)]
    segment_km: Option<f64>,
    /// KDE bandwidth in metres.
    #[arg(long, global = true)]
    bandwidth_m: Option<f64>,
    /// Raster size, `N` or `COLSxROWS`.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    band_center: Option<f64>,
    #[arg(long, global = true)]
    band_width: Option<f64>,
    #[arg(long, global = true)]
    min_conf: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Count trees in one or more DETECTIONS GPX pairs.
    Count {
        #[arg(required = true, num_args = 2.., value_names = ["DETECTIONS", "GPX"])]
        inputs: Vec<PathBuf>,
        /// Report path, once per input pair.
        #[arg(long, required = true)]
        out: Vec<PathBuf>,
    },
    /// Rate route segments and write the category map and summary table.
    Classify {
        report: PathBuf,
        gpx: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: PathBuf,
    },
    /// Write the KDR raster of counted trees.
    Density {
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kde_out: Option<PathBuf>,
        /// Per-tree density and rank as GeoJSON points.
        #[arg(long)]
        points_out: Option<PathBuf>,
    },
    /// Score predicted counts against ground truth.
    Evaluate {
        /// Route evaluations, one JSON object per line.
        #[arg(required_unless_present_all = ["truth", "pred"], conflicts_with_all = ["truth", "pred"])]
        evals: Option<PathBuf>,
        /// Ground-truth summary table; segments become routes.
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene: `<out>.detections.jsonl`, `<out>.gpx`, `<out>.truth.json`.
    Simulate {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes `contents`, reads the file back and runs `check` on what landed on disk.
fn write_checked(path: &Path, contents: &str, check: impl FnOnce(&str) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    let back = read(path)?;
    ensure!(back == contents, "{}: content changed on disk", path.display());
    check(&back).with_context(|| format!("{} failed validation", path.display()))
}

fn parse_grid(text: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| s.trim().parse::<usize>().with_context(|| format!("bad grid size {text:?}"));
    match text.split_once(['x', 'X']) {
        Some((c, r)) => Ok((parse(c)?, parse(r)?)),
        None => {
            let n = parse(text)?;
            Ok((n, n))
        }
    }
}

fn load_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut config = match &o.config {
        Some(path) => PipelineConfig::from_toml(&read(path)?).with_context(|| format!("in {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.offset_s {
        config.pipeline.gps_offset_s = v;
    }
    if let Some(v) = o.segment_km {
        config.pipeline.segment_length_m = v * 1000.0;
    }
    if let Some(v) = o.bandwidth_m {
        config.density.bandwidth_m = v;
    }
    if let Some(g) = &o.grid {
        (config.density.grid_cols, config.density.grid_rows) = parse_grid(g)?;
    }
    if let Some(v) = o.band_center {
        config.counting.band_center = v;
    }
    if let Some(v) = o.band_width {
        config.counting.band_width = v;
    }
    if let Some(v) = o.min_conf {
        config.counting.min_confidence = v;
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn count_one(detections: &Path, gpx: &Path, out: &Path, config: &PipelineConfig) -> Result<u64> {
    let text = read(detections)?;
    let stream = parse_detections_str(&text).with_context(|| format!("in {}", detections.display()))?;
    let track = parse_gpx(&read(gpx)?).with_context(|| format!("in {}", gpx.display()))?;
    let mut geometry = stream.geometry.unwrap_or_default();
    if let Some(fps) = config.pipeline.fps {
        geometry = ImageGeometry::new(geometry.width_px, geometry.height_px, fps)?;
    }
    let report = counting::run(
        &stream.frames,
        &track,
        &config.counting(),
        &geometry,
        config.pipeline.gps_offset_s,
    )
    .with_context(|| format!("counting {}", detections.display()))?;
    let json = report.to_json();
    write_checked(out, &json, |s| {
        ensure!(CountReport::from_json(s)? == report, "report does not round-trip");
        Ok(())
    })?;
    Ok(report.total_count)
}

fn cmd_count(inputs: &[PathBuf], outs: &[PathBuf], config: &PipelineConfig) -> Result<()> {
    ensure!(inputs.len().is_multiple_of(2), "count takes DETECTIONS GPX pairs, got {} paths", inputs.len());
    let pairs: Vec<(&PathBuf, &PathBuf)> = inputs.chunks(2).map(|p| (&p[0], &p[1])).collect();
    ensure!(
        pairs.len() == outs.len(),
        "{} input pairs but {} --out paths",
        pairs.len(),
        outs.len()
    );
    let totals: Vec<Result<u64>> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .iter()
            .zip(outs)
            .map(|(&(d, g), o)| s.spawn(move || count_one(d, g, o, config)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("counting thread panicked"))))
            .collect()
    });
    let mut totals_ok = Vec::with_capacity(totals.len());
    for total in totals {
        totals_ok.push(total?);
    }
    for total in totals_ok {
        println!("{total}");
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<CountReport> {
    CountReport::from_json(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn cmd_classify(report: &Path, gpx: &Path, out: &Path, table: &Path, config: &PipelineConfig) -> Result<()> {
    let report = read_report(report)?;
    let track = parse_gpx(&read(gpx)?).with_context(|| format!("in {}", gpx.display()))?;
    let segments = segment_route(&track, config.pipeline.segment_length_m)?;
    let classified = classify_segments(&report.events, &segments)?;
    write_checked(out, &to_category_geojson(&classified), |s| {
        let v: serde_json::Value = serde_json::from_str(s)?;
        ensure!(v["type"] == "FeatureCollection", "not a FeatureCollection");
        ensure!(
            v["features"].as_array().map(Vec::len) == Some(classified.len()),
            "feature count mismatch"
        );
        Ok(())
    })?;
    write_checked(table, &to_summary_table(&classified), |s| {
        ensure!(parse_summary_table(s)?.len() == classified.len(), "row count mismatch");
        Ok(())
    })
}

fn cmd_density(
    report: &Path,
    out: &Path,
    kde_out: Option<&Path>,
    points_out: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    let report = read_report(report)?;
    let points: Vec<GeoPoint> = report.events.iter().map(|e| e.position).collect();
    let kde = kde_grid(&points, &config.density).context("density estimate")?;
    let kdr = kdr_grid(&points, &kde)?;
    let check_raster = |s: &str| {
        let r = parse_raster(s)?;
        ensure!(r.ncols == kde.cols && r.nrows == kde.rows, "raster size mismatch");
        Ok(())
    };
    write_checked(out, &export_raster(&kdr), check_raster)?;
    if let Some(path) = kde_out {
        write_checked(path, &export_raster(&kde), check_raster)?;
    }
    if let Some(path) = points_out {
        write_checked(path, &to_point_geojson(&points, &kde)?, |s| {
            let v: serde_json::Value = serde_json::from_str(s)?;
            ensure!(v["type"] == "FeatureCollection", "not a FeatureCollection");
            Ok(())
        })?;
    }
    Ok(())
}

/// Joins two summary tables on segment index.
fn evals_from_tables(truth: &Path, pred: &Path) -> Result<Vec<RouteEval>> {
    let truth_rows = parse_summary_table(&read(truth)?).with_context(|| format!("in {}", truth.display()))?;
    let pred_rows = parse_summary_table(&read(pred)?).with_context(|| format!("in {}", pred.display()))?;
    ensure!(
        truth_rows.len() == pred_rows.len(),
        "{} has {} segments, {} has {}",
        truth.display(),
        truth_rows.len(),
        pred.display(),
        pred_rows.len()
    );
    truth_rows
        .iter()
        .zip(&pred_rows)
        .map(|(t, p)| {
            if t.segment != p.segment || (t.length_m - p.length_m).abs() > 1e-6 * t.length_m.max(1.0) {
                bail!("segment {} does not line up with segment {}", t.segment, p.segment);
            }
            Ok(RouteEval::new(t.segment.to_string(), t.length_m / 1000.0, t.count, p.count))
        })
        .collect()
}

fn cmd_evaluate(evals: Option<&Path>, truth: Option<&Path>, pred: Option<&Path>, out: &Path) -> Result<()> {
    let evals = match (evals, truth, pred) {
        (Some(path), _, _) => parse_evals(&read(path)?).with_context(|| format!("in {}", path.display()))?,
        (None, Some(t), Some(p)) => evals_from_tables(t, p)?,
        _ => bail!("give an evals file or both --truth and --pred"),
    };
    let report = evaluate(&evals)?;
    write_checked(out, &report.to_json(), |s| {
        let v: serde_json::Value = serde_json::from_str(s)?;
        ensure!(v["routes"].as_array().map(Vec::len) == Some(evals.len()), "route count mismatch");
        Ok(())
    })?;
    println!("MAE {} TCDCA {}", report.mae, report.tcdca);
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_simulate(scene_path: &Path, prefix: &Path, config: &PipelineConfig) -> Result<()> {
    let scene = SceneSpec::from_toml(&read(scene_path)?).with_context(|| format!("in {}", scene_path.display()))?;
    let counting = config.counting();
    let validity = validity_check(&scene, &counting);
    if !validity.is_valid() {
        eprintln!("warning: scene is outside the exact-counting regime: {validity:?}");
    }
    let sim = generate(&scene, &counting.range)?;
    let stream_text = treecount_core::ingest::write_detections(&sim.stream);
    write_checked(&with_suffix(prefix, ".detections.jsonl"), &stream_text, |s| {
        ensure!(parse_detections_str(s)? == sim.stream, "detections do not round-trip");
        Ok(())
    })?;
    write_checked(&with_suffix(prefix, ".gpx"), &sim.gpx, |s| {
        ensure!(parse_gpx(s)? == sim.track, "track does not round-trip");
        Ok(())
    })?;
    let truth = sim.truth_report();
    write_checked(&with_suffix(prefix, ".truth.json"), &truth.to_json(), |s| {
        ensure!(CountReport::from_json(s)? == truth, "truth does not round-trip");
        Ok(())
    })?;
    println!("{}", truth.total_count);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.overrides)?;
    match cli.command {
        Command::Count { inputs, out } => cmd_count(&inputs, &out, &config),
        Command::Classify { report, gpx, out, table } => cmd_classify(&report, &gpx, &out, &table, &config),
        Command::Density {
            report,
            out,
            kde_out,
            points_out,
        } => cmd_density(&report, &out, kde_out.as_deref(), points_out.as_deref(), &config),
        Command::Evaluate { evals, truth, pred, out } => {
            cmd_evaluate(evals.as_deref(), truth.as_deref(), pred.as_deref(), &out)
        }
        Command::Simulate { scene, out } => cmd_simulate(&scene, &out, &config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
