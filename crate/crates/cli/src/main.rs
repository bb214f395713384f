//! `evstab`: synthesize event-camera star-field runs, track them, close
//! the stabilization loop, benchmark the pipeline, and render reports.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evstab_core::evsim::{synthesize, write_events, write_events_csv};
use evstab_core::harness::config::{apply_overrides, parse_kv};
use evstab_core::harness::persist::{
    self, read_csv_columns, read_kv, spec_config_text, write_closed_loop_run, write_open_loop_run,
};
use evstab_core::harness::svg::{Ellipse, Series, line_chart, scatter_chart};
use evstab_core::harness::{
    ExperimentSpec, compute_spread, run_closed_loop, run_open_loop, settle_time,
};
use evstab_core::sky::load_catalog;
use evstab_core::trajectory::{
    NoisePreset, TrajectoryKind, TrajectorySpec, generate, write_csv,
};
use evstab_core::Vec2;

/// Exit code for a run where tracking was lost.
const EXIT_TRACK_LOST: u8 = 2;
/// Exit code for a closed-loop run that diverged.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "evstab", version, about = "Event-camera star-field stabilization simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a jittered run and write its event stream.
    Simulate(SimulateArgs),
    /// Track a synthesized run open loop and report accuracy.
    Track(TrackArgs),
    /// Run the full closed correction loop and report stability.
    Stabilize(StabilizeArgs),
    /// Measure per-frame pipeline cost over a long run.
    Bench(BenchArgs),
    /// Render SVG charts for a previously written run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Trajectory shape: linear, square, or circle.
    #[arg(long, default_value = "linear")]
    trajectory: String,
    /// Jitter preset: n9, n8, n7, or n6.
    #[arg(long, default_value = "n8")]
    noise_preset: String,
    /// Explicit jitter step sigma, arcsec (overrides the preset).
    #[arg(long)]
    noise_sigma_arcsec: Option<f64>,
    /// Attitude sample rate, Hz.
    #[arg(long, default_value_t = 30.0)]
    rate_hz: f64,
    #[arg(long, default_value_t = 20.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Star catalog file; the bundled catalog is used when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Magnitude cut applied to the catalog.
    #[arg(long, default_value_t = 6.0)]
    mag_limit: f64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Frame accumulation window, milliseconds.
    #[arg(long, default_value_t = 100.0)]
    delta_t_ms: f64,
    /// Force the median filter on.
    #[arg(long, conflicts_with = "no_median_filter")]
    median_filter: bool,
    /// Force the median filter off.
    #[arg(long)]
    no_median_filter: bool,
    /// Disable the Kalman smoother.
    #[arg(long)]
    no_kf: bool,
    /// Minimum detection cluster size, pixels.
    #[arg(long)]
    min_cluster: Option<u32>,
    /// key=value tuning file applied on top of derived settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Also write the events as CSV next to the binary stream.
    #[arg(long)]
    events_csv: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilizeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Corrector tick rate, Hz; defaults to the frame rate.
    #[arg(long)]
    control_rate_hz: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write the run artifacts here as well (optional).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory previously written by track or stabilize.
    #[arg(long)]
    run: PathBuf,
}

fn build_spec(
    scenario: &ScenarioArgs,
    pipeline: &PipelineArgs,
) -> Result<ExperimentSpec, String> {
    let kind: TrajectoryKind = scenario.trajectory.parse()?;
    let preset: NoisePreset = scenario.noise_preset.parse()?;
    let sigma = scenario.noise_sigma_arcsec.unwrap_or_else(|| preset.sigma_arcsec());
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(format!("noise sigma {sigma} must be non-negative"));
    }
    if !(pipeline.delta_t_ms.is_finite() && pipeline.delta_t_ms > 0.0) {
        return Err(format!("delta-t {} ms must be positive", pipeline.delta_t_ms));
    }

    let mut spec = ExperimentSpec::new(
        kind,
        sigma,
        scenario.rate_hz,
        (pipeline.delta_t_ms * 1000.0).round() as u64,
        scenario.duration_s,
        scenario.seed,
    );
    spec.label = if scenario.noise_sigma_arcsec.is_some() {
        format!("{}-custom", kind.name())
    } else {
        format!("{}-{}", kind.name(), preset.name())
    };
    spec.mag_limit = scenario.mag_limit;
    if let Some(path) = &scenario.catalog {
        let stars = load_catalog(path, scenario.mag_limit).map_err(|e| e.to_string())?;
        spec.stars = Some(stars);
    }

    if pipeline.median_filter {
        spec.use_median_filter = true;
    }
    if pipeline.no_median_filter {
        spec.use_median_filter = false;
    }
    spec.use_kf = !pipeline.no_kf;
    if let Some(mc) = pipeline.min_cluster {
        spec.tracker.min_cluster_size = mc;
    }
    if let Some(path) = &pipeline.config {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let kv = parse_kv(&text).map_err(|e| e.to_string())?;
        apply_overrides(&mut spec, &kv).map_err(|e| e.to_string())?;
    }
    Ok(spec)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, String> {
    let dummy_pipeline = PipelineArgs {
        delta_t_ms: 100.0,
        median_filter: false,
        no_median_filter: false,
        no_kf: false,
        min_cluster: None,
        config: None,
    };
    let spec = build_spec(&args.scenario, &dummy_pipeline)?;
    let gt = generate(&TrajectorySpec {
        kind: spec.trajectory,
        duration_s: spec.duration_s,
        rate_hz: spec.noise_rate_hz,
        noise_sigma_arcsec: spec.noise_sigma_arcsec,
        seed: spec.seed,
        start: spec.start,
    })
    .map_err(|e| e.to_string())?;
    let stream =
        synthesize(&gt, spec.star_field(), spec.geom, spec.sim).map_err(|e| e.to_string())?;

    fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    fs::write(args.out.join("config.txt"), spec_config_text(&spec)).map_err(|e| e.to_string())?;
    let mut gt_csv = Vec::new();
    write_csv(&gt, &mut gt_csv).map_err(|e| e.to_string())?;
    fs::write(args.out.join("gt.csv"), gt_csv).map_err(|e| e.to_string())?;
    write_events(&stream, &args.out.join("events.evt")).map_err(|e| e.to_string())?;
    if args.events_csv {
        let file = fs::File::create(args.out.join("events.csv")).map_err(|e| e.to_string())?;
        write_events_csv(&stream, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
    }
    println!(
        "simulated {}: {} samples, {} events -> {}",
        spec.label,
        gt.len(),
        stream.events.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_track(args: &TrackArgs) -> Result<u8, String> {
    let spec = build_spec(&args.scenario, &args.pipeline)?;
    let record = run_open_loop(&spec).map_err(|e| e.to_string())?;
    write_open_loop_run(&args.out, &record).map_err(|e| e.to_string())?;
    print!("{}", persist::open_loop_summary(&record));
    println!("run_dir={}", args.out.display());
    if record.track_lost_at_s.is_some() {
        eprintln!("warning: track lost");
        return Ok(EXIT_TRACK_LOST);
    }
    Ok(0)
}

fn cmd_stabilize(args: &StabilizeArgs) -> Result<u8, String> {
    let mut spec = build_spec(&args.scenario, &args.pipeline)?;
    if let Some(rate) = args.control_rate_hz {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(format!("control rate {rate} Hz must be positive"));
        }
        spec.control_rate_hz = rate;
    }
    let record = run_closed_loop(&spec).map_err(|e| e.to_string())?;
    write_closed_loop_run(&args.out, &record).map_err(|e| e.to_string())?;
    print!("{}", persist::closed_loop_summary(&record));
    println!("run_dir={}", args.out.display());
    if record.diverged_at_s.is_some() {
        eprintln!("warning: correction loop diverged");
        return Ok(EXIT_DIVERGED);
    }
    if record.track_lost_at_s.is_some() {
        eprintln!("warning: track lost");
        return Ok(EXIT_TRACK_LOST);
    }
    Ok(0)
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, String> {
    let spec = build_spec(&args.scenario, &args.pipeline)?;
    let record = run_open_loop(&spec).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        write_open_loop_run(out, &record).map_err(|e| e.to_string())?;
    }
    let t = &record.timing;
    let total = t.total_ms();
    let share = |ms: f64| if total > 0.0 { 100.0 * ms / total } else { 0.0 };
    println!("frames processed: {}", t.frames);
    println!("events processed: {}", record.event_count);
    println!("stage          mean_ms    share");
    println!("frame build    {:>8.4}  {:>6.2}%", t.batch_ms, share(t.batch_ms));
    println!("median filter  {:>8.4}  {:>6.2}%", t.median_ms, share(t.median_ms));
    println!("detect+track   {:>8.4}  {:>6.2}%", t.track_ms, share(t.track_ms));
    println!("kalman         {:>8.4}  {:>6.2}%", t.kf_ms, share(t.kf_ms));
    println!("total          {:>8.4}  100.00%  ({:.1} Hz)", total, t.realized_hz());
    Ok(0)
}

/// Rebuild chart inputs from a run directory's CSV artifacts.
fn cmd_report(args: &ReportArgs) -> Result<u8, String> {
    let dir = &args.run;
    let summary = read_kv(&dir.join("summary.txt")).map_err(|e| e.to_string())?;
    let kind = summary
        .get("kind")
        .ok_or_else(|| "summary.txt lacks kind".to_string())?
        .clone();
    let mut written = Vec::new();

    // Ground truth offsets relative to the first sample.
    let (_, gt_rows) = read_csv_columns(&dir.join("gt.csv")).map_err(|e| e.to_string())?;
    if gt_rows.is_empty() {
        return Err("gt.csv has no samples".into());
    }
    let (ra0, dec0) = (gt_rows[0][1], gt_rows[0][2]);
    let gt_x: Vec<(f64, f64)> =
        gt_rows.iter().map(|r| (r[0], (r[1] - ra0) * 3600.0)).collect();
    let gt_y: Vec<(f64, f64)> =
        gt_rows.iter().map(|r| (r[0], (r[2] - dec0) * 3600.0)).collect();

    if kind == "open_loop" {
        let (_, est_rows) = read_csv_columns(&dir.join("estimate.csv")).map_err(|e| e.to_string())?;
        // Offset estimate is the negated image translation.
        let est_x: Vec<(f64, f64)> =
            est_rows.iter().map(|r| (r[1] / 1e6, -r[4])).collect();
        let est_y: Vec<(f64, f64)> =
            est_rows.iter().map(|r| (r[1] / 1e6, -r[5])).collect();
        let svg = line_chart(
            "offset from start, truth vs estimate",
            "t (s)",
            "offset (arcsec)",
            &[
                Series { name: "truth x", color: "#b44", points: &gt_x },
                Series { name: "truth y", color: "#d92", points: &gt_y },
                Series { name: "estimate x", color: "#46b", points: &est_x },
                Series { name: "estimate y", color: "#2a7", points: &est_y },
            ],
        );
        let path = dir.join("drift.svg");
        fs::write(&path, svg).map_err(|e| e.to_string())?;
        written.push(path);
    } else {
        let (_, dev_rows) = read_csv_columns(&dir.join("deviation.csv")).map_err(|e| e.to_string())?;
        let dev_x: Vec<(f64, f64)> = dev_rows.iter().map(|r| (r[0], r[1])).collect();
        let dev_y: Vec<(f64, f64)> = dev_rows.iter().map(|r| (r[0], r[2])).collect();
        let svg = line_chart(
            "closed-loop pointing deviation",
            "t (s)",
            "deviation (arcsec)",
            &[
                Series { name: "x", color: "#46b", points: &dev_x },
                Series { name: "y", color: "#2a7", points: &dev_y },
            ],
        );
        let path = dir.join("deviation.svg");
        fs::write(&path, svg).map_err(|e| e.to_string())?;
        written.push(path);

        // Post-settle scatter with the 3-sigma ellipse and a 10 as circle.
        let trace: Vec<(f64, Vec2)> = dev_rows
            .iter()
            .map(|r| (r[0], Vec2::new(r[1], r[2])))
            .collect();
        let duration = trace.last().map_or(0.0, |(t, _)| *t);
        let cut = settle_time(&trace, 10.0, 1.0).unwrap_or(duration * 0.25);
        let spread = compute_spread(&trace, cut);
        let pts: Vec<(f64, f64)> = trace
            .iter()
            .filter(|(t, _)| *t >= cut)
            .map(|(_, d)| (d.x, d.y))
            .collect();
        let n = pts.len().max(1) as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x / n, ay + y / n));
        let svg = scatter_chart(
            "post-settle deviation spread",
            "x (arcsec)",
            "y (arcsec)",
            &pts,
            Some(Ellipse {
                cx: mx,
                cy: my,
                semi_major: spread.ellipse_semi_major_arcsec,
                semi_minor: spread.ellipse_semi_minor_arcsec,
                angle_rad: spread.ellipse_angle_rad,
            }),
            Some(10.0),
        );
        let path = dir.join("spread.svg");
        fs::write(&path, svg).map_err(|e| e.to_string())?;
        written.push(path);
    }

    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Track(args) => cmd_track(args),
        Cmd::Stabilize(args) => cmd_stabilize(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
