//! Run-directory serialization. Every artifact written here is
//! byte-deterministic for a given spec: float values go through the
//! nine-significant-digit formatter and no wall-clock data is included
//! (stage timings live in a separate, explicitly non-deterministic
//! file).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ClosedLoopRecord, ControlRow, HarnessError, OpenLoopRecord, PipelineTiming};
use super::ExperimentSpec;
use crate::sky::SensorGeometry;
use crate::tracker::MotionEstimate;
use crate::trajectory::{fmt_sig9, write_csv};
use crate::Vec2;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_sig9(x),
        None => "none".into(),
    }
}

/// Canonical `key=value` echo of a spec, sorted by key.
pub fn spec_config_text(spec: &ExperimentSpec) -> String {
    let mut kv: BTreeMap<&str, String> = BTreeMap::new();
    let f = fmt_sig9;
    kv.insert("agglomerate_radius_px", f(spec.tracker.agglomerate_radius_px));
    kv.insert("background_rate", f(spec.sim.background_rate));
    kv.insert("control_rate_hz", f(spec.control_rate_hz));
    kv.insert("dither_px", f(spec.dither_px));
    kv.insert("duration_s", f(spec.duration_s));
    kv.insert("early_exit_fraction", f(spec.tracker.early_exit_fraction));
    kv.insert("events_per_star_per_sample", spec.sim.events_per_star_per_sample.to_string());
    kv.insert("fov_x_deg", f(spec.geom.fov_x_deg));
    kv.insert("fov_y_deg", f(spec.geom.fov_y_deg));
    kv.insert("frame_delta_t_us", spec.frame_delta_t_us.to_string());
    kv.insert("gate_radius_px", f(spec.tracker.gate_radius_px));
    kv.insert("inlier_threshold_px", f(spec.tracker.inlier_threshold_px));
    kv.insert("integral_limit", f(spec.gains.integral_limit));
    kv.insert("kd", f(spec.gains.kd));
    kv.insert("kf", (spec.use_kf as u8).to_string());
    kv.insert("ki", f(spec.gains.ki));
    kv.insert("kp", f(spec.gains.kp));
    kv.insert("label", spec.label.clone());
    kv.insert("lost_after_frames", spec.tracker.lost_after_frames.to_string());
    kv.insert("mag_limit", f(spec.mag_limit));
    kv.insert("max_hypotheses", spec.tracker.max_hypotheses.to_string());
    kv.insert("max_travel_per_tick_arcsec", f(spec.stage.max_travel_per_tick_arcsec));
    kv.insert("median_filter", (spec.use_median_filter as u8).to_string());
    kv.insert("merge_radius_px", f(spec.tracker.merge_radius_px));
    kv.insert("min_cluster_size", spec.tracker.min_cluster_size.to_string());
    kv.insert("min_confident_inliers", spec.tracker.min_confident_inliers.to_string());
    kv.insert("noise_rate_hz", f(spec.noise_rate_hz));
    kv.insert("noise_sigma_arcsec", f(spec.noise_sigma_arcsec));
    kv.insert("p0_pos", f(spec.kf.p0_pos));
    kv.insert("p0_vel", f(spec.kf.p0_vel));
    kv.insert("persistence_radius_px", f(spec.tracker.persistence_radius_px));
    kv.insert("psf_radius_px", spec.sim.psf_radius_px.to_string());
    kv.insert("q_pos", f(spec.kf.q_pos));
    kv.insert("q_vel", f(spec.kf.q_vel));
    kv.insert("r", f(spec.kf.r));
    kv.insert("rng", "chacha8".into());
    kv.insert("seed", spec.seed.to_string());
    kv.insert("sensor_height", spec.geom.height.to_string());
    kv.insert("sensor_width", spec.geom.width.to_string());
    kv.insert("sim_seed", spec.sim.seed.to_string());
    kv.insert("stage_latency_ticks", spec.stage.latency_ticks.to_string());
    kv.insert("stage_max_rate_hz", f(spec.stage.max_rate_hz));
    kv.insert("stale_after_frames", spec.tracker.stale_after_frames.to_string());
    kv.insert("start_dec_deg", f(spec.start.dec_deg));
    kv.insert("start_ra_deg", f(spec.start.ra_deg));
    kv.insert("step_size_arcsec", f(spec.stage.step_size_arcsec));
    kv.insert("tracker_seed", spec.tracker.seed.to_string());
    kv.insert("trajectory", spec.trajectory.name().into());

    let mut out = String::new();
    for (k, v) in kv {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Tracker estimate trace:
/// `frame,t_us,tx_px,ty_px,tx_arcsec,ty_arcsec,inliers,confident`.
/// The arcsec columns are the pixel translation scaled by the plate
/// scale; the sky offset is the negation.
pub fn estimate_csv(estimates: &[MotionEstimate], geom: &SensorGeometry) -> String {
    let ps = geom.plate_scale();
    let mut out = String::from("frame,t_us,tx_px,ty_px,tx_arcsec,ty_arcsec,inliers,confident\n");
    for (i, e) in estimates.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i,
            e.t_us,
            fmt_sig9(e.t.x),
            fmt_sig9(e.t.y),
            fmt_sig9(e.t.x * ps.x),
            fmt_sig9(e.t.y * ps.y),
            e.inlier_count,
            e.confident as u8,
        ));
    }
    out
}

/// Control trace:
/// `tick,t_s,err_x_as,err_y_as,u_x_as,u_y_as,stage_x_as,stage_y_as`.
pub fn control_csv(rows: &[ControlRow]) -> String {
    let mut out = String::from("tick,t_s,err_x_as,err_y_as,u_x_as,u_y_as,stage_x_as,stage_y_as\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.tick,
            fmt_sig9(r.t_s),
            fmt_sig9(r.err_arcsec.x),
            fmt_sig9(r.err_arcsec.y),
            fmt_sig9(r.u_arcsec.x),
            fmt_sig9(r.u_arcsec.y),
            fmt_sig9(r.stage_arcsec.x),
            fmt_sig9(r.stage_arcsec.y),
        ));
    }
    out
}

/// True deviation trace: `t_s,dev_x_as,dev_y_as`.
pub fn deviation_csv(trace: &[(f64, Vec2)]) -> String {
    let mut out = String::from("t_s,dev_x_as,dev_y_as\n");
    for (t, d) in trace {
        out.push_str(&format!("{},{},{}\n", fmt_sig9(*t), fmt_sig9(d.x), fmt_sig9(d.y)));
    }
    out
}

pub fn open_loop_summary(record: &OpenLoopRecord) -> String {
    let mut out = String::new();
    out.push_str(&format!("confident_fraction={}\n", fmt_sig9(record.confident_fraction)));
    out.push_str(&format!("event_count={}\n", record.event_count));
    out.push_str(&format!("frames={}\n", record.estimates.len()));
    out.push_str("kind=open_loop\n");
    out.push_str(&format!("rmse_arcsec={}\n", fmt_sig9(record.rmse_arcsec)));
    out.push_str(&format!("track_lost_at_s={}\n", fmt_opt(record.track_lost_at_s)));
    out
}

pub fn closed_loop_summary(record: &ClosedLoopRecord) -> String {
    let r = &record.report;
    let mut out = String::new();
    out.push_str(&format!("diverged_at_s={}\n", fmt_opt(record.diverged_at_s)));
    out.push_str(&format!("ellipse_angle_rad={}\n", fmt_sig9(r.ellipse_angle_rad)));
    out.push_str(&format!(
        "ellipse_semi_major_arcsec={}\n",
        fmt_sig9(r.ellipse_semi_major_arcsec)
    ));
    out.push_str(&format!(
        "ellipse_semi_minor_arcsec={}\n",
        fmt_sig9(r.ellipse_semi_minor_arcsec)
    ));
    out.push_str(&format!("event_count={}\n", record.event_count));
    out.push_str(&format!("frames={}\n", record.frames));
    out.push_str("kind=closed_loop\n");
    out.push_str(&format!(
        "rms_deviation_arcsec={}\n",
        fmt_sig9(record.rms_deviation_arcsec)
    ));
    out.push_str(&format!("sample_count={}\n", r.sample_count));
    out.push_str(&format!("saturation_count={}\n", record.saturation_count));
    out.push_str(&format!("settle_time_s={}\n", fmt_opt(r.settle_time_s)));
    out.push_str(&format!("sigma_x_arcsec={}\n", fmt_sig9(r.sigma_x_arcsec)));
    out.push_str(&format!("sigma_y_arcsec={}\n", fmt_sig9(r.sigma_y_arcsec)));
    out.push_str(&format!("track_lost_at_s={}\n", fmt_opt(record.track_lost_at_s)));
    out
}

/// Wall-clock means; informational only, never part of the
/// reproducibility surface.
pub fn timings_text(timing: &PipelineTiming) -> String {
    format!(
        "batch_ms_mean={}\nframes={}\nkf_ms_mean={}\nmedian_ms_mean={}\nrealized_hz={}\ntotal_ms_mean={}\ntrack_ms_mean={}\n",
        fmt_sig9(timing.batch_ms),
        timing.frames,
        fmt_sig9(timing.kf_ms),
        fmt_sig9(timing.median_ms),
        fmt_sig9(timing.realized_hz()),
        fmt_sig9(timing.total_ms()),
        fmt_sig9(timing.track_ms),
    )
}

/// Write the artifacts of an open-loop run:
/// `config.txt`, `gt.csv`, `estimate.csv`, `summary.txt`, `timings.txt`.
pub fn write_open_loop_run(dir: &Path, record: &OpenLoopRecord) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), spec_config_text(&record.spec))?;
    let mut gt = Vec::new();
    write_csv(&record.gt, &mut gt)?;
    fs::write(dir.join("gt.csv"), gt)?;
    fs::write(
        dir.join("estimate.csv"),
        estimate_csv(&record.estimates, &record.spec.geom),
    )?;
    fs::write(dir.join("summary.txt"), open_loop_summary(record))?;
    fs::write(dir.join("timings.txt"), timings_text(&record.timing))?;
    Ok(())
}

/// Write the artifacts of a closed-loop run: everything an open-loop
/// run has plus `control.csv` and `deviation.csv`.
pub fn write_closed_loop_run(dir: &Path, record: &ClosedLoopRecord) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), spec_config_text(&record.spec))?;
    let mut gt = Vec::new();
    write_csv(&record.gt, &mut gt)?;
    fs::write(dir.join("gt.csv"), gt)?;
    fs::write(
        dir.join("estimate.csv"),
        estimate_csv(&record.estimates, &record.spec.geom),
    )?;
    fs::write(dir.join("control.csv"), control_csv(&record.control))?;
    fs::write(dir.join("deviation.csv"), deviation_csv(&record.deviation_arcsec))?;
    fs::write(dir.join("summary.txt"), closed_loop_summary(record))?;
    Ok(())
}

/// Parse a CSV of numeric columns into (header, row-major values).
/// Non-numeric cells become NaN.
pub fn read_csv_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| HarnessError::Config(format!("{}: empty csv", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| cell.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if row.len() != header.len() {
            return Err(HarnessError::Config(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                ln + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Parse a `key=value` file into a map (comments and blanks skipped).
pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("bad line: {line}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_closed_loop, run_open_loop};
    use crate::trajectory::TrajectoryKind;
    use nalgebra::Vector2;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec::new(TrajectoryKind::Linear, 0.84, 30.0, 100_000, 2.0, 42)
    }

    #[test]
    fn test_config_text_is_sorted_and_complete() {
        let text = spec_config_text(&tiny_spec());
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert!(text.contains("rng=chacha8"));
        assert!(text.contains("trajectory=linear"));
        assert!(text.contains("seed=42"));
        // No wall-clock content may leak into the reproducibility surface.
        assert!(!text.contains("time_of_day"));
    }

    #[test]
    fn test_run_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let record = run_open_loop(&tiny_spec()).unwrap();
        write_open_loop_run(dir.path(), &record).unwrap();

        let (header, rows) = read_csv_columns(&dir.path().join("estimate.csv")).unwrap();
        assert_eq!(header[0], "frame");
        assert_eq!(header[7], "confident");
        assert_eq!(rows.len(), record.estimates.len());
        // Pixel and arcsec columns stay consistent under the plate scale.
        let ps = record.spec.geom.plate_scale();
        for (row, est) in rows.iter().zip(&record.estimates) {
            assert!((row[2] - est.t.x).abs() <= 1e-7 * est.t.x.abs().max(1.0));
            assert!((row[4] - row[2] * ps.x).abs() <= 1e-6 * row[4].abs().max(1.0));
        }

        let kv = read_kv(&dir.path().join("config.txt")).unwrap();
        assert_eq!(kv.get("seed").unwrap(), "42");
        let summary = read_kv(&dir.path().join("summary.txt")).unwrap();
        assert_eq!(summary.get("kind").unwrap(), "open_loop");
        assert_eq!(
            summary.get("frames").unwrap().parse::<usize>().unwrap(),
            record.estimates.len()
        );
    }

    #[test]
    fn test_rerun_artifacts_are_byte_identical() {
        let spec = tiny_spec();
        let a = run_open_loop(&spec).unwrap();
        let b = run_open_loop(&spec).unwrap();
        assert_eq!(spec_config_text(&a.spec), spec_config_text(&b.spec));
        assert_eq!(
            estimate_csv(&a.estimates, &a.spec.geom),
            estimate_csv(&b.estimates, &b.spec.geom)
        );
        assert_eq!(open_loop_summary(&a), open_loop_summary(&b));
    }

    #[test]
    fn test_closed_loop_artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec();
        spec.control_rate_hz = 50.0;
        spec.frame_delta_t_us = 20_000;
        spec.derive_knobs();
        let record = run_closed_loop(&spec).unwrap();
        write_closed_loop_run(dir.path(), &record).unwrap();
        for name in ["config.txt", "gt.csv", "estimate.csv", "control.csv", "deviation.csv", "summary.txt"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let (header, rows) = read_csv_columns(&dir.path().join("deviation.csv")).unwrap();
        assert_eq!(header, vec!["t_s", "dev_x_as", "dev_y_as"]);
        assert_eq!(rows.len(), record.deviation_arcsec.len());
    }

    #[test]
    fn test_deviation_csv_formatting() {
        let trace = vec![(0.5, Vector2::new(1.25, -3.5))];
        let text = deviation_csv(&trace);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t_s,dev_x_as,dev_y_as");
        let row = lines.next().unwrap();
        assert!(row.starts_with("5.00000000e-1,1.25000000e0,-3.50000000e0"));
    }

    #[test]
    fn test_read_csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(read_csv_columns(&path).is_err());
    }
}
