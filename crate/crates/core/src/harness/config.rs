//! `key=value` override files for experiment tuning. Overrides are
//! applied after knob derivation, so a pinned value always wins.

use super::{ExperimentSpec, HarnessError};

/// Parse override text: one `key=value` per line, `#` comments and
/// blank lines ignored. Order is preserved.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value, got `{raw}`", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_f64(key: &str, v: &str) -> Result<f64, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("{key}: `{v}` is not a number")))
}

fn parse_u32(key: &str, v: &str) -> Result<u32, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("{key}: `{v}` is not an unsigned integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("{key}: `{v}` is not an unsigned integer")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, HarnessError> {
    v.parse()
        .map_err(|_| HarnessError::Config(format!("{key}: `{v}` is not an unsigned integer")))
}

/// Apply overrides in order. Unknown keys are errors so typos cannot
/// silently fall back to defaults.
pub fn apply_overrides(spec: &mut ExperimentSpec, kv: &[(String, String)]) -> Result<(), HarnessError> {
    for (k, v) in kv {
        match k.as_str() {
            // Controller gains.
            "kp" => spec.gains.kp = parse_f64(k, v)?,
            "ki" => spec.gains.ki = parse_f64(k, v)?,
            "kd" => spec.gains.kd = parse_f64(k, v)?,
            "integral_limit" => spec.gains.integral_limit = parse_f64(k, v)?,
            "dither_px" => spec.dither_px = parse_f64(k, v)?,
            // Filter covariances.
            "q_pos" => spec.kf.q_pos = parse_f64(k, v)?,
            "q_vel" => spec.kf.q_vel = parse_f64(k, v)?,
            "r" => spec.kf.r = parse_f64(k, v)?,
            "p0_pos" => spec.kf.p0_pos = parse_f64(k, v)?,
            "p0_vel" => spec.kf.p0_vel = parse_f64(k, v)?,
            // Stage model.
            "step_size_arcsec" => spec.stage.step_size_arcsec = parse_f64(k, v)?,
            "stage_max_rate_hz" => spec.stage.max_rate_hz = parse_f64(k, v)?,
            "stage_latency_ticks" => spec.stage.latency_ticks = parse_u32(k, v)?,
            "max_travel_per_tick_arcsec" => {
                spec.stage.max_travel_per_tick_arcsec = parse_f64(k, v)?
            }
            // Tracker knobs.
            "gate_radius_px" => spec.tracker.gate_radius_px = parse_f64(k, v)?,
            "merge_radius_px" => spec.tracker.merge_radius_px = parse_f64(k, v)?,
            "agglomerate_radius_px" => spec.tracker.agglomerate_radius_px = parse_f64(k, v)?,
            "persistence_radius_px" => spec.tracker.persistence_radius_px = parse_f64(k, v)?,
            "inlier_threshold_px" => spec.tracker.inlier_threshold_px = parse_f64(k, v)?,
            "early_exit_fraction" => spec.tracker.early_exit_fraction = parse_f64(k, v)?,
            "max_hypotheses" => spec.tracker.max_hypotheses = parse_usize(k, v)?,
            "min_confident_inliers" => spec.tracker.min_confident_inliers = parse_u32(k, v)?,
            "min_cluster_size" => spec.tracker.min_cluster_size = parse_u32(k, v)?,
            "stale_after_frames" => spec.tracker.stale_after_frames = parse_u64(k, v)?,
            "lost_after_frames" => spec.tracker.lost_after_frames = parse_u32(k, v)?,
            // Synthesis knobs.
            "psf_radius_px" => spec.sim.psf_radius_px = parse_u32(k, v)?,
            "events_per_star_per_sample" => {
                spec.sim.events_per_star_per_sample = parse_u32(k, v)?
            }
            "background_rate" => spec.sim.background_rate = parse_f64(k, v)?,
            "mag_limit" => spec.mag_limit = parse_f64(k, v)?,
            _ => {
                return Err(HarnessError::Config(format!("unknown config key `{k}`")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TrajectoryKind;

    fn spec() -> ExperimentSpec {
        ExperimentSpec::new(TrajectoryKind::Square, 0.84, 30.0, 100_000, 5.0, 1)
    }

    #[test]
    fn test_parse_skips_comments_and_blanks() {
        let kv = parse_kv("# tuning\n\nkp = 1.25\nki=0.2\n").unwrap();
        assert_eq!(kv, vec![("kp".into(), "1.25".into()), ("ki".into(), "0.2".into())]);
    }

    #[test]
    fn test_parse_rejects_bare_words() {
        assert!(parse_kv("kp 1.25").is_err());
    }

    #[test]
    fn test_overrides_apply_in_order() {
        let mut s = spec();
        let kv = parse_kv("kp=1.0\nkp=1.5\ngate_radius_px=40\nstage_latency_ticks=2").unwrap();
        apply_overrides(&mut s, &kv).unwrap();
        assert_eq!(s.gains.kp, 1.5);
        assert_eq!(s.tracker.gate_radius_px, 40.0);
        assert_eq!(s.stage.latency_ticks, 2);
    }

    #[test]
    fn test_override_wins_over_derivation() {
        let mut s = spec();
        let derived = s.tracker.gate_radius_px;
        let kv = parse_kv("gate_radius_px=99").unwrap();
        apply_overrides(&mut s, &kv).unwrap();
        assert_ne!(s.tracker.gate_radius_px, derived);
        assert_eq!(s.tracker.gate_radius_px, 99.0);
    }

    #[test]
    fn test_unknown_key_is_error() {
        let mut s = spec();
        let kv = parse_kv("warp_factor=9").unwrap();
        let err = apply_overrides(&mut s, &kv).unwrap_err();
        assert!(err.to_string().contains("warp_factor"));
    }

    #[test]
    fn test_bad_number_is_error() {
        let mut s = spec();
        let kv = parse_kv("kp=fast").unwrap();
        assert!(apply_overrides(&mut s, &kv).is_err());
    }
}
