//! Ground-truth pointing trajectories with injected jitter.
//!
//! A trajectory is a regular sampling of a clean geometric path (linear
//! drift, square, or circle) plus a random-walk jitter: at every step each
//! axis receives an independent zero-mean Gaussian increment that
//! accumulates over the run. Offsets are expressed in arcseconds of (ra,
//! dec) relative to the start pointing.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::sky::Pointing;
use crate::Vec2;

/// Linear drift rate, degrees per second (18 arcsec/s).
pub const LINEAR_RATE_DEG_S: f64 = 0.005;
/// Square path side, arcseconds (0.1 degrees), traversed in one period.
pub const SQUARE_SIDE_ARCSEC: f64 = 360.0;
/// Square path period, seconds.
pub const SQUARE_PERIOD_S: f64 = 20.0;
/// Circle path radius, arcseconds (0.05 degrees).
pub const CIRCLE_RADIUS_ARCSEC: f64 = 180.0;
/// Circle path period, seconds.
pub const CIRCLE_PERIOD_S: f64 = 45.0;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory csv: {0}")]
    Io(#[from] std::io::Error),
}

/// Clean path family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Linear,
    Square,
    Circle,
}

impl TrajectoryKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Linear => "linear",
            TrajectoryKind::Square => "square",
            TrajectoryKind::Circle => "circle",
        }
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(TrajectoryKind::Linear),
            "square" => Ok(TrajectoryKind::Square),
            "circle" => Ok(TrajectoryKind::Circle),
            other => Err(format!("unknown trajectory {other:?}")),
        }
    }
}

/// Per-step jitter presets, decade-spaced. The strongest preset injects
/// 84 arcseconds of motion per incremental step; each weaker preset is a
/// factor of ten smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePreset {
    N9,
    N8,
    N7,
    N6,
}

impl NoisePreset {
    /// Standard deviation of the per-step jitter increment, arcsec per axis.
    pub fn sigma_arcsec(&self) -> f64 {
        match self {
            NoisePreset::N9 => 0.084,
            NoisePreset::N8 => 0.84,
            NoisePreset::N7 => 8.4,
            NoisePreset::N6 => 84.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoisePreset::N9 => "n9",
            NoisePreset::N8 => "n8",
            NoisePreset::N7 => "n7",
            NoisePreset::N6 => "n6",
        }
    }

    pub const ALL: [NoisePreset; 4] =
        [NoisePreset::N9, NoisePreset::N8, NoisePreset::N7, NoisePreset::N6];
}

impl std::str::FromStr for NoisePreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "n9" => Ok(NoisePreset::N9),
            "n8" => Ok(NoisePreset::N8),
            "n7" => Ok(NoisePreset::N7),
            "n6" => Ok(NoisePreset::N6),
            other => Err(format!("unknown noise preset {other:?}")),
        }
    }
}

/// Full description of a sampled trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Per-step jitter increment standard deviation, arcsec per axis.
    pub noise_sigma_arcsec: f64,
    pub seed: u64,
    pub start: Pointing,
}

/// One trajectory sample: the jittered pointing actually flown and the
/// clean pointing the path prescribes.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthSample {
    pub t_s: f64,
    pub pointing: Pointing,
    pub clean_pointing: Pointing,
}

impl GroundTruthSample {
    /// Jittered offset from the trajectory start, arcseconds.
    pub fn offset_arcsec(&self, start: &Pointing) -> Vec2 {
        self.pointing.offset_arcsec_from(start)
    }
}

/// Clean path offset (arcseconds from start) at time `t_s`.
pub fn clean_offset_arcsec(kind: TrajectoryKind, t_s: f64) -> Vec2 {
    match kind {
        TrajectoryKind::Linear => {
            // Constant drift along the (1,1) diagonal so both axes move.
            let v = LINEAR_RATE_DEG_S * 3600.0;
            let c = std::f64::consts::FRAC_1_SQRT_2;
            Vec2::new(v * t_s * c, v * t_s * c)
        }
        TrajectoryKind::Square => {
            let s = SQUARE_SIDE_ARCSEC;
            let u = (t_s / SQUARE_PERIOD_S).rem_euclid(1.0) * 4.0;
            let leg = u.floor().min(3.0);
            let f = u - leg;
            match leg as u32 {
                0 => Vec2::new(s * f, 0.0),
                1 => Vec2::new(s, s * f),
                2 => Vec2::new(s * (1.0 - f), s),
                _ => Vec2::new(0.0, s * (1.0 - f)),
            }
        }
        TrajectoryKind::Circle => {
            let r = CIRCLE_RADIUS_ARCSEC;
            let phi = 2.0 * std::f64::consts::PI * t_s / CIRCLE_PERIOD_S;
            // Center sits at (-r, 0) so the path starts at the origin.
            Vec2::new(r * (phi.cos() - 1.0), r * phi.sin())
        }
    }
}

/// Generate the sampled trajectory: `round(duration * rate) + 1` samples
/// spaced `1/rate` seconds apart, endpoint included.
pub fn generate(spec: &TrajectorySpec) -> Result<Vec<GroundTruthSample>, TrajectoryError> {
    if !(spec.duration_s.is_finite() && spec.duration_s > 0.0) {
        return Err(TrajectoryError::InvalidSpec(format!(
            "duration {} s must be positive",
            spec.duration_s
        )));
    }
    if !(spec.rate_hz.is_finite() && spec.rate_hz > 0.0) {
        return Err(TrajectoryError::InvalidSpec(format!(
            "rate {} Hz must be positive",
            spec.rate_hz
        )));
    }
    if !(spec.noise_sigma_arcsec.is_finite() && spec.noise_sigma_arcsec >= 0.0) {
        return Err(TrajectoryError::InvalidSpec(format!(
            "noise sigma {} arcsec must be non-negative",
            spec.noise_sigma_arcsec
        )));
    }

    let steps = (spec.duration_s * spec.rate_hz).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma_arcsec)
        .map_err(|e| TrajectoryError::InvalidSpec(e.to_string()))?;

    let mut samples = Vec::with_capacity(steps as usize + 1);
    let mut jitter = Vec2::zeros();
    for k in 0..=steps {
        let t_s = k as f64 / spec.rate_hz;
        if k > 0 && spec.noise_sigma_arcsec > 0.0 {
            jitter.x += normal.sample(&mut rng);
            jitter.y += normal.sample(&mut rng);
        }
        let clean = clean_offset_arcsec(spec.kind, t_s);
        let mut clean_pointing = spec.start.offset_by_arcsec(clean);
        clean_pointing.t_s = t_s;
        let mut pointing = spec.start.offset_by_arcsec(clean + jitter);
        pointing.t_s = t_s;
        samples.push(GroundTruthSample { t_s, pointing, clean_pointing });
    }
    Ok(samples)
}

/// Format a float with nine significant digits (scientific notation).
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Write the ground-truth trace as CSV:
/// `t_s,ra_deg,dec_deg,clean_ra_deg,clean_dec_deg`, nine significant
/// digits per value.
pub fn write_csv<W: Write>(samples: &[GroundTruthSample], mut w: W) -> Result<(), TrajectoryError> {
    writeln!(w, "t_s,ra_deg,dec_deg,clean_ra_deg,clean_dec_deg")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_sig9(s.t_s),
            fmt_sig9(s.pointing.ra_deg),
            fmt_sig9(s.pointing.dec_deg),
            fmt_sig9(s.clean_pointing.ra_deg),
            fmt_sig9(s.clean_pointing.dec_deg),
        )?;
    }
    Ok(())
}
