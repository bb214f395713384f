//! Accuracy and stability metrics computed over time-stamped traces.

use nalgebra::Matrix2;

use super::HarnessError;
use crate::Vec2;

/// Post-settle pointing statistics.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationReport {
    /// Per-axis standard deviation of the deviation samples, arcsec.
    pub sigma_x_arcsec: f64,
    pub sigma_y_arcsec: f64,
    /// 2x2 covariance of the deviation samples.
    pub covariance: Matrix2<f64>,
    /// 3-sigma error ellipse from the covariance eigendecomposition.
    pub ellipse_semi_major_arcsec: f64,
    pub ellipse_semi_minor_arcsec: f64,
    pub ellipse_angle_rad: f64,
    /// First time the deviation stayed below the settle threshold for a
    /// full hold window; None when that never happened.
    pub settle_time_s: Option<f64>,
    /// Samples inside the evaluation window.
    pub sample_count: usize,
}

/// Root-mean-square of error-vector norms between two traces, joined by
/// nearest timestamp. Estimate samples with no ground-truth sample
/// within `max_skew_s` are skipped; an empty join is an error.
pub fn compute_rmse(
    est: &[(f64, Vec2)],
    gt: &[(f64, Vec2)],
    max_skew_s: f64,
) -> Result<f64, HarnessError> {
    if est.is_empty() || gt.is_empty() {
        return Err(HarnessError::EmptyOverlap);
    }
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for &(t, e) in est {
        let idx = gt.partition_point(|&(gt_t, _)| gt_t < t);
        let mut best: Option<(f64, Vec2)> = None;
        for cand in [idx.wrapping_sub(1), idx] {
            if let Some(&(gt_t, g)) = gt.get(cand) {
                let skew = (gt_t - t).abs();
                if skew <= max_skew_s && best.is_none_or(|(bs, _)| skew < bs) {
                    best = Some((skew, g));
                }
            }
        }
        if let Some((_, g)) = best {
            sum_sq += (e - g).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Err(HarnessError::EmptyOverlap);
    }
    Ok((sum_sq / n as f64).sqrt())
}

/// Root-mean-square of error-vector norms between an estimate trace and
/// a reference trace, with the reference linearly interpolated at each
/// estimate timestamp. Frame-rate estimates are stamped mid-window, so a
/// nearest-sample join would charge them up to half a sample interval of
/// reference motion; interpolation removes that artifact. Estimates
/// outside the reference time span are skipped; an empty overlap is an
/// error.
pub fn compute_rmse_interp(
    est: &[(f64, Vec2)],
    gt: &[(f64, Vec2)],
) -> Result<f64, HarnessError> {
    if est.is_empty() || gt.len() < 2 {
        return Err(HarnessError::EmptyOverlap);
    }
    let (t_first, t_last) = (gt[0].0, gt[gt.len() - 1].0);
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for &(t, e) in est {
        if t < t_first || t > t_last {
            continue;
        }
        let idx = gt.partition_point(|&(gt_t, _)| gt_t <= t);
        let g = if idx == 0 {
            gt[0].1
        } else if idx == gt.len() {
            gt[gt.len() - 1].1
        } else {
            let (t0, g0) = gt[idx - 1];
            let (t1, g1) = gt[idx];
            let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            g0 + (g1 - g0) * a
        };
        sum_sq += (e - g).norm_squared();
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::EmptyOverlap);
    }
    Ok((sum_sq / n as f64).sqrt())
}

/// First time from which the trace norm stays below `threshold` for a
/// continuous `hold_s` seconds.
pub fn settle_time(trace: &[(f64, Vec2)], threshold: f64, hold_s: f64) -> Option<f64> {
    let mut candidate: Option<f64> = None;
    for &(t, v) in trace {
        if v.norm() < threshold {
            let start = *candidate.get_or_insert(t);
            if t - start >= hold_s {
                return Some(start);
            }
        } else {
            candidate = None;
        }
    }
    None
}

/// Per-axis spread, covariance, and 3-sigma ellipse of the deviation
/// samples at `t >= settle_cut_s`. A constant trace yields zero sigmas.
pub fn compute_spread(trace: &[(f64, Vec2)], settle_cut_s: f64) -> StabilizationReport {
    let samples: Vec<Vec2> = trace
        .iter()
        .filter(|&&(t, _)| t >= settle_cut_s)
        .map(|&(_, v)| v)
        .collect();
    let n = samples.len();
    if n < 2 {
        return StabilizationReport {
            sigma_x_arcsec: 0.0,
            sigma_y_arcsec: 0.0,
            covariance: Matrix2::zeros(),
            ellipse_semi_major_arcsec: 0.0,
            ellipse_semi_minor_arcsec: 0.0,
            ellipse_angle_rad: 0.0,
            settle_time_s: None,
            sample_count: n,
        };
    }
    let mean = samples.iter().sum::<Vec2>() / n as f64;
    let mut cov = Matrix2::zeros();
    for s in &samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;
    let eigen = cov.symmetric_eigen();
    // Order the axes so the major axis comes first.
    let (major_idx, minor_idx) = if eigen.eigenvalues[0] >= eigen.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let major_var = eigen.eigenvalues[major_idx].max(0.0);
    let minor_var = eigen.eigenvalues[minor_idx].max(0.0);
    let axis = eigen.eigenvectors.column(major_idx);
    StabilizationReport {
        sigma_x_arcsec: cov[(0, 0)].max(0.0).sqrt(),
        sigma_y_arcsec: cov[(1, 1)].max(0.0).sqrt(),
        covariance: cov,
        ellipse_semi_major_arcsec: 3.0 * major_var.sqrt(),
        ellipse_semi_minor_arcsec: 3.0 * minor_var.sqrt(),
        ellipse_angle_rad: axis[1].atan2(axis[0]),
        settle_time_s: None,
        sample_count: n,
    }
}

/// Pearson correlation coefficient of two equal-length series.
pub fn pearson_r(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / (var_a * var_b).sqrt()
}
