//! Estimate smoothing and actuation: constant-velocity Kalman filter,
//! PID correction, and the stepper micro-motion stage model.
//!
//! The filter state is [p_x, p_y, v_x, v_y] in pixels and pixels/second
//! on the image plane. Control commands are relative moves in sensor
//! arcseconds; the stage executes them as integer micro-steps after a
//! fixed latency, so its position is always an exact step multiple.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::Vec2;

/// Kalman filter noise and initialization parameters.
#[derive(Debug, Clone, Copy)]
pub struct KfConfig {
    /// Process noise density on each position component, px^2 per second.
    pub q_pos: f64,
    /// Process noise density on each velocity component, (px/s)^2 per second.
    pub q_vel: f64,
    /// Measurement noise per axis, px^2.
    pub r: f64,
    /// Initial position variance, px^2.
    pub p0_pos: f64,
    /// Initial velocity variance, (px/s)^2.
    pub p0_vel: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self { q_pos: 0.01, q_vel: 0.1, r: 0.25, p0_pos: 10.0, p0_vel: 100.0 }
    }
}

/// Filter mean and covariance at time `t_s`.
#[derive(Debug, Clone, Copy)]
pub struct FilterState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t_s: f64,
}

fn symmetrize(p: &mut Matrix4<f64>) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Advance the state by `dt` under the constant-velocity model, with a
/// known displacement `u` (px) injected into the position components.
pub fn kf_predict(state: &mut FilterState, dt: f64, u: Vec2, q: &Matrix4<f64>) {
    debug_assert!(dt > 0.0);
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    let mut b = Matrix4x2::zeros();
    b[(0, 0)] = 1.0;
    b[(1, 1)] = 1.0;
    state.x = f * state.x + b * u;
    state.p = f * state.p * f.transpose() + q;
    symmetrize(&mut state.p);
    state.t_s += dt;
}

/// Measurement update with a position observation `z` (px). Returns
/// false and leaves the state untouched when `z` is non-finite or the
/// innovation covariance cannot be inverted.
pub fn kf_update(state: &mut FilterState, z: Vec2, r: &Matrix2<f64>) -> bool {
    if !(z.x.is_finite() && z.y.is_finite()) {
        return false;
    }
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    // Small diagonal term keeps S invertible even for R = 0.
    let s = h * state.p * h.transpose() + r + Matrix2::identity() * 1e-12;
    let Some(s_inv) = s.try_inverse() else {
        return false;
    };
    let k = state.p * h.transpose() * s_inv;
    let innovation = z - h * state.x;
    state.x += k * innovation;
    // Joseph form keeps P positive semi-definite under rounding.
    let ikh = Matrix4::identity() - k * h;
    state.p = ikh * state.p * ikh.transpose() + k * r * k.transpose();
    symmetrize(&mut state.p);
    true
}

/// Convenience wrapper owning the configuration and the lazily
/// initialized state: the first measurement seeds the position, with
/// zero velocity and the configured initial covariance.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    cfg: KfConfig,
    state: Option<FilterState>,
    rejected: u64,
}

impl KalmanFilter {
    pub fn new(cfg: KfConfig) -> Self {
        Self { cfg, state: None, rejected: 0 }
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    /// Measurements rejected as non-finite.
    pub fn rejected_count(&self) -> u64 {
        self.rejected
    }

    /// Process noise accumulated over `dt` seconds, so prediction cadence
    /// does not change how much uncertainty a span of time contributes.
    pub fn process_noise(&self, dt: f64) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(
            self.cfg.q_pos * dt,
            self.cfg.q_pos * dt,
            self.cfg.q_vel * dt,
            self.cfg.q_vel * dt,
        ))
    }

    /// Predict forward to `t_s` (no-op until initialized or when time
    /// does not advance).
    pub fn predict_to(&mut self, t_s: f64, u: Vec2) {
        if let Some(state) = &mut self.state {
            let dt = t_s - state.t_s;
            if dt > 0.0 {
                let q = Matrix4::from_diagonal(&Vector4::new(
                    self.cfg.q_pos * dt,
                    self.cfg.q_pos * dt,
                    self.cfg.q_vel * dt,
                    self.cfg.q_vel * dt,
                ));
                kf_predict(state, dt, u, &q);
            } else if u != Vec2::zeros() {
                state.x[0] += u.x;
                state.x[1] += u.y;
            }
        }
    }

    /// Fold in a position measurement, initializing on first use.
    /// Returns false when the measurement was rejected.
    pub fn update(&mut self, z: Vec2, t_s: f64) -> bool {
        if !(z.x.is_finite() && z.y.is_finite()) {
            self.rejected += 1;
            return false;
        }
        match &mut self.state {
            None => {
                self.state = Some(FilterState {
                    x: Vector4::new(z.x, z.y, 0.0, 0.0),
                    p: Matrix4::from_diagonal(&Vector4::new(
                        self.cfg.p0_pos,
                        self.cfg.p0_pos,
                        self.cfg.p0_vel,
                        self.cfg.p0_vel,
                    )),
                    t_s,
                });
                true
            }
            Some(state) => {
                let r = Matrix2::identity() * self.cfg.r;
                let ok = kf_update(state, z, &r);
                if !ok {
                    self.rejected += 1;
                }
                ok
            }
        }
    }

    pub fn position(&self) -> Option<Vec2> {
        self.state.as_ref().map(|s| Vector2::new(s.x[0], s.x[1]))
    }

    pub fn velocity(&self) -> Option<Vec2> {
        self.state.as_ref().map(|s| Vector2::new(s.x[2], s.x[3]))
    }
}

/// Per-axis PID gains with an anti-windup clamp on the integral.
#[derive(Debug, Clone, Copy)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Clamp on the accumulated integral, arcsec * s per axis.
    pub integral_limit: f64,
}

impl Default for PidGains {
    /// Tuned against the default stage (one tick of command latency,
    /// 0.05 arcsec steps) driven by per-frame motion estimates. The
    /// derivative gain defaults to zero: a backward difference scales
    /// by 1/dt, so at 50 Hz it turns sub-pixel estimate scatter into
    /// commands far larger than the error itself.
    fn default() -> Self {
        Self { kp: 1.0, ki: 0.1, kd: 0.0, integral_limit: 500.0 }
    }
}

/// Controller memory between steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct PidState {
    pub integral: Vec2,
    pub prev_error: Option<Vec2>,
}

/// One controller step: proportional + clamped integral +
/// backward-difference derivative (zero on the first call).
pub fn pid_step(gains: &PidGains, error: Vec2, dt: f64, state: &mut PidState) -> Vec2 {
    debug_assert!(dt > 0.0);
    let clamp = gains.integral_limit;
    state.integral += error * dt;
    state.integral.x = state.integral.x.clamp(-clamp, clamp);
    state.integral.y = state.integral.y.clamp(-clamp, clamp);
    let derivative = match state.prev_error {
        Some(prev) => (error - prev) / dt,
        None => Vec2::zeros(),
    };
    state.prev_error = Some(error);
    error * gains.kp + state.integral * gains.ki + derivative * gains.kd
}

/// Stage geometry and dynamics limits.
#[derive(Debug, Clone, Copy)]
pub struct StageConfig {
    /// Smallest executable move, arcsec on the sensor plane.
    pub step_size_arcsec: f64,
    /// Highest command rate the stage accepts, Hz.
    pub max_rate_hz: f64,
    /// Control periods between a command and its execution.
    pub latency_ticks: u32,
    /// Largest move executable in one control period, arcsec per axis.
    pub max_travel_per_tick_arcsec: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            step_size_arcsec: 0.05,
            max_rate_hz: 50.0,
            latency_ticks: 1,
            max_travel_per_tick_arcsec: 200.0,
        }
    }
}

/// Outcome of queueing one command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandReceipt {
    /// Steps that will be executed per axis.
    pub steps: Vector2<i64>,
    pub saturated: bool,
}

/// Stepper stage: position is an integer step count per axis, commands
/// are relative moves applied `latency_ticks` after they are issued.
#[derive(Debug, Clone)]
pub struct Stage {
    cfg: StageConfig,
    steps: Vector2<i64>,
    pending: VecDeque<(u64, Vector2<i64>)>,
    saturations: u64,
}

impl Stage {
    pub fn new(cfg: StageConfig) -> Self {
        Self { cfg, steps: Vector2::new(0, 0), pending: VecDeque::new(), saturations: 0 }
    }

    pub fn config(&self) -> &StageConfig {
        &self.cfg
    }

    pub fn steps(&self) -> Vector2<i64> {
        self.steps
    }

    pub fn position_arcsec(&self) -> Vec2 {
        Vector2::new(
            self.steps.x as f64 * self.cfg.step_size_arcsec,
            self.steps.y as f64 * self.cfg.step_size_arcsec,
        )
    }

    pub fn saturation_count(&self) -> u64 {
        self.saturations
    }

    /// Queue a relative move (arcsec). The move is quantized to whole
    /// steps (round to nearest) and clamped to the per-tick travel
    /// limit; it executes at tick `now + latency_ticks`.
    pub fn command(&mut self, delta_arcsec: Vec2, now_tick: u64) -> CommandReceipt {
        let max_steps = (self.cfg.max_travel_per_tick_arcsec / self.cfg.step_size_arcsec)
            .floor() as i64;
        let mut saturated = false;
        let mut quantize = |v: f64| -> i64 {
            let steps = (v / self.cfg.step_size_arcsec).round() as i64;
            if steps.abs() > max_steps {
                saturated = true;
                max_steps * steps.signum()
            } else {
                steps
            }
        };
        let steps = Vector2::new(quantize(delta_arcsec.x), quantize(delta_arcsec.y));
        if saturated {
            self.saturations += 1;
        }
        self.pending
            .push_back((now_tick + self.cfg.latency_ticks as u64, steps));
        CommandReceipt { steps, saturated }
    }

    /// Execute every queued command due at or before `now_tick`.
    pub fn tick(&mut self, now_tick: u64) {
        while let Some(&(due, steps)) = self.pending.front() {
            if due > now_tick {
                break;
            }
            self.steps += steps;
            self.pending.pop_front();
        }
    }
}
