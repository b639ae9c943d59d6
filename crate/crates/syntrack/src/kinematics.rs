//! Base-level state-space model: direction-conditioned motion, process
//! noise, the GMTI measurement function, and the sensor platform's flight
//! path.
//!
//! A target state is planar position plus velocity. Propagation advances
//! position by one sample period of the old velocity, then rotates the
//! (preserved) speed onto the assigned road heading; process noise enters
//! as a random planar acceleration with independent along-track and
//! cross-track components, integrated over the period. The airborne sensor
//! measures slant range, range rate, and azimuth, each with independent
//! Gaussian noise.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadgraph::Heading;

/// Planar target state: position in meters, velocity in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        KinematicState { x, y, vx, vy }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn pos(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// One radar observation: slant range (m), range rate (m/s), and azimuth
/// in degrees, kept in the half-open interval (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub range: f64,
    pub range_rate: f64,
    pub azimuth: f64,
}

/// Sensor platform state: ground-plane position/velocity plus constant
/// altitude above the target plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub altitude: f64,
}

/// Noise and timing parameters: measurement standard deviations (range m,
/// range rate m/s, azimuth deg), process-noise accelerations (along-track
/// and cross-track, m/s^2), and the sample period in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_r: f64,
    pub sigma_rdot: f64,
    pub sigma_az: f64,
    pub sigma_a: f64,
    pub sigma_o: f64,
    pub t: f64,
}

/// Baseline measurement sigmas and the per-level increments of the noise
/// sweep: level j uses sigma + j * delta componentwise.
const SIGMA_BASE: [f64; 3] = [5.0, 0.3, 0.5];
const SIGMA_STEP: [f64; 3] = [1.0, 0.1, 0.1];

impl NoiseConfig {
    /// Configuration for noise-sweep level `j` (0 is the baseline).
    pub fn level(j: u32) -> NoiseConfig {
        let j = j as f64;
        NoiseConfig {
            sigma_r: SIGMA_BASE[0] + j * SIGMA_STEP[0],
            sigma_rdot: SIGMA_BASE[1] + j * SIGMA_STEP[1],
            sigma_az: SIGMA_BASE[2] + j * SIGMA_STEP[2],
            sigma_a: 0.5,
            sigma_o: 0.05,
            t: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("sigma_r", self.sigma_r),
            ("sigma_rdot", self.sigma_rdot),
            ("sigma_az", self.sigma_az),
            ("sigma_a", self.sigma_a),
            ("sigma_o", self.sigma_o),
            ("t", self.t),
        ];
        for (name, v) in vals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "noise config field {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::level(0)
    }
}

/// Noiseless motion update: position advances by one period of the old
/// velocity; the speed magnitude is preserved and rotated onto heading `d`.
pub fn propagate_mean(x: &KinematicState, d: Heading, t: f64) -> KinematicState {
    let (ux, uy) = d.unit();
    let s = x.speed();
    KinematicState {
        x: x.x + t * x.vx,
        y: x.y + t * x.vy,
        vx: s * ux,
        vy: s * uy,
    }
}

/// Motion update with process noise: the noiseless update plus a random
/// planar acceleration, drawn along-track (sigma_a) then cross-track
/// (sigma_o), integrated over the period. The resulting perturbation has
/// exactly the covariance returned by `process_cov`.
pub fn propagate<R: Rng + ?Sized>(
    x: &KinematicState,
    d: Heading,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> KinematicState {
    let mut out = propagate_mean(x, d, cfg.t);
    let (ux, uy) = d.unit();
    let (wx, wy) = (-uy, ux);
    let ea: f64 = rng.sample(StandardNormal);
    let eo: f64 = rng.sample(StandardNormal);
    let ax = cfg.sigma_a * ea * ux + cfg.sigma_o * eo * wx;
    let ay = cfg.sigma_a * ea * uy + cfg.sigma_o * eo * wy;
    let t = cfg.t;
    out.x += 0.5 * t * t * ax;
    out.y += 0.5 * t * t * ay;
    out.vx += t * ax;
    out.vy += t * ay;
    out
}

/// Process-noise covariance for heading `d`, ordered (x, y, vx, vy). Built
/// as A Q A' where A integrates a planar acceleration over one period and
/// Q is the acceleration covariance, diagonal in the road frame with
/// along-track variance sigma_a^2 and cross-track variance sigma_o^2.
pub fn process_cov(d: Heading, cfg: &NoiseConfig) -> Matrix4<f64> {
    let (ux, uy) = d.unit();
    let u = Vector2::new(ux, uy);
    let w = Vector2::new(-uy, ux);
    let q: Matrix2<f64> =
        cfg.sigma_a * cfg.sigma_a * u * u.transpose() + cfg.sigma_o * cfg.sigma_o * w * w.transpose();
    let t = cfg.t;
    let h = 0.5 * t * t;
    #[rustfmt::skip]
    let a = Matrix4x2::new(
        h,   0.0,
        0.0, h,
        t,   0.0,
        0.0, t,
    );
    a * q * a.transpose()
}

/// One-period linear lookahead: position advanced by the current velocity,
/// velocity unchanged. Used to decide whether a mover is about to enter
/// its road's into-intersection.
pub fn linear_predict(x: &KinematicState, t: f64) -> KinematicState {
    KinematicState {
        x: x.x + t * x.vx,
        y: x.y + t * x.vy,
        vx: x.vx,
        vy: x.vy,
    }
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_azimuth(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Ground-plane separation below which the measurement geometry (azimuth)
/// is considered degenerate.
const GROUND_EPS: f64 = 1e-9;

fn mean_components(x: &KinematicState, c: &PlatformState) -> (f64, f64, f64) {
    let dx = x.x - c.x;
    let dy = x.y - c.y;
    let range = (dx * dx + dy * dy + c.altitude * c.altitude).sqrt();
    // Both altitudes are constant so the vertical closing rate is zero and
    // only ground-plane velocity enters the numerator.
    let rate = (dx * (x.vx - c.vx) + dy * (x.vy - c.vy)) / range;
    let az = dy.atan2(dx).to_degrees();
    (range, rate, wrap_azimuth(az))
}

/// Noiseless measurement of target `x` from platform `c`: slant range
/// through the platform altitude, projected relative ground velocity, and
/// azimuth of the target as seen from the platform's ground point.
pub fn measure_mean(x: &KinematicState, c: &PlatformState) -> Result<Measurement> {
    let (dx, dy) = (x.x - c.x, x.y - c.y);
    if dx.hypot(dy) < GROUND_EPS {
        return Err(Error::DegenerateGeometry(format!(
            "target and platform ground positions coincide at ({:.3}, {:.3})",
            x.x, x.y
        )));
    }
    let (range, range_rate, azimuth) = mean_components(x, c);
    Ok(Measurement {
        range,
        range_rate,
        azimuth,
    })
}

/// Noisy measurement: `measure_mean` plus independent Gaussian noise on
/// each component (range, rate, azimuth in that draw order), with the
/// azimuth re-wrapped into (-180, 180].
pub fn measure<R: Rng + ?Sized>(
    x: &KinematicState,
    c: &PlatformState,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Measurement> {
    let m = measure_mean(x, c)?;
    let er: f64 = rng.sample(StandardNormal);
    let ed: f64 = rng.sample(StandardNormal);
    let ez: f64 = rng.sample(StandardNormal);
    Ok(Measurement {
        range: m.range + cfg.sigma_r * er,
        range_rate: m.range_rate + cfg.sigma_rdot * ed,
        azimuth: wrap_azimuth(m.azimuth + cfg.sigma_az * ez),
    })
}

/// Log-density of measurement `z` under the trivariate Gaussian centered
/// at the noiseless measurement of `x`, with independent components. The
/// azimuth residual is wrapped into (-180, 180] before scoring. Total
/// ground co-location is scored with azimuth treated as exact rather than
/// rejected, so the filter can always evaluate a weight.
pub fn log_likelihood(
    z: &Measurement,
    x: &KinematicState,
    c: &PlatformState,
    cfg: &NoiseConfig,
) -> f64 {
    let (dx, dy) = (x.x - c.x, x.y - c.y);
    let (range, rate, az) = mean_components(x, c);
    let rr = (z.range - range) / cfg.sigma_r;
    let rd = (z.range_rate - rate) / cfg.sigma_rdot;
    let ra = if dx.hypot(dy) < GROUND_EPS {
        0.0
    } else {
        wrap_azimuth(z.azimuth - az) / cfg.sigma_az
    };
    let norm = 1.5 * (2.0 * std::f64::consts::PI).ln()
        + cfg.sigma_r.ln()
        + cfg.sigma_rdot.ln()
        + cfg.sigma_az.ln();
    -0.5 * (rr * rr + rd * rd + ra * ra) - norm
}

/// Rectangular surveillance orbit flown at constant speed and altitude,
/// starting at the southwest corner heading east and turning instantly at
/// each corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformPath {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub speed: f64,
    pub altitude: f64,
}

impl Default for PlatformPath {
    fn default() -> Self {
        PlatformPath {
            x0: -500.0,
            y0: -500.0,
            side: 1500.0,
            speed: 100.0,
            altitude: 3000.0,
        }
    }
}

impl PlatformPath {
    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0 && self.speed > 0.0 && self.altitude > 0.0) {
            return Err(Error::InvalidArgument(
                "platform path needs positive side, speed, and altitude".into(),
            ));
        }
        Ok(())
    }

    /// Full lap time in seconds.
    pub fn period(&self) -> f64 {
        4.0 * self.side / self.speed
    }

    /// Platform state at continuous time `time` seconds after the start of
    /// the orbit.
    pub fn state_at(&self, time: f64) -> PlatformState {
        let leg_t = self.side / self.speed;
        let s = time.rem_euclid(self.period());
        let leg = (s / leg_t).floor().min(3.0) as u32;
        let d = (s - leg as f64 * leg_t) * self.speed;
        let (x, y, vx, vy) = match leg {
            0 => (self.x0 + d, self.y0, self.speed, 0.0),
            1 => (self.x0 + self.side, self.y0 + d, 0.0, self.speed),
            2 => (self.x0 + self.side - d, self.y0 + self.side, -self.speed, 0.0),
            _ => (self.x0, self.y0 + self.side - d, 0.0, -self.speed),
        };
        PlatformState {
            x,
            y,
            vx,
            vy,
            altitude: self.altitude,
        }
    }

    /// Platform state at sample index `k` under sample period `cfg.t`.
    pub fn at(&self, k: u32, cfg: &NoiseConfig) -> PlatformState {
        self.state_at(k as f64 * cfg.t)
    }
}
