//! Box-centering visual servo: per-axis PID on bounding-box errors with a
//! coast-then-stop policy when the target is not seen.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::detection::Detection;

#[derive(Debug, Error, PartialEq)]
pub enum ServoError {
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("box has zero area: {0:?}")]
    ZeroArea(BBox),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, ServoError>;

/// Normalized offsets of a box: `ex`, `ey` in `[-1, 1]` from the image
/// center (right and down positive) and `ez`, the area-fraction shortfall
/// against `target_area` (positive when the target looks too small).
pub fn box_errors(b: &BBox, image_w: f64, image_h: f64, target_area: f64) -> Result<(f64, f64, f64)> {
    if !(b.area() > 0.0) {
        return Err(ServoError::ZeroArea(*b));
    }
    let (cx, cy) = b.center();
    let (hw, hh) = (image_w / 2.0, image_h / 2.0);
    Ok(((cx - hw) / hw, (cy - hh) / hh, target_area - b.area() / (image_w * image_h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub saturation: f64,
    pub integral_clamp: f64,
}

impl PidState {
    pub fn new(gains: PidGains, saturation: f64, integral_clamp: f64) -> Self {
        PidState {
            gains,
            integral: 0.0,
            prev_error: None,
            saturation,
            integral_clamp,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// `kp e + ki ∫e + kd de/dt`, saturated. The first call after a reset has
    /// no derivative term.
    pub fn update(&mut self, error: f64, dt: f64) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(ServoError::TimeStep(dt));
        }
        self.integral = (self.integral + error * dt).clamp(-self.integral_clamp, self.integral_clamp);
        let derivative = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        let g = self.gains;
        let out = g.kp * error + g.ki * self.integral + g.kd * derivative;
        Ok(out.clamp(-self.saturation, self.saturation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ServoCommand {
    /// rad/s, positive turns right.
    pub yaw_rate: f64,
    /// rad/s, positive pitches up.
    pub pitch_rate: f64,
    /// m/s along the camera axis.
    pub forward_speed: f64,
    /// m/s, positive up.
    pub vertical_speed: f64,
}

impl ServoCommand {
    pub fn scaled(self, k: f64) -> Self {
        ServoCommand {
            yaw_rate: self.yaw_rate * k,
            pitch_rate: self.pitch_rate * k,
            forward_speed: self.forward_speed * k,
            vertical_speed: self.vertical_speed * k,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.yaw_rate == 0.0 && self.pitch_rate == 0.0 && self.forward_speed == 0.0 && self.vertical_speed == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tracking,
    Coasting,
    Lost,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tracking => "tracking",
            Mode::Coasting => "coasting",
            Mode::Lost => "lost",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerStatus {
    pub mode: Mode,
    /// Consecutive detection frames without a confident detection.
    pub misses: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub yaw: PidGains,
    pub pitch: PidGains,
    pub forward: PidGains,
    /// rad/s bound on yaw and pitch rates.
    pub sat_angular: f64,
    /// m/s bound on forward and vertical speed.
    pub sat_linear: f64,
    pub integral_clamp: f64,
    pub confidence_gate: f64,
    pub lost_threshold: u32,
    pub area_setpoint: f64,
    pub coast_decay: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            yaw: PidGains {
                kp: 0.8,
                ki: 0.05,
                kd: 0.1,
            },
            pitch: PidGains {
                kp: 0.8,
                ki: 0.05,
                kd: 0.1,
            },
            forward: PidGains { kp: 1.2, ki: 0.0, kd: 0.1 },
            sat_angular: 0.5,
            sat_linear: 0.6,
            integral_clamp: 1.0,
            confidence_gate: 0.5,
            lost_threshold: 27,
            area_setpoint: 0.2,
            coast_decay: 0.9,
        }
    }
}

impl ServoConfig {
    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ServoError::Config { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let v: f64 = value.parse().map_err(|_| err(format!("{key}: not a number: {value:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("{key}: must be finite")));
            }
            let gain = |g: &mut PidGains, term: &str| -> Result<()> {
                match term {
                    "kp" => g.kp = v,
                    "ki" => g.ki = v,
                    "kd" => g.kd = v,
                    _ => return Err(err(format!("unknown key {key}"))),
                }
                Ok(())
            };
            match key.split_once('.') {
                Some(("yaw", t)) => gain(&mut self.yaw, t)?,
                Some(("pitch", t)) => gain(&mut self.pitch, t)?,
                Some(("fwd", t)) => gain(&mut self.forward, t)?,
                _ => match key {
                    "sat.angular" => self.sat_angular = v,
                    "sat.linear" => self.sat_linear = v,
                    "integral.clamp" => self.integral_clamp = v,
                    "conf.gate" => self.confidence_gate = v,
                    "lost.threshold" => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(err(format!("lost.threshold must be a positive integer, got {value}")));
                        }
                        self.lost_threshold = v as u32
                    }
                    "area.setpoint" => self.area_setpoint = v,
                    "coast.decay" => self.coast_decay = v,
                    _ => return Err(err(format!("unknown key {key}"))),
                },
            }
        }
        if !(self.sat_angular > 0.0 && self.sat_linear > 0.0) {
            return Err(ServoError::Config {
                line: 0,
                msg: "saturation limits must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        for (name, g) in [("yaw", self.yaw), ("pitch", self.pitch), ("fwd", self.forward)] {
            m.insert(format!("{name}.kp"), g.kp);
            m.insert(format!("{name}.ki"), g.ki);
            m.insert(format!("{name}.kd"), g.kd);
        }
        m.insert("sat.angular".into(), self.sat_angular);
        m.insert("sat.linear".into(), self.sat_linear);
        m.insert("integral.clamp".into(), self.integral_clamp);
        m.insert("conf.gate".into(), self.confidence_gate);
        m.insert("lost.threshold".into(), self.lost_threshold as f64);
        m.insert("area.setpoint".into(), self.area_setpoint);
        m.insert("coast.decay".into(), self.coast_decay);
        m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// What the detector delivered this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<'a> {
    /// A detector frame completed; `None` means nothing was found.
    Fresh(Option<&'a Detection>),
    /// No new detector output since the last tick.
    Stale,
}

#[derive(Debug, Clone)]
pub struct ServoController {
    pub config: ServoConfig,
    pub image_size: (f64, f64),
    yaw: PidState,
    pitch: PidState,
    forward: PidState,
    last: ServoCommand,
    status: TrackerStatus,
    /// Time accumulated since the PIDs last ran.
    pending_dt: f64,
}

impl ServoController {
    pub fn new(config: ServoConfig, image_size: (f64, f64)) -> Self {
        let pid = |g| PidState::new(g, config.sat_angular, config.integral_clamp);
        ServoController {
            yaw: pid(config.yaw),
            pitch: pid(config.pitch),
            forward: PidState::new(config.forward, config.sat_linear, config.integral_clamp),
            config,
            image_size,
            last: ServoCommand::default(),
            status: TrackerStatus {
                mode: Mode::Tracking,
                misses: 0,
            },
            pending_dt: 0.0,
        }
    }

    pub fn status(&self) -> TrackerStatus {
        self.status
    }

    pub fn last_command(&self) -> ServoCommand {
        self.last
    }

    fn reset_pids(&mut self) {
        self.yaw.reset();
        self.pitch.reset();
        self.forward.reset();
    }

    /// Advances the controller by `dt` seconds.
    ///
    /// A fresh confident detection drives the PIDs. A fresh miss counts
    /// toward the lost threshold and coasts on the decayed last command;
    /// reaching the threshold zeroes everything. Stale ticks only decay the
    /// held command.
    pub fn step(&mut self, obs: Observation, dt: f64) -> Result<(ServoCommand, TrackerStatus)> {
        if !(dt > 0.0) {
            return Err(ServoError::TimeStep(dt));
        }
        self.pending_dt += dt;
        match obs {
            Observation::Stale => {
                if self.status.mode != Mode::Lost {
                    self.last = self.last.scaled(self.config.coast_decay);
                }
            }
            Observation::Fresh(Some(d)) if d.confidence >= self.config.confidence_gate => {
                let (w, h) = self.image_size;
                let (ex, ey, ez) = box_errors(&d.bbox, w, h, self.config.area_setpoint)?;
                let dt = std::mem::take(&mut self.pending_dt);
                self.last = ServoCommand {
                    yaw_rate: self.yaw.update(ex, dt)?,
                    // image y grows downward; a box above center needs a nose-up turn
                    pitch_rate: self.pitch.update(-ey, dt)?,
                    forward_speed: self.forward.update(ez, dt)?,
                    vertical_speed: 0.0,
                };
                self.status = TrackerStatus {
                    mode: Mode::Tracking,
                    misses: 0,
                };
            }
            Observation::Fresh(_) => {
                self.pending_dt = 0.0;
                self.status.misses = self.status.misses.saturating_add(1);
                if self.status.misses >= self.config.lost_threshold {
                    self.status.mode = Mode::Lost;
                    self.last = ServoCommand::default();
                    self.reset_pids();
                } else {
                    self.status.mode = Mode::Coasting;
                    self.last = self.last.scaled(self.config.coast_decay);
                }
            }
        }
        Ok((self.last, self.status))
    }
}

/// Single-call form of [`ServoController::step`] for one fresh detector frame.
pub fn servo_step(controller: &mut ServoController, detection: Option<&Detection>, dt: f64) -> Result<(ServoCommand, TrackerStatus)> {
    controller.step(Observation::Fresh(detection), dt)
}
