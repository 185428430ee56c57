//! Kinematic diver-following simulator.
//!
//! World frame: x forward at zero yaw, y left, z up. Positive yaw turns the
//! robot to the right, positive pitch raises the nose. The camera looks
//! along the robot's heading; image u grows right and v grows down.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::dataset::sprite::{self, Placement, SpriteKind};
use crate::dataset::{finish, hue_to_rgb, render_water, SceneRecipe, WaterStyle};
use crate::detection::Detection;
use crate::model::{ModelError, NetworkWeights};
use crate::servo::{Mode, Observation, ServoCommand, ServoConfig, ServoController, ServoError, TrackerStatus};
use crate::tensor::Tensor;

pub type Vec3 = [f64; 3];

const PITCH_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid sim parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn forward(&self) -> Vec3 {
        let (cp, sp) = (self.pitch.cos(), self.pitch.sin());
        [cp * self.yaw.cos(), -cp * self.yaw.sin(), sp]
    }

    pub fn right(&self) -> Vec3 {
        [-self.yaw.sin(), -self.yaw.cos(), 0.0]
    }

    pub fn up(&self) -> Vec3 {
        let (r, f) = (self.right(), self.forward());
        [r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]]
    }

    /// Camera coordinates `(right, up, depth)` of a world point.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.position);
        [dot(d, self.right()), dot(d, self.up()), dot(d, self.forward())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 200.0,
            width: 224,
            height: 224,
        }
    }
}

impl Camera {
    /// Pixel position of a camera-frame point in front of the lens.
    pub fn project(&self, c: Vec3) -> Option<(f64, f64)> {
        (c[2] > NEAR_PLANE).then(|| {
            (
                self.width as f64 / 2.0 + self.focal * c[0] / c[2],
                self.height as f64 / 2.0 - self.focal * c[1] / c[2],
            )
        })
    }
}

/// Points closer than this (m) are treated as behind the camera.
pub const NEAR_PLANE: f64 = 0.05;

/// Diver velocity as a function of time (and, for waypoints, position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryScript {
    Straight {
        velocity: Vec3,
    },
    /// Drift along `heading` (unit x-y direction) with a lateral sinusoid.
    Sinusoid {
        amplitude: f64,
        period: f64,
        drift: f64,
    },
    Circle {
        radius: f64,
        period: f64,
    },
    RandomWaypoints {
        seed: u64,
        speed: f64,
        extent: f64,
    },
}

impl TrajectoryScript {
    pub fn stationary() -> Self {
        TrajectoryScript::Straight { velocity: [0.0; 3] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryScript::Straight { .. } => "straight",
            TrajectoryScript::Sinusoid { .. } => "sinusoid",
            TrajectoryScript::Circle { .. } => "circle",
            TrajectoryScript::RandomWaypoints { .. } => "random-waypoints",
        }
    }
}

/// Runtime state of a trajectory script.
#[derive(Debug, Clone)]
pub struct ScriptRunner {
    pub script: TrajectoryScript,
    pub max_speed: f64,
    origin: Vec3,
    waypoint: Option<Vec3>,
    rng: ChaCha8Rng,
}

impl ScriptRunner {
    pub fn new(script: TrajectoryScript, max_speed: f64, origin: Vec3) -> Self {
        let seed = match &script {
            TrajectoryScript::RandomWaypoints { seed, .. } => *seed,
            _ => 0,
        };
        ScriptRunner {
            script,
            max_speed,
            origin,
            waypoint: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn velocity(&mut self, t: f64, position: Vec3) -> Vec3 {
        use std::f64::consts::TAU;
        let v = match self.script {
            TrajectoryScript::Straight { velocity } => velocity,
            TrajectoryScript::Sinusoid { amplitude, period, drift } => {
                let w = TAU / period;
                // lateral offset amplitude * sin(w t), measured to the left
                [drift, amplitude * w * (w * t).cos(), 0.0]
            }
            TrajectoryScript::Circle { radius, period } => {
                let w = TAU / period;
                let s = radius * w;
                [-s * (w * t).sin(), s * (w * t).cos(), 0.0]
            }
            TrajectoryScript::RandomWaypoints { speed, extent, .. } => {
                let reached = self.waypoint.map_or(true, |w| norm(sub(w, position)) < 0.2);
                if reached {
                    let o = self.origin;
                    self.waypoint = Some([
                        o[0] + self.rng.gen_range(-extent..=extent),
                        o[1] + self.rng.gen_range(-extent..=extent),
                        o[2] + self.rng.gen_range(-extent..=extent) * 0.3,
                    ]);
                }
                let d = sub(self.waypoint.expect("set above"), position);
                let n = norm(d);
                if n > 0.0 {
                    scale(d, speed / n)
                } else {
                    [0.0; 3]
                }
            }
        };
        let s = norm(v);
        if s > self.max_speed {
            scale(v, self.max_speed / s)
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorKind {
    /// Ground-truth box with Gaussian corner jitter and random misses.
    Oracle { jitter: f64, miss_rate: f64 },
    /// The trained network on rendered frames.
    Model { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Physics step in seconds.
    pub dt: f64,
    /// Detector frames per second.
    pub detection_rate: f64,
    pub camera: Camera,
    /// Diver body `(width, height)` in meters.
    pub diver_extent: (f64, f64),
    pub diver_start: Vec3,
    pub script: TrajectoryScript,
    pub max_diver_speed: f64,
    pub detector: DetectorKind,
    /// From this time on every detector frame comes back empty.
    pub disable_detector_at: Option<f64>,
    pub servo: ServoConfig,
    pub render_noise: f32,
}

impl Default for SimConfig {
    fn default() -> Self {
        let servo = ServoConfig::default();
        let camera = Camera::default();
        SimConfig {
            seed: 0,
            dt: 0.05,
            detection_rate: 7.0,
            diver_start: [setpoint_distance(&camera, (0.5, 1.8), servo.area_setpoint), 0.0, 0.0],
            camera,
            diver_extent: (0.5, 1.8),
            script: TrajectoryScript::stationary(),
            max_diver_speed: 1.0,
            detector: DetectorKind::Oracle {
                jitter: 5.0,
                miss_rate: 0.05,
            },
            disable_detector_at: None,
            servo,
            render_noise: 0.02,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Parameter(m.to_string()));
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return bad("dt must be in (0, 0.5]");
        }
        if !(self.detection_rate > 0.0) {
            return bad("detection rate must be positive");
        }
        if !(self.camera.focal > 0.0) || self.camera.width == 0 || self.camera.height == 0 {
            return bad("camera focal length and image size must be positive");
        }
        if !(self.diver_extent.0 > 0.0 && self.diver_extent.1 > 0.0) {
            return bad("diver extent must be positive");
        }
        if let DetectorKind::Oracle { jitter, miss_rate } = self.detector {
            if !(jitter >= 0.0) || !(0.0..1.0).contains(&miss_rate) {
                return bad("oracle jitter must be >= 0 and miss rate in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Distance at which a camera-facing diver fills `area` of the frame.
pub fn setpoint_distance(camera: &Camera, extent: (f64, f64), area: f64) -> f64 {
    let frame = (camera.width * camera.height) as f64;
    camera.focal * (extent.0 * extent.1 / (area * frame)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub time: f64,
    pub tick: u64,
    pub robot: Pose,
    pub diver: Pose,
    pub diver_velocity: Vec3,
    pub camera: Camera,
    pub diver_extent: (f64, f64),
    pub seed: u64,
    pub status: TrackerStatus,
}

impl SimState {
    pub fn new(config: &SimConfig) -> Self {
        SimState {
            time: 0.0,
            tick: 0,
            robot: Pose {
                position: [0.0; 3],
                yaw: 0.0,
                pitch: 0.0,
            },
            diver: Pose {
                position: config.diver_start,
                yaw: 0.0,
                pitch: 0.0,
            },
            diver_velocity: [0.0; 3],
            camera: config.camera,
            diver_extent: config.diver_extent,
            seed: config.seed,
            status: TrackerStatus {
                mode: Mode::Tracking,
                misses: 0,
            },
        }
    }

    /// Distance from the robot to the diver's center.
    pub fn range(&self) -> f64 {
        norm(sub(self.diver.position, self.robot.position))
    }

    /// Whether the diver's center projects inside the image.
    pub fn diver_in_view(&self) -> bool {
        let c = self.robot.to_camera(self.diver.position);
        self.camera
            .project(c)
            .is_some_and(|(u, v)| u >= 0.0 && v >= 0.0 && u < self.camera.width as f64 && v < self.camera.height as f64)
    }
}

/// Image rectangle of the camera-facing diver billboard, unclipped.
fn billboard(state: &SimState) -> Option<BBox> {
    let c = state.robot.to_camera(state.diver.position);
    let (u, v) = state.camera.project(c)?;
    let k = state.camera.focal / c[2];
    let (hw, hh) = (0.5 * state.diver_extent.0 * k, 0.5 * state.diver_extent.1 * k);
    Some(BBox::new(u - hw, v - hh, u + hw, v + hh))
}

/// Ground-truth box of the diver, clipped to the image; `None` when the
/// diver is behind the camera or entirely outside the frame.
pub fn project_diver(state: &SimState) -> Option<BBox> {
    billboard(state)?.clip(state.camera.width as f64, state.camera.height as f64)
}

fn frame_rng(state: &SimState, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
    rng.set_stream(stream);
    rng.set_word_pos((state.tick as u128) << 20);
    rng
}

/// Camera view: water background, the diver sprite filling its projected
/// box, and per-frame pixel noise.
pub fn render_frame(state: &SimState, noise: f32) -> Tensor<f32> {
    let cam = state.camera;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(state.seed);
    let mut img = render_water(cam.width, cam.height, &WaterStyle::default(), &mut bg_rng);
    let mut rng = frame_rng(state, 1);
    if let Some(b) = billboard(state) {
        let suit = hue_to_rgb((state.seed % 997) as f32 / 997.0);
        let s = sprite::diver(&mut rng, 0.6, suit);
        sprite::draw(&mut img, &s, &Placement::fill(SpriteKind::Diver, &b));
    }
    let mut recipe = SceneRecipe::new(state.seed, cam.width, cam.height);
    recipe.noise = noise;
    recipe.red_attenuation = 0.2;
    finish(&mut img, &recipe, &mut rng);
    img
}

/// Ground truth with Gaussian jitter on every corner coordinate; `None` on a
/// simulated miss or when the diver is out of view.
pub fn oracle_detect(state: &SimState, jitter: f64, miss_rate: f64, rng: &mut ChaCha8Rng) -> Option<Detection> {
    let truth = project_diver(state)?;
    let u: f64 = rng.gen();
    if u < miss_rate {
        return None;
    }
    let confidence = 1.0 - 0.5 * rng.gen::<f64>();
    let mut b = truth;
    if jitter > 0.0 {
        let n = Normal::new(0.0, jitter).expect("jitter checked");
        b = BBox::new(
            b.xmin + n.sample(rng),
            b.ymin + n.sample(rng),
            b.xmax + n.sample(rng),
            b.ymax + n.sample(rng),
        );
    }
    let (w, h) = (state.camera.width as f64, state.camera.height as f64);
    let b = BBox::new(b.xmin.min(b.xmax), b.ymin.min(b.ymax), b.xmax.max(b.xmin), b.ymax.max(b.ymin));
    let b = b.clip(w, h).filter(|c| c.area() > 0.0).unwrap_or(truth);
    Some(Detection::new(1, confidence, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLogRecord {
    pub time: f64,
    pub robot: Pose,
    pub diver: Pose,
    pub detection: Option<Detection>,
    /// Whether a detector frame completed on this tick.
    pub fresh: bool,
    pub command: ServoCommand,
    pub truth: Option<BBox>,
    pub status: TrackerStatus,
}

/// Something that turns a state into a detector result.
pub enum Detector<'a> {
    Oracle {
        jitter: f64,
        miss_rate: f64,
        rng: ChaCha8Rng,
    },
    Model {
        weights: &'a NetworkWeights<f32>,
        threshold: f64,
        noise: f32,
    },
}

impl<'a> Detector<'a> {
    pub fn from_config(config: &SimConfig, weights: Option<&'a NetworkWeights<f32>>) -> Result<Self> {
        match config.detector {
            DetectorKind::Oracle { jitter, miss_rate } => Ok(Detector::Oracle {
                jitter,
                miss_rate,
                rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0xdead_beef),
            }),
            DetectorKind::Model { threshold } => Ok(Detector::Model {
                weights: weights.ok_or_else(|| SimError::Parameter("model detector needs weights".into()))?,
                threshold,
                noise: config.render_noise,
            }),
        }
    }

    pub fn detect(&mut self, state: &SimState) -> Result<Option<Detection>> {
        match self {
            Detector::Oracle { jitter, miss_rate, rng } => Ok(oracle_detect(state, *jitter, *miss_rate, rng)),
            Detector::Model { weights, threshold, noise } => {
                let frame = render_frame(state, *noise);
                let size = weights.config().input_size;
                let frame = crate::dataset::resize_bilinear(&frame, size, size);
                let det = weights.detect(&frame, *threshold)?;
                let sx = state.camera.width as f64 / size as f64;
                let sy = state.camera.height as f64 / size as f64;
                Ok(det.map(|d| Detection {
                    bbox: d.bbox.scale(sx, sy),
                    ..d
                }))
            }
        }
    }
}

/// Whether tick `k` completes a detector frame at `rate` Hz with step `dt`.
pub fn is_detection_tick(k: u64, dt: f64, rate: f64) -> bool {
    if k == 0 {
        return true;
    }
    let slot = |k: u64| ((k as f64) * dt * rate + 1e-9).floor();
    slot(k) > slot(k - 1)
}

/// Owns everything a running episode needs.
pub struct Simulation<'a> {
    pub config: SimConfig,
    pub state: SimState,
    pub controller: ServoController,
    pub script: ScriptRunner,
    pub detector: Detector<'a>,
}

impl<'a> Simulation<'a> {
    pub fn new(config: SimConfig, weights: Option<&'a NetworkWeights<f32>>) -> Result<Self> {
        config.validate()?;
        let state = SimState::new(&config);
        let cam = (config.camera.width as f64, config.camera.height as f64);
        Ok(Simulation {
            controller: ServoController::new(config.servo.clone(), cam),
            script: ScriptRunner::new(config.script.clone(), config.max_diver_speed, config.diver_start),
            detector: Detector::from_config(&config, weights)?,
            state,
            config,
        })
    }

    /// One physics step. `steer`, when given, replaces the scripted diver
    /// velocity for this tick.
    pub fn tick(&mut self, steer: Option<Vec3>) -> Result<SimLogRecord> {
        let dt = self.config.dt;
        let st = &mut self.state;
        let fresh = is_detection_tick(st.tick, dt, self.config.detection_rate);
        let disabled = self.config.disable_detector_at.is_some_and(|t| st.time >= t - 1e-12);
        let detection = if fresh && !disabled { self.detector.detect(st)? } else { None };
        let obs = if fresh {
            Observation::Fresh(detection.as_ref())
        } else {
            Observation::Stale
        };
        let (command, status) = self.controller.step(obs, dt)?;
        let truth = project_diver(st);
        let record = SimLogRecord {
            time: st.time,
            robot: st.robot,
            diver: st.diver,
            detection: detection.clone(),
            fresh,
            command,
            truth,
            status,
        };

        integrate(&mut st.robot, &command, dt);
        let v = match steer {
            Some(v) => {
                let s = norm(v);
                if s > self.config.max_diver_speed {
                    scale(v, self.config.max_diver_speed / s)
                } else {
                    v
                }
            }
            None => self.script.velocity(st.time, st.diver.position),
        };
        st.diver_velocity = v;
        st.diver.position = add(st.diver.position, scale(v, dt));
        if v[0] != 0.0 || v[1] != 0.0 {
            st.diver.yaw = wrap_angle(-v[1].atan2(v[0]));
        }
        st.status = status;
        st.tick += 1;
        st.time = st.tick as f64 * dt;
        Ok(record)
    }
}

/// Applies a command for `dt` seconds to a kinematic robot.
pub fn integrate(robot: &mut Pose, cmd: &ServoCommand, dt: f64) {
    robot.yaw = wrap_angle(robot.yaw + cmd.yaw_rate * dt);
    robot.pitch = (robot.pitch + cmd.pitch_rate * dt).clamp(-PITCH_LIMIT, PITCH_LIMIT);
    let f = robot.forward();
    robot.position = add(robot.position, scale(f, cmd.forward_speed * dt));
    robot.position[2] += cmd.vertical_speed * dt;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub ticks: usize,
    pub duration: f64,
    /// Mean |range - setpoint range| in meters.
    pub mean_distance_error: f64,
    /// Fraction of ticks with the diver's center in view.
    pub fov_retention: f64,
    /// Fraction of ticks whose true box area is within 50% of the setpoint.
    pub area_within_band: f64,
    pub loss_events: usize,
    pub detections: usize,
    pub detector_frames: usize,
}

impl EpisodeSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numbers")
    }
}

pub struct Episode {
    pub summary: EpisodeSummary,
    pub log: Vec<SimLogRecord>,
}

/// Runs `duration` seconds of the configured scenario.
pub fn run_episode(config: &SimConfig, duration: f64, weights: Option<&NetworkWeights<f32>>) -> Result<Episode> {
    if !(duration > 0.0) {
        return Err(SimError::Parameter("duration must be positive".into()));
    }
    let mut sim = Simulation::new(config.clone(), weights)?;
    let ticks = (duration / config.dt).round() as usize;
    let d0 = setpoint_distance(&config.camera, config.diver_extent, config.servo.area_setpoint);
    let frame = (config.camera.width * config.camera.height) as f64;
    let mut log = Vec::with_capacity(ticks);
    let (mut dist_err, mut in_view, mut in_band) = (0.0, 0usize, 0usize);
    for _ in 0..ticks {
        dist_err += (sim.state.range() - d0).abs();
        if sim.state.diver_in_view() {
            in_view += 1;
        }
        let r = sim.tick(None)?;
        if r.truth
            .is_some_and(|b| (b.area() / frame - config.servo.area_setpoint).abs() <= 0.5 * config.servo.area_setpoint)
        {
            in_band += 1;
        }
        log.push(r);
    }
    let mut loss_events = 0;
    let mut prev = Mode::Tracking;
    for r in &log {
        if r.status.mode == Mode::Lost && prev != Mode::Lost {
            loss_events += 1;
        }
        prev = r.status.mode;
    }
    let n = ticks.max(1) as f64;
    let summary = EpisodeSummary {
        ticks,
        duration: ticks as f64 * config.dt,
        mean_distance_error: dist_err / n,
        fov_retention: in_view as f64 / n,
        area_within_band: in_band as f64 / n,
        loss_events,
        detections: log.iter().filter(|r| r.detection.is_some()).count(),
        detector_frames: log.iter().filter(|r| r.fresh).count(),
    };
    Ok(Episode { summary, log })
}

pub const LOG_COLUMNS: [&str; 27] = [
    "time",
    "robot_x",
    "robot_y",
    "robot_z",
    "robot_yaw",
    "robot_pitch",
    "diver_x",
    "diver_y",
    "diver_z",
    "diver_yaw",
    "diver_pitch",
    "fresh",
    "det_conf",
    "det_xmin",
    "det_ymin",
    "det_xmax",
    "det_ymax",
    "yaw_rate",
    "pitch_rate",
    "forward_speed",
    "vertical_speed",
    "gt_xmin",
    "gt_ymin",
    "gt_xmax",
    "gt_ymax",
    "mode",
    "misses",
];

/// Tab-separated episode log with a header row. Missing values are empty.
pub fn log_tsv(log: &[SimLogRecord]) -> String {
    let mut s = LOG_COLUMNS.join("\t");
    s.push('\n');
    let opt_box = |b: Option<BBox>| match b {
        Some(b) => format!("{}\t{}\t{}\t{}", b.xmin, b.ymin, b.xmax, b.ymax),
        None => "\t\t\t".to_string(),
    };
    for r in log {
        let (rp, dp) = (r.robot.position, r.diver.position);
        let det = match &r.detection {
            Some(d) => format!("{}\t{}", d.confidence, opt_box(Some(d.bbox))),
            None => format!("\t{}", opt_box(None)),
        };
        let c = r.command;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.time,
            rp[0],
            rp[1],
            rp[2],
            r.robot.yaw,
            r.robot.pitch,
            dp[0],
            dp[1],
            dp[2],
            r.diver.yaw,
            r.diver.pitch,
            u8::from(r.fresh),
            det,
            c.yaw_rate,
            c.pitch_rate,
            c.forward_speed,
            c.vertical_speed,
            opt_box(r.truth),
            r.status.mode,
            r.status.misses,
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with_diver(p: Vec3) -> SimState {
        let mut s = SimState::new(&SimConfig::default());
        s.diver.position = p;
        s
    }

    #[test]
    fn axes_are_right_handed() {
        let p = Pose {
            position: [0.0; 3],
            yaw: 0.3,
            pitch: -0.2,
        };
        let (f, r, u) = (p.forward(), p.right(), p.up());
        for (a, b) in [(f, r), (f, u), (r, u)] {
            assert!(dot(a, b).abs() < 1e-12);
        }
        let zero = Pose {
            position: [0.0; 3],
            yaw: 0.0,
            pitch: 0.0,
        };
        assert_eq!(zero.right(), [0.0, -1.0, 0.0]);
        assert!((zero.up()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dead_ahead_is_centered() {
        let b = project_diver(&state_with_diver([3.0, 0.0, 0.0])).unwrap();
        assert!((b.center().0 - 112.0).abs() < 1e-9 && (b.center().1 - 112.0).abs() < 1e-9);
    }

    #[test]
    fn pinhole_scaling() {
        let near = project_diver(&state_with_diver([3.0, 0.0, 0.0])).unwrap();
        let far = project_diver(&state_with_diver([6.0, 0.0, 0.0])).unwrap();
        assert!((far.width() - near.width() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn behind_and_outside() {
        assert!(project_diver(&state_with_diver([-3.0, 0.0, 0.0])).is_none());
        assert!(project_diver(&state_with_diver([1.0, 20.0, 0.0])).is_none());
    }

    #[test]
    fn diver_to_the_right_projects_right() {
        // y is left in the world frame
        let b = project_diver(&state_with_diver([3.0, -0.5, 0.0])).unwrap();
        assert!(b.center().0 > 112.0);
        let up = project_diver(&state_with_diver([3.0, 0.0, 0.5])).unwrap();
        assert!(up.center().1 < 112.0);
    }

    #[test]
    fn render_matches_projection() {
        let mut s = state_with_diver([2.5, 0.3, -0.2]);
        s.robot.yaw = 0.1;
        let a = render_frame(&s, 0.0);
        assert_eq!(a, render_frame(&s, 0.0));
        let bare = {
            let mut far = s.clone();
            far.diver.position = [-10.0, 0.0, 0.0];
            render_frame(&far, 0.0)
        };
        let w = 224;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, (p, q)) in a.data().chunks_exact(3).zip(bare.data().chunks_exact(3)).enumerate() {
            if p != q {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        let t = project_diver(&s).unwrap();
        for (a, b) in [(x0 as f64, t.xmin), (y0 as f64, t.ymin), (x1 as f64, t.xmax), (y1 as f64, t.ymax)] {
            assert!((a - b).abs() <= 1.0, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_without_noise_is_exact() {
        let s = state_with_diver([3.0, 0.2, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = oracle_detect(&s, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(d.bbox, project_diver(&s).unwrap());
        assert!(d.confidence >= 0.5);
        let misses = (0..1000).filter(|_| oracle_detect(&s, 0.0, 0.999, &mut rng).is_none()).count();
        assert!(misses > 980);
    }

    #[test]
    fn zero_command_keeps_pose_and_yaw_integrates() {
        let mut p = Pose {
            position: [1.0, 2.0, 3.0],
            yaw: 0.4,
            pitch: 0.1,
        };
        let before = p;
        integrate(&mut p, &ServoCommand::default(), 0.05);
        assert_eq!(p, before);
        let cmd = ServoCommand {
            yaw_rate: 0.25,
            ..ServoCommand::default()
        };
        for _ in 0..40 {
            integrate(&mut p, &cmd, 0.05);
        }
        assert!((p.yaw - (0.4 + 0.25 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn detection_ticks_at_seven_hertz() {
        let n = (0..200).filter(|&k| is_detection_tick(k, 0.05, 7.0)).count();
        assert_eq!(n, 70);
    }

    #[test]
    fn straight_motion_is_exact() {
        let mut cfg = SimConfig::default();
        cfg.script = TrajectoryScript::Straight {
            velocity: [0.3, -0.4, 0.0],
        };
        let mut sim = Simulation::new(cfg.clone(), None).unwrap();
        for _ in 0..200 {
            sim.tick(None).unwrap();
        }
        let moved = norm(sub(sim.state.diver.position, cfg.diver_start));
        assert!((moved - 0.5 * 10.0).abs() < 1e-9);
    }

    #[test]
    fn episodes_are_deterministic() {
        let mut cfg = SimConfig::default();
        cfg.script = TrajectoryScript::RandomWaypoints {
            seed: 3,
            speed: 0.5,
            extent: 2.0,
        };
        let a = run_episode(&cfg, 5.0, None).unwrap();
        let b = run_episode(&cfg, 5.0, None).unwrap();
        assert_eq!(log_tsv(&a.log), log_tsv(&b.log));
        assert_eq!(a.summary.ticks, 100);
        let tsv = log_tsv(&a.log);
        assert!(tsv.lines().all(|l| l.split('\t').count() == LOG_COLUMNS.len()));
    }

    #[test]
    fn stationary_diver_at_setpoint_stays_in_view() {
        let cfg = SimConfig {
            detector: DetectorKind::Oracle {
                jitter: 0.0,
                miss_rate: 0.0,
            },
            ..SimConfig::default()
        };
        let e = run_episode(&cfg, 10.0, None).unwrap();
        assert_eq!(e.summary.fov_retention, 1.0);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
