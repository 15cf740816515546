//! Closed-loop flights, dataset collection, collision metrics and the CLI.
//!
//! A rollout advances the vehicle at the physics rate and wakes the camera
//! every few steps. On each camera frame the active policy produces a
//! lateral command: the expert reads the world directly, learned policies
//! see only the downsampled binary event mask and their own recurrent state.

pub mod cli;
mod dataset;

pub use dataset::{
    collect_dataset, load_dataset, load_trajectory_files, CommandRow, Manifest, TrajectoryEntry, TrajectoryFiles,
    FORMAT_VERSIONS,
};

use crate::control::{
    command_from_waypoint, decompose_v_y, expert_waypoint, step_dynamics, DynamicsConfig, ExpertConfig, QuadState,
    VelocityCommand,
};
use crate::error::{Error, Result};
use crate::events::{
    batch_events, bem_from_batch, bem_from_difflog, events_difflog, to_micros, Bem, Event, EventCameraModel,
    ThresholdConfig,
};
use crate::geom::Vec3;
use crate::learner::{forward, ModelParams, RecurrentState, Sample, Trajectory};
use crate::render::{render, CameraConfig, DepthMap, Frame};
use crate::world::{Bounds, World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Who flies the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Expert,
    LearnedJoint,
    LearnedIndependent,
    LearnedNoDepth,
    /// Flies straight ahead.
    Blind,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Expert,
        PolicyKind::LearnedJoint,
        PolicyKind::LearnedIndependent,
        PolicyKind::LearnedNoDepth,
        PolicyKind::Blind,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Expert => "expert",
            PolicyKind::LearnedJoint => "learned_joint",
            PolicyKind::LearnedIndependent => "learned_independent",
            PolicyKind::LearnedNoDepth => "learned_no_depth",
            PolicyKind::Blind => "blind",
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(
            self,
            PolicyKind::LearnedJoint | PolicyKind::LearnedIndependent | PolicyKind::LearnedNoDepth
        )
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown policy '{}'", s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventModelKind {
    Accumulator,
    Difflog,
}

impl std::str::FromStr for EventModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accumulator" => Ok(EventModelKind::Accumulator),
            "difflog" => Ok(EventModelKind::Difflog),
            _ => Err(Error::Validation(format!("unknown event model '{}'", s))),
        }
    }
}

/// Cruise speed: fixed, or drawn uniformly per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedSpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl SpeedSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpeedSpec::Fixed(v) => v > 0.0 && v.is_finite(),
            SpeedSpec::Range([a, b]) => a > 0.0 && b >= a && b.is_finite(),
        };
        if !ok {
            return Err(Error::Validation(format!("invalid speed {:?}", self)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SpeedSpec::Fixed(v) => v,
            SpeedSpec::Range([a, b]) if b > a => rng.gen_range(a..b),
            SpeedSpec::Range([a, _]) => a,
        }
    }
}

impl std::str::FromStr for SpeedSpec {
    type Err = Error;
    /// `"5"` or `"3-7"`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad speed '{}'", s)))
        };
        let spec = match s.split_once('-') {
            Some((a, b)) => SpeedSpec::Range([num(a)?, num(b)?]),
            None => SpeedSpec::Fixed(num(s)?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// What a rollout keeps per camera frame besides state and command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordLevel {
    None,
    /// Downsampled mask and depth at the network input size.
    Training,
    /// Full-resolution frames, depth maps, events and masks.
    Full,
}

/// One closed-loop flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub world_seed: u64,
    pub policy: PolicyKind,
    pub speed: SpeedSpec,
    /// Distance to fly along +x, meters.
    pub length: f64,
    pub event_model: EventModelKind,
    /// Defaults to three times the nominal flight time.
    pub timeout: Option<f64>,
    pub stop_on_collision: bool,
    /// Camera height above ground, meters.
    pub altitude: f64,
    pub world: WorldConfig,
    pub camera: CameraConfig,
    pub events: ThresholdConfig,
    pub expert: ExpertConfig,
    pub dynamics: DynamicsConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            world_seed: 0,
            policy: PolicyKind::Expert,
            speed: SpeedSpec::Range([3.0, 7.0]),
            length: 10.0,
            event_model: EventModelKind::Difflog,
            timeout: None,
            stop_on_collision: false,
            altitude: 1.5,
            world: WorldConfig::default(),
            camera: CameraConfig::default(),
            events: ThresholdConfig::default(),
            expert: ExpertConfig::default(),
            dynamics: DynamicsConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.speed.validate()?;
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Validation(format!("trajectory length {} must be > 0", self.length)));
        }
        if let Some(t) = self.timeout {
            if !(t > 0.0) {
                return Err(Error::Validation(format!("timeout {} must be > 0", t)));
            }
        }
        if !(self.altitude > 0.0 && self.altitude < crate::render::TREE_HEIGHT) {
            return Err(Error::Validation(format!("altitude {} outside the trunks' height", self.altitude)));
        }
        if !(self.dynamics.tau > 0.0 && self.dynamics.physics_dt > 0.0) {
            return Err(Error::Validation(format!("invalid dynamics {:?}", self.dynamics)));
        }
        self.camera.validate()?;
        self.events.validate()?;
        self.expert.validate()?;
        self.steps_per_frame().map(|_| ())
    }

    /// Physics steps between camera frames; the camera period must be a
    /// whole number of physics steps.
    pub fn steps_per_frame(&self) -> Result<usize> {
        let r = self.camera.frame_dt() / self.dynamics.physics_dt;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "camera period {} s is not a whole number of physics steps of {} s",
                self.camera.frame_dt(),
                self.dynamics.physics_dt
            )));
        }
        Ok(n as usize)
    }

    /// World for this trial. The forest is stretched along +x when the flight
    /// would leave it, keeping the tree density of the base configuration.
    pub fn build_world(&self) -> Result<World> {
        let mut cfg = self.world.clone();
        let b = cfg.bounds;
        let needed = self.length + self.expert.horizon;
        if b.x_max < needed {
            let area = (b.x_max - b.x_min) * b.width();
            let new = Bounds::new(b.x_min, needed, b.y_min, b.y_max);
            let new_area = (new.x_max - new.x_min) * new.width();
            cfg.n_trees = (cfg.n_trees as f64 * new_area / area).round() as usize;
            cfg.bounds = new;
        }
        cfg.generate(self.world_seed)
    }

    fn timeout_for(&self, speed: f64) -> f64 {
        self.timeout.unwrap_or(3.0 * self.length / speed)
    }
}

/// Start position and speed of a trial, drawn from the world seed.
///
/// The lateral start is uniform over the central 20% of the forest width;
/// draws within the world's start clearance of a trunk are redrawn, falling
/// back to the centerline.
pub fn trial_start(world: &World, trial: &TrialConfig) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(trial.world_seed ^ 0x5EED_57A7_0000_0001);
    let speed = trial.speed.sample(&mut rng);
    let half = 0.1 * world.bounds.width();
    let mid = 0.5 * (world.bounds.y_min + world.bounds.y_max);
    let clear = |y: f64| {
        let p = crate::geom::Vec2::new(world.bounds.x_min, y);
        world.obstacles_within(p, world.start_clearance.max(trial.expert.inflate.quad_radius)).is_empty()
    };
    let y0 = (0..32)
        .map(|_| mid + rng.gen_range(-half..=half))
        .find(|&y| clear(y))
        .unwrap_or(mid);
    (y0, speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Timeout,
    /// Stopped at first contact (only with `stop_on_collision`).
    Collided,
}

/// Everything logged at one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    pub state: QuadState,
    pub command: VelocityCommand,
    /// Expert lateral command, when the expert is flying.
    pub v_y_label: Option<f64>,
    pub frame: Option<Frame>,
    pub depth: Option<DepthMap>,
    /// Events in `(t_prev, t]`, accumulator model only.
    pub events: Option<Vec<Event>>,
    pub bem: Option<Bem>,
    pub sample: Option<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub speed: f64,
    pub start_y: f64,
    pub frames: Vec<FrameRecord>,
    /// Maximal in-collision intervals `[t_enter, t_exit]`; an open interval
    /// at the end closes at the final time.
    pub collisions: Vec<(f64, f64)>,
    pub outcome: Outcome,
    pub final_state: QuadState,
}

impl RolloutRecord {
    pub fn collision_count(&self) -> usize {
        self.collisions.len()
    }

    pub fn duration(&self) -> f64 {
        self.final_state.t
    }

    /// Learner samples, when recorded at training level or above.
    pub fn training_trajectory(&self) -> Option<Trajectory> {
        let samples = self.frames.iter().map(|f| f.sample.clone()).collect::<Option<Vec<_>>>()?;
        Some(Trajectory { samples })
    }
}

/// Block-mean of a depth map onto the network grid.
pub fn downsample_depth(d: &DepthMap, width: usize, height: usize) -> Vec<f64> {
    let xs = crate::events::block_ranges(d.width, width);
    let ys = crate::events::block_ranges(d.height, height);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let mut s = 0.0;
            for y in y0..y1 {
                s += d.depth[y * d.width + x0..y * d.width + x1].iter().map(|&v| v as f64).sum::<f64>();
            }
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Mask of the accumulator events stamped in `(t_prev, t]` (microseconds).
pub fn bem_for_interval(events: &[Event], t_prev: u64, t: u64, width: usize, height: usize) -> Result<Bem> {
    Ok(bem_from_batch(&batch_events(events, t_prev + 1, t - t_prev, width, height)?))
}

/// Network input size used for recording when no model is given.
fn record_grid(params: Option<&ModelParams>, fallback: (usize, usize)) -> (usize, usize) {
    params.map_or(fallback, |p| (p.config.input_width, p.config.input_height))
}

/// Options beyond the trial itself.
#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions<'a> {
    pub params: Option<&'a ModelParams>,
    pub record: RecordLevel,
    /// Grid for training-level recording without a model.
    pub training_grid: (usize, usize),
}

impl Default for RolloutOptions<'_> {
    fn default() -> Self {
        Self {
            params: None,
            record: RecordLevel::None,
            training_grid: (64, 64),
        }
    }
}

/// Flies one trial and counts distinct collisions.
pub fn rollout(world: &World, trial: &TrialConfig, params: Option<&ModelParams>) -> Result<RolloutRecord> {
    rollout_with(
        world,
        trial,
        RolloutOptions {
            params,
            ..RolloutOptions::default()
        },
    )
}

pub fn rollout_with(world: &World, trial: &TrialConfig, opts: RolloutOptions) -> Result<RolloutRecord> {
    trial.validate()?;
    if trial.policy.is_learned() && opts.params.is_none() {
        return Err(Error::Validation(format!("policy {} needs model parameters", trial.policy.name())));
    }
    let steps_per_frame = trial.steps_per_frame()?;
    let dt = trial.dynamics.physics_dt;
    let cam = &trial.camera;
    let (start_y, speed) = trial_start(world, trial);
    let goal_x = world.bounds.x_min + trial.length;
    let timeout = trial.timeout_for(speed);
    let quad_radius = trial.expert.inflate.quad_radius;
    let grid = record_grid(opts.params, opts.training_grid);
    let replan_every = (cam.fps / trial.expert.replan_hz).round().max(1.0) as usize;

    let needs_render = trial.policy.is_learned() || opts.record != RecordLevel::None;
    let needs_accumulator = opts.record != RecordLevel::None
        || (trial.policy.is_learned() && trial.event_model == EventModelKind::Accumulator);
    let mut accumulator = if needs_accumulator {
        Some(EventCameraModel::new(trial.events, cam.width, cam.height)?)
    } else {
        None
    };

    let mut state = QuadState {
        position: Vec3::new(world.bounds.x_min, start_y, trial.altitude),
        velocity: Vec3::new(speed, 0.0, 0.0),
        t: 0.0,
    };
    let mut rstate = RecurrentState::zeros();
    let mut prev_frame: Option<Frame> = None;
    let mut command = decompose_v_y(0.0, speed);
    let mut frames = Vec::new();
    let mut collisions: Vec<(f64, f64)> = Vec::new();
    let mut in_contact = false;
    let mut step = 0usize;
    let mut k = 0usize;
    let outcome = 'flight: loop {
        // Frame times are whole microseconds so they survive the file formats.
        let t = to_micros(k as f64 / cam.fps) as f64 / 1e6;
        state.t = t;
        let rendered = needs_render.then(|| {
            let (mut f, mut d) = render(world, &state, cam);
            f.t = t;
            d.t = t;
            (f, d)
        });

        let mut events = None;
        let mut bem_acc = None;
        if let (Some(model), Some((frame, _))) = (accumulator.as_mut(), rendered.as_ref()) {
            match &prev_frame {
                None => {
                    model.reset(frame)?;
                    events = Some(Vec::new());
                    bem_acc = Some(Bem::zeros(cam.width, cam.height));
                }
                Some(prev) => {
                    let ev = model.accumulate(prev, frame)?;
                    bem_acc = Some(bem_for_interval(&ev, to_micros(prev.t), to_micros(frame.t), cam.width, cam.height)?);
                    events = Some(ev);
                }
            }
        }

        let mut label = None;
        match trial.policy {
            PolicyKind::Expert => {
                if k % replan_every == 0 {
                    let plan = expert_waypoint(world, &state, &trial.expert);
                    command = command_from_waypoint(&state, plan.waypoint, speed)?;
                }
                label = Some(command.v_y_unit);
            }
            PolicyKind::Blind => command = decompose_v_y(0.0, speed),
            _ => {
                let (frame, _) = rendered.as_ref().unwrap();
                let bem = match (trial.event_model, &prev_frame) {
                    (_, None) => Bem::zeros(cam.width, cam.height),
                    (EventModelKind::Accumulator, Some(_)) => bem_acc.clone().unwrap(),
                    (EventModelKind::Difflog, Some(prev)) => bem_from_difflog(&events_difflog(&trial.events, prev, frame)?),
                };
                let p = opts.params.unwrap();
                let small = bem.downsample(p.config.input_width, p.config.input_height);
                let pred = forward(p, &small, &rstate)?;
                rstate = pred.state;
                command = decompose_v_y(pred.v_y, speed);
            }
        }

        let mut rec = FrameRecord {
            t,
            state,
            command,
            v_y_label: label,
            frame: None,
            depth: None,
            events: None,
            bem: None,
            sample: None,
        };
        if let Some((frame, depth)) = &rendered {
            match opts.record {
                RecordLevel::None => {}
                RecordLevel::Training => {
                    let bem = bem_acc.as_ref().unwrap();
                    rec.sample = Some(Sample {
                        bem: bem.downsample(grid.0, grid.1),
                        depth: downsample_depth(depth, grid.0, grid.1),
                        v_y: label.unwrap_or(command.v_y_unit),
                    });
                }
                RecordLevel::Full => {
                    let bem = bem_acc.clone().unwrap();
                    rec.sample = Some(Sample {
                        bem: bem.downsample(grid.0, grid.1),
                        depth: downsample_depth(depth, grid.0, grid.1),
                        v_y: label.unwrap_or(command.v_y_unit),
                    });
                    rec.frame = Some(frame.clone());
                    rec.depth = Some(depth.clone());
                    rec.events = events.take();
                    rec.bem = Some(bem);
                }
            }
        }
        frames.push(rec);
        prev_frame = rendered.map(|(f, _)| f);

        for _ in 0..steps_per_frame {
            state = step_dynamics(&state, &command, dt, trial.dynamics.tau);
            step += 1;
            state.t = step as f64 * dt;
            let hit = world.in_collision(state.xy(), quad_radius);
            if hit && !in_contact {
                collisions.push((state.t, state.t));
            }
            if hit {
                collisions.last_mut().unwrap().1 = state.t;
                if trial.stop_on_collision {
                    break 'flight Outcome::Collided;
                }
            }
            in_contact = hit;
            if state.position.x >= goal_x {
                break 'flight Outcome::Reached;
            }
            if state.t >= timeout {
                break 'flight Outcome::Timeout;
            }
        }
        k += 1;
    };

    Ok(RolloutRecord {
        speed,
        start_y,
        frames,
        collisions,
        outcome,
        final_state: state,
    })
}

/// Result of one evaluation trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub world_seed: u64,
    pub speed: f64,
    pub collisions: usize,
    pub outcome: Outcome,
    pub duration: f64,
}

impl TrialSummary {
    /// Reached the goal with at most `k` collisions.
    pub fn within(&self, k: usize) -> bool {
        self.outcome == Outcome::Reached && self.collisions <= k
    }
}

/// Collision statistics over a set of trials. A trial counts toward a rate
/// only if it reached the goal; success means zero collisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trials: usize,
    pub success_rate: f64,
    pub rate_le_1: f64,
    pub rate_le_2: f64,
    pub mean_collisions: f64,
    pub timeouts: usize,
}

impl Metrics {
    pub fn from_trials(trials: &[TrialSummary]) -> Metrics {
        let n = trials.len();
        let rate = |k| trials.iter().filter(|t| t.within(k)).count() as f64 / n.max(1) as f64;
        Metrics {
            trials: n,
            success_rate: rate(0),
            rate_le_1: rate(1),
            rate_le_2: rate(2),
            mean_collisions: trials.iter().map(|t| t.collisions as f64).sum::<f64>() / n.max(1) as f64,
            timeouts: trials.iter().filter(|t| t.outcome == Outcome::Timeout).count(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.success_rate <= self.rate_le_1 && self.rate_le_1 <= self.rate_le_2 && self.rate_le_2 <= 1.0
    }
}

/// Reference success rates of the full-scale system at 10 m and 60 m.
pub const REFERENCE_SUCCESS: [(f64, f64); 2] = [(10.0, 0.60), (60.0, 0.15)];

fn reference_for(policy: PolicyKind, length: f64) -> Option<f64> {
    (policy == PolicyKind::LearnedJoint)
        .then(|| REFERENCE_SUCCESS.iter().find(|(l, _)| *l == length).map(|(_, r)| *r))
        .flatten()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: PolicyKind,
    pub length: f64,
    pub metrics: Metrics,
    pub trials: Vec<TrialSummary>,
}

/// Runs `n_trials` trials per length on worlds `seed, seed + 1, ...`.
/// Trials run in parallel; results keep seed order.
pub fn evaluate(
    policy: PolicyKind,
    params: Option<&ModelParams>,
    base: &TrialConfig,
    lengths: &[f64],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if n_trials == 0 {
        return Err(Error::Validation("evaluation needs at least one trial".into()));
    }
    lengths
        .iter()
        .map(|&length| {
            let trials = (0..n_trials as u64)
                .into_par_iter()
                .map(|i| {
                    let trial = TrialConfig {
                        world_seed: seed.wrapping_add(i),
                        policy,
                        length,
                        ..base.clone()
                    };
                    let world = trial.build_world()?;
                    let r = rollout(&world, &trial, params)?;
                    Ok(TrialSummary {
                        world_seed: trial.world_seed,
                        speed: r.speed,
                        collisions: r.collision_count(),
                        outcome: r.outcome,
                        duration: r.duration(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = Metrics::from_trials(&trials);
            log::info!(
                "{} @ {} m: success {:.2} (<=1: {:.2}, <=2: {:.2})",
                policy.name(),
                length,
                metrics.success_rate,
                metrics.rate_le_1,
                metrics.rate_le_2
            );
            Ok(EvalRow {
                policy,
                length,
                metrics,
                trials,
            })
        })
        .collect()
}

fn fmt_ref(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v))
}

/// Aligned text table, one row per (policy, length).
pub fn format_table(rows: &[EvalRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>7} {:>7} {:>8} {:>8} {:>8} {:>10} {:>9} {:>10}",
        "policy", "length", "trials", "success", "<=1 col", "<=2 col", "mean col", "timeouts", "reference"
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<20} {:>7.1} {:>7} {:>8.2} {:>8.2} {:>8.2} {:>10.2} {:>9} {:>10}",
            r.policy.name(),
            r.length,
            m.trials,
            m.success_rate,
            m.rate_le_1,
            m.rate_le_2,
            m.mean_collisions,
            m.timeouts,
            fmt_ref(reference_for(r.policy, r.length))
        );
    }
    s
}

/// Machine-readable rows with the same columns as [`format_table`].
pub fn format_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("policy,length_m,trials,success_rate,rate_le_1,rate_le_2,mean_collisions,timeouts,reference_success\n");
    for r in rows {
        let m = &r.metrics;
        let reference = reference_for(r.policy, r.length).map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.policy.name(),
            r.length,
            m.trials,
            m.success_rate,
            m.rate_le_1,
            m.rate_le_2,
            m.mean_collisions,
            m.timeouts,
            reference
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Tree;

    fn small_camera() -> CameraConfig {
        CameraConfig {
            width: 64,
            height: 48,
            ..CameraConfig::default()
        }
    }

    fn empty_world(length: f64) -> World {
        World::empty(Bounds::forest(40.0, length + 20.0))
    }

    #[test]
    fn empty_world_flies_straight_for_every_policy() {
        let net = crate::learner::NetConfig {
            input_width: 16,
            input_height: 16,
            ..Default::default()
        };
        let params = ModelParams::init(&net, 0).unwrap();
        for policy in PolicyKind::ALL {
            let trial = TrialConfig {
                policy,
                speed: SpeedSpec::Fixed(5.0),
                camera: small_camera(),
                ..TrialConfig::default()
            };
            let world = empty_world(10.0);
            let r = rollout(&world, &trial, Some(&params)).unwrap();
            assert_eq!(r.outcome, Outcome::Reached, "{:?}", policy);
            assert_eq!(r.collision_count(), 0);
            if !policy.is_learned() {
                assert!((r.final_state.position.y - r.start_y).abs() < 1e-12);
                // Cruise from the start: 10 m at 5 m/s.
                assert!((r.duration() - 2.0).abs() <= 1.0 / 120.0 + 1e-9, "{}", r.duration());
            }
        }
    }

    #[test]
    fn learned_policy_needs_params() {
        let trial = TrialConfig {
            policy: PolicyKind::LearnedJoint,
            ..TrialConfig::default()
        };
        assert!(matches!(rollout(&empty_world(10.0), &trial, None), Err(Error::Validation(_))));
    }

    #[test]
    fn frame_cadence_and_expert_replanning() {
        let trial = TrialConfig {
            world_seed: 4,
            speed: SpeedSpec::Fixed(5.0),
            ..TrialConfig::default()
        };
        let world = trial.build_world().unwrap();
        let r = rollout(&world, &trial, None).unwrap();
        for (k, f) in r.frames.iter().enumerate() {
            assert_eq!(f.t, to_micros(k as f64 / 30.0) as f64 / 1e6);
        }
        for w in r.frames.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        // Commands only change on the 5 Hz replanning ticks.
        for (k, w) in r.frames.windows(2).enumerate() {
            if (k + 1) % 6 != 0 {
                assert_eq!(w[0].command, w[1].command);
            }
        }
    }

    #[test]
    fn collisions_are_counted_as_intervals() {
        // Two trunks on the centerline; the blind policy hits both once.
        let mut world = World::with_trees(
            Bounds::forest(40.0, 30.0),
            vec![
                Tree {
                    x: 4.0,
                    y: 0.0,
                    radius: 0.3,
                    albedo: 0.5,
                },
                Tree {
                    x: 8.0,
                    y: 0.0,
                    radius: 0.3,
                    albedo: 0.5,
                },
            ],
        );
        world.start_clearance = 0.0;
        let trial = TrialConfig {
            policy: PolicyKind::Blind,
            speed: SpeedSpec::Fixed(4.0),
            world: WorldConfig {
                bounds: Bounds::new(0.0, 30.0, -0.001, 0.001),
                ..WorldConfig::default()
            },
            ..TrialConfig::default()
        };
        let mut w = world.clone();
        w.bounds = trial.world.bounds;
        let r = rollout(&w, &trial, None).unwrap();
        assert!(r.start_y.abs() < 1e-3);
        assert_eq!(r.collision_count(), 2);
        assert_eq!(r.outcome, Outcome::Reached);
        for &(a, b) in &r.collisions {
            // Contact spans the 1.1 m wide inflated trunk at 4 m/s.
            assert!(b > a && (b - a - 1.1 / 4.0).abs() < 0.05, "{} {}", a, b);
        }
        let stop = TrialConfig {
            stop_on_collision: true,
            ..trial
        };
        let r = rollout(&w, &stop, None).unwrap();
        assert_eq!(r.outcome, Outcome::Collided);
        assert_eq!(r.collision_count(), 1);
    }

    #[test]
    fn metrics_definitions() {
        let t = |collisions, outcome| TrialSummary {
            world_seed: 0,
            speed: 5.0,
            collisions,
            outcome,
            duration: 1.0,
        };
        let all_ok = Metrics::from_trials(&[t(0, Outcome::Reached), t(0, Outcome::Reached)]);
        assert_eq!((all_ok.success_rate, all_ok.rate_le_1, all_ok.rate_le_2), (1.0, 1.0, 1.0));
        let trials = [
            t(0, Outcome::Reached),
            t(1, Outcome::Reached),
            t(2, Outcome::Reached),
            t(3, Outcome::Reached),
            t(0, Outcome::Timeout),
        ];
        let m = Metrics::from_trials(&trials);
        assert_eq!(m.success_rate, 1.0 / 5.0);
        assert_eq!(m.rate_le_1, 2.0 / 5.0);
        assert_eq!(m.rate_le_2, 3.0 / 5.0);
        assert_eq!(m.mean_collisions, 6.0 / 5.0);
        assert_eq!(m.timeouts, 1);
        assert!(m.is_monotone());
        let successes = trials.iter().filter(|t| t.within(0)).count();
        assert_eq!(successes as f64 / trials.len() as f64, m.success_rate);
    }

    #[test]
    fn start_is_central_and_seeded() {
        let trial = TrialConfig::default();
        for seed in 0..50 {
            let t = TrialConfig {
                world_seed: seed,
                ..trial.clone()
            };
            let world = t.build_world().unwrap();
            let (y, v) = trial_start(&world, &t);
            assert!(y.abs() <= 4.0 + 1e-12);
            assert!((3.0..7.0).contains(&v));
            assert_eq!((y, v), trial_start(&world, &t));
        }
    }

    #[test]
    fn long_trials_get_a_stretched_forest() {
        let t = TrialConfig {
            length: 60.0,
            ..TrialConfig::default()
        };
        let w = t.build_world().unwrap();
        assert_eq!(w.bounds.x_max, 70.0);
        assert_eq!(w.trees.len(), 140);
        let short = TrialConfig::default().build_world().unwrap();
        assert_eq!(short.trees.len(), 100);
    }

    #[test]
    fn blind_is_worse_than_expert_on_dense_worlds() {
        let base = TrialConfig {
            world: WorldConfig {
                n_trees: 200,
                ..WorldConfig::default()
            },
            ..TrialConfig::default()
        };
        let expert = evaluate(PolicyKind::Expert, None, &base, &[10.0], 40, 100).unwrap();
        let blind = evaluate(PolicyKind::Blind, None, &base, &[10.0], 40, 100).unwrap();
        assert!(blind[0].metrics.success_rate < expert[0].metrics.success_rate);
    }

    #[test]
    fn table_and_csv() {
        let rows = vec![EvalRow {
            policy: PolicyKind::LearnedJoint,
            length: 60.0,
            metrics: Metrics::from_trials(&[]),
            trials: vec![],
        }];
        let table = format_table(&rows);
        assert!(table.lines().nth(1).unwrap().starts_with("learned_joint"));
        assert!(table.contains("0.15"));
        let csv = format_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(",0.15"));
        assert!(evaluate(PolicyKind::Expert, None, &TrialConfig::default(), &[10.0], 0, 0).is_err());
    }

    #[test]
    fn speed_parsing() {
        assert_eq!("5".parse::<SpeedSpec>().unwrap(), SpeedSpec::Fixed(5.0));
        assert_eq!("3-7".parse::<SpeedSpec>().unwrap(), SpeedSpec::Range([3.0, 7.0]));
        assert!("7-3".parse::<SpeedSpec>().is_err());
        assert!("fast".parse::<SpeedSpec>().is_err());
        assert_eq!("learned_no_depth".parse::<PolicyKind>().unwrap(), PolicyKind::LearnedNoDepth);
    }
}
