//! Agent motion, trajectory recording and replay.
//!
//! A trajectory stores one [`Pose`] per step with the navigational record
//! (timestamp, yaw, position) that pairing later consumes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Frame};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::render::{render, RenderConfig};
use crate::scene::{is_free, Scene};

pub const START_RETRIES: usize = 1_000;

/// Wrap an angle in degrees into `[0, 360)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(360.0);
    if y >= 360.0 {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub step: u64,
    /// Seconds, always `step * dt`.
    pub t: f64,
    pub position: Vec3,
    /// Degrees in `[0, 360)`.
    pub yaw: f64,
    /// Steps elapsed in the current jump arc, 0 while grounded.
    #[serde(default)]
    pub jump_phase: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavCommand {
    Forward,
    Backward,
    StrafeLeft,
    StrafeRight,
    RotateLeft,
    RotateRight,
    Jump,
    Idle,
}

impl NavCommand {
    pub const ALL: [NavCommand; 8] = [
        NavCommand::Forward,
        NavCommand::Backward,
        NavCommand::StrafeLeft,
        NavCommand::StrafeRight,
        NavCommand::RotateLeft,
        NavCommand::RotateRight,
        NavCommand::Jump,
        NavCommand::Idle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NavCommand::Forward => "forward",
            NavCommand::Backward => "backward",
            NavCommand::StrafeLeft => "strafe_left",
            NavCommand::StrafeRight => "strafe_right",
            NavCommand::RotateLeft => "rotate_left",
            NavCommand::RotateRight => "rotate_right",
            NavCommand::Jump => "jump",
            NavCommand::Idle => "idle",
        }
    }

    /// Heading offset in degrees for translating commands.
    fn translation_offset(self) -> Option<f64> {
        match self {
            NavCommand::Forward => Some(0.0),
            NavCommand::Backward => Some(180.0),
            NavCommand::StrafeRight => Some(90.0),
            NavCommand::StrafeLeft => Some(-90.0),
            _ => None,
        }
    }
}

impl fmt::Display for NavCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NavCommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NavCommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Format {
                what: "command".into(),
                detail: format!("unknown command {s:?}"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub step_len: f64,
    pub rot_step: f64,
    pub jump_height: f64,
    pub jump_steps: u32,
    pub agent_radius: f64,
    pub dt: f64,
    pub eye_height: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            step_len: 0.1,
            rot_step: 5.0,
            jump_height: 0.3,
            jump_steps: 6,
            agent_radius: 0.2,
            dt: 0.1,
            eye_height: 1.5,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.step_len,
            self.rot_step,
            self.jump_height,
            self.agent_radius,
            self.dt,
            self.eye_height,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.jump_steps < 2 {
            return Err(Error::Config(
                "motion: lengths, angles and dt must be positive; jump_steps >= 2".into(),
            ));
        }
        if self.eye_height < self.agent_radius {
            return Err(Error::Config("motion: eye_height below agent_radius".into()));
        }
        Ok(())
    }

    fn arc_height(&self, phase: u32) -> f64 {
        let s = phase as f64 / self.jump_steps as f64;
        4.0 * self.jump_height * s * (1.0 - s)
    }
}

/// Outcome of a single command.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose,
    /// The command asked for a translation that collided.
    pub blocked: bool,
}

/// Apply one command. Translations that would collide leave the horizontal
/// position unchanged; rotation and any running jump arc still advance.
pub fn apply_command(
    scene: &Scene,
    pose: &Pose,
    cmd: NavCommand,
    params: &MotionParams,
) -> StepOutcome {
    let mut yaw = pose.yaw;
    match cmd {
        NavCommand::RotateRight => yaw = normalize_yaw(yaw + params.rot_step),
        NavCommand::RotateLeft => yaw = normalize_yaw(yaw - params.rot_step),
        _ => {}
    }

    let mut phase = pose.jump_phase;
    if phase > 0 {
        phase += 1;
    } else if cmd == NavCommand::Jump {
        phase = 1;
    }
    if phase >= params.jump_steps {
        phase = 0;
    }
    let z = if phase == 0 {
        params.eye_height
    } else {
        params.eye_height + params.arc_height(phase)
    };

    let mut x = pose.position.x;
    let mut y = pose.position.y;
    let mut blocked = false;
    if let Some(offset) = cmd.translation_offset() {
        let heading = (pose.yaw + offset).to_radians();
        let nx = x + params.step_len * heading.cos();
        let ny = y + params.step_len * heading.sin();
        // Solids rise from the floor, so clearance at eye height implies
        // clearance anywhere above it during a jump.
        let ground = Vec3::new(nx, ny, params.eye_height);
        if is_free(scene, ground, params.agent_radius)
            && is_free(scene, Vec3::new(nx, ny, z), params.agent_radius)
        {
            x = nx;
            y = ny;
        } else {
            blocked = true;
        }
    }

    let step = pose.step + 1;
    StepOutcome {
        pose: Pose {
            step,
            t: step as f64 * params.dt,
            position: Vec3::new(x, y, z),
            yaw,
            jump_phase: phase,
        },
        blocked,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandWeights {
    pub forward: f64,
    pub backward: f64,
    pub strafe_left: f64,
    pub strafe_right: f64,
    pub rotate_left: f64,
    pub rotate_right: f64,
    pub jump: f64,
    pub idle: f64,
}

impl CommandWeights {
    pub fn get(&self, cmd: NavCommand) -> f64 {
        match cmd {
            NavCommand::Forward => self.forward,
            NavCommand::Backward => self.backward,
            NavCommand::StrafeLeft => self.strafe_left,
            NavCommand::StrafeRight => self.strafe_right,
            NavCommand::RotateLeft => self.rotate_left,
            NavCommand::RotateRight => self.rotate_right,
            NavCommand::Jump => self.jump,
            NavCommand::Idle => self.idle,
        }
    }

    /// Everything on one command.
    pub fn only(cmd: NavCommand) -> Self {
        let mut w = CommandWeights {
            forward: 0.0,
            backward: 0.0,
            strafe_left: 0.0,
            strafe_right: 0.0,
            rotate_left: 0.0,
            rotate_right: 0.0,
            jump: 0.0,
            idle: 0.0,
        };
        *match cmd {
            NavCommand::Forward => &mut w.forward,
            NavCommand::Backward => &mut w.backward,
            NavCommand::StrafeLeft => &mut w.strafe_left,
            NavCommand::StrafeRight => &mut w.strafe_right,
            NavCommand::RotateLeft => &mut w.rotate_left,
            NavCommand::RotateRight => &mut w.rotate_right,
            NavCommand::Jump => &mut w.jump,
            NavCommand::Idle => &mut w.idle,
        } = 1.0;
        w
    }
}

impl Default for CommandWeights {
    fn default() -> Self {
        Self {
            forward: 0.50,
            backward: 0.04,
            strafe_left: 0.06,
            strafe_right: 0.06,
            rotate_left: 0.14,
            rotate_right: 0.14,
            jump: 0.03,
            idle: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkPolicy {
    pub weights: CommandWeights,
    /// Probability of repeating the previous command when it was not blocked.
    pub persistence: f64,
}

impl Default for WalkPolicy {
    fn default() -> Self {
        Self {
            weights: CommandWeights::default(),
            persistence: 0.85,
        }
    }
}

impl WalkPolicy {
    pub fn validate(&self) -> Result<()> {
        let ws: Vec<f64> = NavCommand::ALL.iter().map(|c| self.weights.get(*c)).collect();
        let sum: f64 = ws.iter().sum();
        if ws.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "walk: command probabilities must be non-negative and sum to 1 (got {sum})"
            )));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return Err(Error::Config("walk: persistence must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> NavCommand {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = NavCommand::Idle;
        for cmd in NavCommand::ALL {
            let w = self.weights.get(cmd);
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = cmd;
            if u < acc {
                return cmd;
            }
        }
        last
    }
}

/// How lighting presets are assigned along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightingSchedule {
    Constant { id: u32 },
    /// Cycle through `presets` ids, switching every `period` steps.
    Cycle { period: u64, presets: u32 },
}

impl Default for LightingSchedule {
    fn default() -> Self {
        LightingSchedule::Constant { id: 0 }
    }
}

impl LightingSchedule {
    pub fn light_at(&self, step: u64) -> u32 {
        match *self {
            LightingSchedule::Constant { id } => id,
            LightingSchedule::Cycle { period, presets } => {
                ((step / period.max(1)) % presets.max(1) as u64) as u32
            }
        }
    }
}

/// What produced a pose: the start placement or a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Start,
    Command { cmd: NavCommand, blocked: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scene_seed: u64,
    pub dt: f64,
    pub poses: Vec<Pose>,
    pub lighting_schedule: Vec<u32>,
    pub origins: Vec<Origin>,
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub t: f64,
    pub pos: [f64; 3],
    pub yaw: f64,
    pub light: u32,
    pub cmd: String,
    #[serde(default)]
    pub blocked: bool,
    pub scene: u64,
}

impl Trajectory {
    /// A trajectory holding only a start pose.
    pub fn start(scene_seed: u64, dt: f64, pose: Pose, light: u32) -> Self {
        Self {
            scene_seed,
            dt,
            poses: vec![pose],
            lighting_schedule: vec![light],
            origins: vec![Origin::Start],
        }
    }

    pub fn push(&mut self, outcome: StepOutcome, cmd: NavCommand, light: u32) {
        self.poses.push(outcome.pose);
        self.lighting_schedule.push(light);
        self.origins.push(Origin::Command {
            cmd,
            blocked: outcome.blocked,
        });
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn with_lighting(mut self, schedule: &LightingSchedule) -> Self {
        self.lighting_schedule = self.poses.iter().map(|p| schedule.light_at(p.step)).collect();
        self
    }

    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.poses
            .iter()
            .zip(&self.lighting_schedule)
            .zip(&self.origins)
            .map(|((p, &light), origin)| {
                let (cmd, blocked) = match origin {
                    Origin::Start => ("start".to_string(), false),
                    Origin::Command { cmd, blocked } => (cmd.to_string(), *blocked),
                };
                TrajectoryRecord {
                    step: p.step,
                    t: p.t,
                    pos: p.position.to_array(),
                    yaw: p.yaw,
                    light,
                    cmd,
                    blocked,
                    scene: self.scene_seed,
                }
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse a trajectory file. `dt` is read back from the second pose;
    /// single-pose files fall back to `params.dt`. Jump phases are not stored
    /// and are recovered from the heights.
    pub fn from_jsonl(text: &str, params: &MotionParams) -> Result<Trajectory> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<TrajectoryRecord>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let first = records.first().ok_or_else(|| Error::Format {
            what: "trajectory".into(),
            detail: "no records".into(),
        })?;
        let scene_seed = first.scene;
        let dt = records.get(1).map_or(params.dt, |r| r.t);
        let mut traj = Trajectory {
            scene_seed,
            dt,
            poses: Vec::with_capacity(records.len()),
            lighting_schedule: Vec::with_capacity(records.len()),
            origins: Vec::with_capacity(records.len()),
        };
        let mut phase = 0u32;
        for r in &records {
            if r.scene != scene_seed {
                return Err(Error::InvalidTrajectory(format!(
                    "step {} belongs to scene {}, expected {scene_seed}",
                    r.step, r.scene
                )));
            }
            let origin = if r.cmd == "start" {
                Origin::Start
            } else {
                Origin::Command {
                    cmd: r.cmd.parse()?,
                    blocked: r.blocked,
                }
            };
            phase = if r.pos[2] == params.eye_height {
                0
            } else if phase > 0 {
                phase + 1
            } else {
                1
            };
            traj.poses.push(Pose {
                step: r.step,
                t: r.t,
                position: Vec3::from(r.pos),
                yaw: r.yaw,
                jump_phase: phase,
            });
            traj.lighting_schedule.push(r.light);
            traj.origins.push(origin);
        }
        Ok(traj)
    }

    /// Check every structural invariant against the scene it was recorded in.
    pub fn validate(&self, scene: &Scene, params: &MotionParams) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrajectory(m));
        if self.scene_seed != scene.seed {
            return Err(Error::SeedMismatch {
                trajectory: self.scene_seed,
                scene: scene.seed,
            });
        }
        if self.poses.is_empty() {
            return bad("no poses".into());
        }
        if self.lighting_schedule.len() != self.poses.len() || self.origins.len() != self.poses.len()
        {
            return bad("per-pose columns have different lengths".into());
        }
        let max_move = params.step_len + params.jump_height + 1e-9;
        for (i, p) in self.poses.iter().enumerate() {
            if p.step != i as u64 {
                return bad(format!("pose {i} has step {}", p.step));
            }
            if (p.t - p.step as f64 * self.dt).abs() > 1e-9 {
                return bad(format!("pose {i} has t {} for dt {}", p.t, self.dt));
            }
            if !(0.0..360.0).contains(&p.yaw) {
                return bad(format!("pose {i} has yaw {}", p.yaw));
            }
            if !is_free(scene, p.position, params.agent_radius) {
                return bad(format!("pose {i} collides with the scene"));
            }
            if scene.lighting(self.lighting_schedule[i]).is_none() {
                return bad(format!("pose {i} uses unknown light {}", self.lighting_schedule[i]));
            }
            if i > 0 && p.position.distance(self.poses[i - 1].position) > max_move {
                return bad(format!("pose {i} jumps too far from pose {}", i - 1));
            }
        }
        Ok(())
    }
}

pub fn start_pose(scene: &Scene, rng: &mut ChaCha8Rng, params: &MotionParams) -> Option<Pose> {
    let b = scene.bounds;
    for _ in 0..START_RETRIES {
        let x = rng.random_range(b.min[0]..b.max[0]);
        let y = rng.random_range(b.min[1]..b.max[1]);
        let yaw = normalize_yaw(rng.random_range(0.0..360.0));
        let position = Vec3::new(x, y, params.eye_height);
        if is_free(scene, position, params.agent_radius) {
            return Some(Pose {
                step: 0,
                t: 0.0,
                position,
                yaw,
                jump_phase: 0,
            });
        }
    }
    None
}

/// Generate a trajectory of exactly `n_steps` poses (start + `n_steps - 1`
/// commands) under a constant light 0.
pub fn random_walk(
    scene: &Scene,
    seed: u64,
    n_steps: usize,
    params: &MotionParams,
    policy: &WalkPolicy,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::Config("walk: n_steps must be at least 1".into()));
    }
    params.validate()?;
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = start_pose(scene, &mut rng, params).ok_or(Error::StartPlacement {
        seed,
        retries: START_RETRIES,
    })?;
    let mut traj = Trajectory::start(scene.seed, params.dt, start, 0);
    let mut last: Option<(NavCommand, bool)> = None;
    while traj.len() < n_steps {
        let repeat = rng.random_bool(policy.persistence);
        let cmd = match last {
            Some((cmd, false)) if repeat => cmd,
            _ => policy.sample(&mut rng),
        };
        let outcome = apply_command(scene, traj.poses.last().unwrap(), cmd, params);
        last = Some((cmd, outcome.blocked));
        traj.push(outcome, cmd, 0);
    }
    Ok(traj)
}

/// Render every pose under its scheduled light. Frames may be rendered in
/// parallel; the output is always in step order.
pub fn replay(scene: &Scene, trajectory: &Trajectory, config: &RenderConfig) -> Result<Dataset> {
    if trajectory.scene_seed != scene.seed {
        return Err(Error::SeedMismatch {
            trajectory: trajectory.scene_seed,
            scene: scene.seed,
        });
    }
    config.validate()?;
    let frames = trajectory
        .poses
        .par_iter()
        .zip(trajectory.lighting_schedule.par_iter())
        .map(|(pose, &light_id)| {
            let light = scene.lighting(light_id).ok_or_else(|| {
                Error::InvalidTrajectory(format!("unknown lighting preset {light_id}"))
            })?;
            let (image, labels) = render(scene, pose, light, config)?;
            Ok(Frame {
                pose: pose.clone(),
                light: light_id,
                image,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        render: *config,
        frames,
    })
}
