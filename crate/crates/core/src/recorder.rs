//! Human-steered recording session, independent of the transport.
//!
//! Messages are single-line JSON objects tagged by `"type"`. The server
//! sends `scene_summary`, `recording` and `frame` on connect; each `cmd`
//! yields exactly one `frame`; `stop_recording` writes the trajectory file
//! and answers with its path.

use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::encode_png;
use crate::error::{Error, Result};
use crate::render::{render, RenderConfig};
use crate::scene::Scene;
use crate::trajectory::{
    apply_command, start_pose, MotionParams, NavCommand, Pose, StepOutcome, Trajectory, START_RETRIES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Cmd { cmd: NavCommand },
    StartRecording,
    StopRecording,
    SetLight { id: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseView {
    pub pos: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u64,
        t: f64,
        pose: PoseView,
        png_b64: String,
    },
    SceneSummary {
        bounds: Bounds,
        /// Wall center lines as `[x0, y0, x1, y1]`.
        minimap_walls: Vec<[f64; 4]>,
    },
    Recording {
        active: bool,
        frames: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage> {
    serde_json::from_str(text.trim()).map_err(|e| Error::Format {
        what: "client message".into(),
        detail: e.to_string(),
    })
}

/// Live pose plus an optional recording in progress.
pub struct RecorderSession {
    scene: Scene,
    motion: MotionParams,
    render: RenderConfig,
    out_dir: PathBuf,
    pose: Pose,
    light: u32,
    recording: Option<Recording>,
    files_started: usize,
}

struct Recording {
    trajectory: Trajectory,
    /// Live step of the first recorded pose.
    start_step: u64,
    path: PathBuf,
}

impl RecorderSession {
    /// Start at a seeded free pose under light 0.
    pub fn new(scene: Scene, motion: MotionParams, render: RenderConfig, out_dir: &Path, seed: u64) -> Result<Self> {
        motion.validate()?;
        render.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = start_pose(&scene, &mut rng, &motion).ok_or(Error::StartPlacement {
            seed,
            retries: START_RETRIES,
        })?;
        Ok(Self {
            scene,
            motion,
            render,
            out_dir: out_dir.to_path_buf(),
            pose,
            light: 0,
            recording: None,
            files_started: 0,
        })
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    fn recorded_frames(&self) -> usize {
        self.recording.as_ref().map_or(0, |r| r.trajectory.len())
    }

    /// Messages sent when a client connects.
    pub fn hello(&self) -> Result<Vec<ServerMessage>> {
        let b = self.scene.bounds;
        let walls = self
            .scene
            .walls
            .iter()
            .map(|w| [w.start[0], w.start[1], w.end[0], w.end[1]])
            .collect();
        Ok(vec![
            ServerMessage::SceneSummary {
                bounds: Bounds { min: b.min, max: b.max },
                minimap_walls: walls,
            },
            self.recording_message(None),
            self.frame()?,
        ])
    }

    fn recording_message(&self, path: Option<String>) -> ServerMessage {
        ServerMessage::Recording {
            active: self.is_recording(),
            frames: self.recorded_frames(),
            path,
        }
    }

    fn frame(&self) -> Result<ServerMessage> {
        let light = self
            .scene
            .lighting(self.light)
            .ok_or_else(|| Error::Config(format!("unknown lighting preset {}", self.light)))?;
        let (image, _) = render(&self.scene, &self.pose, light, &self.render)?;
        Ok(ServerMessage::Frame {
            step: self.pose.step,
            t: self.pose.t,
            pose: PoseView {
                pos: self.pose.position.to_array(),
                yaw: self.pose.yaw,
            },
            png_b64: base64::engine::general_purpose::STANDARD.encode(encode_png(&image)?),
        })
    }

    /// The pose as stored in the recording, with the clock restarted at
    /// the recording's first frame.
    fn rebased(&self, start_step: u64) -> Pose {
        let step = self.pose.step - start_step;
        Pose {
            step,
            t: step as f64 * self.motion.dt,
            ..self.pose.clone()
        }
    }

    /// Apply one client message and return the replies in order.
    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        match msg {
            ClientMessage::Cmd { cmd } => {
                let outcome = apply_command(&self.scene, &self.pose, cmd, &self.motion);
                self.pose = outcome.pose.clone();
                let light = self.light;
                if let Some(start) = self.recording.as_ref().map(|r| r.start_step) {
                    let pose = self.rebased(start);
                    let rec = self.recording.as_mut().expect("recording is active");
                    rec.trajectory.push(
                        StepOutcome {
                            pose,
                            blocked: outcome.blocked,
                        },
                        cmd,
                        light,
                    );
                }
                let mut out = vec![self.frame()?];
                if self.is_recording() {
                    out.push(self.recording_message(None));
                }
                Ok(out)
            }
            ClientMessage::StartRecording => {
                if self.is_recording() {
                    return Ok(vec![error("already recording"), self.recording_message(None)]);
                }
                let start_step = self.pose.step;
                let path = self.out_dir.join(format!("trajectory_{:03}.jsonl", self.files_started));
                self.files_started += 1;
                self.recording = Some(Recording {
                    trajectory: Trajectory::start(self.scene.seed, self.motion.dt, self.rebased(start_step), self.light),
                    start_step,
                    path,
                });
                Ok(vec![self.recording_message(None)])
            }
            ClientMessage::StopRecording => {
                let Some(rec) = self.recording.take() else {
                    return Ok(vec![error("not recording"), self.recording_message(None)]);
                };
                write(&rec)?;
                Ok(vec![ServerMessage::Recording {
                    active: false,
                    frames: rec.trajectory.len(),
                    path: Some(rec.path.display().to_string()),
                }])
            }
            ClientMessage::SetLight { id } => {
                if self.scene.lighting(id).is_none() {
                    return Ok(vec![error(&format!("unknown lighting preset {id}"))]);
                }
                self.light = id;
                Ok(vec![self.frame()?])
            }
        }
    }

    /// Write the recording in progress without stopping it, so a dropped
    /// connection loses nothing and a reconnect can carry on.
    pub fn flush(&self) -> Result<Option<PathBuf>> {
        match &self.recording {
            Some(rec) => write(rec).map(|_| Some(rec.path.clone())),
            None => Ok(None),
        }
    }

    /// Write the recording in progress, if any, and stop it.
    pub fn finish(&mut self) -> Result<Option<PathBuf>> {
        let path = self.flush()?;
        self.recording = None;
        Ok(path)
    }
}

fn write(rec: &Recording) -> Result<()> {
    if let Some(dir) = rec.path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&rec.path, rec.trajectory.to_jsonl()?)?;
    Ok(())
}

fn error(message: &str) -> ServerMessage {
    ServerMessage::Error {
        message: message.to_string(),
    }
}
