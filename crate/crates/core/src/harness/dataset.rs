use super::{bem_for_interval, downsample_depth, rollout_with, EventModelKind, Outcome, PolicyKind, RecordLevel, RolloutOptions, TrialConfig};
use crate::control::VelocityCommand;
use crate::error::{Error, Result};
use crate::events::{to_micros, Bem};
use crate::formats::{self, EventFile};
use crate::learner::{NetConfig, Sample, Trajectory};
use crate::render::{CameraConfig, DepthMap, Frame};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSIONS: [(&str, &str); 3] = [("events", "EVS1"), ("depth", "DPT1"), ("image", "IMG1")];
const MANIFEST: &str = "manifest.json";
const COMMANDS: &str = "commands.csv";
const EVENTS: &str = "events.evs";
const COMMAND_HEADER: &str = "t_s,v_y_unit,v_x_unit,speed,px,py";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub index: usize,
    pub world_seed: u64,
    pub speed: f64,
    pub start_y: f64,
    pub length: f64,
    pub frames: usize,
    pub duration_s: f64,
    pub events: usize,
    pub collisions: usize,
    pub outcome: Outcome,
    /// Relative to the dataset root.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub formats: BTreeMap<String, String>,
    pub seed: u64,
    pub camera: CameraConfig,
    pub trial: TrialConfig,
    pub trajectories: Vec<TrajectoryEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One row of a trajectory's command log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandRow {
    pub t: f64,
    pub command: VelocityCommand,
    pub px: f64,
    pub py: f64,
}

/// Parsed files of one recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFiles {
    pub events: EventFile,
    pub frames: Vec<Frame>,
    pub depths: Vec<DepthMap>,
    pub commands: Vec<CommandRow>,
}

fn frame_name(k: usize) -> String {
    format!("{:05}", k)
}

pub(crate) fn format_commands(rows: &[CommandRow]) -> String {
    let mut s = String::from(COMMAND_HEADER);
    s.push('\n');
    for r in rows {
        let c = r.command;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.t, c.v_y_unit, c.v_x_unit, c.speed, r.px, r.py);
    }
    s
}

fn parse_commands(text: &str) -> Result<Vec<CommandRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(COMMAND_HEADER) {
        return Err(Error::Format(format!("command log must start with '{}'", COMMAND_HEADER)));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("command log line {}: {}", i + 2, e)))?;
            if v.len() != 6 {
                return Err(Error::Format(format!("command log line {} has {} fields", i + 2, v.len())));
            }
            Ok(CommandRow {
                t: v[0],
                command: VelocityCommand {
                    v_y_unit: v[1],
                    v_x_unit: v[2],
                    speed: v[3],
                },
                px: v[4],
                py: v[5],
            })
        })
        .collect()
}

fn write_trajectory(root: &Path, index: usize, trial: &TrialConfig) -> Result<TrajectoryEntry> {
    let world = trial.build_world()?;
    let r = rollout_with(
        &world,
        trial,
        RolloutOptions {
            record: RecordLevel::Full,
            ..RolloutOptions::default()
        },
    )?;
    let rel = format!("traj_{:05}", index);
    let dir = root.join(&rel);
    std::fs::create_dir_all(dir.join("frames"))?;
    std::fs::create_dir_all(dir.join("depth"))?;
    world.save(&dir.join("world.json"))?;

    let mut events = Vec::new();
    let mut rows = Vec::with_capacity(r.frames.len());
    for (k, f) in r.frames.iter().enumerate() {
        formats::save_image(&dir.join("frames").join(format!("{}.img", frame_name(k))), f.frame.as_ref().unwrap())?;
        formats::save_depth(&dir.join("depth").join(format!("{}.dpt", frame_name(k))), f.depth.as_ref().unwrap())?;
        events.extend_from_slice(f.events.as_ref().unwrap());
        rows.push(CommandRow {
            t: f.t,
            command: f.command,
            px: f.state.position.x,
            py: f.state.position.y,
        });
    }
    let n_events = events.len();
    formats::save_events(
        &dir.join(EVENTS),
        &EventFile {
            width: trial.camera.width,
            height: trial.camera.height,
            events,
        },
    )?;
    std::fs::write(dir.join(COMMANDS), format_commands(&rows))?;
    Ok(TrajectoryEntry {
        index,
        world_seed: trial.world_seed,
        speed: r.speed,
        start_y: r.start_y,
        length: trial.length,
        frames: r.frames.len(),
        duration_s: r.duration(),
        events: n_events,
        collisions: r.collision_count(),
        outcome: r.outcome,
        dir: rel,
    })
}

/// Flies `n` expert trajectories on worlds `seed, seed + 1, ...` and writes,
/// per trajectory, the accumulator event stream, every grayscale frame and
/// depth map, the command log and the world, plus a manifest at the root.
///
/// On failure everything this call created is removed again.
pub fn collect_dataset(n: usize, seed: u64, base: &TrialConfig, out: &Path) -> Result<Manifest> {
    let trial = TrialConfig {
        policy: PolicyKind::Expert,
        event_model: EventModelKind::Accumulator,
        ..base.clone()
    };
    trial.validate()?;
    let existed = out.exists();
    std::fs::create_dir_all(out)?;
    let result = (|| {
        let trajectories = (0..n)
            .into_par_iter()
            .map(|i| {
                let t = TrialConfig {
                    world_seed: seed.wrapping_add(i as u64),
                    ..trial.clone()
                };
                write_trajectory(out, i, &t)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            formats: FORMAT_VERSIONS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed,
            camera: trial.camera,
            trial: trial.clone(),
            trajectories,
        };
        std::fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    })();
    if result.is_err() {
        cleanup(out, n, existed);
    }
    result
}

fn cleanup(out: &Path, n: usize, existed: bool) {
    if existed {
        for i in 0..n {
            let _ = std::fs::remove_dir_all(out.join(format!("traj_{:05}", i)));
        }
        let _ = std::fs::remove_file(out.join(MANIFEST));
    } else {
        let _ = std::fs::remove_dir_all(out);
    }
}

/// Reads back every file of one trajectory.
pub fn load_trajectory_files(root: &Path, entry: &TrajectoryEntry) -> Result<TrajectoryFiles> {
    let dir: PathBuf = root.join(&entry.dir);
    let events = formats::load_events(&dir.join(EVENTS))?;
    let mut frames = Vec::with_capacity(entry.frames);
    let mut depths = Vec::with_capacity(entry.frames);
    for k in 0..entry.frames {
        frames.push(formats::load_image(&dir.join("frames").join(format!("{}.img", frame_name(k))))?);
        depths.push(formats::load_depth(&dir.join("depth").join(format!("{}.dpt", frame_name(k))))?);
    }
    let commands = parse_commands(&std::fs::read_to_string(dir.join(COMMANDS))?)?;
    if commands.len() != entry.frames {
        return Err(Error::Format(format!(
            "{} lists {} commands for {} frames",
            entry.dir,
            commands.len(),
            entry.frames
        )));
    }
    Ok(TrajectoryFiles {
        events,
        frames,
        depths,
        commands,
    })
}

impl TrajectoryFiles {
    /// Learner samples on the network grid: per frame, the mask of events
    /// since the previous frame, the block-mean depth and the logged lateral
    /// command as label.
    pub fn samples(&self, width: usize, height: usize) -> Result<Trajectory> {
        let (sw, sh) = (self.events.width, self.events.height);
        let mut samples = Vec::with_capacity(self.depths.len());
        for (k, (d, row)) in self.depths.iter().zip(&self.commands).enumerate() {
            let bem = if k == 0 {
                Bem::zeros(sw, sh)
            } else {
                bem_for_interval(&self.events.events, to_micros(self.depths[k - 1].t), to_micros(d.t), sw, sh)?
            };
            samples.push(Sample {
                bem: bem.downsample(width, height),
                depth: downsample_depth(d, width, height),
                v_y: row.command.v_y_unit,
            });
        }
        Ok(Trajectory { samples })
    }
}

/// Loads a collected dataset as learner trajectories for `net`.
pub fn load_dataset(dir: &Path, net: &NetConfig) -> Result<Vec<Trajectory>> {
    let manifest = Manifest::load(dir)?;
    manifest
        .trajectories
        .iter()
        .map(|e| load_trajectory_files(dir, e)?.samples(net.input_width, net.input_height))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SpeedSpec;

    fn small_trial() -> TrialConfig {
        TrialConfig {
            camera: CameraConfig {
                width: 48,
                height: 36,
                ..CameraConfig::default()
            },
            speed: SpeedSpec::Range([4.0, 6.0]),
            length: 4.0,
            ..TrialConfig::default()
        }
    }

    #[test]
    fn empty_collection_has_empty_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let m = collect_dataset(0, 1, &small_trial(), tmp.path()).unwrap();
        assert!(m.trajectories.is_empty());
        assert_eq!(Manifest::load(tmp.path()).unwrap(), m);
    }

    #[test]
    fn files_parse_back_to_the_rollout() {
        let tmp = tempfile::tempdir().unwrap();
        let trial = small_trial();
        let m = collect_dataset(2, 7, &trial, tmp.path()).unwrap();
        for e in &m.trajectories {
            // Cadence: one frame per camera period over the flight, plus the first.
            let expected = e.duration_s * 30.0;
            assert!((e.frames as f64 - expected).abs() <= 1.0 + 1e-9, "{} vs {}", e.frames, expected);

            let t = TrialConfig {
                world_seed: e.world_seed,
                policy: PolicyKind::Expert,
                event_model: EventModelKind::Accumulator,
                ..trial.clone()
            };
            let world = t.build_world().unwrap();
            let r = rollout_with(
                &world,
                &t,
                RolloutOptions {
                    record: RecordLevel::Full,
                    training_grid: (16, 12),
                    ..RolloutOptions::default()
                },
            )
            .unwrap();
            let files = load_trajectory_files(tmp.path(), e).unwrap();
            assert_eq!(files.frames.len(), r.frames.len());
            for (k, f) in r.frames.iter().enumerate() {
                assert_eq!(&files.frames[k], f.frame.as_ref().unwrap());
                assert_eq!(&files.depths[k], f.depth.as_ref().unwrap());
                assert_eq!(files.commands[k].command, f.command);
                assert_eq!(files.commands[k].t, f.t);
                assert_eq!(files.commands[k].px, f.state.position.x);
            }
            let all: Vec<_> = r.frames.iter().flat_map(|f| f.events.clone().unwrap()).collect();
            assert_eq!(files.events.events, all);
            let samples = files.samples(16, 12).unwrap();
            assert_eq!(Some(samples), r.training_trajectory());
        }
    }

    #[test]
    fn failed_collection_cleans_up() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("ds");
        let bad = TrialConfig {
            world: crate::world::WorldConfig {
                n_trees: 5,
                start_clearance: 1e6,
                ..Default::default()
            },
            ..small_trial()
        };
        assert!(collect_dataset(2, 0, &bad, &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn command_log_round_trip() {
        let rows = vec![CommandRow {
            t: 1.0 / 30.0,
            command: VelocityCommand {
                v_y_unit: -0.1,
                v_x_unit: 0.99498743710662,
                speed: 4.3,
            },
            px: 0.1 + 0.2,
            py: -3.0,
        }];
        let text = format_commands(&rows);
        assert!(text.starts_with("t_s,v_y_unit,v_x_unit,speed,px,py\n"));
        assert_eq!(parse_commands(&text).unwrap(), rows);
        assert!(parse_commands("a,b\n").is_err());
    }
}
