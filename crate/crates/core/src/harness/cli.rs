//! `evforest` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 I/O failure.

use super::{collect_dataset, evaluate, format_csv, format_table, load_dataset, rollout, EventModelKind, PolicyKind, SpeedSpec, TrialConfig};
use crate::error::{Error, Result};
use crate::events::{events_difflog, EventCameraModel, Event};
use crate::formats::{self, EventFile};
use crate::learner::{load_model, save_model, train, Mode, NetConfig, TrainConfig};
use crate::world::{Bounds, WorldConfig};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Configuration file contents. Every section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub trial: TrialConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {}", path.display(), e)))
    }
}

#[derive(Debug, Parser)]
#[command(name = "evforest", version, about = "Event-camera obstacle avoidance in simulated forests")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML configuration file with [trial], [net] and [train] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a forest and write it as JSON.
    GenWorld {
        #[arg(long)]
        trees: Option<usize>,
        /// Forest size as WIDTHxLENGTH in meters (lateral by forward).
        #[arg(long)]
        area: Option<String>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly expert trajectories and record frames, depth, events and commands.
    Collect {
        #[arg(long)]
        trajectories: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flight: FlightArgs,
    },
    /// Train a model on a collected dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// joint, independent or no_depth.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a policy and print collision metrics.
    Eval {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Trajectory lengths in meters; repeat or separate with commas.
        #[arg(long, value_delimiter = ',')]
        length: Vec<f64>,
        #[arg(long)]
        speed: Option<String>,
        /// Write metrics rows as CSV here as well.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Convert a directory of IMG1 frames into an EVS1 event stream.
    EventsConvert {
        #[arg(long)]
        frames: PathBuf,
        /// accumulator or difflog.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly a single trial and write its command log.
    Rollout {
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        flight: FlightArgs,
        /// Command log (CSV); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct FlightArgs {
    #[arg(long)]
    length: Option<f64>,
    /// Fixed speed ("5") or a range ("3-7"), m/s.
    #[arg(long)]
    speed: Option<String>,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// expert, blind, learned_joint, learned_independent or learned_no_depth.
    #[arg(long)]
    policy: String,
    /// MDL1 checkpoint for learned policies.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Event model for learned policies: difflog (default) or accumulator.
    #[arg(long)]
    event_model: Option<String>,
}

fn parse_area(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Validation(format!("area '{}' must look like 40x50", s));
    let (w, l) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: f64 = w.trim().parse().map_err(|_| bad())?;
    let l: f64 = l.trim().parse().map_err(|_| bad())?;
    if !(w > 0.0 && l > 0.0) {
        return Err(bad());
    }
    Ok((w, l))
}

fn apply_flight(trial: &mut TrialConfig, f: &FlightArgs) -> Result<()> {
    if let Some(l) = f.length {
        trial.length = l;
    }
    if let Some(s) = &f.speed {
        trial.speed = s.parse::<SpeedSpec>()?;
    }
    Ok(())
}

fn load_policy(p: &PolicyArgs, trial: &mut TrialConfig) -> Result<(PolicyKind, Option<crate::learner::ModelParams>)> {
    let kind: PolicyKind = p.policy.parse()?;
    if let Some(m) = &p.event_model {
        trial.event_model = m.parse()?;
    }
    let params = match (&p.model, kind.is_learned()) {
        (Some(path), _) => Some(load_model(path)?),
        (None, true) => return Err(Error::Validation(format!("policy {} needs --model", kind.name()))),
        (None, false) => None,
    };
    trial.policy = kind;
    Ok((kind, params))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "img"));
    paths.sort();
    Ok(paths)
}

/// Events from a frame sequence. Difflog counts become `|n|` events at the
/// later frame's timestamp.
pub fn convert_frames(frames: &[crate::render::Frame], model: EventModelKind, trial: &TrialConfig) -> Result<EventFile> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut events = Vec::new();
    match model {
        EventModelKind::Accumulator => {
            let mut m = EventCameraModel::new(trial.events, w, h)?;
            for pair in frames.windows(2) {
                events.extend(m.accumulate(&pair[0], &pair[1])?);
            }
        }
        EventModelKind::Difflog => {
            for pair in frames.windows(2) {
                let c = events_difflog(&trial.events, &pair[0], &pair[1])?;
                let t = crate::events::to_micros(pair[1].t);
                for (i, &n) in c.counts.iter().enumerate() {
                    for _ in 0..n.unsigned_abs() {
                        events.push(Event {
                            t,
                            x: (i % w) as u16,
                            y: (i / w) as u16,
                            p: n.signum() as i8,
                        });
                    }
                }
            }
        }
    }
    Ok(EventFile {
        width: w,
        height: h,
        events,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut trial = config.trial.clone();
    trial.world_seed = cli.seed;
    match cli.command {
        Command::GenWorld { trees, area, out } => {
            let mut wc: WorldConfig = trial.world.clone();
            if let Some(n) = trees {
                wc.n_trees = n;
            }
            if let Some(a) = area {
                let (w, l) = parse_area(&a)?;
                wc.bounds = Bounds::forest(w, l);
            }
            let world = wc.generate(cli.seed)?;
            write_out(out.as_deref(), &world.to_text())?;
        }
        Command::Collect { trajectories, out, flight } => {
            apply_flight(&mut trial, &flight)?;
            let m = collect_dataset(trajectories, cli.seed, &trial, &out)?;
            let frames: usize = m.trajectories.iter().map(|t| t.frames).sum();
            println!("collected {} trajectories, {} frames into {}", m.trajectories.len(), frames, out.display());
        }
        Command::Train {
            data,
            out,
            mode,
            epochs,
            lr,
            batch_size,
        } => {
            let mut tc: TrainConfig = config.train.clone();
            tc.seed = cli.seed;
            if let Some(m) = mode {
                tc.mode = m.parse::<Mode>()?;
            }
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(lr) = lr {
                tc.learning_rate = lr;
            }
            if let Some(b) = batch_size {
                tc.batch_size = b;
            }
            let dataset = load_dataset(&data, &config.net)?;
            let report = train(&dataset, &config.net, &tc)?;
            save_model(&out, &report.params)?;
            for e in &report.history {
                println!("epoch {:>3}  L_p {:.5}  L_v {:.5}  objective {:.5}", e.epoch, e.l_p, e.l_v, e.objective);
            }
            println!("{} parameters written to {}", report.params.param_count(), out.display());
        }
        Command::Eval {
            policy,
            trials,
            length,
            speed,
            csv,
        } => {
            let (kind, params) = load_policy(&policy, &mut trial)?;
            if let Some(s) = speed {
                trial.speed = s.parse()?;
            }
            let lengths = if length.is_empty() { vec![trial.length] } else { length };
            let rows = evaluate(kind, params.as_ref(), &trial, &lengths, trials, cli.seed)?;
            print!("{}", format_table(&rows));
            if let Some(p) = csv {
                std::fs::write(p, format_csv(&rows))?;
            }
        }
        Command::EventsConvert { frames, model, out } => {
            let kind: EventModelKind = model.parse()?;
            let frames = frame_paths(&frames)?
                .iter()
                .map(|p| formats::load_image(p))
                .collect::<Result<Vec<_>>>()?;
            let file = convert_frames(&frames, kind, &trial)?;
            formats::save_events(&out, &file)?;
            log::info!("{} events from {} frames ({})", file.events.len(), frames.len(), model);
            println!("{} events from {} frames ({})", file.events.len(), frames.len(), model);
        }
        Command::Rollout { policy, flight, out } => {
            let (_, params) = load_policy(&policy, &mut trial)?;
            apply_flight(&mut trial, &flight)?;
            let world = trial.build_world()?;
            let r = rollout(&world, &trial, params.as_ref())?;
            let rows: Vec<_> = r
                .frames
                .iter()
                .map(|f| super::CommandRow {
                    t: f.t,
                    command: f.command,
                    px: f.state.position.x,
                    py: f.state.position.y,
                })
                .collect();
            write_out(out.as_deref(), &super::dataset::format_commands(&rows))?;
            eprintln!(
                "{:?} after {:.2} s with {} collision(s) at {:.2} m/s",
                r.outcome,
                r.duration(),
                r.collision_count(),
                r.speed
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_parsing() {
        assert_eq!(parse_area("40x50").unwrap(), (40.0, 50.0));
        assert_eq!(parse_area("12.5X7").unwrap(), (12.5, 7.0));
        assert!(parse_area("40").is_err());
        assert!(parse_area("0x5").is_err());
    }

    #[test]
    fn config_sections_parse() {
        let c: Config = toml::from_str(
            "[trial]\nlength = 60.0\nspeed = [3.0, 7.0]\n[trial.camera]\nwidth = 128\n[net]\ninput_width = 32\n[train]\nmode = \"no_depth\"\nepochs = 2\n",
        )
        .unwrap();
        assert_eq!(c.trial.length, 60.0);
        assert_eq!(c.trial.camera.width, 128);
        assert_eq!(c.trial.camera.height, 260);
        assert_eq!(c.net.input_width, 32);
        assert_eq!(c.train.mode, Mode::NoDepth);
        assert!(toml::from_str::<Config>("[trail]\nlength = 1\n").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["evforest", "gen-world", "--bogus"]), 1);
        assert_eq!(run(["evforest", "frobnicate"]), 1);
        assert_eq!(run(["evforest", "gen-world", "--area", "forty"]), 1);
        assert_eq!(run(["evforest", "--config", "/nonexistent/cfg.toml", "gen-world"]), 2);
        assert_eq!(run(["evforest", "--help"]), 0);
    }
}
