mod serve;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navmoco::config::ExperimentConfig;
use navmoco::dataset::{read_text, Dataset};
use navmoco::experiment::{self, prepare, walk};
use navmoco::nn::read_checkpoint;
use navmoco::probe::{derive_labels, linear_probe, results_table, ProbeResult, ResultsFile};
use navmoco::render::RenderConfig;
use navmoco::scene::{generate_scene, Scene};
use navmoco::trajectory::{replay, Trajectory};
use navmoco::Error;

#[derive(Parser)]
#[command(name = "navmoco", version, about = "Scene generation, trajectory recording, pretraining and probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene file.
    GenScene {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Record an algorithmic walk through a scene.
    Record {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the recorder protocol for human-steered walks.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        port: u16,
        /// Start pose seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Exit after the first session ends.
        #[arg(long)]
        once: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Render frames and category maps along a trajectory.
    RenderDataset {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        fov: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain an encoder on a rendered dataset.
    Pretrain {
        /// Dataset directory written by render-dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["standard", "time", "space"])]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Linear probe on frozen pooled features of a checkpoint.
    Probe {
        /// Query-encoder checkpoint, or a checkpoint directory written by pretrain.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "encoder")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain and probe every mode over several seeds.
    Compare {
        /// Comma-separated pairing modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_GENERATION: u8 = 3;
pub(crate) const EXIT_NETWORK: u8 = 4;
const EXIT_USAGE: u8 = 64;

/// Failure with its exit code.
pub(crate) struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Placement { .. } | Error::StartPlacement { .. } => EXIT_GENERATION,
            Error::NumericFailure { .. } | Error::DegenerateBatch { .. } => EXIT_GENERATION,
            Error::Io(_) | Error::Image(_) => 1,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> navmoco::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_scene(path: &Path) -> navmoco::Result<Scene> {
    Scene::from_json(&read_text(path)?)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> navmoco::Result<()> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenScene { seed, common } => {
            let mut cfg = load_config(common.config.as_deref())?;
            cfg.scene_seed = seed;
            cfg.validate()?;
            let scene = generate_scene(seed, &cfg.scene)?;
            write_config(&common.out, &cfg)?;
            let path = common.out.join("scene.json");
            fs::write(&path, scene.to_json()?)?;
            println!("{}", path.display());
        }
        Command::Record {
            scene,
            steps,
            seed,
            common,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            cfg.trajectory.seed = seed;
            cfg.trajectory.steps = steps;
            let scene = load_scene(&scene)?;
            cfg.scene_seed = scene.seed;
            cfg.motion.validate()?;
            cfg.walk.validate()?;
            let traj = walk(&scene, &cfg, seed, steps)?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
            let path = common.out.join("trajectory.jsonl");
            fs::write(&path, traj.to_jsonl()?)?;
            println!("{}", path.display());
        }
        Command::Serve {
            scene,
            port,
            seed,
            host,
            once,
            common,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let scene = load_scene(&scene)?;
            serve::serve(serve::ServeOptions {
                scene,
                motion: cfg.motion,
                render: cfg.render,
                out: common.out,
                host,
                port,
                seed,
                once,
            })?;
        }
        Command::RenderDataset {
            scene,
            trajectory,
            width,
            height,
            fov,
            common,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            let defaults = cfg.render;
            cfg.render = RenderConfig {
                width: width.unwrap_or(defaults.width),
                height: height.unwrap_or(defaults.height),
                fov_deg: fov.unwrap_or(defaults.fov_deg),
            };
            let scene = load_scene(&scene)?;
            cfg.scene_seed = scene.seed;
            let traj = Trajectory::from_jsonl(&read_text(&trajectory)?, &cfg.motion)?;
            traj.validate(&scene, &cfg.motion)?;
            let dataset = replay(&scene, &traj, &cfg.render)?;
            dataset.save(&common.out, &scene, &traj)?;
            fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
            println!("{} frames -> {}", dataset.len(), common.out.display());
        }
        Command::Pretrain {
            data,
            mode,
            seed,
            epochs,
            common,
        } => {
            let mut cfg = load_config(common.config.as_deref())?.with_mode(&mode)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let seed = seed.unwrap_or(cfg.train.seed);
            cfg.validate()?;
            let (dataset, scene, _) = Dataset::load(&data, &cfg.motion)?;
            cfg.scene_seed = scene.seed;
            let out = experiment::pretrain(&cfg, &dataset, seed, Some(&common.out))?;
            if let Some(last) = out.metrics.last() {
                eprintln!(
                    "{} seed {}: {} steps, final loss {:.4}",
                    out.mode, seed, last.step, last.loss
                );
            }
            println!("{}", common.out.display());
        }
        Command::Probe {
            checkpoint,
            train,
            test,
            model,
            seed,
            common,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let checkpoint = if checkpoint.is_dir() {
                checkpoint.join("query.ckpt")
            } else {
                checkpoint
            };
            if !checkpoint.exists() {
                return Err(Error::MissingInput(checkpoint).into());
            }
            let (arch, params) = read_checkpoint::<f32, _>(fs::File::open(&checkpoint)?)?;
            let (train_ds, scene, _) = Dataset::load(&train, &cfg.motion)?;
            let (test_ds, test_scene, _) = Dataset::load(&test, &cfg.motion)?;
            if test_scene.seed != scene.seed {
                return Err(Error::SeedMismatch {
                    trajectory: test_scene.seed,
                    scene: scene.seed,
                }
                .into());
            }
            let categories = cfg.scene.categories;
            if let Some(o) = scene.objects.iter().find(|o| o.category_id as usize >= categories) {
                return Err(Error::Config(format!(
                    "scene object category {} is outside scene.categories = {categories}",
                    o.category_id
                ))
                .into());
            }
            let labels = |d: &Dataset| -> navmoco::Result<Vec<usize>> {
                Ok(derive_labels(d, categories, cfg.probe.min_fraction)?
                    .into_iter()
                    .map(|e| e.label)
                    .collect())
            };
            let train_x = experiment::pooled_features(&arch, &params, &train_ds)?;
            let test_x = experiment::pooled_features(&arch, &params, &test_ds)?;
            let acc = linear_probe(
                &train_x,
                &labels(&train_ds)?,
                &test_x,
                &labels(&test_ds)?,
                categories + 1,
                &cfg.probe,
                seed,
            )?;
            let row = ProbeResult::from_runs(&model, vec![acc])?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("config.toml"), cfg.to_toml()?)?;
            let file = ResultsFile { rows: vec![row] };
            fs::write(common.out.join("probe.json"), serde_json::to_string_pretty(&file).map_err(Error::from)?)?;
            print!("{}", results_table(&file.rows));
        }
        Command::Compare {
            modes,
            runs,
            jobs,
            base_seed,
            epochs,
            common,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(m) = modes {
                cfg.compare.modes = m;
            }
            if let Some(r) = runs {
                cfg.compare.runs = r;
            }
            if let Some(j) = jobs {
                cfg.compare.jobs = j;
            }
            if let Some(s) = base_seed {
                cfg.compare.base_seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.output_dir = common.out.display().to_string();
            let prepared = prepare(&cfg)?;
            let eval = experiment::evaluate(&cfg, &prepared, Some(&common.out))?;
            print!("{}", results_table(&eval.rows));
        }
    }
    Ok(())
}
