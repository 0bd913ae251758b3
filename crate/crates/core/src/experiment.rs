//! End-to-end pipeline: scene, trajectories, datasets, pretraining runs and
//! the linear-probe comparison across pairing modes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::augment::{augment, AugmentConfig};
use crate::config::ExperimentConfig;
use crate::contrast::{StepMetrics, Trainer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, EncoderArch, ParamSet};
use crate::pairing::{pair_manifest, PairAssignment, PairingMode};
use crate::probe::{derive_labels, linear_probe, results_table, ProbeResult, ResultsFile};
use crate::scene::{generate_scene, Scene};
use crate::trajectory::{random_walk, replay, Trajectory};

pub const PROBE_TAP: &str = "pooled backbone output before the projection head; encoder frozen";

pub fn walk(scene: &Scene, cfg: &ExperimentConfig, seed: u64, steps: usize) -> Result<Trajectory> {
    Ok(random_walk(scene, seed, steps, &cfg.motion, &cfg.walk)?.with_lighting(&cfg.trajectory.lighting))
}

/// Everything shared by all runs of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub scene: Scene,
    pub train_trajectory: Trajectory,
    pub test_trajectory: Trajectory,
    pub train: Dataset,
    pub test: Dataset,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    /// Object categories plus the background class.
    pub num_classes: usize,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let scene = generate_scene(cfg.scene_seed, &cfg.scene)?;
    prepare_in(scene, cfg)
}

pub fn prepare_in(scene: Scene, cfg: &ExperimentConfig) -> Result<Prepared> {
    let t = &cfg.trajectory;
    let train_trajectory = walk(&scene, cfg, t.seed, t.steps)?;
    let test_trajectory = walk(&scene, cfg, t.test_seed, t.test_steps)?;
    let train = replay(&scene, &train_trajectory, &cfg.render)?;
    let test = replay(&scene, &test_trajectory, &cfg.render)?;
    let categories = cfg.scene.categories;
    let labels = |d: &Dataset| -> Result<Vec<usize>> {
        Ok(derive_labels(d, categories, cfg.probe.min_fraction)?
            .into_iter()
            .map(|e| e.label)
            .collect())
    };
    Ok(Prepared {
        train_labels: labels(&train)?,
        test_labels: labels(&test)?,
        scene,
        train_trajectory,
        test_trajectory,
        train,
        test,
        num_classes: categories + 1,
    })
}

/// Unaugmented encoder inputs for every frame.
pub fn frame_inputs(dataset: &Dataset, arch: &EncoderArch) -> Vec<Vec<f32>> {
    let cfg = AugmentConfig::identity(arch.input_size);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    dataset.frames.iter().map(|f| augment(&f.image, &cfg, &mut rng).data).collect()
}

/// Pooled backbone features of every frame under frozen parameters.
pub fn pooled_features(arch: &EncoderArch, params: &ParamSet<f32>, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let inputs = frame_inputs(dataset, arch);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(64) {
        let refs: Vec<&[f32]> = chunk.iter().map(|v| v.as_slice()).collect();
        let (pooled, _) = nn::encode(arch, params, &refs)?;
        out.extend(pooled.into_iter().map(|p| p.into_iter().map(f64::from).collect::<Vec<_>>()));
    }
    Ok(out)
}

pub fn probe_accuracy(cfg: &ExperimentConfig, prepared: &Prepared, params: &ParamSet<f32>, seed: u64) -> Result<f64> {
    let arch = &cfg.train.encoder;
    let train_x = pooled_features(arch, params, &prepared.train)?;
    let test_x = pooled_features(arch, params, &prepared.test)?;
    linear_probe(
        &train_x,
        &prepared.train_labels,
        &test_x,
        &prepared.test_labels,
        prepared.num_classes,
        &cfg.probe,
        seed,
    )
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub mode: PairingMode,
    pub seed: u64,
    pub query: ParamSet<f32>,
    pub metrics: Vec<StepMetrics>,
    /// Every positive assignment made during the first epoch.
    pub first_epoch_pairs: Vec<PairAssignment>,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    mode: &'a PairingMode,
    seed: u64,
    epochs: usize,
    steps: u64,
    train_frames: usize,
    denominator: crate::contrast::DenominatorMode,
}

/// Pretrain one encoder with `cfg.train` (mode included) and `seed`. With
/// `out`, writes the resolved config, metrics stream, first-epoch pair
/// manifest, run metadata and the final training state.
pub fn pretrain(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64, out: Option<&Path>) -> Result<PretrainOutput> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let mut trainer = Trainer::new(dataset, train_cfg)?;
    let mut metrics_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut resolved = cfg.clone();
            resolved.train.seed = seed;
            fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
            Some(BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut first_epoch_pairs = Vec::with_capacity(dataset.len());
    trainer.run(|epoch, m, pairs| {
        if let Some(w) = metrics_file.as_mut() {
            w.write_all(m.to_json_line()?.as_bytes())?;
        }
        if epoch == 0 {
            first_epoch_pairs.extend_from_slice(pairs);
        }
        metrics.push(m.clone());
        Ok(())
    })?;
    let mode = cfg.train.mode;
    if let (Some(dir), Some(mut w)) = (out, metrics_file) {
        w.flush()?;
        fs::write(dir.join("pairs.jsonl"), pair_manifest(&mode, &first_epoch_pairs)?)?;
        let meta = RunMetadata {
            mode: &mode,
            seed,
            epochs: trainer.epoch(),
            steps: trainer.step(),
            train_frames: dataset.len(),
            denominator: cfg.train.denominator,
        };
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(&meta)?)?;
        trainer.save(&dir.join("checkpoint"))?;
    }
    Ok(PretrainOutput {
        mode,
        seed,
        query: trainer.query,
        metrics,
        first_epoch_pairs,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: PairingMode,
    pub seed: u64,
    pub accuracy: f64,
    pub first_epoch_pairs: Vec<PairAssignment>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<ProbeResult>,
    /// Sorted by mode (in request order) then seed.
    pub runs: Vec<RunResult>,
}

fn run_dir_name(mode: &PairingMode, seed: u64) -> String {
    format!("{}_seed{seed}", mode.name())
}

/// `runs` full pretrain + probe runs per mode with seeds `base_seed + r`.
/// Dataset, augmentation streams and probe are shared across modes.
pub fn evaluate(cfg: &ExperimentConfig, prepared: &Prepared, out: Option<&Path>) -> Result<Evaluation> {
    let c = &cfg.compare;
    let modes = c
        .modes
        .iter()
        .map(|m| cfg.pairing.mode(m))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..modes.len())
        .flat_map(|m| (0..c.runs as u64).map(move |r| (m, c.base_seed + r)))
        .collect();
    let run_one = |&(m, seed): &(usize, u64)| -> Result<(usize, RunResult)> {
        let mut run_cfg = cfg.clone();
        run_cfg.train.mode = modes[m];
        let dir = out.map(|d| d.join("runs").join(run_dir_name(&modes[m], seed)));
        let trained = pretrain(&run_cfg, &prepared.train, seed, dir.as_deref())?;
        let before = trained.query.checksum();
        let accuracy = probe_accuracy(&run_cfg, prepared, &trained.query, seed)?;
        debug_assert_eq!(before, trained.query.checksum());
        if let Some(d) = &dir {
            fs::write(d.join("probe.json"), serde_json::to_string_pretty(&json!({ "top1": accuracy }))?)?;
        }
        Ok((
            m,
            RunResult {
                mode: modes[m],
                seed,
                accuracy,
                first_epoch_pairs: trained.first_epoch_pairs,
            },
        ))
    };
    let mut results: Vec<(usize, RunResult)> = if c.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(c.jobs)
            .build()
            .map_err(|e| Error::Config(format!("compare: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        jobs.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    results.sort_by_key(|(m, r)| (*m, r.seed));

    let rows = modes
        .iter()
        .enumerate()
        .map(|(m, mode)| {
            let accs = results.iter().filter(|(i, _)| *i == m).map(|(_, r)| r.accuracy).collect();
            ProbeResult::from_runs(mode.model_name(), accs)
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = Evaluation {
        rows,
        runs: results.into_iter().map(|(_, r)| r).collect(),
    };
    if let Some(dir) = out {
        write_results(dir, cfg, prepared, &eval)?;
    }
    Ok(eval)
}

pub fn write_results(dir: &Path, cfg: &ExperimentConfig, prepared: &Prepared, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let file = ResultsFile { rows: eval.rows.clone() };
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(&file)?)?;
    fs::write(dir.join("results.txt"), results_table(&eval.rows))?;
    let meta = json!({
        "probe": {
            "tap": PROBE_TAP,
            "classifier": "multinomial logistic regression, SGD with momentum, standardized features",
            "config": cfg.probe,
            "classes": prepared.num_classes,
            "background_class": cfg.scene.categories,
            "train_frames": prepared.train.len(),
            "test_frames": prepared.test.len(),
            "test_split": "separate trajectory through the same scene",
            "train_trajectory_seed": cfg.trajectory.seed,
            "test_trajectory_seed": cfg.trajectory.test_seed,
        },
        "pairing": cfg.pairing,
        "train": {
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "sgd_momentum": cfg.train.sgd_momentum,
            "key_momentum": cfg.train.key_momentum,
            "queue_size": cfg.train.queue_size,
            "tau": cfg.train.tau,
            "denominator": cfg.train.denominator,
            "encoder": cfg.train.encoder,
        },
        "seeds": eval.runs.iter().map(|r| json!({"mode": r.mode.name(), "seed": r.seed, "top1": r.accuracy})).collect::<Vec<_>>(),
    });
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
