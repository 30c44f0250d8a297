//! Command-line entry point: synth, train, predict, eval, params, plot.
//! Exit codes: 0 success, 2 usage error, 1 runtime error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::metrics::MetricsReport;
use crate::model::{AgentPrediction, ModelConfig};
use crate::plot::render_svg;
use crate::scene::{self, load_scene, Pose, Scene, SynthConfig};
use crate::train::{self, TrainConfig};

#[derive(Parser)]
#[command(
    name = "trajformer",
    about = "Multimodal trajectory prediction: synthesize scenes, train, predict, evaluate, plot",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset (lane-following maneuvers).
    Synth {
        /// Output directory for scene files and the index.
        #[arg(long)]
        out: PathBuf,
        /// Master seed; the same seed reproduces the dataset byte for byte.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenes per maneuver class (4 classes).
        #[arg(long = "per-class", default_value_t = 10)]
        per_class: usize,
    },
    /// Train a model on a scene directory, writing a checkpoint and loss CSV.
    Train {
        /// Dataset directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Model config name: tf12-ref, tf24-ref or paper-default.
        #[arg(long)]
        config: String,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Prior-term weight of the symmetric cross-entropy loss.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Optimization steps (warmup is steps/10, at least 1).
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample k futures per agent for one scene.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 12)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prediction JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over a dataset; writes JSON and CSV reports.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 12)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON path; a CSV twin is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the trainable parameter count of a named config.
    Params {
        #[arg(long)]
        config: String,
    },
    /// Render a scene plus a prediction file as SVG.
    Plot {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// SVG output path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// On-disk prediction schema.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictionFile {
    pub scene_id: String,
    pub k: usize,
    pub seed: u64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AgentRecord {
    pub id: u32,
    pub samples: Vec<Vec<[f64; 2]>>,
    pub log_probs: Vec<f64>,
}

impl AgentRecord {
    fn from_prediction(p: &AgentPrediction) -> Self {
        Self {
            id: p.id,
            samples: p
                .samples
                .iter()
                .map(|s| s.iter().map(|q| [q.x, q.y]).collect())
                .collect(),
            log_probs: p.log_probs.clone(),
        }
    }

    fn to_prediction(&self) -> AgentPrediction {
        AgentPrediction {
            id: self.id,
            samples: self
                .samples
                .iter()
                .map(|s| s.iter().map(|q| Pose::new(q[0], q[1])).collect())
                .collect(),
            log_probs: self.log_probs.clone(),
        }
    }
}

#[derive(Serialize)]
struct EvalFile<'a> {
    k: usize,
    seed: u64,
    aggregate: MetricsReport,
    per_scene: Vec<SceneReport<'a>>,
}

#[derive(Serialize)]
struct SceneReport<'a> {
    scene: &'a str,
    #[serde(flatten)]
    report: MetricsReport,
}

pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Synth {
            out,
            seed,
            per_class,
        } => synth(&out, seed, per_class),
        Command::Train {
            data,
            config,
            out,
            alpha,
            steps,
            seed,
        } => train_cmd(&data, &config, &out, alpha, steps, seed),
        Command::Predict {
            ckpt,
            scene,
            k,
            seed,
            out,
        } => predict(&ckpt, &scene, k, seed, &out),
        Command::Eval {
            ckpt,
            data,
            k,
            seed,
            out,
        } => eval_cmd(&ckpt, &data, k, seed, &out),
        Command::Params { config } => {
            let cfg = ModelConfig::named(&config).map_err(|e| e.to_string())?;
            println!("{}", cfg.param_count());
            Ok(())
        }
        Command::Plot { scene, pred, out } => plot_cmd(&scene, &pred, &out),
    }
}

fn synth(out: &Path, seed: u64, per_class: usize) -> Result<(), String> {
    let cfg = SynthConfig {
        per_class,
        ..SynthConfig::default()
    };
    let scenes = scene::synth_scenes(&cfg, seed).map_err(|e| e.to_string())?;
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut names = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("scene{i:04}.json");
        scene::save_scene(s, &out.join(&name)).map_err(|e| e.to_string())?;
        names.push(name);
    }
    scene::write_index(out, &names).map_err(|e| e.to_string())?;
    println!("wrote {} scenes to {} (seed {seed})", names.len(), out.display());
    Ok(())
}

fn train_cmd(
    data: &Path,
    config: &str,
    out: &Path,
    alpha: f64,
    steps: u64,
    seed: u64,
) -> Result<(), String> {
    let model_cfg = ModelConfig::named(config).map_err(|e| e.to_string())?;
    let dataset: Vec<Scene> = scene::load_dataset(data)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let tc = TrainConfig {
        total_steps: steps,
        warmup_steps: (steps / 10).max(1),
        alpha,
        seed,
        ..TrainConfig::default()
    };
    let (ckpt, rows) = train::train(&dataset, &model_cfg, &tc).map_err(|e| e.to_string())?;
    train::save_checkpoint(&ckpt, out).map_err(|e| e.to_string())?;
    fs::write(out.join("loss.csv"), train::loss_csv(&rows)).map_err(|e| e.to_string())?;
    println!(
        "trained {config} for {steps} steps (seed {seed}); checkpoint in {}",
        out.display()
    );
    Ok(())
}

fn predict(ckpt: &Path, scene: &Path, k: usize, seed: u64, out: &Path) -> Result<(), String> {
    let ckpt = train::load_checkpoint(ckpt).map_err(|e| e.to_string())?;
    let s = load_scene(scene).map_err(|e| e.to_string())?;
    let scene_id = scene
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let pred = ckpt
        .model
        .predict_scene(&s, k, seed, &scene_id)
        .map_err(|e| e.to_string())?;
    let file = PredictionFile {
        scene_id,
        k,
        seed,
        agents: pred.agents.iter().map(AgentRecord::from_prediction).collect(),
    };
    fs::write(
        out,
        serde_json::to_string_pretty(&file).map_err(|e| e.to_string())? + "\n",
    )
    .map_err(|e| e.to_string())?;
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, k: usize, seed: u64, out: &Path) -> Result<(), String> {
    let ckpt = train::load_checkpoint(ckpt).map_err(|e| e.to_string())?;
    let dataset = scene::load_dataset(data).map_err(|e| e.to_string())?;
    let (per_scene, aggregate) =
        train::evaluate(&ckpt.model, &dataset, k, seed).map_err(|e| e.to_string())?;

    let report = EvalFile {
        k,
        seed,
        aggregate,
        per_scene: per_scene
            .iter()
            .map(|(name, report)| SceneReport {
                scene: name,
                report: *report,
            })
            .collect(),
    };
    fs::write(
        out,
        serde_json::to_string_pretty(&report).map_err(|e| e.to_string())? + "\n",
    )
    .map_err(|e| e.to_string())?;

    let mut csv = String::from("scene,min_ade,min_fde,rf,dao,dac,k\n");
    for (name, r) in &per_scene {
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            r.min_ade, r.min_fde, r.rf, r.dao, r.dac, r.k
        ));
    }
    csv.push_str(&format!(
        "aggregate,{},{},{},{},{},{}\n",
        aggregate.min_ade, aggregate.min_fde, aggregate.rf, aggregate.dao, aggregate.dac,
        aggregate.k
    ));
    fs::write(out.with_extension("csv"), csv).map_err(|e| e.to_string())?;
    Ok(())
}

fn plot_cmd(scene: &Path, pred: &Path, out: &Path) -> Result<(), String> {
    let s = load_scene(scene).map_err(|e| e.to_string())?;
    let file: PredictionFile =
        serde_json::from_str(&fs::read_to_string(pred).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let agents: Vec<AgentPrediction> =
        file.agents.iter().map(AgentRecord::to_prediction).collect();
    fs::write(out, render_svg(&s, &agents)).map_err(|e| e.to_string())?;
    Ok(())
}
