//! Command-line surface: synthetic data generation, training, evaluation,
//! prediction dumps, and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::{infer, InferSettings};
use crate::pipeline::checkpoint::{load_checkpoint, save_checkpoint};
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset::{load_dataset, save_dataset, Dataset};
use crate::pipeline::gradsuite::{run_gradient_suite, GRAD_TOLERANCE};
use crate::pipeline::report::{build_run_report, evaluate_dataset, render_table, save_report};
use crate::pipeline::train::train;
use crate::synthgen::{corrupt_to_detections, generate_scenes, generate_world, DetectionNoise};

/// Environment variable overriding the configured training seed.
pub const SEED_ENV_VAR: &str = "TMHOI_SEED";

/// Predictions kept per scene during evaluation; deep enough that the
/// precision-recall curves are complete at desk scale.
const EVAL_TOP_K: usize = 1000;

#[derive(Parser)]
#[command(name = "hoigraph", version, about = "Human-object interaction graph head: synthetic data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset file.
    Synth {
        /// Seed of the world (vocabulary, priors, rules, clusters).
        #[arg(long)]
        world_seed: u64,
        /// Number of scenes to generate.
        #[arg(long)]
        scenes: usize,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Object classes, person included.
        #[arg(long, default_value_t = 12)]
        objects: usize,
        /// Verb classes.
        #[arg(long, default_value_t = 16)]
        verbs: usize,
        /// Fraction of verbs supported per object class.
        #[arg(long, default_value_t = 0.25)]
        sparsity: f64,
        /// Scene-stream seed; defaults to world seed + 1.
        #[arg(long)]
        scene_seed: Option<u64>,
        /// Gaussian box jitter in pixels.
        #[arg(long, default_value_t = 6.0)]
        box_jitter: f64,
        /// Probability of dropping a detection.
        #[arg(long, default_value_t = 0.05)]
        miss_rate: f64,
        /// Probability of injecting a background false positive.
        #[arg(long, default_value_t = 0.1)]
        fp_rate: f64,
        /// Probability of flipping a detection label.
        #[arg(long, default_value_t = 0.0)]
        flip_rate: f64,
        /// Copy the class-count table from another dataset (e.g. point a
        /// test split at its training file).
        #[arg(long)]
        split_from: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write the mAP report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print ranked predictions per scene.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            world_seed,
            scenes,
            out,
            objects,
            verbs,
            sparsity,
            scene_seed,
            box_jitter,
            miss_rate,
            fp_rate,
            flip_rate,
            split_from,
        } => {
            let world = generate_world(world_seed, objects, verbs, sparsity)?;
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed.unwrap_or(world_seed.wrapping_add(1)));
            let samples = generate_scenes(&world, scenes, &mut rng)?;
            let noise = DetectionNoise {
                box_jitter,
                miss_rate,
                false_positive_rate: fp_rate,
                label_flip_rate: flip_rate,
            };
            let corrupted: Result<Vec<_>> = samples
                .iter()
                .map(|s| corrupt_to_detections(s, &noise, &mut rng))
                .collect();
            let scenes_out = corrupted?;
            let splits = match split_from {
                Some(path) => {
                    let source = load_dataset(&path)?;
                    if source.vocab != world.vocab {
                        return Err(Error::Compatibility(format!(
                            "split table source {} has a different vocabulary",
                            path.display()
                        )));
                    }
                    source.splits
                }
                None => crate::synthgen::world_class_table(&world, &scenes_out),
            };
            let dataset = Dataset {
                vocab: world.vocab.clone(),
                feature_dim: world.feature_dim,
                splits,
                scenes: scenes_out,
            };
            save_dataset(&dataset, &out)?;
            println!("wrote {} scenes to {}", dataset.scenes.len(), out.display());
            Ok(())
        }
        Command::Train { config, data, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("read {}: {e}", config.display())))?;
            let mut run_config = RunConfig::from_json(&text)?;
            if let Ok(seed_text) = std::env::var(SEED_ENV_VAR) {
                run_config.seed = seed_text.parse().map_err(|_| {
                    Error::Config(format!("{SEED_ENV_VAR}={seed_text} is not a valid seed"))
                })?;
            }
            let dataset = load_dataset(&data)?;
            let checkpoint = train(&run_config, &dataset)?;
            save_checkpoint(&checkpoint, &out)?;
            let last = checkpoint.metadata.loss_curve.last();
            println!(
                "trained {} epochs on {} scenes; final loss {}",
                checkpoint.metadata.epochs_trained,
                dataset.scenes.len(),
                last.map(|l| format!("{:.6}", l.total)).unwrap_or_else(|| "-".into())
            );
            Ok(())
        }
        Command::Eval { checkpoint, data, report } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let model = ckpt.to_model()?;
            let dataset = load_dataset(&data)?;
            let settings = InferSettings {
                score_threshold: ckpt.config.score_threshold,
                nms_iou: ckpt.config.nms_iou,
                message_iterations: ckpt.config.message_iterations,
                lambda: ckpt.config.lambda_infer,
                top_k: EVAL_TOP_K,
                score_floor: 1e-4,
            };
            let eval = evaluate_dataset(&model, &dataset, &settings, &dataset.splits)?;
            let run_report = build_run_report(&eval, &ckpt.config, &dataset);
            save_report(&run_report, &report)?;
            print!("{}", render_table(&run_report));
            Ok(())
        }
        Command::Predict { checkpoint, data, top_k } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let model = ckpt.to_model()?;
            let dataset = load_dataset(&data)?;
            let settings = InferSettings {
                score_threshold: ckpt.config.score_threshold,
                nms_iou: ckpt.config.nms_iou,
                message_iterations: ckpt.config.message_iterations,
                lambda: ckpt.config.lambda_infer,
                top_k,
                score_floor: 1e-4,
            };
            use std::io::Write;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for scene in &dataset.scenes {
                for p in infer(&model, scene, &settings)? {
                    let line = format!(
                        "{}\t{:.6}\t{}\t{}\t[{:.2},{:.2},{:.2},{:.2}]\t[{:.2},{:.2},{:.2},{:.2}]",
                        scene.id,
                        p.score,
                        dataset.vocab.verbs[p.verb],
                        dataset.vocab.objects[p.object_label],
                        p.human_box.x1,
                        p.human_box.y1,
                        p.human_box.x2,
                        p.human_box.y2,
                        p.object_box.x1,
                        p.object_box.y1,
                        p.object_box.x2,
                        p.object_box.y2,
                    );
                    if writeln!(out, "{line}").is_err() {
                        // Reader went away (e.g. piped into head); stop quietly.
                        return Ok(());
                    }
                }
            }
            Ok(())
        }
        Command::Gradcheck => {
            let cases = run_gradient_suite()?;
            let mut worst = 0.0f64;
            for case in &cases {
                let verdict = if case.max_rel_err <= GRAD_TOLERANCE { "pass" } else { "FAIL" };
                println!(
                    "{:<28} {:>10.3e}  ({} seeds) {}",
                    case.name, case.max_rel_err, case.seeds, verdict
                );
                worst = worst.max(case.max_rel_err);
            }
            println!("max relative error: {worst:.3e}");
            if worst > GRAD_TOLERANCE {
                return Err(Error::Numeric(format!(
                    "gradient suite exceeded tolerance: {worst:.3e} > {GRAD_TOLERANCE:.1e}"
                )));
            }
            Ok(())
        }
    }
}
