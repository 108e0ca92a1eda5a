use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skelact::complete::{
    baseline_restore, complete, pretrain_completion, PretrainConfig, RestoreMethod, SkeletonBank,
};
use skelact::config::RunConfig;
use skelact::container;
use skelact::corrupt::{corrupt, CorruptionMode, CorruptionSpec};
use skelact::decompose::decompose;
use skelact::dynamics::{DynamicsConfig, DynamicsModel, FusionParams};
use skelact::error::{Error, Result};
use skelact::jsonl::{read_sequences, write_sequences};
use skelact::metrics::report_many;
use skelact::recognize::{
    evaluate, train, Dataset, GcnModel, PipelineModels, PromptSet, TrainConfig,
};
use skelact::rng::Rng;
use skelact::skeleton::coco17_topology;
use skelact::synth::{gen_synth, SynthSpec};

use skelact_cli::plot::{plot_export, SettingReport};
use skelact_cli::runall::{load_models, run_all, RunAllOptions};

/// Skeleton action recognition under temporal corruption: data synthesis,
/// corruption, completion, decomposition, training, evaluation, and export.
#[derive(Parser)]
#[command(name = "skelact", version, about)]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic motion dataset (80/20 train/val split).
    GenSynth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        seq_len: usize,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_val: PathBuf,
    },
    /// Drop frames from fully valid sequences.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, default_value = "random")]
        mode: String,
    },
    /// Pre-train the completion network on a bank of clean sequences.
    PretrainCompletion {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore corrupted sequences with a trained completion model.
    Complete {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore with a non-learned baseline.
    BaselineRestore {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split each sequence into base/dynamic/static variants and their fusion.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_prefix: String,
    },
    /// Stage-2 training over a data directory holding train.jsonl/val.jsonl.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse an existing completion model instead of pretraining.
        #[arg(long)]
        completion: Option<PathBuf>,
    },
    /// Evaluate a trained run directory on labeled sequences.
    Eval {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Restoration metrics (MPJPE / N-MPJPE / MPJVE) against ground truth.
    RestoreMetrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Corrupted inputs; when given, MPJPE averages over dropped frames.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Export setting reports to CSV and an SVG bar chart.
    PlotExport {
        /// JSON file holding an array of setting reports.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
    /// Run the full pipeline into a run directory.
    RunAll {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    let seed = cli.seed;
    match cli.command {
        Command::GenSynth {
            classes,
            per_class,
            seq_len,
            out_train,
            out_val,
        } => {
            let spec = SynthSpec::new(classes, per_class, seq_len, seed)?;
            let (train_set, val_set) = gen_synth(&spec)?;
            write_sequences(&train_set, &out_train)?;
            write_sequences(&val_set, &out_val)?;
            eprintln!("wrote {} train / {} val sequences", train_set.len(), val_set.len());
        }
        Command::Corrupt {
            input,
            out,
            rate,
            mode,
        } => {
            let mode = CorruptionMode::parse(&mode)?;
            let seqs = read_sequences(&input)?;
            let mut outs = Vec::with_capacity(seqs.len());
            for (i, seq) in seqs.iter().enumerate() {
                let sseed = Rng::from_seed_and_stream(seed, i as u64).next_u64();
                outs.push(corrupt(seq, &CorruptionSpec::new(rate, mode, sseed)?)?);
            }
            write_sequences(&outs, &out)?;
        }
        Command::PretrainCompletion { bank, steps, out } => {
            let bank = SkeletonBank::new(read_sequences(&bank)?, cfg.completion.seq_len)?;
            let pc = PretrainConfig {
                steps: steps.unwrap_or(cfg.completion.steps),
                seed: cfg.completion.seed ^ seed,
                embed_dim: cfg.completion.embed_dim,
                num_blocks: cfg.completion.num_blocks,
                lr_max: cfg.completion.lr_max,
                lr_min: cfg.completion.lr_min,
                weight_decay: cfg.completion.weight_decay,
            };
            let (model, history) = pretrain_completion(&bank, &pc)?;
            container::save_completion(&model, &out)?;
            eprintln!(
                "pretrained {} steps, loss {:.6} -> {:.6}",
                history.len(),
                history.first().unwrap_or(&f64::NAN),
                history.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Complete {
            model,
            input,
            bank,
            out,
        } => {
            let model = container::load_completion(&model)?;
            let bank = SkeletonBank::new(read_sequences(&bank)?, cfg.completion.seq_len)?;
            let prompt = PromptSet::from_bank(&bank, seed)?;
            let seqs = read_sequences(&input)?;
            let mut outs = Vec::with_capacity(seqs.len());
            for seq in &seqs {
                outs.push(complete(
                    &model,
                    seq,
                    &prompt.prior,
                    (&prompt.context, &prompt.masked_context),
                )?);
            }
            write_sequences(&outs, &out)?;
        }
        Command::BaselineRestore { input, method, out } => {
            let method = RestoreMethod::parse(&method)?;
            let seqs = read_sequences(&input)?;
            let outs: Result<Vec<_>> = seqs.iter().map(|s| baseline_restore(s, method)).collect();
            write_sequences(&outs?, &out)?;
        }
        Command::Decompose { input, out_prefix } => {
            let topo = coco17_topology();
            let seqs = read_sequences(&input)?;
            let mut outs: [Vec<_>; 4] = Default::default();
            for (i, seq) in seqs.iter().enumerate() {
                let sseed = Rng::from_seed_and_stream(seed, i as u64).next_u64();
                let res = decompose(seq, &topo, sseed)?;
                outs[0].push(res.base);
                outs[1].push(res.dyna);
                outs[2].push(res.stat);
                outs[3].push(res.pred);
            }
            for (o, name) in outs.iter().zip(["base", "dyna", "stat", "pred"]) {
                write_sequences(o, format!("{out_prefix}{name}.jsonl"))?;
            }
        }
        Command::Train {
            data,
            out,
            completion,
        } => {
            let train_set = read_sequences(data.join("train.jsonl"))?;
            let val_set = read_sequences(data.join("val.jsonl"))?;
            let classes = 1 + train_set
                .iter()
                .filter_map(|s| s.label)
                .max()
                .ok_or_else(|| Error::InvalidInput("training data has no labels".into()))?;
            std::fs::create_dir_all(out.join("models"))?;
            let bank = SkeletonBank::new(train_set.clone(), cfg.completion.seq_len)?;
            let completion_path = out.join("completion.bin");
            let completion = match completion {
                Some(p) => container::load_completion(&p)?,
                None if completion_path.exists() => container::load_completion(&completion_path)?,
                None => {
                    let pc = PretrainConfig {
                        steps: cfg.completion.steps,
                        seed: cfg.completion.seed ^ seed,
                        embed_dim: cfg.completion.embed_dim,
                        num_blocks: cfg.completion.num_blocks,
                        lr_max: cfg.completion.lr_max,
                        lr_min: cfg.completion.lr_min,
                        weight_decay: cfg.completion.weight_decay,
                    };
                    pretrain_completion(&bank, &pc)?.0
                }
            };
            container::save_completion(&completion, &completion_path)?;
            let mut init_rng = Rng::from_seed_and_stream(seed, 0x111);
            let dcfg = DynamicsConfig {
                feature_dim: cfg.dynamics.feature_dim,
                hidden_dim: cfg.dynamics.hidden_dim,
                ..DynamicsConfig::default()
            };
            let topo = coco17_topology();
            let mut models = PipelineModels {
                completion,
                dynamics: DynamicsModel::new(&dcfg, &mut init_rng),
                fusion: FusionParams::new(cfg.dynamics.fusion_dim, &mut init_rng),
                gcn: GcnModel::new(&topo, &cfg.recognition.channels, classes, &mut init_rng),
                prompt: PromptSet::from_bank(&bank, seed)?,
            };
            models.stabilize_for_training();
            let tc = TrainConfig {
                lr: cfg.training.lr,
                momentum: cfg.training.momentum,
                weight_decay: cfg.training.weight_decay,
                epochs: cfg.training.epochs,
                batch_size: cfg.training.batch_size,
                lambda: cfg.recognition.lambda,
                corrupt_rate: cfg.corruption.rate,
                grad_clip: 0.5,
                seed: cfg.training.seed ^ seed,
            };
            let history = train(
                &mut models,
                &Dataset {
                    train: train_set,
                    val: val_set,
                },
                &tc,
            )?;
            container::save_dynamics(
                &models.dynamics,
                &models.fusion,
                dcfg.hidden_dim,
                out.join("models/dynamics.bin"),
            )?;
            container::save_gcn(&models.gcn, out.join("models/gcn.bin"))?;
            write_sequences(
                &[
                    models.prompt.prior.clone(),
                    models.prompt.context.clone(),
                    models.prompt.masked_context.clone(),
                ],
                out.join("models/prompt.jsonl"),
            )?;
            std::fs::write(
                out.join("models/history.json"),
                serde_json::to_string_pretty(&history).map_err(|e| Error::Config(e.to_string()))?,
            )?;
            if let Some(last) = history.epochs.last() {
                eprintln!(
                    "trained {} epochs, final loss {:.4}, val top-1 {:.3}",
                    history.epochs.len(),
                    last.train_loss,
                    last.val_top1
                );
            }
        }
        Command::Eval {
            models,
            data,
            report,
        } => {
            let models = load_models(&models)?;
            let seqs = read_sequences(&data)?;
            let r = evaluate(&models, &seqs, seed)?;
            std::fs::write(
                &report,
                serde_json::to_string_pretty(&r).map_err(|e| Error::Config(e.to_string()))?,
            )?;
            eprintln!(
                "top1 {:.4}  top5 {:.4}  mean-class {:.4}",
                r.top1, r.top5, r.mean_class_acc
            );
        }
        Command::RestoreMetrics {
            pred,
            gt,
            mask,
            report,
        } => {
            let preds = read_sequences(&pred)?;
            let gts = read_sequences(&gt)?;
            let masks = mask.map(read_sequences).transpose()?;
            let r = report_many(&preds, &gts, masks.as_deref())?;
            std::fs::write(
                &report,
                serde_json::to_string_pretty(&r).map_err(|e| Error::Config(e.to_string()))?,
            )?;
            eprintln!("mpjpe {:.6}  n-mpjpe {:.6}  mpjve {:.6}", r.mpjpe, r.n_mpjpe, r.mpjve);
        }
        Command::PlotExport { input, csv, svg } => {
            let reports: Vec<SettingReport> =
                serde_json::from_str(&std::fs::read_to_string(&input)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
            plot_export(&reports, &csv, &svg)?;
        }
        Command::RunAll {
            out,
            classes,
            per_class,
        } => {
            let opts = RunAllOptions {
                config: cfg,
                seed,
                classes,
                per_class,
                out_dir: out,
            };
            let manifest = run_all(&opts)?;
            for stage in &manifest.stages {
                eprintln!("{:<20} {}", stage.name, stage.status);
            }
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Numeric(_) => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
