//! End-to-end orchestration: synthetic data, completion pretraining,
//! corruption at three severities, restoration, decomposition, stage-2
//! training, evaluation, restoration metrics, and result export.
//!
//! Every stage writes its artifacts into the run directory and records an
//! input fingerprint in the manifest; re-running skips stages whose inputs
//! are unchanged and whose outputs still exist.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use skelact::complete::{complete, pretrain_completion, PretrainConfig, SkeletonBank};
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

use crate::hash::Hasher;
use crate::plot::{plot_export, SettingReport};

pub const SEVERITIES: [(&str, f64); 3] = [("minor", 0.25), ("moderate", 0.5), ("severe", 0.75)];

#[derive(Clone, Debug)]
pub struct RunAllOptions {
    pub config: RunConfig,
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub out_dir: PathBuf,
}

impl RunAllOptions {
    pub fn new(config: RunConfig, seed: u64, out_dir: impl Into<PathBuf>) -> RunAllOptions {
        RunAllOptions {
            config,
            seed,
            classes: 4,
            per_class: 50,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs_hash: String,
    pub outputs: Vec<String>,
    pub status: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// Wall-clock creation time (unix seconds); excluded from determinism
    /// comparisons.
    pub created: u64,
    pub seed: u64,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

struct StageRunner {
    dir: PathBuf,
    prev: Option<Manifest>,
    records: Vec<StageRecord>,
}

impl StageRunner {
    /// Runs or skips one stage. `inputs_hash` must cover everything the
    /// stage reads (config fields, seeds, upstream artifacts).
    fn stage(
        &mut self,
        name: &str,
        inputs_hash: String,
        outputs: &[PathBuf],
        f: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let fresh = self
            .prev
            .as_ref()
            .and_then(|m| m.stage(name))
            .map(|s| s.inputs_hash == inputs_hash)
            .unwrap_or(false)
            && outputs.iter().all(|p| p.exists());
        let status = if fresh {
            "skipped"
        } else {
            f().map_err(|e| {
                Error::InvalidInput(format!("stage `{name}` failed: {e}"))
            })?;
            "ran"
        };
        self.records.push(StageRecord {
            name: name.to_string(),
            inputs_hash,
            outputs: outputs
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned()
                })
                .collect(),
            status: status.to_string(),
        });
        Ok(())
    }
}

fn hash_inputs(parts: &[&[u8]], files: &[&Path]) -> Result<String> {
    let mut h = Hasher::new();
    for p in parts {
        h.update(p);
    }
    for f in files {
        h.update_file(f)?;
    }
    Ok(h.hex())
}

/// Runs the whole pipeline into `opts.out_dir` and writes the manifest.
pub fn run_all(opts: &RunAllOptions) -> Result<Manifest> {
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir)?;
    for sub in ["data", "corrupted", "restored", "decomposed", "models", "eval", "restore_metrics", "plots"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let cfg = &opts.config;
    let config_json = cfg.canonical_json();
    let config_hash = Hasher::new().update(config_json.as_bytes()).hex();
    let seed_bytes = opts.seed.to_le_bytes();

    let manifest_path = dir.join("manifest.json");
    let mut runner = StageRunner {
        dir: dir.clone(),
        prev: Manifest::load(&manifest_path),
        records: Vec::new(),
    };

    let train_path = dir.join("data/train.jsonl");
    let val_path = dir.join("data/val.jsonl");
    let completion_path = dir.join("completion.bin");

    // 1. gen-synth
    let synth_hash = hash_inputs(
        &[
            &seed_bytes,
            &opts.classes.to_le_bytes(),
            &opts.per_class.to_le_bytes(),
            &cfg.completion.seq_len.to_le_bytes(),
        ],
        &[],
    )?;
    runner.stage(
        "gen-synth",
        synth_hash,
        &[train_path.clone(), val_path.clone()],
        || {
            let spec = SynthSpec::new(opts.classes, opts.per_class, cfg.completion.seq_len, opts.seed)?;
            let (train_set, val_set) = gen_synth(&spec)?;
            write_sequences(&train_set, &train_path)?;
            write_sequences(&val_set, &val_path)?;
            Ok(())
        },
    )?;

    // 2. pretrain-completion
    let completion_cfg_json = serde_json::to_vec(&cfg.completion).expect("serialize");
    let pretrain_hash = hash_inputs(&[&completion_cfg_json], &[&train_path])?;
    runner.stage(
        "pretrain-completion",
        pretrain_hash.clone(),
        std::slice::from_ref(&completion_path),
        || {
            let bank_seqs = read_sequences(&train_path)?;
            let bank = SkeletonBank::new(bank_seqs, cfg.completion.seq_len)?;
            let pc = PretrainConfig {
                steps: cfg.completion.steps,
                seed: cfg.completion.seed,
                embed_dim: cfg.completion.embed_dim,
                num_blocks: cfg.completion.num_blocks,
                lr_max: cfg.completion.lr_max,
                lr_min: cfg.completion.lr_min,
                weight_decay: cfg.completion.weight_decay,
            };
            let (model, _history) = pretrain_completion(&bank, &pc)?;
            container::save_completion(&model, &completion_path)?;
            Ok(())
        },
    )?;

    // 3. corrupt validation data at the three severities
    let corrupted_paths: Vec<PathBuf> = SEVERITIES
        .iter()
        .map(|(name, _)| dir.join(format!("corrupted/{name}.jsonl")))
        .collect();
    let corrupt_hash = hash_inputs(&[&seed_bytes], &[&val_path])?;
    runner.stage("corrupt", corrupt_hash, &corrupted_paths, || {
        let val_set = read_sequences(&val_path)?;
        for ((_, rate), out_path) in SEVERITIES.iter().zip(&corrupted_paths) {
            let mut out = Vec::with_capacity(val_set.len());
            for (i, seq) in val_set.iter().enumerate() {
                let sseed = Rng::from_seed_and_stream(opts.seed, 0xC0 + i as u64).next_u64();
                let spec = CorruptionSpec::new(*rate, CorruptionMode::Random, sseed)?;
                out.push(corrupt(seq, &spec)?);
            }
            write_sequences(&out, out_path)?;
        }
        Ok(())
    })?;

    // 4. complete each corrupted set
    let restored_paths: Vec<PathBuf> = SEVERITIES
        .iter()
        .map(|(name, _)| dir.join(format!("restored/{name}.jsonl")))
        .collect();
    let complete_hash = {
        let mut files: Vec<&Path> = vec![&completion_path, &train_path];
        files.extend(corrupted_paths.iter().map(|p| p.as_path()));
        hash_inputs(&[&seed_bytes], &files)?
    };
    runner.stage("complete", complete_hash, &restored_paths, || {
        let model = container::load_completion(&completion_path)?;
        let bank = SkeletonBank::new(read_sequences(&train_path)?, cfg.completion.seq_len)?;
        let prompt = PromptSet::from_bank(&bank, opts.seed)?;
        for (in_path, out_path) in corrupted_paths.iter().zip(&restored_paths) {
            let corrupted = read_sequences(in_path)?;
            let mut restored = Vec::with_capacity(corrupted.len());
            for seq in &corrupted {
                restored.push(complete(
                    &model,
                    seq,
                    &prompt.prior,
                    (&prompt.context, &prompt.masked_context),
                )?);
            }
            write_sequences(&restored, out_path)?;
        }
        Ok(())
    })?;

    // 5. decompose the moderate restoration (inspection artifact)
    let decomposed_paths: Vec<PathBuf> = ["base", "dyna", "stat", "pred"]
        .iter()
        .map(|v| dir.join(format!("decomposed/{v}.jsonl")))
        .collect();
    let moderate_restored = dir.join("restored/moderate.jsonl");
    let decompose_hash = hash_inputs(&[&seed_bytes], &[&moderate_restored])?;
    runner.stage("decompose", decompose_hash, &decomposed_paths, || {
        let topo = coco17_topology();
        let restored = read_sequences(&moderate_restored)?;
        let mut outs: [Vec<_>; 4] = Default::default();
        for (i, seq) in restored.iter().enumerate() {
            let sseed = Rng::from_seed_and_stream(opts.seed, 0xDEC + i as u64).next_u64();
            let res = decompose(seq, &topo, sseed)?;
            outs[0].push(res.base);
            outs[1].push(res.dyna);
            outs[2].push(res.stat);
            outs[3].push(res.pred);
        }
        for (o, p) in outs.iter().zip(&decomposed_paths) {
            write_sequences(o, p)?;
        }
        Ok(())
    })?;

    // 6. stage-2 training
    let models_dir = dir.join("models");
    let model_paths = [
        models_dir.join("dynamics.bin"),
        models_dir.join("gcn.bin"),
        models_dir.join("prompt.jsonl"),
        models_dir.join("history.json"),
    ];
    let train_cfg_json = serde_json::to_vec(&(
        &cfg.training,
        &cfg.recognition,
        &cfg.dynamics,
        cfg.corruption.rate,
    ))
    .expect("serialize");
    let train_hash = hash_inputs(
        &[&seed_bytes, &train_cfg_json],
        &[&train_path, &val_path, &completion_path],
    )?;
    runner.stage("train", train_hash, &model_paths, || {
        let train_set = read_sequences(&train_path)?;
        let val_set = read_sequences(&val_path)?;
        let classes = 1 + train_set
            .iter()
            .filter_map(|s| s.label)
            .max()
            .ok_or_else(|| Error::InvalidInput("training data has no labels".into()))?;
        let bank = SkeletonBank::new(train_set.clone(), cfg.completion.seq_len)?;
        let completion = container::load_completion(&completion_path)?;
        let prompt = PromptSet::from_bank(&bank, opts.seed)?;
        let mut init_rng = Rng::from_seed_and_stream(opts.seed, 0x111);
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
            prompt,
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
            seed: cfg.training.seed ^ opts.seed,
        };
        let history = train(
            &mut models,
            &Dataset {
                train: train_set,
                val: val_set,
            },
            &tc,
        )?;
        container::save_dynamics(&models.dynamics, &models.fusion, dcfg.hidden_dim, &model_paths[0])?;
        container::save_gcn(&models.gcn, &model_paths[1])?;
        write_sequences(
            &[
                models.prompt.prior.clone(),
                models.prompt.context.clone(),
                models.prompt.masked_context.clone(),
            ],
            &model_paths[2],
        )?;
        let history_json =
            serde_json::to_string_pretty(&history).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&model_paths[3], history_json)?;
        Ok(())
    })?;

    // 7. evaluate each severity
    let eval_paths: Vec<PathBuf> = SEVERITIES
        .iter()
        .map(|(name, _)| dir.join(format!("eval/{name}.json")))
        .collect();
    let eval_hash = {
        let mut files: Vec<&Path> = model_paths.iter().map(|p| p.as_path()).collect();
        files.push(&completion_path);
        files.extend(corrupted_paths.iter().map(|p| p.as_path()));
        hash_inputs(&[&seed_bytes], &files)?
    };
    runner.stage("eval", eval_hash, &eval_paths, || {
        let models = load_models(dir)?;
        for (in_path, out_path) in corrupted_paths.iter().zip(&eval_paths) {
            let data = read_sequences(in_path)?;
            let report = evaluate(&models, &data, opts.seed)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(out_path, json)?;
        }
        Ok(())
    })?;

    // 8. restoration metrics per severity
    let rm_paths: Vec<PathBuf> = SEVERITIES
        .iter()
        .map(|(name, _)| dir.join(format!("restore_metrics/{name}.json")))
        .collect();
    let rm_hash = {
        let mut files: Vec<&Path> = vec![&val_path];
        files.extend(restored_paths.iter().map(|p| p.as_path()));
        files.extend(corrupted_paths.iter().map(|p| p.as_path()));
        hash_inputs(&[], &files)?
    };
    runner.stage("restore-metrics", rm_hash, &rm_paths, || {
        let gt = read_sequences(&val_path)?;
        for ((restored_path, corrupted_path), out_path) in
            restored_paths.iter().zip(&corrupted_paths).zip(&rm_paths)
        {
            let preds = read_sequences(restored_path)?;
            let masks = read_sequences(corrupted_path)?;
            let report = report_many(&preds, &gt, Some(&masks))?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(out_path, json)?;
        }
        Ok(())
    })?;

    // 9. plots
    let plot_paths = [dir.join("plots/results.csv"), dir.join("plots/top1.svg")];
    let plot_hash = {
        let mut files: Vec<&Path> = eval_paths.iter().map(|p| p.as_path()).collect();
        files.extend(rm_paths.iter().map(|p| p.as_path()));
        hash_inputs(&[], &files)?
    };
    runner.stage("plot-export", plot_hash, &plot_paths, || {
        let mut reports = Vec::new();
        for (((name, _), eval_path), rm_path) in
            SEVERITIES.iter().zip(&eval_paths).zip(&rm_paths)
        {
            let eval: skelact::recognize::EvalReport =
                serde_json::from_str(&std::fs::read_to_string(eval_path)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
            let rm: skelact::metrics::RestorationReport =
                serde_json::from_str(&std::fs::read_to_string(rm_path)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
            reports.push(SettingReport {
                setting: name.to_string(),
                top1: eval.top1,
                top5: eval.top5,
                mean_class_acc: eval.mean_class_acc,
                mpjpe: rm.mpjpe,
                n_mpjpe: rm.n_mpjpe,
                mpjve: rm.mpjve,
            });
        }
        plot_export(&reports, &plot_paths[0], &plot_paths[1])
    })?;

    let manifest = Manifest {
        created: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: opts.seed,
        config_hash,
        stages: runner.records,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&manifest_path, json)?;
    Ok(manifest)
}

/// Loads the trained pipeline from a run directory.
pub fn load_models(dir: &Path) -> Result<PipelineModels> {
    let completion = container::load_completion(dir.join("completion.bin"))?;
    let (dynamics, fusion) = container::load_dynamics(dir.join("models/dynamics.bin"))?;
    let gcn = container::load_gcn(dir.join("models/gcn.bin"))?;
    let prompt_seqs = read_sequences(dir.join("models/prompt.jsonl"))?;
    if prompt_seqs.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "prompt.jsonl holds {} sequences, expected prior/context/masked",
            prompt_seqs.len()
        )));
    }
    let mut it = prompt_seqs.into_iter();
    let prompt = PromptSet {
        prior: it.next().unwrap(),
        context: it.next().unwrap(),
        masked_context: it.next().unwrap(),
    };
    Ok(PipelineModels {
        completion,
        dynamics,
        fusion,
        gcn,
        prompt,
    })
}
