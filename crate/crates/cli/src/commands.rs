use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use irdan::data::{gen_synthetic_pda, Dataset};
use irdan::model::{Checkpoint, Irdan};
use irdan::train::{
    self, compute_reward, fit, interactive_train, train_source_only_baseline, PretrainLog, Selection, StopPolicy,
};
use irdan::{ExperimentConfig, MetricsReport};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::layout::{
    create_dir, load_data, sha256_file, write_file, Layout, Manifest, ManifestEntry, DATA_FILES,
};

/// Column order of `pretrain.csv`; epoch 0 is the loss before any update.
pub const PRETRAIN_COLUMNS: [&str; 4] = ["config_hash", "domain", "epoch", "loss"];

/// Column order of `stopping/<hash>/epochs.csv`.
pub const STOPPING_EPOCH_COLUMNS: [&str; 6] = ["config_hash", "seed", "epoch", "accuracy", "reward", "training_loss"];

/// Column order of `stopping/<hash>/summary.csv`.
pub const STOPPING_SUMMARY_COLUMNS: [&str; 11] = [
    "config_hash",
    "seed",
    "best_epoch",
    "best_accuracy",
    "reward_epoch",
    "accuracy_at_max_v",
    "loss_epoch",
    "accuracy_at_min_loss",
    "regret_v",
    "regret_loss",
    "baseline_accuracy",
];

pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let data = gen_synthetic_pda(&cfg.task)?;
    let dir = layout.data_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    for (name, d) in DATA_FILES.iter().zip([&data.source, &data.target, &data.eval_target]) {
        let path = dir.join(name);
        d.save(&path).map_err(|e| CliError::runtime(path.display(), e))?;
        files.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_file(&path)?,
            samples: d.len(),
            labeled: d.labels.is_some(),
        });
    }
    let manifest = Manifest {
        config_hash: layout.config_hash.clone(),
        task_hash: layout.task_hash.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    write_file(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn pretrain_csv(hash: &str, logs: &[PretrainLog; 2]) -> String {
    let mut out = PRETRAIN_COLUMNS.join(",");
    out.push('\n');
    for log in logs {
        let domain = match log.domain {
            irdan::model::Domain::Source => "source",
            irdan::model::Domain::Target => "target",
        };
        let _ = writeln!(out, "{hash},{domain},0,{}", log.initial_loss);
        for (i, l) in log.epoch_losses.iter().enumerate() {
            let _ = writeln!(out, "{hash},{domain},{},{l}", i + 1);
        }
    }
    out
}

/// Final contrastive loss per domain from a `pretrain.csv`.
fn read_pretrain_losses(path: &Path, hash: &str) -> CliResult<[f64; 2]> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut last = [None, None];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("{}: malformed row `{line}`", path.display()));
        if f.len() != PRETRAIN_COLUMNS.len() || f[0] != hash {
            return Err(bad());
        }
        let slot = match f[1] {
            "source" => 0,
            "target" => 1,
            _ => return Err(bad()),
        };
        last[slot] = Some(f[3].parse::<f64>().map_err(|_| bad())?);
    }
    match last {
        [Some(s), Some(t)] => Ok([s, t]),
        _ => Err(CliError::Data(format!("{}: missing a domain", path.display()))),
    }
}

struct Pretrained {
    model: Irdan,
    contrastive: [f64; 2],
}

fn run_pretraining(cfg: &ExperimentConfig, layout: &Layout, source: &Dataset, target: &Dataset) -> CliResult<Pretrained> {
    let mut model = Irdan::new(cfg.model_config(), cfg.train.seed)?;
    let logs = train::pretrain(&mut model, source, target, &cfg.train)?;
    let dir = layout.run_dir();
    create_dir(&dir)?;
    write_file(&dir.join("config.toml"), cfg.to_toml_string()?)?;
    write_file(&dir.join("pretrain.csv"), pretrain_csv(&layout.config_hash, &logs))?;
    let path = dir.join("pretrained.ckpt");
    Checkpoint::capture(&model, &layout.config_hash, 0, 0.0)
        .save(&path)
        .map_err(|e| CliError::runtime(path.display(), e))?;
    eprintln!(
        "pretrained: contrastive loss source {:.4} -> {:.4}, target {:.4} -> {:.4}",
        logs[0].initial_loss,
        logs[0].final_loss(),
        logs[1].initial_loss,
        logs[1].final_loss()
    );
    Ok(Pretrained {
        model,
        contrastive: [logs[0].final_loss(), logs[1].final_loss()],
    })
}

/// Reuses `pretrained.ckpt` when it belongs to this config.
fn load_pretrained(layout: &Layout) -> CliResult<Option<Pretrained>> {
    let dir = layout.run_dir();
    let (ckpt_path, csv_path) = (dir.join("pretrained.ckpt"), dir.join("pretrain.csv"));
    if !ckpt_path.exists() || !csv_path.exists() {
        return Ok(None);
    }
    let ckpt = Checkpoint::load(&ckpt_path).map_err(|e| CliError::data(ckpt_path.display(), e))?;
    if ckpt.config_hash != layout.config_hash {
        return Ok(None);
    }
    let model = ckpt.restore()?;
    if !model.is_pretrained() {
        return Err(CliError::Data(format!("{} is not pretrained", ckpt_path.display())));
    }
    Ok(Some(Pretrained {
        model,
        contrastive: read_pretrain_losses(&csv_path, &layout.config_hash)?,
    }))
}

pub fn pretrain(cfg: &ExperimentConfig) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let [source, target, _] = load_data(&layout.data_dir(), &layout.task_hash)?;
    run_pretraining(cfg, &layout, &source, &target)?;
    println!("wrote {}", layout.run_dir().join("pretrained.ckpt").display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config_hash: &'a str,
    task_hash: &'a str,
    epochs_run: usize,
    chosen_epoch: u32,
    chosen_reward: f64,
    reached_target: bool,
    final_reward: f64,
    overall_accuracy: f64,
}

pub fn train(cfg: &ExperimentConfig) -> CliResult<()> {
    let started = Instant::now();
    let layout = Layout::new(cfg);
    let [source, target, eval_target] = load_data(&layout.data_dir(), &layout.task_hash)?;
    let pre = match load_pretrained(&layout)? {
        Some(p) => {
            eprintln!("reusing {}", layout.run_dir().join("pretrained.ckpt").display());
            p
        }
        None => run_pretraining(cfg, &layout, &source, &target)?,
    };
    let mut model = pre.model;
    let outcome = interactive_train(
        &mut model,
        &source,
        &target,
        Some(&eval_target),
        &cfg.train,
        &layout.config_hash,
        Some(pre.contrastive),
        StopPolicy::Reward,
    )?;

    let dir = layout.run_dir();
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    for c in &outcome.checkpoints {
        let path = ckpt_dir.join(format!("{}.ckpt", train::schedule::checkpoint_id(c.epoch)));
        c.save(&path).map_err(|e| CliError::runtime(path.display(), e))?;
    }
    let best = outcome.best();
    let best_path = dir.join("best.ckpt");
    best.save(&best_path).map_err(|e| CliError::runtime(best_path.display(), e))?;
    outcome
        .trace
        .write_csv(dir.join("trace.csv"))
        .map_err(|e| CliError::runtime("trace.csv", e))?;

    let chosen = best.restore()?;
    let (pred, _) = chosen.ensemble_predict(&eval_target.inputs)?;
    let final_reward = outcome.trace.rows.last().map_or(0.0, |r| r.reward);
    let report = MetricsReport::from_predictions(
        &layout.config_hash,
        &pred,
        eval_target.labels()?,
        final_reward,
        outcome.best_epoch,
        started.elapsed().as_secs_f64(),
    )?;
    write_file(&dir.join("metrics.csv"), report.to_csv())?;
    let summary = TrainSummary {
        config_hash: &layout.config_hash,
        task_hash: &layout.task_hash,
        epochs_run: outcome.trace.rows.len(),
        chosen_epoch: outcome.best_epoch,
        chosen_reward: best.reward,
        reached_target: outcome.reached_target,
        final_reward,
        overall_accuracy: report.overall_accuracy,
    };
    write_file(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!(
        "epochs {} chosen epoch {} (V {:.4}) eval-target accuracy {:.4}",
        summary.epochs_run, summary.chosen_epoch, summary.chosen_reward, summary.overall_accuracy
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path, cfg: Option<&ExperimentConfig>, out: Option<&Path>) -> CliResult<()> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| CliError::data(checkpoint.display(), e))?;
    let dataset = Dataset::load(data).map_err(|e| CliError::data(data.display(), e))?;
    if let Some(cfg) = cfg {
        if ckpt.config_hash != cfg.hash() {
            eprintln!(
                "warning: checkpoint config hash {} differs from config {}",
                ckpt.config_hash,
                cfg.hash()
            );
        }
        if dataset.task_hash != cfg.task.hash() {
            eprintln!(
                "warning: dataset task hash {} differs from config task {}",
                dataset.task_hash,
                cfg.task.hash()
            );
        }
    }
    if dataset.is_empty() {
        return Err(CliError::Data(format!("{} has no samples", data.display())));
    }
    let expected = ckpt.model_config.input_shape();
    if dataset.inputs.shape()[1..] != expected[..] {
        return Err(CliError::Data(format!(
            "samples have shape {:?}, checkpoint expects {expected:?}",
            &dataset.inputs.shape()[1..]
        )));
    }
    let labels = dataset
        .labels
        .as_deref()
        .ok_or_else(|| CliError::Data(format!("{} has no labels", data.display())))?;
    let model = ckpt.restore()?;
    let (pred, _) = model.ensemble_predict(&dataset.inputs)?;
    let reward = compute_reward(&model, &dataset.inputs)?;
    let report = MetricsReport::from_predictions(
        &ckpt.config_hash,
        &pred,
        labels,
        reward,
        ckpt.epoch,
        started.elapsed().as_secs_f64(),
    )?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = out {
        write_file(path, csv)?;
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn compare_stopping(cfg: &ExperimentConfig, seeds: u64) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be positive".into()));
    }
    let layout = Layout::new(cfg);
    let hash = &layout.config_hash;
    let mut epochs_csv = STOPPING_EPOCH_COLUMNS.join(",") + "\n";
    let mut summary_csv = STOPPING_SUMMARY_COLUMNS.join(",") + "\n";
    let (mut regret_v, mut regret_loss, mut gains) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..seeds {
        let mut c = cfg.clone();
        let seed = cfg.task.seed + i;
        c.task.seed = seed;
        c.train.seed = seed;
        let data = gen_synthetic_pda(&c.task)?;
        let r = fit(
            c.model_config(),
            &data.source,
            &data.target,
            Some(&data.eval_target),
            &c.train,
            &c.hash(),
            StopPolicy::FullBudget,
        )?;
        let trace = &r.outcome.trace;
        for row in &trace.rows {
            let _ = writeln!(
                epochs_csv,
                "{hash},{seed},{},{},{},{}",
                row.epoch,
                row.target_accuracy.unwrap_or(f64::NAN),
                row.reward,
                row.total_loss()
            );
        }
        let sel: Selection = trace
            .selection()
            .ok_or_else(|| CliError::Runtime("trace has no accuracies".into()))?;
        let baseline = train_source_only_baseline(&r.model, &data.source, Some(&data.eval_target), &c.train)?
            .final_accuracy()
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            summary_csv,
            "{hash},{seed},{},{},{},{},{},{},{},{},{baseline}",
            sel.best_epoch,
            sel.best_accuracy,
            sel.reward_epoch,
            sel.reward_accuracy,
            sel.loss_epoch,
            sel.loss_accuracy,
            sel.reward_regret(),
            sel.loss_regret()
        );
        eprintln!(
            "seed {seed}: best {:.4} (epoch {}), max-V {:.4} (epoch {}), min-loss {:.4} (epoch {}), baseline {:.4}",
            sel.best_accuracy,
            sel.best_epoch,
            sel.reward_accuracy,
            sel.reward_epoch,
            sel.loss_accuracy,
            sel.loss_epoch,
            baseline
        );
        regret_v.push(sel.reward_regret());
        regret_loss.push(sel.loss_regret());
        gains.push(sel.reward_accuracy - baseline);
    }
    let dir = layout.stopping_dir();
    create_dir(&dir)?;
    write_file(&dir.join("epochs.csv"), epochs_csv)?;
    write_file(&dir.join("summary.csv"), summary_csv)?;
    println!(
        "median regret: max-V rule {:.4}, min-loss rule {:.4}; median gain over baseline {:.4}",
        median(regret_v),
        median(regret_loss),
        median(gains)
    );
    println!("wrote {}", dir.display());
    Ok(())
}
