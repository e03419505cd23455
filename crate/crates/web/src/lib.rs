//! Browser bindings: task scatter plots, a small end-to-end training run and
//! tone-burst spectrograms. The `*_json` functions do the work and are plain
//! Rust so they can be tested natively.

use irdan::autodiff::Tensor;
use irdan::data::{gen_synthetic_pda, spectrogram_ingest, PdaTaskSpec};
use irdan::model::ModelConfig;
use irdan::train::{fit, train_source_only_baseline, StopPolicy, TrainConfig};
use irdan::ExperimentConfig;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_EPOCHS: usize = 30;

fn demo_task(seed: u64, rotation: f64, offset: f64) -> PdaTaskSpec {
    let mut task = PdaTaskSpec::standard_shift(seed);
    task.samples_per_class = 100;
    task.shift.rotation_angle = rotation;
    task.shift.mean_offset = (0..8).map(|i| if i % 2 == 0 { offset } else { -offset }).collect();
    task
}

/// 2-D view where the four class means land on the four half-axes.
fn project(row: &[f64]) -> [f64; 2] {
    [row[0] - row[2], row[1] - row[3]]
}

#[derive(Debug, Serialize)]
pub struct Scatter {
    /// `[x, y, label]`
    pub source: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
}

pub fn scatter(seed: u64, rotation: f64, offset: f64) -> Result<Scatter, String> {
    let data = gen_synthetic_pda(&demo_task(seed, rotation, offset)).map_err(|e| e.to_string())?;
    let points = |x: &Tensor, y: &[usize]| {
        (0..x.rows())
            .map(|i| {
                let [a, b] = project(x.row(i));
                [a, b, y[i] as f64]
            })
            .collect()
    };
    Ok(Scatter {
        source: points(&data.source.inputs, data.source.labels().map_err(|e| e.to_string())?),
        target: points(&data.eval_target.inputs, data.eval_target.labels().map_err(|e| e.to_string())?),
    })
}

#[derive(Debug, Serialize)]
pub struct EpochPoint {
    pub epoch: u32,
    pub reward: f64,
    pub accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub epochs: Vec<EpochPoint>,
    pub chosen_epoch: u32,
    pub irdan_accuracy: f64,
    pub baseline_accuracy: f64,
}

pub fn run(seed: u64, rotation: f64, offset: f64, epochs: usize) -> Result<RunSummary, String> {
    if epochs == 0 || epochs > MAX_EPOCHS {
        return Err(format!("epochs must be in 1..={MAX_EPOCHS}"));
    }
    let task = demo_task(seed, rotation, offset);
    let mut cfg = ExperimentConfig::for_task(task);
    cfg.train = TrainConfig {
        epochs,
        pretrain_epochs: 10,
        seed,
        ..cfg.train
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let data = gen_synthetic_pda(&cfg.task).map_err(|e| e.to_string())?;
    let model: ModelConfig = cfg.model_config();
    let r = fit(
        model,
        &data.source,
        &data.target,
        Some(&data.eval_target),
        &cfg.train,
        &cfg.hash(),
        StopPolicy::FullBudget,
    )
    .map_err(|e| e.to_string())?;
    let baseline = train_source_only_baseline(&r.model, &data.source, Some(&data.eval_target), &cfg.train)
        .map_err(|e| e.to_string())?;
    let trace = &r.outcome.trace;
    let chosen = trace.best_by_reward().ok_or("empty trace")?;
    Ok(RunSummary {
        epochs: trace
            .rows
            .iter()
            .map(|row| EpochPoint {
                epoch: row.epoch,
                reward: row.reward,
                accuracy: row.target_accuracy.unwrap_or(f64::NAN),
            })
            .collect(),
        chosen_epoch: chosen.epoch,
        irdan_accuracy: chosen.target_accuracy.unwrap_or(f64::NAN),
        baseline_accuracy: baseline.final_accuracy().unwrap_or(f64::NAN),
    })
}

/// 32×32 spectrogram of one tone burst at `frequency` cycles per sample.
pub fn tone_image(frequency: f64, noise: f64, seed: u64) -> Result<Vec<f64>, String> {
    const LEN: usize = 1024;
    // small deterministic noise; a full RNG is overkill here
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let signal: Vec<f64> = (0..LEN)
        .map(|t| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            let env = 0.5 + 0.5 * (-((t as f64 - 512.0) / 200.0).powi(2)).exp();
            env * (2.0 * std::f64::consts::PI * frequency * t as f64).sin() + noise * u
        })
        .collect();
    let x = Tensor::new(&[1, LEN], signal).map_err(|e| e.to_string())?;
    Ok(spectrogram_ingest(&x, 64, 16).map_err(|e| e.to_string())?.into_data())
}

pub fn scatter_json(seed: u64, rotation: f64, offset: f64) -> Result<String, String> {
    serde_json::to_string(&scatter(seed, rotation, offset)?).map_err(|e| e.to_string())
}

pub fn run_json(seed: u64, rotation: f64, offset: f64, epochs: usize) -> Result<String, String> {
    serde_json::to_string(&run(seed, rotation, offset, epochs)?).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = scatter)]
pub fn scatter_js(seed: u32, rotation: f64, offset: f64) -> Result<String, JsValue> {
    scatter_json(seed as u64, rotation, offset).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = train)]
pub fn train_js(seed: u32, rotation: f64, offset: f64, epochs: u32) -> Result<String, JsValue> {
    run_json(seed as u64, rotation, offset, epochs as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = toneImage)]
pub fn tone_image_js(frequency: f64, noise: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    tone_image(frequency, noise, seed as u64).map_err(|e| JsValue::from_str(&e))
}
