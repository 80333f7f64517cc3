//! Mini-batch Adam training with best-on-validation-AUROC selection, and
//! `MCK1` checkpoints.
//!
//! A run is a pure function of `(seed, bundle, head config, train config)`:
//! initialization draws from ChaCha8 stream 0 of the seed and the shuffle of
//! epoch `e` from stream `e + 1`, so nothing depends on thread scheduling or
//! global state.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassPromptSet, EmbeddingBundle, Split, TaskView};
use crate::container::{self, Reader};
use crate::error::{Error, Result};
use crate::head::{backward_into, forward, init_params, HeadConfig, HeadParams};
use crate::metrics::MetricsReport;
use crate::numerics::{softmax, softmax_ce_loss};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCK1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub task: String,
}

impl TrainConfig {
    pub fn new(task: &str, seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            task: task.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.adam_eps) {
            return fail("learning_rate and adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be positive; a run with no epochs has no best epoch");
        }
        for b in [self.beta1, self.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return fail("betas must lie strictly between 0 and 1");
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: HeadParams,
    pub second_moment: HeadParams,
}

impl AdamState {
    pub fn new(params: &HeadParams) -> Self {
        Self {
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut HeadParams,
    grads: &HeadParams,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let shape = |p: &HeadParams| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
    let s = shape(params);
    if s != shape(grads) || s != shape(&state.first_moment) || s != shape(&state.second_moment) {
        return Err(Error::dim(
            "adam: gradient or moment shapes differ from params",
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.adam_eps;
    let p_t = params.tensors_mut();
    let g_t = grads.tensors();
    let m_t = state.first_moment.tensors_mut();
    let v_t = state.second_moment.tensors_mut();
    for (((p, g), m), v) in p_t.into_iter().zip(g_t).zip(m_t).zip(v_t) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss_mean: f64,
    pub val_accuracy: f64,
    pub val_macro_auroc: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the highest validation AUROC (earliest on ties).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

fn check_compat(bundle: &EmbeddingBundle, head: &HeadConfig, task: &str) -> Result<()> {
    head.validate()?;
    let schema = bundle.task(task)?;
    if schema.num_classes != head.n_classes {
        return Err(Error::Config(format!(
            "task {task} has {} classes, head has {}",
            schema.num_classes, head.n_classes
        )));
    }
    if bundle.d_embed != head.d_embed {
        return Err(Error::Config(format!(
            "bundle d_embed is {}, head expects {}",
            bundle.d_embed, head.d_embed
        )));
    }
    Ok(())
}

/// Softmax scores for every sample of a view, in view order.
pub fn predict_scores(
    params: &HeadParams,
    config: &HeadConfig,
    view: &TaskView,
) -> Result<Vec<Vec<f64>>> {
    view.samples
        .par_iter()
        .map(|s| forward(params, config, &s.image, &s.text).map(|(z, _)| softmax(&z)))
        .collect()
}

pub fn evaluate_view(
    params: &HeadParams,
    config: &HeadConfig,
    view: &TaskView,
) -> Result<MetricsReport> {
    if view.is_empty() {
        return Err(Error::Data(format!(
            "{} view of {} is empty",
            view.split, view.task
        )));
    }
    let scores = predict_scores(params, config, view)?;
    MetricsReport::from_scores(
        &view.task,
        view.split,
        &scores,
        &view.labels(),
        view.num_classes,
    )
}

pub fn evaluate(
    params: &HeadParams,
    head_cfg: &HeadConfig,
    bundle: &EmbeddingBundle,
    task: &str,
    split: Split,
) -> Result<MetricsReport> {
    check_compat(bundle, head_cfg, task)?;
    evaluate_view(params, head_cfg, &bundle.task_view(task, split)?)
}

/// Trains one head and returns the snapshot with the best validation AUROC.
pub fn fit(
    bundle: &EmbeddingBundle,
    prompts: Option<&ClassPromptSet>,
    head_cfg: &HeadConfig,
    train_cfg: &TrainConfig,
) -> Result<(HeadParams, TrainHistory)> {
    train_cfg.validate()?;
    check_compat(bundle, head_cfg, &train_cfg.task)?;
    let train = bundle.task_view(&train_cfg.task, Split::Train)?;
    let val = bundle.task_view(&train_cfg.task, Split::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "task {} needs train and val samples (have {} / {})",
            train_cfg.task,
            train.len(),
            val.len()
        )));
    }

    let mut params = init_params(head_cfg, train_cfg.seed, prompts)?;
    let mut adam = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, HeadParams)> = None;

    for epoch in 0..train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            for t in grads.tensors_mut() {
                t.fill(0.0);
            }
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train.samples[i];
                let (z, cache) = forward(&params, head_cfg, &s.image, &s.text)?;
                let (loss, mut dz) = softmax_ce_loss(&z, s.label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss at epoch {epoch} batch {b}")));
                }
                loss_sum += loss;
                dz.iter_mut().for_each(|d| *d *= inv);
                backward_into(&params, head_cfg, &cache, &dz, &mut grads)?;
            }
            adam_step(&mut params, &grads, &mut adam, train_cfg)?;
            if !params.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameters after epoch {epoch} batch {b}"
                )));
            }
        }

        let report = evaluate_view(&params, head_cfg, &val)?;
        records.push(EpochRecord {
            epoch,
            train_loss_mean: loss_sum / train.len() as f64,
            val_accuracy: report.accuracy,
            val_macro_auroc: report.macro_auroc,
            val_macro_f1: report.macro_f1,
        });
        if best
            .as_ref()
            .is_none_or(|(_, a, _)| report.macro_auroc > *a)
        {
            best = Some((epoch, report.macro_auroc, params.clone()));
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainHistory {
            epochs: records,
            best_epoch,
        },
    ))
}

/// Contents of an `MCK1` checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams,
    pub head_config: HeadConfig,
    pub train_config: TrainConfig,
    pub history: TrainHistory,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    head_config: HeadConfig,
    train_config: TrainConfig,
    history: TrainHistory,
}

impl Checkpoint {
    /// Header JSON, then every tensor in [`HeadParams::tensors`] order as
    /// little-endian `f64`, then the CRC-32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.params.matches(&self.head_config) {
            return Err(Error::State("params do not match the head config".into()));
        }
        let header = serde_json::to_vec(&CheckpointHeader {
            version: CHECKPOINT_VERSION,
            head_config: self.head_config.clone(),
            train_config: self.train_config.clone(),
            history: self.history.clone(),
        })?;
        let payload: Vec<u8> = self
            .params
            .tensors()
            .into_iter()
            .flatten()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        Ok(container::encode(CHECKPOINT_MAGIC, &header, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(CHECKPOINT_MAGIC, bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        header.head_config.validate()?;
        let mut params = HeadParams::zeros(&header.head_config);
        let mut rd = Reader::new(payload);
        let flat = rd.f64s(params.num_scalars())?;
        rd.finish()?;
        params.assign_flat(&flat)?;
        Ok(Self {
            params,
            head_config: header.head_config,
            train_config: header.train_config,
            history: header.history,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and insists its head config equals `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &HeadConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.head_config != expected {
        let got = serde_json::to_value(&ck.head_config)?;
        let want = serde_json::to_value(expected)?;
        let diffs: Vec<String> = want
            .as_object()
            .unwrap()
            .iter()
            .filter(|(k, v)| got.get(k.as_str()) != Some(v))
            .map(|(k, v)| format!("{k}: checkpoint {} vs requested {v}", got[k.as_str()]))
            .collect();
        return Err(Error::ConfigMismatch(diffs.join(", ")));
    }
    Ok(ck)
}
