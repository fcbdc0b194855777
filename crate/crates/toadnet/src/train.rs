//! Training protocol: Adam over mini-batches of 4, plateau-halved learning
//! rate, abort-and-restart schedule, continuous best-checkpoint saving, and
//! a seeded 80/20 split where the validation images are augmented too.
//!
//! The scheduler is a pure state machine so a recorded validation-loss
//! sequence can be replayed to reproduce the exact (lr, action) trace.

use crate::augment::{augment_pair, AugmentConfig};
use crate::data::{fnv1a64, mix_seed, DatasetManifest, FrameRecord, Label};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{
    save_checkpoint, BackboneConfig, CheckpointProvenance, Network, NetworkGrads, STAGES,
};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    /// Epochs without a new best before the learning rate halves.
    pub plateau_patience: u32,
    /// Epochs without a new best before the run aborts (into a restart).
    pub abort_patience: u32,
    /// Further runs after the first, each starting at half the previous rate.
    pub n_restarts: u32,
    /// L2 decay on the head weights only.
    pub weight_decay: f64,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub loss: LossConfig,
    /// Hard safety limit on total epochs summed over all restarts.
    pub epochs_cap: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            batch_size: 4,
            plateau_patience: 10,
            abort_patience: 32,
            n_restarts: 4,
            weight_decay: 1e-5,
            split_ratio: 0.8,
            split_seed: 7,
            loss: LossConfig::default(),
            epochs_cap: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return fail(format!("initial_lr {} must be positive and finite", self.initial_lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.plateau_patience == 0 {
            return fail("plateau_patience must be at least 1".into());
        }
        if self.plateau_patience >= self.abort_patience {
            return fail(format!(
                "plateau_patience ({}) must be smaller than abort_patience ({})",
                self.plateau_patience, self.abort_patience
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail(format!(
                "split_ratio {} must lie strictly between 0 and 1 so both partitions exist",
                self.split_ratio
            ));
        }
        if self.epochs_cap == 0 {
            return fail("epochs_cap must be at least 1".into());
        }
        self.loss.validate()
    }
}

/// Starting learning rate of restart `k`: the previous starting rate halved.
pub fn restart_lr(initial_lr: f64, restart_index: u32) -> f64 {
    initial_lr / f64::powi(2.0, restart_index as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerState {
    pub current_lr: f64,
    pub best_val_loss: f64,
    pub epochs_since_best: u32,
    pub restart_index: u32,
}

impl SchedulerState {
    pub fn new(starting_lr: f64, restart_index: u32) -> Self {
        SchedulerState {
            current_lr: starting_lr,
            best_val_loss: f64::INFINITY,
            epochs_since_best: 0,
            restart_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerAction {
    /// Keep going; `new_best` tells the caller whether to save a checkpoint.
    Continue { new_best: bool },
    /// The rate was just halved; counter keeps running toward the abort.
    HalveLr,
    /// Patience exhausted; stop this run (the caller may restart).
    Abort,
}

/// Advance the scheduler by one epoch of validation loss.
///
/// "Did not decrease" counts epochs since the best-so-far loss. The halving
/// fires each time another full plateau window passes without a new best,
/// which gives every halved rate a fresh window; the abort threshold runs
/// on the same counter and wins when both fire.
pub fn scheduler_step(
    state: &mut SchedulerState,
    val_loss: f64,
    config: &TrainConfig,
) -> Result<SchedulerAction> {
    if !val_loss.is_finite() {
        return Err(Error::Train(format!(
            "validation loss became non-finite ({val_loss}) at restart {}",
            state.restart_index
        )));
    }
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
        state.epochs_since_best = 0;
        return Ok(SchedulerAction::Continue { new_best: true });
    }
    state.epochs_since_best += 1;
    if state.epochs_since_best >= config.abort_patience {
        return Ok(SchedulerAction::Abort);
    }
    if state.epochs_since_best.is_multiple_of(config.plateau_patience) {
        state.current_lr /= 2.0;
        return Ok(SchedulerAction::HalveLr);
    }
    Ok(SchedulerAction::Continue { new_best: false })
}

/// Deterministic 80/20-style split; both partitions non-empty.
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot split an empty dataset".into()));
    }
    let n = manifest.records.len();
    let n_train = (ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "split ratio {ratio} on {n} records leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, n as u64]));
    order.shuffle(&mut rng);
    let train = order[..n_train].iter().map(|&i| manifest.records[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| manifest.records[i].clone()).collect();
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Global epoch counter across restarts, starting at 0.
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate the epoch was trained with (before any halving it triggered).
    pub lr: f64,
    pub restart: u32,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_val_loss: f64,
    /// Training loss of the epoch that produced the best checkpoint.
    pub best_train_loss: f64,
    pub best_epoch: u32,
    pub best_checkpoint: PathBuf,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,restart\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.restart
            ));
        }
        out
    }
}

/// Adam with the default moment coefficients; state is reset at each
/// restart, matching a fresh optimizer per run.
struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(network: &Network) -> Adam {
        let shapes: Vec<usize> = network.param_tensors().iter().map(|t| t.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, network: &mut Network, grads: &NetworkGrads, lr: f64) {
        self.t += 1;
        let bias_correction =
            (1.0 - ADAM_BETA2.powi(self.t as i32)).sqrt() / (1.0 - ADAM_BETA1.powi(self.t as i32));
        let step_size = (lr * bias_correction) as f32;
        let b1 = ADAM_BETA1 as f32;
        let b2 = ADAM_BETA2 as f32;
        let eps = ADAM_EPS as f32;
        let grad_tensors = grads.tensors();
        for (k, params) in network.param_tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..params.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                params[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Per-sample augmentation seed: hash of (split_seed, epoch, record id).
pub fn sample_seed(split_seed: u64, epoch: u32, record: &FrameRecord) -> u64 {
    mix_seed(&[split_seed, epoch as u64, fnv1a64(record.uid().as_bytes())])
}

struct LoadedRecord {
    image: Array3<f32>,
    mask: Option<Array2<u8>>,
    record: FrameRecord,
}

fn load_records(records: &[FrameRecord]) -> Result<Vec<LoadedRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(LoadedRecord {
                image: r.load_image()?,
                mask: r.load_mask()?,
                record: r.clone(),
            })
        })
        .collect()
}

fn sample_loss(
    network: &Network,
    loaded: &LoadedRecord,
    seed: u64,
    augment: &AugmentConfig,
    loss: &LossConfig,
    grads: Option<&mut NetworkGrads>,
) -> Result<f64> {
    let sample = augment_pair(&loaded.image, loaded.mask.as_ref(), seed, augment)?;
    match grads {
        None => {
            let heat = network.heatmap_forward(&sample.x)?;
            loss.loss(&sample.y, &heat.mapv(|v| v as f64))
        }
        Some(acc) => {
            let (heat, state) = network.forward_train(&sample.x)?;
            let p = heat.mapv(|v| v as f64);
            let value = loss.loss(&sample.y, &p)?;
            let d_prob = loss.grad(&sample.y, &p)?;
            acc.add_assign(&network.backward(&sample.x, &state, &d_prob)?);
            Ok(value)
        }
    }
}

pub fn run_training(
    manifest: &DatasetManifest,
    backbone: &BackboneConfig,
    augment: &AugmentConfig,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainHistory> {
    config.validate()?;
    backbone.validate()?;
    augment.validate()?;
    let counts = manifest.counts();
    if counts.toad == 0 || counts.not_toad == 0 {
        return Err(Error::Dataset(format!(
            "training needs both classes, got {} toad / {} not_toad",
            counts.toad, counts.not_toad
        )));
    }

    let (train_recs, val_recs) = split_dataset(manifest, config.split_ratio, config.split_seed)?;
    if !train_recs.iter().any(|r| r.label == Label::Toad)
        || !train_recs.iter().any(|r| r.label == Label::NotToad)
    {
        return Err(Error::Train(
            "the training partition lost one class entirely; choose another split_seed".into(),
        ));
    }
    let train_set = load_records(&train_recs)?;
    let val_set = load_records(&val_recs)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let best_dir = out_dir.join("best");

    let head_seed = mix_seed(&[backbone.seed, STAGES as u64]);
    let mut network = Network::build(backbone, head_seed)?;
    network.head.weight_decay = config.weight_decay;

    let mut history = Vec::new();
    let mut global_best = f64::INFINITY;
    let mut best_train_loss = f64::NAN;
    let mut best_epoch = 0u32;
    let mut epoch: u32 = 0;
    let mut capped = false;

    'runs: for restart in 0..=config.n_restarts {
        if restart > 0 {
            let (best_net, _) = crate::model::load_checkpoint(&best_dir)?;
            network = best_net;
            network.head.weight_decay = config.weight_decay;
        }
        let mut scheduler = SchedulerState::new(restart_lr(config.initial_lr, restart), restart);
        scheduler.best_val_loss = global_best;
        let mut adam = Adam::new(&network);

        loop {
            if epoch >= config.epochs_cap {
                capped = true;
                break 'runs;
            }
            let lr = scheduler.current_lr;

            // Training pass in a seeded shuffled order.
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[config.split_seed, epoch as u64, 0x0ede]));
            order.shuffle(&mut rng);

            let mut train_sum = 0.0;
            for batch in order.chunks(config.batch_size) {
                let mut grads = network.zero_grads();
                for &idx in batch {
                    let loaded = &train_set[idx];
                    let seed = sample_seed(config.split_seed, epoch, &loaded.record);
                    train_sum +=
                        sample_loss(&network, loaded, seed, augment, &config.loss, Some(&mut grads))?;
                }
                grads.scale(1.0 / batch.len() as f32);
                adam.step(&mut network, &grads, lr);
            }
            let train_loss = train_sum / train_set.len() as f64;
            if !train_loss.is_finite() {
                return Err(Error::Train(format!(
                    "training loss became non-finite ({train_loss}) at epoch {epoch}"
                )));
            }

            // Validation pass, augmented like training.
            let mut val_sum = 0.0;
            for loaded in &val_set {
                let seed = sample_seed(config.split_seed, epoch, &loaded.record);
                val_sum += sample_loss(&network, loaded, seed, augment, &config.loss, None)?;
            }
            let val_loss = val_sum / val_set.len() as f64;

            let action = scheduler_step(&mut scheduler, val_loss, config)?;
            if matches!(action, SchedulerAction::Continue { new_best: true }) {
                global_best = val_loss;
                best_train_loss = train_loss;
                best_epoch = epoch;
                let provenance = CheckpointProvenance {
                    loss: config.loss.kind,
                    epoch,
                    best_val_loss: val_loss,
                    restart_index: restart,
                };
                save_checkpoint(&best_dir, &network, Some(provenance))?;
            }

            history.push(EpochStats { epoch, train_loss, val_loss, lr, restart });
            eprintln!(
                "epoch {epoch:4}  restart {restart}  lr {lr:.3e}  train {train_loss:.6}  val {val_loss:.6}{}",
                if matches!(action, SchedulerAction::Continue { new_best: true }) { "  *" } else { "" }
            );
            epoch += 1;
            if action == SchedulerAction::Abort {
                break;
            }
        }
    }
    if capped {
        eprintln!("epoch cap {} reached; stopping with the best checkpoint so far", config.epochs_cap);
    }

    let result = TrainHistory {
        epochs: history,
        best_val_loss: global_best,
        best_train_loss,
        best_epoch,
        best_checkpoint: best_dir,
    };
    let csv_path = out_dir.join("history.csv");
    let mut file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    file.write_all(result.to_csv().as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(result)
}
