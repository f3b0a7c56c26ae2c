//! Dataset handling, Adam, the epoch loop, metrics logs and checkpoints.

mod checkpoint;
mod dataset;
mod optim;
mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_into, save_checkpoint, MAGIC,
};
pub use dataset::{Dataset, SplitRatio};
pub use optim::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use synth::{synth_dataset, MAX_FOREGROUND, MIN_FOREGROUND};

pub use crate::model::init_parameters;

use crate::error::{Error, Result};
use crate::metrics::{binarize_batch, combined_loss, ConfusionCounts};
use crate::model::{build_network, NetworkConfig, Parameters, UNet};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor};

const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split_ratio: SplitRatio,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            split_ratio: SplitRatio::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.split_ratio.train == 0 || self.split_ratio.val == 0 {
            return Err(Error::Config("split ratio needs both parts positive".into()));
        }
        self.network.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_miou: f64,
}

/// Mean loss and pooled mIoU over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub miou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters<f32>,
    pub records: Vec<EpochRecord>,
}

/// Splits `ds` by `cfg.split_ratio` and trains on the training part.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = ds.split(cfg.split_ratio, cfg.seed)?;
    train_split(&train_set, &val_set, cfg, |_| {})
}

/// The epoch loop on an explicit split. `on_epoch` sees each record as it
/// is produced.
pub fn train_split(
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (w, h) = train_set.dims();
    if val_set.dims() != (w, h) {
        return Err(Error::ShapeMismatch("train and validation images differ in size".into()));
    }
    cfg.network.check_input_dims(h, w)?;
    if cfg.network.in_channels != 1 || cfg.network.out_channels != 1 {
        return Err(Error::Config("grayscale training needs one input and one output channel".into()));
    }

    let (mut params, net) = build_network::<f32>(&cfg.network, cfg.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut shuffler = SeededRng::derived(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        shuffler.shuffle(&mut order);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch::<f32>(idx);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let input = tape.constant(x);
            let pred = net.forward(&mut tape, &bound, input)?;
            let loss = combined_loss(&mut tape, pred, &y)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &bound);
            adam_step(&mut params, &mut state, cfg.learning_rate)?;
            total += value * idx.len() as f64;
            debug!("epoch {epoch} batch {} loss {value:.6}", batch + 1);
        }
        let train_loss = total / train_set.len() as f64;
        let eval = evaluate(&net, &params, val_set, cfg.batch_size)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            val_miou: eval.miou,
        };
        info!(
            "epoch {epoch}/{}: train_loss={train_loss:.6} val_loss={:.6} val_miou={:.6}",
            cfg.epochs, eval.loss, eval.miou
        );
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome { params, records })
}

/// Item-weighted mean combined loss and dataset-pooled mIoU at threshold 0.5.
pub fn evaluate(net: &UNet, params: &Parameters<f32>, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut counts = ConfusionCounts::default();
    let mut total = 0.0;
    for idx in indices.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch::<f32>(idx);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let input = tape.constant(x);
        let pred = net.forward(&mut tape, &bound, input)?;
        let loss = combined_loss(&mut tape, pred, &y)?;
        total += tape.value(loss).data()[0] as f64 * idx.len() as f64;
        for (mask, &i) in binarize_batch(tape.value(pred), 0.5)?.iter().zip(idx) {
            counts.add(mask, &ds.items()[i].1)?;
        }
    }
    Ok(Evaluation {
        loss: total / ds.len() as f64,
        miou: counts.miou(),
    })
}

/// Per-item probability maps for `ds`, in item order.
pub fn predict_dataset(net: &UNet, params: &Parameters<f32>, ds: &Dataset, batch_size: usize) -> Result<Vec<Tensor<f32>>> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let (w, h) = ds.dims();
    let mut out = Vec::with_capacity(ds.len());
    for idx in indices.chunks(batch_size.max(1)) {
        let (x, _) = ds.batch::<f32>(idx);
        let pred = net.predict(params, &x)?;
        for item in pred.data().chunks(h * w) {
            out.push(Tensor::new(&[1, 1, h, w], item.to_vec())?);
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "epoch,train_loss,val_loss,val_miou";

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in records {
        writeln!(out, "{},{:.6},{:.6},{:.6}", r.epoch, r.train_loss, r.val_loss, r.val_miou).unwrap();
    }
    out
}

pub fn write_metrics_csv(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}
