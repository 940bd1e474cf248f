use std::io::Write;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{hard_labels, Mode, Model};
use crate::data::shuffled_indices;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::tensor::{Scalar, Tensor};

/// Images (`[H, W, C]` each) with their 0/1 labels, held in memory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images for {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Adam state for every parameter of a model.
pub struct Optimizer<T: Scalar = f32> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(model: &Model<T>, config: AdamConfig) -> Result<Self> {
        let states = model
            .parameters()
            .into_iter()
            .map(|(_, p)| AdamState::new(p.shape(), config))
            .collect::<Result<_>>()?;
        Ok(Self { states })
    }

    pub fn step(&mut self, model: &mut Model<T>, gradients: &[Tensor<T>]) -> Result<()> {
        let params = model.parameters_mut();
        if params.len() != gradients.len() || params.len() != self.states.len() {
            return Err(Error::shape(
                "gradient list does not match model parameters",
            ));
        }
        for ((p, g), s) in params.into_iter().zip(gradients).zip(&mut self.states) {
            adam_step(s, p, g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Stop after this many epochs without a validation-loss improvement.
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub shuffle_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 32,
            adam: AdamConfig::default(),
            patience: Some(20),
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&MetricReport> for SplitScores {
    fn from(r: &MetricReport) -> Self {
        Self {
            loss: r.log_loss.unwrap_or(f64::NAN),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: SplitScores,
    pub val: Option<SplitScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,train_precision,train_recall,train_f1,val_loss,val_accuracy,val_precision,val_recall,val_f1";

    /// Full-precision CSV; validation columns are empty when no validation
    /// set was given.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            let t = &r.train;
            write!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, t.loss, t.accuracy, t.precision, t.recall, t.f1
            )?;
            match &r.val {
                Some(v) => writeln!(
                    w,
                    ",{},{},{},{},{}",
                    v.loss, v.accuracy, v.precision, v.recall, v.f1
                )?,
                None => writeln!(w, ",,,,,")?,
            }
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Inference-mode metrics over a whole dataset.
pub fn evaluate(model: &Model<f32>, data: &Dataset) -> Result<MetricReport> {
    let probs = model.predict(&data.images)?;
    metrics::evaluate(&probs, &data.labels)
}

/// Mini-batch Adam training. Batch order is reshuffled every epoch from
/// `shuffle_seed`; step `s` uses dropout stream `s`. After each epoch both
/// splits are re-scored in inference mode.
pub fn fit(
    model: &mut Model<f32>,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &FitConfig,
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let val = val.filter(|v| !v.is_empty());
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    let mut optimizer = Optimizer::new(model, config.adam)?;
    let mut step: u64 = 0;
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 0..config.epochs {
        let order = shuffled_indices(train.len(), config.shuffle_seed, epoch as u64);
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = Tensor::stack(&images)?;
            let back = model.backward(&batch, &labels, Mode::Training { step })?;
            optimizer.step(model, &back.gradients)?;
            step += 1;
        }
        let train_scores = SplitScores::from(&evaluate(model, train)?);
        let val_scores = match val {
            Some(v) => Some(SplitScores::from(&evaluate(model, v)?)),
            None => None,
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train: train_scores,
            val: val_scores,
        });
        if let (Some(patience), Some(v)) = (config.patience, val_scores) {
            if v.loss < best_val {
                best_val = v.loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(history)
}

/// Hard labels for a dataset.
pub fn classify(model: &Model<f32>, images: &[Tensor<f32>]) -> Result<Vec<u8>> {
    Ok(hard_labels(&model.predict(images)?))
}
