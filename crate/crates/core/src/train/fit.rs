use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{InputPipeline, Sample};
use super::metrics::Metrics;
use super::optim::{adamw_step, OptState};
use super::schedule::lr_at_epoch;
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, Model};
use crate::scalar::Scalar;
use crate::seeds;
use crate::signal::{DatasetManifest, Split};
use crate::tensorcore::{Tape, Var};

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    /// weights from the epoch with the highest validation macro F1 (earliest on ties)
    pub best: Model<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn sample_gradients<T: Scalar>(model: &Model<T>, sample: &Sample<T>) -> Result<(T, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let logits = forward_on_tape(&mut tape, &model.config, &bound, sample.input.as_input(), None)?;
    let loss = tape.cross_entropy(logits, &[sample.label])?;
    let value = tape.value(loss)[0];
    let vars: Vec<Var> = bound.named().into_iter().map(|(_, v)| *v).collect();
    let lens: Vec<usize> = model.params.named().iter().map(|(_, t)| t.len()).collect();
    let mut grads = tape.backward(loss)?;
    let flat = vars
        .iter()
        .zip(lens)
        .map(|(&v, n)| grads.take(v).unwrap_or_else(|| vec![T::zero(); n]))
        .collect();
    Ok((value, flat))
}

/// Mean loss and mean gradient over `batch`. Samples run in parallel; the
/// reduction follows batch order so results do not depend on scheduling.
pub fn batch_gradients<T: Scalar>(model: &Model<T>, batch: &[&Sample<T>]) -> Result<(f64, Vec<Vec<T>>)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let per_sample: Vec<(T, Vec<Vec<T>>)> =
        batch.par_iter().map(|s| sample_gradients(model, s)).collect::<Result<_>>()?;
    let n = T::of(batch.len() as f64);
    let mut iter = per_sample.into_iter();
    let (first_loss, mut total) = iter.next().expect("nonempty");
    let mut loss = first_loss;
    for (l, g) in iter {
        loss += l;
        for (acc, part) in total.iter_mut().zip(g) {
            acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
    }
    total.iter_mut().flatten().for_each(|g| *g /= n);
    Ok(((loss / n).to_f64_lossy(), total))
}

/// Gradient step on one batch; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptState<T>,
    batch: &[&Sample<T>],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (loss, grads) = batch_gradients(model, batch)?;
    adamw_step(&mut model.params, &grads, state, lr, cfg)?;
    Ok(loss)
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<Metrics> {
    let preds: Vec<usize> = samples
        .par_iter()
        .map(|s| model.predict(s.input.as_input()).map(|(c, _)| c))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Metrics::from_predictions(&labels, &preds, model.config.n_classes)
}

/// Trains on prepared samples. `on_epoch` sees each record as it is produced.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs nonempty train and val splits".into()));
    }
    let mut rng = seeds::substream(cfg.seed, seeds::SHUFFLE);
    let mut state = OptState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs_total);
    let mut best = (model.clone(), 0, f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs_total {
        let lr = lr_at_epoch(cfg, epoch)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += train_step(&mut model, &mut state, &batch, lr, cfg)? * batch.len() as f64;
        }
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / train.len() as f64, val: evaluate(&model, val)? };
        if record.val.macro_f1 > best.2 {
            best = (model.clone(), epoch, record.val.macro_f1);
        }
        on_epoch(&record)?;
        history.push(record);
    }
    Ok(TrainOutcome { model, best: best.0, best_epoch: best.1, history })
}

/// Loads the train and val splits of `manifest` through `pipeline`, then [`fit`]s.
pub fn train<T: Scalar>(
    model: Model<T>,
    manifest: &DatasetManifest,
    pipeline: &InputPipeline,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    for split in [Split::Train, Split::Val] {
        if manifest.split(split).next().is_none() {
            return Err(Error::Config(format!("manifest has no {split} entries")));
        }
    }
    let train_set = pipeline.prepare_split(manifest, Split::Train)?;
    let val_set = pipeline.prepare_split(manifest, Split::Val)?;
    fit(model, &train_set, &val_set, cfg, on_epoch)
}

/// History as JSON lines, one record per epoch.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
