use std::time::Instant;

use super::config::TrainConfig;
use super::loss::cross_entropy;
use super::optim::{AdamW, Moments};
use super::report::{EpochRecord, TrainReport};
use crate::data::Volume;
use crate::error::{bail, Result};
use crate::metrics::predict;
use crate::model::{is_finetune_param, Checkpoint, HcctModel, Mode};
use crate::tensor::{Real, RngState, Tensor};

/// Result of a training phase. The model passed in holds the last-epoch
/// parameters.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters at the epoch with the highest validation accuracy
    /// (earliest on ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Last-epoch parameters plus optimizer state, for resuming.
    pub last: Checkpoint,
}

struct Progress<F> {
    optimizer: AdamW<F>,
    report: TrainReport,
    best: Option<(usize, f64, Checkpoint)>,
}

const PHASE_KEY: &str = "state.phase";

/// Base training: every parameter is trained with batch statistics in the
/// encoder and dropout active.
pub fn train<F: Real>(
    model: &mut HcctModel<F>,
    train_set: &[Volume],
    val_set: &[Volume],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        finetune: false,
        ..config.clone()
    };
    model.set_trainable(|_| true);
    run(model, train_set, val_set, &config, fresh(&config))
}

/// Fine-tuning: only the patch embedding, CLS token, positional embedding,
/// sequence-pool scorer and classifier receive updates; the encoder keeps
/// its running batch-norm statistics. A fresh optimizer is used.
pub fn finetune<F: Real>(
    model: &mut HcctModel<F>,
    train_set: &[Volume],
    val_set: &[Volume],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        finetune: true,
        ..config.clone()
    };
    model.set_trainable(is_finetune_param);
    let outcome = run(model, train_set, val_set, &config, fresh(&config));
    model.set_trainable(|_| true);
    outcome
}

/// Continues the phase recorded in `last` up to the epoch count of
/// `config`. `best` is the best checkpoint written alongside `last`.
pub fn resume<F: Real>(
    last: &Checkpoint,
    best: &Checkpoint,
    train_set: &[Volume],
    val_set: &[Volume],
    config: &TrainConfig,
) -> Result<(HcctModel<F>, TrainOutcome)> {
    let finetune = match last.meta.get(PHASE_KEY) {
        Some("base") => false,
        Some("finetune") => true,
        _ => bail!(Format, "checkpoint carries no training state"),
    };
    let config = TrainConfig {
        finetune,
        ..config.clone()
    };
    let mut model = last.to_model::<F>()?;
    let done: usize = last.meta.required("state.epochs_done")?;
    let best_epoch: usize = best.meta.required("best.epoch")?;
    let best_val: f64 = best.meta.required("best.val_acc")?;

    let mut optimizer = AdamW::new(config.adamw());
    optimizer.step = last.meta.required("state.adam_step")?;
    for t in &last.tensors {
        let Some(name) = t.name.strip_prefix("adam.m.") else {
            continue;
        };
        let Some(v) = last.get(&format!("adam.v.{name}")) else {
            bail!(Format, "checkpoint has adam.m.{name} without adam.v.{name}");
        };
        let cast = |xs: &[f32]| xs.iter().map(|&x| F::lit(f64::from(x))).collect();
        optimizer.moments.insert(
            name.to_string(),
            Moments {
                m: cast(&t.values),
                v: cast(&v.values),
            },
        );
    }
    let progress = Progress {
        optimizer,
        report: TrainReport::read_from(&last.meta, done)?,
        best: Some((best_epoch, best_val, best.clone())),
    };
    if finetune {
        model.set_trainable(is_finetune_param);
    }
    let outcome = run(&mut model, train_set, val_set, &config, progress)?;
    model.set_trainable(|_| true);
    Ok((model, outcome))
}

fn fresh<F: Real>(config: &TrainConfig) -> Progress<F> {
    Progress {
        optimizer: AdamW::new(config.adamw()),
        report: TrainReport::default(),
        best: None,
    }
}

fn check_split(name: &str, set: &[Volume], model_extent: usize, classes: usize) -> Result<()> {
    if set.is_empty() {
        bail!(Contract, "{name} split is empty");
    }
    for v in set {
        if v.extent() != model_extent {
            bail!(
                Dimension,
                "volume {} has extent {}, model expects {model_extent}",
                v.source_id,
                v.extent()
            );
        }
        match v.label {
            Some(l) if l < classes => {}
            Some(l) => bail!(Contract, "volume {} has label {l} outside [0, {classes})", v.source_id),
            None => bail!(Contract, "volume {} has no label", v.source_id),
        }
    }
    Ok(())
}

/// `[b, 1, E, E, E]` batch of the selected volumes.
pub fn stack_batch<F: Real>(volumes: &[&Volume]) -> Result<Tensor<F>> {
    let Some(first) = volumes.first() else {
        bail!(Contract, "empty batch");
    };
    let e = first.extent();
    let mut data = Vec::with_capacity(volumes.len() * e * e * e);
    for v in volumes {
        if v.extent() != e {
            bail!(Dimension, "batch mixes extents {e} and {}", v.extent());
        }
        data.extend(v.values().iter().map(|&x| F::lit(f64::from(x))));
    }
    Tensor::from_vec([volumes.len(), 1, e, e, e], data)
}

fn accuracy<F: Real>(model: &HcctModel<F>, set: &[Volume]) -> Result<f64> {
    let predictions = predict(model, set)?;
    let correct = predictions
        .iter()
        .zip(set)
        .filter(|(p, v)| v.label == Some(**p))
        .count();
    Ok(correct as f64 / set.len() as f64)
}

fn run<F: Real>(
    model: &mut HcctModel<F>,
    train_set: &[Volume],
    val_set: &[Volume],
    config: &TrainConfig,
    mut progress: Progress<F>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let extent = model.config.input_extent;
    let classes = model.config.num_classes;
    check_split("training", train_set, extent, classes)?;
    check_split("validation", val_set, extent, classes)?;

    let (phase, mode) = if config.finetune {
        (1, Mode::FineTune)
    } else {
        (0, Mode::Train)
    };
    let root = RngState::new(config.seed);
    let start = progress.report.rows.len();
    for epoch in start..config.phase_epochs() {
        let clock = Instant::now();
        let lr = config.phase_lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        root.derive(&[phase, epoch as u64, 0]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let members: Vec<&Volume> = chunk.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = members.iter().map(|v| v.label.unwrap_or_default()).collect();
            let input = stack_batch::<F>(&members)?;
            let mut rng = root.derive(&[phase, epoch as u64, 1, b as u64]);
            model.zero_grad();
            let loss = {
                let logits = model.forward(&input, mode, &mut rng)?;
                cross_entropy(&logits, &labels)?
            };
            loss.backward()?;
            loss_sum += loss.item()?.as_f64() * chunk.len() as f64;
            drop(loss);
            progress.optimizer.step(model.named_params_mut(), lr)?;
        }

        let train_acc = accuracy(model, train_set)?;
        let val_acc = accuracy(model, val_set)?;
        if progress.best.as_ref().is_none_or(|(_, best, _)| val_acc > *best) {
            progress.best = Some((epoch, val_acc, Checkpoint::from_model(model)?));
        }
        progress.report.rows.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc,
            val_acc,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    finish(model, config, progress)
}

fn finish<F: Real>(model: &HcctModel<F>, config: &TrainConfig, progress: Progress<F>) -> Result<TrainOutcome> {
    let Progress {
        optimizer,
        report,
        best,
    } = progress;
    let (best_epoch, best_val, mut best) = match best {
        Some(b) => b,
        None => bail!(Contract, "no epochs were run"),
    };
    config.write_to(&mut best.meta)?;
    best.meta.set("best.epoch", best_epoch)?;
    best.meta.set("best.val_acc", best_val)?;

    let mut last = Checkpoint::from_model(model)?;
    config.write_to(&mut last.meta)?;
    last.meta.set(PHASE_KEY, if config.finetune { "finetune" } else { "base" })?;
    last.meta.set("state.epochs_done", report.rows.len())?;
    last.meta.set("state.adam_step", optimizer.step)?;
    report.write_to(&mut last.meta)?;
    for (name, moments) in &optimizer.moments {
        let shape = model
            .named_params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.shape().clone());
        let Some(shape) = shape else {
            bail!(Contract, "optimizer state for unknown parameter {name}");
        };
        last.push(format!("adam.m.{name}"), &Tensor::from_vec(shape.clone(), moments.m.clone())?);
        last.push(format!("adam.v.{name}"), &Tensor::from_vec(shape, moments.v.clone())?);
    }
    Ok(TrainOutcome {
        report,
        best,
        best_epoch,
        last,
    })
}
