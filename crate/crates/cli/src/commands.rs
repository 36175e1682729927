use std::path::PathBuf;

use hcct::data::{stratified_split, synth_dataset, Manifest, Split, Volume};
use hcct::explain::{export_slices, render, ImportanceMode};
use hcct::metrics::{evaluate, summarize, Averaging};
use hcct::model::{Checkpoint, HcctModel};
use hcct::train::{self, TrainOutcome};

use crate::resolve::{path_text, usage, Resolved};
use crate::{CliError, EvalArgs, ExplainArgs, SynthArgs, TrainArgs};

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path_flag(v: &Option<PathBuf>) -> Result<Option<String>, CliError> {
    v.as_deref().map(path_text).transpose()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut run = Resolved::new(
        &args.common,
        &[
            ("synth.classes", some(&args.classes)),
            ("synth.per_class", some(&args.per_class)),
            ("synth.extent", some(&args.extent)),
            ("synth.fractions", args.fractions.clone()),
        ],
    )?;
    let model = run.model()?;
    let classes: usize = run.get("synth.classes")?.unwrap_or(model.num_classes);
    let per_class: usize = run.get("synth.per_class")?.unwrap_or(8);
    let extent: usize = run.get("synth.extent")?.unwrap_or(model.input_extent);
    let fractions: Vec<f64> = run
        .kv
        .list("synth.fractions")
        .map_err(usage)?
        .unwrap_or_else(|| vec![0.7, 0.15, 0.15]);
    let seed = run.train()?.seed;
    if per_class == 0 {
        return Err(CliError::Usage("--per-class must be at least 1".into()));
    }
    if classes == 0 {
        return Err(CliError::Usage("--classes must be at least 1".into()));
    }
    let &[f_train, f_val, f_test] = fractions.as_slice() else {
        return Err(CliError::Usage("--fractions needs three comma-separated values".into()));
    };
    run.set("synth.classes", classes)?;
    run.set("synth.per_class", per_class)?;
    run.set("synth.extent", extent)?;
    run.set("synth.fractions", hcct::config::join_list(&fractions))?;
    let out = run.out_dir()?;
    run.echo(&out)?;

    let volumes = synth_dataset(per_class, extent, classes, seed).map_err(usage)?;
    let dir = out.join("volumes");
    std::fs::create_dir_all(&dir).map_err(|e| hcct::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut items = Vec::with_capacity(volumes.len());
    for v in &volumes {
        let name = format!("{}.hvol", v.source_id);
        v.save(dir.join(&name))?;
        items.push((PathBuf::from("volumes").join(name), v.label.unwrap_or_default()));
    }
    let manifest = stratified_split(&items, [f_train, f_val, f_test], seed).map_err(|e| match e {
        hcct::Error::Contract(msg) => CliError::Usage(msg),
        other => usage(other),
    })?;
    manifest.save(out.join("manifest.csv"))?;
    println!(
        "wrote {} volumes ({} train, {} val, {} test) to {}",
        volumes.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs, finetune: bool) -> Result<(), CliError> {
    let epochs_key = if finetune {
        "train.finetune_epochs"
    } else {
        "train.epochs"
    };
    let mut run = Resolved::new(
        &args.common,
        &[
            ("run.manifest", path_flag(&args.manifest)?),
            ("run.checkpoint", path_flag(&args.checkpoint)?),
            (epochs_key, some(&args.epochs)),
            ("train.lr", some(&args.lr)),
            ("model.dropout", some(&args.dropout)),
            ("train.batch_size", some(&args.batch_size)),
        ],
    )?;
    run.set("train.finetune", finetune)?;
    let manifest_path = run.existing_path("run.manifest", "--manifest")?;
    let mut model = if finetune {
        let ckpt_path = run.existing_path("run.checkpoint", "--checkpoint")?;
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let mut model = ckpt.to_model::<f32>()?;
        model.config = run.adopt_model(&model.config)?;
        model
    } else {
        let cfg = run.model()?;
        HcctModel::<f32>::new(cfg, run.train()?.seed).map_err(usage)?
    };
    let config = run.train()?;
    let out = run.out_dir()?;
    run.echo(&out)?;

    let manifest = Manifest::load(&manifest_path)?;
    let train_set = load_split(&manifest, Split::Train, model.config.input_extent)?;
    let val_set = load_split(&manifest, Split::Val, model.config.input_extent)?;
    let outcome: TrainOutcome = if finetune {
        train::finetune(&mut model, &train_set, &val_set, &config)?
    } else {
        train::train(&mut model, &train_set, &val_set, &config)?
    };
    outcome.best.save(out.join("model.ckpt"))?;
    outcome.last.save(out.join("last.ckpt"))?;
    let report = out.join("report.csv");
    std::fs::write(&report, outcome.report.to_csv(args.wall_time)).map_err(|e| hcct::Error::Io {
        path: report.clone(),
        source: e,
    })?;
    if let Some(last) = outcome.report.rows.last() {
        println!(
            "{} epochs: final train loss {:.4}, train acc {:.4}, val acc {:.4}; best val acc at epoch {}",
            outcome.report.rows.len(),
            last.train_loss,
            last.train_acc,
            last.val_acc,
            outcome.best_epoch
        );
    }
    Ok(())
}

/// Loads a split, rejecting volumes whose extent differs from the model's.
fn load_split(manifest: &Manifest, split: Split, extent: usize) -> Result<Vec<Volume>, CliError> {
    let volumes = manifest.load_split(split)?;
    if volumes.is_empty() {
        return Err(CliError::Usage(format!("the {split} split of the manifest is empty")));
    }
    if let Some(v) = volumes.iter().find(|v| v.extent() != extent) {
        return Err(CliError::Usage(format!(
            "volume {} has extent {} but the checkpoint/config expects {extent}",
            v.source_id,
            v.extent()
        )));
    }
    Ok(volumes)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut run = Resolved::new(
        &args.common,
        &[
            ("run.manifest", path_flag(&args.manifest)?),
            ("run.checkpoint", path_flag(&args.checkpoint)?),
            ("run.split", args.split.clone()),
            ("run.macro_average", args.macro_average.then(|| "true".to_string())),
        ],
    )?;
    let manifest_path = run.existing_path("run.manifest", "--manifest")?;
    let ckpt_path = run.existing_path("run.checkpoint", "--checkpoint")?;
    let split: Split = run
        .kv
        .get("run.split")
        .unwrap_or("test")
        .parse()
        .map_err(usage)?;
    run.set("run.split", split)?;
    let macro_average: bool = run.get("run.macro_average")?.unwrap_or(false);
    run.set("run.macro_average", macro_average)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let mut model = ckpt.to_model::<f32>()?;
    model.config = run.adopt_model(&model.config)?;
    let out = run.out_dir()?;
    run.echo(&out)?;

    let manifest = Manifest::load(&manifest_path)?;
    let volumes = load_split(&manifest, split, model.config.input_extent)?;
    let cm = evaluate(&model, &volumes)?;
    let averaging = if macro_average {
        Averaging::Macro
    } else {
        Averaging::Weighted
    };
    let summary = summarize(&cm, averaging)?;
    for (name, text) in [("confusion.csv", cm.to_csv()), ("metrics.csv", summary.to_csv())] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| hcct::Error::Io { path, source: e })?;
    }
    println!("{split} split, {} volumes\n{}", volumes.len(), summary.table());
    print!("{}", cm.to_csv());
    Ok(())
}

pub fn explain(args: ExplainArgs) -> Result<(), CliError> {
    let mut run = Resolved::new(
        &args.common,
        &[
            ("run.checkpoint", path_flag(&args.checkpoint)?),
            ("run.volume", path_flag(&args.volume)?),
            ("run.attention_mode", args.attention_mode.clone()),
        ],
    )?;
    let ckpt_path = run.existing_path("run.checkpoint", "--checkpoint")?;
    let volume_path = run.existing_path("run.volume", "--volume")?;
    let mode: ImportanceMode = run
        .kv
        .get("run.attention_mode")
        .unwrap_or("mean")
        .parse()
        .map_err(usage)?;
    run.set("run.attention_mode", mode)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let mut model = ckpt.to_model::<f32>()?;
    model.config = run.adopt_model(&model.config)?;
    let out = run.out_dir()?;
    run.echo(&out)?;

    let volume = Volume::load(&volume_path)?;
    if volume.extent() != model.config.input_extent {
        return Err(CliError::Usage(format!(
            "volume {} has extent {} but the checkpoint expects {}",
            volume_path.display(),
            volume.extent(),
            model.config.input_extent
        )));
    }
    let heat = render(&volume, &model, mode)?;
    let files = export_slices(&heat, &volume, &out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
