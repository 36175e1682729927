use hcct::data::{synth_dataset, Volume};
use hcct::model::{is_finetune_param, Checkpoint, HcctModel, ModelConfig};
use hcct::train::{finetune, resume, train, window_means_non_increasing, TrainConfig, TrainOutcome};
use hcct::Error;

fn small_model() -> ModelConfig {
    ModelConfig {
        input_extent: 8,
        conv_channels: vec![4, 8],
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ..ModelConfig::desk()
    }
}

fn small_data(seed: u64) -> (Vec<Volume>, Vec<Volume>) {
    (
        synth_dataset(3, 8, 3, seed).unwrap(),
        synth_dataset(1, 8, 3, seed + 100).unwrap(),
    )
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        finetune_epochs: epochs,
        batch_size: 4,
        decay_step: 3,
        decay_gamma: 0.5,
        seed: 21,
        ..TrainConfig::desk()
    }
}

fn run(epochs: usize) -> (HcctModel<f32>, TrainOutcome) {
    let (tr, va) = small_data(1);
    let mut model = HcctModel::<f32>::new(small_model(), 5).unwrap();
    let out = train(&mut model, &tr, &va, &short(epochs)).unwrap();
    (model, out)
}

fn without_time(out: &TrainOutcome) -> String {
    out.report.to_csv(false)
}

#[test]
fn desk_overfits_synthetic_set() {
    let train_set = synth_dataset(8, 24, 3, 7).unwrap();
    let val_set = synth_dataset(2, 24, 3, 8).unwrap();
    let mut model = HcctModel::<f32>::new(ModelConfig::desk(), 7).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::desk()
    };
    let out = train(&mut model, &train_set, &val_set, &cfg).unwrap();
    assert_eq!(out.report.rows.len(), 40);
    let first_perfect = out.report.rows.iter().position(|r| r.train_acc == 1.0);
    assert!(first_perfect.is_some_and(|e| e < 200), "{:?}", out.report.rows.last());
    assert!(window_means_non_increasing(&out.report.losses(), 20));
}

#[test]
fn lr_trace_follows_schedule() {
    let (_, out) = run(7);
    let cfg = short(7);
    for r in &out.report.rows {
        assert_eq!(r.lr, cfg.lr_at(r.epoch));
    }
    assert_eq!(out.report.rows[3].lr, cfg.lr * 0.5);
}

#[test]
fn repeated_runs_are_identical() {
    let (a_model, a) = run(3);
    let (b_model, b) = run(3);
    assert_eq!(without_time(&a), without_time(&b));
    assert_eq!(a.best.encode(), b.best.encode());
    assert_eq!(a.last.encode(), b.last.encode());
    for ((_, x), (_, y)) in a_model.named_params().into_iter().zip(b_model.named_params()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (_, full) = run(6);
    let (_, head) = run(3);
    let (tr, va) = small_data(1);
    let (_, tail) = resume::<f32>(&head.last, &head.best, &tr, &va, &short(6)).unwrap();
    assert_eq!(without_time(&full), without_time(&tail));
    assert_eq!(full.last.encode(), tail.last.encode());
    assert_eq!(full.best.encode(), tail.best.encode());
    assert_eq!(full.best_epoch, tail.best_epoch);
}

#[test]
fn finetune_touches_only_head_and_embedding() {
    let (mut model, base) = run(2);
    let before = Checkpoint::from_model(&model).unwrap();
    let (tr, va) = small_data(1);
    let out = finetune(&mut model, &tr, &va, &short(3)).unwrap();
    assert_eq!(out.report.rows.len(), 3);
    assert_eq!(out.report.rows[0].lr, short(3).lr * 0.1);
    let after = Checkpoint::from_model(&model).unwrap();
    let mut changed = Vec::new();
    for t in &before.tensors {
        let same = after.get(&t.name).unwrap().values == t.values;
        if is_finetune_param(&t.name) {
            if !same {
                changed.push(t.name.clone());
            }
        } else {
            assert!(same, "{} changed during fine-tuning", t.name);
        }
    }
    for name in ["patch_embed.weight", "classifier.weight", "classifier.bias"] {
        assert!(changed.iter().any(|c| c == name), "{name} unchanged: {changed:?}");
    }
    assert!(model.named_params().iter().all(|(_, p)| p.requires_grad()));
    assert_ne!(base.last.encode(), out.last.encode());
}

#[test]
fn empty_splits_rejected() {
    let (tr, _) = small_data(1);
    let mut model = HcctModel::<f32>::new(small_model(), 5).unwrap();
    let err = train(&mut model, &tr, &[], &short(1)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    let err = train(&mut model, &[], &tr, &short(1)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn extent_mismatch_rejected() {
    let other = synth_dataset(1, 12, 3, 0).unwrap();
    let mut model = HcctModel::<f32>::new(small_model(), 5).unwrap();
    let err = train(&mut model, &other, &other, &short(1)).unwrap_err();
    assert!(err.to_string().contains("extent 12"), "{err}");
}
