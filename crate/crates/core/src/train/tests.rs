use super::*;
use crate::error::Error;
use crate::model::{LatentMode, Model, ModelConfig, Pooling};
use crate::signal::{generate_synthetic_dataset, Representation, Split, SynthConfig};
use crate::tensorcore::Tensor;
use crate::tokenizer::{segment, tokenize, TokenizerConfig};

#[test]
fn schedule_hits_table_values() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at_epoch(&cfg, 20).unwrap(), 2e-5);
    for e in 190..200 {
        assert_eq!(lr_at_epoch(&cfg, e).unwrap(), 1e-6);
    }
    let mid = lr_at_epoch(&cfg, 105).unwrap();
    assert!((mid - (1e-6 + (2e-5 - 1e-6) / 2.0)).abs() < 1e-18);
    assert!((lr_at_epoch(&cfg, 0).unwrap() - 2e-5 / 20.0).abs() < 1e-20);
    assert!(matches!(lr_at_epoch(&cfg, 200), Err(Error::Usage(_))));
}

#[test]
fn schedule_is_continuous_at_phase_boundaries() {
    let cfg = TrainConfig::default();
    assert!((warmup_lr(&cfg, 20.0) - cfg.base_lr).abs() < 1e-15);
    assert!((cosine_lr(&cfg, 20.0) - cfg.base_lr).abs() < 1e-15);
    assert!((cosine_lr(&cfg, 190.0) - cfg.min_lr).abs() < 1e-15);
    let lrs: Vec<f64> = (0..200).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
    assert!(lrs[..21].windows(2).all(|w| w[0] < w[1]));
    assert!(lrs[20..191].windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn schedule_handles_degenerate_phases() {
    let cfg = TrainConfig { epochs_total: 3, epochs_warmup: 0, epochs_cooldown: 0, ..Default::default() };
    assert_eq!(lr_at_epoch(&cfg, 0).unwrap(), cfg.base_lr);
    let cfg = TrainConfig { epochs_total: 4, epochs_warmup: 2, epochs_cooldown: 2, ..Default::default() };
    assert_eq!(lr_at_epoch(&cfg, 2).unwrap(), cfg.min_lr);
    let bad = TrainConfig { epochs_total: 4, epochs_warmup: 3, epochs_cooldown: 2, ..Default::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

fn small_model(width: usize) -> Model<f64> {
    let cfg = ModelConfig {
        depth: 1,
        latent_dim: 8,
        cross_heads: 1,
        cross_head_dim: 4,
        self_heads: 2,
        self_head_dim: 4,
        self_blocks: 1,
        n_classes: 3,
        ffn_multiplier: 1,
        pooling: Pooling::Mean,
        mode: LatentMode::Segmented,
    };
    Model::init(cfg, width, 3).unwrap()
}

fn grads_like(model: &Model<f64>, f: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    model.params.named().iter().map(|(_, t)| (0..t.len()).map(&f).collect()).collect()
}

#[test]
fn zero_gradient_only_decays() {
    let mut model = small_model(5);
    let before = model.params.clone();
    let cfg = TrainConfig::default();
    let mut state = OptState::new(&model.params);
    let grads = grads_like(&model, |_| 0.0);
    adamw_step(&mut model.params, &grads, &mut state, 0.01, &cfg).unwrap();
    for ((name, a), (_, b)) in before.named().iter().zip(model.params.named()) {
        let factor = if cfg.decays(name) { 1.0 - 0.01 * 0.1 } else { 1.0 };
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x * factor - y).abs() <= 1e-15 * x.abs(), "{name}");
        }
    }
}

#[test]
fn constant_gradient_moves_by_lr_times_sign() {
    let mut model = small_model(5);
    let before = model.params.clone();
    let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
    let mut state = OptState::new(&model.params);
    let g = |i: usize| if i % 2 == 0 { 0.3 } else { -2.0 };
    let grads = grads_like(&model, g);
    adamw_step(&mut model.params, &grads, &mut state, 1e-3, &cfg).unwrap();
    for ((_, a), (_, b)) in before.named().iter().zip(model.params.named()) {
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let want = -1e-3 * g(i).signum();
            assert!((y - x - want).abs() < 1e-10);
        }
    }
}

#[test]
fn adamw_matches_scalar_reference_over_two_steps() {
    let (lr, wd, b1, b2, eps) = (0.05, 0.1, 0.9, 0.999, 1e-8);
    let (g1, g2) = (0.7, -0.2);
    // hand-rolled recurrence for one decayed scalar parameter
    let mut theta = 0.5f64;
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in [(1, g1), (2, g2)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - f64::powi(b1, t));
        let vh = v / (1.0 - f64::powi(b2, t));
        theta -= lr * (mh / (vh.sqrt() + eps) + wd * theta);
    }
    let mut model = small_model(5);
    model.params.visit_mut(&mut |_, t| t.update(|d| d.iter_mut().for_each(|x| *x = 0.5)).unwrap());
    let cfg = TrainConfig { weight_decay: wd, ..Default::default() };
    let mut state = OptState::new(&model.params);
    for g in [g1, g2] {
        let grads = grads_like(&model, |_| g);
    adamw_step(&mut model.params, &grads, &mut state, lr, &cfg).unwrap();
    }
    let w = &model.params.layers[0].cross.w_q;
    assert!(w.data().iter().all(|x| (x - theta).abs() < 1e-12));
    assert_eq!(state.step, 2);
}

#[test]
fn zero_learning_rate_is_identity() {
    let mut model = small_model(5);
    let before = model.params.clone();
    let mut state = OptState::new(&model.params);
    let grads = grads_like(&model, |i| i as f64);
    adamw_step(&mut model.params, &grads, &mut state, 0.0, &TrainConfig::default())
        .unwrap();
    assert_eq!(before, model.params);
}

#[test]
fn nan_gradient_names_the_parameter() {
    let mut model = small_model(5);
    let before = model.params.clone();
    let mut grads = grads_like(&model, |_| 0.1);
    let idx = model.params.named().iter().position(|(n, _)| n == "head.proj.weight").unwrap();
    grads[idx][4] = f64::NAN;
    let mut state = OptState::new(&model.params);
    let err = adamw_step(&mut model.params, &grads, &mut state, 0.1, &TrainConfig::default()).unwrap_err();
    match err {
        Error::NonFiniteGradient(msg) => assert!(msg.contains("head.proj.weight[4]"), "{msg}"),
        other => panic!("{other}"),
    }
    assert_eq!(before, model.params);
    assert_eq!(state.step, 0);
}

#[test]
fn decay_exclusions_cover_norms_biases_and_latents() {
    let cfg = TrainConfig::default();
    assert!(!cfg.decays("latents"));
    assert!(!cfg.decays("layers.0.cross.query_norm.gain"));
    assert!(!cfg.decays("head.proj.bias"));
    assert!(cfg.decays("head.proj.weight"));
    assert!(cfg.decays("layers.1.self.0.w_o"));
}

#[test]
fn metrics_for_perfect_and_constant_predictions() {
    let labels = [0, 1, 2, 0, 1, 2];
    let m = Metrics::from_predictions(&labels, &labels, 3).unwrap();
    assert_eq!((m.accuracy, m.macro_f1, m.macro_precision, m.balanced_accuracy), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(m.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    let m = Metrics::from_predictions(&labels, &[0; 6], 3).unwrap();
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
    assert!((m.macro_f1 - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(m.f1, vec![0.5, 0.0, 0.0]);
    assert_eq!(m.precision[1], 0.0);
}

#[test]
fn metrics_from_hand_confusion() {
    let m = Metrics::from_confusion(vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 2]]).unwrap();
    assert!((m.macro_recall - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(m.balanced_accuracy, m.macro_recall);
    let trace = 5.0;
    assert_eq!(m.accuracy, trace / 6.0);
    // class 0 precision 2/3, others 1
    assert!((m.macro_precision - (2.0 / 3.0 + 2.0) / 3.0).abs() < 1e-15);
    assert!(m.render().contains("macro F1"));
    assert!(Metrics::from_confusion(vec![vec![1, 2]]).is_err());
    assert!(Metrics::from_predictions(&[0, 3], &[0, 0], 3).is_err());
}

fn toy_samples(n: usize, width_seed: u64) -> Vec<Sample<f64>> {
    (0..n)
        .map(|i| {
            let label = i % 3;
            let data = (0..24)
                .map(|j| ((j as f64 + 1.0) * (label as f64 + 1.0) * 0.4 + (i as u64 + width_seed) as f64).sin())
                .collect();
            let x = Tensor::new(vec![12, 2], data).unwrap();
            let seg = segment(&tokenize(&x, &TokenizerConfig::with_bands(2)).unwrap(), 3).unwrap();
            Sample { input: PreparedInput::Segmented(seg), label }
        })
        .collect()
}

#[test]
fn single_epoch_single_batch_run() {
    let train_set = toy_samples(4, 0);
    let val = toy_samples(3, 9);
    let model = small_model(train_set[0].input.width());
    let cfg = TrainConfig { epochs_total: 1, epochs_warmup: 0, epochs_cooldown: 0, batch_size: 8, ..Default::default() };
    let mut seen = 0;
    let out = fit(model, &train_set, &val, &cfg, |_| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(seen, 1);
    assert!(out.history[0].train_loss.is_finite());
    assert_eq!(out.history[0].lr, cfg.base_lr);
}

#[test]
fn fixed_seed_reproduces_history_and_weights() {
    let train_set = toy_samples(7, 0);
    let val = toy_samples(3, 9);
    let cfg = TrainConfig {
        epochs_total: 3,
        epochs_warmup: 1,
        epochs_cooldown: 1,
        batch_size: 3,
        base_lr: 1e-2,
        ..Default::default()
    };
    let run = || fit(small_model(train_set[0].input.width()), &train_set, &val, &cfg, |_| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(history_jsonl(&a.history).unwrap(), history_jsonl(&b.history).unwrap());
    assert_eq!(history_jsonl(&a.history).unwrap().lines().count(), 3);
}

#[test]
fn small_step_lowers_the_batch_loss() {
    let samples = toy_samples(6, 1);
    let batch: Vec<&Sample<f64>> = samples.iter().collect();
    let mut model = small_model(samples[0].input.width());
    let mut state = OptState::new(&model.params);
    let cfg = TrainConfig::default();
    let before = train_step(&mut model, &mut state, &batch, 1e-6, &cfg).unwrap();
    let (after, _) = batch_gradients(&model, &batch).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let samples = toy_samples(3, 2);
    let model = small_model(samples[0].input.width());
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let (loss, g) = batch_gradients(&model, &refs).unwrap();
    let parts: Vec<_> = refs.iter().map(|s| batch_gradients(&model, &[*s]).unwrap()).collect();
    let mean_loss = parts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    assert!((loss - mean_loss).abs() < 1e-14);
    for (k, gk) in g.iter().enumerate() {
        for (i, x) in gk.iter().enumerate() {
            let want = parts.iter().map(|p| p.1[k][i]).sum::<f64>() / 3.0;
            assert!((x - want).abs() < 1e-14);
        }
    }
}

#[test]
fn evaluate_ignores_sample_order() {
    let samples = toy_samples(9, 4);
    let model = small_model(samples[0].input.width());
    let mut reversed = samples.clone();
    reversed.reverse();
    assert_eq!(evaluate(&model, &samples).unwrap(), evaluate(&model, &reversed).unwrap());
}

#[test]
fn empty_splits_are_config_errors() {
    let samples = toy_samples(3, 0);
    let model = small_model(samples[0].input.width());
    let cfg = TrainConfig { epochs_total: 1, epochs_warmup: 0, epochs_cooldown: 0, ..Default::default() };
    assert!(matches!(fit(model, &samples, &[], &cfg, |_| Ok(())), Err(Error::Config(_))));
}

#[test]
fn pipeline_prepares_synthetic_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(
        dir.path(),
        &SynthConfig { n_per_class: 4, channels: 3, length: 160, ..Default::default() },
    )
    .unwrap();
    let pipeline = InputPipeline {
        tokenizer: TokenizerConfig::with_bands(4),
        segments: Some(4),
        ..Default::default()
    };
    let train_set = pipeline.prepare_split::<f64>(&manifest, Split::Train).unwrap();
    assert_eq!(train_set.len(), manifest.split(Split::Train).count());
    assert_eq!(train_set[0].input.width(), 3 + 9);
    let psd = InputPipeline { representation: Representation::Psd, image_size: 16, segments: None, ..pipeline };
    let s = psd.prepare::<f64>(&manifest, &manifest.entries[0]).unwrap();
    match &s.input {
        PreparedInput::Global(b) => assert_eq!((b.n_tokens(), b.width()), (256, 3 + 2 * 9)),
        other => panic!("{other:?}"),
    }
    let mut tagged = manifest.entries[0].clone();
    tagged.representation = Some(Representation::Stack);
    assert!(matches!(psd.prepare::<f64>(&manifest, &tagged), Err(Error::Config(_))));
}
