use std::fs;
use std::path::Path;
use std::process::Command;

use seglat::model::{save_checkpoint, CheckpointMeta, Model, ModelConfig};
use seglat::signal::{Representation, Split};
use seglat::train::{InputPipeline, TrainConfig};
use seglat::tokenizer::TokenizerConfig;
use seglat_cli::config::Overrides;
use seglat_cli::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seglat"))
}

fn synth(dir: &Path, n: usize, channels: usize, length: usize) -> (std::path::PathBuf, String) {
    let args = SynthArgs { out: dir.to_path_buf(), n_per_class: n, channels, length, sample_rate: 10.0, seed: 0 };
    cmd_synth(&args, &mut Vec::new()).unwrap()
}

fn small_run() -> Overrides {
    Overrides {
        segments: Some(SegmentArg(Some(4))),
        bands: Some(4),
        depth: Some(1),
        latent_dim: Some(16),
        self_blocks: Some(1),
        epochs: Some(2),
        warmup: Some(1),
        cooldown: Some(0),
        batch_size: Some(8),
        lr: Some(1e-3),
        ..Default::default()
    }
}

#[test]
fn synth_writes_three_class_manifest_with_stable_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (path, sum) = synth(&dir.path().join("a"), 3, 2, 128);
    let manifest = seglat::signal::DatasetManifest::load(&path).unwrap();
    let mut labels: Vec<usize> = manifest.entries.iter().map(|e| e.label).collect();
    labels.dedup();
    labels.sort();
    labels.dedup();
    assert_eq!(labels, vec![0, 1, 2]);
    let (_, again) = synth(&dir.path().join("b"), 3, 2, 128);
    assert_eq!(sum, again);
    assert_eq!(sum.len(), 64);
}

#[test]
fn synth_with_zero_count_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["synth", "--n-per-class", "0", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn help_and_unknown_flags() {
    let out = bin().args(["train", "--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--manifest", "--out", "--config", "--seed", "--segments", "--lr", "--epochs", "--batch-size"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert_eq!(bin().args(["train", "--no-such-flag"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().arg("bogus").status().unwrap().code(), Some(2));
}

#[test]
fn preprocess_builds_psd_and_stack_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 1, 24, 256);
    let mut out = Vec::new();
    let psd = PreprocessArgs {
        manifest: raw.clone(),
        out: dir.path().join("psd"),
        run: Overrides { representation: Some(Representation::Psd), ..Default::default() },
    };
    cmd_preprocess(&psd, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("shape: [224, 224, 24]"), "{text}");
    let m = seglat::signal::DatasetManifest::load(dir.path().join("psd/manifest.json")).unwrap();
    let t = seglat::signal::load_tensor::<f64>(m.resolve(&m.entries[0])).unwrap();
    assert_eq!(t.shape(), &[224, 224, 24]);
    assert!(m.entries.iter().all(|e| e.representation == Some(Representation::Psd)));

    let mut out = Vec::new();
    let stack = PreprocessArgs {
        manifest: raw,
        out: dir.path().join("stack"),
        run: Overrides { representation: Some(Representation::Stack), image_size: Some(32), ..Default::default() },
    };
    cmd_preprocess(&stack, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("channels: 48"));
}

#[test]
fn preprocess_twice_warns_without_rewriting() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 1, 2, 128);
    let first = PreprocessArgs { manifest: raw, out: dir.path().join("wave"), run: Overrides::default() };
    cmd_preprocess(&first, &mut Vec::new()).unwrap();
    let again = PreprocessArgs {
        manifest: dir.path().join("wave/manifest.json"),
        out: dir.path().join("wave2"),
        run: Overrides::default(),
    };
    let mut out = Vec::new();
    cmd_preprocess(&again, &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("warning"));
    assert!(!dir.path().join("wave2").exists());
}

#[test]
fn preprocess_reports_bad_files_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 1, 2, 128);
    let m = seglat::signal::DatasetManifest::load(&raw).unwrap();
    fs::write(m.resolve(&m.entries[0]), b"garbage").unwrap();
    let args = PreprocessArgs { manifest: raw, out: dir.path().join("wave"), run: Overrides::default() };
    let mut out = Vec::new();
    let err = cmd_preprocess(&args, &mut out).unwrap_err();
    assert_eq!(err.code, EXIT_RUNTIME);
    let written = seglat::signal::DatasetManifest::load(dir.path().join("wave/manifest.json")).unwrap();
    assert_eq!(written.entries.len(), m.entries.len() - 1);
    assert!(String::from_utf8(out).unwrap().contains("failed:"));
}

#[test]
fn malformed_manifest_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("manifest.json");
    fs::write(&bad, "{not json").unwrap();
    let status = bin().args(["preprocess", "--out"]).arg(dir.path().join("o")).arg("--manifest").arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn default_schedule_echo() {
    let line = schedule_summary(&TrainConfig::default()).unwrap();
    assert!(line.starts_with("lr schedule: 2e-5 → 1e-6"), "{line}");
}

#[test]
fn pipeline_runs_from_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 4, 3, 128);
    let mut out = Vec::new();
    let args = TrainArgs { manifest: raw.clone(), out: dir.path().join("run"), run: small_run() };
    let art = cmd_train(&args, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("lr schedule: 1e-3"));
    assert_eq!(fs::read_to_string(&art.history).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(dir.path().join("run/run.toml")).unwrap().contains("[model]"));
    let eval = EvalArgs { checkpoint: art.best, manifest: raw, split: Split::Test, json: Some(dir.path().join("m.json")) };
    let metrics = cmd_eval(&eval, &mut Vec::new()).unwrap();
    assert_eq!(metrics.confusion.iter().flatten().sum::<usize>(), 3);
    assert!(dir.path().join("m.json").exists());
}

#[test]
fn nonfinite_training_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 4, 2, 128);
    let mut run = small_run();
    run.lr = Some(1e300);
    let err = cmd_train(&TrainArgs { manifest: raw, out: dir.path().join("run"), run }, &mut Vec::new()).unwrap_err();
    assert_eq!(err.code, EXIT_RUNTIME, "{err}");
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 200, 2, 128);
    let pipeline = InputPipeline { tokenizer: TokenizerConfig::with_bands(4), segments: Some(4), ..Default::default() };
    let cfg = ModelConfig { depth: 1, latent_dim: 16, self_blocks: 1, ..Default::default() };
    let width = 2 + 9;
    let model = Model::<f64>::init(cfg.clone(), width, 7).unwrap();
    let ckpt = dir.path().join("init.ckpt");
    save_checkpoint(&ckpt, &model, &CheckpointMeta { model: cfg, pipeline, token_width: width }).unwrap();
    let m = cmd_eval(&EvalArgs { checkpoint: ckpt, manifest: raw, split: Split::Val, json: None }, &mut Vec::new()).unwrap();
    assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 90);
    assert!((m.accuracy - 1.0 / 3.0).abs() <= 0.15, "{}", m.accuracy);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "seed = 5\n[model]\ndepth = 3\nlatent_dim = 32\n[train]\nbase_lr = 0.01\n").unwrap();
    let run = Overrides { config: Some(path.clone()), latent_dim: Some(48), ..Default::default() };
    let cfg = run.resolve().unwrap();
    assert_eq!((cfg.seed, cfg.train.seed, cfg.model.depth, cfg.model.latent_dim), (5, 5, 3, 48));
    assert_eq!(cfg.train.base_lr, 0.01);
    fs::write(&path, "[model]\nwidth = 3\n").unwrap();
    let err = Overrides { config: Some(path.clone()), ..Default::default() }.resolve().unwrap_err();
    assert_eq!(err.code, EXIT_USAGE);
    fs::write(&path, "[data]\nsegments = 4\n[model.mode]\nkind = \"global\"\nlatents = 8\n").unwrap();
    assert_eq!(Overrides { config: Some(path.clone()), ..Default::default() }.resolve().unwrap_err().code, EXIT_USAGE);
    fs::write(&path, "[data.tokenizer]\nmax_freq = [4.0, 4.0]\n").unwrap();
    assert_eq!(Overrides { config: Some(path), ..Default::default() }.resolve().unwrap_err().code, EXIT_USAGE);
}

#[test]
fn sweep_default_list_has_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let args = SweepArgs {
        profile: ProfileArgs {
            run: Overrides::default(),
            channels: 24,
            length: 512,
            warmup_iters: 0,
            iters: 0,
            parallel: None,
            json: None,
        },
        segment_list: "none,2,4,8,16,32,64".parse().unwrap(),
        csv: Some(csv.clone()),
        manifest: None,
    };
    let rows = cmd_sweep(&args, &mut Vec::new()).unwrap();
    let segs: Vec<Option<usize>> = rows.iter().map(|r| r.report.segments).collect();
    assert_eq!(segs, DEFAULT_SWEEP.to_vec());
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 8);
}

#[test]
fn sweep_can_train_each_setting() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, _) = synth(&dir.path().join("raw"), 4, 2, 128);
    let mut run = small_run();
    run.epochs = Some(1);
    run.warmup = Some(0);
    let csv = dir.path().join("s.csv");
    let args = SweepArgs {
        profile: ProfileArgs { run, channels: 2, length: 128, warmup_iters: 1, iters: 2, parallel: Some(2), json: Some(dir.path().join("s.json")) },
        segment_list: "none,2".parse().unwrap(),
        csv: Some(csv.clone()),
        manifest: Some(raw),
    };
    let rows = cmd_sweep(&args, &mut Vec::new()).unwrap();
    assert!(rows.iter().all(|r| r.val.is_some() && r.report.latency.is_some()));
    assert!(fs::read_to_string(csv).unwrap().lines().next().unwrap().ends_with("val_macro_f1"));
}

#[test]
fn profile_binary_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("p.json");
    let out = bin()
        .args(["profile", "--iters", "3", "--warmup-iters", "1", "--latent-dim", "16", "--depth", "1", "--self-blocks", "1", "--json"])
        .arg(&json)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("#Segm."));
    let report: seglat::profile::CostReport = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report.input_shape, vec![512, 24]);
}
