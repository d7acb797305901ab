use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seglat::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Model};
use seglat::profile::{benchmark, parallel_throughput, render_csv, render_table, CostReport};
use seglat::signal::{
    generate_synthetic_dataset, save_tensor, DatasetManifest, ManifestEntry, Split, SynthConfig, MANIFEST_FILE,
};
use seglat::tensorcore::Tensor;
use seglat::train::{evaluate, fit, history_jsonl, lr_at_epoch, EpochRecord, Metrics, Sample, TrainConfig};
use seglat::{seeds, Error};

use crate::config::{input_shape, set_segments, validate, Overrides, RunConfig, SegmentArg};
use crate::CliError;

pub const DEFAULT_SWEEP: [Option<usize>; 7] = [None, Some(2), Some(4), Some(8), Some(16), Some(32), Some(64)];

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(|e| CliError::usage(format!("manifest {}: {e}", path.display())))
}

#[derive(Clone, Debug, clap::Args)]
pub struct SynthArgs {
    /// output directory for recordings and manifest.json
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 24)]
    pub channels: usize,
    /// samples per recording
    #[arg(long, default_value_t = 512)]
    pub length: usize,
    #[arg(long, default_value_t = 10.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Writes the dataset and returns the manifest path and a SHA-256 over the
/// manifest and every recording, in manifest order.
pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(PathBuf, String), CliError> {
    let cfg = SynthConfig {
        n_per_class: args.n_per_class,
        channels: args.channels,
        length: args.length,
        sample_rate_hz: args.sample_rate,
        seed: args.seed,
    };
    let manifest = generate_synthetic_dataset(&args.out, &cfg)?;
    let manifest_path = args.out.join(MANIFEST_FILE);
    let mut hasher = Sha256::new();
    hasher.update(fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    for e in &manifest.entries {
        let p = manifest.resolve(e);
        hasher.update(fs::read(&p).map_err(|err| Error::io(&p, err))?);
    }
    let digest = hex::encode(hasher.finalize());
    writeln!(out, "manifest: {}", manifest_path.display())?;
    writeln!(out, "recordings: {}", manifest.entries.len())?;
    writeln!(out, "sha256: {digest}")?;
    Ok((manifest_path, digest))
}

#[derive(Clone, Debug, clap::Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// directory for the converted tensors and their manifest
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: Overrides,
}

pub fn cmd_preprocess(args: &PreprocessArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.run.resolve()?;
    let rep = cfg.data.representation;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.entries.is_empty() {
        return Err(CliError::usage("manifest has no entries"));
    }
    if manifest.entries.iter().all(|e| e.representation == Some(rep)) {
        writeln!(out, "warning: every entry already holds {rep} data; nothing rewritten")?;
        return Ok(());
    }
    create_dir(&args.out)?;
    let results: Vec<Result<(ManifestEntry, Vec<usize>), String>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let tensor = cfg.data.load_input::<f64>(&manifest, entry).map_err(|e| format!("{}: {e}", entry.path))?;
            let stem = Path::new(&entry.path).file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
            let name = format!("{stem}_{rep}.lsg");
            save_tensor(args.out.join(&name), &tensor).map_err(|e| format!("{}: {e}", entry.path))?;
            let shape = tensor.shape().to_vec();
            Ok((ManifestEntry { path: name, representation: Some(rep), ..entry.clone() }, shape))
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut shape = None;
    for r in results {
        match r {
            Ok((e, s)) => {
                shape.get_or_insert(s);
                entries.push(e);
            }
            Err(msg) => {
                failures += 1;
                writeln!(out, "failed: {msg}")?;
            }
        }
    }
    let new_manifest = DatasetManifest::new(entries, &args.out);
    new_manifest.save(args.out.join(MANIFEST_FILE))?;
    if let Some(s) = &shape {
        writeln!(out, "representation: {rep}")?;
        writeln!(out, "shape: {s:?}")?;
        writeln!(out, "channels: {}", s.last().copied().unwrap_or(0))?;
    }
    writeln!(out, "manifest: {}", args.out.join(MANIFEST_FILE).display())?;
    if failures > 0 {
        return Err(CliError::runtime(format!("{failures} of {} files failed", manifest.entries.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// directory for history.jsonl, model.ckpt, best.ckpt and run.toml
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: Overrides,
}

/// Paths written by a training run.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub history: PathBuf,
    pub model: PathBuf,
    pub best: PathBuf,
    pub records: Vec<EpochRecord>,
}

fn meta_for(cfg: &RunConfig, token_width: usize) -> CheckpointMeta {
    CheckpointMeta { model: cfg.model.clone(), pipeline: cfg.data.clone(), token_width }
}

fn prepare(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample<f64>>, CliError> {
    if manifest.split(split).next().is_none() {
        return Err(CliError::usage(format!("manifest has no {split} entries")));
    }
    Ok(cfg.data.prepare_split(manifest, split)?)
}

/// One line naming the schedule's peak and floor learning rates.
pub fn schedule_summary(t: &TrainConfig) -> Result<String, CliError> {
    let peak_epoch = t.epochs_warmup.min(t.epochs_total - 1);
    let peak = lr_at_epoch(t, peak_epoch)?;
    let last = lr_at_epoch(t, t.epochs_total - 1)?;
    Ok(format!(
        "lr schedule: {peak:e} → {last:e} (peak at epoch {peak_epoch}, warmup {}, cooldown {}, {} epochs)",
        t.epochs_warmup, t.epochs_cooldown, t.epochs_total
    ))
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainArtifacts, CliError> {
    let cfg = args.run.resolve()?;
    let manifest = load_manifest(&args.manifest)?;
    let train_set = prepare(&cfg, &manifest, Split::Train)?;
    let val_set = prepare(&cfg, &manifest, Split::Val)?;
    let width = train_set[0].input.width();
    let model = Model::<f64>::init(cfg.model.clone(), width, cfg.seed)?;
    create_dir(&args.out)?;
    let toml_text = toml::to_string(&cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&args.out.join("run.toml"), toml_text)?;

    writeln!(out, "{}", schedule_summary(&cfg.train)?)?;
    writeln!(out, "train {} / val {} samples, token width {width}", train_set.len(), val_set.len())?;

    let history_path = args.out.join("history.jsonl");
    let mut history_file = fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let outcome = fit(model, &train_set, &val_set, &cfg.train, |r| {
        let line = serde_json::to_string(r)?;
        writeln!(history_file, "{line}").map_err(|e| Error::io(&history_path, e))?;
        writeln!(
            out,
            "epoch {:>4}  lr {:.3e}  loss {:.5}  val bal.acc {:.4}  macro F1 {:.4}",
            r.epoch, r.lr, r.train_loss, r.val.balanced_accuracy, r.val.macro_f1
        )
        .map_err(|e| Error::io("<stdout>", e))?;
        Ok(())
    })?;
    let meta = meta_for(&cfg, width);
    let model_path = args.out.join("model.ckpt");
    let best_path = args.out.join("best.ckpt");
    save_checkpoint(&model_path, &outcome.model, &meta)?;
    save_checkpoint(&best_path, &outcome.best, &meta)?;
    let best = &outcome.history[outcome.best_epoch];
    writeln!(out, "best epoch {} (val macro F1 {:.4})", outcome.best_epoch, best.val.macro_f1)?;
    writeln!(out, "history: {}", history_path.display())?;
    writeln!(out, "checkpoints: {} {}", model_path.display(), best_path.display())?;
    debug_assert_eq!(history_jsonl(&outcome.history)?, fs::read_to_string(&history_path).unwrap_or_default());
    Ok(TrainArtifacts { history: history_path, model: model_path, best: best_path, records: outcome.history })
}

#[derive(Clone, Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val or test
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// also write the metrics as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Metrics, CliError> {
    let (model, meta) = load_checkpoint::<f64>(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let cfg = RunConfig { model: meta.model.clone(), data: meta.pipeline.clone(), ..Default::default() };
    let samples = prepare(&cfg, &manifest, args.split)?;
    let metrics = evaluate(&model, &samples)?;
    writeln!(out, "split: {} ({} samples)", args.split, samples.len())?;
    write!(out, "{}", metrics.render())?;
    if let Some(p) = &args.json {
        write_file(p, serde_json::to_string_pretty(&metrics)? + "\n")?;
    }
    Ok(metrics)
}

#[derive(Clone, Debug, clap::Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub run: Overrides,
    /// recording channels used to shape the input
    #[arg(long, default_value_t = 24)]
    pub channels: usize,
    /// recording length used to shape the input
    #[arg(long, default_value_t = 512)]
    pub length: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup_iters: usize,
    /// timed forward passes; 0 reports analytic columns only
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// also measure throughput over this many samples across all workers
    #[arg(long)]
    pub parallel: Option<usize>,
    /// write the report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn profile_one(args: &ProfileArgs, cfg: &RunConfig) -> Result<CostReport, CliError> {
    let shape = input_shape(cfg, args.channels, args.length);
    let n: usize = shape.iter().product();
    let mut rng = seeds::substream(cfg.seed, seeds::DATA);
    let data: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let input = Tensor::new(shape.clone(), data)?;
    let prepared = cfg.data.tokens(&input)?;
    let width = prepared.width();
    let n_tokens: usize = shape[..shape.len() - 1].iter().product();
    let mut report = CostReport::analytic(&cfg.model, cfg.data.segments, &shape, n_tokens, width)?;
    if args.iters > 0 {
        let model = Model::<f64>::init(cfg.model.clone(), width, cfg.seed)?;
        report = report.with_latency(benchmark(&model, &prepared, args.warmup_iters, args.iters)?);
        if let Some(p) = args.parallel {
            report.parallel_samples_per_second = Some(parallel_throughput(&model, &prepared, p)?);
        }
    }
    Ok(report)
}

pub fn cmd_profile(args: &ProfileArgs, out: &mut dyn Write) -> Result<CostReport, CliError> {
    let cfg = args.run.resolve()?;
    let report = profile_one(args, &cfg)?;
    write!(out, "{}", render_table(std::slice::from_ref(&report)))?;
    if let Some(p) = report.parallel_samples_per_second {
        writeln!(out, "parallel throughput: {p:.1} samples/s")?;
    }
    writeln!(out, "flops: {}", report.flop_convention)?;
    if let Some(p) = &args.json {
        write_file(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}

/// Comma-separated segment counts, `none` for the unsegmented baseline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentList(pub Vec<Option<usize>>);

impl std::str::FromStr for SegmentList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',').map(|t| t.trim().parse::<SegmentArg>().map(|a| a.0)).collect::<Result<_, _>>().map(SegmentList)
    }
}

#[derive(Clone, Debug, clap::Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    /// comma-separated segment counts; `none` is the unsegmented baseline
    #[arg(long, default_value = "none,2,4,8,16,32,64")]
    pub segment_list: SegmentList,
    /// write the rows as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// train each setting on this manifest and report validation metrics
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub report: CostReport,
    pub val: Option<Metrics>,
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<Vec<SweepRow>, CliError> {
    let base = args.profile.run.resolve()?;
    let list = args.segment_list.0.clone();
    let manifest = args.manifest.as_deref().map(load_manifest).transpose()?;
    let mut rows = Vec::with_capacity(list.len());
    for s in &list {
        let mut cfg = base.clone();
        set_segments(&mut cfg, *s);
        validate(&cfg)?;
        let report = profile_one(&args.profile, &cfg)?;
        let val = match &manifest {
            Some(m) => {
                let train_set = prepare(&cfg, m, Split::Train)?;
                let val_set = prepare(&cfg, m, Split::Val)?;
                let model = Model::<f64>::init(cfg.model.clone(), train_set[0].input.width(), cfg.seed)?;
                let outcome = fit(model, &train_set, &val_set, &cfg.train, |_| Ok(()))?;
                Some(evaluate(&outcome.best, &val_set)?)
            }
            None => None,
        };
        rows.push(SweepRow { report, val });
    }
    let reports: Vec<CostReport> = rows.iter().map(|r| r.report.clone()).collect();
    write!(out, "{}", render_table(&reports))?;
    for r in &rows {
        if let Some(v) = &r.val {
            let label = r.report.segments.map_or_else(|| "-".into(), |s| s.to_string());
            writeln!(out, "segments {label}: val balanced accuracy {:.4}, macro F1 {:.4}", v.balanced_accuracy, v.macro_f1)?;
        }
    }
    if let Some(p) = &args.csv {
        let mut csv = render_csv(&reports);
        if rows.iter().any(|r| r.val.is_some()) {
            let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
            lines[0].push_str(",val_balanced_accuracy,val_macro_f1");
            for (line, r) in lines[1..].iter_mut().zip(&rows) {
                match &r.val {
                    Some(v) => line.push_str(&format!(",{},{}", v.balanced_accuracy, v.macro_f1)),
                    None => line.push_str(",,"),
                }
            }
            csv = lines.join("\n") + "\n";
        }
        write_file(p, csv)?;
    }
    if let Some(p) = &args.profile.json {
        write_file(p, serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(rows)
}
