use std::path::Path;

use serde::{Deserialize, Serialize};

use seglat::model::{LatentMode, ModelConfig, DEFAULT_GLOBAL_LATENTS};
use seglat::signal::Representation;
use seglat::train::{InputPipeline, TrainConfig};

use crate::CliError;

/// Everything a run needs, read from TOML and then overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// feeds the data, init and shuffle substreams
    pub seed: u64,
    pub data: InputPipeline,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// `--segments` value: a count, or `none` for the unsegmented layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentArg(pub Option<usize>);

impl std::str::FromStr for SegmentArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" | "-" | "global" => Ok(SegmentArg(None)),
            n => n
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .map(|n| SegmentArg(Some(n)))
                .ok_or_else(|| format!("expected a positive segment count or `none`, got `{n}`")),
        }
    }
}

/// Flag overrides shared by the pipeline commands.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration; flags below take precedence
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// experiment seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// input representation: wave, psd or stack
    #[arg(long)]
    pub representation: Option<Representation>,
    /// latent segments, or `none` for the unsegmented baseline
    #[arg(long)]
    pub segments: Option<SegmentArg>,
    /// Fourier bands per axis
    #[arg(long)]
    pub bands: Option<usize>,
    /// spectrogram image side length
    #[arg(long)]
    pub image_size: Option<usize>,
    /// number of cross-attention layers
    #[arg(long)]
    pub depth: Option<usize>,
    /// latent width d
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// self-attention blocks per layer
    #[arg(long)]
    pub self_blocks: Option<usize>,
    /// total training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub cooldown: Option<usize>,
    /// peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn set_segments(cfg: &mut RunConfig, segments: Option<usize>) {
    cfg.data.segments = segments;
    cfg.model.mode = match segments {
        Some(_) => LatentMode::Segmented,
        None => match cfg.model.mode {
            LatentMode::Global { latents } => LatentMode::Global { latents },
            LatentMode::Segmented => LatentMode::Global { latents: DEFAULT_GLOBAL_LATENTS },
        },
    };
}

impl Overrides {
    /// Loads `--config` (or defaults), applies flags and validates the result.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(representation => data.representation);
        set!(image_size => data.image_size);
        set!(depth => model.depth);
        set!(latent_dim => model.latent_dim);
        set!(self_blocks => model.self_blocks);
        set!(epochs => train.epochs_total);
        set!(warmup => train.epochs_warmup);
        set!(cooldown => train.epochs_cooldown);
        set!(lr => train.base_lr);
        set!(min_lr => train.min_lr);
        set!(batch_size => train.batch_size);
        set!(weight_decay => train.weight_decay);
        if let Some(b) = self.bands {
            cfg.data.tokenizer.bands = Some(b);
        }
        if let Some(SegmentArg(s)) = self.segments {
            set_segments(&mut cfg, s);
        }
        cfg.train.seed = cfg.seed;
        validate(&cfg)?;
        Ok(cfg)
    }
}

fn axes_of(r: Representation) -> usize {
    match r {
        Representation::Wave => 1,
        Representation::Psd | Representation::Stack => 2,
    }
}

/// Checks that the parts of a run agree with each other, before any compute.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.data.stft.validate()?;
    if cfg.data.image_size == 0 {
        return Err(CliError::usage("image_size must be positive"));
    }
    match (cfg.data.segments, cfg.model.mode) {
        (Some(0), _) => return Err(CliError::usage("segment count must be positive")),
        (Some(_), LatentMode::Segmented) | (None, LatentMode::Global { .. }) => {}
        (Some(s), mode) => {
            return Err(CliError::usage(format!("{s} segments requested but the model layout is {mode:?}")))
        }
        (None, LatentMode::Segmented) => {
            return Err(CliError::usage("segmented model layout needs a segment count"))
        }
    }
    if let Some(f) = &cfg.data.tokenizer.max_freq {
        let axes = axes_of(cfg.data.representation);
        if f.len() != axes {
            return Err(CliError::usage(format!(
                "{} input has {axes} positional axes but max_freq lists {}",
                cfg.data.representation,
                f.len()
            )));
        }
    }
    if cfg.data.tokenizer.bands == Some(0) {
        return Err(CliError::usage("bands must be positive"));
    }
    Ok(())
}

/// Shape of the model input for a recording of `channels × length`.
pub fn input_shape(cfg: &RunConfig, channels: usize, length: usize) -> Vec<usize> {
    let s = cfg.data.image_size;
    match cfg.data.representation {
        Representation::Wave => vec![length, channels],
        Representation::Psd => vec![s, s, channels],
        Representation::Stack => vec![s, s, 2 * channels],
    }
}
