use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelInput;
use crate::scalar::Scalar;
use crate::signal::{
    build_psd_input, build_waveform_input, load_tensor, stack_fusion, DatasetManifest, ManifestEntry, Recording,
    Representation, Split, StftConfig, DEFAULT_IMAGE_SIZE,
};
use crate::tensorcore::Tensor;
use crate::tokenizer::{segment, tokenize, SegmentedTokens, TokenBatch, TokenizerConfig};

/// Sample rate assumed when a manifest entry omits it.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10.0;

/// Recording → representation → tokens → segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPipeline {
    pub representation: Representation,
    pub stft: StftConfig,
    pub image_size: usize,
    pub tokenizer: TokenizerConfig,
    /// `None` feeds all tokens to a global latent array
    pub segments: Option<usize>,
}

impl Default for InputPipeline {
    fn default() -> Self {
        Self {
            representation: Representation::Wave,
            stft: StftConfig::default(),
            image_size: DEFAULT_IMAGE_SIZE,
            tokenizer: TokenizerConfig::default(),
            segments: Some(8),
        }
    }
}

/// Model-ready tokens for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum PreparedInput<T> {
    Segmented(SegmentedTokens<T>),
    Global(TokenBatch<T>),
}

impl<T: Scalar> PreparedInput<T> {
    pub fn as_input(&self) -> ModelInput<'_, T> {
        match self {
            PreparedInput::Segmented(s) => ModelInput::Segmented(s),
            PreparedInput::Global(b) => ModelInput::Global(b),
        }
    }

    pub fn width(&self) -> usize {
        self.as_input().width()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub input: PreparedInput<T>,
    pub label: usize,
}

/// Converts a raw recording into the chosen representation.
pub fn represent<T: Scalar>(
    rec: &Recording<T>,
    representation: Representation,
    stft: &StftConfig,
    image_size: usize,
) -> Result<Tensor<T>> {
    match representation {
        Representation::Wave => build_waveform_input(rec),
        Representation::Psd => build_psd_input(rec, stft, image_size, image_size),
        Representation::Stack => {
            let wave = build_waveform_input(rec)?;
            let psd = build_psd_input(rec, stft, image_size, image_size)?;
            stack_fusion(&wave, &psd)
        }
    }
}

impl InputPipeline {
    pub fn tokens<T: Scalar>(&self, input: &Tensor<T>) -> Result<PreparedInput<T>> {
        let batch = tokenize(input, &self.tokenizer)?;
        Ok(match self.segments {
            Some(s) => PreparedInput::Segmented(segment(&batch, s)?),
            None => PreparedInput::Global(batch),
        })
    }

    /// Representation tensor for one entry. Entries tagged with a representation
    /// already hold it; untagged entries hold a `C × L` recording.
    pub fn load_input<T: Scalar>(&self, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Tensor<T>> {
        let tensor = load_tensor::<T>(manifest.resolve(entry))?;
        match entry.representation {
            Some(r) if r == self.representation => Ok(tensor),
            Some(r) => Err(Error::Config(format!(
                "{} holds {r} data but the pipeline expects {}",
                entry.path, self.representation
            ))),
            None => {
                let fs = entry.sample_rate_hz.unwrap_or(DEFAULT_SAMPLE_RATE_HZ);
                let rec = Recording::new(tensor, fs, entry.label, entry.subject.clone())?;
                represent(&rec, self.representation, &self.stft, self.image_size)
            }
        }
    }

    pub fn prepare<T: Scalar>(&self, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Sample<T>> {
        let input = self.load_input(manifest, entry)?;
        Ok(Sample { input: self.tokens(&input)?, label: entry.label })
    }

    /// Every entry of `split`, in manifest order.
    pub fn prepare_split<T: Scalar>(&self, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample<T>>> {
        manifest
            .split(split)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|e| self.prepare(manifest, e))
            .collect()
    }
}
