//! Fourier-feature tokenization of waveforms and images, and latent segmentation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

pub const DEFAULT_BANDS_1D: usize = 64;
pub const DEFAULT_BANDS_2D: usize = 32;

/// Positional-encoding settings. Unset fields take per-input defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    /// frequency bands per axis (K)
    pub bands: Option<usize>,
    /// maximum frequency per axis; defaults to the axis extent (at least 2)
    pub max_freq: Option<Vec<f64>>,
}

/// `TokenizerConfig` with defaults filled in for a concrete input.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedTokenizer {
    pub bands: usize,
    pub max_freq: Vec<f64>,
}

impl TokenizerConfig {
    pub fn with_bands(bands: usize) -> Self {
        Self {
            bands: Some(bands),
            max_freq: None,
        }
    }

    pub fn resolve(&self, axes: &[usize]) -> Result<ResolvedTokenizer> {
        let d = axes.len();
        let bands = self.bands.unwrap_or(if d == 1 { DEFAULT_BANDS_1D } else { DEFAULT_BANDS_2D });
        if bands == 0 {
            return Err(Error::Config("tokenizer needs at least one frequency band".into()));
        }
        let max_freq = match &self.max_freq {
            Some(f) if f.len() == d => f.clone(),
            Some(f) => {
                return Err(Error::Config(format!(
                    "max_freq has {} entries for a {d}-axis input",
                    f.len()
                )))
            }
            None => axes.iter().map(|&a| a.max(2) as f64).collect(),
        };
        if let Some(f) = max_freq.iter().find(|&&f| !(f >= 2.0)) {
            return Err(Error::Config(format!("max_freq must be at least 2, got {f}")));
        }
        Ok(ResolvedTokenizer { bands, max_freq })
    }

    /// Token width `C + D(2K+1)` for an input with `channels` and `axes`.
    pub fn token_width(&self, axes: &[usize], channels: usize) -> Result<usize> {
        let r = self.resolve(axes)?;
        Ok(channels + axes.len() * (2 * r.bands + 1))
    }
}

/// `K` frequencies linearly spaced over `[1, f_max/2]`; a single band sits at 1.
pub fn band_frequencies(bands: usize, max_freq: f64) -> Vec<f64> {
    let top = max_freq / 2.0;
    if bands == 1 {
        return vec![1.0];
    }
    (0..bands)
        .map(|k| 1.0 + (top - 1.0) * k as f64 / (bands - 1) as f64)
        .collect()
}

/// Fourier features of a point in `[-1, 1]^D`: per axis `K` sines, `K` cosines,
/// then the coordinate itself.
pub fn fourier_position_encoding<T: Scalar>(p: &[f64], bands: usize, max_freq: &[f64]) -> Result<Vec<T>> {
    if bands == 0 {
        return Err(Error::Config("fourier encoding needs at least one band".into()));
    }
    if max_freq.len() != p.len() {
        return Err(Error::Config(format!(
            "{} max frequencies for a {}-dimensional position",
            max_freq.len(),
            p.len()
        )));
    }
    let mut out = Vec::with_capacity(p.len() * (2 * bands + 1));
    for (&x, &fmax) in p.iter().zip(max_freq) {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Range(format!("position coordinate {x} outside [-1, 1]")));
        }
        if !(fmax >= 2.0) {
            return Err(Error::Config(format!("max_freq must be at least 2, got {fmax}")));
        }
        let freqs = band_frequencies(bands, fmax);
        out.extend(freqs.iter().map(|&s| T::of((PI * s * x).sin())));
        out.extend(freqs.iter().map(|&s| T::of((PI * s * x).cos())));
        out.push(T::of(x));
    }
    Ok(out)
}

/// Corner-aligned coordinate of index `i` on an axis of `extent` points.
pub fn axis_position(i: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (extent - 1) as f64
    }
}

/// Flattened `N × C'` token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch<T> {
    pub tokens: Tensor<T>,
    pub channels: usize,
    pub axes: Vec<usize>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.width();
        &self.tokens.data()[i * w..(i + 1) * w]
    }
}

/// Turns an `A_1 × … × A_D × C` input (D ∈ {1, 2}) into tokens, row-major over the axes.
pub fn tokenize<T: Scalar>(input: &Tensor<T>, cfg: &TokenizerConfig) -> Result<TokenBatch<T>> {
    let shape = input.shape();
    if !(2..=3).contains(&shape.len()) {
        return Err(Error::Unsupported(format!(
            "tokenize expects rank 2 (L×C) or 3 (H×W×C), got shape {shape:?}"
        )));
    }
    let axes = shape[..shape.len() - 1].to_vec();
    let channels = shape[shape.len() - 1];
    let r = cfg.resolve(&axes)?;
    let per_axis = 2 * r.bands + 1;
    let width = channels + axes.len() * per_axis;

    // encoding tables per axis, indexed by position
    let tables: Vec<Vec<T>> = axes
        .iter()
        .zip(&r.max_freq)
        .map(|(&extent, &fmax)| {
            let mut table = Vec::with_capacity(extent * per_axis);
            for i in 0..extent {
                table.extend(fourier_position_encoding::<T>(&[axis_position(i, extent)], r.bands, &[fmax])?);
            }
            Ok(table)
        })
        .collect::<Result<_>>()?;

    let n: usize = axes.iter().product();
    let data = input.data();
    let mut out = Vec::with_capacity(n * width);
    for t in 0..n {
        out.extend_from_slice(&data[t * channels..(t + 1) * channels]);
        let mut rem = t;
        let mut index = vec![0; axes.len()];
        for (a, &extent) in axes.iter().enumerate().rev() {
            index[a] = rem % extent;
            rem /= extent;
        }
        for (a, &i) in index.iter().enumerate() {
            out.extend_from_slice(&tables[a][i * per_axis..(i + 1) * per_axis]);
        }
    }
    let tokens = Tensor::new(vec![n, width], out)?;
    debug_assert_eq!(tokens.shape()[1], channels + axes.len() * (2 * r.bands + 1));
    Ok(TokenBatch { tokens, channels, axes })
}

/// Tokens split into `S` contiguous segments, each padded to `slot_len` rows.
///
/// `mask[s·slot_len + j]` is true for real tokens. Padded rows are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedTokens<T> {
    /// `S·slot_len × C'`, segment-major
    pub slots: Tensor<T>,
    pub mask: Vec<bool>,
    pub n_segments: usize,
    pub slot_len: usize,
    pub n_tokens: usize,
}

impl<T: Scalar> SegmentedTokens<T> {
    pub fn width(&self) -> usize {
        self.slots.shape()[1]
    }

    /// Padded token count `S · n_s`.
    pub fn padded_len(&self) -> usize {
        self.n_segments * self.slot_len
    }

    pub fn segment_mask(&self, s: usize) -> &[bool] {
        &self.mask[s * self.slot_len..(s + 1) * self.slot_len]
    }

    /// Real tokens in their original order.
    pub fn unsegment(&self) -> Tensor<T> {
        let w = self.width();
        let data = self.slots.data();
        let mut out = Vec::with_capacity(self.n_tokens * w);
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                out.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
        }
        Tensor::new(vec![self.n_tokens, w], out).expect("real tokens are finite")
    }
}

/// Segment length `⌈N/S⌉`.
pub fn segment_len(n_tokens: usize, n_segments: usize) -> usize {
    n_tokens.div_ceil(n_segments)
}

/// Splits tokens into `S` contiguous segments of `⌈N/S⌉`, zero-padding the last.
pub fn segment<T: Scalar>(batch: &TokenBatch<T>, n_segments: usize) -> Result<SegmentedTokens<T>> {
    let n = batch.n_tokens();
    if n_segments == 0 || n_segments > n {
        return Err(Error::Config(format!(
            "segment count must lie in [1, {n}], got {n_segments}"
        )));
    }
    segment_padded(batch, n_segments, segment_len(n, n_segments))
}

/// As [`segment`], but every segment is padded to `slot_len ≥ ⌈N/S⌉` rows.
pub fn segment_padded<T: Scalar>(
    batch: &TokenBatch<T>,
    n_segments: usize,
    slot_len: usize,
) -> Result<SegmentedTokens<T>> {
    let n = batch.n_tokens();
    if n_segments == 0 || n_segments > n {
        return Err(Error::Config(format!(
            "segment count must lie in [1, {n}], got {n_segments}"
        )));
    }
    let chunk = segment_len(n, n_segments);
    if slot_len < chunk {
        return Err(Error::Config(format!(
            "slot length {slot_len} is shorter than segment length {chunk}"
        )));
    }
    if (n_segments - 1) * chunk >= n {
        return Err(Error::Config(format!(
            "{n_segments} segments of {chunk} tokens leave the last segment empty for N={n}"
        )));
    }
    let w = batch.width();
    let mut slots = vec![T::zero(); n_segments * slot_len * w];
    let mut mask = vec![false; n_segments * slot_len];
    let src = batch.tokens.data();
    for s in 0..n_segments {
        let start = s * chunk;
        let end = ((s + 1) * chunk).min(n);
        for (j, t) in (start..end).enumerate() {
            let slot = s * slot_len + j;
            slots[slot * w..(slot + 1) * w].copy_from_slice(&src[t * w..(t + 1) * w]);
            mask[slot] = true;
        }
    }
    Ok(SegmentedTokens {
        slots: Tensor::new(vec![n_segments * slot_len, w], slots)?,
        mask,
        n_segments,
        slot_len,
        n_tokens: n,
    })
}
