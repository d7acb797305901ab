use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::container::save_tensor;
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::recording::N_CLASSES;
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensorcore::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Oscillation-to-noise power ratio in dB.
pub const SNR_DB: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub channels: usize,
    pub length: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            channels: 24,
            length: 512,
            sample_rate_hz: 10.0,
            seed: 0,
        }
    }
}

/// Dominant frequency for class `k`: `0.1·(k+1)·nyquist/2`.
pub fn class_frequency(class: usize, sample_rate_hz: f64) -> f64 {
    0.1 * (class + 1) as f64 * (sample_rate_hz / 2.0) / 2.0
}

/// Unit-variance noise with a 1/f power spectrum.
fn pink_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, b) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(len - k) as f64;
        *b /= f.sqrt();
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / len as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

fn recording(cfg: &SynthConfig, class: usize, rng: &mut impl Rng) -> Vec<f64> {
    let freq = class_frequency(class, cfg.sample_rate_hz);
    let amplitude = (2.0 * 10f64.powf(SNR_DB / 10.0)).sqrt();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = Vec::with_capacity(cfg.channels * cfg.length);
    for _ in 0..cfg.channels {
        let jitter = rng.random_range(-0.3..0.3);
        let noise = if cfg.length > 1 {
            pink_noise(cfg.length, rng)
        } else {
            vec![0.0; cfg.length]
        };
        for (n, z) in noise.into_iter().enumerate() {
            let t = n as f64 / cfg.sample_rate_hz;
            out.push(amplitude * (std::f64::consts::TAU * freq * t + phase + jitter).sin() + z);
        }
    }
    out
}

/// Writes a three-class synthetic dataset and its manifest into `out_dir`.
///
/// Every subject contributes one trial per class; subjects are split 70/15/15
/// into train/val/test. Output bytes depend only on `cfg`.
pub fn generate_synthetic_dataset(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.n_per_class == 0 || cfg.channels == 0 || cfg.length == 0 {
        return Err(Error::Config(format!(
            "synthetic dataset needs positive counts, got n_per_class={} channels={} length={}",
            cfg.n_per_class, cfg.channels, cfg.length
        )));
    }
    if !(cfg.sample_rate_hz > 0.0) {
        return Err(Error::Config(format!("sample rate must be positive, got {}", cfg.sample_rate_hz)));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n = cfg.n_per_class;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::substream(cfg.seed, "data/split"));
    let n_val = (0.15 * n as f64).round() as usize;
    let n_test = (0.15 * n as f64).round() as usize;
    let n_train = n - n_val - n_test;
    let mut split_of = vec![Split::Train; n];
    for (rank, &subject) in order.iter().enumerate() {
        split_of[subject] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut rng = seeds::substream(cfg.seed, seeds::DATA);
    let mut entries = Vec::with_capacity(n * N_CLASSES);
    for (subject, &split) in split_of.iter().enumerate() {
        for class in 0..N_CLASSES {
            let data = recording(cfg, class, &mut rng);
            let tensor = Tensor::new(vec![cfg.channels, cfg.length], data)?;
            let name = format!("sub{subject:04}_c{class}.lsg");
            save_tensor(out_dir.join(&name), &tensor)?;
            entries.push(ManifestEntry {
                path: name,
                label: class,
                subject: format!("S{subject:04}"),
                split,
                sample_rate_hz: Some(cfg.sample_rate_hz),
                representation: None,
            });
        }
    }
    let manifest = DatasetManifest::new(entries, out_dir);
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
