use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

/// Floor added before log scaling so silent bins stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic taper of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
    pub log_scale: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 64,
            hop: 16,
            window: Window::Hann,
            log_scale: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "stft hop must satisfy 0 < hop <= window_len, got hop={} window_len={}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    pub fn frequency_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

/// Power spectral density of one channel over sliding windows.
///
/// Returns a `bins × frames` plane with one-sided density scaling: each bin is
/// `|DFT|² / (fs · Σw²)`, interior bins doubled so that summing over bins times
/// `fs / window_len` recovers the tapered frame power. With `log_scale` the plane
/// holds `log10(psd + 1e-12)`.
pub fn compute_psd_spectrogram<T: Scalar>(
    channel: &[T],
    sample_rate_hz: f64,
    cfg: &StftConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if !(sample_rate_hz > 0.0) {
        return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
    }
    let n = cfg.window_len;
    if n > channel.len() {
        return Err(Error::Data(format!(
            "window of {n} samples exceeds signal length {}",
            channel.len()
        )));
    }
    let bins = cfg.frequency_bins();
    let frames = cfg.frames(channel.len());
    let taper: Vec<T> = cfg.window.coefficients(n).into_iter().map(T::of).collect();
    let norm = T::of(sample_rate_hz) * taper.iter().map(|&w| w * w).sum::<T>();
    let two = T::of(2.0);

    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut plane = vec![T::zero(); bins * frames];
    for t in 0..frames {
        let frame = &channel[t * cfg.hop..t * cfg.hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&taper) {
            *b = Complex::new(x * w, T::zero());
        }
        fft.process(&mut buf);
        for f in 0..bins {
            let mut p = buf[f].norm_sqr() / norm;
            let edge = f == 0 || (n % 2 == 0 && f == n / 2);
            if !edge {
                p *= two;
            }
            plane[f * frames + t] = p;
        }
    }
    if cfg.log_scale {
        let floor = T::of(LOG_FLOOR);
        plane.iter_mut().for_each(|p| *p = (*p + floor).log10());
    }
    Tensor::new(vec![bins, frames], plane)
}

/// Bin centers in Hz for the rows of a spectrogram.
pub fn frequency_axis(cfg: &StftConfig, sample_rate_hz: f64) -> Vec<f64> {
    (0..cfg.frequency_bins())
        .map(|f| f as f64 * sample_rate_hz / cfg.window_len as f64)
        .collect()
}

/// Window centers in seconds for the columns of a spectrogram.
pub fn time_axis(cfg: &StftConfig, sample_rate_hz: f64, len: usize) -> Vec<f64> {
    (0..cfg.frames(len))
        .map(|t| (t * cfg.hop) as f64 / sample_rate_hz + cfg.window_len as f64 / (2.0 * sample_rate_hz))
        .collect()
}
