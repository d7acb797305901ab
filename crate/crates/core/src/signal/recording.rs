use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

pub const N_CLASSES: usize = 3;

/// One trial: `C × L` samples, its sampling rate and class.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording<T> {
    samples: Tensor<T>,
    pub sample_rate_hz: f64,
    pub label: usize,
    pub subject_id: String,
}

impl<T: Scalar> Recording<T> {
    pub fn new(samples: Tensor<T>, sample_rate_hz: f64, label: usize, subject_id: impl Into<String>) -> Result<Self> {
        if samples.rank() != 2 {
            return Err(Error::Data(format!(
                "recording must be channels x time, got shape {:?}",
                samples.shape()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if label >= N_CLASSES {
            return Err(Error::Data(format!("label {label} outside [0, {N_CLASSES})")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            label,
            subject_id: subject_id.into(),
        })
    }

    pub fn samples(&self) -> &Tensor<T> {
        &self.samples
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let l = self.len();
        &self.samples.data()[c * l..(c + 1) * l]
    }
}

/// Per-channel z-scored waveform as an `L × C` tensor.
///
/// Uses the population variance; a channel with zero variance becomes all zeros.
pub fn build_waveform_input<T: Scalar>(rec: &Recording<T>) -> Result<Tensor<T>> {
    let (c, l) = (rec.channels(), rec.len());
    let mut out = vec![T::zero(); l * c];
    if l > 0 {
        let inv = T::one() / T::of(l as f64);
        for ch in 0..c {
            let x = rec.channel(ch);
            let mean = x.iter().copied().sum::<T>() * inv;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            if var > T::zero() {
                let rstd = T::one() / var.sqrt();
                for (t, &v) in x.iter().enumerate() {
                    out[t * c + ch] = (v - mean) * rstd;
                }
            }
        }
    }
    Tensor::new(vec![l, c], out)
}
