use super::psd::{compute_psd_spectrogram, StftConfig};
use super::recording::Recording;
use super::resize::{resample_linear, resize_bilinear};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

pub const DEFAULT_IMAGE_SIZE: usize = 224;

fn min_max_scale<T: Scalar>(plane: &mut [T]) {
    let lo = plane.iter().copied().fold(T::infinity(), T::min);
    let hi = plane.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    if span > T::zero() {
        plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        plane.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Interleaves `C` row-major `H×W` planes into an `H×W×C` tensor.
fn stack_planes<T: Scalar>(planes: &[Vec<T>], h: usize, w: usize) -> Result<Tensor<T>> {
    let c = planes.len();
    let mut out = vec![T::zero(); h * w * c];
    for (ch, plane) in planes.iter().enumerate() {
        if plane.len() != h * w {
            return Err(Error::Internal(format!(
                "plane {ch} has {} values, expected {}",
                plane.len(),
                h * w
            )));
        }
        for (px, &v) in plane.iter().enumerate() {
            out[px * c + ch] = v;
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Spectrogram image per channel, resized and min–max scaled to `[0, 1]`, as `H×W×C`.
pub fn build_psd_input<T: Scalar>(
    rec: &Recording<T>,
    cfg: &StftConfig,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>> {
    if rec.len() < 2 * cfg.window_len {
        return Err(Error::Data(format!(
            "recording of {} samples is shorter than two windows of {}",
            rec.len(),
            cfg.window_len
        )));
    }
    let planes = (0..rec.channels())
        .map(|c| {
            let spec = compute_psd_spectrogram(rec.channel(c), rec.sample_rate_hz, cfg)?;
            let mut img = resize_bilinear(&spec, target_h, target_w)?.into_data();
            min_max_scale(&mut img);
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    stack_planes(&planes, target_h, target_w)
}

/// Concatenates waveform planes and PSD planes along the channel axis.
///
/// Each waveform channel (`L × C_w` input) is linearly resampled to the PSD width
/// and repeated down every row, giving one `H×W` plane per channel. Output is
/// `H × W × (C_w + C_p)` with waveform planes first.
pub fn stack_fusion<T: Scalar>(wave: &Tensor<T>, psd: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, cw) = match wave.shape() {
        &[l, c] => (l, c),
        s => {
            return Err(Error::Dimension {
                op: "stack_fusion",
                lhs: s.to_vec(),
                rhs: psd.shape().to_vec(),
            })
        }
    };
    let (h, w, cp) = match psd.shape() {
        &[h, w, c] => (h, w, c),
        s => {
            return Err(Error::Dimension {
                op: "stack_fusion",
                lhs: wave.shape().to_vec(),
                rhs: s.to_vec(),
            })
        }
    };
    let mut planes = Vec::with_capacity(cw + cp);
    let wd = wave.data();
    for ch in 0..cw {
        let series: Vec<T> = (0..l).map(|t| wd[t * cw + ch]).collect();
        let row = resample_linear(&series, w)?;
        let mut plane = Vec::with_capacity(h * w);
        for _ in 0..h {
            plane.extend_from_slice(&row);
        }
        planes.push(plane);
    }
    let pd = psd.data();
    for ch in 0..cp {
        planes.push((0..h * w).map(|px| pd[px * cp + ch]).collect());
    }
    let out = stack_planes(&planes, h, w)?;
    if out.shape()[2] != cw + cp {
        return Err(Error::Internal("fused channel count mismatch".into()));
    }
    Ok(out)
}
