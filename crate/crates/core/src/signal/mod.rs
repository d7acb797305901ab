//! Recordings, spectrogram inputs, stack fusion, file formats and synthetic data.

mod container;
mod fusion;
mod manifest;
mod psd;
mod recording;
mod resize;
mod synth;

use serde::{Deserialize, Serialize};

pub use container::{decode_tensor, encode_tensor, load_tensor, save_tensor, MAGIC, MAX_RANK};
pub use fusion::{build_psd_input, stack_fusion, DEFAULT_IMAGE_SIZE};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use psd::{compute_psd_spectrogram, frequency_axis, time_axis, StftConfig, Window, LOG_FLOOR};
pub use recording::{build_waveform_input, Recording, N_CLASSES};
pub use resize::{resample_linear, resize_bilinear};
pub use synth::{class_frequency, generate_synthetic_dataset, SynthConfig, MANIFEST_FILE, SNR_DB};

/// Which model input a recording is turned into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// z-scored waveform, `L × C`
    Wave,
    /// per-channel spectrogram images, `H × W × C`
    Psd,
    /// waveform planes stacked with spectrogram planes, `H × W × 2C`
    Stack,
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Representation::Wave => "wave",
            Representation::Psd => "psd",
            Representation::Stack => "stack",
        })
    }
}

impl std::str::FromStr for Representation {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "wave" => Ok(Representation::Wave),
            "psd" => Ok(Representation::Psd),
            "stack" => Ok(Representation::Stack),
            other => Err(crate::Error::Usage(format!(
                "unknown representation `{other}` (expected wave, psd or stack)"
            ))),
        }
    }
}
