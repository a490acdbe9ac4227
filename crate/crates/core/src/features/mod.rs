//! Audio ingestion, mel analysis and the content / speaker feature providers.

mod manifest;
mod mel;
mod providers;
mod segment;
mod tensor_file;
mod wav;

pub use manifest::{read_manifest, write_manifest, ManifestItem, Split};
pub use mel::{compute_mel, hz_to_mel, mel_filter_centers, mel_to_hz, MelConfig, MelExtractor};
pub use providers::{
    interpolate_frames, ContentProvider, ProviderRegistry, SpeakerProvider, SyntheticContentProvider,
    SyntheticSpeakerProvider, CONTENT_FRAME_RATE, DEFAULT_CONTENT_DIM, DEFAULT_SV_DIMS, PROVIDER_SEED,
};
pub use segment::{segment_reference, ReferenceSegment, REFERENCE_SECONDS};
pub use tensor_file::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, TENSOR_MAGIC};
pub use wav::{read_wav, write_wav};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    id: String,
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Utterance {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let id = id.into();
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate { found: sample_rate, expected: SAMPLE_RATE });
        }
        if samples.is_empty() {
            return Err(Error::InvalidUtterance(format!("{id}: no samples")));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidUtterance(format!(
                "{id}: sample {pos} = {} is outside [-1, 1]",
                samples[pos]
            )));
        }
        Ok(Self { id, samples, sample_rate })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel energies, `[n_frames × n_mels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor,
    pub hop_length: usize,
    pub win_length: usize,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frame-level content features, `[T1 × D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentFeatures {
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl ContentFeatures {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Linear interpolation along time to `n_frames` rows.
    pub fn aligned_to(&self, n_frames: usize) -> Tensor {
        interpolate_frames(&self.frames, n_frames)
    }
}

/// One speaker-verification embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TimbreEmbedding {
    pub vector: Vec<f64>,
    pub provider_id: String,
}

impl TimbreEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}
