use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{MelSpectrogram, Utterance};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Natural log of the magnitude clamp.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: (1e-5f64).ln(),
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_fft >= self.win_length && self.win_length >= self.hop_length && self.hop_length > 0) {
            return Err(Error::Config(format!(
                "mel framing needs n_fft >= win_length >= hop_length > 0 (got {}, {}, {})",
                self.n_fft, self.win_length, self.hop_length
            )));
        }
        if self.n_mels == 0 || !(self.f_max > self.f_min) || self.f_max > self.sample_rate as f64 / 2.0 {
            return Err(Error::Config("mel band edges are inconsistent".into()));
        }
        Ok(())
    }

    /// Frame count under centre padding.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_length + 1
    }
}

// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - MIN_LOG_MEL) * log_step()).exp()
    }
}

fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Centre frequency (Hz) of every mel filter.
pub fn mel_filter_centers(cfg: &MelConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular, area-normalised filterbank `[n_fft/2+1 × n_mels]`.
fn filterbank(cfg: &MelConfig) -> Tensor {
    let n_bins = cfg.n_fft / 2 + 1;
    let edges = mel_edges(cfg);
    let mut fb = Tensor::zeros((n_bins, cfg.n_mels));
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0);
            fb[[k, m]] = w * norm;
        }
    }
    fb
}

fn reflect(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Reusable STFT + mel projection for one [`MelConfig`].
pub struct MelExtractor {
    cfg: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Tensor,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        // periodic Hann, centred inside the FFT frame
        let offset = (cfg.n_fft - cfg.win_length) / 2;
        let mut window = vec![0.0; cfg.n_fft];
        for i in 0..cfg.win_length {
            window[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.win_length as f64).cos();
        }
        let filterbank = filterbank(&cfg);
        Ok(Self { cfg, fft, window, filterbank })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Magnitude spectrogram `[n_frames × n_fft/2+1]`.
    pub fn magnitudes(&self, samples: &[f32]) -> Result<Tensor> {
        let cfg = &self.cfg;
        if samples.len() < cfg.win_length {
            return Err(Error::UtteranceTooShort { samples: samples.len(), needed: cfg.win_length });
        }
        let n_frames = cfg.n_frames(samples.len());
        let n_bins = cfg.n_fft / 2 + 1;
        let pad = (cfg.n_fft / 2) as isize;
        let mut mags = Tensor::zeros((n_frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let start = (f * cfg.hop_length) as isize - pad;
            for (i, c) in buf.iter_mut().enumerate() {
                let s = samples[reflect(start + i as isize, samples.len())] as f64;
                *c = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                mags[[f, k]] = buf[k].norm();
            }
        }
        Ok(mags)
    }

    pub fn compute(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        let mags = self.magnitudes(samples)?;
        Ok(self.from_magnitudes(&mags))
    }

    /// Mel projection and log compression of a magnitude spectrogram.
    pub fn from_magnitudes(&self, mags: &Tensor) -> MelSpectrogram {
        let floor = self.cfg.log_floor;
        let clamp = floor.exp();
        let frames = mags.dot(&self.filterbank).mapv(|v| v.max(clamp).ln().max(floor));
        MelSpectrogram { frames, hop_length: self.cfg.hop_length, win_length: self.cfg.win_length }
    }
}

/// One-shot mel analysis of an utterance.
pub fn compute_mel(utt: &Utterance, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if utt.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRate { found: utt.sample_rate(), expected: cfg.sample_rate });
    }
    MelExtractor::new(cfg.clone())?.compute(utt.samples())
}
