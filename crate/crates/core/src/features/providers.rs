//! Content and speaker-verification providers.
//!
//! Pretrained ASR / SV networks are out of reach here, so the registry ships synthetic
//! providers with the same contracts:
//!
//! * [`SyntheticContentProvider`] removes the static spectral envelope of voiced frames
//!   (per-utterance mean subtraction) and projects what remains. What is left is the
//!   time-varying structure of the utterance, with the speaker's long-term envelope gone.
//! * [`SyntheticSpeakerProvider`] summarises exactly that long-term envelope: the
//!   time-averaged log-mel profile, standardised across bands, randomly projected and
//!   length-normalised. It is a pure function of the mel frames, so it can also score
//!   generated mels and run on the autograd tape during training.
//!
//! Real adapters implement the same traits.

use std::collections::BTreeMap;

use ndarray::Axis;
use serde_json::json;

use super::mel::{MelConfig, MelExtractor};
use super::{ContentFeatures, TimbreEmbedding, Utterance};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::Init;

pub const DEFAULT_CONTENT_DIM: usize = 256;
pub const CONTENT_FRAME_RATE: f64 = 50.0;
pub const DEFAULT_SV_DIMS: [usize; 3] = [192, 192, 192];
/// Seed of the synthetic providers. They stand in for frozen pretrained models, so every
/// command uses the same one regardless of `--seed`.
pub const PROVIDER_SEED: u64 = 0;

const STANDARDIZE_EPS: f64 = 1e-6;

pub trait ContentProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn frame_rate(&self) -> f64;
    fn extract(&self, utt: &Utterance, mel: &MelExtractor) -> Result<ContentFeatures>;
}

pub trait SpeakerProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embedding of a log-mel sequence `[frames × n_mels]`.
    fn embed_mel(&self, mel: &Tensor) -> Result<Vec<f64>>;
    /// The same map on the tape; returns a `[1 × dim]` node.
    fn embed_mel_graph(&self, g: &mut Graph, mel: Var) -> Var;
}

/// Resamples `x` along time to `n` rows by linear interpolation with aligned endpoints.
pub fn interpolate_frames(x: &Tensor, n: usize) -> Tensor {
    let (t, c) = x.dim();
    let mut out = Tensor::zeros((n, c));
    if t == 0 || n == 0 {
        return out;
    }
    for j in 0..n {
        let pos = if n == 1 || t == 1 { 0.0 } else { j as f64 * (t - 1) as f64 / (n - 1) as f64 };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let frac = pos - lo as f64;
        let mut row = out.row_mut(j);
        row.assign(&x.row(lo));
        if frac > 0.0 {
            row.zip_mut_with(&x.row(hi), |a, &b| *a += frac * (b - *a));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticContentProvider {
    dim: usize,
    frame_rate: f64,
    projection: Tensor,
    voice_code: Tensor,
}

impl SyntheticContentProvider {
    pub fn new(dim: usize, n_mels: usize, seed: u64) -> Self {
        let mut init = Init::new(seed ^ 0xC0_47E7);
        Self {
            dim,
            frame_rate: CONTENT_FRAME_RATE,
            projection: init.normal(n_mels, dim, 1.0 / (n_mels as f64).sqrt()),
            voice_code: init.normal(1, dim, 1.0),
        }
    }
}

impl ContentProvider for SyntheticContentProvider {
    fn id(&self) -> &str {
        "synthetic-content"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    fn extract(&self, utt: &Utterance, mel: &MelExtractor) -> Result<ContentFeatures> {
        let frames = mel.compute(utt.samples())?.frames;
        if frames.ncols() != self.projection.nrows() {
            return Err(Error::Shape(format!(
                "content provider expects {} mel bands, got {}",
                self.projection.nrows(),
                frames.ncols()
            )));
        }
        let energy = frames.mean_axis(Axis(1)).expect("non-empty mel");
        let hi = energy.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lo = energy.fold(f64::INFINITY, |m, &v| m.min(v));
        let threshold = 0.5 * (hi + lo);
        let voiced: Vec<bool> = energy.iter().map(|&e| hi - lo < 1e-9 || e >= threshold).collect();
        let n_voiced = voiced.iter().filter(|&&v| v).count().max(1);
        let mut envelope = ndarray::Array1::<f64>::zeros(frames.ncols());
        for (row, _) in frames.rows().into_iter().zip(&voiced).filter(|(_, &v)| v) {
            envelope += &row;
        }
        envelope /= n_voiced as f64;

        let mut dev = Tensor::zeros(frames.dim());
        let mut flag = Tensor::zeros((frames.nrows(), 1));
        for (t, &v) in voiced.iter().enumerate() {
            if v {
                dev.row_mut(t).assign(&(&frames.row(t) - &envelope));
                flag[[t, 0]] = 1.0;
            }
        }
        let mut feats = dev.dot(&self.projection) * 0.5 + flag.dot(&self.voice_code);
        feats.mapv_inplace(f64::tanh);

        let t1 = ((utt.len() as f64 * self.frame_rate / utt.sample_rate() as f64).floor() as usize).max(1);
        Ok(ContentFeatures { frames: interpolate_frames(&feats, t1), frame_rate: self.frame_rate })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpeakerProvider {
    id: String,
    projection: Tensor,
    gain: f64,
}

impl SyntheticSpeakerProvider {
    pub fn new(id: impl Into<String>, dim: usize, n_mels: usize, gain: f64, seed: u64) -> Self {
        let mut init = Init::new(seed ^ 0x005E_ED5A);
        Self {
            id: id.into(),
            projection: init.normal(n_mels, dim, 1.0 / (n_mels as f64).sqrt()),
            gain,
        }
    }

    fn check(&self, mel: &Tensor) -> Result<()> {
        if mel.nrows() == 0 || mel.ncols() != self.projection.nrows() {
            return Err(Error::Shape(format!(
                "{} expects [frames × {}] mel, got {:?}",
                self.id,
                self.projection.nrows(),
                mel.dim()
            )));
        }
        Ok(())
    }
}

impl SpeakerProvider for SyntheticSpeakerProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn embed_mel(&self, mel: &Tensor) -> Result<Vec<f64>> {
        self.check(mel)?;
        let profile = mel.mean_axis(Axis(0)).expect("non-empty mel");
        let n = profile.len() as f64;
        let mu = profile.sum() / n;
        let var = profile.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let std = (var + STANDARDIZE_EPS).sqrt();
        let standardized = profile.mapv(|v| (v - mu) / std);
        let y = standardized.dot(&self.projection).mapv(|v| (self.gain * v).tanh());
        let norm = y.dot(&y).sqrt();
        Ok(y.iter().map(|v| v / norm).collect())
    }

    fn embed_mel_graph(&self, g: &mut Graph, mel: Var) -> Var {
        let n = g.shape(mel).1;
        let profile = g.mean_rows(mel);
        let sum = g.sum_cols(profile);
        let mu = g.scale(sum, 1.0 / n as f64);
        let mu = g.broadcast(mu, 1, n);
        let centered = g.sub(profile, mu);
        let sq = g.square(centered);
        let var = g.sum_cols(sq);
        let var = g.scale(var, 1.0 / n as f64);
        let var = g.add_scalar(var, STANDARDIZE_EPS);
        let std = g.sqrt(var);
        let std = g.broadcast(std, 1, n);
        let standardized = g.div(centered, std);
        let proj = g.constant(self.projection.clone());
        let y = g.matmul(standardized, proj);
        let y = g.scale(y, self.gain);
        let y = g.tanh(y);
        let d = g.shape(y).1;
        let sq = g.square(y);
        let norm = g.sum_cols(sq);
        let norm = g.sqrt(norm);
        let norm = g.broadcast(norm, 1, d);
        g.div(y, norm)
    }
}

/// The content provider plus an ordered list of speaker providers.
pub struct ProviderRegistry {
    mel: MelExtractor,
    content: Option<Box<dyn ContentProvider>>,
    speakers: Vec<Box<dyn SpeakerProvider>>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("content", &self.content.as_ref().map(|c| c.id().to_string()))
            .field("speakers", &self.speakers.iter().map(|s| s.id().to_string()).collect::<Vec<_>>())
            .finish()
    }
}

const SV_ROLES: [&str; 3] = ["CAM++", "ERes2Net", "ReDimNet"];
const SV_GAINS: [f64; 3] = [0.5, 1.0, 2.0];

impl ProviderRegistry {
    pub fn new(mel: MelConfig) -> Result<Self> {
        Ok(Self {
            mel: MelExtractor::new(mel)?,
            content: None,
            speakers: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    /// Default registry: synthetic content provider and one synthetic SV provider per entry of `sv_dims`.
    pub fn synthetic(seed: u64, content_dim: usize, sv_dims: &[usize]) -> Result<Self> {
        let mel = MelConfig::default();
        let n_mels = mel.n_mels;
        let mut reg = Self::new(mel)?;
        reg.set_content(Box::new(SyntheticContentProvider::new(content_dim, n_mels, seed)));
        reg.metadata.insert(
            "synthetic-content".into(),
            json!({
                "stands_in_for": "HybridFormer",
                "blocks": 12,
                "conv_kernel": 31,
                "attention_heads": 4,
                "attention_dim": 256,
                "ffn_dim": 1024,
            }),
        );
        for (i, &d) in sv_dims.iter().enumerate() {
            let id = format!("synthetic-sv-{i}");
            let gain = SV_GAINS[i % SV_GAINS.len()];
            reg.register_speaker(Box::new(SyntheticSpeakerProvider::new(
                id.clone(),
                d,
                n_mels,
                gain,
                seed.wrapping_add(1 + i as u64),
            )))?;
            reg.metadata.insert(
                id,
                json!({ "stands_in_for": SV_ROLES.get(i).copied().unwrap_or("external"), "dim": d, "gain": gain }),
            );
        }
        Ok(reg)
    }

    pub fn set_content(&mut self, provider: Box<dyn ContentProvider>) {
        self.content = Some(provider);
    }

    pub fn register_speaker(&mut self, provider: Box<dyn SpeakerProvider>) -> Result<()> {
        if self.speakers.iter().any(|s| s.id() == provider.id()) {
            return Err(Error::Config(format!("speaker provider `{}` already registered", provider.id())));
        }
        self.speakers.push(provider);
        Ok(())
    }

    pub fn mel(&self) -> &MelExtractor {
        &self.mel
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn content_dim(&self) -> Option<usize> {
        self.content.as_ref().map(|c| c.dim())
    }

    pub fn speakers(&self) -> &[Box<dyn SpeakerProvider>] {
        &self.speakers
    }

    pub fn sv_dims(&self) -> Vec<usize> {
        self.speakers.iter().map(|s| s.dim()).collect()
    }

    pub fn extract_content(&self, utt: &Utterance) -> Result<ContentFeatures> {
        let provider = self
            .content
            .as_ref()
            .ok_or_else(|| Error::Provider("content provider".into()))?;
        provider.extract(utt, &self.mel)
    }

    pub fn extract_speaker_embeddings(&self, utt: &Utterance) -> Result<Vec<TimbreEmbedding>> {
        let mel = self.mel.compute(utt.samples())?;
        self.embed_mel(&mel.frames)
    }

    /// Every registered provider applied to one log-mel sequence, in registration order.
    pub fn embed_mel(&self, mel: &Tensor) -> Result<Vec<TimbreEmbedding>> {
        if self.speakers.is_empty() {
            return Err(Error::Provider("speaker-verification provider".into()));
        }
        self.speakers
            .iter()
            .map(|p| {
                Ok(TimbreEmbedding { vector: p.embed_mel(mel)?, provider_id: p.id().to_string() })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sine(freq: f64, secs: f64) -> Utterance {
        let n = (secs * 16_000.0) as usize;
        let samples = (0..n)
            .map(|i| (0.4 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        Utterance::new("s", samples, 16_000).unwrap()
    }

    #[test]
    fn interpolation_keeps_endpoints() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]];
        let y = interpolate_frames(&x, 5);
        assert_eq!(y.row(0), x.row(0));
        assert_eq!(y.row(4), x.row(2));
        assert_eq!(y.row(1).to_vec(), vec![1.0, 2.0]);
        assert_eq!(interpolate_frames(&x, 3), x);
    }

    #[test]
    fn content_shape_follows_duration() {
        let reg = ProviderRegistry::synthetic(0, DEFAULT_CONTENT_DIM, &DEFAULT_SV_DIMS).unwrap();
        let c = reg.extract_content(&sine(300.0, 4.0)).unwrap();
        assert_eq!(c.frames.dim(), (200, 256));
        assert!(c.frames.iter().all(|v| v.is_finite()));
        let again = reg.extract_content(&sine(300.0, 4.0)).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn missing_providers_are_errors() {
        let reg = ProviderRegistry::new(MelConfig::default()).unwrap();
        assert!(matches!(reg.extract_content(&sine(200.0, 1.0)), Err(Error::Provider(_))));
        assert!(matches!(reg.extract_speaker_embeddings(&sine(200.0, 1.0)), Err(Error::Provider(_))));
    }

    #[test]
    fn duplicate_provider_ids_are_rejected() {
        let mut reg = ProviderRegistry::synthetic(0, 16, &[8]).unwrap();
        let dup = SyntheticSpeakerProvider::new("synthetic-sv-0", 8, 80, 1.0, 3);
        assert!(reg.register_speaker(Box::new(dup)).is_err());
    }

    #[test]
    fn embeddings_follow_registration_order_and_dims() {
        let reg = ProviderRegistry::synthetic(3, 32, &[192, 64, 128]).unwrap();
        let embs = reg.extract_speaker_embeddings(&sine(220.0, 1.0)).unwrap();
        assert_eq!(embs.iter().map(|e| e.dim()).collect::<Vec<_>>(), vec![192, 64, 128]);
        for (i, e) in embs.iter().enumerate() {
            assert_eq!(e.provider_id, format!("synthetic-sv-{i}"));
            let norm: f64 = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert_eq!(reg.metadata()["synthetic-content"]["conv_kernel"], 31);
    }

    #[test]
    fn graph_embedding_matches_direct_embedding() {
        let reg = ProviderRegistry::synthetic(1, 16, &[24]).unwrap();
        let mel = reg.mel().compute(sine(330.0, 0.5).samples()).unwrap().frames;
        let direct = reg.speakers()[0].embed_mel(&mel).unwrap();
        let mut g = Graph::new();
        let m = g.input(mel);
        let e = reg.speakers()[0].embed_mel_graph(&mut g, m);
        for (a, b) in g.value(e).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
