use rand::Rng;

use super::TrainConfig;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::features::{read_wav, segment_reference, ManifestItem, ProviderRegistry, TimbreEmbedding, Utterance};

/// An utterance with its deterministic features precomputed.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub id: String,
    pub speaker_id: String,
    pub utterance: Utterance,
    /// Log-mel `[T × n_mels]`.
    pub mel: Tensor,
    /// Content features aligned to the mel frames, `[T × D]`.
    pub content: Tensor,
}

impl DatasetItem {
    pub fn new(speaker_id: impl Into<String>, utterance: Utterance, registry: &ProviderRegistry) -> Result<Self> {
        let mel = registry.mel().compute(utterance.samples())?.frames;
        let content = registry.extract_content(&utterance)?.aligned_to(mel.nrows());
        Ok(Self { id: utterance.id().to_string(), speaker_id: speaker_id.into(), utterance, mel, content })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    /// Reads every manifest item; unreadable or unusable files are skipped with a warning.
    pub fn load(items: &[ManifestItem], registry: &ProviderRegistry) -> Result<Self> {
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match read_wav(&item.path).and_then(|u| DatasetItem::new(item.speaker_id.clone(), u, registry)) {
                Ok(mut d) => {
                    d.id = item.path.display().to_string();
                    out.push(d);
                }
                Err(e) => log::warn!("skipping {}: {e}", item.path.display()),
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyDataset(format!("none of {} manifest items could be loaded", items.len())));
        }
        Ok(Self { items: out })
    }

    pub fn from_items(items: Vec<DatasetItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyDataset("no items".into()));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mean and standard deviation over every log-mel element.
    pub fn mel_stats(&self) -> (f64, f64) {
        let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
        for it in &self.items {
            for &v in it.mel.iter() {
                n += 1.0;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        (mean, (sq / n - mean * mean).max(1e-12).sqrt())
    }

    /// Batch of the given items: optional random crop, then a reference segment of the
    /// same utterance for the speaker embeddings.
    pub fn batch<R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        registry: &ProviderRegistry,
        rng: &mut R,
        cfg: &TrainConfig,
    ) -> Result<TrainBatch> {
        let mut items = Vec::with_capacity(indices.len());
        for &i in indices {
            let it = self.items.get(i).ok_or_else(|| Error::Config(format!("batch index {i} out of range")))?;
            let frames = it.mel.nrows();
            let (start, len) = if cfg.crop_frames > 0 && frames > cfg.crop_frames {
                (rng.random_range(0..=frames - cfg.crop_frames), cfg.crop_frames)
            } else {
                (0, frames)
            };
            let reference = segment_reference(&it.utterance, cfg.reference_duration_s, rng);
            match registry.extract_speaker_embeddings(&reference.utterance) {
                Ok(embs) => items.push(BatchItem {
                    id: it.id.clone(),
                    mel: it.mel.slice(ndarray::s![start..start + len, ..]).to_owned(),
                    content: it.content.slice(ndarray::s![start..start + len, ..]).to_owned(),
                    ref_embeddings: embs,
                }),
                Err(e) => log::warn!("skipping {} in batch: {e}", it.id),
            }
        }
        TrainBatch::from_items(items)
    }
}

/// One unpadded training example.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub id: String,
    pub mel: Tensor,
    pub content: Tensor,
    /// Speaker embeddings of the reference segment: the conditioning input and the
    /// timbre-loss target.
    pub ref_embeddings: Vec<TimbreEmbedding>,
}

/// Right-padded batch with a `[B × T_max]` validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub ids: Vec<String>,
    pub mels: Vec<Tensor>,
    pub contents: Vec<Tensor>,
    pub mask: Tensor,
    pub ref_embeddings: Vec<Vec<TimbreEmbedding>>,
}

impl TrainBatch {
    pub fn from_items(items: Vec<BatchItem>) -> Result<Self> {
        Self::padded_to(items, 0)
    }

    /// Pads every item to `max(min_frames, longest item)`.
    pub fn padded_to(items: Vec<BatchItem>, min_frames: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let t_max = items.iter().map(|i| i.mel.nrows()).max().unwrap_or(0).max(min_frames);
        let mut mask = Tensor::zeros((items.len(), t_max));
        let mut out = TrainBatch { ids: vec![], mels: vec![], contents: vec![], mask: Tensor::zeros((0, 0)), ref_embeddings: vec![] };
        for (b, it) in items.into_iter().enumerate() {
            let t = it.mel.nrows();
            if it.content.nrows() != t {
                return Err(Error::Shape(format!("{}: {} mel frames vs {} content frames", it.id, t, it.content.nrows())));
            }
            mask.row_mut(b).slice_mut(ndarray::s![..t]).fill(1.0);
            let mut mel = Tensor::zeros((t_max, it.mel.ncols()));
            mel.slice_mut(ndarray::s![..t, ..]).assign(&it.mel);
            let mut content = Tensor::zeros((t_max, it.content.ncols()));
            content.slice_mut(ndarray::s![..t, ..]).assign(&it.content);
            out.ids.push(it.id);
            out.mels.push(mel);
            out.contents.push(content);
            out.ref_embeddings.push(it.ref_embeddings);
        }
        out.mask = mask;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of valid frames per item.
    pub fn valid_lengths(&self) -> Vec<usize> {
        self.mask.rows().into_iter().map(|r| r.sum() as usize).collect()
    }
}

/// Loads `items` and batches all of them once.
pub fn build_batch<R: Rng + ?Sized>(
    items: &[ManifestItem],
    registry: &ProviderRegistry,
    rng: &mut R,
    cfg: &TrainConfig,
) -> Result<TrainBatch> {
    let data = Dataset::load(items, registry).map_err(|e| match e {
        Error::EmptyDataset(_) => Error::EmptyBatch,
        other => other,
    })?;
    let indices: Vec<usize> = (0..data.len()).collect();
    data.batch(&indices, registry, rng, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{write_wav, Split};
    use crate::synth::{synth_utterance, SpeakerProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn registry() -> ProviderRegistry {
        ProviderRegistry::synthetic(0, 16, &[8, 8, 8]).unwrap()
    }

    fn item(frames: usize) -> BatchItem {
        BatchItem {
            id: format!("i{frames}"),
            mel: Tensor::from_elem((frames, 80), -3.0),
            content: Tensor::from_elem((frames, 16), 0.5),
            ref_embeddings: vec![],
        }
    }

    #[test]
    fn padding_contract() {
        let b = TrainBatch::from_items(vec![item(200), item(150)]).unwrap();
        assert_eq!(b.valid_lengths(), vec![200, 150]);
        assert_eq!(b.mels[1].dim(), (200, 80));
        assert!(b.mels[1].slice(ndarray::s![150.., ..]).iter().all(|&v| v == 0.0));
        assert!(matches!(TrainBatch::from_items(vec![]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn unreadable_items_are_skipped_and_batches_are_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.wav");
        write_wav(&good, &synth_utterance(&SpeakerProfile::new(0, 0), 1, 1.2)).unwrap();
        let missing = dir.path().join("missing.wav");
        let items = vec![
            ManifestItem { path: good, speaker_id: "spk000".into(), split: Split::Train },
            ManifestItem { path: missing.clone(), speaker_id: "spk001".into(), split: Split::Train },
        ];
        let reg = registry();
        let cfg = TrainConfig { crop_frames: 30, ..TrainConfig::default() };
        let a = build_batch(&items, &reg, &mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let b = build_batch(&items, &reg, &mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert_eq!(a.valid_lengths(), vec![30]);
        let only_missing = vec![ManifestItem { path: missing, speaker_id: "x".into(), split: Split::Train }];
        assert!(matches!(
            build_batch(&only_missing, &reg, &mut ChaCha8Rng::seed_from_u64(5), &cfg),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn reference_comes_from_the_source_utterance() {
        let reg = registry();
        let utt = synth_utterance(&SpeakerProfile::new(0, 3), 2, 5.0);
        let data = Dataset::from_items(vec![DatasetItem::new("spk003", utt.clone(), &reg).unwrap()]).unwrap();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = data.batch(&[0], &reg, &mut rng, &cfg).unwrap();
        // replay the draw: the embeddings must be those of a segment of the same waveform
        let mut replay = ChaCha8Rng::seed_from_u64(8);
        let seg = segment_reference(&utt, cfg.reference_duration_s, &mut replay);
        assert_eq!(batch.ref_embeddings[0], reg.extract_speaker_embeddings(&seg.utterance).unwrap());
        assert_eq!(batch.mels[0], data.items[0].mel);
    }
}
