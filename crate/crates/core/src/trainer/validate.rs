use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, TrainConfig};
use crate::cfm::{cfm_loss_at, FlowSamplePoint};
use crate::error::{Error, Result};
use crate::features::{segment_reference, ProviderRegistry};
use crate::losses::secs;
use crate::model::Model;

const VALIDATION_STREAM: u64 = 0x7661_6c69;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub items: usize,
    /// Mean flow-matching loss on held-out items.
    pub l_cfm: f64,
    /// Mean cosine similarity between reference embeddings and embeddings of sampled mels.
    pub secs_mean: f64,
    /// Mean squared log-mel error of the sampled mel against the ground truth.
    pub mel_mse: f64,
}

/// Held-out metrics under teacher conditioning (content and reference from the item itself).
///
/// Takes the model by shared reference: validation never mutates parameters.
pub fn validate(model: &Model, data: &Dataset, registry: &ProviderRegistry, cfg: &TrainConfig) -> Result<ValMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("validation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(VALIDATION_STREAM);
    let (mut l_cfm, mut secs_sum, mut secs_n, mut mse) = (0.0, 0.0, 0usize, 0.0);
    for item in &data.items {
        let reference = segment_reference(&item.utterance, cfg.reference_duration_s, &mut rng);
        let refs = registry.extract_speaker_embeddings(&reference.utterance)?;
        let (h, f_t) = model.condition(&item.content, &refs)?;

        let point = FlowSamplePoint::draw(&model.normalize(&item.mel), &mut rng);
        l_cfm += cfm_loss_at(&model.field(), &point, &h.frames, &f_t.vector, &model.cfg.flow)?;

        let sampled = model.sample(&item.content, &refs, cfg.euler_steps_eval, &mut rng)?;
        mse += (&sampled - &item.mel).mapv(|d| d * d).mean().unwrap_or(0.0);
        for (r, out) in refs.iter().zip(registry.embed_mel(&sampled)?) {
            secs_sum += secs(&r.vector, &out.vector)?;
            secs_n += 1;
        }
    }
    let n = data.len() as f64;
    Ok(ValMetrics { items: data.len(), l_cfm: l_cfm / n, secs_mean: secs_sum / secs_n as f64, mel_mse: mse / n })
}
