//! Shared fixtures for the benchmarks.

use ctefm_core::features::{ProviderRegistry, DEFAULT_CONTENT_DIM, DEFAULT_SV_DIMS, PROVIDER_SEED};
use ctefm_core::synth::{synth_utterance, SpeakerProfile};
use ctefm_core::trainer::{Dataset, DatasetItem};

pub fn registry() -> ProviderRegistry {
    ProviderRegistry::synthetic(PROVIDER_SEED, DEFAULT_CONTENT_DIM, &DEFAULT_SV_DIMS).expect("synthetic providers")
}

/// `speakers` one-utterance speakers of `duration_s` seconds each.
pub fn dataset(registry: &ProviderRegistry, speakers: usize, duration_s: f64) -> Dataset {
    let items = (0..speakers)
        .map(|s| {
            let utt = synth_utterance(&SpeakerProfile::new(0, s), s as u64, duration_s);
            DatasetItem::new(format!("spk{s:03}"), utt, registry).expect("features")
        })
        .collect();
    Dataset::from_items(items).expect("non-empty")
}
