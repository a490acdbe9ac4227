//! Deterministic multi-speaker corpus: harmonic "syllables" shaped by a per-speaker
//! spectral envelope and a speaker-independent vowel inventory.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{Split, Utterance, SAMPLE_RATE};

const N_VOWELS: usize = 8;
const MAX_HARMONIC_HZ: f64 = 7_600.0;
const BLOCK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
struct Bump {
    log_center: f64,
    log_width: f64,
    gain: f64,
}

impl Bump {
    fn at(&self, log_f: f64) -> f64 {
        let z = (log_f - self.log_center) / self.log_width;
        self.gain * (-0.5 * z * z).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0: f64,
    tilt: f64,
    formants: Vec<Bump>,
}

impl SpeakerProfile {
    pub fn new(corpus_seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed.wrapping_mul(0x9E37_79B9).wrapping_add(index as u64 + 1));
        let n_formants = rng.random_range(3..=5);
        let formants = (0..n_formants)
            .map(|_| Bump {
                log_center: rng.random_range(150f64.ln()..6_000f64.ln()),
                log_width: rng.random_range(0.12..0.35),
                gain: rng.random_range(1.5..4.0),
            })
            .collect();
        Self {
            id: format!("spk{index:03}"),
            f0: rng.random_range(90.0..240.0),
            tilt: rng.random_range(0.3..1.0),
            formants,
        }
    }

    /// Log amplitude of the speaker's envelope at `hz`.
    pub fn log_envelope(&self, hz: f64) -> f64 {
        let lf = hz.ln();
        self.formants.iter().map(|b| b.at(lf)).sum::<f64>() - self.tilt * (hz / 100.0).ln()
    }
}

fn vowel_inventory() -> Vec<[Bump; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0A_E10);
    (0..N_VOWELS)
        .map(|_| {
            let mut b = || Bump {
                log_center: rng.random_range(300f64.ln()..3_000f64.ln()),
                log_width: rng.random_range(0.1..0.25),
                gain: rng.random_range(-0.6..0.6),
            };
            [b(), b()]
        })
        .collect()
}

/// Renders one utterance of `duration_s` seconds for `speaker`; `utt_seed` fixes the content.
pub fn synth_utterance(speaker: &SpeakerProfile, utt_seed: u64, duration_s: f64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);
    let vowels = vowel_inventory();
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0f64; n];

    let mut pos = rng.random_range(0.02..0.08) * sr;
    while (pos as usize) < n {
        let len = (rng.random_range(0.12..0.30) * sr) as usize;
        let start = pos as usize;
        let end = (start + len).min(n);
        let vowel = &vowels[rng.random_range(0..N_VOWELS)];
        let f_start = speaker.f0 * rng.random_range(0.9..1.1);
        let f_end = speaker.f0 * rng.random_range(0.9..1.1);
        let loud = rng.random_range(0.6..1.0);

        let n_harm = (MAX_HARMONIC_HZ / f_start.max(f_end)).floor() as usize;
        // per-harmonic phasors, advanced by a rotation refreshed every block
        let mut phasors: Vec<(f64, f64)> = (0..n_harm)
            .map(|_| {
                let ph = rng.random_range(0.0..2.0 * PI);
                (ph.cos(), ph.sin())
            })
            .collect();
        let mut amps = vec![0.0; n_harm];
        let mut rots = vec![(1.0, 0.0); n_harm];
        let span = (end - start).max(1) as f64;
        for (i, sample) in out[start..end].iter_mut().enumerate() {
            let frac = i as f64 / span;
            if i % BLOCK == 0 {
                let f0 = f_start + (f_end - f_start) * (frac + 0.5 * BLOCK as f64 / span).min(1.0);
                for k in 0..n_harm {
                    let hz = f0 * (k + 1) as f64;
                    let lf = hz.ln();
                    amps[k] = (speaker.log_envelope(hz) + vowel[0].at(lf) + vowel[1].at(lf)).exp();
                    let w = 2.0 * PI * hz / sr;
                    rots[k] = (w.cos(), w.sin());
                    let (c, s) = phasors[k];
                    let norm = (c * c + s * s).sqrt();
                    phasors[k] = (c / norm, s / norm);
                }
            }
            let env = (PI * frac).sin().powi(2) * loud;
            let mut acc = 0.0;
            for k in 0..n_harm {
                let (c, s) = phasors[k];
                acc += amps[k] * s;
                let (rc, rs) = rots[k];
                phasors[k] = (c * rc - s * rs, c * rs + s * rc);
            }
            *sample += env * acc;
        }
        pos += len as f64 + rng.random_range(0.03..0.10) * sr;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let noise = Normal::new(0.0, 0.002).unwrap();
    let samples = out
        .iter()
        .map(|v| (0.5 * v / peak + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32)
        .collect();
    Utterance::new(format!("{}_{utt_seed:x}", speaker.id), samples, SAMPLE_RATE).expect("valid synthetic audio")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub n_utts: usize,
    pub seed: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Trailing utterances per speaker assigned to the validation split.
    pub val_per_speaker: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_speakers: 10, n_utts: 10, seed: 0, min_duration_s: 4.5, max_duration_s: 5.5, val_per_speaker: 2 }
    }
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub speaker: String,
    pub index: usize,
    pub split: Split,
    pub utterance: Utterance,
}

impl CorpusEntry {
    pub fn file_name(&self) -> String {
        format!("{}_{:03}.wav", self.speaker, self.index)
    }
}

/// Every utterance of the corpus in speaker-major order.
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<CorpusEntry> {
    let mut entries = Vec::with_capacity(cfg.n_speakers * cfg.n_utts);
    for s in 0..cfg.n_speakers {
        let profile = SpeakerProfile::new(cfg.seed, s);
        let mut dur_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xD0_0000 + s as u64));
        for u in 0..cfg.n_utts {
            let duration = if cfg.max_duration_s > cfg.min_duration_s {
                dur_rng.random_range(cfg.min_duration_s..cfg.max_duration_s)
            } else {
                cfg.min_duration_s
            };
            let utt_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((s * 10_000 + u) as u64);
            let split = if u + cfg.val_per_speaker >= cfg.n_utts && cfg.n_utts > cfg.val_per_speaker {
                Split::Val
            } else {
                Split::Train
            };
            entries.push(CorpusEntry {
                speaker: profile.id.clone(),
                index: u,
                split,
                utterance: synth_utterance(&profile, utt_seed, duration),
            });
        }
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic() {
        let p = SpeakerProfile::new(7, 2);
        let a = synth_utterance(&p, 11, 0.5);
        let b = synth_utterance(&p, 11, 0.5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8_000);
        assert!(a.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn splits_hold_out_trailing_utterances() {
        let cfg = CorpusConfig { n_speakers: 2, n_utts: 4, min_duration_s: 0.3, max_duration_s: 0.4, ..Default::default() };
        let c = generate_corpus(&cfg);
        assert_eq!(c.len(), 8);
        let val: Vec<_> = c.iter().filter(|e| e.split == Split::Val).map(|e| e.index).collect();
        assert_eq!(val, vec![2, 3, 2, 3]);
    }
}
