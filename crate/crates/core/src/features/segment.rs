use rand::Rng;

use super::Utterance;

/// Reference length drawn from each training utterance, in seconds.
pub const REFERENCE_SECONDS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSegment {
    pub utterance: Utterance,
    pub offset: usize,
    /// Set when the source was shorter than the request and was returned whole.
    pub short_reference: bool,
}

/// Uniformly placed window of `duration_s` seconds. Short inputs come back whole and flagged.
pub fn segment_reference<R: Rng + ?Sized>(utt: &Utterance, duration_s: f64, rng: &mut R) -> ReferenceSegment {
    let want = (duration_s * utt.sample_rate() as f64).round() as usize;
    if want == 0 || utt.len() < want {
        return ReferenceSegment { utterance: utt.clone(), offset: 0, short_reference: true };
    }
    let offset = rng.random_range(0..=utt.len() - want);
    let samples = utt.samples()[offset..offset + want].to_vec();
    let utterance = Utterance::new(format!("{}@{offset}", utt.id()), samples, utt.sample_rate())
        .expect("a window of a valid utterance is valid");
    ReferenceSegment { utterance, offset, short_reference: false }
}
