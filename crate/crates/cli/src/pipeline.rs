//! The four pipeline commands as library functions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ctefm_core::autograd::Tensor;
use ctefm_core::features::{
    read_manifest, read_wav, write_manifest, write_wav, ManifestItem, ProviderRegistry, Split, TimbreEmbedding,
    DEFAULT_CONTENT_DIM, DEFAULT_SV_DIMS, PROVIDER_SEED,
};
use ctefm_core::losses::secs;
use ctefm_core::model::Model;
use ctefm_core::synth::{generate_corpus, CorpusConfig};
use ctefm_core::trainer::{
    load_checkpoint, save_checkpoint, step_rng, validate, Dataset, DatasetItem, MetricsLog, TrainConfig, TrainState,
    Trainer, ValMetrics,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocoder::Vocoder;

/// Errors that map to a specific process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("manifest not found: {0}")]
    MissingManifest(PathBuf),
    #[error("output directory {0} is not empty (pass --force to overwrite)")]
    NonEmptyDir(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingManifest(_) => 2,
            CliError::NonEmptyDir(_) => 1,
        }
    }
}

/// Exit code for any command error.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<CliError>().map_or(1, CliError::exit_code)
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::NonEmptyDir(dir.to_path_buf()).into());
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn registry_for(content_dim: usize, sv_dims: &[usize]) -> Result<ProviderRegistry> {
    Ok(ProviderRegistry::synthetic(PROVIDER_SEED, content_dim, sv_dims)?)
}

/// Registry matching a loaded model's provider dimensions.
pub fn registry_for_model(model: &Model) -> Result<ProviderRegistry> {
    registry_for(model.cfg.cte.content_dim, &model.cfg.cte.sv_dims)
}

#[derive(Clone, Debug)]
pub struct SynthCorpusArgs {
    pub n_speakers: usize,
    pub n_utts: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub force: bool,
}

/// Writes `wavs/*.wav` plus `manifest.jsonl`; returns the manifest path.
pub fn cmd_synth_corpus(args: &SynthCorpusArgs) -> Result<PathBuf> {
    ensure!(args.n_speakers >= 1 && args.n_utts >= 1, "need at least one speaker and one utterance");
    prepare_dir(&args.out_dir, args.force)?;
    let wav_dir = args.out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir)?;
    let cfg = CorpusConfig {
        n_speakers: args.n_speakers,
        n_utts: args.n_utts,
        seed: args.seed,
        ..CorpusConfig::default()
    };
    let mut items = Vec::new();
    for entry in generate_corpus(&cfg) {
        let rel = PathBuf::from("wavs").join(entry.file_name());
        write_wav(args.out_dir.join(&rel), &entry.utterance)?;
        items.push(ManifestItem { path: rel, speaker_id: entry.speaker, split: entry.split });
    }
    let manifest = args.out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &items)?;
    Ok(manifest)
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config_path: Option<PathBuf>,
    pub manifest_path: PathBuf,
    pub out_dir: PathBuf,
    pub max_iters: Option<u64>,
    pub seed: Option<u64>,
    pub resume: Option<PathBuf>,
    pub validate: bool,
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub validation: Option<ValMetrics>,
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration:07}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn load_split(manifest: &Path, split: Option<Split>) -> Result<Vec<ManifestItem>> {
    if !manifest.exists() {
        return Err(CliError::MissingManifest(manifest.to_path_buf()).into());
    }
    let items = read_manifest(manifest)?;
    Ok(match split {
        Some(s) => items.into_iter().filter(|i| i.split == s).collect(),
        None => items,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let train_items = load_split(&args.manifest_path, Some(Split::Train))?;
    let mut cfg = match &args.config_path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = args.max_iters {
        cfg.max_iters = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    prepare_dir(&args.out_dir, args.force || args.resume.is_some())?;

    let state = match &args.resume {
        Some(path) => {
            let mut st = load_checkpoint(path)?;
            st.config.max_iters = cfg.max_iters;
            st
        }
        None => {
            let registry = registry_for(DEFAULT_CONTENT_DIM, &DEFAULT_SV_DIMS)?;
            let data = Dataset::load(&train_items, &registry)?;
            TrainState::initialise(cfg.clone(), &registry, &data)?
        }
    };
    let registry = registry_for_model(&state.model)?;
    let data = Dataset::load(&train_items, &registry)?;
    log::info!(
        "training on {} utterances from iteration {} to {}",
        data.len(),
        state.iteration,
        state.config.max_iters
    );

    let metrics_path = args.out_dir.join("metrics.jsonl");
    let mut log_file = MetricsLog::open(&metrics_path)?;
    let out_dir = args.out_dir.clone();
    let until = state.config.max_iters;
    let every = state.config.checkpoint_every;
    let mut trainer = Trainer::new(state, data, &registry);
    trainer.run_until(until, |st, m| {
        log_file.append(m)?;
        if m.iter % 50 == 0 || m.iter == 1 {
            log::info!("iter {} l_cfm {:.4} l_tim {:.4} grad_norm {:.3}", m.iter, m.l_cfm, m.l_tim, m.grad_norm);
        }
        if m.iter % every == 0 {
            save_checkpoint(out_dir.join(checkpoint_name(m.iter)), st)?;
        }
        Ok(())
    })?;

    let final_checkpoint = args.out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &trainer.state)?;

    let validation = if args.validate {
        let val_items = load_split(&args.manifest_path, Some(Split::Val))?;
        let val = Dataset::load(&val_items, &registry)?;
        let v = validate(&trainer.state.model, &val, &registry, &trainer.state.config)?;
        std::fs::write(args.out_dir.join("validation.json"), serde_json::to_string_pretty(&v)?)?;
        Some(v)
    } else {
        None
    };
    Ok(TrainOutcome { final_checkpoint, metrics_path, validation })
}

#[derive(Clone, Debug)]
pub struct ConversionRequest {
    pub source_path: PathBuf,
    pub reference_path: PathBuf,
    pub output_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub euler_steps: usize,
    pub seed: u64,
}

impl ConversionRequest {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.euler_steps >= 1, "euler_steps must be >= 1");
        let paths = [&self.source_path, &self.reference_path, &self.output_path, &self.checkpoint_path];
        for (i, a) in paths.iter().enumerate() {
            for b in &paths[i + 1..] {
                if a == b && !(std::ptr::eq(*a, &self.source_path) && std::ptr::eq(*b, &self.reference_path)) {
                    bail!("conversion paths must be distinct ({} is used twice)", a.display());
                }
            }
        }
        Ok(())
    }
}

/// Converted log-mel for `source` content spoken with `reference` timbre. The whole
/// reference utterance is used.
pub fn convert_mel<R: Rng + ?Sized>(
    model: &Model,
    source: &DatasetItem,
    reference_embeddings: &[TimbreEmbedding],
    steps: usize,
    rng: &mut R,
) -> Result<Tensor> {
    Ok(model.sample(&source.content, reference_embeddings, steps, rng)?)
}

pub fn cmd_convert(req: &ConversionRequest, vocoder: &dyn Vocoder) -> Result<PathBuf> {
    req.validate()?;
    let state = load_checkpoint(&req.checkpoint_path)?;
    let model = state.model;
    let registry = registry_for_model(&model)?;
    let source = read_wav(&req.source_path).with_context(|| format!("reading {}", req.source_path.display()))?;
    let reference =
        read_wav(&req.reference_path).with_context(|| format!("reading {}", req.reference_path.display()))?;
    let source = DatasetItem::new("source", source, &registry)?;
    let refs = registry.extract_speaker_embeddings(&reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mel = convert_mel(&model, &source, &refs, req.euler_steps, &mut rng)?;
    vocoder.render(&mel, &req.output_path)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub out_report: PathBuf,
    pub pairs: usize,
    pub euler_steps: usize,
    pub seed: u64,
    /// `None` evaluates every manifest item.
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    /// Mean over pairs and providers of SECS(converted, intended reference).
    pub secs_mean: f64,
    pub secs_per_provider: BTreeMap<String, f64>,
    /// Mean log-mel MSE of teacher-conditioned reconstructions.
    pub mel_mse_teacher: f64,
    /// Mean SECS(converted, distractor reference from a third speaker).
    pub secs_distractor_mean: f64,
    /// Fraction of pairs where the intended reference is closer than the distractor.
    pub directionality_rate: f64,
    pub euler_steps: usize,
    pub seed: u64,
}

/// Something that renders a log-mel from a source item and reference embeddings.
pub trait Converter {
    fn convert(&self, source: &DatasetItem, reference: &EvalItem, pair_rng: &mut ChaCha8Rng) -> Result<Tensor>;
}

/// An evaluation utterance with its full-utterance speaker embeddings.
pub struct EvalItem {
    pub data: DatasetItem,
    pub embeddings: Vec<TimbreEmbedding>,
}

pub struct ModelConverter<'a> {
    pub model: &'a Model,
    pub steps: usize,
}

impl Converter for ModelConverter<'_> {
    fn convert(&self, source: &DatasetItem, reference: &EvalItem, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        convert_mel(self.model, source, &reference.embeddings, self.steps, rng)
    }
}

fn mean_secs(a: &[TimbreEmbedding], b: &[TimbreEmbedding]) -> Result<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| Ok(secs(&x.vector, &y.vector)?)).collect()
}

pub fn load_eval_items(items: &[ManifestItem], registry: &ProviderRegistry) -> Result<Vec<EvalItem>> {
    let data = Dataset::load(items, registry)?;
    data.items
        .into_iter()
        .map(|d| {
            let embeddings = registry.extract_speaker_embeddings(&d.utterance)?;
            Ok(EvalItem { data: d, embeddings })
        })
        .collect()
}

/// Random (source, reference, distractor) triples with three distinct speakers when
/// available; the distractor always differs in speaker from the reference.
pub fn evaluate_pairs(
    items: &[EvalItem],
    registry: &ProviderRegistry,
    converter: &dyn Converter,
    pairs: usize,
    euler_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut speakers: Vec<&str> = items.iter().map(|i| i.data.speaker_id.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    ensure!(speakers.len() >= 2, "evaluation needs at least 2 speakers, found {}", speakers.len());
    ensure!(pairs >= 1, "evaluation needs at least one pair");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let provider_ids: Vec<String> = registry.speakers().iter().map(|s| s.id().to_string()).collect();
    let mut per_provider = vec![0.0; provider_ids.len()];
    let (mut secs_sum, mut distractor_sum, mut wins) = (0.0, 0.0, 0usize);
    for p in 0..pairs {
        let src = &items[rng.random_range(0..items.len())];
        let others: Vec<&EvalItem> = items.iter().filter(|i| i.data.speaker_id != src.data.speaker_id).collect();
        let reference = others[rng.random_range(0..others.len())];
        let third: Vec<&EvalItem> = items
            .iter()
            .filter(|i| i.data.speaker_id != reference.data.speaker_id && i.data.speaker_id != src.data.speaker_id)
            .collect();
        let pool: Vec<&EvalItem> = if third.is_empty() {
            items.iter().filter(|i| i.data.speaker_id != reference.data.speaker_id).collect()
        } else {
            third
        };
        let distractor = pool[rng.random_range(0..pool.len())];

        let mut pair_rng = step_rng(seed, p as u64 + 1);
        let mel = converter.convert(&src.data, reference, &mut pair_rng)?;
        let out = registry.embed_mel(&mel)?;
        let to_ref = mean_secs(&out, &reference.embeddings)?;
        let to_distractor = mean_secs(&out, &distractor.embeddings)?;
        for (acc, s) in per_provider.iter_mut().zip(&to_ref) {
            *acc += s;
        }
        let r = to_ref.iter().sum::<f64>() / to_ref.len() as f64;
        let d = to_distractor.iter().sum::<f64>() / to_distractor.len() as f64;
        secs_sum += r;
        distractor_sum += d;
        if r > d {
            wins += 1;
        }
    }

    let mut mse = 0.0;
    for (k, item) in items.iter().enumerate() {
        let mut rng = step_rng(seed ^ 0x7465_6163, k as u64);
        let mel = converter.convert(&item.data, item, &mut rng)?;
        mse += (&mel - &item.data.mel).mapv(|d| d * d).mean().unwrap_or(0.0);
    }

    let n = pairs as f64;
    Ok(EvalReport {
        pairs,
        secs_mean: secs_sum / n,
        secs_per_provider: provider_ids.into_iter().zip(per_provider.into_iter().map(|s| s / n)).collect(),
        mel_mse_teacher: mse / items.len() as f64,
        secs_distractor_mean: distractor_sum / n,
        directionality_rate: wins as f64 / n,
        euler_steps,
        seed,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let items = load_split(&args.manifest, args.split)?;
    let model = load_checkpoint(&args.checkpoint)?.model;
    let registry = registry_for_model(&model)?;
    let eval_items = load_eval_items(&items, &registry)?;
    let converter = ModelConverter { model: &model, steps: args.euler_steps };
    let report = evaluate_pairs(&eval_items, &registry, &converter, args.pairs, args.euler_steps, args.seed)?;
    std::fs::write(&args.out_report, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", args.out_report.display()))?;
    Ok(report)
}
