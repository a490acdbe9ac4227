use rand::Rng;

use super::{adamw_step, clip_grad_norm, AdamState, StepMetrics, TrainBatch, TrainConfig};
use crate::autograd::{Graph, Tensor};
use crate::cfm::{gaussian_like, ot_flow, target_vector};
use crate::error::{Error, Result};
use crate::features::SpeakerProvider;
use crate::losses::{timbre_loss_graph, LossWeights, SsimConstants};
use crate::model::{model_forward, Model};
use crate::params::ParamStore;

/// Flow time and noise for one batch item (valid frames only).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraw {
    pub t: f64,
    pub x0: Tensor,
}

/// Per item: `t ~ U[0, 1]`, then `x0 ~ N(0, I)` over the valid frames.
pub fn draw_flow<R: Rng + ?Sized>(batch: &TrainBatch, n_mels: usize, rng: &mut R) -> Vec<FlowDraw> {
    batch
        .valid_lengths()
        .into_iter()
        .map(|len| {
            let t = rng.random::<f64>();
            FlowDraw { t, x0: gaussian_like((len, n_mels), rng) }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub l_cfm: f64,
    pub l_tim: f64,
    pub l_total: f64,
}

/// Joint objective of one batch and (optionally) its parameter gradients.
///
/// `l_cfm` is the squared error averaged over valid elements of the whole batch. The
/// timbre term embeds the one-step data estimate `x̂1 = x_t + (1 − t)·v` with each
/// speaker provider and compares it with the reference embeddings; it is averaged over
/// items. Each item gets its own tape and the gradients are summed, which is exact
/// because the objective is a sum of per-item terms.
pub fn batch_loss(
    model: &Model,
    speakers: &[Box<dyn SpeakerProvider>],
    batch: &TrainBatch,
    draws: &[FlowDraw],
    weights: &LossWeights,
    want_grads: bool,
) -> Result<(LossParts, Option<ParamStore>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if draws.len() != batch.len() {
        return Err(Error::Shape(format!("{} flow draws for {} items", draws.len(), batch.len())));
    }
    let n_mels = model.n_mels();
    let lengths = batch.valid_lengths();
    let count = (lengths.iter().sum::<usize>() * n_mels) as f64;
    let n_items = batch.len() as f64;
    let sched = model.cfg.flow;
    let ssim_k = SsimConstants::default();
    let mut grads = want_grads.then(|| model.params.zeros_like());
    let (mut sq_total, mut tim_total) = (0.0, 0.0);

    for (b, draw) in draws.iter().enumerate() {
        let len = lengths[b];
        let mel = batch.mels[b].slice(ndarray::s![..len, ..]);
        let x1 = model.normalize(&mel.to_owned());
        let content = batch.contents[b].slice(ndarray::s![..len, ..]).to_owned();
        let refs = &batch.ref_embeddings[b];
        if refs.len() != speakers.len() {
            return Err(Error::Shape(format!("{} reference embeddings for {} providers", refs.len(), speakers.len())));
        }
        let x_t = ot_flow(draw.t, &x1, &draw.x0, &sched)?;
        let target = target_vector(&draw.x0, &x1, &sched)?;

        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let c = g.constant(content);
        let embs: Vec<_> = refs.iter().map(|e| g.constant(row(&e.vector))).collect();
        let xt = g.constant(x_t);
        let fwd = model_forward(&mut g, &p, &model.cfg, c, &embs, xt, draw.t)?;

        let tv = g.constant(target);
        let diff = g.sub(fwd.v, tv);
        let sq = g.square(diff);
        let sq_sum = g.sum_all(sq);

        let step = g.scale(fwd.v, 1.0 - draw.t);
        let x1_hat = g.add(xt, step);
        let mel_hat = g.scale(x1_hat, model.cfg.mel_std);
        let mel_hat = g.add_scalar(mel_hat, model.cfg.mel_mean);
        let convs: Vec<_> = speakers.iter().map(|s| s.embed_mel_graph(&mut g, mel_hat)).collect();
        let tim = timbre_loss_graph(&mut g, &embs, &convs, &ssim_k)?;

        let sq_v = g.scalar(sq_sum);
        let tim_v = g.scalar(tim);
        if !(sq_v.is_finite() && tim_v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite loss; batch ids: {}", batch.ids.join(", "))));
        }
        sq_total += sq_v;
        tim_total += tim_v;

        if let Some(acc) = grads.as_mut() {
            let a = g.scale(sq_sum, 1.0 / count);
            let b_ = g.scale(tim, weights.lambda_tim / n_items);
            let obj = g.add(a, b_);
            let item_grads = g.backward(obj);
            for (name, &var) in p.iter() {
                if let (Some(gr), Some(dst)) = (item_grads.get(var), acc.get_mut(name)) {
                    *dst += gr;
                }
            }
        }
    }

    let l_cfm = sq_total / count;
    let l_tim = tim_total / n_items;
    let parts = LossParts { l_cfm, l_tim, l_total: l_cfm + weights.lambda_tim * l_tim };
    Ok((parts, grads))
}

fn row(v: &[f64]) -> Tensor {
    Tensor::from_shape_vec((1, v.len()), v.to_vec()).expect("row")
}

/// Effective timbre weight at `iteration` (1-based), honouring the warm-up.
pub fn loss_weights(cfg: &TrainConfig, iteration: u64) -> LossWeights {
    let lambda_tim = if iteration > cfg.tim_warmup_iters { cfg.lambda_tim } else { 0.0 };
    LossWeights { lambda_tim }
}

/// One optimisation step on a prepared batch; `rng` supplies the flow draws.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    opt: &mut AdamState,
    speakers: &[Box<dyn SpeakerProvider>],
    batch: &TrainBatch,
    cfg: &TrainConfig,
    iteration: u64,
    rng: &mut R,
) -> Result<StepMetrics> {
    let start = std::time::Instant::now();
    if !model.params.all_finite() {
        return Err(Error::Diverged(format!("non-finite parameters before iteration {iteration}")));
    }
    let draws = draw_flow(batch, model.n_mels(), rng);
    let weights = loss_weights(cfg, iteration);
    let (parts, grads) = batch_loss(model, speakers, batch, &draws, &weights, true)?;
    let mut grads = grads.expect("requested");
    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::Diverged(format!("non-finite gradient; batch ids: {}", batch.ids.join(", "))));
    }
    adamw_step(&mut model.params, &grads, opt, cfg);
    Ok(StepMetrics {
        iter: iteration,
        l_cfm: parts.l_cfm,
        l_tim: parts.l_tim,
        l_total: parts.l_total,
        grad_norm,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
