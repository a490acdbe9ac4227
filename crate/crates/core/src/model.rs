//! The full acoustic model: CTE conditioning followed by the flow-matching vector field.
//!
//! The vector field works on normalised log-mels `(mel - mel_mean) / mel_std`; the
//! statistics are part of the configuration so checkpoints are self-describing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::cfm::{euler_sample, unet_forward, FlowSchedule, UnetConfig, VectorField};
use crate::cte::{ada_fusion_graph, condition, cte_forward, ConditioningFeatures, CteConfig, GlobalTimbre};
use crate::error::{Error, Result};
use crate::features::TimbreEmbedding;
use crate::params::{Bound, Init, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cte: CteConfig,
    pub unet: UnetConfig,
    pub flow: FlowSchedule,
    pub mel_mean: f64,
    pub mel_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_dims(crate::features::DEFAULT_CONTENT_DIM, &crate::features::DEFAULT_SV_DIMS)
    }
}

impl ModelConfig {
    /// Default widths wired to the given provider dimensions.
    pub fn for_dims(content_dim: usize, sv_dims: &[usize]) -> Self {
        let cte = CteConfig { content_dim, sv_dims: sv_dims.to_vec(), ..CteConfig::default() };
        let unet = UnetConfig { cond_dim: cte.model_dim, timbre_dim: cte.timbre_dim(), ..UnetConfig::default() };
        Self { cte, unet, flow: FlowSchedule::default(), mel_mean: -5.0, mel_std: 3.0 }
    }

    /// Reduced widths for fast experiments and tests.
    pub fn small(content_dim: usize, sv_dims: &[usize]) -> Self {
        let cte = CteConfig {
            content_dim,
            sv_dims: sv_dims.to_vec(),
            model_dim: 64,
            n_heads: 4,
            ffn_dim: 128,
            n_blocks: 2,
        };
        let unet = UnetConfig {
            cond_dim: 64,
            timbre_dim: cte.timbre_dim(),
            channels: [32, 64],
            time_emb_dim: 32,
            emb_dim: 64,
            ..UnetConfig::default()
        };
        Self { cte, unet, flow: FlowSchedule::default(), mel_mean: -5.0, mel_std: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.cte.validate()?;
        self.unet.validate()?;
        if self.unet.cond_dim != self.cte.model_dim || self.unet.timbre_dim != self.cte.timbre_dim() {
            return Err(Error::Config(format!(
                "vector field expects h of width {} and f_T of width {}, CTE provides {} and {}",
                self.unet.cond_dim,
                self.unet.timbre_dim,
                self.cte.model_dim,
                self.cte.timbre_dim()
            )));
        }
        if !(self.mel_std > 0.0 && self.mel_mean.is_finite()) {
            return Err(Error::Config("mel normalisation needs a finite mean and positive std".into()));
        }
        FlowSchedule::new(self.flow.sigma_min)?;
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        self.cte.init_params(&mut store, &mut init);
        self.unet.init_params(&mut store, &mut init);
        store
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.init_params(seed);
        Ok(Self { cfg, params })
    }

    /// Checks that `params` holds exactly the tensors `cfg` declares, with matching shapes.
    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let expected = cfg.init_params(0);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration declares {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.dim() == t.dim() => {}
                Some(p) => {
                    return Err(Error::Shape(format!("parameter {name} is {:?}, expected {:?}", p.dim(), t.dim())))
                }
                None => return Err(Error::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn n_mels(&self) -> usize {
        self.cfg.unet.n_mels
    }

    pub fn normalize(&self, mel: &Tensor) -> Tensor {
        mel.mapv(|v| (v - self.cfg.mel_mean) / self.cfg.mel_std)
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        x.mapv(|v| v * self.cfg.mel_std + self.cfg.mel_mean)
    }

    /// Conditioning sequence and global timbre for aligned content frames.
    pub fn condition(
        &self,
        content: &Tensor,
        embeddings: &[TimbreEmbedding],
    ) -> Result<(ConditioningFeatures, GlobalTimbre)> {
        condition(&self.params, &self.cfg.cte, content, embeddings)
    }

    pub fn field(&self) -> crate::cfm::VectorFieldNet<'_> {
        crate::cfm::VectorFieldNet::new(&self.cfg.unet, &self.params)
    }

    /// Euler-integrated log-mel `[content frames × n_mels]` in natural (denormalised) units.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        content: &Tensor,
        embeddings: &[TimbreEmbedding],
        steps: usize,
        rng: &mut R,
    ) -> Result<Tensor> {
        let (h, f_t) = self.condition(content, embeddings)?;
        let x = euler_sample(&self.field(), &h.frames, &f_t.vector, self.n_mels(), steps, rng)?;
        Ok(self.denormalize(&x))
    }

    /// Velocity in normalised units for already-computed conditioning.
    pub fn velocity(&self, x: &Tensor, t: f64, h: &ConditioningFeatures, f_t: &GlobalTimbre) -> Result<Tensor> {
        self.field().velocity(x, t, &h.frames, &f_t.vector)
    }
}

/// Graph nodes of one conditioned forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub f_t: Var,
    pub h: Var,
    pub v: Var,
}

/// Fusion, CTE and vector field on the tape for one item.
pub fn model_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    content: Var,
    embeddings: &[Var],
    x_t: Var,
    t: f64,
) -> Result<ForwardVars> {
    let f_t = ada_fusion_graph(g, p, embeddings)?;
    let h = cte_forward(g, p, &cfg.cte, content, f_t)?;
    let v = unet_forward(g, p, &cfg.unet, x_t, t, h, f_t)?;
    Ok(ForwardVars { f_t, h, v })
}
