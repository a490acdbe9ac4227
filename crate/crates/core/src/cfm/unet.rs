//! 1-D U-Net vector field over mel frames.
//!
//! The network sees `concat(x_t, h)` per frame and is conditioned on the flow time
//! (sinusoidal embedding through a two-layer MLP) plus a projection of the global
//! timbre vector; their sum is injected into every residual block.
//!
//! ```text
//! in  -> down0 ─────────────────────────────┐
//!          └ pool -> down1 ───────────┐     │
//!                     └ pool -> mid -> up1(+skip) -> up0(+skip) -> out
//! ```
//!
//! Each residual block is `conv3 -> +emb -> LN -> SiLU -> conv3`, plus a 1×1 projection
//! of the input when the width changes.

use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{add_layer_norm, add_linear, layer_norm, linear, Bound, Init, ParamStore};

const TIME_SCALE: f64 = 1000.0;
const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub n_mels: usize,
    /// Width of the conditioning sequence `h`.
    pub cond_dim: usize,
    /// Width of the global timbre vector.
    pub timbre_dim: usize,
    /// Channel widths of the two resolution levels.
    pub channels: [usize; 2],
    pub time_emb_dim: usize,
    pub emb_dim: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { n_mels: 80, cond_dim: 256, timbre_dim: 576, channels: [128, 256], time_emb_dim: 128, emb_dim: 256 }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.cond_dim == 0 || self.timbre_dim == 0 || self.emb_dim == 0 {
            return Err(Error::Config("vector field dimensions must be positive".into()));
        }
        if self.channels.contains(&0) || self.time_emb_dim < 2 || !self.time_emb_dim.is_multiple_of(2) {
            return Err(Error::Config("channel widths must be positive and the time embedding even".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> [(&'static str, usize, usize); 5] {
        let [c0, c1] = self.channels;
        [
            ("cfm.down0", self.n_mels + self.cond_dim, c0),
            ("cfm.down1", c0, c1),
            ("cfm.mid", c1, c1),
            ("cfm.up1", 2 * c1, c1),
            ("cfm.up0", c1 + c0, c0),
        ]
    }

    /// Registers every vector-field parameter under the `cfm.` prefix.
    pub fn init_params(&self, store: &mut ParamStore, init: &mut Init) {
        add_linear(store, init, "cfm.time.l1", self.time_emb_dim, self.emb_dim);
        add_linear(store, init, "cfm.time.l2", self.emb_dim, self.emb_dim);
        add_linear(store, init, "cfm.timbre", self.timbre_dim, self.emb_dim);
        for (pre, cin, cout) in self.blocks() {
            add_linear(store, init, &format!("{pre}.conv1"), KERNEL * cin, cout);
            add_linear(store, init, &format!("{pre}.emb"), self.emb_dim, cout);
            add_layer_norm(store, init, &format!("{pre}.ln"), cout);
            add_linear(store, init, &format!("{pre}.conv2"), KERNEL * cout, cout);
            if cin != cout {
                add_linear(store, init, &format!("{pre}.skip"), cin, cout);
            }
        }
        // zero output layer: the untrained field predicts v = 0
        store.insert("cfm.out.w", init.zeros(self.channels[0], self.n_mels));
        store.insert("cfm.out.b", init.zeros(1, self.n_mels));
    }
}

/// `[sin(s·t·ω_i), cos(s·t·ω_i)]` with `ω_i = 10000^(-i/half)` and `s = 1000`.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Tensor::zeros((1, dim));
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = TIME_SCALE * t * freq;
        out[[0, i]] = a.sin();
        out[[0, half + i]] = a.cos();
    }
    out
}

fn conv(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    let cols = g.unfold(x, KERNEL, KERNEL / 2);
    linear(g, p, prefix, cols)
}

fn res_block(g: &mut Graph, p: &Bound, prefix: &str, x: Var, emb: Var, widen: bool) -> Var {
    let h = conv(g, p, &format!("{prefix}.conv1"), x);
    let e = linear(g, p, &format!("{prefix}.emb"), emb);
    let h = g.add_row(h, e);
    let h = layer_norm(g, p, &format!("{prefix}.ln"), h);
    let h = g.silu(h);
    let h = conv(g, p, &format!("{prefix}.conv2"), h);
    let skip = if widen { linear(g, p, &format!("{prefix}.skip"), x) } else { x };
    g.add(h, skip)
}

/// Graph forward: `x_t [T × n_mels]`, `h [T × cond_dim]`, `f_t [1 × timbre_dim]` to `v [T × n_mels]`.
pub fn unet_forward(g: &mut Graph, p: &Bound, cfg: &UnetConfig, x_t: Var, t: f64, h: Var, f_t: Var) -> Result<Var> {
    let (frames, mels) = g.shape(x_t);
    if mels != cfg.n_mels || frames == 0 {
        return Err(Error::Shape(format!("x_t is {:?}, expected [T × {}]", (frames, mels), cfg.n_mels)));
    }
    if g.shape(h) != (frames, cfg.cond_dim) {
        return Err(Error::Shape(format!("h is {:?}, expected {:?}", g.shape(h), (frames, cfg.cond_dim))));
    }
    if g.shape(f_t) != (1, cfg.timbre_dim) {
        return Err(Error::Shape(format!("f_T is {:?}, expected [1 × {}]", g.shape(f_t), cfg.timbre_dim)));
    }

    let temb = g.constant(sinusoidal_embedding(t, cfg.time_emb_dim));
    let e = linear(g, p, "cfm.time.l1", temb);
    let e = g.silu(e);
    let e = linear(g, p, "cfm.time.l2", e);
    let timbre = linear(g, p, "cfm.timbre", f_t);
    let emb = g.add(e, timbre);
    let emb = g.silu(emb);

    let widen: Vec<bool> = cfg.blocks().iter().map(|(_, cin, cout)| cin != cout).collect();
    let x = g.concat_cols(&[x_t, h]);
    let d0 = res_block(g, p, "cfm.down0", x, emb, widen[0]);
    let p0 = g.avg_pool2(d0);
    let d1 = res_block(g, p, "cfm.down1", p0, emb, widen[1]);
    let p1 = g.avg_pool2(d1);
    let m = res_block(g, p, "cfm.mid", p1, emb, widen[2]);
    let u1 = g.upsample2(m, g.shape(d1).0);
    let u1 = g.concat_cols(&[u1, d1]);
    let u1 = res_block(g, p, "cfm.up1", u1, emb, widen[3]);
    let u0 = g.upsample2(u1, frames);
    let u0 = g.concat_cols(&[u0, d0]);
    let u0 = res_block(g, p, "cfm.up0", u0, emb, widen[4]);
    Ok(linear(g, p, "cfm.out", u0))
}

/// The U-Net bound to a parameter store, usable wherever a [`VectorField`] is expected.
#[derive(Clone, Copy, Debug)]
pub struct VectorFieldNet<'a> {
    pub cfg: &'a UnetConfig,
    pub params: &'a ParamStore,
}

impl<'a> VectorFieldNet<'a> {
    pub fn new(cfg: &'a UnetConfig, params: &'a ParamStore) -> Self {
        Self { cfg, params }
    }
}

impl VectorField for VectorFieldNet<'_> {
    fn velocity(&self, x: &Tensor, t: f64, h: &Tensor, f_t: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let xv = g.constant(x.clone());
        let hv = g.constant(h.clone());
        let fv = g.constant(Tensor::from_shape_vec((1, f_t.len()), f_t.to_vec()).expect("row"));
        let out = unet_forward(&mut g, &p, self.cfg, xv, t, hv, fv)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> UnetConfig {
        UnetConfig { n_mels: 4, cond_dim: 3, timbre_dim: 5, channels: [6, 8], time_emb_dim: 8, emb_dim: 6 }
    }

    fn random_store(cfg: &UnetConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        cfg.init_params(&mut store, &mut Init::new(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for (_, t) in store.iter_mut() {
            t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
        }
        store
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sinusoidal_embedding_layout() {
        let e = sinusoidal_embedding(0.0, 8);
        assert_eq!(e.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = sinusoidal_embedding(0.25, 4);
        assert!((e[[0, 0]] - 250f64.sin()).abs() < 1e-12);
        assert!((e[[0, 3]] - (250.0 * 0.01f64).cos()).abs() < 1e-12);
    }

    #[test]
    fn fresh_field_predicts_zero() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        cfg.init_params(&mut store, &mut Init::new(0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = VectorFieldNet::new(&cfg, &store);
        let v = net.velocity(&rand_mat(&mut rng, 7, 4), 0.4, &rand_mat(&mut rng, 7, 3), &[0.1; 5]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_shape_for_odd_lengths() {
        let cfg = tiny();
        let store = random_store(&cfg, 3);
        let net = VectorFieldNet::new(&cfg, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for frames in [1, 2, 5, 13] {
            let v = net
                .velocity(&rand_mat(&mut rng, frames, 4), 0.5, &rand_mat(&mut rng, frames, 3), &[0.2; 5])
                .unwrap();
            assert_eq!(v.dim(), (frames, 4));
        }
        assert!(net.velocity(&rand_mat(&mut rng, 5, 4), 0.5, &rand_mat(&mut rng, 4, 3), &[0.2; 5]).is_err());
        assert!(net.velocity(&rand_mat(&mut rng, 5, 4), 0.5, &rand_mat(&mut rng, 5, 3), &[0.2; 4]).is_err());
    }

    #[test]
    fn output_depends_on_time_and_timbre() {
        let cfg = tiny();
        let store = random_store(&cfg, 5);
        let net = VectorFieldNet::new(&cfg, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, h) = (rand_mat(&mut rng, 9, 4), rand_mat(&mut rng, 9, 3));
        let a = net.velocity(&x, 0.3, &h, &[0.2; 5]).unwrap();
        let b = net.velocity(&x, 0.7, &h, &[0.2; 5]).unwrap();
        let c = net.velocity(&x, 0.3, &h, &[0.2, -0.4, 0.0, 0.9, 0.1]).unwrap();
        let diff = |u: &Tensor, v: &Tensor| (u - v).mapv(f64::abs).sum();
        assert!(diff(&a, &b) > 1e-3);
        assert!(diff(&a, &c) > 1e-3);
    }

    /// Central finite differences of `Σ v ⊙ r` with respect to `x_t`.
    #[test]
    fn gradient_wrt_input_matches_finite_differences() {
        let cfg = tiny();
        let store = random_store(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, h, r) = (rand_mat(&mut rng, 6, 4), rand_mat(&mut rng, 6, 3), rand_mat(&mut rng, 6, 4));
        let f_t = [0.3, -0.1, 0.5, 0.2, -0.6];
        let objective = |x: &Tensor| {
            let v = VectorFieldNet::new(&cfg, &store).velocity(x, 0.42, &h, &f_t).unwrap();
            (&v * &r).sum()
        };
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.input(x.clone());
        let hv = g.constant(h.clone());
        let fv = g.constant(Tensor::from_shape_vec((1, 5), f_t.to_vec()).unwrap());
        let v = unet_forward(&mut g, &p, &cfg, xv, 0.42, hv, fv).unwrap();
        let rv = g.constant(r.clone());
        let prod = g.mul(v, rv);
        let out = g.sum_all(prod);
        let grads = g.backward(out);
        let analytic = grads.get(xv).unwrap();
        let eps = 1e-6;
        for i in 0..6 {
            for j in 0..4 {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[[i, j]] += eps;
                down[[i, j]] -= eps;
                let fd = (objective(&up) - objective(&down)) / (2.0 * eps);
                let a = analytic[[i, j]];
                assert!((fd - a).abs() <= 1e-6 * fd.abs().max(1.0), "({i},{j}) fd {fd} vs {a}");
            }
        }
    }

    #[test]
    fn default_widths_match_two_levels() {
        let cfg = UnetConfig::default();
        cfg.validate().unwrap();
        let names: Vec<_> = cfg.blocks().iter().map(|b| b.0).collect();
        assert_eq!(names, ["cfm.down0", "cfm.down1", "cfm.mid", "cfm.up1", "cfm.up0"]);
        assert!(UnetConfig { time_emb_dim: 7, ..tiny() }.validate().is_err());
    }
}
