use crate::params::ParamStore;

use super::TrainConfig;

/// First and second moment estimates of AdamW.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &ParamStore) -> f64 {
    grads.iter().map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// p ← p − lr·wd·p
/// p ← p − lr·m̂ / (√v̂ + eps)
/// ```
///
/// Parameters and moments are rounded to `f32` afterwards so checkpoints are lossless.
pub fn adamw_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.adam_eps);
    for (name, p) in params.iter_mut() {
        let (Some(g), Some(m), Some(v)) = (grads.get(name), state.m.get_mut(name), state.v.get_mut(name)) else {
            continue;
        };
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * wd * *p;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    params.round_to_f32();
    state.m.round_to_f32();
    state.v.round_to_f32();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::from_elem((1, 2), v));
        s
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = ParamStore::new();
        g.insert("a", Tensor::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap());
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let a = g.get("a").unwrap();
        assert!((a[[0, 0]] - 0.6).abs() < 1e-15 && (a[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(clip_grad_norm(&mut g, 2.0), global_norm(&g));
    }

    /// Scalar reference of the first two AdamW steps.
    #[test]
    fn matches_hand_rolled_adamw() {
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..TrainConfig::default() };
        let mut p = store(0.5);
        let mut st = AdamState::new(&p);
        let (mut pr, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (k, gv) in [0.25, -0.75].into_iter().enumerate() {
            adamw_step(&mut p, &store(gv), &mut st, &cfg);
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            let mh = m / (1.0 - 0.9f64.powi(k as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(k as i32 + 1));
            pr = pr - 0.1 * 0.5 * pr - 0.1 * mh / (vh.sqrt() + 1e-8);
            pr = pr as f32 as f64;
            assert!((p.get("a").unwrap()[[0, 0]] - pr).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        let mut p = store(0.3f32 as f64);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &store(1.0), &mut st, &cfg);
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }
}
