//! Timbre similarity loss, the joint objective and the SECS metric.
//!
//! SSIM here treats each speaker embedding as a flat 1-D signal with population moments:
//!
//! ```text
//! ssim(a, b) = (2 μa μb + c1)(2 σab + c2) / ((μa² + μb² + c1)(σa² + σb² + c2))
//! ```

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self { c1: 0.01, c2: 0.03 }
    }
}

impl SsimConstants {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Config(format!("ssim constants must be positive, got ({c1}, {c2})")));
        }
        Ok(Self { c1, c2 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_tim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_tim: 0.05 }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Shape("ssim needs vectors of length >= 2".into()));
    }
    Ok(())
}

/// Mean-term and structure-term factors of SSIM, returned separately.
pub fn ssim_factors(a: &[f64], b: &[f64], k: &SsimConstants) -> Result<(f64, f64)> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let mean_term = (2.0 * ma * mb + k.c1) / (ma * ma + mb * mb + k.c1);
    let structure = (2.0 * cov + k.c2) / (va + vb + k.c2);
    Ok((mean_term, structure))
}

pub fn ssim(a: &[f64], b: &[f64], k: &SsimConstants) -> Result<f64> {
    let (m, s) = ssim_factors(a, b, k)?;
    Ok(m * s)
}

/// `−Σ_i ssim(ref_i, conv_i)`.
pub fn timbre_loss(refs: &[Vec<f64>], convs: &[Vec<f64>], k: &SsimConstants) -> Result<f64> {
    if refs.len() != convs.len() {
        return Err(Error::Shape(format!("{} reference vs {} converted embeddings", refs.len(), convs.len())));
    }
    let mut total = 0.0;
    for (r, c) in refs.iter().zip(convs) {
        total -= ssim(r, c, k)?;
    }
    Ok(total)
}

pub fn total_loss(l_cfm: f64, l_tim: f64, w: &LossWeights) -> f64 {
    l_cfm + w.lambda_tim * l_tim
}

/// Cosine similarity.
pub fn secs(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("secs needs equal non-empty lengths, got {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Shape("secs is undefined for a zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// SSIM of two `[1 × d]` rows on the tape.
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var, k: &SsimConstants) -> Result<Var> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.0 != 1 || sa.1 < 2 {
        return Err(Error::Shape(format!("ssim_graph needs equal [1 × d>=2] rows, got {sa:?} and {sb:?}")));
    }
    let d = sa.1;
    let ma = g.mean_all(a);
    let mb = g.mean_all(b);
    let mab = g.broadcast(ma, 1, d);
    let mbb = g.broadcast(mb, 1, d);
    let da = g.sub(a, mab);
    let db = g.sub(b, mbb);
    let sq_a = g.square(da);
    let va = g.mean_all(sq_a);
    let sq_b = g.square(db);
    let vb = g.mean_all(sq_b);
    let prod = g.mul(da, db);
    let cov = g.mean_all(prod);

    let mm = g.mul(ma, mb);
    let num1 = g.scale(mm, 2.0);
    let num1 = g.add_scalar(num1, k.c1);
    let ma2 = g.square(ma);
    let mb2 = g.square(mb);
    let den1 = g.add(ma2, mb2);
    let den1 = g.add_scalar(den1, k.c1);
    let num2 = g.scale(cov, 2.0);
    let num2 = g.add_scalar(num2, k.c2);
    let den2 = g.add(va, vb);
    let den2 = g.add_scalar(den2, k.c2);
    let num = g.mul(num1, num2);
    let den = g.mul(den1, den2);
    Ok(g.div(num, den))
}

/// `−Σ_i ssim(ref_i, conv_i)` on the tape, as a `[1 × 1]` value.
pub fn timbre_loss_graph(g: &mut Graph, refs: &[Var], convs: &[Var], k: &SsimConstants) -> Result<Var> {
    if refs.len() != convs.len() || refs.is_empty() {
        return Err(Error::Shape(format!("{} reference vs {} converted embeddings", refs.len(), convs.len())));
    }
    let mut acc: Option<Var> = None;
    for (&r, &c) in refs.iter().zip(convs) {
        let s = ssim_graph(g, r, c, k)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s),
            None => s,
        });
    }
    Ok(g.scale(acc.expect("non-empty"), -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;
    use proptest::prelude::*;

    const K: SsimConstants = SsimConstants { c1: 0.01, c2: 0.03 };

    /// Scalar transcription of the SSIM formula with sample sums written out longhand.
    fn ssim_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma: f64 = a.iter().sum::<f64>() / n;
        let mb: f64 = b.iter().sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| x * x).sum::<f64>() / n - ma * ma;
        let vb: f64 = b.iter().map(|x| x * x).sum::<f64>() / n - mb * mb;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n - ma * mb;
        ((2.0 * ma * mb + K.c1) * (2.0 * cov + K.c2)) / ((ma * ma + mb * mb + K.c1) * (va + vb + K.c2))
    }

    #[test]
    fn ssim_hand_value() {
        let v = ssim(&[0.0, 1.0], &[1.0, 0.0], &K).unwrap();
        assert!((v - (-0.47 / 0.53)).abs() < 1e-12, "{v}");
        assert!((ssim_oracle(&[0.0, 1.0], &[1.0, 0.0]) - v).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = [0.3, -1.2, 2.0, 0.7];
        let b = [1.0, 0.1, -0.4, 0.9];
        assert!((ssim(&a, &a, &K).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b, &K).unwrap(), ssim(&b, &a, &K).unwrap());
        assert!((ssim(&a, &b, &K).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_bad_lengths() {
        assert!(ssim(&[1.0], &[1.0], &K).is_err());
        assert!(ssim(&[1.0, 2.0], &[1.0, 2.0, 3.0], &K).is_err());
        assert!(SsimConstants::new(0.0, 0.03).is_err());
    }

    #[test]
    fn timbre_loss_examples() {
        let refs = vec![vec![0.1, 0.5, -0.2], vec![1.0, 2.0], vec![3.0, -1.0, 0.0, 4.0]];
        assert_eq!(timbre_loss(&refs, &refs, &K).unwrap(), -3.0);
        let one = timbre_loss(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]], &K).unwrap();
        assert!((one - 0.47 / 0.53).abs() < 1e-12);
        let convs = vec![vec![0.2, 0.4, -0.1], vec![0.5, 2.5], vec![2.0, -1.0, 1.0, 3.0]];
        let fwd = timbre_loss(&refs, &convs, &K).unwrap();
        let rev_r: Vec<_> = refs.iter().rev().cloned().collect();
        let rev_c: Vec<_> = convs.iter().rev().cloned().collect();
        assert!((timbre_loss(&rev_r, &rev_c, &K).unwrap() - fwd).abs() < 1e-15);
        assert!(timbre_loss(&refs, &convs[..2], &K).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, -3.0, &w) - 0.85).abs() < 1e-15);
        assert!((total_loss(0.0, -3.0, &w) + 0.15).abs() < 1e-15);
        assert_eq!(total_loss(0.7, -2.0, &LossWeights { lambda_tim: 0.0 }), 0.7);
    }

    #[test]
    fn secs_examples() {
        assert!((secs(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
        assert_eq!(secs(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((secs(&[0.2, -0.7, 1.1], &[0.2, -0.7, 1.1]).unwrap() - 1.0).abs() < 1e-15);
        assert!(secs(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn graph_loss_matches_plain_and_finite_differences() {
        let refs = vec![vec![0.1, 0.5, -0.2, 0.8], vec![1.0, 2.0, -0.5]];
        let convs = vec![vec![0.3, 0.1, -0.6, 0.4], vec![0.7, 1.5, 0.2]];
        let mut g = Graph::new();
        let rv: Vec<_> = refs.iter().map(|r| g.constant(row(r))).collect();
        let cv: Vec<_> = convs.iter().map(|c| g.input(row(c))).collect();
        let out = timbre_loss_graph(&mut g, &rv, &cv, &K).unwrap();
        assert!((g.scalar(out) - timbre_loss(&refs, &convs, &K).unwrap()).abs() < 1e-14);
        let grads = g.backward(out);
        let eps = 1e-6;
        for (i, c) in convs.iter().enumerate() {
            let analytic = grads.get(cv[i]).unwrap();
            for j in 0..c.len() {
                let mut up = convs.clone();
                let mut down = convs.clone();
                up[i][j] += eps;
                down[i][j] -= eps;
                let fd = (timbre_loss(&refs, &up, &K).unwrap() - timbre_loss(&refs, &down, &K).unwrap()) / (2.0 * eps);
                let a = analytic[[0, j]];
                assert!((fd - a).abs() <= 1e-4 * fd.abs().max(1e-3), "({i},{j}) fd {fd} vs {a}");
            }
        }
    }

    proptest! {
        #[test]
        fn ssim_is_at_most_one(a in prop::collection::vec(-3.0f64..3.0, 2..12), seed in any::<u64>()) {
            let b: Vec<f64> = a.iter().enumerate()
                .map(|(i, x)| x + (((seed >> (i % 60)) & 7) as f64 - 3.5) * 0.1)
                .collect();
            let v = ssim(&a, &b, &K).unwrap();
            prop_assert!(v <= 1.0 + 1e-12);
            if a != b {
                prop_assert!(v < 1.0);
            }
            prop_assert!((ssim(&a, &a, &K).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn structure_factor_is_shift_invariant(
            a in prop::collection::vec(-2.0f64..2.0, 3..10),
            noise in prop::collection::vec(-1.0f64..1.0, 10),
            c in -1.0f64..1.0,
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| 0.5 * x + n).collect();
            let sa: Vec<f64> = a.iter().map(|x| x + c).collect();
            let sb: Vec<f64> = b.iter().map(|x| x + c).collect();
            let (_, s0) = ssim_factors(&a, &b, &K).unwrap();
            let (_, s1) = ssim_factors(&sa, &sb, &K).unwrap();
            prop_assert!((s0 - s1).abs() < 1e-12);
        }
    }
}
