//! Optimal-transport conditional flow matching.
//!
//! The probability path interpolates noise `x` towards a data sample `z` along a
//! straight line that keeps `sigma_min` of noise at `t = 1`:
//!
//! ```text
//! psi_t(x | z) = t·z + (1 - (1 - sigma_min)·t)·x
//! d/dt psi_t   = z - (1 - sigma_min)·x
//! ```
//!
//! The network regresses that constant velocity, and sampling integrates the learned
//! field from Gaussian noise with explicit Euler steps on the grid `t_k = k / steps`.

mod unet;

pub use unet::{sinusoidal_embedding, unet_forward, UnetConfig, VectorFieldNet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_MIN: f64 = 1e-4;
pub const DEFAULT_EULER_STEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub sigma_min: f64,
}

impl Default for FlowSchedule {
    fn default() -> Self {
        Self { sigma_min: DEFAULT_SIGMA_MIN }
    }
}

impl FlowSchedule {
    pub fn new(sigma_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma_min) {
            return Err(Error::Config(format!("sigma_min must lie in [0, 1), got {sigma_min}")));
        }
        Ok(Self { sigma_min })
    }

    /// Noise scale of the path at time `t`.
    pub fn sigma(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.sigma_min) * t
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("flow time {t} is outside [0, 1]")));
    }
    Ok(())
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `t·z + (1 - (1 - sigma_min)·t)·x`.
pub fn ot_flow(t: f64, z: &Tensor, x: &Tensor, sched: &FlowSchedule) -> Result<Tensor> {
    check_time(t)?;
    check_same(z, x, "ot_flow")?;
    let s = sched.sigma(t);
    let mut out = z * t;
    out.zip_mut_with(x, |o, &xv| *o += s * xv);
    Ok(out)
}

/// Velocity of the straight path from `x0` to `x1`: `x1 - (1 - sigma_min)·x0`.
pub fn target_vector(x0: &Tensor, x1: &Tensor, sched: &FlowSchedule) -> Result<Tensor> {
    check_same(x0, x1, "target_vector")?;
    let c = 1.0 - sched.sigma_min;
    let mut out = x1.clone();
    out.zip_mut_with(x0, |o, &n| *o -= c * n);
    Ok(out)
}

/// A conditional velocity field `v(x, t | h, f_T)`.
pub trait VectorField {
    fn velocity(&self, x: &Tensor, t: f64, h: &Tensor, f_t: &[f64]) -> Result<Tensor>;
}

/// Adapts a closure `(x, t) -> v` into a [`VectorField`] that ignores the conditioning.
pub struct FnField<F>(pub F);

impl<F> VectorField for FnField<F>
where
    F: Fn(&Tensor, f64) -> Tensor,
{
    fn velocity(&self, x: &Tensor, t: f64, _h: &Tensor, _f_t: &[f64]) -> Result<Tensor> {
        Ok((self.0)(x, t))
    }
}

/// One draw of the training triple.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSamplePoint {
    pub t: f64,
    pub x0: Tensor,
    pub x1: Tensor,
}

impl FlowSamplePoint {
    /// `t ~ U[0, 1]` first, then i.i.d. standard normal noise in row-major order.
    pub fn draw<R: Rng + ?Sized>(x1: &Tensor, rng: &mut R) -> Self {
        let t: f64 = rng.random();
        let x0 = gaussian_like(x1.dim(), rng);
        Self { t, x0, x1: x1.clone() }
    }

    /// Path position, conditioned on the data sample (`z := x1`).
    pub fn x_t(&self, sched: &FlowSchedule) -> Tensor {
        ot_flow(self.t, &self.x1, &self.x0, sched).expect("draw keeps t in range and shapes equal")
    }

    pub fn target(&self, sched: &FlowSchedule) -> Tensor {
        target_vector(&self.x0, &self.x1, sched).expect("shapes equal")
    }
}

pub fn gaussian_like<R: Rng + ?Sized>(dim: (usize, usize), rng: &mut R) -> Tensor {
    Tensor::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let mut s = 0.0;
    ndarray::Zip::from(a).and(b).for_each(|x, y| s += (x - y) * (x - y));
    s / a.len() as f64
}

/// Squared regression error at one fixed `(t, x0)`.
pub fn cfm_loss_at<F: VectorField + ?Sized>(
    net: &F,
    point: &FlowSamplePoint,
    h: &Tensor,
    f_t: &[f64],
    sched: &FlowSchedule,
) -> Result<f64> {
    let xt = point.x_t(sched);
    let v = net.velocity(&xt, point.t, h, f_t)?;
    check_same(&v, &xt, "vector field output")?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged(format!("non-finite vector field output at t = {}", point.t)));
    }
    Ok(mse(&v, &point.target(sched)))
}

/// Single-draw Monte-Carlo estimate of the flow-matching loss.
pub fn cfm_loss<F: VectorField + ?Sized, R: Rng + ?Sized>(
    net: &F,
    x1: &Tensor,
    h: &Tensor,
    f_t: &[f64],
    sched: &FlowSchedule,
    rng: &mut R,
) -> Result<f64> {
    let point = FlowSamplePoint::draw(x1, rng);
    cfm_loss_at(net, &point, h, f_t, sched)
}

/// Explicit Euler integration from a given starting point over `t_k = k / steps`.
pub fn euler_integrate<F: VectorField + ?Sized>(
    net: &F,
    x0: Tensor,
    h: &Tensor,
    f_t: &[f64],
    steps: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Config("euler sampling needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let v = net.velocity(&x, k as f64 * dt, h, f_t)?;
        check_same(&v, &x, "vector field output")?;
        x.zip_mut_with(&v, |xv, &vv| *xv += dt * vv);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite state after euler step {k}")));
        }
    }
    Ok(x)
}

/// Draws `x0 ~ N(0, I)` shaped `[h.rows × n_mels]` and integrates to `t = 1`.
pub fn euler_sample<F: VectorField + ?Sized, R: Rng + ?Sized>(
    net: &F,
    h: &Tensor,
    f_t: &[f64],
    n_mels: usize,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let x0 = gaussian_like((h.nrows(), n_mels), rng);
    euler_integrate(net, x0, h, f_t, steps)
}
