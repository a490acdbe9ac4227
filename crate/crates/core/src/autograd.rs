//! A small reverse-mode tape over row-major `f64` matrices.
//!
//! Every tensor in the model is two dimensional: sequences are `[frames × channels]`,
//! vectors are `[1 × n]` rows and scalars are `[1 × 1]`. Nodes are appended in
//! evaluation order, so a single reverse sweep over the tape is a valid topological
//! order for backpropagation.

use std::borrow::Cow;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Broadcast(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    Gelu(Var),
    Silu(Var),
    Tanh(Var),
    Sqrt(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Unfold { x: Var, kernel: usize, pad: usize },
    AvgPool2(Var),
    Upsample2(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Evaluation tape. Leaves may borrow their values (parameters are never copied).
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu_scalar(x: f64) -> f64 {
    gelu(x)
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Row-wise layer normalisation without affine parameters.
pub fn layer_norm_rows(x: ArrayView2<f64>, eps: f64) -> Tensor {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Tensor {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

/// `[T × C]` to `[T × kernel·C]`, zero padded: column block `j` holds row `t + j - pad`.
pub fn unfold_rows(x: ArrayView2<f64>, kernel: usize, pad: usize) -> Tensor {
    let (t, c) = x.dim();
    let mut out = Tensor::zeros((t, kernel * c));
    for j in 0..kernel {
        let shift = j as isize - pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = ((t as isize - shift).min(t as isize)).max(0) as usize;
        if lo >= hi {
            continue;
        }
        let src_lo = (lo as isize + shift) as usize;
        let src_hi = (hi as isize + shift) as usize;
        out.slice_mut(s![lo..hi, j * c..(j + 1) * c])
            .assign(&x.slice(s![src_lo..src_hi, ..]));
    }
    out
}

pub fn avg_pool2_rows(x: ArrayView2<f64>) -> Tensor {
    let (t, c) = x.dim();
    let out_t = t.div_ceil(2);
    let mut out = Tensor::zeros((out_t, c));
    for i in 0..out_t {
        let a = x.row(2 * i);
        if 2 * i + 1 < t {
            let b = x.row(2 * i + 1);
            Zip::from(out.row_mut(i)).and(&a).and(&b).for_each(|o, &p, &q| *o = 0.5 * (p + q));
        } else {
            out.row_mut(i).assign(&a);
        }
    }
    out
}

pub fn upsample2_rows(x: ArrayView2<f64>, target: usize) -> Tensor {
    let c = x.ncols();
    let mut out = Tensor::zeros((target, c));
    for t in 0..target {
        out.row_mut(t).assign(&x.row((t / 2).min(x.nrows() - 1)));
    }
    out
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning its value.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push_op(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push_op(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push_op(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push_op(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push_op(out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) / self.value(b);
        self.push_op(out, Op::Div(a, b), &[a, b])
    }

    /// Expands a `[1 × C]`, `[R × 1]` or `[1 × 1]` node to `[rows × cols]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        let out = src
            .broadcast((rows, cols))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", src.dim(), (rows, cols)))
            .to_owned();
        self.push_op(out, Op::Broadcast(a), &[a])
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        let b = self.broadcast(row, r, c);
        self.add(a, b)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        let b = self.broadcast(row, r, c);
        self.mul(a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push_op(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push_op(out, Op::AddScalar(a), &[a])
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        assert_eq!(self.shape(a), c.dim(), "mul_const shape mismatch");
        let out = self.value(a) * &c;
        self.push_op(out, Op::MulConst(a, c), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push_op(out, Op::Gelu(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(silu_scalar);
        self.push_op(out, Op::Silu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push_op(out, Op::Tanh(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::sqrt);
        self.push_op(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Column sums: `[R × C] -> [1 × C]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push_op(out, Op::SumRows(a), &[a])
    }

    /// Row sums: `[R × C] -> [R × 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push_op(out, Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push_op(out, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows: `[R × C] -> [1 × C]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0 as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        self.push_op(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let out = layer_norm_rows(self.value(a).view(), eps);
        self.push_op(out, Op::LayerNorm(a, eps), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push_op(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push_op(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push_op(out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push_op(out, Op::SliceRows(a, start), &[a])
    }

    pub fn unfold(&mut self, a: Var, kernel: usize, pad: usize) -> Var {
        let out = unfold_rows(self.value(a).view(), kernel, pad);
        self.push_op(out, Op::Unfold { x: a, kernel, pad }, &[a])
    }

    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let out = avg_pool2_rows(self.value(a).view());
        self.push_op(out, Op::AvgPool2(a), &[a])
    }

    pub fn upsample2(&mut self, a: Var, target: usize) -> Var {
        let out = upsample2_rows(self.value(a).view(), target);
        self.push_op(out, Op::Upsample2(a), &[a])
    }

    /// Reverse sweep from a `[1 × 1]` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, gy.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, self.value(*a).t().dot(gy));
                }
            }
            Op::Transpose(a) => acc(*a, gy.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, -gy);
            }
            Op::Mul(a, b) => {
                if a == b {
                    acc(*a, gy * self.value(*a) * 2.0);
                } else {
                    acc(*a, gy * self.value(*b));
                    acc(*b, gy * self.value(*a));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, gy / bv);
                acc(*b, -(gy * y) / bv);
            }
            Op::Broadcast(a) => {
                let (r, c) = self.shape(*a);
                let g = match (r, c) {
                    (1, 1) => Tensor::from_elem((1, 1), gy.sum()),
                    (1, _) => gy.sum_axis(Axis(0)).insert_axis(Axis(0)),
                    (_, 1) => gy.sum_axis(Axis(1)).insert_axis(Axis(1)),
                    _ => gy.clone(),
                };
                acc(*a, g);
            }
            Op::Scale(a, c) => acc(*a, gy * *c),
            Op::AddScalar(a) => acc(*a, gy.clone()),
            Op::MulConst(a, c) => acc(*a, gy * c),
            Op::Gelu(a) => {
                let mut g = self.value(*a).mapv(gelu_grad);
                g *= gy;
                acc(*a, g);
            }
            Op::Silu(a) => {
                let mut g = self.value(*a).mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                g *= gy;
                acc(*a, g);
            }
            Op::Tanh(a) => {
                let mut g = y.mapv(|t| 1.0 - t * t);
                g *= gy;
                acc(*a, g);
            }
            Op::Sqrt(a) => acc(*a, gy / &(y * 2.0)),
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, gy.broadcast((r, c)).unwrap().to_owned());
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, gy.broadcast((r, c)).unwrap().to_owned());
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::from_elem((r, c), gy[[0, 0]]));
            }
            Op::SoftmaxRows(a) => {
                let mut g = gy * y;
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                    let dot = grow.sum();
                    Zip::from(&mut grow).and(&yrow).for_each(|gv, &yv| *gv -= yv * dot);
                }
                acc(*a, g);
            }
            Op::LayerNorm(a, eps) => {
                // y = (x - mean) / s  =>  dx = (dy - mean(dy) - y * mean(dy * y)) / s
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.dim());
                for ((mut grow, (xrow, yrow)), gyrow) in g
                    .rows_mut()
                    .into_iter()
                    .zip(x.rows().into_iter().zip(y.rows()))
                    .zip(gy.rows())
                {
                    let n = xrow.len() as f64;
                    let mean = xrow.sum() / n;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mean_dy = gyrow.sum() / n;
                    let mean_dyy = gyrow.iter().zip(yrow.iter()).map(|(d, y)| d * y).sum::<f64>() / n;
                    Zip::from(&mut grow)
                        .and(&gyrow)
                        .and(&yrow)
                        .for_each(|o, &d, &yv| *o = inv * (d - mean_dy - yv * mean_dyy));
                }
                acc(*a, g);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.shape(*p).1;
                    acc(*p, gy.slice(s![.., start..start + c]).to_owned());
                    start += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let r = self.shape(*p).0;
                    acc(*p, gy.slice(s![start..start + r, ..]).to_owned());
                    start += r;
                }
            }
            Op::SliceCols(a, start) => {
                let mut g = Tensor::zeros(self.shape(*a));
                let c = gy.ncols();
                g.slice_mut(s![.., *start..*start + c]).assign(gy);
                acc(*a, g);
            }
            Op::SliceRows(a, start) => {
                let mut g = Tensor::zeros(self.shape(*a));
                let r = gy.nrows();
                g.slice_mut(s![*start..*start + r, ..]).assign(gy);
                acc(*a, g);
            }
            Op::Unfold { x, kernel, pad } => {
                let (t, c) = self.shape(*x);
                let mut g = Tensor::zeros((t, c));
                for j in 0..*kernel {
                    let shift = j as isize - *pad as isize;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((t as isize - shift).min(t as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let src_lo = (lo as isize + shift) as usize;
                    let src_hi = (hi as isize + shift) as usize;
                    let mut dst = g.slice_mut(s![src_lo..src_hi, ..]);
                    dst += &gy.slice(s![lo..hi, j * c..(j + 1) * c]);
                }
                acc(*x, g);
            }
            Op::AvgPool2(a) => {
                let (t, c) = self.shape(*a);
                let mut g = Tensor::zeros((t, c));
                for i in 0..gy.nrows() {
                    if 2 * i + 1 < t {
                        let half = gy.row(i).mapv(|v| 0.5 * v);
                        g.row_mut(2 * i).assign(&half);
                        g.row_mut(2 * i + 1).assign(&half);
                    } else {
                        g.row_mut(2 * i).assign(&gy.row(i));
                    }
                }
                acc(*a, g);
            }
            Op::Upsample2(a) => {
                let (t, c) = self.shape(*a);
                let mut g = Tensor::zeros((t, c));
                for (r, row) in gy.rows().into_iter().enumerate() {
                    let mut dst = g.row_mut((r / 2).min(t - 1));
                    dst += &row;
                }
                acc(*a, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(build)/d(inputs) against the tape.
    fn check<F>(inputs: &[Tensor], build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |vals: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<_> = vals.iter().map(|v| g.input(v.clone())).collect();
            let out = build(&mut g, &vars);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|v| g.input(v.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        let h = 1e-5;
        for (k, inp) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(inp.dim()));
            for idx in 0..inp.len() {
                let (r, c) = (idx / inp.ncols(), idx % inp.ncols());
                let mut plus = inputs.to_vec();
                plus[k][[r, c]] += h;
                let mut minus = inputs.to_vec();
                minus[k][[r, c]] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < 1e-5 || (a - fd).abs() < 1e-8,
                    "input {k} [{r},{c}]: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_transpose_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let row = random(&mut rng, 1, 2);
        check(&[a, b, row], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let m = g.add_row(m, v[2]);
            let t = g.transpose(m);
            let sq = g.square(t);
            g.sum_all(sq)
        });
    }

    #[test]
    fn nonlinearity_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 2, 5);
        check(&[a.clone()], |g, v| {
            let x = g.gelu(v[0]);
            let y = g.silu(x);
            let z = g.tanh(y);
            g.sum_all(z)
        });
        let pos = a.mapv(|x| x.abs() + 0.5);
        check(&[pos.clone(), a], |g, v| {
            let s = g.sqrt(v[0]);
            let d = g.div(v[1], s);
            let m = g.mul(d, v[1]);
            let m = g.scale(m, 0.3);
            let m = g.add_scalar(m, 2.0);
            g.mean_all(m)
        });
    }

    #[test]
    fn softmax_and_layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let w = random(&mut rng, 3, 4);
        check(&[a.clone(), w.clone()], |g, v| {
            let s = g.softmax_rows(v[0]);
            let p = g.mul(s, v[1]);
            g.sum_all(p)
        });
        check(&[a, w], |g, v| {
            let s = g.layer_norm(v[0], 1e-5);
            let p = g.mul(s, v[1]);
            g.sum_all(p)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 5, 3);
        let b = random(&mut rng, 5, 2);
        let w = random(&mut rng, 9, 2);
        check(&[a.clone(), b.clone()], |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]);
            let c = g.concat_rows(&[c, c]);
            let s = g.slice_cols(c, 1, 3);
            let r = g.slice_rows(s, 1, 3);
            let q = g.square(r);
            let rs = g.sum_rows(q);
            let cs = g.sum_cols(rs);
            g.sum_all(cs)
        });
        check(&[a.clone(), w], |g, v| {
            let u = g.unfold(v[0], 3, 1);
            let y = g.matmul(u, v[1]);
            let p = g.avg_pool2(y);
            let up = g.upsample2(p, 5);
            let sq = g.square(up);
            g.sum_all(sq)
        });
        let mask = Tensor::from_shape_fn((5, 3), |(r, _)| if r < 3 { 1.0 } else { 0.0 });
        check(&[a], move |g, v| {
            let m = g.mul_const(v[0], mask.clone());
            let b = g.sum_rows(m);
            let e = g.broadcast(b, 4, 3);
            let sq = g.square(e);
            g.sum_all(sq)
        });
    }

    #[test]
    fn unfold_matches_direct_convolution() {
        let x = array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]];
        let u = unfold_rows(x.view(), 3, 1);
        assert_eq!(u.row(0).to_vec(), vec![0.0, 0.0, 1.0, 10.0, 2.0, 20.0]);
        assert_eq!(u.row(2).to_vec(), vec![2.0, 20.0, 3.0, 30.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_handles_odd_lengths() {
        let x = array![[1.0], [3.0], [5.0]];
        let p = avg_pool2_rows(x.view());
        assert_eq!(p, array![[2.0], [5.0]]);
        let u = upsample2_rows(p.view(), 3);
        assert_eq!(u, array![[2.0], [2.0], [5.0]]);
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(array![[2.0]]);
        let p = g.input(array![[3.0]]);
        let m = g.mul(c, p);
        let grads = g.backward(m);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap()[[0, 0]], 2.0);
    }
}
