//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value and enough
//! context to push the adjoint to its inputs. `backward` walks the nodes once
//! in reverse recording order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::conv::{ConvGeom, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
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
    Conv {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    BiasAdd {
        input: Var,
        bias: Var,
    },
    InstanceNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Logit {
        input: Var,
        eps: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Upsample2(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `v`'s shape if the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let g = self.needs_grad(a);
        self.push(value, op, g)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Trainable leaf; gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
            padding,
        )?;
        let out = geom.forward(self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(vec![geom.ho, geom.wo, geom.cout], out)?;
        let g = self.needs_grad(input) || self.needs_grad(kernel);
        Ok(self.push(value, Op::Conv { input, kernel, geom }, g))
    }

    /// Adds a per-channel bias to an `[H, W, C]` tensor.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let c = *x.shape().last().unwrap_or(&0);
        if b.len() != c {
            return Err(Error::shape("bias_add", c, b.len()));
        }
        let mut value = x.clone();
        for px in value.data.chunks_exact_mut(c) {
            for (v, bv) in px.iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
        let g = self.needs_grad(input) || self.needs_grad(bias);
        Ok(self.push(value, Op::BiasAdd { input, bias }, g))
    }

    /// Per-channel normalization over the spatial extent, no affine terms.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let x = self.value(input);
        let (h, w, c) = x.hwc("instance_norm")?;
        let n = (h * w) as f64;
        let mut mean = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / n + eps).sqrt()).collect();
        let mut value = x.clone();
        for px in value.data.chunks_exact_mut(c) {
            for ((v, m), is) in px.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
        Ok(self.unary(input, value, Op::InstanceNorm { input, inv_std }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |v| v.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.map(a, |v| if v > 0.0 { v } else { slope * v });
        self.unary(a, value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    /// `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`.
    pub fn logit(&mut self, a: Var, eps: f64) -> Var {
        let value = self.map(a, |v| {
            let p = v.clamp(eps, 1.0 - eps);
            (p / (1.0 - p)).ln()
        });
        self.unary(a, value, Op::Logit { input: a, eps })
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y, op_name)?;
        Ok(Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |p, q| p + q)?;
        let g = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |p, q| p - q)?;
        let g = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Sub(a, b), g))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |p, q| p * q)?;
        let g = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |v| c * v);
        self.unary(a, value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |v| v + c);
        self.unary(a, value, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::abs);
        self.unary(a, value, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.map(a, |v| v * v);
        self.unary(a, value, Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data.iter().sum::<f64>() / x.len() as f64;
        self.unary(a, Tensor::scalar(m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum::<f64>();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    /// Nearest-neighbour 2x upsampling of an `[H, W, C]` tensor.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (h, w, c) = x.hwc("upsample2")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; h2 * w2 * c];
        for y in 0..h2 {
            for xo in 0..w2 {
                let s = ((y / 2) * w + xo / 2) * c;
                let d = (y * w2 + xo) * c;
                out[d..d + c].copy_from_slice(&x.data[s..s + c]);
            }
        }
        let value = Tensor::new(vec![h2, w2, c], out)?;
        Ok(self.unary(a, value, Op::Upsample2(a)))
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (h, w, c) = x.hwc("max_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("max_pool2", "even spatial dims", format!("{h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; ho * wo * c];
        let mut argmax = vec![0u32; ho * wo * c];
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x.data[i] > best {
                            best = x.data[i];
                            best_i = i;
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_i as u32;
                }
            }
        }
        let value = Tensor::new(vec![ho, wo, c], out)?;
        Ok(self.unary(a, value, Op::MaxPool2 { input: a, argmax }))
    }

    /// Hash of every piecewise choice made while recording: signs feeding
    /// `relu`, `leaky_relu` and `abs`, clamp regions of `logit`, and pooling
    /// winners. Two tapes built by the same code share a signature exactly
    /// when the recorded function is the same smooth piece at both points.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (k, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Abs(a) => {
                    k.hash(&mut h);
                    for &v in &self.value(*a).data {
                        (v > 0.0).hash(&mut h);
                        (v < 0.0).hash(&mut h);
                    }
                }
                Op::Logit { input, eps } => {
                    k.hash(&mut h);
                    for &v in &self.value(*input).data {
                        (v < *eps).hash(&mut h);
                        (v > 1.0 - eps).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    k.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut out: Vec<Option<Tensor>> = vec![None; n];
        if self.needs_grad(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value.data;
            match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor {
                        shape: node.value.shape.clone(),
                        data: g,
                    });
                }
                Op::Conv { input, kernel, geom } => {
                    if self.needs_grad(*kernel) {
                        let dk = geom.grad_kernel(&self.value(*input).data, &g);
                        self.accumulate(&mut grads, *kernel, dk);
                    }
                    if self.needs_grad(*input) {
                        let dx = geom.grad_input(&self.value(*kernel).data, &g);
                        self.accumulate(&mut grads, *input, dx);
                    }
                }
                Op::BiasAdd { input, bias } => {
                    if self.needs_grad(*bias) {
                        let c = self.value(*bias).len();
                        let mut db = vec![0.0; c];
                        for px in g.chunks_exact(c) {
                            for (d, v) in db.iter_mut().zip(px) {
                                *d += v;
                            }
                        }
                        self.accumulate(&mut grads, *bias, db);
                    }
                    self.accumulate(&mut grads, *input, g);
                }
                Op::InstanceNorm { input, inv_std } => {
                    let c = inv_std.len();
                    let count = (y.len() / c) as f64;
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gy = vec![0.0; c];
                    for (gp, yp) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                        for k in 0..c {
                            sum_g[k] += gp[k];
                            sum_gy[k] += gp[k] * yp[k];
                        }
                    }
                    let mut dx = g;
                    for (dp, yp) in dx.chunks_exact_mut(c).zip(y.chunks_exact(c)) {
                        for k in 0..c {
                            dp[k] = inv_std[k] / count
                                * (count * dp[k] - sum_g[k] - yp[k] * sum_gy[k]);
                        }
                    }
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Relu(a) => {
                    let dx = g.iter().zip(y).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 });
                    self.accumulate(&mut grads, *a, dx.collect());
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.value(*a).data;
                    let dx = g.iter().zip(x).map(|(d, &v)| if v > 0.0 { *d } else { slope * d });
                    self.accumulate(&mut grads, *a, dx.collect());
                }
                Op::Sigmoid(a) => {
                    let dx = g.iter().zip(y).map(|(d, &s)| d * s * (1.0 - s));
                    self.accumulate(&mut grads, *a, dx.collect());
                }
                Op::Logit { input, eps } => {
                    let x = &self.value(*input).data;
                    let dx = g.iter().zip(x).map(|(d, &p)| {
                        if p < *eps || p > 1.0 - eps {
                            0.0
                        } else {
                            d / (p * (1.0 - p))
                        }
                    });
                    self.accumulate(&mut grads, *input, dx.collect());
                }
                Op::Add(a, b) => {
                    if self.needs_grad(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs_grad(*b) {
                        self.accumulate(&mut grads, *b, g.iter().map(|d| -d).collect());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (&self.value(*a).data, &self.value(*b).data);
                    if self.needs_grad(*a) {
                        let da = g.iter().zip(xb).map(|(d, v)| d * v).collect();
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let db = g.iter().zip(xa).map(|(d, v)| d * v).collect();
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, c) => {
                    self.accumulate(&mut grads, *a, g.iter().map(|d| c * d).collect());
                }
                Op::AddScalar(a) => self.accumulate(&mut grads, *a, g),
                Op::Abs(a) => {
                    let x = &self.value(*a).data;
                    let dx = g.iter().zip(x).map(|(d, &v)| {
                        if v > 0.0 {
                            *d
                        } else if v < 0.0 {
                            -d
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(&mut grads, *a, dx.collect());
                }
                Op::Square(a) => {
                    let x = &self.value(*a).data;
                    let dx = g.iter().zip(x).map(|(d, v)| 2.0 * v * d);
                    self.accumulate(&mut grads, *a, dx.collect());
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![g[0] / len as f64; len]);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![g[0]; len]);
                }
                Op::Upsample2(a) => {
                    let (h, w, c) = self.value(*a).hwc("upsample2")?;
                    let w2 = 2 * w;
                    let mut dx = vec![0.0; h * w * c];
                    for yo in 0..2 * h {
                        for xo in 0..w2 {
                            let s = (yo * w2 + xo) * c;
                            let d = ((yo / 2) * w + xo / 2) * c;
                            for k in 0..c {
                                dx[d + k] += g[s + k];
                            }
                        }
                    }
                    self.accumulate(&mut grads, *a, dx);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for (d, &src) in g.iter().zip(argmax) {
                        dx[src as usize] += d;
                    }
                    self.accumulate(&mut grads, *input, dx);
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.square(p);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::full(&[2], 1.0));
        let q = tape.leaf(Tensor::full(&[4], 1.0));
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(q).is_none());
        assert_eq!(g.wrt(&tape, q), Tensor::zeros(&[4]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::full(&[2], 2.0));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let m = tape.mul(p, c).unwrap();
        let loss = tape.sum(m);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[3.0, 3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(p * p + p)
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let s = tape.add(sq, p).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[4.0, 0.0]);
    }

    /// Central differences over a closure that rebuilds the graph for a
    /// perturbed copy of the single leaf.
    fn check_unary(f: impl Fn(&mut Tape, Var) -> Var, x: Tensor) {
        let eval = |x: &Tensor| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let out = f(&mut t, v);
            let w = Tensor::from_fn(t.value(out).shape(), |i| ((i * 7 % 5) as f64) - 1.7);
            let wv = t.constant(w);
            let m = t.mul(out, wv).unwrap();
            let l = t.sum(m);
            (t, v, l)
        };
        let (tape, v, loss) = eval(&x);
        let g = tape.backward(loss).unwrap().wrt(&tape, v);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let (tp, _, lp) = eval(&xp);
            let (tm, _, lm) = eval(&xm);
            let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            let a = g.data()[i];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "i={i}: fd {fd} vs {a}");
        }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = random(&[4, 4, 2], 5);
        check_unary(|t, v| t.relu(v), x.clone());
        check_unary(|t, v| t.leaky_relu(v, 0.2), x.clone());
        check_unary(|t, v| t.sigmoid(v), x.clone());
        check_unary(|t, v| t.abs(v), x.clone());
        check_unary(|t, v| t.square(v), x.clone());
        check_unary(|t, v| t.scale(v, -2.5), x.clone());
        check_unary(|t, v| t.add_scalar(v, 0.3), x.clone());
        check_unary(|t, v| t.mean(v), x.clone());
        check_unary(|t, v| t.upsample2(v).unwrap(), x.clone());
        check_unary(|t, v| t.max_pool2(v).unwrap(), x.clone());
        check_unary(|t, v| t.instance_norm(v, 1e-5).unwrap(), x.clone());
        let p = Tensor::from_fn(&[3, 3, 1], |i| 0.05 + 0.1 * i as f64);
        check_unary(|t, v| t.logit(v, 1e-4), p);
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[5, 6, 3], 9));
        let y = tape.instance_norm(x, 0.0).unwrap();
        let v = tape.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = v.data().iter().skip(c).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn kink_signature_tracks_piecewise_choices() {
        let sig = |vals: Vec<f64>| {
            let mut tape = Tape::new();
            let p = tape.leaf(Tensor::new(vec![2, 2, 1], vals).unwrap());
            let r = tape.relu(p);
            tape.max_pool2(r).unwrap();
            tape.kink_signature()
        };
        assert_eq!(sig(vec![0.5, -1.0, 2.0, 0.1]), sig(vec![0.6, -0.9, 2.5, 0.2]));
        assert_ne!(sig(vec![0.5, -1.0, 2.0, 0.1]), sig(vec![0.5, 1.0, 2.0, 0.1]));
        assert_ne!(sig(vec![0.5, -1.0, 2.0, 0.1]), sig(vec![3.0, -1.0, 2.0, 0.1]));
    }
}
