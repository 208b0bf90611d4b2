//! Tape-based reverse-mode autodiff over [`Tensor`]s.
//!
//! Values are recorded in insertion order, so the node vector is already a
//! topological order and `backward` walks it in reverse.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Softplus(Var),
    Clamp(Var, T, T),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample2(Var),
    AvgPool2(Var),
    Concat(Vec<Var>),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    GridSample {
        x: Var,
        field: Var,
    },
    Smoothness(Var),
    L1Mean(Var, Var),
    SqDevMean(Var, T),
    Mean(Var),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    track: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            track: true,
        }
    }

    /// A graph that never records gradients (inference).
    pub fn no_grad() -> Self {
        Graph {
            track: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.track,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies `v`'s value into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    /// Binds a named parameter as a trainable leaf (once per graph).
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        self.bind(store, name, true)
    }

    /// Binds a named parameter without gradient tracking.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        self.bind(store, name, false)
    }

    fn bind(&mut self, store: &ParamStore<T>, name: &str, trainable: bool) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Leaf, trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Makes `name` resolve to an existing variable; used by gradient checks to
    /// route a perturbed parameter through the networks.
    pub fn bind_param(&mut self, name: &str, v: Var) {
        self.params.insert(name.to_string(), v);
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let bv = self.value(b).data();
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(bv)
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let bv = self.value(b).data();
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(bv)
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let out = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p());
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    /// 3D convolution, kernel `k` (odd), zero padding `(k-1)/2`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 5 || ws.len() != 5 {
            return Err(Error::Shape(format!("conv3d expects 5D input and weight, got {xs:?} / {ws:?}")));
        }
        if ws[1] != xs[1] {
            return Err(Error::Shape(format!(
                "conv3d channel mismatch: input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [ws[0]] {
                return Err(Error::Shape("conv3d bias length".into()));
            }
        }
        let geom = ConvGeom::new(ws[1], ws[0], ws[2], stride, [xs[2], xs[3], xs[4]]);
        let out = kernels::conv3d_forward(&geom, self.value(x), self.value(w), b.map(|b| self.value(b)));
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        if self.value(x).shape().len() != 5 {
            return Err(Error::Shape("instance_norm expects a 5D tensor".into()));
        }
        let (out, inv_std) = kernels::instance_norm_forward(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(out, Op::InstanceNorm { x, inv_std }, rg))
    }

    /// `out[n, c, ...] = gamma[c] * x[n, c, ...] + beta[c]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (_, c, s) = self.value(x).ncs();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::Shape(format!(
                "channel_affine expects [{c}] scale/shift, got {:?} / {:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(s).enumerate() {
            let ch = i % c;
            chunk.iter_mut().for_each(|v| *v = gv[ch] * *v + bv[ch]);
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = kernels::upsample2_forward(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Upsample2(x), rg)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let out = kernels::avgpool2_forward(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::AvgPool2(x), rg)
    }

    /// Concatenates 5D tensors along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).shape().to_vec();
        let (n, spatial) = (first[0], &first[2..]);
        let mut ctot = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != 5 || s[0] != n || &s[2..] != spatial {
                return Err(Error::Shape(format!("concat: {:?} vs {:?}", s, first)));
            }
            ctot += s[1];
        }
        let vox: usize = spatial.iter().product();
        let mut data = Vec::with_capacity(n * ctot * vox);
        for b in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * vox..(b + 1) * c * vox]);
            }
        }
        let out = Tensor::new(vec![n, ctot, spatial[0], spatial[1], spatial[2]], data);
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// `y = W x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.value(w).shape().to_vec();
        let xl = self.value(x).len();
        if ws.len() != 2 || ws[1] != xl || self.value(b).shape() != [ws[0]] {
            return Err(Error::Shape(format!(
                "linear: weight {:?}, input length {xl}, bias {:?}",
                ws,
                self.value(b).shape()
            )));
        }
        let mut out = self.value(b).clone();
        T::gemm(
            ws[0],
            ws[1],
            1,
            T::one(),
            self.value(w).data(),
            ws[1] as isize,
            1,
            self.value(x).data(),
            1,
            1,
            T::one(),
            out.data_mut(),
            1,
            1,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Contiguous sub-range of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of length {}",
                start + len,
                xv.len()
            )));
        }
        let out = Tensor::new(vec![len], xv.data()[start..start + len].to_vec());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    /// Trilinear resampling of `x` at `p + field(p)`, clamp-to-border.
    pub fn grid_sample(&mut self, x: Var, field: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let fs = self.value(field).shape();
        if xs.len() != 5 || fs.len() != 5 || fs[1] != 3 || xs[0] != fs[0] || xs[2..] != fs[2..] {
            return Err(Error::Shape(format!(
                "grid_sample: image {:?} vs field {:?}",
                xs, fs
            )));
        }
        let out = kernels::grid_sample_forward(self.value(x), self.value(field));
        let rg = self.rg(x) || self.rg(field);
        Ok(self.push(out, Op::GridSample { x, field }, rg))
    }

    pub fn smoothness(&mut self, field: Var) -> Result<Var> {
        let fs = self.value(field).shape();
        if fs.len() != 5 || fs[1] != 3 {
            return Err(Error::Shape(format!("smoothness expects [N, 3, D, H, W], got {fs:?}")));
        }
        let v = kernels::smoothness_forward(self.value(field));
        let rg = self.rg(field);
        Ok(self.push(Tensor::scalar(v), Op::Smoothness(field), rg))
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "l1_mean")?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let sum: f64 = av.iter().zip(bv).map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs()).sum();
        let v = T::lit(sum / av.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::L1Mean(a, b), rg))
    }

    /// `mean((x - target)^2)`.
    pub fn sq_dev_mean(&mut self, x: Var, target: f64) -> Var {
        let t = T::lit(target);
        let xv = self.value(x).data();
        let sum: f64 = xv.iter().map(|&v| (v.as_f64() - target).powi(2)).sum();
        let v = T::lit(sum / xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::SqDevMean(x, t), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x).data();
        let v = T::lit(xv.iter().map(|v| v.as_f64()).sum::<f64>() / xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Mean(x), rg)
    }

    /// `Σ w_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = T::zero();
        let mut rg = false;
        let mut list = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::Shape("weighted_sum expects scalar terms".into()));
            }
            let w = T::lit(w);
            acc += w * self.scalar(v);
            rg |= self.rg(v);
            list.push((v, w));
        }
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(list), rg))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        let mut keep: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                keep[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        let by_param = self
            .params
            .iter()
            .filter_map(|(k, v)| keep.get(v.0).and_then(|g| g.clone()).map(|g| (k.clone(), g)))
            .collect();
        Gradients {
            leaves: keep,
            by_param,
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    acc(*a, Tensor::new(g.shape().to_vec(), d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    acc(*b, Tensor::new(g.shape().to_vec(), d));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * *c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::LeakyRelu(a, s) => {
                let xv = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { gv * *s })
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::Softplus(a) => {
                let xv = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &x)| gv / (T::one() + (-x).exp()))
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &x)| if x >= *lo && x <= *hi { gv } else { T::zero() })
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), d));
            }
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv3d_backward(
                    geom,
                    self.value(*x),
                    self.value(*w),
                    g,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                acc(*x, kernels::instance_norm_backward(&node.value, inv_std, g));
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let (_, c, s) = g.ncs();
                let xv = self.value(*x);
                let gv = self.value(*gamma).data();
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (k, chunk) in dx.data_mut().chunks_mut(s).enumerate() {
                        let gm = gv[k % c];
                        chunk.iter_mut().for_each(|v| *v *= gm);
                    }
                    acc(*x, dx);
                }
                let mut dgamma = Tensor::zeros(vec![c]);
                let mut dbeta = Tensor::zeros(vec![c]);
                for (k, (gc, xc)) in g.data().chunks(s).zip(xv.data().chunks(s)).enumerate() {
                    dgamma.data_mut()[k % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                    dbeta.data_mut()[k % c] += gc.iter().copied().sum::<T>();
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Upsample2(x) => acc(*x, kernels::upsample2_backward(g)),
            Op::AvgPool2(x) => acc(*x, kernels::avgpool2_backward(self.value(*x).shape(), g)),
            Op::Concat(xs) => {
                let n = g.shape()[0];
                let vox: usize = g.shape()[2..].iter().product();
                let ctot = g.shape()[1];
                let mut off = 0;
                for &v in xs {
                    let shape = self.value(v).shape().to_vec();
                    let c = shape[1];
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(n * c * vox);
                        for b in 0..n {
                            let start = (b * ctot + off) * vox;
                            d.extend_from_slice(&g.data()[start..start + c * vox]);
                        }
                        acc(v, Tensor::new(shape, d));
                    }
                    off += c;
                }
            }
            Op::Linear { x, w, b } => {
                let ws = self.value(*w).shape().to_vec();
                let xv = self.value(*x);
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    T::gemm(
                        ws[1],
                        ws[0],
                        1,
                        T::one(),
                        self.value(*w).data(),
                        1,
                        ws[1] as isize,
                        g.data(),
                        1,
                        1,
                        T::zero(),
                        dx.data_mut(),
                        1,
                        1,
                    );
                    acc(*x, dx);
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(ws.clone());
                    for (r, &gv) in g.data().iter().enumerate() {
                        for (cidx, &xvv) in xv.data().iter().enumerate() {
                            dw.data_mut()[r * ws[1] + cidx] = gv * xvv;
                        }
                    }
                    acc(*w, dw);
                }
                acc(*b, g.clone());
            }
            Op::Slice { x, start } => {
                let mut d = Tensor::zeros(self.value(*x).shape().to_vec());
                d.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                acc(*x, d);
            }
            Op::GridSample { x, field } => {
                let (dx, df) = kernels::grid_sample_backward(
                    self.value(*x),
                    self.value(*field),
                    g,
                    self.rg(*x),
                    self.rg(*field),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(df) = df {
                    acc(*field, df);
                }
            }
            Op::Smoothness(f) => acc(*f, kernels::smoothness_backward(self.value(*f), g.item())),
            Op::L1Mean(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let scale = g.item() / T::from_usize(av.len()).unwrap();
                let d: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        let diff = x - y;
                        if diff > T::zero() {
                            scale
                        } else if diff < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.rg(*b) {
                    acc(*b, Tensor::new(av.shape().to_vec(), d.iter().map(|&v| -v).collect()));
                }
                acc(*a, Tensor::new(av.shape().to_vec(), d));
            }
            Op::SqDevMean(x, t) => {
                let xv = self.value(*x);
                let scale = T::lit(2.0) * g.item() / T::from_usize(xv.len()).unwrap();
                acc(*x, xv.map(|v| scale * (v - *t)));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.item() / T::from_usize(xv.len()).unwrap();
                acc(*x, Tensor::full(xv.shape().to_vec(), v));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, Tensor::scalar(g.item() * w));
                }
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    by_param: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter bound in the graph.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.by_param
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.by_param
    }
}
