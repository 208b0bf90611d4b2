//! Building blocks shared by the registration and synthesis networks.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Scales a base channel count, never below one channel.
pub fn scaled(channels: usize, scale: f64) -> usize {
    ((channels as f64 * scale).round() as usize).max(1)
}

/// Plain convolution (`{prefix}.weight`, `{prefix}.bias`).
#[derive(Clone, Debug)]
pub struct Conv {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(prefix: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv {
            prefix: prefix.into(),
            cin,
            cout,
            k,
            stride,
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.init_conv(&self.prefix, self.cin, self.cout, self.k, rng);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{}.weight", self.prefix))?;
        let b = g.param(store, &format!("{}.bias", self.prefix))?;
        g.conv3d(x, w, Some(b), self.stride)
    }
}

/// 3³ convolution, instance normalization with learned affine, ReLU.
#[derive(Clone, Debug)]
pub struct ConvInRelu {
    conv: Conv,
    norm: String,
}

impl ConvInRelu {
    pub fn new(prefix: &str, cin: usize, cout: usize, stride: usize) -> Self {
        ConvInRelu {
            conv: Conv::new(format!("{prefix}.conv"), cin, cout, 3, stride),
            norm: format!("{prefix}.norm"),
        }
    }

    pub fn cout(&self) -> usize {
        self.conv.cout
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.conv.declare(store, rng);
        store.init_norm(&self.norm, self.conv.cout);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, store, x)?;
        let h = g.instance_norm(h)?;
        let gamma = g.param(store, &format!("{}.gamma", self.norm))?;
        let beta = g.param(store, &format!("{}.beta", self.norm))?;
        let h = g.channel_affine(h, gamma, beta)?;
        Ok(g.relu(h))
    }
}

/// Per-block slice of a vector of adaptive normalization parameters.
#[derive(Clone, Copy, Debug)]
pub struct Modulation {
    pub params: Var,
    pub offset: usize,
}

/// `x + F(x)` with `F = conv → norm → ReLU → conv → norm`.
///
/// A modulated block takes its normalization scale and shift from a
/// [`Modulation`] (adaptive instance normalization); otherwise it owns
/// learned affine parameters.
#[derive(Clone, Debug)]
pub struct ResBlock {
    prefix: String,
    channels: usize,
    modulated: bool,
}

impl ResBlock {
    pub fn new(prefix: impl Into<String>, channels: usize, modulated: bool) -> Self {
        ResBlock {
            prefix: prefix.into(),
            channels,
            modulated,
        }
    }

    pub fn modulated(&self) -> bool {
        self.modulated
    }

    /// Number of modulation scalars this block consumes.
    pub fn modulation_len(&self) -> usize {
        if self.modulated {
            4 * self.channels
        } else {
            0
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let c = self.channels;
        store.init_conv(&format!("{}.conv1", self.prefix), c, c, 3, rng);
        store.init_conv(&format!("{}.conv2", self.prefix), c, c, 3, rng);
        if !self.modulated {
            store.init_norm(&format!("{}.norm1", self.prefix), c);
            store.init_norm(&format!("{}.norm2", self.prefix), c);
        }
    }

    fn norm<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        h: Var,
        which: usize,
        style: Option<Modulation>,
    ) -> Result<Var> {
        let h = g.instance_norm(h)?;
        let c = self.channels;
        let (gamma, beta) = match style {
            Some(m) => {
                let base = m.offset + (which - 1) * 2 * c;
                let raw_gamma = g.slice(m.params, base, c)?;
                let gamma = g.add_scalar(raw_gamma, 1.0);
                let beta = g.slice(m.params, base + c, c)?;
                (gamma, beta)
            }
            None => (
                g.param(store, &format!("{}.norm{which}.gamma", self.prefix))?,
                g.param(store, &format!("{}.norm{which}.beta", self.prefix))?,
            ),
        };
        g.channel_affine(h, gamma, beta)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        style: Option<Modulation>,
    ) -> Result<Var> {
        match (self.modulated, style.is_some()) {
            (false, true) => {
                return Err(Error::Parameter(format!(
                    "style supplied to unmodulated residual block `{}`",
                    self.prefix
                )))
            }
            (true, false) => {
                return Err(Error::Parameter(format!(
                    "modulated residual block `{}` needs a style",
                    self.prefix
                )))
            }
            _ => {}
        }
        let c = |name: &str| Conv::new(format!("{}.{name}", self.prefix), self.channels, self.channels, 3, 1);
        let h = c("conv1").forward(g, store, x)?;
        let h = self.norm(g, store, h, 1, style)?;
        let h = g.relu(h);
        let h = c("conv2").forward(g, store, h)?;
        let h = self.norm(g, store, h, 2, style)?;
        g.add(x, h)
    }
}

/// Three fully connected layers with ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    dims: [usize; 4],
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            prefix: prefix.into(),
            dims: [input, hidden, hidden, output],
        }
    }

    pub fn output_len(&self) -> usize {
        self.dims[3]
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for i in 0..3 {
            store.init_linear(&format!("{}.fc{}", self.prefix, i + 1), self.dims[i], self.dims[i + 1], rng);
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..3 {
            let w = g.param(store, &format!("{}.fc{}.weight", self.prefix, i + 1))?;
            let b = g.param(store, &format!("{}.fc{}.bias", self.prefix, i + 1))?;
            h = g.linear(h, w, b)?;
            if i < 2 {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
