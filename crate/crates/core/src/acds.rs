//! Anatomy-consistency disentanglement synthesis: per-domain content
//! encoders, style encoders driven by learned domain codes, style-modulated
//! generators and multi-scale patch discriminators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{scaled, Conv, ConvInRelu, Graph, Mlp, Modulation, ParamStore, Real, ResBlock, Tensor, Var};
use crate::volume::{self, Modality, Units, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcdsConfig {
    /// Uniform multiplier on every channel count.
    pub channel_scale: f64,
    pub style_dim: usize,
    pub code_dim: usize,
}

impl Default for AcdsConfig {
    fn default() -> Self {
        AcdsConfig {
            channel_scale: 0.5,
            style_dim: 64,
            code_dim: 8,
        }
    }
}

const N_RES: usize = 4;
const DISC_SCALES: usize = 2;
const DISC_LEAK: f64 = 0.2;

/// Three stride-2 Conv-IN-ReLU blocks (32, 64, 128 channels before scaling)
/// followed by four residual blocks.
#[derive(Clone, Debug)]
pub struct ContentEncoder {
    down: Vec<ConvInRelu>,
    res: Vec<ResBlock>,
}

impl ContentEncoder {
    pub fn new(prefix: &str, scale: f64) -> Self {
        let c = [32, 64, 128].map(|c| scaled(c, scale));
        ContentEncoder {
            down: vec![
                ConvInRelu::new(&format!("{prefix}.down1"), 1, c[0], 2),
                ConvInRelu::new(&format!("{prefix}.down2"), c[0], c[1], 2),
                ConvInRelu::new(&format!("{prefix}.down3"), c[1], c[2], 2),
            ],
            res: (1..=N_RES)
                .map(|i| ResBlock::new(format!("{prefix}.res{i}"), c[2], false))
                .collect(),
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.down[2].cout()
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.down.iter().for_each(|b| b.declare(store, rng));
        self.res.iter().for_each(|b| b.declare(store, rng));
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let dims = g.value(x).spatial();
        if dims.iter().any(|d| d % 8 != 0) {
            return Err(Error::Shape(format!(
                "content encoder input dims must be multiples of 8, got {dims:?}"
            )));
        }
        let mut h = x;
        for b in &self.down {
            h = b.forward(g, store, h)?;
        }
        for b in &self.res {
            h = b.forward(g, store, h, None)?;
        }
        Ok(h)
    }
}

/// Four residual blocks (style-modulated when built with a style dimension),
/// three upsample + Conv-IN-ReLU stages, a final 3³ convolution to one channel
/// and `tanh`.
#[derive(Clone, Debug)]
pub struct Generator {
    res: Vec<ResBlock>,
    up: Vec<ConvInRelu>,
    out: Conv,
    /// Affine map from the style code to all modulation parameters.
    adain: Option<(String, usize, usize)>,
}

impl Generator {
    pub fn new(prefix: &str, scale: f64, style_dim: Option<usize>) -> Self {
        let latent = scaled(128, scale);
        let c = [64, 32, 32].map(|c| scaled(c, scale));
        let res: Vec<ResBlock> = (1..=N_RES)
            .map(|i| ResBlock::new(format!("{prefix}.res{i}"), latent, style_dim.is_some()))
            .collect();
        let total: usize = res.iter().map(|r| r.modulation_len()).sum();
        Generator {
            adain: style_dim.map(|s| (format!("{prefix}.adain"), s, total)),
            res,
            up: vec![
                ConvInRelu::new(&format!("{prefix}.up1"), latent, c[0], 1),
                ConvInRelu::new(&format!("{prefix}.up2"), c[0], c[1], 1),
                ConvInRelu::new(&format!("{prefix}.up3"), c[1], c[2], 1),
            ],
            out: Conv::new(format!("{prefix}.out"), c[2], 1, 3, 1),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.res.iter().for_each(|b| b.declare(store, rng));
        self.up.iter().for_each(|b| b.declare(store, rng));
        self.out.declare(store, rng);
        if let Some((name, s, total)) = &self.adain {
            store.init_linear(name, *s, *total, rng);
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        content: Var,
        style: Option<Var>,
    ) -> Result<Var> {
        let params = match (&self.adain, style) {
            (Some((name, _, _)), Some(s)) => {
                let w = g.param(store, &format!("{name}.weight"))?;
                let b = g.param(store, &format!("{name}.bias"))?;
                Some(g.linear(s, w, b)?)
            }
            (None, None) => None,
            (Some(_), None) => return Err(Error::Parameter("style-modulated generator needs a style".into())),
            (None, Some(_)) => return Err(Error::Parameter("generator has no style modulation".into())),
        };
        let mut h = content;
        let mut offset = 0;
        for b in &self.res {
            let m = params.map(|p| Modulation { params: p, offset });
            offset += b.modulation_len();
            h = b.forward(g, store, h, m)?;
        }
        for b in &self.up {
            let u = g.upsample2(h);
            h = b.forward(g, store, u)?;
        }
        let y = self.out.forward(g, store, h)?;
        Ok(g.tanh(y))
    }
}

/// Patch discriminator at two image scales; each scale is four stride-2
/// convolutions (32 → 256 channels before scaling) with leaky ReLU and a 1³
/// convolution to a realness map.
#[derive(Clone, Debug)]
pub struct Discriminator {
    scales: Vec<(Vec<Conv>, Conv)>,
}

impl Discriminator {
    pub fn new(prefix: &str, scale: f64) -> Self {
        let c = [32, 64, 128, 256].map(|c| scaled(c, scale));
        let scales = (0..DISC_SCALES)
            .map(|k| {
                let p = format!("{prefix}.scale{k}");
                let convs = (0..4)
                    .map(|i| {
                        let cin = if i == 0 { 1 } else { c[i - 1] };
                        Conv::new(format!("{p}.conv{}", i + 1), cin, c[i], 3, 2)
                    })
                    .collect();
                (convs, Conv::new(format!("{p}.out"), c[3], 1, 1, 1))
            })
            .collect();
        Discriminator { scales }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for (convs, out) in &self.scales {
            convs.iter().for_each(|c| c.declare(store, rng));
            out.declare(store, rng);
        }
    }

    /// One realness map per scale. With `trainable == false` the weights are
    /// bound as constants (generator step).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        trainable: bool,
    ) -> Result<Vec<Var>> {
        let mut maps = Vec::with_capacity(self.scales.len());
        let mut input = x;
        for (k, (convs, out)) in self.scales.iter().enumerate() {
            if k > 0 {
                input = g.avg_pool2(input);
            }
            let mut h = input;
            for (i, c) in convs.iter().chain(std::iter::once(out)).enumerate() {
                let fetch = |g: &mut Graph<T>, n: &str| {
                    if trainable {
                        g.param(store, n)
                    } else {
                        g.frozen_param(store, n)
                    }
                };
                let w = fetch(g, &format!("{}.weight", c.prefix))?;
                let b = fetch(g, &format!("{}.bias", c.prefix))?;
                h = g.conv3d(h, w, Some(b), c.stride)?;
                if i < convs.len() {
                    h = g.leaky_relu(h, DISC_LEAK);
                }
            }
            maps.push(h);
        }
        Ok(maps)
    }
}

/// Tensors produced by one pass of the disentangled translation model.
#[derive(Clone, Copy, Debug)]
pub struct AcdsOutputs {
    pub c_s: Var,
    pub c_t: Var,
    pub s_s: Var,
    pub s_t: Var,
    /// Source → target translation.
    pub o_t: Var,
    /// Target → source translation.
    pub o_s: Var,
    /// Within-domain reconstructions.
    pub rec_s: Var,
    pub rec_t: Var,
    /// Content of the translations.
    pub c_ot: Var,
    pub c_os: Var,
    /// Back-translations.
    pub cyc_s: Var,
    pub cyc_t: Var,
}

pub const CODE_S: &str = "code_s";
pub const CODE_T: &str = "code_t";

/// The full disentangled model: `e_c_s`, `e_c_t`, `e_s_s`, `e_s_t`, `g_s`,
/// `g_t`, `disc_s`, `disc_t` and the domain codes.
#[derive(Clone, Debug)]
pub struct AcdsNet {
    pub cfg: AcdsConfig,
    e_c_s: ContentEncoder,
    e_c_t: ContentEncoder,
    e_s_s: Mlp,
    e_s_t: Mlp,
    g_s: Generator,
    g_t: Generator,
    d_s: Discriminator,
    d_t: Discriminator,
}

impl AcdsNet {
    pub fn new(cfg: AcdsConfig) -> Self {
        let s = cfg.channel_scale;
        AcdsNet {
            e_c_s: ContentEncoder::new("e_c_s", s),
            e_c_t: ContentEncoder::new("e_c_t", s),
            e_s_s: Mlp::new("e_s_s", cfg.code_dim, cfg.style_dim, cfg.style_dim),
            e_s_t: Mlp::new("e_s_t", cfg.code_dim, cfg.style_dim, cfg.style_dim),
            g_s: Generator::new("g_s", s, Some(cfg.style_dim)),
            g_t: Generator::new("g_t", s, Some(cfg.style_dim)),
            d_s: Discriminator::new("disc_s", s),
            d_t: Discriminator::new("disc_t", s),
            cfg,
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.e_c_s.declare(store, rng);
        self.e_c_t.declare(store, rng);
        self.e_s_s.declare(store, rng);
        self.e_s_t.declare(store, rng);
        self.g_s.declare(store, rng);
        self.g_t.declare(store, rng);
        self.d_s.declare(store, rng);
        self.d_t.declare(store, rng);
        store.init_gaussian(CODE_S, self.cfg.code_dim, rng);
        store.init_gaussian(CODE_T, self.cfg.code_dim, rng);
    }

    pub fn content<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, d: Modality) -> Result<Var> {
        match d {
            Modality::Source => self.e_c_s.forward(g, store, x),
            Modality::Target => self.e_c_t.forward(g, store, x),
        }
    }

    pub fn style<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, d: Modality) -> Result<Var> {
        let (mlp, code) = match d {
            Modality::Source => (&self.e_s_s, CODE_S),
            Modality::Target => (&self.e_s_t, CODE_T),
        };
        let code = g.param(store, code)?;
        mlp.forward(g, store, code)
    }

    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        content: Var,
        style: Var,
        d: Modality,
    ) -> Result<Var> {
        match d {
            Modality::Source => self.g_s.forward(g, store, content, Some(style)),
            Modality::Target => self.g_t.forward(g, store, content, Some(style)),
        }
    }

    pub fn s2t<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = self.content(g, store, x, Modality::Source)?;
        let s = self.style(g, store, Modality::Target)?;
        self.decode(g, store, c, s, Modality::Target)
    }

    pub fn t2s<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = self.content(g, store, x, Modality::Target)?;
        let s = self.style(g, store, Modality::Source)?;
        self.decode(g, store, c, s, Modality::Source)
    }

    pub fn discriminator(&self, d: Modality) -> &Discriminator {
        match d {
            Modality::Source => &self.d_s,
            Modality::Target => &self.d_t,
        }
    }

    /// Translations, reconstructions, back-translations and their latents.
    pub fn forward_all<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        i_s: Var,
        i_t: Var,
    ) -> Result<AcdsOutputs> {
        use Modality::{Source as S, Target as T_};
        let c_s = self.content(g, store, i_s, S)?;
        let c_t = self.content(g, store, i_t, T_)?;
        let s_s = self.style(g, store, S)?;
        let s_t = self.style(g, store, T_)?;
        let o_t = self.decode(g, store, c_s, s_t, T_)?;
        let o_s = self.decode(g, store, c_t, s_s, S)?;
        let rec_s = self.decode(g, store, c_s, s_s, S)?;
        let rec_t = self.decode(g, store, c_t, s_t, T_)?;
        let c_ot = self.content(g, store, o_t, T_)?;
        let c_os = self.content(g, store, o_s, S)?;
        let cyc_s = self.decode(g, store, c_ot, s_s, S)?;
        let cyc_t = self.decode(g, store, c_os, s_t, T_)?;
        Ok(AcdsOutputs {
            c_s,
            c_t,
            s_s,
            s_t,
            o_t,
            o_s,
            rec_s,
            rec_t,
            c_ot,
            c_os,
            cyc_s,
            cyc_t,
        })
    }
}

/// Single encoder–decoder path without style modulation (`e_c_s` → `g_t`)
/// and one target-domain discriminator.
#[derive(Clone, Debug)]
pub struct PlainNet {
    enc: ContentEncoder,
    dec: Generator,
    disc: Discriminator,
}

impl PlainNet {
    pub fn new(channel_scale: f64) -> Self {
        PlainNet {
            enc: ContentEncoder::new("e_c_s", channel_scale),
            dec: Generator::new("g_t", channel_scale, None),
            disc: Discriminator::new("disc_t", channel_scale),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.enc.declare(store, rng);
        self.dec.declare(store, rng);
        self.disc.declare(store, rng);
    }

    pub fn s2t<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = self.enc.forward(g, store, x)?;
        self.dec.forward(g, store, c, None)
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }
}

/// Either synthesizer behind one source → target interface.
#[derive(Clone, Debug)]
pub enum Synthesizer {
    Acds(AcdsNet),
    Plain(PlainNet),
}

impl Synthesizer {
    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        match self {
            Synthesizer::Acds(n) => n.declare(store, rng),
            Synthesizer::Plain(n) => n.declare(store, rng),
        }
    }

    pub fn s2t<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Synthesizer::Acds(n) => n.s2t(g, store, x),
            Synthesizer::Plain(n) => n.s2t(g, store, x),
        }
    }

    pub fn discriminator(&self, d: Modality) -> Option<&Discriminator> {
        match (self, d) {
            (Synthesizer::Acds(n), _) => Some(n.discriminator(d)),
            (Synthesizer::Plain(n), Modality::Target) => Some(n.discriminator()),
            (Synthesizer::Plain(_), Modality::Source) => None,
        }
    }

    /// Parameter name prefixes the source → target path may read.
    pub fn inference_prefixes(&self) -> &'static [&'static str] {
        match self {
            Synthesizer::Acds(_) => &["e_c_s.", "e_s_t.", "g_t.", CODE_T],
            Synthesizer::Plain(_) => &["e_c_s.", "g_t."],
        }
    }
}

fn check_normalized(v: &Volume) -> Result<()> {
    if v.units() != Units::Normalized {
        return Err(Error::Parameter("expected a normalized volume".into()));
    }
    Ok(())
}

fn image_input(g: &mut Graph<f32>, v: &Volume) -> Result<Var> {
    check_normalized(v)?;
    Ok(g.input(volume::stack(&[v])?))
}

/// `[1, C, d, h, w]` content latent of a single image.
pub fn encode_content(net: &AcdsNet, store: &ParamStore<f32>, image: &Volume, d: Modality) -> Result<Tensor<f32>> {
    let mut g = Graph::no_grad();
    let x = image_input(&mut g, image)?;
    let c = net.content(&mut g, store, x, d)?;
    Ok(g.value(c).clone())
}

pub fn encode_style(net: &AcdsNet, store: &ParamStore<f32>, d: Modality) -> Result<Vec<f32>> {
    let mut g = Graph::no_grad();
    let s = net.style(&mut g, store, d)?;
    Ok(g.value(s).data().to_vec())
}

/// Decodes a latent into a normalized volume tagged with domain `d`.
pub fn decode(
    net: &AcdsNet,
    store: &ParamStore<f32>,
    content: &Tensor<f32>,
    style: &[f32],
    d: Modality,
    spacing: [f64; 3],
) -> Result<Volume> {
    let mut g = Graph::no_grad();
    let c = g.input(content.clone());
    let s = g.input(Tensor::new(vec![style.len()], style.to_vec()));
    let y = net.decode(&mut g, store, c, s, d)?;
    let dims = g.value(y).spatial();
    let voxels = g.value(y).data().to_vec();
    Volume::new(dims, spacing, voxels, Units::Normalized, d)
}

fn translate(
    image: &Volume,
    to: Modality,
    f: impl FnOnce(&mut Graph<f32>, Var) -> Result<Var>,
) -> Result<Volume> {
    let mut g = Graph::no_grad();
    let x = image_input(&mut g, image)?;
    let y = f(&mut g, x)?;
    let like = image.clone().with_modality(to);
    volume::unstack(g.value(y), 0, &like, Units::Normalized)
}

/// `O_t = G_t(E_c^s(I_s), E_s^t(d_t))`.
pub fn synthesize_s2t(net: &Synthesizer, store: &ParamStore<f32>, i_s: &Volume) -> Result<Volume> {
    translate(i_s, Modality::Target, |g, x| net.s2t(g, store, x))
}

/// `O_s = G_s(E_c^t(I_t), E_s^s(d_s))`.
pub fn synthesize_t2s(net: &AcdsNet, store: &ParamStore<f32>, i_t: &Volume) -> Result<Volume> {
    translate(i_t, Modality::Source, |g, x| net.t2s(g, store, x))
}

/// Realness maps of `image` under the discriminator of domain `d`, one per scale.
pub fn discriminate(net: &Synthesizer, store: &ParamStore<f32>, image: &Volume, d: Modality) -> Result<Vec<Tensor<f32>>> {
    let disc = net
        .discriminator(d)
        .ok_or_else(|| Error::Parameter(format!("no discriminator for domain {d:?}")))?;
    let mut g = Graph::no_grad();
    let x = image_input(&mut g, image)?;
    let maps = disc.forward(&mut g, store, x, false)?;
    Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn setup() -> (AcdsNet, ParamStore<f32>) {
        let net = AcdsNet::new(AcdsConfig {
            channel_scale: 0.125,
            ..AcdsConfig::default()
        });
        let mut store = ParamStore::new();
        net.declare(&mut store, &mut stream(1, Stream::Init));
        (net, store)
    }

    fn image(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = stream(seed, Stream::Sampling);
        let n = dims.iter().product();
        let vox = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Volume::new(dims, [1.0; 3], vox, Units::Normalized, Modality::Source).unwrap()
    }

    #[test]
    fn latent_has_eighth_resolution() {
        let (net, store) = setup();
        let c = encode_content(&net, &store, &image([32, 32, 32], 1), Modality::Source).unwrap();
        assert_eq!(c.shape(), &[1, scaled(128, 0.125), 4, 4, 4]);
        let c = encode_content(&net, &store, &image([16, 24, 32], 2), Modality::Target).unwrap();
        assert_eq!(c.shape(), &[1, scaled(128, 0.125), 2, 3, 4]);
        assert!(matches!(
            encode_content(&net, &store, &image([12, 16, 16], 2), Modality::Source),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn style_is_deterministic_with_configured_length() {
        let (net, store) = setup();
        let a = encode_style(&net, &store, Modality::Target).unwrap();
        let b = encode_style(&net, &store, Modality::Target).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn decode_is_bounded_upsampled_and_style_sensitive() {
        let (net, store) = setup();
        let c = encode_content(&net, &store, &image([16, 16, 16], 3), Modality::Source).unwrap();
        let s_t = encode_style(&net, &store, Modality::Target).unwrap();
        let s_s = encode_style(&net, &store, Modality::Source).unwrap();
        let a = decode(&net, &store, &c, &s_t, Modality::Target, [1.0; 3]).unwrap();
        let b = decode(&net, &store, &c, &s_s, Modality::Target, [1.0; 3]).unwrap();
        assert_eq!(a.dims(), [16, 16, 16]);
        assert!(a.voxels().iter().all(|v| (-1.0..=1.0).contains(v)));
        let diff = a.voxels().iter().zip(b.voxels()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn s2t_equals_manual_composition_and_preserves_dims() {
        let (net, store) = setup();
        let x = image([16, 16, 24], 4);
        let syn = Synthesizer::Acds(net.clone());
        let o = synthesize_s2t(&syn, &store, &x).unwrap();
        let c = encode_content(&net, &store, &x, Modality::Source).unwrap();
        let s = encode_style(&net, &store, Modality::Target).unwrap();
        let manual = decode(&net, &store, &c, &s, Modality::Target, [1.0; 3]).unwrap();
        assert_eq!(o.voxels(), manual.voxels());
        assert_eq!(o.dims(), x.dims());
        assert_eq!(o.modality(), Modality::Target);
        let back = synthesize_t2s(&net, &store, &o).unwrap();
        assert_eq!(back.dims(), x.dims());
        assert_eq!(back.modality(), Modality::Source);
    }

    #[test]
    fn discriminator_grids_are_one_sixteenth_per_scale() {
        let (net, store) = setup();
        let syn = Synthesizer::Acds(net);
        let maps = discriminate(&syn, &store, &image([32, 32, 32], 5), Modality::Target).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].shape(), &[1, 1, 2, 2, 2]);
        assert_eq!(maps[1].shape(), &[1, 1, 1, 1, 1]);
        assert!(maps.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn s2t_reads_only_inference_parameters() {
        let (net, store) = setup();
        let syn = Synthesizer::Acds(net);
        store.start_trace();
        synthesize_s2t(&syn, &store, &image([16, 16, 16], 6)).unwrap();
        let touched = store.take_trace();
        assert!(!touched.is_empty());
        for name in &touched {
            assert!(
                syn.inference_prefixes().iter().any(|p| name.starts_with(p)),
                "unexpected parameter {name}"
            );
        }
    }

    #[test]
    fn plain_generator_rejects_style() {
        let gen = Generator::new("g", 0.125, None);
        let mut store = ParamStore::<f32>::new();
        gen.declare(&mut store, &mut stream(1, Stream::Init));
        let mut g = Graph::no_grad();
        let c = g.input(Tensor::zeros(vec![1, 16, 2, 2, 2]));
        let s = g.input(Tensor::zeros(vec![64]));
        assert!(matches!(gen.forward(&mut g, &store, c, Some(s)), Err(Error::Parameter(_))));
    }
}
