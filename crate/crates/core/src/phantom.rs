//! Synthetic paired phantoms: ellipsoidal organs in a soft-tissue body,
//! rendered in two modality styles, with a known misalignment field.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{self, warp, DeformationField};
use crate::rng::{stream, Stream};
use crate::volume::{self, voxel_count, Dims, Mask, Modality, Units, Volume};

/// Monotone piecewise-linear intensity map; constant beyond the end knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    knots: Vec<(f32, f32)>,
}

impl Lut {
    pub fn new(knots: Vec<(f32, f32)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Parameter("lookup table needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[0].0 < w[1].0) || w[0].1 > w[1].1 {
                return Err(Error::Parameter(format!(
                    "lookup table must be increasing in x and monotone in y: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Lut { knots })
    }

    pub fn identity() -> Self {
        Lut {
            knots: vec![(-1.0, -1.0), (1.0, 1.0)],
        }
    }

    pub fn knots(&self) -> &[(f32, f32)] {
        &self.knots
    }

    pub fn eval(&self, x: f32) -> f32 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        if x >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|&(kx, _)| kx <= x) - 1;
        let ((x0, y0), (x1, y1)) = (k[i], k[i + 1]);
        let t = (x as f64 - x0 as f64) / (x1 as f64 - x0 as f64);
        (y0 as f64 + t * (y1 as f64 - y0 as f64)) as f32
    }
}

/// Per-domain appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub source_lut: Lut,
    pub target_lut: Lut,
    /// Added to source intensities inside enhanced organs.
    pub enhancement: f32,
    /// Probability that an organ is enhanced in the source domain.
    pub enhanced_fraction: f64,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            source_lut: Lut {
                knots: vec![(-1.0, -1.0), (-0.5, -0.4), (0.0, 0.35), (0.5, 0.55), (1.0, 1.0)],
            },
            target_lut: Lut::identity(),
            enhancement: 0.25,
            enhanced_fraction: 0.5,
        }
    }
}

/// How the training target is displaced from the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Misalignment {
    /// Smoothed Gaussian noise with the configured amplitude and σ.
    Smooth,
    /// The same displacement (dz, dy, dx) everywhere.
    Translation { shift: [f32; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub dims: Dims,
    /// Inclusive range of organ counts.
    pub organ_count: (usize, usize),
    /// Organ intensity range in the (target-styled) base image.
    pub organ_intensity: (f32, f32),
    pub body_intensity: f32,
    pub background_intensity: f32,
    pub misalign_amplitude: f32,
    pub misalign_smoothness: f32,
    pub misalignment: Misalignment,
    pub style: StyleParams,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 64, 64],
            organ_count: (3, 8),
            organ_intensity: (-0.2, 0.4),
            body_intensity: 0.0,
            background_intensity: -1.0,
            misalign_amplitude: 3.0,
            misalign_smoothness: 8.0,
            misalignment: Misalignment::Smooth,
            style: StyleParams::default(),
        }
    }
}

/// Organ intensities closer than this to the body are redrawn so every organ
/// has a visible boundary.
const MIN_ORGAN_CONTRAST: f32 = 0.08;

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::Parameter(format!(
                "phantom dims must be at least 16 per axis, got {:?}",
                self.dims
            )));
        }
        let (lo, hi) = self.organ_count;
        if lo == 0 || lo > hi || hi > 250 {
            return Err(Error::Parameter(format!("bad organ count range {lo}..={hi}")));
        }
        let (a, b) = self.organ_intensity;
        if !(a <= b) || a < -1.0 || b > 1.0 {
            return Err(Error::Parameter(format!("bad organ intensity range [{a}, {b}]")));
        }
        if !((a - self.body_intensity).abs() >= MIN_ORGAN_CONTRAST
            || (b - self.body_intensity).abs() >= MIN_ORGAN_CONTRAST)
        {
            return Err(Error::Parameter("organ intensities cannot contrast with the body".into()));
        }
        for v in [self.body_intensity, self.background_intensity] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("intensity {v} outside [-1, 1]")));
            }
        }
        if !(self.misalign_amplitude >= 0.0) || !self.misalign_amplitude.is_finite() {
            return Err(Error::Parameter("misalignment amplitude must be >= 0".into()));
        }
        if !(self.misalign_smoothness > 0.0) || !self.misalign_smoothness.is_finite() {
            return Err(Error::Parameter("misalignment sigma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.style.enhanced_fraction) {
            return Err(Error::Parameter("enhanced fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomPair {
    pub source: Volume,
    pub target_aligned: Volume,
    pub target_misaligned: Volume,
    pub true_field: DeformationField,
    pub mask: Mask,
    /// 0 = air, 1 = body, 2.. = organs.
    pub labels: Vec<u8>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Label map, base intensities and the enhanced-organ mask.
fn anatomy(cfg: &PhantomConfig, seed: u64) -> (Vec<u8>, Vec<f32>, Mask) {
    let mut rng = stream(seed, Stream::Anatomy);
    let dims = cfg.dims;
    let df = dims.map(|d| d as f64);
    let body = Ellipsoid {
        center: std::array::from_fn(|a| (df[a] - 1.0) / 2.0 + rng.gen_range(-0.03..0.03) * df[a]),
        axes: std::array::from_fn(|a| rng.gen_range(0.36..0.44) * df[a]),
    };
    let n_organs = rng.gen_range(cfg.organ_count.0..=cfg.organ_count.1);
    let mut organs = Vec::with_capacity(n_organs);
    for _ in 0..n_organs {
        let axes: [f64; 3] = std::array::from_fn(|a| rng.gen_range(0.07..0.16) * df[a]);
        // Uniform direction and radius inside the unit ball, then squeezed so the
        // organ stays within the body.
        let dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let r = rng.gen_range(0.0f64..1.0).cbrt();
        let center = std::array::from_fn(|a| {
            body.center[a] + dir[a] / norm * r * (body.axes[a] - axes[a]).max(0.0) * 0.85
        });
        let intensity = loop {
            let v = rng.gen_range(cfg.organ_intensity.0..=cfg.organ_intensity.1);
            if (v - cfg.body_intensity).abs() >= MIN_ORGAN_CONTRAST {
                break v;
            }
        };
        let enhanced = rng.gen_bool(cfg.style.enhanced_fraction);
        organs.push((Ellipsoid { center, axes }, intensity, enhanced));
    }

    let n = voxel_count(dims);
    let mut labels = vec![0u8; n];
    let mut base = vec![cfg.background_intensity; n];
    let mut enhanced = vec![0u8; n];
    let mut i = 0;
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z as f64, y as f64, x as f64];
                if body.contains(p) {
                    labels[i] = 1;
                    base[i] = cfg.body_intensity;
                    // Later organs overwrite earlier ones where they overlap.
                    for (k, (e, v, enh)) in organs.iter().enumerate() {
                        if e.contains(p) {
                            labels[i] = (k + 2) as u8;
                            base[i] = *v;
                            enhanced[i] = *enh as u8;
                        }
                    }
                }
                i += 1;
            }
        }
    }
    let enhanced = Mask::new(dims, enhanced).expect("mask built with matching dims");
    (labels, base, enhanced)
}

/// Domain-specific intensity mapping of a normalized volume: the domain's
/// lookup table, plus (for the source domain) an additive enhancement inside
/// `enhanced`. Geometry is untouched.
pub fn style_transform(v: &Volume, domain: Modality, style: &StyleParams, enhanced: &Mask) -> Result<Volume> {
    if v.units() != Units::Normalized {
        return Err(Error::Parameter("style_transform expects normalized input".into()));
    }
    if enhanced.dims() != v.dims() {
        return Err(Error::Shape(format!(
            "enhancement mask {:?} vs volume {:?}",
            enhanced.dims(),
            v.dims()
        )));
    }
    let voxels = match domain {
        Modality::Target => v.voxels().iter().map(|&x| style.target_lut.eval(x)).collect(),
        Modality::Source => v
            .voxels()
            .iter()
            .zip(enhanced.voxels())
            .map(|(&x, &e)| {
                let y = style.source_lut.eval(x);
                if e != 0 {
                    (y + style.enhancement).clamp(-1.0, 1.0)
                } else {
                    y
                }
            })
            .collect(),
    };
    Ok(v.with_voxels(voxels)?.with_modality(domain))
}

fn blur_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Separable Gaussian blur of one component; lines are truncated at the
/// grid edge (replicate padding), so callers blur a padded grid and crop.
fn blur(data: &mut [f64], dims: Dims, sigma: f64) {
    let radius = blur_radius(sigma) as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let [d, h, w] = dims;
    let strides = [h * w, w, 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        for start in 0..d * h * w {
            // Visit each line once, from its first element.
            let coord = (start / stride) % len;
            if coord != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|i| data[start + i * stride]));
            let r = radius as usize;
            for i in 0..len {
                let acc = if i >= r && i + r < len {
                    kernel.iter().zip(&line[i - r..=i + r]).map(|(k, v)| k * v).sum()
                } else {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let j = (i as i64 + k as i64 - radius).clamp(0, len as i64 - 1) as usize;
                        acc += kv * line[j];
                    }
                    acc
                };
                data[start + i * stride] = acc;
            }
        }
    }
}

/// I.i.d. Gaussian noise per component, blurred with a Gaussian of width
/// `sigma`, rescaled so the largest displacement magnitude equals `amplitude`.
///
/// The noise is drawn on a grid padded by the kernel radius and cropped after
/// blurring; blurring the unpadded grid would let each clamped edge sample
/// dominate its neighbourhood, concentrating the maximum (and hence the
/// rescaling) on the border.
pub fn random_smooth_field(dims: Dims, amplitude: f32, sigma: f32, seed: u64) -> Result<DeformationField> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Parameter(format!("amplitude must be >= 0, got {amplitude}")));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Parameter(format!("field dims must be positive, got {dims:?}")));
    }
    if amplitude == 0.0 {
        return Ok(DeformationField::zeros(dims));
    }
    let pad = blur_radius(sigma as f64);
    let padded = dims.map(|d| d + 2 * pad);
    let mut rng = stream(seed, Stream::Field);
    let np = voxel_count(padded);
    let mut comps: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..np).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    for c in comps.iter_mut() {
        blur(c, padded, sigma as f64);
    }
    let crop = |c: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                let row = ((z + pad) * padded[1] + y + pad) * padded[2] + pad;
                out.extend_from_slice(&c[row..row + dims[2]]);
            }
        }
        out
    };
    let comps: Vec<Vec<f64>> = comps.iter().map(|c| crop(c)).collect();
    let n = voxel_count(dims);
    let max = (0..n)
        .map(|i| (comps[0][i].powi(2) + comps[1][i].powi(2) + comps[2][i].powi(2)).sqrt())
        .fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(DeformationField::zeros(dims));
    }
    let k = amplitude as f64 / max;
    let data = comps.iter().flatten().map(|&v| (v * k) as f32).collect();
    DeformationField::new(dims, data)
}

/// Deterministic in `(cfg, seed)`.
pub fn generate_phantom_pair(cfg: &PhantomConfig, seed: u64) -> Result<PhantomPair> {
    cfg.validate()?;
    let (labels, base, enhanced) = anatomy(cfg, seed);
    let body = Mask::new(cfg.dims, labels.iter().map(|&l| (l > 0) as u8).collect())?;
    let base = Volume::new(cfg.dims, [1.0; 3], base, Units::Normalized, Modality::Target)?;
    let source = style_transform(&base, Modality::Source, &cfg.style, &enhanced)?;
    let target_aligned = style_transform(&base, Modality::Target, &cfg.style, &enhanced)?;
    let true_field = match cfg.misalignment {
        Misalignment::Smooth => {
            random_smooth_field(cfg.dims, cfg.misalign_amplitude, cfg.misalign_smoothness, seed)?
        }
        Misalignment::Translation { shift } => DeformationField::constant(cfg.dims, shift),
    };
    let target_misaligned = warp(&target_aligned, &true_field)?;
    Ok(PhantomPair {
        source,
        target_aligned,
        target_misaligned,
        true_field,
        mask: body,
        labels,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: PhantomConfig,
    pub cases: Vec<CaseEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Train/val/test sizes in the 40 : 5 : 10 proportion, each held-out split
/// getting at least one case when `count >= 3`.
pub fn default_split(count: usize) -> (usize, usize, usize) {
    if count < 3 {
        return (count, 0, 0);
    }
    let val = ((count as f64 * 5.0 / 55.0).round() as usize).max(1);
    let test = ((count as f64 * 10.0 / 55.0).round() as usize).max(1);
    (count - val - test, val, test)
}

/// One on-disk case.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub source: Volume,
    pub target_aligned: Volume,
    pub target_misaligned: Volume,
    pub mask: Mask,
}

const DIRS: [&str; 5] = ["source", "target_aligned", "target_misaligned", "mask", "field"];

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Generates `train + val + test` pairs under `out` and writes the manifest.
/// Case seeds are drawn from the data substream of `seed`.
pub fn write_dataset(
    out: &Path,
    cfg: &PhantomConfig,
    seed: u64,
    (train, val, test): (usize, usize, usize),
) -> Result<Manifest> {
    cfg.validate()?;
    for d in DIRS {
        mkdir(&out.join(d))?;
    }
    let mut rng = stream(seed, Stream::Data);
    let mut cases = Vec::new();
    let splits = std::iter::repeat(Split::Train)
        .take(train)
        .chain(std::iter::repeat(Split::Val).take(val))
        .chain(std::iter::repeat(Split::Test).take(test));
    for (i, split) in splits.enumerate() {
        let id = format!("case_{i:03}");
        let case_seed = rng.next_u64();
        let pair = generate_phantom_pair(cfg, case_seed)?;
        let file = format!("{id}.mivol");
        volume::save_volume(&pair.source, out.join("source").join(&file))?;
        volume::save_volume(&pair.target_aligned, out.join("target_aligned").join(&file))?;
        volume::save_volume(&pair.target_misaligned, out.join("target_misaligned").join(&file))?;
        volume::save_mask(&pair.mask, pair.source.spacing(), out.join("mask").join(&file))?;
        registration::save_field(&pair.true_field, pair.source.spacing(), &out.join("field"), &id)?;
        log::debug!("wrote {id} ({split:?}, seed {case_seed})");
        cases.push(CaseEntry {
            id,
            seed: case_seed,
            split,
        });
    }
    let manifest = Manifest {
        seed,
        config: cfg.clone(),
        cases,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = out.join(MANIFEST);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_case(dir: &Path, id: &str) -> Result<Case> {
    let file = format!("{id}.mivol");
    let load = |sub: &str| volume::load_volume(dir.join(sub).join(&file));
    Ok(Case {
        id: id.to_string(),
        source: load("source")?,
        target_aligned: load("target_aligned")?,
        target_misaligned: load("target_misaligned")?,
        mask: volume::load_mask(dir.join("mask").join(&file))?,
    })
}
