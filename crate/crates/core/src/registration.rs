//! Deformable registration: the field generator network, the trilinear
//! re-sampler and the field smoothness penalty.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{kernels, scaled, Conv, Graph, ParamStore, Real, Tensor, Var};
use crate::volume::{self, voxel_count, Dims, Modality, Units, Volume};

/// Dense per-voxel displacement in voxel units, components ordered
/// (dz, dy, dx), each component stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    dims: Dims,
    data: Vec<f32>,
}

impl DeformationField {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || data.len() != 3 * voxel_count(dims) {
            return Err(Error::Validation(format!(
                "field of {} values does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite displacement".into()));
        }
        Ok(DeformationField { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        DeformationField {
            dims,
            data: vec![0.0; 3 * voxel_count(dims)],
        }
    }

    /// Same displacement at every voxel.
    pub fn constant(dims: Dims, d: [f32; 3]) -> Self {
        let s = voxel_count(dims);
        let data = (0..3).flat_map(|a| std::iter::repeat(d[a]).take(s)).collect();
        DeformationField { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Component `axis` (0 = z, 1 = y, 2 = x).
    pub fn component(&self, axis: usize) -> &[f32] {
        let s = voxel_count(self.dims);
        &self.data[axis * s..(axis + 1) * s]
    }

    pub fn at(&self, i: usize) -> [f32; 3] {
        let s = voxel_count(self.dims);
        [self.data[i], self.data[s + i], self.data[2 * s + i]]
    }

    pub fn magnitude(&self, i: usize) -> f32 {
        let [a, b, c] = self.at(i);
        ((a as f64).powi(2) + (b as f64).powi(2) + (c as f64).powi(2)).sqrt() as f32
    }

    pub fn max_magnitude(&self) -> f32 {
        (0..voxel_count(self.dims))
            .map(|i| self.magnitude(i))
            .fold(0.0, f32::max)
    }

    pub fn scaled(&self, c: f32) -> Self {
        DeformationField {
            dims: self.dims,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `[1, 3, D, H, W]` tensor view.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let [d, h, w] = self.dims;
        Tensor::new(
            vec![1, 3, d, h, w],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    /// Item `n` of a `[N, 3, D, H, W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (_, c, s) = t.ncs();
        if c != 3 {
            return Err(Error::Shape(format!("field tensor needs 3 channels, got {c}")));
        }
        let data = t.data()[n * 3 * s..(n + 1) * 3 * s]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        DeformationField::new(t.spatial(), data)
    }
}

const COMPONENTS: [&str; 3] = ["dz", "dy", "dx"];

/// Writes `<stem>_dz.mivol`, `<stem>_dy.mivol`, `<stem>_dx.mivol` into `dir`.
///
/// Displacements are unbounded, so the component volumes are tagged `HU`
/// (the unconstrained unit) rather than `NORM`.
pub fn save_field(field: &DeformationField, spacing: [f64; 3], dir: &Path, stem: &str) -> Result<()> {
    for (a, name) in COMPONENTS.iter().enumerate() {
        let v = Volume::new(
            field.dims,
            spacing,
            field.component(a).to_vec(),
            Units::Hu,
            Modality::Target,
        )?;
        volume::save_volume(&v, dir.join(format!("{stem}_{name}.mivol")))?;
    }
    Ok(())
}

pub fn load_field(dir: &Path, stem: &str) -> Result<DeformationField> {
    let mut data = Vec::new();
    let mut dims = None;
    for name in COMPONENTS {
        let v = volume::load_volume(dir.join(format!("{stem}_{name}.mivol")))?;
        if *dims.get_or_insert(v.dims()) != v.dims() {
            return Err(Error::Shape(format!("field components of `{stem}` disagree in dims")));
        }
        data.extend_from_slice(v.voxels());
    }
    DeformationField::new(dims.expect("three components"), data)
}

/// Re-sampler: `out(p) = x(p + φ(p))`, trilinear, clamp-to-border.
pub fn warp(x: &Volume, field: &DeformationField) -> Result<Volume> {
    if x.dims() != field.dims {
        return Err(Error::Shape(format!(
            "warp: volume {:?} vs field {:?}",
            x.dims(),
            field.dims
        )));
    }
    let t: Tensor<f64> = volume::stack(&[x])?;
    let out = kernels::grid_sample_forward(&t, &field.to_tensor());
    let mut voxels: Vec<f32> = out.data().iter().map(|&v| v as f32).collect();
    if x.units() == Units::Normalized {
        // Convex combinations can overshoot ±1 by a rounding error.
        voxels.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
    x.with_voxels(voxels)
}

/// Mean over voxels and components of squared forward differences along
/// z, y and x; the last slice along each axis contributes nothing.
pub fn smoothness_loss(field: &DeformationField) -> f64 {
    kernels::smoothness_forward(&field.to_tensor::<f64>())
}

/// U-Net field generator: the source and target images are concatenated
/// channelwise, encoded by four stride-2 convolutions and decoded with skip
/// connections; a zero-initialized 3-channel convolution emits the field.
#[derive(Clone, Debug)]
pub struct RegNet {
    enc: [Conv; 4],
    dec: [Conv; 5],
    flow: Conv,
}

pub const REG_PREFIX: &str = "reg";
const LEAK: f64 = 0.2;

impl RegNet {
    pub fn new(channel_scale: f64) -> Self {
        let e = [16, 32, 32, 32].map(|c| scaled(c, channel_scale));
        let d = [32, 32, 32, 32, 16].map(|c| scaled(c, channel_scale));
        let conv = |name: &str, cin, cout, stride| Conv::new(format!("{REG_PREFIX}.{name}"), cin, cout, 3, stride);
        RegNet {
            enc: [
                conv("enc1", 2, e[0], 2),
                conv("enc2", e[0], e[1], 2),
                conv("enc3", e[1], e[2], 2),
                conv("enc4", e[2], e[3], 2),
            ],
            dec: [
                conv("dec1", e[3], d[0], 1),
                conv("dec2", d[0] + e[2], d[1], 1),
                conv("dec3", d[1] + e[1], d[2], 1),
                conv("dec4", d[2] + e[0], d[3], 1),
                conv("dec5", d[3] + 2, d[4], 1),
            ],
            flow: conv("flow", d[4], 3, 1),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for c in self.enc.iter().chain(&self.dec) {
            c.declare(store, rng);
        }
        store.init_conv_zero(&self.flow.prefix, self.flow.cin, 3, 3);
    }

    /// `φ = R(I_s, I_t)` for `[N, 1, D, H, W]` inputs with dims divisible by 16.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, src: Var, tgt: Var) -> Result<Var> {
        let dims = g.value(src).spatial();
        if dims.iter().any(|d| d % 16 != 0) {
            return Err(Error::Shape(format!(
                "registration input dims must be multiples of 16, got {dims:?}"
            )));
        }
        if g.value(src).shape() != g.value(tgt).shape() {
            return Err(Error::Shape(format!(
                "registration pair: {:?} vs {:?}",
                g.value(src).shape(),
                g.value(tgt).shape()
            )));
        }
        let x0 = g.concat(&[src, tgt])?;
        let mut skips = vec![x0];
        let mut h = x0;
        for conv in &self.enc {
            let y = conv.forward(g, store, h)?;
            h = g.leaky_relu(y, LEAK);
            skips.push(h);
        }
        skips.pop();
        let y = self.dec[0].forward(g, store, h)?;
        h = g.leaky_relu(y, LEAK);
        for conv in &self.dec[1..] {
            let up = g.upsample2(h);
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat(&[up, skip])?;
            let y = conv.forward(g, store, cat)?;
            h = g.leaky_relu(y, LEAK);
        }
        self.flow.forward(g, store, h)
    }
}

fn check_normalized(v: &Volume) -> Result<()> {
    if v.units() != Units::Normalized {
        return Err(Error::Parameter("registration expects normalized volumes".into()));
    }
    Ok(())
}

/// Predicts the field aligning `src` to `tgt`.
pub fn predict_field(net: &RegNet, store: &ParamStore<f32>, src: &Volume, tgt: &Volume) -> Result<DeformationField> {
    check_normalized(src)?;
    check_normalized(tgt)?;
    if src.dims() != tgt.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", src.dims(), tgt.dims())));
    }
    let mut g = Graph::no_grad();
    let s = g.input(volume::stack(&[src])?);
    let t = g.input(volume::stack(&[tgt])?);
    let phi = net.forward(&mut g, store, s, t)?;
    DeformationField::from_tensor(g.value(phi), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn ramp(dims: Dims, f: impl Fn(usize, usize, usize) -> f32, units: Units) -> Volume {
        let mut vox = Vec::new();
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    vox.push(f(z, y, x));
                }
            }
        }
        Volume::new(dims, [1.0; 3], vox, units, Modality::Target).unwrap()
    }

    #[test]
    fn zero_field_is_identity() {
        let v = ramp([5, 6, 7], |z, y, x| (z * 100 + y * 10 + x) as f32, Units::Hu);
        assert_eq!(warp(&v, &DeformationField::zeros([5, 6, 7])).unwrap(), v);
    }

    #[test]
    fn unit_shift_matches_index_oracle() {
        let v = ramp([5, 5, 5], |z, y, x| (z * 25 + y * 5 + x) as f32, Units::Hu);
        let out = warp(&v, &DeformationField::constant([5, 5, 5], [0.0, 0.0, 1.0])).unwrap();
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    assert_eq!(out.at(z, y, x), v.at(z, y, (x + 1).min(4)));
                }
            }
        }
    }

    #[test]
    fn half_voxel_shift_is_exact_on_linear_ramp() {
        let v = ramp([4, 4, 8], |_, _, x| x as f32, Units::Hu);
        let out = warp(&v, &DeformationField::constant([4, 4, 8], [0.0, 0.0, 0.5])).unwrap();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..7 {
                    assert_eq!(out.at(z, y, x), x as f32 + 0.5);
                }
            }
        }
    }

    #[test]
    fn warp_rejects_dim_mismatch() {
        let v = ramp([4, 4, 4], |_, _, _| 0.0, Units::Hu);
        assert!(matches!(warp(&v, &DeformationField::zeros([4, 4, 5])), Err(Error::Shape(_))));
    }

    #[test]
    fn smoothness_of_constant_field_is_zero() {
        let f = DeformationField::constant([4, 5, 6], [1.5, -2.0, 0.25]);
        assert_eq!(smoothness_loss(&f), 0.0);
    }

    #[test]
    fn smoothness_of_linear_dx_matches_summation_oracle() {
        let dims = [4, 4, 4];
        let s = voxel_count(dims);
        for alpha in [0.5f32, 1.0, 3.0] {
            let mut data = vec![0.0; 3 * s];
            for z in 0..4 {
                for y in 0..4 {
                    for x in 0..4 {
                        data[2 * s + (z * 4 + y) * 4 + x] = alpha * x as f32;
                    }
                }
            }
            let f = DeformationField::new(dims, data).unwrap();
            // Only dx varies, only along x: 3 forward differences of α per row,
            // 16 rows; averaged over 3 components × 64 voxels.
            let mut oracle = 0.0f64;
            for _row in 0..16 {
                for _step in 0..3 {
                    oracle += (alpha as f64).powi(2);
                }
            }
            oracle /= (3 * s) as f64;
            assert!((smoothness_loss(&f) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_is_quadratically_homogeneous() {
        let mut rng = stream(3, Stream::Field);
        let data = (0..3 * 125).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let f = DeformationField::new([5, 5, 5], data).unwrap();
        let a = smoothness_loss(&f);
        let b = smoothness_loss(&f.scaled(3.0));
        assert!((b - 9.0 * a).abs() <= 1e-6 * b);
        assert!(a > 0.0);
    }

    #[test]
    fn fresh_network_predicts_zero_field() {
        let net = RegNet::new(0.25);
        let mut store = ParamStore::new();
        net.declare(&mut store, &mut stream(1, Stream::Init));
        for dims in [[32, 32, 32], [16, 32, 48]] {
            let a = ramp(dims, |z, y, x| ((z + y + x) % 7) as f32 / 7.0, Units::Normalized);
            let b = ramp(dims, |z, _, x| ((z * x) % 5) as f32 / 5.0 - 0.5, Units::Normalized);
            let phi = predict_field(&net, &store, &a, &b).unwrap();
            assert_eq!(phi.dims(), dims);
            assert!(phi.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn predict_rejects_hu_and_bad_dims() {
        let net = RegNet::new(0.25);
        let mut store = ParamStore::new();
        net.declare(&mut store, &mut stream(1, Stream::Init));
        let hu = ramp([16, 16, 16], |_, _, _| 0.0, Units::Hu);
        let n = ramp([16, 16, 16], |_, _, _| 0.0, Units::Normalized);
        assert!(matches!(predict_field(&net, &store, &hu, &n), Err(Error::Parameter(_))));
        let odd = ramp([16, 16, 24], |_, _, _| 0.0, Units::Normalized);
        assert!(matches!(predict_field(&net, &store, &odd, &odd), Err(Error::Shape(_))));
    }

    #[test]
    fn field_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream(5, Stream::Field);
        let data = (0..3 * 27).map(|_| rng.gen_range(-4.0f32..4.0)).collect();
        let f = DeformationField::new([3, 3, 3], data).unwrap();
        save_field(&f, [1.0; 3], dir.path(), "case").unwrap();
        assert_eq!(load_field(dir.path(), "case").unwrap(), f);
    }
}
