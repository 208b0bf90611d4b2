//! Volume data model: dense 3D scalar grids, binary masks, intensity
//! windowing, body masks and patch extraction.

mod io;
mod mask;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

pub use io::{load_mask, load_volume, save_mask, save_volume, volume_from_bytes, volume_to_bytes, MAGIC};
pub use mask::compute_body_mask;

/// Default HU window mapped onto `[-1, 1]`.
pub const DEFAULT_WINDOW: (f32, f32) = (-1000.0, 1000.0);

/// Default body-mask threshold in HU.
pub const BODY_THRESHOLD_HU: f32 = -500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "NORM")]
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "SOURCE")]
    Source,
    #[serde(rename = "TARGET")]
    Target,
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SOURCE" => Ok(Modality::Source),
            "TARGET" => Ok(Modality::Target),
            other => Err(Error::Parameter(format!("unknown domain `{other}`"))),
        }
    }
}

/// Spatial extent `(D, H, W)`.
pub type Dims = [usize; 3];

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Dense scalar volume, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    voxels: Vec<f32>,
    units: Units,
    modality: Modality,
}

impl Volume {
    pub fn new(
        dims: Dims,
        spacing: [f64; 3],
        voxels: Vec<f32>,
        units: Units,
        modality: Modality,
    ) -> Result<Self> {
        let v = Volume {
            dims,
            spacing,
            voxels,
            units,
            modality,
        };
        v.validate()?;
        Ok(v)
    }

    /// Unit-spacing volume filled with `value`.
    pub fn filled(dims: Dims, value: f32, units: Units, modality: Modality) -> Result<Self> {
        Volume::new(dims, [1.0; 3], vec![value; voxel_count(dims)], units, modality)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!(
                "volume dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.voxels.len() != voxel_count(self.dims) {
            return Err(Error::Validation(format!(
                "volume has {} voxels, dims {:?} require {}",
                self.voxels.len(),
                self.dims,
                voxel_count(self.dims)
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Validation(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if let Some(i) = self.voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite voxel at index {i}")));
        }
        if self.units == Units::Normalized {
            if let Some(i) = self.voxels.iter().position(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!(
                    "normalized voxel {} at index {i} outside [-1, 1]",
                    self.voxels[i]
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }

    /// Same metadata, new voxels; re-validated.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        Volume::new(self.dims, self.spacing, voxels, self.units, self.modality)
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn with_units(&self, voxels: Vec<f32>, units: Units) -> Result<Self> {
        Volume::new(self.dims, self.spacing, voxels, units, self.modality)
    }
}

/// Binary mask (0/1 per voxel).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    voxels: Vec<u8>,
}

impl Mask {
    pub fn new(dims: Dims, voxels: Vec<u8>) -> Result<Self> {
        if voxels.len() != voxel_count(dims) || dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!(
                "mask of {} voxels does not match dims {:?}",
                voxels.len(),
                dims
            )));
        }
        if voxels.iter().any(|&v| v > 1) {
            return Err(Error::Validation("mask voxels must be 0 or 1".into()));
        }
        Ok(Mask { dims, voxels })
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut voxels = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    voxels.push(f(z, y, x) as u8);
                }
            }
        }
        Mask { dims, voxels }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().map(|&v| v as usize).sum()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.voxels[i] != 0
    }

    /// Errors when no voxel is set.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.count() == 0 {
            return Err(Error::EmptyMask("mask has no set voxels".into()));
        }
        Ok(())
    }

    pub fn extract(&self, origin: [usize; 3], size: Dims) -> Result<Mask> {
        check_bounds(self.dims, origin.map(|o| o as i64), size)?;
        Ok(Mask {
            dims: size,
            voxels: copy_box(&self.voxels, self.dims, origin, size),
        })
    }
}

/// Clips to `[lo, hi]` HU and maps affinely onto `[-1, 1]`.
pub fn normalize_intensity(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if v.units != Units::Hu {
        return Err(Error::Parameter("normalize_intensity expects HU input".into()));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!("window requires lo < hi, got [{lo}, {hi}]")));
    }
    let (lo64, hi64) = (lo as f64, hi as f64);
    let voxels = v
        .voxels
        .iter()
        .map(|&x| {
            let c = (x as f64).clamp(lo64, hi64);
            ((2.0 * (c - lo64) / (hi64 - lo64)) - 1.0).clamp(-1.0, 1.0) as f32
        })
        .collect();
    v.with_units(voxels, Units::Normalized)
}

/// Inverse of [`normalize_intensity`] on the unclipped range.
pub fn denormalize_intensity(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if v.units != Units::Normalized {
        return Err(Error::Parameter("denormalize_intensity expects normalized input".into()));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!("window requires lo < hi, got [{lo}, {hi}]")));
    }
    let (lo64, hi64) = (lo as f64, hi as f64);
    let voxels = v
        .voxels
        .iter()
        .map(|&x| ((x as f64 + 1.0) * 0.5 * (hi64 - lo64) + lo64) as f32)
        .collect();
    v.with_units(voxels, Units::Hu)
}

fn check_bounds(dims: Dims, origin: [i64; 3], size: Dims) -> Result<()> {
    for a in 0..3 {
        if origin[a] < 0 || size[a] == 0 || origin[a] as usize + size[a] > dims[a] {
            return Err(Error::Bounds(format!(
                "patch origin {:?} size {:?} outside volume {:?}",
                origin, size, dims
            )));
        }
    }
    Ok(())
}

fn copy_box<T: Copy>(src: &[T], dims: Dims, origin: [usize; 3], size: Dims) -> Vec<T> {
    let mut out = Vec::with_capacity(voxel_count(size));
    for z in 0..size[0] {
        for y in 0..size[1] {
            let start = ((origin[0] + z) * dims[1] + origin[1] + y) * dims[2] + origin[2];
            out.extend_from_slice(&src[start..start + size[2]]);
        }
    }
    out
}

/// Copies the box `origin .. origin + size`; spacing and tags are preserved.
pub fn extract_patch(v: &Volume, origin: [i64; 3], size: Dims) -> Result<Volume> {
    check_bounds(v.dims, origin, size)?;
    let origin = origin.map(|o| o as usize);
    Volume::new(
        size,
        v.spacing,
        copy_box(&v.voxels, v.dims, origin, size),
        v.units,
        v.modality,
    )
}

/// Stacks same-sized volumes into a `[N, 1, D, H, W]` tensor.
pub fn stack<T: Real>(vols: &[&Volume]) -> Result<Tensor<T>> {
    let first = vols
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero volumes".into()))?;
    let dims = first.dims;
    let mut data = Vec::with_capacity(vols.len() * voxel_count(dims));
    for v in vols {
        if v.dims != dims {
            return Err(Error::Shape(format!("stack: {:?} vs {:?}", v.dims, dims)));
        }
        data.extend(v.voxels.iter().map(|&x| T::lit(x as f64)));
    }
    Ok(Tensor::new(vec![vols.len(), 1, dims[0], dims[1], dims[2]], data))
}

/// Extracts item `n` of a single-channel `[N, 1, D, H, W]` tensor as a volume
/// carrying `like`'s spacing and tags.
pub fn unstack<T: Real>(t: &Tensor<T>, n: usize, like: &Volume, units: Units) -> Result<Volume> {
    let (_, c, s) = t.ncs();
    if c != 1 || t.spatial() != like.dims {
        return Err(Error::Shape(format!(
            "unstack: tensor {:?} vs volume {:?}",
            t.shape(),
            like.dims
        )));
    }
    let voxels = t.data()[n * s..(n + 1) * s]
        .iter()
        .map(|v| v.as_f64() as f32)
        .collect();
    Volume::new(like.dims, like.spacing, voxels, units, like.modality)
}
