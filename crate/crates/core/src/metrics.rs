//! Masked image-quality metrics and cohort reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{self, Dims, Mask, Units, Volume};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(pred: &Volume, reference: &Volume, mask: &Mask) -> Result<()> {
    if pred.units() != Units::Hu || reference.units() != Units::Hu {
        return Err(Error::Parameter("metrics expect HU volumes".into()));
    }
    if pred.dims() != reference.dims() || mask.dims() != pred.dims() {
        return Err(Error::Shape(format!(
            "pred {:?}, ref {:?}, mask {:?}",
            pred.dims(),
            reference.dims(),
            mask.dims()
        )));
    }
    mask.require_nonempty()
}

/// Mean |pred − ref| over mask voxels.
pub fn mae_masked(pred: &Volume, reference: &Volume, mask: &Mask) -> Result<f64> {
    check(pred, reference, mask)?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ((&p, &r), &m) in pred.voxels().iter().zip(reference.voxels()).zip(mask.voxels()) {
        if m != 0 {
            sum += (p as f64 - r as f64).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// `10·log10(range² / MSE)` over mask voxels; `+∞` when the images agree.
pub fn psnr_masked(pred: &Volume, reference: &Volume, mask: &Mask, data_range: f64) -> Result<f64> {
    check(pred, reference, mask)?;
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!("data range must be > 0, got {data_range}")));
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ((&p, &r), &m) in pred.voxels().iter().zip(reference.voxels()).zip(mask.voxels()) {
        if m != 0 {
            sum += (p as f64 - r as f64).powi(2);
            n += 1;
        }
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_kernel() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output dims shrink by `2·radius` per axis.
fn filter_valid(data: &[f64], dims: Dims, k: &[f64]) -> (Vec<f64>, Dims) {
    let taps = k.len();
    let mut cur = data.to_vec();
    let mut cd = dims;
    for axis in 0..3 {
        let mut nd = cd;
        nd[axis] = cd[axis] + 1 - taps;
        let mut out = vec![0.0; nd[0] * nd[1] * nd[2]];
        let stride = match axis {
            0 => cd[1] * cd[2],
            1 => cd[2],
            _ => 1,
        };
        let mut o = 0;
        for z in 0..nd[0] {
            for y in 0..nd[1] {
                for x in 0..nd[2] {
                    let base = (z * cd[1] + y) * cd[2] + x;
                    let mut acc = 0.0;
                    for (t, &kv) in k.iter().enumerate() {
                        acc += kv * cur[base + t * stride];
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
        cur = out;
        cd = nd;
    }
    (cur, cd)
}

/// 3D SSIM with an 11³ Gaussian window (σ = 1.5), averaged over window
/// centers inside the mask for which the whole window lies in the volume.
pub fn ssim_masked(pred: &Volume, reference: &Volume, mask: &Mask, data_range: f64) -> Result<f64> {
    check(pred, reference, mask)?;
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!("data range must be > 0, got {data_range}")));
    }
    let dims = pred.dims();
    let taps = 2 * SSIM_RADIUS + 1;
    if dims.iter().any(|&d| d < taps) {
        return Err(Error::Shape(format!(
            "volume {dims:?} smaller than the {taps}³ SSIM window"
        )));
    }
    let k = gaussian_kernel();
    let x: Vec<f64> = pred.voxels().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = reference.voxels().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (mx, vd) = filter_valid(&x, dims, &k);
    let (my, _) = filter_valid(&y, dims, &k);
    let (mxx, _) = filter_valid(&xx, dims, &k);
    let (myy, _) = filter_valid(&yy, dims, &k);
    let (mxy, _) = filter_valid(&xy, dims, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let r = SSIM_RADIUS;
    let (mut sum, mut n) = (0.0, 0usize);
    for z in 0..vd[0] {
        for yy_ in 0..vd[1] {
            for xx_ in 0..vd[2] {
                let center = ((z + r) * dims[1] + yy_ + r) * dims[2] + xx_ + r;
                if !mask.is_set(center) {
                    continue;
                }
                let i = (z * vd[1] + yy_) * vd[2] + xx_;
                let (ux, uy) = (mx[i], my[i]);
                let sx = mxx[i] - ux * ux;
                let sy = myy[i] - uy * uy;
                let sxy = mxy[i] - ux * uy;
                sum += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sx + sy + c2));
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("no mask voxel lies at a valid SSIM window center".into()));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// HU conversion window and PSNR/SSIM data range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalWindow {
    pub lo: f32,
    pub hi: f32,
}

impl Default for EvalWindow {
    fn default() -> Self {
        EvalWindow {
            lo: volume::DEFAULT_WINDOW.0,
            hi: volume::DEFAULT_WINDOW.1,
        }
    }
}

impl EvalWindow {
    pub fn range(&self) -> f64 {
        self.hi as f64 - self.lo as f64
    }

    fn to_hu(&self, v: Volume) -> Result<Volume> {
        match v.units() {
            Units::Hu => Ok(v),
            Units::Normalized => volume::denormalize_intensity(&v, self.lo, self.hi),
        }
    }
}

pub fn evaluate_case(id: &str, pred: &Volume, reference: &Volume, mask: &Mask, w: EvalWindow) -> Result<CaseMetrics> {
    let pred = w.to_hu(pred.clone())?;
    let reference = w.to_hu(reference.clone())?;
    Ok(CaseMetrics {
        case: id.to_string(),
        mae: mae_masked(&pred, &reference, mask)?,
        psnr: psnr_masked(&pred, &reference, mask, w.range())?,
        ssim: ssim_masked(&pred, &reference, mask, w.range())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single case).
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub mae_hu: MeanStd,
    /// Computed over cases with finite PSNR.
    pub psnr_db: Option<MeanStd>,
    pub psnr_inf_cases: usize,
    pub ssim: MeanStd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortReport {
    pub cases: Vec<CaseMetrics>,
    pub summary: Summary,
}

impl CohortReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Dataset("no cases to summarize".into()));
        }
        let mae: Vec<f64> = cases.iter().map(|c| c.mae).collect();
        let ssim: Vec<f64> = cases.iter().map(|c| c.ssim).collect();
        let psnr: Vec<f64> = cases.iter().map(|c| c.psnr).filter(|p| p.is_finite()).collect();
        let summary = Summary {
            cases: cases.len(),
            mae_hu: mean_std(&mae),
            psnr_db: (!psnr.is_empty()).then(|| mean_std(&psnr)),
            psnr_inf_cases: cases.len() - psnr.len(),
            ssim: mean_std(&ssim),
        };
        Ok(CohortReport { cases, summary })
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("case,mae_hu,psnr_db,ssim\n");
        for c in &self.cases {
            let psnr = if c.psnr.is_finite() { c.psnr.to_string() } else { "inf".into() };
            let _ = writeln!(s, "{},{},{},{}", c.case, c.mae, psnr, c.ssim);
        }
        s
    }

    /// Writes `metrics.csv` and `summary.json` into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let csv = out.join("metrics.csv");
        fs::write(&csv, self.csv()).map_err(|e| Error::io(&csv, e))?;
        let json = serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Format(e.to_string()))?;
        let path = out.join("summary.json");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn case_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "mivol") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Scores every `<case>.mivol` in `pred_dir` against the same-named files in
/// `ref_dir` and `mask_dir`.
pub fn evaluate_dataset(pred_dir: &Path, ref_dir: &Path, mask_dir: &Path, w: EvalWindow) -> Result<CohortReport> {
    let ids = case_ids(pred_dir)?;
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no .mivol cases in {}", pred_dir.display())));
    }
    let refs = case_ids(ref_dir)?;
    let masks = case_ids(mask_dir)?;
    let missing: Vec<&String> = ids
        .iter()
        .filter(|id| refs.binary_search(id).is_err() || masks.binary_search(id).is_err())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "cases without reference or mask: {}",
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let mut cases = Vec::with_capacity(ids.len());
    for id in &ids {
        let file = format!("{id}.mivol");
        let pred = volume::load_volume(pred_dir.join(&file))?;
        let reference = volume::load_volume(ref_dir.join(&file))?;
        let mask = volume::load_mask(mask_dir.join(&file))?;
        cases.push(evaluate_case(id, &pred, &reference, &mask, w)?);
    }
    CohortReport::from_cases(cases)
}
