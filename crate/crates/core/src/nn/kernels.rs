//! Forward and backward kernels for the volumetric ops. All tensors are
//! `[N, C, D, H, W]`, x-fastest.

use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, input: [usize; 3]) -> Self {
        let pad = (k - 1) / 2;
        let out = |d: usize| (d + 2 * pad - k) / stride + 1;
        ConvGeom {
            cin,
            cout,
            k,
            stride,
            pad,
            input,
            output: [out(input[0]), out(input[1]), out(input[2])],
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn out_voxels(&self) -> usize {
        self.output.iter().product()
    }

    fn in_voxels(&self) -> usize {
        self.input.iter().product()
    }

    /// Output index range `[lo, hi)` along one axis for which
    /// `o * stride + kk - pad` lands inside `[0, extent)`.
    fn valid_range(&self, kk: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // o * s + off <= extent - 1
        let hi_incl = (extent as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out_extent as isize);
        (lo.min(hi).max(0) as usize, hi as usize)
    }
}

/// Output z-planes per column tile; keeps the im2col buffer near L2 size.
fn planes_per_tile(g: &ConvGeom) -> usize {
    let plane = g.output[1] * g.output[2];
    let budget = (256 * 1024) / g.rows().max(1);
    (budget / plane.max(1)).clamp(1, g.output[0])
}

/// Fills `col` (`rows × (z1 - z0)·oh·ow`) for output planes `z0..z1`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T], z0: usize, z1: usize) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let p = (z1 - z0) * oh * ow;
    let k = g.k;
    let s = g.stride;
    col[..g.rows() * p].iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.cin {
        let src = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            let (z_lo, z_hi) = g.valid_range(kz, d, od);
            let (z_lo, z_hi) = (z_lo.max(z0), z_hi.min(z1));
            for ky in 0..k {
                let (y_lo, y_hi) = g.valid_range(ky, h, oh);
                for kx in 0..k {
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oz in z_lo..z_hi {
                        let iz = oz * s + kz - g.pad;
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - g.pad;
                            let base_in = (iz * h + iy) * w;
                            let base_out = ((oz - z0) * oh + oy) * ow;
                            if s == 1 {
                                let ix0 = x_lo + kx - g.pad;
                                let n = x_hi.saturating_sub(x_lo);
                                dst[base_out + x_lo..base_out + x_lo + n]
                                    .copy_from_slice(&src[base_in + ix0..base_in + ix0 + n]);
                            } else {
                                for ox in x_lo..x_hi {
                                    dst[base_out + ox] = src[base_in + ox * s + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T], z0: usize, z1: usize) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let p = (z1 - z0) * oh * ow;
    let k = g.k;
    let s = g.stride;
    for ci in 0..g.cin {
        let dst = &mut dx[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            let (z_lo, z_hi) = g.valid_range(kz, d, od);
            let (z_lo, z_hi) = (z_lo.max(z0), z_hi.min(z1));
            for ky in 0..k {
                let (y_lo, y_hi) = g.valid_range(ky, h, oh);
                for kx in 0..k {
                    let (x_lo, x_hi) = g.valid_range(kx, w, ow);
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oz in z_lo..z_hi {
                        let iz = oz * s + kz - g.pad;
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - g.pad;
                            let base_in = (iz * h + iy) * w;
                            let base_out = ((oz - z0) * oh + oy) * ow;
                            if s == 1 {
                                let ix0 = x_lo + kx - g.pad;
                                let n = x_hi.saturating_sub(x_lo);
                                for (a, &b) in dst[base_in + ix0..base_in + ix0 + n]
                                    .iter_mut()
                                    .zip(&src[base_out + x_lo..base_out + x_lo + n])
                                {
                                    *a += b;
                                }
                            } else {
                                for ox in x_lo..x_hi {
                                    dst[base_in + ox * s + kx - g.pad] += src[base_out + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Tensor<T> {
    let n = x.shape()[0];
    let p = g.out_voxels();
    let plane = g.output[1] * g.output[2];
    let rows = g.rows();
    let tile = planes_per_tile(g);
    let in_stride = g.cin * g.in_voxels();
    let mut out = Tensor::zeros(vec![n, g.cout, g.output[0], g.output[1], g.output[2]]);
    let mut col = vec![T::zero(); rows * tile * plane];
    for i in 0..n {
        let xs = &x.data()[i * in_stride..(i + 1) * in_stride];
        let os = &mut out.data_mut()[i * g.cout * p..(i + 1) * g.cout * p];
        if let Some(b) = b {
            for (co, chunk) in os.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[co]);
            }
        }
        let mut z0 = 0;
        while z0 < g.output[0] {
            let z1 = (z0 + tile).min(g.output[0]);
            let tp = (z1 - z0) * plane;
            im2col(g, xs, &mut col, z0, z1);
            T::gemm(
                g.cout,
                rows,
                tp,
                T::one(),
                w.data(),
                rows as isize,
                1,
                &col,
                tp as isize,
                1,
                T::one(),
                &mut os[z0 * plane..],
                p as isize,
                1,
            );
            z0 = z1;
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` and `dw` only when requested.
pub fn conv3d_backward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let n = x.shape()[0];
    let p = g.out_voxels();
    let plane = g.output[1] * g.output[2];
    let rows = g.rows();
    let tile = planes_per_tile(g);
    let in_stride = g.cin * g.in_voxels();
    let mut db = Tensor::zeros(vec![g.cout]);
    let mut dw = want_dw.then(|| Tensor::zeros(w.shape().to_vec()));
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut col = vec![T::zero(); rows * tile * plane];
    for i in 0..n {
        let dys = &dy.data()[i * g.cout * p..(i + 1) * g.cout * p];
        for (co, chunk) in dys.chunks(p).enumerate() {
            db.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        let xs = &x.data()[i * in_stride..(i + 1) * in_stride];
        let mut z0 = 0;
        while z0 < g.output[0] {
            let z1 = (z0 + tile).min(g.output[0]);
            let tp = (z1 - z0) * plane;
            let dyt = &dys[z0 * plane..];
            if let Some(dw) = dw.as_mut() {
                im2col(g, xs, &mut col, z0, z1);
                T::gemm(
                    g.cout,
                    tp,
                    rows,
                    T::one(),
                    dyt,
                    p as isize,
                    1,
                    &col,
                    1,
                    tp as isize,
                    T::one(),
                    dw.data_mut(),
                    rows as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    rows,
                    g.cout,
                    tp,
                    T::one(),
                    w.data(),
                    1,
                    rows as isize,
                    dyt,
                    p as isize,
                    1,
                    T::zero(),
                    &mut col,
                    tp as isize,
                    1,
                );
                col2im(g, &col, &mut dx.data_mut()[i * in_stride..(i + 1) * in_stride], z0, z1);
            }
            z0 = z1;
        }
    }
    (dx, dw, db)
}

pub const IN_EPS: f64 = 1e-5;

/// Per-(sample, channel) normalization. Returns the normalized tensor and the
/// inverse standard deviations.
pub fn instance_norm_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (n, c, s) = x.ncs();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut inv = Vec::with_capacity(n * c);
    let eps = T::lit(IN_EPS);
    let len = T::from_usize(s).unwrap();
    for (src, dst) in x.data().chunks(s).zip(out.data_mut().chunks_mut(s)) {
        let mean = src.iter().copied().sum::<T>() / len;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / len;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        inv.push(is);
    }
    debug_assert_eq!(inv.len(), n * c);
    (out, inv)
}

pub fn instance_norm_backward<T: Real>(y: &Tensor<T>, inv: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let (_, _, s) = y.ncs();
    let len = T::from_usize(s).unwrap();
    let mut dx = Tensor::zeros(y.shape().to_vec());
    for (((ys, dys), dxs), &is) in y
        .data()
        .chunks(s)
        .zip(dy.data().chunks(s))
        .zip(dx.data_mut().chunks_mut(s))
        .zip(inv)
    {
        let mean_dy = dys.iter().copied().sum::<T>() / len;
        let mean_dy_y = ys.iter().zip(dys).map(|(&a, &b)| a * b).sum::<T>() / len;
        for ((o, &yv), &g) in dxs.iter_mut().zip(ys).zip(dys) {
            *o = is * (g - mean_dy - yv * mean_dy_y);
        }
    }
    dx
}

pub fn upsample2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, _) = x.ncs();
    let [d, h, w] = x.spatial();
    let mut out = Tensor::zeros(vec![n, c, 2 * d, 2 * h, 2 * w]);
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    for (src, dst) in x
        .data()
        .chunks(d * h * w)
        .zip(out.data_mut().chunks_mut(od * oh * ow))
    {
        for z in 0..od {
            for y in 0..oh {
                let srow = &src[((z / 2) * h + y / 2) * w..][..w];
                let drow = &mut dst[(z * oh + y) * ow..][..ow];
                for (x2, v) in drow.iter_mut().enumerate() {
                    *v = srow[x2 / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, _) = dy.ncs();
    let [od, oh, ow] = dy.spatial();
    let (d, h, w) = (od / 2, oh / 2, ow / 2);
    let mut dx = Tensor::zeros(vec![n, c, d, h, w]);
    for (src, dst) in dy
        .data()
        .chunks(od * oh * ow)
        .zip(dx.data_mut().chunks_mut(d * h * w))
    {
        for z in 0..od {
            for y in 0..oh {
                let srow = &src[(z * oh + y) * ow..][..ow];
                let drow = &mut dst[((z / 2) * h + y / 2) * w..][..w];
                for (x2, &v) in srow.iter().enumerate() {
                    drow[x2 / 2] += v;
                }
            }
        }
    }
    dx
}

/// 2×2×2 average pooling with stride 2; odd trailing planes are dropped.
pub fn avgpool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, _) = x.ncs();
    let [d, h, w] = x.spatial();
    let (od, oh, ow) = ((d / 2).max(1), (h / 2).max(1), (w / 2).max(1));
    let mut out = Tensor::zeros(vec![n, c, od, oh, ow]);
    for (src, dst) in x
        .data()
        .chunks(d * h * w)
        .zip(out.data_mut().chunks_mut(od * oh * ow))
    {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = T::zero();
                    let mut cnt = 0usize;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (iz, iy, ix) = (2 * z + dz, 2 * y + dy, 2 * xo + dx);
                                if iz < d && iy < h && ix < w {
                                    acc += src[(iz * h + iy) * w + ix];
                                    cnt += 1;
                                }
                            }
                        }
                    }
                    dst[(z * oh + y) * ow + xo] = acc / T::from_usize(cnt).unwrap();
                }
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let [d, h, w] = [input_shape[2], input_shape[3], input_shape[4]];
    let [od, oh, ow] = dy.spatial();
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (src, dst) in dy
        .data()
        .chunks(od * oh * ow)
        .zip(dx.data_mut().chunks_mut(d * h * w))
    {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut cells = [(0usize, 0usize, 0usize); 8];
                    let mut cnt = 0usize;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (iz, iy, ix) = (2 * z + dz, 2 * y + dy, 2 * xo + dx);
                                if iz < d && iy < h && ix < w {
                                    cells[cnt] = (iz, iy, ix);
                                    cnt += 1;
                                }
                            }
                        }
                    }
                    let g = src[(z * oh + y) * ow + xo] / T::from_usize(cnt).unwrap();
                    for &(iz, iy, ix) in &cells[..cnt] {
                        dst[(iz * h + iy) * w + ix] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Trilinear corner lookup for one sample coordinate, with the coordinate
/// clamped to `[0, extent - 1]` on each axis.
#[derive(Clone, Copy)]
struct Corners<T> {
    i0: [usize; 3],
    i1: [usize; 3],
    frac: [T; 3],
    /// Whether the coordinate was inside the clamp range (gradient passes).
    inside: [bool; 3],
}

#[inline]
fn corners<T: Real>(q: [T; 3], dims: [usize; 3]) -> Corners<T> {
    let mut i0 = [0; 3];
    let mut i1 = [0; 3];
    let mut frac = [T::zero(); 3];
    let mut inside = [true; 3];
    for a in 0..3 {
        let hi = T::from_usize(dims[a] - 1).unwrap();
        let mut c = q[a];
        if c < T::zero() {
            c = T::zero();
            inside[a] = false;
        } else if c > hi {
            c = hi;
            inside[a] = false;
        }
        let f = c.floor();
        let base = f.to_usize().unwrap_or(0).min(dims[a] - 1);
        i0[a] = base;
        i1[a] = (base + 1).min(dims[a] - 1);
        frac[a] = c - f;
    }
    Corners {
        i0,
        i1,
        frac,
        inside,
    }
}

/// `out(p) = x(p + field(p))` with trilinear interpolation and clamp-to-border.
/// `field` is `[N, 3, D, H, W]` with components ordered (dz, dy, dx).
pub fn grid_sample_forward<T: Real>(x: &Tensor<T>, field: &Tensor<T>) -> Tensor<T> {
    let (n, c, s) = x.ncs();
    let dims = x.spatial();
    let [d, h, w] = dims;
    let mut out = Tensor::zeros(x.shape().to_vec());
    for b in 0..n {
        let f = &field.data()[b * 3 * s..(b + 1) * 3 * s];
        let xs = &x.data()[b * c * s..(b + 1) * c * s];
        let os = &mut out.data_mut()[b * c * s..(b + 1) * c * s];
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let p = (z * h + y) * w + xx;
                    let q = [
                        T::from_usize(z).unwrap() + f[p],
                        T::from_usize(y).unwrap() + f[s + p],
                        T::from_usize(xx).unwrap() + f[2 * s + p],
                    ];
                    let cr = corners(q, dims);
                    let [fz, fy, fx] = cr.frac;
                    let (gz, gy, gx) = (T::one() - fz, T::one() - fy, T::one() - fx);
                    let idx = |iz: usize, iy: usize, ix: usize| (iz * h + iy) * w + ix;
                    let i000 = idx(cr.i0[0], cr.i0[1], cr.i0[2]);
                    let i001 = idx(cr.i0[0], cr.i0[1], cr.i1[2]);
                    let i010 = idx(cr.i0[0], cr.i1[1], cr.i0[2]);
                    let i011 = idx(cr.i0[0], cr.i1[1], cr.i1[2]);
                    let i100 = idx(cr.i1[0], cr.i0[1], cr.i0[2]);
                    let i101 = idx(cr.i1[0], cr.i0[1], cr.i1[2]);
                    let i110 = idx(cr.i1[0], cr.i1[1], cr.i0[2]);
                    let i111 = idx(cr.i1[0], cr.i1[1], cr.i1[2]);
                    for ch in 0..c {
                        let v = &xs[ch * s..(ch + 1) * s];
                        let lo = gy * (gx * v[i000] + fx * v[i001]) + fy * (gx * v[i010] + fx * v[i011]);
                        let hi = gy * (gx * v[i100] + fx * v[i101]) + fy * (gx * v[i110] + fx * v[i111]);
                        os[ch * s + p] = gz * lo + fz * hi;
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dfield)`, each only when requested.
pub fn grid_sample_backward<T: Real>(
    x: &Tensor<T>,
    field: &Tensor<T>,
    dy: &Tensor<T>,
    want_dx: bool,
    want_dfield: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, c, s) = x.ncs();
    let dims = x.spatial();
    let [d, h, w] = dims;
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut df = want_dfield.then(|| Tensor::zeros(field.shape().to_vec()));
    for b in 0..n {
        let f = &field.data()[b * 3 * s..(b + 1) * 3 * s];
        let xs = &x.data()[b * c * s..(b + 1) * c * s];
        let dys = &dy.data()[b * c * s..(b + 1) * c * s];
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let p = (z * h + y) * w + xx;
                    let q = [
                        T::from_usize(z).unwrap() + f[p],
                        T::from_usize(y).unwrap() + f[s + p],
                        T::from_usize(xx).unwrap() + f[2 * s + p],
                    ];
                    let cr = corners(q, dims);
                    let [fz, fy, fx] = cr.frac;
                    let (gz, gy, gx) = (T::one() - fz, T::one() - fy, T::one() - fx);
                    let idx = |iz: usize, iy: usize, ix: usize| (iz * h + iy) * w + ix;
                    let ids = [
                        idx(cr.i0[0], cr.i0[1], cr.i0[2]),
                        idx(cr.i0[0], cr.i0[1], cr.i1[2]),
                        idx(cr.i0[0], cr.i1[1], cr.i0[2]),
                        idx(cr.i0[0], cr.i1[1], cr.i1[2]),
                        idx(cr.i1[0], cr.i0[1], cr.i0[2]),
                        idx(cr.i1[0], cr.i0[1], cr.i1[2]),
                        idx(cr.i1[0], cr.i1[1], cr.i0[2]),
                        idx(cr.i1[0], cr.i1[1], cr.i1[2]),
                    ];
                    let wts = [
                        gz * gy * gx,
                        gz * gy * fx,
                        gz * fy * gx,
                        gz * fy * fx,
                        fz * gy * gx,
                        fz * gy * fx,
                        fz * fy * gx,
                        fz * fy * fx,
                    ];
                    let mut gq = [T::zero(); 3];
                    for ch in 0..c {
                        let g = dys[ch * s + p];
                        if g == T::zero() {
                            continue;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dxs = &mut dx.data_mut()[(b * c + ch) * s..(b * c + ch + 1) * s];
                            for (&i, &wt) in ids.iter().zip(&wts) {
                                dxs[i] += g * wt;
                            }
                        }
                        if df.is_some() {
                            let v = &xs[ch * s..(ch + 1) * s];
                            let vv: [T; 8] = std::array::from_fn(|k| v[ids[k]]);
                            // d/dqz
                            let dz = gy * gx * (vv[4] - vv[0])
                                + gy * fx * (vv[5] - vv[1])
                                + fy * gx * (vv[6] - vv[2])
                                + fy * fx * (vv[7] - vv[3]);
                            let dyy = gz * gx * (vv[2] - vv[0])
                                + gz * fx * (vv[3] - vv[1])
                                + fz * gx * (vv[6] - vv[4])
                                + fz * fx * (vv[7] - vv[5]);
                            let dxx = gz * gy * (vv[1] - vv[0])
                                + gz * fy * (vv[3] - vv[2])
                                + fz * gy * (vv[5] - vv[4])
                                + fz * fy * (vv[7] - vv[6]);
                            gq[0] += g * dz;
                            gq[1] += g * dyy;
                            gq[2] += g * dxx;
                        }
                    }
                    if let Some(df) = df.as_mut() {
                        let dfs = &mut df.data_mut()[b * 3 * s..(b + 1) * 3 * s];
                        for a in 0..3 {
                            if cr.inside[a] {
                                dfs[a * s + p] += gq[a];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, df)
}

/// Mean over (batch, component, voxel) of the summed squared forward
/// differences along z, y and x; the last slice along each axis contributes 0.
pub fn smoothness_forward<T: Real>(field: &Tensor<T>) -> T {
    let (n, c, s) = field.ncs();
    let [d, h, w] = field.spatial();
    let mut acc = 0.0f64;
    for ch in field.data().chunks(s) {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let p = (z * h + y) * w + x;
                    let v = ch[p];
                    if z + 1 < d {
                        let g = (ch[p + h * w] - v).as_f64();
                        acc += g * g;
                    }
                    if y + 1 < h {
                        let g = (ch[p + w] - v).as_f64();
                        acc += g * g;
                    }
                    if x + 1 < w {
                        let g = (ch[p + 1] - v).as_f64();
                        acc += g * g;
                    }
                }
            }
        }
    }
    T::lit(acc / (n * c * s) as f64)
}

pub fn smoothness_backward<T: Real>(field: &Tensor<T>, upstream: T) -> Tensor<T> {
    let (n, c, s) = field.ncs();
    let [d, h, w] = field.spatial();
    let scale = T::lit(2.0) * upstream / T::from_usize(n * c * s).unwrap();
    let mut out = Tensor::zeros(field.shape().to_vec());
    for (ch, gch) in field.data().chunks(s).zip(out.data_mut().chunks_mut(s)) {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let p = (z * h + y) * w + x;
                    let v = ch[p];
                    for (ok, q) in [
                        (z + 1 < d, p + h * w),
                        (y + 1 < h, p + w),
                        (x + 1 < w, p + 1),
                    ] {
                        if ok {
                            let g = scale * (ch[q] - v);
                            gch[q] += g;
                            gch[p] -= g;
                        }
                    }
                }
            }
        }
    }
    out
}
