use std::collections::VecDeque;

use super::{Mask, Units, Volume};
use crate::error::{Error, Result};

/// Body mask of an HU volume: voxels above `threshold`, reduced to the largest
/// 6-connected component, with enclosed holes filled slice by slice along z.
pub fn compute_body_mask(v: &Volume, threshold: f32) -> Result<Mask> {
    if v.units() != Units::Hu {
        return Err(Error::Parameter("compute_body_mask expects HU input".into()));
    }
    let dims = v.dims();
    let fg: Vec<bool> = v.voxels().iter().map(|&x| x > threshold).collect();
    if !fg.iter().any(|&b| b) {
        return Err(Error::EmptyMask(format!("no voxel above {threshold} HU")));
    }

    // Label components; keep the largest (first found wins ties).
    let [d, h, w] = dims;
    let mut label = vec![0u32; fg.len()];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            let mut visit = |j: usize| {
                if fg[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if z > 0 { visit(i - h * w); }
            if z + 1 < d { visit(i + h * w); }
            if y > 0 { visit(i - w); }
            if y + 1 < h { visit(i + w); }
            if x > 0 { visit(i - 1); }
            if x + 1 < w { visit(i + 1); }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let mut out: Vec<u8> = label.iter().map(|&l| (l == best.0) as u8).collect();

    // Per-slice hole fill: background not 4-connected to the slice border.
    let mut outside = vec![false; h * w];
    for z in 0..d {
        let slice = &mut out[z * h * w..(z + 1) * h * w];
        outside.iter_mut().for_each(|o| *o = false);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                if border && slice[i] == 0 && !outside[i] {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if slice[j] == 0 && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 { visit(i - w); }
            if y + 1 < h { visit(i + w); }
            if x > 0 { visit(i - 1); }
            if x + 1 < w { visit(i + 1); }
        }
        for (m, &o) in slice.iter_mut().zip(&outside) {
            if !o {
                *m = 1;
            }
        }
    }
    Mask::new(dims, out)
}
