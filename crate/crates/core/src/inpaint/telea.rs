//! Fast-marching inpainting after Telea (2004).
//!
//! Unknown pixels are visited in increasing order of their distance to the
//! known region, obtained by solving the Eikonal equation `|∇T| = 1` on the
//! grid. Each pixel receives a normalized weighted average of the already
//! known pixels within `telea_radius`, weighted by a direction factor
//! (alignment with `∇T`), a geometric distance factor and a level-set
//! factor. There is no gradient-extrapolation term, so every filled value is
//! a convex combination of known values.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{hole_for, InpaintError, InpaintMethod};
use crate::imgcore::{round_to_u8, BitMask, ImageBuffer};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(Clone, Copy, PartialEq)]
struct Item {
    t: f64,
    idx: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (t, idx)
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One finalized pixel: linear index and its solved distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FillStep {
    pub idx: usize,
    pub distance: f64,
}

pub fn inpaint_telea(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
) -> Result<ImageBuffer, InpaintError> {
    run(image, mask, method, None)
}

/// As [`inpaint_telea`], also returning the order in which hole pixels were
/// finalized.
pub fn inpaint_telea_traced(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
) -> Result<(ImageBuffer, Vec<FillStep>), InpaintError> {
    let mut trace = Vec::new();
    let out = run(image, mask, method, Some(&mut trace))?;
    Ok((out, trace))
}

struct Grid {
    w: usize,
    h: usize,
}

impl Grid {
    #[inline]
    fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (x, y) = (idx % self.w, idx / self.w);
        let w = self.w;
        let h = self.h;
        [
            (x > 0).then(|| idx - 1),
            (x + 1 < w).then(|| idx + 1),
            (y > 0).then(|| idx - w),
            (y + 1 < h).then(|| idx + w),
        ]
        .into_iter()
        .flatten()
    }
}

/// Eikonal update from the smallest known neighbor along each axis.
fn solve_eikonal(grid: &Grid, idx: usize, flags: &[Flag], dist: &[f64]) -> f64 {
    let (x, y) = (idx % grid.w, idx / grid.w);
    let axis_min = |a: Option<usize>, b: Option<usize>| -> Option<f64> {
        [a, b]
            .into_iter()
            .flatten()
            .filter(|&n| flags[n] != Flag::Inside)
            .map(|n| dist[n])
            .min_by(f64::total_cmp)
    };
    let horiz = axis_min(
        (x > 0).then(|| idx - 1),
        (x + 1 < grid.w).then(|| idx + 1),
    );
    let vert = axis_min(
        (y > 0).then(|| idx - grid.w),
        (y + 1 < grid.h).then(|| idx + grid.w),
    );
    match (horiz, vert) {
        (Some(a), Some(b)) => {
            if (a - b).abs() >= 1.0 {
                a.min(b) + 1.0
            } else {
                let d = a - b;
                (a + b + (2.0 - d * d).sqrt()) * 0.5
            }
        }
        (Some(a), None) | (None, Some(a)) => a + 1.0,
        (None, None) => f64::INFINITY,
    }
}

/// Distances of known pixels from the hole, marched outward up to `limit`.
/// Returned as negative values so `T` is continuous across the boundary.
fn outside_distances(grid: &Grid, hole: &[bool], limit: f64) -> Vec<f64> {
    let n = grid.w * grid.h;
    // hole pixels stay `Inside` forever and act as walls
    let mut flags = vec![Flag::Inside; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for idx in 0..n {
        if !hole[idx] && grid.neighbors4(idx).any(|m| hole[m]) {
            flags[idx] = Flag::Band;
            dist[idx] = 0.0;
            heap.push(Item { t: 0.0, idx });
        }
    }
    let mut nbrs = Vec::with_capacity(4);
    while let Some(Item { t, idx }) = heap.pop() {
        if flags[idx] == Flag::Known {
            continue;
        }
        flags[idx] = Flag::Known;
        if t > limit {
            continue;
        }
        nbrs.clear();
        nbrs.extend(grid.neighbors4(idx));
        for &m in &nbrs {
            if flags[m] == Flag::Inside && !hole[m] {
                let d = solve_eikonal(grid, m, &flags, &dist).max(t);
                dist[m] = d;
                flags[m] = Flag::Band;
                heap.push(Item { t: d, idx: m });
            }
        }
    }
    (0..n)
        .map(|i| {
            if hole[i] {
                0.0
            } else {
                -dist[i].min(limit + 1.0)
            }
        })
        .collect()
}

fn run(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
    mut trace: Option<&mut Vec<FillStep>>,
) -> Result<ImageBuffer, InpaintError> {
    method.validate()?;
    if image.dims() != mask.dims() {
        return Err(InpaintError::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let hole_mask = hole_for(mask, method)?;
    let hole = hole_mask.bits();
    let grid = Grid {
        w: image.width() as usize,
        h: image.height() as usize,
    };
    let n = grid.w * grid.h;
    let radius = method.telea_radius as i64;

    let mut dist = outside_distances(&grid, hole, radius as f64 + 1.0);
    let mut flags: Vec<Flag> = hole
        .iter()
        .map(|&h| if h { Flag::Inside } else { Flag::Known })
        .collect();
    for (idx, &h) in hole.iter().enumerate() {
        if h {
            dist[idx] = f64::INFINITY;
        }
    }

    let mut values: Vec<[f64; 3]> = (0..n).map(|i| image.pixel_at(i).map(f64::from)).collect();

    let mut heap = BinaryHeap::new();
    for idx in 0..n {
        if !hole[idx] && grid.neighbors4(idx).any(|m| hole[m]) {
            flags[idx] = Flag::Band;
            heap.push(Item { t: dist[idx], idx });
        }
    }

    let mut nbrs = Vec::with_capacity(4);
    while let Some(Item { t, idx }) = heap.pop() {
        if flags[idx] == Flag::Known {
            continue;
        }
        flags[idx] = Flag::Known;
        if hole[idx] {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(FillStep { idx, distance: t });
            }
        }
        nbrs.clear();
        nbrs.extend(grid.neighbors4(idx));
        for &m in &nbrs {
            if flags[m] != Flag::Inside {
                continue;
            }
            let d = solve_eikonal(&grid, m, &flags, &dist).max(t);
            dist[m] = d;
            flags[m] = Flag::Band;
            values[m] = weighted_average(&grid, m, radius, &flags, &dist, &values)?;
            heap.push(Item { t: d, idx: m });
        }
    }

    let mut out = image.clone();
    for (idx, &h) in hole.iter().enumerate() {
        if h {
            out.set_pixel_at(idx, values[idx].map(round_to_u8));
        }
    }
    Ok(out)
}

fn distance_gradient(grid: &Grid, idx: usize, flags: &[Flag], dist: &[f64]) -> (f64, f64) {
    let (x, y) = (idx % grid.w, idx / grid.w);
    let ok = |n: usize| flags[n] != Flag::Inside;
    let axis = |prev: Option<usize>, next: Option<usize>| -> f64 {
        match (prev.filter(|&p| ok(p)), next.filter(|&q| ok(q))) {
            (Some(p), Some(q)) => (dist[q] - dist[p]) * 0.5,
            (None, Some(q)) => dist[q] - dist[idx],
            (Some(p), None) => dist[idx] - dist[p],
            (None, None) => 0.0,
        }
    };
    let gx = axis((x > 0).then(|| idx - 1), (x + 1 < grid.w).then(|| idx + 1));
    let gy = axis(
        (y > 0).then(|| idx - grid.w),
        (y + 1 < grid.h).then(|| idx + grid.w),
    );
    (gx, gy)
}

fn weighted_average(
    grid: &Grid,
    idx: usize,
    radius: i64,
    flags: &[Flag],
    dist: &[f64],
    values: &[[f64; 3]],
) -> Result<[f64; 3], InpaintError> {
    let (x, y) = ((idx % grid.w) as i64, (idx / grid.w) as i64);
    let (gx, gy) = distance_gradient(grid, idx, flags, dist);
    let gnorm = (gx * gx + gy * gy).sqrt();
    let t_here = dist[idx];
    let r2 = radius * radius;
    let mut acc = [0.0f64; 3];
    let mut total = 0.0f64;
    for qy in (y - radius).max(0)..=(y + radius).min(grid.h as i64 - 1) {
        for qx in (x - radius).max(0)..=(x + radius).min(grid.w as i64 - 1) {
            let (dx, dy) = (x - qx, y - qy);
            let d2 = dx * dx + dy * dy;
            if d2 == 0 || d2 > r2 {
                continue;
            }
            let q = qy as usize * grid.w + qx as usize;
            if flags[q] == Flag::Inside {
                continue;
            }
            let len = (d2 as f64).sqrt();
            let dst = 1.0 / d2 as f64;
            let lev = 1.0 / (1.0 + (dist[q] - t_here).abs());
            let dir = if gnorm > 0.0 {
                let cos = ((dx as f64 * gx + dy as f64 * gy) / (len * gnorm)).abs();
                if cos <= 0.01 {
                    1e-6
                } else {
                    cos
                }
            } else {
                1.0
            };
            let w = dst * lev * dir;
            let v = &values[q];
            acc[0] += w * v[0];
            acc[1] += w * v[1];
            acc[2] += w * v[2];
            total += w;
        }
    }
    if !(total > 0.0) {
        return Err(InpaintError::NonFinite);
    }
    let out = acc.map(|a| a / total);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(InpaintError::NonFinite);
    }
    Ok(out)
}
