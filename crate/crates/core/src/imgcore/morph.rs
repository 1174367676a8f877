use super::{BitMask, ImgError, Rect};

/// Tightest rectangle containing every set pixel.
pub fn mask_bbox(mask: &BitMask) -> Result<Rect, ImgError> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..h {
        let row = &mask.bits()[y as usize * w as usize..(y as usize + 1) * w as usize];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).unwrap_or(first);
        any = true;
        x0 = x0.min(first as u32);
        x1 = x1.max(last as u32);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !any {
        return Err(ImgError::EmptyMask);
    }
    Ok(Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Half-widths of the Euclidean disk: `hw[dy] = max h with h² + dy² ≤ r²`.
fn disk_half_widths(radius: u32) -> Vec<u32> {
    let r2 = radius as u64 * radius as u64;
    (0..=radius)
        .map(|dy| {
            let rem = r2 - dy as u64 * dy as u64;
            let mut hw = (rem as f64).sqrt() as u64;
            while hw * hw > rem {
                hw -= 1;
            }
            while (hw + 1) * (hw + 1) <= rem {
                hw += 1;
            }
            hw as u32
        })
        .collect()
}

/// Morphological dilation with a Euclidean disk of the given radius.
///
/// Radius 0 returns the mask unchanged; the result is clipped to the frame.
pub fn dilate(mask: &BitMask, radius: u32) -> BitMask {
    if radius == 0 {
        return mask.clone();
    }
    let Ok(bbox) = mask_bbox(mask) else {
        return mask.clone();
    };
    let (w, h) = mask.dims();
    let r = radius as i64;
    let hw = disk_half_widths(radius);

    // Per-row prefix counts restricted to the bbox columns.
    let bw = bbox.w as usize;
    let mut prefix = vec![0u32; bbox.h as usize * (bw + 1)];
    for ry in 0..bbox.h as usize {
        let y = bbox.y as usize + ry;
        let row = &mask.bits()[y * w as usize + bbox.x as usize..y * w as usize + bbox.x as usize + bw];
        let p = &mut prefix[ry * (bw + 1)..(ry + 1) * (bw + 1)];
        for (i, &b) in row.iter().enumerate() {
            p[i + 1] = p[i] + b as u32;
        }
    }
    let row_has = |ry: usize, lo: i64, hi: i64| -> bool {
        // columns are relative to bbox.x; inclusive range
        let lo = lo.max(0);
        let hi = hi.min(bw as i64 - 1);
        if lo > hi {
            return false;
        }
        let p = &prefix[ry * (bw + 1)..];
        p[hi as usize + 1] > p[lo as usize]
    };

    let mut out = mask.clone();
    let wy0 = (bbox.y as i64 - r).max(0);
    let wy1 = (bbox.y as i64 + bbox.h as i64 - 1 + r).min(h as i64 - 1);
    let wx0 = (bbox.x as i64 - r).max(0);
    let wx1 = (bbox.x as i64 + bbox.w as i64 - 1 + r).min(w as i64 - 1);
    for y in wy0..=wy1 {
        for x in wx0..=wx1 {
            let idx = y as usize * w as usize + x as usize;
            if out.get_at(idx) {
                continue;
            }
            let rx = x - bbox.x as i64;
            let hit = (-r..=r).any(|dy| {
                let sy = y + dy - bbox.y as i64;
                if sy < 0 || sy >= bbox.h as i64 {
                    return false;
                }
                let half = hw[dy.unsigned_abs() as usize] as i64;
                row_has(sy as usize, rx - half, rx + half)
            });
            if hit {
                out.set_at(idx, true);
            }
        }
    }
    out
}

/// Band `dilate(mask, radius) AND NOT mask` around a non-empty mask.
pub fn boundary_ring(mask: &BitMask, radius: u32) -> Result<BitMask, ImgError> {
    if mask.is_empty() {
        return Err(ImgError::EmptyMask);
    }
    let ring = dilate(mask, radius).minus(mask)?;
    if ring.is_empty() {
        return Err(ImgError::EmptyRing);
    }
    Ok(ring)
}
