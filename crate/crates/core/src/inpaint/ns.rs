//! Navier–Stokes style inpainting (Bertalmio, Bertozzi, Sapiro 2001).
//!
//! Image intensity is treated as the stream function of an incompressible
//! flow whose vorticity is the image Laplacian `ω = ΔI`. Inside the hole the
//! vorticity is transported along the isophote direction `∇⊥I` and diffused:
//!
//! ```text
//! ω_t + v · ∇ω = ν Δω,   v = ∇⊥I / |∇I|
//! ```
//!
//! and after every transport step the intensity is relaxed towards the
//! Poisson equation `ΔI = ω` with the known pixels as Dirichlet boundary.
//! The hole starts from the mean color of its surroundings and vorticity
//! starts at zero; known pixels keep the vorticity of the (lightly
//! smoothed) input image.

use super::{hole_for, ring_statistic, BoundaryStat, InpaintError, InpaintMethod};
use crate::imgcore::{boundary_ring, round_to_u8, BitMask, ImageBuffer};

/// Vorticity diffusion coefficient.
const VISCOSITY: f64 = 1.0;
/// Gauss–Seidel sweeps of the Poisson relaxation per iteration.
const POISSON_SWEEPS: usize = 4;
const GRAD_EPS: f64 = 1e-9;
/// Half-width of the box filter applied before estimating vorticity.
const SMOOTHING_RADIUS: usize = 1;

pub fn inpaint_ns(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
) -> Result<ImageBuffer, InpaintError> {
    run(image, mask, method, None)
}

/// As [`inpaint_ns`], also returning the maximum absolute intensity change
/// of every iteration (over all channels).
pub fn inpaint_ns_traced(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
) -> Result<(ImageBuffer, Vec<f64>), InpaintError> {
    let mut changes = Vec::new();
    let out = run(image, mask, method, Some(&mut changes))?;
    Ok((out, changes))
}

/// Working window: the hole's bounding box grown by two pixels.
struct Window {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Window {
    #[inline]
    fn at(&self, x: usize, y: usize) -> usize {
        (y - self.y0) * self.w + (x - self.x0)
    }
}

fn run(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
    mut changes: Option<&mut Vec<f64>>,
) -> Result<ImageBuffer, InpaintError> {
    method.validate()?;
    if image.dims() != mask.dims() {
        return Err(InpaintError::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let hole = hole_for(mask, method)?;
    let init = ring_statistic(image, &boundary_ring(&hole, 1)?, BoundaryStat::Mean);

    let (iw, ih) = (image.width() as usize, image.height() as usize);
    let bbox = crate::imgcore::mask_bbox(&hole)?;
    let x0 = (bbox.x as usize).saturating_sub(2);
    let y0 = (bbox.y as usize).saturating_sub(2);
    let x1 = (bbox.x as usize + bbox.w as usize + 2).min(iw);
    let y1 = (bbox.y as usize + bbox.h as usize + 2).min(ih);
    let win = Window {
        x0,
        y0,
        w: x1 - x0,
        h: y1 - y0,
    };

    let mut hole_px: Vec<(usize, usize)> = Vec::new();
    let mut in_hole = vec![false; win.w * win.h];
    for y in y0..y1 {
        for x in x0..x1 {
            if hole.get(x as u32, y as u32) {
                in_hole[win.at(x, y)] = true;
                hole_px.push((x, y));
            }
        }
    }

    // planes[c][window index]
    let mut planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut p = vec![0.0; win.w * win.h];
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = win.at(x, y);
                    p[i] = if in_hole[i] {
                        init[c] as f64
                    } else {
                        image.pixel(x as u32, y as u32)[c] as f64
                    };
                }
            }
            p
        })
        .collect();

    let mut vort: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut v = vec![0.0; win.w * win.h];
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = win.at(x, y);
                    if !in_hole[i] {
                        v[i] = image_laplacian(image, x, y, c);
                    }
                }
            }
            v
        })
        .collect();

    let dt = method.ns_dt;
    let mut next = vec![0.0; hole_px.len()];
    for _ in 0..method.ns_iterations {
        let mut max_change = 0.0f64;
        for c in 0..3 {
            let plane = &mut planes[c];
            let omega = &mut vort[c];

            // vorticity transport + diffusion (explicit, upwind)
            for (k, &(x, y)) in hole_px.iter().enumerate() {
                let i = win.at(x, y);
                let (gx, gy) = central_gradient(plane, &win, x, y, iw, ih);
                let norm = (gx * gx + gy * gy).sqrt() + GRAD_EPS;
                let (vx, vy) = (-gy / norm, gx / norm);
                let w_c = omega[i];
                let w_l = if x > 0 { omega[win.at(x - 1, y)] } else { w_c };
                let w_r = if x + 1 < iw { omega[win.at(x + 1, y)] } else { w_c };
                let w_u = if y > 0 { omega[win.at(x, y - 1)] } else { w_c };
                let w_d = if y + 1 < ih { omega[win.at(x, y + 1)] } else { w_c };
                let dwx = if vx > 0.0 { w_c - w_l } else { w_r - w_c };
                let dwy = if vy > 0.0 { w_c - w_u } else { w_d - w_c };
                let lap = w_l + w_r + w_u + w_d - 4.0 * w_c;
                next[k] = w_c + dt * (-(vx * dwx + vy * dwy) + VISCOSITY * lap);
            }
            for (k, &(x, y)) in hole_px.iter().enumerate() {
                omega[win.at(x, y)] = next[k];
            }

            // relax ΔI = ω
            let before: Vec<f64> = hole_px.iter().map(|&(x, y)| plane[win.at(x, y)]).collect();
            for _ in 0..POISSON_SWEEPS {
                for &(x, y) in &hole_px {
                    let i = win.at(x, y);
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    if x > 0 {
                        sum += plane[win.at(x - 1, y)];
                        count += 1.0;
                    }
                    if x + 1 < iw {
                        sum += plane[win.at(x + 1, y)];
                        count += 1.0;
                    }
                    if y > 0 {
                        sum += plane[win.at(x, y - 1)];
                        count += 1.0;
                    }
                    if y + 1 < ih {
                        sum += plane[win.at(x, y + 1)];
                        count += 1.0;
                    }
                    plane[i] = ((sum - omega[i]) / count).clamp(0.0, 255.0);
                }
            }
            for (k, &(x, y)) in hole_px.iter().enumerate() {
                let v = plane[win.at(x, y)];
                if !v.is_finite() || !omega[win.at(x, y)].is_finite() {
                    return Err(InpaintError::NonFinite);
                }
                max_change = max_change.max((v - before[k]).abs());
            }
        }
        if let Some(ch) = changes.as_deref_mut() {
            ch.push(max_change);
        }
    }

    let mut out = image.clone();
    for &(x, y) in &hole_px {
        let i = win.at(x, y);
        out.set_pixel(
            x as u32,
            y as u32,
            [
                round_to_u8(planes[0][i]),
                round_to_u8(planes[1][i]),
                round_to_u8(planes[2][i]),
            ],
        );
    }
    Ok(out)
}

/// 5-point Laplacian of the box-smoothed input, with replicated borders.
/// Smoothing keeps 8-bit rounding noise out of the vorticity; a box filter
/// leaves linear gradients unchanged.
fn image_laplacian(image: &ImageBuffer, x: usize, y: usize, c: usize) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let half = SMOOTHING_RADIUS as i64;
    let at = |xx: i64, yy: i64| {
        let mut sum = 0.0;
        for dy in -half..=half {
            for dx in -half..=half {
                let sx = (xx + dx).clamp(0, w as i64 - 1) as u32;
                let sy = (yy + dy).clamp(0, h as i64 - 1) as u32;
                sum += image.pixel(sx, sy)[c] as f64;
            }
        }
        sum / ((2 * half + 1) * (2 * half + 1)) as f64
    };
    let (x, y) = (x as i64, y as i64);
    let center = at(x, y);
    let l = if x > 0 { at(x - 1, y) } else { center };
    let r = if x + 1 < w as i64 { at(x + 1, y) } else { center };
    let u = if y > 0 { at(x, y - 1) } else { center };
    let d = if y + 1 < h as i64 { at(x, y + 1) } else { center };
    l + r + u + d - 4.0 * center
}

fn central_gradient(plane: &[f64], win: &Window, x: usize, y: usize, iw: usize, ih: usize) -> (f64, f64) {
    // the window always contains the 4-neighborhood of hole pixels that lie
    // inside the frame
    let c = plane[win.at(x, y)];
    let l = if x > 0 { plane[win.at(x - 1, y)] } else { c };
    let r = if x + 1 < iw { plane[win.at(x + 1, y)] } else { c };
    let u = if y > 0 { plane[win.at(x, y - 1)] } else { c };
    let d = if y + 1 < ih { plane[win.at(x, y + 1)] } else { c };
    ((r - l) * 0.5, (d - u) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{dilate, Rect};
    use crate::inpaint::InpaintKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ns() -> InpaintMethod {
        InpaintMethod::of(InpaintKind::Ns)
    }

    fn ramp() -> ImageBuffer {
        ImageBuffer::from_fn(64, 64, |x, _| {
            let v = (x * 4) as u8;
            [v, v / 2, 255 - v]
        })
        .unwrap()
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = ImageBuffer::filled(32, 32, [9, 99, 199]).unwrap();
        let mask = BitMask::from_rect(32, 32, Rect::new(10, 10, 8, 5)).unwrap();
        for iters in [1, 7, 100] {
            let mut m = ns();
            m.ns_iterations = iters;
            let (out, changes) = inpaint_ns_traced(&img, &mask, &m).unwrap();
            assert_eq!(out, img);
            assert!(changes.iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn ramp_is_reproduced() {
        let img = ramp();
        let mask = BitMask::from_rect(64, 64, Rect::new(30, 30, 4, 4)).unwrap();
        let m = ns();
        let out = inpaint_ns(&img, &mask, &m).unwrap();
        let hole = dilate(&mask, m.dilation_for(64, 64));
        for (x, y) in hole.iter_set() {
            let (a, b) = (out.pixel(x, y), img.pixel(x, y));
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 2, "({x},{y}) {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn change_is_non_increasing_on_ramp() {
        let mut m = ns();
        m.ns_iterations = 60;
        let mask = BitMask::from_rect(64, 64, Rect::new(28, 26, 6, 9)).unwrap();
        let (_, changes) = inpaint_ns_traced(&ramp(), &mask, &m).unwrap();
        let skip = changes.len() / 10;
        for w in changes[skip..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{w:?}");
        }
    }

    #[test]
    fn random_inputs_stay_in_range_and_outside_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let img = ImageBuffer::from_fn(40, 30, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap();
            let mask = BitMask::from_rect(40, 30, Rect::new(rng.gen_range(0..30), rng.gen_range(0..20), 6, 6)).unwrap();
            let m = ns();
            let out = inpaint_ns(&img, &mask, &m).unwrap();
            let hole = dilate(&mask, m.dilation_for(40, 30));
            for (idx, &h) in hole.bits().iter().enumerate() {
                if !h {
                    assert_eq!(out.pixel_at(idx), img.pixel_at(idx));
                }
            }
        }
    }
}
