use backflip_core::imgcore::{BitMask, ImageBuffer, ImgError};

const GAP: u32 = 4;
const BACKDROP: [u8; 3] = [255, 255, 255];

/// Places panels left to right, top-aligned, on a white backdrop.
pub fn hstack(panels: &[ImageBuffer]) -> Result<ImageBuffer, ImgError> {
    let width = panels.iter().map(|p| p.width()).sum::<u32>() + GAP * (panels.len().saturating_sub(1) as u32);
    let height = panels.iter().map(|p| p.height()).max().unwrap_or(1);
    let mut out = ImageBuffer::filled(width.max(1), height, BACKDROP)?;
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height() {
            for x in 0..p.width() {
                out.set_pixel(x0 + x, y, p.pixel(x, y));
            }
        }
        x0 += p.width() + GAP;
    }
    Ok(out)
}

/// A mask as a black and white panel.
pub fn mask_panel(mask: &BitMask) -> Result<ImageBuffer, ImgError> {
    ImageBuffer::from_fn(mask.width(), mask.height(), |x, y| {
        if mask.get(x, y) {
            [255, 255, 255]
        } else {
            [0, 0, 0]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacks_with_gaps() {
        let a = ImageBuffer::filled(3, 2, [1, 1, 1]).unwrap();
        let b = ImageBuffer::filled(2, 5, [2, 2, 2]).unwrap();
        let m = hstack(&[a, b]).unwrap();
        assert_eq!(m.dims(), (3 + GAP + 2, 5));
        assert_eq!(m.pixel(0, 0), [1, 1, 1]);
        assert_eq!(m.pixel(0, 4), BACKDROP);
        assert_eq!(m.pixel(3, 0), BACKDROP);
        assert_eq!(m.pixel(3 + GAP, 4), [2, 2, 2]);
    }
}
