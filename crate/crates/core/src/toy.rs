//! Synthetic painting-like corpus with known segments.
//!
//! Each image is a smooth colored backdrop with brush-like noise and a stack
//! of flat shapes. The visible part of every shape becomes one mask file, a
//! full-frame "background" mask is added the way automatic segmenters tend
//! to produce one, and the backdrop without shapes is written as the
//! precomputed background.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use crate::imgcore::{encode_mask_png, encode_png, BitMask, ImageBuffer, ImgError};
use crate::inpaint::background_file_name;
use crate::segments::mask_file_name;
use crate::util::{derived_rng, write_atomic};

#[derive(Clone, Debug)]
pub struct ToyImage {
    pub image: ImageBuffer,
    /// The backdrop without any shapes.
    pub background: ImageBuffer,
    /// Visible region of each shape, in drawing order; empty ones dropped.
    pub masks: Vec<BitMask>,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Triangle { p } => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (d0, d1, d2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R, w: f64, h: f64) -> Shape {
    let short = w.min(h);
    let cx = rng.gen_range(0.1..0.9) * w;
    let cy = rng.gen_range(0.1..0.9) * h;
    // shape half-size as a fraction of the short side
    let (lo, hi) = (0.06, 0.28);
    match rng.gen_range(0..3) {
        0 => Shape::Ellipse {
            cx,
            cy,
            rx: rng.gen_range(lo..hi) * short,
            ry: rng.gen_range(lo..hi) * short,
        },
        1 => {
            let hw = rng.gen_range(lo..hi) * short;
            let hh = rng.gen_range(lo..hi) * short;
            Shape::Rect {
                x0: cx - hw,
                y0: cy - hh,
                x1: cx + hw,
                y1: cy + hh,
            }
        }
        _ => {
            let r = rng.gen_range(lo..hi) * short * 1.4;
            let a0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = [0.0, 2.1, 4.2].map(|o: f64| {
                let a = a0 + o + rng.gen_range(-0.3..0.3);
                (cx + r * a.cos(), cy + r * a.sin())
            });
            Shape::Triangle { p }
        }
    }
}

/// Generates one image. `n_shapes` shapes are drawn; masks of fully
/// covered shapes are dropped.
pub fn toy_image<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32, n_shapes: usize) -> ToyImage {
    let (w, h) = (width as f64, height as f64);
    let c0: [f64; 3] = [rng.gen_range(40.0..215.0), rng.gen_range(40.0..215.0), rng.gen_range(40.0..215.0)];
    let c1: [f64; 3] = [rng.gen_range(40.0..215.0), rng.gen_range(40.0..215.0), rng.gen_range(40.0..215.0)];
    let (fx, fy) = (rng.gen_range(0.02..0.15), rng.gen_range(0.02..0.15));
    let phase: f64 = rng.gen_range(0.0..6.0);
    let amp = rng.gen_range(4.0..14.0);
    let seed: u32 = rng.gen();
    let background = ImageBuffer::from_fn(width, height, |x, y| {
        let t = (x as f64 / w + y as f64 / h) / 2.0;
        let stroke = amp * ((x as f64 * fx + phase).sin() * (y as f64 * fy).cos());
        // cheap hash noise for canvas texture
        let n = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ seed) % 9;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = c0[c] * (1.0 - t) + c1[c] * t + stroke + n as f64 - 4.0;
            px[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        px
    })
    .expect("positive dims");

    let shapes: Vec<(Shape, [u8; 3], f64)> = (0..n_shapes)
        .map(|_| {
            let color = [rng.gen(), rng.gen(), rng.gen()];
            let shade = rng.gen_range(0.0..0.6);
            (random_shape(rng, w, h), color, shade)
        })
        .collect();
    let mut owner = vec![usize::MAX; (width * height) as usize];
    let mut image = background.clone();
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for (k, (shape, color, shade)) in shapes.iter().enumerate().rev() {
                if shape.contains(px, py) {
                    owner[(y * width + x) as usize] = k;
                    // vertical shading keeps segments from being perfectly flat
                    let f = 1.0 - shade * (py / h - 0.5);
                    image.set_pixel(x, y, color.map(|c| (c as f64 * f).round().clamp(0.0, 255.0) as u8));
                    break;
                }
            }
        }
    }
    let masks = (0..n_shapes)
        .map(|k| BitMask::from_bits(width, height, owner.iter().map(|&o| o == k).collect()).expect("dims"))
        .filter(|m| !m.is_empty())
        .collect();
    ToyImage {
        image,
        background,
        masks,
    }
}

#[derive(Clone, Debug)]
pub struct ToyOptions {
    pub n_images: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub shapes: (usize, usize),
    pub seed: u64,
    pub score_scale: (f64, f64),
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            n_images: 20,
            min_side: 96,
            max_side: 160,
            shapes: (4, 8),
            seed: 0,
            score_scale: (0.0, 10.0),
        }
    }
}

/// Paths of a generated corpus.
#[derive(Clone, Debug, Serialize)]
pub struct ToyCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub images_dir: PathBuf,
    pub masks_root: PathBuf,
    pub cache_dir: PathBuf,
    pub config: PathBuf,
    pub image_ids: Vec<String>,
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    image_id: &'a str,
    image_path: String,
    score: f64,
    split: &'a str,
}

fn io_err(path: &Path, source: std::io::Error) -> ImgError {
    ImgError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a corpus under `root`:
///
/// ```text
/// manifest.jsonl              header line with score_scale, then entries
/// config.toml                 main-experiment policy
/// images/<id>.png
/// masks/<id>/<id>.seg<k>.png  k = 0 is the full-frame background mask
/// cache/<id>.inpainted.png    shape-free backdrop
/// ```
///
/// Every sixth image is `val`, every seventh `test`, the rest `train`.
pub fn generate_toy_corpus(root: &Path, opts: &ToyOptions) -> Result<ToyCorpus, ImgError> {
    let images_dir = root.join("images");
    let masks_root = root.join("masks");
    let cache_dir = root.join("cache");
    for d in [&images_dir, &masks_root, &cache_dir] {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let write = |path: &Path, bytes: &[u8]| write_atomic(path, bytes).map_err(|e| io_err(path, e));

    let mut manifest = serde_json::to_string(&serde_json::json!({ "score_scale": [opts.score_scale.0, opts.score_scale.1] }))
        .expect("json");
    manifest.push('\n');
    let mut ids = Vec::with_capacity(opts.n_images);
    for i in 0..opts.n_images {
        let id = format!("toy{i:03}");
        let mut rng = derived_rng(&[b"toy", &opts.seed.to_le_bytes(), id.as_bytes()]);
        let w = rng.gen_range(opts.min_side..=opts.max_side);
        let h = rng.gen_range(opts.min_side..=opts.max_side);
        let n_shapes = rng.gen_range(opts.shapes.0..=opts.shapes.1);
        let toy = toy_image(&mut rng, w, h, n_shapes);

        write(&images_dir.join(format!("{id}.png")), &encode_png(&toy.image)?)?;
        write(&cache_dir.join(background_file_name(&id)), &encode_png(&toy.background)?)?;
        let mask_dir = masks_root.join(&id);
        fs::create_dir_all(&mask_dir).map_err(|e| io_err(&mask_dir, e))?;
        let full = BitMask::full(w, h)?;
        for (k, m) in std::iter::once(&full).chain(toy.masks.iter()).enumerate() {
            write(&mask_dir.join(mask_file_name(&id, k)), &encode_mask_png(m)?)?;
        }

        let split = if i % 7 == 6 {
            "test"
        } else if i % 6 == 5 {
            "val"
        } else {
            "train"
        };
        let score = (rng.gen_range(opts.score_scale.0..=opts.score_scale.1) * 100.0).round() / 100.0;
        let line = ManifestLine {
            image_id: &id,
            image_path: format!("images/{id}.png"),
            score,
            split,
        };
        manifest.push_str(&serde_json::to_string(&line).expect("json"));
        manifest.push('\n');
        ids.push(id);
    }
    let manifest_path = root.join("manifest.jsonl");
    write(&manifest_path, manifest.as_bytes())?;

    let config_path = root.join("config.toml");
    write(&config_path, DEFAULT_CONFIG.as_bytes())?;

    Ok(ToyCorpus {
        root: root.to_path_buf(),
        manifest: manifest_path,
        images_dir,
        masks_root,
        cache_dir,
        config: config_path,
        image_ids: ids,
    })
}

/// Config matching the main experiments: three segments, median fill,
/// independent horizontal and vertical flips at p = 0.5, five kept masks.
pub const DEFAULT_CONFIG: &str = r#"manifest = "manifest.jsonl"
masks_root = "masks"
cache_dir = "cache"

[policy]
method = "backflip"
k_segments = 3
n_retained = 5
seed = 0

[policy.inpaint]
kind = "median"

[[policy.transforms]]
kind = "hflip"
probability = 0.5

[[policy.transforms]]
kind = "vflip"
probability = 0.5
"#;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_partition_the_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let t = toy_image(&mut rng, 80, 60, 6);
            assert!(!t.masks.is_empty());
            for (i, a) in t.masks.iter().enumerate() {
                for b in &t.masks[i + 1..] {
                    assert!(!a.intersects(b));
                }
            }
            let mut union = BitMask::new(80, 60).unwrap();
            for m in &t.masks {
                union.union_with(m).unwrap();
            }
            // outside every shape the image is the backdrop
            for (idx, &s) in union.bits().iter().enumerate() {
                if !s {
                    assert_eq!(t.image.pixel_at(idx), t.background.pixel_at(idx));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = toy_image(&mut ChaCha8Rng::seed_from_u64(9), 50, 40, 5);
        let b = toy_image(&mut ChaCha8Rng::seed_from_u64(9), 50, 40, 5);
        assert_eq!(a.image, b.image);
        assert_eq!(a.masks, b.masks);
    }
}
