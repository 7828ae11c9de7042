//! Procedural segmentation scenes: colored shapes (rectangles, discs,
//! horizontal bands) on a background class, each class tied to a fixed
//! palette color with per-image jitter so the task is learnable but not
//! trivial.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelImage;
use crate::netpbm::RgbImage;

/// Scene generator parameters. Classes are 0 (background) through
/// `classes - 1`; every emitted label is below `classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Shapes drawn per image.
    pub shapes: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("scene extents must be positive".into()));
        }
        if self.classes < 2 || self.classes > 200 {
            return Err(Error::InvalidArgument(format!(
                "class count must lie in 2..=200, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Deterministic per-class base color, spread around the hue wheel.
pub fn class_color(class: u8) -> [u8; 3] {
    let t = class as f64 * 2.399963; // golden-angle spacing
    let r = (128.0 + 100.0 * t.sin()) as u8;
    let g = (128.0 + 100.0 * (t + 2.094).sin()) as u8;
    let b = (128.0 + 100.0 * (t + 4.189).sin()) as u8;
    [r, g, b]
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Disc { cy: f64, cx: f64, r: f64 },
    Band { y0: usize, y1: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disc { cy, cx, r } => {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                dy * dy + dx * dx <= r * r
            }
            Shape::Band { y0, y1 } => y >= y0 && y < y1,
        }
    }
}

/// Generates the `index`-th scene of the spec. The same (spec, index)
/// always produces the same pair.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<(RgbImage, LabelImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (index.wrapping_mul(0x9e3779b97f4a7c15)));
    let (h, w) = (spec.height, spec.width);
    let mut labels = LabelImage::new(h, w, 0);
    let mut image = RgbImage::new(h, w);

    let mut placed: Vec<(Shape, u8)> = Vec::with_capacity(spec.shapes);
    for _ in 0..spec.shapes {
        let class = rng.gen_range(1..spec.classes) as u8;
        let shape = match rng.gen_range(0..3) {
            0 => {
                let sh = rng.gen_range(h / 6..=h / 2).max(1);
                let sw = rng.gen_range(w / 6..=w / 2).max(1);
                let y0 = rng.gen_range(0..h.saturating_sub(sh).max(1));
                let x0 = rng.gen_range(0..w.saturating_sub(sw).max(1));
                Shape::Rect {
                    y0,
                    x0,
                    y1: (y0 + sh).min(h),
                    x1: (x0 + sw).min(w),
                }
            }
            1 => Shape::Disc {
                cy: rng.gen_range(0.0..h as f64),
                cx: rng.gen_range(0.0..w as f64),
                r: rng.gen_range(h.min(w) as f64 / 8.0..h.min(w) as f64 / 3.0),
            },
            _ => {
                let bh = rng.gen_range(h / 8..=h / 3).max(1);
                let y0 = rng.gen_range(0..h.saturating_sub(bh).max(1));
                Shape::Band { y0, y1: (y0 + bh).min(h) }
            }
        };
        placed.push((shape, class));
    }

    // Later shapes occlude earlier ones.
    let brightness: f64 = rng.gen_range(-18.0..18.0);
    for y in 0..h {
        for x in 0..w {
            let mut class = 0u8;
            for (shape, c) in &placed {
                if shape.contains(y, x) {
                    class = *c;
                }
            }
            labels.set(y, x, class);
            let base = class_color(class);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let noise: f64 = rng.gen_range(-10.0..10.0);
                rgb[c] = (base[c] as f64 + brightness + noise).clamp(0.0, 255.0) as u8;
            }
            image.set_pixel(y, x, rgb);
        }
    }
    Ok((image, labels))
}
