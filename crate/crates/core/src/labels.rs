use crate::error::{Error, Result};

/// A single H×W map of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelImage {
    pub fn new(height: usize, width: usize, fill: u8) -> Self {
        LabelImage {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(LabelImage {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    /// Nearest-neighbor resize; used to bring labels to a feature-map
    /// resolution. Classes are categorical so no interpolation.
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelImage {
        let mut out = LabelImage::new(height, width, 0);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let sx = sx.min(self.width - 1);
                out.set(y, x, self.at(sy, sx));
            }
        }
        out
    }
}

/// A batch of label maps aligned with a (N, C, H, W) logits tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, fill: u8) -> Self {
        LabelMap {
            batch,
            height,
            width,
            data: vec![fill; batch * height * width],
        }
    }

    pub fn from_images(images: &[LabelImage]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::InvalidArgument("empty label batch".into()));
        };
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.height != h || img.width != w {
                return Err(Error::ShapeMismatch(
                    "label maps in one batch must share extents".into(),
                ));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(LabelMap {
            batch: images.len(),
            height: h,
            width: w,
            data,
        })
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.height + y) * self.width + x]
    }
}
