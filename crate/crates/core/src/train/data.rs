//! Dataset loading and batching. A dataset is a directory of paired
//! Netpbm files, `NAME.ppm` for the image and `NAME.pgm` for the labels,
//! paired by stem and ordered by name. Transformed domains are produced
//! online by warping a batch through the fisheye zoom augmentation.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fisheye::{build_remap_grid, sample_focal, warp_image, warp_labels, ProjectionParams, ZoomAugmentConfig};
use crate::labels::{LabelImage, LabelMap};
use crate::netpbm::{read_pgm, read_ppm, RgbImage};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub image: RgbImage,
    pub labels: LabelImage,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let mut stems: Vec<String> = fs::read_dir(dir)?
            .filter_map(|entry| {
                let path = entry.ok()?.path();
                (path.extension()? == "ppm")
                    .then(|| path.file_stem().unwrap().to_string_lossy().into_owned())
            })
            .collect();
        stems.sort();
        if stems.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .ppm images found in {}",
                dir.display()
            )));
        }
        let mut samples = Vec::with_capacity(stems.len());
        for stem in stems {
            let image = read_ppm(&dir.join(format!("{stem}.ppm")))?;
            let label_path = dir.join(format!("{stem}.pgm"));
            if !label_path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "image {stem}.ppm has no matching {stem}.pgm"
                )));
            }
            let labels = read_pgm(&label_path)?;
            if labels.height != image.height || labels.width != image.width {
                return Err(Error::ShapeMismatch(format!(
                    "{stem}: labels {}x{} do not match image {}x{}",
                    labels.height, labels.width, image.height, image.width
                )));
            }
            samples.push(Sample {
                name: stem,
                image,
                labels,
            });
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Stacks 8-bit images into an NCHW tensor scaled to [0, 1].
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let n = images.len();
    let mut out = Tensor::zeros([n, 3, h, w]);
    for (b, img) in images.iter().enumerate() {
        if img.height != h || img.width != w {
            return Err(Error::ShapeMismatch(
                "batch images must share extents".into(),
            ));
        }
        for y in 0..h {
            for x in 0..w {
                let px = img.pixel(y, x);
                for c in 0..3 {
                    out.set(b, c, y, x, px[c] as f64 / 255.0);
                }
            }
        }
    }
    Ok(out)
}

/// Downsamples label images to the network output extents by nearest
/// neighbor and stacks them into a [`LabelMap`].
pub fn labels_to_map(labels: &[&LabelImage], output_stride: usize) -> Result<LabelMap> {
    let downsampled: Vec<LabelImage> = labels
        .iter()
        .map(|l| l.resize_nearest(l.height / output_stride, l.width / output_stride))
        .collect();
    LabelMap::from_images(&downsampled)
}

/// One input batch with labels held at full resolution.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<LabelImage>,
}

/// Assembles a batch of the given samples, optionally warped through the
/// zoom augmentation with a fresh focal length drawn per sample.
pub fn assemble_batch<R: Rng>(
    dataset: &Dataset,
    indices: &[usize],
    augment: Option<&ZoomAugmentConfig>,
    void_class: u8,
    rng: &mut R,
) -> Result<Batch> {
    let mut images = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = dataset
            .samples
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))?;
        match augment {
            None => {
                images.push(sample.image.clone());
                labels.push(sample.labels.clone());
            }
            Some(config) => {
                let focal = sample_focal(config, rng);
                let params = ProjectionParams::centered(
                    focal,
                    config.output_extents,
                    (sample.image.height, sample.image.width),
                )?;
                let grid = build_remap_grid(
                    &params,
                    config.output_extents,
                    (sample.image.height, sample.image.width),
                )?;
                images.push(warp_image(&sample.image, &grid, config.fill)?);
                labels.push(warp_labels(&sample.labels, &grid, void_class)?);
            }
        }
    }
    let refs: Vec<&RgbImage> = images.iter().collect();
    Ok(Batch {
        images: images_to_tensor(&refs)?,
        labels,
    })
}

/// Draws `batch` sample indices uniformly with replacement.
pub fn draw_indices<R: Rng>(dataset: &Dataset, batch: usize, rng: &mut R) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..dataset.len())).collect()
}
