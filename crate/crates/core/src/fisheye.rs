//! Conventional-to-fisheye zoom augmentation: the radial mapping
//! `r_c = f·tan(r_f/f)` between an equidistance-projection fisheye image
//! and a pinhole image sharing the focal length, sampled backward
//! (target to source) so the output has no holes.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::LabelImage;
use crate::netpbm::RgbImage;
use crate::par::map_indexed;

/// Shared focal length plus the principal points of the fisheye (target)
/// and conventional (source) images, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub focal_length: f64,
    pub principal_point_fisheye: (f64, f64),
    pub principal_point_conventional: (f64, f64),
}

impl ProjectionParams {
    /// Principal points centered in each image, pixel-center coordinates.
    pub fn centered(
        focal_length: f64,
        target_extents: (usize, usize),
        source_extents: (usize, usize),
    ) -> Result<Self> {
        if focal_length <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {focal_length}"
            )));
        }
        let (th, tw) = target_extents;
        let (sh, sw) = source_extents;
        Ok(ProjectionParams {
            focal_length,
            principal_point_fisheye: ((tw as f64 - 1.0) / 2.0, (th as f64 - 1.0) / 2.0),
            principal_point_conventional: ((sw as f64 - 1.0) / 2.0, (sh as f64 - 1.0) / 2.0),
        })
    }
}

/// Radial part of the fisheye-to-conventional mapping. Returns `None`
/// past the hemisphere limit `r_f/f ≥ π/2`, where the map is undefined.
pub fn radial_map(r_f: f64, f: f64) -> Option<f64> {
    if r_f < 0.0 || !r_f.is_finite() {
        return None;
    }
    let theta = r_f / f;
    if theta >= FRAC_PI_2 {
        return None;
    }
    Some(f * theta.tan())
}

/// Base focal length making the equidistance projection reach incidence
/// angle π/2 at the nearest image border: f0 = 2R/π with R the distance
/// from the centered principal point to that border.
pub fn default_base_focal(target_extents: (usize, usize)) -> Result<f64> {
    let (h, w) = target_extents;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("extents must be positive".into()));
    }
    let r = h.min(w) as f64 / 2.0;
    Ok(2.0 * r / PI)
}

/// Per-target-pixel source coordinates; out-of-source pixels carry a NaN
/// sentinel. Grids are pure data and reusable across images.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapGrid {
    pub target_extents: (usize, usize),
    pub source_extents: (usize, usize),
    /// (x_c, y_c) per target pixel, row-major; NaN pair marks unmapped.
    pub coords: Vec<(f64, f64)>,
}

impl RemapGrid {
    #[inline]
    pub fn source_of(&self, y: usize, x: usize) -> Option<(f64, f64)> {
        let (xc, yc) = self.coords[y * self.target_extents.1 + x];
        if xc.is_nan() {
            None
        } else {
            Some((xc, yc))
        }
    }
}

pub fn build_remap_grid(
    params: &ProjectionParams,
    target_extents: (usize, usize),
    source_extents: (usize, usize),
) -> Result<RemapGrid> {
    let (th, tw) = target_extents;
    let (sh, sw) = source_extents;
    if th == 0 || tw == 0 || sh == 0 || sw == 0 {
        return Err(Error::InvalidArgument("extents must be positive".into()));
    }
    let f = params.focal_length;
    let (ufx, ufy) = params.principal_point_fisheye;
    let (ucx, ucy) = params.principal_point_conventional;
    let sentinel = (f64::NAN, f64::NAN);

    let rows = map_indexed(th, |y| {
        let mut row = Vec::with_capacity(tw);
        for x in 0..tw {
            let dx = x as f64 - ufx;
            let dy = y as f64 - ufy;
            let r_f = (dx * dx + dy * dy).sqrt();
            let Some(r_c) = radial_map(r_f, f) else {
                row.push(sentinel);
                continue;
            };
            // Polar reconstruction with the two-argument arctangent; the
            // center maps exactly to the source principal point.
            let (xc, yc) = if r_f == 0.0 {
                (ucx, ucy)
            } else {
                let phi = dy.atan2(dx);
                (ucx + r_c * phi.cos(), ucy + r_c * phi.sin())
            };
            if xc < 0.0 || xc > sw as f64 - 1.0 || yc < 0.0 || yc > sh as f64 - 1.0 {
                row.push(sentinel);
            } else {
                row.push((xc, yc));
            }
        }
        row
    });
    Ok(RemapGrid {
        target_extents,
        source_extents,
        coords: rows.concat(),
    })
}

fn check_source(grid: &RemapGrid, height: usize, width: usize) -> Result<()> {
    if grid.source_extents != (height, width) {
        return Err(Error::ShapeMismatch(format!(
            "grid expects source {:?}, image is {}x{}",
            grid.source_extents, height, width
        )));
    }
    Ok(())
}

/// Remaps a color image through the grid with bilinear interpolation;
/// sentinel pixels receive `fill`.
pub fn warp_image(source: &RgbImage, grid: &RemapGrid, fill: [u8; 3]) -> Result<RgbImage> {
    check_source(grid, source.height, source.width)?;
    let (th, tw) = grid.target_extents;
    let (sh, sw) = (source.height, source.width);
    let rows = map_indexed(th, |y| {
        let mut row = vec![0u8; tw * 3];
        for x in 0..tw {
            let rgb = match grid.source_of(y, x) {
                None => fill,
                Some((xc, yc)) => {
                    let x0 = xc.floor();
                    let y0 = yc.floor();
                    let du = xc - x0;
                    let dv = yc - y0;
                    let xi = x0 as usize;
                    let yi = y0 as usize;
                    let x1 = (xi + 1).min(sw - 1);
                    let y1 = (yi + 1).min(sh - 1);
                    let mut rgb = [0u8; 3];
                    for c in 0..3 {
                        let q00 = source.pixel(yi, xi)[c] as f64;
                        let q01 = source.pixel(yi, x1)[c] as f64;
                        let q10 = source.pixel(y1, xi)[c] as f64;
                        let q11 = source.pixel(y1, x1)[c] as f64;
                        let v = (1.0 - dv) * ((1.0 - du) * q00 + du * q01)
                            + dv * ((1.0 - du) * q10 + du * q11);
                        rgb[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                    rgb
                }
            };
            row[x * 3..x * 3 + 3].copy_from_slice(&rgb);
        }
        row
    });
    Ok(RgbImage {
        height: th,
        width: tw,
        data: rows.concat(),
    })
}

/// Remaps a label map with nearest-neighbor sampling (classes are
/// categorical); sentinel pixels receive `void_class`.
pub fn warp_labels(source: &LabelImage, grid: &RemapGrid, void_class: u8) -> Result<LabelImage> {
    check_source(grid, source.height, source.width)?;
    let (th, tw) = grid.target_extents;
    let rows = map_indexed(th, |y| {
        let mut row = vec![void_class; tw];
        for (x, slot) in row.iter_mut().enumerate() {
            if let Some((xc, yc)) = grid.source_of(y, x) {
                let xi = (xc.round() as usize).min(source.width - 1);
                let yi = (yc.round() as usize).min(source.height - 1);
                *slot = source.at(yi, xi);
            }
        }
        row
    });
    LabelImage::from_vec(th, tw, rows.concat())
}

/// Zoom-augmentation focal policy: one fixed focal length, or a uniform
/// draw per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FocalSpec {
    Fixed(f64),
    Random { min: f64, max: f64 },
}

impl FocalSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FocalSpec::Fixed(f) if f > 0.0 => Ok(()),
            FocalSpec::Random { min, max } if 0.0 < min && min <= max => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "invalid focal specification {self:?}"
            ))),
        }
    }
}

/// Zoom augmentation configuration: focal policy, output extents, and the
/// fill color for unmapped image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomAugmentConfig {
    pub focal: FocalSpec,
    pub output_extents: (usize, usize),
    pub fill: [u8; 3],
}

/// Draws the focal length for one image. Fixed mode returns the fixed
/// value without consuming randomness.
pub fn sample_focal<R: Rng>(config: &ZoomAugmentConfig, rng: &mut R) -> f64 {
    match config.focal {
        FocalSpec::Fixed(f) => f,
        FocalSpec::Random { min, max } => {
            if min == max {
                min
            } else {
                rng.gen_range(min..=max)
            }
        }
    }
}

/// Grid cache file: four little-endian u32 extents (target H, W then
/// source H, W) followed by interleaved (x_c, y_c) little-endian f64,
/// sentinel encoded as NaN.
pub fn save_grid(path: &Path, grid: &RemapGrid) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + grid.coords.len() * 16);
    for v in [
        grid.target_extents.0,
        grid.target_extents.1,
        grid.source_extents.0,
        grid.source_extents.1,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (xc, yc) in &grid.coords {
        buf.extend_from_slice(&xc.to_le_bytes());
        buf.extend_from_slice(&yc.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<RemapGrid> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Format("grid cache shorter than header".into()));
    }
    let mut extents = [0usize; 4];
    for (i, e) in extents.iter_mut().enumerate() {
        *e = u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    }
    let count = extents[0] * extents[1];
    if bytes.len() != 16 + count * 16 {
        return Err(Error::Format(format!(
            "grid cache payload mismatch: {} bytes for {} pixels",
            bytes.len() - 16,
            count
        )));
    }
    let mut coords = Vec::with_capacity(count);
    for i in 0..count {
        let off = 16 + i * 16;
        let xc = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let yc = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        coords.push((xc, yc));
    }
    Ok(RemapGrid {
        target_extents: (extents[0], extents[1]),
        source_extents: (extents[2], extents[3]),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radial_map_fixpoints() {
        assert_eq!(radial_map(0.0, 159.0), Some(0.0));
        let f = 200.0;
        let r_c = radial_map(f * FRAC_PI_2 / 2.0, f).unwrap();
        assert!((r_c - f).abs() / f < 1e-12);
        assert_eq!(radial_map(f * FRAC_PI_2, f), None);
    }

    #[test]
    fn radial_map_monotone_in_focal() {
        // Larger focal length means less distortion: r_c nonincreasing.
        let r_f = 100.0;
        let mut prev = f64::INFINITY;
        for f in [120.0, 159.0, 240.0, 500.0, 800.0] {
            let r_c = radial_map(r_f, f).unwrap();
            assert!(r_c <= prev);
            prev = r_c;
        }
    }

    #[test]
    fn small_angle_limit() {
        let f = 300.0;
        for r_f in [0.01, 0.5, 2.9] {
            let r_c = radial_map(r_f, f).unwrap();
            assert!((r_c - r_f).abs() <= 1e-4 * r_f + 1e-9);
        }
    }

    #[test]
    fn base_focal_closed_forms() {
        assert!((default_base_focal((512, 512)).unwrap() - 512.0 / PI).abs() < 1e-12);
        assert!((default_base_focal((576, 640)).unwrap() - 576.0 / PI).abs() < 1e-12);
        let f1 = default_base_focal((100, 200)).unwrap();
        let f2 = default_base_focal((200, 400)).unwrap();
        assert!((2.0 * f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn grid_center_and_axis_rays() {
        let params = ProjectionParams::centered(80.0, (65, 65), (129, 129)).unwrap();
        let grid = build_remap_grid(&params, (65, 65), (129, 129)).unwrap();
        let (xc, yc) = grid.source_of(32, 32).unwrap();
        assert_eq!((xc, yc), params.principal_point_conventional);
        // A pixel right of the principal point stays on the horizontal axis.
        let (xr, yr) = grid.source_of(32, 40).unwrap();
        assert!(xr > xc);
        assert!((yr - yc).abs() < 1e-9);
    }

    #[test]
    fn angle_preserved_for_mapped_pixels() {
        let params = ProjectionParams::centered(90.0, (64, 64), (256, 256)).unwrap();
        let grid = build_remap_grid(&params, (64, 64), (256, 256)).unwrap();
        let (ufx, ufy) = params.principal_point_fisheye;
        let (ucx, ucy) = params.principal_point_conventional;
        for (y, x) in [(10, 50), (40, 7), (60, 60)] {
            if let Some((xc, yc)) = grid.source_of(y, x) {
                let phi_t = (y as f64 - ufy).atan2(x as f64 - ufx);
                let phi_s = (yc - ucy).atan2(xc - ucx);
                assert!((phi_t - phi_s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_source_warps_uniform() {
        let mut src = RgbImage::new(64, 64);
        for b in src.data.iter_mut() {
            *b = 93;
        }
        let params = ProjectionParams::centered(30.0, (48, 48), (64, 64)).unwrap();
        let grid = build_remap_grid(&params, (48, 48), (64, 64)).unwrap();
        let out = warp_image(&src, &grid, [0, 0, 0]).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                let expect = if grid.source_of(y, x).is_some() {
                    [93, 93, 93]
                } else {
                    [0, 0, 0]
                };
                assert_eq!(out.pixel(y, x), expect);
            }
        }
    }

    #[test]
    fn label_warp_is_closed_over_source_classes() {
        let mut src = LabelImage::new(64, 64, 0);
        for y in 0..64 {
            for x in 0..64 {
                src.set(y, x, if x > 32 { 3 } else { 1 });
            }
        }
        let params = ProjectionParams::centered(25.0, (48, 48), (64, 64)).unwrap();
        let grid = build_remap_grid(&params, (48, 48), (64, 64)).unwrap();
        let out = warp_labels(&src, &grid, 255).unwrap();
        for l in &out.data {
            assert!(*l == 1 || *l == 3 || *l == 255);
        }
    }

    #[test]
    fn focal_sampling_deterministic_and_bounded() {
        let config = ZoomAugmentConfig {
            focal: FocalSpec::Random {
                min: 200.0,
                max: 800.0,
            },
            output_extents: (64, 64),
            fill: [0, 0, 0],
        };
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let fa = sample_focal(&config, &mut a);
            assert!((200.0..=800.0).contains(&fa));
            assert_eq!(fa, sample_focal(&config, &mut b));
        }
        let fixed = ZoomAugmentConfig {
            focal: FocalSpec::Fixed(240.0),
            ..config
        };
        assert_eq!(sample_focal(&fixed, &mut a), 240.0);
    }

    #[test]
    fn grid_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let params = ProjectionParams::centered(40.0, (16, 20), (32, 48)).unwrap();
        let grid = build_remap_grid(&params, (16, 20), (32, 48)).unwrap();
        let path = dir.path().join("grid.bin");
        save_grid(&path, &grid).unwrap();
        let back = load_grid(&path).unwrap();
        assert_eq!(back.target_extents, grid.target_extents);
        assert_eq!(back.source_extents, grid.source_extents);
        for (a, b) in back.coords.iter().zip(&grid.coords) {
            assert!(
                (a.0.is_nan() && b.0.is_nan()) || a == b,
                "coords differ: {a:?} vs {b:?}"
            );
        }
    }
}
