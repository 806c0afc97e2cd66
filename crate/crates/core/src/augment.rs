//! Sliding-window patch extraction and photometric noise.
//!
//! Patches carry their image crop, a crop of the density map and the heads
//! that fall inside the window. Noise only touches pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::{ImageAnnotation, Point2D};
use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::formats::GrayImage;

pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_STRIDE: usize = 70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub window: usize,
    pub stride: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config(format!("window and stride must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub gaussian_stddev: f64,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_stddev: 5.0,
            brightness_range: (-20.0, 20.0),
            contrast_range: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            gaussian_stddev: 0.0,
            brightness_range: (0.0, 0.0),
            contrast_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (blo, bhi) = self.brightness_range;
        let (clo, chi) = self.contrast_range;
        let ok = self.gaussian_stddev >= 0.0
            && self.gaussian_stddev.is_finite()
            && blo <= bhi
            && blo.is_finite()
            && bhi.is_finite()
            && clo > 0.0
            && clo <= chi
            && chi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise specification {self:?}")))
        }
    }

    /// Generator for the `index`-th image: seeded with `seed ^ index`.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index)
    }
}

/// Valid window origins in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatchGrid {
    pub origins: Vec<(usize, usize)>,
    /// Set when the image is smaller than the window on some axis.
    pub warning: Option<String>,
}

fn axis_origins(extent: usize, spec: &PatchSpec) -> Vec<usize> {
    if extent < spec.window {
        return Vec::new();
    }
    (0..=extent - spec.window).step_by(spec.stride).collect()
}

pub fn slide_patches(shape: (usize, usize), spec: &PatchSpec) -> Result<PatchGrid> {
    spec.validate()?;
    let rows = axis_origins(shape.0, spec);
    let cols = axis_origins(shape.1, spec);
    let origins: Vec<_> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    let warning = origins.is_empty().then(|| {
        format!(
            "image {}x{} is smaller than the {}-pixel window",
            shape.0, shape.1, spec.window
        )
    });
    Ok(PatchGrid { origins, warning })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub annotation: ImageAnnotation,
    pub map: DensityMap,
}

impl Patch {
    /// Map mass minus head count: nonzero when kernels straddle the window.
    pub fn mass_discrepancy(&self) -> f64 {
        self.map.count() - self.annotation.count() as f64
    }
}

/// Square crop of an annotation and its density map. Heads in the half-open
/// window are kept and rebased to patch coordinates.
pub fn cut_patch(ann: &ImageAnnotation, map: &DensityMap, origin: (usize, usize), window: usize) -> Result<Patch> {
    if map.shape() != ann.shape {
        return Err(Error::Shape(format!(
            "map {:?} does not match annotation {:?}",
            map.shape(),
            ann.shape
        )));
    }
    let (r0, c0) = origin;
    if window == 0 || r0 + window > ann.shape.0 || c0 + window > ann.shape.1 {
        return Err(Error::Shape(format!(
            "window {window} at {origin:?} exceeds image {:?}",
            ann.shape
        )));
    }
    let (lo_r, lo_c) = (r0 as f64, c0 as f64);
    let (hi_r, hi_c) = (lo_r + window as f64, lo_c + window as f64);
    let heads = ann
        .heads
        .iter()
        .filter(|p| p.row >= lo_r && p.row < hi_r && p.col >= lo_c && p.col < hi_c)
        .map(|p| Point2D::new(p.row - lo_r, p.col - lo_c))
        .collect();
    let mut values = Vec::with_capacity(window * window);
    for r in r0..r0 + window {
        values.extend_from_slice(&map.values()[r * map.cols() + c0..][..window]);
    }
    Ok(Patch {
        origin,
        annotation: ImageAnnotation {
            image_id: format!("{}@{}_{}", ann.image_id, r0, c0),
            shape: (window, window),
            heads,
        },
        map: DensityMap::from_values(window, window, values)?,
    })
}

/// Per-image photometric draw, recorded for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub contrast: f64,
    pub brightness: f64,
    pub gaussian_stddev: f64,
}

fn draw_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// `clamp((in + N(0, std)) * contrast + brightness)`, with contrast and
/// brightness drawn once per image from `rng`.
pub fn apply_noise_with<R: Rng>(image: &GrayImage, spec: &NoiseSpec, rng: &mut R) -> Result<(GrayImage, NoiseDraw)> {
    spec.validate()?;
    let contrast = draw_in(rng, spec.contrast_range);
    let brightness = draw_in(rng, spec.brightness_range);
    let normal =
        (spec.gaussian_stddev > 0.0).then(|| Normal::new(0.0, spec.gaussian_stddev).expect("validated stddev"));
    let mut out = image.clone();
    for p in out.pixels_mut() {
        let noise = normal.as_ref().map_or(0.0, |n| n.sample(rng));
        let v = (f64::from(*p) + noise) * contrast + brightness;
        *p = v.round().clamp(0.0, 255.0) as u8;
    }
    Ok((
        out,
        NoiseDraw {
            contrast,
            brightness,
            gaussian_stddev: spec.gaussian_stddev,
        },
    ))
}

/// Noise seeded from `spec.seed` alone.
pub fn apply_noise(image: &GrayImage, spec: &NoiseSpec) -> Result<(GrayImage, NoiseDraw)> {
    apply_noise_with(image, spec, &mut spec.rng_for(0))
}

#[derive(Debug, Clone)]
pub struct AugmentedPatch {
    pub patch: Patch,
    pub image: GrayImage,
    pub noise: Option<NoiseDraw>,
}

/// All patches of one image. `image_index` selects the noise stream so the
/// result does not depend on the order images are processed in.
pub fn augment_image(
    ann: &ImageAnnotation,
    map: &DensityMap,
    image: &GrayImage,
    patches: &PatchSpec,
    noise: Option<&NoiseSpec>,
    image_index: u64,
) -> Result<(Vec<AugmentedPatch>, Option<String>)> {
    if image.shape() != ann.shape {
        return Err(Error::Shape(format!(
            "image {:?} does not match annotation {:?} for {}",
            image.shape(),
            ann.shape,
            ann.image_id
        )));
    }
    let grid = slide_patches(ann.shape, patches)?;
    let mut rng = noise.map(|n| n.rng_for(image_index));
    let mut out = Vec::with_capacity(grid.origins.len());
    for &origin in &grid.origins {
        let patch = cut_patch(ann, map, origin, patches.window)?;
        let crop = image.crop(origin.0, origin.1, patches.window, patches.window)?;
        let (image, draw) = match (noise, rng.as_mut()) {
            (Some(spec), Some(rng)) => {
                let (img, draw) = apply_noise_with(&crop, spec, rng)?;
                (img, Some(draw))
            }
            _ => (crop, None),
        };
        out.push(AugmentedPatch {
            patch,
            image,
            noise: draw,
        });
    }
    Ok((out, grid.warning))
}
