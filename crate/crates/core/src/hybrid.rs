//! Face-assisted ground truth.
//!
//! Sparse face detections are spread to every annotated person by
//! inverse-distance weighting. A coarse weighting (power 1) sizes an overlap
//! region around each person; people whose region overlaps more than
//! `t_overlaps` others are treated as crowded and get a fixed isotropic
//! kernel. Everyone else gets an anisotropic kernel sized by a sharply local
//! weighting (power 10) of the detections.

use serde::{Deserialize, Serialize};

use crate::annotations::{BBox, DetectionSet, ImageAnnotation, Point2D};
use crate::density::{splat_gaussian, DensityMap, KernelSpec, DEFAULT_SIGMA, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};

/// Which rectangles a person's overlap region is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapAgainst {
    /// Other persons' overlap regions.
    #[default]
    Regions,
    /// The raw detections.
    Detections,
}

impl std::str::FromStr for OverlapAgainst {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regions" => Ok(Self::Regions),
            "detections" => Ok(Self::Detections),
            other => Err(Error::Config(format!("unknown overlap set {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceGtConfig {
    pub t_overlaps: usize,
    pub crowded_sigma: f64,
    pub sigma_scale: f64,
    pub distance_epsilon: f64,
    pub overlap_against: OverlapAgainst,
    pub truncation: f64,
}

impl Default for FaceGtConfig {
    fn default() -> Self {
        Self {
            t_overlaps: 3,
            crowded_sigma: DEFAULT_SIGMA,
            sigma_scale: 1.0,
            distance_epsilon: 1e-6,
            overlap_against: OverlapAgainst::Regions,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl FaceGtConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if pos(self.crowded_sigma) && pos(self.sigma_scale) && pos(self.distance_epsilon) && pos(self.truncation) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid face ground-truth configuration {self:?}"
            )))
        }
    }
}

/// The box that sized one person's kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonBox {
    pub person_index: usize,
    pub bbox: BBox,
    pub crowded: bool,
}

/// `1 / max(|x - c|, eps)`.
pub fn overlap_weight(x: Point2D, c: Point2D, eps: f64) -> f64 {
    1.0 / x.distance(&c).max(eps)
}

/// `1 / max(|x - c|, eps)^10`.
pub fn bb_weight(x: Point2D, c: Point2D, eps: f64) -> f64 {
    x.distance(&c).max(eps).powi(-10)
}

/// Weighted mean of detection heights and widths with weights
/// `(d_min / d_j)^power`. The common factor `d_min^power` cancels in the
/// ratio, so this equals the plain inverse-power average without underflow.
fn inverse_power_average(x: Point2D, detections: &DetectionSet, eps: f64, power: i32) -> Result<(f64, f64)> {
    if detections.boxes.is_empty() {
        return Err(Error::NoDetections);
    }
    let dists: Vec<f64> = detections
        .boxes
        .iter()
        .map(|b| x.distance(&b.center).max(eps))
        .collect();
    let nearest = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut wsum, mut hsum, mut widsum) = (0.0, 0.0, 0.0);
    for (b, d) in detections.boxes.iter().zip(&dists) {
        let w = (nearest / d).powi(power);
        wsum += w;
        hsum += w * b.height;
        widsum += w * b.width;
    }
    Ok((hsum / wsum, widsum / wsum))
}

/// Overlap region centred on `x`: detection sizes averaged with
/// [`overlap_weight`].
pub fn overlap_region(x: Point2D, detections: &DetectionSet, eps: f64) -> Result<BBox> {
    let (h, w) = inverse_power_average(x, detections, eps, 1)?;
    BBox::new(x, h, w)
}

/// Interpolated person box centred on `x`: detection sizes averaged with
/// [`bb_weight`].
pub fn interpolate_box(x: Point2D, detections: &DetectionSet, eps: f64) -> Result<BBox> {
    let (h, w) = inverse_power_average(x, detections, eps, 10)?;
    BBox::new(x, h, w)
}

/// Uniform grid over axis-aligned rectangles for positive-area intersection
/// counting.
pub struct OverlapIndex<'a> {
    boxes: &'a [BBox],
    origin: (f64, f64),
    cell: f64,
    dims: (usize, usize),
    cells: Vec<Vec<u32>>,
}

const MAX_GRID_SIDE: usize = 1024;

impl<'a> OverlapIndex<'a> {
    pub fn new(boxes: &'a [BBox]) -> Self {
        if boxes.is_empty() {
            return Self {
                boxes,
                origin: (0.0, 0.0),
                cell: 1.0,
                dims: (1, 1),
                cells: vec![Vec::new()],
            };
        }
        let (mut top, mut left) = (f64::INFINITY, f64::INFINITY);
        let (mut bottom, mut right) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for b in boxes {
            top = top.min(b.top());
            left = left.min(b.left());
            bottom = bottom.max(b.bottom());
            right = right.max(b.right());
        }
        let mut sizes: Vec<f64> = boxes.iter().map(|b| b.height.max(b.width)).collect();
        let mid = sizes.len() / 2;
        sizes.select_nth_unstable_by(mid, f64::total_cmp);
        let extent = (bottom - top).max(right - left);
        let cell = sizes[mid].max(extent / MAX_GRID_SIDE as f64);
        let dims = (
            (((bottom - top) / cell).floor() as usize + 1).min(MAX_GRID_SIDE),
            (((right - left) / cell).floor() as usize + 1).min(MAX_GRID_SIDE),
        );
        let mut index = Self {
            boxes,
            origin: (top, left),
            cell,
            dims,
            cells: vec![Vec::new(); dims.0 * dims.1],
        };
        for (i, b) in boxes.iter().enumerate() {
            let (r0, r1, c0, c1) = index.cell_span(b);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    index.cells[r * dims.1 + c].push(i as u32);
                }
            }
        }
        index
    }

    fn cell_of(&self, v: f64, origin: f64, n: usize) -> usize {
        let k = ((v - origin) / self.cell).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(n - 1)
        }
    }

    fn cell_span(&self, b: &BBox) -> (usize, usize, usize, usize) {
        (
            self.cell_of(b.top(), self.origin.0, self.dims.0),
            self.cell_of(b.bottom(), self.origin.0, self.dims.0),
            self.cell_of(b.left(), self.origin.1, self.dims.1),
            self.cell_of(b.right(), self.origin.1, self.dims.1),
        )
    }

    /// Number of indexed boxes, other than `skip`, that intersect `query`
    /// with positive area.
    pub fn count_intersecting(&self, query: &BBox, skip: Option<usize>) -> usize {
        if self.boxes.is_empty() {
            return 0;
        }
        let (r0, r1, c0, c1) = self.cell_span(query);
        let mut hits: Vec<u32> = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &j in &self.cells[r * self.dims.1 + c] {
                    if Some(j as usize) != skip && self.boxes[j as usize].intersects(query) {
                        hits.push(j);
                    }
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits.len()
    }

    /// Overlap count for every indexed box against the others.
    pub fn count_all(&self) -> Vec<usize> {
        (0..self.boxes.len())
            .map(|i| self.count_intersecting(&self.boxes[i], Some(i)))
            .collect()
    }
}

/// Number of `j != i` whose rectangle intersects `regions[i]` with positive
/// area.
pub fn count_overlaps(regions: &[BBox], i: usize) -> Result<usize> {
    let query = regions.get(i).ok_or(Error::IndexOutOfRange {
        index: i,
        len: regions.len(),
    })?;
    Ok(OverlapIndex::new(regions).count_intersecting(query, Some(i)))
}

#[derive(Debug, Clone)]
pub struct FaceGroundTruth {
    pub map: DensityMap,
    pub boxes: Vec<PersonBox>,
}

impl FaceGroundTruth {
    pub fn crowded_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.crowded).count()
    }
}

/// Hybrid ground truth for one image.
pub fn gen_face(ann: &ImageAnnotation, detections: &DetectionSet, cfg: &FaceGtConfig) -> Result<FaceGroundTruth> {
    cfg.validate()?;
    if ann.image_id != detections.image_id {
        return Err(Error::ImageMismatch {
            annotation: ann.image_id.clone(),
            detections: detections.image_id.clone(),
        });
    }
    detections.validate_against(ann.shape)?;

    let crowded_kernel = KernelSpec::isotropic(cfg.crowded_sigma).with_truncation(cfg.truncation);
    let crowded_box = |x: Point2D| BBox::new(x, cfg.crowded_sigma, cfg.crowded_sigma);
    let mut map = DensityMap::zeros(ann.shape.0, ann.shape.1);
    let mut boxes = Vec::with_capacity(ann.heads.len());

    if detections.boxes.is_empty() {
        for (i, &x) in ann.heads.iter().enumerate() {
            splat_gaussian(&mut map, x, &crowded_kernel)?;
            boxes.push(PersonBox {
                person_index: i,
                bbox: crowded_box(x)?,
                crowded: true,
            });
        }
        return Ok(FaceGroundTruth { map, boxes });
    }

    let eps = cfg.distance_epsilon;
    let regions = ann
        .heads
        .iter()
        .map(|&x| overlap_region(x, detections, eps))
        .collect::<Result<Vec<_>>>()?;
    let overlaps = match cfg.overlap_against {
        OverlapAgainst::Regions => OverlapIndex::new(&regions).count_all(),
        OverlapAgainst::Detections => {
            let index = OverlapIndex::new(&detections.boxes);
            regions.iter().map(|r| index.count_intersecting(r, None)).collect()
        }
    };

    for (i, (&x, &n)) in ann.heads.iter().zip(&overlaps).enumerate() {
        if n > cfg.t_overlaps {
            splat_gaussian(&mut map, x, &crowded_kernel)?;
            boxes.push(PersonBox {
                person_index: i,
                bbox: crowded_box(x)?,
                crowded: true,
            });
        } else {
            let d = interpolate_box(x, detections, eps)?;
            let kernel = KernelSpec::anisotropic(cfg.sigma_scale * d.height, cfg.sigma_scale * d.width)
                .with_truncation(cfg.truncation);
            splat_gaussian(&mut map, x, &kernel)?;
            boxes.push(PersonBox {
                person_index: i,
                bbox: d,
                crowded: false,
            });
        }
    }
    Ok(FaceGroundTruth { map, boxes })
}
