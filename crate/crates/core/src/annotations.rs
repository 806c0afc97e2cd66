//! Head-point annotations and external face detections.
//!
//! Coordinates are `(row, col)` with the origin at the top-left pixel,
//! zero-indexed. Fractional coordinates are kept as-is.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel position. Fractional values are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub row: f64,
    pub col: f64,
}

impl Point2D {
    pub const fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }

    /// True when the point lies in `[0, rows) x [0, cols)`.
    pub fn is_inside(&self, shape: (usize, usize)) -> bool {
        self.row >= 0.0 && self.col >= 0.0 && self.row < shape.0 as f64 && self.col < shape.1 as f64
    }

    pub(crate) fn check_inside(&self, shape: (usize, usize)) -> Result<()> {
        if self.is_inside(shape) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                row: self.row,
                col: self.col,
                rows: shape.0,
                cols: shape.1,
            })
        }
    }
}

impl From<[f64; 2]> for Point2D {
    fn from([row, col]: [f64; 2]) -> Self {
        Self { row, col }
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.row, p.col]
    }
}

/// Axis-aligned box given by its centre and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub center: Point2D,
    pub height: f64,
    pub width: f64,
}

impl BBox {
    pub fn new(center: Point2D, height: f64, width: f64) -> Result<Self> {
        if !(height > 0.0 && height.is_finite() && width > 0.0 && width.is_finite()) {
            return Err(Error::Config(format!(
                "box dimensions must be positive, got height {height}, width {width}"
            )));
        }
        Ok(Self { center, height, width })
    }

    pub fn top(&self) -> f64 {
        self.center.row - self.height / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center.row + self.height / 2.0
    }

    pub fn left(&self) -> f64 {
        self.center.col - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.center.col + self.width / 2.0
    }

    /// Intersection with positive area. Boxes that only share an edge do not
    /// intersect.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.top() < other.bottom()
            && other.top() < self.bottom()
            && self.left() < other.right()
            && other.left() < self.right()
    }
}

/// One image with its annotated head points.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub shape: (usize, usize),
    pub heads: Vec<Point2D>,
}

impl ImageAnnotation {
    pub fn new(image_id: impl Into<String>, shape: (usize, usize), heads: Vec<Point2D>) -> Result<Self> {
        let ann = Self {
            image_id: image_id.into(),
            shape,
            heads,
        };
        ann.validate(0)?;
        Ok(ann)
    }

    pub fn count(&self) -> usize {
        self.heads.len()
    }

    fn validate(&self, record: usize) -> Result<()> {
        if self.shape.0 == 0 || self.shape.1 == 0 {
            return Err(Error::Validation {
                record,
                image: self.image_id.clone(),
                message: format!("empty image shape {:?}", self.shape),
            });
        }
        for (i, head) in self.heads.iter().enumerate() {
            if let Err(e) = head.check_inside(self.shape) {
                return Err(Error::Validation {
                    record,
                    image: self.image_id.clone(),
                    message: format!("head {i}: {e}"),
                });
            }
        }
        Ok(())
    }
}

/// Face detections for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub image_id: String,
    pub boxes: Vec<BBox>,
}

impl DetectionSet {
    pub fn empty(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            boxes: Vec::new(),
        }
    }

    /// Checks that every box centre lies inside the image. Box extents may
    /// cross the border.
    pub fn validate_against(&self, shape: (usize, usize)) -> Result<()> {
        for (i, b) in self.boxes.iter().enumerate() {
            if let Err(e) = b.center.check_inside(shape) {
                return Err(Error::Validation {
                    record: i,
                    image: self.image_id.clone(),
                    message: format!("detection centre: {e}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    image: String,
    shape: [usize; 2],
    heads: Vec<Point2D>,
}

/// Wire form of one box. `crowded` only appears in the boxes sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cy: f64,
    pub cx: f64,
    pub h: f64,
    pub w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowded: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    pub boxes: Vec<BoxRecord>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<ImageAnnotation>> {
    let path = path.as_ref();
    annotations_from_str(&read(path)?, path)
}

/// Parses annotation JSON; `origin` is only used in error messages.
pub fn annotations_from_str(text: &str, origin: &Path) -> Result<Vec<ImageAnnotation>> {
    let records: Vec<AnnotationRecord> = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let ann = ImageAnnotation {
                image_id: r.image,
                shape: (r.shape[0], r.shape[1]),
                heads: r.heads,
            };
            ann.validate(i)?;
            Ok(ann)
        })
        .collect()
}

pub fn annotations_to_string(anns: &[ImageAnnotation]) -> String {
    let records: Vec<AnnotationRecord> = anns
        .iter()
        .map(|a| AnnotationRecord {
            image: a.image_id.clone(),
            shape: [a.shape.0, a.shape.1],
            heads: a.heads.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("annotation records always serialize")
}

pub fn parse_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionSet>> {
    let path = path.as_ref();
    detections_from_str(&read(path)?, path)
}

pub fn detections_from_str(text: &str, origin: &Path) -> Result<Vec<DetectionSet>> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let boxes = r
                .boxes
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    BBox::new(Point2D::new(b.cy, b.cx), b.h, b.w).map_err(|e| Error::Validation {
                        record: i,
                        image: r.image.clone(),
                        message: format!("box {j}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DetectionSet {
                image_id: r.image,
                boxes,
            })
        })
        .collect()
}

impl From<&BBox> for BoxRecord {
    fn from(b: &BBox) -> Self {
        BoxRecord {
            cy: b.center.row,
            cx: b.center.col,
            h: b.height,
            w: b.width,
            crowded: None,
        }
    }
}

pub fn detections_to_string(sets: &[DetectionSet]) -> String {
    let records: Vec<DetectionRecord> = sets
        .iter()
        .map(|s| DetectionRecord {
            image: s.image_id.clone(),
            boxes: s.boxes.iter().map(BoxRecord::from).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("detection records always serialize")
}
