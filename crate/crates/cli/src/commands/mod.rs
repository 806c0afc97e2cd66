use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crowdmap::annotations::annotations_from_str;
use crowdmap::formats::{decode_dmap, GrayImage};
use crowdmap::{DensityMap, ImageAnnotation};

use crate::manifest::RunContext;

pub mod augment;
pub mod eval;
pub mod gen_gt;
pub mod gradcheck;
pub mod render;
pub mod train;

/// File-name-safe form of an image id, shared by every command that reads
/// or writes per-image artifacts.
pub fn artifact_stem(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn map_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{}.dmap", artifact_stem(image_id)))
}

pub fn load_annotations(ctx: &mut RunContext, path: &Path) -> Result<Vec<ImageAnnotation>> {
    let text = ctx.read_string(path)?;
    Ok(annotations_from_str(&text, path)?)
}

pub fn load_map(ctx: &mut RunContext, dir: &Path, image_id: &str) -> Result<DensityMap> {
    let path = map_path(dir, image_id);
    let bytes = ctx.read(&path)?;
    decode_dmap(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Image referenced by an annotation, resolved against the annotation file's
/// directory and converted to 8-bit grayscale.
pub fn load_image(ctx: &mut RunContext, annotations: &Path, image_id: &str) -> Result<GrayImage> {
    let path = annotations.parent().unwrap_or(Path::new(".")).join(image_id);
    let bytes = ctx.read(&path)?;
    let img = image::load_from_memory(&bytes)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(GrayImage::new(h as usize, w as usize, img.into_raw())?)
}
