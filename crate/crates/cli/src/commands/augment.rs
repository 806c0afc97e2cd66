use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use crowdmap::annotations::annotations_to_string;
use crowdmap::augment::{augment_image, NoiseDraw, NoiseSpec, PatchSpec};
use crowdmap::formats::{encode_dmap, encode_pgm};
use crowdmap::ImageAnnotation;
use serde::{Deserialize, Serialize};

use super::{artifact_stem, load_annotations, load_image, load_map};
use crate::manifest::{absolute, Recorded, RunContext};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const PATCHES_FILE: &str = "patches.json";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AugmentArgs {
    /// Annotation file; image paths are relative to its directory.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory of full-image density maps, as written by `gen-gt`.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub window: usize,
    #[arg(long, default_value_t = 70)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip photometric noise.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, default_value_t = 5.0)]
    pub gaussian_stddev: f64,
    /// Brightness offsets are drawn from [-b, b].
    #[arg(long, default_value_t = 20.0)]
    pub brightness: f64,
    #[arg(long, default_value_t = 0.8)]
    pub contrast_min: f64,
    #[arg(long, default_value_t = 1.25)]
    pub contrast_max: f64,
}

/// One produced patch and where it came from.
#[derive(Debug, Serialize)]
struct PatchRecord {
    image: String,
    map: String,
    source_image: String,
    origin: (usize, usize),
    count: usize,
    mass_discrepancy: f64,
    noise: Option<NoiseDraw>,
}

impl AugmentArgs {
    fn noise(&self) -> Option<NoiseSpec> {
        (!self.no_noise).then(|| NoiseSpec {
            gaussian_stddev: self.gaussian_stddev,
            brightness_range: (-self.brightness, self.brightness),
            contrast_range: (self.contrast_min, self.contrast_max),
            seed: self.seed,
        })
    }
}

impl Recorded for AugmentArgs {
    const NAME: &'static str = "augment";
    const PUBLISHED_DEFAULTS: &'static [&'static str] = &["window", "stride"];

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        absolute(&mut self.annotations)?;
        absolute(&mut self.maps)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let patches = PatchSpec {
            window: self.window,
            stride: self.stride,
        };
        patches.validate()?;
        let noise = self.noise();
        if let Some(n) = &noise {
            n.validate()?;
        }
        let anns = load_annotations(ctx, &self.annotations)?;

        let mut loaded = Vec::with_capacity(anns.len());
        let mut failures = Vec::new();
        for ann in &anns {
            let image = load_image(ctx, &self.annotations, &ann.image_id);
            let map = load_map(ctx, &self.maps, &ann.image_id);
            match (image, map) {
                (Ok(i), Ok(m)) => loaded.push((ann, i, m)),
                (i, m) => failures.extend(i.err().into_iter().chain(m.err()).map(|e| format!("{e:#}"))),
            }
        }
        if !failures.is_empty() {
            bail!("unreadable inputs:\n  {}", failures.join("\n  "));
        }

        let mut out_anns = Vec::new();
        let mut records = Vec::new();
        for (index, (ann, image, map)) in loaded.iter().enumerate() {
            let (produced, warning) = augment_image(ann, map, image, &patches, noise.as_ref(), index as u64)?;
            if let Some(w) = warning {
                log::warn!("{w}");
            }
            for p in produced {
                let stem = artifact_stem(&p.patch.annotation.image_id);
                let image_rel = format!("images/{stem}.pgm");
                let map_rel = format!("maps/{}.dmap", artifact_stem(&image_rel));
                ctx.write(&image_rel, &encode_pgm(&p.image))?;
                ctx.write(&map_rel, &encode_dmap(&p.patch.map))?;
                records.push(PatchRecord {
                    image: image_rel.clone(),
                    map: map_rel,
                    source_image: ann.image_id.clone(),
                    origin: p.patch.origin,
                    count: p.patch.annotation.count(),
                    mass_discrepancy: p.patch.mass_discrepancy(),
                    noise: p.noise,
                });
                out_anns.push(ImageAnnotation {
                    image_id: image_rel,
                    ..p.patch.annotation
                });
            }
        }
        ctx.write(ANNOTATIONS_FILE, annotations_to_string(&out_anns).as_bytes())?;
        ctx.write(
            PATCHES_FILE,
            (serde_json::to_string_pretty(&records)? + "\n").as_bytes(),
        )?;
        log::info!("{} patches from {} images", records.len(), loaded.len());
        Ok(())
    }
}
