use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use crowdmap::annotations::{detections_from_str, BoxRecord, DetectionRecord};
use crowdmap::density::{gen_fixed_with, gen_knn, DEFAULT_MIN_SIGMA, DEFAULT_TRUNCATION};
use crowdmap::formats::encode_dmap;
use crowdmap::hybrid::{gen_face, OverlapAgainst};
use crowdmap::{DetectionSet, FaceGtConfig, KernelSpec, KnnConfig};
use serde::{Deserialize, Serialize};

use super::{artifact_stem, load_annotations};
use crate::manifest::{absolute, Recorded, RunContext};

pub const BOXES_FILE: &str = "boxes.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fixed,
    Knn,
    Face,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenGtArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Face detections; required for `--method face`.
    #[arg(long, required_if_eq("method", "face"))]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    #[arg(long, default_value_t = 4.0)]
    pub fallback_sigma: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_SIGMA)]
    pub min_sigma: f64,
    /// Kernel support radius in standard deviations.
    #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
    pub truncation: f64,
    #[arg(long, default_value_t = 3)]
    pub t_overlaps: usize,
    #[arg(long, default_value_t = 4.0)]
    pub crowded_sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_scale: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value = "regions")]
    pub overlap_against: OverlapAgainst,
}

impl GenGtArgs {
    fn face_config(&self) -> FaceGtConfig {
        FaceGtConfig {
            t_overlaps: self.t_overlaps,
            crowded_sigma: self.crowded_sigma,
            sigma_scale: self.sigma_scale,
            distance_epsilon: self.eps,
            overlap_against: self.overlap_against,
            truncation: self.truncation,
        }
    }

    fn knn_config(&self) -> KnnConfig {
        KnnConfig {
            k: self.k,
            beta: self.beta,
            fallback_sigma: self.fallback_sigma,
            min_sigma: self.min_sigma,
            truncation: self.truncation,
        }
    }

    fn load_detections(&self, ctx: &mut RunContext, path: &Path) -> Result<HashMap<String, DetectionSet>> {
        let text = ctx.read_string(path)?;
        Ok(detections_from_str(&text, path)?
            .into_iter()
            .map(|d| (d.image_id.clone(), d))
            .collect())
    }
}

impl Recorded for GenGtArgs {
    const NAME: &'static str = "gen-gt";
    const PUBLISHED_DEFAULTS: &'static [&'static str] = &["sigma"];

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        absolute(&mut self.annotations)?;
        if let Some(d) = self.detections.as_mut() {
            absolute(d)?;
        }
        Ok(())
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        if self.detections.is_some() && self.method != Method::Face {
            bail!("--detections only applies to --method face");
        }
        let anns = load_annotations(ctx, &self.annotations)?;
        let mut detections = match &self.detections {
            Some(path) => self.load_detections(ctx, path)?,
            None => HashMap::new(),
        };
        let mut sidecar = Vec::new();
        for ann in &anns {
            let map = match self.method {
                Method::Fixed => {
                    gen_fixed_with(ann, KernelSpec::isotropic(self.sigma).with_truncation(self.truncation))?
                }
                Method::Knn => gen_knn(ann, &self.knn_config())?,
                Method::Face => {
                    let dets = detections.remove(&ann.image_id).unwrap_or_else(|| {
                        log::warn!("no detections for {}; treating every person as crowded", ann.image_id);
                        DetectionSet::empty(ann.image_id.clone())
                    });
                    let gt = gen_face(ann, &dets, &self.face_config())?;
                    sidecar.push(DetectionRecord {
                        image: ann.image_id.clone(),
                        boxes: gt
                            .boxes
                            .iter()
                            .map(|b| BoxRecord {
                                crowded: Some(b.crowded),
                                ..BoxRecord::from(&b.bbox)
                            })
                            .collect(),
                    });
                    gt.map
                }
            };
            ctx.write(format!("{}.dmap", artifact_stem(&ann.image_id)), &encode_dmap(&map))?;
        }
        for id in detections.keys() {
            log::warn!("detections for {id} have no matching annotation");
        }
        if self.method == Method::Face {
            ctx.write(BOXES_FILE, (serde_json::to_string_pretty(&sidecar)? + "\n").as_bytes())?;
        }
        Ok(())
    }
}
