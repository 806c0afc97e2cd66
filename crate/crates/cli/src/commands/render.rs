use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use crowdmap::annotations::{detections_from_str, DetectionRecord};
use crowdmap::formats::{decode_dmap, encode_pgm, render_map, GrayImage};
use serde::{Deserialize, Serialize};

use super::artifact_stem;
use crate::manifest::{absolute, Recorded, RunContext};

/// Outline intensities for uncrowded and crowded boxes.
const BOX_INTENSITY: u8 = 255;
const CROWDED_INTENSITY: u8 = 128;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    /// Density map files, or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Boxes sidecar from `gen-gt --method face`, drawn as outlines.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn expand(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "dmap"));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn draw_outline(img: &mut GrayImage, top: f64, left: f64, bottom: f64, right: f64, value: u8) {
    let (rows, cols) = img.shape();
    if rows == 0 || cols == 0 {
        return;
    }
    let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
    let (r0, r1) = (clamp(top, rows), clamp(bottom, rows));
    let (c0, c1) = (clamp(left, cols), clamp(right, cols));
    for c in c0..=c1 {
        img.set(r0, c, value);
        img.set(r1, c, value);
    }
    for r in r0..=r1 {
        img.set(r, c0, value);
        img.set(r, c1, value);
    }
}

impl Recorded for RenderArgs {
    const NAME: &'static str = "render";

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        self.inputs.iter_mut().try_for_each(absolute)?;
        if let Some(b) = self.boxes.as_mut() {
            absolute(b)?;
        }
        Ok(())
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let sidecar: Vec<DetectionRecord> = match &self.boxes {
            Some(path) => {
                let text = ctx.read_string(path)?;
                detections_from_str(&text, path)?;
                serde_json::from_str(&text)?
            }
            None => Vec::new(),
        };
        for file in expand(&self.inputs)? {
            let map = decode_dmap(&ctx.read(&file)?).with_context(|| format!("decoding {}", file.display()))?;
            let mut img = render_map(&map);
            let stem = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if let Some(rec) = sidecar.iter().find(|r| artifact_stem(&r.image) == stem) {
                for b in &rec.boxes {
                    let value = if b.crowded == Some(true) {
                        CROWDED_INTENSITY
                    } else {
                        BOX_INTENSITY
                    };
                    let (hh, hw) = (b.h / 2.0, b.w / 2.0);
                    draw_outline(&mut img, b.cy - hh, b.cx - hw, b.cy + hh, b.cx + hw, value);
                }
            }
            ctx.write(format!("{stem}.pgm"), &encode_pgm(&img))?;
        }
        Ok(())
    }
}
