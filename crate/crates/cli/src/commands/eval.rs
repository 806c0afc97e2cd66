use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use crowdmap::density::count_from_map;
use crowdmap::metrics::evaluate;
use crowdmap::msnn::{decode_checkpoint, image_to_tensor};
use crowdmap::{DensityMap, Error, Tensor};
use serde::{Deserialize, Serialize};

use super::{load_annotations, load_image, load_map};
use crate::manifest::{absolute, Recorded, RunContext};

pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Test annotations; image paths are relative to this file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Trained network to evaluate.
    #[arg(long, required_unless_present = "oracle_maps", conflicts_with = "oracle_maps")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of density maps whose integrals are taken as predictions.
    #[arg(long)]
    pub oracle_maps: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn as_core<T>(r: Result<T>) -> crowdmap::Result<T> {
    r.map_err(|e| Error::Config(format!("{e:#}")))
}

impl Recorded for EvalArgs {
    const NAME: &'static str = "eval";

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        absolute(&mut self.annotations)?;
        if let Some(c) = self.checkpoint.as_mut() {
            absolute(c)?;
        }
        if let Some(m) = self.oracle_maps.as_mut() {
            absolute(m)?;
        }
        Ok(())
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let anns = load_annotations(ctx, &self.annotations)?;
        let report = match (&self.checkpoint, &self.oracle_maps) {
            (Some(ckpt), _) => {
                let net = decode_checkpoint(&ctx.read(ckpt)?)?;
                let items = anns
                    .iter()
                    .map(|a| {
                        let input = load_image(ctx, &self.annotations, &a.image_id).map(|i| image_to_tensor(&i));
                        (a.image_id.clone(), a.count() as f64, as_core(input))
                    })
                    .collect();
                evaluate(&|x: &Tensor| net.predict_count(x), items, "msnn")?
            }
            (None, Some(dir)) => {
                let items = anns
                    .iter()
                    .map(|a| {
                        (
                            a.image_id.clone(),
                            a.count() as f64,
                            as_core(load_map(ctx, dir, &a.image_id)),
                        )
                    })
                    .collect();
                evaluate(&|m: &DensityMap| Ok(count_from_map(m)), items, "oracle")?
            }
            (None, None) => unreachable!("clap requires one predictor"),
        };
        if !report.failures.is_empty() {
            log::warn!(
                "{} of {} images failed; aggregates cover the rest",
                report.failures.len(),
                anns.len()
            );
        }
        println!(
            "MAE {} RMSE {} over {} images",
            report.mae,
            report.rmse,
            report.records.len()
        );
        ctx.write(REPORT_FILE, report.to_csv().as_bytes())
    }
}
