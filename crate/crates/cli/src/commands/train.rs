use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use crowdmap::msnn::{encode_checkpoint, image_to_tensor, preset_with, train, Sample, TrainConfig, DEFAULT_INIT_STD};
use crowdmap::tensor::DEFAULT_LEARNING_RATE;
use crowdmap::{Msnn, NetworkSpec};
use serde::{Deserialize, Serialize};

use super::{load_annotations, load_image, load_map};
use crate::manifest::{absolute, Recorded, RunContext};

pub const CHECKPOINT_FILE: &str = "model.msnw";
pub const LOSS_LOG_FILE: &str = "loss.csv";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training annotations; image paths are relative to this file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Ground-truth maps at image resolution.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Preset with this many streams.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), default_value_t = 3)]
    pub streams: u8,
    /// Network description (JSON); overrides `--streams`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Divide every hidden channel count by this factor, rounding up.
    #[arg(long, default_value_t = 1)]
    pub shrink: usize,
    /// Append a final convolution to each stream of the four-stream preset.
    #[arg(long)]
    pub msnn4_final_conv: bool,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_INIT_STD)]
    pub init_std: f64,
}

impl TrainArgs {
    fn network_spec(&self, ctx: &mut RunContext) -> Result<NetworkSpec> {
        let spec = match &self.spec {
            Some(path) => NetworkSpec::from_json(&ctx.read_string(path)?)
                .with_context(|| format!("network description {}", path.display()))?,
            None => preset_with(usize::from(self.streams), self.msnn4_final_conv)?,
        };
        let spec = if self.shrink > 1 {
            spec.shrink(self.shrink)
        } else {
            spec
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Recorded for TrainArgs {
    const NAME: &'static str = "train";
    const PUBLISHED_DEFAULTS: &'static [&'static str] = &["lr", "batch"];

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        absolute(&mut self.annotations)?;
        absolute(&mut self.maps)?;
        if let Some(s) = self.spec.as_mut() {
            absolute(s)?;
        }
        Ok(())
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let spec = self.network_spec(ctx)?;
        let anns = load_annotations(ctx, &self.annotations)?;
        let data = anns
            .iter()
            .map(|ann| {
                let image = image_to_tensor(&load_image(ctx, &self.annotations, &ann.image_id)?);
                let map = load_map(ctx, &self.maps, &ann.image_id)?;
                Sample::new(image, &map, ann.count() as f64).with_context(|| ann.image_id.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Msnn::random(&spec, self.init_std, self.seed)?;
        let cfg = TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            max_steps: self.max_steps,
        };
        let log = train(&mut net, &data, &cfg)?;
        let mut csv = String::from("epoch,mean_loss,train_mae,steps\n");
        for e in &log {
            writeln!(csv, "{},{},{},{}", e.epoch, e.mean_loss, e.train_mae, e.steps)?;
            log::info!("epoch {} loss {:.6} mae {:.4}", e.epoch, e.mean_loss, e.train_mae);
        }
        ctx.write(CHECKPOINT_FILE, &encode_checkpoint(&net))?;
        ctx.write(LOSS_LOG_FILE, csv.as_bytes())?;
        Ok(())
    }
}
