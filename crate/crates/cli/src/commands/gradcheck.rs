use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use crowdmap::gradcheck::{grad_check, GradCheckConfig};
use crowdmap::msnn::{preset, OUTPUT_STRIDE};
use crowdmap::{DensityMap, Msnn, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{Recorded, RunContext};

pub const REPORT_FILE: &str = "gradcheck.json";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), default_value_t = 2)]
    pub streams: u8,
    #[arg(long, default_value_t = 4)]
    pub shrink: usize,
    /// Side of the random square input.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub init_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

impl Recorded for GradcheckArgs {
    const NAME: &'static str = "gradcheck";

    fn out_dir(&self) -> &Path {
        &self.out
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        self.out = out;
    }

    fn absolutize(&mut self) -> Result<()> {
        Ok(())
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let spec = preset(usize::from(self.streams))?.shrink(self.shrink);
        let net = Msnn::random(&spec, self.init_std, self.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        let input = Tensor::randn(&[spec.in_channels, self.size, self.size], 1.0, &mut rng);
        let side = self.size.div_ceil(OUTPUT_STRIDE);
        let gt = DensityMap::from_values(
            side,
            side,
            (0..side * side).map(|_| rng.random_range(0.0..0.5)).collect(),
        )?;
        let cfg = GradCheckConfig {
            tolerance: self.tolerance,
            step: self.step,
            samples_per_tensor: self.samples,
            seed: self.seed,
            ..GradCheckConfig::default()
        };
        let report = grad_check(&net, &input, &gt, &cfg)?;
        ctx.write(REPORT_FILE, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
        println!(
            "gradient check {}: max relative error {:e} (tolerance {:e})",
            if report.passed { "passed" } else { "FAILED" },
            report.max_rel_error,
            report.tolerance
        );
        if !report.passed {
            bail!(
                "gradient check failed in {}",
                report.worst_tensor.as_deref().unwrap_or("an unnamed tensor")
            );
        }
        Ok(())
    }
}
