//! Central finite-difference check of network gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::msnn::{loss_and_grads, Msnn, Sample};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding compare as equal.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub tolerance: f64,
    pub step: f64,
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub max_params: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-3,
            samples_per_tensor: 12,
            seed: 0,
            max_params: 250_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Parameters whose perturbation crossed a rectifier or pooling kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst_tensor: Option<String>,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

pub fn grad_check(
    net: &Msnn,
    input: &Tensor,
    ground_truth: &DensityMap,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    grad_check_with(net, input, ground_truth, cfg, |_| {})
}

/// Like [`grad_check`], with a hook that may alter the analytic gradients
/// before comparison.
pub fn grad_check_with(
    net: &Msnn,
    input: &Tensor,
    ground_truth: &DensityMap,
    cfg: &GradCheckConfig,
    tamper: impl FnOnce(&mut [Tensor]),
) -> Result<GradCheckReport> {
    if net.param_count() > cfg.max_params {
        return Err(Error::Config(format!(
            "network has {} parameters; finite differences are limited to {}",
            net.param_count(),
            cfg.max_params
        )));
    }
    let (_, _, h, w) = input.nchw()?;
    let sample_data = Sample {
        image: input.clone(),
        target: ground_truth.clone(),
        count: 0.0,
    };
    let out_shape = net.forward(input)?.shape().to_vec();
    if out_shape[1..] != [ground_truth.rows(), ground_truth.cols()] {
        return Err(Error::Shape(format!(
            "ground truth {:?} does not match output of a {h}x{w} input",
            ground_truth.shape()
        )));
    }
    let (_, mut grads, _) = loss_and_grads(net, &[&sample_data])?;
    tamper(&mut grads);

    let eval = |probe: &Msnn| -> Result<(f64, u64)> {
        let (out, trace) = probe.forward_trace(input)?;
        let se: f64 = out
            .data()
            .iter()
            .zip(ground_truth.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((se / 2.0, trace.activation_pattern()))
    };
    let (_, base_pattern) = eval(net)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = net.param_names();
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut probe = net.clone();
    let mut tensors = Vec::with_capacity(sizes.len());
    for (t, (&size, name)) in sizes.iter().zip(names).enumerate() {
        let picks = sample(&mut rng, size, cfg.samples_per_tensor.min(size));
        let mut check = TensorCheck {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for i in picks {
            let original = probe.params()[t].data()[i];
            probe.params_mut()[t].data_mut()[i] = original + cfg.step;
            let (plus, p_plus) = eval(&probe)?;
            probe.params_mut()[t].data_mut()[i] = original - cfg.step;
            let (minus, p_minus) = eval(&probe)?;
            probe.params_mut()[t].data_mut()[i] = original;
            if p_plus != base_pattern || p_minus != base_pattern {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grads[t].data()[i], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            check.checked += 1;
        }
        tensors.push(check);
    }
    let worst = tensors
        .iter()
        .filter(|c| c.checked > 0)
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let max_rel_error = worst.map_or(0.0, |c| c.max_rel_error);
    let passed = max_rel_error < cfg.tolerance;
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        max_rel_error,
        worst_tensor: worst.filter(|_| !passed).map(|c| c.name.clone()),
        passed,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msnn::preset;

    fn toy() -> (Msnn, Tensor, DensityMap) {
        let net = Msnn::random(&preset(2).unwrap().shrink(4), 0.3, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[1, 16, 16], 1.0, &mut rng);
        let gt = DensityMap::from_values(4, 4, (0..16).map(|i| (i % 5) as f64 * 0.1).collect()).unwrap();
        (net, x, gt)
    }

    #[test]
    fn toy_network_passes() {
        let (net, x, gt) = toy();
        let report = grad_check(&net, &x, &gt, &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.tensors.iter().map(|t| t.checked).sum::<usize>() > 50);
    }

    #[test]
    fn zero_network_passes_vacuously() {
        let net = Msnn::zeros(&preset(2).unwrap().shrink(4)).unwrap();
        let x = Tensor::zeros(&[1, 16, 16]);
        let gt = DensityMap::zeros(4, 4);
        let report = grad_check(&net, &x, &gt, &GradCheckConfig::default()).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (net, x, gt) = toy();
        let report = grad_check_with(&net, &x, &gt, &GradCheckConfig::default(), |g| {
            for v in g[2].data_mut() {
                *v = -*v;
            }
        })
        .unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_tensor.as_deref(), Some("stream1.conv2.weight"));
    }

    #[test]
    fn parameter_bound_is_enforced() {
        let (net, x, gt) = toy();
        let cfg = GradCheckConfig {
            max_params: 10,
            ..Default::default()
        };
        assert!(grad_check(&net, &x, &gt, &cfg).is_err());
    }
}
