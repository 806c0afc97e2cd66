//! Multi-stream counting networks: declarative specs, the four presets,
//! forward/backward passes, the density loss and the training loop.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{count_from_map, downscale_preserving_count, DensityMap};
use crate::error::{Error, Result};
use crate::formats::GrayImage;
use crate::tensor::{
    adam_step, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    AdamState, ConvLayer, PoolIndices, Tensor,
};

/// Output is this many times smaller than the input on each axis.
pub const OUTPUT_STRIDE: usize = 4;
pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSpec {
    Conv { kernel: usize, out_channels: usize },
    Pool2,
}

pub const fn conv(kernel: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Conv { kernel, out_channels }
}

pub const POOL: LayerSpec = LayerSpec::Pool2;

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { kernel, out_channels } => write!(f, "conv({kernel},{out_channels})"),
            LayerSpec::Pool2 => f.write_str("pool2"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "pool2" {
            return Ok(LayerSpec::Pool2);
        }
        let bad = || Error::Config(format!("bad layer descriptor {s:?}; expected conv(k,c) or pool2"));
        let args = s
            .strip_prefix("conv(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let mut parts = args.split(',').map(|p| p.trim().parse::<usize>());
        match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(kernel)), Some(Ok(out_channels)), None) => Ok(conv(kernel, out_channels)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSpec> for String {
    fn from(l: LayerSpec) -> String {
        l.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamSpec {
    pub layers: Vec<LayerSpec>,
}

impl StreamSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers }
    }

    /// Channel count leaving the stream.
    pub fn out_channels(&self, in_channels: usize) -> usize {
        self.layers.iter().fold(in_channels, |c, l| match l {
            LayerSpec::Conv { out_channels, .. } => *out_channels,
            LayerSpec::Pool2 => c,
        })
    }

    fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    pub fn max_kernel(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { kernel, .. } => Some(*kernel),
                LayerSpec::Pool2 => None,
            })
            .max()
            .unwrap_or(1)
    }
}

/// Parallel streams fused by a 1x1 convolution to one output channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub streams: Vec<StreamSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("network needs at least one input channel".into()));
        }
        if !(1..=4).contains(&self.streams.len()) {
            return Err(Error::Config(format!(
                "network needs 1 to 4 streams, got {}",
                self.streams.len()
            )));
        }
        for (i, s) in self.streams.iter().enumerate() {
            let pools = s.layers.iter().filter(|l| **l == LayerSpec::Pool2).count();
            if pools != 2 {
                return Err(Error::Config(format!(
                    "stream {} has {pools} pool2 layers, expected 2",
                    i + 1
                )));
            }
            if s.last_conv().is_none() {
                return Err(Error::Config(format!("stream {} has no convolution", i + 1)));
            }
            for l in &s.layers {
                if let LayerSpec::Conv { kernel, out_channels } = *l {
                    if kernel % 2 == 0 || out_channels == 0 {
                        return Err(Error::Config(format!("stream {}: invalid layer {l}", i + 1)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn fusion_in_channels(&self) -> usize {
        self.streams.iter().map(|s| s.out_channels(self.in_channels)).sum()
    }

    pub fn max_kernel(&self) -> usize {
        self.streams.iter().map(StreamSpec::max_kernel).max().unwrap_or(1)
    }

    /// Divides every channel count by `divisor`, rounding up.
    pub fn shrink(&self, divisor: usize) -> NetworkSpec {
        let d = divisor.max(1);
        NetworkSpec {
            in_channels: self.in_channels,
            streams: self
                .streams
                .iter()
                .map(|s| {
                    StreamSpec::new(
                        s.layers
                            .iter()
                            .map(|l| match *l {
                                LayerSpec::Conv { kernel, out_channels } => conv(kernel, out_channels.div_ceil(d)),
                                LayerSpec::Pool2 => LayerSpec::Pool2,
                            })
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn with_in_channels(mut self, in_channels: usize) -> Self {
        self.in_channels = in_channels;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("network config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network spec always serializes")
    }
}

fn table_streams() -> [StreamSpec; 4] {
    [
        StreamSpec::new(vec![conv(3, 24), conv(3, 48), POOL, conv(3, 24), POOL, conv(3, 12)]),
        StreamSpec::new(vec![conv(7, 20), conv(5, 40), POOL, conv(5, 20), POOL, conv(5, 10)]),
        StreamSpec::new(vec![conv(9, 20), conv(7, 32), POOL, conv(7, 16), POOL, conv(7, 8)]),
        StreamSpec::new(vec![conv(11, 12), conv(9, 24), POOL, conv(9, 12), POOL]),
    ]
}

/// The published one- to four-stream architectures, single-channel input.
/// The four-stream variant ends each stream at the second pool.
pub fn preset(n_streams: usize) -> Result<NetworkSpec> {
    preset_with(n_streams, false)
}

/// Like [`preset`]; with `complete_msnn4` the four-stream variant gets a
/// final convolution per stream (3x3x12, 5x5x10, 7x7x8, 9x9x6).
pub fn preset_with(n_streams: usize, complete_msnn4: bool) -> Result<NetworkSpec> {
    if !(1..=4).contains(&n_streams) {
        return Err(Error::Config(format!("no preset with {n_streams} streams")));
    }
    let mut streams = table_streams();
    if n_streams == 4 {
        // Four-stream column of the table: streams 2 and 3 lose their final conv too.
        streams[0].layers.truncate(5);
        streams[1].layers.truncate(5);
        streams[2].layers.truncate(5);
        if complete_msnn4 {
            for (s, l) in streams
                .iter_mut()
                .zip([conv(3, 12), conv(5, 10), conv(7, 8), conv(9, 6)])
            {
                s.layers.push(l);
            }
        }
    }
    Ok(NetworkSpec {
        in_channels: 1,
        streams: streams.into_iter().take(n_streams).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv { conv: ConvLayer, relu: bool },
    Pool,
}

/// A multi-stream network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Msnn {
    spec: NetworkSpec,
    streams: Vec<Vec<Layer>>,
    fusion: ConvLayer,
}

enum LayerCache {
    Conv {
        input: Tensor,
        pre_activation: Option<Tensor>,
    },
    Pool(PoolIndices),
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    streams: Vec<Vec<LayerCache>>,
    stream_channels: Vec<usize>,
    fused_input: Tensor,
}

impl Trace {
    /// Hash of every rectifier sign and pooling choice. Two parameter
    /// settings with the same pattern lie on the same linear piece.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for stream in &self.streams {
            for cache in stream {
                match cache {
                    LayerCache::Conv {
                        pre_activation: Some(z),
                        ..
                    } => {
                        for &v in z.data() {
                            (v > 0.0).hash(&mut h);
                        }
                    }
                    LayerCache::Conv { .. } => {}
                    LayerCache::Pool(idx) => idx.argmax().hash(&mut h),
                }
            }
        }
        h.finish()
    }
}

impl Msnn {
    /// All weights and biases zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let streams = spec
            .streams
            .iter()
            .map(|s| {
                let last = s.last_conv().expect("validated");
                let mut c = spec.in_channels;
                s.layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| match *l {
                        LayerSpec::Conv { kernel, out_channels } => {
                            let layer = ConvLayer::zeros(kernel, c, out_channels)?;
                            c = out_channels;
                            Ok(Layer::Conv {
                                conv: layer,
                                relu: i != last,
                            })
                        }
                        LayerSpec::Pool2 => Ok(Layer::Pool),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            streams,
            fusion: ConvLayer::zeros(1, spec.fusion_in_channels(), 1)?,
        })
    }

    /// Zero-mean Gaussian weights with standard deviation `std`, zero biases.
    pub fn random(spec: &NetworkSpec, std: f64, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in net.convs_mut() {
            conv.weight = Tensor::randn(conv.weight.shape(), std, &mut rng);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.streams
            .iter()
            .flatten()
            .filter_map(|l| match l {
                Layer::Conv { conv, .. } => Some(conv),
                Layer::Pool => None,
            })
            .chain(std::iter::once(&self.fusion))
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.streams
            .iter_mut()
            .flatten()
            .filter_map(|l| match l {
                Layer::Conv { conv, .. } => Some(conv),
                Layer::Pool => None,
            })
            .chain(std::iter::once(&mut self.fusion))
    }

    /// Parameters in declaration order: per stream, per convolution, weight
    /// then bias; the fusion weight and bias last.
    pub fn params(&self) -> Vec<&Tensor> {
        self.convs().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (s, stream) in self.streams.iter().enumerate() {
            let mut k = 0;
            for l in stream {
                if matches!(l, Layer::Conv { .. }) {
                    k += 1;
                    names.push(format!("stream{}.conv{k}.weight", s + 1));
                    names.push(format!("stream{}.conv{k}.bias", s + 1));
                }
            }
        }
        names.push("fusion.weight".into());
        names.push("fusion.bias".into());
        names
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(ConvLayer::param_count).sum()
    }

    /// Pads `(c, h, w)` with zeros on the bottom/right up to a multiple of
    /// the output stride.
    fn prepare_input(&self, image: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = image.nchw()?;
        if n != 1 || image.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "expected one (c, h, w) image, got {:?}",
                image.shape()
            )));
        }
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let min = self.spec.max_kernel();
        if h < min || w < min {
            return Err(Error::Shape(format!(
                "input {h}x{w} is smaller than the largest kernel ({min})"
            )));
        }
        let (ph, pw) = (h.next_multiple_of(OUTPUT_STRIDE), w.next_multiple_of(OUTPUT_STRIDE));
        if (ph, pw) == (h, w) {
            return Ok(image.clone());
        }
        let mut out = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for r in 0..h {
                out.data_mut()[(ch * ph + r) * pw..][..w].copy_from_slice(&image.data()[(ch * h + r) * w..][..w]);
            }
        }
        Ok(out)
    }

    /// Raw single-channel output `(1, ceil(h/4), ceil(w/4))` plus the trace
    /// for backpropagation.
    pub fn forward_trace(&self, image: &Tensor) -> Result<(Tensor, Trace)> {
        let x = self.prepare_input(image)?;
        let mut outputs = Vec::with_capacity(self.streams.len());
        let mut caches = Vec::with_capacity(self.streams.len());
        for stream in &self.streams {
            let mut h = x.clone();
            let mut cache = Vec::with_capacity(stream.len());
            for layer in stream {
                match layer {
                    Layer::Conv { conv, relu } => {
                        let z = conv2d_forward(&h, conv)?;
                        if *relu {
                            let a = relu_forward(&z);
                            cache.push(LayerCache::Conv {
                                input: std::mem::replace(&mut h, a),
                                pre_activation: Some(z),
                            });
                        } else {
                            cache.push(LayerCache::Conv {
                                input: std::mem::replace(&mut h, z),
                                pre_activation: None,
                            });
                        }
                    }
                    Layer::Pool => {
                        let (p, idx) = maxpool2_forward(&h)?;
                        h = p;
                        cache.push(LayerCache::Pool(idx));
                    }
                }
            }
            outputs.push(h);
            caches.push(cache);
        }
        let stream_channels: Vec<usize> = outputs.iter().map(|t| t.shape()[0]).collect();
        let (oh, ow) = (outputs[0].shape()[1], outputs[0].shape()[2]);
        let mut fused = Vec::with_capacity(stream_channels.iter().sum::<usize>() * oh * ow);
        for t in &outputs {
            fused.extend_from_slice(t.data());
        }
        let fused_input = Tensor::from_vec(&[stream_channels.iter().sum(), oh, ow], fused)?;
        let out = conv2d_forward(&fused_input, &self.fusion)?;
        Ok((
            out,
            Trace {
                streams: caches,
                stream_channels,
                fused_input,
            },
        ))
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(image)?.0)
    }

    /// Independent forward passes over a batch.
    pub fn forward_batch(&self, images: &[Tensor]) -> Result<Vec<Tensor>> {
        images.par_iter().map(|x| self.forward(x)).collect()
    }

    /// Parameter gradients (declaration order) given dL/d(output).
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let fg = conv2d_backward(&trace.fused_input, &self.fusion, grad_out)?;
        let (oh, ow) = (fg.input.shape()[1], fg.input.shape()[2]);
        let mut per_stream = Vec::with_capacity(self.streams.len());
        let mut offset = 0;
        for ((stream, cache), &ch) in self.streams.iter().zip(&trace.streams).zip(&trace.stream_channels) {
            let mut g = Tensor::from_vec(
                &[ch, oh, ow],
                fg.input.data()[offset * oh * ow..][..ch * oh * ow].to_vec(),
            )?;
            offset += ch;
            let mut grads = Vec::new();
            for (layer, c) in stream.iter().zip(cache).rev() {
                match (layer, c) {
                    (Layer::Conv { conv, .. }, LayerCache::Conv { input, pre_activation }) => {
                        if let Some(z) = pre_activation {
                            g = relu_backward(z, &g)?;
                        }
                        let cg = conv2d_backward(input, conv, &g)?;
                        grads.push(cg.bias);
                        grads.push(cg.weight);
                        g = cg.input;
                    }
                    (Layer::Pool, LayerCache::Pool(idx)) => g = maxpool2_backward(&g, idx)?,
                    _ => unreachable!("trace matches layer list"),
                }
            }
            grads.reverse();
            per_stream.push(grads);
        }
        let mut all: Vec<Tensor> = per_stream.into_iter().flatten().collect();
        all.push(fg.weight);
        all.push(fg.bias);
        Ok(all)
    }

    /// Count read off the output, negative cells clamped to zero.
    pub fn predict_count(&self, image: &Tensor) -> Result<f64> {
        Ok(self.forward(image)?.data().iter().map(|v| v.max(0.0)).sum())
    }

    pub fn predict_map(&self, image: &Tensor) -> Result<DensityMap> {
        let out = self.forward(image)?;
        let (h, w) = (out.shape()[1], out.shape()[2]);
        DensityMap::from_values(h, w, out.into_data().into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// `(1, h, w)` tensor with intensities scaled to [0, 1].
pub fn image_to_tensor(image: &GrayImage) -> Tensor {
    let (h, w) = image.shape();
    Tensor::from_vec(
        &[1, h, w],
        image.pixels().iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("pixel count matches shape")
}

/// Squared-error density loss over a batch, `1/(2B) * sum ||pred - gt||^2`.
pub fn loss(predictions: &[Tensor], ground_truths: &[DensityMap]) -> Result<f64> {
    if predictions.len() != ground_truths.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in predictions.iter().zip(ground_truths) {
        total += squared_error(p, g)?;
    }
    Ok(total / (2.0 * predictions.len() as f64))
}

fn check_pred_shape(p: &Tensor, g: &DensityMap) -> Result<()> {
    if p.shape() != [1, g.rows(), g.cols()] {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            p.shape(),
            g.shape()
        )));
    }
    Ok(())
}

fn squared_error(p: &Tensor, g: &DensityMap) -> Result<f64> {
    check_pred_shape(p, g)?;
    Ok(p.data().iter().zip(g.values()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// One training example: the network input, the quarter-scale target and
/// the annotated head count.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub target: DensityMap,
    pub count: f64,
}

impl Sample {
    /// Downscales a full-resolution ground-truth map to the output grid.
    pub fn new(image: Tensor, full_map: &DensityMap, count: f64) -> Result<Self> {
        let (_, _, h, w) = image.nchw()?;
        if (h, w) != full_map.shape() {
            return Err(Error::Shape(format!("image {h}x{w} vs map {:?}", full_map.shape())));
        }
        let (target, _) = downscale_preserving_count(full_map, OUTPUT_STRIDE)?;
        Ok(Self { image, target, count })
    }
}

/// Batch loss, summed parameter gradients and predictions. Samples run in
/// parallel; gradients are reduced in index order.
pub fn loss_and_grads(net: &Msnn, batch: &[&Sample]) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    let b = batch.len() as f64;
    let per_sample: Vec<(f64, Vec<Tensor>, Tensor)> = batch
        .par_iter()
        .map(|s| {
            let (out, trace) = net.forward_trace(&s.image)?;
            let se = squared_error(&out, &s.target)?;
            let g: Vec<f64> = out
                .data()
                .iter()
                .zip(s.target.values())
                .map(|(p, t)| (p - t) / b)
                .collect();
            let grads = net.backward(&trace, &Tensor::from_vec(out.shape(), g)?)?;
            Ok((se, grads, out))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut total: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut preds = Vec::with_capacity(per_sample.len());
    for (se, grads, out) in per_sample {
        loss += se;
        for (acc, g) in total.iter_mut().zip(&grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        preds.push(out);
    }
    Ok((loss / (2.0 * b), total, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: crate::tensor::DEFAULT_LEARNING_RATE,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_mae: f64,
    pub steps: usize,
}

/// Joint end-to-end training with Adam over seed-shuffled mini-batches.
pub fn train(net: &mut Msnn, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config(format!("batch size and epochs must be >= 1: {cfg:?}")));
    }
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(&sizes, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sq_sum, mut abs_sum, mut seen) = (0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                if seen > 0 {
                    log.push(epoch_entry(epoch, sq_sum, abs_sum, seen, steps));
                }
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (batch_loss, grads, preds) = loss_and_grads(net, &batch)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            sq_sum += batch_loss * batch.len() as f64;
            for (p, s) in preds.iter().zip(&batch) {
                let count: f64 = p.data().iter().map(|v| v.max(0.0)).sum();
                abs_sum += (count - s.count).abs();
            }
            seen += batch.len();
            adam_step(&mut net.params_mut(), &grads, &mut adam)?;
            steps += 1;
        }
        log.push(epoch_entry(epoch, sq_sum, abs_sum, seen, steps));
    }
    Ok(log)
}

fn epoch_entry(epoch: usize, sq_sum: f64, abs_sum: f64, seen: usize, steps: usize) -> EpochLog {
    EpochLog {
        epoch,
        mean_loss: sq_sum / seen as f64,
        train_mae: abs_sum / seen as f64,
        steps,
    }
}

pub fn predict_count(net: &Msnn, image: &Tensor) -> Result<f64> {
    net.predict_count(image)
}

/// Integral of a ground-truth map, for comparison with predictions.
pub fn target_count(sample: &Sample) -> f64 {
    count_from_map(&sample.target)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSNW";
pub const CHECKPOINT_VERSION: u8 = 1;

/// `MSNW`, version byte, u32 LE descriptor length, JSON network descriptor,
/// then every parameter as f64 LE in declaration order.
pub fn encode_checkpoint(net: &Msnn) -> Vec<u8> {
    let desc = net.spec.to_json().into_bytes();
    let mut out = Vec::with_capacity(9 + desc.len() + 8 * net.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn ckpt_err(message: impl Into<String>) -> Error {
    Error::Format {
        format: "MSNW",
        message: message.into(),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Msnn> {
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ckpt_err("missing MSNW header"));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(ckpt_err(format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let desc = bytes.get(9..9 + len).ok_or_else(|| ckpt_err("truncated descriptor"))?;
    let desc = std::str::from_utf8(desc).map_err(|e| ckpt_err(e.to_string()))?;
    let spec = NetworkSpec::from_json(desc)?;
    let mut net = Msnn::zeros(&spec)?;
    let body = &bytes[9 + len..];
    if body.len() != 8 * net.param_count() {
        return Err(ckpt_err(format!(
            "expected {} parameter bytes, found {}",
            8 * net.param_count(),
            body.len()
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(net)
}
