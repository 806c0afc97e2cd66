//! Density maps built from head points: impulse maps, truncated Gaussian
//! splats, fixed and k-NN adaptive kernels, and count-preserving downscaling.

use serde::{Deserialize, Serialize};

use crate::annotations::{ImageAnnotation, Point2D};
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 4.0;
pub const DEFAULT_TRUNCATION: f64 = 3.0;
pub const DEFAULT_MIN_SIGMA: f64 = 0.5;

/// Dense row-major grid of persons-per-pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} map", values.len())));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Sum of all cells: the person count the map encodes.
    pub fn count(&self) -> f64 {
        count_from_map(self)
    }
}

/// Separable, truncated Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma_row: f64,
    pub sigma_col: f64,
    /// Half-width of the evaluation window in units of sigma.
    pub truncation: f64,
}

impl KernelSpec {
    pub fn isotropic(sigma: f64) -> Self {
        Self {
            sigma_row: sigma,
            sigma_col: sigma,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn anisotropic(sigma_row: f64, sigma_col: f64) -> Self {
        Self {
            sigma_row,
            sigma_col,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn with_truncation(mut self, truncation: f64) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.sigma_row) && ok(self.sigma_col) && ok(self.truncation) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid kernel {self:?}")))
        }
    }
}

/// Parameters of the k-nearest-neighbour adaptive kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub beta: f64,
    pub fallback_sigma: f64,
    pub min_sigma: f64,
    pub truncation: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 3,
            beta: 0.3,
            fallback_sigma: DEFAULT_SIGMA,
            min_sigma: DEFAULT_MIN_SIGMA,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.k >= 1 && pos(self.beta) && pos(self.fallback_sigma) && pos(self.min_sigma) && pos(self.truncation) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid k-NN configuration {self:?}")))
        }
    }
}

/// Round half toward the smaller index, clamped to the grid.
fn pixel_index(coord: f64, extent: usize) -> usize {
    let idx = (coord - 0.5).ceil().max(0.0) as usize;
    idx.min(extent - 1)
}

/// Grid with one unit impulse per head at its nearest pixel.
pub fn impulse_map(heads: &[Point2D], shape: (usize, usize)) -> Result<DensityMap> {
    let mut map = DensityMap::zeros(shape.0, shape.1);
    for head in heads {
        head.check_inside(shape)?;
        let r = pixel_index(head.row, shape.0);
        let c = pixel_index(head.col, shape.1);
        map.values[r * shape.1 + c] += 1.0;
    }
    Ok(map)
}

/// 1-D Gaussian weights over the clipped window around `center`.
/// Returns the first index and the weights.
fn axis_weights(center: f64, sigma: f64, truncation: f64, extent: usize) -> (usize, Vec<f64>) {
    let radius = truncation * sigma;
    let nearest = pixel_index(center, extent);
    let lo = ((center - radius).ceil().max(0.0) as usize).min(nearest);
    let hi = ((center + radius).floor().min((extent - 1) as f64) as usize).max(nearest);
    let denom = 2.0 * sigma * sigma;
    let weights = (lo..=hi)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / denom).exp()
        })
        .collect();
    (lo, weights)
}

/// Adds one person's mass to `map`: a separable Gaussian evaluated at pixel
/// centres within `truncation` sigmas of `center`, clipped to the image and
/// renormalised so that exactly one unit is added.
pub fn splat_gaussian(map: &mut DensityMap, center: Point2D, kernel: &KernelSpec) -> Result<()> {
    kernel.validate()?;
    center.check_inside(map.shape())?;
    let (r0, wr) = axis_weights(center.row, kernel.sigma_row, kernel.truncation, map.rows);
    let (c0, wc) = axis_weights(center.col, kernel.sigma_col, kernel.truncation, map.cols);
    let total: f64 = wr.iter().sum::<f64>() * wc.iter().sum::<f64>();
    let cols = map.cols;
    for (dr, &a) in wr.iter().enumerate() {
        let scale = a / total;
        let row = &mut map.values[(r0 + dr) * cols + c0..][..wc.len()];
        for (v, &b) in row.iter_mut().zip(&wc) {
            *v += scale * b;
        }
    }
    Ok(())
}

/// One isotropic splat of width `sigma` per head.
pub fn gen_fixed(ann: &ImageAnnotation, sigma: f64) -> Result<DensityMap> {
    gen_fixed_with(ann, KernelSpec::isotropic(sigma))
}

pub fn gen_fixed_with(ann: &ImageAnnotation, kernel: KernelSpec) -> Result<DensityMap> {
    kernel.validate()?;
    let mut map = DensityMap::zeros(ann.shape.0, ann.shape.1);
    for &head in &ann.heads {
        splat_gaussian(&mut map, head, &kernel)?;
    }
    Ok(map)
}

/// Mean Euclidean distance from head `i` to its `min(k, P-1)` nearest other
/// heads, or `None` when it has no neighbours.
pub fn knn_mean_distance(heads: &[Point2D], i: usize, k: usize) -> Result<Option<f64>> {
    let me = heads.get(i).ok_or(Error::IndexOutOfRange {
        index: i,
        len: heads.len(),
    })?;
    let mut dists: Vec<f64> = heads
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, h)| me.distance(h))
        .collect();
    let k = k.min(dists.len());
    if k == 0 {
        return Ok(None);
    }
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    Ok(Some(dists[..k].iter().sum::<f64>() / k as f64))
}

/// Per-head sigma used by [`gen_knn`].
pub fn knn_sigmas(heads: &[Point2D], cfg: &KnnConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    (0..heads.len())
        .map(|i| {
            let sigma = match knn_mean_distance(heads, i, cfg.k)? {
                Some(d) => cfg.beta * d,
                None => cfg.fallback_sigma,
            };
            Ok(sigma.max(cfg.min_sigma))
        })
        .collect()
}

/// Adaptive kernel: sigma_i = beta * mean distance to the k nearest heads.
pub fn gen_knn(ann: &ImageAnnotation, cfg: &KnnConfig) -> Result<DensityMap> {
    let sigmas = knn_sigmas(&ann.heads, cfg)?;
    let mut map = DensityMap::zeros(ann.shape.0, ann.shape.1);
    for (&head, &sigma) in ann.heads.iter().zip(&sigmas) {
        splat_gaussian(
            &mut map,
            head,
            &KernelSpec::isotropic(sigma).with_truncation(cfg.truncation),
        )?;
    }
    Ok(map)
}

pub fn count_from_map(map: &DensityMap) -> f64 {
    map.values.iter().sum()
}

/// Zero rows/columns appended to reach a multiple of the factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub rows: usize,
    pub cols: usize,
}

/// Sum-pools `map` over `factor x factor` blocks, zero-padding the bottom and
/// right edges up to a multiple of `factor` first.
pub fn downscale_preserving_count(map: &DensityMap, factor: usize) -> Result<(DensityMap, Padding)> {
    if factor == 0 {
        return Err(Error::Config("downscale factor must be >= 1".into()));
    }
    let out_rows = map.rows.div_ceil(factor);
    let out_cols = map.cols.div_ceil(factor);
    let padding = Padding {
        rows: out_rows * factor - map.rows,
        cols: out_cols * factor - map.cols,
    };
    let mut out = DensityMap::zeros(out_rows, out_cols);
    for r in 0..map.rows {
        let src = &map.values[r * map.cols..][..map.cols];
        let dst = &mut out.values[(r / factor) * out_cols..][..out_cols];
        for (c, &v) in src.iter().enumerate() {
            dst[c / factor] += v;
        }
    }
    Ok((out, padding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ann(shape: (usize, usize), heads: &[(f64, f64)]) -> ImageAnnotation {
        ImageAnnotation::new("t", shape, heads.iter().map(|&(r, c)| Point2D::new(r, c)).collect()).unwrap()
    }

    #[test]
    fn impulse_examples() {
        let m = impulse_map(&[], (5, 5)).unwrap();
        assert_eq!(m.count(), 0.0);

        let m = impulse_map(&[Point2D::new(2.0, 3.0)], (5, 5)).unwrap();
        assert_eq!(m.get(2, 3), 1.0);
        assert_eq!(m.count(), 1.0);

        let m = impulse_map(&[Point2D::new(2.0, 3.0); 2], (5, 5)).unwrap();
        assert_eq!(m.get(2, 3), 2.0);
    }

    #[test]
    fn impulse_rounding_ties_go_down() {
        let m = impulse_map(&[Point2D::new(2.5, 3.5), Point2D::new(0.6, 4.9)], (5, 5)).unwrap();
        assert_eq!(m.get(2, 3), 1.0);
        assert_eq!(m.get(1, 4), 1.0);
    }

    #[test]
    fn impulse_rejects_outside() {
        assert!(impulse_map(&[Point2D::new(5.0, 0.0)], (5, 5)).is_err());
        assert!(impulse_map(&[Point2D::new(-0.1, 0.0)], (5, 5)).is_err());
    }

    #[test]
    fn splat_peak_matches_table() {
        // 7x7 table of exp(-(r^2 + c^2) / 2), normalised.
        let mut table_sum = 0.0;
        for r in -3i32..=3 {
            for c in -3i32..=3 {
                table_sum += (-((r * r + c * c) as f64) / 2.0).exp();
            }
        }
        let mut m = DensityMap::zeros(101, 101);
        splat_gaussian(&mut m, Point2D::new(50.0, 50.0), &KernelSpec::isotropic(1.0)).unwrap();
        assert_abs_diff_eq!(m.get(50, 50), 1.0 / table_sum, epsilon = 1e-15);
        assert_abs_diff_eq!(m.get(50, 50), 0.1592, epsilon = 5e-5);
        assert_eq!(m.get(50, 54), 0.0);
        assert!(m.get(50, 53) > 0.0);
    }

    #[test]
    fn corner_splat_is_renormalised() {
        let mut m = DensityMap::zeros(20, 20);
        splat_gaussian(&mut m, Point2D::new(0.0, 19.0), &KernelSpec::isotropic(3.0)).unwrap();
        assert_abs_diff_eq!(m.count(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_sigma_keeps_nearest_pixel() {
        let mut m = DensityMap::zeros(5, 5);
        let k = KernelSpec::isotropic(0.1).with_truncation(0.5);
        splat_gaussian(&mut m, Point2D::new(2.5, 2.5), &k).unwrap();
        assert_abs_diff_eq!(m.get(2, 2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.count(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn splat_rejects_outside_centre() {
        let mut m = DensityMap::zeros(5, 5);
        assert!(splat_gaussian(&mut m, Point2D::new(0.0, 5.0), &KernelSpec::isotropic(1.0)).is_err());
    }

    #[test]
    fn fixed_examples() {
        assert_eq!(gen_fixed(&ann((10, 10), &[]), DEFAULT_SIGMA).unwrap().max(), 0.0);
        let m = gen_fixed(&ann((10, 10), &[(4.0, 4.0)]), DEFAULT_SIGMA).unwrap();
        assert_abs_diff_eq!(m.count(), 1.0, epsilon = 1e-12);
        assert!(gen_fixed(&ann((10, 10), &[(4.0, 4.0)]), 0.0).is_err());
    }

    #[test]
    fn knn_distance_examples() {
        let heads = [Point2D::new(0.0, 0.0), Point2D::new(0.0, 2.0), Point2D::new(0.0, 4.0)];
        assert_eq!(knn_mean_distance(&heads, 1, 2).unwrap(), Some(2.0));
        // k larger than P - 1: average over all others, (2 + 4) / 2 from the end.
        assert_eq!(knn_mean_distance(&heads, 0, 10).unwrap(), Some(3.0));
        assert_eq!(knn_mean_distance(&heads[..1], 0, 3).unwrap(), None);
        assert!(knn_mean_distance(&heads, 3, 1).is_err());
    }

    #[test]
    fn knn_sigma_examples() {
        let heads = [Point2D::new(0.0, 0.0), Point2D::new(0.0, 2.0), Point2D::new(0.0, 4.0)];
        let cfg = KnnConfig {
            k: 2,
            ..KnnConfig::default()
        };
        let s = knn_sigmas(&heads, &cfg).unwrap();
        assert_abs_diff_eq!(s[1], 0.6, epsilon = 1e-15);

        let coincident = [Point2D::new(3.0, 3.0); 4];
        let s = knn_sigmas(&coincident, &KnnConfig::default()).unwrap();
        assert!(s.iter().all(|&v| v == DEFAULT_MIN_SIGMA));
        let m = gen_knn(&ann((8, 8), &[(3.0, 3.0); 4]), &KnnConfig::default()).unwrap();
        assert!(m.values().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(m.count(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn knn_single_head_equals_fixed_fallback() {
        let a = ann((30, 30), &[(11.3, 17.8)]);
        let cfg = KnnConfig::default();
        assert_eq!(gen_knn(&a, &cfg).unwrap(), gen_fixed(&a, cfg.fallback_sigma).unwrap());
    }

    #[test]
    fn downscale_examples() {
        let m = DensityMap::from_values(4, 4, vec![0.25; 16]).unwrap();
        let (d, pad) = downscale_preserving_count(&m, 4).unwrap();
        assert_eq!(d.shape(), (1, 1));
        assert_eq!(d.get(0, 0), 4.0);
        assert_eq!(pad, Padding::default());

        let (same, _) = downscale_preserving_count(&m, 1).unwrap();
        assert_eq!(same, m);
        assert!(downscale_preserving_count(&m, 0).is_err());

        let odd = DensityMap::from_values(5, 3, (0..15).map(f64::from).collect()).unwrap();
        let (d, pad) = downscale_preserving_count(&odd, 2).unwrap();
        assert_eq!(d.shape(), (3, 2));
        assert_eq!(pad, Padding { rows: 1, cols: 1 });
        assert_eq!(d.count(), odd.count());
    }

    fn arb_map() -> impl Strategy<Value = DensityMap> {
        (1usize..24, 1usize..24).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0..10.0f64, r * c).prop_map(move |v| DensityMap::from_values(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn downscale_composes(map in arb_map(), a in 1usize..4, b in 1usize..4) {
            let (once, _) = downscale_preserving_count(&map, a * b).unwrap();
            let (first, _) = downscale_preserving_count(&map, a).unwrap();
            let (twice, _) = downscale_preserving_count(&first, b).unwrap();
            prop_assert_eq!(once.shape(), twice.shape());
            for (x, y) in once.values().iter().zip(twice.values()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((once.count() - map.count()).abs() <= 1e-9);
        }

        #[test]
        fn interior_splats_are_translation_equivariant(
            r in 10.0..20.0f64, c in 10.0..30.0f64, sigma in 0.5..3.0f64,
        ) {
            let k = KernelSpec::isotropic(sigma);
            let mut a = DensityMap::zeros(40, 40);
            let mut b = DensityMap::zeros(40, 40);
            splat_gaussian(&mut a, Point2D::new(r, c), &k).unwrap();
            splat_gaussian(&mut b, Point2D::new(r + 1.0, c), &k).unwrap();
            for row in 0..39 {
                for col in 0..40 {
                    prop_assert!((a.get(row, col) - b.get(row + 1, col)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn isotropic_splat_is_symmetric(r in 10usize..20, c in 10usize..20, sigma in 0.5..3.0f64) {
            let mut m = DensityMap::zeros(30, 30);
            splat_gaussian(&mut m, Point2D::new(r as f64, c as f64), &KernelSpec::isotropic(sigma)).unwrap();
            let w = (3.0 * sigma).floor() as usize;
            for dr in 0..=2 * w {
                for dc in 0..=2 * w {
                    let a = m.get(r - w + dr, c - w + dc);
                    let b = m.get(r - w + dc, c - w + dr);
                    prop_assert!((a - b).abs() <= 1e-15);
                }
            }
        }

        #[test]
        fn generated_maps_conserve_count(
            heads in proptest::collection::vec((0.0..50.0f64, 0.0..40.0f64), 0..60),
            sigma in 0.5..8.0f64,
        ) {
            let a = ann((50, 40), &heads);
            let p = heads.len() as f64;
            let tol = 1e-6 * p.max(1.0);
            let f = gen_fixed(&a, sigma).unwrap();
            prop_assert!((f.count() - p).abs() <= tol);
            prop_assert!(f.min() >= 0.0);
            let k = gen_knn(&a, &KnnConfig::default()).unwrap();
            prop_assert!((k.count() - p).abs() <= tol);
            prop_assert!(k.min() >= 0.0);
        }
    }
}
