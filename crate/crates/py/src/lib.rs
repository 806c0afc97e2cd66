use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use crowdmap::augment::{slide_patches as core_slide_patches, PatchSpec};
use crowdmap::formats::{decode_dmap, encode_dmap, encode_pgm, render_map};
use crowdmap::metrics::EvalRecord;
use crowdmap::msnn::{decode_checkpoint, encode_checkpoint, preset_with};
use crowdmap::{BBox, DetectionSet, Error, FaceGtConfig, KnnConfig, Point2D, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for crowdmap::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// `(cy, cx, h, w, crowded)` for one person.
type PersonTuple = (f64, f64, f64, f64, bool);

#[pyclass(name = "DensityMap", module = "crowdmap", from_py_object)]
#[derive(Clone)]
struct PyDensityMap(crowdmap::DensityMap);

#[pymethods]
impl PyDensityMap {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("rows must have equal length"));
        }
        let n = rows.len();
        Ok(Self(crowdmap::DensityMap::from_values(n, cols, rows.concat()).py()?))
    }

    #[staticmethod]
    fn from_dmap(data: &[u8]) -> PyResult<Self> {
        Ok(Self(decode_dmap(data).py()?))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    fn count(&self) -> f64 {
        self.0.count()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        let (rows, cols) = self.0.shape();
        if row >= rows || col >= cols {
            return Err(PyValueError::new_err(format!("({row}, {col}) outside {rows}x{cols}")));
        }
        Ok(self.0.get(row, col))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.0
            .values()
            .chunks(self.0.cols().max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn to_dmap<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_dmap(&self.0))
    }

    fn to_pgm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_pgm(&render_map(&self.0)))
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.0.shape();
        format!("DensityMap({r}x{c}, count={:.6})", self.0.count())
    }
}

#[pyclass(name = "ImageAnnotation", module = "crowdmap", from_py_object)]
#[derive(Clone)]
struct PyAnnotation(crowdmap::ImageAnnotation);

#[pymethods]
impl PyAnnotation {
    #[new]
    fn new(image_id: String, shape: (usize, usize), heads: Vec<(f64, f64)>) -> PyResult<Self> {
        let heads = heads.into_iter().map(|(r, c)| Point2D::new(r, c)).collect();
        Ok(Self(crowdmap::ImageAnnotation::new(image_id, shape, heads).py()?))
    }

    #[getter]
    fn image_id(&self) -> &str {
        &self.0.image_id
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape
    }

    #[getter]
    fn heads(&self) -> Vec<(f64, f64)> {
        self.0.heads.iter().map(|p| (p.row, p.col)).collect()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn __repr__(&self) -> String {
        format!(
            "ImageAnnotation({:?}, {:?}, {} heads)",
            self.0.image_id,
            self.0.shape,
            self.0.count()
        )
    }
}

#[pyfunction]
fn parse_annotations(path: &str) -> PyResult<Vec<PyAnnotation>> {
    Ok(crowdmap::annotations::parse_annotations(path)
        .py()?
        .into_iter()
        .map(PyAnnotation)
        .collect())
}

#[pyfunction]
#[pyo3(signature = (ann, sigma = 4.0))]
fn gen_fixed(ann: &PyAnnotation, sigma: f64) -> PyResult<PyDensityMap> {
    Ok(PyDensityMap(crowdmap::density::gen_fixed(&ann.0, sigma).py()?))
}

#[pyfunction]
#[pyo3(signature = (ann, k = 3, beta = 0.3, fallback_sigma = 4.0, min_sigma = 0.5))]
fn gen_knn(ann: &PyAnnotation, k: usize, beta: f64, fallback_sigma: f64, min_sigma: f64) -> PyResult<PyDensityMap> {
    let cfg = KnnConfig {
        k,
        beta,
        fallback_sigma,
        min_sigma,
        ..KnnConfig::default()
    };
    Ok(PyDensityMap(crowdmap::density::gen_knn(&ann.0, &cfg).py()?))
}

/// Boxes are `(cy, cx, h, w)`. Returns the map and one
/// `(cy, cx, h, w, crowded)` tuple per person.
#[pyfunction]
#[pyo3(signature = (ann, boxes, t_overlaps = 3, crowded_sigma = 4.0, sigma_scale = 1.0, eps = 1e-6, overlap_against = "regions"))]
#[allow(clippy::too_many_arguments)]
fn gen_face(
    ann: &PyAnnotation,
    boxes: Vec<(f64, f64, f64, f64)>,
    t_overlaps: usize,
    crowded_sigma: f64,
    sigma_scale: f64,
    eps: f64,
    overlap_against: &str,
) -> PyResult<(PyDensityMap, Vec<PersonTuple>)> {
    let boxes = boxes
        .into_iter()
        .map(|(cy, cx, h, w)| BBox::new(Point2D::new(cy, cx), h, w))
        .collect::<crowdmap::Result<Vec<_>>>()
        .py()?;
    let dets = DetectionSet {
        image_id: ann.0.image_id.clone(),
        boxes,
    };
    let cfg = FaceGtConfig {
        t_overlaps,
        crowded_sigma,
        sigma_scale,
        distance_epsilon: eps,
        overlap_against: overlap_against.parse().py()?,
        ..FaceGtConfig::default()
    };
    let gt = crowdmap::hybrid::gen_face(&ann.0, &dets, &cfg).py()?;
    let persons = gt
        .boxes
        .iter()
        .map(|p| {
            (
                p.bbox.center.row,
                p.bbox.center.col,
                p.bbox.height,
                p.bbox.width,
                p.crowded,
            )
        })
        .collect();
    Ok((PyDensityMap(gt.map), persons))
}

#[pyfunction]
#[pyo3(signature = (shape, window = 256, stride = 70))]
fn slide_patches(shape: (usize, usize), window: usize, stride: usize) -> PyResult<Vec<(usize, usize)>> {
    Ok(core_slide_patches(shape, &PatchSpec { window, stride }).py()?.origins)
}

fn records(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<Vec<EvalRecord>> {
    if y_true.len() != y_pred.len() {
        return Err(PyValueError::new_err("y_true and y_pred differ in length"));
    }
    Ok(y_true
        .into_iter()
        .zip(y_pred)
        .enumerate()
        .map(|(i, (t, p))| EvalRecord::new(i.to_string(), t, p))
        .collect())
}

#[pyfunction]
fn mae(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    crowdmap::metrics::mae(&records(y_true, y_pred)?).py()
}

#[pyfunction]
fn rmse(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    crowdmap::metrics::rmse(&records(y_true, y_pred)?).py()
}

#[pyclass(name = "Msnn", module = "crowdmap")]
struct PyMsnn(crowdmap::Msnn);

fn image_tensor(image: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let (h, w) = (image.len(), image.first().map_or(0, Vec::len));
    if image.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows must have equal length"));
    }
    Tensor::from_vec(&[1, h, w], image.concat()).py()
}

#[pymethods]
impl PyMsnn {
    /// Preset network with `streams` streams and random weights.
    #[staticmethod]
    #[pyo3(signature = (streams, shrink = 1, seed = 0, init_std = 0.01, msnn4_final_conv = false))]
    fn preset(streams: usize, shrink: usize, seed: u64, init_std: f64, msnn4_final_conv: bool) -> PyResult<Self> {
        let mut spec = preset_with(streams, msnn4_final_conv).py()?;
        if shrink > 1 {
            spec = spec.shrink(shrink);
        }
        Ok(Self(crowdmap::Msnn::random(&spec, init_std, seed).py()?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(Self(decode_checkpoint(&bytes).py()?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, encode_checkpoint(&self.0)).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn fusion_in_channels(&self) -> usize {
        self.0.spec().fusion_in_channels()
    }

    fn spec_json(&self) -> String {
        self.0.spec().to_json()
    }

    /// Density map for a single-channel image given as rows of floats.
    fn forward(&self, py: Python<'_>, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = image_tensor(image)?;
        let out = py.detach(|| self.0.forward(&x)).py()?;
        let w = out.shape()[2].max(1);
        Ok(out.data().chunks(w).map(<[f64]>::to_vec).collect())
    }

    fn predict_count(&self, py: Python<'_>, image: Vec<Vec<f64>>) -> PyResult<f64> {
        let x = image_tensor(image)?;
        py.detach(|| self.0.predict_count(&x)).py()
    }
}

#[pymodule]
#[pyo3(name = "crowdmap")]
fn crowdmap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensityMap>()?;
    m.add_class::<PyAnnotation>()?;
    m.add_class::<PyMsnn>()?;
    m.add_function(wrap_pyfunction!(parse_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(gen_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(gen_knn, m)?)?;
    m.add_function(wrap_pyfunction!(gen_face, m)?)?;
    m.add_function(wrap_pyfunction!(slide_patches, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    Ok(())
}
