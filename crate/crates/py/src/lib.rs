//! Python bindings: images and maps, the formation model, metrics, dataset
//! generation and inference with trained checkpoints.

use std::path::PathBuf;

use derain::pipeline;
use derain::synth::{make_dataset, Backgrounds, DatasetKind, GeneratorParams};
use derain::{image, metrics, rain_model, AtmosphereLight, Error};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn atmosphere(rgb: [f64; 3]) -> PyResult<AtmosphereLight> {
    AtmosphereLight::new(rgb).map_err(to_py)
}

/// RGB image with values in [0, 1], stored row-major as `r, g, b` triples.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage(derain::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        derain::Image::new(height, width, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self(derain::Image::filled(height, width, rgb))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        image::read_rgb(path).map(Self).map_err(to_py)
    }

    /// Writes an 8-bit PNG.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        image::write_rgb8(path, &self.0).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    fn pixel(&self, row: usize, col: usize) -> PyResult<[f64; 3]> {
        if row >= self.0.height() || col >= self.0.width() {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.0.pixel(row, col))
    }

    fn to_list(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.height(), self.0.width())
    }
}

/// Single-channel map such as a transmission map.
#[pyclass(name = "Field", from_py_object)]
#[derive(Clone)]
struct PyField(derain::Field);

#[pymethods]
impl PyField {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        derain::Field::new(height, width, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, value: f64) -> Self {
        Self(derain::Field::filled(height, width, value))
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    fn to_list(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Field({}x{})", self.0.height(), self.0.width())
    }
}

/// Background, maps and atmosphere light estimated for one image.
#[pyclass(name = "Restoration", skip_from_py_object)]
struct PyRestoration(pipeline::Restoration);

#[pymethods]
impl PyRestoration {
    #[getter]
    fn background(&self) -> PyImage {
        PyImage(self.0.background.clone())
    }

    #[getter]
    fn t_streak(&self) -> PyField {
        PyField(self.0.t_streak.clone())
    }

    #[getter]
    fn t_vapor(&self) -> PyField {
        PyField(self.0.t_vapor.clone())
    }

    #[getter]
    fn atmosphere(&self) -> [f64; 3] {
        self.0.atmosphere.rgb()
    }
}

/// Trained networks loaded from a checkpoint directory.
#[pyclass(name = "Model", skip_from_py_object)]
struct PyModel(pipeline::Model);

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (dir, eps=rain_model::DEFAULT_EPS))]
    fn load(dir: PathBuf, eps: f64) -> PyResult<Self> {
        pipeline::Model::load(dir, eps).map(Self).map_err(to_py)
    }

    #[getter]
    fn has_vnet(&self) -> bool {
        self.0.vnet.is_some()
    }

    #[getter]
    fn has_anet(&self) -> bool {
        self.0.anet.is_some()
    }

    fn derain(&self, rainy: &PyImage) -> PyResult<PyRestoration> {
        pipeline::derain(&self.0, &rainy.0, None).map(PyRestoration).map_err(to_py)
    }
}

/// `I = (Ts + Tv) J + (1 - Ts - Tv) A`.
#[pyfunction]
fn compose(background: &PyImage, t_streak: &PyField, t_vapor: &PyField, atmosphere_rgb: [f64; 3]) -> PyResult<PyImage> {
    rain_model::compose(&background.0, &t_streak.0, &t_vapor.0, atmosphere(atmosphere_rgb)?)
        .map(PyImage)
        .map_err(to_py)
}

/// Inverse of `compose` with the transmission floored at `eps`.
#[pyfunction]
#[pyo3(signature = (rainy, t_streak, t_vapor, atmosphere_rgb, eps=rain_model::DEFAULT_EPS))]
fn recover(rainy: &PyImage, t_streak: &PyField, t_vapor: &PyField, atmosphere_rgb: [f64; 3], eps: f64) -> PyResult<PyImage> {
    rain_model::recover_background(&rainy.0, &t_streak.0, &t_vapor.0, atmosphere(atmosphere_rgb)?, eps)
        .map(PyImage)
        .map_err(to_py)
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0).map_err(to_py)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.0, &b.0).map_err(to_py)
}

/// Mean PSNR, mean SSIM and per-file rows over PNGs matched by name.
#[pyfunction]
fn evaluate_dirs(pred_dir: PathBuf, gt_dir: PathBuf) -> PyResult<(f64, f64, Vec<(String, f64, f64)>)> {
    let r = metrics::evaluate_dirs(pred_dir, gt_dir).map_err(to_py)?;
    let rows = r.rows.into_iter().map(|row| (row.name, row.psnr, row.ssim)).collect();
    Ok((r.mean_psnr, r.mean_ssim, rows))
}

/// Writes a `blend` or `scenes` dataset with default generator settings and
/// returns the number of entries.
#[pyfunction]
#[pyo3(signature = (kind, count, size, out_dir, seed=0, clean_dir=None))]
fn make_synthetic_dataset(kind: &str, count: usize, size: usize, out_dir: PathBuf, seed: u64, clean_dir: Option<PathBuf>) -> PyResult<usize> {
    let kind = match kind {
        "blend" => DatasetKind::Blend,
        "scenes" => DatasetKind::Scenes,
        other => return Err(PyValueError::new_err(format!("unknown dataset kind `{other}`"))),
    };
    let mut params = GeneratorParams::new(kind, size);
    let bg = match clean_dir {
        Some(dir) => {
            params.clean_dir = Some(dir.to_string_lossy().into_owned());
            Backgrounds::from_dir(dir).map_err(to_py)?
        }
        None => Backgrounds::Procedural,
    };
    let manifest = make_dataset(&bg, &params, count, out_dir, seed).map_err(to_py)?;
    Ok(manifest.entries.len())
}

#[pymodule]
fn derain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyRestoration>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic_dataset, m)?)?;
    Ok(())
}
