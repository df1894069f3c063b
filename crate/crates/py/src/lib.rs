//! Python bindings: the physics, the metrics and the five pipeline commands,
//! operating on paths and plain lists so no array library is required.

use std::path::PathBuf;

use ndarray::Array3;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dewater_core::commands;
use dewater_core::config::RunConfig;
use dewater_core::dataset::PipelineOptions;
use dewater_core::image::{DepthMap, ImageTensor, VeilingLightField};
use dewater_core::imageio;
use dewater_core::metrics;
use dewater_core::train::Trainer;
use dewater_core::uifm;

fn pyerr(e: dewater_core::Error) -> PyErr {
    match &e {
        dewater_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// An RGB image with float channels in `[0, 1]`.
#[pyclass(frozen)]
struct Image {
    inner: ImageTensor,
}

#[pymethods]
impl Image {
    /// Decode a PNG or JPEG file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: imageio::load_image(&path).map_err(pyerr)?,
        })
    }

    /// Build an image from nested `rows[y][x] == [r, g, b]` lists.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        let mut data = Array3::zeros((h, w, 3));
        for (y, row) in rows.iter().enumerate() {
            if row.len() != w {
                return Err(PyValueError::new_err(format!(
                    "row {y} has {} pixels, expected {w}",
                    row.len()
                )));
            }
            for (x, px) in row.iter().enumerate() {
                if px.len() != 3 {
                    return Err(PyValueError::new_err(format!(
                        "pixel ({y}, {x}) has {} channels, expected 3",
                        px.len()
                    )));
                }
                for c in 0..3 {
                    data[[y, x, c]] = px[c];
                }
            }
        }
        Ok(Self {
            inner: ImageTensor::new(data).map_err(pyerr)?,
        })
    }

    /// Encode as PNG.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        imageio::save_png(&path, &self.inner).map_err(pyerr)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn pixel(&self, y: usize, x: usize) -> PyResult<(f64, f64, f64)> {
        if y >= self.inner.height() || x >= self.inner.width() {
            return Err(PyValueError::new_err(format!(
                "pixel ({y}, {x}) outside {}x{}",
                self.inner.height(),
                self.inner.width()
            )));
        }
        let d = self.inner.data();
        Ok((d[[y, x, 0]], d[[y, x, 1]], d[[y, x, 2]]))
    }

    fn to_rows(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.inner.data();
        (0..self.inner.height())
            .map(|y| {
                (0..self.inner.width())
                    .map(|x| (0..3).map(|c| d[[y, x, c]]).collect())
                    .collect()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

// --- physics ---------------------------------------------------------------

/// Degrade a clean image through water of constant `depth` with attenuation
/// `beta` and uniform `veiling` light.
#[pyfunction]
fn compose_underwater(
    clean: &Image,
    beta: (f64, f64, f64),
    depth: f64,
    veiling: (f64, f64, f64),
) -> PyResult<Image> {
    let (h, w) = (clean.inner.height(), clean.inner.width());
    let depth = DepthMap::constant(h, w, depth).map_err(pyerr)?;
    let (t, _) =
        uifm::transmission_from_depth(&depth, [beta.0, beta.1, beta.2]).map_err(pyerr)?;
    let a = VeilingLightField::uniform(h, w, [veiling.0, veiling.1, veiling.2]).map_err(pyerr)?;
    let (img, _) = uifm::compose_underwater(&clean.inner, &t, &a).map_err(pyerr)?;
    Ok(Image { inner: img })
}

/// Radiance reaching the camera from one point: attenuated signal plus the
/// scattered ambient buildup along the path.
#[pyfunction]
#[pyo3(signature = (inherent, ambient, alpha, k, range, theta=0.0))]
fn duntley_radiance(
    inherent: f64,
    ambient: f64,
    alpha: f64,
    k: f64,
    range: f64,
    theta: f64,
) -> PyResult<f64> {
    let (clamped, _) = uifm::duntley_radiance(&uifm::DuntleyParams {
        inherent_radiance: inherent,
        ambient_radiance: ambient,
        alpha,
        k,
        theta,
        range,
    })
    .map_err(pyerr)?;
    Ok(clamped)
}

/// Gray-world veiling light estimate: per-channel gain times channel mean.
#[pyfunction]
#[pyo3(signature = (observed, gains=(1.0, 1.0, 1.0)))]
fn estimate_veiling_light(observed: &Image, gains: (f64, f64, f64)) -> PyResult<(f64, f64, f64)> {
    let a = uifm::estimate_veiling_light(&observed.inner, [gains.0, gains.1, gains.2])
        .map_err(pyerr)?;
    let d = a.data();
    Ok((d[[0, 0, 0]], d[[0, 0, 1]], d[[0, 0, 2]]))
}

/// Closed-form per-pixel transmission from an observed/reference pair,
/// as `rows[y][x] == [t_r, t_g, t_b]`.
#[pyfunction]
fn estimate_transmission(
    observed: &Image,
    reference: &Image,
    veiling: (f64, f64, f64),
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let (h, w) = (observed.inner.height(), observed.inner.width());
    let a = VeilingLightField::uniform(h, w, [veiling.0, veiling.1, veiling.2]).map_err(pyerr)?;
    let (t, _) =
        uifm::estimate_transmission(&observed.inner, &reference.inner, &a).map_err(pyerr)?;
    let d = t.data();
    Ok((0..h)
        .map(|y| {
            (0..w)
                .map(|x| (0..3).map(|c| d[[y, x, c]]).collect())
                .collect()
        })
        .collect())
}

// --- metrics ----------------------------------------------------------------

#[pyfunction]
fn psnr(pred: &Image, reference: &Image) -> PyResult<f64> {
    metrics::psnr(&pred.inner, &reference.inner).map_err(pyerr)
}

#[pyfunction]
fn ssim(pred: &Image, reference: &Image) -> PyResult<f64> {
    metrics::ssim(&pred.inner, &reference.inner).map_err(pyerr)
}

#[pyfunction]
fn uiqm(img: &Image) -> PyResult<f64> {
    metrics::uiqm(&img.inner).map_err(pyerr)
}

/// Per-channel RMS distance plus the channel average:
/// `(ed_r, ed_g, ed_b, ed_avg)`.
#[pyfunction]
fn euclidean_distance(pred: &Image, reference: &Image) -> PyResult<(f64, f64, f64, f64)> {
    let ed = metrics::euclidean_distance(&pred.inner, &reference.inner).map_err(pyerr)?;
    Ok((ed.0, ed.1, ed.2, ed.3))
}

// --- pipeline commands -------------------------------------------------------

/// Scan a paired dataset into the sample cache; returns the report counts.
#[pyfunction]
#[pyo3(signature = (root, cache_dir, train_size=256, quadrisect=true, train_fraction=0.8, seed=17))]
fn prepare_data(
    py: Python<'_>,
    root: PathBuf,
    cache_dir: PathBuf,
    train_size: usize,
    quadrisect: bool,
    train_fraction: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let opts = PipelineOptions {
        train_size,
        quadrisect,
        train_fraction,
        seed,
    };
    let (report, outcome) =
        commands::cmd_prepare_data(&root, &cache_dir, &opts).map_err(pyerr)?;
    let out = PyDict::new(py);
    out.set_item("pairs", report.pairs)?;
    out.set_item("samples", report.samples)?;
    out.set_item(
        "train_samples",
        report.manifest.as_ref().map_or(0, |m| m.train_ids.len()),
    )?;
    out.set_item(
        "test_samples",
        report.manifest.as_ref().map_or(0, |m| m.test_ids.len()),
    )?;
    out.set_item("clamped_target_values", report.clamp.clamped)?;
    out.set_item("warnings", outcome.warnings)?;
    Ok(out.into())
}

/// Train per the config file; returns per-epoch rows
/// `(epoch, adv_d, adv_g, l1_g1, l2_g2, total_g)`.
#[pyfunction]
#[pyo3(signature = (config, resume=false))]
fn train(config: PathBuf, resume: bool) -> PyResult<Vec<(usize, f64, f64, f64, f64, f64)>> {
    let cfg = RunConfig::from_file(&config).map_err(pyerr)?;
    let (history, _) = commands::cmd_train(&cfg, resume).map_err(pyerr)?;
    Ok(history
        .rows
        .iter()
        .map(|r| {
            let l = &r.losses;
            (r.epoch, l.adv_d, l.adv_g, l.l1_g1, l.l2_g2, l.total_g)
        })
        .collect())
}

/// Restore one in-memory image with a trained checkpoint. Pads to the
/// generator's size multiple and crops back, like the CLI.
#[pyfunction]
#[pyo3(signature = (checkpoint, image, seed=17))]
fn restore(checkpoint: PathBuf, image: &Image, seed: u64) -> PyResult<Image> {
    let trainer = Trainer::load_checkpoint(&checkpoint).map_err(pyerr)?;
    let (h, w) = (image.inner.height(), image.inner.width());
    let padded =
        imageio::pad_to_multiple(&image.inner, 1 << trainer.arch().depth).map_err(pyerr)?;
    let restored = trainer.restore(&padded, seed).map_err(pyerr)?;
    Ok(Image {
        inner: imageio::crop_to(&restored, h, w).map_err(pyerr)?,
    })
}

/// Restore a file or directory of files; returns the written paths.
#[pyfunction]
#[pyo3(signature = (checkpoint, input, out_dir, seed=17))]
fn dewater(checkpoint: PathBuf, input: PathBuf, out_dir: PathBuf, seed: u64) -> PyResult<Vec<PathBuf>> {
    let (written, _) = commands::cmd_dewater(&checkpoint, &input, &out_dir, seed).map_err(pyerr)?;
    Ok(written)
}

/// Score predictions (optionally against references); writes metrics.csv /
/// metrics.json into `out_dir` and returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (pred_dir, reference_dir, out_dir))]
fn evaluate(pred_dir: PathBuf, reference_dir: Option<PathBuf>, out_dir: PathBuf) -> PyResult<String> {
    let (report, _) =
        commands::cmd_evaluate(&pred_dir, reference_dir.as_deref(), &out_dir).map_err(pyerr)?;
    report.to_json().map_err(pyerr)
}

/// Degrade clean images per a water parameter file; returns the written
/// underwater image paths.
#[pyfunction]
#[pyo3(signature = (clean_dir, params_file, out_dir, seed=17))]
fn synthesize(
    clean_dir: PathBuf,
    params_file: PathBuf,
    out_dir: PathBuf,
    seed: u64,
) -> PyResult<Vec<PathBuf>> {
    let (written, _) =
        commands::cmd_synthesize(&clean_dir, &params_file, &out_dir, seed).map_err(pyerr)?;
    Ok(written)
}

#[pymodule]
fn dewater_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Image>()?;
    m.add_function(wrap_pyfunction!(compose_underwater, m)?)?;
    m.add_function(wrap_pyfunction!(duntley_radiance, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_veiling_light, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_transmission, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(uiqm, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_distance, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(dewater, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add("T_FLOOR", dewater_core::T_FLOOR)?;
    m.add("DENOM_EPS", dewater_core::DENOM_EPS)?;
    m.add("PSNR_CAP", metrics::PSNR_CAP)?;
    Ok(())
}
