//! Python bindings. Rasters cross the boundary as flat row-major lists; masks
//! as lists of bools.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use sinksam::config::ConfigBuilder;
use sinksam::eval::{default_thresholds, detection_curve, metrics_from_confusion, pixel_confusion, MetricsReport};
use sinksam::labeling::{boxes_from_components, filter_components, label_components, label_mask, FilterThresholds};
use sinksam::raster::{BinaryMask, GeoTransform, Raster, DEFAULT_NODATA};
use sinksam::synth::SynthParams;
use sinksam::tiling::{plan_tiles, TileSpec};
use sinksam::{ascii_grid, hydro, pipeline};

create_exception!(sinksam, SinksamError, PyException, "Pipeline failure that is not a bad input.");

fn to_py(e: sinksam::Error) -> PyErr {
    match e {
        sinksam::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_input_error() => PyValueError::new_err(e.to_string()),
        e => SinksamError::new_err(e.to_string()),
    }
}

/// Elevation, depth or probability grid with a nodata sentinel.
#[pyclass(name = "Raster", module = "sinksam", frozen)]
struct PyRaster {
    inner: Raster,
}

#[pymethods]
impl PyRaster {
    #[new]
    #[pyo3(signature = (width, height, values, nodata = DEFAULT_NODATA, origin_x = 0.0, origin_y = 0.0, cellsize = 1.0))]
    fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        nodata: f64,
        origin_x: f64,
        origin_y: f64,
        cellsize: f64,
    ) -> PyResult<Self> {
        let geo = GeoTransform { origin_x, origin_y, cellsize };
        Raster::new(width, height, values, nodata, geo)
            .map(|inner| PyRaster { inner })
            .map_err(to_py)
    }

    /// Read an ESRI ASCII grid.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        ascii_grid::read_ascii_grid(path).map(|inner| PyRaster { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        ascii_grid::write_ascii_grid(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn nodata(&self) -> f64 {
        self.inner.nodata()
    }

    /// (origin_x, origin_y, cellsize) of the lower-left corner.
    #[getter]
    fn geo(&self) -> (f64, f64, f64) {
        let g = self.inner.geo();
        (g.origin_x, g.origin_y, g.cellsize)
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err(format!("({row}, {col}) is outside the raster")));
        }
        Ok(self.inner.get(row, col))
    }

    fn __repr__(&self) -> String {
        format!("Raster({}x{}, nodata={})", self.inner.width(), self.inner.height(), self.inner.nodata())
    }
}

/// Fill closed depressions; returns (filled, depth).
#[pyfunction]
fn fill_depressions(dem: &PyRaster) -> PyResult<(PyRaster, PyRaster)> {
    let r = hydro::fill_depressions(&dem.inner).map_err(to_py)?;
    Ok((PyRaster { inner: r.filled }, PyRaster { inner: r.depth }))
}

/// One connected depression.
#[pyclass(name = "Component", module = "sinksam", frozen, get_all)]
struct PyComponent {
    id: u32,
    area_px: usize,
    max_depth: f64,
    /// [x0, y0, x1, y1], end-exclusive.
    bbox: [usize; 4],
}

#[pymethods]
impl PyComponent {
    fn __repr__(&self) -> String {
        format!(
            "Component(id={}, area_px={}, max_depth={}, bbox={:?})",
            self.id, self.area_px, self.max_depth, self.bbox
        )
    }
}

/// Depressions of a depth raster, optionally filtered by depth and area.
#[pyfunction]
#[pyo3(signature = (depth, min_depth = None, min_area_px = None))]
fn depressions(depth: &PyRaster, min_depth: Option<f64>, min_area_px: Option<usize>) -> PyResult<Vec<PyComponent>> {
    let mut comps = label_components(&depth.inner);
    if min_depth.is_some() || min_area_px.is_some() {
        let t = FilterThresholds::new(min_depth.unwrap_or(0.0), min_area_px.unwrap_or(0)).map_err(to_py)?;
        comps = filter_components(&comps, t);
    }
    Ok(comps
        .into_iter()
        .map(|c| PyComponent {
            id: c.id,
            area_px: c.area_px,
            max_depth: c.max_depth,
            bbox: c.bbox.to_array(),
        })
        .collect())
}

/// Box prompts for the depressions kept by the default thresholds (depth >= 2,
/// area >= 50 px), grown by `pad_px` and clamped to the raster.
#[pyfunction]
#[pyo3(signature = (depth, min_depth = 2.0, min_area_px = 50, pad_px = 0))]
fn prompt_boxes(depth: &PyRaster, min_depth: f64, min_area_px: usize, pad_px: usize) -> PyResult<Vec<[usize; 4]>> {
    let t = FilterThresholds::new(min_depth, min_area_px).map_err(to_py)?;
    let kept = filter_components(&label_components(&depth.inner), t);
    let (w, h) = (depth.inner.width(), depth.inner.height());
    Ok(boxes_from_components(&kept, pad_px, w, h).iter().map(|b| b.to_array()).collect())
}

/// Window origins (row0, col0) covering a mosaic.
#[pyfunction]
#[pyo3(signature = (width, height, patch = 512, stride = 256))]
fn tile_origins(width: usize, height: usize, patch: usize, stride: usize) -> PyResult<Vec<(usize, usize)>> {
    let spec = TileSpec::new(patch, stride).map_err(to_py)?;
    Ok(plan_tiles(width, height, spec)
        .map_err(to_py)?
        .iter()
        .map(|w| (w.row0, w.col0))
        .collect())
}

/// Pixel and object metrics of a predicted mask against ground truth.
#[pyclass(name = "Metrics", module = "sinksam", frozen, get_all)]
struct PyMetrics {
    f1: f64,
    iou: f64,
    precision: f64,
    recall: f64,
    accuracy: f64,
    /// (tp, tn, fp, fn) pixel counts.
    confusion: (u64, u64, u64, u64),
    /// (iou_threshold, tp, fp, fn) per threshold.
    detection: Vec<(f64, usize, usize, usize)>,
}

impl From<MetricsReport> for PyMetrics {
    fn from(r: MetricsReport) -> Self {
        let c = r.pixel_confusion;
        PyMetrics {
            f1: r.f1,
            iou: r.iou,
            precision: r.precision,
            recall: r.recall,
            accuracy: r.accuracy,
            confusion: (c.tp, c.tn, c.fp, c.fn_),
            detection: r.detection.iter().map(|d| (d.iou_threshold, d.tp, d.fp, d.fn_)).collect(),
        }
    }
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        format!("Metrics(f1={:.4}, iou={:.4}, precision={:.4}, recall={:.4})", self.f1, self.iou, self.precision, self.recall)
    }
}

fn mask(width: usize, height: usize, bits: Vec<bool>) -> PyResult<BinaryMask> {
    BinaryMask::new(width, height, bits).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, width, height, thresholds = None, ignore = None))]
fn evaluate(
    pred: Vec<bool>,
    gt: Vec<bool>,
    width: usize,
    height: usize,
    thresholds: Option<Vec<f64>>,
    ignore: Option<Vec<bool>>,
) -> PyResult<PyMetrics> {
    let pred = mask(width, height, pred)?;
    let gt = mask(width, height, gt)?;
    let ignore = ignore.map(|b| mask(width, height, b)).transpose()?;
    let mut report = metrics_from_confusion(pixel_confusion(&pred, &gt, ignore.as_ref()).map_err(to_py)?);
    let thresholds = thresholds.unwrap_or_else(default_thresholds);
    report.detection = detection_curve(&label_mask(&pred), &label_mask(&gt), &thresholds);
    Ok(report.into())
}

/// Write a synthetic scene plus scene.conf into `out_dir`; returns the config path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, size = 1024, n_sinkholes = 12, noise_amp = None))]
fn synth(out_dir: PathBuf, seed: u64, size: usize, n_sinkholes: usize, noise_amp: Option<f64>) -> PyResult<PathBuf> {
    let mut params = SynthParams::new(seed, size, size, n_sinkholes);
    if let Some(a) = noise_amp {
        params.noise_amp = a;
    }
    pipeline::cmd_synth(&params, &out_dir).map_err(to_py)?;
    Ok(out_dir.join(pipeline::SCENE_CONFIG_FILE))
}

/// Run every stage for a config file. `overrides` are `key=value` strings.
/// Returns the metrics, or None when no ground truth is configured.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
fn run(py: Python<'_>, config: PathBuf, overrides: Vec<String>) -> PyResult<Option<PyMetrics>> {
    let mut b = ConfigBuilder::from_file(&config).map_err(to_py)?;
    let cwd = std::env::current_dir().map_err(|e| PyOSError::new_err(e.to_string()))?;
    for o in &overrides {
        b.apply_override(o, &cwd).map_err(to_py)?;
    }
    let cfg = b.build().map_err(to_py)?;
    let report = py.detach(|| pipeline::cmd_run(&cfg)).map_err(to_py)?;
    Ok(report.map(PyMetrics::from))
}

#[pymodule]
#[pyo3(name = "sinksam")]
fn sinksam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SinksamError", m.py().get_type::<SinksamError>())?;
    m.add_class::<PyRaster>()?;
    m.add_class::<PyComponent>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(fill_depressions, m)?)?;
    m.add_function(wrap_pyfunction!(depressions, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_boxes, m)?)?;
    m.add_function(wrap_pyfunction!(tile_origins, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
