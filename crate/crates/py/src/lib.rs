//! Python bindings: geometry, scale derivation, packing, layouts, the
//! throughput model and whole experiment runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mosaic::experiment::{run_experiment, Mode, RunConfig};
use mosaic::packer::{inverse_bin_pack as pack, CanvasLayout, DeParams, PackItem};
use mosaic::pipeline::PipelineConfig;
use mosaic::scale_profiler::{self, SizeSample};
use mosaic::simulation::{generate_scenario as generate, ScenarioSpec};

fn err(e: mosaic::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "BBox", from_py_object)]
#[derive(Clone, Copy)]
struct PyBBox {
    inner: mosaic::BBox,
}

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { inner: mosaic::BBox::new(x_min, y_min, x_max, y_max) }
    }

    #[getter]
    fn x_min(&self) -> f64 {
        self.inner.x_min
    }
    #[getter]
    fn y_min(&self) -> f64 {
        self.inner.y_min
    }
    #[getter]
    fn x_max(&self) -> f64 {
        self.inner.x_max
    }
    #[getter]
    fn y_max(&self) -> f64 {
        self.inner.y_max
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        mosaic::geometry::iou(&self.inner, &other.inner)
    }

    fn __repr__(&self) -> String {
        let b = self.inner;
        format!("BBox({}, {}, {}, {})", b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

#[pyfunction]
fn iou(a: &PyBBox, b: &PyBBox) -> f64 {
    a.iou(b)
}

/// `[(bbox, confidence)]` -> kept indices, highest confidence first.
#[pyfunction]
fn nms(boxes: Vec<(PyBBox, f64)>, iou_threshold: f64) -> Vec<usize> {
    let raw: Vec<_> = boxes.into_iter().map(|(b, c)| (b.inner, c)).collect();
    mosaic::geometry::nms_indices(&raw, iou_threshold)
}

/// Centroids `[(w, h)]` -> `(dims, catch_all)`.
#[pyfunction]
fn derive_scales(centroids: Vec<(f64, f64)>) -> (Vec<u32>, u32) {
    let s = scale_profiler::derive_scales(&centroids);
    (s.dims, s.catch_all)
}

/// Size samples `[(w, h)]` -> `(k, centroids)`.
#[pyfunction]
#[pyo3(signature = (samples, k_max = 6))]
fn cluster_sizes(samples: Vec<(f64, f64)>, k_max: usize) -> PyResult<(usize, Vec<(f64, f64)>)> {
    let s: Vec<SizeSample> = samples.into_iter().map(|(width, height)| SizeSample { width, height }).collect();
    let c = scale_profiler::cluster_sizes(&s, k_max).map_err(err)?;
    Ok((c.k, c.centroids))
}

fn placements(layout: &CanvasLayout) -> Vec<(usize, u32, u32, u32, u32, f64)> {
    layout.placements.iter().map(|p| (p.camera_id, p.x, p.y, p.w, p.h, p.scale)).collect()
}

/// Items `[(w, h, min_scale, max_scale)]` -> `(placements, relaxations)`
/// with placements `[(camera, x, y, w, h, scale)]` in item order.
#[pyfunction]
#[pyo3(signature = (items, canvas = 640, seed = 0))]
fn inverse_bin_pack(
    items: Vec<(f64, f64, f64, f64)>,
    canvas: u32,
    seed: u64,
) -> PyResult<(Vec<(usize, u32, u32, u32, u32, f64)>, u32)> {
    let items: Vec<PackItem> = items
        .into_iter()
        .enumerate()
        .map(|(i, (w, h, lo, hi))| PackItem::new(0, i, mosaic::BBox::from_xywh(0.0, 0.0, w, h), (lo, hi), 1.0))
        .collect();
    let layout = pack(&items, canvas, &DeParams { seed, ..DeParams::default() }).map_err(err)?;
    Ok((placements(&layout), layout.relaxations))
}

#[pyfunction]
#[pyo3(signature = (width, height, canvas = 640))]
fn fcfs_layout(width: u32, height: u32, canvas: u32) -> Vec<(usize, u32, u32, u32, u32, f64)> {
    placements(&mosaic::baselines::fcfs_layout((width, height), canvas))
}

#[pyfunction]
#[pyo3(signature = (cameras, width, height, canvas = 640))]
fn uniform_layout(cameras: u32, width: u32, height: u32, canvas: u32) -> PyResult<Vec<(usize, u32, u32, u32, u32, f64)>> {
    if cameras == 0 {
        return Err(PyValueError::new_err("at least one camera required"));
    }
    Ok(placements(&mosaic::baselines::uniform_layout(cameras, (width, height), canvas)))
}

#[pyfunction]
#[pyo3(signature = (cameras = 6, batch = 4, canvas = 640, ps_frames = 10, ps_period = 30.0, batch_latency = None))]
fn effective_throughput<'py>(
    py: Python<'py>,
    cameras: usize,
    batch: usize,
    canvas: u32,
    ps_frames: usize,
    ps_period: f64,
    batch_latency: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = PipelineConfig { cameras, batch, canvas, ps_frames, ps_period, batch_latency, ..PipelineConfig::default() };
    let t = mosaic::pipeline::effective_throughput(&cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("canvas_fps", t.canvas_fps)?;
    d.set_item("per_camera_fps", t.per_camera_fps)?;
    d.set_item("cfps", t.cfps)?;
    d.set_item("ps_delay", t.ps_delay)?;
    Ok(d)
}

#[pyfunction]
fn cer(predicted: &str, truth: &str) -> PyResult<f64> {
    mosaic::metrics::cer(predicted, truth).map_err(err)
}

/// One experiment run; returns the results row as a dict.
#[pyfunction]
#[pyo3(signature = (mode = "mosaic", preset = "okutama-like", cameras = 6, frames = 40, seed = 0, canvas = 640, batch = 4, profile = "detection"))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    mode: &str,
    preset: &str,
    cameras: usize,
    frames: usize,
    seed: u64,
    canvas: u32,
    batch: usize,
    profile: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig {
        mode: mode.parse::<Mode>().map_err(err)?,
        preset: preset.to_string(),
        scenario: None,
        frames,
        seed,
        pipeline: PipelineConfig {
            cameras,
            canvas,
            batch,
            profile: profile.parse().map_err(err)?,
            ..PipelineConfig::default()
        },
    };
    let (_, out) = py.detach(|| run_experiment(&cfg)).map_err(err)?;
    let r = out.row;
    let d = PyDict::new(py);
    d.set_item("mode", r.mode.to_string())?;
    d.set_item("M", r.cameras)?;
    d.set_item("b", r.b)?;
    d.set_item("C", r.canvas)?;
    d.set_item("map50", r.map50)?;
    d.set_item("per_camera_fps", r.per_camera_fps)?;
    d.set_item("cfps", r.cfps)?;
    d.set_item("cer", r.cer)?;
    d.set_item("utilization", r.utilization)?;
    d.set_item("relaxations", r.relaxations)?;
    Ok(d)
}

/// Writes a preset scenario as JSON lines.
#[pyfunction]
#[pyo3(signature = (path, preset = "okutama-like", cameras = 6, frames = 40, seed = 0))]
fn generate_scenario(path: &str, preset: &str, cameras: usize, frames: usize, seed: u64) -> PyResult<()> {
    let s = ScenarioSpec::preset(preset, cameras, frames).and_then(|spec| generate(&spec, seed)).map_err(err)?;
    let f = std::fs::File::create(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
    s.write_jsonl(std::io::BufWriter::new(f)).map_err(err)
}

#[pymodule]
fn mosaic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(derive_scales, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_bin_pack, m)?)?;
    m.add_function(wrap_pyfunction!(fcfs_layout, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_layout, m)?)?;
    m.add_function(wrap_pyfunction!(effective_throughput, m)?)?;
    m.add_function(wrap_pyfunction!(cer, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    Ok(())
}
