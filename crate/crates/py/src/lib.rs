//! Python bindings: `import mvlk`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mvlk::detector::{detect_frame, DetectorConfig};
use mvlk::eval::{compute_ap, compute_clear_mot, DetectionEvalConfig, MotEvalConfig, MotReport};
use mvlk::fusion::{early_fuse, late_fuse, LateFusionMethod, ViewFrameSet};
use mvlk::geometry::{self, Box3D, ObjectClass, Point3, PointCloud, RigidTransform, Vec3};
use mvlk::io;
use mvlk::registration::{hierarchical_register, solve_rigid_arun, HierarchyConfig};
use mvlk::scene::{generate_synthetic_scene, SceneSpec, SyntheticScene};
use mvlk::syncsim::{compute_time_error_report, simulate_session, SessionConfig};
use mvlk::tracking::{track_sequence, TrackerConfig, TrajectorySet};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: io::IoError) -> PyErr {
    match e {
        io::IoError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn parse_class(name: &str) -> PyResult<ObjectClass> {
    name.parse().map_err(|_| value_err(format!("unknown class {name:?} (Car, Cyclist, Pedestrian)")))
}

fn to_points(points: Vec<[f64; 3]>) -> Vec<Point3> {
    points.into_iter().map(Point3::from).collect()
}

/// Rigid transform `p ↦ R p + t`.
#[pyclass(name = "RigidTransform", module = "mvlk", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTransform(RigidTransform);

#[pymethods]
impl PyTransform {
    /// Identity, or roll/pitch/yaw (radians) plus a translation.
    #[new]
    #[pyo3(signature = (roll=0.0, pitch=0.0, yaw=0.0, translation=[0.0, 0.0, 0.0]))]
    fn new(roll: f64, pitch: f64, yaw: f64, translation: [f64; 3]) -> Self {
        Self(RigidTransform::from_euler(roll, pitch, yaw, Vec3::from(translation)))
    }

    /// From a row-major 3×3 rotation and a translation; the rotation must be
    /// orthonormal with determinant +1.
    #[staticmethod]
    fn from_rotation(rotation: [f64; 9], translation: [f64; 3]) -> PyResult<Self> {
        RigidTransform::from_row_major(rotation, translation).map(Self).map_err(value_err)
    }

    #[getter]
    fn rotation(&self) -> [f64; 9] {
        self.0.rotation_row_major()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        (*self.0.translation()).into()
    }

    /// Homogeneous 4×4 matrix as nested lists.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.0.to_matrix();
        (0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect()).collect()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other` (apply `other` first).
    fn compose(&self, other: &Self) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        points.into_iter().map(|p| self.0.apply(&Point3::from(p)).coords.into()).collect()
    }

    fn rotation_error_deg(&self, other: &Self) -> f64 {
        self.0.rotation_error_deg(&other.0)
    }

    fn translation_error(&self, other: &Self) -> f64 {
        self.0.translation_error(&other.0)
    }

    fn __repr__(&self) -> String {
        let t = self.0.translation();
        format!("RigidTransform(translation=[{:.4}, {:.4}, {:.4}])", t.x, t.y, t.z)
    }
}

/// Oriented 3D box: center, size `[length, width, height]`, yaw about +z.
#[pyclass(name = "Box3D", module = "mvlk", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBox(Box3D);

#[pymethods]
impl PyBox {
    #[new]
    #[pyo3(signature = (center, size, yaw, cls, score=1.0, track_id=None))]
    fn new(center: [f64; 3], size: [f64; 3], yaw: f64, cls: &str, score: f64, track_id: Option<u64>) -> PyResult<Self> {
        if size.iter().any(|s| !(*s > 0.0)) || !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(value_err("box needs a finite center and yaw and positive dimensions"));
        }
        let b = Box3D::new(Point3::from(center), size, yaw, parse_class(cls)?).with_score(score);
        Ok(Self(Box3D { track_id, ..b }))
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.0.center.coords.into()
    }

    #[getter]
    fn size(&self) -> [f64; 3] {
        self.0.size()
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw
    }

    #[getter]
    fn cls(&self) -> &'static str {
        self.0.class.as_str()
    }

    #[getter]
    fn score(&self) -> f64 {
        self.0.score
    }

    #[getter]
    fn track_id(&self) -> Option<u64> {
        self.0.track_id
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn __repr__(&self) -> String {
        let c = self.0.center;
        format!("Box3D({}, center=[{:.3}, {:.3}, {:.3}], score={:.3})", self.0.class.as_str(), c.x, c.y, c.z, self.0.score)
    }
}

/// Point cloud with optional per-point attributes.
#[pyclass(name = "PointCloud", module = "mvlk", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCloud(PointCloud);

#[pymethods]
impl PyCloud {
    #[new]
    #[pyo3(signature = (points, timestamp_ns=0, source_node=None))]
    fn new(points: Vec<[f64; 3]>, timestamp_ns: u64, source_node: Option<u16>) -> Self {
        let mut cloud = PointCloud::from_points(to_points(points));
        cloud.timestamp_ns = timestamp_ns;
        cloud.source_node = source_node;
        Self(cloud)
    }

    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(|p| p.coords.into()).collect()
    }

    #[getter]
    fn timestamp_ns(&self) -> u64 {
        self.0.timestamp_ns
    }

    #[getter]
    fn source_node(&self) -> Option<u16> {
        self.0.source_node
    }

    fn transformed(&self, t: &PyTransform) -> Self {
        Self(geometry::apply_transform(&t.0, &self.0))
    }

    fn voxel_downsample(&self, voxel_size: f64) -> PyResult<Self> {
        geometry::voxel_downsample(&self.0, voxel_size).map(Self).map_err(value_err)
    }

    /// Binary frame encoding.
    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        io::encode_frame(&self.0).map_err(io_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        io::decode_frame(data).map(Self).map_err(io_err)
    }

    /// Reads a binary frame, or an ASCII `.xyz`/`.txt` file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let ascii = matches!(path.extension().and_then(|e| e.to_str()), Some("xyz" | "txt"));
        let cloud = if ascii { io::read_xyz(&path) } else { io::read_frame(&path) };
        cloud.map(Self).map_err(io_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_frame(&path, &self.0).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.0.len())
    }
}

/// Synthetic multi-node crossroad with ground truth.
#[pyclass(name = "SyntheticScene", module = "mvlk", frozen)]
struct PyScene(SyntheticScene);

#[pymethods]
impl PyScene {
    /// The standard four-node crossroad with `frames` frames.
    #[new]
    #[pyo3(signature = (seed=0, frames=10))]
    fn new(py: Python<'_>, seed: u64, frames: usize) -> PyResult<Self> {
        let spec = SceneSpec { frame_count: frames, ..SceneSpec::standard_crossroad() };
        py.detach(|| generate_synthetic_scene(&spec, seed)).map(Self).map_err(value_err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.frames.len()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.0.gt_boxes.len()
    }

    /// Node-frame cloud, in node coordinates.
    fn frame(&self, node: usize, frame: usize) -> PyResult<PyCloud> {
        self.0.frames.get(node).and_then(|f| f.get(frame)).cloned().map(PyCloud).ok_or_else(|| value_err("no such node/frame"))
    }

    /// Node → world transform.
    fn extrinsic(&self, node: usize) -> PyResult<PyTransform> {
        self.0.extrinsics.get(node).copied().map(PyTransform).ok_or_else(|| value_err("no such node"))
    }

    /// Ground-truth boxes of one frame, world coordinates.
    fn ground_truth(&self, frame: usize) -> PyResult<Vec<PyBox>> {
        let boxes = self.0.gt_boxes.get(frame).ok_or_else(|| value_err("no such frame"))?;
        Ok(boxes.iter().copied().map(PyBox).collect())
    }

    /// Ground-truth trajectories: `{track_id: [(frame, Box3D), ...]}`.
    fn trajectories(&self) -> BTreeMap<u64, Vec<(usize, PyBox)>> {
        to_py_tracks(&self.0.trajectories)
    }
}

fn to_py_tracks(set: &TrajectorySet) -> BTreeMap<u64, Vec<(usize, PyBox)>> {
    set.iter().map(|(id, s)| (*id, s.iter().map(|(f, b)| (*f, PyBox(*b))).collect())).collect()
}

fn from_py_tracks(tracks: BTreeMap<u64, Vec<(usize, PyRef<'_, PyBox>)>>) -> TrajectorySet {
    tracks.into_iter().map(|(id, s)| (id, s.into_iter().map(|(f, b)| (f, b.0)).collect())).collect()
}

fn frame_boxes(items: Vec<(usize, PyRef<'_, PyBox>)>) -> Vec<(usize, Box3D)> {
    items.into_iter().map(|(f, b)| (f, b.0)).collect()
}

#[pyfunction]
fn iou_3d(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_3d(&a.0, &b.0)
}

#[pyfunction]
fn iou_bev(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_bev(&a.0, &b.0)
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
#[pyfunction]
fn solve_rigid(source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<PyTransform> {
    solve_rigid_arun(&to_points(source), &to_points(target)).map(PyTransform).map_err(value_err)
}

/// Coarse-to-fine registration of `source` onto `target`.
/// Returns `(transform, fitness, inlier_rmse)`.
#[pyfunction]
#[pyo3(signature = (source, target, seed=0))]
fn register(py: Python<'_>, source: &PyCloud, target: &PyCloud, seed: u64) -> PyResult<(PyTransform, f64, f64)> {
    let r = py.detach(|| hierarchical_register(&source.0, &target.0, &HierarchyConfig::default(), seed)).map_err(value_err)?;
    Ok((PyTransform(r.transform), r.fitness, r.inlier_rmse))
}

/// Simulates one synchronized recording session. Returns the per-frame
/// timestamp errors in seconds (`errors[frame][k]` for `nodes[k]`) and the
/// largest absolute error: `(nodes, errors, max_abs_error_s)`.
#[pyfunction]
#[pyo3(signature = (seed=0, duration_s=10.0))]
fn simulate_sync(seed: u64, duration_s: f64) -> PyResult<(Vec<usize>, Vec<Vec<f64>>, f64)> {
    let cfg = SessionConfig { seed, duration_s, ..SessionConfig::default() };
    let report = simulate_session(&cfg).and_then(|t| compute_time_error_report(&t)).map_err(value_err)?;
    let max = report.max_abs_error_s();
    Ok((report.nodes, report.errors_s, max))
}

/// Merges synchronized node frames into one world-frame cloud.
/// `frames` and `extrinsics` are keyed by node id.
#[pyfunction]
fn fuse_early(frames: BTreeMap<u16, PyRef<'_, PyCloud>>, extrinsics: BTreeMap<u16, PyRef<'_, PyTransform>>) -> PyResult<PyCloud> {
    let set = ViewFrameSet::new(
        frames.into_iter().map(|(k, c)| (k, c.0.clone())).collect(),
        extrinsics.into_iter().map(|(k, t)| (k, t.0)).collect(),
    );
    early_fuse(&set).map(PyCloud).map_err(value_err)
}

/// Clusters per-view boxes by 3D IoU and fuses each cluster
/// (`method` is "nms" or "average").
#[pyfunction]
#[pyo3(signature = (views, method="average", overlap=0.1))]
fn fuse_late(views: BTreeMap<u16, Vec<PyRef<'_, PyBox>>>, method: &str, overlap: f64) -> PyResult<Vec<PyBox>> {
    let method = match method {
        "nms" => LateFusionMethod::Nms,
        "average" => LateFusionMethod::Average,
        other => return Err(value_err(format!("unknown fusion method {other:?}"))),
    };
    let views: Vec<(u16, Vec<Box3D>)> = views.into_iter().map(|(k, v)| (k, v.iter().map(|b| b.0).collect())).collect();
    Ok(late_fuse(&views, overlap, method).map_err(value_err)?.into_iter().map(PyBox).collect())
}

/// Geometric detector on a world-frame (or node-frame) cloud.
#[pyfunction]
fn detect(py: Python<'_>, cloud: &PyCloud) -> PyResult<Vec<PyBox>> {
    let dets = py.detach(|| detect_frame(&cloud.0, &DetectorConfig::default())).map_err(value_err)?;
    Ok(dets.boxes.into_iter().map(PyBox).collect())
}

/// Kalman-filter tracking over per-frame detections.
#[pyfunction]
#[pyo3(signature = (detections, frame_dt=0.1))]
fn track(detections: Vec<Vec<PyRef<'_, PyBox>>>, frame_dt: f64) -> PyResult<BTreeMap<u64, Vec<(usize, PyBox)>>> {
    let frames: Vec<Vec<Box3D>> = detections.iter().map(|f| f.iter().map(|b| b.0).collect()).collect();
    let set = track_sequence(&frames, &TrackerConfig::default(), frame_dt).map_err(value_err)?;
    Ok(to_py_tracks(&set))
}

/// Average precision (40 recall points) for one class at an IoU threshold.
/// Detections and ground truth are `(frame, Box3D)` pairs.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, cls, threshold=0.5))]
fn average_precision(
    detections: Vec<(usize, PyRef<'_, PyBox>)>,
    ground_truth: Vec<(usize, PyRef<'_, PyBox>)>,
    cls: &str,
    threshold: f64,
) -> PyResult<f64> {
    let cfg = DetectionEvalConfig::uniform(threshold);
    compute_ap(&frame_boxes(detections), &frame_boxes(ground_truth), parse_class(cls)?, &cfg).map_err(value_err)
}

/// CLEAR MOT metrics with 3D IoU matching; returns a dict.
#[pyfunction]
#[pyo3(signature = (hypotheses, ground_truth, threshold=0.25))]
fn clear_mot(
    hypotheses: BTreeMap<u64, Vec<(usize, PyRef<'_, PyBox>)>>,
    ground_truth: BTreeMap<u64, Vec<(usize, PyRef<'_, PyBox>)>>,
    threshold: f64,
) -> PyResult<BTreeMap<&'static str, f64>> {
    let cfg = MotEvalConfig { threshold, ..MotEvalConfig::default() };
    let r: MotReport = compute_clear_mot(&from_py_tracks(hypotheses), &from_py_tracks(ground_truth), &cfg).map_err(value_err)?;
    Ok(BTreeMap::from([
        ("mota", r.mota),
        ("motp", r.motp),
        ("ids", r.ids as f64),
        ("frag", r.frag as f64),
        ("fn", r.fn_count as f64),
        ("fp", r.fp as f64),
        ("gt", r.gt as f64),
    ]))
}

/// Runs the full pipeline from a JSON config file into `out_dir`;
/// returns the report as a JSON string.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf, out_dir: PathBuf) -> PyResult<String> {
    let cfg = io::PipelineConfig::load(&config).map_err(io_err)?;
    let outcome = py.detach(|| mvlk::pipeline::run_pipeline(&cfg, &out_dir)).map_err(value_err)?;
    serde_json::to_string(&outcome.report).map_err(value_err)
}

#[pymodule(name = "mvlk")]
fn mvlk_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform>()?;
    m.add_class::<PyBox>()?;
    m.add_class::<PyCloud>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(iou_bev, m)?)?;
    m.add_function(wrap_pyfunction!(solve_rigid, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sync, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_early, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_late, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(clear_mot, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
