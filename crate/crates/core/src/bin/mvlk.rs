use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use mvlk::detector::{detect_frame, DetectorConfig};
use mvlk::eval::{compute_clear_mot, DetectionEvalConfig, MotEvalConfig};
use mvlk::experiments::mean_ap;
use mvlk::fusion::{early_fuse, ViewFrameSet};
use mvlk::geometry::{Box3D, PointCloud};
use mvlk::io::{
    boxes_from_records, boxes_to_records, calibration_from_records, calibration_to_records, read_frame, read_jsonl,
    trajectories_from_records, trajectories_to_records, write_frame, write_json, write_jsonl, write_xyz, BoxRecord,
    CalibrationRecord, IoError, NodeInput, PipelineConfig, SceneSource, TrajectoryRecord,
};
use mvlk::pipeline::{calibrate_nodes, list_frames, read_cloud, run_pipeline, time_error_records, PipelineError};
use mvlk::registration::HierarchyConfig;
use mvlk::scene::{generate_synthetic_scene, ReferenceScan, SceneSpec};
use mvlk::syncsim::{compute_time_error_report, simulate_session, SessionConfig};
use mvlk::tracking::{track_sequence, TrackerConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_ALGORITHM: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_INPUT, message: e.to_string() }
}

fn algorithm(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_ALGORITHM, message: e.to_string() }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_CONFIG, message: e.to_string() }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(_) => config(e),
            _ => input(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(io) => io.into(),
            PipelineError::Config(_) | PipelineError::Scene(_) => config(e),
            _ => algorithm(e),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Multi-view LiDAR toolkit.
#[derive(Parser)]
#[command(name = "mvlk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register each node's accumulated frames to a reference cloud.
    Calibrate {
        /// One directory of .mvlc frames per node; node ids follow the
        /// order given unless the frames carry a node id.
        #[arg(long = "node-dir", required = true)]
        node_dirs: Vec<PathBuf>,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hierarchy configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds of frames merged per node.
        #[arg(long, default_value_t = 10.0)]
        accumulate_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Known extrinsics to report errors against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Simulate a trigger + PPS session and print the per-frame error table.
    SyncSim {
        /// Session configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the errors as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Early-fuse synchronized frames of several nodes into world frames.
    Fuse {
        #[arg(long)]
        calib: PathBuf,
        /// One frame directory per node, in calibration node order.
        #[arg(long = "frames", required = true)]
        frame_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Synchronization window in milliseconds.
        #[arg(long, default_value_t = 5.0)]
        window_ms: f64,
    },
    /// Detect objects in world-frame clouds (a file or a directory of frames).
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Track detections over frames.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        frame_rate: f64,
    },
    /// Average precision of detections against annotations.
    EvalDet {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// CLEAR MOT metrics of trajectories against annotations.
    EvalMot {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full chain described by a pipeline configuration.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic scene to frame files and annotations.
    Generate {
        /// Scene description (JSON); the standard crossroad by default.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert between .mvlc and ASCII .xyz (chosen by extension).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn read_node_frames(dir: &Path) -> Result<Vec<PointCloud>, CliError> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(input(format!("no .mvlc frames in {}", dir.display())));
    }
    Ok(files.iter().map(|p| read_frame(p)).collect::<Result<_, _>>()?)
}

fn calibrate(
    node_dirs: &[PathBuf],
    reference: &Path,
    out: &Path,
    cfg: Option<&Path>,
    accumulate_s: f64,
    seed: u64,
    truth: Option<&Path>,
) -> CliResult {
    let hierarchy: HierarchyConfig = load_json(cfg)?;
    hierarchy.validate().map_err(config)?;
    let reference = read_cloud(reference)?;
    let mut nodes = Vec::new();
    for (k, dir) in node_dirs.iter().enumerate() {
        let frames = read_node_frames(dir)?;
        let id = frames[0].source_node.unwrap_or(k as u16);
        nodes.push((id, frames));
    }
    let truth = truth.map(|p| read_jsonl::<CalibrationRecord>(p).map_err(CliError::from).and_then(|r| Ok(calibration_from_records(&r)?))).transpose()?;
    let results = calibrate_nodes(&nodes, &reference, &hierarchy, accumulate_s, seed).map_err(algorithm)?;
    let mut records = Vec::new();
    let mut failed = Vec::new();
    println!("{:>5} {:>8} {:>10} {:>10} {:>10}", "node", "fitness", "rmse_m", "rot_deg", "trans_m");
    for (node, result) in results {
        match result {
            Ok(r) => {
                let err = truth.as_ref().and_then(|t| t.get(&node)).map(|t| (r.transform.rotation_error_deg(t), r.transform.translation_error(t)));
                let (rot, trans) = err.map_or(("-".into(), "-".into()), |(a, b)| (format!("{a:.4}"), format!("{b:.4}")));
                println!("{node:>5} {:>8.4} {:>10.4} {rot:>10} {trans:>10}", r.fitness, r.inlier_rmse);
                records.push(CalibrationRecord { fitness: Some(r.fitness), inlier_rmse: Some(r.inlier_rmse), ..CalibrationRecord::new(node, &r.transform) });
            }
            Err(e) => {
                println!("{node:>5} failed: {e}");
                failed.push(node);
            }
        }
    }
    write_jsonl(out, &records)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(algorithm(format!("calibration failed for node(s) {failed:?}")))
    }
}

fn sync_sim(cfg: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult {
    let mut session: SessionConfig = load_json(cfg)?;
    if let Some(seed) = seed {
        session.seed = seed;
    }
    session.validate().map_err(config)?;
    let trace = simulate_session(&session).map_err(algorithm)?;
    let report = compute_time_error_report(&trace).map_err(algorithm)?;
    let header: Vec<String> = report.nodes.iter().map(|n| format!("node{n}_us")).collect();
    println!("frame {}", header.join(" "));
    for (f, row) in report.errors_s.iter().enumerate() {
        let cols: Vec<String> = row.iter().map(|e| format!("{:.3}", e * 1e6)).collect();
        println!("{f} {}", cols.join(" "));
    }
    eprintln!(
        "armed {:?}, aligned start {}, start skew {:.3} us, max |error| {:.3} us, mean |error| {:.3} us",
        trace.armed_nodes(),
        trace.starts_aligned(),
        trace.max_start_skew_s() * 1e6,
        report.max_abs_error_s() * 1e6,
        report.mean_abs_error_s() * 1e6
    );
    if let Some(out) = out {
        write_jsonl(out, &time_error_records(&trace, &report))?;
    }
    if report.misaligned_start {
        return Err(algorithm("armed nodes started on different PPS edges"));
    }
    Ok(())
}

fn fuse(calib: &Path, frame_dirs: &[PathBuf], out: &Path, window_ms: f64) -> CliResult {
    if !(window_ms >= 0.0) {
        return Err(config("window_ms must be non-negative"));
    }
    let extrinsics = calibration_from_records(&read_jsonl(calib)?)?;
    let ids: Vec<u16> = extrinsics.keys().copied().collect();
    if ids.len() != frame_dirs.len() {
        return Err(input(format!("{} frame directories for {} calibrated nodes", frame_dirs.len(), ids.len())));
    }
    let nodes: Vec<Vec<PointCloud>> = frame_dirs.iter().map(|d| read_node_frames(d)).collect::<Result<_, _>>()?;
    let count = nodes.iter().map(Vec::len).min().unwrap_or(0);
    fs::create_dir_all(out).map_err(|e| input(format!("{}: {e}", out.display())))?;
    for f in 0..count {
        let mut set = ViewFrameSet::new(ids.iter().zip(&nodes).map(|(id, fr)| (*id, fr[f].clone())).collect(), extrinsics.clone());
        set.sync_window_ns = (window_ms * 1e6).round() as u64;
        let fused = early_fuse(&set).map_err(|e| algorithm(format!("frame {f}: {e}")))?;
        write_frame(&out.join(format!("frame_{f:05}.mvlc")), &fused)?;
    }
    println!("fused {count} frames from {} nodes", ids.len());
    Ok(())
}

fn detect(input_path: &Path, out: &Path, cfg: Option<&Path>) -> CliResult {
    let detector: DetectorConfig = load_json(cfg)?;
    detector.validate().map_err(config)?;
    let files = if input_path.is_dir() { list_frames(input_path)? } else { vec![input_path.to_path_buf()] };
    let mut keyed = Vec::new();
    let mut skipped = 0;
    for (f, path) in files.iter().enumerate() {
        let cloud = read_cloud(path)?;
        let result = detect_frame(&cloud, &detector).map_err(|e| algorithm(format!("{}: {e}", path.display())))?;
        skipped += usize::from(result.no_ground);
        keyed.extend(result.boxes.into_iter().map(|b| (f, b)));
    }
    write_jsonl(out, &boxes_to_records(&keyed))?;
    println!("{} detections in {} frames ({skipped} without a ground plane)", keyed.len(), files.len());
    Ok(())
}

fn track(detections: &Path, out: &Path, cfg: Option<&Path>, frame_rate: f64) -> CliResult {
    let tracker: TrackerConfig = load_json(cfg)?;
    tracker.validate().map_err(config)?;
    if !(frame_rate > 0.0) {
        return Err(config("frame_rate must be positive"));
    }
    let keyed = boxes_from_records(&read_jsonl::<BoxRecord>(detections)?)?;
    let frames = keyed.iter().map(|(f, _)| f + 1).max().unwrap_or(0);
    let mut per_frame: Vec<Vec<Box3D>> = vec![Vec::new(); frames];
    for (f, b) in keyed {
        per_frame[f].push(Box3D { track_id: None, ..b });
    }
    let set = track_sequence(&per_frame, &tracker, 1.0 / frame_rate).map_err(algorithm)?;
    write_jsonl(out, &trajectories_to_records(&set))?;
    println!("{} tracks over {frames} frames", set.len());
    Ok(())
}

fn eval_det(detections: &Path, ground_truth: &Path, cfg: Option<&Path>) -> CliResult {
    let eval: DetectionEvalConfig = load_json(cfg)?;
    eval.validate().map_err(config)?;
    let dets = boxes_from_records(&read_jsonl::<BoxRecord>(detections)?)?;
    let gt = boxes_from_records(&read_jsonl::<BoxRecord>(ground_truth)?)?;
    if gt.is_empty() {
        return Err(input("ground truth is empty"));
    }
    let ap = mean_ap(&dets, &gt, &eval).map_err(algorithm)?;
    for (class, v) in &ap {
        println!("AP {class}: {v:.4}");
    }
    println!("mAP: {:.4}", ap.values().sum::<f64>() / ap.len() as f64);
    Ok(())
}

fn eval_mot(hypotheses: &Path, ground_truth: &Path, cfg: Option<&Path>) -> CliResult {
    let mot: MotEvalConfig = load_json(cfg)?;
    mot.validate().map_err(config)?;
    let hyp = trajectories_from_records(&read_jsonl::<TrajectoryRecord>(hypotheses)?)?;
    let gt = trajectories_from_records(&read_jsonl::<TrajectoryRecord>(ground_truth)?)?;
    let r = compute_clear_mot(&hyp, &gt, &mot).map_err(input)?;
    println!("MOTA: {:.4}", r.mota);
    println!("MOTP: {:.4}", r.motp);
    println!("IDS: {}  FRAG: {}  FN: {}  FP: {}  GT: {}", r.ids, r.frag, r.fn_count, r.fp, r.gt);
    Ok(())
}

fn pipeline(cfg: &Path, out: &Path) -> CliResult {
    let cfg = PipelineConfig::load(cfg)?;
    let outcome = run_pipeline(&cfg, out)?;
    print!("{}", outcome.table);
    println!("config sha256 {}", outcome.manifest.config_sha256);
    Ok(())
}

fn generate(spec: Option<&Path>, seed: u64, frames: Option<usize>, out: &Path) -> CliResult {
    let mut spec: SceneSpec = match spec {
        Some(p) => load_json(Some(p))?,
        None => SceneSpec::standard_crossroad(),
    };
    if let Some(n) = frames {
        spec.frame_count = n;
    }
    let scene = generate_synthetic_scene(&spec, seed).map_err(config)?;
    let mkdir = |d: &Path| fs::create_dir_all(d).map_err(|e| input(format!("{}: {e}", d.display())));
    mkdir(out)?;
    let mut nodes = Vec::new();
    for (n, frames) in scene.frames.iter().enumerate() {
        let dir = out.join(format!("node{n}"));
        mkdir(&dir)?;
        for (f, cloud) in frames.iter().enumerate() {
            write_frame(&dir.join(format!("frame_{f:05}.mvlc")), cloud)?;
        }
        nodes.push(NodeInput { node_id: n as u16, frame_dir: PathBuf::from(format!("node{n}")) });
    }
    write_frame(&out.join("reference.mvlc"), &scene.layout.render_reference(&ReferenceScan::default()))?;
    let truth: BTreeMap<u16, _> = scene.extrinsics.iter().enumerate().map(|(n, t)| (n as u16, *t)).collect();
    write_jsonl(&out.join("calibration_truth.jsonl"), &calibration_to_records(&truth))?;
    let annotations: Vec<(usize, Box3D)> = scene.gt_boxes.iter().enumerate().flat_map(|(f, bs)| bs.iter().map(move |b| (f, *b))).collect();
    write_jsonl(&out.join("annotations.jsonl"), &boxes_to_records(&annotations))?;
    write_json(&out.join("spec.json"), &spec)?;
    let pipeline = PipelineConfig {
        seed,
        source: SceneSource::Files {
            nodes,
            reference: Some("reference.mvlc".into()),
            calibration: Some("calibration_truth.jsonl".into()),
            ground_truth: Some("annotations.jsonl".into()),
            frame_rate_hz: spec.lidar.frame_rate_hz,
        },
        ..PipelineConfig::default()
    };
    write_json(&out.join("pipeline.json"), &pipeline)?;
    println!("{} nodes x {} frames, {} annotated boxes", scene.frames.len(), spec.frame_count, annotations.len());
    Ok(())
}

fn is_xyz(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("xyz") | Some("txt"))
}

fn convert(input_path: &Path, output: &Path) -> CliResult {
    let cloud = read_cloud(input_path)?;
    if is_xyz(output) {
        write_xyz(output, &cloud)?;
    } else {
        write_frame(output, &cloud)?;
    }
    println!("{} points", cloud.len());
    Ok(())
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var("MVLK_THREADS") else { return Ok(()) };
    let n: usize = value.trim().parse().map_err(|_| config(format!("MVLK_THREADS={value:?} is not a thread count")))?;
    if n == 0 {
        return Err(config("MVLK_THREADS must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(config)
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Calibrate { node_dirs, reference, out, config, accumulate_s, seed, truth } => {
            calibrate(&node_dirs, &reference, &out, config.as_deref(), accumulate_s, seed, truth.as_deref())
        }
        Command::SyncSim { config, seed, out } => sync_sim(config.as_deref(), seed, out.as_deref()),
        Command::Fuse { calib, frame_dirs, out, window_ms } => fuse(&calib, &frame_dirs, &out, window_ms),
        Command::Detect { input, out, config } => detect(&input, &out, config.as_deref()),
        Command::Track { detections, out, config, frame_rate } => track(&detections, &out, config.as_deref(), frame_rate),
        Command::EvalDet { detections, ground_truth, config } => eval_det(&detections, &ground_truth, config.as_deref()),
        Command::EvalMot { hypotheses, ground_truth, config } => eval_mot(&hypotheses, &ground_truth, config.as_deref()),
        Command::Pipeline { config, out } => pipeline(&config, &out),
        Command::Generate { spec, seed, frames, out } => generate(spec.as_deref(), seed, frames, &out),
        Command::Convert { input, output } => convert(&input, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
