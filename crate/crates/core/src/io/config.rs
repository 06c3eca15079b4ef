//! Declarative pipeline configuration (JSON).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::detector::DetectorConfig;
use crate::eval::{DetectionEvalConfig, MotEvalConfig};
use crate::registration::HierarchyConfig;
use crate::scene::{ReferenceScan, SceneSpec};
use crate::syncsim::SessionConfig;
use crate::tracking::TrackerConfig;

/// A node whose frames are `*.mvlc` files in `frame_dir`, taken in file
/// name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInput {
    pub node_id: u16,
    pub frame_dir: PathBuf,
}

/// Where the pipeline gets its frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// `scenes` synthetic scenes drawn with seeds `seed, seed + 1, …`.
    Synthetic {
        spec: SceneSpec,
        #[serde(default = "one")]
        scenes: usize,
    },
    /// Recorded frames. Extrinsics come from `calibration` (records) or
    /// are computed against the world-frame `reference` cloud.
    Files {
        nodes: Vec<NodeInput>,
        #[serde(default)]
        reference: Option<PathBuf>,
        #[serde(default)]
        calibration: Option<PathBuf>,
        /// Annotation records (boxes with track ids), optional.
        #[serde(default)]
        ground_truth: Option<PathBuf>,
        #[serde(default = "ten")]
        frame_rate_hz: f64,
    },
}

fn one() -> usize {
    1
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub source: SceneSource,
    /// Register every node against the reference instead of using known
    /// extrinsics (synthetic ground truth or a calibration file).
    pub calibrate: bool,
    /// Frames merged per node before registration.
    pub accumulate_s: f64,
    pub hierarchy: HierarchyConfig,
    /// Reference scanner for synthetic sources.
    pub reference_scan: ReferenceScan,
    /// Synchronization session simulated alongside the run, if any.
    pub sync: Option<SessionConfig>,
    pub detector: DetectorConfig,
    pub tracker: TrackerConfig,
    pub detection_eval: DetectionEvalConfig,
    pub mot_eval: MotEvalConfig,
    pub fusion_overlap: f64,
    /// View groups for the detection study; empty means every non-empty
    /// subset of the nodes.
    pub view_groups: Vec<Vec<usize>>,
    /// Frames to process; empty means all.
    pub frames: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            source: SceneSource::Synthetic { spec: SceneSpec::standard_crossroad(), scenes: 1 },
            calibrate: false,
            accumulate_s: 10.0,
            hierarchy: HierarchyConfig::default(),
            reference_scan: ReferenceScan::default(),
            sync: Some(SessionConfig::default()),
            detector: DetectorConfig::default(),
            tracker: TrackerConfig::default(),
            detection_eval: DetectionEvalConfig::default(),
            mot_eval: MotEvalConfig::default(),
            fusion_overlap: 0.1,
            view_groups: Vec::new(),
            frames: Vec::new(),
        }
    }
}

impl PipelineConfig {
    /// Parses, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(IoError::at(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let SceneSource::Files { nodes, reference, calibration, ground_truth, .. } = &mut self.source {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            nodes.iter_mut().for_each(|n| fix(&mut n.frame_dir));
            [reference, calibration, ground_truth].into_iter().flatten().for_each(fix);
        }
    }

    /// Node ids in processing order.
    pub fn node_ids(&self) -> Vec<usize> {
        match &self.source {
            SceneSource::Synthetic { spec, .. } => {
                let n = if spec.nodes.is_empty() { spec.node_count } else { spec.nodes.len() };
                (0..n).collect()
            }
            SceneSource::Files { nodes, .. } => nodes.iter().map(|n| n.node_id as usize).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::Config(m));
        match &self.source {
            SceneSource::Synthetic { spec, scenes } => {
                spec.validate().map_err(|e| IoError::Config(e.to_string()))?;
                if *scenes == 0 {
                    return bad("scenes must be positive".into());
                }
            }
            SceneSource::Files { nodes, reference, calibration, ground_truth, frame_rate_hz } => {
                if nodes.is_empty() {
                    return bad("no nodes listed".into());
                }
                if !(*frame_rate_hz > 0.0) {
                    return bad("frame_rate_hz must be positive".into());
                }
                let ids: BTreeSet<u16> = nodes.iter().map(|n| n.node_id).collect();
                if ids.len() != nodes.len() {
                    return bad("duplicate node ids".into());
                }
                for n in nodes {
                    if !n.frame_dir.is_dir() {
                        return bad(format!("frame directory {} not found", n.frame_dir.display()));
                    }
                }
                for p in [reference, calibration, ground_truth].into_iter().flatten() {
                    if !p.is_file() {
                        return bad(format!("{} not found", p.display()));
                    }
                }
                if self.calibrate && reference.is_none() {
                    return bad("calibrate needs a reference cloud".into());
                }
                if !self.calibrate && calibration.is_none() {
                    return bad("either a calibration file or calibrate = true is required".into());
                }
            }
        }
        self.hierarchy.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if let Some(sync) = &self.sync {
            sync.validate().map_err(|e| IoError::Config(e.to_string()))?;
        }
        self.detector.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.tracker.validate().map_err(IoError::Config)?;
        self.detection_eval.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.mot_eval.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if !(self.fusion_overlap > 0.0 && self.fusion_overlap < 1.0) {
            return bad("fusion_overlap must be in (0, 1)".into());
        }
        if !(self.accumulate_s >= 0.0) {
            return bad("accumulate_s must be non-negative".into());
        }
        let ids: BTreeSet<usize> = self.node_ids().into_iter().collect();
        for g in &self.view_groups {
            if g.is_empty() || !g.iter().all(|n| ids.contains(n)) || g.iter().collect::<BTreeSet<_>>().len() != g.len() {
                return bad(format!("view group {g:?} is empty, repeats a node or names an unknown node"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_paths_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let text = r#"{"source": {"kind": "files", "nodes": [{"node_id": 0, "frame_dir": "nowhere"}], "calibration": "c.jsonl"}}"#;
        fs::write(&path, text).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(matches!(err, IoError::Config(ref m) if m.contains("nowhere")), "{err}");
        fs::create_dir(dir.path().join("nowhere")).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(IoError::Config(m)) if m.contains("c.jsonl")));
        fs::write(dir.path().join("c.jsonl"), "").unwrap();
        PipelineConfig::load(&path).unwrap();
    }

    #[test]
    fn bad_view_group_is_a_config_error() {
        let cfg = PipelineConfig { view_groups: vec![vec![0, 9]], ..PipelineConfig::default() };
        assert!(matches!(cfg.validate(), Err(IoError::Config(_))));
    }
}
