use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{EvalError, MotEvalConfig};
use crate::assignment::max_weight_matching;
use crate::geometry::Box3D;
use crate::tracking::TrajectorySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    /// Mean matched IoU (or mean center distance for the distance metric).
    pub motp: f64,
    pub ids: usize,
    pub frag: usize,
    pub fn_count: usize,
    pub fp: usize,
    pub gt: usize,
    pub matches: usize,
}

type FrameObjects = BTreeMap<usize, Vec<(u64, Box3D)>>;

fn by_frame(set: &TrajectorySet) -> FrameObjects {
    let mut out: FrameObjects = BTreeMap::new();
    for (&id, samples) in set {
        for (frame, b) in samples {
            out.entry(*frame).or_default().push((id, *b));
        }
    }
    out
}

#[derive(Default)]
struct GtHistory {
    last_hyp: Option<u64>,
    tracked: bool,
    ever_tracked: bool,
}

/// CLEAR MOT metrics of `hypotheses` against `ground_truth`.
///
/// Frames are visited in increasing order. Correspondences from the
/// previous frame are kept while still valid (when `prefer_previous`),
/// the rest are matched to maximize first the number of pairs and then
/// their total similarity.
pub fn compute_clear_mot(
    hypotheses: &TrajectorySet,
    ground_truth: &TrajectorySet,
    cfg: &MotEvalConfig,
) -> Result<MotReport, EvalError> {
    cfg.validate()?;
    let gt_frames = by_frame(ground_truth);
    let hyp_frames = by_frame(hypotheses);
    let gt_total: usize = gt_frames.values().map(Vec::len).sum();
    if gt_total == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let frames: BTreeSet<usize> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut history: HashMap<u64, GtHistory> = HashMap::new();
    let mut previous: HashMap<u64, u64> = HashMap::new();
    let (mut fn_count, mut fp, mut ids, mut frag, mut matches) = (0, 0, 0, 0, 0);
    let mut similarity_sum = 0.0;

    for frame in frames {
        let gts = gt_frames.get(&frame).unwrap_or(&empty);
        let hyps = hyp_frames.get(&frame).unwrap_or(&empty);
        let mut gt_used = vec![false; gts.len()];
        let mut hyp_used = vec![false; hyps.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        if cfg.prefer_previous {
            for (g, (gid, gbox)) in gts.iter().enumerate() {
                let Some(prev_hyp) = previous.get(gid) else { continue };
                let Some(h) = hyps.iter().position(|(hid, _)| hid == prev_hyp) else { continue };
                if hyp_used[h] {
                    continue;
                }
                if let Some(s) = cfg.similarity(gbox, &hyps[h].1) {
                    gt_used[g] = true;
                    hyp_used[h] = true;
                    pairs.push((g, h, s));
                }
            }
        }

        let free_gt: Vec<usize> = (0..gts.len()).filter(|&g| !gt_used[g]).collect();
        let free_hyp: Vec<usize> = (0..hyps.len()).filter(|&h| !hyp_used[h]).collect();
        // Each pair is worth more than the quality sum of any matching, so
        // the number of pairs is maximized first.
        let bonus = free_gt.len().min(free_hyp.len()) as f64 + 1.0;
        let weights: Vec<Vec<Option<f64>>> = free_gt
            .iter()
            .map(|&g| {
                free_hyp
                    .iter()
                    .map(|&h| cfg.similarity(&gts[g].1, &hyps[h].1).map(|s| bonus + cfg.match_quality(s)))
                    .collect()
            })
            .collect();
        for (r, c) in max_weight_matching(&weights) {
            let (g, h) = (free_gt[r], free_hyp[c]);
            let s = cfg.similarity(&gts[g].1, &hyps[h].1).expect("matched pairs are valid");
            gt_used[g] = true;
            hyp_used[h] = true;
            pairs.push((g, h, s));
        }

        previous.clear();
        for &(g, h, s) in &pairs {
            let gid = gts[g].0;
            let hid = hyps[h].0;
            let entry = history.entry(gid).or_default();
            if entry.last_hyp.is_some_and(|last| last != hid) {
                ids += 1;
            }
            if entry.ever_tracked && !entry.tracked {
                frag += 1;
            }
            entry.last_hyp = Some(hid);
            entry.tracked = true;
            entry.ever_tracked = true;
            previous.insert(gid, hid);
            similarity_sum += s;
        }
        for (g, (gid, _)) in gts.iter().enumerate() {
            if !gt_used[g] {
                history.entry(*gid).or_default().tracked = false;
            }
        }
        matches += pairs.len();
        fn_count += gt_used.iter().filter(|u| !**u).count();
        fp += hyp_used.iter().filter(|u| !**u).count();
    }

    Ok(MotReport {
        mota: 1.0 - (fn_count + fp + ids) as f64 / gt_total as f64,
        motp: if matches > 0 { similarity_sum / matches as f64 } else { 0.0 },
        ids,
        frag,
        fn_count,
        fp,
        gt: gt_total,
        matches,
    })
}
