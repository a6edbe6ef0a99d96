//! Success / precision curves and their summary scores.
//!
//! Every score is computed over the ground-truth track's lifetime. Frames the
//! prediction does not cover count as IoU 0 and infinite center distance.
//! Success uses a strict `IoU > t` test, so the curve's first point is the
//! fraction of frames with any overlap (TrAcc) and a perfect prediction has
//! AUC 100/101.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::track::{center_distance, iou, AnnotationSet, Track, TrackId, VideoId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("prediction for video {pred} evaluated against ground truth of video {gt}")]
    VideoMismatch { pred: VideoId, gt: VideoId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub iou_thresholds: Vec<f64>,
    pub dist_thresholds: Vec<f64>,
    pub precision_cutoff: f64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..=100).map(|i| f64::from(i) / 100.0).collect(),
            dist_thresholds: (0..=50).map(f64::from).collect(),
            precision_cutoff: 20.0,
        }
    }
}

impl CurveConfig {
    fn cutoff_index(&self) -> usize {
        self.dist_thresholds
            .iter()
            .position(|&d| d == self.precision_cutoff)
            .expect("precision cutoff lies on the distance grid")
    }
}

/// Per-frame IoU of `pred` against `gt` over the gt lifetime.
fn frame_ious(pred: Option<&Track>, gt: &Track) -> Vec<f64> {
    gt.lifetime()
        .frames()
        .map(|f| {
            let g = gt.box_at(f).expect("frame inside gt lifetime");
            pred.and_then(|p| p.box_at(f)).map_or(0.0, |p| iou(&p, &g))
        })
        .collect()
}

fn frame_distances(pred: Option<&Track>, gt: &Track) -> Vec<f64> {
    gt.lifetime()
        .frames()
        .map(|f| {
            let g = gt.box_at(f).expect("frame inside gt lifetime");
            pred.and_then(|p| p.box_at(f)).map_or(f64::INFINITY, |p| center_distance(&p, &g))
        })
        .collect()
}

fn success_from(ious: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = ious.len() as f64;
    thresholds.iter().map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n).collect()
}

fn precision_from(dists: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = dists.len() as f64;
    thresholds.iter().map(|&d| dists.iter().filter(|&&v| v <= d).count() as f64 / n).collect()
}

/// Fraction of gt frames with IoU strictly above each threshold.
pub fn success_curve(pred: Option<&Track>, gt: &Track, cfg: &CurveConfig) -> Vec<f64> {
    success_from(&frame_ious(pred, gt), &cfg.iou_thresholds)
}

/// Fraction of gt frames whose center distance is within each threshold.
pub fn precision_curve(pred: Option<&Track>, gt: &Track, cfg: &CurveConfig) -> Vec<f64> {
    precision_from(&frame_distances(pred, gt), &cfg.dist_thresholds)
}

/// Mean of the sampled success values.
pub fn auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// Fraction of gt frames with nonzero overlap.
pub fn tracc(pred: Option<&Track>, gt: &Track) -> f64 {
    let ious = frame_ious(pred, gt);
    ious.iter().filter(|&&v| v > 0.0).count() as f64 / ious.len() as f64
}

pub fn precision_at(curve: &[f64], cfg: &CurveConfig) -> f64 {
    curve[cfg.cutoff_index()]
}

/// Mean IoU of `pred` over the gt lifetime.
pub fn mean_iou_over_gt(pred: &Track, gt: &Track) -> f64 {
    let ious = frame_ious(Some(pred), gt);
    ious.iter().sum::<f64>() / ious.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub auc: f64,
    pub tracc: f64,
    pub precision20: f64,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_id: Option<TrackId>,
}

pub fn score_track(pred: Option<&Track>, gt: &Track, cfg: &CurveConfig) -> TrackScore {
    let success = success_curve(pred, gt, cfg);
    let precision = precision_curve(pred, gt, cfg);
    TrackScore {
        auc: auc(&success),
        tracc: success[0],
        precision20: precision_at(&precision, cfg),
        success_curve: success,
        precision_curve: precision,
        matched: pred.is_some(),
        pred_id: pred.map(|p| p.id().clone()),
    }
}

/// Optimal one-to-one correspondence on `1 - mean IoU` over gt lifetimes.
/// Pairs with zero mean IoU are left unmatched.
pub fn match_tracks_to_gt(pred: &AnnotationSet, gt: &AnnotationSet) -> BTreeMap<TrackId, Option<TrackId>> {
    let mut out: BTreeMap<TrackId, Option<TrackId>> = gt.tracks.iter().map(|t| (t.id().clone(), None)).collect();
    if pred.tracks.is_empty() || gt.tracks.is_empty() {
        return out;
    }
    let score: Vec<Vec<f64>> =
        gt.tracks.iter().map(|g| pred.tracks.iter().map(|p| mean_iou_over_gt(p, g)).collect()).collect();
    let costs = CostMatrix::from_fn(gt.tracks.len(), pred.tracks.len(), |r, c| 1.0 - score[r][c])
        .expect("non-empty finite matrix");
    for (r, c) in solve_assignment(&costs) {
        if score[r][c] > 0.0 {
            out.insert(gt.tracks[r].id().clone(), Some(pred.tracks[c].id().clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub video_id: VideoId,
    pub per_track: BTreeMap<TrackId, TrackScore>,
    pub mean_auc: f64,
    pub mean_tracc: f64,
    pub mean_precision20: f64,
    pub matched: usize,
    pub unmatched: usize,
}

impl MetricsReport {
    /// Success and precision curves averaged over gt tracks.
    pub fn mean_curves(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.per_track.len().max(1) as f64;
        let mut success: Vec<f64> = Vec::new();
        let mut precision: Vec<f64> = Vec::new();
        for s in self.per_track.values() {
            if success.is_empty() {
                success = vec![0.0; s.success_curve.len()];
                precision = vec![0.0; s.precision_curve.len()];
            }
            success.iter_mut().zip(&s.success_curve).for_each(|(a, b)| *a += b);
            precision.iter_mut().zip(&s.precision_curve).for_each(|(a, b)| *a += b);
        }
        success.iter_mut().for_each(|v| *v /= n);
        precision.iter_mut().for_each(|v| *v /= n);
        (success, precision)
    }
}

/// Matches `pred` to `gt` and scores every gt track; unmatched gt tracks
/// contribute zeros to the means. Split children are scored as tracks of
/// their own.
pub fn evaluate_video(pred: &AnnotationSet, gt: &AnnotationSet, cfg: &CurveConfig) -> Result<MetricsReport, MetricsError> {
    if pred.video_id != gt.video_id {
        return Err(MetricsError::VideoMismatch { pred: pred.video_id.clone(), gt: gt.video_id.clone() });
    }
    let matches = match_tracks_to_gt(pred, gt);
    let mut per_track = BTreeMap::new();
    let (mut sum_auc, mut sum_tracc, mut sum_prec) = (0.0, 0.0, 0.0);
    let mut matched = 0;
    for g in &gt.tracks {
        let p = matches.get(g.id()).and_then(|m| m.as_ref()).and_then(|id| pred.get(id));
        let score = score_track(p, g, cfg);
        if score.matched {
            matched += 1;
        }
        sum_auc += score.auc;
        sum_tracc += score.tracc;
        sum_prec += score.precision20;
        per_track.insert(g.id().clone(), score);
    }
    let n = gt.tracks.len();
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(MetricsReport {
        video_id: gt.video_id.clone(),
        per_track,
        mean_auc: mean(sum_auc),
        mean_tracc: mean(sum_tracc),
        mean_precision20: mean(sum_prec),
        matched,
        unmatched: n - matched,
    })
}

/// `threshold,value` rows with a header line.
pub fn curve_csv(thresholds: &[f64], values: &[f64]) -> String {
    let mut out = String::from("threshold,value\n");
    for (t, v) in thresholds.iter().zip(values) {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}
