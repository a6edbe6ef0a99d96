//! End-to-end runs of either microtask design with simulated workers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::MergeConfig;
use crate::metrics::{evaluate_video, CurveConfig, MetricsReport};
use crate::sim::{simulate_submission, SimError, SyntheticSpec, WorkerModel, SYNTHETIC_HEIGHT, SYNTHETIC_WIDTH};
use crate::taskgen::{StrategyKind, Submission, TaskId, TaskState};
use crate::track::{AnnotationSet, VideoId, VideoMeta};
use crate::workflow::{GroundTruthScorer, RoundConfig, RoundOutcome, WorkflowConfig, WorkflowError, WorkflowState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A video and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCase {
    pub meta: VideoMeta,
    pub gt: AnnotationSet,
}

impl VideoCase {
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        let gt = crate::sim::synthetic_video(spec);
        let meta = VideoMeta {
            id: gt.video_id.clone(),
            url: format!("synthetic://{}", spec.video_id),
            frame_count: spec.frame_count,
            fps: 30.0,
            width: SYNTHETIC_WIDTH,
            height: SYNTHETIC_HEIGHT,
        };
        Self { meta, gt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub round: RoundConfig,
    pub merge: MergeConfig,
    pub segment: (u32, u32),
    /// Template for every simulated worker; the seed is replaced per worker.
    pub worker: WorkerModel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            round: RoundConfig { auc_filter: 0.0, redundancy: 3, ..RoundConfig::default() },
            merge: MergeConfig::default(),
            segment: (crate::merge::DEFAULT_SEGMENT_LENGTH, crate::merge::DEFAULT_SEGMENT_OVERLAP),
            worker: WorkerModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub strategy: StrategyKind,
    pub accepted: BTreeMap<VideoId, AnnotationSet>,
    pub reports: BTreeMap<VideoId, MetricsReport>,
    pub mean_auc: f64,
    pub mean_tracc: f64,
    pub mean_precision20: f64,
    pub history: Vec<RoundOutcome>,
}

/// Seed of worker `slot` in a run seeded with `seed`.
pub fn worker_seed(seed: u64, slot: u32) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(u64::from(slot))
}

/// Posts tasks, lets `redundancy` simulated workers answer each one, selects
/// best submissions against ground truth and advances rounds until the
/// workflow finishes; then evaluates the accepted sets.
pub fn run_pipeline(
    strategy: StrategyKind,
    cases: &[VideoCase],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineResult, PipelineError> {
    let gt: BTreeMap<VideoId, AnnotationSet> = cases.iter().map(|c| (c.meta.id.clone(), c.gt.clone())).collect();
    let counts: BTreeMap<VideoId, u32> =
        cases.iter().map(|c| (c.meta.id.clone(), c.gt.roots().count() as u32)).collect();
    let config = WorkflowConfig { strategy, round: cfg.round.clone(), merge: cfg.merge.clone(), segment: cfg.segment };
    let mut state = WorkflowState::start(config, cases.iter().map(|c| c.meta.clone()).collect(), &counts)?;
    let scorer = GroundTruthScorer::new(&gt);
    while !state.is_finished() {
        let mut submissions: BTreeMap<TaskId, Vec<Submission>> = BTreeMap::new();
        for task in &mut state.tasks {
            let truth = &gt[&task.video_id];
            let mut subs = Vec::new();
            for slot in 0..task.redundancy {
                let worker = cfg.worker.with_seed(worker_seed(seed, slot));
                match simulate_submission(&worker, task, truth) {
                    Ok(s) => subs.push(s),
                    Err(SimError::NoObjectsAvailable(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            task.state = if subs.is_empty() { TaskState::Stopped } else { TaskState::Complete };
            submissions.insert(task.id.clone(), subs);
        }
        state = state.advance_round(&submissions, &scorer)?.0;
    }
    let curves = CurveConfig::default();
    let mut reports = BTreeMap::new();
    let mut accepted = BTreeMap::new();
    for (vid, progress) in &state.videos {
        let report = evaluate_video(&progress.accepted, &gt[vid], &curves).expect("same video");
        reports.insert(vid.clone(), report);
        accepted.insert(vid.clone(), progress.accepted.clone());
    }
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.values().map(f).sum::<f64>() / n;
    Ok(PipelineResult {
        strategy,
        mean_auc: mean(|r| r.mean_auc),
        mean_tracc: mean(|r| r.mean_tracc),
        mean_precision20: mean(|r| r.mean_precision20),
        accepted,
        reports,
        history: state.history,
    })
}
