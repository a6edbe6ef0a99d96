//! Crowd microtasks: one task per video segment (SingSeg) or one task per
//! object round (SingObj), plus the server-side submission gates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::SegmentPlan;
use crate::track::{AnnotationSet, FrameSpan, Track, TrackId, VideoId, VideoMeta};

pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingSeg,
    SingObj,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "singseg" | "sing_seg" => Ok(Self::SingSeg),
            "singobj" | "sing_obj" => Ok(Self::SingObj),
            other => Err(format!("unknown strategy {other:?} (expected singseg or singobj)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    SingSeg { segment: FrameSpan },
    SingObj { round: u32, prior: AnnotationSet },
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::SingSeg { .. } => StrategyKind::SingSeg,
            Strategy::SingObj { .. } => StrategyKind::SingObj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Open,
    Complete,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub video_id: VideoId,
    pub strategy: Strategy,
    pub redundancy: u32,
    pub state: TaskState,
}

impl TaskSpec {
    /// Instruction variant shown to the worker.
    pub fn instructions(&self) -> &'static str {
        match &self.strategy {
            Strategy::SingSeg { .. } => "Annotate every object visible in this segment.",
            Strategy::SingObj { prior, .. } if prior.is_empty() => {
                "Annotate one object of your choice, and all of its children if it splits, across the whole video."
            }
            Strategy::SingObj { .. } => {
                "Annotate one object that is not already annotated, and all of its children if it splits, across the whole video."
            }
        }
    }

    pub fn round(&self) -> u32 {
        match &self.strategy {
            Strategy::SingSeg { .. } => 0,
            Strategy::SingObj { round, .. } => *round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: TaskId,
    pub worker_id: String,
    pub tracks: Vec<Track>,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub keyframe_count: usize,
    /// Client attests the worker replayed the video after the last edit.
    #[serde(default)]
    pub preview_completed: bool,
}

impl Submission {
    pub fn annotation_set(&self, video_id: &VideoId) -> AnnotationSet {
        AnnotationSet { video_id: video_id.clone(), tracks: self.tracks.clone() }
    }
}

pub fn singseg_task_id(video: &VideoId, index: usize) -> TaskId {
    TaskId(format!("{video}-seg{index:03}"))
}

pub fn singobj_task_id(video: &VideoId, round: u32) -> TaskId {
    TaskId(format!("{video}-obj-r{round:03}"))
}

/// One open task per planned segment.
pub fn gen_singseg_tasks(video: &VideoMeta, plan: &SegmentPlan, redundancy: u32) -> Vec<TaskSpec> {
    plan.segments
        .iter()
        .enumerate()
        .map(|(i, &segment)| TaskSpec {
            id: singseg_task_id(&video.id, i),
            video_id: video.id.clone(),
            strategy: Strategy::SingSeg { segment },
            redundancy,
            state: TaskState::Open,
        })
        .collect()
}

/// The round-`round` task for one more object, showing `accepted` read-only.
pub fn gen_singobj_round(video: &VideoMeta, accepted: &AnnotationSet, round: u32, redundancy: u32) -> TaskSpec {
    TaskSpec {
        id: singobj_task_id(&video.id, round),
        video_id: video.id.clone(),
        strategy: Strategy::SingObj { round, prior: accepted.clone() },
        redundancy,
        state: TaskState::Open,
    }
}

/// Mean IoU over the frames both tracks are alive; 0 when they never coexist.
pub fn shared_lifetime_iou(a: &Track, b: &Track) -> f64 {
    let Some(shared) = a.lifetime().intersect(&b.lifetime()) else {
        return 0.0;
    };
    let sum: f64 = shared
        .frames()
        .map(|f| crate::track::iou(&a.box_at(f).expect("alive"), &b.box_at(f).expect("alive")))
        .sum();
    sum / f64::from(shared.len())
}

/// Whether `candidate` re-annotates some track of `accepted`.
pub fn is_duplicate(candidate: &Track, accepted: &AnnotationSet, threshold: f64) -> bool {
    accepted.tracks.iter().any(|t| shared_lifetime_iou(candidate, t) >= threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum QualityGate {
    #[error("track {track} has {keyframes} keyframe(s); a box must be created and moved at least once")]
    TooFewKeyFrames { track: TrackId, keyframes: usize },
    #[error("single-object tasks take exactly one root track, got {roots}")]
    RootCount { roots: usize },
    #[error("the video must be previewed after the last edit before submitting")]
    PreviewMissing,
    #[error("keyframe_count {claimed} does not match the {actual} keyframes submitted")]
    KeyFrameCount { claimed: usize, actual: usize },
    #[error("submission is malformed: {reason}")]
    Malformed { reason: String },
    #[error("track {track} leaves the task's frame range {range}")]
    OutOfRange { track: TrackId, range: FrameSpan },
    #[error("submission belongs to task {got}, not {expected}")]
    WrongTask { expected: TaskId, got: TaskId },
}

/// Server-side acceptance gates for a submission to `task` on `video`.
pub fn check_submission(task: &TaskSpec, video: &VideoMeta, sub: &Submission) -> Result<(), QualityGate> {
    if sub.task_id != task.id {
        return Err(QualityGate::WrongTask { expected: task.id.clone(), got: sub.task_id.clone() });
    }
    let set = sub.annotation_set(&task.video_id);
    set.validate().map_err(|e| QualityGate::Malformed { reason: e.to_string() })?;
    let range = match &task.strategy {
        Strategy::SingSeg { segment } => *segment,
        Strategy::SingObj { .. } => video.frames(),
    };
    for t in &sub.tracks {
        let end = t.split().map_or(t.lifetime().end, |s| s.frame);
        if !range.contains(t.first_frame()) || !range.contains(end) {
            return Err(QualityGate::OutOfRange { track: t.id().clone(), range });
        }
    }
    let roots: Vec<&Track> = set.roots().collect();
    if let Strategy::SingObj { .. } = task.strategy {
        if roots.len() != 1 {
            return Err(QualityGate::RootCount { roots: roots.len() });
        }
    }
    if roots.is_empty() {
        return Err(QualityGate::RootCount { roots: 0 });
    }
    for t in &roots {
        if t.keyframe_count() < 2 {
            return Err(QualityGate::TooFewKeyFrames { track: t.id().clone(), keyframes: t.keyframe_count() });
        }
    }
    let actual = set.keyframe_count();
    if sub.keyframe_count != actual {
        return Err(QualityGate::KeyFrameCount { claimed: sub.keyframe_count, actual });
    }
    if !sub.preview_completed {
        return Err(QualityGate::PreviewMissing);
    }
    Ok(())
}
