//! Round orchestration: best-of-redundancy selection, duplicate screening,
//! the AUC filter between rounds and the stop rule for object propagation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::{merge_chain, MergeConfig, MergeError, SegmentPlan};
use crate::metrics::{evaluate_video, CurveConfig, MetricsReport};
use crate::taskgen::{
    gen_singobj_round, gen_singseg_tasks, is_duplicate, Strategy, StrategyKind, Submission, TaskId, TaskSpec,
    TaskState, DEFAULT_DUPLICATE_THRESHOLD,
};
use crate::track::{AnnotationSet, LineageLabel, SplitEvent, Track, TrackId, VideoId, VideoMeta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("no submissions to select from")]
    NoSubmissions,
    #[error("task {0} is still open")]
    RoundIncomplete(TaskId),
    #[error("no ground truth for video {0}")]
    NoGroundTruth(VideoId),
    #[error("unknown video {0}")]
    UnknownVideo(VideoId),
    #[error("no score available for submission by {worker} to task {task}")]
    MissingScore { task: TaskId, worker: String },
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("workflow already finished")]
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Emulated supervision: score submissions against ground truth.
    #[default]
    BestAucVsGroundTruth,
    /// Scores supplied by an operator or external reviewer.
    ExternalSupervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterTarget {
    /// AUC of the object accepted this round.
    #[default]
    NewestObject,
    /// Mean AUC over every object accepted so far, including this round's.
    AcceptedSetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub auc_filter: f64,
    pub redundancy: u32,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub filter_target: FilterTarget,
    #[serde(default = "default_duplicate_threshold")]
    pub duplicate_threshold: f64,
    /// Round cap for videos without ground truth to size it from.
    #[serde(default)]
    pub max_rounds: Option<u32>,
}

fn default_duplicate_threshold() -> f64 {
    DEFAULT_DUPLICATE_THRESHOLD
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            auc_filter: 0.4,
            redundancy: 5,
            selection: Selection::BestAucVsGroundTruth,
            filter_target: FilterTarget::NewestObject,
            duplicate_threshold: DEFAULT_DUPLICATE_THRESHOLD,
            max_rounds: None,
        }
    }
}

/// Summary quality of one submission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ObjectScore {
    pub auc: f64,
    pub tracc: f64,
    pub precision20: f64,
}

impl From<&MetricsReport> for ObjectScore {
    fn from(r: &MetricsReport) -> Self {
        Self { auc: r.mean_auc, tracc: r.mean_tracc, precision20: r.mean_precision20 }
    }
}

/// Rates a submission to a task.
pub trait SubmissionScorer {
    fn score(&self, task: &TaskSpec, sub: &Submission) -> Result<ObjectScore, WorkflowError>;
}

/// Scores against ground truth: a segment submission against the ground truth
/// clipped to the segment, an object submission against the ground-truth
/// object it overlaps most plus that object's progeny.
pub struct GroundTruthScorer<'a> {
    pub gt: &'a BTreeMap<VideoId, AnnotationSet>,
    pub curves: CurveConfig,
}

impl<'a> GroundTruthScorer<'a> {
    pub fn new(gt: &'a BTreeMap<VideoId, AnnotationSet>) -> Self {
        Self { gt, curves: CurveConfig::default() }
    }
}

impl SubmissionScorer for GroundTruthScorer<'_> {
    fn score(&self, task: &TaskSpec, sub: &Submission) -> Result<ObjectScore, WorkflowError> {
        let gt = self.gt.get(&task.video_id).ok_or_else(|| WorkflowError::NoGroundTruth(task.video_id.clone()))?;
        let pred = sub.annotation_set(&task.video_id);
        match &task.strategy {
            Strategy::SingSeg { segment } => {
                let window = gt.window(*segment);
                let report = evaluate_video(&pred, &window, &self.curves).expect("same video");
                Ok((&report).into())
            }
            Strategy::SingObj { .. } => Ok(score_object(&pred, gt, &self.curves)),
        }
    }
}

/// Scores one annotated object (a root and its progeny) against the ground
/// truth object its root overlaps most.
pub fn score_object(object: &AnnotationSet, gt: &AnnotationSet, curves: &CurveConfig) -> ObjectScore {
    let Some(root) = object.roots().next() else {
        return ObjectScore::default();
    };
    let best = gt
        .tracks
        .iter()
        .map(|g| (crate::metrics::mean_iou_over_gt(root, g), g))
        .filter(|(s, _)| *s > 0.0)
        .fold(None::<(f64, &Track)>, |acc, (s, g)| match acc {
            Some((bs, _)) if bs >= s => acc,
            _ => Some((s, g)),
        });
    let Some((_, target)) = best else {
        return ObjectScore::default();
    };
    let mut subtree = AnnotationSet {
        video_id: gt.video_id.clone(),
        tracks: gt.subtree(target.id()).into_iter().cloned().collect(),
    };
    // a matched child becomes the root of its own scoring subtree
    if let Some(first) = subtree.tracks.first_mut() {
        first.set_parent(None);
    }
    let pred = AnnotationSet { video_id: gt.video_id.clone(), tracks: object.tracks.clone() };
    let report = evaluate_video(&pred, &subtree, curves).expect("same video");
    (&report).into()
}

/// Scores looked up by `(task, worker)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableScorer {
    pub scores: HashMap<String, ObjectScore>,
}

impl TableScorer {
    pub fn key(task: &TaskId, worker: &str) -> String {
        format!("{task}/{worker}")
    }

    pub fn insert(&mut self, task: &TaskId, worker: &str, score: ObjectScore) {
        self.scores.insert(Self::key(task, worker), score);
    }
}

impl SubmissionScorer for TableScorer {
    fn score(&self, task: &TaskSpec, sub: &Submission) -> Result<ObjectScore, WorkflowError> {
        self.scores
            .get(&Self::key(&task.id, &sub.worker_id))
            .copied()
            .ok_or_else(|| WorkflowError::MissingScore { task: task.id.clone(), worker: sub.worker_id.clone() })
    }
}

/// Index and score of the highest-AUC submission; the earliest one wins ties.
pub fn select_best(
    submissions: &[Submission],
    task: &TaskSpec,
    scorer: &dyn SubmissionScorer,
) -> Result<(usize, ObjectScore), WorkflowError> {
    let mut best: Option<(usize, ObjectScore)> = None;
    for (i, sub) in submissions.iter().enumerate() {
        let s = scorer.score(task, sub)?;
        if best.is_none_or(|(_, b)| s.auc > b.auc) {
            best = Some((i, s));
        }
    }
    best.ok_or(WorkflowError::NoSubmissions)
}

/// Keeps videos scoring at least `threshold`; strictly lower scores are removed.
pub fn filter_round(scores: &BTreeMap<VideoId, f64>, threshold: f64) -> (BTreeSet<VideoId>, BTreeSet<VideoId>) {
    let (kept, removed): (Vec<_>, Vec<_>) = scores.iter().partition(|(_, &s)| s >= threshold);
    (kept.into_iter().map(|(v, _)| v.clone()).collect(), removed.into_iter().map(|(v, _)| v.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoStatus {
    Active,
    /// Removed by the AUC filter.
    Filtered,
    /// Every worker re-annotated an existing object.
    Stopped,
    /// Round cap reached or segment merge finished.
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoProgress {
    pub meta: VideoMeta,
    pub accepted: AnnotationSet,
    pub object_scores: Vec<ObjectScore>,
    pub status: VideoStatus,
    pub max_rounds: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub strategy: StrategyKind,
    pub round: RoundConfig,
    #[serde(default)]
    pub merge: MergeConfig,
    #[serde(default = "default_plan_params")]
    pub segment: (u32, u32),
}

fn default_plan_params() -> (u32, u32) {
    (crate::merge::DEFAULT_SEGMENT_LENGTH, crate::merge::DEFAULT_SEGMENT_OVERLAP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub config: WorkflowConfig,
    pub round: u32,
    pub videos: BTreeMap<VideoId, VideoProgress>,
    /// Tasks posted for the current round.
    pub tasks: Vec<TaskSpec>,
    pub history: Vec<RoundOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    /// Accepted sets of videos that gained annotations this round.
    pub accepted: BTreeMap<VideoId, AnnotationSet>,
    pub filtered_out: BTreeSet<VideoId>,
    pub stopped: BTreeSet<VideoId>,
    /// Best submission score per video evaluated this round.
    pub scores: BTreeMap<VideoId, ObjectScore>,
    pub raw: Aggregate,
    pub filtered: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregate {
    pub videos: usize,
    pub mean_auc: f64,
    pub mean_tracc: f64,
    pub mean_precision20: f64,
}

impl Aggregate {
    fn over<'a>(scores: impl IntoIterator<Item = &'a ObjectScore>) -> Self {
        let mut a = Aggregate::default();
        for s in scores {
            a.videos += 1;
            a.mean_auc += s.auc;
            a.mean_tracc += s.tracc;
            a.mean_precision20 += s.precision20;
        }
        if a.videos > 0 {
            let n = a.videos as f64;
            a.mean_auc /= n;
            a.mean_tracc /= n;
            a.mean_precision20 /= n;
        }
        a
    }
}

/// One row of the per-round summary: raw and filtered aggregates per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub round: u32,
    pub filtered: bool,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

/// Two rows per round: `NonIterative`, `NonIterative-Filtered` for the first
/// round and `Iterative`, `Iterative-Filtered` after it.
pub fn round_report(history: &[RoundOutcome]) -> Vec<ReportRow> {
    let mut rows = Vec::with_capacity(history.len() * 2);
    for o in history {
        let base = match o.round {
            0 => "NonIterative".to_owned(),
            1 => "Iterative".to_owned(),
            r => format!("Iterative-R{r}"),
        };
        rows.push(ReportRow { name: base.clone(), round: o.round, filtered: false, aggregate: o.raw });
        rows.push(ReportRow { name: format!("{base}-Filtered"), round: o.round, filtered: true, aggregate: o.filtered });
    }
    rows
}

impl WorkflowState {
    /// Posts round-0 tasks for every video. `object_counts` caps the number
    /// of object rounds per video when known (e.g. from ground truth).
    pub fn start(
        config: WorkflowConfig,
        videos: Vec<VideoMeta>,
        object_counts: &BTreeMap<VideoId, u32>,
    ) -> Result<Self, WorkflowError> {
        let mut progress = BTreeMap::new();
        let mut tasks = Vec::new();
        let (length, overlap) = config.segment;
        for meta in videos {
            let accepted = AnnotationSet::empty(meta.id.clone());
            let max_rounds = object_counts.get(&meta.id).copied().or(config.round.max_rounds);
            match config.strategy {
                StrategyKind::SingSeg => {
                    let plan = crate::merge::plan_segments(meta.frame_count, length, overlap)?;
                    tasks.extend(gen_singseg_tasks(&meta, &plan, config.round.redundancy));
                }
                StrategyKind::SingObj => {
                    if max_rounds != Some(0) {
                        tasks.push(gen_singobj_round(&meta, &accepted, 0, config.round.redundancy));
                    }
                }
            }
            let status = if config.strategy == StrategyKind::SingObj && max_rounds == Some(0) {
                VideoStatus::Finished
            } else {
                VideoStatus::Active
            };
            progress.insert(
                meta.id.clone(),
                VideoProgress { meta, accepted, object_scores: Vec::new(), status, max_rounds },
            );
        }
        Ok(Self { config, round: 0, videos: progress, tasks, history: Vec::new() })
    }

    pub fn is_finished(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn plan_for(&self, video: &VideoMeta) -> Result<SegmentPlan, WorkflowError> {
        let (length, overlap) = self.config.segment;
        Ok(crate::merge::plan_segments(video.frame_count, length, overlap)?)
    }

    /// Closes the current round. SingSeg merges the best submission of every
    /// segment into the video's accepted set and ends; SingObj accepts at
    /// most one new object per video and posts the next round's tasks.
    pub fn advance_round(
        &self,
        submissions: &BTreeMap<TaskId, Vec<Submission>>,
        scorer: &dyn SubmissionScorer,
    ) -> Result<(WorkflowState, RoundOutcome), WorkflowError> {
        if self.tasks.is_empty() {
            return Err(WorkflowError::Finished);
        }
        if let Some(open) = self.tasks.iter().find(|t| t.state == TaskState::Open) {
            return Err(WorkflowError::RoundIncomplete(open.id.clone()));
        }
        match self.config.strategy {
            StrategyKind::SingSeg => self.finish_singseg(submissions, scorer),
            StrategyKind::SingObj => self.advance_singobj(submissions, scorer),
        }
    }

    fn finish_singseg(
        &self,
        submissions: &BTreeMap<TaskId, Vec<Submission>>,
        scorer: &dyn SubmissionScorer,
    ) -> Result<(WorkflowState, RoundOutcome), WorkflowError> {
        let mut next = self.clone();
        let mut outcome = RoundOutcome::empty(self.round);
        for (vid, progress) in &self.videos {
            let plan = self.plan_for(&progress.meta)?;
            let tasks: Vec<&TaskSpec> = self.tasks.iter().filter(|t| &t.video_id == vid).collect();
            let mut per_segment = Vec::with_capacity(plan.len());
            let mut segment_scores = Vec::new();
            for segment in &plan.segments {
                let task = tasks
                    .iter()
                    .find(|t| matches!(t.strategy, Strategy::SingSeg { segment: s } if s == *segment));
                let chosen = task.and_then(|t| {
                    let subs = submissions.get(&t.id).map(Vec::as_slice).unwrap_or(&[]);
                    select_best(subs, t, scorer).ok().map(|(i, s)| (subs[i].annotation_set(vid), s))
                });
                match chosen {
                    Some((set, score)) => {
                        segment_scores.push(score);
                        per_segment.push(set);
                    }
                    None => per_segment.push(AnnotationSet::empty(vid.clone())),
                }
            }
            let merged = merge_chain(&per_segment, &plan, &self.config.merge)?;
            let entry = next.videos.get_mut(vid).expect("same keys");
            entry.accepted = merged.clone();
            entry.status = VideoStatus::Finished;
            entry.object_scores = segment_scores.clone();
            let score = Aggregate::over(&segment_scores);
            outcome.scores.insert(
                vid.clone(),
                ObjectScore { auc: score.mean_auc, tracc: score.mean_tracc, precision20: score.mean_precision20 },
            );
            outcome.accepted.insert(vid.clone(), merged);
        }
        outcome.raw = Aggregate::over(outcome.scores.values());
        outcome.filtered = outcome.raw;
        next.tasks.clear();
        next.history.push(outcome.clone());
        next.round += 1;
        Ok((next, outcome))
    }

    fn advance_singobj(
        &self,
        submissions: &BTreeMap<TaskId, Vec<Submission>>,
        scorer: &dyn SubmissionScorer,
    ) -> Result<(WorkflowState, RoundOutcome), WorkflowError> {
        let cfg = &self.config.round;
        let mut next = self.clone();
        let mut outcome = RoundOutcome::empty(self.round);
        let mut candidates: BTreeMap<VideoId, (Vec<Track>, ObjectScore)> = BTreeMap::new();

        for task in &self.tasks {
            let vid = &task.video_id;
            let progress = self.videos.get(vid).ok_or_else(|| WorkflowError::UnknownVideo(vid.clone()))?;
            if task.state == TaskState::Stopped {
                outcome.stopped.insert(vid.clone());
                continue;
            }
            let subs = submissions.get(&task.id).map(Vec::as_slice).unwrap_or(&[]);
            let fresh: Vec<Submission> = subs
                .iter()
                .filter(|s| {
                    s.tracks
                        .iter()
                        .find(|t| t.parent_id().is_none())
                        .is_some_and(|r| !is_duplicate(r, &progress.accepted, cfg.duplicate_threshold))
                })
                .cloned()
                .collect();
            if fresh.is_empty() {
                outcome.stopped.insert(vid.clone());
                continue;
            }
            let (i, score) = select_best(&fresh, task, scorer)?;
            outcome.scores.insert(vid.clone(), score);
            candidates.insert(vid.clone(), (fresh[i].tracks.clone(), score));
        }

        // filter on the newest object's score or on the running set mean
        let filter_scores: BTreeMap<VideoId, f64> = candidates
            .iter()
            .map(|(vid, (_, score))| {
                let s = match cfg.filter_target {
                    FilterTarget::NewestObject => score.auc,
                    FilterTarget::AcceptedSetMean => {
                        let prior = &self.videos[vid].object_scores;
                        (prior.iter().map(|p| p.auc).sum::<f64>() + score.auc) / (prior.len() + 1) as f64
                    }
                };
                (vid.clone(), s)
            })
            .collect();
        let (kept, removed) = filter_round(&filter_scores, cfg.auc_filter);

        for vid in &kept {
            let (tracks, score) = &candidates[vid];
            let entry = next.videos.get_mut(vid).expect("known video");
            append_object(&mut entry.accepted, tracks, self.round);
            entry.object_scores.push(*score);
            outcome.accepted.insert(vid.clone(), entry.accepted.clone());
        }
        for vid in &removed {
            next.videos.get_mut(vid).expect("known video").status = VideoStatus::Filtered;
        }
        for vid in &outcome.stopped {
            next.videos.get_mut(vid).expect("known video").status = VideoStatus::Stopped;
        }
        outcome.filtered_out = removed;
        outcome.raw = Aggregate::over(outcome.scores.values());
        outcome.filtered = Aggregate::over(kept.iter().map(|v| &outcome.scores[v]));

        let next_round = self.round + 1;
        next.tasks.clear();
        for vid in &kept {
            let entry = next.videos.get_mut(vid).expect("known video");
            if entry.max_rounds.is_some_and(|cap| next_round >= cap) {
                entry.status = VideoStatus::Finished;
                continue;
            }
            next.tasks.push(gen_singobj_round(&entry.meta, &entry.accepted, next_round, cfg.redundancy));
        }
        next.round = next_round;
        next.history.push(outcome.clone());
        Ok((next, outcome))
    }
}

impl RoundOutcome {
    fn empty(round: u32) -> Self {
        Self {
            round,
            accepted: BTreeMap::new(),
            filtered_out: BTreeSet::new(),
            stopped: BTreeSet::new(),
            scores: BTreeMap::new(),
            raw: Aggregate::default(),
            filtered: Aggregate::default(),
        }
    }
}

/// Appends one object (root and progeny) under fresh ids `r{round}-…` and the
/// next free root label.
fn append_object(accepted: &mut AnnotationSet, tracks: &[Track], round: u32) {
    let next_root = accepted.tracks.iter().map(|t| t.label().root_number()).max().unwrap_or(0) + 1;
    let mut taken: BTreeSet<TrackId> = accepted.tracks.iter().map(|t| t.id().clone()).collect();
    let mut rename: HashMap<TrackId, TrackId> = HashMap::new();
    for t in tracks {
        let mut id = TrackId(format!("r{round}-{}", t.id()));
        let mut n = 1;
        while taken.contains(&id) {
            id = TrackId(format!("r{round}-{}.{n}", t.id()));
            n += 1;
        }
        taken.insert(id.clone());
        rename.insert(t.id().clone(), id);
    }
    for t in tracks {
        let mut t = t.clone();
        t.set_id(rename[t.id()].clone());
        t.set_parent(t.parent_id().map(|p| rename.get(p).cloned().unwrap_or_else(|| p.clone())));
        if let Some(s) = t.split().cloned() {
            t.set_split(Some(SplitEvent { frame: s.frame, children: s.children.map(|c| rename[&c].clone()) }));
        }
        if t.parent_id().is_none() {
            t.set_label(LineageLabel::root(next_root).expect("positive"));
        }
        accepted.tracks.push(t);
    }
    accepted.repair_lineage();
}
