//! Request logic, independent of the HTTP layer.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crowdmot_core::metrics::{evaluate_video, CurveConfig, MetricsReport};
use crowdmot_core::store::{
    load_annotations, FileStore, NativeAnnotationDocument, ProjectRecord, RecordKey, SchemaMode, StoreError,
};
use crowdmot_core::taskgen::{check_submission, QualityGate, Strategy, Submission, TaskId, TaskSpec, TaskState};
use crowdmot_core::track::{AnnotationSet, Track, VideoId, VideoMeta};
use crowdmot_core::workflow::{
    round_report, GroundTruthScorer, ObjectScore, RoundOutcome, Selection, TableScorer,
    WorkflowConfig, WorkflowState,
};

use crate::error::ApiError;

pub const DEFAULT_TICKET_MINUTES: i64 = 60;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock poisoned") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock poisoned")
    }
}

/// A worker's claim on one submission slot of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTicket {
    pub task_id: TaskId,
    pub worker_id: String,
    pub slot: u32,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl AssignmentTicket {
    pub fn is_live(&self, now: DateTime<Utc>) -> bool {
        now < self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewProject {
    pub id: String,
    pub workflow: WorkflowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewVideo {
    #[serde(default)]
    pub project: Option<String>,
    #[serde(flatten)]
    pub meta: VideoMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadOnlyPrior {
    pub read_only: bool,
    pub annotations: AnnotationSet,
}

/// What a worker receives with a ticket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOffer {
    pub ticket: AssignmentTicket,
    pub project: String,
    pub task: TaskSpec,
    pub video: VideoMeta,
    pub instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<ReadOnlyPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSubmission {
    pub worker_id: String,
    pub tracks: Vec<Track>,
    pub elapsed_ms: u64,
    #[serde(default)]
    pub feedback: Option<String>,
    /// Recomputed on the server when absent.
    #[serde(default)]
    pub keyframe_count: Option<usize>,
    #[serde(default)]
    pub preview_completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionReceipt {
    pub task_id: TaskId,
    pub slot: u32,
    pub task_state: TaskState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorScore {
    #[serde(default)]
    pub project: Option<String>,
    pub task_id: TaskId,
    pub worker_id: String,
    pub score: ObjectScore,
}

/// A stored submission that fails re-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub task_id: TaskId,
    pub slot: String,
    pub gate: QualityGate,
}

pub struct Service {
    store: FileStore,
    clock: Arc<dyn Clock>,
    ticket_ttl: Duration,
    /// Serializes slot claims, submissions and round advancement.
    claims: Mutex<()>,
}

fn scores_key(p: &str) -> Result<RecordKey, StoreError> {
    RecordKey::new(["projects", p, "scores"])
}

fn expired_key(p: &str, task: &str, name: Option<&str>) -> Result<RecordKey, StoreError> {
    let mut segments = vec!["projects", p, "expired", task];
    segments.extend(name);
    RecordKey::new(segments)
}

impl Service {
    pub fn new(store: FileStore, clock: Arc<dyn Clock>) -> Self {
        Self { store, clock, ticket_ttl: Duration::minutes(DEFAULT_TICKET_MINUTES), claims: Mutex::new(()) }
    }

    pub fn with_ticket_ttl(mut self, ttl: Duration) -> Self {
        self.ticket_ttl = ttl;
        self
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    fn serialized(&self) -> std::sync::MutexGuard<'_, ()> {
        self.claims.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn project_ids(&self) -> Result<Vec<String>, ApiError> {
        let dir = self.store.root().join("projects");
        let Ok(entries) = std::fs::read_dir(&dir) else { return Ok(Vec::new()) };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| RecordKey::project(name).is_ok_and(|k| self.store.exists(&k)))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// The named project, or the only one when none is named.
    fn resolve_project(&self, project: Option<&str>) -> Result<ProjectRecord, ApiError> {
        let id = match project {
            Some(p) => p.to_owned(),
            None => {
                let ids = self.project_ids()?;
                match ids.as_slice() {
                    [only] => only.clone(),
                    [] => return Err(ApiError::not_found("project")),
                    _ => return Err(ApiError::invalid("several projects exist; name one with `project`")),
                }
            }
        };
        Ok(self.store.get::<ProjectRecord>(&RecordKey::project(&id)?).map_err(|e| match e {
            StoreError::NotFound(_) => ApiError::not_found(format!("project {id}")),
            e => e.into(),
        })?.record)
    }

    fn video<'a>(project: &'a ProjectRecord, video: &str) -> Result<&'a VideoMeta, ApiError> {
        project
            .videos
            .iter()
            .find(|v| v.id.as_str() == video)
            .ok_or_else(|| ApiError::not_found(format!("video {video}")))
    }

    pub fn create_project(&self, req: NewProject) -> Result<ProjectRecord, ApiError> {
        let record = ProjectRecord { id: req.id, videos: Vec::new(), workflow: req.workflow, created: self.clock.now() };
        record.validate()?;
        let (length, overlap) = record.workflow.segment;
        crowdmot_core::merge::plan_segments(length.saturating_add(1), length, overlap)
            .map_err(|e| ApiError::invalid(format!("workflow.segment: {e}")))?;
        if record.workflow.round.redundancy == 0 {
            return Err(ApiError::Invalid { path: Some("workflow.round.redundancy".into()), message: "must be at least 1".into() });
        }
        match self.store.create(&RecordKey::project(&record.id)?, &record) {
            Err(StoreError::Conflict(_)) => Err(ApiError::conflict("Duplicate", format!("project {} exists", record.id))),
            other => other.map(|()| record).map_err(Into::into),
        }
    }

    pub fn register_video(&self, req: NewVideo) -> Result<VideoMeta, ApiError> {
        let meta = req.meta;
        meta.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
        RecordKey::new([meta.id.as_str()])?;
        let project = self.resolve_project(req.project.as_deref())?;
        let key = RecordKey::project(&project.id)?;
        self.store.update(&key, |current: Option<ProjectRecord>| {
            let mut record = current.ok_or_else(|| ApiError::not_found(format!("project {}", project.id)))?;
            if record.videos.iter().any(|v| v.id == meta.id) {
                return Err(ApiError::conflict("Duplicate", format!("video {} exists", meta.id)));
            }
            record.videos.push(meta.clone());
            Ok(record)
        })?;
        Ok(meta)
    }

    pub fn upload_ground_truth(&self, project: Option<&str>, video: &str, document: &str) -> Result<usize, ApiError> {
        let project = self.resolve_project(project)?;
        let meta = Self::video(&project, video)?;
        let set = load_annotations(document, SchemaMode::Strict)?;
        if set.video_id != meta.id {
            return Err(ApiError::Invalid {
                path: Some("video_id".into()),
                message: format!("document is for video {}, not {}", set.video_id, meta.id),
            });
        }
        set.check_frames(meta.frame_count).map_err(|e| ApiError::invalid(e.to_string()))?;
        self.store.put(&RecordKey::ground_truth(&project.id, video)?, &NativeAnnotationDocument::from(&set))?;
        Ok(set.tracks.len())
    }

    fn ground_truth(&self, project: &str, video: &VideoId) -> Result<Option<AnnotationSet>, ApiError> {
        Ok(self
            .store
            .try_get::<NativeAnnotationDocument>(&RecordKey::ground_truth(project, video.as_str())?)?
            .map(|d| AnnotationSet { video_id: d.record.video_id, tracks: d.record.tracks }))
    }

    fn all_ground_truth(&self, project: &ProjectRecord) -> Result<BTreeMap<VideoId, AnnotationSet>, ApiError> {
        let mut gt = BTreeMap::new();
        for v in &project.videos {
            if let Some(set) = self.ground_truth(&project.id, &v.id)? {
                gt.insert(v.id.clone(), set);
            }
        }
        Ok(gt)
    }

    /// Starts the workflow: posts round-0 tasks for every registered video.
    pub fn generate_tasks(&self, project: Option<&str>) -> Result<Vec<TaskSpec>, ApiError> {
        let _guard = self.serialized();
        let project = self.resolve_project(project)?;
        let state_key = RecordKey::state(&project.id)?;
        if self.store.exists(&state_key) {
            return Err(ApiError::conflict("AlreadyStarted", format!("tasks for project {} exist", project.id)));
        }
        let counts = self
            .all_ground_truth(&project)?
            .into_iter()
            .map(|(v, set)| (v, set.roots().count() as u32))
            .collect();
        let state = WorkflowState::start(project.workflow.clone(), project.videos.clone(), &counts)?;
        for task in &state.tasks {
            self.store.create(&RecordKey::task(&project.id, task.id.as_str())?, task)?;
        }
        self.store.create(&state_key, &state)?;
        Ok(state.tasks)
    }

    pub fn tasks(&self, project: Option<&str>) -> Result<Vec<TaskSpec>, ApiError> {
        let project = self.resolve_project(project)?;
        Ok(self.store.list::<TaskSpec>(&RecordKey::tasks(&project.id)?)?.into_iter().map(|(_, v)| v.record).collect())
    }

    fn submissions(&self, project: &str, task: &TaskId) -> Result<Vec<(String, Submission)>, ApiError> {
        Ok(self
            .store
            .list::<Submission>(&RecordKey::submissions(project, task.as_str())?)?
            .into_iter()
            .map(|(name, v)| (name, v.record))
            .collect())
    }

    /// Claims a free slot on the first open task this worker may take.
    pub fn next_task(&self, worker: &str, project: Option<&str>) -> Result<Option<TaskOffer>, ApiError> {
        if worker.is_empty() {
            return Err(ApiError::invalid("worker must be non-empty"));
        }
        let _guard = self.serialized();
        let now = self.clock.now();
        let projects = match project {
            Some(p) => vec![self.resolve_project(Some(p))?],
            None => self
                .project_ids()?
                .iter()
                .map(|p| self.resolve_project(Some(p)))
                .collect::<Result<_, _>>()?,
        };
        for project in projects {
            for (_, task) in self.store.list::<TaskSpec>(&RecordKey::tasks(&project.id)?)? {
                let task = task.record;
                if task.state != TaskState::Open {
                    continue;
                }
                let subs = self.submissions(&project.id, &task.id)?;
                if subs.iter().any(|(_, s)| s.worker_id == worker) {
                    continue;
                }
                let tickets = self.store.list::<AssignmentTicket>(&RecordKey::tickets(&project.id, task.id.as_str())?)?;
                if tickets.iter().any(|(_, t)| t.record.worker_id == worker && t.record.is_live(now)) {
                    continue;
                }
                let filled: Vec<u32> = subs.iter().filter_map(|(n, _)| slot_of(n)).collect();
                let free = (0..task.redundancy).find(|slot| {
                    !filled.contains(slot)
                        && tickets
                            .iter()
                            .find(|(_, t)| t.record.slot == *slot)
                            .is_none_or(|(_, t)| !t.record.is_live(now))
                });
                let Some(slot) = free else { continue };
                let key = RecordKey::ticket(&project.id, task.id.as_str(), slot)?;
                let expected = tickets.iter().find(|(_, t)| t.record.slot == slot).map(|(_, t)| t.version);
                let ticket = AssignmentTicket {
                    task_id: task.id.clone(),
                    worker_id: worker.to_owned(),
                    slot,
                    issued_at: now,
                    expires_at: now + self.ticket_ttl,
                };
                match self.store.compare_and_set(&key, expected, &ticket) {
                    Ok(_) => {
                        // keep the lapsed claim so its holder is told it expired
                        if let Some((_, old)) = tickets.iter().find(|(_, t)| t.record.slot == slot) {
                            let name = format!("s{slot:03}-v{}", old.version);
                            self.store.put(&expired_key(&project.id, task.id.as_str(), Some(&name))?, &old.record)?;
                        }
                    }
                    Err(StoreError::Conflict(_)) => continue,
                    Err(e) => return Err(e.into()),
                }
                let video = Self::video(&project, task.video_id.as_str())?.clone();
                let prior = match &task.strategy {
                    Strategy::SingObj { prior, .. } => {
                        Some(ReadOnlyPrior { read_only: true, annotations: prior.clone() })
                    }
                    Strategy::SingSeg { .. } => None,
                };
                return Ok(Some(TaskOffer {
                    ticket,
                    project: project.id.clone(),
                    instructions: task.instructions().to_owned(),
                    task,
                    video,
                    prior,
                }));
            }
        }
        Ok(None)
    }

    fn find_task(&self, task: &str, project: Option<&str>) -> Result<(ProjectRecord, TaskSpec, u64), ApiError> {
        let candidates = match project {
            Some(p) => vec![p.to_owned()],
            None => self.project_ids()?,
        };
        for p in candidates {
            if let Some(v) = self.store.try_get::<TaskSpec>(&RecordKey::task(&p, task)?)? {
                return Ok((self.resolve_project(Some(&p))?, v.record, v.version));
            }
        }
        Err(ApiError::not_found(format!("task {task}")))
    }

    /// Validates and stores a submission against the worker's live ticket.
    pub fn submit(&self, task_id: &str, project: Option<&str>, req: NewSubmission) -> Result<SubmissionReceipt, ApiError> {
        let _guard = self.serialized();
        let now = self.clock.now();
        let (project, task, task_version) = self.find_task(task_id, project)?;
        let tickets = self.store.list::<AssignmentTicket>(&RecordKey::tickets(&project.id, task_id)?)?;
        let mine: Vec<&AssignmentTicket> =
            tickets.iter().map(|(_, t)| &t.record).filter(|t| t.worker_id == req.worker_id).collect();
        let Some(ticket) = mine.iter().find(|t| t.is_live(now)) else {
            let lapsed = self
                .store
                .list::<AssignmentTicket>(&expired_key(&project.id, task_id, None)?)?
                .iter()
                .any(|(_, t)| t.record.worker_id == req.worker_id);
            return Err(if mine.is_empty() && !lapsed {
                ApiError::conflict("NoTicket", format!("worker {} holds no ticket for task {task_id}", req.worker_id))
            } else {
                ApiError::TicketExpired(task_id.to_owned())
            });
        };
        if task.state != TaskState::Open {
            return Err(ApiError::conflict("TaskClosed", format!("task {task_id} is no longer open")));
        }
        let actual: usize = req.tracks.iter().map(Track::keyframe_count).sum();
        let sub = Submission {
            task_id: task.id.clone(),
            worker_id: req.worker_id,
            tracks: req.tracks,
            elapsed_ms: req.elapsed_ms,
            feedback: req.feedback,
            keyframe_count: req.keyframe_count.unwrap_or(actual),
            preview_completed: req.preview_completed,
        };
        let video = Self::video(&project, task.video_id.as_str())?;
        check_submission(&task, video, &sub).map_err(ApiError::QualityGate)?;
        let slot = ticket.slot;
        self.store.create(&RecordKey::submission(&project.id, task_id, slot)?, &sub)?;
        self.store.remove(&RecordKey::ticket(&project.id, task_id, slot)?)?;
        let filled = self.submissions(&project.id, &task.id)?.len() as u32;
        let mut state = task.state;
        if filled >= task.redundancy {
            let mut done = task.clone();
            done.state = TaskState::Complete;
            self.store.compare_and_set(&RecordKey::task(&project.id, task_id)?, Some(task_version), &done)?;
            state = TaskState::Complete;
        }
        Ok(SubmissionReceipt { task_id: task.id, slot, task_state: state })
    }

    pub fn record_score(&self, req: SupervisorScore) -> Result<(), ApiError> {
        let project = self.resolve_project(req.project.as_deref())?;
        self.find_task(req.task_id.as_str(), Some(&project.id))?;
        self.store.update(&scores_key(&project.id)?, |current: Option<TableScorer>| {
            let mut table = current.unwrap_or_default();
            table.insert(&req.task_id, &req.worker_id, req.score);
            Ok::<_, ApiError>(table)
        })?;
        Ok(())
    }

    /// Closes the current round once every task is complete and posts the next.
    pub fn advance_round(&self, project: Option<&str>) -> Result<RoundOutcome, ApiError> {
        let _guard = self.serialized();
        let project = self.resolve_project(project)?;
        let state_key = RecordKey::state(&project.id)?;
        let stored = self
            .store
            .try_get::<WorkflowState>(&state_key)?
            .ok_or_else(|| ApiError::conflict("NotStarted", "generate tasks first"))?;
        let mut state = stored.record;
        let mut submissions = BTreeMap::new();
        for task in &mut state.tasks {
            let record = self.store.get::<TaskSpec>(&RecordKey::task(&project.id, task.id.as_str())?)?;
            task.state = record.record.state;
            let subs = self.submissions(&project.id, &task.id)?.into_iter().map(|(_, s)| s).collect::<Vec<_>>();
            submissions.insert(task.id.clone(), subs);
        }
        let (next, outcome) = match project.workflow.round.selection {
            Selection::BestAucVsGroundTruth => {
                let gt = self.all_ground_truth(&project)?;
                state.advance_round(&submissions, &GroundTruthScorer::new(&gt))?
            }
            Selection::ExternalSupervisor => {
                let table =
                    self.store.try_get::<TableScorer>(&scores_key(&project.id)?)?.map(|v| v.record).unwrap_or_default();
                state.advance_round(&submissions, &table)?
            }
        };
        for task in &next.tasks {
            self.store.create(&RecordKey::task(&project.id, task.id.as_str())?, task)?;
        }
        for (vid, set) in &outcome.accepted {
            self.store.put(
                &RecordKey::accepted(&project.id, vid.as_str(), outcome.round)?,
                &NativeAnnotationDocument::from(set),
            )?;
        }
        self.store.put(&RecordKey::report(&project.id, "rounds")?, &round_report(&next.history))?;
        self.store.compare_and_set(&state_key, Some(stored.version), &next)?;
        Ok(outcome)
    }

    fn accepted(&self, project: &ProjectRecord, video: &VideoMeta) -> Result<AnnotationSet, ApiError> {
        let state = self.store.try_get::<WorkflowState>(&RecordKey::state(&project.id)?)?;
        Ok(state
            .and_then(|s| s.record.videos.get(&video.id).map(|p| p.accepted.clone()))
            .unwrap_or_else(|| AnnotationSet::empty(video.id.clone())))
    }

    pub fn annotations(&self, project: Option<&str>, video: &str) -> Result<NativeAnnotationDocument, ApiError> {
        let project = self.resolve_project(project)?;
        let meta = Self::video(&project, video)?;
        Ok(NativeAnnotationDocument::from(&self.accepted(&project, meta)?))
    }

    pub fn evaluate(&self, project: Option<&str>, video: &str) -> Result<MetricsReport, ApiError> {
        let project = self.resolve_project(project)?;
        let meta = Self::video(&project, video)?;
        let gt = self
            .ground_truth(&project.id, &meta.id)?
            .ok_or_else(|| ApiError::NotFound { code: "NoGroundTruth", what: format!("ground truth for video {video}") })?;
        let pred = self.accepted(&project, meta)?;
        evaluate_video(&pred, &gt, &CurveConfig::default()).map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// Re-runs the gates on every stored submission.
    pub fn audit(&self, project: Option<&str>) -> Result<Vec<Violation>, ApiError> {
        let project = self.resolve_project(project)?;
        let mut out = Vec::new();
        for (_, task) in self.store.list::<TaskSpec>(&RecordKey::tasks(&project.id)?)? {
            let task = task.record;
            let video = Self::video(&project, task.video_id.as_str())?;
            for (slot, sub) in self.submissions(&project.id, &task.id)? {
                if let Err(gate) = check_submission(&task, video, &sub) {
                    out.push(Violation { task_id: task.id.clone(), slot, gate });
                }
            }
        }
        Ok(out)
    }
}

fn slot_of(name: &str) -> Option<u32> {
    name.strip_prefix('s')?.parse().ok()
}
