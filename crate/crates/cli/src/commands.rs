use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crowdmot_core::merge::{merge_chain, plan_segments, MergeConfig};
use crowdmot_core::metrics::{curve_csv, evaluate_video, CurveConfig, MetricsReport};
use crowdmot_core::pipeline::worker_seed;
use crowdmot_core::sim::{simulate_submission, SimError, WorkerModel};
use crowdmot_core::store::{report_csv, FileStore, ProjectRecord, RecordKey};
use crowdmot_core::taskgen::{StrategyKind, Submission, TaskId, TaskSpec, TaskState};
use crowdmot_core::track::{AnnotationSet, VideoId, VideoMeta};
use crowdmot_core::workflow::{
    round_report, GroundTruthScorer, RoundConfig, Selection, TableScorer, WorkflowConfig, WorkflowState,
};
use crowdmot_service::app::NewProject;
use crowdmot_service::{ApiError, Service, SystemClock};

use crate::files::{json_files, load_set, read_json, remove_dir, save_set, to_json, write, write_new, CliError, Layout};

fn check_id(path: &Path, id: &str) -> Result<(), CliError> {
    RecordKey::new([id]).map(|_| ()).map_err(|_| CliError::invalid(path, format!("field `id`: {id:?} is not a safe identifier")))
}

pub fn ingest(dir: &Path, video: &Path, gt: Option<&Path>, lineage: Option<&Path>, force: bool) -> Result<(), CliError> {
    let meta: VideoMeta = read_json(video)?;
    meta.validate().map_err(|e| CliError::invalid(video, e))?;
    check_id(video, meta.id.as_str())?;
    let layout = Layout(dir);
    let gt_set = gt.map(|p| load_set(p, Some(&meta.id), lineage).map(|s| (p, s))).transpose()?;
    if let Some((path, set)) = &gt_set {
        if set.video_id != meta.id {
            return Err(CliError::invalid(path, format!("field `video_id`: {} does not match video {}", set.video_id, meta.id)));
        }
        set.check_frames(meta.frame_count).map_err(|e| CliError::invalid(path, e))?;
    }
    write_new(&layout.video(&meta.id), &to_json(&meta), force)?;
    if let Some((_, set)) = gt_set {
        save_set(&layout.gt(&meta.id), &set, force)?;
        println!("ingested {} with {} ground-truth tracks", meta.id, set.tracks.len());
    } else {
        println!("ingested {}", meta.id);
    }
    Ok(())
}

fn load_videos(dir: &Path) -> Result<Vec<VideoMeta>, CliError> {
    let layout = Layout(dir);
    json_files(&layout.videos())?.iter().map(|p| read_json(p)).collect()
}

fn load_gt(dir: &Path, videos: &[VideoMeta]) -> Result<BTreeMap<VideoId, AnnotationSet>, CliError> {
    let layout = Layout(dir);
    let mut gt = BTreeMap::new();
    for v in videos {
        let path = layout.gt(&v.id);
        if path.exists() {
            gt.insert(v.id.clone(), load_set(&path, None, None)?);
        }
    }
    Ok(gt)
}

pub fn generate(
    dir: &Path,
    strategy: StrategyKind,
    redundancy: u32,
    plan: (u32, u32),
    auc_filter: f64,
    force: bool,
) -> Result<(), CliError> {
    let layout = Layout(dir);
    if redundancy == 0 {
        return Err(CliError::Validation("--redundancy must be at least 1".into()));
    }
    if !force && layout.state().exists() {
        return Err(CliError::Validation(format!("{} exists; pass --force to start over", layout.state().display())));
    }
    let videos = load_videos(dir)?;
    if videos.is_empty() {
        return Err(CliError::Validation(format!("no videos in {}; run ingest first", layout.videos().display())));
    }
    let counts = load_gt(dir, &videos)?.into_iter().map(|(v, s)| (v, s.roots().count() as u32)).collect();
    let config = WorkflowConfig {
        strategy,
        round: RoundConfig { auc_filter, redundancy, ..RoundConfig::default() },
        merge: MergeConfig::default(),
        segment: plan,
    };
    let state = WorkflowState::start(config, videos, &counts).map_err(|e| CliError::Validation(e.to_string()))?;
    remove_dir(&layout.tasks())?;
    remove_dir(&layout.submissions())?;
    for task in &state.tasks {
        write(&layout.task(task.id.as_str()), &to_json(task))?;
    }
    write(&layout.state(), &to_json(&state))?;
    println!("generated {} tasks", state.tasks.len());
    Ok(())
}

fn load_state(dir: &Path) -> Result<WorkflowState, CliError> {
    let path = Layout(dir).state();
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no workflow state; run `tasks generate` first", path.display())));
    }
    read_json(&path)
}

pub fn simulate(dir: &Path, model: &Path, seed: u64, force: bool) -> Result<(), CliError> {
    let layout = Layout(dir);
    let template: WorkerModel = read_json(model)?;
    template.validate().map_err(|e| CliError::invalid(model, e))?;
    let mut state = load_state(dir)?;
    let videos: Vec<VideoMeta> = state.videos.values().map(|p| p.meta.clone()).collect();
    let gt = load_gt(dir, &videos)?;
    let mut written = 0;
    for task in &mut state.tasks {
        let mut record: TaskSpec = read_json(&layout.task(task.id.as_str()))?;
        if record.state != TaskState::Open && !force {
            continue;
        }
        let truth = gt.get(&task.video_id).ok_or_else(|| {
            CliError::Validation(format!("no ground truth for video {}; simulation needs it", task.video_id))
        })?;
        let mut any = false;
        for slot in 0..task.redundancy {
            let worker = template.with_seed(worker_seed(seed, slot));
            match simulate_submission(&worker, task, truth) {
                Ok(sub) => {
                    let path = layout.task_submissions(task.id.as_str()).join(format!("{}.json", sub.worker_id));
                    write_new(&path, &to_json(&sub), force)?;
                    any = true;
                    written += 1;
                }
                Err(SimError::NoObjectsAvailable(_)) => {}
                Err(e) => return Err(CliError::Validation(e.to_string())),
            }
        }
        record.state = if any { TaskState::Complete } else { TaskState::Stopped };
        task.state = record.state;
        write(&layout.task(task.id.as_str()), &to_json(&record))?;
    }
    write(&layout.state(), &to_json(&state))?;
    println!("wrote {written} simulated submissions");
    Ok(())
}

pub fn merge(
    plan: (u32, u32),
    frame_count: u32,
    min_mean_iou: f64,
    segments: &[std::path::PathBuf],
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let plan = plan_segments(frame_count, plan.0, plan.1).map_err(|e| CliError::Validation(format!("--plan: {e}")))?;
    let sets = segments.iter().map(|p| load_set(p, None, None)).collect::<Result<Vec<_>, _>>()?;
    let cfg = MergeConfig { min_mean_iou, ..MergeConfig::default() };
    let merged = merge_chain(&sets, &plan, &cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    save_set(out, &merged, force)?;
    println!("merged {} segments into {} tracks", sets.len(), merged.tracks.len());
    Ok(())
}

/// Mean AUC, TrAcc and Precision@20 as a three-column table.
pub fn format_scores(report: &MetricsReport) -> String {
    format!(
        "{:<8}{:<8}{}\n{:<8.3}{:<8.3}{:.3}\n",
        "AUC", "TrAcc", "Precision", report.mean_auc, report.mean_tracc, report.mean_precision20
    )
}

pub fn eval(pred: &Path, gt: &Path, out: Option<&Path>, curves: Option<&Path>, force: bool) -> Result<(), CliError> {
    let mut gt_set = load_set(gt, None, None)?;
    let mut pred_set = load_set(pred, Some(&gt_set.video_id), None)?;
    // CSV files carry no video id; adopt the other side's
    if gt.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        gt_set.video_id = pred_set.video_id.clone();
    }
    if pred.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        pred_set.video_id = gt_set.video_id.clone();
    }
    let cfg = CurveConfig::default();
    let report = evaluate_video(&pred_set, &gt_set, &cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    print!("{}", format_scores(&report));
    if let Some(out) = out {
        write_new(out, &to_json(&report), force)?;
    }
    if let Some(dir) = curves {
        let (success, precision) = report.mean_curves();
        write_new(&dir.join("success.csv"), &curve_csv(&cfg.iou_thresholds, &success), force)?;
        write_new(&dir.join("precision.csv"), &curve_csv(&cfg.dist_thresholds, &precision), force)?;
    }
    Ok(())
}

pub fn advance(dir: &Path, scores: Option<&Path>) -> Result<(), CliError> {
    let layout = Layout(dir);
    let mut state = load_state(dir)?;
    let mut submissions: BTreeMap<TaskId, Vec<Submission>> = BTreeMap::new();
    for task in &mut state.tasks {
        let record: TaskSpec = read_json(&layout.task(task.id.as_str()))?;
        task.state = record.state;
        let subs = json_files(&layout.task_submissions(task.id.as_str()))?
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<Vec<Submission>, _>>()?;
        submissions.insert(task.id.clone(), subs);
    }
    let videos: Vec<VideoMeta> = state.videos.values().map(|p| p.meta.clone()).collect();
    let result = match state.config.round.selection {
        Selection::BestAucVsGroundTruth => {
            let gt = load_gt(dir, &videos)?;
            state.advance_round(&submissions, &GroundTruthScorer::new(&gt))
        }
        Selection::ExternalSupervisor => {
            let path = scores.ok_or_else(|| CliError::Validation("--scores is required for external selection".into()))?;
            let table: TableScorer = read_json(path)?;
            state.advance_round(&submissions, &table)
        }
    };
    let (next, outcome) = result.map_err(|e| CliError::Validation(e.to_string()))?;
    for task in &next.tasks {
        write(&layout.task(task.id.as_str()), &to_json(task))?;
    }
    for (vid, progress) in &next.videos {
        save_set(&layout.accepted(vid), &progress.accepted, true)?;
    }
    let rows = round_report(&next.history);
    write(&layout.reports().join("rounds.json"), &to_json(&rows))?;
    write(&layout.reports().join("rounds.csv"), &report_csv(&rows))?;
    write(&layout.state(), &to_json(&next))?;
    println!(
        "round {}: {} accepted, {} filtered out, {} stopped, {} tasks posted",
        outcome.round,
        outcome.accepted.len(),
        outcome.filtered_out.len(),
        outcome.stopped.len(),
        next.tasks.len()
    );
    Ok(())
}

pub fn serve(addr: Option<&str>, data: &Path, project: Option<&Path>) -> Result<(), CliError> {
    let addr = match addr {
        Some(a) => a.parse().map_err(|_| CliError::Validation(format!("--addr: cannot parse {a:?}")))?,
        None => crowdmot_service::listen_addr_from_env()
            .map_err(|e| CliError::Validation(format!("{}: {e}", crowdmot_service::ADDR_ENV)))?,
    };
    let store = FileStore::open(data).map_err(|e| CliError::Io(e.to_string()))?;
    let service = Arc::new(Service::new(store, Arc::new(SystemClock)));
    if let Some(path) = project {
        let req: NewProject = read_json(path)?;
        if !service.store().exists(&RecordKey::project(&req.id).map_err(|e| CliError::invalid(path, e))?) {
            let record: ProjectRecord = service.create_project(req).map_err(|e: ApiError| CliError::invalid(path, e))?;
            println!("registered project {}", record.id);
        }
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    println!("listening on {addr}");
    runtime.block_on(crowdmot_service::serve(addr, service)).map_err(|e| CliError::Io(format!("{addr}: {e}")))
}
