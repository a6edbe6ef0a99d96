//! Synthetic annotators.
//!
//! A [`WorkerModel`] turns ground truth into a plausible crowd submission by
//! applying the failure modes seen with real workers: objects left out,
//! late starts, box jitter, sparse keyframes, re-annotating an object that is
//! already done and missed splits. Every draw comes from one ChaCha stream
//! keyed by `(seed, task id)` and is made whether or not the corresponding
//! error is enabled, so changing one magnitude never reshuffles the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskgen::{is_duplicate, Strategy, Submission, TaskSpec, DEFAULT_DUPLICATE_THRESHOLD};
use crate::track::{
    AnnotationSet, BoundingBox, ChildSlot, FrameSpan, KeyFrame, LineageLabel, SplitEvent, Track, TrackId,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no unannotated object left in video {0}")]
    NoObjectsAvailable(String),
    #[error("invalid worker model: {0}")]
    BadModel(String),
    #[error("ground truth is for video {gt}, task is for {task}")]
    VideoMismatch { gt: String, task: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerModel {
    pub seed: u64,
    pub late_start_frames: u32,
    /// Gaussian sigma of the box-center offset, in pixels.
    pub center_jitter_px: f64,
    /// Gaussian sigma of the relative width/height error.
    pub size_jitter_frac: f64,
    pub keyframe_stride: u32,
    pub omission_prob: f64,
    pub duplicate_prob: f64,
    pub missed_split_prob: f64,
}

impl Default for WorkerModel {
    fn default() -> Self {
        Self {
            seed: 0,
            late_start_frames: 0,
            center_jitter_px: 0.0,
            size_jitter_frac: 0.0,
            keyframe_stride: 1,
            omission_prob: 0.0,
            duplicate_prob: 0.0,
            missed_split_prob: 0.0,
        }
    }
}

impl WorkerModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("omission_prob", self.omission_prob),
            ("duplicate_prob", self.duplicate_prob),
            ("missed_split_prob", self.missed_split_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::BadModel(format!("{name} = {p} is not a probability")));
            }
        }
        if self.keyframe_stride == 0 {
            return Err(SimError::BadModel("keyframe_stride must be at least 1".into()));
        }
        if !(self.center_jitter_px >= 0.0 && self.center_jitter_px.is_finite()) {
            return Err(SimError::BadModel("center_jitter_px must be finite and non-negative".into()));
        }
        if !(self.size_jitter_frac >= 0.0 && self.size_jitter_frac.is_finite()) {
            return Err(SimError::BadModel("size_jitter_frac must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn worker_id(&self) -> String {
        format!("sim-{}", self.seed)
    }
}

/// FNV-1a; stable across platforms and releases.
fn stream_id(task: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn rng_for(model: &WorkerModel, task: &TaskSpec) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(stream_id(task.id.as_str()));
    rng
}

/// A track being traced by the simulated worker.
struct Draft {
    samples: Vec<(u32, BoundingBox)>,
    split: Option<(u32, Box<Draft>, Box<Draft>)>,
}

struct Tracer<'a> {
    gt: &'a AnnotationSet,
    model: &'a WorkerModel,
    rng: &'a mut ChaCha8Rng,
}

impl Tracer<'_> {
    /// Follows `track` from `start`, either marking its split or, when the
    /// split is missed, carrying on along its first child.
    fn follow(&mut self, track: &Track, start: u32) -> Draft {
        let mut samples = Vec::new();
        let mut current = track;
        let mut from = start;
        loop {
            let life = current.lifetime();
            samples.extend((from..=life.end).map(|f| (f, current.box_at(f).expect("inside lifetime"))));
            let Some(split) = current.split() else {
                return Draft { samples, split: None };
            };
            let children: Vec<&Track> = split.children.iter().filter_map(|c| self.gt.get(c)).collect();
            let missed = self.rng.random::<f64>() < self.model.missed_split_prob;
            if children.len() != 2 {
                return Draft { samples, split: None };
            }
            if missed {
                current = children[0];
                from = split.frame;
                continue;
            }
            let a = self.follow(children[0], split.frame);
            let b = self.follow(children[1], split.frame);
            return Draft { samples, split: Some((split.frame, Box::new(a), Box::new(b))) };
        }
    }

    fn jitter(&mut self, b: &BoundingBox) -> BoundingBox {
        let z: [f64; 4] = std::array::from_fn(|_| self.rng.sample(StandardNormal));
        let m = self.model;
        let w = b.w() * (1.0 + m.size_jitter_frac * z[2]).max(0.05);
        let h = b.h() * (1.0 + m.size_jitter_frac * z[3]).max(0.05);
        // keeps the center fixed up to the offset; exact when noise is zero
        let x = b.x() + m.center_jitter_px * z[0] + (b.w() - w) / 2.0;
        let y = b.y() + m.center_jitter_px * z[1] + (b.h() - h) / 2.0;
        BoundingBox::new(x, y, w, h).expect("positive finite box")
    }

    /// Samples keyframes every `keyframe_stride` frames plus the last frame.
    fn keyframes(&mut self, samples: &[(u32, BoundingBox)]) -> Vec<KeyFrame> {
        let stride = self.model.keyframe_stride as usize;
        let last = samples.len() - 1;
        let picks: Vec<usize> = (0..samples.len()).filter(|&i| i % stride == 0 || i == last).collect();
        picks
            .into_iter()
            .map(|i| {
                let (f, b) = samples[i];
                KeyFrame::new(f, self.jitter(&b))
            })
            .collect()
    }

    fn emit(&mut self, draft: &Draft, id: TrackId, label: LineageLabel, parent: Option<TrackId>, out: &mut Vec<Track>) {
        let key_frames = self.keyframes(&draft.samples);
        let split = draft.split.as_ref().map(|(frame, _, _)| SplitEvent {
            frame: *frame,
            children: [TrackId(format!("{id}.1")), TrackId(format!("{id}.2"))],
        });
        let track = Track::from_parts(id.clone(), label.clone(), parent, key_frames, split.clone())
            .expect("traced tracks are well formed");
        out.push(track);
        if let (Some((_, a, b)), Some(split)) = (&draft.split, split) {
            let [ca, cb] = split.children;
            self.emit(a, ca, label.child(ChildSlot::First), Some(id.clone()), out);
            self.emit(b, cb, label.child(ChildSlot::Second), Some(id), out);
        }
    }

    /// Traces one object from its root, applying the late start. `None` when
    /// the delay runs past the root's lifetime.
    fn object(&mut self, root: &Track) -> Option<Draft> {
        let life = root.lifetime();
        let start = life.start.checked_add(self.model.late_start_frames)?;
        (start <= life.end).then(|| self.follow(root, start))
    }
}

/// Produces one simulated worker's submission for `task`.
pub fn simulate_submission(model: &WorkerModel, task: &TaskSpec, gt: &AnnotationSet) -> Result<Submission, SimError> {
    model.validate()?;
    if gt.video_id != task.video_id {
        return Err(SimError::VideoMismatch { gt: gt.video_id.to_string(), task: task.video_id.to_string() });
    }
    let mut rng = rng_for(model, task);
    let mut tracks = Vec::new();
    match &task.strategy {
        Strategy::SingSeg { segment } => {
            let window = gt.window(*segment);
            let roots: Vec<Track> = window.roots().cloned().collect();
            let mut tracer = Tracer { gt: &window, model, rng: &mut rng };
            let mut label = 0u64;
            for root in &roots {
                let omitted = tracer.rng.random::<f64>() < model.omission_prob;
                let draft = tracer.object(root);
                if omitted {
                    continue;
                }
                if let Some(draft) = draft {
                    label += 1;
                    let id = TrackId(format!("o{label}"));
                    tracer.emit(&draft, id, LineageLabel::root(label).expect("positive"), None, &mut tracks);
                }
            }
        }
        Strategy::SingObj { prior, .. } => {
            let roots: Vec<&Track> = gt.roots().collect();
            let (done, open): (Vec<&Track>, Vec<&Track>) =
                roots.iter().partition(|r| is_duplicate(r, prior, DEFAULT_DUPLICATE_THRESHOLD));
            let dup_draw = rng.random::<f64>() < model.duplicate_prob;
            let pick_draw: f64 = rng.random();
            let pool = if (dup_draw && !done.is_empty()) || open.is_empty() {
                if !dup_draw || done.is_empty() {
                    return Err(SimError::NoObjectsAvailable(gt.video_id.to_string()));
                }
                &done
            } else {
                &open
            };
            let chosen = pool[((pick_draw * pool.len() as f64) as usize).min(pool.len() - 1)];
            let label = prior.tracks.iter().map(|t| t.label().root_number()).max().unwrap_or(0) + 1;
            let mut tracer = Tracer { gt, model, rng: &mut rng };
            if let Some(draft) = tracer.object(chosen) {
                tracer.emit(&draft, TrackId("o1".into()), LineageLabel::root(label).expect("positive"), None, &mut tracks);
            }
        }
    }
    let keyframe_count = tracks.iter().map(Track::keyframe_count).sum::<usize>();
    let elapsed_ms = keyframe_count as u64 * 12_000 + rng.random_range(0..60_000);
    Ok(Submission {
        task_id: task.id.clone(),
        worker_id: model.worker_id(),
        tracks,
        elapsed_ms,
        feedback: None,
        keyframe_count,
        preview_completed: true,
    })
}

/// Parameters for [`synthetic_video`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub video_id: String,
    pub frame_count: u32,
    pub objects: u32,
    /// Number of root objects that undergo one binary split.
    pub splits: u32,
    pub seed: u64,
}

pub const SYNTHETIC_WIDTH: u32 = 1920;
pub const SYNTHETIC_HEIGHT: u32 = 1080;

/// Ground truth with objects wandering inside disjoint cells of a 4-column
/// grid, with random births and exits and optional splits.
pub fn synthetic_video(spec: &SyntheticSpec) -> AnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cols = 4u32;
    let rows = spec.objects.div_ceil(cols).max(1);
    let cell_w = f64::from(SYNTHETIC_WIDTH) / f64::from(cols);
    let cell_h = f64::from(SYNTHETIC_HEIGHT) / f64::from(rows);
    let last = spec.frame_count - 1;
    let mut tracks = Vec::new();
    for k in 0..spec.objects {
        let cell = (
            f64::from(k % cols) * cell_w,
            f64::from(k / cols) * cell_h,
        );
        let size = (rng.random_range(40.0..80.0), rng.random_range(40.0..80.0));
        let long_lived = rng.random::<f64>() < 0.6;
        let (start, end) = if long_lived || spec.frame_count < 200 {
            (0, last)
        } else {
            let span = rng.random_range(spec.frame_count / 2..=spec.frame_count - 1);
            let s = rng.random_range(0..=last - span);
            (s, s + span)
        };
        let splits = k < spec.splits && end - start > 100;
        let split_at = splits.then(|| start + (end - start) / 2);
        let root_end = split_at.map_or(end, |s| s - 1);
        let region = (cell.0 + 10.0, cell.1 + 10.0, cell_w - 20.0, cell_h - 20.0);
        let kfs = wander(&mut rng, start, root_end, region, size);
        let id = TrackId(format!("{}-{}", spec.video_id, k + 1));
        let label = LineageLabel::root(u64::from(k) + 1).expect("positive");
        match split_at {
            None => tracks.push(Track::new(id, label, kfs).expect("valid")),
            Some(s) => {
                let half = (region.2 / 2.0, region.3);
                let left = (region.0, region.1, half.0 - 5.0, half.1);
                let right = (region.0 + half.0 + 5.0, region.1, half.0 - 5.0, half.1);
                let child_size = (size.0 * 0.7, size.1 * 0.7);
                let a = wander(&mut rng, s, end, left, child_size);
                let b = wander(&mut rng, s, end, right, child_size);
                let ids = [TrackId(format!("{id}-1")), TrackId(format!("{id}-2"))];
                let parent = Track::from_parts(
                    id.clone(),
                    label.clone(),
                    None,
                    kfs,
                    Some(SplitEvent { frame: s, children: ids.clone() }),
                )
                .expect("valid");
                let [ia, ib] = ids;
                tracks.push(parent);
                tracks.push(
                    Track::from_parts(ia, label.child(ChildSlot::First), Some(id.clone()), a, None).expect("valid"),
                );
                tracks.push(Track::from_parts(ib, label.child(ChildSlot::Second), Some(id), b, None).expect("valid"));
            }
        }
    }
    AnnotationSet::new(spec.video_id.as_str().into(), tracks).expect("synthetic ground truth is consistent")
}

/// Random-walk keyframes every 20-40 frames inside `region` (x, y, w, h).
fn wander(rng: &mut ChaCha8Rng, start: u32, end: u32, region: (f64, f64, f64, f64), size: (f64, f64)) -> Vec<KeyFrame> {
    let (rx, ry, rw, rh) = region;
    let max_x = (rw - size.0).max(0.0);
    let max_y = (rh - size.1).max(0.0);
    let mut x = rng.random_range(0.0..=max_x);
    let mut y = rng.random_range(0.0..=max_y);
    let mut frame = start;
    let mut kfs = Vec::new();
    loop {
        let b = BoundingBox::new(rx + x, ry + y, size.0, size.1).expect("positive size");
        kfs.push(KeyFrame::new(frame, b));
        if frame == end {
            break;
        }
        frame = (frame + rng.random_range(20..=40)).min(end);
        x = (x + rng.random_range(-40.0..40.0)).clamp(0.0, max_x);
        y = (y + rng.random_range(-40.0..40.0)).clamp(0.0, max_y);
    }
    kfs
}

/// Frames of the video covered by `set`'s lifetimes, for quick checks.
pub fn covered_span(set: &AnnotationSet) -> Option<FrameSpan> {
    let start = set.tracks.iter().map(|t| t.lifetime().start).min()?;
    let end = set.tracks.iter().map(|t| t.lifetime().end).max()?;
    Some(FrameSpan::new(start, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::plan_segments;
    use crate::metrics::{evaluate_video, CurveConfig};
    use crate::taskgen::{gen_singobj_round, gen_singseg_tasks};
    use crate::track::VideoMeta;

    fn gt() -> (VideoMeta, AnnotationSet) {
        let spec = SyntheticSpec { video_id: "v".into(), frame_count: 600, objects: 5, splits: 1, seed: 9 };
        let set = synthetic_video(&spec);
        let meta = VideoMeta {
            id: "v".into(),
            url: "http://x/v.mp4".into(),
            frame_count: 600,
            fps: 30.0,
            width: SYNTHETIC_WIDTH,
            height: SYNTHETIC_HEIGHT,
        };
        (meta, set)
    }

    #[test]
    fn synthetic_ground_truth_shape() {
        let (_, set) = gt();
        assert_eq!(set.roots().count(), 5);
        assert_eq!(set.tracks.len(), 7);
        set.check_frames(600).unwrap();
    }

    #[test]
    fn noiseless_singobj_reproduces_gt() {
        let (meta, set) = gt();
        let task = gen_singobj_round(&meta, &AnnotationSet::empty("v".into()), 0, 1);
        let sub = simulate_submission(&WorkerModel::default(), &task, &set).unwrap();
        let pred = sub.annotation_set(&meta.id);
        pred.validate().unwrap();
        let root = pred.roots().next().unwrap();
        let target = set
            .tracks
            .iter()
            .find(|g| g.lifetime() == root.lifetime() && g.box_at(root.first_frame()) == root.box_at(root.first_frame()))
            .unwrap();
        for f in target.lifetime().frames() {
            assert_eq!(root.box_at(f), target.box_at(f));
        }
    }

    #[test]
    fn noiseless_singseg_scores_perfectly() {
        let (meta, set) = gt();
        let plan = plan_segments(600, 320, 20).unwrap();
        for task in gen_singseg_tasks(&meta, &plan, 3) {
            let Strategy::SingSeg { segment } = task.strategy else { unreachable!() };
            let sub = simulate_submission(&WorkerModel::default(), &task, &set).unwrap();
            let report = evaluate_video(&sub.annotation_set(&meta.id), &set.window(segment), &CurveConfig::default())
                .unwrap();
            assert!((report.mean_auc - 100.0 / 101.0).abs() < 1e-9);
        }
    }

    #[test]
    fn certain_omission_yields_empty_segment() {
        let (meta, set) = gt();
        let plan = plan_segments(600, 320, 20).unwrap();
        let task = &gen_singseg_tasks(&meta, &plan, 1)[0];
        let model = WorkerModel { omission_prob: 1.0, ..WorkerModel::default() };
        assert!(simulate_submission(&model, task, &set).unwrap().tracks.is_empty());
    }

    #[test]
    fn deterministic_per_seed_and_task() {
        let (meta, set) = gt();
        let task = gen_singobj_round(&meta, &AnnotationSet::empty("v".into()), 0, 1);
        let model = WorkerModel {
            seed: 4,
            center_jitter_px: 3.0,
            size_jitter_frac: 0.1,
            keyframe_stride: 7,
            late_start_frames: 5,
            missed_split_prob: 0.5,
            ..WorkerModel::default()
        };
        let a = serde_json::to_string(&simulate_submission(&model, &task, &set).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate_submission(&model, &task, &set).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&simulate_submission(&model.with_seed(5), &task, &set).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn late_start_shifts_first_frame() {
        let (meta, set) = gt();
        let plan = plan_segments(600, 320, 20).unwrap();
        let task = &gen_singseg_tasks(&meta, &plan, 1)[1];
        let Strategy::SingSeg { segment } = task.strategy else { unreachable!() };
        let window = set.window(segment);
        let model = WorkerModel { late_start_frames: 12, ..WorkerModel::default() };
        let sub = simulate_submission(&model, task, &set).unwrap();
        let roots: Vec<&Track> = window.roots().filter(|r| r.lifetime().len() > 12).collect();
        let sim_roots: Vec<&Track> = sub.tracks.iter().filter(|t| t.parent_id().is_none()).collect();
        assert_eq!(roots.len(), sim_roots.len());
        for (g, s) in roots.iter().zip(&sim_roots) {
            assert_eq!(s.first_frame(), g.first_frame() + 12);
        }
    }

    #[test]
    fn missed_split_follows_first_child() {
        let (meta, set) = gt();
        let parent = set.tracks.iter().find(|t| t.split().is_some()).unwrap();
        let child = set.get(&parent.split().unwrap().children[0]).unwrap();
        let task = gen_singobj_round(&meta, &AnnotationSet::empty("v".into()), 0, 1);
        let model = WorkerModel { missed_split_prob: 1.0, ..WorkerModel::default() };
        // try seeds until the split object is the one picked
        let sub = (0..200)
            .map(|s| simulate_submission(&model.with_seed(s), &task, &set).unwrap())
            .find(|sub| sub.tracks[0].first_frame() == parent.first_frame() && sub.tracks[0].box_at(parent.first_frame()) == parent.box_at(parent.first_frame()))
            .unwrap();
        assert_eq!(sub.tracks.len(), 1);
        let t = &sub.tracks[0];
        assert!(t.split().is_none());
        assert_eq!(t.lifetime().end, child.lifetime().end);
        let f = child.first_frame() + 3;
        assert_eq!(t.box_at(f), child.box_at(f));
    }

    #[test]
    fn duplicates_and_exhaustion() {
        let (meta, set) = gt();
        let all_done = AnnotationSet { video_id: "v".into(), tracks: set.tracks.clone() };
        let task = gen_singobj_round(&meta, &all_done, 5, 1);
        let model = WorkerModel::default();
        assert!(matches!(simulate_submission(&model, &task, &set), Err(SimError::NoObjectsAvailable(_))));
        let dup = WorkerModel { duplicate_prob: 1.0, ..WorkerModel::default() };
        let sub = simulate_submission(&dup, &task, &set).unwrap();
        assert!(is_duplicate(&sub.tracks[0], &all_done, 0.5));
    }

    #[test]
    fn bad_models_rejected() {
        let (_, set) = gt();
        let task = gen_singobj_round(
            &VideoMeta { id: "v".into(), url: String::new(), frame_count: 600, fps: 30.0, width: 1, height: 1 },
            &AnnotationSet::empty("v".into()),
            0,
            1,
        );
        for m in [
            WorkerModel { omission_prob: 1.5, ..WorkerModel::default() },
            WorkerModel { keyframe_stride: 0, ..WorkerModel::default() },
            WorkerModel { center_jitter_px: -1.0, ..WorkerModel::default() },
        ] {
            assert!(matches!(simulate_submission(&m, &task, &set), Err(SimError::BadModel(_))));
        }
    }
}
