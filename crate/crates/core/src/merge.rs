//! Segment planning and stitching of per-segment annotations into
//! whole-video tracks.
//!
//! Consecutive segments share `overlap` frames. Tracks active in a shared
//! window are paired by optimal assignment on `1 - mean IoU`; the earlier
//! segment owns every frame up to the end of the shared window.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::track::{iou, AnnotationSet, FrameSpan, KeyFrame, LineageLabel, SplitEvent, Track, TrackId, VideoId};

pub const DEFAULT_SEGMENT_LENGTH: u32 = 320;
pub const DEFAULT_SEGMENT_OVERLAP: u32 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("bad segment parameters: length {length}, overlap {overlap}, frame count {frame_count}")]
    BadParams { frame_count: u32, length: u32, overlap: u32 },
    #[error("cannot merge annotations of video {left} with video {right}")]
    VideoMismatch { left: VideoId, right: VideoId },
    #[error("expected {expected} segment annotation sets, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub segments: Vec<FrameSpan>,
    pub length: u32,
    pub overlap: u32,
}

impl SegmentPlan {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Frames shared by segment `i` and segment `i + 1`.
    pub fn overlap_after(&self, i: usize) -> Option<FrameSpan> {
        let a = self.segments.get(i)?;
        let b = self.segments.get(i + 1)?;
        a.intersect(b)
    }
}

/// Splits `[0, frame_count)` into segments of `length` frames starting every
/// `length - overlap` frames. The last segment is truncated at the video end.
pub fn plan_segments(frame_count: u32, length: u32, overlap: u32) -> Result<SegmentPlan, MergeError> {
    if frame_count == 0 || length == 0 || overlap == 0 || overlap >= length {
        return Err(MergeError::BadParams { frame_count, length, overlap });
    }
    let last = frame_count - 1;
    let stride = length - overlap;
    let mut segments = Vec::new();
    let mut start = 0u32;
    loop {
        let end = start.saturating_add(length - 1).min(last);
        segments.push(FrameSpan::new(start, end));
        if end == last {
            break;
        }
        start += stride;
    }
    Ok(SegmentPlan { segments, length, overlap })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StitchRule {
    /// Earlier keyframes kept through the end of the overlap; later keyframes
    /// strictly after it appended.
    #[default]
    KeepEarlierThroughOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub min_mean_iou: f64,
    #[serde(default)]
    pub stitch_rule: StitchRule,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { min_mean_iou: 0.3, stitch_rule: StitchRule::KeepEarlierThroughOverlap }
    }
}

/// Mean IoU of two tracks over the frames of `window` on which at least one
/// of them is alive; frames where only one is alive count as 0.
pub fn mean_overlap_iou(a: &Track, b: &Track, window: FrameSpan) -> f64 {
    let mut sum = 0.0;
    let mut frames = 0u32;
    for f in window.frames() {
        match (a.box_at(f), b.box_at(f)) {
            (Some(x), Some(y)) => {
                sum += iou(&x, &y);
                frames += 1;
            }
            (None, None) => {}
            _ => frames += 1,
        }
    }
    if frames == 0 {
        0.0
    } else {
        sum / f64::from(frames)
    }
}

fn active_in(t: &Track, window: FrameSpan) -> bool {
    t.lifetime().intersect(&window).is_some()
}

/// Stitches `later` onto `earlier` across their shared `overlap` window.
pub fn merge_pair(
    earlier: &AnnotationSet,
    later: &AnnotationSet,
    overlap: FrameSpan,
    cfg: &MergeConfig,
) -> Result<AnnotationSet, MergeError> {
    if earlier.video_id != later.video_id {
        return Err(MergeError::VideoMismatch {
            left: earlier.video_id.clone(),
            right: later.video_id.clone(),
        });
    }
    let left: Vec<usize> = (0..earlier.tracks.len()).filter(|&i| active_in(&earlier.tracks[i], overlap)).collect();
    let right: Vec<usize> = (0..later.tracks.len()).filter(|&j| active_in(&later.tracks[j], overlap)).collect();

    // later index -> earlier index
    let mut fused: HashMap<usize, usize> = HashMap::new();
    if !left.is_empty() && !right.is_empty() {
        let score: Vec<Vec<f64>> = left
            .iter()
            .map(|&i| right.iter().map(|&j| mean_overlap_iou(&earlier.tracks[i], &later.tracks[j], overlap)).collect())
            .collect();
        let costs = CostMatrix::from_fn(left.len(), right.len(), |r, c| 1.0 - score[r][c])
            .expect("non-empty finite matrix");
        for (r, c) in solve_assignment(&costs) {
            let s = score[r][c];
            if s > 0.0 && s >= cfg.min_mean_iou {
                fused.insert(right[c], left[r]);
            }
        }
    }

    // a second copy of an already fused track is the same object annotated twice
    let mut dropped: HashSet<TrackId> = HashSet::new();
    for &j in &right {
        let t = &later.tracks[j];
        if !fused.contains_key(&j)
            && fused.values().any(|&i| mean_overlap_iou(&earlier.tracks[i], t, overlap) == 1.0)
        {
            dropped.extend(later.subtree(t.id()).into_iter().map(|d| d.id().clone()));
        }
    }

    // identities for every later track
    let mut taken: HashSet<TrackId> = earlier.tracks.iter().map(|t| t.id().clone()).collect();
    let mut rename: HashMap<TrackId, TrackId> = HashMap::new();
    for (j, t) in later.tracks.iter().enumerate() {
        let id = match fused.get(&j) {
            Some(&i) => earlier.tracks[i].id().clone(),
            None => fresh_id(t.id(), &mut taken),
        };
        rename.insert(t.id().clone(), id);
    }
    let renamed = |id: &TrackId| rename.get(id).cloned().unwrap_or_else(|| id.clone());

    let stitch_end = overlap.end;
    let mut out: Vec<Track> = earlier.tracks.clone();
    for (&j, &i) in &fused {
        out[i] = stitch(&earlier.tracks[i], &later.tracks[j], stitch_end, &renamed);
    }

    let used_roots: BTreeSet<u64> = earlier.tracks.iter().map(|t| t.label().root_number()).collect();
    let mut next_root = used_roots.iter().next_back().copied().unwrap_or(0) + 1;
    let mut relabel: HashMap<u64, u64> = HashMap::new();
    for (j, t) in later.tracks.iter().enumerate() {
        if fused.contains_key(&j) || dropped.contains(t.id()) {
            continue;
        }
        let mut t = t.clone();
        t.set_id(renamed(t.id()));
        t.set_parent(t.parent_id().map(&renamed));
        if let Some(s) = t.split().cloned() {
            t.set_split(Some(SplitEvent { frame: s.frame, children: s.children.clone().map(|c| renamed(&c)) }));
        }
        let root = t.label().root_number();
        if used_roots.contains(&root) {
            let new_root = *relabel.entry(root).or_insert_with(|| {
                let r = next_root;
                next_root += 1;
                r
            });
            let mut label = LineageLabel::root(new_root).expect("positive");
            for &slot in t.label().path() {
                label = label.child(slot);
            }
            t.set_label(label);
        }
        out.push(t);
    }

    let mut merged = AnnotationSet { video_id: earlier.video_id.clone(), tracks: out };
    merged.repair_lineage();
    Ok(merged)
}

fn fresh_id(id: &TrackId, taken: &mut HashSet<TrackId>) -> TrackId {
    let mut candidate = id.clone();
    let mut n = 1;
    while taken.contains(&candidate) {
        candidate = TrackId(format!("{id}.{n}"));
        n += 1;
    }
    taken.insert(candidate.clone());
    candidate
}

fn stitch(earlier: &Track, later: &Track, stitch_end: u32, renamed: &impl Fn(&TrackId) -> TrackId) -> Track {
    let mut key_frames: Vec<KeyFrame> = earlier.key_frames().iter().copied().filter(|k| k.frame <= stitch_end).collect();
    let mut split = earlier.split().cloned();
    if split.is_none() {
        key_frames.extend(later.key_frames().iter().copied().filter(|k| k.frame > stitch_end));
        split = later
            .split()
            .filter(|s| s.frame > stitch_end && key_frames.last().is_none_or(|k| k.frame < s.frame))
            .map(|s| SplitEvent { frame: s.frame, children: s.children.clone().map(|c| renamed(&c)) });
    }
    if key_frames.is_empty() {
        // earlier track born after the stitch point cannot happen for active tracks
        key_frames = earlier.key_frames().to_vec();
    }
    let mut t = earlier.clone();
    t.replace_key_frames(key_frames);
    t.set_split(split);
    t
}

/// Left fold of [`merge_pair`] over consecutive segments.
pub fn merge_chain(
    per_segment: &[AnnotationSet],
    plan: &SegmentPlan,
    cfg: &MergeConfig,
) -> Result<AnnotationSet, MergeError> {
    if per_segment.len() != plan.len() || per_segment.is_empty() {
        return Err(MergeError::LengthMismatch { expected: plan.len(), actual: per_segment.len() });
    }
    let mut acc = per_segment[0].clone();
    for (i, next) in per_segment.iter().enumerate().skip(1) {
        let overlap = plan.overlap_after(i - 1).expect("consecutive segments overlap");
        acc = merge_pair(&acc, next, overlap, cfg)?;
    }
    Ok(acc)
}

/// Clips `set` to every segment of `plan`.
pub fn slice_by_plan(set: &AnnotationSet, plan: &SegmentPlan) -> Vec<AnnotationSet> {
    plan.segments.iter().map(|&s| set.window(s)).collect()
}
