//! Boxes, keyframes, tracks and lineage.
//!
//! Frames are 0-based. Boxes are continuous pixel rectangles given by their
//! top-left corner and size. A track's lifetime ends on the frame before its
//! split; both children begin on the split frame itself.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("invalid box ({x}, {y}, {w}, {h}): size must be positive and all fields finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("invalid lineage label {0:?}")]
    InvalidLabel(String),
    #[error("track {0} has no keyframes")]
    NoKeyFrames(TrackId),
    #[error("track {track}: keyframes not strictly increasing at frame {frame}")]
    NonMonotonicKeyFrames { track: TrackId, frame: u32 },
    #[error("track {track}: keyframe at frame {frame} is at or after the split frame {split}")]
    KeyFrameAfterSplit { track: TrackId, frame: u32, split: u32 },
    #[error("track {0} is already split")]
    AlreadySplit(TrackId),
    #[error("track {track}: split frame {frame} is not after the first keyframe {birth}")]
    FrameBeforeBirth { track: TrackId, frame: u32, birth: u32 },
    #[error("track {track}: split children must be two distinct tracks other than itself")]
    BadSplitChildren { track: TrackId },
    #[error("frame {frame} is outside the lifetime [{start}, {end}] of track {track}")]
    OutOfLifetime { track: TrackId, frame: u32, start: u32, end: u32 },
    #[error("duplicate track id {0}")]
    DuplicateId(TrackId),
    #[error("track {track}: parent {parent} not found")]
    MissingParent { track: TrackId, parent: TrackId },
    #[error("track {track}: split child {child} not found")]
    MissingChild { track: TrackId, child: TrackId },
    #[error("track {child}: not listed among the split children of parent {parent}")]
    UnlistedChild { child: TrackId, parent: TrackId },
    #[error("track {child}: label {label} does not extend parent label {parent_label}")]
    LabelMismatch { child: TrackId, label: LineageLabel, parent_label: LineageLabel },
    #[error("track {child}: first keyframe {first} differs from parent split frame {split}")]
    ChildBirthMismatch { child: TrackId, first: u32, split: u32 },
    #[error("track {track}: frame {frame} is outside the video (frame count {frame_count})")]
    FrameOutOfVideo { track: TrackId, frame: u32, frame_count: u32 },
    #[error("invalid video metadata: {0}")]
    InvalidVideo(String),
}

/// Axis-aligned rectangle in pixels, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = TrackError;
    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, TrackError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(TrackError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, TrackError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, TrackError> {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Per-coordinate blend `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &BoundingBox, alpha: f64) -> BoundingBox {
        let mix = |a: f64, b: f64| (1.0 - alpha) * a + alpha * b;
        BoundingBox {
            x: mix(self.x, other.x),
            y: mix(self.y, other.y),
            w: mix(self.w, other.w),
            h: mix(self.h, other.h),
        }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// A box pinned to a frame. Serializes flat as `{frame, x, y, w, h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub frame: u32,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

impl KeyFrame {
    pub fn new(frame: u32, bbox: BoundingBox) -> Self {
        Self { frame, bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub String);

impl TrackId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TrackId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Which half of a binary split a child descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChildSlot {
    First,
    Second,
}

impl ChildSlot {
    pub fn index(self) -> usize {
        match self {
            ChildSlot::First => 0,
            ChildSlot::Second => 1,
        }
    }
}

/// Lineage label `root(-1|-2)*`, e.g. `1-2-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LineageLabel {
    root: u64,
    path: Vec<ChildSlot>,
}

impl LineageLabel {
    pub fn root(root: u64) -> Result<Self, TrackError> {
        if root == 0 {
            return Err(TrackError::InvalidLabel("0".into()));
        }
        Ok(Self { root, path: Vec::new() })
    }

    pub fn root_number(&self) -> u64 {
        self.root
    }

    pub fn path(&self) -> &[ChildSlot] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn child(&self, slot: ChildSlot) -> Self {
        let mut path = self.path.clone();
        path.push(slot);
        Self { root: self.root, path }
    }

    pub fn parent(&self) -> Option<Self> {
        let (_, rest) = self.path.split_last()?;
        Some(Self { root: self.root, path: rest.to_vec() })
    }

    pub fn last_slot(&self) -> Option<ChildSlot> {
        self.path.last().copied()
    }

    pub fn is_child_of(&self, parent: &LineageLabel) -> bool {
        self.parent().as_ref() == Some(parent)
    }
}

impl FromStr for LineageLabel {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TrackError::InvalidLabel(s.to_owned());
        let mut parts = s.split('-');
        let root_txt = parts.next().ok_or_else(bad)?;
        if root_txt.is_empty() || !root_txt.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let root: u64 = root_txt.parse().map_err(|_| bad())?;
        if root == 0 || root_txt.starts_with('0') {
            return Err(bad());
        }
        let path = parts
            .map(|p| match p {
                "1" => Ok(ChildSlot::First),
                "2" => Ok(ChildSlot::Second),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { root, path })
    }
}

impl fmt::Display for LineageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)?;
        for slot in &self.path {
            match slot {
                ChildSlot::First => f.write_str("-1")?,
                ChildSlot::Second => f.write_str("-2")?,
            }
        }
        Ok(())
    }
}

impl TryFrom<String> for LineageLabel {
    type Error = TrackError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LineageLabel> for String {
    fn from(l: LineageLabel) -> Self {
        l.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub frame: u32,
    pub children: [TrackId; 2],
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: u32,
    pub end: u32,
}

impl FrameSpan {
    pub fn new(start: u32, end: u32) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    pub fn intersect(&self, other: &FrameSpan) -> Option<FrameSpan> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(FrameSpan { start, end })
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<u32> {
        self.start..=self.end
    }
}

impl fmt::Display for FrameSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrack", into = "RawTrack")]
pub struct Track {
    id: TrackId,
    label: LineageLabel,
    parent_id: Option<TrackId>,
    key_frames: Vec<KeyFrame>,
    split: Option<SplitEvent>,
}

#[derive(Serialize, Deserialize)]
struct RawTrack {
    id: TrackId,
    label: LineageLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<TrackId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitEvent>,
    key_frames: Vec<KeyFrame>,
}

impl TryFrom<RawTrack> for Track {
    type Error = TrackError;
    fn try_from(r: RawTrack) -> Result<Self, Self::Error> {
        Track::from_parts(r.id, r.label, r.parent_id, r.key_frames, r.split)
    }
}

impl From<Track> for RawTrack {
    fn from(t: Track) -> Self {
        RawTrack {
            id: t.id,
            label: t.label,
            parent_id: t.parent_id,
            split: t.split,
            key_frames: t.key_frames,
        }
    }
}

impl Track {
    /// A root track with no split.
    pub fn new(
        id: impl Into<TrackId>,
        label: LineageLabel,
        key_frames: Vec<KeyFrame>,
    ) -> Result<Self, TrackError> {
        Self::from_parts(id.into(), label, None, key_frames, None)
    }

    pub fn from_parts(
        id: TrackId,
        label: LineageLabel,
        parent_id: Option<TrackId>,
        key_frames: Vec<KeyFrame>,
        split: Option<SplitEvent>,
    ) -> Result<Self, TrackError> {
        let first = key_frames.first().ok_or_else(|| TrackError::NoKeyFrames(id.clone()))?.frame;
        for pair in key_frames.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(TrackError::NonMonotonicKeyFrames { track: id, frame: pair[1].frame });
            }
        }
        if let Some(split) = &split {
            if split.frame <= first {
                return Err(TrackError::FrameBeforeBirth { track: id, frame: split.frame, birth: first });
            }
            let last = key_frames.last().expect("non-empty").frame;
            if last >= split.frame {
                return Err(TrackError::KeyFrameAfterSplit { track: id, frame: last, split: split.frame });
            }
            let [a, b] = &split.children;
            if a == b || *a == id || *b == id {
                return Err(TrackError::BadSplitChildren { track: id });
            }
        }
        if parent_id.is_some() && label.depth() == 0 {
            return Err(TrackError::InvalidLabel(format!("{label} (child track needs a child label)")));
        }
        Ok(Self { id, label, parent_id, key_frames, split })
    }

    pub fn id(&self) -> &TrackId {
        &self.id
    }
    pub fn label(&self) -> &LineageLabel {
        &self.label
    }
    pub fn parent_id(&self) -> Option<&TrackId> {
        self.parent_id.as_ref()
    }
    pub fn key_frames(&self) -> &[KeyFrame] {
        &self.key_frames
    }
    pub fn split(&self) -> Option<&SplitEvent> {
        self.split.as_ref()
    }

    pub fn first_frame(&self) -> u32 {
        self.key_frames[0].frame
    }

    /// Inclusive `[start, end]`: ends at `split.frame - 1` when split, else at
    /// the last keyframe.
    pub fn lifetime(&self) -> FrameSpan {
        let start = self.first_frame();
        let end = match &self.split {
            Some(s) => s.frame - 1,
            None => self.key_frames.last().expect("non-empty").frame,
        };
        FrameSpan { start, end }
    }

    pub fn covers(&self, frame: u32) -> bool {
        self.lifetime().contains(frame)
    }

    /// Linear interpolation between bracketing keyframes; exact at keyframes;
    /// holds the last keyframe's box up to the split.
    pub fn interpolate_box(&self, frame: u32) -> Result<BoundingBox, TrackError> {
        let life = self.lifetime();
        if !life.contains(frame) {
            return Err(TrackError::OutOfLifetime {
                track: self.id.clone(),
                frame,
                start: life.start,
                end: life.end,
            });
        }
        Ok(self.box_at_unchecked(frame))
    }

    /// Box at `frame` when it lies in the lifetime, else `None`.
    pub fn box_at(&self, frame: u32) -> Option<BoundingBox> {
        self.covers(frame).then(|| self.box_at_unchecked(frame))
    }

    fn box_at_unchecked(&self, frame: u32) -> BoundingBox {
        let kfs = &self.key_frames;
        match kfs.binary_search_by_key(&frame, |k| k.frame) {
            Ok(i) => kfs[i].bbox,
            Err(i) if i == kfs.len() => kfs[i - 1].bbox,
            Err(i) => {
                let (k0, k1) = (&kfs[i - 1], &kfs[i]);
                let alpha = f64::from(frame - k0.frame) / f64::from(k1.frame - k0.frame);
                k0.bbox.lerp(&k1.bbox, alpha)
            }
        }
    }

    /// Every lifetime frame mapped to its interpolated box.
    pub fn densify(&self) -> BTreeMap<u32, BoundingBox> {
        self.lifetime().frames().map(|f| (f, self.box_at_unchecked(f))).collect()
    }

    /// Marks a binary split at `frame`. Parent keyframes at or after `frame`
    /// are dropped; each child starts with one keyframe at `frame`.
    pub fn split_track(
        &self,
        frame: u32,
        box_a: BoundingBox,
        box_b: BoundingBox,
        child_ids: [TrackId; 2],
    ) -> Result<(Track, Track, Track), TrackError> {
        if self.split.is_some() {
            return Err(TrackError::AlreadySplit(self.id.clone()));
        }
        let birth = self.first_frame();
        if frame <= birth {
            return Err(TrackError::FrameBeforeBirth { track: self.id.clone(), frame, birth });
        }
        let kept: Vec<KeyFrame> = self.key_frames.iter().copied().filter(|k| k.frame < frame).collect();
        let [id_a, id_b] = child_ids;
        let parent = Track::from_parts(
            self.id.clone(),
            self.label.clone(),
            self.parent_id.clone(),
            kept,
            Some(SplitEvent { frame, children: [id_a.clone(), id_b.clone()] }),
        )?;
        let child = |id: TrackId, slot: ChildSlot, bbox: BoundingBox| {
            Track::from_parts(
                id,
                self.label.child(slot),
                Some(self.id.clone()),
                vec![KeyFrame::new(frame, bbox)],
                None,
            )
        };
        let first = child(id_a, ChildSlot::First, box_a)?;
        let second = child(id_b, ChildSlot::Second, box_b)?;
        Ok((parent, first, second))
    }

    /// Restricts the track to `window`, inserting interpolated keyframes at
    /// the clipped ends so densified boxes are unchanged inside the window.
    /// A split is kept only when the children are born inside the window.
    pub fn clipped(&self, window: FrameSpan) -> Option<Track> {
        let life = self.lifetime().intersect(&window)?;
        let split = self.split.clone().filter(|s| window.contains(s.frame));
        let mut kfs = vec![KeyFrame::new(life.start, self.box_at_unchecked(life.start))];
        if split.is_some() {
            // frames after the last keyframe already hold its box up to the split
            kfs.extend(self.key_frames.iter().copied().filter(|k| k.frame > life.start));
        } else {
            kfs.extend(self.key_frames.iter().copied().filter(|k| k.frame > life.start && k.frame < life.end));
            if life.end > life.start {
                kfs.push(KeyFrame::new(life.end, self.box_at_unchecked(life.end)));
            }
        }
        Some(Track {
            id: self.id.clone(),
            label: self.label.clone(),
            parent_id: self.parent_id.clone(),
            key_frames: kfs,
            split,
        })
    }

    pub fn keyframe_count(&self) -> usize {
        self.key_frames.len()
    }

    pub(crate) fn set_parent(&mut self, parent: Option<TrackId>) {
        self.parent_id = parent;
    }

    pub(crate) fn set_label(&mut self, label: LineageLabel) {
        self.label = label;
    }

    pub(crate) fn set_split(&mut self, split: Option<SplitEvent>) {
        self.split = split;
    }

    pub(crate) fn set_id(&mut self, id: TrackId) {
        self.id = id;
    }

    pub(crate) fn replace_key_frames(&mut self, key_frames: Vec<KeyFrame>) {
        self.key_frames = key_frames;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VideoId(pub String);

impl VideoId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VideoId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: VideoId,
    pub url: String,
    pub frame_count: u32,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.id.0.is_empty() {
            return Err(TrackError::InvalidVideo("empty id".into()));
        }
        if self.frame_count == 0 {
            return Err(TrackError::InvalidVideo("frame_count must be positive".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(TrackError::InvalidVideo("fps must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(TrackError::InvalidVideo("width and height must be positive".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> FrameSpan {
        FrameSpan::new(0, self.frame_count - 1)
    }
}

/// All tracks for one video from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub video_id: VideoId,
    pub tracks: Vec<Track>,
}

impl AnnotationSet {
    pub fn empty(video_id: VideoId) -> Self {
        Self { video_id, tracks: Vec::new() }
    }

    pub fn new(video_id: VideoId, tracks: Vec<Track>) -> Result<Self, TrackError> {
        let set = Self { video_id, tracks };
        set.validate()?;
        Ok(set)
    }

    pub fn get(&self, id: &TrackId) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id() == id)
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    /// Checks id uniqueness and that every parent/child link resolves with
    /// consistent labels and birth frames.
    pub fn validate(&self) -> Result<(), TrackError> {
        let mut by_id: HashMap<&TrackId, &Track> = HashMap::with_capacity(self.tracks.len());
        for t in &self.tracks {
            if by_id.insert(t.id(), t).is_some() {
                return Err(TrackError::DuplicateId(t.id().clone()));
            }
        }
        for t in &self.tracks {
            if let Some(pid) = t.parent_id() {
                let parent = by_id
                    .get(pid)
                    .ok_or_else(|| TrackError::MissingParent { track: t.id().clone(), parent: pid.clone() })?;
                let split = parent
                    .split()
                    .filter(|s| s.children.contains(t.id()))
                    .ok_or_else(|| TrackError::UnlistedChild { child: t.id().clone(), parent: pid.clone() })?;
                if !t.label().is_child_of(parent.label()) {
                    return Err(TrackError::LabelMismatch {
                        child: t.id().clone(),
                        label: t.label().clone(),
                        parent_label: parent.label().clone(),
                    });
                }
                if t.first_frame() != split.frame {
                    return Err(TrackError::ChildBirthMismatch {
                        child: t.id().clone(),
                        first: t.first_frame(),
                        split: split.frame,
                    });
                }
            }
            if let Some(split) = t.split() {
                for child in &split.children {
                    let c = by_id
                        .get(child)
                        .ok_or_else(|| TrackError::MissingChild { track: t.id().clone(), child: child.clone() })?;
                    if c.parent_id() != Some(t.id()) {
                        return Err(TrackError::UnlistedChild { child: child.clone(), parent: t.id().clone() });
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that every keyframe and split frame lies inside the video.
    pub fn check_frames(&self, frame_count: u32) -> Result<(), TrackError> {
        for t in &self.tracks {
            let last = t.split().map(|s| s.frame).unwrap_or(t.lifetime().end);
            if last >= frame_count {
                return Err(TrackError::FrameOutOfVideo { track: t.id().clone(), frame: last, frame_count });
            }
        }
        Ok(())
    }

    /// Tracks without a parent in this set.
    pub fn roots(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.parent_id().is_none())
    }

    /// `root` and all of its descendants, parents before children.
    pub fn subtree(&self, root: &TrackId) -> Vec<&Track> {
        let mut out = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(id) = stack.pop() {
            if let Some(t) = self.get(&id) {
                out.push(t);
                if let Some(s) = t.split() {
                    stack.push(s.children[1].clone());
                    stack.push(s.children[0].clone());
                }
            }
        }
        out
    }

    /// Clips every track to `window`. Children whose parent falls outside the
    /// window become roots; splits whose children fall outside are dropped.
    pub fn window(&self, window: FrameSpan) -> AnnotationSet {
        let clipped: Vec<Track> = self.tracks.iter().filter_map(|t| t.clipped(window)).collect();
        let present: BTreeSet<TrackId> = clipped.iter().map(|t| t.id().clone()).collect();
        let tracks = clipped
            .into_iter()
            .map(|mut t| {
                if t.parent_id().is_some_and(|p| !present.contains(p)) {
                    t.set_parent(None);
                }
                t
            })
            .collect();
        AnnotationSet { video_id: self.video_id.clone(), tracks }
    }

    pub fn keyframe_count(&self) -> usize {
        self.tracks.iter().map(Track::keyframe_count).sum()
    }

    /// Drops broken lineage links and rewrites child labels from their
    /// parents so the set satisfies [`AnnotationSet::validate`].
    pub(crate) fn repair_lineage(&mut self) {
        let index: HashMap<TrackId, usize> =
            self.tracks.iter().enumerate().map(|(i, t)| (t.id().clone(), i)).collect();
        // splits must point at present children that point back and start on time
        for i in 0..self.tracks.len() {
            let Some(split) = self.tracks[i].split().cloned() else { continue };
            let pid = self.tracks[i].id().clone();
            let ok = split.children.iter().all(|c| {
                index.get(c).is_some_and(|&ci| {
                    let child = &self.tracks[ci];
                    child.parent_id() == Some(&pid) && child.first_frame() == split.frame
                })
            });
            if !ok {
                self.tracks[i].set_split(None);
            }
        }
        for i in 0..self.tracks.len() {
            let Some(pid) = self.tracks[i].parent_id().cloned() else { continue };
            let id = self.tracks[i].id().clone();
            let listed = index
                .get(&pid)
                .and_then(|&pi| self.tracks[pi].split())
                .is_some_and(|s| s.children.contains(&id));
            if !listed {
                self.tracks[i].set_parent(None);
            }
        }
        // relabel top-down
        let roots: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].parent_id().is_none()).collect();
        let mut stack = roots;
        while let Some(i) = stack.pop() {
            let Some(split) = self.tracks[i].split().cloned() else { continue };
            let label = self.tracks[i].label().clone();
            for (slot, child) in [ChildSlot::First, ChildSlot::Second].into_iter().zip(&split.children) {
                let ci = index[child];
                self.tracks[ci].set_label(label.child(slot));
                stack.push(ci);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn track(frames: &[u32]) -> Track {
        let kfs = frames.iter().map(|&f| KeyFrame::new(f, bx(f64::from(f), 0.0, 10.0, 10.0))).collect();
        Track::new("t", LineageLabel::root(1).unwrap(), kfs).unwrap()
    }

    #[test]
    fn box_rejects_degenerate_and_non_finite() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(-50.0, -50.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn lifetime_cases() {
        assert_eq!(track(&[10, 50]).lifetime(), FrameSpan::new(10, 50));
        assert_eq!(track(&[7]).lifetime(), FrameSpan::new(7, 7));
        let (parent, _, _) = track(&[10, 50])
            .split_track(60, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 0.0, 5.0, 5.0), ["a".into(), "b".into()])
            .unwrap();
        assert_eq!(parent.lifetime(), FrameSpan::new(10, 59));
    }

    #[test]
    fn interpolation_midpoint_and_keyframe_identity() {
        let t = Track::new(
            "t",
            LineageLabel::root(1).unwrap(),
            vec![KeyFrame::new(0, bx(0.0, 0.0, 10.0, 10.0)), KeyFrame::new(10, bx(10.0, 20.0, 10.0, 30.0))],
        )
        .unwrap();
        assert_eq!(t.interpolate_box(5).unwrap(), bx(5.0, 10.0, 10.0, 20.0));
        assert_eq!(t.interpolate_box(10).unwrap(), bx(10.0, 20.0, 10.0, 30.0));
        assert_eq!(t.interpolate_box(0).unwrap(), bx(0.0, 0.0, 10.0, 10.0));
        assert!(matches!(t.interpolate_box(11), Err(TrackError::OutOfLifetime { .. })));
    }

    #[test]
    fn hold_last_box_until_split() {
        let (parent, _, _) = track(&[0, 10])
            .split_track(20, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 0.0, 5.0, 5.0), ["a".into(), "b".into()])
            .unwrap();
        assert_eq!(parent.interpolate_box(19).unwrap(), bx(10.0, 0.0, 10.0, 10.0));
        assert!(parent.interpolate_box(20).is_err());
    }

    #[test]
    fn densify_counts() {
        assert_eq!(track(&[0, 2]).densify().len(), 3);
        assert_eq!(track(&[4]).densify().len(), 1);
        let t = track(&[3, 9, 20]);
        for (f, b) in t.densify() {
            assert_eq!(b, t.interpolate_box(f).unwrap());
        }
    }

    #[test]
    fn split_labels_and_errors() {
        let parent = Track::new(
            "p",
            "1-2".parse().unwrap(),
            vec![KeyFrame::new(0, bx(0.0, 0.0, 10.0, 10.0)), KeyFrame::new(30, bx(5.0, 0.0, 10.0, 10.0))],
        )
        .unwrap();
        let (p, a, b) = parent
            .split_track(20, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 5.0, 5.0, 5.0), ["c1".into(), "c2".into()])
            .unwrap();
        assert_eq!(a.label().to_string(), "1-2-1");
        assert_eq!(b.label().to_string(), "1-2-2");
        assert_eq!(a.parent_id(), Some(&TrackId::from("p")));
        assert_eq!(p.key_frames().len(), 1);
        assert_eq!(a.lifetime().start, 20);
        assert_eq!(p.lifetime().end, 19);
        let err = parent.split_track(0, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 5.0, 5.0, 5.0), ["x".into(), "y".into()]);
        assert!(matches!(err, Err(TrackError::FrameBeforeBirth { .. })));
        let err = p.split_track(25, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 5.0, 5.0, 5.0), ["x".into(), "y".into()]);
        assert!(matches!(err, Err(TrackError::AlreadySplit(_))));
        // a root may carry a child label (e.g. a clipped child)
        assert!(AnnotationSet::new("v".into(), vec![p, a, b]).is_ok());
    }

    #[test]
    fn iou_and_center_distance_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 0.0, 10.0, 10.0)), 0.0);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(center_distance(&a, &a), 0.0);
        assert!((center_distance(&a, &bx(3.0, 4.0, 10.0, 10.0)) - 5.0).abs() < 1e-12);
        assert_eq!(center_distance(&a, &bx(-5.0, -5.0, 20.0, 20.0)), 0.0);
    }

    #[test]
    fn label_grammar() {
        for ok in ["1", "12", "1-2", "1-2-1", "3-1-1-2"] {
            let l: LineageLabel = ok.parse().unwrap();
            assert_eq!(l.to_string(), ok);
        }
        for bad in ["", "0", "01", "1-3", "1-", "-1", "a", "1-1-0", "1--2"] {
            assert!(bad.parse::<LineageLabel>().is_err(), "{bad}");
        }
        let l: LineageLabel = "1-2-1".parse().unwrap();
        assert_eq!(l.depth(), 2);
        assert_eq!(l.parent().unwrap().to_string(), "1-2");
    }

    #[test]
    fn set_validation_catches_broken_links() {
        let root = LineageLabel::root(1).unwrap();
        let p = track(&[0, 10]);
        let (p, a, b) = p
            .split_track(15, bx(0.0, 0.0, 5.0, 5.0), bx(5.0, 5.0, 5.0, 5.0), ["a".into(), "b".into()])
            .unwrap();
        assert!(AnnotationSet::new("v".into(), vec![p.clone(), a.clone(), b.clone()]).is_ok());
        assert!(matches!(
            AnnotationSet::new("v".into(), vec![p.clone(), a.clone()]),
            Err(TrackError::MissingChild { .. })
        ));
        let late = Track::from_parts(
            "b".into(),
            root.child(ChildSlot::Second),
            Some("t".into()),
            vec![KeyFrame::new(16, bx(0.0, 0.0, 1.0, 1.0))],
            None,
        )
        .unwrap();
        assert!(matches!(
            AnnotationSet::new("v".into(), vec![p.clone(), a.clone(), late]),
            Err(TrackError::ChildBirthMismatch { .. })
        ));
        assert!(matches!(
            AnnotationSet::new("v".into(), vec![p.clone(), a, b, p]),
            Err(TrackError::DuplicateId(_))
        ));
    }

    #[test]
    fn window_preserves_boxes_inside() {
        let t = Track::new(
            "t",
            LineageLabel::root(1).unwrap(),
            vec![
                KeyFrame::new(0, bx(0.0, 0.0, 10.0, 10.0)),
                KeyFrame::new(40, bx(40.0, 8.0, 14.0, 10.0)),
                KeyFrame::new(90, bx(10.0, 30.0, 12.0, 20.0)),
            ],
        )
        .unwrap();
        let c = t.clipped(FrameSpan::new(25, 60)).unwrap();
        assert_eq!(c.lifetime(), FrameSpan::new(25, 60));
        for f in 25..=60 {
            let (a, b) = (c.box_at(f).unwrap(), t.box_at(f).unwrap());
            assert!((a.x() - b.x()).abs() < 1e-9 && (a.h() - b.h()).abs() < 1e-9);
        }
        assert!(t.clipped(FrameSpan::new(91, 100)).is_none());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.5..50.0f64, 0.5..50.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
    }

    fn arb_label() -> impl Strategy<Value = LineageLabel> {
        (1u64..1000, prop::collection::vec(prop::bool::ANY, 0..6)).prop_map(|(root, path)| {
            let mut l = LineageLabel::root(root).unwrap();
            for second in path {
                l = l.child(if second { ChildSlot::Second } else { ChildSlot::First });
            }
            l
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_translation_invariant(a in arb_box(), b in arb_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
            let moved = iou(&a.translated(dx, dy).unwrap(), &b.translated(dx, dy).unwrap());
            prop_assert!((v - moved).abs() < 1e-9);
            if a != b { prop_assert!(v < 1.0); }
        }

        #[test]
        fn interior_boxes_lie_between_bracketing_keyframes(a in arb_box(), b in arb_box(), gap in 2u32..60, start in 0u32..100) {
            let t = Track::new("t", LineageLabel::root(1).unwrap(),
                vec![KeyFrame::new(start, a), KeyFrame::new(start + gap, b)]).unwrap();
            for f in start..=start + gap {
                let m = t.interpolate_box(f).unwrap();
                for (v, lo, hi) in [(m.x(), a.x(), b.x()), (m.y(), a.y(), b.y()), (m.w(), a.w(), b.w()), (m.h(), a.h(), b.h())] {
                    prop_assert!(v >= lo.min(hi) - 1e-9 && v <= lo.max(hi) + 1e-9);
                }
            }
        }

        #[test]
        fn label_round_trip(l in arb_label()) {
            let parsed: LineageLabel = l.to_string().parse().unwrap();
            prop_assert_eq!(&parsed, &l);
            let c = l.child(ChildSlot::Second);
            prop_assert!(c.is_child_of(&l));
            prop_assert_eq!(c.depth(), l.depth() + 1);
        }
    }
}
