#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdmot_core::track::{
    AnnotationSet, BoundingBox, ChildSlot, KeyFrame, LineageLabel, SplitEvent, Track, TrackId, VideoId, VideoMeta,
};

pub fn meta(id: &str, frames: u32) -> VideoMeta {
    VideoMeta {
        id: VideoId::new(id),
        url: format!("https://example.org/{id}.mp4"),
        frame_count: frames,
        fps: 30.0,
        width: 1920,
        height: 1080,
    }
}

/// Random sets with splits up to two levels deep. `max_gap` bounds the
/// spacing of keyframes; `spread` bounds box positions.
pub struct Gen {
    pub rng: ChaCha8Rng,
    pub tracks: Vec<Track>,
    pub max_gap: u32,
    pub spread: f64,
    pub split_prob: f64,
    next: u64,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), tracks: Vec::new(), max_gap: 60, spread: 1800.0, split_prob: 0.3, next: 0 }
    }

    pub fn set(mut self, video: &str, frames: u32, roots: u32) -> AnnotationSet {
        for r in 1..=roots {
            let start = self.rng.random_range(0..frames - 1);
            self.grow(LineageLabel::root(u64::from(r)).unwrap(), None, start, frames, 0);
        }
        AnnotationSet::new(VideoId::new(video), self.tracks).unwrap()
    }

    pub fn bbox(&mut self) -> BoundingBox {
        let s = self.spread;
        let r = &mut self.rng;
        BoundingBox::new(r.random_range(0.0..s), r.random_range(0.0..s * 0.6), r.random_range(4.0..200.0), r.random_range(4.0..200.0))
            .unwrap()
    }

    fn keyframes(&mut self, start: u32, end: u32) -> Vec<KeyFrame> {
        let mut kfs = vec![KeyFrame::new(start, self.bbox())];
        let mut f = start;
        loop {
            f += self.rng.random_range(1..=self.max_gap);
            if f >= end {
                break;
            }
            let b = self.bbox();
            kfs.push(KeyFrame::new(f, b));
        }
        if end > start {
            let b = self.bbox();
            kfs.push(KeyFrame::new(end, b));
        }
        kfs
    }

    fn grow(&mut self, label: LineageLabel, parent: Option<TrackId>, start: u32, frames: u32, depth: u32) -> TrackId {
        self.next += 1;
        let id = TrackId::new(format!("t{}", self.next));
        let end = self.rng.random_range(start..frames);
        let split = depth < 2 && end >= start + 2 && self.rng.random_bool(self.split_prob);
        let track = if split {
            let at = self.rng.random_range(start + 1..=end);
            let kfs = self.keyframes(start, at - 1);
            let a = self.grow(label.child(ChildSlot::First), Some(id.clone()), at, frames, depth + 1);
            let b = self.grow(label.child(ChildSlot::Second), Some(id.clone()), at, frames, depth + 1);
            Track::from_parts(id.clone(), label, parent, kfs, Some(SplitEvent { frame: at, children: [a, b] }))
        } else {
            let kfs = self.keyframes(start, end);
            Track::from_parts(id.clone(), label, parent, kfs, None)
        };
        self.tracks.push(track.unwrap());
        id
    }
}

pub fn random_set(seed: u64, frames: u32, roots: u32) -> AnnotationSet {
    Gen::new(seed).set(&format!("v{seed}"), frames, roots)
}

pub fn map_boxes(set: &AnnotationSet, mut f: impl FnMut(&BoundingBox) -> BoundingBox) -> AnnotationSet {
    let tracks = set
        .tracks
        .iter()
        .map(|t| {
            let kfs = t.key_frames().iter().map(|k| KeyFrame::new(k.frame, f(&k.bbox))).collect();
            Track::from_parts(t.id().clone(), t.label().clone(), t.parent_id().cloned(), kfs, t.split().cloned()).unwrap()
        })
        .collect();
    AnnotationSet::new(set.video_id.clone(), tracks).unwrap()
}

pub fn box_diff(a: &BoundingBox, b: &BoundingBox) -> f64 {
    [a.x() - b.x(), a.y() - b.y(), a.w() - b.w(), a.h() - b.h()].iter().map(|d| d.abs()).fold(0.0, f64::max)
}
