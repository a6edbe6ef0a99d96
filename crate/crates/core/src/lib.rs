//! Engine for crowdsourced multi-object tracking annotation with lineage.
//!
//! Tracks are keyframed boxes over a frame range that may end in a binary
//! split. On top of that model sit segment merging, evaluation curves, task
//! generation for the two microtask designs, round orchestration, simulated
//! workers and storage.

pub mod assignment;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod store;
pub mod taskgen;
pub mod track;
pub mod workflow;

pub use assignment::{solve_assignment, CostMatrix};
pub use merge::{merge_chain, merge_pair, plan_segments, MergeConfig, SegmentPlan};
pub use metrics::{evaluate_video, CurveConfig, MetricsReport};
pub use track::{AnnotationSet, BoundingBox, FrameSpan, KeyFrame, LineageLabel, Track, TrackId, VideoId, VideoMeta};
