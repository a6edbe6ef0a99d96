mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{box_diff, map_boxes, meta, random_set};
use crowdmot_core::assignment::{solve_assignment, CostMatrix};
use crowdmot_core::merge::{merge_chain, merge_pair, plan_segments, slice_by_plan, MergeConfig};
use crowdmot_core::metrics::{evaluate_video, precision_curve, score_track, success_curve, CurveConfig};
use crowdmot_core::pipeline::{run_pipeline, PipelineConfig, VideoCase};
use crowdmot_core::sim::{simulate_submission, SyntheticSpec, WorkerModel};
use crowdmot_core::store::{export_mot_csv, import_mot_csv, load_annotations, save_annotations, SchemaMode};
use crowdmot_core::taskgen::{gen_singobj_round, gen_singseg_tasks, is_duplicate, StrategyKind, TaskState};
use crowdmot_core::track::{AnnotationSet, BoundingBox, FrameSpan, Track, TrackId};
use crowdmot_core::workflow::{filter_round, RoundConfig};

fn matrix() -> impl Strategy<Value = CostMatrix> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..100.0f64, r * c).prop_map(move |v| CostMatrix::new(r, c, v).unwrap())
    })
}

fn optimum(m: &CostMatrix) -> f64 {
    m.total(&solve_assignment(m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn assignment_row_permutation_equivariant(m in matrix(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..m.rows()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted = CostMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(perm[r], c)).unwrap();
        let a = solve_assignment(&m);
        let b = solve_assignment(&permuted);
        prop_assert!((m.total(&a) - permuted.total(&b)).abs() < 1e-9);
        // the permuted solution, mapped back, is optimal for the original
        let back: Vec<(usize, usize)> = b.iter().map(|&(r, c)| (perm[r], c)).collect();
        prop_assert!((m.total(&back) - m.total(&a)).abs() < 1e-9);
    }

    #[test]
    fn assignment_constant_shift(m in matrix(), k in -50.0..50.0f64) {
        let shifted = CostMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) + k).unwrap();
        let n = m.rows().min(m.cols()) as f64;
        let sol = solve_assignment(&shifted);
        prop_assert!((shifted.total(&sol) - (optimum(&m) + k * n)).abs() < 1e-9);
        prop_assert!((m.total(&sol) - optimum(&m)).abs() < 1e-9);
    }

    #[test]
    fn curve_shape(seed in any::<u64>()) {
        let set = random_set(seed, 300, 2);
        let gt = &set.tracks[0];
        let pred = map_boxes(&set, |b| b.translated(7.0, -3.0).unwrap());
        let cfg = CurveConfig::default();
        for p in [None, Some(&pred.tracks[0]), Some(&set.tracks[set.len() - 1])] {
            let s = success_curve(p, gt, &cfg);
            let pr = precision_curve(p, gt, &cfg);
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(pr.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(s.iter().chain(&pr).all(|v| (0.0..=1.0).contains(v)));
            let score = score_track(p, gt, &cfg);
            prop_assert_eq!(score.tracc, s[0]);
            prop_assert!(score.auc <= score.tracc);
        }
    }

    #[test]
    fn metrics_translation_invariant(seed in any::<u64>(), dx in -300.0..300.0f64, dy in -300.0..300.0f64) {
        let gt = random_set(seed, 200, 3);
        let pred = map_boxes(&random_set(seed, 200, 3), |b| b.translated(4.0, 2.0).unwrap());
        let mv = |s: &AnnotationSet| map_boxes(s, |b| b.translated(dx, dy).unwrap());
        let cfg = CurveConfig::default();
        let a = evaluate_video(&pred, &gt, &cfg).unwrap();
        let b = evaluate_video(&mv(&pred), &mv(&gt), &cfg).unwrap();
        prop_assert!((a.mean_auc - b.mean_auc).abs() < 1e-9);
        prop_assert!((a.mean_tracc - b.mean_tracc).abs() < 1e-9);
        prop_assert!((a.mean_precision20 - b.mean_precision20).abs() < 1e-9);
    }

    #[test]
    fn plan_covers_every_frame(n in 1u32..4000, length in 2u32..600, overlap_frac in 0.01..0.9f64) {
        let overlap = ((f64::from(length) * overlap_frac) as u32).clamp(1, length - 1);
        let plan = plan_segments(n, length, overlap).unwrap();
        prop_assert_eq!(plan.segments[0].start, 0);
        prop_assert_eq!(plan.segments[plan.len() - 1].end, n - 1);
        for w in plan.segments.windows(2) {
            let shared = w[0].intersect(&w[1]).map_or(0, |s| s.len());
            prop_assert!(w[1].start <= w[0].end + 1, "gap between {} and {}", w[0], w[1]);
            prop_assert!(shared >= 1);
        }
        for i in 0..plan.len().saturating_sub(2) {
            prop_assert_eq!(plan.overlap_after(i).unwrap().len(), overlap);
        }
    }

    #[test]
    fn unperturbed_merge_reproduces_boxes(seed in any::<u64>()) {
        let frames = 200 + (seed % 900) as u32;
        let set = random_set(seed, frames, 1 + (seed % 5) as u32);
        let plan = plan_segments(frames, 120, 15).unwrap();
        let merged = merge_chain(&slice_by_plan(&set, &plan), &plan, &MergeConfig::default()).unwrap();
        prop_assert_eq!(merged.len(), set.len());
        for t in &set.tracks {
            let m = merged.get(t.id()).unwrap();
            let (a, b) = (t.densify(), m.densify());
            prop_assert!(a.keys().eq(b.keys()), "frames of {}", t.id());
            let worst = a.values().zip(b.values()).map(|(x, y)| box_diff(x, y)).fold(0.0, f64::max);
            prop_assert!(worst <= 1e-9, "{} off by {}", t.id(), worst);
            prop_assert_eq!(m.split(), t.split());
            prop_assert_eq!(m.parent_id(), t.parent_id());
        }
    }

    #[test]
    fn merge_fuses_exact_duplicates(seed in any::<u64>()) {
        let set = random_set(seed, 400, 3);
        let plan = plan_segments(400, 220, 40).unwrap();
        let overlap = plan.overlap_after(0).unwrap();
        let slices = slice_by_plan(&set, &plan);
        // a second worker's copy of every track in the later segment
        let mut later = slices[1].clone();
        let copies: Vec<Track> = later
            .tracks
            .iter()
            .filter(|t| t.parent_id().is_none() && t.split().is_none())
            .enumerate()
            .map(|(i, t)| {
                let label = crowdmot_core::track::LineageLabel::root(1000 + i as u64).unwrap();
                Track::new(TrackId::new(format!("copy-{}", t.id())), label, t.key_frames().to_vec()).unwrap()
            })
            .collect();
        later.tracks.extend(copies);
        let merged = merge_pair(&slices[0], &later, overlap, &MergeConfig::default()).unwrap();
        let alive: Vec<(&Track, Vec<(u32, BoundingBox)>)> = merged
            .tracks
            .iter()
            .map(|t| (t, overlap.frames().filter_map(|f| t.box_at(f).map(|b| (f, b))).collect::<Vec<_>>()))
            .filter(|(_, v)| v.len() == overlap.len() as usize)
            .collect();
        for (i, (a, va)) in alive.iter().enumerate() {
            for (b, vb) in &alive[i + 1..] {
                prop_assert!(va != vb, "{} and {} identical on the overlap", a.id(), b.id());
            }
        }
    }

    #[test]
    fn duplicate_reflexive_and_monotone(seed in any::<u64>(), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let set = random_set(seed, 300, 3);
        for t in &set.tracks {
            prop_assert!(is_duplicate(t, &set, 1.0));
        }
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let other = map_boxes(&random_set(seed, 300, 3), |b| b.translated(9.0, 9.0).unwrap());
        for t in &other.tracks {
            if is_duplicate(t, &set, hi) {
                prop_assert!(is_duplicate(t, &set, lo));
            }
        }
    }

    #[test]
    fn filter_partitions(scores in prop::collection::btree_map("[a-z]{1,4}", 0.0..1.0f64, 0..20), t in 0.0..1.0f64) {
        let scores: BTreeMap<_, _> = scores.into_iter().map(|(k, v)| (crowdmot_core::VideoId::new(k), v)).collect();
        let (kept, removed) = filter_round(&scores, t);
        prop_assert!(kept.is_disjoint(&removed));
        prop_assert_eq!(kept.len() + removed.len(), scores.len());
        prop_assert!(kept.iter().all(|v| scores[v] >= t) && removed.iter().all(|v| scores[v] < t));
    }

    #[test]
    fn native_and_mot_round_trip(seed in any::<u64>()) {
        let set = random_set(seed, 50 + (seed % 700) as u32, 1 + (seed % 4) as u32);
        let back = load_annotations(&save_annotations(&set), SchemaMode::Strict).unwrap();
        prop_assert_eq!(&back, &set);
        let export = export_mot_csv(&set);
        prop_assert_eq!(export.lineage.is_some(), !export.warnings.is_empty());
        let mot = import_mot_csv(&export.csv, set.video_id.clone()).unwrap();
        let rows: usize = set.tracks.iter().map(|t| t.lifetime().len() as usize).sum();
        prop_assert_eq!(export.csv.lines().count(), rows);
        prop_assert_eq!(mot.len(), set.len());
    }
}

fn sim_case(seed: u64) -> VideoCase {
    VideoCase::synthetic(&SyntheticSpec { video_id: format!("sim{seed}"), frame_count: 900, objects: 5, splits: 1, seed })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_deterministic(seed in any::<u64>(), wseed in any::<u64>()) {
        let case = sim_case(seed);
        let plan = plan_segments(900, 320, 20).unwrap();
        let model = WorkerModel { seed: wseed, center_jitter_px: 3.0, omission_prob: 0.2, late_start_frames: 5, ..WorkerModel::default() };
        for task in gen_singseg_tasks(&case.meta, &plan, 3) {
            prop_assert_eq!(
                simulate_submission(&model, &task, &case.gt).unwrap(),
                simulate_submission(&model, &task, &case.gt).unwrap()
            );
        }
    }

    #[test]
    fn late_start_is_exact(seed in any::<u64>(), delta in 0u32..40) {
        let case = sim_case(seed);
        let task = gen_singobj_round(&case.meta, &AnnotationSet::empty(case.meta.id.clone()), 0, 1);
        let model = WorkerModel { seed, late_start_frames: delta, ..WorkerModel::default() };
        let sub = simulate_submission(&model, &task, &case.gt).unwrap();
        let root = sub.tracks.iter().find(|t| t.parent_id().is_none()).unwrap();
        // the traced gt root is the one with the same box once the worker starts
        let source = case.gt.roots().find(|g| g.box_at(root.first_frame()) == root.box_at(root.first_frame())).unwrap();
        prop_assert_eq!(root.first_frame(), source.first_frame() + delta);
    }

    #[test]
    fn more_jitter_never_helps(seed in any::<u64>()) {
        let case = sim_case(seed);
        let plan = plan_segments(900, 320, 20).unwrap();
        let cfg = CurveConfig::default();
        for task in gen_singseg_tasks(&case.meta, &plan, 1) {
            let window = case.gt.window(match task.strategy {
                crowdmot_core::taskgen::Strategy::SingSeg { segment } => segment,
                _ => unreachable!(),
            });
            let mut last = f64::INFINITY;
            for sigma in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
                let model = WorkerModel { seed, center_jitter_px: sigma, keyframe_stride: 5, ..WorkerModel::default() };
                let sub = simulate_submission(&model, &task, &case.gt).unwrap();
                let auc = evaluate_video(&sub.annotation_set(&case.meta.id), &window, &cfg).unwrap().mean_auc;
                prop_assert!(auc <= last + 1e-12, "sigma {sigma}: {auc} after {last}");
                last = auc;
            }
        }
    }
}

#[test]
fn workflow_rounds_respect_invariants() {
    let cases: Vec<VideoCase> = (0..4).map(|i| sim_case(70 + i)).collect();
    let noisy = PipelineConfig {
        round: RoundConfig { auc_filter: 0.4, redundancy: 3, ..RoundConfig::default() },
        worker: WorkerModel { center_jitter_px: 6.0, size_jitter_frac: 0.2, omission_prob: 0.3, duplicate_prob: 0.5, late_start_frames: 40, keyframe_stride: 10, ..WorkerModel::default() },
        ..PipelineConfig::default()
    };
    for seed in 0..4 {
        let run = run_pipeline(StrategyKind::SingObj, &cases, &noisy, seed).unwrap();
        let mut sizes: BTreeMap<_, usize> = BTreeMap::new();
        let mut gone = std::collections::BTreeSet::new();
        for o in &run.history {
            for v in o.scores.keys().chain(o.accepted.keys()) {
                assert!(!gone.contains(v), "seed {seed}: {v} came back in round {}", o.round);
            }
            for (v, set) in &o.accepted {
                let before = sizes.insert(v.clone(), set.len()).unwrap_or(0);
                assert!(set.len() >= before, "seed {seed}: accepted set of {v} shrank");
                assert!(!o.filtered_out.contains(v));
            }
            gone.extend(o.stopped.iter().cloned());
            gone.extend(o.filtered_out.iter().cloned());
        }
    }
    // noiseless workers survive every filter
    let clean = PipelineConfig { round: RoundConfig { auc_filter: 0.4, redundancy: 2, ..RoundConfig::default() }, ..PipelineConfig::default() };
    let run = run_pipeline(StrategyKind::SingObj, &cases, &clean, 0).unwrap();
    assert!(run.history.iter().all(|o| o.filtered_out.is_empty()));
    assert!((run.mean_auc - 100.0 / 101.0).abs() < 1e-9);
}

#[test]
fn singseg_tasks_cover_the_video() {
    for n in [1, 319, 320, 321, 1000, 4321] {
        let plan = plan_segments(n, 320, 20).unwrap();
        let tasks = gen_singseg_tasks(&meta("v", n), &plan, 3);
        assert_eq!(tasks.len(), plan.len());
        assert!(tasks.iter().all(|t| t.state == TaskState::Open && t.redundancy == 3));
        let covered: u32 = plan.segments.iter().map(FrameSpan::len).sum();
        assert!(covered >= n);
    }
}

#[test]
fn stopped_status_is_terminal() {
    let cases: Vec<VideoCase> = (0..2).map(|i| sim_case(90 + i)).collect();
    let cfg = PipelineConfig {
        round: RoundConfig { auc_filter: 0.0, redundancy: 1, ..RoundConfig::default() },
        worker: WorkerModel { duplicate_prob: 1.0, ..WorkerModel::default() },
        ..PipelineConfig::default()
    };
    // every worker after round 0 repeats an accepted object
    let run = run_pipeline(StrategyKind::SingObj, &cases, &cfg, 2).unwrap();
    assert_eq!(run.history.len(), 2);
    assert_eq!(run.history[1].stopped.len(), 2);
    assert!(run.accepted.values().all(|s| s.roots().count() == 1));
}
