use nalgebra::Vector3;

use super::kalman::{kf_predict, kf_update, KalmanState};
use super::{Origin, SequenceDetections, TrackEntry, TrackMode, TrackerConfig, Tracklet};
use crate::error::Result;
use crate::geometry::{iou3d, Box7, LabeledBox, ObjectClass, RigidPose};
use crate::lap;

/// Result of one association step, as indices into the inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track position, detection position)`
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal bipartite matching minimizing Σ(1 − IoU3D); pairs under `gate` are
/// dropped from the solution afterwards.
pub fn associate(predicted: &[(u64, Box7)], detections: &[LabeledBox], gate: f64) -> Association {
    let cost: Vec<Vec<f64>> = predicted
        .iter()
        .map(|(_, p)| detections.iter().map(|d| 1.0 - iou3d(p, &d.bbox)).collect())
        .collect();
    let mut matched_t = vec![false; predicted.len()];
    let mut matched_d = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (t, d) in lap::solve(&cost) {
        if 1.0 - cost[t][d] >= gate {
            matched_t[t] = true;
            matched_d[d] = true;
            matches.push((t, d));
        }
    }
    Association {
        matches,
        unmatched_tracks: (0..predicted.len()).filter(|&i| !matched_t[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !matched_d[i]).collect(),
    }
}

struct LiveTrack {
    id: u64,
    class: ObjectClass,
    state: KalmanState,
    entries: Vec<TrackEntry>,
    last_det: u32,
    last_score: f64,
    alive: bool,
}

fn out_of_range(b: &Box7, ego: &RigidPose, radius: f64) -> bool {
    let d = b.center() - ego.translation;
    Vector3::new(d.x, d.y, 0.0).norm() > radius
}

/// Forward pass with immortal lifecycle, then forward extension.
pub fn run_forward(seq: &SequenceDetections, cfg: &TrackerConfig) -> Result<Vec<Tracklet>> {
    forward_pass(seq, cfg, true)
}

fn forward_pass(seq: &SequenceDetections, cfg: &TrackerConfig, extend: bool) -> Result<Vec<Tracklet>> {
    seq.validate()?;
    let Some(seq_last) = seq.last_frame() else {
        return Ok(Vec::new());
    };
    let noise = &cfg.noise;
    let mut tracks: Vec<LiveTrack> = Vec::new();
    let mut next_id: u64 = 0;

    for frame in &seq.frames {
        let f = frame.frame_index;
        for t in tracks.iter_mut().filter(|t| t.alive) {
            t.state = kf_predict(&t.state, noise);
        }
        for class in ObjectClass::ALL {
            let live: Vec<usize> = (0..tracks.len())
                .filter(|&i| tracks[i].alive && tracks[i].class == class)
                .collect();
            let dets: Vec<LabeledBox> = frame
                .detections
                .iter()
                .filter(|d| d.class == class)
                .copied()
                .collect();
            let predicted: Vec<(u64, Box7)> = live
                .iter()
                .map(|&i| (tracks[i].id, tracks[i].state.to_box()))
                .collect();
            let assoc = associate(&predicted, &dets, cfg.gate_iou);

            for &(ti, di) in &assoc.matches {
                let t = &mut tracks[live[ti]];
                let d = &dets[di];
                t.state = kf_update(&t.state, &d.bbox, noise)?;
                t.entries.push(TrackEntry {
                    frame_index: f,
                    bbox: d.bbox,
                    score: d.score,
                    origin: Origin::Detected,
                });
                t.last_det = f;
                t.last_score = d.score;
            }
            for &ti in &assoc.unmatched_tracks {
                let t = &mut tracks[live[ti]];
                let b = t.state.to_box();
                if out_of_range(&b, &frame.ego_pose, cfg.perception_radius_m) {
                    t.alive = false;
                    continue;
                }
                t.entries.push(TrackEntry {
                    frame_index: f,
                    bbox: b,
                    score: t.last_score * cfg.score_decay,
                    origin: Origin::Filled,
                });
            }
            for &di in &assoc.unmatched_detections {
                let d = &dets[di];
                tracks.push(LiveTrack {
                    id: next_id,
                    class,
                    state: KalmanState::from_box(&d.bbox, noise),
                    entries: vec![TrackEntry {
                        frame_index: f,
                        bbox: d.bbox,
                        score: d.score,
                        origin: Origin::Detected,
                    }],
                    last_det: f,
                    last_score: d.score,
                    alive: true,
                });
                next_id += 1;
            }
        }
    }

    let mut out: Vec<Tracklet> = tracks
        .into_iter()
        .map(|t| {
            let mut tl = Tracklet {
                track_id: t.id,
                class: t.class,
                entries: t.entries,
            };
            // trailing pseudo-boxes are pure motion-model predictions
            let span = tl.detected_span();
            let horizon = if !extend {
                t.last_det
            } else if span > cfg.long_track_frames {
                seq_last
            } else {
                t.last_det.saturating_add(cfg.short_ext_frames).min(seq_last)
            };
            tl.entries.retain(|e| e.frame_index <= horizon);
            for e in tl.entries.iter_mut().filter(|e| e.frame_index > t.last_det) {
                e.origin = Origin::ForwardExt;
            }
            tl
        })
        .collect();
    out.sort_by_key(|t| t.track_id);
    Ok(out)
}

/// Runs a reverse-time filter over the track's detections and prepends
/// backward-extrapolated boxes: to the sequence start for long tracks,
/// otherwise `short_ext_frames` into the past.
pub fn backtrace_extend(track: &Tracklet, seq: &SequenceDetections, cfg: &TrackerConfig) -> Result<Tracklet> {
    let (Some(seq_first), Some(first)) = (seq.first_frame(), track.first_frame()) else {
        return Ok(track.clone());
    };
    let Some((first_det, last_det)) = track.detected_range() else {
        return Ok(track.clone());
    };
    if first <= seq_first {
        return Ok(track.clone());
    }
    let noise = &cfg.noise;

    let last_entry = track.entry_at(last_det).expect("detected entry exists");
    let mut state = KalmanState::from_box(&last_entry.bbox, noise);
    let mut f = last_det;
    while f > first {
        f -= 1;
        state = kf_predict(&state, noise);
        if let Some(e) = track.entry_at(f).filter(|e| e.origin == Origin::Detected) {
            state = kf_update(&state, &e.bbox, noise)?;
        }
    }

    let target = if last_det - first_det + 1 > cfg.long_track_frames {
        seq_first
    } else {
        first.saturating_sub(cfg.short_ext_frames).max(seq_first)
    };
    let score = track.entry_at(first_det).map_or(0.0, |e| e.score) * cfg.score_decay;
    let mut prefix = Vec::new();
    while f > target {
        f -= 1;
        state = kf_predict(&state, noise);
        let b = state.to_box();
        let ego = seq.frame(f).map(|fr| fr.ego_pose).unwrap_or_default();
        if out_of_range(&b, &ego, cfg.perception_radius_m) {
            break;
        }
        prefix.push(TrackEntry {
            frame_index: f,
            bbox: b,
            score,
            origin: Origin::BackwardExt,
        });
    }
    prefix.reverse();
    prefix.extend_from_slice(&track.entries);
    Ok(Tracklet {
        track_id: track.track_id,
        class: track.class,
        entries: prefix,
    })
}

/// Forward tracking followed by backtracing of every track.
pub fn run_bidirectional(seq: &SequenceDetections, cfg: &TrackerConfig) -> Result<Vec<Tracklet>> {
    run_forward(seq, cfg)?
        .iter()
        .map(|t| backtrace_extend(t, seq, cfg))
        .collect()
}

pub fn run_tracker(seq: &SequenceDetections, cfg: &TrackerConfig, mode: TrackMode) -> Result<Vec<Tracklet>> {
    match mode {
        TrackMode::None => forward_pass(seq, cfg, false),
        TrackMode::Forward => run_forward(seq, cfg),
        TrackMode::Bidirectional => run_bidirectional(seq, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::DetectionFrame;

    fn car(x: f64, y: f64) -> Box7 {
        Box7::new(x, y, 0.8, 4.5, 1.9, 1.6, 0.0)
    }

    fn seq_from(n: u32, det: impl Fn(u32) -> Vec<Box7>) -> SequenceDetections {
        SequenceDetections {
            sequence_id: "t".into(),
            frames: (0..n)
                .map(|f| DetectionFrame {
                    frame_index: f,
                    timestamp: f as f64 * 0.1,
                    ego_pose: RigidPose::identity(),
                    detections: det(f)
                        .into_iter()
                        .map(|b| LabeledBox {
                            bbox: b,
                            class: ObjectClass::Vehicle,
                            score: 0.9,
                            frame_index: f,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn associate_simple_cases() {
        let t = vec![(0u64, car(0.0, 0.0))];
        let d = vec![LabeledBox {
            bbox: car(0.2, 0.0),
            class: ObjectClass::Vehicle,
            score: 1.0,
            frame_index: 0,
        }];
        assert!(iou3d(&t[0].1, &d[0].bbox) > 0.9);
        let a = associate(&t, &d, 0.1);
        assert_eq!(a.matches, vec![(0, 0)]);
        let far = vec![LabeledBox { bbox: car(50.0, 0.0), ..d[0] }];
        let a = associate(&t, &far, 0.1);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_tracks, vec![0]);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn associate_matches_exhaustive_permutation_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let perms = permutations(8);
        assert_eq!(perms.len(), 40320);
        for _ in 0..5 {
            let tracks: Vec<(u64, Box7)> = (0..8)
                .map(|i| (i as u64, car(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0))))
                .collect();
            let dets: Vec<LabeledBox> = (0..8)
                .map(|_| LabeledBox {
                    bbox: car(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)),
                    class: ObjectClass::Vehicle,
                    score: 1.0,
                    frame_index: 0,
                })
                .collect();
            let cost: Vec<Vec<f64>> = tracks
                .iter()
                .map(|(_, t)| dets.iter().map(|d| 1.0 - iou3d(t, &d.bbox)).collect())
                .collect();
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            // gate 0 keeps the full assignment
            let a = associate(&tracks, &dets, 0.0);
            let got: f64 = a.matches.iter().map(|&(i, j)| cost[i][j]).sum();
            assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        }
    }

    #[test]
    fn perfect_constant_velocity_track() {
        let seq = seq_from(50, |f| vec![car(f as f64, 0.0)]);
        let tracks = run_tracker(&seq, &TrackerConfig::default(), TrackMode::None).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].entries.len(), 50);
        assert!(tracks[0].entries.iter().all(|e| e.origin == Origin::Detected));
    }

    #[test]
    fn dropout_is_filled_on_velocity_line() {
        let seq = seq_from(60, |f| if (25..30).contains(&f) { vec![] } else { vec![car(0.5 * f as f64, 0.0)] });
        let tracks = run_forward(&seq, &TrackerConfig::default()).unwrap();
        assert_eq!(tracks.len(), 1);
        let filled: Vec<_> = tracks[0].entries.iter().filter(|e| e.origin == Origin::Filled).collect();
        assert_eq!(filled.len(), 5);
        for e in filled {
            let truth = 0.5 * e.frame_index as f64;
            assert!((e.bbox.cx - truth).abs() < 0.1 && e.bbox.cy.abs() < 0.1, "{:?}", e);
            assert!((e.score - 0.45).abs() < 1e-12);
        }
        assert!(tracks[0].is_gap_free());
    }

    #[test]
    fn long_track_extends_to_sequence_end() {
        let seq = seq_from(200, |f| if (10..130).contains(&f) { vec![car(20.0, 0.0)] } else { vec![] });
        let tracks = run_forward(&seq, &TrackerConfig::default()).unwrap();
        assert_eq!(tracks[0].last_frame(), Some(199));
        assert_eq!(tracks[0].entries.last().unwrap().origin, Origin::ForwardExt);
    }

    #[test]
    fn short_track_extends_twenty_frames() {
        let seq = seq_from(200, |f| if (10..40).contains(&f) { vec![car(20.0, 0.0)] } else { vec![] });
        let fwd = run_forward(&seq, &TrackerConfig::default()).unwrap();
        assert_eq!(fwd[0].last_frame(), Some(59));
        let none = run_tracker(&seq, &TrackerConfig::default(), TrackMode::None).unwrap();
        assert_eq!(none[0].last_frame(), Some(39));
    }

    #[test]
    fn backtrace_static_long_track_reaches_frame_zero() {
        let seq = seq_from(200, |f| if (30..180).contains(&f) { vec![car(15.0, 4.0)] } else { vec![] });
        let cfg = TrackerConfig::default();
        let fwd = run_forward(&seq, &cfg).unwrap();
        let bi = backtrace_extend(&fwd[0], &seq, &cfg).unwrap();
        assert_eq!(bi.first_frame(), Some(0));
        for e in bi.entries.iter().filter(|e| e.origin == Origin::BackwardExt) {
            let d = ((e.bbox.cx - 15.0).powi(2) + (e.bbox.cy - 4.0).powi(2)).sqrt();
            assert!(d < 0.2);
        }
        // backtracing only prepends
        assert_eq!(&bi.entries[30..], &fwd[0].entries[..]);
    }

    #[test]
    fn backtrace_constant_velocity_short_track() {
        let seq = seq_from(120, |f| if (50..=80).contains(&f) { vec![car(0.6 * f as f64, 0.2 * f as f64)] } else { vec![] });
        let cfg = TrackerConfig::default();
        let fwd = run_forward(&seq, &cfg).unwrap();
        let bi = backtrace_extend(&fwd[0], &seq, &cfg).unwrap();
        assert_eq!(bi.first_frame(), Some(30));
        let back: Vec<_> = bi.entries.iter().filter(|e| e.origin == Origin::BackwardExt).collect();
        assert_eq!(back.len(), 20);
        for e in back {
            let f = e.frame_index as f64;
            let d = ((e.bbox.cx - 0.6 * f).powi(2) + (e.bbox.cy - 0.2 * f).powi(2)).sqrt();
            assert!(d < 0.3, "frame {f}: off by {d}");
        }
    }

    #[test]
    fn track_starting_at_zero_is_unchanged() {
        let seq = seq_from(30, |_| vec![car(5.0, 5.0)]);
        let cfg = TrackerConfig::default();
        let fwd = run_forward(&seq, &cfg).unwrap();
        assert_eq!(backtrace_extend(&fwd[0], &seq, &cfg).unwrap(), fwd[0]);
    }

    #[test]
    fn empty_sequence_gives_no_tracks() {
        let seq = SequenceDetections {
            sequence_id: "e".into(),
            frames: vec![],
        };
        assert!(run_bidirectional(&seq, &TrackerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_extension_stops() {
        // object leaving the perception radius at 1 m/frame
        let seq = seq_from(200, |f| if f < 60 { vec![car(20.0 + f as f64, 0.0)] } else { vec![] });
        let cfg = TrackerConfig::default();
        let fwd = run_forward(&seq, &cfg).unwrap();
        let last = fwd[0].entries.last().unwrap();
        assert!(last.bbox.cx <= cfg.perception_radius_m + 1e-9);
        assert!(fwd[0].is_gap_free());
    }
}
