use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use autolabel::assignment::two_round_assign;
use autolabel::dataset::{augment, build_sample, TrackSample};
use autolabel::evaluation::{evaluate, motion_state, EvalReport, EvalSequence, MotionState};
use autolabel::io::config::PipelineConfig;
use autolabel::io::corpus::{list_sequences, load_points, load_sequence, read_tracks, write_sim_sequence, write_tracks, LoadedSequence};
use autolabel::io::points::{decode_point_frame, MAGIC as POINT_MAGIC};
use autolabel::io::records::{assignment_records, parse_jsonl, records_to_tracks, write_jsonl, DetectionRecord, FrameRecord};
use autolabel::io::samples::{decode_samples, write_samples, MAGIC as SAMPLE_MAGIC};
use autolabel::postprocess::{self, remove_empty, TtaVariant};
use autolabel::sim::{generate_sequence, scorecard};
use autolabel::tco::{run_tco, BaseFrame};
use autolabel::tracking::{run_tracker, Tracklet};
use autolabel::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

pub fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("reports serialize");
    s.push('\n');
    s
}

fn sequence_dirs(corpus: &Path) -> Result<Vec<PathBuf>> {
    let dirs = list_sequences(corpus)?;
    if dirs.is_empty() {
        return Err(Error::Invalid(format!("no sequences under {}", corpus.display())));
    }
    Ok(dirs)
}

/// Runs `f` on every sequence in parallel; results keep corpus order.
fn each_sequence<T: Send>(corpus: &Path, f: impl Fn(&Path) -> Result<T> + Sync) -> Result<Vec<T>> {
    sequence_dirs(corpus)?.par_iter().map(|d| f(d)).collect()
}

fn require_gt(seq: &LoadedSequence) -> Result<&[autolabel::assignment::GtTrack]> {
    seq.gt
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("sequence {} has no ground truth", seq.sequence_id())))
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.sim.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.display().to_string(), source: e })?;
    let seqs = (0..cfg.sim.num_sequences)
        .into_par_iter()
        .map(|i| {
            let s = generate_sequence(&cfg.sim, i)?;
            write_sim_sequence(out, &s)?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", json_line(&scorecard(&seqs, 20)));
    Ok(())
}

pub fn track(cfg: &PipelineConfig, corpus: &Path, out: &str) -> Result<()> {
    let mode = cfg.postprocess.mode;
    let counts = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let tracks = run_tracker(&seq.detections, &cfg.tracker, mode)?;
        write_tracks(&dir.join(out), &seq, &tracks)?;
        Ok((tracks.len(), tracks.iter().map(|t| t.entries.len()).sum::<usize>()))
    })?;
    let (tracks, entries) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    print!("{}", json_line(&json!({ "sequences": counts.len(), "tracks": tracks, "entries": entries, "mode": mode })));
    Ok(())
}

pub fn postprocess(corpus: &Path, tracks: &str, out: &str) -> Result<()> {
    let stats = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let points = load_points(&seq)?;
        let (kept, stats) = remove_empty(&read_tracks(&dir.join(tracks))?, &points);
        write_tracks(&dir.join(out), &seq, &kept)?;
        Ok(stats)
    })?;
    let entries: usize = stats.iter().map(|s| s.entries_removed).sum();
    let dropped: usize = stats.iter().map(|s| s.tracks_removed).sum();
    print!("{}", json_line(&json!({ "entries_removed": entries, "tracks_removed": dropped })));
    Ok(())
}

pub fn assign(cfg: &PipelineConfig, corpus: &Path, tracks: &str, out: &str) -> Result<()> {
    let counts = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let pred = read_tracks(&dir.join(tracks))?;
        let result = two_round_assign(&pred, require_gt(&seq)?, cfg.assignment.tiou_threshold)?;
        write_jsonl(&dir.join(out), &assignment_records(seq.sequence_id(), &result))?;
        let matched = result.tracks.iter().filter(|t| t.matched).count();
        let positives = result.tracks.iter().flat_map(|t| &t.proposals).filter(|p| p.gt.is_some()).count();
        Ok((result.tracks.len(), matched, positives))
    })?;
    let sum = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    print!("{}", json_line(&json!({ "tracks": sum.0, "matched": sum.1, "positive_proposals": sum.2 })));
    Ok(())
}

pub fn build_dataset(cfg: &PipelineConfig, corpus: &Path, tracks: &str, out: &Path, copies: u32) -> Result<()> {
    let per_seq = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let points = load_points(&seq)?;
        let pred: Vec<Tracklet> = read_tracks(&dir.join(tracks))?.into_iter().filter(|t| !t.entries.is_empty()).collect();
        let assignment = match &seq.gt {
            Some(gt) => Some(two_round_assign(&pred, gt, cfg.assignment.tiou_threshold)?),
            None => None,
        };
        let mut samples = Vec::new();
        for (k, t) in pred.iter().enumerate() {
            let mut s = build_sample(seq.sequence_id(), t, &points, &cfg.dataset)?;
            if let Some(a) = &assignment {
                s = s.with_world_assignment(&a.tracks[k]);
            }
            let augmented: Vec<TrackSample> =
                (1..=copies).map(|c| augment(&s, cfg.seed.wrapping_add(c as u64), &cfg.augment)).collect();
            samples.push(s);
            samples.extend(augmented);
        }
        Ok(samples)
    })?;
    let samples: Vec<TrackSample> = per_seq.into_iter().flatten().collect();
    write_samples(out, &samples)?;
    let points: usize = samples.iter().map(|s| s.points.len()).sum();
    print!("{}", json_line(&json!({ "samples": samples.len(), "points": points })));
    Ok(())
}

#[derive(Default, Serialize)]
struct TcoSummary {
    tracks: usize,
    refined: usize,
    retained_frames: usize,
    skipped: BTreeMap<&'static str, usize>,
}

pub fn tco(cfg: &PipelineConfig, corpus: &Path, tracks: &str, out: &str) -> Result<()> {
    let parts = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let points = load_points(&seq)?;
        let mut summary = TcoSummary::default();
        let refined: Vec<Tracklet> = read_tracks(&dir.join(tracks))?
            .into_iter()
            .map(|t| {
                summary.tracks += 1;
                match run_tco(&t, &points, BaseFrame::Auto, &cfg.tco) {
                    Ok(o) => {
                        summary.refined += 1;
                        summary.retained_frames += o.retained_frames().len();
                        o.track
                    }
                    Err(e) => {
                        *summary.skipped.entry(e.kind()).or_default() += 1;
                        t
                    }
                }
            })
            .collect();
        write_tracks(&dir.join(out), &seq, &refined)?;
        Ok(summary)
    })?;
    let mut total = TcoSummary::default();
    for p in parts {
        total.tracks += p.tracks;
        total.refined += p.refined;
        total.retained_frames += p.retained_frames;
        for (k, v) in p.skipped {
            *total.skipped.entry(k).or_default() += v;
        }
    }
    print!("{}", json_line(&total));
    Ok(())
}

pub fn tta_merge(corpus: &Path, inputs: &[String], out: &str) -> Result<()> {
    let counts = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let variants = inputs
            .iter()
            .map(|name| Ok(TtaVariant { tag: name.clone(), tracks: read_tracks(&dir.join(name))? }))
            .collect::<Result<Vec<_>>>()?;
        let merged = postprocess::tta_merge(&variants)?;
        write_tracks(&dir.join(out), &seq, &merged)?;
        Ok(merged.len())
    })?;
    print!("{}", json_line(&json!({ "variants": inputs.len(), "tracks": counts.iter().sum::<usize>() })));
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, corpus: &Path, tracks: &str) -> Result<EvalReport> {
    let loaded = each_sequence(corpus, |dir| {
        let seq = load_sequence(dir, None)?;
        let gt = require_gt(&seq)?.to_vec();
        Ok((read_tracks(&dir.join(tracks))?, gt))
    })?;
    let seqs: Vec<EvalSequence<'_>> = loaded.iter().map(|(p, g)| EvalSequence { preds: p, gts: g }).collect();
    Ok(evaluate(&seqs, &cfg.eval))
}

fn inspect_boxes(cfg: &PipelineConfig, records: &[DetectionRecord]) -> Result<serde_json::Value> {
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    let mut sequences: Vec<&str> = records.iter().map(|r| r.sequence_id.as_str()).collect();
    sequences.sort_unstable();
    sequences.dedup();
    for r in records {
        *classes.entry(r.class.clone()).or_default() += 1;
    }
    let mut v = json!({ "kind": "boxes", "records": records.len(), "sequences": sequences.len(), "classes": classes });
    if !records.is_empty() && records.iter().all(|r| r.track_id.is_some()) {
        let mut motion: BTreeMap<String, [usize; 2]> = BTreeMap::new();
        let mut n = 0;
        for seq in &sequences {
            let own: Vec<DetectionRecord> = records.iter().filter(|r| r.sequence_id == *seq).cloned().collect();
            for t in records_to_tracks(&own)? {
                n += 1;
                let slot = match motion_state(&t, t.class, &cfg.motion) {
                    MotionState::Static => 0,
                    MotionState::Dynamic => 1,
                };
                motion.entry(t.class.to_string()).or_default()[slot] += 1;
            }
        }
        v["tracks"] = json!(n);
        v["static_dynamic"] = json!(motion);
    }
    Ok(v)
}

pub fn inspect_with(cfg: &PipelineConfig, file: &Path) -> Result<serde_json::Value> {
    let io = |e| Error::Io { path: file.display().to_string(), source: e };
    let name = file.display().to_string();
    let bytes = std::fs::read(file).map_err(io)?;
    if bytes.starts_with(POINT_MAGIC) {
        let (cloud, ego) = decode_point_frame(&bytes, &name)?;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &cloud.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let bounds = if cloud.is_empty() { json!(null) } else { json!({ "min": lo, "max": hi }) };
        return Ok(json!({
            "kind": "point_frame",
            "points": cloud.len(),
            "bounds": bounds,
            "ego_translation": [ego.translation.x, ego.translation.y, ego.translation.z],
        }));
    }
    if bytes.starts_with(SAMPLE_MAGIC) {
        let samples = decode_samples(&bytes, &name)?;
        let mut classes: BTreeMap<String, usize> = BTreeMap::new();
        for s in &samples {
            *classes.entry(s.class.to_string()).or_default() += 1;
        }
        let labeled = samples.iter().filter(|s| s.assignment.is_some()).count();
        let positives = samples
            .iter()
            .filter_map(|s| s.assignment.as_ref())
            .flat_map(|a| &a.proposals)
            .filter(|p| p.gt.is_some())
            .count();
        return Ok(json!({
            "kind": "track_samples",
            "samples": samples.len(),
            "classes": classes,
            "proposals": samples.iter().map(|s| s.proposals.len()).sum::<usize>(),
            "points": samples.iter().map(|s| s.points.len()).sum::<usize>(),
            "labeled_samples": labeled,
            "positive_proposals": positives,
        }));
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Invalid(format!("{name}: unrecognized binary file")))?;
    match file.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            let c = PipelineConfig::from_toml(&text, &name)?;
            Ok(json!({ "kind": "config", "config": c }))
        }
        Some("jsonl") => {
            if text.starts_with("{\"sequence_id\"") && text.lines().next().is_some_and(|l| l.contains("\"ego_pose\"")) {
                let frames: Vec<FrameRecord> = parse_jsonl(&text, &name)?;
                return Ok(json!({ "kind": "frames", "records": frames.len() }));
            }
            inspect_boxes(cfg, &parse_jsonl(&text, &name)?)
        }
        _ => Err(Error::Invalid(format!("{name}: unknown file type"))),
    }
}

pub fn inspect(cfg: &PipelineConfig, file: &Path) -> Result<()> {
    print!("{}", json_line(&inspect_with(cfg, file)?));
    Ok(())
}
