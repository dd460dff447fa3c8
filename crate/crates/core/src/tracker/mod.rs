//! BYTE-style two-stage association over any [`MotionModel`].

mod hungarian;
mod io;

pub use hungarian::{assign_with_threshold, assignment_cost, hungarian};
pub use io::{frames_from_detections, oracle_detections, parse_detections, write_mot_results};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::motion::MotionModel;

/// Association and lifecycle thresholds. Defaults are the usual ByteTrack ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ByteConfig {
    pub high_thresh: f64,
    pub low_thresh: f64,
    /// Cost limit (on `1 − IoU`) for the first stage.
    pub match_iou: f64,
    /// Cost limit for low-score detections against still-tracked tracks.
    pub second_match_iou: f64,
    /// Cost limit for tentative tracks against leftover high-score detections.
    pub unconfirmed_match_iou: f64,
    /// Frames a lost track may coast before removal.
    pub max_lost: u32,
    /// Output boxes with smaller area are withheld from results.
    pub min_box_area: f64,
    /// Multiply IoU by detection score in the high-score stages.
    pub fuse_score: bool,
}

impl Default for ByteConfig {
    fn default() -> Self {
        ByteConfig {
            high_thresh: 0.6,
            low_thresh: 0.1,
            match_iou: 0.8,
            second_match_iou: 0.5,
            unconfirmed_match_iou: 0.7,
            max_lost: 30,
            min_box_area: 10.0,
            fuse_score: true,
        }
    }
}

impl ByteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_thresh && self.low_thresh < self.high_thresh && self.high_thresh <= 1.0) {
            return Err(Error::domain(format!(
                "need 0 <= low_thresh < high_thresh <= 1, got {} and {}",
                self.low_thresh, self.high_thresh
            )));
        }
        for (name, v) in [
            ("match_iou", self.match_iou),
            ("second_match_iou", self.second_match_iou),
            ("unconfirmed_match_iou", self.unconfirmed_match_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.min_box_area >= 0.0) {
            return Err(Error::domain("min_box_area must be non-negative"));
        }
        Ok(())
    }
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    /// Identity column of the source file: `-1` for detector output, the
    /// ground-truth id for oracle detections.
    pub source_id: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    /// Matched on the most recent frame.
    Active,
    /// Coasting on predictions.
    Lost,
    Removed,
}

/// What the associator needs to know about a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackView {
    /// Predicted box for the current frame.
    pub bbox: BBox,
    pub status: TrackStatus,
    /// False until a track born mid-sequence has been matched a second time.
    pub confirmed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    /// High-score detections left over; low-score leftovers are discarded.
    pub unmatched_detections: Vec<usize>,
}

fn cost_matrix(tracks: &[TrackView], ti: &[usize], dets: &[Detection], di: &[usize], fuse: bool) -> Vec<Vec<f64>> {
    ti.iter()
        .map(|&t| {
            di.iter()
                .map(|&d| {
                    let o = iou_unchecked(&tracks[t].bbox, &dets[d].bbox);
                    1.0 - if fuse { o * dets[d].score } else { o }
                })
                .collect()
        })
        .collect()
}

/// Matches `pool_t × pool_d` under `thresh`, records matches and returns the
/// leftovers of both pools.
fn stage(
    tracks: &[TrackView],
    pool_t: &[usize],
    dets: &[Detection],
    pool_d: &[usize],
    thresh: f64,
    fuse: bool,
    out: &mut Vec<(usize, usize)>,
) -> (Vec<usize>, Vec<usize>) {
    let cost = cost_matrix(tracks, pool_t, dets, pool_d, fuse);
    let pairs = assign_with_threshold(&cost, thresh);
    let mut used_t = vec![false; pool_t.len()];
    let mut used_d = vec![false; pool_d.len()];
    for (i, j) in pairs {
        used_t[i] = true;
        used_d[j] = true;
        out.push((pool_t[i], pool_d[j]));
    }
    let left_t = pool_t.iter().zip(&used_t).filter(|p| !*p.1).map(|p| *p.0).collect();
    let left_d = pool_d.iter().zip(&used_d).filter(|p| !*p.1).map(|p| *p.0).collect();
    (left_t, left_d)
}

/// Three passes: high-score detections against confirmed tracks (active and
/// lost), low-score detections against the still-active remainder, then
/// tentative tracks against leftover high-score detections.
pub fn byte_associate(tracks: &[TrackView], dets: &[Detection], cfg: &ByteConfig) -> Association {
    let high: Vec<usize> = (0..dets.len()).filter(|&d| dets[d].score >= cfg.high_thresh).collect();
    let low: Vec<usize> = (0..dets.len())
        .filter(|&d| dets[d].score >= cfg.low_thresh && dets[d].score < cfg.high_thresh)
        .collect();
    let live = |t: &usize| tracks[*t].status != TrackStatus::Removed;
    let confirmed: Vec<usize> = (0..tracks.len()).filter(|t| live(t) && tracks[*t].confirmed).collect();
    let tentative: Vec<usize> = (0..tracks.len()).filter(|t| live(t) && !tracks[*t].confirmed).collect();

    let mut matches = Vec::new();
    let (left_t, left_high) = stage(tracks, &confirmed, dets, &high, cfg.match_iou, cfg.fuse_score, &mut matches);
    let (active_left, lost_left): (Vec<usize>, Vec<usize>) =
        left_t.into_iter().partition(|&t| tracks[t].status == TrackStatus::Active);
    let (still_t, _) = stage(tracks, &active_left, dets, &low, cfg.second_match_iou, false, &mut matches);
    let (tent_left, new_dets) = stage(
        tracks,
        &tentative,
        dets,
        &left_high,
        cfg.unconfirmed_match_iou,
        cfg.fuse_score,
        &mut matches,
    );
    let mut unmatched_tracks: Vec<usize> = still_t.into_iter().chain(lost_left).chain(tent_left).collect();
    unmatched_tracks.sort_unstable();
    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks,
        unmatched_detections: new_dets,
    }
}

/// A track owned by [`track_sequence`].
#[derive(Debug, Clone)]
pub struct Track<T> {
    pub track_id: u64,
    pub state: T,
    pub status: TrackStatus,
    pub confirmed: bool,
    pub last_update: u32,
    pub scores: Vec<f64>,
}

/// One reported box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackBox {
    pub track_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTracks {
    pub frame: u32,
    pub tracks: Vec<TrackBox>,
}

/// Runs the tracker over `(frame, detections)` pairs given in increasing
/// frame order. Every frame listed produces an output entry, possibly empty.
pub fn track_sequence<M: MotionModel>(
    frames: &[(u32, Vec<Detection>)],
    model: &M,
    cfg: &ByteConfig,
) -> Result<Vec<FrameTracks>> {
    cfg.validate()?;
    let mode = model.mode();
    let mut tracks: Vec<Track<M::Track>> = Vec::new();
    let mut next_id = 1u64;
    let mut out = Vec::with_capacity(frames.len());
    let mut prev_frame: Option<u32> = None;
    for (k, (frame, dets)) in frames.iter().enumerate() {
        if prev_frame.is_some_and(|p| *frame <= p) {
            return Err(Error::domain(format!("frames out of order at frame {frame}")));
        }
        prev_frame = Some(*frame);
        for t in &mut tracks {
            model.predict(&mut t.state)?;
        }
        let views: Vec<TrackView> = tracks
            .iter()
            .map(|t| TrackView {
                bbox: model.estimate(&t.state),
                status: t.status,
                confirmed: t.confirmed,
            })
            .collect();
        let dets: Vec<Detection> = dets
            .iter()
            .map(|d| {
                Ok(Detection {
                    bbox: d.bbox.convert(mode)?,
                    ..*d
                })
            })
            .collect::<Result<_>>()?;
        let assoc = byte_associate(&views, &dets, cfg);

        for &(ti, di) in &assoc.matches {
            let t = &mut tracks[ti];
            model.update(&mut t.state, &dets[di].bbox)?;
            t.confirmed = true;
            t.status = TrackStatus::Active;
            t.last_update = *frame;
            t.scores.push(dets[di].score);
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut tracks[ti];
            if !t.confirmed || frame - t.last_update > cfg.max_lost {
                t.status = TrackStatus::Removed;
            } else {
                t.status = TrackStatus::Lost;
            }
        }
        tracks.retain(|t| t.status != TrackStatus::Removed);
        for &di in &assoc.unmatched_detections {
            let d = &dets[di];
            tracks.push(Track {
                track_id: next_id,
                state: model.initiate(&d.bbox)?,
                status: TrackStatus::Active,
                confirmed: k == 0,
                last_update: *frame,
                scores: vec![d.score],
            });
            next_id += 1;
        }

        let mut boxes: Vec<TrackBox> = tracks
            .iter()
            .filter(|t| t.confirmed && t.status == TrackStatus::Active && t.last_update == *frame)
            .map(|t| TrackBox {
                track_id: t.track_id,
                bbox: model.estimate(&t.state),
                score: *t.scores.last().expect("scored on creation"),
            })
            .filter(|b| b.bbox.area() > cfg.min_box_area)
            .collect();
        boxes.sort_by_key(|b| b.track_id);
        out.push(FrameTracks {
            frame: *frame,
            tracks: boxes,
        });
    }
    Ok(out)
}

/// Counts identity switches: a ground-truth object whose matched output id
/// differs from the id it was last matched to. Matching per frame is
/// Hungarian on `1 − IoU` with IoU at least `min_iou`.
pub fn identity_switches(truth: &[(u32, Vec<(i64, BBox)>)], output: &[FrameTracks], min_iou: f64) -> usize {
    use std::collections::HashMap;
    let by_frame: HashMap<u32, &FrameTracks> = output.iter().map(|f| (f.frame, f)).collect();
    let mut last: HashMap<i64, u64> = HashMap::new();
    let mut switches = 0;
    for (frame, objs) in truth {
        let Some(ft) = by_frame.get(frame) else { continue };
        let cost: Vec<Vec<f64>> = objs
            .iter()
            .map(|(_, g)| ft.tracks.iter().map(|t| 1.0 - iou_unchecked(g, &t.bbox)).collect())
            .collect();
        for (i, j) in assign_with_threshold(&cost, 1.0 - min_iou) {
            let gid = objs[i].0;
            let tid = ft.tracks[j].track_id;
            if last.insert(gid, tid).is_some_and(|prev| prev != tid) {
                switches += 1;
            }
        }
    }
    switches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::StateMode;
    use crate::linear_models::LinearModelConfig;
    use crate::motion::KalmanModel;

    fn tl(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::from_tlwh(l, t, w, h).unwrap()
    }

    fn det(b: BBox, score: f64) -> Detection {
        Detection { bbox: b, score, source_id: -1 }
    }

    fn view(b: BBox) -> TrackView {
        TrackView {
            bbox: b,
            status: TrackStatus::Active,
            confirmed: true,
        }
    }

    fn kf() -> KalmanModel {
        KalmanModel::new(LinearModelConfig::new(StateMode::Xyah, 0.05))
    }

    #[test]
    fn single_high_detection_matches_in_first_stage() {
        let b = tl(0.0, 0.0, 10.0, 100.0);
        let a = byte_associate(&[view(b)], &[det(b, 0.9)], &ByteConfig::default());
        assert_eq!(a.matches, vec![(0, 0)]);
        assert!(a.unmatched_tracks.is_empty() && a.unmatched_detections.is_empty());
    }

    #[test]
    fn mid_score_detection_only_in_second_stage() {
        let b = tl(0.0, 0.0, 10.0, 100.0);
        let cfg = ByteConfig::default();
        let a = byte_associate(&[view(b)], &[det(b, 0.3)], &cfg);
        assert_eq!(a.matches, vec![(0, 0)]);
        // A lost track is not offered to the second stage.
        let lost = TrackView { status: TrackStatus::Lost, ..view(b) };
        let a = byte_associate(&[lost], &[det(b, 0.3)], &cfg);
        assert!(a.matches.is_empty());
        assert!(a.unmatched_detections.is_empty(), "low-score leftovers never spawn");
        // Nor does it spawn a new track.
        let a = byte_associate(&[], &[det(b, 0.3)], &cfg);
        assert!(a.unmatched_detections.is_empty());
    }

    #[test]
    fn crossed_ious_pick_the_better_pairing() {
        let iou = [[0.8, 0.6], [0.5, 0.9]];
        let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
        assert_eq!(assign_with_threshold(&cost, 0.8), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn association_is_a_matching() {
        let tracks: Vec<TrackView> = (0..4).map(|i| view(tl(i as f64 * 5.0, 0.0, 10.0, 20.0))).collect();
        let dets: Vec<Detection> = (0..5)
            .map(|i| det(tl(i as f64 * 4.0, 1.0, 10.0, 20.0), 0.2 + 0.15 * i as f64))
            .collect();
        let a = byte_associate(&tracks, &dets, &ByteConfig::default());
        let mut ts: Vec<_> = a.matches.iter().map(|m| m.0).chain(a.unmatched_tracks.iter().copied()).collect();
        ts.sort();
        assert_eq!(ts, vec![0, 1, 2, 3]);
        let mut ds: Vec<_> = a.matches.iter().map(|m| m.1).collect();
        ds.sort();
        ds.dedup();
        assert_eq!(ds.len(), a.matches.len());
        assert!(a.unmatched_detections.iter().all(|d| !ds.contains(d)));
    }

    #[test]
    fn config_validation() {
        assert!(ByteConfig::default().validate().is_ok());
        let bad = ByteConfig { low_thresh: 0.7, ..ByteConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn walk(frames: u32, skip: &[u32]) -> Vec<(u32, Vec<Detection>)> {
        (1..=frames)
            .map(|f| {
                let d = if skip.contains(&f) {
                    vec![]
                } else {
                    vec![det(tl(100.0 + 2.0 * f as f64, 50.0, 40.0, 90.0), 0.95)]
                };
                (f, d)
            })
            .collect()
    }

    #[test]
    fn single_object_keeps_one_id() {
        let out = track_sequence(&walk(20, &[]), &kf(), &ByteConfig::default()).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|f| f.tracks.len() == 1 && f.tracks[0].track_id == 1));
    }

    #[test]
    fn short_gap_resumes_same_id() {
        let out = track_sequence(&walk(20, &[8, 9, 10]), &kf(), &ByteConfig::default()).unwrap();
        for f in &out {
            if (8..=10).contains(&f.frame) {
                assert!(f.tracks.is_empty());
            } else {
                assert_eq!(f.tracks.len(), 1);
                assert_eq!(f.tracks[0].track_id, 1);
            }
        }
    }

    #[test]
    fn long_gap_retires_the_track_and_ids_are_not_reused() {
        let cfg = ByteConfig { max_lost: 2, ..ByteConfig::default() };
        let out = track_sequence(&walk(12, &[4, 5, 6, 7]), &kf(), &cfg).unwrap();
        let ids: Vec<u64> = out.iter().flat_map(|f| f.tracks.iter().map(|t| t.track_id)).collect();
        assert_eq!(ids.first(), Some(&1));
        assert!(ids.iter().skip_while(|&&i| i == 1).all(|&i| i == 2));
        // The respawned track is tentative on its first frame.
        assert!(out[7].tracks.is_empty());
        assert_eq!(out[8].tracks[0].track_id, 2);
    }

    #[test]
    fn empty_stream_gives_empty_output() {
        assert!(track_sequence(&[], &kf(), &ByteConfig::default()).unwrap().is_empty());
        let out = track_sequence(&[(1, vec![]), (2, vec![])], &kf(), &ByteConfig::default()).unwrap();
        assert!(out.iter().all(|f| f.tracks.is_empty()));
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        assert!(track_sequence(&[(2, vec![]), (1, vec![])], &kf(), &ByteConfig::default()).is_err());
    }

    #[test]
    fn switch_counter() {
        let g = tl(0.0, 0.0, 10.0, 10.0);
        let truth = vec![(1, vec![(7, g)]), (2, vec![(7, g)]), (3, vec![(7, g)])];
        let out = |ids: [u64; 3]| -> Vec<FrameTracks> {
            (0..3)
                .map(|i| FrameTracks {
                    frame: i as u32 + 1,
                    tracks: vec![TrackBox { track_id: ids[i], bbox: g, score: 1.0 }],
                })
                .collect()
        };
        assert_eq!(identity_switches(&truth, &out([1, 1, 1]), 0.5), 0);
        assert_eq!(identity_switches(&truth, &out([1, 2, 1]), 0.5), 2);
    }
}
