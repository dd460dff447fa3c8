use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::dataio::mot_field as field;
use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{Detection, FrameTracks};

fn read_rows(reader: impl Read, min_cols: usize) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() < min_cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least {min_cols} columns, found {}", rec.len()),
            });
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn tlwh_box(rec: &csv::StringRecord, line: usize) -> Result<BBox> {
    let left: f64 = field(rec, 2, "bb_left", line)?;
    let top: f64 = field(rec, 3, "bb_top", line)?;
    let w: f64 = field(rec, 4, "bb_width", line)?;
    let h: f64 = field(rec, 5, "bb_height", line)?;
    BBox::from_tlwh(left, top, w, h).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

/// Parses `frame,id,x,y,w,h,score` detection rows (extra columns ignored).
pub fn parse_detections(reader: impl Read) -> Result<Vec<(u32, Detection)>> {
    read_rows(reader, 7)?
        .into_iter()
        .map(|(line, rec)| {
            let frame: u32 = field(&rec, 0, "frame", line)?;
            let source_id: i64 = field(&rec, 1, "id", line)?;
            let score: f64 = field(&rec, 6, "score", line)?;
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::Parse {
                    line,
                    msg: format!("score {score} outside [0, 1]"),
                });
            }
            Ok((
                frame,
                Detection {
                    bbox: tlwh_box(&rec, line)?,
                    score,
                    source_id,
                },
            ))
        })
        .collect()
}

/// Ground-truth rows (`conf != 0`) turned into detections of score 1.
pub fn oracle_detections(reader: impl Read) -> Result<Vec<(u32, Detection)>> {
    let mut out = Vec::new();
    for (line, rec) in read_rows(reader, 7)? {
        let conf: f64 = field(&rec, 6, "conf", line)?;
        if conf == 0.0 {
            continue;
        }
        out.push((
            field(&rec, 0, "frame", line)?,
            Detection {
                bbox: tlwh_box(&rec, line)?,
                score: 1.0,
                source_id: field(&rec, 1, "id", line)?,
            },
        ));
    }
    Ok(out)
}

/// Groups detections into one entry per frame from 1 to the last frame seen
/// (or `last_frame` if larger), filling gaps with empty frames.
pub fn frames_from_detections(dets: Vec<(u32, Detection)>, last_frame: Option<u32>) -> Vec<(u32, Vec<Detection>)> {
    let mut by: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (f, d) in dets {
        by.entry(f).or_default().push(d);
    }
    let end = by.keys().next_back().copied().unwrap_or(0).max(last_frame.unwrap_or(0));
    (1..=end).map(|f| (f, by.remove(&f).unwrap_or_default())).collect()
}

/// Writes `frame,id,bb_left,bb_top,w,h,score,-1,-1,-1` lines, frame-major.
pub fn write_mot_results(frames: &[FrameTracks], mut w: impl Write) -> Result<()> {
    for f in frames {
        for t in &f.tracks {
            let [l, top, bw, bh] = t.bbox.tlwh();
            writeln!(w, "{},{},{},{},{},{},{},-1,-1,-1", f.frame, t.track_id, l, top, bw, bh, t.score)?;
        }
    }
    w.flush()?;
    Ok(())
}
