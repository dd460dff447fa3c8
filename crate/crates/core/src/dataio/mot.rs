use std::collections::BTreeMap;
use std::io::Read;

use crate::error::{Error, Result};
use crate::geometry::{BBox, StateMode};

use super::Trajectory;

/// Metadata attached to every track of one MOT sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInfo {
    pub dataset: String,
    pub sequence: String,
    pub category: String,
    pub img_w: u32,
    pub img_h: u32,
}

struct Row {
    frame: u32,
    left: f64,
    top: f64,
    w: f64,
    h: f64,
}

pub(crate) fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing column '{name}'"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} '{raw}'"),
    })
}

/// Parses a MOTChallenge `gt.txt`
/// (`frame,id,bb_left,bb_top,bb_width,bb_height,conf,class,visibility`).
///
/// Rows with `conf = 0` are dropped. A track whose frames are not
/// consecutive is cut into one trajectory per contiguous run; runs of a
/// single frame are discarded.
pub fn parse_mot_gt(reader: impl Read, info: &SequenceInfo) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut tracks: BTreeMap<i64, Vec<Row>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() < 7 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least 7 columns, found {}", rec.len()),
            });
        }
        let frame: u32 = field(&rec, 0, "frame", line)?;
        let id: i64 = field(&rec, 1, "id", line)?;
        let left: f64 = field(&rec, 2, "bb_left", line)?;
        let top: f64 = field(&rec, 3, "bb_top", line)?;
        let w: f64 = field(&rec, 4, "bb_width", line)?;
        let h: f64 = field(&rec, 5, "bb_height", line)?;
        let conf: f64 = field(&rec, 6, "conf", line)?;
        if conf == 0.0 {
            continue;
        }
        if !(w > 0.0 && h > 0.0 && left.is_finite() && top.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("degenerate box {left},{top},{w},{h}"),
            });
        }
        tracks.entry(id).or_default().push(Row {
            frame,
            left,
            top,
            w,
            h,
        });
    }

    let mut out = Vec::new();
    for (id, mut rows) in tracks {
        rows.sort_by_key(|r| r.frame);
        if let Some(w) = rows.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("track {id} has two boxes in frame {}", w[0].frame),
            });
        }
        let mut start = 0;
        for end in 1..=rows.len() {
            if end < rows.len() && rows[end].frame == rows[end - 1].frame + 1 {
                continue;
            }
            let run = &rows[start..end];
            start = end;
            if run.len() < 2 {
                continue;
            }
            let gt = run
                .iter()
                .map(|r| BBox::from_tlwh(r.left, r.top, r.w, r.h)?.convert(StateMode::Xyah))
                .collect::<Result<Vec<_>>>()?;
            out.push(Trajectory {
                dataset: info.dataset.clone(),
                sequence: info.sequence.clone(),
                track_id: id,
                category: info.category.clone(),
                img_w: info.img_w,
                img_h: info.img_h,
                frames: run.iter().map(|r| r.frame).collect(),
                gt,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info() -> SequenceInfo {
        SequenceInfo {
            dataset: "MOT17".into(),
            sequence: "MOT17-02".into(),
            category: "pedestrian".into(),
            img_w: 1920,
            img_h: 1080,
        }
    }

    #[test]
    fn converts_corner_boxes_to_centers() {
        let text = "1,7,100,200,50,100,1,1,1.0\n2,7,102,200,50,100,1,1,1.0\n";
        let t = parse_mot_gt(text.as_bytes(), &info()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].track_id, 7);
        assert_eq!(t[0].frames, vec![1, 2]);
        let b = t[0].gt[0];
        assert_eq!((b.cx, b.cy, b.p3, b.h), (125.0, 250.0, 0.5, 100.0));
        assert_eq!(t[0].category, "pedestrian");
    }

    #[test]
    fn zero_confidence_rows_are_dropped() {
        let text = "1,3,0,0,10,20,0,1,1\n2,3,0,0,10,20,0,1,1\n1,4,0,0,10,20,1,1,1\n2,4,1,0,10,20,1,1,1\n";
        let t = parse_mot_gt(text.as_bytes(), &info()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].track_id, 4);
    }

    #[test]
    fn frames_are_sorted() {
        let text = "2,1,5,5,10,20,1,1,1\n1,1,0,0,10,20,1,1,1\n";
        let t = parse_mot_gt(text.as_bytes(), &info()).unwrap();
        assert_eq!(t[0].frames, vec![1, 2]);
        assert_eq!(t[0].gt[0].cx, 5.0);
    }

    #[test]
    fn gaps_split_tracks() {
        let text = "1,1,0,0,10,20,1\n2,1,0,0,10,20,1\n5,1,0,0,10,20,1\n6,1,0,0,10,20,1\n7,1,0,0,10,20,1\n9,1,0,0,10,20,1\n";
        let t = parse_mot_gt(text.as_bytes(), &info()).unwrap();
        let frames: Vec<_> = t.iter().map(|t| t.frames.clone()).collect();
        assert_eq!(frames, vec![vec![1, 2], vec![5, 6, 7]]);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = "1,1,0,0,10,20,1\n2,1,zero,0,10,20,1\n";
        match parse_mot_gt(text.as_bytes(), &info()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("bb_left"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_mot_gt("1,1,0\n".as_bytes(), &info()).is_err());
        assert!(parse_mot_gt("1,1,0,0,0,20,1\n".as_bytes(), &info()).is_err());
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_mot_gt("".as_bytes(), &info()).unwrap().is_empty());
    }
}
