use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, StateMode};

use super::{DatasetSplit, SemiSimTrajectory, SplitName, Trajectory};

pub const DATASET_SCHEMA: &str = "lakf-ds-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    dataset: String,
    sequence: String,
    track_id: i64,
    category: String,
    img_w: u32,
    img_h: u32,
    alpha_p: f64,
    seed: u64,
    frames: Vec<u32>,
    gt: Vec<[f64; 4]>,
    meas: Vec<[f64; 4]>,
    split: SplitName,
}

impl Record {
    fn from_traj(t: &SemiSimTrajectory, split: SplitName) -> Self {
        Record {
            dataset: t.base.dataset.clone(),
            sequence: t.base.sequence.clone(),
            track_id: t.base.track_id,
            category: t.base.category.clone(),
            img_w: t.base.img_w,
            img_h: t.base.img_h,
            alpha_p: t.alpha_p,
            seed: t.seed,
            frames: t.base.frames.clone(),
            gt: t.base.gt.iter().map(BBox::to_array).collect(),
            meas: t.meas.iter().map(BBox::to_array).collect(),
            split,
        }
    }

    fn into_traj(self) -> Result<(SemiSimTrajectory, SplitName)> {
        let boxes = |v: Vec<[f64; 4]>, name: &str| {
            v.into_iter()
                .map(|a| BBox::from_array(a, StateMode::Xyah))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::format(name, e.to_string()))
        };
        let t = SemiSimTrajectory {
            base: Trajectory {
                dataset: self.dataset,
                sequence: self.sequence,
                track_id: self.track_id,
                category: self.category,
                img_w: self.img_w,
                img_h: self.img_h,
                frames: self.frames,
                gt: boxes(self.gt, "gt")?,
            },
            meas: boxes(self.meas, "meas")?,
            alpha_p: self.alpha_p,
            seed: self.seed,
        };
        t.validate()?;
        Ok((t, self.split))
    }
}

/// Writes a header line then one JSON record per trajectory. Floats use the
/// shortest representation that parses back to the identical value.
pub fn write_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(split, &mut w)?;
    w.flush()?;
    Ok(())
}

fn to_io(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn write_to(split: &DatasetSplit, w: &mut impl Write) -> Result<()> {
    serde_json::to_writer(
        &mut *w,
        &Header {
            schema: DATASET_SCHEMA.into(),
        },
    )
    .map_err(to_io)?;
    writeln!(w)?;
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        for t in split.part(name) {
            serde_json::to_writer(&mut *w, &Record::from_traj(t, name)).map_err(to_io)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    read_from(BufReader::new(File::open(path)?))
}

pub(crate) fn read_from(r: impl BufRead) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    let mut header_seen = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("line {}", i + 1);
        if !header_seen {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| Error::format("schema", format!("{at}: bad header: {e}")))?;
            if h.schema != DATASET_SCHEMA {
                return Err(Error::format(
                    "schema",
                    format!("expected '{DATASET_SCHEMA}', found '{}'", h.schema),
                ));
            }
            header_seen = true;
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::format("record", format!("{at}: {e}")))?;
        let (t, name) = rec.into_traj().map_err(|e| match e {
            Error::Format { field, msg } => Error::format(field, format!("{at}: {msg}")),
            other => other,
        })?;
        match name {
            SplitName::Train => split.train.push(t),
            SplitName::Val => split.val.push(t),
            SplitName::Test => split.test.push(t),
        }
    }
    Ok(split)
}
