//! Trajectory datasets: MOTChallenge ingestion, semi-simulated measurements,
//! temporal splits and the line-delimited dataset format.

mod format;
mod mot;
pub(crate) use mot::field as mot_field;
mod simulate;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aiou_parts, BBox, StateMode};

pub use format::{read_dataset, write_dataset, DATASET_SCHEMA};
pub use mot::{parse_mot_gt, SequenceInfo};
pub use simulate::{simulate_all, simulate_measurements, trajectory_rng};

/// One ground-truth track.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dataset: String,
    pub sequence: String,
    pub track_id: i64,
    pub category: String,
    pub img_w: u32,
    pub img_h: u32,
    /// Strictly increasing frame indices.
    pub frames: Vec<u32>,
    /// XYAH boxes aligned with `frames`.
    pub gt: Vec<BBox>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.gt.len() {
            return Err(Error::format("gt", "length differs from frames"));
        }
        if self.frames.len() < 2 {
            return Err(Error::format("frames", "a trajectory needs at least two frames"));
        }
        if self.frames.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format("frames", "frames must be strictly increasing"));
        }
        for b in &self.gt {
            if b.mode != StateMode::Xyah {
                return Err(Error::format("gt", "boxes must be XYAH"));
            }
            b.validate().map_err(|e| Error::format("gt", e.to_string()))?;
        }
        Ok(())
    }

    /// Sub-trajectory over the index range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            frames: self.frames[start..end].to_vec(),
            gt: self.gt[start..end].to_vec(),
            ..self.clone()
        }
    }
}

/// A ground-truth track paired with simulated measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSimTrajectory {
    pub base: Trajectory,
    /// XYAH measurements aligned with `base.gt`.
    pub meas: Vec<BBox>,
    pub alpha_p: f64,
    pub seed: u64,
}

impl SemiSimTrajectory {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.meas.len() != self.base.gt.len() {
            return Err(Error::format("meas", "length differs from gt"));
        }
        for b in &self.meas {
            if b.mode != StateMode::Xyah {
                return Err(Error::format("meas", "boxes must be XYAH"));
            }
            b.validate().map_err(|e| Error::format("meas", e.to_string()))?;
        }
        Ok(())
    }

    fn slice(&self, start: usize, end: usize) -> SemiSimTrajectory {
        SemiSimTrajectory {
            base: self.base.slice(start, end),
            meas: self.meas[start..end].to_vec(),
            alpha_p: self.alpha_p,
            seed: self.seed,
        }
    }

    /// Ground truth and measurements converted to `mode`.
    pub fn boxes_in(&self, mode: StateMode) -> Result<(Vec<BBox>, Vec<BBox>)> {
        let conv = |v: &[BBox]| v.iter().map(|b| b.convert(mode)).collect::<Result<Vec<_>>>();
        Ok((conv(&self.base.gt)?, conv(&self.meas)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SemiSimTrajectory>,
    pub val: Vec<SemiSimTrajectory>,
    pub test: Vec<SemiSimTrajectory>,
}

impl DatasetSplit {
    pub fn part(&self, name: SplitName) -> &[SemiSimTrajectory] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Default share of the training pool moved to validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// Result of [`make_splits`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub split: DatasetSplit,
    /// Trajectories shorter than four frames, left out.
    pub skipped: usize,
}

/// Cuts every trajectory at `floor(T/2)`: the first half joins the training
/// pool and the second half the test set. A seeded `val_fraction` of the
/// pool (rounded, at trajectory granularity) moves to validation.
pub fn make_splits(trajs: &[SemiSimTrajectory], val_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::domain(format!(
            "val_fraction must be in [0, 1], got {val_fraction}"
        )));
    }
    let mut pool = Vec::new();
    let mut test = Vec::new();
    let mut skipped = 0;
    for t in trajs {
        let n = t.len();
        if n < 4 {
            skipped += 1;
            continue;
        }
        let cut = n / 2;
        pool.push(t.slice(0, cut));
        test.push(t.slice(cut, n));
    }
    if skipped > 0 {
        log::warn!("{skipped} trajectories shorter than 4 frames skipped");
    }
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; pool.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = pool
        .into_iter()
        .zip(is_val)
        .partition(|(_, v)| *v);
    Ok(SplitOutcome {
        split: DatasetSplit {
            train: train.into_iter().map(|(t, _)| t).collect(),
            val: val.into_iter().map(|(t, _)| t).collect(),
            test,
        },
        skipped,
    })
}

/// One row of [`dataset_aiou_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AiouRow {
    pub dataset: String,
    pub category: String,
    pub tracks: usize,
    pub pairs: usize,
    pub aiou: f64,
}

/// Adjacent-frame AIoU per (dataset, category), sorted by both keys.
/// Categories without any trajectory do not appear.
pub fn dataset_aiou_report(trajs: &[Trajectory]) -> Result<Vec<AiouRow>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String), Vec<&[BBox]>> = BTreeMap::new();
    for t in trajs {
        groups
            .entry((t.dataset.clone(), t.category.clone()))
            .or_default()
            .push(&t.gt);
    }
    groups
        .into_iter()
        .map(|((dataset, category), seqs)| {
            let (sum, pairs) = aiou_parts(&seqs)?;
            Ok(AiouRow {
                dataset,
                category,
                tracks: seqs.len(),
                pairs,
                aiou: sum / pairs as f64,
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn toy_trajectory(track_id: i64, len: usize) -> Trajectory {
    Trajectory {
        dataset: "toy".into(),
        sequence: "seq-01".into(),
        track_id,
        category: "person".into(),
        img_w: 1920,
        img_h: 1080,
        frames: (1..=len as u32).collect(),
        gt: (0..len)
            .map(|t| BBox::xyah(100.0 + 2.0 * t as f64, 300.0, 0.5, 120.0).unwrap())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semi(track_id: i64, len: usize) -> SemiSimTrajectory {
        simulate_measurements(&toy_trajectory(track_id, len), 0.05, 1).unwrap()
    }

    #[test]
    fn halves_are_floor_split_and_disjoint() {
        let out = make_splits(&[semi(1, 600), semi(2, 5)], 0.0, 0).unwrap();
        let s = out.split;
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.train[0].base.frames.first(), Some(&1));
        assert_eq!(s.train[0].base.frames.last(), Some(&300));
        assert_eq!(s.test[0].base.frames.first(), Some(&301));
        assert_eq!(s.test[0].base.frames.last(), Some(&600));
        assert_eq!((s.train[1].len(), s.test[1].len()), (2, 3));
        for (a, b) in s.train.iter().zip(&s.test) {
            assert!(a.base.frames.iter().all(|f| !b.base.frames.contains(f)));
        }
    }

    #[test]
    fn validation_takes_a_seeded_tenth() {
        let trajs: Vec<_> = (0..100).map(|i| semi(i, 8)).collect();
        let a = make_splits(&trajs, DEFAULT_VAL_FRACTION, 4).unwrap().split;
        assert_eq!(a.val.len(), 10);
        assert_eq!(a.train.len(), 90);
        assert_eq!(a.test.len(), 100);
        let b = make_splits(&trajs, DEFAULT_VAL_FRACTION, 4).unwrap().split;
        assert_eq!(a, b);
        let c = make_splits(&trajs, DEFAULT_VAL_FRACTION, 5).unwrap().split;
        assert_ne!(a.val, c.val);
        let ids = |v: &[SemiSimTrajectory]| v.iter().map(|t| t.base.track_id).collect::<Vec<_>>();
        assert!(ids(&a.val).iter().all(|i| !ids(&a.train).contains(i)));
    }

    #[test]
    fn short_trajectories_are_counted() {
        let out = make_splits(&[semi(1, 3), semi(2, 4)], 0.1, 0).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.split.test.len(), 1);
        assert!(make_splits(&[], 1.5, 0).is_err());
    }

    #[test]
    fn aiou_report_groups_by_category() {
        let mut a = toy_trajectory(1, 5);
        a.gt = vec![BBox::xyah(0.0, 0.0, 1.0, 2.0).unwrap(); 5];
        let mut b = toy_trajectory(2, 2);
        b.category = "car".into();
        b.gt = vec![
            BBox::from_tlwh(-1.0, -1.0, 2.0, 2.0).unwrap().convert(StateMode::Xyah).unwrap(),
            BBox::from_tlwh(0.0, -1.0, 2.0, 2.0).unwrap().convert(StateMode::Xyah).unwrap(),
        ];
        let rows = dataset_aiou_report(&[a, b]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].category, "car");
        assert!((rows[0].aiou - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[1].aiou, 1.0);
        assert!(dataset_aiou_report(&[]).unwrap().is_empty());
    }
}
