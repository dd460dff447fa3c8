//! Bounding-box parameterizations, IoU and adjacent-frame AIoU.
//!
//! A [`BBox`] stores a center, a height and a third size component whose
//! meaning depends on the [`StateMode`]: the width in `Xywh` mode and the
//! aspect ratio `w / h` in `Xyah` mode. Overlap is always computed on pixel
//! extents, so `Xyah` boxes are converted to corners first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which box parameterization a state or measurement uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMode {
    /// `[cx, cy, a, h]` with `a = w / h`.
    Xyah,
    /// `[cx, cy, w, h]`.
    Xywh,
}

impl fmt::Display for StateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateMode::Xyah => f.write_str("xyah"),
            StateMode::Xywh => f.write_str("xywh"),
        }
    }
}

impl std::str::FromStr for StateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyah" => Ok(StateMode::Xyah),
            "xywh" => Ok(StateMode::Xywh),
            other => Err(Error::domain(format!("unknown state mode `{other}`"))),
        }
    }
}

/// An axis-aligned bounding box in one of the two state parameterizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    /// Width in `Xywh` mode, aspect ratio in `Xyah` mode.
    pub p3: f64,
    pub h: f64,
    pub mode: StateMode,
}

impl BBox {
    /// Builds a validated box.
    pub fn new(cx: f64, cy: f64, p3: f64, h: f64, mode: StateMode) -> Result<Self> {
        let b = BBox { cx, cy, p3, h, mode };
        b.validate()?;
        Ok(b)
    }

    pub fn xyah(cx: f64, cy: f64, a: f64, h: f64) -> Result<Self> {
        Self::new(cx, cy, a, h, StateMode::Xyah)
    }

    pub fn xywh(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx, cy, w, h, StateMode::Xywh)
    }

    /// Builds an `Xywh` box from MOTChallenge top-left/width/height form.
    pub fn from_tlwh(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        Self::xywh(left + w / 2.0, top + h / 2.0, w, h)
    }

    /// Builds a box from a 4-vector `[cx, cy, p3, h]`.
    pub fn from_array(v: [f64; 4], mode: StateMode) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], mode)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.p3, self.h]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.p3, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain(format!("non-finite box {self:?}")));
        }
        if self.h <= 0.0 || self.p3 <= 0.0 {
            return Err(Error::domain(format!(
                "box must have positive size, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        match self.mode {
            StateMode::Xywh => self.p3,
            StateMode::Xyah => self.p3 * self.h,
        }
    }

    pub fn aspect(&self) -> f64 {
        match self.mode {
            StateMode::Xywh => self.p3 / self.h,
            StateMode::Xyah => self.p3,
        }
    }

    pub fn area(&self) -> f64 {
        self.width() * self.h
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let w = self.width();
        (
            self.cx - w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Top-left/width/height form used by MOTChallenge files.
    pub fn tlwh(&self) -> [f64; 4] {
        let w = self.width();
        [self.cx - w / 2.0, self.cy - self.h / 2.0, w, self.h]
    }

    /// Re-expresses the box in `target` mode; the pixel extent is unchanged.
    pub fn convert(&self, target: StateMode) -> Result<BBox> {
        self.validate()?;
        if self.mode == target {
            return Ok(*self);
        }
        let p3 = match target {
            StateMode::Xywh => self.p3 * self.h,
            StateMode::Xyah => self.p3 / self.h,
        };
        Ok(BBox {
            p3,
            mode: target,
            ..*self
        })
    }
}

/// Free-function form of [`BBox::convert`].
pub fn convert_mode(b: &BBox, target: StateMode) -> Result<BBox> {
    b.convert(target)
}

/// Intersection over union of two boxes, computed on pixel extents.
pub fn iou(est: &BBox, gt: &BBox) -> Result<f64> {
    est.validate()?;
    gt.validate()?;
    Ok(iou_unchecked(est, gt))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Average IoU of each object's boxes on adjacent frames.
///
/// Every adjacent pair contributes equally, so ragged sequence lengths reduce
/// to `sum(pair IoUs) / total pairs`.
pub fn aiou<S: AsRef<[BBox]>>(trajectories: &[S]) -> Result<f64> {
    let (sum, count) = aiou_parts(trajectories)?;
    if count == 0 {
        return Err(Error::domain("aiou needs at least one trajectory"));
    }
    Ok(sum / count as f64)
}

/// `(sum of adjacent IoUs, number of pairs)`, for aggregating across groups.
pub fn aiou_parts<S: AsRef<[BBox]>>(trajectories: &[S]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, seq) in trajectories.iter().enumerate() {
        let seq = seq.as_ref();
        if seq.len() < 2 {
            return Err(Error::domain(format!(
                "trajectory {i} has {} boxes; aiou needs at least 2",
                seq.len()
            )));
        }
        for pair in seq.windows(2) {
            sum += iou(&pair[0], &pair[1])?;
            count += 1;
        }
    }
    Ok((sum, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wh(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::xywh(cx, cy, w, h).unwrap()
    }

    #[test]
    fn convert_examples() {
        let b = wh(10.0, 20.0, 50.0, 100.0).convert(StateMode::Xyah).unwrap();
        assert_eq!(b.to_array(), [10.0, 20.0, 0.5, 100.0]);
        assert_eq!(b.mode, StateMode::Xyah);

        let same = wh(1.0, 2.0, 3.0, 4.0);
        assert_eq!(same.convert(StateMode::Xywh).unwrap(), same);

        let unit = BBox::xyah(0.0, 0.0, 1.0, 7.0).unwrap();
        assert_eq!(
            unit.convert(StateMode::Xywh).unwrap().to_array(),
            [0.0, 0.0, 7.0, 7.0]
        );
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::xywh(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::xyah(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::xyah(f64::NAN, 0.0, 1.0, 1.0).is_err());
        let bad = BBox {
            cx: 0.0,
            cy: 0.0,
            p3: 1.0,
            h: 0.0,
            mode: StateMode::Xywh,
        };
        assert!(iou(&bad, &wh(0.0, 0.0, 1.0, 1.0)).is_err());
        assert!(bad.convert(StateMode::Xyah).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = wh(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &wh(10.0, 10.0, 2.0, 2.0)).unwrap(), 0.0);
        let third = iou(&a, &wh(1.0, 0.0, 2.0, 2.0)).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aiou_examples() {
        let b = wh(5.0, 5.0, 2.0, 4.0);
        assert_eq!(aiou(&[vec![b; 5]]).unwrap(), 1.0);

        let pair = vec![wh(0.0, 0.0, 2.0, 2.0), wh(1.0, 0.0, 2.0, 2.0)];
        assert!((aiou(&[pair]).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        // Object one: IoUs {1.0, 0.5}; object two: {0.0, 0.5}.
        let o1 = vec![
            wh(0.0, 0.0, 2.0, 2.0),
            wh(0.0, 0.0, 2.0, 2.0),
            wh(0.0, 0.0, 2.0, 4.0),
        ];
        let o2 = vec![
            wh(0.0, 0.0, 2.0, 2.0),
            wh(50.0, 0.0, 2.0, 2.0),
            wh(50.0, 0.0, 4.0, 2.0),
        ];
        assert!((aiou(&[o1, o2]).unwrap() - 0.5).abs() < 1e-15);

        assert!(aiou(&[vec![b]]).is_err());
        assert!(aiou::<Vec<BBox>>(&[]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(cx, cy, w, h)| BBox::xywh(cx, cy, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_invariant_under_mode(a in arb_box(), b in arb_box()) {
            let direct = iou(&a, &b).unwrap();
            let ah = a.convert(StateMode::Xyah).unwrap();
            let bh = b.convert(StateMode::Xyah).unwrap();
            prop_assert!((iou(&ah, &bh).unwrap() - direct).abs() < 1e-12);
        }

        #[test]
        fn round_trip_through_xywh(cx in -1e3..1e3f64, cy in -1e3..1e3f64, a in 0.05..5.0f64, h in 1.0..900.0f64) {
            let b = BBox::xyah(cx, cy, a, h).unwrap();
            let back = b.convert(StateMode::Xywh).unwrap().convert(StateMode::Xyah).unwrap();
            for (x, y) in b.to_array().iter().zip(back.to_array()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn aiou_of_single_pairs_is_mean_iou(pairs in proptest::collection::vec((arb_box(), arb_box()), 1..8)) {
            let seqs: Vec<Vec<BBox>> = pairs.iter().map(|(a, b)| vec![*a, *b]).collect();
            let mean = pairs.iter().map(|(a, b)| iou(a, b).unwrap()).sum::<f64>() / pairs.len() as f64;
            prop_assert!((aiou(&seqs).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn self_iou_is_one_only_for_identical_extent() {
        let a = wh(3.0, 4.0, 5.0, 6.0);
        assert_eq!(iou(&a, &a.convert(StateMode::Xyah).unwrap()).unwrap(), 1.0);
        assert!(iou(&a, &wh(3.0, 4.0, 5.0, 6.1)).unwrap() < 1.0);
    }
}
