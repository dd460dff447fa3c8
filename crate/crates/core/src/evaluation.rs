//! Recall at IoU thresholds, average recall and the noise-mismatch grid.
//!
//! Every estimate is paired with its ground truth, so recall is simply the
//! share of frames whose IoU reaches the threshold.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::SemiSimTrajectory;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, StateMode};
use crate::motion::{KalmanModel, LearnedModel, MotionModel};

/// `β ∈ {0.50, 0.55, …, 0.95}`.
pub const BETAS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

fn check_ious(ious: &[f64]) -> Result<()> {
    if ious.is_empty() {
        return Err(Error::domain("recall needs at least one IoU"));
    }
    if let Some(v) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("IoU {v} outside [0, 1]")));
    }
    Ok(())
}

/// Share of IoUs `>= beta`.
pub fn recall_at(ious: &[f64], beta: f64) -> Result<f64> {
    check_ious(ious)?;
    let hits = ious.iter().filter(|v| **v >= beta).count();
    Ok(hits as f64 / ious.len() as f64)
}

/// Mean of [`recall_at`] over [`BETAS`].
pub fn average_recall(ious: &[f64]) -> Result<f64> {
    check_ious(ious)?;
    let mut sum = 0.0;
    for b in BETAS {
        sum += recall_at(ious, b)?;
    }
    Ok(sum / BETAS.len() as f64)
}

/// Which box of each frame is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxView {
    /// Posterior estimate after the update.
    Updated,
    /// Prediction before the update.
    Predicted,
}

impl BoxView {
    pub fn name(&self) -> &'static str {
        match self {
            BoxView::Updated => "updated",
            BoxView::Predicted => "predicted",
        }
    }
}

/// Recall statistics of one (dataset, category) group.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub dataset: String,
    pub category: String,
    pub model: String,
    pub alpha_p: f64,
    pub mode: StateMode,
    pub view: BoxView,
    pub frames: usize,
    pub tp: [usize; 10],
    pub recalls: [f64; 10],
    pub ar: f64,
}

impl RecallRow {
    fn from_ious(key: &GroupKey, meta: &RowMeta, ious: &[f64]) -> Result<Self> {
        check_ious(ious)?;
        let mut tp = [0; 10];
        let mut recalls = [0.0; 10];
        for (k, b) in BETAS.iter().enumerate() {
            tp[k] = ious.iter().filter(|v| **v >= *b).count();
            recalls[k] = tp[k] as f64 / ious.len() as f64;
        }
        Ok(RecallRow {
            dataset: key.0.clone(),
            category: key.1.clone(),
            model: meta.model.clone(),
            alpha_p: meta.alpha_p,
            mode: meta.mode,
            view: key.2,
            frames: ious.len(),
            tp,
            recalls,
            ar: recalls.iter().sum::<f64>() / 10.0,
        })
    }

    pub fn fn_counts(&self) -> [usize; 10] {
        self.tp.map(|t| self.frames - t)
    }

    pub fn recall(&self, beta_index: usize) -> f64 {
        self.recalls[beta_index]
    }
}

/// Category means for one model and view.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub alpha_p: f64,
    pub mode: StateMode,
    pub view: BoxView,
    pub categories: usize,
    pub recalls: [f64; 10],
    pub m_re50: f64,
    pub m_re75: f64,
    pub m_ar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<RecallRow>,
    pub summary: Vec<SummaryRow>,
}

impl EvalReport {
    /// The summary of the posterior view.
    pub fn headline(&self) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.view == BoxView::Updated)
    }

    pub fn m_ar(&self) -> f64 {
        self.headline().map_or(f64::NAN, |s| s.m_ar)
    }
}

/// Anything that turns a measurement sequence into box estimates.
#[derive(Debug, Clone)]
pub enum Estimator {
    /// The measurements themselves.
    Observation(StateMode),
    Kalman(KalmanModel),
    Learned(LearnedModel),
    /// Returns the ground truth; used to sanity-check the harness.
    Oracle(StateMode),
}

impl Estimator {
    pub fn mode(&self) -> StateMode {
        match self {
            Estimator::Observation(m) | Estimator::Oracle(m) => *m,
            Estimator::Kalman(k) => k.mode(),
            Estimator::Learned(l) => l.mode(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Estimator::Observation(_) => "observation".into(),
            Estimator::Oracle(_) => "oracle".into(),
            Estimator::Kalman(k) => k.name(),
            Estimator::Learned(l) => l.name(),
        }
    }

    /// `(predicted, updated)` per frame; the predicted box is absent on the
    /// first frame and for estimators without a prediction step.
    pub fn estimate(&self, gt: &[BBox], meas: &[BBox]) -> Result<Vec<(Option<BBox>, BBox)>> {
        let from_steps = |v: Vec<crate::kalman_core::StepEstimate>| {
            v.into_iter().map(|s| (s.predicted, s.updated)).collect()
        };
        Ok(match self {
            Estimator::Observation(_) => meas.iter().map(|m| (None, *m)).collect(),
            Estimator::Oracle(_) => gt.iter().map(|g| (Some(*g), *g)).collect(),
            Estimator::Kalman(k) => from_steps(k.run(meas)?),
            Estimator::Learned(l) => from_steps(l.run(meas)?),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Also score predicted boxes.
    pub include_predicted: bool,
    /// Overrides the estimator's own name in the report.
    pub label: Option<String>,
}

type GroupKey = (String, String, BoxView);

struct RowMeta {
    model: String,
    alpha_p: f64,
    mode: StateMode,
}

/// IoUs of one trajectory, first frame excluded.
fn trajectory_ious(
    est: &Estimator,
    t: &SemiSimTrajectory,
    include_predicted: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (gt, meas) = t.boxes_in(est.mode())?;
    let out = est.estimate(&gt, &meas)?;
    let mut post = Vec::with_capacity(gt.len());
    let mut prior = Vec::new();
    for ((p, u), g) in out.iter().zip(&gt).skip(1) {
        post.push(iou(u, g)?);
        if include_predicted {
            if let Some(p) = p {
                prior.push(iou(p, g)?);
            }
        }
    }
    Ok((post, prior))
}

/// Scores `est` on `trajs`, grouped per (dataset, category).
pub fn evaluate(est: &Estimator, trajs: &[SemiSimTrajectory], opts: &EvalOptions) -> Result<EvalReport> {
    if let Estimator::Learned(l) = est {
        if l.net.mode() != l.cfg.mode {
            return Err(Error::domain("learned model mode differs from its filter config"));
        }
    }
    let per_traj: Vec<(Vec<f64>, Vec<f64>)> = trajs
        .par_iter()
        .map(|t| trajectory_ious(est, t, opts.include_predicted))
        .collect::<Result<_>>()?;
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for (t, (post, prior)) in trajs.iter().zip(per_traj) {
        let key = |v| (t.base.dataset.clone(), t.base.category.clone(), v);
        groups.entry(key(BoxView::Updated)).or_default().extend(post);
        if !prior.is_empty() {
            groups.entry(key(BoxView::Predicted)).or_default().extend(prior);
        }
    }
    let alpha_p = trajs.first().map_or(f64::NAN, |t| t.alpha_p);
    let meta = RowMeta {
        model: opts.label.clone().unwrap_or_else(|| est.name()),
        alpha_p,
        mode: est.mode(),
    };
    let rows = groups
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| RecallRow::from_ious(k, &meta, v))
        .collect::<Result<Vec<_>>>()?;
    let summary = [BoxView::Updated, BoxView::Predicted]
        .into_iter()
        .filter_map(|view| {
            let rs: Vec<&RecallRow> = rows.iter().filter(|r| r.view == view).collect();
            if rs.is_empty() {
                return None;
            }
            let n = rs.len() as f64;
            let mut recalls = [0.0; 10];
            for r in &rs {
                for k in 0..10 {
                    recalls[k] += r.recalls[k] / n;
                }
            }
            Some(SummaryRow {
                model: meta.model.clone(),
                alpha_p,
                mode: meta.mode,
                view,
                categories: rs.len(),
                recalls,
                m_re50: recalls[0],
                m_re75: recalls[5],
                m_ar: rs.iter().map(|r| r.ar).sum::<f64>() / n,
            })
        })
        .collect();
    Ok(EvalReport { rows, summary })
}

fn recall_header() -> Vec<String> {
    BETAS
        .iter()
        .map(|b| format!("re_{}", (b * 100.0).round() as u32))
        .collect()
}

/// One line per (dataset, category, view) plus a `mean` line per view.
pub fn write_report_csv(reports: &[EvalReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["dataset", "category", "model", "alpha_p", "mode", "view", "frames"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(recall_header());
    header.push("ar".into());
    out.write_record(&header).map_err(csv_err)?;
    for rep in reports {
        for r in &rep.rows {
            let mut rec = vec![
                r.dataset.clone(),
                r.category.clone(),
                r.model.clone(),
                r.alpha_p.to_string(),
                r.mode.to_string(),
                r.view.name().to_string(),
                r.frames.to_string(),
            ];
            rec.extend(r.recalls.iter().map(|v| v.to_string()));
            rec.push(r.ar.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        for s in &rep.summary {
            let frames: usize = rep.rows.iter().filter(|r| r.view == s.view).map(|r| r.frames).sum();
            let mut rec = vec![
                "all".to_string(),
                "mean".to_string(),
                s.model.clone(),
                s.alpha_p.to_string(),
                s.mode.to_string(),
                s.view.name().to_string(),
                frames.to_string(),
            ];
            rec.extend(s.recalls.iter().map(|v| v.to_string()));
            rec.push(s.m_ar.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// mAR of every model (rows) on every test set (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchGrid {
    pub models: Vec<String>,
    pub test_alphas: Vec<f64>,
    /// `None` where the test set was empty.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn mismatch_grid(
    models: &[(String, Estimator)],
    tests: &[(f64, Vec<SemiSimTrajectory>)],
) -> Result<MismatchGrid> {
    let mut cells = Vec::with_capacity(models.len());
    for (label, est) in models {
        let mut row = Vec::with_capacity(tests.len());
        for (_, trajs) in tests {
            if trajs.is_empty() {
                row.push(None);
                continue;
            }
            let opts = EvalOptions {
                include_predicted: false,
                label: Some(label.clone()),
            };
            row.push(Some(evaluate(est, trajs, &opts)?.m_ar()));
        }
        cells.push(row);
    }
    Ok(MismatchGrid {
        models: models.iter().map(|(l, _)| l.clone()).collect(),
        test_alphas: tests.iter().map(|(a, _)| *a).collect(),
        cells,
    })
}

/// Header `model,<alpha>...`; empty cells are left blank.
pub fn write_grid_csv(grid: &MismatchGrid, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["model".to_string()];
    header.extend(grid.test_alphas.iter().map(|a| a.to_string()));
    out.write_record(&header).map_err(csv_err)?;
    for (m, row) in grid.models.iter().zip(&grid.cells) {
        let mut rec = vec![m.clone()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
