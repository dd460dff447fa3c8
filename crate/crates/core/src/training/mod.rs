//! Trajectory-level training of learned filters.
//!
//! The loss of one trajectory is the Smooth-L1 distance between posterior and
//! ground-truth boxes, summed over the four box coordinates and averaged over
//! frames. A batch averages per-trajectory losses with equal weight.

mod checkpoint;
mod gradcheck;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{smooth_l1, Grads, Tape};
use crate::dataio::{DatasetSplit, SemiSimTrajectory};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions, Estimator};
use crate::geometry::BBox;
use crate::kalman_core::{init_from_measurement, meas_vector, MIN_SIZE};
use crate::learned_filters::{GainNetwork, NetConfig};
use crate::linear_models::{build_measurement, LinearModelConfig, DEFAULT_ALPHA_P};
use crate::motion::LearnedModel;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_SCHEMA};
pub use gradcheck::{gradient_check, GradCheckOptions};

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_lr_init() -> f64 {
    1e-3
}
fn default_lr_final() -> f64 {
    1e-7
}
fn default_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr_init")]
    pub lr_init: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Truncated backpropagation window in frames; `None` unrolls the whole trajectory.
    #[serde(default)]
    pub tbptt_window: Option<usize>,
    /// Global gradient-norm ceiling.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr_init: default_lr_init(),
            lr_final: default_lr_final(),
            schedule: Schedule::Cosine,
            tbptt_window: None,
            clip_norm: default_clip(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch_size must be >= 1"));
        }
        if !(self.lr_final < self.lr_init && self.lr_final >= 0.0) {
            return Err(Error::domain(format!(
                "need 0 <= lr_final < lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if matches!(self.tbptt_window, Some(w) if w < 2) {
            return Err(Error::domain("tbptt_window must be >= 2"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::domain("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Per-frame Smooth-L1 summed over the four coordinates, averaged over frames.
pub fn smooth_l1_loss(est: &[[f64; 4]], gt: &[[f64; 4]]) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::domain(format!(
            "loss needs equal non-empty lengths, got {} and {}",
            est.len(),
            gt.len()
        )));
    }
    let total: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| e.iter().zip(g).map(|(a, b)| smooth_l1(a - b)).sum::<f64>())
        .sum();
    Ok(total / est.len() as f64)
}

/// Cosine annealing from `lr_init` at step 0 to `lr_final` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return cfg.lr_init;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + (PI * frac).cos())
}

/// The filter config learned variants run with; only the mode matters.
pub(crate) fn learned_lin(net: &GainNetwork) -> LinearModelConfig {
    LinearModelConfig::new(net.mode(), DEFAULT_ALPHA_P)
}

/// Loss of one trajectory, with its gradient added to `grads` scaled by `weight`.
///
/// With a window the unrolled graph is cut every `window` frames; the
/// estimates and hidden vectors carried over are treated as constants.
pub fn trajectory_loss_grad(
    net: &GainNetwork,
    gt: &[BBox],
    meas: &[BBox],
    window: Option<usize>,
    weight: f64,
    grads: &mut Grads,
) -> Result<f64> {
    let t_len = meas.len();
    if t_len == 0 || gt.len() != t_len {
        return Err(Error::domain("trajectory needs equal non-empty gt and meas"));
    }
    let lin = learned_lin(net);
    let init = init_from_measurement(&meas[0], &lin)?;
    let mut rec = net.start(&init, &meas[0]);
    let h = build_measurement();
    let first = (h * init.x) - meas_vector(&gt[0]);
    let mut loss = first.iter().map(|e| smooth_l1(*e)).sum::<f64>();
    let scale = 1.0 / t_len as f64;
    let steps = t_len - 1;
    let window = window.unwrap_or(steps.max(1)).max(1);
    let mut start = 1;
    while start < t_len {
        let end = (start + window).min(t_len);
        let mut tape = Tape::new(net.params());
        let consts = net.consts(&mut tape, &lin)?;
        let mut carry = net.carry_in(&mut tape, &rec);
        let mut total = None;
        for t in start..end {
            let prior = tape.matmul(consts.f, carry.x_post);
            let prior = tape.clamp_rows_min(prior, &[4, 6], MIN_SIZE);
            let y = tape.column(meas_vector(&meas[t]).as_slice());
            let (next, step) = net.tape_step(&mut tape, &consts, &carry, prior, y);
            let est = tape.matmul(consts.h, step.post);
            let g = tape.column(meas_vector(&gt[t]).as_slice());
            let err = tape.sub(est, g);
            let l = tape.smooth_l1_sum(err);
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l),
            });
            carry = next;
        }
        let total = total.expect("window is non-empty");
        let value = tape.scalar(total);
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss in frames {start}..{end}"
            )));
        }
        loss += value;
        if weight != 0.0 {
            tape.backward(total, weight * scale, grads);
        }
        rec = net.carry_out(&tape, &carry);
        start = end;
    }
    Ok(loss * scale)
}

/// Mean trajectory loss without gradients.
pub fn dataset_loss(net: &GainNetwork, trajs: &[SemiSimTrajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::domain("no trajectories"));
    }
    let losses: Vec<f64> = trajs
        .par_iter()
        .map(|t| {
            let (gt, meas) = t.boxes_in(net.mode())?;
            let mut scratch = Grads::zeros_like(net.params());
            trajectory_loss_grad(net, &gt, &meas, None, 0.0, &mut scratch)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_m_ar: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation mAR (the last epoch
    /// when there is no validation data).
    pub net: GainNetwork,
    pub best_epoch: usize,
    pub best_val_m_ar: Option<f64>,
    pub history: Vec<EpochRecord>,
}

fn val_m_ar(net: &GainNetwork, val: &[SemiSimTrajectory]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let est = Estimator::Learned(LearnedModel::new(net.clone()));
    Ok(Some(evaluate(&est, val, &EvalOptions::default())?.m_ar()))
}

/// Averaged gradient and loss of one batch. Per-trajectory gradients are
/// computed in parallel and summed in batch order.
pub fn batch_gradient(
    net: &GainNetwork,
    batch: &[&SemiSimTrajectory],
    window: Option<usize>,
) -> Result<(f64, Grads)> {
    let parts: Vec<(f64, Grads)> = batch
        .par_iter()
        .map(|t| {
            let (gt, meas) = t.boxes_in(net.mode())?;
            let mut g = Grads::zeros_like(net.params());
            let l = trajectory_loss_grad(net, &gt, &meas, window, 1.0, &mut g)?;
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let mut grads = Grads::zeros_like(net.params());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.add_assign(g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Adam over shuffled trajectory batches with a cosine learning rate,
/// gradient clipping and best-on-validation selection.
pub fn train(
    split: &DatasetSplit,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }
    let mut net = GainNetwork::new(*net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = split.train.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * per_epoch;
    let mut adam = Adam::new(net.num_parameters());
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GainNetwork)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr_init;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SemiSimTrajectory> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (loss, mut grads) = batch_gradient(&net, &batch, cfg.tbptt_window)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged at epoch {epoch}, step {step}"
                )));
            }
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            lr = lr_at(step, total_steps, cfg);
            let mut theta = net.params().to_flat();
            adam.step(&mut theta, &grads.to_flat(), lr);
            net.params_mut().set_flat(&theta)?;
            step += 1;
            epoch_loss += loss;
        }
        let val = val_m_ar(&net, &split.val)?;
        let rec = EpochRecord {
            epoch,
            step,
            lr,
            loss: epoch_loss / per_epoch as f64,
            val_m_ar: val,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} lr {:.2e} val mAR {:?}",
            rec.loss,
            lr,
            rec.val_m_ar
        );
        on_epoch(&rec);
        history.push(rec);
        let score = val.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((s, _, _)) => val.is_none() || score > *s,
        };
        if better {
            best = Some((score, epoch, net.clone()));
        }
    }
    let (score, best_epoch, net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        net,
        best_epoch,
        best_val_m_ar: score.is_finite().then_some(score),
        history,
    })
}

/// Convenience for tests and tools: `(gt, meas)` as coordinate arrays.
pub fn box_arrays(v: &[BBox]) -> Vec<[f64; 4]> {
    v.iter().map(BBox::to_array).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate, MotionKind, SynthConfig};
    use crate::dataio::{make_splits, simulate_all};
    use crate::geometry::StateMode;
    use crate::learned_filters::{run_learned_filter, Variant};

    #[test]
    fn loss_examples() {
        let z = [[1.0, 2.0, 3.0, 4.0]];
        assert_eq!(smooth_l1_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(smooth_l1_loss(&[[0.5, 0.0, 0.0, 0.0]], &[[0.0; 4]]).unwrap(), 0.125);
        assert_eq!(smooth_l1_loss(&[[2.0, 0.0, 0.0, 0.0]], &[[0.0; 4]]).unwrap(), 1.5);
        assert_eq!(
            smooth_l1_loss(&[[2.0, 0.0, 0.0, 0.0], [0.0; 4]], &[[0.0; 4], [0.0; 4]]).unwrap(),
            0.75
        );
        assert!(smooth_l1_loss(&z, &[]).is_err());
    }

    #[test]
    fn smooth_l1_is_c1_at_the_knee() {
        let e = 1e-9;
        assert!((smooth_l1(1.0 + e) - smooth_l1(1.0 - e)).abs() < 1e-8);
        let d = |x: f64| (smooth_l1(x + 1e-12) - smooth_l1(x - 1e-12)) / 2e-12;
        assert!((d(1.0 + e) - d(1.0 - e)).abs() < 1e-3);
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, 100, &cfg), 1e-3);
        assert!((lr_at(100, 100, &cfg) - 1e-7).abs() < 1e-20);
        assert!((lr_at(50, 100, &cfg) - (1e-3 + 1e-7) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.tbptt_window = Some(1);
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr_final: 1e-2,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c: TrainConfig = serde_json::from_str("{\"epochs\": 3}").unwrap();
        assert_eq!((c.epochs, c.batch_size), (3, 32));
        assert!(serde_json::from_str::<TrainConfig>("{\"epoch\": 3}").is_err());
    }

    fn small_net(variant: Variant) -> GainNetwork {
        let mut cfg = NetConfig::new(variant, StateMode::Xyah);
        cfg.hidden_dim = 6;
        cfg.seed = 1;
        GainNetwork::new(cfg).unwrap()
    }

    fn traj(len: usize) -> SemiSimTrajectory {
        let gt = generate(&SynthConfig::new(MotionKind::Maneuvering, 1, len, 3)).unwrap();
        crate::dataio::simulate_measurements(&gt[0], 0.1, 4).unwrap()
    }

    #[test]
    fn loss_matches_inference_boxes() {
        let net = small_net(Variant::Siknet);
        let t = traj(12);
        let (gt, meas) = t.boxes_in(StateMode::Xyah).unwrap();
        let mut g = Grads::zeros_like(net.params());
        let l = trajectory_loss_grad(&net, &gt, &meas, None, 1.0, &mut g).unwrap();
        let est = run_learned_filter(&meas, &net, &learned_lin(&net)).unwrap();
        let est: Vec<BBox> = est.iter().map(|e| e.updated).collect();
        let direct = smooth_l1_loss(&box_arrays(&est), &box_arrays(&gt)).unwrap();
        assert!((l - direct).abs() < 1e-12 * direct.max(1.0), "{l} vs {direct}");
    }

    #[test]
    fn full_window_truncation_matches_full_bptt() {
        for v in Variant::ALL {
            let net = small_net(v);
            let t = traj(10);
            let (gt, meas) = t.boxes_in(StateMode::Xyah).unwrap();
            let mut full = Grads::zeros_like(net.params());
            let a = trajectory_loss_grad(&net, &gt, &meas, None, 1.0, &mut full).unwrap();
            let mut win = Grads::zeros_like(net.params());
            let b = trajectory_loss_grad(&net, &gt, &meas, Some(10), 1.0, &mut win).unwrap();
            assert_eq!(a, b);
            let (fa, fb) = (full.to_flat(), win.to_flat());
            let worst = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-10, "{v}: {worst}");

            let mut short = Grads::zeros_like(net.params());
            let c = trajectory_loss_grad(&net, &gt, &meas, Some(3), 1.0, &mut short).unwrap();
            assert!((a - c).abs() < 1e-12 * a.max(1.0));
            assert_ne!(short.to_flat(), fa);
        }
    }

    #[test]
    fn constant_boxes_fit_monotonically() {
        let base = generate(&SynthConfig::new(MotionKind::Static, 1, 20, 1)).unwrap();
        let t = crate::dataio::simulate_measurements(&base[0], 0.05, 2).unwrap();
        let split = DatasetSplit {
            train: vec![t],
            val: Vec::new(),
            test: Vec::new(),
        };
        let mut cfg = NetConfig::new(Variant::Siknet, StateMode::Xyah);
        cfg.hidden_dim = 8;
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train(&split, &cfg, &tc, |_| {}).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert_eq!(out.best_epoch, 5);
    }

    #[test]
    fn training_is_reproducible_and_selects_on_validation() {
        let gt = generate(&SynthConfig::new(MotionKind::Maneuvering, 12, 16, 5)).unwrap();
        let semi = simulate_all(&gt, 0.1, 6).unwrap();
        let split = make_splits(&semi, 0.25, 7).unwrap().split;
        let mut cfg = NetConfig::new(Variant::Sknet, StateMode::Xywh);
        cfg.hidden_dim = 5;
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&split, &cfg, &tc, |_| {}).unwrap();
        let b = train(&split, &cfg, &tc, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net.named_params(), b.net.named_params());
        let best = a
            .history
            .iter()
            .map(|r| r.val_m_ar.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.best_val_m_ar, Some(best));
        assert_eq!(a.history[a.best_epoch - 1].val_m_ar, Some(best));
        assert_eq!(a.history.last().unwrap().step, 3 * 3);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let cfg = NetConfig::new(Variant::Knet, StateMode::Xyah);
        assert!(train(&DatasetSplit::default(), &cfg, &TrainConfig::default(), |_| {}).is_err());
    }
}
