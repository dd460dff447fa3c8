//! Synthetic ground-truth trajectories for tests and desk-scale experiments.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Static,
    /// Constant velocity in position and height.
    Linear,
    /// Velocities following sinusoids whose amplitude, period and phase are
    /// redrawn every few dozen frames.
    Maneuvering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dataset: String,
    pub tracks: usize,
    pub len: usize,
    pub motion: MotionKind,
    pub img_w: u32,
    pub img_h: u32,
    /// Range of initial box heights in pixels.
    pub height: (f64, f64),
    /// Range of aspect ratios `w / h`.
    pub aspect: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(motion: MotionKind, tracks: usize, len: usize, seed: u64) -> Self {
        SynthConfig {
            dataset: "synthetic".into(),
            tracks,
            len,
            motion,
            img_w: 1920,
            img_h: 1080,
            height: (40.0, 300.0),
            aspect: (0.5, 1.5),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::domain("synthetic trajectories need len >= 2"));
        }
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !ok(self.height) || !ok(self.aspect) {
            return Err(Error::domain("height and aspect ranges must be positive"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Piecewise sinusoidal velocity profile.
struct Wiggle {
    amp: f64,
    omega: f64,
    phase: f64,
    left: usize,
}

impl Wiggle {
    fn draw(rng: &mut impl Rng, max_amp: f64) -> Self {
        Wiggle {
            amp: rng.random_range(0.0..max_amp),
            omega: TAU / rng.random_range(8.0..40.0),
            phase: rng.random_range(0.0..TAU),
            left: rng.random_range(20..50),
        }
    }

    fn next(&mut self, rng: &mut impl Rng, max_amp: f64, t: usize) -> f64 {
        if self.left == 0 {
            // Keep the velocity continuous across segments.
            let v = self.amp * (self.omega * t as f64 + self.phase).sin();
            *self = Wiggle::draw(rng, max_amp);
            let s = (v / self.amp.max(1e-9)).clamp(-1.0, 1.0);
            self.phase = s.asin() - self.omega * t as f64;
        }
        self.left -= 1;
        self.amp * (self.omega * t as f64 + self.phase).sin()
    }
}

fn one_track(cfg: &SynthConfig, id: usize, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let h0 = uniform(rng, cfg.height);
    let a0 = uniform(rng, cfg.aspect);
    let (w_img, h_img) = (cfg.img_w as f64, cfg.img_h as f64);
    let mut cx = rng.random_range(0.2 * w_img..0.8 * w_img);
    let mut cy = rng.random_range(0.2 * h_img..0.8 * h_img);
    let mut h = h0;
    let a = a0;
    let scale = Normal::new(0.0, 1.0).expect("unit normal");
    let (vx0, vy0, vh0) = match cfg.motion {
        MotionKind::Static => (0.0, 0.0, 0.0),
        _ => (
            0.03 * h0 * scale.sample(rng),
            0.015 * h0 * scale.sample(rng),
            0.002 * h0 * scale.sample(rng),
        ),
    };
    let max_amp = 0.08 * h0;
    let mut wx = Wiggle::draw(rng, max_amp);
    let mut wy = Wiggle::draw(rng, 0.5 * max_amp);
    let mut wh = Wiggle::draw(rng, 0.005 * h0);
    let mut gt = Vec::with_capacity(cfg.len);
    for t in 0..cfg.len {
        gt.push(BBox::xyah(cx, cy, a, h)?);
        let (dx, dy, dh) = match cfg.motion {
            MotionKind::Static => (0.0, 0.0, 0.0),
            MotionKind::Linear => (vx0, vy0, vh0),
            MotionKind::Maneuvering => (
                vx0 + wx.next(rng, max_amp, t),
                vy0 + wy.next(rng, 0.5 * max_amp, t),
                wh.next(rng, 0.005 * h0, t),
            ),
        };
        cx += dx;
        cy += dy;
        h = (h + dh).max(0.25 * h0);
    }
    Ok(Trajectory {
        dataset: cfg.dataset.clone(),
        sequence: format!("{}-{:03}", cfg.dataset, id / 50),
        track_id: id as i64,
        category: "object".into(),
        img_w: cfg.img_w,
        img_h: cfg.img_h,
        frames: (1..=cfg.len as u32).collect(),
        gt,
    })
}

/// Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.tracks).map(|i| one_track(cfg, i, &mut rng)).collect()
}
