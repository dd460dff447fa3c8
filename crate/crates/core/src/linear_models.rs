//! Constant-velocity transition, linear measurement and state-dependent noise
//! covariances for the 8-dimensional box state
//! `[cx, vcx, cy, vcy, p3, vp3, h, vh]`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StateMode;

pub type Vector8 = SVector<f64, 8>;
pub type Vector4 = SVector<f64, 4>;
pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Matrix4 = SMatrix<f64, 4, 4>;
pub type Matrix4x8 = SMatrix<f64, 4, 8>;
pub type Matrix8x4 = SMatrix<f64, 8, 4>;

/// Fixed process-noise factors of the aspect channel in `Xyah` mode.
pub const ASPECT_POS_NOISE: f64 = 0.01;
pub const ASPECT_VEL_NOISE: f64 = 0.00001;
/// Fixed measurement-noise factor of the aspect channel in `Xyah` mode.
pub const ASPECT_MEAS_NOISE: f64 = 0.1;

/// Velocity noise factor used by most MOT trackers.
pub const DEFAULT_ALPHA_V: f64 = 0.00625;
pub const DEFAULT_ALPHA_P: f64 = 0.05;

/// State mode, frame interval and noise factors from which `F`, `Q` and `R` are built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModelConfig {
    pub mode: StateMode,
    /// Frame interval; dynamics are per frame so this is normally 1.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub alpha_p: f64,
    #[serde(default = "default_alpha_v")]
    pub alpha_v: f64,
}

fn default_dt() -> f64 {
    1.0
}

fn default_alpha_v() -> f64 {
    DEFAULT_ALPHA_V
}

impl Default for LinearModelConfig {
    fn default() -> Self {
        Self::new(StateMode::Xyah, DEFAULT_ALPHA_P)
    }
}

impl LinearModelConfig {
    pub fn new(mode: StateMode, alpha_p: f64) -> Self {
        LinearModelConfig {
            mode,
            dt: 1.0,
            alpha_p,
            alpha_v: DEFAULT_ALPHA_V,
        }
    }

    pub fn with_alpha_v(mut self, alpha_v: f64) -> Self {
        self.alpha_v = alpha_v;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("alpha_p", self.alpha_p),
            ("alpha_v", self.alpha_v),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Diagonal noise covariances evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrices {
    pub q: Matrix8,
    pub r: Matrix4,
}

/// Block diagonal of four `[[1, dt], [0, 1]]` blocks.
pub fn build_transition(cfg: &LinearModelConfig) -> Result<Matrix8> {
    cfg.validate()?;
    let mut f = Matrix8::identity();
    for k in 0..4 {
        f[(2 * k, 2 * k + 1)] = cfg.dt;
    }
    Ok(f)
}

/// Selects the positional entries `[cx, cy, p3, h]` of the state.
pub fn build_measurement() -> Matrix4x8 {
    let mut h = Matrix4x8::zeros();
    for k in 0..4 {
        h[(k, 2 * k)] = 1.0;
    }
    h
}

/// Reads `(w-or-a, h)` sizes from a state, rejecting non-positive values.
fn state_sizes(state: &Vector8) -> Result<(f64, f64)> {
    let (p3, h) = (state[4], state[6]);
    if !(h.is_finite() && h > 0.0 && p3.is_finite() && p3 > 0.0) {
        return Err(Error::domain(format!(
            "noise model needs positive size, got p3={p3}, h={h}"
        )));
    }
    Ok((p3, h))
}

/// `(q, q_d)` factor vectors; `scale_p`/`scale_v` multiply the position and
/// velocity factors (1 for `Q`, larger for the initial covariance).
pub(crate) fn process_factors(
    cfg: &LinearModelConfig,
    state: &Vector8,
    scale_p: f64,
    scale_v: f64,
) -> Result<([f64; 8], [f64; 8])> {
    let (p3, h) = state_sizes(state)?;
    let ap = cfg.alpha_p * scale_p;
    let av = cfg.alpha_v * scale_v;
    Ok(match cfg.mode {
        StateMode::Xyah => (
            [ap, av, ap, av, ASPECT_POS_NOISE, ASPECT_VEL_NOISE, ap, av],
            [h, h, h, h, 1.0, 1.0, h, h],
        ),
        StateMode::Xywh => {
            let w = p3;
            ([ap, av, ap, av, ap, av, ap, av], [w, h, w, h, w, h, w, h])
        }
    })
}

fn diag_from_factors<const N: usize>(q: &[f64; N], qd: &[f64; N]) -> SMatrix<f64, N, N> {
    let mut m = SMatrix::<f64, N, N>::zeros();
    for i in 0..N {
        let s = q[i] * qd[i];
        m[(i, i)] = s * s;
    }
    m
}

/// `Q = diag[(q ∘ q_d)^2]` with sizes read from `state`.
pub fn build_process_noise(cfg: &LinearModelConfig, state: &Vector8) -> Result<Matrix8> {
    cfg.validate()?;
    let (q, qd) = process_factors(cfg, state, 1.0, 1.0)?;
    Ok(diag_from_factors(&q, &qd))
}

/// Standard deviations of the measurement noise, `r ∘ r_d`, at the given sizes.
pub fn measurement_noise_std(mode: StateMode, alpha_p: f64, p3: f64, h: f64) -> [f64; 4] {
    match mode {
        StateMode::Xyah => [alpha_p * h, alpha_p * h, ASPECT_MEAS_NOISE, alpha_p * h],
        StateMode::Xywh => [alpha_p * p3, alpha_p * h, alpha_p * p3, alpha_p * h],
    }
}

/// `R = diag[(r ∘ r_d)^2]` with sizes read from `state`.
pub fn build_measurement_noise(cfg: &LinearModelConfig, state: &Vector8) -> Result<Matrix4> {
    cfg.validate()?;
    let (p3, h) = state_sizes(state)?;
    let std = measurement_noise_std(cfg.mode, cfg.alpha_p, p3, h);
    Ok(diag_from_factors(&std, &[1.0; 4]))
}

/// Both covariances at once.
pub fn build_noise(cfg: &LinearModelConfig, state: &Vector8) -> Result<NoiseMatrices> {
    Ok(NoiseMatrices {
        q: build_process_noise(cfg, state)?,
        r: build_measurement_noise(cfg, state)?,
    })
}
