//! Model-based Kalman predict/update recursion over box trajectories.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::geometry::{BBox, StateMode};
use crate::linear_models::{
    build_measurement, build_measurement_noise, build_process_noise, build_transition,
    process_factors, LinearModelConfig, Matrix4, Matrix8, Matrix8x4, Vector4, Vector8,
};

/// Floor applied to the size channels when an update drives them non-positive.
pub const MIN_SIZE: f64 = 1e-4;

/// Initial covariance multipliers on the position and velocity noise factors.
const INIT_POS_SCALE: f64 = 2.0;
const INIT_VEL_SCALE: f64 = 10.0;

/// Estimated state mean and covariance at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: Vector8,
    pub p: Matrix8,
    pub t: usize,
}

/// Intermediate quantities of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub y_pred: Vector4,
    pub s: Matrix4,
    pub k: Matrix8x4,
    pub innovation: Vector4,
}

/// Prior and posterior box of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEstimate {
    /// `None` on the initialization frame.
    pub predicted: Option<BBox>,
    pub updated: BBox,
}

impl FilterState {
    /// The positional part `H x` as a box in `mode`.
    pub fn bbox(&self, mode: StateMode) -> BBox {
        state_bbox(&self.x, mode)
    }
}

pub(crate) fn state_bbox(x: &Vector8, mode: StateMode) -> BBox {
    BBox {
        cx: x[0],
        cy: x[2],
        p3: x[4],
        h: x[6],
        mode,
    }
}

pub(crate) fn meas_vector(b: &BBox) -> Vector4 {
    Vector4::new(b.cx, b.cy, b.p3, b.h)
}

pub(crate) fn check_mode(meas: &BBox, cfg: &LinearModelConfig) -> Result<()> {
    if meas.mode != cfg.mode {
        return Err(Error::domain(format!(
            "measurement is {} but the filter runs in {}",
            meas.mode, cfg.mode
        )));
    }
    Ok(())
}

/// Zero-velocity state at the measurement with a diagonal covariance built
/// like `Q` but with the position factors doubled and velocity factors ×10.
pub fn init_from_measurement(meas: &BBox, cfg: &LinearModelConfig) -> Result<FilterState> {
    cfg.validate()?;
    meas.validate()?;
    check_mode(meas, cfg)?;
    let x = Vector8::from([meas.cx, 0.0, meas.cy, 0.0, meas.p3, 0.0, meas.h, 0.0]);
    let (q, qd) = process_factors(cfg, &x, INIT_POS_SCALE, INIT_VEL_SCALE)?;
    let mut p = Matrix8::zeros();
    for i in 0..8 {
        let s = q[i] * qd[i];
        p[(i, i)] = s * s;
    }
    Ok(FilterState { x, p, t: 0 })
}

fn ensure_finite(state: &FilterState, what: &str) -> Result<()> {
    if state.x.iter().chain(state.p.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "non-finite state after {what} at frame {}",
            state.t
        )))
    }
}

/// `x <- F x`, `P <- F P F^T + Q` with `Q` evaluated at the pre-prediction state.
/// Sizes driven non-positive by a shrinking velocity are clamped as in [`update`].
pub fn predict(state: &FilterState, cfg: &LinearModelConfig) -> Result<FilterState> {
    let f = build_transition(cfg)?;
    let q = build_process_noise(cfg, &state.x)?;
    let mut x = f * state.x;
    clamp_sizes(&mut x);
    let out = FilterState {
        x,
        p: f * state.p * f.transpose() + q,
        t: state.t + 1,
    };
    ensure_finite(&out, "predict")?;
    Ok(out)
}

pub(crate) fn clamp_sizes(x: &mut Vector8) {
    for i in [4, 6] {
        if x[i] <= 0.0 {
            x[i] = MIN_SIZE;
        }
    }
}

/// Standard Kalman update with `R` evaluated at the predicted state.
pub fn update(
    state: &FilterState,
    meas: &BBox,
    cfg: &LinearModelConfig,
) -> Result<(FilterState, UpdateDiagnostics)> {
    meas.validate()?;
    check_mode(meas, cfg)?;
    let h = build_measurement();
    let r = build_measurement_noise(cfg, &state.x)?;
    let y_pred = h * state.x;
    let s = h * state.p * h.transpose() + r;
    let s = (s + s.transpose()) * 0.5;
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::numeric("innovation covariance is not positive definite"))?;
    // K = P H^T S^-1, solved as S K^T = H P.
    let pht = state.p * h.transpose();
    let k = chol.solve(&pht.transpose()).transpose();
    let innovation = meas_vector(meas) - y_pred;
    let mut x = state.x + k * innovation;
    clamp_sizes(&mut x);
    let p = (Matrix8::identity() - k * h) * state.p;
    let p = (p + p.transpose()) * 0.5;
    let out = FilterState { x, p, t: state.t };
    ensure_finite(&out, "update")?;
    Ok((
        out,
        UpdateDiagnostics {
            y_pred,
            s,
            k,
            innovation,
        },
    ))
}

/// Runs init + predict/update over a measurement sequence.
pub fn run_filter(meas_seq: &[BBox], cfg: &LinearModelConfig) -> Result<Vec<StepEstimate>> {
    let first = meas_seq
        .first()
        .ok_or_else(|| Error::domain("run_filter needs at least one measurement"))?;
    let mut state = init_from_measurement(first, cfg)?;
    let mut out = Vec::with_capacity(meas_seq.len());
    out.push(StepEstimate {
        predicted: None,
        updated: state.bbox(cfg.mode),
    });
    for meas in &meas_seq[1..] {
        let prior = predict(&state, cfg)?;
        let (post, _) = update(&prior, meas, cfg)?;
        out.push(StepEstimate {
            predicted: Some(prior.bbox(cfg.mode)),
            updated: post.bbox(cfg.mode),
        });
        state = post;
    }
    Ok(out)
}
