//! Recurrent learned-gain filters.
//!
//! All three variants keep the constant-velocity prediction `x <- F x` and
//! replace the analytic gain by a network output:
//!
//! - [`Variant::Knet`]: one recurrent network maps the four difference
//!   features to the full `8×4` gain.
//! - [`Variant::Sknet`]: two recurrent networks emit `G1` (8×8) and `G2`
//!   (4×4) and the gain is `K = G1 Hᵀ G2`.
//! - [`Variant::Siknet`]: like SKNet, but every feature group first passes
//!   through its own [`crate::sie`] encoder. `G1` sees the embeddings of
//!   `Z1` and `Z3`; `G2` sees all four.
//!
//! Each network is `concat -> FC + tanh -> GRU -> FC`, with the output
//! reshaped column-major into the gain block. The output layer starts from
//! small weights and a bias equal to the steady-state gain of the default
//! Kalman filter, so an untrained network already behaves like a sensible
//! constant-gain filter.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{BBox, StateMode};
use crate::kalman_core::{
    self, check_mode, init_from_measurement, meas_vector, FilterState, StepEstimate, MIN_SIZE,
};
use crate::linear_models::{
    build_measurement, build_transition, LinearModelConfig, Matrix8x4, Vector4, Vector8,
};
use crate::nn::{Gru, Linear};
use crate::sie::{sie_init, SieConfig, SieLayer, DEFAULT_CHANNELS};

/// State dimension.
pub const M: usize = 8;
/// Measurement dimension.
pub const N: usize = 4;

/// Default recurrent width, `4 (m + n)`.
pub const DEFAULT_HIDDEN_DIM: usize = 48;

const HEAD_WEIGHT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Knet,
    Sknet,
    Siknet,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Knet, Variant::Sknet, Variant::Siknet];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Knet => "knet",
            Variant::Sknet => "sknet",
            Variant::Siknet => "siknet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knet" => Ok(Variant::Knet),
            "sknet" => Ok(Variant::Sknet),
            "siknet" => Ok(Variant::Siknet),
            other => Err(Error::domain(format!("unknown filter variant '{other}'"))),
        }
    }
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_DIM
}
fn default_channels() -> usize {
    DEFAULT_CHANNELS
}
fn default_scale() -> f64 {
    1.0
}

/// Architecture of a learned filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    pub mode: StateMode,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Convolution channels of each SIE (SIKNet only).
    #[serde(default = "default_channels")]
    pub sie_channels: usize,
    /// Multiplier applied to every network input; `1.0` feeds raw pixels.
    #[serde(default = "default_scale")]
    pub input_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NetConfig {
    pub fn new(variant: Variant, mode: StateMode) -> Self {
        NetConfig {
            variant,
            mode,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            sie_channels: DEFAULT_CHANNELS,
            input_scale: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.sie_channels == 0 {
            return Err(Error::domain("hidden_dim and sie_channels must be >= 1"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::domain(format!(
                "input_scale must be positive, got {}",
                self.input_scale
            )));
        }
        Ok(())
    }
}

/// `concat -> FC + tanh -> GRU -> FC -> reshape`.
#[derive(Debug, Clone, Copy)]
struct GainDnn {
    fc_in: Linear,
    gru: Gru,
    fc_out: Linear,
    rows: usize,
    cols: usize,
}

impl GainDnn {
    fn init(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rows: usize,
        cols: usize,
        out_bias: &Mat,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fc_in = Linear::init(params, &format!("{name}.fc_in"), input, hidden, rng);
        let gru = Gru::init(params, &format!("{name}.gru"), hidden, hidden, rng);
        let fc_out = Linear::init(params, &format!("{name}.fc_out"), hidden, rows * cols, rng);
        *params.get_mut(fc_out.w) *= HEAD_WEIGHT_SCALE;
        *params.get_mut(fc_out.b) = Mat::from_column_slice(rows * cols, 1, out_bias.as_slice());
        GainDnn {
            fc_in,
            gru,
            fc_out,
            rows,
            cols,
        }
    }

    fn forward(&self, tape: &mut Tape, input: Var, hidden: Var) -> (Var, Var) {
        let a = self.fc_in.forward(tape, input);
        let a = tape.tanh(a);
        let h = self.gru.step(tape, a, hidden);
        let out = self.fc_out.forward(tape, h);
        (tape.reshape(out, self.rows, self.cols), h)
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Knet(GainDnn),
    Split {
        sies: Option<[SieLayer; 4]>,
        g1: GainDnn,
        g2: GainDnn,
    },
}

/// Parameters and structure of a learned filter.
#[derive(Debug, Clone)]
pub struct GainNetwork {
    cfg: NetConfig,
    params: ParamSet,
    layout: Layout,
}

/// Gain of the default Kalman filter after it has settled on a static box.
///
/// Every position entry of `Q` and `R` scales with the box size, so for a
/// fixed aspect ratio the steady-state gain does not depend on the box used.
pub fn steady_state_gain(mode: StateMode) -> Result<Matrix8x4> {
    let cfg = LinearModelConfig::new(mode, crate::linear_models::DEFAULT_ALPHA_P);
    let meas = BBox::xywh(0.0, 0.0, 50.0, 100.0)?.convert(mode)?;
    let mut state = init_from_measurement(&meas, &cfg)?;
    let mut k = Matrix8x4::zeros();
    for _ in 0..500 {
        let prior = kalman_core::predict(&state, &cfg)?;
        let (post, diag) = kalman_core::update(&prior, &meas, &cfg)?;
        state = post;
        k = diag.k;
    }
    Ok(k)
}

impl GainNetwork {
    /// Freshly initialized network, deterministic in `cfg.seed`.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let k_ss = steady_state_gain(cfg.mode)?;
        let hidden = cfg.hidden_dim;
        let layout = match cfg.variant {
            Variant::Knet => {
                let bias = Mat::from_column_slice(M, N, k_ss.as_slice());
                Layout::Knet(GainDnn::init(
                    &mut params,
                    "knet",
                    2 * M + 2 * N,
                    hidden,
                    M,
                    N,
                    &bias,
                    &mut rng,
                ))
            }
            Variant::Sknet | Variant::Siknet => {
                let sies = if cfg.variant == Variant::Siknet {
                    let shapes = [(M, 2), (N, 2), (M, 3), (N, 3)];
                    let mut layers = Vec::with_capacity(4);
                    for (i, (m, n)) in shapes.into_iter().enumerate() {
                        let sc = SieConfig {
                            m,
                            n,
                            channels: cfg.sie_channels,
                            emb_dim: m,
                        };
                        let seed = rand::Rng::random::<u64>(&mut rng);
                        let init = sie_init(&sc, seed)?;
                        layers.push(SieLayer::register(
                            &mut params,
                            &format!("sie{}", i + 1),
                            sc,
                            init,
                        ));
                    }
                    Some([layers[0], layers[1], layers[2], layers[3]])
                } else {
                    None
                };
                let (g1_in, g2_in) = match sies {
                    Some(_) => (M + M, M + N + M + N),
                    None => (2 * M, 2 * N),
                };
                // G1 carries the steady-state gain in its position columns so
                // that G1 Hᵀ I equals it.
                let mut g1_bias = Mat::identity(M, M);
                for j in 0..N {
                    for i in 0..M {
                        g1_bias[(i, 2 * j)] = k_ss[(i, j)];
                    }
                }
                let g2_bias = Mat::identity(N, N);
                let g1 = GainDnn::init(&mut params, "g1", g1_in, hidden, M, M, &g1_bias, &mut rng);
                let g2 = GainDnn::init(&mut params, "g2", g2_in, hidden, N, N, &g2_bias, &mut rng);
                Layout::Split { sies, g1, g2 }
            }
        };
        Ok(GainNetwork {
            cfg,
            params,
            layout,
        })
    }

    /// Network with `cfg`'s structure and the given named parameter values.
    pub fn from_named(cfg: NetConfig, named: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut net = GainNetwork::new(cfg)?;
        if named.len() != net.params.len() {
            return Err(Error::format(
                "params",
                format!(
                    "expected {} tensors, found {}",
                    net.params.len(),
                    named.len()
                ),
            ));
        }
        for (name, values) in named {
            let id = net
                .params
                .find(name)
                .ok_or_else(|| Error::format("params", format!("unknown tensor '{name}'")))?;
            let slot = net.params.get_mut(id);
            if slot.len() != values.len() {
                return Err(Error::format(
                    "params",
                    format!("tensor '{name}' has {} values, expected {}", values.len(), slot.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("params", format!("tensor '{name}' is not finite")));
            }
            slot.as_mut_slice().copy_from_slice(values);
        }
        Ok(net)
    }

    /// Named flat (column-major) copies of every tensor.
    pub fn named_params(&self) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .map(|(n, m)| (n.to_string(), m.as_slice().to_vec()))
            .collect()
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn mode(&self) -> StateMode {
        self.cfg.mode
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Encoder shapes, in input-group order (SIKNet only).
    pub fn sie_configs(&self) -> Vec<SieConfig> {
        match &self.layout {
            Layout::Split { sies: Some(s), .. } => s.iter().map(|l| l.cfg).collect(),
            _ => Vec::new(),
        }
    }

    fn hidden_count(&self) -> usize {
        match self.layout {
            Layout::Knet(_) => 1,
            Layout::Split { .. } => 2,
        }
    }

    /// Recurrent state for a track initialized at `init` from measurement `y0`.
    pub fn start(&self, init: &FilterState, y0: &BBox) -> GainNetworkState {
        GainNetworkState {
            x_post: init.x,
            x_post_prev: init.x,
            x_prior_prev: init.x,
            y_prev: meas_vector(y0),
            hidden: vec![Mat::zeros(self.cfg.hidden_dim, 1); self.hidden_count()],
        }
    }

    pub(crate) fn consts(&self, tape: &mut Tape, lin: &LinearModelConfig) -> Result<TapeConsts> {
        let f = build_transition(lin)?;
        let h = build_measurement();
        Ok(TapeConsts {
            f: tape.leaf(Mat::from_column_slice(M, M, f.as_slice())),
            h: tape.leaf(Mat::from_column_slice(N, M, h.as_slice())),
            ht: tape.leaf(Mat::from_column_slice(M, N, h.transpose().as_slice())),
        })
    }

    /// Loads a carried state onto `tape` as constants.
    pub(crate) fn carry_in(&self, tape: &mut Tape, st: &GainNetworkState) -> TapeCarry {
        TapeCarry {
            x_post: tape.column(st.x_post.as_slice()),
            x_post_prev: tape.column(st.x_post_prev.as_slice()),
            x_prior_prev: tape.column(st.x_prior_prev.as_slice()),
            y_prev: tape.column(st.y_prev.as_slice()),
            hidden: st.hidden.iter().map(|h| tape.leaf(h.clone())).collect(),
        }
    }

    pub(crate) fn carry_out(&self, tape: &Tape, c: &TapeCarry) -> GainNetworkState {
        let v8 = |v: Var| Vector8::from_column_slice(tape.value(v).as_slice());
        GainNetworkState {
            x_post: v8(c.x_post),
            x_post_prev: v8(c.x_post_prev),
            x_prior_prev: v8(c.x_prior_prev),
            y_prev: Vector4::from_column_slice(tape.value(c.y_prev).as_slice()),
            hidden: c.hidden.iter().map(|h| tape.value(*h).clone()).collect(),
        }
    }

    /// Features, gain and update for one frame, recorded on `tape`.
    ///
    /// `prior` is the predicted state `x_{t|t-1}`; `y` the measurement.
    pub(crate) fn tape_step(
        &self,
        tape: &mut Tape,
        consts: &TapeConsts,
        carry: &TapeCarry,
        prior: Var,
        y: Var,
    ) -> (TapeCarry, TapeStep) {
        let y_hat = tape.matmul(consts.h, prior);
        let feats = self.tape_features(tape, carry, y_hat, y);
        let (k, hidden) = match &self.layout {
            Layout::Knet(dnn) => {
                let z1 = tape.reshape(feats[0], 2 * M, 1);
                let z2 = tape.reshape(feats[1], 2 * N, 1);
                let input = tape.vstack(&[z1, z2]);
                let (k, h) = dnn.forward(tape, input, carry.hidden[0]);
                (k, vec![h])
            }
            Layout::Split { sies, g1, g2 } => {
                let (in1, in2) = match sies {
                    Some(s) => {
                        let e: Vec<Var> = (0..4).map(|i| s[i].forward(tape, feats[i])).collect();
                        (tape.vstack(&[e[0], e[2]]), tape.vstack(&e))
                    }
                    None => (
                        tape.reshape(feats[0], 2 * M, 1),
                        tape.reshape(feats[1], 2 * N, 1),
                    ),
                };
                let (gm1, h1) = g1.forward(tape, in1, carry.hidden[0]);
                let (gm2, h2) = g2.forward(tape, in2, carry.hidden[1]);
                let left = tape.matmul(gm1, consts.ht);
                (tape.matmul(left, gm2), vec![h1, h2])
            }
        };
        let innovation = tape.sub(y, y_hat);
        let correction = tape.matmul(k, innovation);
        let post = tape.add(prior, correction);
        let post = tape.clamp_rows_min(post, &[4, 6], MIN_SIZE);
        let next = TapeCarry {
            x_post: post,
            x_post_prev: carry.x_post,
            x_prior_prev: prior,
            y_prev: y,
            hidden,
        };
        (next, TapeStep { post, gain: k })
    }

    fn tape_features(
        &self,
        tape: &mut Tape,
        c: &TapeCarry,
        y_hat: Var,
        y: Var,
    ) -> [Var; 4] {
        let d_evo = tape.sub(c.x_post, c.x_post_prev);
        let d_upd = tape.sub(c.x_post, c.x_prior_prev);
        let d_meas = tape.sub(y, c.y_prev);
        let d_inno = tape.sub(y, y_hat);
        let z = [
            tape.hstack(&[d_evo, d_upd]),
            tape.hstack(&[d_meas, d_inno]),
            tape.hstack(&[c.x_post_prev, c.x_prior_prev, c.x_post]),
            tape.hstack(&[c.y_prev, y_hat, y]),
        ];
        let s = self.cfg.input_scale;
        if s == 1.0 {
            z
        } else {
            z.map(|v| tape.scale(v, s))
        }
    }
}

/// Constant matrices shared by all steps on one tape.
pub(crate) struct TapeConsts {
    pub f: Var,
    pub h: Var,
    pub ht: Var,
}

/// Recurrent state while it lives on a tape.
#[derive(Clone)]
pub(crate) struct TapeCarry {
    pub x_post: Var,
    pub x_post_prev: Var,
    pub x_prior_prev: Var,
    pub y_prev: Var,
    pub hidden: Vec<Var>,
}

pub(crate) struct TapeStep {
    pub post: Var,
    pub gain: Var,
}

/// Per-track recurrent state: lagged estimates, last measurement and hidden vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GainNetworkState {
    /// `x_{t-1|t-1}`.
    pub x_post: Vector8,
    /// `x_{t-2|t-2}`.
    pub x_post_prev: Vector8,
    /// `x_{t-1|t-2}`.
    pub x_prior_prev: Vector8,
    /// `y_{t-1}`.
    pub y_prev: Vector4,
    pub hidden: Vec<Mat>,
}

impl GainNetworkState {
    /// Zeroes the hidden vectors; lagged quantities are kept.
    pub fn reset(&mut self) {
        for h in &mut self.hidden {
            h.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x_post
            .iter()
            .chain(self.x_post_prev.iter())
            .chain(self.x_prior_prev.iter())
            .chain(self.y_prev.iter())
            .chain(self.hidden.iter().flat_map(|h| h.iter()))
            .all(|v| v.is_finite())
    }
}

/// The four network input groups.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// `[x_{t-1|t-1} - x_{t-2|t-2}, x_{t-1|t-1} - x_{t-1|t-2}]`, 8×2.
    pub z1: Mat,
    /// `[y_t - y_{t-1}, y_t - ŷ_{t|t-1}]`, 4×2.
    pub z2: Mat,
    /// `[x_{t-2|t-2}, x_{t-1|t-2}, x_{t-1|t-1}]`, 8×3.
    pub z3: Mat,
    /// `[y_{t-1}, ŷ_{t|t-1}, y_t]`, 4×3.
    pub z4: Mat,
}

/// Lagged inputs to [`compute_features`]. Missing lags take the most recent
/// available value of the same quantity, so the corresponding differences vanish.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub x_post: &'a Vector8,
    pub x_post_prev: Option<&'a Vector8>,
    pub x_prior_prev: Option<&'a Vector8>,
    pub y: &'a Vector4,
    pub y_prev: Option<&'a Vector4>,
    pub y_hat: Option<&'a Vector4>,
}

pub fn compute_features(inp: &FeatureInputs) -> FeatureBundle {
    let x1 = inp.x_post;
    let x2 = inp.x_post_prev.unwrap_or(x1);
    let xp = inp.x_prior_prev.unwrap_or(x1);
    let y = inp.y;
    let y_prev = inp.y_prev.unwrap_or(y);
    let y_hat = inp.y_hat.unwrap_or(y);
    let cols8 = |cs: &[Vector8]| Mat::from_fn(M, cs.len(), |r, c| cs[c][r]);
    let cols4 = |cs: &[Vector4]| Mat::from_fn(N, cs.len(), |r, c| cs[c][r]);
    FeatureBundle {
        z1: cols8(&[x1 - x2, x1 - xp]),
        z2: cols4(&[y - y_prev, y - y_hat]),
        z3: cols8(&[*x2, *xp, *x1]),
        z4: cols4(&[*y_prev, *y_hat, *y]),
    }
}

/// `K = G1 Hᵀ G2`.
pub fn compose_gain(g1: &Mat, g2: &Mat) -> Result<Matrix8x4> {
    if g1.shape() != (M, M) || g2.shape() != (N, N) {
        return Err(Error::domain("gain factors must be 8x8 and 4x4"));
    }
    let ht = build_measurement().transpose();
    let ht = Mat::from_column_slice(M, N, ht.as_slice());
    let k = g1 * ht * g2;
    Ok(Matrix8x4::from_column_slice(k.as_slice()))
}

/// `x_{t|t} = x_{t|t-1} + K (y - H x_{t|t-1})` with the size channels floored.
pub fn apply_gain(prior: &Vector8, k: &Matrix8x4, meas: &Vector4) -> Vector8 {
    let h = build_measurement();
    let mut x = prior + k * (meas - h * prior);
    kalman_core::clamp_sizes(&mut x);
    x
}

/// Quantities exposed by one learned update.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDiagnostics {
    pub gain: Matrix8x4,
    pub innovation: Vector4,
}

/// Prediction used by learned variants: `x <- F x`, covariance untouched.
pub fn predict_mean(state: &FilterState, cfg: &LinearModelConfig) -> Result<FilterState> {
    let f = build_transition(cfg)?;
    let mut x = f * state.x;
    kalman_core::clamp_sizes(&mut x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite prediction at step {}",
            state.t + 1
        )));
    }
    Ok(FilterState {
        x,
        p: state.p,
        t: state.t + 1,
    })
}

/// Learned update of a predicted state. `rec` advances to the new frame.
pub fn learned_step(
    net: &GainNetwork,
    prior: &FilterState,
    rec: &mut GainNetworkState,
    meas: &BBox,
    cfg: &LinearModelConfig,
) -> Result<(FilterState, LearnedDiagnostics)> {
    meas.validate()?;
    check_mode(meas, cfg)?;
    if net.mode() != cfg.mode {
        return Err(Error::domain(format!(
            "network was built for {} but the filter runs in {}",
            net.mode(),
            cfg.mode
        )));
    }
    let mut tape = Tape::new(&net.params);
    let consts = net.consts(&mut tape, cfg)?;
    let carry = net.carry_in(&mut tape, rec);
    let prior_v = tape.column(prior.x.as_slice());
    let y = meas_vector(meas);
    let y_v = tape.column(y.as_slice());
    let (next, step) = net.tape_step(&mut tape, &consts, &carry, prior_v, y_v);
    let new_rec = net.carry_out(&tape, &next);
    let gain = Matrix8x4::from_column_slice(tape.value(step.gain).as_slice());
    if !new_rec.is_finite() || gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite network activation at step {}",
            prior.t
        )));
    }
    let h = build_measurement();
    let innovation = y - h * prior.x;
    *rec = new_rec;
    Ok((
        FilterState {
            x: rec.x_post,
            p: prior.p,
            t: prior.t,
        },
        LearnedDiagnostics { gain, innovation },
    ))
}

/// Init, then predict + learned update over `meas_seq`. Hidden state starts at zero.
pub fn run_learned_filter(
    meas_seq: &[BBox],
    net: &GainNetwork,
    cfg: &LinearModelConfig,
) -> Result<Vec<StepEstimate>> {
    let first = meas_seq
        .first()
        .ok_or_else(|| Error::domain("run_learned_filter needs at least one measurement"))?;
    let mut state = init_from_measurement(first, cfg)?;
    let mut rec = net.start(&state, first);
    let mut out = Vec::with_capacity(meas_seq.len());
    out.push(StepEstimate {
        predicted: None,
        updated: state.bbox(cfg.mode),
    });
    for meas in &meas_seq[1..] {
        let prior = predict_mean(&state, cfg)?;
        let (post, _) = learned_step(net, &prior, &mut rec, meas, cfg)?;
        out.push(StepEstimate {
            predicted: Some(prior.bbox(cfg.mode)),
            updated: post.bbox(cfg.mode),
        });
        state = post;
    }
    Ok(out)
}
